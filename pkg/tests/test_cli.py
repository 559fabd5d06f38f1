import csv
import json

import numpy as np
import pytest

from approxgrad import gradest, multlib
from approxgrad.cli import main
from approxgrad.data import make_synthetic, save_csv_dataset


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def json_line(out):
    return json.loads(out.strip().splitlines()[1])


@pytest.fixture
def rm6_file(tmp_path, capsys):
    path = tmp_path / "rm6.amlut"
    assert run(capsys, "mult", "gen", "--kind", "rm", "--bits", 7, "--k", 6, "--out", path)[0] == 0
    return path


@pytest.fixture
def exact_file(tmp_path, capsys):
    path = tmp_path / "exact.amlut"
    assert run(capsys, "mult", "gen", "--kind", "exact", "--bits", 7, "--out", path)[0] == 0
    return path


class TestMult:
    def test_gen_and_metrics(self, tmp_path, capsys):
        path = tmp_path / "m.amlut"
        code, out, _ = run(capsys, "mult", "gen", "--kind", "rm", "--bits", 4, "--k", 2, "--out", path)
        assert code == 0 and path.exists()
        code, out, _ = run(capsys, "mult", "metrics", "--in", path)
        assert code == 0
        assert out.splitlines()[0].endswith("ER=50.0% NMED=0.49% MaxED=5")
        payload = json_line(out)
        assert payload["er"] == 0.5 and payload["maxed"] == 5
        assert payload["nmed"] == pytest.approx(multlib.error_metrics(multlib.build_truncated(4, 2)).nmed)

    def test_exact_metrics(self, tmp_path, capsys):
        path = tmp_path / "e.amlut"
        run(capsys, "mult", "gen", "--kind", "exact", "--bits", 8, "--out", path)
        code, out, _ = run(capsys, "mult", "metrics", "--in", path)
        assert code == 0 and "ER=0.0% NMED=0.00% MaxED=0" in out

    def test_gen_round_trips(self, rm6_file):
        m = multlib.load_table(rm6_file)
        assert m.name == "mul7u_rm6"
        assert np.array_equal(m.table, multlib.build_truncated(7, 6).table)

    def test_info(self, rm6_file, capsys):
        code, out, _ = run(capsys, "mult", "info", "--in", rm6_file)
        assert code == 0 and json_line(out)["bits"] == 7

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "mult", "metrics", "--in", tmp_path / "nope.amlut")
        assert code == 1 and "nope.amlut" in err

    def test_malformed_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.amlut"
        bad.write_text("amlut v1\nbits=2 signed=0 name=x\n0 0 0\n")
        code, _, err = run(capsys, "mult", "metrics", "--in", bad)
        assert code == 1 and "entry count mismatch" in err

    @pytest.mark.parametrize("argv", [("mult", "gen", "--kind", "rm", "--bits", "4", "--out", "x"),
                                      ("mult", "gen", "--kind", "rm", "--bits", "4", "--k", "7", "--out", "x"),
                                      ("mult", "gen", "--kind", "exact", "--bits", "1", "--out", "x")])
    def test_invalid_gen(self, argv, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code, _, _ = run(capsys, *argv)
        assert code in (1, 2)
        assert not (tmp_path / "x").exists()

    def test_no_subcommand(self, capsys):
        assert run(capsys)[0] == 2


class TestGrad:
    def test_1d_anchor(self, rm6_file, tmp_path, capsys):
        g = tmp_path / "g.gradlut"
        assert run(capsys, "grad", "build", "--in", rm6_file, "--kind", "1d", "--dir", "x", "--out", g)[0] == 0
        code, out, _ = run(capsys, "grad", "show", "--in", g, "--w", 10)
        assert code == 0 and "grad=9.0708" in out
        assert abs(json_line(out)["value"] - 9.0709) < 5e-5

    def test_2d_full_window_is_1d_broadcast(self, rm6_file, tmp_path, capsys):
        g1, g2 = tmp_path / "g1.gradlut", tmp_path / "g2.gradlut"
        run(capsys, "grad", "build", "--in", rm6_file, "--kind", "1d", "--dir", "x", "--out", g1)
        run(capsys, "grad", "build", "--in", rm6_file, "--kind", "2d", "--dir", "x", "--hws", 63, "--out", g2)
        a, b = gradest.load_grad(g1), gradest.load_grad(g2)
        assert np.array_equal(np.repeat(a.values, 128), b.values)

    def test_hws_zero_is_usage_error(self, rm6_file, tmp_path, capsys):
        code, _, err = run(capsys, "grad", "build", "--in", rm6_file, "--kind", "2d", "--dir", "x",
                           "--hws", 0, "--out", tmp_path / "g")
        assert code == 2 and "hws" in err

    def test_hws_too_large(self, rm6_file, tmp_path, capsys):
        code, _, _ = run(capsys, "grad", "build", "--in", rm6_file, "--kind", "2d", "--dir", "x",
                         "--hws", 64, "--out", tmp_path / "g")
        assert code == 2

    def test_show_2d_needs_both(self, rm6_file, tmp_path, capsys):
        g = tmp_path / "g.gradlut"
        run(capsys, "grad", "build", "--in", rm6_file, "--kind", "2d", "--dir", "w", "--out", g)
        code, out, _ = run(capsys, "grad", "show", "--in", g, "--w", 3, "--x", 40)
        assert code == 0
        assert json_line(out)["value"] == gradest.load_grad(g).values[3 * 128 + 40]
        assert run(capsys, "grad", "show", "--in", g, "--w", 3)[0] != 0


def small_config(tmp_path, epochs=2, **train):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": {"epochs": epochs, **train},
                                "data": {"n_train": 256, "n_eval": 128}}))
    return path


class TestTrain:
    def test_missing_mult_is_usage(self, tmp_path, capsys):
        assert run(capsys, "train", "--out", tmp_path / "o")[0] == 2

    def test_writes_outputs(self, rm6_file, tmp_path, capsys):
        out = tmp_path / "run"
        code, stdout, _ = run(capsys, "train", "--mult", rm6_file, "--estimator", "lut2d",
                              "--config", small_config(tmp_path), "--out", out)
        assert code == 0
        assert {p.name for p in out.iterdir()} == {"checkpoint.json", "epochs.csv", "summary.json"}
        summary = json.loads((out / "summary.json").read_text())
        assert summary["resolved_config"]["train"]["estimator"] == "lut2d"
        assert summary["resolved_config"]["train"]["epochs"] == 2
        assert json_line(stdout)["final_acc"] == summary["final_acc"]
        rows = list(csv.DictReader((out / "epochs.csv").open()))
        assert [int(r["epoch"]) for r in rows] == [1, 2]

    def test_seed_determinism(self, rm6_file, tmp_path, capsys):
        cfg = small_config(tmp_path)
        for d in ("a", "b"):
            assert run(capsys, "train", "--mult", rm6_file, "--estimator", "lut1d", "--seed", 7,
                       "--config", cfg, "--out", tmp_path / d)[0] == 0
        for name in ("checkpoint.json", "epochs.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_config_overrides_flags(self, rm6_file, tmp_path, capsys):
        out = tmp_path / "o"
        run(capsys, "train", "--mult", rm6_file, "--epochs", 5, "--config", small_config(tmp_path, epochs=1),
            "--out", out)
        assert json.loads((out / "summary.json").read_text())["resolved_config"]["train"]["epochs"] == 1

    def test_product_path_flag_changes_gradients(self, rm6_file, tmp_path, capsys):
        cfg = small_config(tmp_path)
        run(capsys, "train", "--mult", rm6_file, "--config", cfg, "--out", tmp_path / "full")
        run(capsys, "train", "--mult", rm6_file, "--config", cfg, "--paper-eq7", "--out", tmp_path / "lit")
        lit = json.loads((tmp_path / "lit" / "summary.json").read_text())
        assert lit["resolved_config"]["train"]["product_path_only"] is True
        assert (tmp_path / "full" / "checkpoint.json").read_bytes() != (tmp_path / "lit" / "checkpoint.json").read_bytes()

    def test_csv_dataset(self, rm6_file, tmp_path, capsys):
        data = save_csv_dataset(make_synthetic(1, 200, 50, dim=5), tmp_path / "d.csv", "target")
        out = tmp_path / "o"
        code, _, err = run(capsys, "train", "--mult", rm6_file, "--data", data, "--label-column", "target",
                           "--epochs", 1, "--hidden", "8", "--out", out)
        assert code == 0, err
        model = json.loads((out / "summary.json").read_text())["resolved_config"]["model"]
        assert model["sizes"] == [5, 8, 2]

    def test_csv_missing_label(self, rm6_file, tmp_path, capsys):
        data = save_csv_dataset(make_synthetic(1, 20, 5, dim=3), tmp_path / "d.csv")
        code, _, err = run(capsys, "train", "--mult", rm6_file, "--data", data, "--label-column", "y",
                           "--out", tmp_path / "o")
        assert code == 1 and "'y'" in err

    def test_bad_config(self, rm6_file, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert run(capsys, "train", "--mult", rm6_file, "--config", cfg, "--out", tmp_path / "o")[0] == 1

    def test_divergence_exit_code(self, rm6_file, tmp_path, capsys):
        cfg = small_config(tmp_path, lr_schedule=[[1, 2, 1e308]])
        code, _, err = run(capsys, "train", "--mult", rm6_file, "--config", cfg, "--out", tmp_path / "o")
        assert code == 3 and "diverged" in err

    def test_bench_goes_to_stdout_only(self, rm6_file, tmp_path, capsys):
        out = tmp_path / "o"
        code, stdout, _ = run(capsys, "train", "--mult", rm6_file, "--config", small_config(tmp_path, 1),
                              "--bench", "--out", out)
        assert code == 0 and "s/epoch" in stdout
        assert "time" not in (out / "summary.json").read_text()


class TestCompare:
    def test_exact_gives_identical_finals(self, exact_file, tmp_path, capsys):
        out = tmp_path / "cmp"
        code, _, _ = run(capsys, "compare", "--mult", exact_file, "--config", small_config(tmp_path), "--out", out)
        assert code == 0
        row = next(csv.DictReader((out / "compare.csv").open()))
        assert row["ste"] == row["lut1d"] == row["lut2d"]
        assert row["lut1d_impr_vs_ste"] == row["lut2d_impr_vs_ste"] == "0.0"
        for kind in ("ste", "lut1d", "lut2d"):
            assert (out / kind / "summary.json").exists()

    def test_compare_deterministic(self, rm6_file, tmp_path, capsys):
        cfg = small_config(tmp_path, epochs=1)
        for d in ("a", "b"):
            run(capsys, "compare", "--mult", rm6_file, "--config", cfg, "--out", tmp_path / d)
        for name in ("compare.csv", "compare.json", "lut2d/checkpoint.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
