"""Command-line front end.

Exit codes: 0 success, 1 I/O or validation failure, 2 usage error,
3 training divergence. Every command prints a human-readable line and a
machine-readable JSON line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import gradest, multlib
from .data import load_csv_dataset, make_synthetic
from .fakequant import ASYMMETRIC, SYMMETRIC
from .retrain import (
    ModelSpec,
    TrainConfig,
    TrainingDiverged,
    compare_estimators,
    dump_json,
    save_checkpoint,
    train,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class CliError(Exception):
    """Validation or I/O failure reported with exit code 1."""


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _emit(human: str, payload: dict) -> None:
    print(human)
    print(json.dumps(payload, sort_keys=True))


def _load_mult(path) -> multlib.Multiplier:
    try:
        return multlib.load_table(path)
    except OSError as exc:
        raise CliError(f"cannot read multiplier table {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None


# -- mult ---------------------------------------------------------------------

def cmd_mult(args, parser) -> int:
    if args.action == "gen":
        try:
            if args.kind == "exact":
                m = multlib.build_exact(args.bits, args.signed)
            else:
                if args.k is None:
                    parser.error("--kind rm requires --k")
                m = multlib.build_truncated(args.bits, args.k, args.signed)
        except ValueError as exc:
            parser.error(str(exc))
        try:
            multlib.save_table(m, args.out)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}") from None
        _emit(f"wrote {m.name} to {args.out}", {"name": m.name, "bits": m.bits, "signed": m.signed, "out": str(args.out)})
        return EXIT_OK
    m = _load_mult(args.inp)
    if args.action == "metrics":
        rep = multlib.error_metrics(m)
        _emit(rep.format(), {"name": m.name, **rep.as_dict()})
    else:
        info = {"name": m.name, "bits": m.bits, "signed": m.signed, "lo": m.lo, "hi": m.hi,
                "entries": int(m.table.size)}
        _emit(f"{m.name}: {m.bits}-bit {'signed' if m.signed else 'unsigned'}, operands [{m.lo}, {m.hi}], "
              f"{m.table.size} entries", info)
    return EXIT_OK


# -- grad ---------------------------------------------------------------------

def cmd_grad(args, parser) -> int:
    if args.action == "build":
        m = _load_mult(args.inp)
        if args.kind == "1d":
            if args.hws is not None:
                parser.error("--hws only applies to --kind 2d")
            g = gradest.build_grad1d(m, args.dir)
        else:
            if args.hws is not None and args.hws > gradest.max_hws(m.bits):
                parser.error(f"--hws must be in [1, {gradest.max_hws(m.bits)}] for {m.bits}-bit multipliers")
            g = gradest.build_grad2d(m, args.dir, args.hws)
        try:
            gradest.save_grad(g, args.out)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}") from None
        v = g.values
        stats = {"min": float(v.min()), "mean": float(v.mean()), "max": float(v.max())}
        _emit(f"wrote {g.kind} grad (dir={g.direction}, hws={g.hws if g.hws else '--'}) to {args.out}: "
              f"min={stats['min']:.6g} mean={stats['mean']:.6g} max={stats['max']:.6g}",
              {"kind": g.kind, "dir": g.direction, "hws": g.hws, "bits": g.bits, "signed": g.signed, **stats})
        return EXIT_OK
    try:
        g = gradest.load_grad(args.inp)
    except OSError as exc:
        raise CliError(f"cannot read gradient table {args.inp}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise CliError(f"{args.inp}: {exc}") from None
    lo, _ = multlib.operand_range(g.bits, g.signed)
    W, X = args.w, args.x
    if g.kind == "1d":
        # the co-operand alone selects the entry
        need = "w" if g.direction == gradest.WRT_X else "x"
        if (W if need == "w" else X) is None:
            parser.error(f"a 1d table with dir={g.direction} is indexed by --{need}")
        W = lo if W is None else W
        X = lo if X is None else X
    elif W is None or X is None:
        parser.error("a 2d table needs both --w and --x")
    try:
        value = gradest.lookup(g, W, X)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _emit(f"grad={value:.17g}", {"kind": g.kind, "dir": g.direction, "w": args.w, "x": args.x, "value": value})
    return EXIT_OK


# -- train / compare ------------------------------------------------------------

DEFAULT_DATA = {"kind": "synthetic", "n_train": 1024, "n_eval": 512, "classes": 2, "dim": 16, "separation": 4.0}


def _resolve(args, m: multlib.Multiplier) -> dict:
    """Defaults, then explicit flags, then the config file (config wins)."""
    train_cfg = {"multiplier": str(args.mult), "seed": 0}
    for key in ("seed", "epochs", "batch_size", "hws", "optimizer"):
        val = getattr(args, key, None)
        if val is not None:
            train_cfg[key] = val
    if args.product_path_only:
        train_cfg["product_path_only"] = True
    if getattr(args, "estimator", None):
        train_cfg["estimator"] = args.estimator
    data_cfg = dict(DEFAULT_DATA)
    if args.data is not None:
        data_cfg = {"kind": "csv", "path": str(args.data), "label_column": args.label_column,
                    "eval_fraction": 0.2}
    model_cfg = {"bits": m.bits, "mode": SYMMETRIC if m.signed else ASYMMETRIC}
    if args.hidden is not None:
        model_cfg["hidden"] = args.hidden
    if args.config is not None:
        try:
            conf = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(conf, dict) or set(conf) - {"model", "train", "data"}:
            raise CliError(f"{args.config}: expected an object with 'model', 'train', 'data' sections")
        train_cfg.update(conf.get("train", {}))
        if "data" in conf:
            if conf["data"].get("kind", data_cfg["kind"]) != data_cfg["kind"]:
                data_cfg = {}
            data_cfg.update(conf["data"])
        model_cfg.update(conf.get("model", {}))
    data_cfg.setdefault("seed", train_cfg.get("seed", 0))
    return {"model": model_cfg, "train": train_cfg, "data": data_cfg}


def _build(resolved: dict):
    d = dict(resolved["data"])
    kind = d.pop("kind", "synthetic")
    if kind == "synthetic":
        data = make_synthetic(**d)
    elif kind == "csv":
        try:
            data = load_csv_dataset(d["path"], d.get("label_column", "label"), d.get("eval_fraction", 0.2))
        except OSError as exc:
            raise CliError(f"cannot read dataset {d['path']}: {exc.strerror or exc}") from None
    else:
        raise CliError(f"unknown data kind {kind!r}")
    mc = dict(resolved["model"])
    hidden = mc.pop("hidden", [32, 32])
    if isinstance(hidden, str):
        hidden = [int(h) for h in hidden.split(",") if h]
    sizes = mc.pop("sizes", None) or [data.dim, *hidden, max(2, data.classes)]
    model = ModelSpec(tuple(sizes), **{k: (tuple(v) if isinstance(v, list) else v) for k, v in mc.items()})
    cfg = TrainConfig.from_dict(resolved["train"])
    return model, data, cfg


def _write_run(out: Path, ckpt, report, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "checkpoint.json")
    (out / "epochs.csv").write_text(report.epochs_csv())
    dump_json({"resolved_config": resolved, **report.to_dict()}, out / "summary.json")


def _bench_line(kind: str, report) -> str:
    t = np.asarray(report.epoch_times)
    return f"bench {kind}: {t.mean():.4f} s/epoch (total {report.wall_time:.3f} s)"


def cmd_train(args, parser) -> int:
    m = _load_mult(args.mult)
    resolved = _resolve(args, m)
    model, data, cfg = _build(resolved)
    if cfg.hws is not None and not 1 <= cfg.hws <= gradest.max_hws(m.bits):
        parser.error(f"--hws must be in [1, {gradest.max_hws(m.bits)}] for {m.bits}-bit multipliers")
    resolved["train"] = cfg.to_dict()
    resolved["model"] = model.to_dict()
    ckpt, report = train(model, data, cfg, m)
    out = Path(args.out)
    _write_run(out, ckpt, report, resolved)
    _emit(f"{cfg.estimator}: initial_acc={report.initial_acc:.4f} final_acc={report.final_acc:.4f} "
          f"final_loss={report.epochs[-1].train_loss:.4f} -> {out}",
          {"estimator": cfg.estimator, "initial_acc": report.initial_acc, "final_acc": report.final_acc,
           "out": str(out)})
    if args.bench:
        print(_bench_line(cfg.estimator, report))
    return EXIT_OK


def cmd_compare(args, parser) -> int:
    m = _load_mult(args.mult)
    resolved = _resolve(args, m)
    model, data, cfg = _build(resolved)
    if cfg.hws is not None and not 1 <= cfg.hws <= gradest.max_hws(m.bits):
        parser.error(f"--hws must be in [1, {gradest.max_hws(m.bits)}] for {m.bits}-bit multipliers")
    resolved["train"] = {k: v for k, v in cfg.to_dict().items() if k != "estimator"}
    resolved["model"] = model.to_dict()
    rep = compare_estimators(model, data, cfg, m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind, (ckpt, report) in rep.runs.items():
        _write_run(out / kind, ckpt, report, resolved)
    (out / "compare.csv").write_text(rep.to_csv())
    dump_json({"resolved_config": resolved, **rep.to_dict()}, out / "compare.json")
    d = rep.deltas()
    _emit(f"{m.name}: initial={rep.initial_acc:.4f} ste={rep.final('ste'):.4f} "
          f"lut1d={rep.final('lut1d'):.4f} ({d['lut1d_impr_vs_ste']:+.4f}) "
          f"lut2d={rep.final('lut2d'):.4f} ({d['lut2d_impr_vs_ste']:+.4f}) -> {out}",
          {"multiplier": m.name, "initial_acc": rep.initial_acc,
           "final_acc": {k: rep.final(k) for k in rep.runs}, "deltas": d, "out": str(out)})
    if args.bench:
        base = np.mean(rep.runs["ste"][1].epoch_times)
        for kind, (_, report) in rep.runs.items():
            print(f"{_bench_line(kind, report)} ratio_vs_ste={np.mean(report.epoch_times) / base:.2f}x")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="approxgrad", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    mult = sub.add_parser("mult", help="generate and inspect multiplier tables")
    msub = mult.add_subparsers(dest="action", required=True)
    gen = msub.add_parser("gen", help="write an exact or rm-k multiplier table")
    gen.add_argument("--kind", choices=("exact", "rm"), required=True)
    gen.add_argument("--bits", type=int, required=True)
    gen.add_argument("--k", type=int)
    gen.add_argument("--signed", action="store_true")
    gen.add_argument("--out", type=Path, required=True)
    for name in ("metrics", "info"):
        sp = msub.add_parser(name, help=f"print multiplier {name}")
        sp.add_argument("--in", dest="inp", type=Path, required=True)

    grad = sub.add_parser("grad", help="build and query gradient tables")
    gsub = grad.add_subparsers(dest="action", required=True)
    gb = gsub.add_parser("build", help="build a LUT-1D or LUT-2D gradient table")
    gb.add_argument("--in", dest="inp", type=Path, required=True)
    gb.add_argument("--kind", choices=("1d", "2d"), required=True)
    gb.add_argument("--dir", choices=gradest.DIRECTIONS, required=True)
    gb.add_argument("--hws", type=_positive_int)
    gb.add_argument("--out", type=Path, required=True)
    gs = gsub.add_parser("show", help="look up one gradient entry")
    gs.add_argument("--in", dest="inp", type=Path, required=True)
    gs.add_argument("--w", type=int)
    gs.add_argument("--x", type=int)

    for name in ("train", "compare"):
        sp = sub.add_parser(name, help="retrain an MLP" if name == "train" else "train once per estimator")
        sp.add_argument("--mult", type=Path, required=True)
        if name == "train":
            sp.add_argument("--estimator", choices=gradest.ESTIMATOR_KINDS, default="ste")
        sp.add_argument("--config", type=Path, help="JSON file with model/train/data sections; overrides flags")
        sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epochs", type=_positive_int)
        sp.add_argument("--batch-size", dest="batch_size", type=_positive_int)
        sp.add_argument("--hws", type=_positive_int)
        sp.add_argument("--optimizer", choices=("adam", "sgd"))
        sp.add_argument("--hidden", help="comma-separated hidden layer sizes (default 32,32)")
        sp.add_argument("--data", type=Path, help="CSV dataset instead of the synthetic task")
        sp.add_argument("--label-column", dest="label_column", default="label")
        sp.add_argument("--paper-eq7", dest="product_path_only", action="store_true",
                        help="backpropagate only through the integer product (no zero-point terms)")
        sp.add_argument("--bench", action="store_true", help="print per-epoch wall time")
    return p


_COMMANDS = {"mult": cmd_mult, "grad": cmd_grad, "train": cmd_train, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CliError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
