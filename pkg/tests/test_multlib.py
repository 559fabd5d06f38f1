import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from approxgrad import multlib
from approxgrad.multlib import (
    Multiplier,
    TableFormatError,
    build_exact,
    build_truncated,
    error_metrics,
    evaluate,
    load_table,
    parse_table,
    save_table,
)


class TestBuildExact:
    def test_examples(self):
        m4 = build_exact(4)
        assert evaluate(m4, 0, 7) == 0
        assert evaluate(m4, 15, 15) == 225
        assert evaluate(build_exact(8, signed=True), -128, -128) == 16384
        assert evaluate(build_exact(8), 10, 10) == 100

    def test_names(self):
        assert build_exact(4).name == "mul4u_acc"
        assert build_exact(6, True).name == "mul6s_acc"

    @pytest.mark.parametrize("bits", [1, 9, 0])
    def test_bits_out_of_range(self, bits):
        with pytest.raises(ValueError):
            build_exact(bits)

    @pytest.mark.parametrize("signed", [False, True])
    def test_indexing_convention(self, signed):
        m = build_exact(3, signed)
        lo = m.lo
        for W in range(lo, m.hi + 1):
            for X in range(lo, m.hi + 1):
                assert m.table[(W - lo) * 8 + (X - lo)] == W * X


class TestBuildTruncated:
    def test_examples(self):
        assert evaluate(build_truncated(7, 6), 10, 127) == 1152
        assert evaluate(build_truncated(7, 6), 10, 0) == 0
        m = build_truncated(4, 2)
        assert evaluate(m, 1, 1) == 0
        assert evaluate(m, 8, 8) == 64
        assert evaluate(m, 3, 3) == 4

    def test_example_matches_scalar_oracle(self):
        assert oracles.truncated_scalar(7, 6, 10, 127) == 1152
        assert oracles.truncated_scalar(4, 2, 3, 3) == 4

    @pytest.mark.parametrize("bits", range(2, 9))
    def test_all_k_match_oracle(self, bits):
        for k in range(1, 2 * bits - 1):
            m = build_truncated(bits, k)
            np.testing.assert_array_equal(m.matrix(), oracles.truncated_table(bits, k))

    def test_scalar_spot_checks(self):
        rng = np.random.default_rng(3)
        for bits, k in [(8, 8), (6, 4), (5, 7)]:
            m = build_truncated(bits, k)
            for W, X in rng.integers(0, 1 << bits, size=(50, 2)):
                assert evaluate(m, int(W), int(X)) == oracles.truncated_scalar(bits, k, int(W), int(X))

    def test_name(self):
        assert build_truncated(8, 8).name == "mul8u_rm8"

    def test_rejects_signed(self):
        with pytest.raises(ValueError, match="unsigned"):
            build_truncated(4, 2, signed=True)

    @pytest.mark.parametrize("k", [0, 7, -1])
    def test_k_out_of_range(self, k):
        with pytest.raises(ValueError):
            build_truncated(4, k)

    @pytest.mark.parametrize("bits,k", [(4, 2), (6, 4), (7, 6), (8, 8), (5, 3)])
    def test_error_never_positive(self, bits, k):
        m = build_truncated(bits, k)
        ops = m.operands()
        assert np.all(m.matrix() - np.multiply.outer(ops, ops) <= 0)


class TestEval:
    def test_out_of_range(self):
        m = build_exact(4)
        with pytest.raises(ValueError):
            evaluate(m, 16, 0)
        with pytest.raises(ValueError):
            evaluate(m, 0, -1)
        with pytest.raises(ValueError):
            evaluate(build_exact(4, True), 8, 0)

    def test_alias(self):
        assert multlib.eval is evaluate


class TestErrorMetrics:
    @pytest.mark.parametrize("bits,signed", [(2, False), (5, True), (8, False), (8, True)])
    def test_exact_is_error_free(self, bits, signed):
        r = error_metrics(build_exact(bits, signed))
        assert (r.er, r.nmed, r.maxed) == (0, 0, 0)

    @pytest.mark.parametrize(
        "bits,k,er,nmed,maxed",
        [(4, 2, 0.500, 0.0049, 5), (8, 8, 0.980, 0.0068, 1793), (7, 6, 0.938, 0.0049, 321)],
    )
    def test_table_rows(self, bits, k, er, nmed, maxed):
        r = error_metrics(build_truncated(bits, k))
        assert r.er == pytest.approx(er, abs=5e-4)
        assert r.nmed == pytest.approx(nmed, abs=5e-5)
        assert r.maxed == maxed

    @pytest.mark.parametrize("bits,k", [(3, 2), (4, 2), (5, 4)])
    def test_matches_scalar_enumeration(self, bits, k):
        m = build_truncated(bits, k)
        er, nmed, maxed = oracles.error_metrics_exact(bits, lambda W, X: evaluate(m, W, X))
        r = error_metrics(m)
        assert (r.er_exact, r.nmed_exact, r.maxed) == (er, nmed, maxed)

    def test_signed_custom_table(self):
        m0 = build_exact(3, True)
        table = m0.table.copy()
        table[5] += 3
        table[17] -= 1
        m = Multiplier(3, True, table, "mul3s_custom")
        er, nmed, maxed = oracles.error_metrics_exact(3, lambda W, X: evaluate(m, W, X), signed=True)
        r = error_metrics(m)
        assert (r.er_exact, r.nmed_exact, r.maxed) == (er, nmed, maxed)

    @pytest.mark.parametrize("bits", range(2, 9))
    def test_rm_closed_forms(self, bits):
        for k in range(1, 2 * bits - 1):
            r = error_metrics(build_truncated(bits, k))
            # all truncated bits set only when both operands have k low ones
            if k <= bits:
                assert r.maxed == oracles.rm_maxed_closed_form(k)
            n2 = 1 << (2 * bits)
            from fractions import Fraction

            # each removed partial product is 1 with probability 1/4
            mean = Fraction(sum(min(s + 1, 2 * bits - 1 - s, bits) * 2**s for s in range(k)), 4)
            assert r.nmed_exact == mean / (n2 - 1)

    def test_zero_iff(self):
        r = error_metrics(build_truncated(4, 1))
        assert r.er > 0 and r.nmed > 0 and r.maxed > 0

    def test_format_rounds_ties_up(self):
        assert error_metrics(build_truncated(6, 4)).format() == "ER=81.3% NMED=0.30% MaxED=49"


class TestTableFiles:
    @pytest.mark.parametrize("m", [build_exact(6), build_truncated(7, 6), build_exact(4, True)], ids=lambda m: m.name)
    def test_round_trip(self, tmp_path, m):
        path = save_table(m, tmp_path / "t.amlut")
        back = load_table(path)
        np.testing.assert_array_equal(back.table, m.table)
        assert (back.bits, back.signed, back.name) == (m.bits, m.signed, m.name)

    def test_layout(self, tmp_path):
        text = save_table(build_exact(2), tmp_path / "t.amlut").read_text().splitlines()
        assert text[0] == "amlut v1"
        assert text[1] == "bits=2 signed=0 name=mul2u_acc"
        assert text[2:] == ["0 0 0 0", "0 1 2 3", "0 2 4 6", "0 3 6 9"]

    def test_hand_written_two_bit(self):
        m = parse_table("amlut v1\nbits=2 signed=0 name=tiny\n0 0 0 0  0 1 2 3\n\t0 2 4 6 0 3 6 9")
        np.testing.assert_array_equal(m.table, build_exact(2).table)

    def test_entry_count_mismatch(self):
        body = " ".join(["0"] * 255)
        with pytest.raises(TableFormatError, match="entry count mismatch"):
            parse_table(f"amlut v1\nbits=4 signed=0 name=x\n{body}\n")

    @pytest.mark.parametrize(
        "text",
        ["amlut v2\nbits=2 signed=0\n" + "0 " * 16, "amlut v1\nbits=2\n" + "0 " * 16,
         "amlut v1\nbits=two signed=0\n", "amlut v1\nbits=2 signed=3\n" + "0 " * 16, "amlut v1"],
    )
    def test_malformed_header(self, text):
        with pytest.raises(TableFormatError, match="malformed header"):
            parse_table(text)

    def test_integer_parse_failure(self):
        with pytest.raises(TableFormatError, match="integer parse failure"):
            parse_table("amlut v1\nbits=2 signed=0 name=x\n" + "0 " * 15 + "1.5\n")

    def test_sanity_bound(self):
        with pytest.raises(ValueError):
            parse_table("amlut v1\nbits=2 signed=0 name=x\n" + "0 " * 15 + "10\n")

    def test_table_is_immutable(self):
        m = build_exact(3)
        with pytest.raises(ValueError):
            m.table[0] = 1


@settings(max_examples=60, deadline=None)
@given(bits=st.integers(2, 8), data=st.data())
def test_eval_is_product_plus_nonpositive_error(bits, data):
    k = data.draw(st.integers(1, 2 * bits - 2))
    W = data.draw(st.integers(0, (1 << bits) - 1))
    X = data.draw(st.integers(0, (1 << bits) - 1))
    y = evaluate(build_truncated(bits, k), W, X)
    assert y == oracles.truncated_scalar(bits, k, W, X)
    assert y <= W * X
