"""Integer approximate-multiplier models.

A :class:`Multiplier` is fully described by its product table: one output
for every operand pair, stored row-major with ``W`` as the major index.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Union

import numpy as np

MIN_BITS = 2
MAX_BITS = 8

PathLike = Union[str, "os.PathLike[str]"]


class TableFormatError(ValueError):
    """Raised when a multiplier or gradient table file cannot be parsed."""


def _check_bits(bits: int) -> None:
    if not isinstance(bits, (int, np.integer)) or not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"bits must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits!r}")


def operand_range(bits: int, signed: bool) -> tuple[int, int]:
    """Inclusive ``(lo, hi)`` operand bounds for a ``bits``-wide operand."""
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


@dataclass(frozen=True, eq=False)
class Multiplier:
    bits: int
    signed: bool
    table: np.ndarray
    name: str

    def __post_init__(self):
        _check_bits(self.bits)
        table = np.ascontiguousarray(self.table, dtype=np.int64).reshape(-1)
        n = 1 << self.bits
        if table.size != n * n:
            raise ValueError(f"entry count mismatch: expected {n * n}, got {table.size}")
        bound = (1 << (2 * self.bits - 2)) if self.signed else (n - 1) ** 2
        if table.size and int(np.abs(table).max()) > bound:
            raise ValueError(f"table entry exceeds |Y| <= {bound}")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "signed", bool(self.signed))

    @property
    def size(self) -> int:
        """Number of operand values, ``2**bits``."""
        return 1 << self.bits

    @property
    def lo(self) -> int:
        return operand_range(self.bits, self.signed)[0]

    @property
    def hi(self) -> int:
        return operand_range(self.bits, self.signed)[1]

    @property
    def offset(self) -> int:
        """Value subtracted from a table index to obtain the operand value."""
        return -self.lo

    def operands(self) -> np.ndarray:
        """All operand values in table-index order."""
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)

    def matrix(self) -> np.ndarray:
        """Read-only ``(2**B, 2**B)`` view of the table, ``[idx(W), idx(X)]``."""
        return self.table.reshape(self.size, self.size)

    def index(self, v) -> np.ndarray | int:
        """Table index of operand value(s) ``v``; raises on out-of-range input."""
        arr = np.asarray(v)
        if arr.size and (arr.min() < self.lo or arr.max() > self.hi):
            raise ValueError(f"operand out of range [{self.lo}, {self.hi}]")
        idx = arr.astype(np.int64) + self.offset
        return int(idx) if idx.ndim == 0 else idx


def _label(bits: int, signed: bool, suffix: str) -> str:
    return f"mul{bits}{'s' if signed else 'u'}_{suffix}"


def build_exact(bits: int, signed: bool = False) -> Multiplier:
    _check_bits(bits)
    lo, hi = operand_range(bits, signed)
    ops = np.arange(lo, hi + 1, dtype=np.int64)
    table = np.multiply.outer(ops, ops)
    return Multiplier(bits, signed, table, _label(bits, signed, "acc"))


def truncation_error(bits: int, k: int, W, X) -> np.ndarray:
    """Error of removing the rightmost ``k`` partial-product columns (always <= 0)."""
    W = np.asarray(W, dtype=np.int64)
    X = np.asarray(X, dtype=np.int64)
    err = np.zeros(np.broadcast(W, X).shape, dtype=np.int64)
    for i in range(bits):
        wi = (W >> i) & 1
        for j in range(min(bits, k - i)):
            err -= (wi & ((X >> j) & 1)) << (i + j)
    return err


def build_truncated(bits: int, k: int, signed: bool = False) -> Multiplier:
    """Unsigned array multiplier with the ``k`` least-significant columns removed."""
    _check_bits(bits)
    if signed:
        raise ValueError("truncated (rm-k) multipliers are only defined for unsigned operands")
    if not 1 <= k <= 2 * bits - 2:
        raise ValueError(f"k must be in [1, {2 * bits - 2}] for {bits}-bit operands, got {k}")
    ops = np.arange(1 << bits, dtype=np.int64)
    W, X = ops[:, None], ops[None, :]
    table = W * X + truncation_error(bits, k, W, X)
    return Multiplier(bits, False, table, _label(bits, False, f"rm{k}"))


def evaluate(m: Multiplier, W: int, X: int) -> int:
    """Approximate product ``AM(W, X)`` read from the table."""
    return int(m.table[m.index(W) * m.size + m.index(X)])


# public alias matching the operation name used across the toolkit
eval = evaluate  # noqa: A001


@dataclass(frozen=True)
class ErrorReport:
    er: float
    nmed: float
    maxed: int
    # exact rationals behind er / nmed, used for table-precision formatting
    er_exact: Fraction
    nmed_exact: Fraction

    def as_dict(self) -> dict:
        return {"er": self.er, "nmed": self.nmed, "maxed": self.maxed}

    def format(self) -> str:
        return (
            f"ER={format_percent(self.er_exact, 1)}% "
            f"NMED={format_percent(self.nmed_exact, 2)}% MaxED={self.maxed}"
        )


def format_percent(frac: Fraction, places: int) -> str:
    """Percent with ``places`` decimals, rounding exact ties upward as printed tables do."""
    d = Decimal(frac.numerator * 100) / Decimal(frac.denominator)
    return str(d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def error_metrics(m: Multiplier) -> ErrorReport:
    """ER, NMED and MaxED by exhaustive enumeration under uniform inputs."""
    ops = m.operands()
    dist = np.abs(m.matrix() - np.multiply.outer(ops, ops))
    pairs = m.size * m.size
    wrong = int(np.count_nonzero(dist))
    total = int(dist.sum())
    er = Fraction(wrong, pairs)
    nmed = Fraction(total, pairs * (pairs - 1))
    return ErrorReport(float(er), float(nmed), int(dist.max()), er, nmed)


_MAGIC_MULT = "amlut v1"


def parse_header(line: str) -> dict[str, str]:
    """Split a ``key=value`` header line."""
    fields = {}
    for tok in line.split():
        if "=" not in tok:
            raise TableFormatError(f"malformed header token {tok!r}")
        key, _, value = tok.partition("=")
        fields[key] = value
    return fields


def save_table(m: Multiplier, path: PathLike) -> Path:
    path = Path(path)
    n = m.size
    lines = [_MAGIC_MULT, f"bits={m.bits} signed={int(m.signed)} name={m.name}"]
    rows = m.matrix()
    for r in range(n):
        lines.append(" ".join(str(int(v)) for v in rows[r]))
    path.write_text("\n".join(lines) + "\n")
    return path


def parse_table(text: str) -> Multiplier:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC_MULT:
        raise TableFormatError("malformed header: expected 'amlut v1'")
    if len(lines) < 2:
        raise TableFormatError("malformed header: missing parameter line")
    fields = parse_header(lines[1])
    try:
        bits = int(fields["bits"])
        signed = fields["signed"]
    except (KeyError, ValueError) as exc:
        raise TableFormatError(f"malformed header: {exc}") from None
    if signed not in ("0", "1"):
        raise TableFormatError(f"malformed header: signed must be 0 or 1, got {signed!r}")
    _check_bits(bits)
    tokens = " ".join(lines[2:]).split()
    n = 1 << bits
    if len(tokens) != n * n:
        raise TableFormatError(f"entry count mismatch: expected {n * n}, got {len(tokens)}")
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise TableFormatError(f"integer parse failure: {exc}") from None
    name = fields.get("name") or _label(bits, signed == "1", "custom")
    return Multiplier(bits, signed == "1", np.array(values, dtype=np.int64), name)


def load_table(path: PathLike) -> Multiplier:
    return parse_table(Path(path).read_text())
