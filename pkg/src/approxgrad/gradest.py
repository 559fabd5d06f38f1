"""Gradient estimators for approximate multipliers.

Three estimators are provided for each operand direction:

* :class:`STE` uses the exact multiplier's gradient (the co-operand value).
* :class:`GradLUT1D` holds one average slope per co-operand value.
* :class:`GradLUT2D` holds a smoothed difference slope for every operand pair.

All work happens in table-index space. Index order equals numeric order for
both signednesses, so smoothing windows and the boundary band are the same
index positions either way.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .multlib import Multiplier, PathLike, TableFormatError, operand_range, parse_header

WRT_X = "x"
WRT_W = "w"
DIRECTIONS = (WRT_X, WRT_W)


def _check_direction(direction: str) -> str:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'x' or 'w', got {direction!r}")
    return direction


def max_hws(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def default_hws(bits: int) -> int:
    """32 for 8-bit, 16 for 7-bit, and ``2**(B-3)`` (at least 1) below that."""
    return min(max_hws(bits), max(1, 1 << max(0, bits - 3)))


def _check_hws(bits: int, hws: int) -> int:
    if not isinstance(hws, (int, np.integer)) or not 1 <= hws <= max_hws(bits):
        raise ValueError(f"hws must be an integer in [1, {max_hws(bits)}] for {bits}-bit operands, got {hws!r}")
    return int(hws)


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class STE:
    bits: int
    signed: bool
    direction: str

    kind = "ste"

    def __post_init__(self):
        _check_direction(self.direction)

    def kernel_view(self):
        # the co-operand value, as a 1D table indexed by the co-operand
        lo, hi = operand_range(self.bits, self.signed)
        vals = _frozen(np.arange(lo, hi + 1, dtype=np.float64))
        return (vals, 1, 0) if self.direction == WRT_X else (vals, 0, 1)


@dataclass(frozen=True, eq=False)
class GradLUT1D:
    bits: int
    signed: bool
    direction: str
    values: np.ndarray

    kind = "1d"
    hws = None

    def __post_init__(self):
        _check_direction(self.direction)
        values = _frozen(self.values).reshape(-1)
        if values.size != 1 << self.bits:
            raise ValueError(f"1D gradient table needs {1 << self.bits} entries, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("gradient entries must be finite")
        object.__setattr__(self, "values", values)

    def kernel_view(self):
        return (self.values, 1, 0) if self.direction == WRT_X else (self.values, 0, 1)


@dataclass(frozen=True, eq=False)
class GradLUT2D:
    bits: int
    signed: bool
    direction: str
    hws: int
    values: np.ndarray

    kind = "2d"

    def __post_init__(self):
        _check_direction(self.direction)
        _check_hws(self.bits, self.hws)
        values = _frozen(self.values).reshape(-1)
        n = 1 << self.bits
        if values.size != n * n:
            raise ValueError(f"2D gradient table needs {n * n} entries, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("gradient entries must be finite")
        object.__setattr__(self, "values", values)

    def kernel_view(self):
        return self.values, 1 << self.bits, 1


GradEstimator = Union[STE, GradLUT1D, GradLUT2D]


def _rows(m: Multiplier, direction: str) -> np.ndarray:
    """Table rows along the varied operand: ``rows[fixed_idx, varied_idx]``."""
    mat = m.matrix()
    return mat if direction == WRT_X else mat.T


def _average_slope(rows: np.ndarray, signed: bool) -> np.ndarray:
    """Total change of each row divided by ``2**B - 1``.

    For signed operands the slope takes the sign of the row's end-to-end trend,
    so an exact signed multiplier yields the (possibly negative) co-operand.
    """
    n = rows.shape[1]
    change = (rows.max(axis=1) - rows.min(axis=1)).astype(np.float64)
    slope = change / (n - 1)
    if signed:
        slope = np.where(rows[:, -1] < rows[:, 0], -slope, slope)
    return slope


def _window_means(rows: np.ndarray, hws: int) -> np.ndarray:
    """Window means over the valid positions ``hws .. n-1-hws`` of every row."""
    n = rows.shape[1]
    csum = np.zeros((rows.shape[0], n + 1), dtype=np.int64)
    np.cumsum(rows, axis=1, out=csum[:, 1:])
    width = 2 * hws + 1
    sums = csum[:, width:] - csum[:, : n + 1 - width]
    return sums / width


def smooth_row(m: Multiplier, fixed: int, hws: int, direction: str = WRT_X) -> np.ndarray:
    """Window-averaged products along the varied operand for one fixed operand.

    Entry ``t`` is the mean over the window centred at operand value
    ``lo + hws + t``; the result covers ``[lo + hws, hi - hws]``.
    """
    _check_direction(direction)
    _check_hws(m.bits, hws)
    row = _rows(m, direction)[m.index(fixed)]
    return _window_means(row[None, :], hws)[0]


def build_grad2d(m: Multiplier, direction: str = WRT_X, hws: int | None = None) -> GradLUT2D:
    _check_direction(direction)
    hws = default_hws(m.bits) if hws is None else _check_hws(m.bits, hws)
    rows = _rows(m, direction)
    n = m.size
    grad = np.repeat(_average_slope(rows, m.signed)[:, None], n, axis=1)
    smooth = _window_means(rows, hws)
    # smooth[:, t] sits at position hws + t; central differences need both neighbours
    if n - 2 * hws - 2 > 0:
        grad[:, hws + 1 : n - 1 - hws] = (smooth[:, 2:] - smooth[:, :-2]) / 2
    if direction == WRT_W:
        grad = grad.T
    return GradLUT2D(m.bits, m.signed, direction, hws, grad)


def build_grad1d(m: Multiplier, direction: str = WRT_X) -> GradLUT1D:
    _check_direction(direction)
    return GradLUT1D(m.bits, m.signed, direction, _average_slope(_rows(m, direction), m.signed))


def ste_grad(direction: str, W: int, X: int) -> float:
    """Exact-multiplier gradient: ``X`` w.r.t. ``W`` and ``W`` w.r.t. ``X``."""
    _check_direction(direction)
    return float(W if direction == WRT_X else X)


def make_ste(m: Multiplier, direction: str) -> STE:
    return STE(m.bits, m.signed, direction)


def lookup(g: GradEstimator, W: int, X: int) -> float:
    lo, hi = operand_range(g.bits, g.signed)
    if not (lo <= W <= hi and lo <= X <= hi):
        raise ValueError(f"operand out of range [{lo}, {hi}]")
    if isinstance(g, STE):
        return ste_grad(g.direction, W, X)
    wi, xi = W - lo, X - lo
    if isinstance(g, GradLUT1D):
        return float(g.values[wi if g.direction == WRT_X else xi])
    return float(g.values[wi * (1 << g.bits) + xi])


ESTIMATOR_KINDS = ("ste", "lut1d", "lut2d")


@dataclass(frozen=True, eq=False)
class EstimatorPair:
    """Gradient estimators for both operands of one multiplier."""

    kind: str
    gx: GradEstimator
    gw: GradEstimator


def make_estimator(m: Multiplier, kind: str, hws: int | None = None) -> EstimatorPair:
    if kind == "ste":
        return EstimatorPair(kind, make_ste(m, WRT_X), make_ste(m, WRT_W))
    if kind == "lut1d":
        return EstimatorPair(kind, build_grad1d(m, WRT_X), build_grad1d(m, WRT_W))
    if kind == "lut2d":
        return EstimatorPair(kind, build_grad2d(m, WRT_X, hws), build_grad2d(m, WRT_W, hws))
    raise ValueError(f"estimator must be one of {ESTIMATOR_KINDS}, got {kind!r}")


_MAGIC_GRAD = "gradlut v1"


def save_grad(g: GradLUT1D | GradLUT2D, path: PathLike) -> Path:
    path = Path(path)
    n = 1 << g.bits
    hws = "--" if g.kind == "1d" else str(g.hws)
    lines = [_MAGIC_GRAD, f"bits={g.bits} signed={int(g.signed)} kind={g.kind} dir={g.direction} hws={hws}"]
    vals = g.values.reshape(-1, n)
    for row in vals:
        lines.append(" ".join(format(float(v), ".17g") for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def parse_grad(text: str) -> GradLUT1D | GradLUT2D:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC_GRAD or len(lines) < 2:
        raise TableFormatError("malformed header: expected 'gradlut v1' and a parameter line")
    f = parse_header(lines[1])
    try:
        bits, signed, kind, direction, hws = int(f["bits"]), f["signed"], f["kind"], f["dir"], f["hws"]
    except (KeyError, ValueError) as exc:
        raise TableFormatError(f"malformed header: {exc}") from None
    if signed not in ("0", "1") or kind not in ("1d", "2d") or direction not in DIRECTIONS:
        raise TableFormatError(f"malformed header: {lines[1]!r}")
    try:
        values = np.array([float(t) for t in " ".join(lines[2:]).split()], dtype=np.float64)
    except ValueError as exc:
        raise TableFormatError(f"real parse failure: {exc}") from None
    n = 1 << bits
    expected = n if kind == "1d" else n * n
    if values.size != expected:
        raise TableFormatError(f"entry count mismatch: expected {expected}, got {values.size}")
    if kind == "1d":
        return GradLUT1D(bits, signed == "1", direction, values)
    try:
        hws_val = int(hws)
    except ValueError:
        raise TableFormatError(f"malformed header: hws={hws!r}") from None
    return GradLUT2D(bits, signed == "1", direction, hws_val, values)


def load_grad(path: PathLike) -> GradLUT1D | GradLUT2D:
    return parse_grad(Path(path).read_text())
