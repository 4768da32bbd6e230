"""Transmissibility arithmetic and spectral windowing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, DegenerateReferenceError, InputError

# reference lines below this fraction of the reference peak are rejected
REFERENCE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class TransmissibilityRecord:
    """|T| for every sensor pair of one measurement, shape (pairs, lines)."""

    magnitudes: np.ndarray
    freq_grid: np.ndarray

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=float)
        grid = np.asarray(self.freq_grid, dtype=float)
        if mags.ndim != 2 or mags.shape[1] != grid.shape[0]:
            raise BoundsError(
                "magnitude matrix does not match frequency grid",
                magnitudes_shape=list(mags.shape), lines=int(grid.shape[0]),
            )
        if not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise InputError("transmissibility magnitudes must be finite and >= 0")
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "freq_grid", grid)

    @property
    def pairs(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def lines(self) -> int:
        return self.magnitudes.shape[1]


@dataclass(frozen=True)
class SpectralWindow:
    pair_index: int
    line_lo: int
    line_hi: int  # exclusive

    def __len__(self):
        return self.line_hi - self.line_lo

    def check(self, pairs: int, lines: int) -> None:
        if not (0 <= self.line_lo < self.line_hi <= lines) or not (0 <= self.pair_index < pairs):
            raise BoundsError(
                f"window {self} outside record of {pairs} pairs x {lines} lines",
                window=[self.pair_index, self.line_lo, self.line_hi],
                pairs=pairs, lines=lines,
            )

    def to_list(self) -> list[int]:
        return [self.pair_index, self.line_lo, self.line_hi]


def transmissibility(spec_i, spec_j, floor: float = REFERENCE_FLOOR) -> np.ndarray:
    """Element-wise ``|spec_i / spec_j|``.

    Lines where ``|spec_j|`` drops below ``floor * max|spec_j|`` raise
    :class:`DegenerateReferenceError` instead of producing a huge ratio.
    """
    spec_i = np.asarray(spec_i)
    spec_j = np.asarray(spec_j)
    if spec_i.shape != spec_j.shape:
        raise BoundsError("spectra differ in length",
                          len_i=int(spec_i.size), len_j=int(spec_j.size))
    ref = np.abs(spec_j)
    peak = ref.max() if ref.size else 0.0
    if not peak > 0:
        raise DegenerateReferenceError("reference spectrum is identically zero", line=0)
    bad = np.flatnonzero(ref < floor * peak)
    if bad.size:
        raise DegenerateReferenceError(
            f"reference magnitude below floor at line {bad[0]}", line=int(bad[0]))
    # ratio of magnitudes, so identical spectra give exactly 1
    return np.abs(spec_i) / ref


def window_slice(record: TransmissibilityRecord, w: SpectralWindow) -> np.ndarray:
    w.check(record.pairs, record.lines)
    return record.magnitudes[w.pair_index, w.line_lo:w.line_hi].copy()


def default_window_grid(pairs: int, lines: int, window_len: int = 16) -> list[SpectralWindow]:
    """Non-overlapping windows of ``window_len`` lines tiling every pair.

    Trailing lines that do not fill a whole window are dropped.
    """
    if window_len < 2 or window_len > lines:
        raise BoundsError(f"window_len must be in [2, {lines}]", window_len=window_len)
    per_pair = lines // window_len
    return [
        SpectralWindow(p, k * window_len, (k + 1) * window_len)
        for p in range(pairs)
        for k in range(per_pair)
    ]
