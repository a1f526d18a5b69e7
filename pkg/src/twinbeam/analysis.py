"""Velocity-space cell analysis: binning, histograms, selection, bootstrap.

The chain mirrors how the detector data is reduced: events are binned
into a grid of contiguous velocity-space cells, each cell gets a
count-occurrence histogram over shots, low-occupancy cells are dropped,
and the survivors are either summed histogram-wise (single-mode view) or
pooled shot-wise (multimode view).  Uncertainties come from resampling
whole shots with replacement, shots being the independent unit of the
experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CellGrid",
    "BinnedCounts",
    "CountHistogram",
    "CellStats",
    "CellSelection",
    "bin_events",
    "cell_histograms",
    "filter_cells",
    "sum_histograms",
    "pooled_counts_histogram",
    "bootstrap_std",
    "write_cell_stats",
]

DEFAULT_CELL_WIDTHS = (5.5, 5.5, 2.5)
DEFAULT_COUNTS_PER_AXIS = (3, 3, 5)
DEFAULT_MIN_MEAN = 0.135


@dataclass(frozen=True)
class CellGrid:
    """Axis-aligned box grid in velocity space (mm/s).

    Cells are half-open, ``[lower, upper)`` on every axis, so an event
    sitting exactly on an interior boundary lands in the higher-index
    cell.
    """

    origin: tuple[float, float, float]
    cell_widths: tuple[float, float, float] = DEFAULT_CELL_WIDTHS
    counts_per_axis: tuple[int, int, int] = DEFAULT_COUNTS_PER_AXIS

    def __post_init__(self):
        if any(w <= 0 for w in self.cell_widths):
            raise ValueError("cell widths must be positive")
        if any(n < 1 for n in self.counts_per_axis):
            raise ValueError("counts_per_axis entries must be >= 1")

    @classmethod
    def centered(
        cls,
        cell_widths=DEFAULT_CELL_WIDTHS,
        counts_per_axis=DEFAULT_COUNTS_PER_AXIS,
        center=(0.0, 0.0, 0.0),
    ) -> "CellGrid":
        origin = tuple(
            c - n * w / 2.0 for c, n, w in zip(center, counts_per_axis, cell_widths)
        )
        return cls(origin, tuple(cell_widths), tuple(counts_per_axis))

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.counts_per_axis
        return nx * ny * nz

    def cell_index(self, flat: int) -> tuple[int, int, int]:
        return np.unravel_index(flat, self.counts_per_axis)

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "cell_widths": list(self.cell_widths),
            "counts_per_axis": list(self.counts_per_axis),
        }


@dataclass(frozen=True)
class BinnedCounts:
    """Per-shot, per-cell integer counts plus per-shot dropped events."""

    grid: CellGrid
    counts: np.ndarray  # (shots, n_cells)
    dropped: np.ndarray  # (shots,)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=int)
        dropped = np.asarray(self.dropped, dtype=int)
        if counts.ndim != 2 or counts.shape[1] != self.grid.n_cells:
            raise ValueError("counts must be (shots, n_cells)")
        if dropped.shape != (counts.shape[0],):
            raise ValueError("dropped must have one entry per shot")
        counts.flags.writeable = False
        dropped.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "dropped", dropped)

    @property
    def n_shots(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class CountHistogram:
    """Occurrences of each count value over ``total_shots`` shots."""

    occurrences: np.ndarray
    total_shots: int

    def __post_init__(self):
        occurrences = np.asarray(self.occurrences, dtype=int)
        if occurrences.ndim != 1 or len(occurrences) == 0:
            raise ValueError("occurrences must be a non-empty 1-D array")
        if occurrences.sum() != self.total_shots:
            raise ValueError(
                f"occurrences sum to {occurrences.sum()}, expected {self.total_shots}"
            )
        occurrences.flags.writeable = False
        object.__setattr__(self, "occurrences", occurrences)

    @property
    def probabilities(self) -> np.ndarray:
        return self.occurrences / self.total_shots

    @property
    def mean(self) -> float:
        n = np.arange(len(self.occurrences))
        return float(n @ self.occurrences) / self.total_shots

    def to_csv(self, path, err=None) -> None:
        """Write ``n,occurrences,probability,err`` rows."""
        probs = self.probabilities
        with open(path, "w") as fh:
            fh.write("n,occurrences,probability,err\n")
            for n, occ in enumerate(self.occurrences):
                e = "" if err is None else repr(float(err[n]))
                fh.write(f"{n},{occ},{float(probs[n])!r},{e}\n")

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "CountHistogram":
        counts = np.asarray(counts, dtype=int)
        return cls(np.bincount(counts), total_shots=len(counts))


@dataclass(frozen=True)
class CellStats:
    """One cell's index, per-shot mean and occurrence histogram."""

    index: tuple[int, int, int]
    mean: float
    histogram: CountHistogram


@dataclass(frozen=True)
class CellSelection:
    """Outcome of the low-occupancy cell filter."""

    kept: tuple[CellStats, ...]
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "kept", tuple(self.kept))

    def __len__(self) -> int:
        return len(self.kept)

    @property
    def is_empty(self) -> bool:
        return len(self.kept) == 0

    @property
    def average_mean(self) -> float:
        if self.is_empty:
            return math.nan
        return float(np.mean([c.mean for c in self.kept]))


def bin_events(events, grid: CellGrid) -> BinnedCounts:
    """Assign every event to at most one cell; out-of-grid events counted.

    ``events`` is an ``EventTable``; binning uses only the per-shot
    velocity arrays.
    """
    origin = np.asarray(grid.origin)
    widths = np.asarray(grid.cell_widths)
    shape = grid.counts_per_axis
    n_shots = events.n_shots
    counts = np.zeros((n_shots, grid.n_cells), dtype=int)
    dropped = np.zeros(n_shots, dtype=int)
    for row, record in enumerate(events.records):
        if len(record.events) == 0:
            continue
        idx = np.floor((record.events - origin) / widths).astype(int)
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        dropped[row] = int((~inside).sum())
        if inside.any():
            flat = np.ravel_multi_index(idx[inside].T, shape)
            counts[row] = np.bincount(flat, minlength=grid.n_cells)
    return BinnedCounts(grid=grid, counts=counts, dropped=dropped)


def cell_histograms(binned: BinnedCounts) -> list[CellStats]:
    """One :class:`CellStats` per cell, in flat cell order."""
    stats = []
    for cell in range(binned.grid.n_cells):
        hist = CountHistogram.from_counts(binned.counts[:, cell])
        stats.append(
            CellStats(
                index=tuple(int(i) for i in binned.grid.cell_index(cell)),
                mean=hist.mean,
                histogram=hist,
            )
        )
    return stats


def filter_cells(
    stats: list[CellStats], min_mean: float = DEFAULT_MIN_MEAN
) -> CellSelection:
    """Keep cells whose per-shot mean reaches ``min_mean``."""
    if min_mean < 0:
        raise ValueError(f"min_mean must be >= 0, got {min_mean}")
    kept = tuple(s for s in stats if s.mean >= min_mean)
    return CellSelection(kept=kept, threshold=min_mean)


def _pad_to(arr: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=arr.dtype)
    out[: len(arr)] = arr
    return out


def sum_histograms(selected) -> CountHistogram:
    """Element-wise sum of the selected cells' histograms.

    The result treats every (cell, shot) pair as one sample, so
    ``total_shots`` is the shot count times the number of cells.
    """
    cells = list(selected.kept if isinstance(selected, CellSelection) else selected)
    if not cells:
        raise ValueError("cannot sum an empty cell selection")
    width = max(len(c.histogram.occurrences) for c in cells)
    occurrences = np.zeros(width, dtype=int)
    for cell in cells:
        occurrences += _pad_to(cell.histogram.occurrences, width)
    return CountHistogram(
        occurrences=occurrences,
        total_shots=sum(c.histogram.total_shots for c in cells),
    )


def pooled_counts_histogram(selected, binned: BinnedCounts) -> CountHistogram:
    """Histogram of the per-shot total count over the selected cells."""
    cells = list(selected.kept if isinstance(selected, CellSelection) else selected)
    if not cells:
        raise ValueError("cannot pool an empty cell selection")
    shape = binned.grid.counts_per_axis
    flat_idx = [np.ravel_multi_index(c.index, shape) for c in cells]
    sums = binned.counts[:, flat_idx].sum(axis=1)
    return CountHistogram.from_counts(sums)


def bootstrap_std(data, statistic, resamples: int = 1000, seed: int = 0):
    """Standard deviation of ``statistic`` under shot resampling.

    ``data`` is resampled with replacement along its first axis
    ``resamples`` times; ``statistic`` maps one resample to a scalar or an
    array.  Seeded, hence deterministic.
    """
    data = np.asarray(data)
    if data.shape[0] == 0:
        raise ValueError("cannot bootstrap empty data")
    if resamples < 2:
        raise ValueError(f"resamples must be >= 2, got {resamples}")
    rng = np.random.default_rng(seed)
    n = data.shape[0]
    values = []
    for _ in range(resamples):
        rows = rng.integers(0, n, size=n)
        values.append(statistic(data[rows]))
    return np.std(np.asarray(values, dtype=float), axis=0, ddof=1)


def write_cell_stats(path, stats: list[CellStats], selection: CellSelection) -> None:
    """CSV export with ``ix,iy,iz,mean,kept`` columns."""
    kept_ids = {s.index for s in selection.kept}
    with open(path, "w") as fh:
        fh.write("ix,iy,iz,mean,kept\n")
        for s in stats:
            ix, iy, iz = s.index
            fh.write(f"{ix},{iy},{iz},{float(s.mean)!r},{int(s.index in kept_ids)}\n")
