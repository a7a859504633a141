"""Shared signal types: step functions, level ladders, discrete traces.

Sampling convention used throughout the package: a recording of n samples
lives on the grid t_k = k / sample_rate for k = 1..n, so t_n = t_max.  A
switch between sample k and sample k+1 is placed at the midpoint
(k + 0.5) / sample_rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyTrace(ValueError):
    """An operation that needs at least one sample got none."""


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function on [0, t_max].

    ``breaks`` holds the K+2 boundaries 0 = tau_0 < ... < tau_{K+1} = t_max
    and ``levels`` the K+1 values; segment j is [breaks[j], breaks[j+1]) and
    adjacent levels differ.
    """

    breaks: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float)
        levels = np.asarray(self.levels, dtype=float)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "levels", levels)
        if breaks.ndim != 1 or levels.ndim != 1 or len(breaks) != len(levels) + 1:
            raise ValueError("need K+2 breakpoints for K+1 levels")
        if len(levels) == 0:
            raise ValueError("need at least one segment")
        if breaks[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if not np.all(np.diff(breaks) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(levels) > 1 and np.any(levels[1:] == levels[:-1]):
            raise ValueError("adjacent levels must differ")

    @classmethod
    def from_segments(cls, breaks, levels) -> "StepFunction":
        """Build a step function, merging adjacent segments with equal levels."""
        breaks = np.asarray(breaks, dtype=float)
        levels = np.asarray(levels, dtype=float)
        keep = np.concatenate([[True], levels[1:] != levels[:-1]])
        merged_levels = levels[keep]
        merged_breaks = np.concatenate([breaks[:-1][keep], breaks[-1:]])
        return cls(merged_breaks, merged_levels)

    @property
    def n_changes(self) -> int:
        return len(self.levels) - 1

    @property
    def t_max(self) -> float:
        return float(self.breaks[-1])

    def sample(self, times) -> np.ndarray:
        """Evaluate at the given times; t_max maps to the last segment."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.breaks, times, side="right") - 1
        idx = np.clip(idx, 0, len(self.levels) - 1)
        return self.levels[idx]

    def durations(self) -> np.ndarray:
        return np.diff(self.breaks)


@dataclass(frozen=True)
class LevelLadder:
    """Arithmetic level ladder: rung i sits at offset + i * spacing, i = 0..L."""

    L: int
    offset: float
    spacing: float
    sse: float = 0.0

    def __post_init__(self):
        if int(self.L) < 1:
            raise ValueError("L must be >= 1")
        object.__setattr__(self, "L", int(self.L))
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    def rungs(self) -> np.ndarray:
        return self.offset + self.spacing * np.arange(self.L + 1)

    def nearest_rung(self, x) -> np.ndarray:
        """Nearest rung index; an exact midpoint maps to the lower rung."""
        t = (np.asarray(x, dtype=float) - self.offset) / self.spacing
        idx = np.ceil(t - 0.5).astype(np.int64)
        return np.clip(idx, 0, self.L)


@dataclass(frozen=True)
class DiscreteTrace:
    """Open-channel count per sample, together with the fitted level ladder.

    ``durations`` carries the per-sample weight (1.0 at sample resolution).
    """

    values: np.ndarray
    ladder: LevelLadder
    durations: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1 or len(values) == 0:
            raise EmptyTrace("trace must hold at least one sample")
        if not np.issubdtype(values.dtype, np.integer):
            rounded = np.rint(values).astype(np.int64)
            if not np.allclose(values, rounded):
                raise ValueError("trace values must be integers")
            values = rounded
        object.__setattr__(self, "values", values)
        if values.min() < 0 or values.max() > self.ladder.L:
            raise ValueError("trace values must lie in {0,...,L}")
        if self.durations is None:
            object.__setattr__(self, "durations", np.ones(len(values)))
        else:
            object.__setattr__(self, "durations", np.asarray(self.durations, dtype=float))

    def __len__(self) -> int:
        return len(self.values)
