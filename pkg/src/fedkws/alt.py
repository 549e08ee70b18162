"""Adaptive local training: per-client local-step budgets from data quality."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, SchedulingError


@dataclass(frozen=True)
class ClientUtility:
    n: int
    n_bar: float
    e_bar: float
    r_bar: float
    steps: int


def normalize_counts(n: Sequence[int]) -> np.ndarray:
    counts = np.asarray(n, dtype=np.float64)
    if counts.size == 0:
        raise ConfigError("normalize_counts needs at least one client")
    if np.any(counts < 1):
        raise ConfigError("every client must own at least one sample")
    return counts / counts.max()


def utility(n_bar, e_bar):
    """Harmonic mean of normalized size and normalized entropy (0 when both are 0).

    Works elementwise on arrays as well as on scalars.
    """
    a = np.asarray(n_bar, dtype=np.float64)
    b = np.asarray(e_bar, dtype=np.float64)
    if np.any((a < 0) | (a > 1) | (b < 0) | (b > 1)):
        raise ConfigError("utility inputs must lie in [0, 1]")
    s = a + b
    r = np.divide(2.0 * a * b, s, out=np.zeros(np.broadcast(a, b).shape), where=s > 0)
    return float(r) if r.ndim == 0 else r


def allocate_steps(r_bar: Sequence[float], E: int,
                   r0_override: float | None = None) -> tuple[np.ndarray, float]:
    """Return ``(steps, r0)`` with ``steps_k = round_half_even(r0 * r_bar_k * E)``.

    Without an override ``r0 = K / sum(r_bar)``, which keeps the total close to
    ``K * E``.
    """
    r = np.asarray(r_bar, dtype=np.float64)
    if E < 1:
        raise ConfigError("E must be >= 1")
    if r.size == 0:
        raise ConfigError("no clients to schedule")
    if np.any(r < 0):
        raise ConfigError("utilities must be nonnegative")
    if r0_override is not None:
        if r0_override < 0:
            raise ConfigError("r0_override must be nonnegative")
        r0 = float(r0_override)
    else:
        total = r.sum()
        if total <= 0:
            raise SchedulingError("all client utilities are zero; supply r0_override")
        r0 = r.size / total
    steps = np.rint(r0 * r * E).astype(np.int64)
    return steps, r0


def client_utilities(counts: Sequence[int], entropies: Sequence[float], E: int,
                     r0_override: float | None = None) -> tuple[list[ClientUtility], float]:
    n_bar = normalize_counts(counts)
    e_bar = np.asarray(entropies, dtype=np.float64)
    if e_bar.shape != n_bar.shape:
        raise ConfigError("counts and entropies differ in length")
    r_bar = utility(n_bar, e_bar)
    r_bar = np.atleast_1d(r_bar)
    steps, r0 = allocate_steps(r_bar, E, r0_override)
    table = [
        ClientUtility(int(n), float(nb), float(eb), float(rb), int(s))
        for n, nb, eb, rb, s in zip(counts, n_bar, e_bar, r_bar, steps)
    ]
    return table, r0


def utilities_from_stats(stats, E: int, r0_override: float | None = None):
    return client_utilities([s.n for s in stats], [s.entropy for s in stats], E, r0_override)


ALLOC_COLUMNS = ("client_id", "n", "n_bar", "e_bar", "r_bar", "steps")


def write_allocation_csv(table: Sequence[ClientUtility], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALLOC_COLUMNS)
        for k, u in enumerate(table):
            w.writerow([k, u.n, repr(u.n_bar), repr(u.e_bar), repr(u.r_bar), u.steps])
