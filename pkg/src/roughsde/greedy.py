"""Greedy partition of the grid by a control threshold and the M-product diagnostics."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ._csv import write_csv
from .errors import DomainError
from .fbm_gen import UniformGrid
from .roughpath import ControlTable, Level2Path

__all__ = [
    "GreedyPartition",
    "MProducts",
    "greedy_sequence",
    "classify",
    "classify_counts",
    "m_products",
    "tail_probabilities",
]


def classify(omega_value: float, alpha: float) -> str:
    if omega_value > alpha:
        return "S2"
    if omega_value >= alpha / 2.0:
        return "S0"
    return "S1"


@dataclass(frozen=True)
class GreedyPartition:
    grid: UniformGrid
    alpha: float
    p: float
    points: np.ndarray  # grid indices s_0 = 0 < s_1 < ... < s_J = n
    omega: np.ndarray  # omega(s_j, s_{j+1}) per interval
    labels: Tuple[str, ...]

    @property
    def times(self) -> np.ndarray:
        return self.grid.points()[self.points]

    def to_csv(self, path: "str | os.PathLike") -> None:
        t = self.times
        write_csv(
            path,
            ["j", "s_j", "s_j1", "omega", "label"],
            ((j, t[j], t[j + 1], self.omega[j], self.labels[j]) for j in range(len(self.labels))),
        )


@dataclass(frozen=True)
class MProducts:
    M0: float
    M1: float
    M2: float
    K: float


def _max_admissible(omega: ControlTable, s: int, alpha: float, search: str) -> int:
    """Largest grid index u > s with omega(s, u) <= alpha (given omega(s, s+1) <= alpha)."""
    n = omega.grid.n
    if search == "linear":
        u = s + 1
        while u < n and omega(s, u + 1) <= alpha:
            u += 1
        return u
    # galloping then bisection; valid because omega grows with the interval
    lo, step = s + 1, 1
    hi = None
    while True:
        probe = min(s + 2 * step, n)
        if omega(s, probe) <= alpha:
            lo = probe
            if probe == n:
                return n
            step *= 2
        else:
            hi = probe
            break
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if omega(s, mid) <= alpha:
            lo = mid
        else:
            hi = mid
    return lo


def greedy_sequence(
    omega: ControlTable, alpha: float, grid: UniformGrid = None, search: str = "binary"
) -> GreedyPartition:
    """Greedy points: one step when that step alone exceeds alpha, else the furthest u
    with omega(s_j, u) <= alpha."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if search not in ("binary", "linear"):
        raise DomainError(f"unknown search mode {search!r}")
    grid = omega.grid if grid is None else grid
    n = grid.n
    points = [0]
    values = []
    s = 0
    while s < n:
        w1 = omega(s, s + 1)
        if w1 > alpha:
            nxt = s + 1
            w = w1
        else:
            nxt = _max_admissible(omega, s, alpha, search)
            w = omega(s, nxt)
        points.append(nxt)
        values.append(w)
        s = nxt
    values = np.array(values)
    labels = tuple(classify(w, alpha) for w in values)
    return GreedyPartition(grid, float(alpha), omega.p, np.array(points), values, labels)


def classify_counts(part: GreedyPartition) -> Tuple[int, int, int]:
    """(|S0|, |S1|, |S2|)."""
    return tuple(sum(1 for lab in part.labels if lab == name) for name in ("S0", "S1", "S2"))


def m_products(part: GreedyPartition, x_lvl2: Level2Path, K: float = 1.0, H: float = 0.5) -> MProducts:
    """M0 and M1 from omega^{1/p} on S0/S1; M2 from one-step rough increments on S2."""
    if not K > 0:
        raise DomainError(f"K must be positive, got {K}")
    p = part.p
    M = {"S0": 1.0, "S1": 1.0, "S2": 1.0}
    d2h = x_lvl2.grid.delta ** (2.0 * H)
    for j, lab in enumerate(part.labels):
        if lab == "S2":
            s, t = int(part.points[j]), int(part.points[j + 1])
            x2 = x_lvl2.x2(s, t)[x_lvl2.mask]
            size = np.linalg.norm(x_lvl2.x1(s, t)) + np.sqrt(np.linalg.norm(x2))
            M["S2"] *= K * size + K * d2h + 1.0
        else:
            M[lab] *= K * part.omega[j] ** (1.0 / p) + 1.0
    return MProducts(M["S0"], M["S1"], M["S2"], float(K))


def tail_probabilities(counts: Sequence[int], levels: Sequence[float]) -> np.ndarray:
    """Empirical P(count > a) for each level a."""
    counts = np.asarray(counts)
    return np.array([np.mean(counts > a) for a in levels])
