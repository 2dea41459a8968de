"""Discrete rough-path structures over sampled paths.

Level-2 lifts are stored step by step; multi-step iterated integrals are
assembled from the steps with Chen's relation, so every constructed lift is
Chen-consistent by design.
"""

from __future__ import annotations

import os
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._csv import write_csv
from .errors import DomainError
from .fbm_gen import FbmPath, UniformGrid

__all__ = [
    "Level2Path",
    "QProcess",
    "ControlTable",
    "level2_diagonal",
    "level2_fine_approx",
    "chen_defect",
    "shuffle_defect",
    "p_variation",
    "p_variation_row",
    "q_process",
    "control_omega",
    "default_p",
    "davie_remainder",
    "davie_remainder_table",
]


@dataclass(frozen=True)
class Level2Path:
    """Level-1 and level-2 data of a path on a uniform grid.

    ``values`` has shape (d, n + 1); ``x2_steps`` has shape (n, d, d) and
    holds the one-step iterated integrals.  When ``offdiag`` is False only
    the diagonal of the level-2 part is known and off-diagonal entries are
    reported as NaN.
    """

    grid: UniformGrid
    values: np.ndarray
    x2_steps: np.ndarray
    method: str
    offdiag: bool

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def mask(self) -> np.ndarray:
        """Boolean (d, d) mask of the level-2 entries that are available."""
        if self.offdiag:
            return np.ones((self.d, self.d), dtype=bool)
        return np.eye(self.d, dtype=bool)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def x1(self, s: int, t: int) -> np.ndarray:
        return self.values[:, t] - self.values[:, s]

    def x2(self, s: int, t: int) -> np.ndarray:
        """x^2_{st} summed step by step via Chen's relation."""
        if not 0 <= s <= t <= self.grid.n:
            raise DomainError(f"invalid grid pair ({s}, {t})")
        out = np.zeros((self.d, self.d))
        if t > s:
            base = self.values[:, s]
            rel = self.values[:, s:t] - base[:, None]  # x_{t_k} - x_s
            inc = self.values[:, s + 1:t + 1] - self.values[:, s:t]
            out = self.x2_steps[s:t].sum(axis=0) + rel @ inc.T
        return self._masked(out)

    def x2_row(self, s: int, upto: Optional[int] = None) -> np.ndarray:
        """x^2_{s,t} for t = s..upto, shape (upto - s + 1, d, d)."""
        upto = self.grid.n if upto is None else upto
        rel = self.values[:, s:upto] - self.values[:, s:s + 1]
        inc = self.values[:, s + 1:upto + 1] - self.values[:, s:upto]
        terms = self.x2_steps[s:upto] + np.einsum("ik,jk->kij", rel, inc)
        out = np.zeros((upto - s + 1, self.d, self.d))
        np.cumsum(terms, axis=0, out=out[1:])
        return self._masked(out)

    def _masked(self, arr: np.ndarray) -> np.ndarray:
        if not self.offdiag and self.d > 1:
            arr = np.where(self.mask, arr, np.nan)
        return arr

    def to_csv(self, path: "str | os.PathLike") -> None:
        """Per-step level-2 entries as ``k_from,k_to,i,j,value``."""
        rows = []
        mask = self.mask
        for k in range(self.grid.n):
            for i in range(self.d):
                for j in range(self.d):
                    if mask[i, j]:
                        rows.append((k, k + 1, i + 1, j + 1, self.x2_steps[k, i, j]))
        write_csv(path, ["k_from", "k_to", "i", "j", "value"], rows)


def level2_diagonal(path: FbmPath) -> Level2Path:
    """Geometric lift restricted to the diagonal: x^{2,ii} = (dx^i)^2 / 2 per step."""
    inc = path.increments
    d, n = inc.shape
    steps = np.zeros((n, d, d))
    idx = np.arange(d)
    steps[:, idx, idx] = 0.5 * inc.T**2
    return Level2Path(path.grid, path.values, steps, "diagonal-exact", offdiag=(d == 1))


def level2_fine_approx(fine: FbmPath, factor: int = 64) -> Level2Path:
    """Lift on the coarse grid from the piecewise-linear interpolant of ``fine``."""
    factor = int(factor)
    if factor < 2 or fine.grid.n % factor:
        raise DomainError(f"factor {factor} must be >= 2 and divide n={fine.grid.n}")
    n_c = fine.grid.n // factor
    inc = fine.increments.T.reshape(n_c, factor, fine.d)  # (n_c, f, d)
    before = np.cumsum(inc, axis=1) - inc  # sum of earlier fine increments in the block
    steps = np.einsum("kli,klj->kij", before + 0.5 * inc, inc)
    grid = UniformGrid(fine.grid.T, n_c)
    return Level2Path(
        grid, fine.values[:, ::factor], steps, f"fine-grid-approx(factor={factor})", offdiag=True
    )


def chen_defect(lvl2: Level2Path, s: int, u: int, t: int) -> float:
    """Max-norm of x2_st - x2_su - x2_ut - dx_su (x) dx_ut over available entries."""
    if not s <= u <= t:
        raise DomainError(f"need s <= u <= t, got ({s}, {u}, {t})")
    diff = lvl2.x2(s, t) - lvl2.x2(s, u) - lvl2.x2(u, t) - np.outer(lvl2.x1(s, u), lvl2.x1(u, t))
    return float(np.max(np.abs(diff[lvl2.mask])))


def shuffle_defect(lvl2: Level2Path, s: int, t: int) -> float:
    """Max-norm of x2^{ij} + x2^{ji} - dx^i dx^j (diagonal only for diagonal lifts)."""
    x2 = lvl2.x2(s, t)
    dx = lvl2.x1(s, t)
    diff = x2 + x2.T - np.outer(dx, dx)
    return float(np.max(np.abs(diff[lvl2.mask])))


def _norms(arr: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Euclidean norm over trailing axes (restricted to ``mask`` entries)."""
    if mask is not None:
        arr = arr[..., mask]
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[:, None]
    return np.sqrt(np.sum(flat * flat, axis=1))


def p_variation_row(points: np.ndarray, p: float) -> np.ndarray:
    """best[j] = sup over partitions of [0, j] of sum |increment|^p, for every j.

    ``points`` has shape (k, ...); returns an array of length k.
    """
    pts = np.asarray(points, dtype=float)
    k = pts.shape[0]
    flat = pts.reshape(k, -1)
    best = np.zeros(k)
    for j in range(1, k):
        diff = flat[:j] - flat[j]
        cost = np.sqrt(np.einsum("ij,ij->i", diff, diff)) ** p
        best[j] = np.max(best[:j] + cost)
    return best


def p_variation(values, p: float, start: int = 0, end: Optional[int] = None) -> float:
    """Exact discrete p-variation of ``values[start..end]`` by dynamic programming."""
    if p < 1:
        raise DomainError(f"p-variation needs p >= 1, got {p}")
    values = np.asarray(values, dtype=float)
    end = values.shape[0] - 1 if end is None else end
    if not 0 <= start <= end < values.shape[0]:
        raise DomainError(f"invalid index range [{start}, {end}]")
    if end == start:
        return 0.0
    best = p_variation_row(values[start:end + 1], p)
    return float(best[-1] ** (1.0 / p))


@dataclass(frozen=True)
class QProcess:
    """Second-chaos process q_{st} = sum over steps of (x2_step - Delta^{2H}/2 * Id)."""

    grid: UniformGrid
    H: float
    steps: np.ndarray  # (n, d, d)
    mask: np.ndarray  # (d, d) available entries

    @property
    def cumulative(self) -> np.ndarray:
        """q_{0, t_k} for k = 0..n, shape (n + 1, d, d)."""
        out = np.zeros((self.grid.n + 1,) + self.steps.shape[1:])
        np.cumsum(self.steps, axis=0, out=out[1:])
        return out

    def q(self, s: int, t: int) -> np.ndarray:
        if not 0 <= s <= t <= self.grid.n:
            raise DomainError(f"invalid grid pair ({s}, {t})")
        out = self.steps[s:t].sum(axis=0)
        if not self.mask.all():
            out = np.where(self.mask, out, np.nan)
        return out

    def to_csv(self, path: "str | os.PathLike") -> None:
        d = self.steps.shape[1]
        rows = [
            (k, k + 1, i + 1, j + 1, self.steps[k, i, j])
            for k in range(self.grid.n)
            for i in range(d)
            for j in range(d)
            if self.mask[i, j]
        ]
        write_csv(path, ["k_from", "k_to", "i", "j", "value"], rows)


def q_process(lvl2: Level2Path, H: float) -> QProcess:
    d = lvl2.d
    steps = lvl2.x2_steps - 0.5 * lvl2.grid.delta ** (2.0 * H) * np.eye(d)
    mask = lvl2.mask
    steps = np.where(mask, steps, 0.0)
    return QProcess(lvl2.grid, float(H), steps, mask)


def default_p(H: float) -> float:
    """Midpoint of the admissible variation range (1/H, 3)."""
    return 0.5 * (1.0 / H + 3.0)


class ControlTable:
    """Lazily evaluated two-index control omega(s, t) on grid indices.

    ``evaluator`` is either a plain callable ``(s, t) -> float`` or an object
    that also provides ``row(s, upto) -> ndarray`` returning omega(s, s..upto)
    in one sweep; rows are cached (LRU) behind a lock.
    """

    def __init__(self, grid: UniformGrid, p: float, evaluator: Callable, cache_rows: int = 256):
        self.grid = grid
        self.p = float(p)
        self._eval = evaluator
        self._rows: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self._cache_rows = cache_rows
        self._lock = threading.Lock()

    def __call__(self, s: int, t: int) -> float:
        if not 0 <= s <= t <= self.grid.n:
            raise DomainError(f"invalid grid pair ({s}, {t})")
        if s == t:
            return 0.0
        return float(self.row(s, t)[t - s])

    def row(self, s: int, upto: Optional[int] = None) -> np.ndarray:
        upto = self.grid.n if upto is None else upto
        with self._lock:
            cached = self._rows.get(s)
            if cached is not None and cached.shape[0] > upto - s:
                self._rows.move_to_end(s)
                return cached[: upto - s + 1]
        if hasattr(self._eval, "row"):
            row = np.asarray(self._eval.row(s, upto), dtype=float)
        else:
            row = np.array([0.0] + [float(self._eval(s, t)) for t in range(s + 1, upto + 1)])
        with self._lock:
            cached = self._rows.get(s)
            if cached is None or cached.shape[0] < row.shape[0]:
                self._rows[s] = row
            self._rows.move_to_end(s)
            while len(self._rows) > self._cache_rows:
                self._rows.popitem(last=False)
        return row

    def matrix(self) -> np.ndarray:
        """Dense (n + 1, n + 1) upper-triangular table; O(n^3) for rough controls."""
        n = self.grid.n
        out = np.zeros((n + 1, n + 1))
        for s in range(n):
            out[s, s:] = self.row(s, n)
        return out

    def scaled(self, factor: float) -> "ControlTable":
        """factor * omega, still a control for factor > 0."""
        base = self
        return ControlTable(self.grid, self.p, _Scaled(base, factor), self._cache_rows)


class _Scaled:
    def __init__(self, base: ControlTable, factor: float):
        self.base = base
        self.factor = float(factor)

    def __call__(self, s, t):
        return self.factor * self.base(s, t)

    def row(self, s, upto):
        return self.factor * self.base.row(s, upto)


class _RoughControl:
    """omega(s,t) = ||S2(x)||_{p-var}^p + ||q||_{p/2-var}^{p/2} (+ q_b term)."""

    def __init__(self, lvl2: Level2Path, qs, p: float):
        self.lvl2 = lvl2
        self.qs = qs
        self.p = p
        self.mask = lvl2.mask
        self.values = lvl2.values.T  # (n + 1, d)
        d = lvl2.d
        n = lvl2.grid.n
        # cumulative S2_k = sum_{l<k} (x2_l + x_l (x) dx_l): x2_{ij} = S2_j - S2_i - x_i (x) (x_j - x_i)
        inc = np.diff(lvl2.values, axis=1)
        terms = lvl2.x2_steps + np.einsum("ik,jk->kij", lvl2.values[:, :-1], inc)
        self.S2 = np.zeros((n + 1, d, d))
        np.cumsum(terms, axis=0, out=self.S2[1:])
        self.qcum = [q.cumulative[:, q.mask] for q in qs]

    def row(self, s: int, upto: int) -> np.ndarray:
        p = self.p
        x = self.values[s:upto + 1]
        a = p_variation_row(x, p)
        b = self._x2_row(s, upto)
        out = (a ** (1.0 / p) + b ** (1.0 / p)) ** p
        for qc in self.qcum:
            out = out + p_variation_row(qc[s:upto + 1], p / 2.0)
        return out

    def _x2_row(self, s: int, upto: int) -> np.ndarray:
        """sup over partitions of [s, j] of sum |x2_{uv}|^{p/2}, for j = s..upto."""
        half = self.p / 2.0
        x = self.values[s:upto + 1]
        S2 = self.S2[s:upto + 1]
        mask = self.mask
        k = x.shape[0]
        best = np.zeros(k)
        for j in range(1, k):
            x2 = S2[j] - S2[:j] - np.einsum("ia,b->iab", x[:j], x[j]) + np.einsum("ia,ib->iab", x[:j], x[:j])
            sel = x2[:, mask]
            cost = np.sqrt(np.einsum("ij,ij->i", sel, sel)) ** half
            best[j] = np.max(best[:j] + cost)
        return best

    def __call__(self, s: int, t: int) -> float:
        return float(self.row(s, t)[-1])


def control_omega(
    w_lvl2: Level2Path, q: QProcess, q_b: Optional[QProcess] = None, p: Optional[float] = None
) -> ControlTable:
    """Control built from the rough-path p-variation of w and the p/2-variation of q."""
    H = q.H
    p = default_p(H) if p is None else float(p)
    if not (1.0 / H < p < 3.0):
        raise DomainError(f"p must lie in (1/H, 3) = ({1.0 / H:.4f}, 3), got {p}")
    if q.grid != w_lvl2.grid:
        raise DomainError("lift and q-process must share a grid")
    qs = [q] if q_b is None else [q, q_b]
    return ControlTable(w_lvl2.grid, p, _RoughControl(w_lvl2, qs, p))


def _drift_sums(vf, states: np.ndarray, delta: float) -> np.ndarray:
    """Cumulative left-point drift sums D_k = sum_{l<k} V0(y_l) * delta."""
    out = np.zeros_like(states)
    if vf.V0 is not None:
        np.cumsum(vf.V0(states[:-1]) * delta, axis=0, out=out[1:])
    return out


def davie_remainder(traj, vf, lvl2: Level2Path, s: int, t: int) -> float:
    """|dy_st - drift - V(y_s) dx_st - sum_ij dV_i V_j(y_s) x2^{ij}_st| (Euclidean)."""
    from .schemes import contract_dvv_full

    if traj.grid != lvl2.grid:
        raise DomainError("trajectory and lift must share a grid")
    if lvl2.d > 1 and not lvl2.offdiag:
        raise DomainError("Davie remainder needs off-diagonal level-2 entries when d > 1")
    y = traj.states
    ys = y[s]
    drift = 0.0
    if vf.V0 is not None and t > s:
        drift = (vf.V0(y[s:t]) * lvl2.grid.delta).sum(axis=0)
    r = (
        y[t] - ys - drift
        - vf.V(ys) @ lvl2.x1(s, t)
        - np.einsum("kij,ij->k", contract_dvv_full(vf, ys), lvl2.x2(s, t))
    )
    return float(np.linalg.norm(r))


def davie_remainder_table(traj, vf, lvl2: Level2Path) -> np.ndarray:
    """Vector-valued Davie remainders for every grid pair, shape (n+1, n+1, m)."""
    from .schemes import contract_dvv_full

    if lvl2.d > 1 and not lvl2.offdiag:
        raise DomainError("Davie remainder needs off-diagonal level-2 entries when d > 1")
    y = traj.states
    n = lvl2.grid.n
    m = y.shape[1]
    drift = _drift_sums(vf, y, lvl2.grid.delta)
    V = vf.V(y)  # (n+1, m, d)
    dvv = contract_dvv_full(vf, y)  # (n+1, m, d, d)
    out = np.zeros((n + 1, n + 1, m))
    for s in range(n + 1):
        x1 = lvl2.values[:, s:] - lvl2.values[:, s:s + 1]  # (d, L)
        x2 = lvl2.x2_row(s)  # (L, d, d)
        out[s, s:] = (
            y[s:] - y[s] - (drift[s:] - drift[s])
            - np.einsum("kj,jl->lk", V[s], x1)
            - np.einsum("kij,lij->lk", dvv[s], x2)
        )
    return out
