"""Modified (first-order) Euler scheme for rough SDEs driven by fBm.

The level-2 term of a Milstein step is replaced by its expectation, so a step
reads

    y_{k+1} = y_k + V0(y_k) D + V(y_k) dx_k + 1/2 sum_j dV_j V_j(y_k) D^{2H}.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._csv import write_csv
from .errors import CapabilityError, DivergenceError, DomainError, IllConditionedError, NumericError
from .fbm_gen import FbmPath, UniformGrid, refine_subsample
from .vectorfields import VectorFieldSpec

__all__ = [
    "SchemeTrajectory",
    "LinearizedPair",
    "contract_dvv",
    "contract_dvv_full",
    "euler_step",
    "run_modified_euler",
    "run_batch",
    "interpolate",
    "solve_gamma_lambda",
    "exact_linear_solution",
    "OVERFLOW_GUARD",
]

OVERFLOW_GUARD = 1e12


@dataclass(frozen=True)
class SchemeTrajectory:
    grid: UniformGrid
    states: np.ndarray  # (n + 1, m)
    path: FbmPath
    H: float
    scheme: str = "modified-euler"

    def to_csv(self, path: "str | os.PathLike") -> None:
        m = self.states.shape[1]
        pts = self.grid.points()
        write_csv(
            path,
            ["k", "t_k"] + [f"y{i + 1}" for i in range(m)],
            ([k, pts[k], *self.states[k]] for k in range(self.grid.n + 1)),
        )


@dataclass(frozen=True)
class LinearizedPair:
    gamma: np.ndarray  # (n + 1, m, m)
    lam: np.ndarray  # (n + 1, m, m)

    def defect(self) -> np.ndarray:
        """max |Lambda_k Gamma_k - Id| per step."""
        m = self.gamma.shape[-1]
        return np.max(np.abs(self.lam @ self.gamma - np.eye(m)), axis=(1, 2))


def _require_dV(vf: VectorFieldSpec):
    if vf.dV is None:
        raise CapabilityError(f"vector field {vf.name!r} provides no derivative dV")


def contract_dvv(vf: VectorFieldSpec, y: np.ndarray) -> np.ndarray:
    """Columns dV_j V_j(y), shape (..., m, d)."""
    _require_dV(vf)
    y = np.asarray(y, dtype=float)
    return np.einsum("...kjl,...lj->...kj", vf.dV(y), vf.V(y))


def contract_dvv_full(vf: VectorFieldSpec, y: np.ndarray) -> np.ndarray:
    """All contractions dV_i V_j(y), shape (..., m, d, d) indexed [k, i, j]."""
    _require_dV(vf)
    y = np.asarray(y, dtype=float)
    return np.einsum("...kil,...lj->...kij", vf.dV(y), vf.V(y))


def euler_step(vf: VectorFieldSpec, y_k, dx, delta: float, H: float) -> np.ndarray:
    """One modified Euler step; broadcasts over leading batch axes of y_k and dx."""
    if not delta > 0:
        raise DomainError(f"step size must be positive, got {delta}")
    y_k = np.asarray(y_k, dtype=float)
    dx = np.asarray(dx, dtype=float)
    if not (np.all(np.isfinite(y_k)) and np.all(np.isfinite(dx))):
        raise NumericError("non-finite state or increment")
    out = y_k + np.einsum("...kj,...j->...k", vf.V(y_k), dx)
    out = out + 0.5 * delta ** (2.0 * H) * contract_dvv(vf, y_k).sum(axis=-1)
    if vf.V0 is not None:
        out = out + vf.V0(y_k) * delta
    return out


def run_modified_euler(vf: VectorFieldSpec, path: FbmPath, a) -> SchemeTrajectory:
    """Iterate :func:`euler_step` along ``path`` from initial state ``a``."""
    if path.d != vf.d:
        raise DomainError(f"path has d={path.d}, field {vf.name!r} needs d={vf.d}")
    a = np.broadcast_to(np.asarray(a, dtype=float), (vf.m,))
    grid = path.grid
    inc = path.increments
    states = np.empty((grid.n + 1, vf.m))
    states[0] = a
    for k in range(grid.n):
        states[k + 1] = euler_step(vf, states[k], inc[:, k], grid.delta, path.H)
        norm = float(np.max(np.abs(states[k + 1])))
        if not norm <= OVERFLOW_GUARD:
            raise DivergenceError(k + 1, norm, OVERFLOW_GUARD)
    states.flags.writeable = False
    return SchemeTrajectory(grid, states, path, path.H)


def run_batch(vf: VectorFieldSpec, inc: np.ndarray, a, delta: float, H: float):
    """Terminal states for a batch of increments (R, d, n).

    Returns ``(y_T, diverged)`` with y_T of shape (R, m); diverged replicas are
    frozen at NaN and flagged.
    """
    R, d, n = inc.shape
    if d != vf.d:
        raise DomainError(f"increments have d={d}, field {vf.name!r} needs d={vf.d}")
    y = np.empty((R, vf.m))
    y[:] = np.asarray(a, dtype=float)
    diverged = np.zeros(R, dtype=bool)
    corr = 0.5 * delta ** (2.0 * H)
    if vf.linear:
        # y_{k+1} = y_k (1 + dx_k + D^{2H}/2), same arithmetic as the generic step
        for k in range(n):
            step = y + y * inc[:, 0, k:k + 1]
            y = step + corr * y
    else:
        for k in range(n):
            live = ~diverged
            yl = y[live]
            step = yl + np.einsum("rkj,rj->rk", vf.V(yl), inc[live, :, k])
            step = step + corr * contract_dvv(vf, yl).sum(axis=-1)
            if vf.V0 is not None:
                step = step + vf.V0(yl) * delta
            y[live] = step
            bad = ~(np.max(np.abs(step), axis=1) <= OVERFLOW_GUARD)
            if bad.any():
                idx = np.flatnonzero(live)[bad]
                diverged[idx] = True
                y[idx] = np.nan
    if vf.linear:
        diverged = ~(np.abs(y[:, 0]) <= OVERFLOW_GUARD)
        y[diverged] = np.nan
    return y, diverged


def interpolate(traj: SchemeTrajectory, t: float, vf: VectorFieldSpec, fine: Optional[FbmPath] = None):
    """Continuous-time interpolation of the scheme at time t.

    Between grid points the driving path is read from ``fine``, a refined
    path coupled with the trajectory's driver; ``t`` must be one of its grid
    points.
    """
    grid = traj.grid
    if not 0.0 <= t <= grid.T:
        raise DomainError(f"time {t} outside [0, {grid.T}]")
    k_exact = grid.index_of(t)
    if k_exact is not None:
        return traj.states[k_exact].copy()
    if fine is None:
        raise DomainError("off-grid interpolation needs a refined driving path")
    if fine.grid.n % grid.n:
        raise DomainError("fine path grid does not refine the trajectory grid")
    factor = fine.grid.n // grid.n
    coarse = refine_subsample(fine, factor)
    if not np.allclose(coarse.values, traj.path.values, rtol=0, atol=1e-12):
        raise DomainError("fine path is not coupled with the trajectory's driver")
    j = fine.grid.index_of(t)
    if j is None:
        raise DomainError(f"time {t} is not a point of the refined grid")
    k = j // factor
    t_k = grid.t(k)
    y_k = traj.states[k]
    dx = fine.values[:, j] - fine.values[:, k * factor]
    h = t - t_k
    out = y_k + vf.V(y_k) @ dx + 0.5 * h ** (2.0 * traj.H) * contract_dvv(vf, y_k).sum(axis=-1)
    if vf.V0 is not None:
        out = out + vf.V0(y_k) * h
    return out


def _gauss_legendre(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def solve_gamma_lambda(
    vf: VectorFieldSpec,
    traj_coarse: SchemeTrajectory,
    traj_ref: SchemeTrajectory,
    path: Optional[FbmPath] = None,
    order: int = 8,
    cond_max: float = 1e8,
    tol: float = 1e-6,
) -> LinearizedPair:
    """Linearized flow Gamma of dGamma = V~ Gamma dx and its inverse Lambda.

    V~(t_k) averages dV over the segment between the reference and scheme
    states (Gauss-Legendre in theta).  Gamma is advanced with the modified
    Euler step of the linear equation; Lambda is obtained by inversion.
    """
    _require_dV(vf)
    grid = traj_coarse.grid
    path = traj_coarse.path if path is None else path
    if path.grid.n != grid.n:
        path = refine_subsample(path, path.grid.n // grid.n)
    ref = traj_ref.states
    if traj_ref.grid.n != grid.n:
        factor = traj_ref.grid.n // grid.n
        if traj_ref.grid.n % grid.n:
            raise DomainError("reference grid does not refine the scheme grid")
        ref = ref[::factor]
    yn = traj_coarse.states
    m = vf.m
    theta, w = _gauss_legendre(order)
    pts = theta[:, None, None] * ref[None, :-1] + (1.0 - theta[:, None, None]) * yn[None, :-1]
    # Vt[k, j] is the m x m matrix [i, i'] = average of d_{i'} V^i_j
    Vt = np.einsum("q,qkijl->kjil", w, vf.dV(pts))
    inc = path.increments  # (d, n)
    corr = 0.5 * grid.delta ** (2.0 * traj_coarse.H)
    eye = np.eye(m)
    gamma = np.empty((grid.n + 1, m, m))
    lam = np.empty((grid.n + 1, m, m))
    gamma[0] = eye
    lam[0] = eye
    for k in range(grid.n):
        A = np.einsum("jab,j->ab", Vt[k], inc[:, k]) + corr * np.einsum("jab,jbc->ac", Vt[k], Vt[k])
        g = gamma[k] + A @ gamma[k]
        cond = np.linalg.cond(g)
        if not cond <= cond_max:
            raise IllConditionedError(f"cond(Gamma) = {cond:.3e} > {cond_max:.0e} at step {k + 1}")
        gamma[k + 1] = g
        lam[k + 1] = np.linalg.inv(g)
    pair = LinearizedPair(gamma, lam)
    worst = float(pair.defect().max())
    if worst > tol:
        raise IllConditionedError(f"|Lambda Gamma - Id| = {worst:.3e} exceeds {tol:.0e}")
    return pair


def exact_linear_solution(x_T, a=1.0):
    """Solution a*exp(x_T) of dy = y dx driven by a geometric rough path."""
    return a * np.exp(x_T)
