"""Exact sampling of d-dimensional fractional Brownian motion on uniform grids.

Increments are generated by circulant embedding of the fractional Gaussian
noise autocovariance (Davies-Harte / Dietrich-Newsam), with a dense Cholesky
fallback when the embedding is not nonnegative definite.  Every
(seed, replica, coordinate) triple owns an independent Philox stream, so a
batch of replicas is bit-identical however it is chunked or parallelized.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from ._csv import write_csv
from .errors import DomainError, GenerationError

__all__ = [
    "UniformGrid",
    "FbmPath",
    "check_hurst",
    "cov",
    "rect_cov",
    "mu_density",
    "increment_autocov",
    "replica_generator",
    "sample_increments",
    "sample_fbm",
    "refine_subsample",
    "subsample_increments",
]

# Relative tolerance below which negative circulant eigenvalues are clamped.
EIG_TOL = 1e-12

_MASK64 = (1 << 64) - 1


def check_hurst(H: float) -> float:
    """Validate a Hurst parameter; warn outside the targeted band (1/3, 1/2]."""
    H = float(H)
    if not (0.0 < H <= 0.5):
        raise DomainError(f"Hurst parameter must satisfy 0 < H <= 1/2, got {H}")
    if H <= 1.0 / 3.0:
        warnings.warn(
            f"H={H} is outside (1/3, 1/2]; rough-path results do not apply",
            stacklevel=2,
        )
    return H


@dataclass(frozen=True)
class UniformGrid:
    """Uniform partition t_k = k*T/n of [0, T]."""

    T: float
    n: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError(f"time horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"step count must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "T", float(self.T))

    @property
    def delta(self) -> float:
        return self.T / self.n

    def t(self, k: int) -> float:
        if not 0 <= k <= self.n:
            raise DomainError(f"grid index {k} outside 0..{self.n}")
        return self.T if k == self.n else k * self.T / self.n

    def points(self) -> np.ndarray:
        pts = np.arange(self.n + 1) * self.T / self.n
        pts[-1] = self.T
        return pts

    def eta(self, u: float) -> int:
        """Index k with t_k <= u < t_{k+1}; u = T maps to n - 1."""
        if not 0.0 <= u <= self.T:
            raise DomainError(f"time {u} outside [0, {self.T}]")
        if u == self.T:
            return self.n - 1
        k = int(math.floor(u * self.n / self.T))
        # guard against rounding in u*n/T
        if k < self.n and self.t(k + 1) <= u:
            k += 1
        elif k > 0 and self.t(k) > u:
            k -= 1
        return min(k, self.n - 1)

    def index_of(self, t: float) -> Optional[int]:
        """Grid index of time t, or None if t is not a grid point."""
        k = int(round(t * self.n / self.T))
        if 0 <= k <= self.n and self.t(k) == t:
            return k
        return None

    def refine(self, factor: int) -> "UniformGrid":
        return UniformGrid(self.T, self.n * int(factor))


@dataclass(frozen=True)
class FbmPath:
    """Sampled d-dimensional path; ``values`` has shape (d, n + 1)."""

    grid: UniformGrid
    H: float
    values: np.ndarray
    seed: int = 0
    replica: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[1] != self.grid.n + 1:
            raise DomainError(
                f"path has {values.shape[1]} points, grid needs {self.grid.n + 1}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def increments(self) -> np.ndarray:
        """Per-step increments, shape (d, n)."""
        return np.diff(self.values, axis=1)

    def to_csv(self, path: "str | os.PathLike") -> None:
        header = ["t"] + [f"x{i + 1}" for i in range(self.d)]
        pts = self.grid.points()
        write_csv(path, header, ([pts[k], *self.values[:, k]] for k in range(self.grid.n + 1)))


def cov(H: float, s: float, t: float) -> float:
    """Covariance R(s, t) = (s^2H + t^2H - |t - s|^2H) / 2 of one fBm coordinate."""
    if s < 0 or t < 0:
        raise DomainError(f"times must be nonnegative, got s={s}, t={t}")
    h2 = 2.0 * H
    return 0.5 * (s**h2 + t**h2 - abs(t - s) ** h2)


def rect_cov(H: float, u: float, v: float, s: float, t: float) -> float:
    """E[dx_{uv} dx_{st}] for one fBm coordinate."""
    if u > v or s > t:
        raise DomainError(f"reversed interval: [{u}, {v}], [{s}, {t}]")
    if min(u, s) < 0:
        raise DomainError("interval endpoints must be nonnegative")
    h2 = 2.0 * H
    return 0.5 * (abs(v - s) ** h2 + abs(u - t) ** h2 - abs(v - t) ** h2 - abs(u - s) ** h2)


def mu_density(H: float, r: float, r_prime: float) -> float:
    """Density -H(1-2H)|r - r'|^{2H-2} of the off-diagonal covariance measure."""
    return -H * (1.0 - 2.0 * H) * abs(r - r_prime) ** (2.0 * H - 2.0)


def increment_autocov(H: float, delta: float, n: int) -> np.ndarray:
    """Autocovariance c_0..c_n of fBm increments over steps of length ``delta``."""
    k = np.arange(n + 1, dtype=float)
    h2 = 2.0 * H
    return 0.5 * delta**h2 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


@lru_cache(maxsize=64)
def _embedding(H: float, delta: float, n: int):
    """Square-root circulant eigenvalues, or a Cholesky factor as fallback."""
    c = increment_autocov(H, delta, n)
    row = np.concatenate([c, c[n - 1:0:-1]])  # length 2n
    lam = np.fft.rfft(row).real  # length n + 1
    scale = np.max(np.abs(lam))
    if lam.min() >= -EIG_TOL * scale:
        lam = np.clip(lam, 0.0, None)
        root = np.sqrt(lam)
        root.flags.writeable = False
        return "circulant", root
    idx = np.arange(n)
    toeplitz = c[np.abs(idx[:, None] - idx[None, :])]
    try:
        chol = np.linalg.cholesky(toeplitz)
    except np.linalg.LinAlgError as exc:
        raise GenerationError(
            f"circulant embedding has eigenvalue {lam.min():.3e} (relative "
            f"{lam.min() / scale:.3e}) and Cholesky of the {n}x{n} increment "
            f"covariance failed for H={H}, delta={delta}: {exc}"
        ) from exc
    chol.flags.writeable = False
    return "cholesky", chol


def replica_generator(seed: int, replica: int, coordinate: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by seed, positioned by (coordinate, replica)."""
    counter = [0, 0, int(coordinate) & _MASK64, int(replica) & _MASK64]
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64, counter=counter))


def _normals(seed: int, replicas: Sequence[int], d: int, size: int) -> np.ndarray:
    """Normals from the streams of :func:`replica_generator`, one per (replica, coordinate).

    A single bit generator is repositioned for each stream; setting the state
    is much cheaper than constructing a generator and yields the same draws.
    """
    bitgen = np.random.Philox(key=int(seed) & _MASK64)
    gen = np.random.Generator(bitgen)
    state = bitgen.state
    counter = np.zeros(4, dtype=np.uint64)
    state["state"]["counter"] = counter
    z = np.empty((len(replicas), d, size))
    for r_i, r in enumerate(replicas):
        counter[3] = int(r) & _MASK64
        for i in range(d):
            counter[2] = i
            state["buffer_pos"] = 4  # discard buffered output, as in a fresh generator
            state["has_uint32"] = 0
            bitgen.state = state
            z[r_i, i] = gen.standard_normal(size)
    return z


def sample_increments(
    H: float,
    grid: UniformGrid,
    d: int,
    seed: int,
    replicas: "Iterable[int] | int" = 1,
) -> np.ndarray:
    """fBm increments for a batch of replicas, shape (R, d, n).

    ``replicas`` is either a count (replicas 0..R-1) or explicit replica
    indices; replica r is identical whichever batch it is drawn in.
    """
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    if isinstance(replicas, (int, np.integer)):
        replicas = range(int(replicas))
    replicas = list(replicas)
    n = grid.n
    kind, root = _embedding(float(H), grid.delta, n)
    z = _normals(seed, replicas, d, 2 * n)
    if kind == "circulant":
        m = 2 * n
        w = np.empty(z.shape[:-1] + (n + 1,), dtype=complex)
        w[..., 0] = root[0] * z[..., 0]
        w[..., n] = root[n] * z[..., 1]
        if n > 1:
            re = z[..., 2:2 * n:2]
            im = z[..., 3:2 * n:2]
            w[..., 1:n] = (root[1:n] / math.sqrt(2.0)) * (re + 1j * im)
        x = np.fft.irfft(w, m, axis=-1)[..., :n] * math.sqrt(m)
    else:
        x = z[..., :n] @ root.T
    return x


def _path_from_increments(inc: np.ndarray) -> np.ndarray:
    values = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc, axis=-1, out=values[..., 1:])
    return values


def sample_fbm(H: float, grid: UniformGrid, d: int = 1, seed: int = 0, replica: int = 0) -> FbmPath:
    """One exact fBm sample path starting at the origin."""
    H = check_hurst(H)
    inc = sample_increments(H, grid, d, seed, [replica])[0]
    return FbmPath(grid, H, _path_from_increments(inc), seed=seed, replica=replica)


def refine_subsample(fine: FbmPath, factor: int) -> FbmPath:
    """Restrict a path to every ``factor``-th grid point (pathwise coupling)."""
    factor = int(factor)
    if factor < 1 or fine.grid.n % factor:
        raise DomainError(f"factor {factor} does not divide n={fine.grid.n}")
    grid = UniformGrid(fine.grid.T, fine.grid.n // factor)
    return FbmPath(grid, fine.H, fine.values[:, ::factor], seed=fine.seed, replica=fine.replica)


def subsample_increments(inc: np.ndarray, factor: int) -> np.ndarray:
    """Batch analogue of :func:`refine_subsample` acting on increments (..., n)."""
    n = inc.shape[-1]
    if factor < 1 or n % factor:
        raise DomainError(f"factor {factor} does not divide n={n}")
    if factor == 1:
        return inc
    values = _path_from_increments(inc)[..., ::factor]
    return np.diff(values, axis=-1)
