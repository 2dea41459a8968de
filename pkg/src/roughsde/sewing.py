"""Discrete sewing constant, empirical sewing-bound checks and weighted sums."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ._csv import write_csv
from .errors import DomainError
from .roughpath import ControlTable

__all__ = [
    "SewingReport",
    "sewing_constant",
    "verify_sewing",
    "hypothesis_scale",
    "weighted_sum_J",
]

_ZETA_TERMS = 10**6
# slack for ratios that are 1 up to rounding, e.g. after rescaling by hypothesis_scale
_ROUNDING = 1e-12


def sewing_constant(mu: float) -> float:
    """K_mu = 2^mu * zeta(mu) by direct summation plus an Euler-Maclaurin tail."""
    if not mu > 1:
        raise DomainError(f"series diverges for mu <= 1, got mu={mu}")
    L = _ZETA_TERMS
    l = np.arange(L, 0, -1, dtype=float)  # smallest terms first
    head = math.fsum(l**-mu)
    # sum_{l > L} l^-mu = L^{1-mu}/(mu-1) - L^-mu/2 + mu L^{-mu-1}/12 - ...
    tail = L ** (1.0 - mu) / (mu - 1.0) - 0.5 * L**-mu + mu * L ** (-mu - 1.0) / 12.0
    return 2.0**mu * (head + tail)


@dataclass(frozen=True)
class SewingReport:
    mu: float
    K_mu: float
    max_ratio: float
    witness: Tuple[int, int]
    verdict: str  # PASS | FAIL | HYPOTHESIS-FAILURE
    hypothesis_ratio: float  # worst |R| / omega^mu over steps and triples

    def row(self):
        return (self.mu, self.K_mu, self.max_ratio, self.witness[0], self.witness[1], self.verdict)

    def to_csv(self, path: "str | os.PathLike") -> None:
        write_csv(path, ["mu", "K_mu", "max_ratio", "witness_s", "witness_t", "verdict"], [self.row()])


def _as_matrix(omega, n: int) -> np.ndarray:
    if isinstance(omega, ControlTable):
        return omega.matrix()
    w = np.asarray(omega, dtype=float)
    if w.shape != (n + 1, n + 1):
        raise DomainError(f"control table has shape {w.shape}, expected {(n + 1, n + 1)}")
    return w


def _norm(R: np.ndarray) -> np.ndarray:
    if R.ndim == 2:
        return np.abs(R)
    return np.sqrt(np.sum(R.reshape(R.shape[0], R.shape[1], -1) ** 2, axis=-1))


def _triples(n: int, exhaustive_max: int, rng: np.random.Generator):
    """Index arrays (s, u, t) with s < u < t; all of them for n <= exhaustive_max."""
    if n <= exhaustive_max:
        s, u, t = [], [], []
        for a in range(n + 1):
            for b in range(a + 1, n + 1):
                c = np.arange(b + 1, n + 1)
                s.append(np.full(c.shape, a))
                u.append(np.full(c.shape, b))
                t.append(c)
        return np.concatenate(s), np.concatenate(u), np.concatenate(t)
    count = int(n * max(1.0, math.log(n)) * 8)
    pts = np.sort(rng.integers(0, n + 1, size=(count, 3)), axis=1)
    keep = (pts[:, 0] < pts[:, 1]) & (pts[:, 1] < pts[:, 2])
    pts = pts[keep]
    return pts[:, 0], pts[:, 1], pts[:, 2]


def _pairs(n: int, exhaustive_max: int, rng: np.random.Generator):
    if n <= exhaustive_max:
        return np.triu_indices(n + 1, k=1)
    count = int(n * max(1.0, math.log(n)) * 8)
    pts = np.sort(rng.integers(0, n + 1, size=(count, 2)), axis=1)
    pts = pts[pts[:, 0] < pts[:, 1]]
    steps = np.arange(n)
    return np.concatenate([steps, pts[:, 0]]), np.concatenate([steps + 1, pts[:, 1]])


def _hypothesis_ratios(Rn, dR, w, s, u, t, mu):
    n = w.shape[0] - 1
    k = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = Rn[k, k + 1] / w[k, k + 1] ** mu
        tri = dR / w[s, t] ** mu
    step = np.where(Rn[k, k + 1] == 0, 0.0, step)
    tri = np.where(dR == 0, 0.0, tri)
    return step, tri


def hypothesis_scale(R: np.ndarray, omega, mu: float, exhaustive_max: int = 512, seed: int = 0) -> float:
    """Smallest c with |R_step| <= (c w)^mu and |dR_sut| <= (c w(s,t))^mu on the checked set.

    c * omega is again a control, so the sewing lemma applies to it.
    """
    R = np.asarray(R, dtype=float)
    n = R.shape[0] - 1
    w = _as_matrix(omega, n)
    rng = np.random.default_rng(seed)
    s, u, t = _triples(n, exhaustive_max, rng)
    Rn = _norm(R)
    dR = _norm((R[s, t] - R[s, u] - R[u, t])[:, None])[:, 0]
    step, tri = _hypothesis_ratios(Rn, dR, w, s, u, t, mu)
    worst = max(float(np.max(step, initial=0.0)), float(np.max(tri, initial=0.0)))
    return worst ** (1.0 / mu)


def verify_sewing(
    R: np.ndarray, omega, mu: float, exhaustive_max: int = 512, seed: int = 0
) -> SewingReport:
    """Check the discrete sewing bound |R_st| <= K_mu omega(s,t)^mu.

    ``R`` holds R_{st} for grid pairs, shape (n+1, n+1) or (n+1, n+1, m).
    The lemma's hypotheses are tested first; if they fail the verdict is
    HYPOTHESIS-FAILURE rather than FAIL.
    """
    K = sewing_constant(mu)
    R = np.asarray(R, dtype=float)
    n = R.shape[0] - 1
    w = _as_matrix(omega, n)
    rng = np.random.default_rng(seed)
    Rn = _norm(R)
    s, u, t = _triples(n, exhaustive_max, rng)
    dR = _norm((R[s, t] - R[s, u] - R[u, t])[:, None])[:, 0]
    step, tri = _hypothesis_ratios(Rn, dR, w, s, u, t, mu)
    hyp = max(float(np.max(step, initial=0.0)), float(np.max(tri, initial=0.0)))
    ps, pt = _pairs(n, exhaustive_max, rng)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = Rn[ps, pt] / w[ps, pt] ** mu
    ratio = np.where(Rn[ps, pt] == 0, 0.0, ratio)
    i = int(np.argmax(ratio)) if ratio.size else 0
    max_ratio = float(ratio[i]) if ratio.size else 0.0
    witness = (int(ps[i]), int(pt[i])) if ratio.size else (0, 0)
    if not hyp <= 1.0 + _ROUNDING:
        verdict = "HYPOTHESIS-FAILURE"
    elif max_ratio <= K:
        verdict = "PASS"
    else:
        verdict = "FAIL"
    return SewingReport(float(mu), K, max_ratio, witness, verdict, hyp)


def weighted_sum_J(f, g, s: int, t: int):
    """J_st = sum_{s <= t_k < t} (f_{t_k} - f_s) * (g_{t_{k+1}} - g_{t_k}).

    ``f`` and ``g`` are grid functions indexed along axis 0; products are
    taken entrywise.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if not 0 <= s <= t < min(len(f), len(g)):
        raise DomainError(f"invalid grid pair ({s}, {t})")
    if t == s:
        return np.zeros(f.shape[1:]) if f.ndim > 1 else 0.0
    df = f[s:t] - f[s]
    dg = g[s + 1:t + 1] - g[s:t]
    return np.sum(df * dg, axis=0)
