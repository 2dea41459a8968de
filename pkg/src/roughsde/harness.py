"""Monte Carlo convergence experiments for the modified Euler scheme.

Coarse approximations at every n in the grid are driven by subsampling a
single fine fBm path per replica, so errors are measured with common random
numbers.  Per-replica results do not depend on chunking or worker count, and
means are reduced in fixed replica order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._csv import write_csv
from .errors import ConfigError, DomainError, ExperimentError, RegressionError
from .fbm_gen import UniformGrid, check_hurst, sample_increments, subsample_increments
from .schemes import run_batch
from .vectorfields import REGISTRY, get_field

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "RateReport",
    "TEST_FUNCTIONS",
    "get_test_function",
    "regress_rate",
    "strong_error",
    "weak_error",
    "weak_estimates",
    "q_scaling",
    "q_std",
    "linear_benchmark",
    "simulate_terminal",
]


def _quartic_bump(y):
    r2 = np.sum(y * y, axis=-1)
    return 1.0 / (1.0 + r2 * r2)


TEST_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda y: y[..., 0],
    "cos": lambda y: np.cos(y[..., 0]),
    "quartic-bump": _quartic_bump,
}


def get_test_function(name: str):
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown test function {name!r}; available: {', '.join(sorted(TEST_FUNCTIONS))}"
        ) from None


def _powers_of_two(nmin: int, nmax: int) -> Tuple[int, ...]:
    out = []
    n = nmin
    while n <= nmax:
        out.append(n)
        n *= 2
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    H: float = 0.4
    T: float = 1.0
    field: str = "linear1d"
    d: Optional[int] = None
    m: Optional[int] = None
    a: Tuple[float, ...] = (1.0,)
    n_grid: Tuple[int, ...] = (16, 32, 64, 128, 256, 512, 1024)
    ref_factor: int = 64
    reps: int = 10_000
    test_fn: str = "cos"
    seed: int = 0
    out_dir: str = "."
    workers: int = 1
    chunk: int = 4096
    reference: str = "auto"  # auto | exact | fine
    p: Optional[float] = None
    alpha: float = 0.5
    K: float = 1.0

    def __post_init__(self):
        a = self.a
        if isinstance(a, (int, float)):
            a = (float(a),)
        object.__setattr__(self, "a", tuple(float(v) for v in a))
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))

    def validate(self) -> "ExperimentConfig":
        vf = get_field(self.field)
        get_test_function(self.test_fn)
        try:
            check_hurst(self.H)
            UniformGrid(self.T, 1)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        if self.d is not None and self.d < 1:
            raise ConfigError(f"noise dimension must be positive, got {self.d}")
        if len(self.a) not in (1, vf.m):
            raise ConfigError(f"initial state has {len(self.a)} entries, field needs {vf.m}")
        ns = self.n_grid
        if not ns:
            raise ConfigError("n_grid is empty")
        for n in ns:
            if n < 1 or n & (n - 1):
                raise ConfigError(f"n_grid entries must be powers of two, got {n}")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError(f"n_grid must be strictly increasing, got {ns}")
        if self.ref_factor < 16 or self.ref_factor & (self.ref_factor - 1):
            raise ConfigError(f"ref_factor must be a power of two >= 16, got {self.ref_factor}")
        if self.reps < 2:
            raise ConfigError(f"need at least 2 replicas, got {self.reps}")
        if self.workers < 1 or self.chunk < 1:
            raise ConfigError("workers and chunk must be positive")
        if self.reference not in ("auto", "exact", "fine"):
            raise ConfigError(f"reference must be auto, exact or fine, got {self.reference!r}")
        if self.reference == "exact" and not vf.linear:
            raise ConfigError(f"no exact solution for field {self.field!r}")
        return self

    def check_field_dims(self) -> None:
        """d and m, when given, must match the vector field (needed to run the scheme)."""
        vf = self.vector_field
        if self.d is not None and self.d != vf.d:
            raise ConfigError(f"field {self.field!r} has d={vf.d}, config says d={self.d}")
        if self.m is not None and self.m != vf.m:
            raise ConfigError(f"field {self.field!r} has m={vf.m}, config says m={self.m}")

    @property
    def vector_field(self):
        return get_field(self.field)

    @property
    def initial_state(self) -> np.ndarray:
        return np.broadcast_to(np.array(self.a), (self.vector_field.m,)).copy()

    @property
    def exact_reference(self) -> bool:
        return self.vector_field.linear and self.reference in ("auto", "exact")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        aliases = {"f": "test_fn", "N": "reps", "out": "out_dir", "reference_factor": "ref_factor"}
        for old, new in aliases.items():
            if old in data:
                data[new] = data.pop(old)
        nmin = data.pop("nmin", None)
        nmax = data.pop("nmax", None)
        if nmin is not None or nmax is not None:
            if "n_grid" in data:
                raise ConfigError("give either n_grid or nmin/nmax, not both")
            if nmin is None or nmax is None:
                raise ConfigError("nmin and nmax must be given together")
            data["n_grid"] = _powers_of_two(int(nmin), int(nmax))
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: "str | os.PathLike", **overrides) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data)


@dataclass
class RateReport:
    kind: str  # strong | weak | q-scaling
    n: np.ndarray
    error: np.ndarray
    stderr: np.ndarray
    slope: float
    intercept: float
    r2: float
    expected_slope: float
    excluded: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.excluded is None:
            self.excluded = np.zeros(len(self.n), dtype=bool)

    @property
    def stem(self) -> str:
        return {"strong": "strong", "weak": "weak", "q-scaling": "qscale"}[self.kind]

    def write(self, out_dir: "str | os.PathLike") -> None:
        os.makedirs(out_dir, exist_ok=True)
        rates = os.path.join(out_dir, f"{self.stem}_rates.csv")
        if self.kind == "strong":
            write_csv(rates, ["n", "error", "stderr"], zip(self.n, self.error, self.stderr))
        else:
            write_csv(
                rates,
                ["n", "error", "stderr", "excluded"],
                zip(self.n, self.error, self.stderr, self.excluded),
            )
        write_csv(os.path.join(out_dir, "report.csv"), ["slope", "intercept", "r2"],
                  [(self.slope, self.intercept, self.r2)])
        if "benchmark" in self.extra:
            b = self.extra["benchmark"]
            write_csv(
                os.path.join(out_dir, "weak_benchmark.csv"),
                ["n", "mc_mean", "stderr", "exact", "z"],
                zip(self.n, b["mean"], b["stderr"], np.full(len(self.n), b["exact"]), b["z"]),
            )
        with open(os.path.join(out_dir, f"plot_{self.stem}.gp"), "w") as fh:
            fh.write(_plot_script(self))


def _plot_script(rep: RateReport) -> str:
    return (
        f"# gnuplot script: {rep.kind} error against n\n"
        "set datafile separator ','\n"
        "set logscale xy 2\n"
        "set xlabel 'n'\n"
        f"set ylabel '{rep.kind} error'\n"
        "set key top right\n"
        f"fit_line(x) = 2**({rep.intercept!r}) * x**({rep.slope!r})\n"
        f"plot '{rep.stem}_rates.csv' skip 1 using 1:2:3 with yerrorbars title 'Monte Carlo', \\\n"
        f"     fit_line(x) title sprintf('slope %.3f (expected %.3f)', {rep.slope!r}, {rep.expected_slope!r})\n"
    )


def regress_rate(points: Sequence[Tuple[float, float, float]], weighted: bool = False):
    """Least-squares fit of log2(error) against log2(n); returns (slope, intercept, r2).

    With ``weighted`` each point gets inverse-variance weight, the variance of
    log2(error) being approximated by (stderr / (error ln 2))^2.
    """
    pts = [tuple(map(float, p)) for p in points]
    if len(pts) < 4:
        raise RegressionError(f"rate regression needs >= 4 points, got {len(pts)}")
    n, err, se = (np.array(c) for c in zip(*pts))
    if np.any(err <= 0) or np.any(n <= 0):
        raise RegressionError("errors and step counts must be positive")
    x = np.log2(n)
    y = np.log2(err)
    if weighted:
        if np.any(se <= 0):
            raise RegressionError("weighted fit needs positive standard errors")
        w = 1.0 / (se / (err * math.log(2.0))) ** 2
    else:
        w = np.ones_like(x)
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum(w * (y - intercept - slope * x) ** 2))
    ss_tot = float(np.sum(w * (y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def _chunks(reps: int, size: int) -> List[range]:
    return [range(i, min(i + size, reps)) for i in range(0, reps, size)]


def _map_chunks(fn, cfg: ExperimentConfig, fine_n: int, d: int):
    # keep each chunk's normal draws around 2^22 doubles
    size = max(1, min(cfg.chunk, (1 << 22) // (2 * fine_n * d)))
    chunks = _chunks(cfg.reps, size)
    if cfg.workers == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, chunks))


def simulate_terminal(cfg: ExperimentConfig):
    """Coupled terminal states for every n in the grid and for the reference.

    Returns ``(y_n, y_ref, diverged)`` with shapes (L, R, m), (R, m), (L, R).
    """
    cfg.validate()
    cfg.check_field_dims()
    vf = cfg.vector_field
    a = cfg.initial_state
    ns = cfg.n_grid
    factor = 1 if cfg.exact_reference else cfg.ref_factor
    fine = UniformGrid(cfg.T, ns[-1] * factor)

    def work(reps):
        inc = sample_increments(cfg.H, fine, vf.d, cfg.seed, reps)
        if cfg.exact_reference:
            x_T = np.cumsum(inc, axis=-1)[:, :, -1]
            y_ref = a * np.exp(x_T)
            bad_ref = np.zeros(len(reps), dtype=bool)
        else:
            y_ref, bad_ref = run_batch(vf, inc, a, fine.delta, cfg.H)
        ys, bads = [], []
        for n in ns:
            sub = subsample_increments(inc, fine.n // n)
            y, bad = run_batch(vf, sub, a, cfg.T / n, cfg.H)
            ys.append(y)
            bads.append(bad | bad_ref)
        return np.stack(ys), y_ref, np.stack(bads)

    parts = _map_chunks(work, cfg, fine.n, vf.d)
    y_n = np.concatenate([p[0] for p in parts], axis=1)
    y_ref = np.concatenate([p[1] for p in parts], axis=0)
    diverged = np.concatenate([p[2] for p in parts], axis=1)
    return y_n, y_ref, diverged


def _mean_se(samples: np.ndarray, keep: np.ndarray) -> Tuple[float, float]:
    x = np.ascontiguousarray(samples[keep])
    k = x.shape[0]
    mean = float(np.sum(x) / k)
    var = float(np.sum((x - mean) ** 2) / (k - 1))
    return mean, math.sqrt(var / k)


def _check_divergence(diverged: np.ndarray, ns, reps: int) -> None:
    counts = diverged.sum(axis=1)
    for n, c in zip(ns, counts):
        if c > 0.01 * reps:
            raise ExperimentError(f"{c} of {reps} replicas diverged at n={n}")


def strong_error(cfg: ExperimentConfig) -> RateReport:
    """E|y^n_T - y^ref_T| per n with standard errors and the fitted log-log slope."""
    y_n, y_ref, diverged = simulate_terminal(cfg)
    _check_divergence(diverged, cfg.n_grid, cfg.reps)
    diff = np.linalg.norm(y_n - y_ref[None], axis=-1)  # (L, R)
    est = [_mean_se(diff[i], ~diverged[i]) for i in range(len(cfg.n_grid))]
    err = np.array([e for e, _ in est])
    se = np.array([s for _, s in est])
    slope, intercept, r2 = regress_rate(list(zip(cfg.n_grid, err, se)))
    return RateReport("strong", np.array(cfg.n_grid), err, se, slope, intercept, r2,
                      expected_slope=-(2 * cfg.H - 0.5))


def weak_estimates(cfg: ExperimentConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Signed coupled estimates of E[f(y^n_T) - f(y^ref_T)] and their standard errors."""
    f = get_test_function(cfg.test_fn)
    y_n, y_ref, diverged = simulate_terminal(cfg)
    _check_divergence(diverged, cfg.n_grid, cfg.reps)
    diff = f(y_n) - f(y_ref)[None]
    est = [_mean_se(diff[i], ~diverged[i]) for i in range(len(cfg.n_grid))]
    return np.array([e for e, _ in est]), np.array([s for _, s in est])


def weak_error(cfg: ExperimentConfig, noise_factor: float = 3.0) -> RateReport:
    """Coupled weak error E[f(y^n_T) - f(y^ref_T)]; noise-dominated points are excluded."""
    err, se = weak_estimates(cfg)
    excluded = np.abs(err) < noise_factor * se
    kept = [(n, abs(e), s) for n, e, s, x in zip(cfg.n_grid, err, se, excluded) if not x]
    extra = {}
    if cfg.vector_field.linear:
        extra["benchmark"] = linear_benchmark(cfg)
    if len(kept) < 4:
        raise ExperimentError(
            f"only {len(kept)} of {len(cfg.n_grid)} weak-error points are above the noise "
            f"level ({noise_factor} standard errors); need 4"
        )
    slope, intercept, r2 = regress_rate(kept)
    return RateReport("weak", np.array(cfg.n_grid), err, se, slope, intercept, r2,
                      expected_slope=-(4 * cfg.H - 1), excluded=excluded, extra=extra)


def linear_benchmark(cfg: ExperimentConfig) -> Dict[str, np.ndarray]:
    """Monte Carlo mean of a*exp(x_T) against a*exp(T^{2H}/2), per n.

    For each n the path is sampled directly on the n-step grid, so every row
    checks the generator at that resolution.
    """
    cfg.validate()
    if not cfg.vector_field.linear:
        raise ConfigError(f"no analytic benchmark for field {cfg.field!r}")
    a = float(cfg.initial_state[0])
    exact = a * math.exp(cfg.T ** (2 * cfg.H) / 2.0)
    means, ses = [], []
    for n in cfg.n_grid:
        grid = UniformGrid(cfg.T, n)

        def work(reps, grid=grid):
            inc = sample_increments(cfg.H, grid, 1, cfg.seed, reps)
            return a * np.exp(np.sum(inc[:, 0, :], axis=-1))

        y = np.concatenate(_map_chunks(work, cfg, n, 1))
        mean, se = _mean_se(y, np.ones(y.shape, dtype=bool))
        means.append(mean)
        ses.append(se)
    means = np.array(means)
    ses = np.array(ses)
    return {"mean": means, "stderr": ses, "exact": exact, "z": (means - exact) / ses}


def _q_samples(inc: np.ndarray, H: float, delta: float, steps: Optional[int] = None) -> np.ndarray:
    """q^{ii}_{0, t_steps} per replica and coordinate from increments (R, d, n)."""
    if steps is not None:
        inc = inc[..., :steps]
    return 0.5 * np.sum(inc * inc - delta ** (2.0 * H), axis=-1)


def _sd_se(x: np.ndarray) -> Tuple[float, float]:
    x = np.ascontiguousarray(x.ravel())
    k = x.size
    mean = float(np.sum(x) / k)
    c = x - mean
    m2 = float(np.sum(c * c) / k)
    m4 = float(np.sum(c**4) / k)
    sd = math.sqrt(m2 * k / (k - 1))
    # delta method: Var(s^2) ~ (m4 - m2^2) / k
    se = math.sqrt(max(m4 - m2 * m2, 0.0) / k) / (2.0 * sd)
    return sd, se


def q_std(cfg: ExperimentConfig, n: int, fraction: float = 1.0) -> Tuple[float, float]:
    """Monte Carlo sd (and its standard error) of q^{ii}_{0,t} with t = fraction*T on grid n."""
    cfg.validate()
    grid = UniformGrid(cfg.T, n)
    steps = int(round(fraction * n))
    if not 1 <= steps <= n:
        raise DomainError(f"fraction {fraction} selects no steps on grid n={n}")
    d = cfg.d or cfg.vector_field.d

    def work(reps):
        inc = sample_increments(cfg.H, grid, d, cfg.seed, reps)
        return _q_samples(inc, cfg.H, grid.delta, steps)

    q = np.concatenate(_map_chunks(work, cfg, n, d), axis=0)
    return _sd_se(q)


def q_scaling(cfg: ExperimentConfig) -> RateReport:
    """sd of q^{ii}_{0T} per n (coordinates pooled) and its log-log slope."""
    cfg.validate()
    ns = cfg.n_grid
    fine = UniformGrid(cfg.T, ns[-1])
    d = cfg.d or cfg.vector_field.d

    def work(reps):
        inc = sample_increments(cfg.H, fine, d, cfg.seed, reps)
        return np.stack([
            _q_samples(subsample_increments(inc, fine.n // n), cfg.H, cfg.T / n) for n in ns
        ])

    q = np.concatenate(_map_chunks(work, cfg, fine.n, d), axis=1)  # (L, R, d)
    est = [_sd_se(q[i]) for i in range(len(ns))]
    sd = np.array([e for e, _ in est])
    se = np.array([s for _, s in est])
    slope, intercept, r2 = regress_rate(list(zip(ns, sd, se)))
    return RateReport("q-scaling", np.array(ns), sd, se, slope, intercept, r2,
                      expected_slope=-(2 * cfg.H - 0.5))
