"""Command-line entry point.

Exit status: 0 on success, 1 on configuration errors, 2 on experiment errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

from ._csv import write_csv
from .errors import ConfigError, DomainError, RegressionError, RoughSDEError
from .fbm_gen import UniformGrid, refine_subsample, sample_fbm
from .greedy import classify_counts, greedy_sequence, m_products
from .harness import TEST_FUNCTIONS, ExperimentConfig, q_scaling, strong_error, weak_error
from .roughpath import (
    control_omega,
    davie_remainder_table,
    level2_diagonal,
    level2_fine_approx,
    q_process,
)
from .schemes import run_modified_euler
from .sewing import hypothesis_scale, verify_sewing
from .vectorfields import REGISTRY

COMMANDS = ("sample", "strong", "weak", "qscale", "greedy", "sewing", "rates-all")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roughsde", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML file with experiment settings")
        p.add_argument("--H", type=float)
        p.add_argument("--T", type=float)
        p.add_argument("--field", help=f"vector field: {', '.join(sorted(REGISTRY))}")
        p.add_argument("--f", dest="test_fn", help=f"test function: {', '.join(sorted(TEST_FUNCTIONS))}")
        p.add_argument("--a", type=float, nargs="+", help="initial state")
        p.add_argument("--d", type=int, help="noise dimension (sample/qscale)")
        p.add_argument("--nmin", type=int)
        p.add_argument("--nmax", type=int)
        p.add_argument("--n", type=int, help="single grid size (sample/greedy/sewing)")
        p.add_argument("--reps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--ref-factor", dest="ref_factor", type=int)
        p.add_argument("--reference", choices=("auto", "exact", "fine"))
        p.add_argument("--workers", type=int)
        p.add_argument("--chunk", type=int)
        p.add_argument("--p", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--K", type=float)
        p.add_argument("--out", dest="out_dir")
    return parser


def _config(args) -> ExperimentConfig:
    """File settings (if any) overridden by command-line flags."""
    data = _read_toml(args.config) if args.config else {}
    for key in ("H", "T", "field", "test_fn", "d", "reps", "seed", "ref_factor", "reference",
                "workers", "chunk", "p", "alpha", "K", "out_dir"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.a is not None:
        data["a"] = tuple(args.a)
    if args.nmin is not None or args.nmax is not None:
        grid = data.pop("n_grid", None) or ExperimentConfig().n_grid
        data["nmin"] = args.nmin if args.nmin is not None else data.get("nmin", grid[0])
        data["nmax"] = args.nmax if args.nmax is not None else data.get("nmax", grid[-1])
    return ExperimentConfig.from_mapping(data)


def _read_toml(path):
    from .harness import tomllib

    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _cmd_sample(cfg: ExperimentConfig, n: int) -> None:
    d = cfg.d or cfg.vector_field.d
    path = sample_fbm(cfg.H, UniformGrid(cfg.T, n), d, cfg.seed)
    path.to_csv(os.path.join(cfg.out_dir, "path.csv"))
    lvl2 = level2_diagonal(path)
    lvl2.to_csv(os.path.join(cfg.out_dir, "lift.csv"))
    q_process(lvl2, cfg.H).to_csv(os.path.join(cfg.out_dir, "q.csv"))


def _lift(cfg: ExperimentConfig, n: int, d: int, factor: int = 64):
    if d == 1:
        path = sample_fbm(cfg.H, UniformGrid(cfg.T, n), 1, cfg.seed)
        return path, level2_diagonal(path)
    fine = sample_fbm(cfg.H, UniformGrid(cfg.T, n * factor), d, cfg.seed)
    lvl2 = level2_fine_approx(fine, factor)
    return refine_subsample(fine, factor), lvl2


def _cmd_greedy(cfg: ExperimentConfig, n: int) -> None:
    d = cfg.d or cfg.vector_field.d
    _, lvl2 = _lift(cfg, n, d)
    omega = control_omega(lvl2, q_process(lvl2, cfg.H), p=cfg.p)
    part = greedy_sequence(omega, cfg.alpha)
    part.to_csv(os.path.join(cfg.out_dir, "partition.csv"))
    s0, s1, s2 = classify_counts(part)
    mp = m_products(part, lvl2, cfg.K, cfg.H)
    write_csv(os.path.join(cfg.out_dir, "mproducts.csv"),
              ["S0", "S1", "S2", "M0", "M1", "M2", "K"], [(s0, s1, s2, mp.M0, mp.M1, mp.M2, mp.K)])


def _cmd_sewing(cfg: ExperimentConfig, n: int) -> None:
    cfg.check_field_dims()
    vf = cfg.vector_field
    path, lvl2 = _lift(cfg, n, vf.d)
    traj = run_modified_euler(vf, path, cfg.initial_state)
    traj.to_csv(os.path.join(cfg.out_dir, "trajectory.csv"))
    omega = control_omega(lvl2, q_process(lvl2, cfg.H), p=cfg.p)
    p = omega.p
    mu = 3.0 / p
    R = davie_remainder_table(traj, vf, lvl2)
    w = omega.matrix()
    c = hypothesis_scale(R, w, mu)
    report = verify_sewing(R, c * w, mu)
    report.to_csv(os.path.join(cfg.out_dir, "sewing.csv"))
    write_csv(os.path.join(cfg.out_dir, "sewing_scale.csv"), ["p", "mu", "control_scale"], [(p, mu, c)])


def _run(args) -> None:
    cfg = _config(args)
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    cmd = args.command
    if cmd == "sample":
        _cmd_sample(cfg, args.n or cfg.n_grid[-1])
    elif cmd == "greedy":
        _cmd_greedy(cfg, args.n or cfg.n_grid[-1])
    elif cmd == "sewing":
        _cmd_sewing(cfg, args.n or 32)
    elif cmd == "strong":
        strong_error(cfg).write(cfg.out_dir)
    elif cmd == "weak":
        weak_error(cfg).write(cfg.out_dir)
    elif cmd == "qscale":
        q_scaling(cfg).write(cfg.out_dir)
    elif cmd == "rates-all":
        strong_error(cfg).write(os.path.join(cfg.out_dir, "strong"))
        weak_error(cfg).write(os.path.join(cfg.out_dir, "weak"))
        q_scaling(cfg).write(os.path.join(cfg.out_dir, "qscale"))


def run_cli(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"roughsde: configuration error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _run(args)
    except RegressionError as exc:
        print(f"roughsde: experiment error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DomainError) as exc:
        print(f"roughsde: configuration error: {exc}", file=sys.stderr)
        return 1
    except RoughSDEError as exc:
        print(f"roughsde: experiment error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())
