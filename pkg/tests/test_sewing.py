import math

import mpmath
import numpy as np
import pytest

from roughsde.errors import DomainError
from roughsde.fbm_gen import UniformGrid, refine_subsample, sample_fbm, sample_increments
from roughsde.harness import regress_rate
from roughsde.roughpath import (
    ControlTable,
    control_omega,
    davie_remainder_table,
    level2_diagonal,
    level2_fine_approx,
    q_process,
)
from roughsde.schemes import run_modified_euler
from roughsde.sewing import hypothesis_scale, sewing_constant, verify_sewing, weighted_sum_J
from roughsde.vectorfields import get_field


def _mp_K(mu):
    mpmath.mp.dps = 30
    return float(mpmath.power(2, mu) * mpmath.zeta(mu))


class TestSewingConstant:
    def test_mu_two(self):
        assert sewing_constant(2.0) == pytest.approx(2 * math.pi**2 / 3, rel=1e-12)
        assert sewing_constant(2.0) == pytest.approx(6.5797363, abs=1e-7)

    def test_mu_three_halves(self):
        assert sewing_constant(1.5) == pytest.approx(7.3890, abs=1e-4)

    @pytest.mark.parametrize("mu", [1.0, 0.5, -2.0])
    def test_divergent(self, mu):
        with pytest.raises(DomainError):
            sewing_constant(mu)

    def test_table_against_high_precision(self):
        for mu in np.linspace(1.05, 10.0, 40):
            assert sewing_constant(mu) == pytest.approx(_mp_K(mu), rel=1e-10)


class TestWeightedSum:
    def test_constant_g(self):
        f = np.array([0.0, 1.0, -2.0, 3.0])
        assert weighted_sum_J(f, np.full(4, 5.0), 0, 3) == 0.0

    def test_constant_f(self):
        g = np.array([0.0, 1.0, -2.0, 3.0])
        assert weighted_sum_J(np.full(4, 5.0), g, 0, 3) == 0.0

    def test_identity_example(self):
        t = np.array([0.0, 0.5, 1.0])
        assert weighted_sum_J(t, t, 0, 2) == pytest.approx(0.25)

    def test_empty_range(self):
        assert weighted_sum_J(np.arange(5.0), np.arange(5.0), 2, 2) == 0.0

    def test_bad_range(self):
        with pytest.raises(DomainError):
            weighted_sum_J(np.arange(5.0), np.arange(5.0), 3, 6)

    def test_bilinear(self):
        rng = np.random.default_rng(0)
        f1, f2, g1, g2 = rng.normal(size=(4, 30))
        a, b = 1.7, -0.4
        lhs = weighted_sum_J(a * f1 + b * f2, g1, 3, 25)
        rhs = a * weighted_sum_J(f1, g1, 3, 25) + b * weighted_sum_J(f2, g1, 3, 25)
        assert lhs == pytest.approx(rhs, rel=1e-12)
        lhs = weighted_sum_J(f1, a * g1 + b * g2, 3, 25)
        rhs = a * weighted_sum_J(f1, g1, 3, 25) + b * weighted_sum_J(f1, g2, 3, 25)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    @pytest.mark.parametrize("H,pair,expected", [
        (0.4, "independent", 0.8),
        (0.5, "same", 1.0),
        (0.4, "time", 1.4),
    ])
    def test_scaling_probe(self, H, pair, expected):
        """L2 norm of J_{0,t} against t at fixed n scales like t^{alpha+beta}."""
        n, reps = 1024, 1000
        inc = sample_increments(H, UniformGrid(1.0, n), 2, seed=3, replicas=reps)
        x = np.concatenate([np.zeros((reps, 2, 1)), np.cumsum(inc, axis=-1)], axis=-1)
        f = x[:, 0]
        g = {"independent": x[:, 1], "same": x[:, 0],
             "time": np.broadcast_to(np.linspace(0, 1, n + 1), (reps, n + 1))}[pair]
        points = []
        for j in range(2, 11):
            L = 2**j
            J = np.array([weighted_sum_J(f[r], g[r], 0, L) for r in range(reps)])
            points.append((L, math.sqrt(np.mean(J**2)), 1.0))
        slope, _, _ = regress_rate(points)
        assert abs(slope - expected) <= 0.15


class TestVerifySewing:
    def test_zero_remainder(self):
        table = ControlTable(UniformGrid(1.0, 12), 2.75, lambda s, t: (t - s) / 12)
        rep = verify_sewing(np.zeros((13, 13)), table, 1.5)
        assert rep.max_ratio == 0.0 and rep.verdict == "PASS"

    def test_exact_power_of_additive_control(self):
        n, mu = 16, 1.4
        idx = np.arange(n + 1)
        w = np.clip(idx[None, :] - idx[:, None], 0, None) / n
        rep = verify_sewing(w**mu, w, mu)
        assert rep.max_ratio == pytest.approx(1.0)
        assert rep.verdict == "PASS"
        assert rep.K_mu == pytest.approx(sewing_constant(mu))

    def test_hypothesis_failure(self):
        n, mu = 8, 1.5
        idx = np.arange(n + 1)
        w = np.clip(idx[None, :] - idx[:, None], 0, None) / n
        R = w**mu
        R[2, 3] *= 3.0
        rep = verify_sewing(R, w, mu)
        assert rep.verdict == "HYPOTHESIS-FAILURE"
        assert rep.hypothesis_ratio == pytest.approx(3.0)

    def test_sampled_mode(self):
        n, mu = 600, 1.2
        idx = np.arange(n + 1)
        w = np.clip(idx[None, :] - idx[:, None], 0, None) / n
        rep = verify_sewing(0.5 * w**mu, w, mu)
        assert rep.verdict == "PASS" and rep.max_ratio == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            verify_sewing(np.zeros((5, 5)), np.zeros((4, 4)), 1.5)

    def test_csv(self, tmp_path):
        table = ControlTable(UniformGrid(1.0, 4), 2.75, lambda s, t: (t - s) / 4)
        verify_sewing(np.zeros((5, 5)), table, 2.0).to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "mu,K_mu,max_ratio,witness_s,witness_t,verdict"
        assert lines[1].endswith(",PASS")

    @pytest.mark.parametrize("name", ["sine1d", "poly2x2"])
    def test_davie_instantiations(self, name):
        vf = get_field(name)
        H, n, factor = 0.4, 32, 16
        for rep_id in range(10):
            fine = sample_fbm(H, UniformGrid(1.0, n * factor), vf.d, seed=50, replica=rep_id)
            if vf.d == 1:
                path = refine_subsample(fine, factor)
                lvl2 = level2_diagonal(path)
            else:
                path = refine_subsample(fine, factor)
                lvl2 = level2_fine_approx(fine, factor)
            traj = run_modified_euler(vf, path, np.full(vf.m, 0.3))
            omega = control_omega(lvl2, q_process(lvl2, H))
            mu = 3.0 / omega.p
            R = davie_remainder_table(traj, vf, lvl2)
            W = omega.matrix()
            c = hypothesis_scale(R, W, mu)
            report = verify_sewing(R, c * W, mu)
            assert report.hypothesis_ratio <= 1.0 + 1e-12
            assert report.verdict == "PASS", report
