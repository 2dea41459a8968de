import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from roughsde import fbm_gen
from roughsde.errors import DomainError, GenerationError
from roughsde.fbm_gen import (
    FbmPath,
    UniformGrid,
    check_hurst,
    cov,
    increment_autocov,
    mu_density,
    rect_cov,
    refine_subsample,
    sample_fbm,
    sample_increments,
    subsample_increments,
)


def _mp_cov(H, s, t):
    mpmath.mp.dps = 40
    h2 = 2 * mpmath.mpf(H)
    s, t = mpmath.mpf(s), mpmath.mpf(t)
    return float((s**h2 + t**h2 - abs(t - s) ** h2) / 2)


class TestHurst:
    @pytest.mark.parametrize("H", [0.35, 0.4, 0.5])
    def test_accepts_target_band(self, H):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert check_hurst(H) == H

    def test_warns_below_one_third(self):
        with pytest.warns(UserWarning):
            check_hurst(0.3)

    @pytest.mark.parametrize("H", [0.0, -0.1, 0.51, 1.0, float("nan")])
    def test_rejects_out_of_range(self, H):
        with pytest.raises(DomainError):
            check_hurst(H)


class TestUniformGrid:
    def test_endpoints_exact(self):
        g = UniformGrid(0.7, 3)
        assert g.t(0) == 0.0
        assert g.t(3) == 0.7
        assert g.points()[-1] == 0.7
        assert g.t(2) == 2 * 0.7 / 3

    def test_eta_convention(self):
        g = UniformGrid(1.0, 4)
        assert g.eta(0.0) == 0
        assert g.eta(0.25) == 1
        assert g.eta(0.3) == 1
        assert g.eta(1.0) == 3

    def test_index_of(self):
        g = UniformGrid(1.0, 8)
        assert g.index_of(0.375) == 3
        assert g.index_of(0.3) is None

    @pytest.mark.parametrize("T,n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
    def test_invalid(self, T, n):
        with pytest.raises(DomainError):
            UniformGrid(T, n)


class TestCovariance:
    def test_brownian(self):
        assert cov(0.5, 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("H", [0.2, 0.35, 0.4, 0.5])
    def test_diagonal(self, H):
        assert cov(H, 1.0, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_h04_value(self):
        expected = _mp_cov(0.4, 1, 2)
        assert cov(0.4, 1.0, 2.0) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.870551, abs=1e-6)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            cov(0.4, -1.0, 1.0)

    @given(st.floats(0.05, 0.5), st.floats(0, 10), st.floats(0, 10))
    def test_symmetric(self, H, s, t):
        assert cov(H, s, t) == cov(H, t, s)


class TestRectCov:
    @pytest.mark.parametrize("H", [0.3, 0.4, 0.5])
    def test_unit_interval(self, H):
        assert rect_cov(H, 0, 1, 0, 1) == pytest.approx(1.0, abs=1e-15)

    def test_nested_nonnegative(self):
        assert rect_cov(0.4, 0.25, 0.5, 0.0, 1.0) >= 0.0

    def test_disjoint_matches_mu_density(self):
        H = 0.4
        closed = rect_cov(H, 0.0, 1.0, 2.0, 3.0)
        assert closed < 0
        num, _ = integrate.dblquad(lambda r2, r1: mu_density(H, r1, r2), 0.0, 1.0, 2.0, 3.0,
                                   epsabs=1e-13, epsrel=1e-11)
        assert closed == pytest.approx(num, rel=1e-8)

    def test_reversed_interval(self):
        with pytest.raises(DomainError):
            rect_cov(0.4, 0.5, 0.25, 0.0, 1.0)

    def test_nested_positivity_random(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            H = rng.uniform(0.05, 0.5)
            s, t = np.sort(rng.uniform(0, 1, 2))
            u, v = np.sort(rng.uniform(s, t, 2))
            assert rect_cov(H, u, v, s, t) >= -1e-15

    def test_disjoint_negativity_random(self):
        rng = np.random.default_rng(12)
        for _ in range(500):
            H = rng.uniform(0.05, 0.49)
            u, v, s, t = np.sort(rng.uniform(0, 1, 4))
            if v - u < 1e-6 or t - s < 1e-6:
                continue
            assert rect_cov(H, u, v, s, t) < 0

    @given(st.floats(0.05, 0.5), st.floats(0, 5), st.floats(1e-6, 5))
    def test_self_covariance(self, H, u, length):
        v = u + length
        assert rect_cov(H, u, v, u, v) == pytest.approx((v - u) ** (2 * H), rel=1e-12)

    def test_increment_autocov(self):
        c = increment_autocov(0.4, 0.1, 5)
        for k in range(6):
            assert c[k] == pytest.approx(rect_cov(0.4, 0, 0.1, 0.1 * k, 0.1 * (k + 1)), rel=1e-10, abs=1e-15)


class TestSampling:
    def test_starts_at_zero(self):
        path = sample_fbm(0.4, UniformGrid(1.0, 64), d=3, seed=5)
        assert np.all(path.values[:, 0] == 0.0)
        assert path.values.shape == (3, 65)

    def test_read_only(self):
        path = sample_fbm(0.4, UniformGrid(1.0, 8), seed=1)
        with pytest.raises(ValueError):
            path.values[0, 1] = 1.0

    def test_batched_normals_match_replica_streams(self):
        replicas = [0, 3, 2**40, 7]
        z = fbm_gen._normals(5, replicas, 3, 64)
        for r_i, r in enumerate(replicas):
            for i in range(3):
                assert np.array_equal(z[r_i, i], fbm_gen.replica_generator(5, r, i).standard_normal(64))

    def test_brownian_increment_variance(self):
        grid = UniformGrid(1.0, 1024)
        inc = sample_increments(0.5, grid, 1, seed=3, replicas=10_000)
        x = inc[:, 0, 7]
        var = x.var(ddof=1)
        se = math.sqrt((np.mean((x - x.mean()) ** 4) - var**2) / x.size)
        assert abs(var - grid.delta) <= 4 * se

    def test_terminal_covariance(self):
        grid = UniformGrid(1.0, 64)
        inc = sample_increments(0.4, grid, 1, seed=4, replicas=10_000)
        values = np.cumsum(inc[:, 0], axis=-1)
        a, b = values[:, 31], values[:, 63]
        prod = a * b
        se = prod.std(ddof=1) / math.sqrt(prod.size)
        assert abs(prod.mean() - cov(0.4, 0.5, 1.0)) <= 4 * se

    @pytest.mark.parametrize("H", [0.35, 0.5])
    def test_covariance_matrix(self, H):
        grid = UniformGrid(1.0, 8)
        inc = sample_increments(H, grid, 1, seed=9, replicas=10_000)[:, 0]
        x = np.cumsum(inc, axis=-1)
        t = grid.points()[1:]
        exact = np.array([[cov(H, s, u) for u in t] for s in t])
        prods = x[:, :, None] * x[:, None, :]
        emp = prods.mean(axis=0)
        se = prods.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
        assert np.max(np.abs(emp - exact) / se) <= 5

    def test_coordinates_independent(self):
        inc = sample_increments(0.4, UniformGrid(1.0, 16), 2, seed=1, replicas=10_000)
        x, y = inc[:, 0].sum(axis=-1), inc[:, 1].sum(axis=-1)
        prod = x * y
        assert abs(prod.mean()) <= 4 * prod.std(ddof=1) / math.sqrt(prod.size)

    def test_deterministic(self):
        grid = UniformGrid(1.0, 128)
        a = sample_fbm(0.4, grid, 2, seed=17, replica=3)
        b = sample_fbm(0.4, grid, 2, seed=17, replica=3)
        c = sample_fbm(0.4, grid, 2, seed=18, replica=3)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_batch_independent_of_chunking(self):
        grid = UniformGrid(1.0, 32)
        full = sample_increments(0.4, grid, 2, seed=2, replicas=10)
        part = sample_increments(0.4, grid, 2, seed=2, replicas=range(6, 10))
        assert np.array_equal(full[6:], part)
        single = sample_fbm(0.4, grid, 2, seed=2, replica=7)
        assert np.array_equal(single.increments, np.diff(np.concatenate(
            [np.zeros((2, 1)), np.cumsum(full[7], axis=-1)], axis=1), axis=1))

    def test_cholesky_fallback(self, monkeypatch):
        grid = UniformGrid(1.0, 8)
        monkeypatch.setattr(fbm_gen, "EIG_TOL", -1.0)
        fbm_gen._embedding.cache_clear()
        try:
            assert fbm_gen._embedding(0.4, grid.delta, grid.n)[0] == "cholesky"
            inc = sample_increments(0.4, grid, 1, seed=6, replicas=10_000)[:, 0]
        finally:
            fbm_gen._embedding.cache_clear()
        c = increment_autocov(0.4, grid.delta, grid.n)
        prod = inc[:, 0] * inc[:, 2]
        assert abs(prod.mean() - c[2]) <= 4 * prod.std(ddof=1) / math.sqrt(prod.size)

    def test_generation_error(self, monkeypatch):
        monkeypatch.setattr(fbm_gen, "EIG_TOL", -1.0)
        monkeypatch.setattr(fbm_gen, "increment_autocov", lambda H, delta, n: -np.ones(n + 1))
        fbm_gen._embedding.cache_clear()
        try:
            with pytest.raises(GenerationError, match="Cholesky"):
                fbm_gen._embedding(0.4, 0.125, 8)
        finally:
            fbm_gen._embedding.cache_clear()


class TestRefineSubsample:
    @pytest.fixture
    def fine(self):
        return sample_fbm(0.4, UniformGrid(1.0, 64), 2, seed=8)

    def test_identity(self, fine):
        assert np.array_equal(refine_subsample(fine, 1).values, fine.values)

    def test_endpoints(self, fine):
        coarse = refine_subsample(fine, 64)
        assert coarse.grid.n == 1
        assert np.array_equal(coarse.values, fine.values[:, [0, 64]])

    @pytest.mark.parametrize("factor", [2, 4, 16])
    def test_telescoping(self, fine, factor):
        coarse = refine_subsample(fine, factor)
        sums = fine.increments.reshape(2, -1, factor).sum(axis=-1)
        np.testing.assert_allclose(coarse.increments, sums, rtol=0, atol=1e-14)

    def test_non_divisible(self, fine):
        with pytest.raises(DomainError):
            refine_subsample(fine, 3)

    def test_batch_version(self):
        inc = sample_increments(0.4, UniformGrid(1.0, 32), 1, seed=1, replicas=3)
        sub = subsample_increments(inc, 4)
        assert sub.shape == (3, 1, 8)
        np.testing.assert_allclose(sub, inc.reshape(3, 1, 8, 4).sum(axis=-1), atol=1e-14)
        assert subsample_increments(inc, 1) is inc


class TestCsv:
    def test_round_trip(self, tmp_path):
        path = sample_fbm(0.4, UniformGrid(1.0, 16), 2, seed=1)
        out = tmp_path / "path.csv"
        path.to_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0] == "t,x1,x2"
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert data.shape == (17, 3)
        assert np.array_equal(data[:, 1:].T, path.values)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            FbmPath(UniformGrid(1.0, 4), 0.4, np.zeros((1, 4)))
