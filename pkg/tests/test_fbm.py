import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fraceuler.errors import DivisibilityError, DomainError
from fraceuler.fbm import (FbmPath, HurstParam, UniformGrid, coarsen, fbm_covariance,
                           increment_correlation, path_seed, read_fbm_binary, sample_fbm_batch,
                           sample_fbm_cholesky, sample_fbm_circulant, write_fbm_binary)

from conftest import SEED

hs = st.floats(min_value=0.5001, max_value=0.9999)


class TestHurst:
    def test_domain(self):
        for bad in (0.5, 0.4, 1.0, 1.2):
            with pytest.raises(DomainError, match=r"h out of \(0.5,1\)"):
                HurstParam(bad)

    def test_alpha(self):
        assert HurstParam(0.75).alpha == pytest.approx(0.375)


class TestCovariance:
    def test_unit_variance(self):
        assert fbm_covariance(1.0, 1.0, 0.7) == pytest.approx(1.0, abs=1e-15)

    @given(t=st.floats(0, 10), h=hs)
    def test_zero_time(self, t, h):
        assert fbm_covariance(t, 0.0, h) == 0.0

    def test_known_value(self):
        assert fbm_covariance(2.0, 1.0, 0.7) == pytest.approx(2 ** 0.4, rel=1e-14)
        assert 2 ** 0.4 == pytest.approx(1.31951, abs=1e-5)


class TestIncrementCorrelation:
    def test_lag_zero(self):
        for h in (0.51, 0.7, 0.95):
            assert increment_correlation(0, h) == 1.0

    def test_three_quarters_lag_one(self):
        assert increment_correlation(1, 0.75) == pytest.approx((2 ** 1.5 - 2) / 2, rel=1e-14)

    def test_far_lag_asymptotic(self):
        exact = increment_correlation(10 ** 4, 0.6)
        approx = 0.12 * 10 ** -3.2
        print(f"rho(1e4) = {exact:.10e}, asymptotic = {approx:.10e}")
        assert abs(exact / approx - 1) < 0.01

    @given(p=st.integers(-10 ** 6, 10 ** 6), h=hs)
    def test_symmetric(self, p, h):
        assert increment_correlation(p, h) == increment_correlation(-p, h)

    @settings(max_examples=50)
    @given(h=hs)
    def test_nonnegative_up_to_a_million(self, h):
        p = np.unique(np.concatenate([np.arange(0, 2000), np.geomspace(2000, 1e6, 2000).astype(int)]))
        rho = increment_correlation(p, h)
        assert np.all(rho >= 0)


class TestCholesky:
    def test_one_step_variance(self):
        drv = sample_fbm_batch(UniformGrid(1), 0.8, 1, SEED, 100_000, method="cholesky")
        x = drv.increments[:, 0, 0]
        se = math.sqrt(2 / (x.size - 1))
        print(f"var = {x.var(ddof=1):.5f}, se = {se:.5f}")
        assert abs(x.var(ddof=1) - 1) < 3 * se

    def test_deterministic(self):
        g = UniformGrid(64)
        a = sample_fbm_cholesky(g, 0.7, 2, 11)
        b = sample_fbm_cholesky(g, 0.7, 2, 11)
        assert np.array_equal(a.values, b.values)

    def test_cap(self):
        with pytest.raises(ValueError):
            sample_fbm_cholesky(UniformGrid(64), 0.7, 1, 0, cap=32)

    def test_covariance_256(self):
        n, P = 256, 10_000
        drv = sample_fbm_batch(UniformGrid(n), 0.7, 2, SEED, P, method="cholesky")
        B1, B2 = drv.values[:, 0], drv.values[:, 1]
        idx = np.array([16, 64, 128, 200, 256])
        t = idx / n
        worst = 0.0
        for a in idx:
            for b in idx:
                prod = B1[:, a] * B1[:, b]
                z = (prod.mean() - fbm_covariance(a / n, b / n, 0.7)) / (prod.std(ddof=1) / math.sqrt(P))
                worst = max(worst, abs(z))
        cross = B1[:, -1] * B2[:, -1]
        zc = cross.mean() / (cross.std(ddof=1) / math.sqrt(P))
        ks = stats.kstest(B1[:, -1], "norm").pvalue
        print(f"max |z| auto = {worst:.2f}, cross z = {zc:.2f}, KS p(B_T) = {ks:.3f}, t = {t}")
        assert worst < 4
        assert abs(zc) < 4
        assert ks > 0.01


class TestCirculant:
    def test_deterministic(self):
        g = UniformGrid(1000)
        a = sample_fbm_circulant(g, 0.6, 3, 5)
        b = sample_fbm_circulant(g, 0.6, 3, 5)
        assert np.array_equal(a.values, b.values)

    def test_lag_correlations(self):
        n, P, h = 2 ** 14, 10_000, 0.55
        g = UniformGrid(n)
        lags = np.arange(9)
        sums = np.zeros((len(lags),))
        sq = np.zeros((len(lags),))
        for start in range(0, P, 500):
            inc = sample_fbm_batch(g, h, 1, SEED, 500, start=start).increments[:, 0] * n ** h
            for a, p in enumerate(lags):
                # per-path average over positions, one sample per path
                v = np.mean(inc[:, : n - p] * inc[:, p:], axis=1)
                sums[a] += v.sum()
                sq[a] += (v * v).sum()
        mean = sums / P
        se = np.sqrt((sq / P - mean ** 2) / (P - 1))
        target = increment_correlation(lags, h)
        z = (mean - target) / se
        print("lag  empirical  target  z")
        for p, e, t_, zz in zip(lags, mean, target, z):
            print(f"{p:3d}  {e:.6f}  {t_:.6f}  {zz:+.2f}")
        assert np.all(np.abs(z) < 3)

    def test_agrees_with_cholesky(self):
        g = UniformGrid(256)
        a = sample_fbm_batch(g, 0.7, 1, SEED, 10_000, method="cholesky").values[:, 0, -1]
        b = sample_fbm_batch(g, 0.7, 1, SEED + 1, 10_000).values[:, 0, -1]
        res = stats.ks_2samp(a, b)
        print(f"KS statistic {res.statistic:.4f}, p = {res.pvalue:.3f}")
        assert res.pvalue > 0.01


class TestBatch:
    def test_matches_single_path(self):
        g = UniformGrid(128)
        batch = sample_fbm_batch(g, 0.65, 2, 3, 6, start=4)
        for i in range(6):
            single = sample_fbm_circulant(g, 0.65, 2, path_seed(3, 4 + i))
            assert np.array_equal(batch.values[i], single.values)

    @pytest.mark.parametrize("method", ["circulant", "cholesky"])
    def test_thread_count_independent(self, method):
        g = UniformGrid(200)
        ref = sample_fbm_batch(g, 0.7, 2, 9, 300, method=method, threads=1, chunk_size=32)
        for threads in (2, 5):
            other = sample_fbm_batch(g, 0.7, 2, 9, 300, method=method, threads=threads, chunk_size=32)
            assert np.array_equal(ref.values, other.values)

    def test_starts_at_zero(self):
        drv = sample_fbm_batch(UniformGrid(50), 0.9, 3, 1, 40)
        assert np.all(drv.values[..., 0] == 0.0)

    def test_read_only(self):
        drv = sample_fbm_batch(UniformGrid(8), 0.7, 1, 1, 2)
        with pytest.raises(ValueError):
            drv.values[0, 0, 1] = 1.0

    def test_increment_covariance_matrix(self):
        n, P, h = 64, 100_000, 0.7
        inc = sample_fbm_batch(UniformGrid(n), h, 1, SEED, P).increments[:, 0] * n ** h
        emp = inc.T @ inc / P
        lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        target = increment_correlation(lag, h)
        # SE of a product mean of jointly Gaussian unit variables: sqrt((1 + rho^2)/P)
        se = np.sqrt((1 + target ** 2) / P)
        z = np.abs(emp - target) / se
        print(f"max |z| over {n * n} entries = {z.max():.2f}")
        assert z.max() < 4


class TestCoarsen:
    def _path(self, n=16):
        return sample_fbm_circulant(UniformGrid(n), 0.7, 2, 1)

    def test_identity(self):
        p = self._path()
        assert np.array_equal(coarsen(p, 1).values, p.values)

    def test_telescoping(self):
        p = self._path(4)
        c = coarsen(p, 2)
        assert c.increments[0, 0] == pytest.approx(p.increments[0, 0] + p.increments[0, 1], abs=1e-15)

    @given(a=st.sampled_from([1, 2, 4, 8]), b=st.sampled_from([1, 2, 4]))
    def test_composition(self, a, b):
        p = self._path(64)
        assert np.array_equal(coarsen(coarsen(p, a), b).values, coarsen(p, a * b).values)

    def test_shared_nodes(self):
        p = self._path(64)
        c = coarsen(p, 8)
        assert np.array_equal(c.values, p.values[:, ::8])

    def test_divisibility(self):
        with pytest.raises(DivisibilityError):
            coarsen(self._path(16), 3)


class TestBinaryDump:
    def test_round_trip(self, tmp_path):
        p = sample_fbm_circulant(UniformGrid(33, 2.0), 0.8, 3, 2 ** 63 + 5)
        f = tmp_path / "p.bin"
        write_fbm_binary(p, f)
        q = read_fbm_binary(f)
        assert isinstance(q, FbmPath)
        assert np.array_equal(q.values, p.values)
        assert (q.grid, q.h, q.seed_tag) == (p.grid, p.h, p.seed_tag)

    def test_bad_magic(self, tmp_path):
        f = tmp_path / "bad.bin"
        f.write_bytes(b"XXXX" + bytes(60))
        with pytest.raises(ValueError):
            read_fbm_binary(f)
