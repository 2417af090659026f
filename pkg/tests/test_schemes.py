import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraceuler._backend import available
from fraceuler.errors import (ConsistencyError, DimensionMismatchError, DivisibilityError,
                              OracleUnavailableError, SingularMatrixError)
from fraceuler.fbm import FbmPath, UniformGrid, coarsen, sample_fbm_batch, sample_fbm_circulant
from fraceuler.schemes import (CoefficientSystem, Scheme, bounded_1d, check_consistency,
                               exact_geometric, geometric, linear_2d, linear_system,
                               modified_euler, naive_euler, reference_solution, solve_variational,
                               zero_noise)

from conftest import SEED

BACKENDS = available() + ["generic"]


def one_step(h, db):
    return FbmPath(UniformGrid(1), h, np.array([[0.0, db]]))


def constant_drift(c):
    zero = np.zeros((1, 1))
    return linear_system(np.zeros((1, 1)), np.array([c]), np.zeros((1, 1, 1)), zero, name="drift")


def nonlinear_system():
    """Non-affine 2-d system driven by two noises, exercising the generic loop."""
    def b(x):
        return np.stack([np.sin(x[..., 1]), -0.5 * x[..., 0]], axis=-1)

    def sigma(x):
        s = np.empty(x.shape[:-1] + (2, 2))
        s[..., 0, 0] = 0.3 * np.cos(x[..., 0])
        s[..., 1, 0] = 0.1
        s[..., 0, 1] = 0.0
        s[..., 1, 1] = 0.2 * np.tanh(x[..., 1])
        return s

    def grad_b(x):
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 1] = np.cos(x[..., 1])
        g[..., 1, 0] = -0.5
        return g

    def grad_sigma(x, j):
        g = np.zeros(x.shape[:-1] + (2, 2))
        if j == 0:
            g[..., 0, 0] = -0.3 * np.sin(x[..., 0])
        else:
            g[..., 1, 1] = 0.2 / np.cosh(x[..., 1]) ** 2
        return g

    def grad_sigma_sigma(x, j):
        return np.einsum("...ik,...k->...i", grad_sigma(x, j), sigma(x)[..., :, j])

    return CoefficientSystem(2, 2, b, sigma, grad_b, grad_sigma, grad_sigma_sigma, 3, "nonlinear")


class TestConsistency:
    @pytest.mark.parametrize("factory", [geometric, linear_2d, bounded_1d, zero_noise, nonlinear_system])
    def test_builtin_systems(self, factory):
        assert check_consistency(factory())

    def test_detects_bad_gradient(self):
        s = geometric()
        bad = CoefficientSystem(1, 1, s.b, s.sigma, s.grad_b, lambda x, j: 2 * np.ones(x.shape + (1,)),
                                s.grad_sigma_sigma, 3, "bad")
        with pytest.raises(ConsistencyError):
            check_consistency(bad)


class TestNaiveEuler:
    def test_constant_drift_exact(self):
        drv = sample_fbm_circulant(UniformGrid(37), 0.7, 1, 0)
        out = naive_euler(constant_drift(2.5), drv, [0.0])
        assert out.states[-1, 0] == pytest.approx(2.5, rel=1e-13)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_one_step(self, backend):
        out = naive_euler(geometric(), one_step(0.6, 0.2), [1.0], backend=backend)
        assert out.states[-1, 0] == pytest.approx(1.2, abs=1e-15)
        assert out.states[0, 0] == 1.0
        assert out.scheme is Scheme.NAIVE

    def test_dimension_mismatch(self):
        drv = sample_fbm_circulant(UniformGrid(8), 0.7, 1, 0)
        with pytest.raises(DimensionMismatchError):
            naive_euler(linear_2d(), drv, [1.0, 1.0])
        drv2 = sample_fbm_circulant(UniformGrid(8), 0.7, 2, 0)
        with pytest.raises(DimensionMismatchError):
            naive_euler(linear_2d(), drv2, [1.0])


class TestModifiedEuler:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_one_step(self, backend):
        out = modified_euler(geometric(), one_step(0.6, 0.2), [1.0], backend=backend)
        assert out.states[-1, 0] == pytest.approx(1.7, abs=1e-15)

    def test_vanishing_correction_is_bit_identical(self):
        drv = sample_fbm_batch(UniformGrid(64), 0.7, 1, 3, 10)
        for s in (constant_drift(1.0), zero_noise()):
            a = naive_euler(s, drv, [0.3]).states
            b = modified_euler(s, drv, [0.3]).states
            assert np.array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(x0=st.lists(st.floats(-3, 3), min_size=2, max_size=2), h=st.floats(0.51, 0.99),
           n=st.integers(1, 64))
    def test_first_step_difference(self, x0, h, n):
        for s in (linear_2d(), nonlinear_system()):
            drv = sample_fbm_circulant(UniformGrid(n), h, 2, 1)
            a = naive_euler(s, drv, x0).states[1]
            b = modified_euler(s, drv, x0).states[1]
            x = np.asarray(x0)
            corr = 0.5 * (1.0 / n) ** (2 * h) * (s.grad_sigma_sigma(x, 0) + s.grad_sigma_sigma(x, 1))
            assert np.allclose(b - a, corr, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("system", [geometric(), linear_2d()], ids=["geometric", "linear_2d"])
    def test_backends_agree(self, system):
        drv = sample_fbm_batch(UniformGrid(128), 0.65, system.m, 7, 20)
        x0 = np.ones(system.d)
        outs = [modified_euler(system, drv, x0, backend=b).states for b in BACKENDS]
        compiled = [o for b, o in zip(BACKENDS, outs) if b != "generic"]
        for o in compiled[1:]:
            assert np.array_equal(o, compiled[0])
        assert np.allclose(outs[-1], outs[0], rtol=1e-12, atol=1e-12)

    def test_thread_count_and_rerun(self):
        g = UniformGrid(256)
        a = sample_fbm_batch(g, 0.7, 2, 5, 64, threads=1)
        b = sample_fbm_batch(g, 0.7, 2, 5, 64, threads=4)
        s = linear_2d()
        assert np.array_equal(modified_euler(s, a, [1, 1]).states, modified_euler(s, b, [1, 1]).states)

    def test_positivity_when_multipliers_positive(self):
        drv = sample_fbm_batch(UniformGrid(64), 0.7, 1, SEED, 200)
        out = modified_euler(geometric(), drv, [1.0]).states[..., 0]
        mult = 1 + drv.increments[:, 0] + 0.5 * (1 / 64) ** 1.4
        ok = np.all(mult > 0, axis=-1)
        print(f"{ok.sum()} of {ok.size} paths have positive multipliers")
        assert ok.sum() > 0
        assert np.all(out[ok] > 0)


class TestExactGeometric:
    def test_zero_driver(self):
        drv = FbmPath(UniformGrid(5), 0.7, np.zeros((1, 6)))
        assert np.all(exact_geometric(drv, 2.0).states == 2.0)

    def test_value(self):
        out = exact_geometric(one_step(0.7, 0.2), 1.0)
        assert out.states[-1, 0] == pytest.approx(math.exp(0.2), rel=1e-15)
        assert math.exp(0.2) == pytest.approx(1.221403, abs=1e-6)

    def test_positive(self):
        drv = sample_fbm_batch(UniformGrid(100), 0.6, 1, 1, 50)
        assert np.all(exact_geometric(drv, 0.1).states > 0)

    @given(a=st.floats(0.1, 10), b=st.floats(0.1, 10))
    def test_multiplicative(self, a, b):
        drv = sample_fbm_circulant(UniformGrid(16), 0.7, 1, 2)
        assert np.allclose(exact_geometric(drv, a * b).states, a * exact_geometric(drv, b).states,
                           rtol=1e-14)

    def test_unavailable_oracle(self):
        from fraceuler.schemes import exact_solution
        drv = sample_fbm_circulant(UniformGrid(8), 0.7, 2, 0)
        with pytest.raises(OracleUnavailableError):
            exact_solution(linear_2d(), drv, [1, 1])


class TestVariational:
    def test_identity_when_flat(self):
        s = constant_drift(1.0)
        drv = sample_fbm_batch(UniformGrid(32), 0.7, 1, 0, 3)
        x = naive_euler(s, drv, [0.0])
        v = solve_variational(s, drv, x)
        assert np.all(v.lam == 1.0) and np.all(v.gamma == 1.0)

    @pytest.mark.parametrize("scheme", ["naive", "modified"])
    @pytest.mark.parametrize("factory", [geometric, linear_2d, nonlinear_system])
    def test_inverse(self, scheme, factory):
        s = factory()
        drv = sample_fbm_batch(UniformGrid(256), 0.7, s.m, SEED, 50)
        x = modified_euler(s, drv, np.ones(s.d))
        v = solve_variational(s, drv, x, scheme=scheme)
        res = v.inversion_residual()
        print(f"{s.name}/{scheme}: max |Lambda Gamma - I| = {res:.2e}")
        assert res < 1e-8
        assert np.array_equal(v.lam[..., 0, :, :], np.broadcast_to(np.eye(s.d), v.lam[..., 0, :, :].shape))

    def test_geometric_flow_tracks_exponential(self):
        n = 2 ** 12
        drv = sample_fbm_batch(UniformGrid(n), 0.7, 1, SEED, 1000)
        x = exact_geometric(drv, 1.0)
        lam = solve_variational(geometric(), drv, x).lam[..., 0, 0]
        rel = np.max(np.abs(lam / np.exp(drv.values[:, 0]) - 1), axis=-1)
        frac = np.mean(rel < 0.02)
        print(f"fraction of paths with max relative error < 2%: {frac:.3f}")
        assert frac >= 0.95

    def test_backends_agree(self):
        s = linear_2d()
        drv = sample_fbm_batch(UniformGrid(64), 0.7, 2, 1, 8)
        x = naive_euler(s, drv, [1, 1])
        lams = [solve_variational(s, drv, x, backend=b, scheme="modified").lam for b in BACKENDS]
        assert np.allclose(lams[-1], lams[0], rtol=1e-12, atol=1e-13)

    def test_singular(self):
        drv = one_step(0.7, -1.0)
        x = naive_euler(geometric(), drv, [1.0])
        with pytest.raises(SingularMatrixError):
            solve_variational(geometric(), drv, x)

    def test_grid_mismatch(self):
        s = geometric()
        drv = sample_fbm_circulant(UniformGrid(8), 0.7, 1, 0)
        x = naive_euler(s, coarsen(drv, 2), [1.0])
        with pytest.raises(DimensionMismatchError):
            solve_variational(s, drv, x)


class TestReference:
    def test_factor_one(self):
        drv = sample_fbm_batch(UniformGrid(32), 0.7, 1, 0, 4)
        ref = reference_solution(geometric(), drv, [1.0], 32)
        assert np.array_equal(ref.states, modified_euler(geometric(), drv, [1.0]).states)
        assert ref.scheme is Scheme.FINE_REFERENCE

    def test_divisibility(self):
        drv = sample_fbm_batch(UniformGrid(32), 0.7, 1, 0, 1)
        with pytest.raises(DivisibilityError):
            reference_solution(geometric(), drv, [1.0], 5)

    def test_converges_to_exact_monotonically(self):
        coarse, h = 16, 0.7
        fine = coarse * 256
        drv = sample_fbm_batch(UniformGrid(fine), h, 1, SEED, 500)
        exact = exact_geometric(drv, 1.0).states[:, ::256, 0]
        gaps = []
        for factor in (4, 8, 16, 32, 64):
            sub = coarsen(drv, 256 // factor)
            ref = reference_solution(geometric(), sub, [1.0], coarse).states[..., 0]
            gaps.append(float(np.sqrt(np.mean((ref - exact) ** 2))))
        band = (coarse * 64) ** -(2 * h - 0.5)
        print("L2 gaps by factor:", ", ".join(f"{g:.3e}" for g in gaps), f"band {band:.3e}")
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 3 * band
