import numpy as np
import pytest

from fraceuler import _kernels_py
from fraceuler._backend import active_name, available, get_kernels


class TestBackend:
    def test_fallback_always_available(self):
        assert "python" in available()
        assert get_kernels("python") is _kernels_py

    def test_env_forces_fallback(self, monkeypatch):
        monkeypatch.setenv("FRACEULER_BACKEND", "python")
        assert active_name() == "python"
        assert get_kernels() is _kernels_py

    def test_default_prefers_compiled(self, monkeypatch):
        monkeypatch.delenv("FRACEULER_BACKEND", raising=False)
        expected = "cython" if "cython" in available() else "python"
        print(f"available: {available()}, active: {active_name()}")
        assert active_name() == expected

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_kernels("fortran")

    @pytest.mark.skipif("cython" not in available(), reason="compiled kernels not built")
    def test_kernels_bit_identical(self):
        rng = np.random.default_rng(1)
        M, m, d, n = 7, 2, 3, 40
        dB = rng.standard_normal((M, m, n)) * 0.1
        x0 = rng.standard_normal((M, d))
        A = rng.standard_normal((d, d))
        a = rng.standard_normal(d)
        S = rng.standard_normal((m, d, d)) * 0.3
        s = rng.standard_normal((m, d))
        C = np.einsum("jab,jbc->ac", S, S)
        py, cy = get_kernels("python"), get_kernels("cython")
        for corr in (0.0, 0.013):
            assert np.array_equal(py.affine_scheme(x0, dB, 0.025, A, a, S, s, corr),
                                  cy.affine_scheme(x0, dB, 0.025, A, a, S, s, corr))
            assert np.array_equal(py.linear_variational(dB, 0.025, A, S, C, corr),
                                  cy.linear_variational(dB, 0.025, A, S, C, corr))
        bi = np.cumsum(rng.standard_normal((M, 65)), axis=1)
        bj = np.cumsum(rng.standard_normal((M, 65)), axis=1)
        for trap in (True, False):
            assert np.array_equal(py.zeta_offdiag(bi, bj, 8, trap), cy.zeta_offdiag(bi, bj, 8, trap))
