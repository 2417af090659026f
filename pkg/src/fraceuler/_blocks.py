"""Block double integrals ``int_{t_k}^{t_{k+1}} (B^i_s - B^i_{t_k}) dB^j_s`` from a fine driver."""

import numpy as np

from ._backend import get_kernels
from .errors import DivisibilityError, SubgridMissingError

RULES = ("trapezoid", "left")


def coarse_n(driver, sub_factor):
    sub_factor = int(sub_factor)
    if sub_factor < 1 or driver.grid.n % sub_factor:
        raise DivisibilityError(f"sub_factor={sub_factor} does not divide n={driver.grid.n}")
    return driver.grid.n // sub_factor


def diagonal(driver, i, sub_factor):
    """Exact Hermite form ``((dB^i_k)^2 - (T/n)^{2H}) / 2``; shape ``(..., n)``."""
    n = coarse_n(driver, sub_factor)
    x = driver.values[..., i, ::sub_factor]
    inc = np.diff(x, axis=-1)
    return 0.5 * (inc * inc - (driver.grid.t_horizon / n) ** (2.0 * driver.h))


def offdiagonal(driver, i, j, sub_factor, rule="trapezoid", backend=None):
    """Subgrid Riemann-Stieltjes sums for ``i != j``; shape ``(..., n)``.

    ``"trapezoid"`` evaluates the integrand at the subinterval average, which
    removes the ``O(1/sub_factor)`` variance bias of the ``"left"`` rule.
    """
    if rule not in RULES:
        raise ValueError(f"rule must be one of {RULES}, got {rule!r}")
    if sub_factor < 2:
        raise SubgridMissingError("off-diagonal blocks need a fine subgrid (sub_factor >= 2)")
    n = coarse_n(driver, sub_factor)
    batch = driver.values.shape[:-2]
    M = int(np.prod(batch, dtype=int))
    N1 = driver.grid.n + 1
    bi = np.ascontiguousarray(driver.values[..., i, :].reshape(M, N1))
    bj = np.ascontiguousarray(driver.values[..., j, :].reshape(M, N1))
    out = get_kernels(backend).zeta_offdiag(bi, bj, int(sub_factor), rule == "trapezoid")
    return out.reshape(batch + (n,))


def block(driver, i, j, sub_factor, rule="trapezoid", backend=None):
    if i == j:
        return diagonal(driver, i, sub_factor)
    return offdiagonal(driver, i, j, sub_factor, rule, backend)
