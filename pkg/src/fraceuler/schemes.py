"""Naive and modified Euler schemes, the Jacobian flow, and closed-form oracles.

Coefficient callables act on the trailing axis and broadcast over any leading
batch axes: ``b(x)`` maps ``(..., d)`` to ``(..., d)``, ``sigma(x)`` to
``(..., d, m)`` (column ``j`` is ``sigma^j``), ``grad_b(x)`` to ``(..., d, d)``,
``grad_sigma(x, j)`` to ``(..., d, d)`` and ``grad_sigma_sigma(x, j)`` to
``(..., d)``.
"""

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._backend import get_kernels
from .errors import (ConsistencyError, DimensionMismatchError, DivisibilityError,
                     OracleUnavailableError, SingularMatrixError)
from .fbm import UniformGrid, coarsen

COND_LIMIT = 1e12


class Scheme(enum.Enum):
    NAIVE = "naive"
    MODIFIED = "modified"
    EXACT_ORACLE = "exact"
    FINE_REFERENCE = "fine_reference"


@dataclass(frozen=True)
class LinearCoefficients:
    """``b(x) = A x + a`` and ``sigma^j(x) = S[j] x + s[j]``."""

    A: np.ndarray
    a: np.ndarray
    S: np.ndarray
    s: np.ndarray


@dataclass(frozen=True, eq=False)
class CoefficientSystem:
    d: int
    m: int
    b: Callable
    sigma: Callable
    grad_b: Callable
    grad_sigma: Callable
    grad_sigma_sigma: Callable
    smoothness: str = "C^inf_b"
    name: str = "custom"
    linear: Optional[LinearCoefficients] = None
    exact: Optional[Callable] = field(default=None, repr=False)


def linear_system(A, a, S, s, name="linear", exact=None):
    """Affine coefficients; also enables the compiled fast path."""
    A = np.ascontiguousarray(A, dtype=float)
    a = np.ascontiguousarray(a, dtype=float)
    S = np.ascontiguousarray(S, dtype=float)
    s = np.ascontiguousarray(s, dtype=float)
    d = A.shape[0]
    m = S.shape[0]
    if A.shape != (d, d) or a.shape != (d,) or S.shape != (m, d, d) or s.shape != (m, d):
        raise DimensionMismatchError(
            f"inconsistent shapes A{A.shape} a{a.shape} S{S.shape} s{s.shape}")

    def b(x):
        return np.asarray(x) @ A.T + a

    def sigma(x):
        return np.einsum("jil,...l->...ij", S, np.asarray(x)) + s.T

    def grad_b(x):
        return np.broadcast_to(A, np.shape(x)[:-1] + (d, d))

    def grad_sigma(x, j):
        return np.broadcast_to(S[j], np.shape(x)[:-1] + (d, d))

    def grad_sigma_sigma(x, j):
        col = np.asarray(x) @ S[j].T + s[j]
        return col @ S[j].T

    return CoefficientSystem(d, m, b, sigma, grad_b, grad_sigma, grad_sigma_sigma,
                             name=name, linear=LinearCoefficients(A, a, S, s), exact=exact)


def geometric():
    """``dX = X dB`` in one dimension; solved exactly by ``x0 exp(B_t)``."""
    return linear_system([[0.0]], [0.0], [[[1.0]]], [[0.0]], name="geometric",
                         exact=lambda driver, x0: exact_geometric(driver, x0).states)


def linear_2d():
    """A two-dimensional affine system with two drivers and non-commuting ``S_j``."""
    A = [[-0.5, 0.2], [0.1, -0.3]]
    a = [0.1, 0.0]
    S = [[[0.3, 0.0], [0.1, 0.2]], [[0.0, 0.2], [-0.1, 0.3]]]
    s = [[0.1, 0.0], [0.0, 0.1]]
    return linear_system(A, a, S, s, name="linear_2d")


def bounded_1d():
    """``b = cos(x)/2``, ``sigma = 1 + 0.3 sin x``: smooth, bounded, non-linear."""

    def b(x):
        return 0.5 * np.cos(x)

    def sigma(x):
        return (1.0 + 0.3 * np.sin(x))[..., None]

    def grad_b(x):
        return (-0.5 * np.sin(x))[..., None]

    def grad_sigma(x, j):
        return (0.3 * np.cos(x))[..., None]

    def grad_sigma_sigma(x, j):
        return 0.3 * np.cos(x) * (1.0 + 0.3 * np.sin(x))

    return CoefficientSystem(1, 1, b, sigma, grad_b, grad_sigma, grad_sigma_sigma,
                             name="bounded_1d")


def _gd(u):
    return 2.0 * np.arctan(np.tanh(0.5 * u))


def _gd_inv(x):
    return 2.0 * np.arctanh(np.tan(0.5 * x))


def zero_noise():
    """Deterministic ODE ``x' = cos x`` with ``x(t) = gd(t + gd^{-1}(x0))``."""

    def exact(driver, x0):
        x0 = np.asarray(x0, dtype=float)
        t = driver.grid.nodes
        batch = driver.values.shape[:-2]
        u = _gd_inv(x0[..., 0])[..., None] + t
        return np.broadcast_to(_gd(u)[..., None], batch + (t.size, 1)).copy()

    def b(x):
        return np.cos(x)

    def sigma(x):
        return np.zeros(np.shape(x) + (1,))

    def grad_b(x):
        return (-np.sin(x))[..., None]

    def grad_sigma(x, j):
        return np.zeros(np.shape(x) + (1,))

    def grad_sigma_sigma(x, j):
        return np.zeros(np.shape(x))

    return CoefficientSystem(1, 1, b, sigma, grad_b, grad_sigma, grad_sigma_sigma,
                             name="zero_noise", exact=exact)


SYSTEMS = {
    "geometric": geometric,
    "linear_2d": linear_2d,
    "bounded_1d": bounded_1d,
    "zero_noise": zero_noise,
}


def get_system(name):
    try:
        return SYSTEMS[name]()
    except KeyError:
        raise ValueError(f"unknown system {name!r}; known: {sorted(SYSTEMS)}") from None


def check_consistency(system, n_probes=16, seed=0, scale=1.0, fd_step=1e-6):
    """Cross-check derivative fields against ``sigma`` and central differences.

    Raises ``ConsistencyError`` if ``grad_sigma_sigma`` deviates from
    ``grad_sigma @ sigma`` by more than 1e-10 or a gradient misses its central
    difference by more than 1e-5.
    """
    rs = np.random.default_rng(seed)
    d, m = system.d, system.m
    for x in scale * rs.standard_normal((n_probes, d)):
        sig = system.sigma(x)
        if sig.shape != (d, m):
            raise DimensionMismatchError(f"sigma returned {sig.shape}, expected {(d, m)}")
        for j in range(m):
            direct = system.grad_sigma(x, j) @ sig[:, j]
            gss = system.grad_sigma_sigma(x, j)
            if np.max(np.abs(direct - gss)) > 1e-10:
                raise ConsistencyError(f"grad_sigma_sigma inconsistent at x={x}, j={j}")
        fd_b = np.empty((d, d))
        fd_s = np.empty((m, d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = fd_step
            fd_b[:, k] = (system.b(x + e) - system.b(x - e)) / (2 * fd_step)
            fd_s[:, :, k] = ((system.sigma(x + e) - system.sigma(x - e)) / (2 * fd_step)).T
        if np.max(np.abs(fd_b - system.grad_b(x))) > 1e-5:
            raise ConsistencyError(f"grad_b disagrees with finite differences at x={x}")
        for j in range(m):
            if np.max(np.abs(fd_s[j] - system.grad_sigma(x, j))) > 1e-5:
                raise ConsistencyError(f"grad_sigma[{j}] disagrees with finite differences at x={x}")
    return True


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """Scheme output at grid nodes; ``states`` has shape ``(..., n+1, d)``."""

    grid: UniformGrid
    states: np.ndarray
    scheme: Scheme
    h: Optional[float] = None

    def __post_init__(self):
        s = np.ascontiguousarray(self.states, dtype=float)
        s.flags.writeable = False
        object.__setattr__(self, "states", s)

    @property
    def d(self):
        return self.states.shape[-1]

    @property
    def terminal(self):
        return self.states[..., -1, :]


@dataclass(frozen=True, eq=False)
class VariationalPair:
    """Jacobian flow ``lam`` and its inverse ``gamma``, each ``(..., n+1, d, d)``."""

    lam: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("lam", "gamma"):
            v = np.ascontiguousarray(getattr(self, name), dtype=float)
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    def inversion_residual(self):
        d = self.lam.shape[-1]
        return float(np.max(np.abs(self.lam @ self.gamma - np.eye(d))))


def _prepare(system, driver, x0):
    if driver.m != system.m:
        raise DimensionMismatchError(f"driver has m={driver.m}, system expects m={system.m}")
    batch = driver.values.shape[:-2]
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        x0 = x0[None]
    if x0.shape[-1] != system.d:
        raise DimensionMismatchError(f"x0 has dimension {x0.shape[-1]}, system expects d={system.d}")
    x0 = np.broadcast_to(x0, batch + (system.d,))
    return batch, x0


def _run(system, driver, x0, corr, backend):
    batch, x0 = _prepare(system, driver, x0)
    n = driver.grid.n
    dt = driver.grid.step
    dB = driver.increments
    if system.linear is not None and backend != "generic":
        lin = system.linear
        kern = get_kernels(backend)
        M = int(np.prod(batch, dtype=int))
        states = kern.affine_scheme(
            np.ascontiguousarray(x0.reshape(M, system.d)),
            np.ascontiguousarray(dB.reshape(M, system.m, n)),
            dt, lin.A, lin.a, lin.S, lin.s, corr)
        return states.reshape(batch + (n + 1, system.d))
    states = np.empty(batch + (n + 1, system.d))
    x = np.array(x0)
    states[..., 0, :] = x
    for k in range(n):
        sig = system.sigma(x)
        nx = x + system.b(x) * dt + np.einsum("...ij,...j->...i", sig, dB[..., :, k])
        if corr != 0.0:
            c = system.grad_sigma_sigma(x, 0)
            for j in range(1, system.m):
                c = c + system.grad_sigma_sigma(x, j)
            nx = nx + corr * c
        x = nx
        states[..., k + 1, :] = x
    return states


def naive_euler(system, driver, x0, backend=None):
    """Frozen-coefficient Euler recursion at the grid nodes.

    ``backend`` selects the kernel for affine systems (``"cython"``,
    ``"python"``) or ``"generic"`` to force the callable-based loop.
    """
    states = _run(system, driver, x0, 0.0, backend)
    return SolutionPath(driver.grid, states, Scheme.NAIVE, driver.h)


def modified_euler(system, driver, x0, backend=None):
    """Naive recursion plus ``(T/n)^{2H}/2 * sum_j (grad sigma^j sigma^j)(X_k)`` per step.

    The correction is added last, so a system with vanishing correction gives
    exactly the naive output.
    """
    corr = 0.5 * driver.grid.step ** (2.0 * driver.h)
    states = _run(system, driver, x0, corr, backend)
    return SolutionPath(driver.grid, states, Scheme.MODIFIED, driver.h)


def exact_geometric(driver, x0):
    """``x0 * exp(B_t)`` at every node for the scalar system ``dX = X dB``."""
    if driver.m != 1:
        raise DimensionMismatchError("exact_geometric needs a scalar driver (m=1)")
    x0 = np.asarray(x0, dtype=float)
    x0 = x0[..., 0] if x0.ndim and x0.shape[-1] == 1 else x0
    states = (np.asarray(x0)[..., None] * np.exp(driver.values[..., 0, :]))[..., None]
    return SolutionPath(driver.grid, states, Scheme.EXACT_ORACLE, driver.h)


def exact_solution(system, driver, x0):
    if system.exact is None:
        raise OracleUnavailableError(f"no closed-form solution for system {system.name!r}")
    _, x0 = _prepare(system, driver, x0)
    return SolutionPath(driver.grid, system.exact(driver, x0), Scheme.EXACT_ORACLE, driver.h)


def solve_variational(system, driver, x_path, backend=None, scheme="naive"):
    """Euler steps for the Jacobian flow along ``x_path``; ``gamma`` by direct inversion.

    ``scheme="naive"`` is the plain step
    ``Lambda_{k+1} = Lambda_k + grad b Lambda_k dt + sum_j grad sigma^j Lambda_k dB^j``,
    whose products ``Lambda_t Gamma_s`` inherit the ``n^{1-2H}`` bias of the naive
    scheme.  ``scheme="modified"`` adds ``(T/n)^{2H}/2 * sum_j (grad sigma^j)^2 Lambda_k``,
    the modified-scheme correction for the linear flow; it omits second
    derivatives of ``sigma`` and so is rate-improving only for affine ``sigma``.
    """
    if x_path.grid != driver.grid:
        raise DimensionMismatchError("x_path and driver live on different grids")
    scheme = scheme if isinstance(scheme, Scheme) else Scheme(scheme)
    if scheme not in (Scheme.NAIVE, Scheme.MODIFIED):
        raise ValueError("variational scheme must be naive or modified")
    n = driver.grid.n
    d = system.d
    dt = driver.grid.step
    corr = 0.5 * dt ** (2.0 * driver.h) if scheme is Scheme.MODIFIED else 0.0
    dB = driver.increments
    batch = driver.values.shape[:-2]
    if system.linear is not None and backend != "generic":
        M = int(np.prod(batch, dtype=int))
        S = system.linear.S
        C = np.ascontiguousarray(np.einsum("jab,jbc->ac", S, S))
        lam = get_kernels(backend).linear_variational(
            np.ascontiguousarray(dB.reshape(M, system.m, n)), dt,
            system.linear.A, S, C, corr).reshape(batch + (n + 1, d, d))
    else:
        lam = np.empty(batch + (n + 1, d, d))
        cur = np.broadcast_to(np.eye(d), batch + (d, d)).copy()
        lam[..., 0, :, :] = cur
        for k in range(n):
            x = x_path.states[..., k, :]
            nxt = cur + (system.grad_b(x) @ cur) * dt
            for j in range(system.m):
                nxt = nxt + (system.grad_sigma(x, j) @ cur) * dB[..., j, k][..., None, None]
            if corr != 0.0:
                gs = [system.grad_sigma(x, j) for j in range(system.m)]
                c = gs[0] @ gs[0]
                for j in range(1, system.m):
                    c = c + gs[j] @ gs[j]
                nxt = nxt + corr * (c @ cur)
            cur = nxt
            lam[..., k + 1, :, :] = cur
    if d == 1:
        if np.any(lam == 0.0) or not np.all(np.isfinite(lam)):
            raise SingularMatrixError("Jacobian flow hit zero; step too coarse")
        gamma = 1.0 / lam
    else:
        cond = np.linalg.cond(lam)
        if not np.all(cond < COND_LIMIT):
            raise SingularMatrixError(f"cond(Lambda) = {np.nanmax(cond):.3e} exceeds {COND_LIMIT:g}")
        gamma = np.linalg.inv(lam)
    return VariationalPair(lam, gamma)


def reference_solution(system, fine_driver, x0, coarse_n, backend=None):
    """Modified scheme on the fine grid, subsampled to ``coarse_n`` steps."""
    n_fine = fine_driver.grid.n
    if coarse_n < 1 or n_fine % coarse_n:
        raise DivisibilityError(f"coarse_n={coarse_n} does not divide n={n_fine}")
    factor = n_fine // coarse_n
    fine = modified_euler(system, fine_driver, x0, backend=backend)
    coarse_grid = coarsen(fine_driver, factor).grid
    return SolutionPath(coarse_grid, fine.states[..., ::factor, :], Scheme.FINE_REFERENCE, fine.h)
