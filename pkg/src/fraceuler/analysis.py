"""Strong and weak error measurement, weighted block statistics, limit functionals.

Monte Carlo loops run over a fixed partition of path indices; path ``i`` always
uses the driver seeded by ``split(master_seed, i)`` and per-chunk results are
combined in chunk order, so every estimate is independent of the thread count.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, stats

from . import _blocks
from .constants import gamma_n
from .errors import (DegenerateInputError, DivisibilityError, DomainError,
                     OracleUnavailableError, SubgridMissingError)
from .fbm import UniformGrid, as_hurst, coarsen, sample_fbm_batch
from .parallel import DEFAULT_CHUNK, map_chunks
from .schemes import (Scheme, exact_solution, modified_euler, naive_euler,
                      reference_solution, solve_variational)

__all__ = [
    "Oracle", "WeightMode", "RateReport", "WeightedStatPath", "WeakErrorReport",
    "DistributionComparison", "zeta_block", "zeta_blocks", "xi_process", "theta_blocks",
    "strong_error", "fit_rate", "naive_limit_functional", "naive_limit_check",
    "clt_limit_solution", "rosenblatt_limit_solution", "weak_error", "geometric_weak_limit",
    "weighted_sum_check", "compare_distributions", "monte_carlo",
]


class Oracle(enum.Enum):
    EXACT = "exact"
    FINE_REFERENCE = "fine"


class WeightMode(enum.Enum):
    TIME_WEIGHT = "time"
    INCREMENT_WEIGHT = "increment"


def _enum(cls, value):
    return value if isinstance(value, cls) else cls(value)


def monte_carlo(fn, grid, h, m, master_seed, n_paths, chunk_size=DEFAULT_CHUNK, threads=None,
                method="circulant"):
    """Apply ``fn`` to driver batches chunk by chunk and concatenate along axis 0.

    ``fn(driver, start)`` returns an array (or tuple of arrays) with one leading
    entry per path.  Only one chunk of drivers is alive per worker at a time.
    """
    def work(start, count):
        drv = sample_fbm_batch(grid, h, m, master_seed, count, start=start, method=method,
                               threads=1)
        return fn(drv, start)

    parts = map_chunks(work, n_paths, chunk_size, threads)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[a] for p in parts]) for a in range(len(parts[0])))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# block statistics
# ---------------------------------------------------------------------------


def zeta_blocks(driver, i, j, sub_factor, rule="trapezoid", backend=None):
    """All blocks ``k = 0 .. n-1`` for the pair ``(i, j)``; shape ``(..., n)``.

    ``driver`` is sampled on ``n * sub_factor`` steps.  Diagonal blocks use the
    exact identity ``((dB^i)^2 - (T/n)^{2H}) / 2``; off-diagonal blocks are
    subgrid sums (independent components, so no trace correction is needed).
    """
    return _blocks.block(driver, i, j, sub_factor, rule, backend)


def zeta_block(driver, i, j, k, sub_factor, rule="trapezoid"):
    """Single block ``k`` of :func:`zeta_blocks`."""
    n = _blocks.coarse_n(driver, sub_factor)
    if not 0 <= k < n:
        raise IndexError(f"block {k} outside 0..{n - 1}")
    val = zeta_blocks(driver, i, j, sub_factor, rule)[..., k]
    return val if np.ndim(val) else float(val)


@dataclass(frozen=True, eq=False)
class WeightedStatPath:
    """``values[..., k, i, j]`` is the normalized statistic at node ``t_k`` (or block ``k``)."""

    grid: UniformGrid
    values: np.ndarray
    normalization: float


def _block_matrix(driver, sub_factor, rule, backend=None):
    m = driver.m
    n = _blocks.coarse_n(driver, sub_factor)
    out = np.empty(driver.values.shape[:-2] + (n, m, m))
    for i in range(m):
        for j in range(m):
            out[..., i, j] = zeta_blocks(driver, i, j, sub_factor, rule, backend)
    return out


def xi_process(driver, sub_factor, rule="trapezoid", backend=None):
    """Cumulative normalized block sums ``Xi_{t_k} = gamma_n * sum_{l<k} zeta_l``."""
    n = _blocks.coarse_n(driver, sub_factor)
    g = gamma_n(n, driver.h)
    z = _block_matrix(driver, sub_factor, rule, backend)
    out = np.zeros(z.shape[:-3] + (n + 1,) + z.shape[-2:])
    np.cumsum(g * z, axis=-3, out=out[..., 1:, :, :])
    return WeightedStatPath(UniformGrid(n, driver.grid.t_horizon), out, g)


def theta_blocks(driver, sub_factor, r_points, rule="trapezoid", backend=None):
    """``Theta_l = gamma_n * sum_k zeta_k`` over ``k = floor(n r_l/T) .. min(floor(n r_{l+1}/T), n-1)``.

    Both endpoints are included, so neighbouring blocks share one term.
    """
    n = _blocks.coarse_n(driver, sub_factor)
    T = driver.grid.t_horizon
    r = np.asarray(r_points, dtype=float)
    if r.ndim != 1 or r.size < 2 or np.any(np.diff(r) <= 0) or r[0] < 0 or r[-1] > T:
        raise ValueError("r_points must be an increasing partition inside [0, T]")
    g = gamma_n(n, driver.h)
    z = _block_matrix(driver, sub_factor, rule, backend)
    idx = np.floor(n * r / T + 1e-9).astype(int)
    out = np.empty(z.shape[:-3] + (r.size - 1,) + z.shape[-2:])
    for l in range(r.size - 1):
        lo, hi = idx[l], min(idx[l + 1], n - 1)
        out[..., l, :, :] = g * z[..., lo:hi + 1, :, :].sum(axis=-3)
    return WeightedStatPath(UniformGrid(n, T), out, g)


# ---------------------------------------------------------------------------
# strong error
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateReport:
    ns: list
    errors: list
    p_moment: int
    slope: float
    slope_stderr: float
    mc_paths: int
    seed: int
    scheme: str = "modified"
    medians: list = field(default_factory=list)

    def rows(self):
        return [[n, e, m] for n, e, m in zip(self.ns, self.errors, self.medians)]


def fit_rate(ns, errors):
    """OLS slope of ``log(error)`` on ``log(n)`` and its standard error."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.asarray(errors, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise DegenerateInputError("need at least two (n, error) pairs of equal length")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DegenerateInputError("errors must be positive and finite")
    y = np.log(y)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateInputError("all n are equal")
    slope = float(xc @ (y - y.mean())) / sxx
    if x.size == 2:
        return slope, 0.0
    resid = y - y.mean() - slope * xc
    stderr = math.sqrt(float(resid @ resid) / (x.size - 2) / sxx)
    return slope, stderr


def _oracle_path(system, fine_driver, x0, oracle, refine):
    if oracle is Oracle.EXACT:
        return exact_solution(system, fine_driver, x0)
    return reference_solution(system, fine_driver, x0, fine_driver.grid.n // refine)


def strong_error(system, h, ns, mc_paths, p_moment=2, oracle="exact", scheme="modified",
                 master_seed=0, t_horizon=1.0, x0=None, refine=16, chunk_size=DEFAULT_CHUNK,
                 threads=None, method="circulant", backend=None):
    """Per-``n`` strong error ``max_k (E|X_{t_k} - X^n_{t_k}|^p)^{1/p}`` and its log-log slope.

    All resolutions share one driver per path, sampled on the finest grid and
    coarsened; the fine-reference oracle runs on ``refine`` times that grid.
    """
    oracle = _enum(Oracle, oracle)
    scheme = _enum(Scheme, scheme)
    if scheme not in (Scheme.NAIVE, Scheme.MODIFIED):
        raise ValueError("scheme must be naive or modified")
    ns = sorted(int(n) for n in ns)
    if len(set(ns)) != len(ns):
        raise ValueError("ns must be distinct")
    if oracle is Oracle.EXACT and system.exact is None:
        raise OracleUnavailableError(f"system {system.name!r} has no exact solution")
    n_max = ns[-1]
    for n in ns:
        if n_max % n:
            raise DivisibilityError(f"n={n} does not divide the finest n={n_max}")
    fine_n = n_max * (refine if oracle is Oracle.FINE_REFERENCE else 1)
    fine_grid = UniformGrid(fine_n, t_horizon)
    x0 = np.ones(system.d) if x0 is None else np.asarray(x0, dtype=float)
    run = modified_euler if scheme is Scheme.MODIFIED else naive_euler

    def work(start, count):
        drv = sample_fbm_batch(fine_grid, h, system.m, master_seed, count, start=start,
                               method=method, threads=1)
        ref_full = _oracle_path(system, drv, x0, oracle, refine)
        base = coarsen(drv, fine_n // n_max) if fine_n != n_max else drv
        sums, maxes = [], []
        for n in ns:
            coarse = coarsen(base, n_max // n)
            approx = run(system, coarse, x0, backend=backend).states
            ref = ref_full.states[..., :: n_max // n, :]
            dev = np.linalg.norm(ref - approx, axis=-1)
            sums.append(np.sum(dev ** p_moment, axis=0))
            maxes.append(dev.max(axis=-1))
        return sums, maxes

    parts = map_chunks(work, mc_paths, chunk_size, threads)
    errors, medians = [], []
    for a in range(len(ns)):
        total = parts[0][0][a].copy()
        for part in parts[1:]:
            total += part[0][a]
        errors.append(float(np.max((total / mc_paths) ** (1.0 / p_moment))))
        medians.append(float(np.median(np.concatenate([part[1][a] for part in parts]))))
    slope, se = fit_rate(ns, errors)
    return RateReport(ns, errors, p_moment, slope, se, int(mc_paths), int(master_seed),
                      scheme.value, medians)


# ---------------------------------------------------------------------------
# limit functionals
# ---------------------------------------------------------------------------


def _trapezoid_cumulative(vals, dt):
    out = np.zeros_like(vals)
    out[..., 1:, :] = np.cumsum(0.5 * (vals[..., 1:, :] + vals[..., :-1, :]) * dt, axis=-2)
    return out


def naive_limit_functional(system, x_path, variational, t_index=None):
    """``(T^{2H-1}/2) * sum_j Lambda_t int_0^t Gamma_s (grad sigma^j sigma^j)(X_s) ds`` by trapezoid."""
    grid = x_path.grid
    n = grid.n
    t_index = n if t_index is None else int(t_index)
    h = x_path.h
    x = x_path.states[..., : t_index + 1, :]
    gss = system.grad_sigma_sigma(x, 0)
    for j in range(1, system.m):
        gss = gss + system.grad_sigma_sigma(x, j)
    integrand = np.einsum("...kab,...kb->...ka", variational.gamma[..., : t_index + 1, :, :], gss)
    if t_index == 0:
        integral = np.zeros(integrand.shape[:-2] + integrand.shape[-1:])
    else:
        integral = _trapezoid_cumulative(integrand, grid.step)[..., -1, :]
    lam_t = variational.lam[..., t_index, :, :]
    T = grid.t_horizon
    return 0.5 * T ** (2 * h - 1) * np.einsum("...ab,...b->...a", lam_t, integral)


def _left_sum(variational, integrand_incr):
    """``Lambda_{t_k} * sum_{l<k} Gamma_{t_l} incr_l`` at every node; incr has shape ``(..., n, d)``."""
    g = variational.gamma[..., :-1, :, :]
    terms = np.einsum("...kab,...kb->...ka", g, integrand_incr)
    acc = np.zeros(terms.shape[:-2] + (terms.shape[-2] + 1, terms.shape[-1]))
    np.cumsum(terms, axis=-2, out=acc[..., 1:, :])
    return np.einsum("...kab,...kb->...ka", variational.lam, acc)


def _sigma_cross(system, x, j, i):
    """``(grad sigma^j sigma^i)(x)`` at left nodes."""
    return np.einsum("...ab,...b->...a", system.grad_sigma(x, j), system.sigma(x)[..., :, i])


def clt_limit_solution(system, x_path, variational, w_path):
    """``U_t = Lambda_t sum_{ij} int_0^t Gamma_s (grad sigma^j sigma^i)(X_s) dW^{ij}_s`` (left-point)."""
    x = x_path.states[..., :-1, :]
    dW = np.diff(np.asarray(w_path), axis=-3)
    incr = np.zeros(x.shape)
    for i in range(system.m):
        for j in range(system.m):
            incr = incr + _sigma_cross(system, x, j, i) * dW[..., :, i, j][..., None]
    return _left_sum(variational, incr)


def rosenblatt_limit_solution(system, x_path, variational, z_paths, b_path):
    """Four-term linear limit for ``n (X - X^n)`` when ``H > 3/4``.

    ``z_paths[..., k, i, j]`` holds ``Z^{ij}`` at node ``k`` and ``b_path`` is the
    driver on the same grid.
    """
    h = x_path.h
    if h <= 0.75:
        raise DomainError(f"this limit needs h > 3/4 (h={h})")
    T = x_path.grid.t_horizon
    dt = x_path.grid.step
    x = x_path.states[..., :-1, :]
    dZ = np.diff(np.asarray(z_paths), axis=-3)
    dB = np.swapaxes(b_path.increments, -1, -2)          # (..., n, m)
    gb = system.grad_b(x)
    bx = system.b(x)
    sig = system.sigma(x)
    incr = 0.5 * T * np.einsum("...ab,...b->...a", gb, bx) * dt
    for j in range(system.m):
        gbs = np.einsum("...ab,...b->...a", gb, sig[..., :, j])
        gsb = np.einsum("...ab,...b->...a", system.grad_sigma(x, j), bx)
        incr = incr + 0.5 * T * (gbs + gsb) * dB[..., j][..., None]
        for i in range(system.m):
            incr = incr + _sigma_cross(system, x, j, i) * dZ[..., :, i, j][..., None]
    return _left_sum(variational, incr)


def naive_limit_check(system, h, n, mc_paths, master_seed=0, refine=16, t_horizon=1.0,
                      x0=None, chunk_size=DEFAULT_CHUNK, threads=None, backend=None):
    """Pathwise ``n^{2H-1}(X_T - X^n_T)`` against the naive-scheme limit functional.

    The functional is evaluated on a ``refine``-times finer grid along the
    oracle path.  Returns ``(scaled_errors, functional_values)`` at ``T`` with
    shape ``(mc_paths, d)``.
    """
    x0 = np.ones(system.d) if x0 is None else np.asarray(x0, dtype=float)
    fine_grid = UniformGrid(n * refine, t_horizon)

    def work(start, count):
        drv = sample_fbm_batch(fine_grid, h, system.m, master_seed, count, start=start, threads=1)
        if system.exact is not None:
            xf = exact_solution(system, drv, x0)
        else:
            xf = modified_euler(system, drv, x0, backend=backend)
        var = solve_variational(system, drv, xf, backend=backend)
        func = naive_limit_functional(system, xf, var)
        approx = naive_euler(system, coarsen(drv, refine), x0, backend=backend).terminal
        return n ** (2 * h - 1) * (xf.terminal - approx), func

    parts = map_chunks(work, mc_paths, chunk_size, threads)
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


# ---------------------------------------------------------------------------
# weak error
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeakErrorReport:
    ns: list
    estimates: list
    mc_stderr: list
    richardson_value: float
    richardson_errors: list = field(default_factory=list)
    richardson_stderr: list = field(default_factory=list)
    predicted_limit: Optional[float] = None
    reference_mean: float = float("nan")


def geometric_weak_limit(h, t=1.0, x0=1.0, t_horizon=1.0):
    """Limit of ``n (E X_t - E X^n_t)`` for ``dX = X dB`` with the modified scheme."""
    h = as_hurst(h).h
    a = h * (2 * h - 1)
    e = 2 * h - 1

    def g(s):
        return ((s ** e + (t - s) ** e) / e) ** 2

    val, _ = integrate.quad(g, 0.0, t, limit=200, epsabs=1e-13, epsrel=1e-12)
    return a * a * t_horizon / 2 * x0 * math.exp(t ** (2 * h) / 2) * val


def weak_error(system, f, ns, mc_paths, h, master_seed=0, t_index_fraction=1.0,
               reference_refine=64, oracle="fine", t_horizon=1.0, x0=None,
               predicted_limit=None, chunk_size=DEFAULT_CHUNK, threads=None, backend=None):
    """``n * (E f(X_t) - E f(X^n_t))`` with common random numbers.

    The reference ``X_t`` is the exact solution (``oracle="exact"``) or the
    modified scheme on ``reference_refine`` times the finest grid.  Richardson
    errors ``|2 Delta_{2n} - Delta_n|`` are reported for consecutive doublings.
    """
    oracle = _enum(Oracle, oracle)
    ns = sorted(int(n) for n in ns)
    n_max = ns[-1]
    for n in ns:
        if n_max % n:
            raise DivisibilityError(f"n={n} does not divide the finest n={n_max}")
    fine_n = n_max * (reference_refine if oracle is Oracle.FINE_REFERENCE else 1)
    x0 = np.ones(system.d) if x0 is None else np.asarray(x0, dtype=float)
    fine_grid = UniformGrid(fine_n, t_horizon)

    def node(n):
        k = n * t_index_fraction
        if abs(k - round(k)) > 1e-9:
            raise DivisibilityError(f"t = {t_index_fraction}*T is not a node of the n={n} grid")
        return int(round(k))

    def work(start, count):
        drv = sample_fbm_batch(fine_grid, h, system.m, master_seed, count, start=start, threads=1)
        if oracle is Oracle.EXACT:
            ref = exact_solution(system, drv, x0)
        else:
            ref = modified_euler(system, drv, x0, backend=backend)
        kf = node(fine_n)
        fr = np.asarray(f(ref.states[..., kf, :]), dtype=float)
        diffs = []
        for n in ns:
            approx = modified_euler(system, coarsen(drv, fine_n // n), x0, backend=backend)
            diffs.append(fr - np.asarray(f(approx.states[..., node(n), :]), dtype=float))
        return fr, diffs

    parts = map_chunks(work, mc_paths, chunk_size, threads)
    fr = np.concatenate([p[0] for p in parts])
    D = np.stack([np.concatenate([p[1][a] for p in parts]) for a in range(len(ns))])
    means = D.mean(axis=1)
    sds = D.std(axis=1, ddof=1) if mc_paths > 1 else np.zeros(len(ns))
    est = [float(n * mu) for n, mu in zip(ns, means)]
    se = [float(n * s / math.sqrt(mc_paths)) for n, s in zip(ns, sds)]
    rich, rich_se = [], []
    for a in range(len(ns) - 1):
        if ns[a + 1] == 2 * ns[a]:
            comb = 2 * D[a + 1] - D[a]
            rich.append(float(abs(comb.mean())))
            rich_se.append(float(comb.std(ddof=1) / math.sqrt(mc_paths)) if mc_paths > 1 else 0.0)
    # extrapolated estimate of E f(X_t) from the two finest levels
    rv = float(fr.mean() - (2 * means[-1] - means[-2])) if len(ns) > 1 else float(fr.mean() - means[-1])
    return WeakErrorReport(ns, est, se, rv, rich, rich_se, predicted_limit, float(fr.mean()))


# ---------------------------------------------------------------------------
# weighted sums
# ---------------------------------------------------------------------------


def _weighted_blocks(driver, sub_factor, mode):
    n = _blocks.coarse_n(driver, sub_factor)
    if sub_factor < 2:
        raise SubgridMissingError("weighted sums need a fine subgrid (sub_factor >= 2)")
    T = driver.grid.t_horizon
    delta = driver.grid.step
    B = driver.values[..., 0, :]
    batch = B.shape[:-1]
    left = B[..., :-1].reshape(batch + (n, sub_factor))
    right = B[..., 1:].reshape(batch + (n, sub_factor))
    base = B[..., :-1:sub_factor][..., :n, None]
    if mode is WeightMode.TIME_WEIGHT:
        # midpoint rule for int (s - t_k) dB_s
        mid = (np.arange(sub_factor) + 0.5) * delta
        return np.sum(mid * (right - left), axis=-1)
    # trapezoid rule for int (B_s - B_{t_k}) ds
    return delta * np.sum(0.5 * (left + right) - base, axis=-1)


def weighted_sum_check(driver, f_path, mode, sub_factor):
    """``n * sum_k f(t_k) zeta_k`` at ``t = T``.

    ``mode`` selects ``zeta_k = int (s - t_k) dB_s`` (time weight, midpoint rule)
    or ``int (B_s - B_{t_k}) ds`` (increment weight, trapezoid rule); with these
    rules the two add up to ``(T/n) dB_k`` exactly.
    """
    mode = _enum(WeightMode, mode)
    if driver.m != 1:
        raise ValueError("weighted sums use a scalar driver")
    n = _blocks.coarse_n(driver, sub_factor)
    z = _weighted_blocks(driver, sub_factor, mode)
    fv = np.asarray(f_path, dtype=float)
    if fv.ndim == 0:
        fv = np.full(n + 1, float(fv))
    return n * np.sum(fv[..., :n] * z, axis=-1)


def weighted_blocks(driver, sub_factor, mode):
    """Per-block ``zeta_k`` used by :func:`weighted_sum_check`; shape ``(..., n)``."""
    return _weighted_blocks(driver, sub_factor, _enum(WeightMode, mode))


# ---------------------------------------------------------------------------
# distribution comparison
# ---------------------------------------------------------------------------


def _moments(x):
    x = np.asarray(x, dtype=float)
    mu = float(x.mean())
    c = x - mu
    return {"mean": mu, "variance": float(np.mean(c * c)), "m4": float(np.mean(c ** 4))}


@dataclass(frozen=True)
class DistributionComparison:
    sample_moments: dict
    predicted_moments: dict
    ks_statistic: float
    ks_pvalue: float
    n_sample: int
    n_limit: int
    alpha: float = 0.001
    variance_tolerance: float = 0.15

    @property
    def variance_ratio(self):
        pv = self.predicted_moments["variance"]
        return self.sample_moments["variance"] / pv if pv > 0 else float("nan")

    @property
    def ks_pass(self):
        return self.ks_pvalue > self.alpha

    @property
    def variance_pass(self):
        return abs(self.variance_ratio - 1) <= self.variance_tolerance

    def to_text(self):
        lines = []
        for k, v in self.sample_moments.items():
            lines.append(f"sample_{k}={v:.17g}")
        for k, v in self.predicted_moments.items():
            lines.append(f"predicted_{k}={v:.17g}")
        lines += [f"ks_statistic={self.ks_statistic:.17g}", f"ks_pvalue={self.ks_pvalue:.17g}",
                  f"n_sample={self.n_sample}", f"n_limit={self.n_limit}",
                  f"variance_ratio={self.variance_ratio:.17g}",
                  f"ks_pass={self.ks_pass}", f"variance_pass={self.variance_pass}"]
        return "\n".join(lines) + "\n"


def compare_distributions(scaled_errors, limit_sample, predicted_variance=None, alpha=0.001,
                          variance_tolerance=0.15):
    """Moments and two-sample KS test of a scaled error sample against a limit sample.

    ``predicted_variance`` overrides the limit sample's variance in the
    predicted moments (use it when an analytic value is known).
    """
    a = np.asarray(scaled_errors, dtype=float).ravel()
    b = np.asarray(limit_sample, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DegenerateInputError("both samples must be nonempty")
    pm = _moments(b)
    if predicted_variance is not None:
        pm["variance"] = float(predicted_variance)
    res = stats.ks_2samp(a, b)
    return DistributionComparison(_moments(a), pm, float(res.statistic), float(res.pvalue),
                                  a.size, b.size, alpha, variance_tolerance)

