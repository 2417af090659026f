"""Lag covariance constants, their sums, and the limiting noises.

For lag ``p`` the constants are four-fold integrals against the measure
``|u - v|^{2H-2} du dv``.  The inner pair of integrals runs over a rectangle
and has the closed form :func:`rect_kernel_integral`; the outer pair is done
by Gauss quadrature adapted to the diagonal singularity.  The infinite lag sums
are closed with an exact large-lag expansion summed by Hurwitz zeta values.
"""

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import binom, roots_jacobi, roots_legendre
from scipy.special import zeta as hurwitz_zeta

from . import _blocks
from . import rng as _rng
from .errors import DomainError, NegativeRadicandError, QuadratureError, ToleranceNotMetError
from .fbm import as_hurst

THREE_QUARTERS_TOL = 1e-12
DEFAULT_NODES = 64
FAR_NODES = 24
SERIES_ORDER = 8
CSV_HEADER = ("H", "T", "P", "Q", "R", "q", "r", "tail_estimate", "mode")


class Mode(enum.Enum):
    SERIES_SUM = "SeriesSum"
    LOG_LIMIT = "LogLimit"


def phi(x, h):
    """Second antiderivative of ``|x|^{2H-2}``: ``|x|^{2H} / (2H(2H-1))``."""
    h = as_hurst(h).h
    return np.abs(x) ** (2 * h) / (2 * h * (2 * h - 1))


def rect_kernel_integral(a, b, c, d, h):
    """``int_a^b int_c^d |u - v|^{2H-2} dv du`` in closed form."""
    return phi(d - a, h) + phi(c - b, h) - phi(c - a, h) - phi(d - b, h)


@lru_cache(maxsize=None)
def _gl01(n):
    x, w = roots_legendre(n)
    return (x + 1) / 2, w / 2


@lru_cache(maxsize=None)
def _gj01(n, beta):
    """Gauss-Jacobi rule for ``int_0^1 f(x) x^beta dx``."""
    x, w = roots_jacobi(n, 0.0, beta)
    return (x + 1) / 2, w / 2 ** (1 + beta)


def _inner(kind, t, s, p, h):
    # inner region: u in [0,t] (Q) or [t,1] (R), v in [p,s]
    if kind == "Q":
        return rect_kernel_integral(0.0, t, p, s, h)
    return rect_kernel_integral(t, 1.0, p, s, h)


def _outer(kind, p, h, n_nodes):
    """Unit-horizon outer integral over ``t in [0,1]``, ``s in [p,p+1]``."""
    k = 2 * h - 2
    if abs(p) >= 2:
        x, w = _gl01(n_nodes)
        t = x[:, None]
        s = p + x[None, :]
        return float(np.sum(w[:, None] * w[None, :] * _inner(kind, t, s, p, h) * np.abs(s - t) ** k))
    if p == 0:
        # split along s = t; gap w = |s - t| carries the singular weight
        wz, ww = _gj01(n_nodes, k)
        x, w = _gl01(n_nodes)
        gap = wz[:, None]
        span = 1 - gap
        lo = x[None, :] * span
        wt = ww[:, None] * w[None, :] * span
        upper = _inner(kind, lo, lo + gap, p, h)
        lower = _inner(kind, lo + gap, lo, p, h)
        return float(np.sum(wt * (upper + lower)))
    # |p| = 1: squares touch at one corner; polar-type (Duffy) map around it
    rho, wr = _gj01(n_nodes, 2 * h - 1)
    th, wt = _gl01(n_nodes)
    r = rho[:, None]
    th = th[None, :]
    weight = wr[:, None] * wt[None, :] * (1 + th) ** k
    if p == 1:
        f = _inner(kind, 1 - r, 1 + r * th, p, h) + _inner(kind, 1 - r * th, 1 + r, p, h)
    else:
        f = _inner(kind, r, -r * th, p, h) + _inner(kind, r * th, -r, p, h)
    return float(np.sum(weight * f))


def _far_lags(kind, ps, h, n_nodes=FAR_NODES):
    """Vectorized outer integral for lags with ``|p| >= 2``."""
    x, w = _gl01(n_nodes)
    t = x[:, None, None]
    p = np.asarray(ps, dtype=float)[None, None, :]
    s = p + x[None, :, None]
    ww = (w[:, None] * w[None, :])[:, :, None]
    return np.sum(ww * _inner(kind, t, s, p, h) * np.abs(s - t) ** (2 * h - 2), axis=(0, 1))


def _alpha2(h):
    return (h * (2 * h - 1)) ** 2


def _lag_value(kind, p, h, t_horizon, n_nodes, tolerance):
    p = int(p)
    n_nodes = int(n_nodes)
    coarse = _outer(kind, p, h, n_nodes)
    fine = _outer(kind, p, h, 2 * n_nodes)
    if _alpha2(h) * abs(fine - coarse) > tolerance:
        raise QuadratureError(
            f"{kind}({p}) at h={h}: refinements differ by {abs(fine - coarse):.3e}")
    return t_horizon ** (4 * h) * fine


def qp(p, h, t_horizon=1.0, n_nodes=DEFAULT_NODES, tolerance=1e-6):
    """Lag constant ``Q(p)``.

    Evaluated with ``n_nodes`` and ``2 * n_nodes`` per axis; a ``QuadratureError``
    is raised when they differ by more than ``tolerance`` after normalization by
    ``H^2 (2H-1)^2`` (the scale on which ``q`` is reported).
    """
    return _lag_value("Q", p, as_hurst(h).h, float(t_horizon), n_nodes, tolerance)


def rp(p, h, t_horizon=1.0, n_nodes=DEFAULT_NODES, tolerance=1e-6):
    """Lag constant ``R(p)`` (the inner ``u`` interval is ``[t, 1]`` instead of ``[0, t]``)."""
    return _lag_value("R", p, as_hurst(h).h, float(t_horizon), n_nodes, tolerance)


# ---------------------------------------------------------------------------
# large-lag expansion
# ---------------------------------------------------------------------------


def moments(kind, order=SERIES_ORDER):
    """``M[a, b] = int x^a y^b`` over the unit-lag region, ``x = v' - u``, ``y = s' - t``.

    The region is ``0 <= v' <= s' <= 1`` together with ``0 <= u <= t <= 1``
    (kind ``"Q"``) or ``0 <= t <= u <= 1`` (kind ``"R"``).
    """
    def tri(alpha, beta):
        # int_0^1 int_0^{hi} lo^alpha hi^beta
        return 1.0 / ((alpha + 1) * (alpha + beta + 2))

    M = np.zeros((order + 1, order + 1))
    for a in range(order + 1):
        for b in range(order + 1 - a):
            tot = 0.0
            for i in range(a + 1):           # v'^i (-u)^(a-i)
                for j in range(b + 1):       # s'^j (-t)^(b-j)
                    c = math.comb(a, i) * math.comb(b, j) * (-1) ** (a - i + b - j)
                    vs = tri(i, j)
                    if kind == "Q":
                        ut = tri(a - i, b - j)
                    else:
                        ut = tri(b - j, a - i)
                    tot += c * vs * ut
            M[a, b] = tot
    return M


def qp_asymptotic(kind, p, h, t_horizon=1.0, order=SERIES_ORDER):
    """Large-``|p|`` expansion of ``Q(p)`` or ``R(p)`` in powers of ``1/|p|``."""
    h = as_hurst(h).h
    k = 2 * h - 2
    M = moments(kind, order)
    p = np.asarray(p, dtype=float)
    ap = np.abs(p)
    sg = np.sign(p)
    out = np.zeros_like(ap)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            out = out + binom(k, a) * binom(k, b) * sg ** (a + b) * M[a, b] * ap ** (2 * k - a - b)
    return t_horizon ** (4 * h) * out


def tail_sum(kind, h, P, order=SERIES_ORDER):
    """``sum_{|p| > P}`` of the expansion at unit horizon, and the size of its last term."""
    k = 2 * h - 2
    M = moments(kind, order)
    total = 0.0
    last = 0.0
    for a in range(order + 1):
        for b in range(order + 1 - a):
            if (a + b) % 2:
                continue
            term = 2 * binom(k, a) * binom(k, b) * M[a, b] * hurwitz_zeta(4 - 4 * h + a + b, P + 1)
            total += term
            if a + b == order - (order % 2):
                last += abs(term)
    return total, last


# ---------------------------------------------------------------------------
# tables and sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlockConstantTable:
    """``Q(p)``, ``R(p)`` for ``p = -P .. P`` (index ``p + P``)."""

    h: float
    t_horizon: float
    truncation: int
    qp: np.ndarray
    rp: np.ndarray
    tail_estimate: float = 0.0

    @property
    def lags(self):
        return np.arange(-self.truncation, self.truncation + 1)

    def q_at(self, p):
        return float(self.qp[int(p) + self.truncation])

    def r_at(self, p):
        return float(self.rp[int(p) + self.truncation])


def block_table(h, t_horizon=1.0, truncation=512, n_nodes=DEFAULT_NODES, tolerance=1e-6):
    """All lags up to ``|p| <= truncation``.

    Near lags are refinement-checked; far lags share one vectorized rule whose
    accuracy is checked at ``|p| = 2`` where the integrand is least smooth.
    """
    h = as_hurst(h).h
    P = int(truncation)
    scale = t_horizon ** (4 * h)
    out = {}
    for kind in "QR":
        vals = np.empty(2 * P + 1)
        for p in (-1, 0, 1):
            vals[p + P] = _lag_value(kind, p, h, t_horizon, n_nodes, tolerance)
        far = np.concatenate([np.arange(-P, -1), np.arange(2, P + 1)])
        if far.size:
            for probe in (-2, 2):
                a = _outer(kind, probe, h, FAR_NODES)
                b = _outer(kind, probe, h, 2 * FAR_NODES)
                if _alpha2(h) * abs(a - b) > tolerance:
                    raise QuadratureError(f"{kind}({probe}) at h={h}: far-lag rule not converged")
            vals[far + P] = scale * _far_lags(kind, far, h)
        out[kind] = vals
    return BlockConstantTable(h, float(t_horizon), P, out["Q"], out["R"])


@dataclass(frozen=True, eq=False)
class LimitConstants:
    h: float
    t_horizon: float
    Q: float
    R: float
    q: float
    r: float
    mode: Mode
    truncation: int = 0
    tail_estimate: float = 0.0
    tail_uncertainty: float = 0.0
    table: Optional[BlockConstantTable] = field(default=None, repr=False)

    @property
    def alpha(self):
        return self.h * (2 * self.h - 1)

    def as_row(self):
        return [self.h, self.t_horizon, self.truncation, self.Q, self.R, self.q, self.r,
                self.tail_estimate, self.mode.value]


def _is_three_quarters(h):
    return abs(h - 0.75) <= THREE_QUARTERS_TOL


def limit_constants(h, t_horizon=1.0, truncation=512, tolerance=1e-4, max_truncation=8192,
                    n_nodes=DEFAULT_NODES):
    """Lag sums ``Q``, ``R`` and their normalized forms ``q``, ``r``.

    For ``H < 3/4`` the lags ``|p| <= P`` are summed directly and the rest by
    the large-lag expansion.  ``P`` doubles while the uncertainty of that tail
    correction (in units of ``q``) exceeds ``tolerance``; past
    ``max_truncation`` a ``ToleranceNotMetError`` is raised.  At ``H = 3/4`` the
    log-normalized limit ``Q = R = T^3/2`` is returned.
    """
    h = as_hurst(h).h
    t_horizon = float(t_horizon)
    alpha2 = (h * (2 * h - 1)) ** 2
    scale = t_horizon ** (4 * h)
    if _is_three_quarters(h):
        Q = R = t_horizon ** 3 / 2
        return LimitConstants(h, t_horizon, Q, R, alpha2 * Q / scale, alpha2 * R / scale,
                              Mode.LOG_LIMIT)
    if h > 0.75:
        raise DomainError(f"lag sums diverge for h > 3/4 (h={h})")
    P = int(truncation)
    if P < 64:
        raise ValueError(f"truncation must be >= 64, got {P}")
    while True:
        table = block_table(h, t_horizon, P, n_nodes)
        tails = {}
        unc = 0.0
        for kind, vals in (("Q", table.qp), ("R", table.rp)):
            tail, last = tail_sum(kind, h, P)
            # the expansion must reproduce the quadrature at the cut
            edge = np.array([-P, P])
            mismatch = np.max(np.abs(qp_asymptotic(kind, edge, h) - vals[edge + P] / scale)
                              / np.abs(vals[edge + P] / scale))
            tails[kind] = tail
            unc = max(unc, alpha2 * (last + mismatch * tail))
        if unc <= tolerance:
            break
        if 2 * P > max_truncation:
            raise ToleranceNotMetError(
                f"tail uncertainty {unc:.3e} > {tolerance:g} at P={P} (h={h})")
        P *= 2
    # fixed summation order: increasing p
    Q = float(math.fsum(table.qp)) + scale * tails["Q"]
    R = float(math.fsum(table.rp)) + scale * tails["R"]
    table = BlockConstantTable(h, t_horizon, P, table.qp, table.rp, scale * tails["Q"])
    return LimitConstants(h, t_horizon, Q, R, alpha2 * Q / scale, alpha2 * R / scale,
                          Mode.SERIES_SUM, P, scale * tails["Q"], unc, table)


def constants_csv(rows):
    """Render ``LimitConstants`` rows with the canonical header."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in rows:
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in c.as_row()])
    return buf.getvalue()


def gamma_n(n, h):
    """Rate factor of the modified scheme (natural log in the boundary case)."""
    h = as_hurst(h).h
    if _is_three_quarters(h):
        if n < 2:
            raise ValueError("gamma_n at h = 3/4 needs n >= 2")
        return n / math.sqrt(math.log(n))
    if h < 0.75:
        return float(n) ** (2 * h - 0.5)
    return float(n)


def c_h(h, t_horizon=1.0):
    """Variance constant of the limiting Rosenblatt-type process, ``H > 3/4`` only."""
    h = as_hurst(h).h
    if h <= 0.75:
        raise DomainError(f"c_h requires h > 3/4 (h={h})")
    return t_horizon ** 2 * h * h * (2 * h - 1) / (4 * (4 * h - 3))


# ---------------------------------------------------------------------------
# matrix-valued Brownian motion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixBmSpec:
    m: int
    constants: LimitConstants
    tolerance: float = 1e-12

    def cov(self, i, j, i2, j2, t, s):
        c = self.constants
        return (c.alpha ** 2 * min(t, s) / c.t_horizon
                * (c.R * (j == i2) * (i == j2) + c.Q * (j == j2) * (i == i2)))

    def increment_covariance(self):
        """Covariance per unit time of ``vec(W)`` (row-major pairs ``(i, j)``)."""
        m = self.m
        out = np.empty((m * m, m * m))
        for a in range(m * m):
            for b in range(m * m):
                out[a, b] = self.cov(a // m, a % m, b // m, b % m, 1.0, 1.0)
        return out

    def loadings(self):
        c = self.constants
        gap = c.Q - c.R
        if gap < -self.tolerance:
            raise NegativeRadicandError(f"Q - R = {gap:.3e} < 0; constants are inconsistent")
        f = c.alpha / math.sqrt(c.t_horizon)
        return f * math.sqrt(c.Q + c.R), f * math.sqrt(max(gap, 0.0)), f * math.sqrt(c.R)


def _matrix_bm_from(gen, spec, grid):
    m = spec.m
    n = grid.n
    diag, own, shared = spec.loadings()
    sd = math.sqrt(grid.step)
    w1 = gen.standard_normal((n, m, m)) * sd
    w0 = gen.standard_normal((n, m, m)) * sd
    w0 = np.triu(w0, 1)
    w0 = w0 + np.swapaxes(w0, -1, -2)
    dW = own * w1 + shared * w0
    idx = np.arange(m)
    dW[:, idx, idx] = diag * w1[:, idx, idx]
    out = np.zeros((n + 1, m, m))
    np.cumsum(dW, axis=0, out=out[1:])
    return out


MATRIX_BM_STREAM = 1


def sample_matrix_bm(spec, grid, seed):
    """One path of ``W`` at the grid nodes, shape ``(n+1, m, m)``."""
    return _matrix_bm_from(_rng.generator(seed), spec, grid)


def sample_matrix_bm_batch(spec, grid, master_seed, n_paths, start=0):
    """Paths on a stream disjoint from the fBm driver stream of the same master seed."""
    out = np.empty((n_paths, grid.n + 1, spec.m, spec.m))
    for k in range(n_paths):
        seed = _rng.split(master_seed, start + k, stream=MATRIX_BM_STREAM)
        out[k] = sample_matrix_bm(spec, grid, seed)
    return out


# ---------------------------------------------------------------------------
# Rosenblatt-type approximants
# ---------------------------------------------------------------------------


def sample_rosenblatt_approx(driver, i1, i2, sub_factor, rule="trapezoid", backend=None):
    """``Z_n(t_k) = n * sum_{l<k} zeta_l`` on the coarse grid ``n = N / sub_factor``.

    ``driver`` may be a batch; the result has shape ``(..., n+1)``.
    """
    if driver.h <= 0.75:
        raise DomainError(f"Rosenblatt approximants need h > 3/4 (h={driver.h})")
    z = _blocks.block(driver, i1, i2, sub_factor, rule, backend)
    n = z.shape[-1]
    out = np.zeros(z.shape[:-1] + (n + 1,))
    np.cumsum(n * z, axis=-1, out=out[..., 1:])
    return out
