"""Exact-in-law fractional Brownian motion on uniform grids.

Two samplers are provided: a Cholesky factorization of the increment
covariance (cubic set-up cost, used as ground truth at small ``n``) and
circulant embedding (Davies-Harte, ``O(n log n)`` per path).  Both draw from a
per-path Philox stream so that a path depends only on its own seed.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy import fft as sfft

from . import rng as _rng
from .errors import DivisibilityError, DomainError, EmbeddingError, FactorizationError
from .parallel import DEFAULT_CHUNK, map_chunks

CHOLESKY_CAP = 4096
_MAGIC = b"FBM1"
_HEADER = struct.Struct("<4sIIddQ")


@dataclass(frozen=True)
class HurstParam:
    """Hurst index restricted to the open interval (1/2, 1)."""

    h: float

    def __post_init__(self):
        h = float(self.h)
        if not (0.5 < h < 1.0):
            raise DomainError(f"h out of (0.5,1): {h}")
        object.__setattr__(self, "h", h)

    @property
    def alpha(self):
        """``H(2H-1)``, the constant in front of ``|u-v|^{2H-2}``."""
        return self.h * (2.0 * self.h - 1.0)

    def __float__(self):
        return self.h


def as_hurst(h):
    return h if isinstance(h, HurstParam) else HurstParam(h)


def _hval(h):
    return as_hurst(h).h


@dataclass(frozen=True)
class UniformGrid:
    n: int
    t_horizon: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.t_horizon > 0:
            raise ValueError(f"t_horizon must be > 0, got {self.t_horizon}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "t_horizon", float(self.t_horizon))

    @property
    def step(self):
        return self.t_horizon / self.n

    @property
    def nodes(self):
        return np.arange(self.n + 1) * self.t_horizon / self.n

    def node(self, i):
        return i * self.t_horizon / self.n

    def eta(self, t):
        """Left grid point: ``t_i`` for ``t_i <= t < t_{i+1}``."""
        i = np.clip(np.floor(np.asarray(t) * self.n / self.t_horizon), 0, self.n)
        return i * self.t_horizon / self.n

    def eps(self, t):
        """Right grid point: ``t_{i+1}`` for ``t_i < t <= t_{i+1}``."""
        i = np.clip(np.ceil(np.asarray(t) * self.n / self.t_horizon), 0, self.n)
        return i * self.t_horizon / self.n

    def refine(self, factor):
        return UniformGrid(self.n * int(factor), self.t_horizon)


@dataclass(frozen=True, eq=False)
class FbmPath:
    """Sampled fBm values on a grid.

    ``values`` has shape ``(m, n+1)`` for a single path or ``(P, m, n+1)`` for a
    batch of ``P`` independent paths; components are stored contiguously.
    """

    grid: UniformGrid
    h: float
    values: np.ndarray
    seed_tag: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim < 2 or v.shape[-1] != self.grid.n + 1:
            raise ValueError(f"values must have shape (..., m, {self.grid.n + 1}), got {v.shape}")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "h", _hval(self.h))

    @property
    def m(self):
        return self.values.shape[-2]

    @property
    def batch_shape(self):
        return self.values.shape[:-2]

    @property
    def increments(self):
        return np.diff(self.values, axis=-1)

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("single path has no length")
        return self.batch_shape[0]

    def __getitem__(self, index):
        if not self.batch_shape:
            raise TypeError("single path is not indexable")
        return FbmPath(self.grid, self.h, self.values[index], self.seed_tag)


def fbm_covariance(t, s, h):
    """``E[B_t B_s]`` for one component: ``(t^{2H} + s^{2H} - |t-s|^{2H}) / 2``."""
    h2 = 2.0 * _hval(h)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return 0.5 * (np.abs(t) ** h2 + np.abs(s) ** h2 - np.abs(t - s) ** h2)


def increment_correlation(p, h):
    """Correlation of unit-lag increments at integer lag ``p``.

    Uses an ``expm1``/``log1p`` form for ``|p| >= 2`` so that the second
    difference of ``|p|^{2H}`` keeps full relative precision at large lags.
    """
    h2 = 2.0 * _hval(h)
    p = np.abs(np.asarray(p, dtype=float))
    out = np.empty_like(p)
    small = p < 2
    ps = p[small]
    out[small] = 0.5 * ((ps + 1) ** h2 + np.abs(ps - 1) ** h2 - 2 * ps ** h2)
    pl = p[~small]
    x = 1.0 / pl
    out[~small] = 0.5 * pl ** h2 * (np.expm1(h2 * np.log1p(x)) + np.expm1(h2 * np.log1p(-x)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _cholesky_factor(n, h):
    cov = scipy.linalg.toeplitz(increment_correlation(np.arange(n), h))
    try:
        L = scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"increment covariance not positive definite at n={n}, h={h}; "
            "use the circulant sampler") from exc
    L.flags.writeable = False
    return L


@lru_cache(maxsize=32)
def _circulant_scale(n, h, tol=1e-10):
    """``sqrt(lambda / 2n)`` for the embedding of the unit-step increment covariance."""
    g = increment_correlation(np.arange(n + 1), h)
    c = np.concatenate([g, g[-2:0:-1]]) if n > 1 else np.array([g[0], g[1]])
    lam = sfft.fft(c).real
    if lam.min() < -tol * lam.max():
        raise EmbeddingError(f"circulant eigenvalue {lam.min():.3e} < 0 at n={n}, h={h}")
    lam = np.clip(lam, 0.0, None)
    out = np.sqrt(lam / lam.size)
    out.flags.writeable = False
    return out


def _check_cap(n, cap):
    if n > cap:
        raise ValueError(f"cholesky sampler limited to n <= {cap}, got n={n}")


def _draw_cholesky(n, h, m, seeds, cap):
    _check_cap(n, cap)
    L = _cholesky_factor(n, h)
    z = np.empty((len(seeds), m, n))
    for k, seed in enumerate(seeds):
        z[k] = _rng.generator(seed).standard_normal((m, n))
    return z @ L.T


def _draw_circulant(n, h, m, seeds):
    scale = _circulant_scale(n, h)
    npairs = (m + 1) // 2
    size = scale.size
    w = np.empty((len(seeds), npairs, size), dtype=np.complex128)
    for k, seed in enumerate(seeds):
        z = _rng.generator(seed).standard_normal((npairs, 2, size))
        w[k].real = z[:, 0]
        w[k].imag = z[:, 1]
    w *= scale
    y = sfft.fft(w, axis=-1)[..., :n]
    inc = np.empty((len(seeds), m, n))
    inc[:, 0::2] = y.real[:, : (m + 1) // 2]
    inc[:, 1::2] = y.imag[:, : m // 2]
    return inc


def _values_from_increments(grid, h, inc):
    inc = inc * grid.step ** _hval(h)
    out = np.zeros(inc.shape[:-1] + (grid.n + 1,))
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


def _draw(grid, h, m, seeds, method, cap):
    if method == "circulant":
        inc = _draw_circulant(grid.n, _hval(h), m, seeds)
    elif method == "cholesky":
        inc = _draw_cholesky(grid.n, _hval(h), m, seeds, cap)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return _values_from_increments(grid, h, inc)


def sample_fbm_cholesky(grid, h, m, seed, cap=CHOLESKY_CAP):
    """One ``m``-dimensional path, exact via Cholesky of the Toeplitz increment covariance."""
    h = as_hurst(h)
    values = _draw(grid, h, int(m), [seed], "cholesky", cap)[0]
    return FbmPath(grid, h.h, values, int(seed))


def sample_fbm_circulant(grid, h, m, seed):
    """One ``m``-dimensional path by circulant embedding.

    Pairs of components share one complex FFT (real and imaginary parts are
    independent draws with the target covariance).
    """
    h = as_hurst(h)
    values = _draw(grid, h, int(m), [seed], "circulant", None)[0]
    return FbmPath(grid, h.h, values, int(seed))


def path_seed(master_seed, index):
    return _rng.split(master_seed, index)


def sample_fbm_batch(grid, h, m, master_seed, n_paths, *, start=0, method="circulant",
                     threads=None, chunk_size=DEFAULT_CHUNK, cap=CHOLESKY_CAP):
    """Paths ``start .. start+n_paths-1`` of the stream keyed by ``master_seed``.

    Path ``i`` equals the single-path sampler called with
    ``seed=path_seed(master_seed, start + i)``.
    """
    h = as_hurst(h)
    m = int(m)
    if method == "cholesky":
        _check_cap(grid.n, cap)
    out = np.empty((n_paths, m, grid.n + 1))

    def work(s, c):
        seeds = [path_seed(master_seed, start + s + k) for k in range(c)]
        out[s:s + c] = _draw(grid, h, m, seeds, method, cap)

    map_chunks(work, n_paths, chunk_size, threads)
    return FbmPath(grid, h.h, out, int(master_seed))


def coarsen(path, factor):
    """Subsample to every ``factor``-th node; coarse increments telescope exactly."""
    factor = int(factor)
    if factor < 1 or path.grid.n % factor:
        raise DivisibilityError(f"factor {factor} does not divide n={path.grid.n}")
    if factor == 1:
        return path
    grid = UniformGrid(path.grid.n // factor, path.grid.t_horizon)
    return FbmPath(grid, path.h, path.values[..., ::factor], path.seed_tag)


# ---------------------------------------------------------------------------
# binary dump
# ---------------------------------------------------------------------------


def write_fbm_binary(path, file):
    """Write a single path: little-endian header then ``m*(n+1)`` f64, component-major."""
    if path.batch_shape:
        raise ValueError("binary dump holds a single path")
    header = _HEADER.pack(_MAGIC, path.grid.n, path.m, path.grid.t_horizon, path.h,
                          int(path.seed_tag) & ((1 << 64) - 1))
    with open(file, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(path.values, dtype="<f8").tobytes())


def read_fbm_binary(file):
    with open(file, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated fBm dump")
    magic, n, m, t_horizon, h, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if values.size != m * (n + 1):
        raise ValueError(f"expected {m * (n + 1)} values, found {values.size}")
    return FbmPath(UniformGrid(n, t_horizon), h, values.reshape(m, n + 1).astype(np.float64), seed)
