"""Config-driven experiments producing CSV tables and SVG plots.

Config files are flat ``key = value`` text with ``#`` comments.  Output CSVs
depend only on the config and master seed; run-specific facts such as wall
time go to a ``.meta.json`` sidecar so that reruns are byte-identical.
"""

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (clt_limit_solution, compare_distributions, fit_rate,
                       geometric_weak_limit, monte_carlo, naive_limit_check, strong_error,
                       weak_error, weighted_blocks, weighted_sum_check)
from .constants import (CSV_HEADER, MatrixBmSpec, c_h, gamma_n, limit_constants,
                        sample_matrix_bm_batch, sample_rosenblatt_approx)
from .errors import ConfigError, DomainError, FracEulerError
from .fbm import UniformGrid
from .fbm import coarsen
from .schemes import (SYSTEMS, exact_solution, get_system, modified_euler, reference_solution,
                      solve_variational)

EXPERIMENTS = ("constants", "strong_rate", "naive_rate", "clt_check", "rosenblatt_check",
               "weak_error", "weighted_sums")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    h: float = 0.7
    t_horizon: float = 1.0
    ns: tuple = (16, 32, 64, 128, 256, 512, 1024)
    mc_paths: int = 1000
    p_moment: int = 2
    system: str = "geometric"
    master_seed: int = 0
    output_dir: str = "."
    P: int = 512
    tolerance: float = 1e-4
    h_grid: tuple = ()
    sub_factor: int = 64
    oracle: str = "exact"
    scheme: str = "modified"
    refine: int = 16
    rule: str = "trapezoid"
    chunk_size: int = 256
    expect_slope: Optional[float] = None
    slope_tol: float = 0.1
    rel_tol: float = 0.15

    def canonical_text(self):
        """Stable ``key=value`` rendering (excludes ``output_dir``) used for hashing."""
        parts = []
        for f in fields(self):
            if f.name == "output_dir":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            parts.append(f"{f.name}={v!r}")
        return "\n".join(parts) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


_CONVERTERS = {
    "experiment": str, "h": float, "t_horizon": float, "ns": _ints, "mc_paths": int,
    "p_moment": int, "system": str, "master_seed": int, "output_dir": str, "P": int,
    "tolerance": float, "h_grid": _floats, "sub_factor": int, "oracle": str, "scheme": str,
    "refine": int, "rule": str, "chunk_size": int, "expect_slope": float, "slope_tol": float,
    "rel_tol": float,
}


def validate(cfg):
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    for h in (cfg.h,) + tuple(cfg.h_grid):
        if not 0.5 < h < 1.0:
            raise ConfigError(f"h out of (0.5,1): {h}")
    if cfg.t_horizon <= 0:
        raise ConfigError("t_horizon must be > 0")
    if cfg.mc_paths < 1:
        raise ConfigError("mc_paths must be >= 1")
    if not cfg.ns:
        raise ConfigError("ns must be nonempty")
    if any(n < 1 for n in cfg.ns):
        raise ConfigError("ns must be positive")
    n_max = max(cfg.ns)
    for n in cfg.ns:
        if n_max % n:
            raise ConfigError(f"ns must divide the finest grid: {n} does not divide {n_max}")
    if cfg.p_moment < 1:
        raise ConfigError("p_moment must be >= 1")
    if cfg.system not in SYSTEMS:
        raise ConfigError(f"unknown system {cfg.system!r}; known: {sorted(SYSTEMS)}")
    if cfg.P < 64:
        raise ConfigError("P must be >= 64")
    if cfg.oracle not in ("exact", "fine"):
        raise ConfigError("oracle must be exact or fine")
    if cfg.scheme not in ("naive", "modified"):
        raise ConfigError("scheme must be naive or modified")
    if cfg.rule not in ("trapezoid", "left"):
        raise ConfigError("rule must be trapezoid or left")
    if cfg.sub_factor < 1 or cfg.refine < 1 or cfg.chunk_size < 1:
        raise ConfigError("sub_factor, refine and chunk_size must be >= 1")
    return cfg


def parse_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", line=lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONVERTERS:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno)
        try:
            values[key] = _CONVERTERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r} ({exc})", line=lineno) from None
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    return validate(ExperimentConfig(**values))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# result tables
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ResultTable:
    schema: tuple
    rows: list
    metadata: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        for r in self.rows:
            if len(r) != len(self.schema):
                raise ValueError(f"row width {len(r)} != schema width {len(self.schema)}")

    def column(self, name):
        i = self.schema.index(name)
        return [r[i] for r in self.rows]

    @property
    def passed(self):
        return all(self.checks.values())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _parse_cell(s):
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def emit_csv(table, path):
    """Header plus rows, 17 significant digits, LF endings; metadata to ``<path>.meta.json``."""
    if not table.rows:
        raise ValueError("empty table")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.schema)
            for r in table.rows:
                w.writerow([_fmt(v) for v in r])
        meta = dict(table.metadata)
        meta["checks"] = {k: bool(v) for k, v in table.checks.items()}
        with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=_fmt)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    meta, checks = {}, {}
    side = str(path) + ".meta.json"
    if os.path.exists(side):
        with open(side, encoding="utf-8") as fh:
            meta = json.load(fh)
        checks = meta.pop("checks", {})
    return ResultTable(tuple(rows[0]), [[_parse_cell(c) for c in r] for r in rows[1:]], meta, checks)


@dataclass(frozen=True)
class PlotSpec:
    x: str
    ys: tuple
    logx: bool = False
    logy: bool = False
    title: str = ""


def emit_svg(table, plotspec, path):
    """Static SVG with deterministic output (fixed hash salt, no date stamp)."""
    if not table.rows:
        raise ValueError("empty table")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "fraceuler", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        x = np.asarray(table.column(plotspec.x), dtype=float)
        for y in plotspec.ys:
            ax.plot(x, np.asarray(table.column(y), dtype=float), marker="o", label=y)
        if plotspec.logx:
            ax.set_xscale("log", base=2)
        if plotspec.logy:
            ax.set_yscale("log")
        ax.set_xlabel(plotspec.x)
        ax.set_ylabel(", ".join(plotspec.ys))
        if plotspec.title:
            ax.set_title(plotspec.title)
        ax.legend()
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        finally:
            plt.close(fig)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _oracle_states(system, drv, x0, cfg, coarse_n):
    if cfg.oracle == "exact":
        return exact_solution(system, drv, x0)
    return reference_solution(system, drv, x0, coarse_n)


def _exp_constants(cfg, threads):
    hs = cfg.h_grid or (cfg.h,)
    consts = [limit_constants(h, cfg.t_horizon, cfg.P, cfg.tolerance) for h in hs]
    rows = [c.as_row() for c in consts]
    checks = {"r_le_q": all(c.r <= c.q + 1e-6 for c in consts),
              "positive": all(c.Q > 0 and c.R >= 0 for c in consts)}
    plot = PlotSpec("H", ("q", "r"), title="normalized lag sums")
    return ResultTable(CSV_HEADER, rows), checks, plot


def _exp_rate(cfg, threads, scheme):
    system = get_system(cfg.system)
    rep = strong_error(system, cfg.h, cfg.ns, cfg.mc_paths, cfg.p_moment, cfg.oracle, scheme,
                       cfg.master_seed, cfg.t_horizon, refine=cfg.refine,
                       chunk_size=cfg.chunk_size, threads=threads)
    rows = [[n, e, m] for n, e, m in zip(rep.ns, rep.errors, rep.medians)]
    table = ResultTable(("n", "error", "median_max_error"), rows)
    table.metadata.update(slope=rep.slope, slope_stderr=rep.slope_stderr)
    checks = {"errors_positive": all(e > 0 for e in rep.errors)}
    if cfg.expect_slope is not None:
        checks["slope"] = abs(rep.slope - cfg.expect_slope) <= cfg.slope_tol
    if scheme == "naive" and system.exact is not None:
        n = max(cfg.ns)
        scaled, func = naive_limit_check(system, cfg.h, n, cfg.mc_paths, cfg.master_seed,
                                         cfg.refine, cfg.t_horizon, chunk_size=cfg.chunk_size,
                                         threads=threads)
        gap = float(np.mean(np.linalg.norm(scaled - func, axis=-1))
                    / np.mean(np.linalg.norm(func, axis=-1)))
        table.metadata["limit_relative_gap"] = gap
        checks["limit_gap"] = gap <= cfg.rel_tol
    plot = PlotSpec("n", ("error",), logx=True, logy=True, title=f"{scheme} scheme strong error")
    return table, checks, plot


def _exp_clt(cfg, threads):
    if cfg.h >= 0.75:
        raise DomainError("clt_check needs h < 3/4")
    system = get_system(cfg.system)
    n = max(cfg.ns)
    T = cfg.t_horizon
    consts = limit_constants(cfg.h, T, cfg.P, cfg.tolerance)
    spec = MatrixBmSpec(system.m, consts)
    g = gamma_n(n, cfg.h)
    factor = cfg.refine if cfg.oracle == "fine" else 1
    x0 = np.ones(system.d)

    def fn(drv, start):
        ref = _oracle_states(system, drv, x0, cfg, n)
        coarse = coarsen(drv, factor)
        approx = modified_euler(system, coarse, x0)
        err = g * (ref.terminal - approx.terminal)[..., 0]
        W = sample_matrix_bm_batch(spec, coarse.grid, cfg.master_seed, coarse.values.shape[0],
                                   start=start)
        var = solve_variational(system, coarse, ref, scheme="modified")
        U = clt_limit_solution(system, ref, var, W)[..., -1, 0]
        return err, U

    err, U = monte_carlo(fn, UniformGrid(n * factor, T), cfg.h, system.m, cfg.master_seed,
                         cfg.mc_paths, cfg.chunk_size, threads)
    predicted = None
    if cfg.system == "geometric":
        # err ~ X_T * N(0, alpha^2 (Q + R)) with X_T = exp(B_T)
        predicted = math.exp(2 * T ** (2 * cfg.h)) * consts.alpha ** 2 * (consts.Q + consts.R)
    dc = compare_distributions(err, U, predicted_variance=predicted, variance_tolerance=cfg.rel_tol)
    rows = [[n, dc.sample_moments["mean"], dc.sample_moments["variance"],
             dc.predicted_moments["variance"], dc.variance_ratio, dc.ks_statistic, dc.ks_pvalue]]
    table = ResultTable(("n", "mean", "variance", "predicted_variance", "variance_ratio",
                         "ks_statistic", "ks_pvalue"), rows)
    checks = {"variance": dc.variance_pass, "ks": dc.ks_pass,
              "cauchy_schwarz": dc.sample_moments["m4"] >= dc.sample_moments["variance"] ** 2}
    return table, checks, None


def _exp_rosenblatt(cfg, threads):
    if cfg.h <= 0.75:
        raise DomainError("rosenblatt_check needs h > 3/4")
    n = max(cfg.ns)
    T = cfg.t_horizon
    S = cfg.sub_factor
    probe = [k for k in (n // 64, n // 32, n // 16, n // 8, n // 4) if k >= 1]

    def fn(drv, start):
        Z = sample_rosenblatt_approx(drv, 0, 1, S, cfg.rule)
        gaps = np.stack([Z[:, k] - Z[:, 0] for k in probe], axis=-1)
        return Z[:, -1], gaps

    zT, gaps = monte_carlo(fn, UniformGrid(n * S, T), cfg.h, 2, cfg.master_seed, cfg.mc_paths,
                           cfg.chunk_size, threads)
    target = c_h(cfg.h, T) * T ** (4 * cfg.h - 2)
    var = float(np.var(zT))
    moments = np.mean(gaps ** 2, axis=0)
    slope, _ = fit_rate([k * T / n for k in probe], moments)
    rows = [[n, S, var, target, var / target - 1, slope, 4 * cfg.h - 2]]
    table = ResultTable(("n", "sub_factor", "variance", "c_H", "relative_gap", "holder_slope",
                         "holder_target"), rows)
    checks = {"variance": abs(var / target - 1) <= cfg.rel_tol,
              "holder": slope >= 4 * cfg.h - 2 - 0.1}
    return table, checks, None


def _exp_weak(cfg, threads):
    system = get_system(cfg.system)
    pred = geometric_weak_limit(cfg.h, cfg.t_horizon, 1.0, cfg.t_horizon) \
        if cfg.system == "geometric" else None
    rep = weak_error(system, lambda x: x[..., 0], cfg.ns, cfg.mc_paths, cfg.h, cfg.master_seed,
                     oracle=cfg.oracle, reference_refine=cfg.refine, t_horizon=cfg.t_horizon,
                     predicted_limit=pred, chunk_size=cfg.chunk_size, threads=threads)
    rich = list(rep.richardson_errors) + [float("nan")]
    rich_se = list(rep.richardson_stderr) + [float("nan")]
    rows = [[n, e, s, r, rs] for n, e, s, r, rs in zip(rep.ns, rep.estimates, rep.mc_stderr,
                                                        rich, rich_se)]
    table = ResultTable(("n", "n_delta", "stderr", "richardson_error", "richardson_stderr"), rows)
    table.metadata.update(richardson_value=rep.richardson_value, predicted_limit=pred)
    checks = {"stderr_positive": all(s > 0 for s in rep.mc_stderr)}
    if pred is not None:
        checks["limit_band"] = abs(rep.estimates[-1] - pred) <= 2 * rep.mc_stderr[-1]
    plot = PlotSpec("n", ("n_delta",), logx=True, title="weak error")
    return table, checks, plot


def _exp_weighted(cfg, threads):
    n = max(cfg.ns)
    S = cfg.sub_factor
    T = cfg.t_horizon

    def fn(drv, start):
        a = weighted_sum_check(drv, 1.0, "time", S)
        b = weighted_sum_check(drv, 1.0, "increment", S)
        resid = np.max(np.abs(weighted_blocks(drv, S, "time") + weighted_blocks(drv, S, "increment")
                              - (T / n) * np.diff(drv.values[:, 0, ::S], axis=-1)), axis=-1)
        return a, b, resid

    a, b, resid = monte_carlo(fn, UniformGrid(n * S, T), cfg.h, 1, cfg.master_seed,
                              cfg.mc_paths, cfg.chunk_size, threads)
    target = T * T / 4 * T ** (2 * cfg.h)
    rows = [["time", float(np.var(a)), target, float(np.var(a)) / target - 1],
            ["increment", float(np.var(b)), target, float(np.var(b)) / target - 1]]
    table = ResultTable(("mode", "variance", "predicted", "relative_gap"), rows)
    table.metadata["identity_residual"] = float(resid.max())
    checks = {"time_variance": abs(rows[0][3]) <= cfg.rel_tol, "identity": float(resid.max()) < 1e-12}
    return table, checks, None


_DISPATCH = {
    "constants": _exp_constants,
    "strong_rate": lambda cfg, th: _exp_rate(cfg, th, cfg.scheme),
    "naive_rate": lambda cfg, th: _exp_rate(cfg, th, "naive"),
    "clt_check": _exp_clt,
    "rosenblatt_check": _exp_rosenblatt,
    "weak_error": _exp_weak,
    "weighted_sums": _exp_weighted,
}


def run_experiment(cfg, threads=None):
    """Run one experiment; returns ``(ResultTable, PlotSpec or None)``."""
    t0 = time.perf_counter()
    try:
        table, checks, plot = _DISPATCH[cfg.experiment](cfg, threads)
    except FracEulerError as exc:
        exc.args = (f"{cfg.experiment}: {exc}",) + exc.args[1:]
        raise
    table.checks = checks
    table.metadata.update(config_hash=cfg.config_hash(), master_seed=cfg.master_seed,
                          code_version=__version__, experiment=cfg.experiment,
                          wall_time_s=time.perf_counter() - t0)
    return table, plot


def write_outputs(cfg, table, plot, out_dir=None):
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, cfg.experiment)
    emit_csv(table, stem + ".csv")
    paths = [stem + ".csv"]
    if plot is not None:
        emit_svg(table, plot, stem + ".svg")
        paths.append(stem + ".svg")
    return paths


def with_overrides(cfg, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    return validate(replace(cfg, **kw)) if kw else cfg
