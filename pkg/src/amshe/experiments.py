"""Named end-to-end experiments.

Each ``run_*`` function takes an :class:`~amshe.cli_io.ExperimentConfig` and
returns an :class:`ExperimentReport` listing every criterion with its
measured value and threshold.  Paths are split into fixed-size chunks that
run on the worker pool; since chunk boundaries and per-path seeds do not
depend on the worker count, neither does the report.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import cli_io
from .cli_io import ENSEMBLE_STRIDE, ExperimentConfig, chunk_ranges, map_tasks, path_rngs
from .domain import DomainSpec, build_kernel, rescale_kernel
from .errors import ConfigError, InsufficientConvergence
from .martingale import MartingalePath, sample_at_levels, time_change
from .solver import (
    CLIP_TOLERANCE,
    MeasureSpec,
    SchemeParams,
    adjoint_batch,
    clip_fraction,
    flat_second_moment,
    mshe_flat_batch,
    n_steps,
    zero_start_batch,
)
from .stats import (
    SQRT_2PI,
    CauchyLaw,
    brownian_halfplane_oracle,
    cauchy_report,
    ecf_fit,
    fractional_moment,
    ks_distance,
    ks_two_sample,
    ks_two_sample_null_quantile,
    lognormal_subcritical_check,
    robust_summary,
    weighted_lp_norm,
)


@dataclass
class ExperimentReport:
    experiment: str
    config_digest: str
    seed: int
    criteria: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    runtime: float = 0.0
    paths: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def check(self, name: str, measured, op: str, threshold, note: str = ""):
        """Record one criterion ``measured <op> threshold``."""
        m = float(measured)
        if op == "<":
            ok = m < threshold
        elif op == "<=":
            ok = m <= threshold
        elif op == ">":
            ok = m > threshold
        elif op == ">=":
            ok = m >= threshold
        elif op == "in":
            ok = threshold[0] <= m <= threshold[1]
        else:
            raise ValueError(op)
        ok = bool(ok) and math.isfinite(m)
        self.criteria.append({"name": name, "measured": m, "op": op,
                              "threshold": threshold, "passed": ok, "note": note})
        return ok

    def check_flag(self, name: str, ok: bool, measured=None, note: str = ""):
        self.criteria.append({"name": name, "measured": measured, "op": "holds",
                              "threshold": None, "passed": bool(ok), "note": note})
        return bool(ok)

    def criterion(self, name: str) -> dict:
        for c in self.criteria:
            if c["name"] == name:
                return c
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.criteria)

    def to_summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "passed": self.passed,
            "criteria": self.criteria,
            "values": self.values,
            "diagnostics": self.diagnostics,
        }


def _report(cfg: ExperimentConfig) -> ExperimentReport:
    return ExperimentReport(cfg.experiment, cfg.digest, cfg.base_seed)


def strictly_decreasing(xs) -> bool:
    xs = list(xs)
    return all(b < a for a, b in zip(xs, xs[1:]))


def _qq_table(samples, law: CauchyLaw, points: int = 99):
    p = (np.arange(1, points + 1)) / (points + 1)
    emp = np.quantile(np.asarray(samples, dtype=float), p)
    return (["p", "empirical", "cauchy"], [[a, b, c] for a, b, c in zip(p, emp, law.ppf(p))])


# ---------------------------------------------------------------- synthetic oracle

def _halfplane_chunk(task):
    a, dt, seed, n = task
    rng = np.random.Generator(np.random.PCG64(seed))
    return brownian_halfplane_oracle(a, dt, rng, size=n)


def run_prop15(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Exit ordinates of planar Brownian motion from the half-plane against Cauchy(a)."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    dt = float(cfg.get("oracle_dt"))
    chunk = int(cfg.get("oracle_chunk", 10_000))
    for ai, a in enumerate(cfg.get("a_list")):
        a = float(a)
        tasks = [(a, dt, cli_io.derive_seed(cfg.base_seed, ai * ENSEMBLE_STRIDE + lo, "bridge"), hi - lo)
                 for lo, hi in chunk_ranges(cfg.n_paths, chunk)]
        y = np.concatenate(map_tasks(_halfplane_chunk, tasks, workers))
        dr = cauchy_report(y, a)
        key = f"a={a:g}"
        rep.values[key] = dr.to_dict()
        rep.check(f"{key} KS vs Cauchy", dr.ks, "<", cfg.get("ks_tol"))
        if a > 0:
            se_med = math.pi * a / (2 * math.sqrt(y.size))
            rep.check(f"{key} IQR relative error", abs(dr.iqr / (2 * a) - 1), "<", cfg.get("iqr_tol"))
            rep.check(f"{key} ECF scale relative error", abs(dr.ecf_scale_fit / a - 1), "<", cfg.get("ecf_tol"))
            rep.check(f"{key} median within 4 SE", abs(dr.median) / se_med, "<", 4.0)
            rep.tables[f"qq_{key}"] = _qq_table(y, CauchyLaw(a))
    rep.runtime = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- adjoint ensembles

def _kernel(cfg: ExperimentConfig):
    return build_kernel(cfg.kernel, cfg.domain)


def _adjoint_chunk(task):
    cfg, scheme, mu, lo, hi, offset, T_max, record_every, tau_levels, q_edges = task
    kernel = _kernel(cfg)
    idx = range(offset + lo, offset + hi)
    rU = path_rngs(cfg.base_seed, idx, "U")
    rV = path_rngs(cfg.base_seed, idx, "V") if scheme.alpha > 0 else [None] * len(rU)
    rec = adjoint_batch(mu, scheme, cfg.domain, kernel, T_max, record_every, rU, rV,
                        block=int(cfg.get("block", 64)))
    out = {
        "path_index": np.arange(offset + lo, offset + hi),
        "M_end": rec.M[:, -1], "N_end": rec.N[:, -1],
        "qv_M": rec.qv_M[:, -1], "qv_N": rec.qv_N[:, -1], "cross": rec.cross[:, -1],
        "qv_formula": rec.qv_formula[:, -1], "clipped": rec.clipped,
        "cell_steps": np.full(hi - lo, rec.cell_steps),
    }
    if tau_levels:
        cols = []
        for T in tau_levels:
            k = np.flatnonzero(np.isclose(rec.tau, T, rtol=0, atol=1e-9 * max(1.0, T)))
            if k.size == 0:
                raise ValueError(f"time {T} is not on the recording grid")
            cols.append(rec.M[:, k[0]])
        out["M_levels"] = np.stack(cols, axis=1)
    if q_edges:
        tc = time_change(MartingalePath.from_record(rec), clock="formula", with_x=scheme.alpha > 0)
        W, X = sample_at_levels(tc, q_edges)
        out["W_levels"] = W
        out["X_levels"] = X if X is not None else np.full_like(W, np.nan)
    return out


def adjoint_ensemble(cfg: ExperimentConfig, mu: MeasureSpec, ensemble: int = 0, scheme=None,
                     T_max=None, record_every=None, tau_levels=(), q_edges=(), n_paths=None,
                     workers=None) -> dict:
    """Run ``n_paths`` adjoint paths in chunks and concatenate per-path results in path order."""
    scheme = scheme or cfg.scheme
    T_max = cfg.T_max if T_max is None else T_max
    record_every = int(record_every or cfg.get("record_every", 100))
    n = cfg.n_paths if n_paths is None else n_paths
    size = int(cfg.get("chunk_size", 500))
    tasks = [(cfg, scheme, mu, lo, hi, ensemble * ENSEMBLE_STRIDE, T_max, record_every,
              tuple(tau_levels), tuple(q_edges)) for lo, hi in chunk_ranges(n, size)]
    parts = map_tasks(_adjoint_chunk, tasks, workers)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _clip_check(rep: ExperimentReport, res: dict, label: str):
    frac = clip_fraction(res["clipped"], int(res["cell_steps"][0]))
    rep.diagnostics[f"{label} clip fraction"] = frac
    rep.check(f"{label} clip fraction", frac, "<", CLIP_TOLERANCE)


def _path_records(res: dict, label: str, threshold=None):
    recs = []
    for i in range(res["M_end"].size):
        r = {"kind": "path", "ensemble": label, "path_index": int(res["path_index"][i]),
             "M_end": float(res["M_end"][i]), "N_end": float(res["N_end"][i]),
             "qv_M": float(res["qv_M"][i]), "qv_N": float(res["qv_N"][i]),
             "cross": float(res["cross"][i]), "qv_formula": float(res["qv_formula"][i]),
             "clipped": int(res["clipped"][i])}
        if threshold is not None:
            r["converged"] = bool(res["M_end"][i] < threshold)
        if "M_levels" in res:
            r["M_levels"] = [float(v) for v in res["M_levels"][i]]
        recs.append(r)
    return recs


def _tag(rep: ExperimentReport, recs: list) -> list:
    return [cli_io.OutputRecord("path", r, rep.config_digest) for r in recs]


def _second_measure(cfg: ExperimentConfig) -> MeasureSpec | None:
    atoms = cfg.get("second_measure")
    if not atoms:
        return None
    return MeasureSpec([(float(g), x) for g, x in atoms])


def run_strong_disorder_cauchy(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Terminal ``N`` of converged adjoint paths against Cauchy(alpha mu(X) / beta)."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    thr = float(cfg.get("threshold"))
    a, b = cfg.scheme.alpha, cfg.scheme.beta
    if b == 0:
        raise ConfigError("strong disorder needs beta > 0", fields=("scheme.beta",))
    measures = [("mu", cfg.measure)]
    if _second_measure(cfg) is not None:
        measures.append(("mu2", _second_measure(cfg)))
    for e, (label, mu) in enumerate(measures):
        res = adjoint_ensemble(cfg, mu, ensemble=e, workers=workers)
        conv = res["M_end"] < thr
        frac = float(conv.mean())
        c = a * mu.total_mass / b
        rep.values[f"{label} converged fraction"] = frac
        rep.values[f"{label} cauchy scale"] = c
        _clip_check(rep, res, label)
        rep.paths += _tag(rep, _path_records(res, label, thr))
        if frac < float(cfg.get("min_converged")) or conv.sum() < 2:
            raise InsufficientConvergence(
                f"{label}: only {frac:.1%} of paths have M_T < {thr:g} at T_max={cfg.T_max}; "
                f"increase run.T_max (minimum {float(cfg.get('min_converged')):.0%})")
        rep.check(f"{label} converged fraction", frac, ">=", float(cfg.get("required_converged")))
        dr = cauchy_report(res["N_end"][conv], c)
        rep.values[f"{label} converged N"] = dr.to_dict()
        rep.check(f"{label} KS vs Cauchy", dr.ks, "<", float(cfg.get("ks_tol")))
        rep.diagnostics[f"{label} KS all paths"] = ks_distance(res["N_end"], CauchyLaw(c).cdf)
        rep.diagnostics[f"{label} median M_end"] = float(np.median(res["M_end"]))
        rep.tables[f"qq_{label}"] = _qq_table(res["N_end"][conv], CauchyLaw(c))
    rep.runtime = time.perf_counter() - t0
    return rep


def _bins(W, X, edges):
    out = []
    for i in range(len(edges) - 1):
        ok = np.isfinite(W[:, i + 1]) & np.isfinite(W[:, i])
        dW = W[ok, i + 1] - W[ok, i]
        dX = X[ok, i + 1] - X[ok, i]
        width = edges[i + 1] - edges[i]
        out.append({
            "lo": float(edges[i]), "hi": float(edges[i + 1]), "n": int(ok.sum()),
            "var_W": float(np.var(dW, ddof=1)), "var_X": float(np.var(dX, ddof=1)),
            "corr_WX": float(np.corrcoef(dW, dX)[0, 1]), "width": float(width),
        })
    return out


def run_qv_consistency(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Quadratic-variation identities and Brownianity of the time-changed pair."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    a, b = cfg.scheme.alpha, cfg.scheme.beta
    if a == 0 or b == 0:
        raise ConfigError("the QV experiment needs alpha > 0 and beta > 0", fields=("scheme.alpha", "scheme.beta"))
    edges = [float(q) for q in cfg.get("q_edges") or []]
    record_every = int(cfg.get("qv_record_every", 1))
    res = adjoint_ensemble(cfg, cfg.measure, record_every=record_every, q_edges=edges, workers=workers)
    _clip_check(rep, res, "dt")

    ratio = res["qv_N"] / res["qv_M"]
    target = a * a / (b * b)
    tol = float(cfg.get("ratio_tol"))
    med_ratio = float(np.median(ratio))
    rep.values["target ratio"] = target
    rep.check("median qv_N/qv_M", med_ratio, "in", [target * (1 - tol), target * (1 + tol)])
    cross = res["cross"] / np.sqrt(res["qv_M"] * res["qv_N"])
    rep.check("median |normalized cross-QV|", float(np.median(np.abs(cross))), "<", float(cfg.get("cross_tol")))
    rep.values["median normalized cross-QV (signed)"] = float(np.median(cross))
    dis = float(np.median(np.abs(res["qv_M"] / res["qv_formula"] - 1)))
    rep.check("median |qv_inc/qv_formula - 1|", dis, "<", float(cfg.get("formula_tol")))
    rep.paths += _tag(rep, _path_records(res, "dt"))

    if cfg.get("refine"):
        fine = replace(cfg.scheme, dt=cfg.scheme.dt / 2)
        res2 = adjoint_ensemble(cfg, cfg.measure, scheme=fine,
                                record_every=n_steps(cfg.T_max, fine.dt), workers=workers)
        _clip_check(rep, res2, "dt/2")
        dis2 = float(np.median(np.abs(res2["qv_M"] / res2["qv_formula"] - 1)))
        rep.values["disagreement dt/2"] = dis2
        rep.values["median qv_N/qv_M dt/2"] = float(np.median(res2["qv_N"] / res2["qv_M"]))
        rep.check("disagreement shrinks under dt halving", dis2, "<", dis)

    if edges:
        bins = _bins(res["W_levels"], res["X_levels"], edges)
        rep.values["bins"] = bins
        vt, ct = float(cfg.get("bin_var_tol")), float(cfg.get("corr_tol"))
        for bn in bins:
            key = f"q-bin [{bn['lo']:g},{bn['hi']:g}]"
            rep.check(f"{key} var_W/width - 1", abs(bn["var_W"] / bn["width"] - 1), "<", vt)
            rep.check(f"{key} var_X/width - 1", abs(bn["var_X"] / bn["width"] - 1), "<", vt)
            rep.check(f"{key} |corr(dW, dX)|", abs(bn["corr_WX"]), "<", ct)
        rep.tables["bins"] = (["lo", "hi", "n", "var_W", "var_X", "corr_WX"],
                              [[x["lo"], x["hi"], x["n"], x["var_W"], x["var_X"], x["corr_WX"]] for x in bins])
    rep.runtime = time.perf_counter() - t0
    return rep


def tail_slope(samples, lo: float = 0.9, hi: float = 0.99, points: int = 10) -> float:
    """Least-squares slope of ``log P(|N| > t)`` against ``log t`` between two quantiles."""
    x = np.abs(np.asarray(samples, dtype=float))
    p = np.linspace(lo, hi, points)
    t = np.quantile(x, p)
    ok = t > 0
    if ok.sum() < 3:
        return float("nan")
    return float(np.polyfit(np.log(t[ok]), np.log(1 - p[ok]), 1)[0])


def _weak_probe(cfg, scheme, T_max, rep, label, ensemble, workers):
    every = math.gcd(n_steps(T_max / 2, scheme.dt), n_steps(T_max, scheme.dt))
    res = adjoint_ensemble(cfg, cfg.measure, scheme=scheme, ensemble=ensemble, T_max=T_max,
                           record_every=every, tau_levels=(T_max / 2, T_max), workers=workers)
    frac = float(np.mean(res["M_end"] > float(cfg.get("mass_floor"))))
    slope = tail_slope(res["N_end"])
    half, end = res["M_levels"][:, 0], res["M_levels"][:, 1]
    med_m = float(np.median(end))
    stab = float(np.median(np.abs(end - half)) / med_m) if med_m > 0 else float("inf")
    rep.values[f"{label} fraction M_T > floor"] = frac
    rep.values[f"{label} tail slope"] = slope
    rep.values[f"{label} median |M_T - M_T/2| / median M_T"] = stab
    rep.diagnostics[f"{label} clip fraction"] = clip_fraction(res["clipped"], int(res["cell_steps"][0]))
    rep.paths += _tag(rep, _path_records(res, label))
    return frac, slope, stab


def run_weak_disorder_probe(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Mass survival, stabilisation and tail-slope probes; a contrast run at large beta should flip them."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    frac, slope, stab = _weak_probe(cfg, cfg.scheme, cfg.T_max, rep, f"beta={cfg.scheme.beta:g}", 0, workers)
    rep.check("probe: fraction M_T > floor", frac, ">", float(cfg.get("frac_above")))
    rep.check("probe: M_T stabilises", stab, "<", float(cfg.get("stab_tol")))
    rep.check("probe: tail slope of |N|", slope, "<", float(cfg.get("tail_slope")))
    cb = cfg.get("contrast_beta")
    if cb:
        sch = replace(cfg.scheme, beta=float(cb), dt=float(cfg.get("contrast_dt", cfg.scheme.dt)))
        T_c = float(cfg.get("contrast_T_max", cfg.T_max))
        f2, s2, _ = _weak_probe(cfg, sch, T_c, rep, f"beta={float(cb):g}", 1, workers)
        rep.check_flag("contrast run flips both probes",
                       f2 <= float(cfg.get("frac_above")) and s2 >= float(cfg.get("tail_slope")),
                       measured=[f2, s2])
    rep.runtime = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- forward runs

def _zero_start_chunk(task):
    cfg, scheme, kernel_eps, T, lo, hi, offset, reducer = task
    kernel = _kernel(cfg) if kernel_eps is None else rescale_kernel(_kernel(cfg), kernel_eps, cfg.domain)
    idx = range(offset + lo, offset + hi)
    rU = path_rngs(cfg.base_seed, idx, "U")
    rV = path_rngs(cfg.base_seed, idx, "V")
    res = zero_start_batch(scheme, cfg.domain, kernel, T, rU, rV, block=int(cfg.get("block", 64)))
    return reducer(res.values)


class _AtCells:
    def __init__(self, cells):
        self.cells = [tuple(c) for c in cells]

    def __call__(self, v):
        return np.stack([v[(Ellipsis,) + c] for c in self.cells], axis=-1)


class _LadderDiffs:
    def __init__(self, domain: DomainSpec, xi: float):
        self.domain, self.xi = domain, xi

    def __call__(self, v):
        return np.stack([weighted_lp_norm(v[r + 1] - v[r], 1, self.xi, self.domain)
                         for r in range(v.shape[0] - 1)], axis=-1)


def run_stationarity_check(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Zero-start samples at two start times, a spatial shift, and a coupled start-time ladder."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    dom = cfg.domain
    T1, T2 = (float(t) for t in cfg.get("T_pair"))
    x0 = dom.snap([0.0] * dom.dimension)
    shift = dom.snap([float(cfg.get("shift"))] + [0.0] * (dom.dimension - 1))
    size = int(cfg.get("chunk_size", 500))
    n = cfg.n_paths
    red = _AtCells([x0, shift])

    def collect(T, ensemble):
        tasks = [(cfg, cfg.scheme, None, T, lo, hi, ensemble * ENSEMBLE_STRIDE, red)
                 for lo, hi in chunk_ranges(n, size)]
        return np.concatenate(map_tasks(_zero_start_chunk, tasks, workers))

    s1 = collect(T1, 0)
    s2 = collect(T2, 1)
    null_rng = np.random.Generator(np.random.PCG64(cli_io.derive_seed(cfg.base_seed, 0, "null-calibration")))
    reps, q = int(cfg.get("null_reps")), float(cfg.get("null_q"))

    a, b = s1[:, 0], s2[:, 0]
    ks = ks_two_sample(a, b)
    thr = ks_two_sample_null_quantile(a, b, q, reps, null_rng)
    rep.check(f"two-sample KS v(T={T1:g}) vs v(T={T2:g})", ks, "<", thr, note=f"null {q:.0%} quantile")

    half = n // 2
    xa, xb = s1[:half, 0], s1[half:, 1]
    ks_s = ks_two_sample(xa, xb)
    thr_s = ks_two_sample_null_quantile(xa, xb, q, reps, null_rng)
    rep.check("two-sample KS v(x) vs v(x+shift)", ks_s, "<", thr_s, note=f"null {q:.0%} quantile")
    med, iqr = robust_summary(b)
    rep.values[f"v(T={T2:g}) median"] = med
    rep.values[f"v(T={T2:g}) iqr"] = iqr
    rep.values["cauchy scale alpha/beta"] = cfg.scheme.alpha / cfg.scheme.beta if cfg.scheme.beta else None

    ladder = [float(t) for t in cfg.get("T_ladder")]
    if ladder:
        nl = int(cfg.get("n_ladder"))
        red_l = _LadderDiffs(dom, float(cfg.get("xi")))
        tasks = [(cfg, cfg.scheme, None, ladder, lo, hi, 2 * ENSEMBLE_STRIDE, red_l)
                 for lo, hi in chunk_ranges(nl, max(1, size // len(ladder)))]
        diffs = np.concatenate(map_tasks(_zero_start_chunk, tasks, workers))
        meds = [float(m) for m in np.median(diffs, axis=0)]
        rep.values["ladder"] = ladder
        rep.values["ladder median weighted-L1 differences"] = meds
        rep.check_flag("coupled ladder differences strictly decreasing", strictly_decreasing(meds), measured=meds)
        rep.tables["ladder"] = (["T", "T_next", "median_weighted_L1"],
                                [[ladder[i], ladder[i + 1], meds[i]] for i in range(len(meds))])
    rep.runtime = time.perf_counter() - t0
    return rep


class _SitePool:
    """Values of ``sum_i gamma_i v(x_i + s)`` over a strided lattice of shifts ``s``."""

    def __init__(self, domain: DomainSpec, mu: MeasureSpec, stride: int):
        self.atoms = [(g, domain.snap(x)) for g, x in mu.atoms]
        self.stride = stride

    def __call__(self, v):
        out = 0.0
        for g, c in self.atoms:
            rolled = np.roll(v, shift=tuple(-i for i in c), axis=tuple(range(-len(c), 0)))
            out = out + g * rolled[(Ellipsis,) + (slice(None, None, self.stride),) * len(c)]
        return out.reshape(v.shape[0], -1)


def _flat_chunk(task):
    cfg, scheme, eps, T, lo, hi, offset, pool = task
    kernel = rescale_kernel(_kernel(cfg), eps, cfg.domain)
    rU = path_rngs(cfg.base_seed, range(offset + lo, offset + hi), "U")
    u, clipped = mshe_flat_batch(scheme, cfg.domain, kernel, T, rU, block=int(cfg.get("block", 64)))
    return pool(u), clipped


def attenuated_scheme(cfg: ExperimentConfig, eps: float) -> SchemeParams:
    """Couplings divided by ``sqrt(log 1/eps)`` and a step resolving the noise scale."""
    L = math.log(1.0 / eps)
    t = float(cfg.get("t"))
    h = cfg.kernel.half_width * eps
    steps = max(1, int(math.ceil(t / (float(cfg.get("dt_scale")) * h * h))))
    return replace(cfg.scheme, dt=t / steps, alpha=cfg.scheme.alpha / math.sqrt(L),
                   beta=cfg.scheme.beta / math.sqrt(L))


def run_2d_attenuated(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Log-attenuated 2D sweep over the noise scale eps."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    beta, alpha = cfg.scheme.beta, cfg.scheme.alpha
    eps_list = [float(e) for e in cfg.get("eps_list")]
    t = float(cfg.get("t"))
    size = int(cfg.get("chunk_size", 4))
    size = size if size <= 16 else 4
    pool = _SitePool(cfg.domain, cfg.measure, int(cfg.get("stride")))
    supercritical = beta >= SQRT_2PI
    if not supercritical and alpha > 0:
        raise ConfigError("the subcritical branch runs the u-version: set scheme.alpha = 0",
                          fields=("scheme.alpha", "scheme.beta"))
    rows, series = [], []
    for e, eps in enumerate(eps_list):
        sch = attenuated_scheme(cfg, eps)
        n_steps(t, sch.dt)
        offset = e * ENSEMBLE_STRIDE
        key = f"eps={eps:g}"
        if alpha > 0:
            tasks = [(cfg, sch, eps, t, lo, hi, offset, pool) for lo, hi in chunk_ranges(cfg.n_paths, size)]
            x = np.concatenate(map_tasks(_zero_start_chunk, tasks, workers)).ravel()
            c = alpha * cfg.measure.total_mass / beta
            ks = ks_distance(x, CauchyLaw(c).cdf)
            med, iqr = robust_summary(x)
            scale = ecf_fit(x, np.linspace(0.1, 1.6, 12) / c)
            rep.values[key] = {"ks": ks, "median": med, "iqr": iqr, "ecf_scale": scale, "n": int(x.size),
                               "dt": sch.dt, "beta_eps": sch.beta, "alpha_eps": sch.alpha}
            rows.append([eps, ks, iqr, scale])
            series.append(ks)
        else:
            tasks = [(cfg, sch, eps, t, lo, hi, offset, pool) for lo, hi in chunk_ranges(cfg.n_paths, size)]
            parts = map_tasks(_flat_chunk, tasks, workers)
            u = np.concatenate([p[0] for p in parts]).ravel()
            clipped = np.concatenate([p[1] for p in parts])
            cf = clip_fraction(clipped, n_steps(t, sch.dt) * cfg.domain.cells)
            rep.diagnostics[f"{key} clip fraction"] = cf
            kernel = rescale_kernel(_kernel(cfg), eps, cfg.domain)
            exact = flat_second_moment(sch, cfg.domain, kernel, t)
            vals = {"median": float(np.median(u)), "n": int(u.size), "dt": sch.dt, "beta_eps": sch.beta,
                    "exact_discrete_second_moment": exact}
            if not supercritical:
                vals.update(lognormal_subcritical_check(u, beta, trim=float(cfg.get("trim"))))
                series.append(vals["trimmed_second_moment"])
                rows.append([eps, vals["trimmed_second_moment"], exact, vals["target_second_moment"]])
            else:
                series.append(vals["median"])
                rows.append([eps, vals["median"], exact, float("nan")])
            rep.values[key] = vals
    if alpha > 0:
        rep.check_flag("KS vs Cauchy strictly decreasing in eps", strictly_decreasing(series), measured=series)
        rep.tables["eps_ks"] = (["eps", "ks", "iqr", "ecf_scale"], rows)
    elif supercritical:
        rep.check_flag("median u strictly decreasing in eps", strictly_decreasing(series), measured=series)
        rep.tables["eps_median"] = (["eps", "median_u", "exact_second_moment", "target"], rows)
    else:
        target = rep.values[f"eps={eps_list[-1]:g}"]["target_second_moment"]
        rep.check(f"trimmed second moment at eps={eps_list[-1]:g}, relative error",
                  abs(series[-1] / target - 1), "<", float(cfg.get("moment_tol")))
        rep.tables["eps_second_moment"] = (["eps", "trimmed_second_moment", "exact_discrete", "target"], rows)
    rep.runtime = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- fractional moments

def run_fractional_moment(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """``E[M_T^theta]`` along a start-time ladder."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    ladder = [float(T) for T in cfg.get("T_ladder")]
    dt = cfg.scheme.dt
    steps = [n_steps(T, dt) for T in ladder]
    every = math.gcd(*steps) if len(steps) > 1 else steps[0]
    scheme = replace(cfg.scheme, alpha=0.0)
    res = adjoint_ensemble(cfg, cfg.measure, scheme=scheme, T_max=max(ladder), record_every=every,
                           tau_levels=[0.0] + ladder, workers=workers)
    _clip_check(rep, res, "M")
    M = res["M_levels"]
    rows = []
    for theta in cfg.get("thetas"):
        theta = float(theta)
        est = [fractional_moment(M[:, j], theta, return_se=True) for j in range(M.shape[1])]
        m = [e[0] for e in est]
        se = [e[1] for e in est]
        key = f"theta={theta:g}"
        rep.values[key] = {"T": [0.0] + ladder, "m_hat": m, "se": se}
        rep.check(f"{key} m_hat(0)", abs(m[0] - 1.0), "<=", 0.0, note="M_0 is the mass of mu")
        rep.check_flag(f"{key} m_hat strictly decreasing", strictly_decreasing(m[1:]), measured=m[1:])
        sep = (m[1] - m[-1]) / math.hypot(se[1], se[-1])
        rep.check(f"{key} first-last separation in SE", sep, ">", float(cfg.get("sep_se")))
        rows += [[theta, T, mm, s] for T, mm, s in zip([0.0] + ladder, m, se)]
    rep.tables["m_hat"] = (["theta", "T", "m_hat", "se"], rows)
    rep.paths += _tag(rep, _path_records(res, "M"))
    rep.runtime = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- exploratory

def run_mixed_sign_explore(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Signed measure, split by linearity into two unsigned runs on shared noise.  No criteria."""
    t0 = time.perf_counter()
    rep = _report(cfg)
    pos = [(g, x) for g, x in cfg.measure.atoms if g > 0]
    neg = [(-g, x) for g, x in cfg.measure.atoms if g < 0]
    total = None
    for part in (pos, neg):
        if not part:
            continue
        res = adjoint_ensemble(cfg, MeasureSpec(part), workers=workers)
        sign = 1.0 if part is pos else -1.0
        if total is None:
            total = {k: sign * res[k] for k in ("M_end", "N_end")}
            total["clipped"] = res["clipped"].copy()
            total["cell_steps"] = res["cell_steps"]
        else:
            total["M_end"] = total["M_end"] + sign * res["M_end"]
            total["N_end"] = total["N_end"] + sign * res["N_end"]
            total["clipped"] = total["clipped"] + res["clipped"]
    N = total["N_end"]
    med, iqr = robust_summary(N)
    p = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99]
    rep.values["N_end quantiles"] = dict(zip([str(x) for x in p], np.quantile(N, p).tolist()))
    rep.values["N_end median"] = med
    rep.values["N_end iqr"] = iqr
    rep.values["signed mass"] = cfg.measure.total_mass
    rep.values["|M_end| median"] = float(np.median(np.abs(total["M_end"])))
    if iqr > 0:
        rep.values["ecf scale fit"] = ecf_fit(N, np.linspace(0.1, 1.6, 12) / (iqr / 2))
    rep.diagnostics["clip fraction"] = clip_fraction(total["clipped"], int(total["cell_steps"][0]))
    rep.runtime = time.perf_counter() - t0
    return rep


RUNNERS = {
    "prop15": run_prop15,
    "cauchy": run_strong_disorder_cauchy,
    "qv": run_qv_consistency,
    "weak-probe": run_weak_disorder_probe,
    "stationarity": run_stationarity_check,
    "attenuated-2d": run_2d_attenuated,
    "frac-moment": run_fractional_moment,
    "mixed-sign-explore": run_mixed_sign_explore,
}


def run_experiment(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    return RUNNERS[cfg.experiment](cfg, workers=workers)
