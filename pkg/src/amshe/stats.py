"""Heavy-tail-safe distribution checks.

Nothing here uses sample means of possibly Cauchy-distributed data: the
Cauchy tests rely on the KS distance, quantiles and the empirical
characteristic function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGrid, EmptySample, NegativeSample, RunawayPath, SupercriticalBeta

SQRT_2PI = math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class CauchyLaw:
    """Symmetric Cauchy law with scale ``c``; ``c = 0`` is the point mass at 0."""

    c: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("Cauchy scale must be nonnegative")

    def cdf(self, x):
        return cauchy_cdf(x, self)

    def cdf_left(self, x):
        """Left limit ``P(X < x)``; differs from :meth:`cdf` only at the atom of ``c = 0``."""
        x = np.asarray(x, dtype=float)
        if self.c == 0:
            return np.where(x > 0, 1.0, 0.0)
        return cauchy_cdf(x, self)

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        return self.c * np.tan(np.pi * (p - 0.5))

    def sample(self, rng, size):
        return self.c * rng.standard_cauchy(size)


def cauchy_cdf(x, law: CauchyLaw):
    x = np.asarray(x, dtype=float)
    if law.c == 0:
        return np.where(x >= 0, 1.0, 0.0)
    return 0.5 + np.arctan(x / law.c) / np.pi


@dataclass
class DistReport:
    n: int
    ks: float
    median: float
    iqr: float
    ecf_scale_fit: float
    ecf_residual: float = float("nan")
    passed: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "n": self.n, "ks": self.ks, "median": self.median, "iqr": self.iqr,
            "ecf_scale_fit": self.ecf_scale_fit, "ecf_residual": self.ecf_residual,
            "pass": dict(self.passed),
        }


def ks_distance(samples, cdf, cdf_left=None) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``.

    For laws with atoms pass ``cdf_left`` (the left limits) so the distance
    is taken between the two step functions rather than the continuous bound.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise EmptySample("KS distance needs at least two samples")
    F = np.asarray(cdf(x), dtype=float)
    Fl = F if cdf_left is None else np.asarray(cdf_left(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(Fl - (i - 1) / n)))


def ks_two_sample(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size < 2 or b.size < 2:
        raise EmptySample("two-sample KS needs at least two samples per side")
    grid = np.concatenate([a, b])
    Fa = np.searchsorted(a, grid, side="right") / a.size
    Fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(Fa - Fb)))


def ks_null_quantile(n: int, q: float = 0.99, reps: int = 2000, rng=None) -> float:
    """``q``-quantile of the one-sample KS statistic at sample size ``n``.

    Simulated with uniform samples against the uniform CDF; the statistic is
    distribution-free for continuous laws.
    """
    rng = np.random.default_rng(rng)
    stats = np.empty(reps)
    i = np.arange(1, n + 1)
    for r in range(reps):
        u = np.sort(rng.random(n))
        stats[r] = max(np.max(i / n - u), np.max(u - (i - 1) / n))
    return float(np.quantile(stats, q))


def ks_two_sample_null_quantile(a, b, q: float = 0.99, reps: int = 500, rng=None) -> float:
    """Permutation null of the two-sample KS statistic for the pooled data."""
    rng = np.random.default_rng(rng)
    pooled = np.concatenate([np.ravel(a), np.ravel(b)])
    na = np.size(a)
    stats = np.empty(reps)
    for r in range(reps):
        perm = rng.permutation(pooled)
        stats[r] = ks_two_sample(perm[:na], perm[na:])
    return float(np.quantile(stats, q))


def default_lambda_grid(samples, points: int = 12) -> np.ndarray:
    """Frequencies where a Cauchy ECF decays from about 0.9 to 0.2."""
    med, iqr = robust_summary(samples)
    c = iqr / 2 if iqr > 0 else 1.0
    return np.linspace(0.1, 1.6, points) / c


def ecf_fit(samples, lambda_grid, full_output: bool = False):
    """Fit ``|E exp(i lambda X)| = exp(-c |lambda|)`` by least squares through the origin.

    With ``full_output`` also returns the relative RMS residual of the fit,
    which is large when ``-log|ECF|`` is not linear in lambda.
    """
    lam = np.asarray(lambda_grid, dtype=float)
    if lam.size < 3 or np.any(lam <= 0):
        raise DegenerateGrid("lambda grid needs at least three positive points")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("no samples")
    ecf = np.abs(np.mean(np.exp(1j * np.outer(lam, x)), axis=1))
    y = -np.log(np.maximum(ecf, 1e-300))
    c = float(np.dot(lam, y) / np.dot(lam, lam))
    resid = y - c * lam
    scale = np.sqrt(np.mean(y * y))
    rel = float(np.sqrt(np.mean(resid * resid)) / scale) if scale > 0 else 0.0
    return (c, rel) if full_output else c


def robust_summary(samples):
    """Sample median and interquartile range (linear interpolation quartiles)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("no samples")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return float(med), float(q3 - q1)


def cauchy_report(samples, c: float, ks_tol: float | None = None) -> DistReport:
    law = CauchyLaw(c)
    x = np.asarray(samples, dtype=float).ravel()
    med, iqr = robust_summary(x)
    ks = ks_distance(x, law.cdf, law.cdf_left)
    if c > 0:
        scale, resid = ecf_fit(x, np.linspace(0.1, 1.6, 12) / c, full_output=True)
    else:
        scale, resid = (0.0, 0.0) if np.all(x == 0) else (float("nan"), float("nan"))
    rep = DistReport(n=x.size, ks=ks, median=med, iqr=iqr, ecf_scale_fit=scale, ecf_residual=resid)
    if ks_tol is not None:
        rep.passed["ks"] = bool(ks < ks_tol)
    return rep


def fractional_moment(samples, theta: float, return_se: bool = False):
    """Sample mean of ``M**theta`` for nonnegative samples."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("no samples")
    if np.any(x < 0):
        raise NegativeSample("fractional moments need nonnegative samples")
    y = x**theta
    m = float(np.mean(y))
    if return_se:
        se = float(np.std(y, ddof=1) / math.sqrt(y.size)) if y.size > 1 else float("nan")
        return m, se
    return m


def lognormal_target(beta: float):
    """Second moment ``1/(1 - beta^2/2pi)`` and log-variance of the subcritical limit."""
    if beta >= SQRT_2PI:
        raise SupercriticalBeta(f"beta={beta} is not below sqrt(2 pi)")
    s = beta**2 / (2 * math.pi)
    return 1.0 / (1.0 - s), math.log(1.0 / (1.0 - s))


def lognormal_subcritical_check(samples, beta: float, trim: float = 1e-3) -> dict:
    """Compare positive samples with ``exp(Z - Var Z / 2)``, ``Z ~ N(0, sigma^2)``."""
    second, sigma2 = lognormal_target(beta)
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 4:
        raise EmptySample("need at least four samples")
    cut = np.quantile(x, 1 - trim) if trim > 0 else np.inf
    xt = x[x <= cut]
    m2 = float(np.mean(x * x))
    m2t = float(np.mean(xt * xt))
    pos = x[x > 0]
    logs = np.log(pos) if pos.size else np.array([np.nan])
    return {
        "beta": beta,
        "target_second_moment": second,
        "second_moment": m2,
        "trimmed_second_moment": m2t,
        "trim": trim,
        "trim_sensitivity": m2 - m2t,
        "rel_error_trimmed": m2t / second - 1,
        "target_log_mean": -0.5 * sigma2,
        "target_log_var": sigma2,
        "log_mean": float(np.mean(logs)),
        "log_var": float(np.var(logs, ddof=1)) if logs.size > 1 else float("nan"),
        "n": int(x.size),
    }


def brownian_halfplane_oracle(a: float, dt: float, rng, size=None, max_steps: int = 10**7,
                              adaptive: float = 0.01):
    """Exit ordinate of planar Brownian motion started at ``(a, 0)`` from ``{x > 0}``.

    Each step checks the Brownian-bridge crossing probability
    ``exp(-2 x0 x1 / dt)`` so crossings between grid times are not missed.
    On a detected crossing the ordinate is drawn from the y-bridge at the
    fraction ``x0 / (x0 + x1)`` of the step.  Steps are
    ``max(dt, adaptive * x^2)``: Gaussian increments and the crossing test are
    exact for any step length, and a crossing is only likely once ``x`` is
    within a few ``sqrt(dt)`` of the boundary, where the step is ``dt``.
    ``adaptive=0`` gives fixed steps.
    """
    if a < 0:
        raise ValueError("start depth must be nonnegative")
    scalar = size is None
    n = 1 if scalar else int(np.prod(size))
    out = np.zeros(n)
    if a == 0:
        return 0.0 if scalar else out.reshape(size)
    x = np.full(n, float(a))
    y = np.zeros(n)
    live = np.arange(n)
    steps = 0
    while live.size:
        if steps >= max_steps:
            raise RunawayPath(f"{live.size} of {n} paths still inside after {max_steps} steps "
                              f"(fraction {live.size / n:.2e})")
        x0, y0 = x[live], y[live]
        h = np.maximum(dt, adaptive * x0 * x0) if adaptive else np.full(live.size, dt)
        sh = np.sqrt(h)
        x1 = x0 + sh * rng.standard_normal(live.size)
        y1 = y0 + sh * rng.standard_normal(live.size)
        crossed = x1 <= 0
        pos = ~crossed
        p_hit = np.zeros(live.size)
        p_hit[pos] = np.exp(-2.0 * x0[pos] * x1[pos] / h[pos])
        bridged = pos & (rng.random(live.size) < p_hit)
        hit = crossed | bridged
        if hit.any():
            xa, xb = x0[hit], np.abs(x1[hit])
            s = xa / (xa + xb)
            mean = y0[hit] + s * (y1[hit] - y0[hit])
            sd = np.sqrt(s * (1 - s) * h[hit])
            out[live[hit]] = mean + sd * rng.standard_normal(mean.size)
        x[live] = x1
        y[live] = y1
        live = live[~hit]
        steps += 1
    return float(out[0]) if scalar else out.reshape(size)


def weighted_lp_norm(field, p: float, xi: float, domain) -> float:
    """``(sum |z|^p w^p dx^d)^(1/p)``; ``w = 1`` on the torus, ``exp(-xi |x|)`` on the line."""
    if p < 1:
        raise ValueError("p must be >= 1")
    z = np.asarray(getattr(field, "values", field), dtype=float)
    if domain.geometry == "torus":
        wp = 1.0
    else:
        wp = np.exp(-xi * p * domain.radius_from_centre())
    total = np.sum(np.abs(z) ** p * wp, axis=domain.axes) * domain.cell_volume
    return total ** (1.0 / p)
