"""Quadratic-variation analysis and time change of the (M, N) martingale pair.

All functions accept single paths (1-D series) or bundles of paths with a
leading path axis; time always runs along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAlpha


@dataclass
class MartingalePath:
    """Recorded trajectory of ``(M_tau, N_tau)`` and its variation series.

    ``qv_M_inc``, ``qv_N_inc`` and ``cross_inc`` are running sums of
    increment products over every solver step; ``qv_M_formula`` is the
    integral expression for ``[M]`` accumulated during the run.
    """

    tau_grid: np.ndarray
    M: np.ndarray
    N: np.ndarray
    qv_M_inc: np.ndarray
    qv_N_inc: np.ndarray
    cross_inc: np.ndarray
    qv_M_formula: np.ndarray | None
    mu_mass: float
    alpha: float = 0.0
    beta: float = 1.0
    clipped: int = 0

    @classmethod
    def from_record(cls, rec, index=None):
        """Wrap an :class:`~amshe.solver.AdjointRecord` (one path or the whole bundle)."""
        sel = (lambda a: a[index]) if index is not None else (lambda a: a)
        return cls(
            tau_grid=rec.tau,
            M=sel(rec.M),
            N=sel(rec.N),
            qv_M_inc=sel(rec.qv_M),
            qv_N_inc=sel(rec.qv_N),
            cross_inc=sel(rec.cross),
            qv_M_formula=sel(rec.qv_formula),
            mu_mass=rec.mu_mass,
            alpha=rec.alpha,
            beta=rec.beta,
            clipped=int(np.sum(sel(rec.clipped))),
        )

    @property
    def n_paths(self) -> int:
        return 1 if self.M.ndim == 1 else self.M.shape[0]


@dataclass
class TimeChangedPath:
    q_grid: np.ndarray
    W: np.ndarray
    X: np.ndarray | None


def qv_increments(path: MartingalePath):
    """Running sums of ``(dM)^2``, ``(dN)^2`` and ``dM dN`` over the recorded samples."""
    if path.M.shape[-1] < 2:
        raise ValueError("need at least two recorded samples")
    dM = np.diff(path.M, axis=-1)
    dN = np.diff(path.N, axis=-1)
    pad = [(0, 0)] * (dM.ndim - 1) + [(1, 0)]
    run = lambda a: np.pad(np.cumsum(a, axis=-1), pad)
    return run(dM * dM), run(dN * dN), run(dM * dN)


def qv_formula(u_traj, kernel, params, domain):
    """Integral QV of ``M`` from stored fields ``u_traj[k]`` (pre-step values).

    Returns ``beta^2 * cumsum_k [ sum_z (phi*u_k)(z)^2 dx^d ] * dt`` with a
    leading zero, i.e. the value after each completed step.
    """
    u = np.asarray(u_traj, dtype=float)
    g = kernel.convolve(u)
    Q = (g * g).sum(axis=domain.axes) * domain.cell_volume
    return np.concatenate([[0.0], np.cumsum(params.beta**2 * params.dt * Q)])


def normalized_cross(path: MartingalePath) -> np.ndarray:
    """Terminal ``[M,N] / sqrt([M][N])`` per path."""
    qm, qn, c = path.qv_M_inc[..., -1], path.qv_N_inc[..., -1], path.cross_inc[..., -1]
    with np.errstate(invalid="ignore", divide="ignore"):
        return c / np.sqrt(qm * qn)


def time_change(path: MartingalePath, clock: str = "formula", with_x: bool = True) -> TimeChangedPath:
    """Reparametrise ``(M, N beta/alpha)`` by the quadratic variation of ``M``.

    ``clock="formula"`` uses the integral (predictable) QV when it was
    recorded, ``"increments"`` the realised sum of squared increments.
    """
    if clock == "formula" and path.qv_M_formula is not None:
        q = path.qv_M_formula
    else:
        q = path.qv_M_inc
    q = np.maximum.accumulate(q, axis=-1)
    X = None
    if with_x:
        if path.alpha == 0:
            raise DegenerateAlpha("X is undefined when alpha = 0")
        X = path.N * (path.beta / path.alpha)
    return TimeChangedPath(q_grid=q, W=path.M, X=X)


def sample_at_levels(tc: TimeChangedPath, levels) -> tuple:
    """Values of ``W`` and ``X`` where the clock first reaches each level.

    Linear interpolation between recorded samples; ``nan`` where the path's
    clock never reaches the level.  Output shape ``(..., len(levels))``.
    """
    levels = np.asarray(levels, dtype=float)
    q = np.atleast_2d(tc.q_grid)
    W = np.atleast_2d(tc.W)
    X = None if tc.X is None else np.atleast_2d(tc.X)
    P = q.shape[0]
    outW = np.full((P, len(levels)), np.nan)
    outX = np.full((P, len(levels)), np.nan)
    for p in range(P):
        qp = q[p]
        j = np.searchsorted(qp, levels, side="left")
        ok = j < len(qp)
        for li in np.flatnonzero(ok):
            k = j[li]
            if k == 0:
                outW[p, li] = W[p, 0]
                if X is not None:
                    outX[p, li] = X[p, 0]
                continue
            q0, q1 = qp[k - 1], qp[k]
            f = 0.0 if q1 == q0 else (levels[li] - q0) / (q1 - q0)
            outW[p, li] = W[p, k - 1] + f * (W[p, k] - W[p, k - 1])
            if X is not None:
                outX[p, li] = X[p, k - 1] + f * (X[p, k] - X[p, k - 1])
    if tc.q_grid.ndim == 1:
        return outW[0], (None if X is None else outX[0])
    return outW, (None if X is None else outX)


def binned_brownianity(tc: TimeChangedPath, edges) -> dict:
    """Increment statistics of the time-changed pair across consecutive q-bins.

    Only paths whose clock reaches the upper edge contribute to a bin.
    """
    edges = np.asarray(edges, dtype=float)
    W, X = sample_at_levels(tc, edges)
    W = np.atleast_2d(W)
    X = np.full_like(W, np.nan) if X is None else np.atleast_2d(X)
    bins = []
    for i in range(len(edges) - 1):
        ok = np.isfinite(W[:, i]) & np.isfinite(W[:, i + 1])
        dW = W[ok, i + 1] - W[ok, i]
        dX = X[ok, i + 1] - X[ok, i]
        width = edges[i + 1] - edges[i]
        has_x = tc.X is not None
        var_w = float(np.var(dW, ddof=1)) if dW.size > 1 else np.nan
        var_x = float(np.var(dX, ddof=1)) if has_x and dX.size > 1 else np.nan
        rho = float(np.corrcoef(dW, dX)[0, 1]) if has_x and dW.size > 2 else np.nan
        bins.append({
            "lo": float(edges[i]), "hi": float(edges[i + 1]), "width": float(width),
            "n": int(dW.size), "var_W": var_w, "var_X": var_x, "corr_WX": rho,
        })
    return {"bins": bins}


def terminal_extract(path: MartingalePath, strong_disorder_check: float = 1e-3):
    """Terminal ``(M, N)`` and the flag ``M_end < threshold``."""
    M_end = path.M[..., -1]
    N_end = path.N[..., -1]
    return M_end, N_end, M_end < strong_disorder_check
