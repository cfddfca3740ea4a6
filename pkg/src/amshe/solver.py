"""Exponential-Euler Ito steppers for the multiplicative and additive-multiplicative SHE.

One step multiplies the pre-step field by the noise and then applies the exact
periodic heat semigroup ``exp(dt * Laplacian / 2)`` in Fourier space.  Because
the heat step conserves the zero mode, the total mass of the multiplicative
equation changes only through the noise term and is a martingale in
expectation.

Batched runs carry any number of leading path axes; every path draws its
noise from its own generator so results do not depend on how paths are
grouped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from .domain import DiscreteKernel, DomainSpec, KernelSpec, NoiseSlice
from .errors import DegenerateMeasure, WhiteNoiseUnsupported

ROLES = ("mshe_u", "amshe_v", "adjoint_u", "propagator_Z")
MULTIPLIERS = ("linear", "exponential")

# Runs whose clipped fraction of cell-steps exceeds this are flagged invalid.
CLIP_TOLERANCE = 1e-3
BUFFER_VALUES = 2**21


@dataclass
class FieldState:
    values: np.ndarray
    t: float = 0.0
    role: str = "mshe_u"
    clipped: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class SchemeParams:
    """Time step and coupling constants.

    ``multiplier="linear"`` is the plain Ito factor ``1 + beta*dU``;
    ``"exponential"`` uses ``exp(beta*dU - beta^2 R0 dt / 2)``, which has the
    same conditional mean and never goes negative.
    """

    dt: float
    alpha: float = 0.0
    beta: float = 1.0
    heat_step: str = "spectral-exact"
    multiplier: str = "linear"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.heat_step != "spectral-exact":
            raise ValueError("only the spectral-exact heat step is available")
        if self.multiplier not in MULTIPLIERS:
            raise ValueError(f"multiplier must be one of {MULTIPLIERS}")

    def validate(self, domain: DomainSpec, kernel: DiscreteKernel):
        if kernel.is_white and self.dt > domain.dx**2 / 2 * (1 + 1e-12):
            raise ValueError(
                f"white noise needs dt <= dx^2/2 = {domain.dx**2 / 2:.3g}, got dt={self.dt:.3g}"
            )

    def to_dict(self) -> dict:
        return {
            "dt": float(self.dt),
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "heat_step": self.heat_step,
            "multiplier": self.multiplier,
        }


def default_dt(domain: DomainSpec, kernel_spec: KernelSpec) -> float:
    if kernel_spec.kind == "white":
        return domain.dx**2 / 4
    return min(1e-3, domain.dx)


def n_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    return n


@dataclass
class MeasureSpec:
    """Finite combination of point masses ``sum gamma_i delta_{x_i}``.

    Atoms are snapped to the nearest grid cell.  Negative weights are only
    accepted with ``signed=True`` (exploratory mixed-sign runs).
    """

    atoms: list = field(default_factory=lambda: [(1.0, 0.0)])
    signed: bool = False

    def __post_init__(self):
        self.atoms = [(float(g), x) for g, x in self.atoms]
        if not self.signed and any(g < 0 for g, _ in self.atoms):
            raise ValueError("negative atom weight in an unsigned measure")

    @property
    def total_mass(self) -> float:
        return float(sum(g for g, _ in self.atoms))

    def density(self, domain: DomainSpec) -> np.ndarray:
        """Grid field with weight ``gamma_i / dx^d`` at each snapped atom."""
        f = np.zeros(domain.shape)
        for g, x in self.atoms:
            f[domain.snap(x)] += g / domain.cell_volume
        return f

    def shifted(self, cells: int, domain: DomainSpec) -> "MeasureSpec":
        """Same measure translated by ``cells`` grid cells along every axis."""
        off = cells * domain.dx
        return MeasureSpec([(g, np.asarray(x, dtype=float) + off) for g, x in self.atoms], self.signed)

    def to_dict(self) -> dict:
        return {
            "atoms": [[g, np.atleast_1d(x).astype(float).tolist()] for g, x in self.atoms],
            "signed": self.signed,
        }


# ---------------------------------------------------------------- single steps

def heat_step(state: FieldState, dt: float, domain: DomainSpec) -> FieldState:
    """Apply the exact periodic heat semigroup over time ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    axes = domain.axes
    out = sfft.irfftn(sfft.rfftn(state.values, axes=axes) * domain.heat_multiplier(dt),
                      s=domain.shape, axes=axes)
    return replace(state, values=out, t=state.t + dt)


def _noise_factor(dU: np.ndarray, params: SchemeParams, R0: float | None) -> np.ndarray:
    if params.multiplier == "linear":
        return 1.0 + params.beta * dU
    if R0 is None:
        raise ValueError("the exponential multiplier needs the kernel's R0")
    return np.exp(params.beta * dU - 0.5 * params.beta**2 * R0 * params.dt)


def _clip_factor(fac: np.ndarray, paths: int) -> np.ndarray:
    """Zero the noise factor in place where it went negative; returns per-path counts."""
    neg = fac < 0
    if not neg.any():
        return np.zeros(paths, dtype=np.int64)
    fac[neg] = 0.0
    return neg.reshape(paths, -1).sum(axis=1)


def mshe_step(state: FieldState, dU: NoiseSlice, params: SchemeParams, domain: DomainSpec,
              R0: float | None = None) -> FieldState:
    """One step ``u <- heat(u * max(1 + beta dU, 0))``; clipped cells are counted.

    Clipping the factor rather than the product keeps the step linear in ``u``.
    """
    if state.role == "amshe_v":
        raise ValueError("mshe_step does not apply to amshe_v fields")
    fac = _noise_factor(dU.field, params, R0)
    neg = fac < 0
    n = int(np.count_nonzero(neg))
    if n:
        fac = np.where(neg, 0.0, fac)
    out = heat_step(replace(state, values=state.values * fac), params.dt, domain)
    return replace(out, clipped=state.clipped + n)


def amshe_step(state: FieldState, dU: NoiseSlice, dV: NoiseSlice, params: SchemeParams,
               domain: DomainSpec, R0: float | None = None) -> FieldState:
    """One step ``v <- heat(v + beta v dU + alpha dV)``; ``v`` is signed."""
    if state.role != "amshe_v":
        raise ValueError("amshe_step expects an amshe_v field")
    v = state.values
    pre = v * _noise_factor(dU.field, params, R0) + params.alpha * dV.field
    return heat_step(replace(state, values=pre), params.dt, domain)


# ---------------------------------------------------------------- noise streams

class NoiseStreams:
    """Standard normal fields for a batch of paths, one generator per path.

    Each generator fills a block of ``block`` future steps at a time.  A
    generator emits the same numbers whatever the block size, so a path
    replayed alone reproduces its batched trajectory.
    """

    def __init__(self, rngs, grid_shape, block=64):
        self.rngs = list(rngs)
        self.grid_shape = tuple(grid_shape)
        per_step = max(1, len(self.rngs) * int(np.prod(self.grid_shape)))
        # keep the buffer near 16 MB; the block size never changes the numbers drawn
        self.block = max(1, min(int(block), BUFFER_VALUES // per_step))
        self._buf = np.empty((len(self.rngs), self.block) + self.grid_shape)
        self._pos = self.block

    def _refill(self):
        for p, rng in enumerate(self.rngs):
            rng.standard_normal(out=self._buf[p])
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos == self.block:
            self._refill()
        z = self._buf[:, self._pos]
        self._pos += 1
        return z


def _as_rngs(rng, count):
    if isinstance(rng, (list, tuple)):
        return list(rng)
    return list(rng.spawn(count))


class _Stepper:
    """Precomputed spectral data shared by every step of a batched run."""

    def __init__(self, domain: DomainSpec, kernel: DiscreteKernel, params: SchemeParams):
        params.validate(domain, kernel)
        self.domain = domain
        self.kernel = kernel
        self.params = params
        self.axes = domain.axes
        self.shape = domain.shape
        self.vol = domain.cell_volume
        self.mult = domain.heat_multiplier(params.dt)
        self.scale = math.sqrt(params.dt / self.vol)
        self.zero = (Ellipsis,) + (0,) * domain.dimension

    def rfft(self, f):
        return sfft.rfftn(f, axes=self.axes)

    def irfft(self, F):
        return sfft.irfftn(F, s=self.shape, axes=self.axes)

    def smooth(self, F):
        """phi-convolution of the field whose spectrum is ``F``."""
        if self.kernel.is_white:
            return self.irfft(F)
        return self.irfft(F * self.kernel.spectral)

    def noise(self, z):
        w = z * self.scale
        if self.kernel.is_white:
            return w
        return self.irfft(self.rfft(w) * self.kernel.spectral)

    def factor(self, dU):
        return _noise_factor(dU, self.params, self.kernel.R0)

    def total(self, f):
        return f.sum(axis=self.axes) * self.vol


# ---------------------------------------------------------------- batched runs

@dataclass
class ZeroStartResult:
    values: np.ndarray          # terminal fields, shape (P, *grid) or (rungs, P, *grid)
    T: np.ndarray
    clipped: np.ndarray


def zero_start_batch(params: SchemeParams, domain: DomainSpec, kernel: DiscreteKernel, T,
                     rngs_U, rngs_V, block=64) -> ZeroStartResult:
    """Zero-start AMSHE runs from time ``-T`` to 0 for a batch of paths.

    ``T`` may be a list of start times: the runs are then coupled, sharing
    the noise on their common time window, and the result has a leading rung
    axis in the order given.
    """
    Ts = np.atleast_1d(np.asarray(T, dtype=float))
    st = _Stepper(domain, kernel, params)
    counts = np.array([n_steps(t, params.dt) for t in Ts])
    total = int(counts.max())
    P = len(rngs_U)
    v = np.zeros((len(Ts), P) + domain.shape)
    if params.alpha == 0 or total == 0:
        out = v if np.ndim(T) else v[0]
        return ZeroStartResult(out, Ts, np.zeros(P, dtype=int))
    sU = NoiseStreams(rngs_U, domain.shape, block)
    sV = NoiseStreams(rngs_V, domain.shape, block)
    for step in range(total):
        dU = st.noise(sU.next())
        dV = st.noise(sV.next())
        active = np.flatnonzero(total - counts <= step)
        for r in active:
            pre = v[r] * st.factor(dU) + params.alpha * dV
            v[r] = st.irfft(st.rfft(pre) * st.mult)
    out = v if np.ndim(T) else v[0]
    return ZeroStartResult(out, Ts, np.zeros(P, dtype=int))


def mshe_flat_batch(params: SchemeParams, domain: DomainSpec, kernel: DiscreteKernel, T: float,
                    rngs_U, block=64, initial=1.0):
    """MSHE from a constant initial field over time ``T``; returns (fields, clipped)."""
    st = _Stepper(domain, kernel, params)
    u = np.full((len(rngs_U),) + domain.shape, float(initial))
    clipped = np.zeros(len(rngs_U), dtype=np.int64)
    sU = NoiseStreams(rngs_U, domain.shape, block)
    for _ in range(n_steps(T, params.dt)):
        fac = st.factor(st.noise(sU.next()))
        clipped += _clip_factor(fac, len(u))
        u = st.irfft(st.rfft(u * fac) * st.mult)
    return u, clipped


def run_zero_start(params: SchemeParams, domain: DomainSpec, kernel: DiscreteKernel, T: float, rng) -> FieldState:
    """Simulate ``v`` from 0 at time ``-T`` to time 0 with fresh noise."""
    rU, rV = _as_rngs(rng, 2)
    res = zero_start_batch(params, domain, kernel, T, [rU], [rV])
    return FieldState(values=res.values[0], t=0.0, role="amshe_v")


@dataclass
class AdjointRecord:
    """Raw output of a batched adjoint run (leading path axis on every series)."""

    tau: np.ndarray
    M: np.ndarray
    N: np.ndarray
    qv_M: np.ndarray
    qv_N: np.ndarray
    cross: np.ndarray
    qv_formula: np.ndarray
    clipped: np.ndarray
    cell_steps: int
    mu_mass: float
    alpha: float
    beta: float


def adjoint_batch(mu: MeasureSpec, params: SchemeParams, domain: DomainSpec, kernel: DiscreteKernel,
                  T_max: float, record_every: int, rngs_U, rngs_V, block=64) -> AdjointRecord:
    """Adjoint MSHE runs realising ``M_tau(mu)`` and ``N_tau(mu)`` for a batch of paths.

    ``u`` starts from the atoms of ``mu`` and follows the MSHE driven by the
    U-streams.  Each step adds ``dN = alpha * sum(u * dV) dx^d`` with ``dV``
    drawn from the V-streams, evaluated on the pre-step field.  The QV
    series are running sums over every step, the formula series is
    ``beta^2 * sum_tau [sum_z (phi*u)^2 dx^d] dt``.
    """
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    st = _Stepper(domain, kernel, params)
    steps = n_steps(T_max, params.dt)
    P = len(rngs_U)
    a, b, dt, vol = params.alpha, params.beta, params.dt, st.vol

    rec_steps = list(range(0, steps + 1, record_every))
    if rec_steps[-1] != steps:
        rec_steps.append(steps)
    R = len(rec_steps)
    out = {k: np.zeros((P, R)) for k in ("M", "N", "qv_M", "qv_N", "cross", "qv_formula")}

    u = np.broadcast_to(mu.density(domain), (P,) + domain.shape).copy()
    F = st.rfft(u)
    M = np.full(P, mu.total_mass)
    N = np.zeros(P)
    acc = {k: np.zeros(P) for k in ("qv_M", "qv_N", "cross", "qv_formula")}
    clipped = np.zeros(P, dtype=np.int64)
    out["M"][:, 0] = M

    sU = NoiseStreams(rngs_U, domain.shape, block)
    sV = NoiseStreams(rngs_V, domain.shape, block) if a > 0 else None
    r = 1
    for step in range(1, steps + 1):
        zU = sU.next()
        g = st.smooth(F)
        Q = st.total(g * g)
        if sV is not None:
            dN = a * st.total(g * sV.next()) * st.scale
        else:
            dN = np.zeros(P)
        fac = st.factor(st.noise(zU))
        clipped += _clip_factor(fac, P)
        F = st.rfft(u * fac) * st.mult
        u = st.irfft(F)
        M_new = F[st.zero].real * vol
        dM = M_new - M
        acc["qv_M"] += dM * dM
        acc["qv_N"] += dN * dN
        acc["cross"] += dM * dN
        acc["qv_formula"] += (b * b * dt) * Q
        M = M_new
        N = N + dN
        if r < R and step == rec_steps[r]:
            out["M"][:, r] = M
            out["N"][:, r] = N
            for k, val in acc.items():
                out[k][:, r] = val
            r += 1
    tau = np.array(rec_steps) * dt
    return AdjointRecord(tau=tau, clipped=clipped, cell_steps=steps * domain.cells,
                         mu_mass=mu.total_mass, alpha=a, beta=b, **out)


def adjoint_martingale_run(mu: MeasureSpec, params: SchemeParams, domain: DomainSpec,
                           kernel: DiscreteKernel, T_max: float, record_every: int, rng,
                           cauchy_normalized: bool = False):
    """One adjoint run; returns a :class:`~amshe.martingale.MartingalePath`.

    ``rng`` is either a Generator (two child streams are spawned for U and V)
    or a pair of Generators.
    """
    from .martingale import MartingalePath

    if cauchy_normalized and mu.total_mass == 0:
        raise DegenerateMeasure("Cauchy normalisation needs a measure with positive mass")
    rU, rV = _as_rngs(rng, 2)
    rec = adjoint_batch(mu, params, domain, kernel, T_max, record_every, [rU], [rV])
    return MartingalePath.from_record(rec, index=0)


# ---------------------------------------------------------------- propagator

@dataclass
class FrozenNoise:
    """Stored noise realisation: ``slices[k]`` drives the step from ``t0 + k*dt``."""

    domain: DomainSpec
    kernel_spec: KernelSpec
    dt: float
    seed: int
    slices: np.ndarray
    t0: float = 0.0

    MAGIC = b"AMSHE-NOISE\x00"

    @classmethod
    def generate(cls, domain, kernel: DiscreteKernel, dt, n_steps_, seed, t0=0.0):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n_steps_,) + domain.shape) * math.sqrt(dt / domain.cell_volume)
        slices = z if kernel.is_white else kernel.convolve(z)
        return cls(domain, kernel.spec, dt, int(seed), slices, t0)

    @classmethod
    def zeros(cls, domain, kernel_spec, dt, n_steps_, t0=0.0):
        return cls(domain, kernel_spec, dt, 0, np.zeros((n_steps_,) + domain.shape), t0)

    def index(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        if abs(self.t0 + k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the noise grid")
        return k

    def window(self, s, t):
        k0, k1 = self.index(s), self.index(t)
        if not 0 <= k0 < k1 <= len(self.slices):
            raise ValueError(f"frozen noise does not cover [{s}, {t}]")
        return self.slices[k0:k1]

    def shifted(self, cells: int) -> "FrozenNoise":
        axes = tuple(range(1, self.domain.dimension + 1))
        return replace(self, slices=np.roll(self.slices, cells, axis=axes))

    def save(self, path):
        header = json.dumps({
            "domain": self.domain.to_dict(),
            "kernel": self.kernel_spec.to_dict(),
            "dt": self.dt,
            "seed": self.seed,
            "t0": self.t0,
            "shape": list(self.slices.shape),
        }).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.slices, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(len(cls.MAGIC)) != cls.MAGIC:
                raise ValueError(f"{path} is not a frozen-noise record")
            n = int.from_bytes(fh.read(8), "little")
            head = json.loads(fh.read(n))
            body = np.frombuffer(fh.read(), dtype="<f8").reshape(head["shape"])
        return cls(DomainSpec(**head["domain"]), KernelSpec(**head["kernel"]), head["dt"],
                   head["seed"], body.copy(), head["t0"])


def propagate(u0: np.ndarray, params: SchemeParams, domain: DomainSpec, slices, R0=None):
    """Run the linear MSHE scheme from ``u0`` against fixed noise slices."""
    st = FieldState(np.array(u0, dtype=float), role="propagator_Z")
    for dU in slices:
        st = mshe_step(st, NoiseSlice(dU, params.dt), params, domain, R0)
    return st


def propagator_run(s, t, y, params: SchemeParams, domain: DomainSpec, kernel: DiscreteKernel,
                   frozen_noise: FrozenNoise) -> FieldState:
    """``Z_{s,t}(y, .)``: the scheme started from a discrete delta at ``y``."""
    if not s < t:
        raise ValueError("need s < t")
    u0 = np.zeros(domain.shape)
    u0[domain.snap(y)] = 1.0 / domain.cell_volume
    out = propagate(u0, params, domain, frozen_noise.window(s, t), kernel.R0)
    return replace(out, t=t)


def periodic_heat_kernel(x, t: float, domain: DomainSpec, windings: int = 6) -> float:
    """Heat kernel ``G_t(x)`` periodised over the box."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = domain.length
    m = np.arange(-windings, windings + 1) * L
    per_axis = [np.sum(np.exp(-(xi + m) ** 2 / (2 * t))) / math.sqrt(2 * math.pi * t) for xi in x]
    return float(np.prod(per_axis))


def feynman_kac_oracle(s, t, y, x, params: SchemeParams, domain: DomainSpec, kernel: DiscreteKernel,
                       frozen_noise: FrozenNoise, n_bridges: int, rng, windings: int = 6) -> float:
    """Brownian-bridge estimate of ``Z_{s,t}(y, x)`` on a frozen noise realisation.

    Bridges run from ``y`` to a periodic image ``x + m L`` chosen with weight
    ``G(x + m L - y)``; at each step start the bridge reads the noise slice at
    its nearest cell.
    """
    if kernel.is_white:
        raise WhiteNoiseUnsupported("the Feynman-Kac formula is singular for white noise")
    slices = frozen_noise.window(s, t)
    span = t - s
    d = domain.dimension
    L = domain.length
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    G = periodic_heat_kernel(x - y, span, domain, windings)
    if params.beta == 0:
        return G
    n = len(slices)
    m = np.arange(-windings, windings + 1)
    ends = np.empty((n_bridges, d))
    for ax in range(d):
        w = np.exp(-(x[ax] - y[ax] + m * L) ** 2 / (2 * span))
        ends[:, ax] = x[ax] + L * rng.choice(m, size=n_bridges, p=w / w.sum())
    times = np.arange(n) * params.dt                        # step start times relative to s
    steps = rng.standard_normal((n_bridges, n, d)) * math.sqrt(params.dt)
    W = np.concatenate([np.zeros((n_bridges, 1, d)), np.cumsum(steps, axis=1)], axis=1)
    W_end = W[:, -1:, :]
    W = W[:, :n, :]
    frac = (times / span)[None, :, None]
    pos = y[None, None, :] + frac * (ends[:, None, :] - y[None, None, :]) + W - frac * W_end
    origin = 0.0 if domain.geometry == "torus" else -(domain.points // 2) * domain.dx
    idx = np.rint((pos - origin) / domain.dx).astype(np.int64) % domain.points
    k = np.broadcast_to(np.arange(n)[None, :], (n_bridges, n))
    vals = slices[(k,) + tuple(idx[..., ax] for ax in range(d))]
    expo = params.beta * vals.sum(axis=1) - 0.5 * params.beta**2 * kernel.R0 * span
    return G * float(np.mean(np.exp(expo)))


def clip_fraction(clipped, cell_steps) -> float:
    return float(np.sum(clipped)) / max(1, cell_steps * np.size(clipped))


def flat_second_moment(params: SchemeParams, domain: DomainSpec, kernel: DiscreteKernel, T: float) -> float:
    """Exact ``E[u_T(x)^2]`` of the discrete MSHE scheme started from ``u = 1``.

    The two-point function ``w(y) = E[u(x) u(x+y)]`` obeys a deterministic
    recursion: the noise multiplies it by ``1 + beta^2 dt R(y)`` (or
    ``exp(beta^2 dt R(y))`` for the exponential multiplier) and the two heat
    steps act as one heat step of doubled rate on ``y``.  Clipping is ignored.
    """
    R = kernel.covariance()
    b2dt = params.beta**2 * params.dt
    fac = np.exp(b2dt * R) if params.multiplier == "exponential" else 1.0 + b2dt * R
    mult = np.exp(-params.dt * domain.wavenumber_sq)
    w = np.ones(domain.shape)
    for _ in range(n_steps(T, params.dt)):
        w = sfft.irfftn(sfft.rfftn(w * fac) * mult, s=domain.shape)
    return float(w[(0,) * domain.dimension])
