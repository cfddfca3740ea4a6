"""Periodic grids, mollifier kernels and spatially correlated noise increments.

Noise increments are white in time with spatial covariance ``dt * R(x - x')``
where ``R = phi * phi``.  On the grid, ``R`` is the circular self-convolution
of the sampled mollifier weighted by ``dx**d``, so refining the grid keeps the
continuum covariance fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import (
    KernelTooWide,
    MemoryBudgetExceeded,
    UnresolvableKernel,
    UnsupportedWhiteNoise,
)

GEOMETRIES = ("torus", "line")
KERNEL_KINDS = ("white", "mollifier")
KERNEL_SHAPES = ("bump", "triangle")

DEFAULT_MAX_CELLS = 2**24


@dataclass(frozen=True)
class DomainSpec:
    """Periodic grid with ``points`` cells per axis on a box of side ``length``.

    ``geometry="torus"`` is the unit torus by default.  ``geometry="line"`` is
    a truncated copy of R^d wrapped periodically, centred at the origin.
    """

    dimension: int = 1
    points: int = 64
    geometry: str = "torus"
    length: float = 1.0
    max_cells: int = DEFAULT_MAX_CELLS

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if int(self.points) != self.points or self.points < 8:
            raise ValueError(f"points per axis must be an integer >= 8, got {self.points}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if self.cells > self.max_cells:
            raise MemoryBudgetExceeded(
                f"{self.points}^{self.dimension} = {self.cells} cells exceeds budget {self.max_cells}"
            )

    @property
    def dx(self) -> float:
        return self.length / self.points

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dimension

    @property
    def cells(self) -> int:
        return int(self.points) ** self.dimension

    @property
    def shape(self) -> tuple:
        return (int(self.points),) * self.dimension

    @property
    def axes(self) -> tuple:
        """FFT axes of a field array with any number of leading batch axes."""
        return tuple(range(-self.dimension, 0))

    def coords(self) -> np.ndarray:
        """Per-axis cell coordinates.

        Torus cells sit at ``j*dx``; line cells at ``(j - N/2)*dx`` so that the
        box centre is the origin.
        """
        j = np.arange(self.points)
        if self.geometry == "torus":
            return j * self.dx
        return (j - self.points // 2) * self.dx

    def displacement(self) -> list:
        """Minimum-image signed offsets of every cell from cell 0, per axis."""
        j = np.arange(self.points)
        off = np.where(j > self.points // 2, j - self.points, j) * self.dx
        return np.meshgrid(*([off] * self.dimension), indexing="ij")

    def radius_from_origin_cell(self) -> np.ndarray:
        return np.sqrt(sum(o**2 for o in self.displacement()))

    def radius_from_centre(self) -> np.ndarray:
        """Unwrapped Euclidean distance of each cell from the box centre."""
        c = self.coords()
        if self.geometry == "torus":
            c = c - self.length / 2
        grids = np.meshgrid(*([c] * self.dimension), indexing="ij")
        return np.sqrt(sum(g**2 for g in grids))

    def snap(self, x) -> tuple:
        """Index of the grid cell nearest to ``x``; a scalar is repeated along every axis."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size == 1:
            x = np.repeat(x, self.dimension)
        if x.size != self.dimension:
            raise ValueError(f"location {x} does not have dimension {self.dimension}")
        origin = 0.0 if self.geometry == "torus" else -(self.points // 2) * self.dx
        idx = np.rint((x - origin) / self.dx).astype(int) % self.points
        return tuple(int(i) for i in idx)

    @cached_property
    def wavenumber_sq(self) -> np.ndarray:
        """|k|^2 on the real-FFT half spectrum."""
        k = 2 * np.pi * sfft.fftfreq(self.points, d=self.dx)
        kr = 2 * np.pi * sfft.rfftfreq(self.points, d=self.dx)
        ks = [k] * (self.dimension - 1) + [kr]
        grids = np.meshgrid(*ks, indexing="ij")
        return sum(g**2 for g in grids)

    def heat_multiplier(self, dt: float) -> np.ndarray:
        return np.exp(-0.5 * dt * self.wavenumber_sq)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "points": int(self.points),
            "geometry": self.geometry,
            "length": float(self.length),
        }


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "mollifier"
    half_width: float = 0.125
    shape: str = "bump"
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if self.shape not in KERNEL_SHAPES:
            raise ValueError(f"kernel shape must be one of {KERNEL_SHAPES}, got {self.shape!r}")
        if self.kind == "mollifier" and not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.epsilon is not None and not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "half_width": float(self.half_width),
            "shape": self.shape,
            "epsilon": None if self.epsilon is None else float(self.epsilon),
        }


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Grid-sampled mollifier and the spectral data of its convolution.

    ``spectral`` multiplies the real FFT of a field to give the circular
    convolution ``sum_z phi(x - z) f(z) dx^d``.  ``R0`` is the discrete
    ``R(0) = sum phi^2 dx^d``.
    """

    phi_grid: np.ndarray
    R0: float
    spectral: np.ndarray
    spec: KernelSpec = field(default_factory=KernelSpec)
    domain: DomainSpec = field(default_factory=DomainSpec)

    @property
    def is_white(self) -> bool:
        return self.spec.kind == "white"

    def convolve(self, f: np.ndarray) -> np.ndarray:
        """Circular convolution with phi over the trailing grid axes of ``f``."""
        if self.is_white:
            return np.array(f, dtype=float, copy=True)
        axes = self.domain.axes
        return sfft.irfftn(sfft.rfftn(f, axes=axes) * self.spectral, s=self.domain.shape, axes=axes)

    def covariance(self) -> np.ndarray:
        """Discrete R(x) as a function of the offset from cell 0."""
        if self.is_white:
            r = np.zeros(self.domain.shape)
            r[(0,) * self.domain.dimension] = 1.0 / self.domain.cell_volume
            return r
        axes = self.domain.axes
        return sfft.irfftn(np.abs(self.spectral) ** 2, s=self.domain.shape, axes=axes) / self.domain.cell_volume

    def covariance_spectrum(self) -> np.ndarray:
        """Full-FFT transform of the discrete R; nonnegative up to roundoff."""
        return np.real(sfft.fftn(self.covariance() * self.domain.cell_volume))


def _profile(r: np.ndarray, shape: str) -> np.ndarray:
    """Unnormalised radial profile on the unit ball."""
    inside = r < 1
    out = np.zeros_like(r)
    if shape == "bump":
        rr = r[inside]
        out[inside] = np.exp(-1.0 / (1.0 - rr**2))
    else:
        out[inside] = 1.0 - r[inside]
    return out


def _sample_phi(domain: DomainSpec, shape: str, half_width: float) -> np.ndarray:
    phi = _profile(domain.radius_from_origin_cell() / half_width, shape)
    mass = phi.sum() * domain.cell_volume
    if mass <= 0:
        raise UnresolvableKernel(f"half_width {half_width} does not cover any grid cell")
    return phi / mass


def _from_phi(phi: np.ndarray, spec: KernelSpec, domain: DomainSpec) -> DiscreteKernel:
    vol = domain.cell_volume
    spectral = sfft.rfftn(phi, axes=domain.axes) * vol
    # phi is even on the grid, so its transform is real; drop roundoff.
    spectral = spectral.real.astype(complex)
    return DiscreteKernel(
        phi_grid=phi,
        R0=float(np.sum(phi**2) * vol),
        spectral=spectral,
        spec=spec,
        domain=domain,
    )


def build_kernel(spec: KernelSpec, domain: DomainSpec) -> DiscreteKernel:
    """Sample the mollifier of ``spec`` on ``domain``.

    White noise is only allowed in one dimension and yields a discrete delta
    kernel with ``R0 = 1/dx`` and identity convolution.
    """
    if spec.kind == "white":
        if domain.dimension != 1:
            raise UnsupportedWhiteNoise(
                "white-in-space noise is only defined for d=1",
                fields=("kernel.kind", "domain.dimension"),
            )
        phi = np.zeros(domain.shape)
        phi[0] = 1.0 / domain.dx
        return DiscreteKernel(
            phi_grid=phi,
            R0=1.0 / domain.dx,
            spectral=np.ones(domain.points // 2 + 1, dtype=complex),
            spec=spec,
            domain=domain,
        )
    if spec.half_width >= domain.length / 2:
        raise KernelTooWide(
            f"half_width {spec.half_width} must be below half the box side {domain.length / 2}"
        )
    base = _from_phi(_sample_phi(domain, spec.shape, spec.half_width), spec, domain)
    if spec.epsilon is not None and spec.epsilon != 1:
        return rescale_kernel(base, spec.epsilon, domain)
    return base


def rescale_kernel(kernel: DiscreteKernel, eps: float, domain: DomainSpec) -> DiscreteKernel:
    """Kernel whose covariance is ``eps**-2 R(y / eps)`` in two dimensions.

    The mollifier is resampled at half-width ``eps * h`` and renormalised to
    unit mass, which is ``phi_eps(y) = eps**-d phi(y / eps)``.
    """
    if domain.dimension != 2:
        raise ValueError("covariance rescaling is defined for d=2 only")
    if kernel.is_white:
        raise UnsupportedWhiteNoise("cannot rescale white noise", fields=("kernel.kind",))
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if eps == 1:
        return kernel
    h = kernel.spec.half_width * eps
    if h < 4 * domain.dx:
        raise UnresolvableKernel(
            f"rescaled half_width {h:.4g} spans fewer than 4 cells (dx={domain.dx:.4g})"
        )
    spec = KernelSpec(kind=kernel.spec.kind, half_width=kernel.spec.half_width,
                      shape=kernel.spec.shape, epsilon=eps)
    return _from_phi(_sample_phi(domain, spec.shape, h), spec, domain)


@dataclass
class NoiseSlice:
    """Noise increment over one step of length ``dt``, as a field of densities."""

    field: np.ndarray
    dt: float


def white_increments(rng, domain: DomainSpec, dt: float, size=()) -> np.ndarray:
    """Iid centred Gaussians of variance ``dt / dx^d`` per cell."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    return rng.standard_normal(shape + domain.shape) * np.sqrt(dt / domain.cell_volume)


def sample_noise_increment(rng, kernel: DiscreteKernel, domain: DomainSpec, dt: float, size=()) -> NoiseSlice:
    """Draw one increment with covariance ``dt * R_discrete(x - x')``.

    ``size`` prepends batch axes (independent slices).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = white_increments(rng, domain, dt, size)
    if kernel.is_white:
        return NoiseSlice(w, dt)
    return NoiseSlice(kernel.convolve(w), dt)
