import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amshe.domain import (
    DomainSpec,
    KernelSpec,
    build_kernel,
    rescale_kernel,
    sample_noise_increment,
    white_increments,
)
from amshe.errors import (
    KernelTooWide,
    MemoryBudgetExceeded,
    UnresolvableKernel,
    UnsupportedWhiteNoise,
)


def test_dx_is_derived():
    d = DomainSpec(points=80, length=3.0)
    assert d.points * d.dx == 3.0
    with pytest.raises(ValueError):
        DomainSpec(points=4)


def test_memory_budget():
    with pytest.raises(MemoryBudgetExceeded):
        DomainSpec(dimension=3, points=512, max_cells=2**24)


def test_white_kernel_r0():
    d = DomainSpec(points=10, length=1.0)
    k = build_kernel(KernelSpec(kind="white"), d)
    assert k.R0 == pytest.approx(10.0)
    f = np.random.default_rng(0).standard_normal(10)
    assert np.array_equal(k.convolve(f), f)


def test_white_needs_d1():
    with pytest.raises(UnsupportedWhiteNoise) as exc:
        build_kernel(KernelSpec(kind="white"), DomainSpec(dimension=2, points=16))
    assert "kernel.kind" in str(exc.value) and "domain.dimension" in str(exc.value)


def test_kernel_too_wide():
    with pytest.raises(KernelTooWide):
        build_kernel(KernelSpec(half_width=0.5), DomainSpec(points=64))


@pytest.mark.parametrize("shape", ["bump", "triangle"])
def test_covariance_mass_is_one(shape):
    d = DomainSpec(points=256)
    k = build_kernel(KernelSpec(half_width=0.1, shape=shape), d)
    assert np.all(k.phi_grid >= 0)
    assert k.phi_grid.sum() * d.dx == pytest.approx(1.0, abs=1e-12)
    assert k.covariance().sum() * d.dx == pytest.approx(1.0, abs=1e-6)
    assert k.R0 == pytest.approx(k.covariance()[0], rel=1e-10)


def test_support_inside_half_width():
    d = DomainSpec(points=256)
    k = build_kernel(KernelSpec(half_width=0.1), d)
    r = d.radius_from_origin_cell()
    assert np.all(k.phi_grid[r >= 0.1] == 0)


def test_2d_covariance_spectrum_nonnegative():
    d = DomainSpec(dimension=2, points=64)
    k = build_kernel(KernelSpec(half_width=0.2), d)
    spec = k.covariance_spectrum()
    assert spec.min() >= -1e-12 * spec.max()
    R = k.covariance()
    assert np.allclose(R, np.roll(np.flip(R), 1, axis=(0, 1)))


def test_rescale_identity_and_mass():
    d = DomainSpec(dimension=2, points=128)
    k = build_kernel(KernelSpec(half_width=0.25), d)
    assert rescale_kernel(k, 1.0, d) is k
    for eps in (0.5, 0.25):
        ke = rescale_kernel(k, eps, d)
        assert ke.covariance().sum() * d.cell_volume == pytest.approx(1.0, rel=1e-2)


def test_rescale_prefactor():
    # grid sums of the smooth bump converge fast; 16+ cells across suffice for 1e-6
    d = DomainSpec(dimension=2, points=256)
    k = build_kernel(KernelSpec(half_width=0.25), d)
    k2 = rescale_kernel(k, 0.5, d)
    assert abs(k2.R0 - 4 * k.R0) <= 1e-6 * 4 * k.R0


def test_rescale_unresolvable():
    d = DomainSpec(dimension=2, points=64)
    k = build_kernel(KernelSpec(half_width=0.25), d)
    with pytest.raises(UnresolvableKernel):
        rescale_kernel(k, 1 / 8, d)
    with pytest.raises(ValueError):
        rescale_kernel(build_kernel(KernelSpec(half_width=0.25), DomainSpec(points=64)), 0.5,
                       DomainSpec(points=64))


def test_white_increment_variance():
    d = DomainSpec(points=10)
    w = white_increments(np.random.default_rng(1), d, 0.01, size=20000)
    assert w.var() == pytest.approx(0.1, rel=0.02)


def test_mollified_variance_and_covariance():
    d = DomainSpec(points=32)
    k = build_kernel(KernelSpec(half_width=0.2), d)
    dt = 0.01
    n = 100_000
    x = sample_noise_increment(np.random.default_rng(2), k, d, dt, size=n).field
    R = k.covariance()
    emp = np.mean(x[:, :1] * x, axis=0)
    prod = x[:, :1] * x
    se = prod.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(emp - dt * R) < 4 * se + 1e-15)
    v = x[:, 0] ** 2
    assert abs(v.mean() - dt * k.R0) < 3 * v.std() / np.sqrt(n)


def test_independent_streams_uncorrelated():
    d = DomainSpec(points=32)
    k = build_kernel(KernelSpec(half_width=0.2), d)
    n = 50_000
    u = sample_noise_increment(np.random.default_rng(3), k, d, 0.01, size=n).field[:, 0]
    v = sample_noise_increment(np.random.default_rng(4), k, d, 0.01, size=n).field[:, 0]
    assert abs(np.corrcoef(u, v)[0, 1]) < 4 / np.sqrt(n)


def test_sampling_deterministic():
    d = DomainSpec(points=32)
    k = build_kernel(KernelSpec(half_width=0.2), d)
    a = sample_noise_increment(np.random.default_rng(5), k, d, 0.01).field
    b = sample_noise_increment(np.random.default_rng(5), k, d, 0.01).field
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_noise_increment(np.random.default_rng(5), k, d, 0.0)


@settings(max_examples=25, deadline=None)
@given(points=st.sampled_from([16, 32, 64]), length=st.floats(0.5, 4.0),
       x=st.floats(-10, 10), geometry=st.sampled_from(["torus", "line"]))
def test_snap_lands_on_nearest_cell(points, length, x, geometry):
    d = DomainSpec(points=points, length=length, geometry=geometry)
    (i,) = d.snap(x)
    c = d.coords()[i]
    gap = (c - x) % length
    assert min(gap, length - gap) <= d.dx / 2 + 1e-9


def test_scalar_snap_broadcasts():
    d = DomainSpec(dimension=3, points=16)
    assert d.snap(0.0) == (0, 0, 0)
