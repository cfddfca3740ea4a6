import math

import numpy as np
import pytest

from amshe.domain import DomainSpec, KernelSpec, NoiseSlice, build_kernel, sample_noise_increment
from amshe.errors import WhiteNoiseUnsupported
from amshe.solver import (
    FieldState,
    FrozenNoise,
    MeasureSpec,
    SchemeParams,
    adjoint_batch,
    adjoint_martingale_run,
    amshe_step,
    default_dt,
    feynman_kac_oracle,
    flat_second_moment,
    heat_step,
    mshe_flat_batch,
    mshe_step,
    n_steps,
    periodic_heat_kernel,
    propagate,
    propagator_run,
    run_zero_start,
    zero_start_batch,
)
from amshe.stats import ks_two_sample


def rngs(seed, n):
    return [np.random.default_rng([seed, i]) for i in range(n)]


@pytest.fixture
def torus32():
    d = DomainSpec(points=32)
    return d, build_kernel(KernelSpec(half_width=0.2), d)


# ---------------------------------------------------------------- heat step

def test_heat_constant():
    d = DomainSpec(points=64)
    out = heat_step(FieldState(np.full(64, 2.5)), 0.01, d)
    assert np.allclose(out.values, 2.5, atol=1e-14, rtol=0)
    assert out.t == 0.01


def test_heat_single_mode():
    d = DomainSpec(points=64, length=2.0)
    x = d.coords()
    dt = 0.003
    out = heat_step(FieldState(np.cos(2 * np.pi * x / 2.0)), dt, d).values
    expect = np.exp(-((2 * np.pi / 2.0) ** 2) * dt / 2) * np.cos(2 * np.pi * x / 2.0)
    assert np.max(np.abs(out - expect)) < 1e-12


def test_heat_conserves_mass_2d():
    d = DomainSpec(dimension=2, points=32)
    f = np.random.default_rng(0).random(d.shape)
    out = heat_step(FieldState(f), 0.02, d).values
    assert out.sum() == pytest.approx(f.sum(), rel=1e-12)


def test_heat_rejects_bad_dt():
    with pytest.raises(ValueError):
        heat_step(FieldState(np.ones(8)), 0.0, DomainSpec(points=8))


# ---------------------------------------------------------------- single steps

def test_mshe_beta0_is_heat(torus32):
    d, k = torus32
    f = np.random.default_rng(1).random(32)
    dU = sample_noise_increment(np.random.default_rng(2), k, d, 1e-3)
    a = mshe_step(FieldState(f), dU, SchemeParams(dt=1e-3, beta=0.0), d).values
    b = heat_step(FieldState(f), 1e-3, d).values
    assert np.array_equal(a, b)


def test_mshe_mass_mean_preserved(torus32):
    d, k = torus32
    n, dt = 10_000, 1e-3
    u0 = 1.0 + 0.5 * np.sin(2 * np.pi * d.coords())
    dU = sample_noise_increment(np.random.default_rng(3), k, d, dt, size=n)
    out = mshe_step(FieldState(np.broadcast_to(u0, (n, 32)).copy()), dU, SchemeParams(dt=dt), d).values
    mass = out.sum(axis=1) * d.dx
    assert abs(mass.mean() - u0.sum() * d.dx) < 4 * mass.std() / math.sqrt(n)


def test_mshe_white_one_step_variance():
    # dt << dx^2 so the heat step barely damps the grid-scale noise
    d = DomainSpec(points=16)
    k = build_kernel(KernelSpec(kind="white"), d)
    n, dt, beta = 20_000, 1e-6, 2.0
    dU = sample_noise_increment(np.random.default_rng(4), k, d, dt, size=n)
    out = mshe_step(FieldState(np.ones((n, 16))), dU, SchemeParams(dt=dt, beta=beta), d).values
    x = out[:, 3]
    target = beta**2 * dt / d.dx
    se = target * math.sqrt(2 / n)
    assert abs(x.var(ddof=1) - target) < 4 * se


def test_mshe_white_variance_exact_damping():
    # at dt = dx^2/4 the heat step damps mode k by exp(-k^2 dt / 2)
    d = DomainSpec(points=16)
    k = build_kernel(KernelSpec(kind="white"), d)
    n, dt = 20_000, d.dx**2 / 4
    dU = sample_noise_increment(np.random.default_rng(5), k, d, dt, size=n)
    out = mshe_step(FieldState(np.ones((n, 16))), dU, SchemeParams(dt=dt), d).values
    ks = 2 * np.pi * np.fft.fftfreq(16, d.dx)
    target = dt / d.dx * np.mean(np.exp(-ks**2 * dt))
    assert abs(out[:, 5].var(ddof=1) - target) < 4 * target * math.sqrt(2 / n)


def test_mshe_role_guard(torus32):
    d, k = torus32
    dU = sample_noise_increment(np.random.default_rng(0), k, d, 1e-3)
    with pytest.raises(ValueError):
        mshe_step(FieldState(np.ones(32), role="amshe_v"), dU, SchemeParams(dt=1e-3), d)
    with pytest.raises(ValueError):
        amshe_step(FieldState(np.ones(32)), dU, dU, SchemeParams(dt=1e-3), d)
    with pytest.raises(ValueError):
        FieldState(np.ones(3), role="bogus")


def test_mshe_clips_and_counts():
    d = DomainSpec(points=8)
    dU = NoiseSlice(np.array([-10.0, 0, 0, 0, 0, 0, 0, 0]), 1e-3)
    out = mshe_step(FieldState(np.ones(8)), dU, SchemeParams(dt=1e-3), d)
    assert out.clipped == 1
    assert np.all(out.values >= 0)


def test_amshe_alpha0_zero_fixed_point(torus32):
    d, k = torus32
    st = FieldState(np.zeros(32), role="amshe_v")
    rng = np.random.default_rng(6)
    p = SchemeParams(dt=1e-3, alpha=0.0, beta=3.0)
    for _ in range(20):
        st = amshe_step(st, sample_noise_increment(rng, k, d, 1e-3),
                        sample_noise_increment(rng, k, d, 1e-3), p, d)
    assert np.all(st.values == 0)


def test_amshe_mean_zero(torus32):
    d, k = torus32
    n = 10_000
    rng = np.random.default_rng(7)
    p = SchemeParams(dt=1e-3, alpha=1.0, beta=2.0)
    v0 = FieldState(np.zeros((n, 32)), role="amshe_v")
    out = amshe_step(v0, sample_noise_increment(rng, k, d, 1e-3, size=n),
                     sample_noise_increment(rng, k, d, 1e-3, size=n), p, d).values[:, 0]
    assert abs(out.mean()) < 4 * out.std() / math.sqrt(n)


def test_amshe_additive_variance():
    d = DomainSpec(points=16)
    k = build_kernel(KernelSpec(kind="white"), d)
    n, dt = 20_000, 1e-6
    rng = np.random.default_rng(8)
    out = amshe_step(FieldState(np.zeros((n, 16)), role="amshe_v"),
                     sample_noise_increment(rng, k, d, dt, size=n),
                     sample_noise_increment(rng, k, d, dt, size=n),
                     SchemeParams(dt=dt, alpha=1.0, beta=0.0), d).values[:, 7]
    target = dt / d.dx
    assert abs(out.var(ddof=1) - target) < 4 * target * math.sqrt(2 / n)


def test_exponential_multiplier_keeps_mean_and_sign(torus32):
    d, k = torus32
    n = 20_000
    p = SchemeParams(dt=1e-2, beta=3.0, multiplier="exponential")
    dU = sample_noise_increment(np.random.default_rng(9), k, d, p.dt, size=n)
    out = mshe_step(FieldState(np.ones((n, 32))), dU, p, d, R0=k.R0)
    assert out.clipped == 0
    m = out.values[:, 0]
    assert abs(m.mean() - 1) < 4 * m.std() / math.sqrt(n)
    with pytest.raises(ValueError):
        mshe_step(FieldState(np.ones(32)), dU, p, d)


# ---------------------------------------------------------------- parameters

def test_scheme_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(dt=0)
    with pytest.raises(ValueError):
        SchemeParams(dt=1e-3, beta=-1)
    with pytest.raises(ValueError):
        SchemeParams(dt=1e-3, multiplier="cubic")
    d = DomainSpec(points=16)
    white = build_kernel(KernelSpec(kind="white"), d)
    with pytest.raises(ValueError):
        zero_start_batch(SchemeParams(dt=1e-2, alpha=1), d, white, 0.1, rngs(0, 1), rngs(1, 1))


def test_default_dt_and_steps():
    d = DomainSpec(points=64)
    assert default_dt(d, KernelSpec(kind="white")) == pytest.approx(d.dx**2 / 4)
    assert default_dt(d, KernelSpec()) == 1e-3
    assert n_steps(1.0, 1e-3) == 1000
    with pytest.raises(ValueError):
        n_steps(1.0, 0.3)


def test_measure_spec():
    d = DomainSpec(points=10)
    mu = MeasureSpec([(0.3, 0.1), (0.7, 0.5)])
    assert mu.total_mass == pytest.approx(1.0)
    assert mu.density(d).sum() * d.dx == pytest.approx(1.0)
    with pytest.raises(ValueError):
        MeasureSpec([(-1.0, 0.0)])
    assert MeasureSpec([(-1.0, 0.0)], signed=True).total_mass == -1.0


# ---------------------------------------------------------------- zero-start runs

def test_zero_start_trivial(torus32):
    d, k = torus32
    assert np.all(run_zero_start(SchemeParams(dt=1e-3, alpha=1), d, k, 0.0,
                                 np.random.default_rng(0)).values == 0)
    assert np.all(run_zero_start(SchemeParams(dt=1e-3, alpha=0), d, k, 0.5,
                                 np.random.default_rng(0)).values == 0)
    st = run_zero_start(SchemeParams(dt=1e-3, alpha=1), d, k, 0.05, np.random.default_rng(0))
    assert st.role == "amshe_v" and np.any(st.values != 0)


def test_zero_start_translation_invariant_law(torus32):
    d, k = torus32
    n = 10_000
    res = zero_start_batch(SchemeParams(dt=1e-3, alpha=1.0), d, k, 0.3, rngs(10, n), rngs(11, n),
                           block=64)
    a, b = res.values[:, 0], res.values[:, 11]
    se = math.sqrt(2 / n)
    assert ks_two_sample(a, b) < 4 * se


def test_zero_start_batch_matches_single_and_block(torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3, alpha=1.0)
    batch = zero_start_batch(p, d, k, 0.05, rngs(1, 3), rngs(2, 3), block=7).values
    alone = zero_start_batch(p, d, k, 0.05, rngs(1, 3)[2:], rngs(2, 3)[2:], block=64).values
    assert np.array_equal(batch[2], alone[0])


def test_zero_start_coupled_ladder(torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3, alpha=1.0)
    ladder = zero_start_batch(p, d, k, [0.02, 0.05], rngs(3, 2), rngs(4, 2)).values
    assert ladder.shape == (2, 2, 32)
    single = zero_start_batch(p, d, k, 0.05, rngs(3, 2), rngs(4, 2)).values
    assert np.array_equal(ladder[1], single)


# ---------------------------------------------------------------- adjoint runs

def test_adjoint_start_and_alpha0(torus32):
    d, k = torus32
    mu = MeasureSpec([(0.3, 0.1), (0.7, 0.5)])
    path = adjoint_martingale_run(mu, SchemeParams(dt=1e-3, alpha=0.0), d, k, 0.1, 10,
                                  np.random.default_rng(0))
    assert path.M[0] == mu.total_mass
    assert np.all(path.N == 0)
    assert len(path.tau_grid) == 11


def test_adjoint_mass_martingale(torus32):
    d, k = torus32
    n = 10_000
    rec = adjoint_batch(MeasureSpec(), SchemeParams(dt=1e-3, alpha=1.0), d, k, 1.0, 100,
                        rngs(20, n), rngs(21, n))
    M = rec.M
    se = M.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(M.mean(axis=0) - 1.0) <= 4 * se + 1e-15)
    N = rec.N[:, -1]
    assert abs(N.mean()) < 4 * N.std() / math.sqrt(n)
    assert np.all(np.diff(rec.qv_M, axis=1) >= 0) and np.all(np.diff(rec.qv_N, axis=1) >= 0)


def test_adjoint_record_every_validation(torus32):
    d, k = torus32
    with pytest.raises(ValueError):
        adjoint_batch(MeasureSpec(), SchemeParams(dt=1e-3), d, k, 0.01, 0, rngs(0, 1), rngs(1, 1))


def test_adjoint_mass_matches_propagator(torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3, beta=1.0)
    fn = FrozenNoise.generate(d, k, p.dt, 50, seed=123)
    Z = propagator_run(0.0, 0.05, 0.25, p, d, k, fn).values
    rec = adjoint_batch(MeasureSpec([(1.0, 0.25)]), p, d, k, 0.05, 50,
                        [np.random.default_rng(123)], [None])
    assert rec.M[0, -1] == pytest.approx(Z.sum() * d.dx, rel=1e-10)


def test_adjoint_shift_equivariance(torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3, beta=1.5)
    fn = FrozenNoise.generate(d, k, p.dt, 40, seed=5)
    u0 = MeasureSpec([(1.0, 0.25)]).density(d)
    a = propagate(u0, p, d, fn.slices, k.R0).values
    b = propagate(np.roll(u0, 1), p, d, fn.shifted(1).slices, k.R0).values
    assert np.max(np.abs(np.roll(a, 1) - b)) <= 1e-12 * np.max(np.abs(a))


def test_adjoint_cauchy_normalized_guard(torus32):
    from amshe.errors import DegenerateMeasure

    d, k = torus32
    with pytest.raises(DegenerateMeasure):
        adjoint_martingale_run(MeasureSpec([(0.0, 0.0)]), SchemeParams(dt=1e-3), d, k, 0.01, 1,
                               np.random.default_rng(0), cauchy_normalized=True)


# ---------------------------------------------------------------- propagator

def test_propagator_beta0_heat_kernel():
    d = DomainSpec(points=256)
    k = build_kernel(KernelSpec(half_width=0.1), d)
    p = SchemeParams(dt=1e-3, beta=0.0)
    fn = FrozenNoise.zeros(d, k.spec, p.dt, 50)
    Z = propagator_run(0.0, 0.05, 0.5, p, d, k, fn)
    i = d.snap(0.5)
    assert Z.values[i] == pytest.approx(periodic_heat_kernel([0.0], 0.05, d), rel=0.01)
    assert Z.t == 0.05


def test_chapman_kolmogorov(torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3, beta=1.0)
    fn = FrozenNoise.generate(d, k, p.dt, 60, seed=77)
    xs = d.coords()
    first = propagator_run(0.0, 0.03, 0.2, p, d, k, fn).values
    second = np.stack([propagator_run(0.03, 0.06, z, p, d, k, fn).values for z in xs])
    composed = first @ second * d.dx
    direct = propagator_run(0.0, 0.06, 0.2, p, d, k, fn).values
    assert np.max(np.abs(composed - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_propagator_linearity(torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3, beta=1.0)
    fn = FrozenNoise.generate(d, k, p.dt, 30, seed=8)
    z1 = propagator_run(0.0, 0.03, 0.1, p, d, k, fn).values
    z2 = propagator_run(0.0, 0.03, 0.6, p, d, k, fn).values
    u0 = np.zeros(32)
    u0[d.snap(0.1)] += 2.0 / d.dx
    u0[d.snap(0.6)] += 0.5 / d.dx
    both = propagate(u0, p, d, fn.window(0.0, 0.03), k.R0).values
    assert np.allclose(both, 2 * z1 + 0.5 * z2, rtol=1e-12, atol=1e-12 * np.max(both))


def test_propagator_window_errors(torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3)
    fn = FrozenNoise.generate(d, k, p.dt, 10, seed=1)
    with pytest.raises(ValueError):
        propagator_run(0.0, 0.02, 0.0, p, d, k, fn)
    with pytest.raises(ValueError):
        propagator_run(0.01, 0.01, 0.0, p, d, k, fn)
    with pytest.raises(ValueError):
        fn.index(0.0005)


def test_frozen_noise_roundtrip(tmp_path, torus32):
    d, k = torus32
    fn = FrozenNoise.generate(d, k, 1e-3, 5, seed=42, t0=-0.005)
    fn.save(tmp_path / "noise.bin")
    back = FrozenNoise.load(tmp_path / "noise.bin")
    assert np.array_equal(back.slices, fn.slices)
    assert (back.dt, back.seed, back.t0) == (fn.dt, 42, -0.005)
    assert back.domain == d and back.kernel_spec == k.spec
    (tmp_path / "junk.bin").write_bytes(b"nope" * 10)
    with pytest.raises(ValueError):
        FrozenNoise.load(tmp_path / "junk.bin")


# ---------------------------------------------------------------- Feynman-Kac oracle

def test_fk_beta0_is_heat_kernel():
    d = DomainSpec(points=64)
    k = build_kernel(KernelSpec(half_width=0.125), d)
    p = SchemeParams(dt=1e-3, beta=0.0)
    fn = FrozenNoise.generate(d, k, p.dt, 50, seed=3)
    val = feynman_kac_oracle(0.0, 0.05, 0.2, 0.3, p, d, k, fn, 10, np.random.default_rng(0))
    assert val == pytest.approx(periodic_heat_kernel([0.1], 0.05, d), rel=1e-14)


def test_fk_zero_noise():
    d = DomainSpec(points=64)
    k = build_kernel(KernelSpec(half_width=0.125), d)
    p = SchemeParams(dt=1e-3, beta=2.0)
    fn = FrozenNoise.zeros(d, k.spec, p.dt, 50)
    val = feynman_kac_oracle(0.0, 0.05, 0.2, 0.3, p, d, k, fn, 100, np.random.default_rng(0))
    G = periodic_heat_kernel([0.1], 0.05, d)
    assert val == pytest.approx(G * math.exp(-0.5 * 4.0 * k.R0 * 0.05), rel=1e-12)


def test_fk_agrees_with_propagator():
    d = DomainSpec(points=64)
    k = build_kernel(KernelSpec(half_width=0.125), d)
    p = SchemeParams(dt=1e-3, beta=1.0)
    fn = FrozenNoise.generate(d, k, p.dt, 50, seed=2024)
    Z = propagator_run(0.0, 0.05, 0.25, p, d, k, fn).values
    for x in (0.25, 0.3, 0.4):
        fk = feynman_kac_oracle(0.0, 0.05, 0.25, x, p, d, k, fn, 10_000, np.random.default_rng(1))
        assert fk == pytest.approx(Z[d.snap(x)], rel=0.10)


def test_fk_white_unsupported():
    d = DomainSpec(points=16)
    k = build_kernel(KernelSpec(kind="white"), d)
    p = SchemeParams(dt=d.dx**2 / 4)
    fn = FrozenNoise.zeros(d, k.spec, p.dt, 4)
    with pytest.raises(WhiteNoiseUnsupported):
        feynman_kac_oracle(0.0, p.dt * 4, 0.0, 0.0, p, d, k, fn, 10, np.random.default_rng(0))


# ---------------------------------------------------------------- second-moment oracle

@pytest.mark.parametrize("mult", ["linear", "exponential"])
def test_flat_second_moment_matches_monte_carlo(mult, torus32):
    d, k = torus32
    p = SchemeParams(dt=1e-3, beta=2.0, multiplier=mult)
    exact = flat_second_moment(p, d, k, 0.2)
    n = 4000
    u, clipped = mshe_flat_batch(p, d, k, 0.2, rngs(30, n))
    x = (u**2).mean(axis=1)
    assert exact > 1.0
    assert abs(x.mean() - exact) < 4 * x.std() / math.sqrt(n)
    assert clipped.sum() == 0


def test_flat_second_moment_beta0(torus32):
    d, k = torus32
    assert flat_second_moment(SchemeParams(dt=1e-3, beta=0.0), d, k, 0.1) == pytest.approx(1.0)
