import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfomag.geometry import HoleSpec, build_macro_grid
from perfomag.macro import (
    MacroConfig, MemorySink, build_magnetostatics, build_stepper, energy, init_state,
    magnetostatic_solve, run, step,
)
from perfomag.linsolve import divergence_rhs
from perfomag.stepper import energy_bound
from perfomag.tensors import cell_tensors
from perfomag.thermo import F, ThermoDomainError, ThermoParams
from builders import SQUARE, identity_tensors, macro_config, uniform_ode_config
from oracles import rk4_uniform_m


@pytest.fixture(scope="module")
def square_tensors():
    return cell_tensors(16, 2, SQUARE)


def test_init_examples(square_tensors):
    cfg = macro_config(identity_tensors())
    m0 = lambda x: np.stack([np.sin(3 * x[..., 0]), x[..., 1], 0 * x[..., 0]])
    s = init_state(cfg, m0, 1.3)
    c = cfg.grid.centers()
    assert np.array_equal(s.m[0], np.sin(3 * c[..., 0]))
    assert np.allclose(s.v, F(1.3, cfg.thermo))
    assert np.allclose(s.theta, 1.3, rtol=1e-13)

    cfg = macro_config(cell_tensors(8, 3, HoleSpec.box((0.25,) * 3, (0.75,) * 3)), n=6)
    assert cfg.chi_bar == 0.875
    s = init_state(cfg, (1.0, 0.0, 0.0), 1.0)
    assert np.allclose(s.m[0], 0.875) and np.all(s.m[1:] == 0)
    assert np.allclose(s.v, 0.875 * F(1.0, cfg.thermo))


def test_zero_magnetization_zero_potential(square_tensors):
    cfg = macro_config(square_tensors)
    s = init_state(cfg, (0.0, 0.0, 0.0), 0.8)
    assert np.all(s.phi == 0)
    assert np.allclose(s.v, cfg.chi_bar * F(0.8, cfg.thermo))


def test_material_convention_skips_weight(square_tensors):
    cfg = macro_config(square_tensors, mean_convention="material")
    s = init_state(cfg, (0.5, 0.0, 0.0), 2.0)
    assert np.allclose(s.m[0], 0.5)
    assert np.allclose(s.theta, 2.0)


def test_nonpositive_theta0_rejected():
    cfg = macro_config(identity_tensors())
    with pytest.raises(ThermoDomainError):
        init_state(cfg, (0.0, 0.0, 0.0), lambda x: x[..., 0] - 0.5)


def test_config_validation(square_tensors):
    g = build_macro_grid((1.0, 1.0), 8)
    for bad in (dict(dt=0.0), dict(gamma=-1.0), dict(theta_c=0.0), dict(save_every=0),
                dict(mean_convention="mixed")):
        with pytest.raises(ValueError):
            MacroConfig(grid=g, tensors=square_tensors, **bad)


def test_equilibrium_fixed_point(square_tensors):
    cfg = macro_config(square_tensors, dt=0.05, t_end=0.5)
    sink = MemorySink()
    summ = run(cfg, (0.0, 0.0, 0.0), 1.7, sink)
    first = sink.snapshots[0]
    for s in sink.snapshots[1:]:
        assert np.abs(s.m).max() <= 1e-12
        assert np.abs(s.v - first.v).max() <= 1e-12
    assert summ.final.t == pytest.approx(0.5, abs=0)


def test_t_end_zero_single_snapshot(square_tensors):
    cfg = macro_config(square_tensors, t_end=0.0)
    sink = MemorySink()
    summ = run(cfg, (0.1, 0.0, 0.0), 1.0, sink)
    assert len(sink.snapshots) == 1 and summ.n_steps == 0
    assert len(sink.energies) == 1


def test_uniform_ode_matches_rk4():
    cfg = uniform_ode_config(dt=1e-2, t_end=5.0)
    summ = run(cfg, (0.1, 0.0, 0.0), 0.5)
    ref = rk4_uniform_m([0.1, 0, 0], 0.5, 1.0, 0.0, 1.0, 5.0, 1e-4)
    got = summ.final.m[:, 0, 0]
    assert np.allclose(summ.final.m, got[:, None, None], atol=1e-14)
    assert abs(np.linalg.norm(got) - np.linalg.norm(ref)) < 2e-2


def test_time_step_refinement_first_order():
    t_end = 3.0
    ref = np.linalg.norm(rk4_uniform_m([0.1, 0, 0], 0.5, 1.0, 0.0, 1.0, t_end, 1e-4))
    errs = []
    for dt in (4e-2, 2e-2, 1e-2):
        summ = run(uniform_ode_config(dt=dt, t_end=t_end), (0.1, 0.0, 0.0), 0.5)
        errs.append(abs(np.linalg.norm(summ.final.m[:, 0, 0]) - ref))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 1.5 <= r1 <= 2.5 and 1.5 <= r2 <= 2.5, (errs, r1, r2)


def test_paramagnetic_decay():
    summ = run(uniform_ode_config(dt=1e-2, t_end=20.0), (0.1, 0.0, 0.0), 2.0)
    assert summ.m_norm_inf < 1e-6


def test_energy_zero_state():
    cfg = macro_config(identity_tensors(), field_coupling=False)
    p = cfg.thermo = ThermoParams(c1=0.7, c2=1.9)
    s = init_state(cfg, (0.0, 0.0, 0.0), 1.4)
    e = energy(s, cfg)
    area = cfg.grid.volume
    assert e.total == pytest.approx(p.c2 / 2 * 1.4 ** 2 * area + p.c1 * 1.4 * area, rel=1e-12)
    assert e.grad == 0 and e.quartic == 0 and e.field == 0


def test_energy_uniform_unit_m():
    cfg = uniform_ode_config(t_end=0.0)
    s = init_state(cfg, (1.0, 0.0, 0.0), 1.0)
    e = energy(s, cfg)
    assert e.grad == pytest.approx(0.0, abs=1e-13)
    assert e.quartic == pytest.approx(0.25 * cfg.grid.volume, rel=1e-14)


def test_magnetostatics_zero_and_linear(square_tensors):
    cfg = macro_config(square_tensors, n=8)
    z = np.zeros((3,) + cfg.grid.shape)
    assert np.all(magnetostatic_solve(z, cfg) == 0)
    rng = np.random.default_rng(0)
    m1 = rng.standard_normal(z.shape)
    m2 = rng.standard_normal(z.shape)
    p1 = magnetostatic_solve(m1, cfg)
    p2 = magnetostatic_solve(m2, cfg)
    p12 = magnetostatic_solve(m1 + m2, cfg)
    scale = np.abs(p12).max()
    assert np.abs(p12 - p1 - p2).max() <= 10 * cfg.cg_tol * scale
    assert np.allclose(magnetostatic_solve(2 * m1, cfg), 2 * p1, atol=1e-8 * np.abs(p1).max())
    assert abs(p1.mean()) < 1e-12 * np.abs(p1).max()


def test_demagnetizing_sign():
    T = identity_tensors(2)
    cfg = macro_config(T, n=8)
    mag = build_magnetostatics(cfg)
    m = np.zeros((3,) + cfg.grid.shape)
    m[0] = 1.0
    phi, rep = mag.solve(m)
    assert rep.converged
    g = mag.gradient(phi)
    assert float(np.sum(g * m)) * cfg.grid.voxel_volume < 0
    assert mag.energy(phi) > 0


def test_flux_conservation(square_tensors):
    cfg = macro_config(square_tensors, n=8)
    mag = build_magnetostatics(cfg)
    m = np.random.default_rng(1).standard_normal((3,) + cfg.grid.shape)
    b = divergence_rhs(mag.op, mag.flux_source(m))
    # no-flux outer walls: the discrete source has zero net total
    assert abs(b.sum()) <= 1e-9 * np.abs(b).sum()
    phi, _ = mag.solve(m)
    r = mag.op.matvec(mag.op.gather(phi)) - b
    assert np.abs(r.sum()) <= 1e-9 * np.linalg.norm(b)
    assert np.linalg.norm(r) <= 10 * cfg.cg_tol * np.linalg.norm(b)


def test_positivity_and_bound_on_coupled_run(square_tensors):
    cfg = macro_config(square_tensors, n=8, dt=0.02, t_end=1.0, save_every=10)
    rng = np.random.default_rng(3)
    m0 = 0.3 * rng.standard_normal((3,) + cfg.grid.shape)
    sink = MemorySink()
    summ = run(cfg, m0, lambda x: 0.6 + 0.3 * np.cos(np.pi * x[..., 0]), sink)
    for s in sink.snapshots:
        assert np.all(s.theta[cfg.grid.mask] > 0)
    for rec in summ.energies:
        assert min(rec.grad, rec.quartic, rec.thermal, rec.field) >= 0
    ok, worst = energy_bound(summ.energies, cfg.theta_c, cfg.gamma, cfg.grid.volume)
    assert ok, worst
    assert summ.gronwall_constant >= 0


def test_run_is_deterministic(square_tensors):
    cfg = macro_config(square_tensors, n=8, dt=0.05, t_end=0.25)
    m0 = 0.2 * np.random.default_rng(5).standard_normal((3,) + cfg.grid.shape)
    a = run(cfg, m0, 0.9)
    b = run(cfg, m0, 0.9)
    assert np.array_equal(a.final.m, b.final.m) and np.array_equal(a.final.v, b.final.v)


def test_step_advances_time(square_tensors):
    cfg = macro_config(square_tensors)
    st_ = build_stepper(cfg)
    s = init_state(cfg, (0.1, 0.0, 0.0), 1.0, st_)
    s1 = step(s, cfg, st_)
    assert s1.t == pytest.approx(cfg.dt) and s1.step_index == 1


@settings(max_examples=10)
@given(st.floats(0.05, 3.0), st.floats(0.0, 0.5))
def test_uniform_state_stays_uniform(theta, amp):
    cfg = uniform_ode_config(dt=0.05, t_end=0.5)
    summ = run(cfg, (amp, 0.0, amp / 2), theta)
    m = summ.final.m
    assert np.allclose(m, m[:, :1, :1], atol=1e-13)
