import math
import warnings

import numpy as np
import pytest

from wiener4nls.evolution import (BlowUpError, EvolutionConfig, critical_index, dilation_scale_threshold,
                                  dominant_frequency, iteration_bound, linear_trajectory, local_time_horizon,
                                  no_wrap_ok, nonlinearity, picard_iterate, propagate, scattering_state,
                                  solve_direct, solve_perturbed, step_direct, zero_trajectory)
from wiener4nls.norms import Trajectory, make_schedule, schedule_norm, sobolev_norm
from wiener4nls.spectral import dealias_mask, make_grid, physical_field, plane_wave, spectral_field


def random_spectral(grid, seed=0, band_limit=False):
    rng = np.random.default_rng(seed)
    f = physical_field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)).spectral()
    if band_limit:
        f = spectral_field(grid, np.where(dealias_mask(grid), f.data, 0))
    return f


def smooth_data(grid, amp=0.2):
    """Small smooth band-limited data: amp * exp(-|xi|^2)."""
    return spectral_field(grid, amp * np.exp(-grid.xi_sq) * dealias_mask(grid))


# ----------------------------------------------------------------- propagator


def test_propagate_identity_and_inverse():
    g = make_grid(3, 16, 4.0)
    f = random_spectral(g, 1)
    assert np.array_equal(propagate(f, 0.0).data, f.data)
    back = propagate(propagate(f, 2.7), -2.7)
    assert np.max(np.abs(back.data - f.data)) <= 1e-12 * np.max(np.abs(f.data))


@pytest.mark.parametrize("phase_sign", [-1, 1])
def test_single_mode_phase(phase_sign):
    g = make_grid(2, 16, np.pi)
    f = plane_wave(g, (2, 1)).spectral()
    t = 0.013
    out = propagate(f, t, phase_sign)
    assert np.allclose(out.data, np.exp(1j * phase_sign * t * 25.0) * f.data, atol=1e-13)


# ---------------------------------------------------------------- nonlinearity


def test_nonlinearity_zero_and_homogeneity():
    g = make_grid(3, 16, 4.0)
    cfg = EvolutionConfig()
    zero = spectral_field(g, np.zeros(g.shape))
    assert np.max(np.abs(nonlinearity(zero, cfg).data)) == 0.0
    u = random_spectral(g, 2, band_limit=True)
    a = 0.7 - 1.3j
    lhs = nonlinearity(a * u, cfg).data
    rhs = abs(a) ** 2 * a * nonlinearity(u, cfg).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


@pytest.mark.parametrize("sign", [1, -1])
def test_nonlinearity_single_mode(sign):
    g = make_grid(3, 16, np.pi)
    u = plane_wave(g, (2, 0, 0)).spectral()
    out = nonlinearity(u, EvolutionConfig(sign=sign, derivative="x1"))
    assert np.allclose(out.data, sign * 2j * u.data, atol=1e-12)
    out = nonlinearity(u, EvolutionConfig(sign=sign, derivative="abs"))
    assert np.allclose(out.data, sign * 2.0 * u.data, atol=1e-12)


def test_nonlinearity_nan_signals_blowup():
    g = make_grid(2, 8, 1.0)
    u = spectral_field(g, np.full(g.shape, np.nan))
    with pytest.raises(BlowUpError):
        nonlinearity(u, EvolutionConfig())


# ---------------------------------------------------------------- direct stepper


def test_step_direct_linear_matches_propagate():
    g = make_grid(3, 16, 4.0)
    f = random_spectral(g, 3)
    cfg = EvolutionConfig(nonlinear=False, dt=0.1, T=0.1)
    out = step_direct(f, 0.1, cfg)
    assert np.max(np.abs(out.data - propagate(f, 0.1).data)) <= 1e-12 * np.max(np.abs(f.data))
    u = solve_direct(f, EvolutionConfig(nonlinear=False, dt=0.05, T=1.0))
    assert abs(u.l2_norm() - f.l2_norm()) <= 1e-12 * f.l2_norm()


def test_step_halving_fourth_order():
    g = make_grid(3, 16, 8.0)
    phi = smooth_data(g, 1.0)
    cfg = EvolutionConfig(dt=1 / 64, T=1.0)
    ref = solve_direct(phi, cfg, dt=1 / 1024)
    errs = [(solve_direct(phi, cfg, dt=h) - ref).l2_norm() for h in (1 / 64, 1 / 128)]
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.30)


def test_direct_blowup_flagged():
    g = make_grid(2, 8, 1.0)
    phi = spectral_field(g, 50.0 * dealias_mask(g))
    with pytest.raises(BlowUpError):
        solve_direct(phi, EvolutionConfig(dt=0.01, T=1.0, blowup_factor=10.0))


# ---------------------------------------------------------------- trajectories


def test_linear_trajectory_basics():
    g = make_grid(3, 8, 2.0)
    f = random_spectral(g, 4)
    z0 = linear_trajectory(f, 0.0, 0.1)
    assert len(z0) == 1 and np.array_equal(z0.snapshot(0), f.data)
    z = linear_trajectory(f, 1.0, 0.125)
    norms = [z.field(m).l2_norm() for m in range(len(z))]
    assert max(norms) - min(norms) <= 1e-12 * norms[0]


def test_x0_norm_dt_convergence():
    g = make_grid(3, 16, 8.0)
    phi = smooth_data(g, 1.0)
    sched = make_schedule("X", 3)
    vals = [schedule_norm(linear_trajectory(phi, 1.0, dt, lazy=True), sched) for dt in (1 / 64, 1 / 128)]
    assert vals[1] == pytest.approx(vals[0], rel=0.02)


# ---------------------------------------------------------------------- Picard


def test_picard_zero():
    g = make_grid(3, 8, 2.0)
    t = [0.0, 0.1, 0.2]
    out = picard_iterate(zero_trajectory(g, t), zero_trajectory(g, t), EvolutionConfig(dt=0.1, T=0.2))
    assert np.max(np.abs(out.stack())) == 0.0


def test_first_iterate_cubic():
    g = make_grid(3, 16, 8.0)
    phi = smooth_data(g, 1.0)
    cfg = EvolutionConfig(dt=1 / 16, T=0.5)
    z = linear_trajectory(phi, cfg.T, cfg.dt)
    v0 = zero_trajectory(g, z.times)
    a = picard_iterate(v0, z, cfg).stack()
    b = picard_iterate(v0, z.scaled(2.0), cfg).stack()
    assert np.max(np.abs(b - 8.0 * a)) <= 1e-12 * np.max(np.abs(b))


def test_picard_shape_mismatch():
    g = make_grid(3, 8, 2.0)
    with pytest.raises(ValueError):
        picard_iterate(zero_trajectory(g, [0, 0.1]), zero_trajectory(g, [0, 0.1, 0.2]), EvolutionConfig())


def test_solve_perturbed_zero_data():
    g = make_grid(3, 8, 2.0)
    phi = spectral_field(g, np.zeros(g.shape))
    v, diag, _ = solve_perturbed(phi, EvolutionConfig(dt=0.1, T=0.3))
    assert diag.converged and diag.iterations == 1
    assert np.max(np.abs(v.stack())) == 0.0


@pytest.mark.parametrize("derivative", ["x1", "abs"])
@pytest.mark.parametrize("sign", [1, -1])
def test_fixed_point_matches_direct(derivative, sign):
    g = make_grid(3, 16, 8.0)
    phi = smooth_data(g)
    cfg = EvolutionConfig(derivative=derivative, sign=sign, dt=1 / 128, T=0.5, tol=1e-12)
    v, diag, z = solve_perturbed(phi, cfg)
    assert diag.converged and not diag.blowup
    assert max(diag.ratios) <= 0.5
    residual = picard_iterate(v, z, cfg) - v
    assert schedule_norm(residual, make_schedule("X", 3)) <= 1e-10 * diag.x_norm_final
    u_direct = solve_direct(phi, cfg, dt=1 / 512)
    u_picard = z.field(len(z) - 1) + v.field(len(v) - 1)
    assert (u_picard - u_direct).l2_norm() / u_direct.l2_norm() <= 1e-6


def test_iteration_count_bound():
    g = make_grid(3, 16, 8.0)
    phi = smooth_data(g, 0.5)
    cfg = EvolutionConfig(dt=1 / 32, T=0.5, tol=1e-10)
    _, diag, _ = solve_perturbed(phi, cfg)
    rho = max(diag.ratios)
    assert rho < 1
    bound = iteration_bound(diag.increments[0], cfg.tol * diag.increments[0], rho)
    assert diag.iterations <= bound + 1e-9


def test_amplitude_sweep_exponent():
    g = make_grid(3, 16, 8.0)
    amps = np.array([0.05, 0.1, 0.2, 0.4])
    first = []
    for a in amps:
        _, diag, _ = solve_perturbed(smooth_data(g, a), EvolutionConfig(dt=1 / 16, T=0.5, max_iter=1))
        first.append(diag.first_iterate_norm)
    slope = np.polyfit(np.log(amps), np.log(first), 1)[0]
    assert slope == pytest.approx(3.0, abs=0.05)


def test_gauge_covariance():
    g = make_grid(3, 16, 8.0)
    phi = smooth_data(g, 0.5)
    cfg = EvolutionConfig(dt=1 / 32, T=0.25, tol=1e-12)
    v, _, z = solve_perturbed(phi, cfg)
    rot = np.exp(0.9j)
    v2, _, z2 = solve_perturbed(rot * phi, cfg)
    scale = np.max(np.abs(v.stack()))
    assert np.max(np.abs(v2.stack() - rot * v.stack())) <= 1e-10 * scale
    assert np.max(np.abs(z2.stack() - rot * z.stack())) <= 1e-12 * np.max(np.abs(z.stack()))
    u1 = solve_direct(phi, cfg)
    u2 = solve_direct(rot * phi, cfg)
    assert np.max(np.abs(u2.data - rot * u1.data)) <= 1e-10 * np.max(np.abs(u1.data))


def test_in_ball_flag():
    g = make_grid(3, 8, 4.0)
    phi = smooth_data(g, 0.2)
    _, diag, _ = solve_perturbed(phi, EvolutionConfig(dt=1 / 16, T=0.25, eta=1e-30))
    assert diag.in_ball is False
    _, diag, _ = solve_perturbed(phi, EvolutionConfig(dt=1 / 16, T=0.25, eta=1e30))
    assert diag.in_ball is True
    js = diag.to_json()
    assert set(js) == {"converged", "iterations", "ratios", "x_norm_final", "blowup", "scattering_residuals"}


# -------------------------------------------------------------------- formulas


def test_local_time_horizon():
    # tie: eta/(2 C1 R^3) = 1/(4 C2 R^2) with R=1, eta=0.5, C1=C2=1 -> both 1/4
    assert local_time_horizon(1.0, 0.5, 1.0, 1.0, 0.5) == pytest.approx(0.25**8)
    assert local_time_horizon(1.0, 0.1, 1.0, 1.0, 0.5) == pytest.approx(0.05**8, rel=1e-12)
    assert 0.05**8 == pytest.approx(3.9e-11, rel=0.01)
    Ts = [local_time_horizon(R, 0.1, 1.0, 1.0, 0.5) for R in (0.5, 1, 2, 4)]
    assert all(a > b for a, b in zip(Ts, Ts[1:]))
    with pytest.raises(ValueError):
        local_time_horizon(0.0, 0.1, 1.0, 1.0, 0.5)


def test_dilation_threshold():
    assert dilation_scale_threshold(0.1, 1.0, math.exp(-1), 0.0, 4) == pytest.approx(0.01)
    a = dilation_scale_threshold(0.1, 1.0, 0.3, 0.1, 4)
    b = dilation_scale_threshold(0.1, 2.0, 0.3, 0.1, 4)
    assert b / a == pytest.approx(2 ** (-1 / (0.5 - 0.1)))
    assert dilation_scale_threshold(0.1, 1.0, 1 - 1e-12, 0.0, 4) > 1e8
    with pytest.raises(ValueError):
        dilation_scale_threshold(0.1, 1.0, 0.5, 0.0, 3)
    with pytest.raises(ValueError):
        dilation_scale_threshold(0.1, 1.0, 0.5, 0.6, 4)


def test_config_validation():
    with pytest.raises(ValueError):
        EvolutionConfig(dt=0.3, T=1.0)
    with pytest.raises(ValueError):
        EvolutionConfig(derivative="y")
    assert critical_index(4) == 0.5


# ------------------------------------------------------------------ scattering


def test_scattering_linear_only():
    g = make_grid(3, 8, 4.0)
    phi = smooth_data(g)
    v, _, _ = solve_perturbed(phi, EvolutionConfig(dt=0.125, T=0.5, nonlinear=False))
    vplus, curve = scattering_state(v)
    assert np.max(np.abs(vplus.data)) == 0.0 and np.all(curve == 0)


def test_scattering_tail_monotone_both_directions():
    g = make_grid(3, 16, 16.0)
    phi = smooth_data(g, 0.3)
    cfg = EvolutionConfig(dt=1 / 16, T=2.0, tol=1e-12)
    xi = dominant_frequency(g, phi.data)
    assert no_wrap_ok(g, cfg.T, xi)
    for direction in (1, -1):
        v, diag, _ = solve_perturbed(phi, cfg, direction=direction)
        assert diag.converged
        _, curve = scattering_state(v, xi_dom=xi)
        tail = curve[len(curve) // 2:]
        assert np.all(np.diff(tail) <= 1e-14 * max(curve.max(), 1e-300))
        assert v.times[-1] == direction * cfg.T


def test_scattering_warns_beyond_no_wrap():
    g = make_grid(3, 8, 1.0)
    traj = Trajectory(g, [0.0, 1.0], np.zeros((2,) + g.shape, dtype=complex))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        scattering_state(traj, xi_dom=5.0)
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
