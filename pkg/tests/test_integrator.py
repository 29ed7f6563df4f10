"""Solver tests: analytic problems through the generic core, plus the model path."""

import math

import numpy as np
import pytest

from knowdyn.errors import (
    DomainExitError,
    IntegrationError,
    StiffnessError,
    ValidationError,
)
from knowdyn.integrate import (
    IntegratorConfig,
    Trajectory,
    dopri5_step,
    integrate,
    integrate_rhs,
    step_once,
)
from knowdyn.model import State, in_domain
from knowdyn.scenarios import PRESET_NAMES, load_preset


def test_config_validation():
    with pytest.raises(ValidationError):
        IntegratorConfig(t_end=0)
    with pytest.raises(ValidationError):
        IntegratorConfig(t_end=10, rtol=0.0)
    with pytest.raises(ValidationError):
        IntegratorConfig(t_end=10, atol=-1.0)
    cfg = IntegratorConfig(t_end=10)
    assert cfg.grid_points == 11


def test_scalar_decay():
    # dy/dt = -y, y(0) = 1 -> y(1) = e^-1 within 10*(atol + rtol)
    cfg = IntegratorConfig(t_end=1, rtol=1e-6, atol=1e-9)
    out = integrate_rhs(lambda t, y: (-y[0],), (1.0,), cfg)
    assert abs(out[1][0] - math.exp(-1.0)) <= 10.0 * (cfg.atol + cfg.rtol)


def test_zero_rhs_constant():
    cfg = IntegratorConfig(t_end=5)
    out = integrate_rhs(lambda t, y: (0.0, 0.0), (3.5, -1.25), cfg)
    assert all(y == (3.5, -1.25) for y in out)


def test_zero_field_model_constant():
    preset = load_preset("pre_llm")
    import dataclasses

    p = dataclasses.replace(
        preset.params, alpha_H=0.0, beta_K=0.0, delta_K=0.0, delta_q=0.0, gamma_H=0.0, rho_Q=0.0
    )
    traj = integrate(preset.y0, p, IntegratorConfig(t_end=20))
    assert all(s == preset.y0 for s in traj.states)


def test_grid_exactness_and_y0_passthrough():
    preset = load_preset("healthy_growth")
    traj = integrate(preset.y0, preset.params, IntegratorConfig(t_end=50))
    assert traj.times == tuple(float(m) for m in range(51))
    assert traj.states[0] == preset.y0


def test_determinism_bit_identical():
    preset = load_preset("oscillations")
    cfg = IntegratorConfig(t_end=200)
    a = integrate(preset.y0, preset.params, cfg)
    b = integrate(preset.y0, preset.params, cfg)
    assert all(sa == sb for sa, sb in zip(a.states, b.states))


def test_step_once_zero_rhs():
    y5, err, k7 = dopri5_step(lambda t, y: (0.0,), 0.0, (2.0,), 0.5)
    assert y5 == (2.0,)
    assert err == (0.0,)
    assert k7 == (0.0,)


def test_step_once_taylor_consistency():
    preset = load_preset("healthy_growth")
    from knowdyn.model import vector_field

    d = vector_field(preset.y0, preset.params).as_tuple()
    y = preset.y0.as_tuple()
    for h, tol in ((1e-3, 1e-2), (1e-4, 1e-3), (1e-5, 1e-4)):
        y_next, _ = step_once(preset.y0, 0.0, h, preset.params)
        for i, name in enumerate(("K", "q", "theta", "H", "Q")):
            step = getattr(y_next, name) - y[i]
            assert step == pytest.approx(h * d[i], rel=tol)


def test_step_once_fifth_order_convergence():
    # Fixed-step integration of the rotation dy/dt = (y2, -y1) over [0, 2];
    # the closed-form solution (cos t, -sin t) is the independent oracle.
    f = lambda t, y: (y[1], -y[0])
    exact = (math.cos(2.0), -math.sin(2.0))
    errors = []
    hs = [0.25, 0.125, 0.0625, 0.03125]
    for h in hs:
        y = (1.0, 0.0)
        t = 0.0
        for _ in range(round(2.0 / h)):
            y, _, _ = dopri5_step(f, t, y, h)
            t += h
        errors.append(math.hypot(y[0] - exact[0], y[1] - exact[1]))
    slope = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    assert 4.5 <= slope <= 5.5


def _grid_deviation(traj: Trajectory, ref: Trajectory) -> float:
    worst = 0.0
    for s, r in zip(traj.states, ref.states):
        for a, b in zip(s.as_tuple(), r.as_tuple()):
            worst = max(worst, abs(a - b) / max(abs(b), 1e-30))
    return worst


@pytest.fixture(scope="module")
def healthy_reference():
    preset = load_preset("healthy_growth")
    cfg = IntegratorConfig(t_end=1000, rtol=1e-10, atol=1e-13)
    return integrate(preset.y0, preset.params, cfg)


def test_reference_deviation_below_1e5(healthy_reference):
    preset = load_preset("healthy_growth")
    traj = integrate(preset.y0, preset.params, IntegratorConfig(t_end=1000))
    assert _grid_deviation(traj, healthy_reference) < 1e-5


def test_tolerance_halving_never_increases_deviation(healthy_reference):
    preset = load_preset("healthy_growth")
    deviations = []
    rtol, atol = 1e-6, 1e-9
    for _ in range(5):
        traj = integrate(preset.y0, preset.params, IntegratorConfig(t_end=1000, rtol=rtol, atol=atol))
        deviations.append(_grid_deviation(traj, healthy_reference))
        rtol /= 2.0
        atol /= 2.0
    for tighter, looser in zip(deviations[1:], deviations[:-1]):
        assert tighter <= looser


def test_stiffness_error_carries_time():
    cfg = IntegratorConfig(t_end=1, min_step_factor=1e-6)
    f = lambda t, y: (math.cos(1e8 * t),)
    with pytest.raises(StiffnessError) as exc:
        integrate_rhs(f, (0.0,), cfg)
    assert exc.value.time is not None
    assert 0.0 <= exc.value.time <= 1.0


def test_nonfinite_rhs_propagates():
    cfg = IntegratorConfig(t_end=1)
    with pytest.raises(IntegrationError):
        integrate_rhs(lambda t, y: (float("inf"),), (1.0,), cfg)


def test_domain_exit_on_K_collapse():
    import dataclasses

    preset = load_preset("pre_llm")
    p = dataclasses.replace(preset.params, alpha_H=0.0, delta_K=40.0)
    y0 = State(K=1.0, q=0.5, theta=0.3, H=0.0, Q=0.0)
    with pytest.raises(DomainExitError) as exc:
        integrate(y0, p, IntegratorConfig(t_end=5))
    assert exc.value.time is not None


def test_initial_state_must_be_in_domain():
    preset = load_preset("healthy_growth")
    bad = State(K=100.0, q=0.5, theta=preset.params.theta_max + 0.5, H=10.0, Q=50.0)
    with pytest.raises(Exception):
        integrate(bad, preset.params, IntegratorConfig(t_end=5))


def test_domain_preservation_on_all_presets():
    # Trajectories starting in the physical domain stay in it on the grid.
    for name in PRESET_NAMES:
        preset = load_preset(name)
        traj = integrate(preset.y0, preset.params, IntegratorConfig(t_end=200))
        assert all(in_domain(s, preset.params) for s in traj.states), name


def test_trajectory_invariants():
    preset = load_preset("healthy_growth")
    with pytest.raises(ValidationError):
        Trajectory(times=(), states=(), params_snapshot=preset.params)
    with pytest.raises(ValidationError):
        Trajectory(times=(1.0,), states=(preset.y0,), params_snapshot=preset.params)
    with pytest.raises(ValidationError):
        Trajectory(times=(0.0, 0.0), states=(preset.y0, preset.y0), params_snapshot=preset.params)
