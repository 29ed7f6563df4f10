"""Preset fidelity, normalization, regime classification, and trajectory files."""

import math

import numpy as np
import pytest

from knowdyn.errors import ConfigFileError, UnknownPresetError, ValidationError
from knowdyn.integrate import IntegratorConfig, Trajectory, integrate
from knowdyn.model import State
from knowdyn.scenarios import (
    DEFAULT_Y0,
    PRESET_NAMES,
    NormalizedTrajectory,
    classify_regime,
    export_trajectory,
    import_trajectory,
    load_preset,
    load_scenario_file,
    normalize,
)

# Nine regime configurations: fixed block plus per-column values, typed from
# the published table independently of the package's own preset construction.
_COMMON = dict(
    delta_K=0.01, q_H=0.95, delta_q=0.001, theta_mid=0.0, theta_max=1.0,
    K_max=1e4, gamma_H=0.05, Q_sat=500.0, H_inf=100.0, rho_Q=0.01,
)
_SHARED = dict(
    Q_half=5000.0, hill_beta=0.9, K_half=300.0, xi_0=2.0, kappa_H=0.05,
    T_difficulty=10.0, kappa_gate=10.0,
)

EXPECTED = {
    "pre_llm": dict(
        alpha_H=0.5, alpha_A=0.0, beta_K=0.05, beta_A=0.0, eta_sup=0.0,
        eta_RLHF=0.0, a_0=0.0, xi_0=0.0,
    ),
    "healthy_growth": dict(
        alpha_H=0.5, alpha_A=0.05, beta_K=0.05, beta_A=0.03, eta_sup=0.05,
        eta_RLHF=0.03, a_0=0.5,
    ),
    "tighter_gate": dict(
        alpha_H=0.5, alpha_A=0.05, beta_K=0.05, beta_A=0.03, eta_sup=0.05,
        eta_RLHF=0.03, a_0=0.8,
    ),
    "inverted_flow": dict(
        alpha_H=0.05, alpha_A=0.5, beta_K=0.05, beta_A=0.03, eta_sup=0.05,
        eta_RLHF=0.03, a_0=0.5,
    ),
    "inverted_learning": dict(
        alpha_H=0.5, alpha_A=0.05, beta_K=0.03, beta_A=0.05, eta_sup=0.05,
        eta_RLHF=0.03, a_0=0.5,
    ),
    "worst_case": dict(
        alpha_H=0.05, alpha_A=0.5, beta_K=0.03, beta_A=0.05, eta_sup=0.05,
        eta_RLHF=0.03, a_0=0.5,
    ),
    "gate_tightening": dict(
        alpha_H=0.25, alpha_A=0.3, beta_K=0.03, beta_A=0.05, eta_sup=0.05,
        eta_RLHF=0.03, a_0=0.8,
    ),
    "rlhf_recovery": dict(
        alpha_H=0.05, alpha_A=0.5, beta_K=0.03, beta_A=0.05, eta_sup=0.05,
        eta_RLHF=0.5, a_0=0.5,
    ),
    "oscillations": dict(
        alpha_H=0.05, alpha_A=0.5, beta_K=0.05, beta_A=0.3, eta_sup=0.05,
        eta_RLHF=0.5, a_0=0.5, Q_half=100.0, hill_beta=4.0, K_half=200.0,
        kappa_H=0.9, T_difficulty=10000.0, kappa_gate=1.0,
    ),
}

EXPECTED_MEDICAL = dict(
    alpha_H=0.32, alpha_A=0.05, delta_K=0.010, q_H=0.99, delta_q=0.0005,
    theta_mid=0.0, theta_max=1.0, K_max=1e5, eta_sup=0.10, eta_RLHF=0.30,
    Q_half=8000.0, beta_K=0.20, beta_A=0.05, gamma_H=0.02, Q_sat=1000.0,
    H_inf=100.0, K_half=300.0, hill_beta=0.9, xi_0=2.0, kappa_H=0.05,
    rho_Q=0.02, T_difficulty=10.0, a_0=0.90, kappa_gate=20.0,
)
EXPECTED_OSS = dict(
    alpha_H=5.0, alpha_A=4.26, delta_K=0.023, q_H=0.90, delta_q=0.002,
    theta_mid=0.0, theta_max=1.0, K_max=5e5, eta_sup=0.12, eta_RLHF=0.25,
    Q_half=5000.0, beta_K=0.30, beta_A=0.10, gamma_H=0.03, Q_sat=500.0,
    H_inf=100.0, K_half=300.0, hill_beta=0.9, xi_0=2.0, kappa_H=0.05,
    rho_Q=0.02, T_difficulty=10.0, a_0=0.60, kappa_gate=8.0,
)


def expected_params(name: str) -> dict:
    if name == "medical":
        return dict(EXPECTED_MEDICAL)
    if name == "oss":
        return dict(EXPECTED_OSS)
    values = dict(_COMMON)
    values.update(_SHARED)
    values.update(EXPECTED[name])
    return values


def test_eleven_presets_exist():
    assert len(PRESET_NAMES) == 11


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_preset_fidelity(name):
    preset = load_preset(name)
    got = preset.params.as_dict()
    want = expected_params(name)
    assert set(got) == set(want)
    for field, value in want.items():
        assert got[field] == value, f"{name}.{field}: {got[field]} != {value}"


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_preset_initial_state_and_config(name):
    preset = load_preset(name)
    assert preset.y0 == State(K=100.0, q=0.5, theta=0.3, H=10.0, Q=50.0)
    assert preset.config.t_end == 1000
    assert preset.config.rtol == 1e-6
    assert preset.config.atol == 1e-9


def test_spot_checks_from_published_columns():
    hg = load_preset("healthy_growth").params
    assert (hg.alpha_H, hg.alpha_A, hg.beta_K, hg.beta_A) == (0.5, 0.05, 0.05, 0.03)
    assert (hg.eta_sup, hg.eta_RLHF, hg.a_0) == (0.05, 0.03, 0.5)
    osc = load_preset("oscillations").params
    assert (osc.Q_half, osc.hill_beta, osc.K_half) == (100.0, 4.0, 200.0)
    assert (osc.kappa_H, osc.T_difficulty, osc.kappa_gate) == (0.9, 10000.0, 1.0)
    assert (osc.alpha_H, osc.alpha_A, osc.beta_A, osc.eta_RLHF) == (0.05, 0.5, 0.3, 0.5)
    med = load_preset("medical").params
    assert (med.alpha_H, med.alpha_A, med.delta_K) == (0.32, 0.05, 0.010)
    assert (med.q_H, med.a_0, med.kappa_gate, med.eta_RLHF, med.K_max) == (0.99, 0.90, 20.0, 0.30, 1e5)


def test_unknown_preset_lists_names():
    with pytest.raises(UnknownPresetError) as exc:
        load_preset("not_a_preset")
    for name in PRESET_NAMES:
        assert name in str(exc.value)


def test_scenario_file_round_trip(tmp_path):
    params = expected_params("healthy_growth")
    lines = [f"{k} = {v!r}" for k, v in params.items()]
    lines += ["K0 = 200", "q0 = 0.6", "t_end = 50", "# comment", ""]
    path = tmp_path / "custom.cfg"
    path.write_text("\n".join(lines), encoding="utf-8")
    preset = load_scenario_file(path)
    assert preset.params.as_dict() == {k: float(v) for k, v in params.items()}
    assert preset.y0 == State(K=200.0, q=0.6, theta=0.3, H=10.0, Q=50.0)
    assert preset.config.t_end == 50
    # load_preset with a path goes through the same parser
    assert load_preset(str(path)).params == preset.params


def test_scenario_file_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("alpha_h = 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigFileError) as exc:
        load_scenario_file(path)
    assert "alpha_h" in str(exc.value)


def test_scenario_file_missing_keys(tmp_path):
    path = tmp_path / "partial.cfg"
    path.write_text("alpha_H = 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigFileError) as exc:
        load_scenario_file(path)
    assert "missing" in str(exc.value)


def test_scenario_file_bad_number(tmp_path):
    path = tmp_path / "nan.cfg"
    path.write_text("alpha_H = fast\n", encoding="utf-8")
    with pytest.raises(ConfigFileError):
        load_scenario_file(path)


def test_normalize_trivials(preset_runs):
    run = preset_runs["healthy_growth"]
    p = run.preset.params
    norm = run.norm
    assert norm.K_norm[0] == 100.0 / p.K_max == 0.01
    assert norm.q == tuple(s.q for s in run.traj.states)
    assert norm.theta == tuple(s.theta for s in run.traj.states)
    assert norm.H_norm[0] == 10.0 / p.H_inf
    assert norm.Q_norm[0] == 50.0 / p.Q_sat
    state_mid = run.traj.states[500]
    assert norm.K_norm[500] == state_mid.K / p.K_max


def _flat_norm(times, K=0.01, q=0.5, theta=0.3, H=0.1, Q=0.1):
    n = len(times)
    return NormalizedTrajectory(
        times=tuple(times),
        K_norm=tuple([K] * n),
        q=tuple([q] * n),
        theta=tuple([theta] * n),
        H_norm=tuple([H] * n),
        Q_norm=tuple([Q] * n),
    )


def test_classifier_constant_is_stagnation():
    times = tuple(float(i) for i in range(100))
    label = classify_regime(_flat_norm(times))
    assert label.label == "stagnation"
    assert label.diagnostics["q_peak_count"] == 0


def test_classifier_requires_minimum_length():
    times = tuple(float(i) for i in range(10))
    with pytest.raises(ValidationError):
        classify_regime(_flat_norm(times))


def test_classifier_synthetic_shapes():
    times = tuple(float(i) for i in range(200))
    up = tuple(0.2 + 0.002 * t for t in times)
    down = tuple(0.8 - 0.002 * t for t in times)
    wave = tuple(0.5 + 0.2 * math.sin(t / 8.0) for t in times)
    flat = tuple(0.5 for _ in times)

    growth = NormalizedTrajectory(times=times, K_norm=up, q=up, theta=up, H_norm=up, Q_norm=flat)
    assert classify_regime(growth).label == "growth"

    decline = NormalizedTrajectory(times=times, K_norm=down, q=down, theta=down, H_norm=down, Q_norm=flat)
    assert classify_regime(decline).label == "decline"

    osc = NormalizedTrajectory(times=times, K_norm=flat, q=wave, theta=flat, H_norm=flat, Q_norm=flat)
    assert classify_regime(osc).label == "oscillatory"

    mixed = NormalizedTrajectory(times=times, K_norm=flat, q=up, theta=down, H_norm=flat, Q_norm=flat)
    assert classify_regime(mixed).label == "mixed"


def test_classifier_determinism_and_exclusivity(preset_runs):
    for name, run in preset_runs.items():
        again = classify_regime(run.norm)
        assert again.label == run.regime.label, name
        assert again.label in ("growth", "stagnation", "decline", "oscillatory", "mixed")
        diag = again.diagnostics
        assert set(diag) == {"final", "initial", "tail_slopes_per_month", "q_peak_count"}


def test_preset_regime_labels(preset_runs):
    # Labels mirror the published qualitative descriptions of each panel.
    assert preset_runs["worst_case"].regime.label == "decline"
    assert preset_runs["oscillations"].regime.label == "oscillatory"
    assert preset_runs["healthy_growth"].regime.label == "growth"


def test_export_row_count(tmp_path, preset_runs):
    run = preset_runs["healthy_growth"]
    short = Trajectory(
        times=run.traj.times[:3], states=run.traj.states[:3], params_snapshot=run.preset.params
    )
    path = export_trajectory(short, tmp_path / "t.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 4
    assert lines[0] == "t,K,q,theta,H,Q,K_norm,H_norm,Q_norm"


def test_export_import_round_trip(tmp_path, preset_runs):
    run = preset_runs["healthy_growth"]
    path = export_trajectory(run.traj, tmp_path / "full.csv")
    cols = import_trajectory(path)
    assert cols["t"] == list(run.traj.times)
    assert cols["K"] == [s.K for s in run.traj.states]
    assert cols["q"] == [s.q for s in run.traj.states]
    assert cols["Q"] == [s.Q for s in run.traj.states]
    # normalized view round-trips through its own header
    npath = export_trajectory(run.norm, tmp_path / "norm.csv")
    ncols = import_trajectory(npath)
    assert ncols["K_norm"] == list(run.norm.K_norm)
    assert ncols["H_norm"] == list(run.norm.H_norm)
    # export of re-imported values is byte-identical
    text1 = path.read_text(encoding="utf-8")
    rebuilt = Trajectory(
        times=tuple(cols["t"]),
        states=tuple(
            run.traj.states[i].__class__(
                K=cols["K"][i], q=cols["q"][i], theta=cols["theta"][i], H=cols["H"][i], Q=cols["Q"][i]
            )
            for i in range(len(cols["t"]))
        ),
        params_snapshot=run.preset.params,
    )
    assert export_trajectory(rebuilt, tmp_path / "full2.csv").read_text(encoding="utf-8") == text1


def test_empty_trajectory_rejected():
    # An empty trajectory cannot even be constructed, so export never sees one.
    with pytest.raises(ValidationError):
        NormalizedTrajectory(times=(), K_norm=(), q=(), theta=(), H_norm=(), Q_norm=())


def test_normalized_lengths_validated():
    with pytest.raises(ValidationError):
        NormalizedTrajectory(
            times=(0.0, 1.0), K_norm=(0.1,), q=(0.5, 0.5), theta=(0.3, 0.3),
            H_norm=(0.1, 0.1), Q_norm=(0.1, 0.1),
        )
