"""Named scenario presets, trajectory normalization, regime classification,
and the trajectory/scenario file formats.

Nine regime presets share a common fixed block and differ only in the bold
lever values; the two case-study presets (medical research, open-source
software) carry their own fixed blocks.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.signal import find_peaks

from .errors import ConfigFileError, UnknownPresetError, ValidationError
from .integrate import IntegratorConfig, Trajectory
from .model import ModelParams, State

DEFAULT_Y0 = State(K=100.0, q=0.5, theta=0.3, H=10.0, Q=50.0)
DEFAULT_T_END = 1000

# Classifier thresholds, calibrated against the nine regime presets and frozen.
# The oscillating preset's first quality peak lands near t = 612 with a ~290
# month period, so a 1000-month run shows two interior maxima; requiring two
# labels it oscillatory while every non-oscillatory preset counts zero.
SLOPE_EPS = 1e-5  # per month
PEAK_PROMINENCE = 0.01
PEAK_COUNT = 2
GROWTH_MARGIN = 0.05
TAIL_FRACTION = 0.2
MIN_POINTS = 50

REGIME_LABELS = ("growth", "stagnation", "decline", "oscillatory", "mixed")


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    label: str
    params: ModelParams
    y0: State
    config: IntegratorConfig


@dataclass(frozen=True)
class NormalizedTrajectory:
    """Plot-ready view: K/K_max, q, theta, H/H_inf, Q/Q_sat."""

    times: tuple[float, ...]
    K_norm: tuple[float, ...]
    q: tuple[float, ...]
    theta: tuple[float, ...]
    H_norm: tuple[float, ...]
    Q_norm: tuple[float, ...]

    def __post_init__(self):
        n = len(self.times)
        if n == 0:
            raise ValidationError("normalized trajectory must contain at least one point", field="times")
        for name in ("K_norm", "q", "theta", "H_norm", "Q_norm"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} length differs from times", field=name)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class RegimeLabel:
    label: str
    diagnostics: dict

    def __post_init__(self):
        if self.label not in REGIME_LABELS:
            raise ValidationError(f"unknown regime label {self.label!r}", field="label")


# Fixed across the nine regime presets.
_REGIME_COMMONS = dict(
    delta_K=0.01,
    q_H=0.95,
    delta_q=0.001,
    theta_mid=0.0,
    theta_max=1.0,
    K_max=1e4,
    gamma_H=0.05,
    Q_sat=500.0,
    H_inf=100.0,
    rho_Q=0.01,
)

# Shared by regime presets except where a column overrides them.
_REGIME_BASE = dict(
    alpha_H=0.5,
    alpha_A=0.05,
    beta_K=0.05,
    beta_A=0.03,
    eta_sup=0.05,
    eta_RLHF=0.03,
    a_0=0.5,
    Q_half=5000.0,
    hill_beta=0.9,
    K_half=300.0,
    xi_0=2.0,
    kappa_H=0.05,
    T_difficulty=10.0,
    kappa_gate=10.0,
)


def _regime_params(**overrides) -> ModelParams:
    values = dict(_REGIME_COMMONS)
    values.update(_REGIME_BASE)
    values.update(overrides)
    return ModelParams(**values)


_MEDICAL = ModelParams(
    alpha_H=0.32,
    alpha_A=0.05,
    delta_K=0.010,
    q_H=0.99,
    delta_q=0.0005,
    theta_mid=0.0,
    theta_max=1.0,
    K_max=1e5,
    eta_sup=0.10,
    eta_RLHF=0.30,
    Q_half=8000.0,
    beta_K=0.20,
    beta_A=0.05,
    gamma_H=0.02,
    Q_sat=1000.0,
    H_inf=100.0,
    K_half=300.0,
    hill_beta=0.9,
    xi_0=2.0,
    kappa_H=0.05,
    rho_Q=0.02,
    T_difficulty=10.0,
    a_0=0.90,
    kappa_gate=20.0,
)

_OSS = ModelParams(
    alpha_H=5.0,
    alpha_A=4.26,
    delta_K=0.023,
    q_H=0.90,
    delta_q=0.002,
    theta_mid=0.0,
    theta_max=1.0,
    K_max=5e5,
    eta_sup=0.12,
    eta_RLHF=0.25,
    Q_half=5000.0,
    beta_K=0.30,
    beta_A=0.10,
    gamma_H=0.03,
    Q_sat=500.0,
    H_inf=100.0,
    K_half=300.0,
    hill_beta=0.9,
    xi_0=2.0,
    kappa_H=0.05,
    rho_Q=0.02,
    T_difficulty=10.0,
    a_0=0.60,
    kappa_gate=8.0,
)

_PRESET_PARAMS: dict[str, tuple[str, ModelParams]] = {
    "pre_llm": (
        "Pre-LLM Era (no AI contributions or AI learning)",
        _regime_params(alpha_A=0.0, beta_A=0.0, eta_sup=0.0, eta_RLHF=0.0, a_0=0.0, xi_0=0.0),
    ),
    "healthy_growth": ("Healthy Growth", _regime_params()),
    "tighter_gate": ("Healthy Growth with a Tighter Gate", _regime_params(a_0=0.8)),
    "inverted_flow": ("Inverted Flow", _regime_params(alpha_H=0.05, alpha_A=0.5)),
    "inverted_learning": ("Inverted Learning", _regime_params(beta_K=0.03, beta_A=0.05)),
    "worst_case": (
        "Inverted Flow and Inverted Learning",
        _regime_params(alpha_H=0.05, alpha_A=0.5, beta_K=0.03, beta_A=0.05),
    ),
    "gate_tightening": (
        "Gate Tightening Stops Collapse",
        _regime_params(alpha_H=0.25, alpha_A=0.3, beta_K=0.03, beta_A=0.05, a_0=0.8),
    ),
    "rlhf_recovery": (
        "Model Recovery due to RLHF",
        _regime_params(alpha_H=0.05, alpha_A=0.5, beta_K=0.03, beta_A=0.05, eta_RLHF=0.5),
    ),
    "oscillations": (
        "Periodic Oscillations",
        _regime_params(
            alpha_H=0.05,
            alpha_A=0.5,
            beta_A=0.3,
            eta_RLHF=0.5,
            Q_half=100.0,
            hill_beta=4.0,
            K_half=200.0,
            kappa_H=0.9,
            T_difficulty=10000.0,
            kappa_gate=1.0,
        ),
    ),
    "medical": ("Medical Research (biomedical corpora)", _MEDICAL),
    "oss": ("Open Source Software (code hosting with AI assistance)", _OSS),
}

PRESET_NAMES = tuple(_PRESET_PARAMS)


def load_preset(name: str) -> ScenarioPreset:
    """Return a built-in preset by name, or parse a scenario file by path."""
    if name in _PRESET_PARAMS:
        label, params = _PRESET_PARAMS[name]
        return ScenarioPreset(
            name=name,
            label=label,
            params=params,
            y0=DEFAULT_Y0,
            config=IntegratorConfig(t_end=DEFAULT_T_END),
        )
    path = Path(name)
    if path.suffix or path.exists():
        return load_scenario_file(path)
    raise UnknownPresetError(
        f"unknown preset {name!r}; valid names: {', '.join(PRESET_NAMES)}", field="preset"
    )


_Y0_KEYS = ("K0", "q0", "theta0", "H0", "Q0")
_PARAM_KEYS = tuple(f.name for f in dataclasses.fields(ModelParams))


def load_scenario_file(path: Union[str, Path]) -> ScenarioPreset:
    """Parse a flat key = value scenario file.

    Keys must exactly match the parameter field names, plus K0, q0, theta0,
    H0, Q0 and t_end; unknown keys are errors so typos in 24-parameter
    records cannot pass silently.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(f"cannot read scenario file {path}: {exc}") from exc

    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _PARAM_KEYS and key not in _Y0_KEYS and key != "t_end":
            raise ConfigFileError(f"{path}:{lineno}: unknown key {key!r}", field=key)
        if key in values:
            raise ConfigFileError(f"{path}:{lineno}: duplicate key {key!r}", field=key)
        try:
            values[key] = float(val)
        except ValueError as exc:
            raise ConfigFileError(f"{path}:{lineno}: invalid number {val!r} for {key}", field=key) from exc

    missing = [k for k in _PARAM_KEYS if k not in values]
    if missing:
        raise ConfigFileError(f"{path}: missing parameter keys: {', '.join(missing)}", field=missing[0])

    params = ModelParams(**{k: values[k] for k in _PARAM_KEYS})
    y0 = State(
        K=values.get("K0", DEFAULT_Y0.K),
        q=values.get("q0", DEFAULT_Y0.q),
        theta=values.get("theta0", DEFAULT_Y0.theta),
        H=values.get("H0", DEFAULT_Y0.H),
        Q=values.get("Q0", DEFAULT_Y0.Q),
    )
    t_end = int(values.get("t_end", DEFAULT_T_END))
    return ScenarioPreset(
        name=path.stem,
        label=f"user scenario {path.name}",
        params=params,
        y0=y0,
        config=IntegratorConfig(t_end=t_end),
    )


def normalize(traj: Trajectory) -> NormalizedTrajectory:
    """Divide K by K_max, H by H_inf and Q by Q_sat; q and theta pass through."""
    p = traj.params_snapshot
    return NormalizedTrajectory(
        times=traj.times,
        K_norm=tuple(s.K / p.K_max for s in traj.states),
        q=tuple(s.q for s in traj.states),
        theta=tuple(s.theta for s in traj.states),
        H_norm=tuple(s.H / p.H_inf for s in traj.states),
        Q_norm=tuple(s.Q / p.Q_sat for s in traj.states),
    )


def _tail_slope(times: np.ndarray, series: np.ndarray) -> float:
    """Least-squares slope over the final fifth of the grid, per month."""
    n = len(times)
    start = n - max(2, int(math.ceil(n * TAIL_FRACTION)))
    t = times[start:]
    y = series[start:]
    t = t - t.mean()
    denom = float(np.dot(t, t))
    if denom == 0.0:
        return 0.0
    return float(np.dot(t, y - y.mean()) / denom)


def classify_regime(traj: NormalizedTrajectory) -> RegimeLabel:
    """Deterministically label a normalized trajectory.

    Precedence: oscillatory, then decline, then growth, then stagnation,
    with mixed as the fallback, so exactly one label applies.
    """
    if len(traj) < MIN_POINTS:
        raise ValidationError(
            f"trajectory too short to classify ({len(traj)} < {MIN_POINTS} points)", field="times"
        )
    times = np.asarray(traj.times)
    q = np.asarray(traj.q)
    theta = np.asarray(traj.theta)
    h = np.asarray(traj.H_norm)

    window_start = int(len(q) * 0.2)
    peaks, _ = find_peaks(q[window_start:], prominence=PEAK_PROMINENCE)
    peak_count = int(len(peaks))

    slopes = {
        "q": _tail_slope(times, q),
        "theta": _tail_slope(times, theta),
        "H_norm": _tail_slope(times, h),
    }
    finals = {
        "K_norm": float(traj.K_norm[-1]),
        "q": float(q[-1]),
        "theta": float(theta[-1]),
        "H_norm": float(h[-1]),
        "Q_norm": float(traj.Q_norm[-1]),
    }
    initials = {"q": float(q[0]), "theta": float(theta[0]), "H_norm": float(h[0])}

    slope_vals = list(slopes.values())
    if peak_count >= PEAK_COUNT:
        label = "oscillatory"
    elif all(s < -SLOPE_EPS for s in slope_vals):
        label = "decline"
    elif all(s > SLOPE_EPS for s in slope_vals) or (
        all(s >= 0.0 for s in slope_vals)
        and all(finals[k] > initials[k] * (1.0 + GROWTH_MARGIN) for k in initials)
    ):
        label = "growth"
    elif all(abs(s) <= SLOPE_EPS for s in slope_vals):
        label = "stagnation"
    else:
        label = "mixed"

    return RegimeLabel(
        label=label,
        diagnostics={
            "final": finals,
            "initial": initials,
            "tail_slopes_per_month": slopes,
            "q_peak_count": peak_count,
        },
    )


_FULL_HEADER = "t,K,q,theta,H,Q,K_norm,H_norm,Q_norm"
_NORM_HEADER = "t,K_norm,q,theta,H_norm,Q_norm"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_trajectory(traj: Union[Trajectory, NormalizedTrajectory], path: Union[str, Path]) -> Path:
    """Write a trajectory as UTF-8 CSV with full double precision.

    A raw Trajectory is written in the canonical nine-column format with
    normalized columns included; a NormalizedTrajectory is written as the
    six-column normalized view.
    """
    path = Path(path)
    if len(traj) == 0:
        raise ValidationError("cannot export an empty trajectory", field="times")
    lines = []
    if isinstance(traj, Trajectory):
        p = traj.params_snapshot
        lines.append(_FULL_HEADER)
        for t, s in zip(traj.times, traj.states):
            row = (t, s.K, s.q, s.theta, s.H, s.Q, s.K / p.K_max, s.H / p.H_inf, s.Q / p.Q_sat)
            lines.append(",".join(_fmt(v) for v in row))
    else:
        lines.append(_NORM_HEADER)
        for i in range(len(traj)):
            row = (
                traj.times[i],
                traj.K_norm[i],
                traj.q[i],
                traj.theta[i],
                traj.H_norm[i],
                traj.Q_norm[i],
            )
            lines.append(",".join(_fmt(v) for v in row))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write trajectory file {path}: {exc}") from exc
    return path


def import_trajectory(path: Union[str, Path]) -> dict[str, list[float]]:
    """Read a trajectory CSV back into column arrays, keyed by header name."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read trajectory file {path}: {exc}") from exc
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] not in (_FULL_HEADER, _NORM_HEADER):
        raise ValidationError(f"{path}: unrecognized trajectory header", field="header")
    names = lines[0].split(",")
    columns: dict[str, list[float]] = {name: [] for name in names}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(names):
            raise ValidationError(f"{path}:{lineno}: expected {len(names)} columns", field="row")
        for name, part in zip(names, parts):
            columns[name].append(float(part))
    return columns
