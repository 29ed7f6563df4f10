"""Discrete-monthly forward model and robust multi-start estimation of the
archive-flow triplet (alpha_H, alpha_A, delta_K).

The archive stock advances with the exact one-step solution of
dK/dt = A - delta_K*K under piecewise-constant monthly inputs; quality and
model skill advance by explicit Euler with the fixed auxiliary dynamics.
Fitting minimizes a MAD-scaled soft-l1 loss over independent log-uniform
restarts inside box constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .errors import DomainError, FitError, InsufficientDataError, ValidationError
from .model import ModelParams, answer_accuracy, gate, rlhf_gain, theta_star
from .series import EraWindow, MonthlySeries

BOUNDS = {
    "alpha_H": (1e-8, 10.0),
    "alpha_A": (1e-8, 5.0),
    "delta_K": (1e-6, 0.2),
}

# The corpus cap is always derived as multiplier x cumulative history; the
# fixed block stores the 1.25x baseline, so variants rescale relative to it.
BASE_KMAX_MULTIPLIER = 1.25

_MAD_FLOOR = 1e-9
_XATOL = 1e-10
_MAXITER = 2000


@dataclass(frozen=True)
class CalibFixedBlock:
    """Auxiliary parameters held fixed during flow calibration."""

    K0: float  # era initial stock, items (era-derived)
    K_max: float  # baseline corpus cap, items (era-derived, 1.25x cumulative)
    q_H: float = 0.85
    delta_q: float = 5e-4
    theta_max: float = 1.0
    theta_mid: float = 0.0
    eta_sup: float = 0.02
    eta_RLHF: float = 0.05
    Q_half: float = 5000.0
    a_0: float = 0.60
    kappa_gate: float = 10.0
    q0: float = 0.85
    theta0: float = 0.3

    def __post_init__(self):
        if not self.K0 > 0:
            raise ValidationError(f"K0 must be > 0, got {self.K0}", field="K0")
        if not self.K_max > 0:
            raise ValidationError(f"K_max must be > 0, got {self.K_max}", field="K_max")
        if not 0.0 <= self.q0 <= 1.0:
            raise ValidationError(f"q0 must be in [0, 1], got {self.q0}", field="q0")


@dataclass(frozen=True)
class FlowParams:
    """The estimated archive-flow triplet, kept inside its box."""

    alpha_H: float
    alpha_A: float
    delta_K: float

    def __post_init__(self):
        for name, (lo, hi) in BOUNDS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValidationError(
                    f"{name} must be in [{lo:g}, {hi:g}], got {v}", field=name
                )

    @classmethod
    def unchecked(cls, alpha_H: float, alpha_A: float, delta_K: float) -> "FlowParams":
        """Bypass the box for boundary probes in tests."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "alpha_H", alpha_H)
        object.__setattr__(obj, "alpha_A", alpha_A)
        object.__setattr__(obj, "delta_K", delta_K)
        return obj

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha_H, self.alpha_A, self.delta_K)


@dataclass(frozen=True)
class CalibConfig:
    """Baseline settings plus the robustness-variant switches."""

    fit_target: str = "flow"  # flow | level
    gate_enabled: bool = True
    demand_lag_months: int = 0  # 0 | 1
    kmax_multiplier: float = 1.25  # 1.25 | 1.50
    Q_half_override: Optional[float] = None
    joint_delta_K: bool = False
    restarts: int = 16
    rng_seed: int = 0

    def __post_init__(self):
        if self.fit_target not in ("flow", "level"):
            raise ValidationError(f"fit_target must be flow or level, got {self.fit_target}", field="fit_target")
        if self.demand_lag_months not in (0, 1):
            raise ValidationError(
                f"demand_lag_months must be 0 or 1, got {self.demand_lag_months}", field="demand_lag_months"
            )
        if self.kmax_multiplier not in (1.25, 1.5):
            raise ValidationError(
                f"kmax_multiplier must be 1.25 or 1.50, got {self.kmax_multiplier}", field="kmax_multiplier"
            )
        if self.restarts < 1:
            raise ValidationError(f"restarts must be >= 1, got {self.restarts}", field="restarts")
        if self.Q_half_override is not None and not self.Q_half_override > 0:
            raise ValidationError("Q_half_override must be > 0", field="Q_half_override")


@dataclass(frozen=True)
class RestartRecord:
    seed_params: FlowParams
    converged_params: FlowParams
    loss: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class FitResult:
    flow_params: FlowParams
    loss: float
    rmse_flow: float
    rmse_level: float
    restart_table: tuple[RestartRecord, ...]
    config: CalibConfig
    era: EraWindow

    def as_dict(self) -> dict:
        return {
            "era": {"start": self.era.start, "end": self.era.end, "label": self.era.label},
            "alpha_H": self.flow_params.alpha_H,
            "alpha_A": self.flow_params.alpha_A,
            "delta_K": self.flow_params.delta_K,
            "loss": self.loss,
            "rmse_flow": self.rmse_flow,
            "rmse_level": self.rmse_level,
            "restarts": [
                {
                    "seed": r.seed_params.as_tuple(),
                    "converged": r.converged_params.as_tuple(),
                    "loss": r.loss,
                    "status": "converged" if r.converged else "maxiter",
                    "iterations": r.iterations,
                }
                for r in self.restart_table
            ],
        }


@dataclass(frozen=True)
class FlowSim:
    """Forward-model output: predicted flows and levels plus the aux trail."""

    flows: tuple[float, ...]
    levels: tuple[float, ...]  # end-of-month stocks K_1..K_n
    q: tuple[float, ...]
    theta: tuple[float, ...]
    gates: tuple[float, ...]


def step_K_exact(K: float, A: float, delta_K: float) -> float:
    """Exact one-month stock update under piecewise-constant inflow A.

    Equals (K - A/delta_K) e^(-delta_K) + A/delta_K for delta_K > 0 and
    K + A at delta_K = 0, written in expm1 form so the two branches agree
    continuously through delta_K -> 0.
    """
    if K < 0 or A < 0 or delta_K < 0:
        raise ValidationError("step_K_exact requires K, A, delta_K >= 0", field="delta_K")
    if delta_K == 0.0:
        return K + A
    em = -math.expm1(-delta_K)  # 1 - e^(-delta_K), accurate near 0
    return K * math.exp(-delta_K) + A * em / delta_K


def _aux_params(
    fixed: CalibFixedBlock,
    flow: FlowParams,
    kmax_multiplier: float = BASE_KMAX_MULTIPLIER,
    q_half_override: Optional[float] = None,
) -> ModelParams:
    """Embed the fixed block and flow triplet in a full parameter record so the
    auxiliary closed forms are evaluated by the same code as the ODE model."""
    return ModelParams(
        alpha_H=flow.alpha_H,
        alpha_A=flow.alpha_A,
        delta_K=flow.delta_K,
        q_H=fixed.q_H,
        delta_q=fixed.delta_q,
        eta_sup=fixed.eta_sup,
        eta_RLHF=fixed.eta_RLHF,
        theta_max=fixed.theta_max,
        theta_mid=fixed.theta_mid,
        K_max=fixed.K_max * (kmax_multiplier / BASE_KMAX_MULTIPLIER),
        Q_half=q_half_override if q_half_override is not None else fixed.Q_half,
        beta_K=0.0,
        beta_A=0.0,
        gamma_H=0.0,
        H_inf=1.0,
        hill_beta=1.0,
        K_half=1.0,
        Q_sat=1.0,
        xi_0=0.0,
        kappa_H=0.0,
        T_difficulty=0.0,
        rho_Q=0.0,
        a_0=fixed.a_0,
        kappa_gate=fixed.kappa_gate,
    )


def _advance(
    q: float, theta: float, H_t: float, Q_t: float, K_t: float, mp: ModelParams, gate_enabled: bool
) -> tuple[float, float]:
    if K_t <= 0:
        raise DomainError(f"K must be > 0 in the quality update, got {K_t}")
    a = answer_accuracy(theta, q, mp)
    g = gate(a, mp) if gate_enabled else 1.0
    dq = (mp.alpha_H * H_t / K_t) * (mp.q_H - q) + (mp.alpha_A * Q_t * g / K_t) * (a - q) - mp.delta_q * q
    dtheta = mp.eta_sup * (theta_star(K_t, q, mp) - theta) + mp.eta_RLHF * rlhf_gain(theta, Q_t, mp)
    return min(max(q + dq, 0.0), 1.0), theta + dtheta


def advance_aux(
    q: float,
    theta: float,
    H_t: float,
    Q_t: float,
    K_t: float,
    fixed: CalibFixedBlock,
    flow: FlowParams,
    gate_enabled: bool = True,
) -> tuple[float, float]:
    """One explicit-Euler month for (q, theta) with inputs held constant.

    q is clipped to [0, 1] after the step; the gate is replaced by the
    constant 1 when disabled.
    """
    return _advance(q, theta, H_t, Q_t, K_t, _aux_params(fixed, flow), gate_enabled)


def simulate_flows(
    data: MonthlySeries, flow: FlowParams, fixed: CalibFixedBlock, config: CalibConfig
) -> FlowSim:
    """Predicted monthly flows and stock levels for one era.

    Per month: accuracy and gate from the current (theta, q), inflow
    A_t = alpha_H H_t + alpha_A Q_t g(a_t), exact stock update, then the
    Euler advance of (q, theta). A demand lag of one month replaces Q_t by
    Q_{t-1} everywhere in the month-t computation, with the first month
    reusing the earliest available value.
    """
    if len(data) == 0:
        raise InsufficientDataError("series is empty", field="months")
    if not fixed.K0 > 0:
        raise ValidationError("K0 must be > 0", field="K0")
    mp = _aux_params(fixed, flow, config.kmax_multiplier, config.Q_half_override)
    lag = config.demand_lag_months
    K = fixed.K0
    q = fixed.q0
    theta = fixed.theta0
    flows, levels, qs, thetas, gates = [], [], [], [], []
    for t in range(len(data)):
        Q_t = data.Q_millions[max(t - lag, 0)]
        H_t = data.H[t]
        a_t = answer_accuracy(theta, q, mp)
        g_t = gate(a_t, mp) if config.gate_enabled else 1.0
        A_t = flow.alpha_H * H_t + flow.alpha_A * Q_t * g_t
        K_next = step_K_exact(K, A_t, flow.delta_K)
        flows.append(K_next - K)
        levels.append(K_next)
        qs.append(q)
        thetas.append(theta)
        gates.append(g_t)
        q, theta = _advance(q, theta, H_t, Q_t, K, mp, config.gate_enabled)
        K = K_next
    return FlowSim(
        flows=tuple(flows),
        levels=tuple(levels),
        q=tuple(qs),
        theta=tuple(thetas),
        gates=tuple(gates),
    )


def soft_l1_rho(z: float) -> float:
    """Per-residual robust transform: quadratic near 0, linear in the tails."""
    return 2.0 * (math.sqrt(1.0 + z) - 1.0)


def soft_l1_objective(predicted, observed) -> float:
    """MAD-scaled soft-l1 loss between two equal-length flow vectors."""
    p = np.asarray(predicted, dtype=float)
    o = np.asarray(observed, dtype=float)
    if p.shape != o.shape:
        raise ValidationError(
            f"predicted and observed lengths differ ({p.shape} vs {o.shape})", field="predicted"
        )
    if p.ndim != 1 or len(p) < 3:
        raise ValidationError("need at least 3 residuals", field="predicted")
    r = p - o
    s = max(1.4826 * float(np.median(np.abs(r - np.median(r)))), _MAD_FLOOR)
    z = (r / s) ** 2
    return float(np.sum(2.0 * (np.sqrt(1.0 + z) - 1.0)))


def _mad_scale(values: np.ndarray) -> float:
    return max(1.4826 * float(np.median(np.abs(values - np.median(values)))), _MAD_FLOOR)


def _frozen_loss(residuals: np.ndarray, scale: float) -> float:
    """Soft-l1 loss at a frozen MAD scale.

    The scale must not be recomputed from the candidate's own residuals
    inside the minimization: that makes the loss scale-invariant and the
    optimizer then matches residual shape instead of size.
    """
    z = (residuals / scale) ** 2
    return float(np.sum(2.0 * (np.sqrt(1.0 + z) - 1.0)))


def _observed_targets(data: MonthlySeries, fixed: CalibFixedBlock) -> tuple[np.ndarray, np.ndarray]:
    flows = np.asarray(data.delta_K, dtype=float)
    levels = fixed.K0 + np.cumsum(flows)
    return flows, levels


def _era_of(data: MonthlySeries, label: str) -> EraWindow:
    return EraWindow(start=data.months[0], end=data.months[-1], label=label)


def _rmse(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    d = (a - b)[mask]
    return float(np.sqrt(np.mean(d * d)))


_BOUND_KEYS = ("alpha_H", "alpha_A", "delta_K")
_LOS = np.array([BOUNDS[k][0] for k in _BOUND_KEYS])
_HIS = np.array([BOUNDS[k][1] for k in _BOUND_KEYS])


def _to_box(u: np.ndarray, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    return los + (his - los) * expit(u)


def _from_box(p: np.ndarray, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    frac = np.clip((p - los) / (his - los), 1e-15, 1.0 - 1e-15)
    return logit(frac)


def _log_uniform_seeds(rng: np.random.Generator, n: int, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    return np.exp(rng.uniform(np.log(los), np.log(his), size=(n, len(los))))


def _minimize(objective, u0: np.ndarray):
    return minimize(
        objective,
        u0,
        method="Nelder-Mead",
        options={"xatol": _XATOL, "fatol": 1e-12, "maxiter": _MAXITER, "maxfev": 10 * _MAXITER},
    )


def fit(
    data: MonthlySeries,
    fixed: CalibFixedBlock,
    config: CalibConfig,
    era_label: str = "",
) -> FitResult:
    """Estimate the flow triplet by multi-start bounded robust least squares.

    Two frozen-scale stages: every restart first minimizes the soft-l1 loss
    at the observed-target MAD scale, then all endpoints are re-refined at
    the MAD scale of the stage-1 best fit's residuals so restarts are ranked
    on one common scale.
    """
    if len(data) < 12:
        raise InsufficientDataError(
            f"calibration needs >= 12 months, got {len(data)}", field="months"
        )
    obs_flows, obs_levels = _observed_targets(data, fixed)
    mask = np.asarray(data.residual_mask())
    target_obs = obs_flows[mask] if config.fit_target == "flow" else obs_levels[mask]

    def predicted(flow: FlowParams) -> np.ndarray:
        sim = simulate_flows(data, flow, fixed, config)
        series = sim.flows if config.fit_target == "flow" else sim.levels
        return np.asarray(series)[mask]

    def make_objective(scale: float):
        def objective(u: np.ndarray) -> float:
            p = _to_box(u, _LOS, _HIS)
            return _frozen_loss(predicted(FlowParams(*p)) - target_obs, scale)

        return objective

    rng = np.random.default_rng(config.rng_seed)
    seeds = _log_uniform_seeds(rng, config.restarts, _LOS, _HIS)

    obj1 = make_objective(_mad_scale(target_obs))
    stage1 = [_minimize(obj1, _from_box(seeds[i], _LOS, _HIS)) for i in range(config.restarts)]
    best1 = min(range(len(stage1)), key=lambda i: (stage1[i].fun, i))
    r_best = predicted(FlowParams(*_to_box(np.asarray(stage1[best1].x), _LOS, _HIS))) - target_obs
    scale2 = _mad_scale(r_best)

    obj2 = make_objective(scale2)
    records: list[RestartRecord] = []
    for i in range(config.restarts):
        res = _minimize(obj2, np.asarray(stage1[i].x))
        p = _to_box(np.asarray(res.x), _LOS, _HIS)
        records.append(
            RestartRecord(
                seed_params=FlowParams(*seeds[i]),
                converged_params=FlowParams(*p),
                loss=float(res.fun),
                converged=bool(res.success and stage1[i].success),
                iterations=int(res.nit) + int(stage1[i].nit),
            )
        )
    if not any(r.converged for r in records):
        raise FitError(
            "no optimizer restart converged",
            statuses=[(r.loss, r.converged, r.iterations) for r in records],
        )
    best_idx = min(range(len(records)), key=lambda i: (records[i].loss, i))
    best = records[best_idx]
    sim = simulate_flows(data, best.converged_params, fixed, config)
    return FitResult(
        flow_params=best.converged_params,
        loss=best.loss,
        rmse_flow=_rmse(np.asarray(sim.flows), obs_flows, mask),
        rmse_level=_rmse(np.asarray(sim.levels), obs_levels, mask),
        restart_table=tuple(records),
        config=config,
        era=_era_of(data, era_label),
    )


def fit_joint_delta(
    data_pre: MonthlySeries,
    data_post: MonthlySeries,
    fixed_pre: CalibFixedBlock,
    fixed_post: CalibFixedBlock,
    config: CalibConfig,
) -> tuple[FitResult, FitResult, float]:
    """Joint fit of both eras with a shared decay rate.

    Optimizes (alpha_H_pre, alpha_A_pre, alpha_H_post, alpha_A_post, delta_K)
    against the sum of the two eras' soft-l1 losses.
    """
    for name, data in (("pre", data_pre), ("post", data_post)):
        if len(data) < 12:
            raise InsufficientDataError(
                f"{name} era needs >= 12 months, got {len(data)}", field="months"
            )
    los = np.array([BOUNDS["alpha_H"][0], BOUNDS["alpha_A"][0]] * 2 + [BOUNDS["delta_K"][0]])
    his = np.array([BOUNDS["alpha_H"][1], BOUNDS["alpha_A"][1]] * 2 + [BOUNDS["delta_K"][1]])

    obs_pre, obs_pre_lv = _observed_targets(data_pre, fixed_pre)
    obs_post, obs_post_lv = _observed_targets(data_post, fixed_post)
    mask_pre = np.asarray(data_pre.residual_mask())
    mask_post = np.asarray(data_post.residual_mask())

    target_pre = obs_pre[mask_pre] if config.fit_target == "flow" else obs_pre_lv[mask_pre]
    target_post = obs_post[mask_post] if config.fit_target == "flow" else obs_post_lv[mask_post]

    def split(p: np.ndarray) -> tuple[FlowParams, FlowParams]:
        return FlowParams(p[0], p[1], p[4]), FlowParams(p[2], p[3], p[4])

    def predicted_pair(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f_pre, f_post = split(p)
        sim_pre = simulate_flows(data_pre, f_pre, fixed_pre, config)
        sim_post = simulate_flows(data_post, f_post, fixed_post, config)
        if config.fit_target == "flow":
            return np.asarray(sim_pre.flows)[mask_pre], np.asarray(sim_post.flows)[mask_post]
        return np.asarray(sim_pre.levels)[mask_pre], np.asarray(sim_post.levels)[mask_post]

    def make_objective(s_pre: float, s_post: float):
        def objective(u: np.ndarray) -> float:
            pred_pre, pred_post = predicted_pair(_to_box(u, los, his))
            return _frozen_loss(pred_pre - target_pre, s_pre) + _frozen_loss(
                pred_post - target_post, s_post
            )

        return objective

    rng = np.random.default_rng(config.rng_seed)
    seeds = _log_uniform_seeds(rng, config.restarts, los, his)

    obj1 = make_objective(_mad_scale(target_pre), _mad_scale(target_post))
    stage1 = [_minimize(obj1, _from_box(seeds[i], los, his)) for i in range(config.restarts)]
    best1 = min(range(len(stage1)), key=lambda i: (stage1[i].fun, i))
    rp, rq = predicted_pair(_to_box(np.asarray(stage1[best1].x), los, his))
    obj2 = make_objective(_mad_scale(rp - target_pre), _mad_scale(rq - target_post))

    rows: list[tuple[np.ndarray, np.ndarray, float, bool, int]] = []
    for i in range(config.restarts):
        res = _minimize(obj2, np.asarray(stage1[i].x))
        rows.append(
            (
                seeds[i],
                _to_box(np.asarray(res.x), los, his),
                float(res.fun),
                bool(res.success and stage1[i].success),
                int(res.nit) + int(stage1[i].nit),
            )
        )
    if not any(r[3] for r in rows):
        raise FitError("no optimizer restart converged", statuses=[(r[2], r[3]) for r in rows])
    best_idx = min(range(len(rows)), key=lambda i: (rows[i][2], i))
    seed_best, p_best, loss_best, _, _ = rows[best_idx]
    f_pre, f_post = split(p_best)
    shared_delta = float(p_best[4])

    def build_result(data, fixed, flow, obs_fl, obs_lv, mask, label) -> FitResult:
        sim = simulate_flows(data, flow, fixed, config)
        table = tuple(
            RestartRecord(
                seed_params=FlowParams(s[0] if label == "pre" else s[2], s[1] if label == "pre" else s[3], s[4]),
                converged_params=split(p)[0 if label == "pre" else 1],
                loss=loss,
                converged=ok,
                iterations=it,
            )
            for (s, p, loss, ok, it) in rows
        )
        return FitResult(
            flow_params=flow,
            loss=loss_best,
            rmse_flow=_rmse(np.asarray(sim.flows), obs_fl, mask),
            rmse_level=_rmse(np.asarray(sim.levels), obs_lv, mask),
            restart_table=table,
            config=config,
            era=_era_of(data, label),
        )

    res_pre = build_result(data_pre, fixed_pre, f_pre, obs_pre, obs_pre_lv, mask_pre, "pre")
    res_post = build_result(data_post, fixed_post, f_post, obs_post, obs_post_lv, mask_post, "post")
    return res_pre, res_post, shared_delta


VARIANTS = (
    "baseline",
    "level_target",
    "gate_off",
    "demand_lag_1",
    "kmax_1_50",
    "q_half_2500",
    "joint_delta_K",
)


@dataclass(frozen=True)
class VariantRow:
    variant: str
    pre: Optional[FitResult]
    post: Optional[FitResult]
    pre_error: str = ""
    post_error: str = ""
    shared_delta_K: Optional[float] = None


def variant_config(base: CalibConfig, variant: str) -> CalibConfig:
    if variant == "baseline":
        return base
    if variant == "level_target":
        return replace(base, fit_target="level")
    if variant == "gate_off":
        return replace(base, gate_enabled=False)
    if variant == "demand_lag_1":
        return replace(base, demand_lag_months=1)
    if variant == "kmax_1_50":
        return replace(base, kmax_multiplier=1.5)
    if variant == "q_half_2500":
        return replace(base, Q_half_override=2500.0)
    if variant == "joint_delta_K":
        return replace(base, joint_delta_K=True)
    raise ValidationError(f"unknown variant {variant!r}", field="variant")


def run_variant_matrix(
    data_pre: MonthlySeries,
    data_post: MonthlySeries,
    fixed_pre: CalibFixedBlock,
    fixed_post: CalibFixedBlock,
    config: CalibConfig = CalibConfig(),
) -> list[VariantRow]:
    """Baseline plus the five robustness variants plus the joint-delta fit.

    Per-cell failures are recorded in the row; the matrix always completes.
    """
    rows: list[VariantRow] = []
    for variant in VARIANTS:
        cfg = variant_config(config, variant)
        if variant == "joint_delta_K":
            try:
                pre, post, shared = fit_joint_delta(data_pre, data_post, fixed_pre, fixed_post, cfg)
                rows.append(VariantRow(variant=variant, pre=pre, post=post, shared_delta_K=shared))
            except Exception as exc:  # noqa: BLE001 - per-cell failures must not stop the matrix
                rows.append(
                    VariantRow(variant=variant, pre=None, post=None, pre_error=str(exc), post_error=str(exc))
                )
            continue
        pre = post = None
        pre_err = post_err = ""
        try:
            pre = fit(data_pre, fixed_pre, cfg, era_label="pre")
        except Exception as exc:  # noqa: BLE001
            pre_err = str(exc)
        try:
            post = fit(data_post, fixed_post, cfg, era_label="post")
        except Exception as exc:  # noqa: BLE001
            post_err = str(exc)
        rows.append(VariantRow(variant=variant, pre=pre, post=post, pre_error=pre_err, post_error=post_err))
    return rows
