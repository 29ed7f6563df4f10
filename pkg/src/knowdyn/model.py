"""Five-state vector field for a coupled human-AI knowledge archive.

State variables: archive size K, archive quality q, model skill theta,
aggregate human skill H, and query volume Q. All rates are per month.
The module is pure: every operation is a function of its arguments, and
``ModelParams``/``State`` are immutable values safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import DomainError, IntegrationError, ValidationError

# exp() overflows past ~709.78; clamping keeps extreme sweep inputs finite.
_EXP_CLAMP = 700.0

# Below this the 1/K terms in the quality equation are treated as a domain
# error rather than regularized.
K_FLOOR = 1e-12


def _exp(x: float) -> float:
    if x > _EXP_CLAMP:
        x = _EXP_CLAMP
    elif x < -_EXP_CLAMP:
        x = -_EXP_CLAMP
    return math.exp(x)


_RATE_FIELDS = (
    "alpha_H",
    "alpha_A",
    "delta_K",
    "delta_q",
    "eta_sup",
    "eta_RLHF",
    "beta_K",
    "beta_A",
    "gamma_H",
    "xi_0",
    "kappa_H",
    "T_difficulty",
    "rho_Q",
    "kappa_gate",
)

_POSITIVE_FIELDS = (
    "theta_max",
    "K_max",
    "Q_half",
    "H_inf",
    "hill_beta",
    "K_half",
    "Q_sat",
)

_UNIT_FIELDS = ("q_H", "a_0")


@dataclass(frozen=True)
class ModelParams:
    """Every rate constant and auxiliary-function constant of the model.

    Validation happens once at construction; evaluation paths assume a
    valid record (the vector field is the hot path for sweeps).
    """

    alpha_H: float  # archive items per unit human skill per month
    alpha_A: float  # archive items per accepted AI answer per month
    delta_K: float  # archive obsolescence per month
    q_H: float  # quality of human contributions, in [0, 1]
    delta_q: float  # spontaneous quality drift per month
    eta_sup: float  # supervised learning rate per month
    eta_RLHF: float  # feedback learning rate per month
    theta_max: float  # skill ceiling, > 0
    theta_mid: float  # logistic midpoint of the skill curve
    K_max: float  # reference corpus size, > 0
    Q_half: float  # feedback half-saturation, > 0
    beta_K: float  # archive-study learning rate per month
    beta_A: float  # AI-tutoring learning rate per month
    gamma_H: float  # skill forgetting rate per month
    H_inf: float  # human skill ceiling, > 0
    hill_beta: float  # Hill exponent, > 0
    K_half: float  # human-ceiling half-saturation, > 0
    Q_sat: float  # tutoring half-saturation, > 0
    xi_0: float  # baseline query generation per month, >= 0
    kappa_H: float  # query sensitivity to human skill, >= 0
    T_difficulty: float  # task difficulty, >= 0
    rho_Q: float  # query dissipation per month
    a_0: float  # gate threshold, in [0, 1]
    kappa_gate: float  # gate steepness, >= 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"{f.name} must be a finite number, got {v!r}", field=f.name)
        for name in _RATE_FIELDS:
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}", field=name)
        for name in _POSITIVE_FIELDS:
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0, got {getattr(self, name)}", field=name)
        for name in _UNIT_FIELDS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}", field=name)

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class State:
    """One point of the five-state system.

    The constructor enforces the parameter-free part of the physical
    domain (K, H, Q, theta >= 0 and q in [0, 1]); the theta <= theta_max
    face needs a parameter set and is checked by :func:`in_domain`.
    """

    K: float
    q: float
    theta: float
    H: float
    Q: float

    def __post_init__(self):
        for name in ("K", "q", "theta", "H", "Q"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"{name} must be a finite number, got {v!r}", field=name)
        if self.K < 0:
            raise ValidationError(f"K must be >= 0, got {self.K}", field="K")
        if not 0.0 <= self.q <= 1.0:
            raise ValidationError(f"q must be in [0, 1], got {self.q}", field="q")
        if self.theta < 0:
            raise ValidationError(f"theta must be >= 0, got {self.theta}", field="theta")
        if self.H < 0:
            raise ValidationError(f"H must be >= 0, got {self.H}", field="H")
        if self.Q < 0:
            raise ValidationError(f"Q must be >= 0, got {self.Q}", field="Q")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.K, self.q, self.theta, self.H, self.Q)

    def as_dict(self) -> dict[str, float]:
        return {"K": self.K, "q": self.q, "theta": self.theta, "H": self.H, "Q": self.Q}


@dataclass(frozen=True)
class Derivative:
    """Time derivative of a State, per month."""

    dK: float
    dq: float
    dtheta: float
    dH: float
    dQ: float

    def __post_init__(self):
        for name in ("dK", "dq", "dtheta", "dH", "dQ"):
            if not math.isfinite(getattr(self, name)):
                raise IntegrationError(f"non-finite derivative component {name}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.dK, self.dq, self.dtheta, self.dH, self.dQ)


def in_domain(state: State, params: ModelParams, band: float = 0.0) -> bool:
    """True when the state lies in the physical domain, up to `band` slack."""
    return (
        state.K >= -band
        and -band <= state.q <= 1.0 + band
        and -band <= state.theta <= params.theta_max + band
        and state.H >= -band
        and state.Q >= -band
    )


def sigma(theta: float, params: ModelParams) -> float:
    """Logistic skill curve mapping raw capacity to base correctness."""
    return 1.0 / (1.0 + _exp(-(theta - params.theta_mid)))


def answer_accuracy(theta: float, q: float, params: ModelParams) -> float:
    """Answer accuracy as the product of the skill curve and archive quality."""
    return sigma(theta, params) * q


def gate(a: float, params: ModelParams) -> float:
    """Fraction of AI outputs admitted to the archive at accuracy `a`."""
    return 1.0 / (1.0 + _exp(-params.kappa_gate * (a - params.a_0)))


def theta_star(K: float, q: float, params: ModelParams) -> float:
    """Attainable training skill: logarithmic in archive size, linear in quality."""
    return params.theta_max * (math.log1p(K) / math.log1p(params.K_max)) * q


def rlhf_gain(theta: float, Q: float, params: ModelParams) -> float:
    """Feedback-driven pull toward the skill frontier, saturating in Q."""
    return (Q / (Q + params.Q_half)) * (params.theta_max - theta)


def human_ceiling(K: float, q: float, params: ModelParams) -> float:
    """Hill-form ceiling on human skill raised jointly by archive size and quality.

    The effective stock q*K is clamped at zero so fractional exponents keep
    the continuous extension (qK)^beta -> 0 under roundoff excursions.
    """
    x = q * K
    if x <= 0.0:
        return 0.0
    xb = x**params.hill_beta
    return params.H_inf * xb / (params.K_half**params.hill_beta + xb)


def tutor_saturation(Q: float, params: ModelParams) -> float:
    """Saturating tutoring boost from query volume."""
    return Q / (Q + params.Q_sat)


def baseline_query_rate(H: float, params: ModelParams) -> float:
    """Query inflow: rises with task difficulty, falls with human skill."""
    return params.xi_0 * (1.0 + params.T_difficulty) * _exp(-params.kappa_H * H)


def _derivative_tuple(
    K: float, q: float, theta: float, H: float, Q: float, params: ModelParams
) -> tuple[float, float, float, float, float]:
    """Right-hand sides as raw floats; shared by vector_field and the integrator."""
    if K <= K_FLOOR:
        raise DomainError(f"K must be > {K_FLOOR} for the quality equation, got {K}")
    a = answer_accuracy(theta, q, params)
    g = gate(a, params)
    ai_flow = params.alpha_A * Q * g
    human_flow = params.alpha_H * H

    dK = human_flow + ai_flow - params.delta_K * K
    dq = (human_flow / K) * (params.q_H - q) + (ai_flow / K) * (a - q) - params.delta_q * q
    dtheta = params.eta_sup * (theta_star(K, q, params) - theta) + params.eta_RLHF * rlhf_gain(
        theta, Q, params
    )
    dH = (
        params.beta_K * (human_ceiling(K, q, params) - H)
        + params.beta_A * a * tutor_saturation(Q, params)
        - params.gamma_H * H
    )
    dQ = baseline_query_rate(H, params) - params.rho_Q * Q

    for v in (dK, dq, dtheta, dH, dQ):
        if not math.isfinite(v):
            raise IntegrationError("non-finite derivative component")
    return (dK, dq, dtheta, dH, dQ)


def vector_field(state: State, params: ModelParams) -> Derivative:
    """Evaluate the five coupled right-hand sides at `state`.

    Raises DomainError when K is at or below the positivity floor and
    IntegrationError when any component comes out non-finite.
    """
    return Derivative(*_derivative_tuple(state.K, state.q, state.theta, state.H, state.Q, params))
