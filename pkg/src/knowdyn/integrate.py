"""Adaptive Dormand-Prince 5(4) integration onto a uniform monthly grid.

The solver caps steps so they land exactly on integer output times instead
of interpolating with dense output; the monthly grid is coarse relative to
the dynamics, so the error-control contract is unchanged. Integration is
deterministic: identical inputs produce bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import DomainError, DomainExitError, IntegrationError, StiffnessError, ValidationError
from .model import ModelParams, State, _derivative_tuple, in_domain

# Dormand-Prince 5(4) tableau (Hairer, Norsett & Wanner, 2nd ed., p. 178).
_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
# 5th-order weights equal the last A row (FSAL); E holds b5 - b4.
_B5 = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0)
_E = (
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_ORDER_EXP = -0.2  # err^(-1/5) for the embedded 4th/5th pair

# Roundoff band within which grid states are clamped back into the domain.
DOMAIN_BAND = 1e-9

Rhs = Callable[[float, tuple[float, ...]], tuple[float, ...]]


@dataclass(frozen=True)
class IntegratorConfig:
    """Solver settings; defaults follow the regime-simulation setup."""

    t_end: int
    rtol: float = 1e-6
    atol: float = 1e-9
    max_step: float | None = None  # defaults to t_end
    min_step_factor: float = 1e-12  # of the integration span

    def __post_init__(self):
        if int(self.t_end) != self.t_end or self.t_end < 1:
            raise ValidationError(f"t_end must be a positive integer, got {self.t_end}", field="t_end")
        if not self.rtol > 0:
            raise ValidationError(f"rtol must be > 0, got {self.rtol}", field="rtol")
        if not self.atol > 0:
            raise ValidationError(f"atol must be > 0, got {self.atol}", field="atol")
        if self.max_step is not None and not self.max_step > 0:
            raise ValidationError(f"max_step must be > 0, got {self.max_step}", field="max_step")
        if not self.min_step_factor > 0:
            raise ValidationError(
                f"min_step_factor must be > 0, got {self.min_step_factor}", field="min_step_factor"
            )

    @property
    def grid_points(self) -> int:
        return int(self.t_end) + 1


@dataclass(frozen=True)
class Trajectory:
    """States on the uniform integer grid, with the parameters that produced them."""

    times: tuple[float, ...]
    states: tuple[State, ...]
    params_snapshot: ModelParams

    def __post_init__(self):
        if len(self.times) == 0:
            raise ValidationError("trajectory must contain at least one point", field="times")
        if len(self.times) != len(self.states):
            raise ValidationError("times and states must have equal length", field="states")
        if self.times[0] != 0.0:
            raise ValidationError(f"first time must be 0, got {self.times[0]}", field="times")
        for i in range(1, len(self.times)):
            if not self.times[i] > self.times[i - 1]:
                raise ValidationError("times must be strictly increasing", field="times")

    def __len__(self) -> int:
        return len(self.times)


def dopri5_step(
    f: Rhs,
    t: float,
    y: Sequence[float],
    h: float,
    k1: tuple[float, ...] | None = None,
) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]:
    """One Dormand-Prince step: returns (y5, per-component error, k7).

    Seven RHS evaluations; pass the previous step's k7 as `k1` for FSAL reuse.
    """
    if not h > 0:
        raise ValidationError(f"step size must be > 0, got {h}", field="h")
    n = len(y)
    k = [k1 if k1 is not None else f(t, tuple(y))]
    for s in range(1, 7):
        a = _A[s]
        ys = tuple(
            y[i] + h * sum(a[j] * k[j][i] for j in range(s)) for i in range(n)
        )
        k.append(f(t + _C[s] * h, ys))
    y5 = tuple(y[i] + h * sum(_B5[j] * k[j][i] for j in range(7)) for i in range(n))
    err = tuple(h * sum(_E[j] * k[j][i] for j in range(7)) for i in range(n))
    for row in (y5, err):
        for v in row:
            if not math.isfinite(v):
                raise IntegrationError("non-finite value in Runge-Kutta stage", time=t)
    return y5, err, k[6]


def step_once(
    y: State, t: float, h: float, params: ModelParams
) -> tuple[State, tuple[float, float, float, float, float]]:
    """Single model step, exposed for solver unit tests."""
    f: Rhs = lambda tt, yy: _derivative_tuple(*yy, params)
    y5, err, _ = dopri5_step(f, t, y.as_tuple(), h)
    return State(*_clip_to_domain(y5, params, t + h)), err


def _error_norm(err: Sequence[float], y: Sequence[float], y5: Sequence[float], rtol: float, atol: float) -> float:
    acc = 0.0
    for i in range(len(err)):
        scale = atol + rtol * max(abs(y[i]), abs(y5[i]))
        r = err[i] / scale
        acc += r * r
    return math.sqrt(acc / len(err))


def integrate_rhs(
    f: Rhs, y0: Sequence[float], config: IntegratorConfig
) -> list[tuple[float, ...]]:
    """Integrate a generic RHS onto 0..t_end, one output per integer month.

    This is the solver core; :func:`integrate` adapts it to the knowledge
    model. Tests use it directly with analytic right-hand sides.
    """
    t_end = int(config.t_end)
    max_step = config.max_step if config.max_step is not None else float(t_end)
    min_step = config.min_step_factor * t_end

    y = tuple(float(v) for v in y0)
    outputs = [y]
    t = 0.0
    h = min(1.0, t_end / 100.0)
    k1 = f(t, y)

    for m in range(1, t_end + 1):
        t_target = float(m)
        while t < t_target:
            gap = t_target - t
            h_try = min(h, max_step, gap)
            if h_try < min_step:
                raise StiffnessError(
                    f"step size underflow ({h_try:.3e} months) at t = {t:.6f}", time=t
                )
            y5, err, k7 = dopri5_step(f, t, y, h_try, k1)
            err_norm = _error_norm(err, y, y5, config.rtol, config.atol)
            if err_norm <= 1.0:
                t = t_target if h_try == gap else t + h_try
                y = y5
                k1 = k7
                factor = _MAX_FACTOR if err_norm == 0.0 else min(
                    _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err_norm**_ORDER_EXP)
                )
                h = h_try * factor
            else:
                h = h_try * max(_MIN_FACTOR, _SAFETY * err_norm**_ORDER_EXP)
        outputs.append(y)
    return outputs


def _clip_to_domain(
    y: tuple[float, ...], params: ModelParams, t: float
) -> tuple[float, float, float, float, float]:
    """Clamp roundoff-band excursions; larger ones are integrator failures."""
    K, q, theta, H, Q = y
    lo_hi = (
        ("K", K, 0.0, math.inf),
        ("q", q, 0.0, 1.0),
        ("theta", theta, 0.0, params.theta_max),
        ("H", H, 0.0, math.inf),
        ("Q", Q, 0.0, math.inf),
    )
    out = []
    for name, v, lo, hi in lo_hi:
        if v < lo - DOMAIN_BAND or v > hi + DOMAIN_BAND:
            raise DomainExitError(
                f"{name} = {v!r} left the physical domain at t = {t:g}", time=t
            )
        out.append(min(max(v, lo), hi))
    return tuple(out)


def integrate(y0: State, params: ModelParams, config: IntegratorConfig) -> Trajectory:
    """Integrate the knowledge model from `y0` onto the integer grid."""
    if not in_domain(y0, params):
        raise DomainError(
            f"initial state outside the physical domain (theta_max = {params.theta_max}): {y0}"
        )
    if y0.K <= 0:
        raise ValidationError(f"initial K must be > 0, got {y0.K}", field="K")

    def f(t: float, y: tuple[float, ...]) -> tuple[float, ...]:
        try:
            return _derivative_tuple(*y, params)
        except DomainError as exc:
            raise DomainExitError(str(exc), time=t) from exc

    raw = integrate_rhs(f, y0.as_tuple(), config)

    times = tuple(float(m) for m in range(config.t_end + 1))
    states = [y0]
    for m in range(1, len(raw)):
        states.append(State(*_clip_to_domain(raw[m], params, times[m])))
    return Trajectory(times=times, states=tuple(states), params_snapshot=params)
