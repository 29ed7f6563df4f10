"""Simulation and calibration toolkit for coupled human-AI knowledge archives."""

from .errors import (
    DomainError,
    DomainExitError,
    FitError,
    InsufficientDataError,
    IntegrationError,
    KnowdynError,
    SchemaError,
    StiffnessError,
    TransportError,
    UnknownPresetError,
    ValidationError,
)
from .integrate import IntegratorConfig, Trajectory, integrate
from .model import Derivative, ModelParams, State, vector_field
from .scenarios import (
    NormalizedTrajectory,
    RegimeLabel,
    ScenarioPreset,
    classify_regime,
    export_trajectory,
    load_preset,
    normalize,
)

__version__ = "0.1.0"
