"""Shared fixtures: each preset is integrated once per session and reused."""

from types import SimpleNamespace

import pytest

from knowdyn.integrate import integrate
from knowdyn.scenarios import PRESET_NAMES, classify_regime, load_preset, normalize


@pytest.fixture(scope="session")
def preset_runs():
    runs = {}
    for name in PRESET_NAMES:
        preset = load_preset(name)
        traj = integrate(preset.y0, preset.params, preset.config)
        norm = normalize(traj)
        runs[name] = SimpleNamespace(
            preset=preset, traj=traj, norm=norm, regime=classify_regime(norm)
        )
    return runs
