"""Internal model control with a learned inverse model.

The loop keeps a forward model running in parallel with the plant.  The
mismatch between plant and model outputs is subtracted from the setpoint,
and the inverse model turns the corrected target into an input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..plant import PlantModel, integrate_step, solve_algebraic


@dataclass(frozen=True, eq=False)
class ImcState:
    """Internal model and real plant together with their current points."""

    model: PlantModel
    model_state: np.ndarray
    plant: PlantModel
    plant_state: np.ndarray
    model_algebraic: np.ndarray = None
    plant_algebraic: np.ndarray = None


@dataclass(frozen=True)
class ImcStepInfo:
    error_signal: np.ndarray
    plant_output: np.ndarray
    model_output: np.ndarray
    tracking_error: np.ndarray


def _output(model: PlantModel, x, z, u_guess):
    if z is None:
        z = solve_algebraic(model, x, u_guess)
    return model.output(x, z)


def imc_step(inverse_model, state: ImcState, setpoint):
    """One closed-loop step; returns ``(u, next_state, info)``.

    ``inverse_model`` maps the feature ``[e, x_model]`` to an input, either
    as a :class:`~mloracle.oracle.TrainedMap` or a plain callable.  The input
    is clipped to the real plant's input box before it is applied.
    """
    r = np.asarray(setpoint, dtype=float).ravel()
    u_hint = np.zeros(state.plant.n_u)
    y_plant = _output(state.plant, state.plant_state, state.plant_algebraic, u_hint)
    y_model = _output(state.model, state.model_state, state.model_algebraic, u_hint)
    e = r - (y_plant - y_model)
    feature = np.concatenate([e, np.asarray(state.model_state, dtype=float).ravel()])
    evaluate: Callable = inverse_model.evaluate if hasattr(inverse_model, "evaluate") else inverse_model
    u = np.asarray(evaluate(feature), dtype=float).ravel()
    lo, hi = state.plant.input_bounds
    u = np.clip(u, lo, hi)
    xm, zm = integrate_step(state.model, state.model_state, u, state.model_algebraic)
    xp, zp = integrate_step(state.plant, state.plant_state, u, state.plant_algebraic)
    nxt = ImcState(state.model, xm, state.plant, xp,
                   zm if state.model.n_z else None, zp if state.plant.n_z else None)
    info = ImcStepInfo(error_signal=e, plant_output=y_plant, model_output=y_model, tracking_error=r - y_plant)
    return u, nxt, info
