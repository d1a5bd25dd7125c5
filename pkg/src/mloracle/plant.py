"""Semi-explicit DAE plant models and their fixed-step one-step integrator.

A plant is described by

    dx/dt = f(x, z, u, p) + F(x, z, p)
        0 = g(x, z, u, p) + G(x, z, p)
        y = h(x, z)

where ``F`` and ``G`` are optional learned increments.  Inputs are held
piecewise constant over each sampling interval of length ``sampling_time``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteState, SimulationError
from .numkit import newton_solve

SUBSTEPS = 10
NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50
STEADY_TOL = 1e-9
STEADY_MAXITER = 100


def _box(bounds, n):
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo, hi = bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if np.any(lo > hi):
        raise ValueError("box with lower > upper")
    return lo, hi


def _probe_point(lo, hi):
    x = np.ones(lo.size)
    both = np.isfinite(lo) & np.isfinite(hi)
    x[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    x[only_lo] = lo[only_lo] + 1.0
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x[only_hi] = hi[only_hi] - 1.0
    return x


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Immutable hybrid plant.

    Callables take and return 1-D float arrays.  ``algebraic_residual`` may be
    omitted when ``n_z == 0``; ``output_map`` defaults to ``y = x``.  An
    explicit algebraic relation ``z = g_ex(x, u)`` is expressed as the
    residual ``z - g_ex(x, u)``.
    """

    n_x: int
    n_u: int
    first_principles_dynamics: Callable
    sampling_time: float
    n_z: int = 0
    n_y: Optional[int] = None
    algebraic_residual: Optional[Callable] = None
    output_map: Optional[Callable] = None
    learned_dynamics: Optional[Callable] = None
    learned_algebraic: Optional[Callable] = None
    parameters: np.ndarray = field(default_factory=lambda: np.zeros(0))
    state_bounds: Optional[tuple] = None
    algebraic_bounds: Optional[tuple] = None
    input_bounds: Optional[tuple] = None
    name: str = "plant"

    def __post_init__(self):
        if not self.sampling_time > 0:
            raise ValueError("sampling_time must be > 0")
        if self.n_x < 0 or self.n_z < 0 or self.n_u < 0:
            raise ValueError("dimensions must be nonnegative")
        if self.n_z > 0 and self.algebraic_residual is None:
            raise ValueError("n_z > 0 requires an algebraic_residual")
        object.__setattr__(self, "parameters", np.asarray(self.parameters, dtype=float).ravel())
        object.__setattr__(self, "state_bounds", _box(self.state_bounds, self.n_x))
        object.__setattr__(self, "algebraic_bounds", _box(self.algebraic_bounds, self.n_z))
        object.__setattr__(self, "input_bounds", _box(self.input_bounds, self.n_u))
        x = _probe_point(*self.state_bounds)
        z = _probe_point(*self.algebraic_bounds)
        u = _probe_point(*self.input_bounds)
        with np.errstate(all="ignore"):
            self._probe("first_principles_dynamics", self.first_principles_dynamics(x, z, u, self.parameters), self.n_x)
            if self.learned_dynamics is not None:
                self._probe("learned_dynamics", self.learned_dynamics(x, z, self.parameters), self.n_x)
            if self.n_z:
                self._probe("algebraic_residual", self.algebraic_residual(x, z, u, self.parameters), self.n_z)
                if self.learned_algebraic is not None:
                    self._probe("learned_algebraic", self.learned_algebraic(x, z, self.parameters), self.n_z)
            y = self.output(x, z)
        if self.n_y is None:
            object.__setattr__(self, "n_y", y.size)
        elif y.size != self.n_y:
            raise DimensionMismatch(f"output_map returned {y.size} values, expected n_y={self.n_y}")

    @staticmethod
    def _probe(name, value, n):
        size = np.asarray(value).size
        if size != n:
            raise DimensionMismatch(f"{name} returned {size} values, expected {n}")

    # evaluation helpers -------------------------------------------------

    def rhs(self, x, z, u) -> np.ndarray:
        dx = self.first_principles_dynamics(x, z, u, self.parameters)
        if self.learned_dynamics is not None:
            dx = dx + self.learned_dynamics(x, z, self.parameters)
        return dx

    def residual(self, x, z, u) -> np.ndarray:
        if self.n_z == 0:
            return np.zeros(0)
        r = np.asarray(self.algebraic_residual(x, z, u, self.parameters), dtype=float).ravel()
        if self.learned_algebraic is not None:
            r = r + np.asarray(self.learned_algebraic(x, z, self.parameters), dtype=float).ravel()
        return r

    def output(self, x, z) -> np.ndarray:
        if self.output_map is None:
            return np.array(x, dtype=float)
        return np.asarray(self.output_map(x, z), dtype=float).ravel()

    def with_learned(self, dynamics=None, algebraic=None) -> "PlantModel":
        """Copy of this model with the learned holes filled."""
        return replace(
            self,
            learned_dynamics=dynamics if dynamics is not None else self.learned_dynamics,
            learned_algebraic=algebraic if algebraic is not None else self.learned_algebraic,
        )


@dataclass
class SampledTrajectory:
    times: np.ndarray
    states: np.ndarray
    algebraic: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.inputs.shape[0] != max(self.times.size - 1, 0):
            raise ValueError("inputs must have one entry fewer than times")

    def __len__(self):
        return self.times.size


OPERATING_MODES = ("continuous", "batch", "fed_batch")


@dataclass(frozen=True, eq=False)
class OperatingMode:
    tag: str
    initial_state: np.ndarray
    batch_duration: float = math.inf

    def __post_init__(self):
        if self.tag not in OPERATING_MODES:
            raise ValueError(f"unknown operating mode {self.tag!r}")
        if self.tag != "continuous" and not (0 < self.batch_duration < math.inf):
            raise ValueError(f"{self.tag} mode needs a finite positive batch_duration")
        object.__setattr__(self, "initial_state", np.asarray(self.initial_state, dtype=float).ravel())

    def steps(self, sampling_time: float) -> Optional[int]:
        """Number of sampling intervals in one batch, None for continuous."""
        if self.tag == "continuous":
            return None
        return int(round(self.batch_duration / sampling_time))


# ---------------------------------------------------------------------------
# algebraic solves


def solve_algebraic(model: PlantModel, x, u, z_guess=None) -> np.ndarray:
    """Solve ``g + G = 0`` for z at fixed (x, u)."""
    if model.n_z == 0:
        return np.zeros(0)
    z0 = np.zeros(model.n_z) if z_guess is None else np.asarray(z_guess, dtype=float)
    return newton_solve(lambda z: model.residual(x, z, u), z0, NEWTON_TOL, NEWTON_MAXITER, "algebraic solve")


# ---------------------------------------------------------------------------
# integration


def _check_input_bounds(model, u):
    lo, hi = model.input_bounds
    if np.any(u < lo) or np.any(u > hi):
        warnings.warn(f"input {u} outside input_bounds", RuntimeWarning, stacklevel=3)


def integrate_step(model: PlantModel, x, u, z=None) -> tuple[np.ndarray, np.ndarray]:
    """Advance the plant by one sampling interval with constant input ``u``.

    Classical RK4 with ``SUBSTEPS`` fixed substeps; for DAE plants ``z`` is
    re-solved at every stage, warm-started from the previous solution (``z``
    seeds the first solve).  Returns ``(x_next, z_next)``.
    """
    x = np.array(x, dtype=float).ravel()
    u = np.array(u, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite state {x}")
    if u.size != model.n_u or x.size != model.n_x:
        raise DimensionMismatch(f"expected x of size {model.n_x} and u of size {model.n_u}")
    _check_input_bounds(model, u)
    h = model.sampling_time / SUBSTEPS
    rhs = model.rhs
    with np.errstate(over="ignore", invalid="ignore"):
        if model.n_z == 0:
            zz = np.zeros(0)
            for _ in range(SUBSTEPS):
                k1 = rhs(x, zz, u)
                k2 = rhs(x + 0.5 * h * k1, zz, u)
                k3 = rhs(x + 0.5 * h * k2, zz, u)
                k4 = rhs(x + h * k3, zz, u)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            z_next = zz
        else:
            zc = solve_algebraic(model, x, u, z)
            for _ in range(SUBSTEPS):
                k1 = rhs(x, zc, u)
                x2 = x + 0.5 * h * k1
                z2 = solve_algebraic(model, x2, u, zc)
                k2 = rhs(x2, z2, u)
                x3 = x + 0.5 * h * k2
                z3 = solve_algebraic(model, x3, u, z2)
                k3 = rhs(x3, z3, u)
                x4 = x + h * k3
                z4 = solve_algebraic(model, x4, u, z3)
                k4 = rhs(x4, z4, u)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                zc = solve_algebraic(model, x, u, z4)
            z_next = zc
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("integration produced non-finite state")
    return x, z_next


def simulate(model: PlantModel, x0, inputs: Sequence, z0=None) -> SampledTrajectory:
    """Apply :func:`integrate_step` once per input from ``x0``."""
    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("non-finite initial state")
    u_seq = np.asarray(inputs, dtype=float).reshape(-1, model.n_u) if len(inputs) else np.zeros((0, model.n_u))
    if not np.all(np.isfinite(u_seq)):
        raise ValueError("non-finite input sequence")
    try:
        z = solve_algebraic(model, x, u_seq[0] if len(u_seq) else np.zeros(model.n_u), z0)
    except Exception as exc:
        raise SimulationError(str(exc), 0, exc) from exc
    states = [x]
    algebraic = [z]
    outputs = [model.output(x, z)]
    for k, u in enumerate(u_seq):
        try:
            x, z = integrate_step(model, x, u, z)
        except Exception as exc:
            raise SimulationError(str(exc), k, exc) from exc
        states.append(x)
        algebraic.append(z)
        outputs.append(model.output(x, z))
    n = len(states)
    return SampledTrajectory(
        times=np.arange(n) * model.sampling_time,
        states=np.vstack(states),
        algebraic=np.vstack(algebraic) if model.n_z else np.zeros((n, 0)),
        inputs=u_seq.copy(),
        outputs=np.vstack(outputs),
    )


def steady_state(model: PlantModel, u, x_guess, z_guess=None) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``f + F = 0, g + G = 0`` for ``(x, z)`` at a fixed input."""
    u = np.asarray(u, dtype=float).ravel()
    nx = model.n_x
    w0 = np.concatenate([
        np.asarray(x_guess, dtype=float).ravel(),
        np.zeros(model.n_z) if z_guess is None else np.asarray(z_guess, dtype=float).ravel(),
    ])

    def stacked(w):
        return np.concatenate([model.rhs(w[:nx], w[nx:], u), model.residual(w[:nx], w[nx:], u)])

    w = newton_solve(stacked, w0, STEADY_TOL, STEADY_MAXITER, "steady state")
    return w[:nx], w[nx:]
