"""Iterative learning control in the lifted (stacked-time) representation.

A batch of N samples maps the stacked input ``u = (u_0..u_{N-1})`` to the
stacked output ``y = (y_1..y_N)`` as ``y = G u + y_free``.  After each batch
the input is updated by ``u_{k+1} = Q (u_k + L e_k)`` with ``e_k = r - y_k``.
Only single-input single-output batches are handled.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DimensionMismatch
from ..plant import PlantModel, simulate


@dataclass(frozen=True, eq=False)
class IlcController:
    """Immutable ILC state; :func:`ilc_update` returns a new instance."""

    lifted_plant: np.ndarray
    q_filter: np.ndarray
    gain: np.ndarray
    reference: np.ndarray
    current_input: np.ndarray
    last_error: np.ndarray = None
    iteration: int = 0
    error_norms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.lifted_plant, dtype=float))
        n = g.shape[0]
        mats = {}
        for name in ("lifted_plant", "q_filter", "gain"):
            a = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if a.shape != (n, n):
                raise DimensionMismatch(f"{name} must be {n}x{n}, got {a.shape}")
            mats[name] = a
        seqs = {}
        for name in ("reference", "current_input"):
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            if v.size != n:
                raise DimensionMismatch(f"{name} must have length {n}")
            seqs[name] = v
        for k, v in {**mats, **seqs}.items():
            object.__setattr__(self, k, v)
        if self.last_error is not None:
            object.__setattr__(self, "last_error", np.asarray(self.last_error, dtype=float).ravel())

    @property
    def length(self) -> int:
        return self.reference.size


def ilc_update(controller: IlcController, measured_output) -> IlcController:
    """Apply ``u_{k+1} = Q (u_k + L e_k)`` after observing batch output ``y_k``."""
    y = np.asarray(measured_output, dtype=float).ravel()
    if y.size != controller.length:
        raise DimensionMismatch(f"measured output has length {y.size}, expected {controller.length}")
    e = controller.reference - y
    u_next = controller.q_filter @ (controller.current_input + controller.gain @ e)
    return replace(
        controller,
        current_input=u_next,
        last_error=e,
        iteration=controller.iteration + 1,
        error_norms=controller.error_norms + (float(np.linalg.norm(e)),),
    )


def build_lifted(plant: PlantModel, n: int, x0, u_nominal=None, z0=None):
    """Lifted impulse-response matrix ``G`` and the nominal (zero-input) response.

    Column j is the output at times 1..N caused by a unit pulse on interval
    j, obtained by differencing against the nominal run.  Returns
    ``(G, y_nominal)``.  The plant must be SISO and effectively linear.
    """
    if plant.n_u != 1 or plant.n_y != 1:
        raise DimensionMismatch("lifted ILC representation needs a single input and a single output")
    n = int(n)
    if n < 1:
        raise ValueError("batch length must be >= 1")
    base = np.zeros(n) if u_nominal is None else np.asarray(u_nominal, dtype=float).ravel()
    y0 = simulate(plant, x0, base.reshape(n, 1), z0).outputs[1:, 0]
    g = np.zeros((n, n))
    for j in range(n):
        pulse = base.copy()
        pulse[j] += 1.0
        g[:, j] = simulate(plant, x0, pulse.reshape(n, 1), z0).outputs[1:, 0] - y0
    return g, y0


def inverse_gain(lifted_plant) -> np.ndarray:
    """Plant-inversion learning gain ``L = G^{-1}``."""
    return np.linalg.inv(np.asarray(lifted_plant, dtype=float))


def gradient_gain(lifted_plant, gamma=None) -> np.ndarray:
    """Steepest-descent learning gain ``L = gamma G^T``.

    The default ``gamma = 1 / ||G||_2^2`` makes ``I - L G`` a contraction on
    the range of ``G^T``.
    """
    g = np.asarray(lifted_plant, dtype=float)
    if gamma is None:
        gamma = 1.0 / max(np.linalg.norm(g, 2) ** 2, 1e-300)
    return gamma * g.T


def contraction_factor(controller: IlcController) -> float:
    """``||Q (I - L G)||_2``; below one the error norm contracts."""
    n = controller.length
    return float(np.linalg.norm(controller.q_filter @ (np.eye(n) - controller.gain @ controller.lifted_plant), 2))
