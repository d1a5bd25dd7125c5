"""Steady-state economic optimization producing the setpoint for MPC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import PenaltyDiverged
from ..numkit import OptimizerConfig, finite_diff_gradient, finite_diff_jacobian, solve_penalty_nlp
from ..plant import PlantModel

TOLERANCE = 1e-6
POLISH_ITERATIONS = 20


@dataclass(frozen=True, eq=False)
class RtoProblem:
    """``min J_eco(x, z, u, p_eco)`` subject to the plant being at steady state.

    ``state_bounds``, ``algebraic_bounds`` and ``input_bounds`` are
    ``(lo, hi)`` pairs; missing ones default to the plant's own boxes.
    """

    economic_objective: Callable
    plant: PlantModel
    economic_parameters: np.ndarray = field(default_factory=lambda: np.zeros(0))
    state_bounds: Optional[tuple] = None
    algebraic_bounds: Optional[tuple] = None
    input_bounds: Optional[tuple] = None
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(max_iterations=3000, gradient_tolerance=1e-10))

    def boxes(self):
        p = self.plant
        xs = self.state_bounds or p.state_bounds
        zs = self.algebraic_bounds or p.algebraic_bounds
        us = self.input_bounds or p.input_bounds
        blocks = ((xs, p.n_x), (zs, p.n_z), (us, p.n_u))
        lo = np.concatenate([np.broadcast_to(np.asarray(b[0], float), (n,)) for b, n in blocks])
        hi = np.concatenate([np.broadcast_to(np.asarray(b[1], float), (n,)) for b, n in blocks])
        if np.any(lo > hi):
            raise ValueError("RTO decision box is empty")
        return lo, hi


@dataclass
class RtoSolution:
    x_s: np.ndarray
    z_s: np.ndarray
    u_s: np.ndarray
    value: float
    max_violation: float

    def __iter__(self):
        yield self.x_s
        yield self.z_s
        yield self.u_s


def solve_rto(problem: RtoProblem, guess) -> RtoSolution:
    """Economically optimal steady state ``(x_s, z_s, u_s)``.

    Decision variables on finite boxes are rescaled to [0, 1] and each
    steady-state residual is divided by the norm of its gradient at the
    guess, which keeps the penalty subproblems well conditioned.  The scaled
    tolerance is tightened so that the unscaled violation stays below 1e-6.
    The penalty point is then refined by Newton steps on the optimality
    conditions, kept only if they reduce the violation without leaving the
    box; :class:`PenaltyDiverged` is raised if neither stage meets the
    tolerance.
    """
    p = problem.plant
    nx, nz = p.n_x, p.n_z
    x_g, z_g, u_g = (np.asarray(g, dtype=float).ravel() for g in guess)
    w0 = np.concatenate([x_g, z_g, u_g])
    lo, hi = problem.boxes()
    finite = np.isfinite(lo) & np.isfinite(hi) & (hi > lo)
    offset = np.where(finite, lo, 0.0)
    scale = np.where(finite, hi - lo, 1.0)
    p_eco = np.asarray(problem.economic_parameters, dtype=float)

    def unpack(v):
        w = offset + scale * v
        return w[:nx], w[nx:nx + nz], w[nx + nz:]

    def objective(v):
        x, z, u = unpack(v)
        return float(problem.economic_objective(x, z, u, p_eco))

    def residuals(v):
        x, z, u = unpack(v)
        return np.concatenate([p.rhs(x, z, u), p.residual(x, z, u)])

    v0 = (w0 - offset) / scale
    v_lo = np.where(finite, 0.0, lo)
    v_hi = np.where(finite, 1.0, hi)
    row_norm = np.linalg.norm(finite_diff_jacobian(residuals, v0), axis=1)
    weight = 1.0 / np.where(row_norm > 1e-12, row_norm, 1.0)
    tol = TOLERANCE * min(1.0, float(weight.min())) if weight.size else TOLERANCE

    def scaled(v):
        return weight * residuals(v)

    try:
        v = solve_penalty_nlp(objective, scaled, v0, v_lo, v_hi, problem.optimizer, tolerance=tol).x
        failure = None
    except PenaltyDiverged as exc:
        if exc.x is None:
            raise
        v, failure = exc.x, exc
    polished = _polish_kkt(objective, scaled, v, v_lo, v_hi)
    if polished is not None and _max_abs(scaled(polished)) < _max_abs(scaled(v)):
        v = polished
    if failure is not None and _max_abs(scaled(v)) > tol:
        raise failure
    x, z, u = unpack(v)
    violation = float(np.max(np.abs(residuals(v)))) if weight.size else 0.0
    return RtoSolution(x, z, u, objective(v), violation)


def _max_abs(r) -> float:
    return float(np.max(np.abs(r))) if np.size(r) else 0.0


def _polish_kkt(objective, residuals, v, lo, hi):
    """Newton iterations on the KKT system started from a penalty solution.

    A quadratic penalty leaves an ``O(1/rho)`` constraint violation whenever
    the multipliers are non-zero, and its subproblems grow too ill conditioned
    to push ``rho`` far enough.  Variables sitting on a bound are held there;
    the free ones and the multipliers solve ``grad J + J_r^T lam = 0, r = 0``.
    Returns ``None`` when the iteration breaks down or leaves the box.
    """
    r0 = np.asarray(residuals(v), dtype=float).ravel()
    if r0.size == 0:
        return None
    free = (v > lo) & (v < hi)
    if not np.any(free):
        return None
    nf = int(free.sum())

    def full(y):
        w = v.copy()
        w[free] = y[:nf]
        return w

    def kkt(y):
        w = full(y)
        grad = finite_diff_gradient(objective, w)[free]
        jac = finite_diff_jacobian(residuals, w)[:, free]
        return np.concatenate([grad + jac.T @ y[nf:], np.asarray(residuals(w), dtype=float).ravel()])

    grad = finite_diff_gradient(objective, v)[free]
    jac = finite_diff_jacobian(residuals, v)[:, free]
    lam = -np.linalg.lstsq(jac.T, grad, rcond=None)[0]
    y = np.concatenate([v[free], lam])
    try:
        f = kkt(y)
        for _ in range(POLISH_ITERATIONS):
            if _max_abs(f[nf:]) <= 1e-12 and _max_abs(f[:nf]) <= 1e-8:
                break
            step = np.linalg.lstsq(finite_diff_jacobian(kkt, y), -f, rcond=None)[0]
            y = y + step
            f = kkt(y)
    except (ArithmeticError, np.linalg.LinAlgError, ValueError):
        return None
    w = full(y)
    if not np.all(np.isfinite(w)) or np.any(w < lo) or np.any(w > hi):
        return None
    return w
