"""Setpoint-tracking MPC by direct single shooting, plus GP constraint back-off.

The decision variables are the inputs ``u_0 .. u_{N-1}``; predicted states
come from chaining :func:`mloracle.plant.integrate_step`.  The stage cost is

    ||x_l - x_s||_Q^2 + ||z_l - z_s||_R^2 + ||u_{l-1} - u_s||_S^2,  l = 1..N

and state/algebraic boxes enter as a quadratic penalty.  Because the whole
objective is a sum of squares, it is minimized by a Gauss-Newton iteration:
each stage is linearized by central differences, the stacked residual is
condensed onto the inputs, the resulting bounded linear least-squares step
is solved exactly (BVLS), and a backtracking line search on the true cost
keeps the iteration monotone.  Inputs never leave their box.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import lsq_linear

from ..errors import DimensionMismatch, InfeasibleBackoff, MpcRolloutFailed, NewtonDiverged, NonFiniteState
from ..plant import PlantModel, integrate_step, solve_algebraic
from ..surrogates import GpModel, gp_predict_many

PENALTY_WEIGHT = 1e4
SOFT_VIOLATION_LIMIT = 1e-3


def _psd(m, n, name):
    if m is None:
        return np.zeros((n, n))
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.size == 1 and n != 1:
        a = a.item() * np.eye(n)
    if a.ndim == 2 and a.shape[0] == 1 and a.shape[1] == n and n > 1:
        a = np.diag(a[0])
    if a.shape != (n, n):
        raise DimensionMismatch(f"{name} must be {n}x{n}, got {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} is not symmetric")
    if np.any(np.diag(a) < 0):
        raise ValueError(f"{name} has a negative diagonal entry")
    return 0.5 * (a + a.T)


def _sqrt_psd(a):
    """Symmetric square root; eigenvalues below zero (round-off) are clipped."""
    if not np.any(a):
        return a
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _vec_box(box, n, default):
    if box is None:
        return default
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if np.any(lo > hi):
        raise ValueError("empty box")
    return lo, hi


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """Finite-horizon tracking problem.

    ``path_boxes`` is ``(X, Z, U)`` and ``terminal_boxes`` is ``(X_f, Z_f)``,
    each entry a ``(lo, hi)`` pair or ``None``.  Missing path boxes fall back
    to the plant's own bounds and missing terminal boxes to the path boxes.
    ``q``, ``r`` and ``s`` accept a matrix, a scalar (times identity) or a
    diagonal given as a row.
    """

    plant: PlantModel
    horizon: int
    q: object
    s: object
    setpoint: tuple
    r: object = None
    path_boxes: tuple = (None, None, None)
    terminal_boxes: tuple = (None, None)
    penalty_weight: float = PENALTY_WEIGHT
    max_iterations: int = 30
    tolerance: float = 1e-12

    def __post_init__(self):
        p = self.plant
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "q", _psd(self.q, p.n_x, "Q"))
        object.__setattr__(self, "r", _psd(self.r, p.n_z, "R"))
        object.__setattr__(self, "s", _psd(self.s, p.n_u, "S"))
        x_s, z_s, u_s = self.setpoint
        sp = (
            np.asarray(x_s, dtype=float).ravel(),
            np.zeros(p.n_z) if z_s is None else np.asarray(z_s, dtype=float).ravel(),
            np.asarray(u_s, dtype=float).ravel(),
        )
        if sp[0].size != p.n_x or sp[1].size != p.n_z or sp[2].size != p.n_u:
            raise DimensionMismatch("setpoint dimensions do not match the plant")
        object.__setattr__(self, "setpoint", sp)
        xb, zb, ub = (tuple(self.path_boxes) + (None, None, None))[:3]
        xb = _vec_box(xb, p.n_x, p.state_bounds)
        zb = _vec_box(zb, p.n_z, p.algebraic_bounds)
        ub = _vec_box(ub, p.n_u, p.input_bounds)
        xf, zf = (tuple(self.terminal_boxes) + (None, None))[:2]
        xf = _vec_box(xf, p.n_x, xb)
        zf = _vec_box(zf, p.n_z, zb)
        object.__setattr__(self, "path_boxes", (xb, zb, ub))
        object.__setattr__(self, "terminal_boxes", (xf, zf))
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")

    def stage_state_bounds(self):
        """Per-stage ``(lo, hi)`` arrays of shape (N, n_x) for stages 1..N.

        The terminal stage uses the intersection of path and terminal boxes.
        """
        (xlo, xhi), _, _ = self.path_boxes
        (flo, fhi), _ = self.terminal_boxes
        lo = np.tile(xlo, (self.horizon, 1))
        hi = np.tile(xhi, (self.horizon, 1))
        lo[-1] = np.maximum(lo[-1], flo)
        hi[-1] = np.minimum(hi[-1], fhi)
        return lo, hi

    def stage_algebraic_bounds(self):
        _, (zlo, zhi), _ = self.path_boxes
        _, (flo, fhi) = self.terminal_boxes
        lo = np.tile(zlo, (self.horizon, 1))
        hi = np.tile(zhi, (self.horizon, 1))
        lo[-1] = np.maximum(lo[-1], flo)
        hi[-1] = np.minimum(hi[-1], fhi)
        return lo, hi


@dataclass
class MpcSolution:
    """Optimal input sequence and the prediction it induces.

    ``states`` and ``algebraic`` have N+1 rows (row 0 is the current point).
    ``violation`` is the largest state/algebraic box violation along the
    prediction; ``soft_constraint_violated`` flags it above 1e-3.
    ``state_lower``/``state_upper`` are the per-stage bounds actually used.
    """

    inputs: np.ndarray
    states: np.ndarray
    algebraic: np.ndarray
    cost: float
    warm_start_cost: float
    violation: float
    iterations: int
    soft_constraint_violated: bool
    state_lower: np.ndarray
    state_upper: np.ndarray
    algebraic_lower: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    algebraic_upper: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def first_input(self) -> np.ndarray:
        return self.inputs[0].copy()

    def shifted(self, u_s) -> np.ndarray:
        """Warm start for the next sample: drop u_0, append ``u_s``."""
        return np.vstack([self.inputs[1:], np.asarray(u_s, dtype=float).reshape(1, -1)])

    def metadata(self) -> dict:
        return {
            "cost": self.cost,
            "violation": self.violation,
            "iterations": self.iterations,
            "soft_constraint_violated": self.soft_constraint_violated,
        }


class _Shooting:
    """Residual evaluation and linearization for one solve."""

    def __init__(self, problem: MpcProblem, x0, z0, xlo, xhi, zlo, zhi):
        self.p = problem
        self.m = problem.plant
        self.x0 = x0
        self.z0 = z0
        self.xlo, self.xhi, self.zlo, self.zhi = xlo, xhi, zlo, zhi
        self.lq = _sqrt_psd(problem.q)
        self.lr = _sqrt_psd(problem.r)
        self.ls = _sqrt_psd(problem.s)
        self.sw = math.sqrt(problem.penalty_weight)

    def rollout(self, inputs):
        m = self.m
        n = self.p.horizon
        xs = np.empty((n + 1, m.n_x))
        zs = np.empty((n + 1, m.n_z))
        xs[0], zs[0] = self.x0, self.z0
        x, z = self.x0, self.z0
        for k in range(n):
            x, z = integrate_step(m, x, inputs[k], z if m.n_z else None)
            xs[k + 1], zs[k + 1] = x, z
        return xs, zs

    def residual(self, inputs, xs, zs):
        x_s, z_s, u_s = self.p.setpoint
        dx = xs[1:] - x_s
        dz = zs[1:] - z_s
        du = inputs - u_s
        vx = np.maximum(xs[1:] - self.xhi, 0.0) - np.maximum(self.xlo - xs[1:], 0.0)
        vz = np.maximum(zs[1:] - self.zhi, 0.0) - np.maximum(self.zlo - zs[1:], 0.0)
        return np.concatenate([
            (dx @ self.lq).ravel(), (dz @ self.lr).ravel(), (du @ self.ls).ravel(),
            self.sw * vx.ravel(), self.sw * vz.ravel(),
        ])

    def violation(self, xs, zs) -> float:
        vx = np.maximum(np.maximum(xs[1:] - self.xhi, 0.0), np.maximum(self.xlo - xs[1:], 0.0))
        vz = np.maximum(np.maximum(zs[1:] - self.zhi, 0.0), np.maximum(self.zlo - zs[1:], 0.0))
        return float(max(vx.max(initial=0.0), vz.max(initial=0.0)))

    def evaluate(self, inputs):
        """Residual vector and trajectory, or ``None`` if the rollout fails."""
        try:
            xs, zs = self.rollout(inputs)
        except (NonFiniteState, NewtonDiverged, FloatingPointError):
            return None
        r = self.residual(inputs, xs, zs)
        if not np.all(np.isfinite(r)):
            return None
        return r, xs, zs

    def jacobian(self, inputs, xs, zs):
        """Gauss-Newton Jacobian of the residual w.r.t. the stacked inputs."""
        m, n = self.m, self.p.horizon
        nx, nz, nu = m.n_x, m.n_z, m.n_u
        nv = n * nu
        sx = np.zeros((nx, nv))
        jx = np.zeros((n, nx, nv))
        jz = np.zeros((n, nz, nv))
        for k in range(n):
            a, b, c, d = self._stage_derivatives(xs[k], zs[k], inputs[k])
            cols = slice(k * nu, (k + 1) * nu)
            new_sx = a @ sx
            new_sx[:, cols] += b
            sz = c @ sx
            sz[:, cols] += d
            sx = new_sx
            jx[k], jz[k] = sx, sz
        xlo_act = (xs[1:] < self.xlo)
        xhi_act = (xs[1:] > self.xhi)
        zlo_act = (zs[1:] < self.zlo)
        zhi_act = (zs[1:] > self.zhi)
        blocks = [
            np.einsum("ij,kiv->kjv", self.lq, jx).reshape(n * nx, nv),
            np.einsum("ij,kiv->kjv", self.lr, jz).reshape(n * nz, nv),
            np.kron(np.eye(n), self.ls.T),
            (self.sw * (xlo_act | xhi_act)[:, :, None] * jx).reshape(n * nx, nv),
            (self.sw * (zlo_act | zhi_act)[:, :, None] * jz).reshape(n * nz, nv),
        ]
        return np.vstack(blocks)

    def _stage_derivatives(self, x, z, u):
        m = self.m
        nx, nz, nu = m.n_x, m.n_z, m.n_u
        a = np.empty((nx, nx))
        c = np.empty((nz, nx))
        b = np.empty((nx, nu))
        d = np.empty((nz, nu))
        zg = z if nz else None
        for i in range(nx):
            h = 1e-6 * (1.0 + abs(x[i]))
            e = np.zeros(nx)
            e[i] = h
            xp, zp = integrate_step(m, x + e, u, zg)
            xm, zm = integrate_step(m, x - e, u, zg)
            a[:, i] = (xp - xm) / (2 * h)
            c[:, i] = (zp - zm) / (2 * h)
        for j in range(nu):
            h = 1e-6 * (1.0 + abs(u[j]))
            e = np.zeros(nu)
            e[j] = h
            xp, zp = integrate_step(m, x, u + e, zg)
            xm, zm = integrate_step(m, x, u - e, zg)
            b[:, j] = (xp - xm) / (2 * h)
            d[:, j] = (zp - zm) / (2 * h)
        return a, b, c, d


def _snap(values, lo, hi):
    """Project onto the box and snap values within round-off of a bound onto it."""
    v = np.clip(values, lo, hi)
    tol_lo = 1e-10 * (1.0 + np.abs(lo))
    tol_hi = 1e-10 * (1.0 + np.abs(hi))
    v = np.where(np.isfinite(lo) & (v - lo <= tol_lo), lo, v)
    v = np.where(np.isfinite(hi) & (hi - v <= tol_hi), hi, v)
    return v


def _initial_inputs(problem: MpcProblem, warm_start):
    n, nu = problem.horizon, problem.plant.n_u
    u_s = problem.setpoint[2]
    if warm_start is None:
        return np.tile(u_s, (n, 1))
    if isinstance(warm_start, MpcSolution):
        warm = warm_start.shifted(u_s)
    else:
        warm = np.asarray(warm_start, dtype=float).reshape(-1, nu)
    if warm.shape[0] < n:
        warm = np.vstack([warm, np.tile(u_s, (n - warm.shape[0], 1))])
    return warm[:n].copy()


def _solve(problem: MpcProblem, x_current, warm_start, z_current, state_bounds) -> MpcSolution:
    m = problem.plant
    x0 = np.asarray(x_current, dtype=float).ravel()
    if x0.size != m.n_x:
        raise DimensionMismatch(f"state of size {m.n_x} expected")
    if not np.all(np.isfinite(x0)):
        raise MpcRolloutFailed("non-finite current state")
    n, nu = problem.horizon, m.n_u
    ulo, uhi = problem.path_boxes[2]
    vlo, vhi = np.tile(ulo, n), np.tile(uhi, n)
    inputs = _snap(_initial_inputs(problem, warm_start).ravel(), vlo, vhi).reshape(n, nu)
    xlo, xhi = state_bounds
    zlo, zhi = problem.stage_algebraic_bounds()

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            z0 = solve_algebraic(m, x0, inputs[0], z_current)
        except NewtonDiverged as exc:
            raise MpcRolloutFailed(f"algebraic solve at the current state failed: {exc}") from exc
        sh = _Shooting(problem, x0, z0, xlo, xhi, zlo, zhi)
        ev = sh.evaluate(inputs)
        if ev is None:
            raise MpcRolloutFailed("warm-start rollout produced a non-finite state")
        r, xs, zs = ev
        cost = float(r @ r)
        warm_cost = cost
        it = 0
        for it in range(1, problem.max_iterations + 1):
            jac = sh.jacobian(inputs, xs, zs)
            flat = inputs.ravel()
            step = lsq_linear(jac, -r, bounds=(vlo - flat, vhi - flat), method="bvls", tol=1e-14).x
            target = _snap(flat + step, vlo, vhi)
            direction = target - flat
            if not np.any(direction):
                it -= 1
                break
            predicted = cost - float(np.sum((r + jac @ direction) ** 2))
            t = 1.0
            accepted = None
            while t > 1e-8:
                trial = (target if t == 1.0 else _snap(flat + t * direction, vlo, vhi)).reshape(n, nu)
                ev = sh.evaluate(trial)
                if ev is not None:
                    c_new = float(ev[0] @ ev[0])
                    if c_new < cost - 1e-4 * t * max(predicted, 0.0) or (c_new < cost and predicted <= 0):
                        accepted = (trial, ev, c_new)
                        break
                t *= 0.5
            if accepted is None:
                it -= 1
                break
            inputs, (r, xs, zs), c_new = accepted
            decrease = cost - c_new
            exact_model = t == 1.0 and abs(decrease - predicted) <= 1e-9 * cost
            cost = c_new
            if decrease <= problem.tolerance * max(1.0, cost) or exact_model:
                # A full step that realizes the predicted decrease means the
                # linearization was exact along it; another pass cannot improve.
                break

    viol = sh.violation(xs, zs)
    return MpcSolution(
        inputs=inputs,
        states=xs,
        algebraic=zs,
        cost=cost,
        warm_start_cost=warm_cost,
        violation=viol,
        iterations=it,
        soft_constraint_violated=viol > SOFT_VIOLATION_LIMIT,
        state_lower=xlo,
        state_upper=xhi,
        algebraic_lower=zlo,
        algebraic_upper=zhi,
    )


WarmStart = Optional[Union[MpcSolution, Sequence, np.ndarray]]


def mpc_feedback(problem: MpcProblem, x_current, warm_start: WarmStart = None, z_current=None):
    """Solve the tracking problem from ``x_current`` and return ``(u_0, solution)``.

    ``warm_start`` may be a previous :class:`MpcSolution` (it is shifted and
    padded with ``u_s``), an explicit input sequence, or ``None`` (all
    ``u_s``).  The returned cost never exceeds the warm-start cost.
    """
    sol = _solve(problem, x_current, warm_start, z_current, problem.stage_state_bounds())
    return sol.first_input, sol


def mpc_feedback_multistart(problem: MpcProblem, x_current, z_current=None):
    """Cold-start MPC: try constant input sequences and keep the cheapest solution.

    The candidates are ``u_s``, the midpoint of the input box and its finite
    edges.  Meant for the first sample of a closed loop, where no previous
    solution exists and ``u_s`` alone may start in a poor basin.
    """
    lo, hi = problem.path_boxes[2]
    u_s = problem.setpoint[2]
    candidates = [u_s]
    if np.all(np.isfinite(lo) & np.isfinite(hi)):
        candidates += [0.5 * (lo + hi), lo, hi]
    best = None
    for c in candidates:
        u, sol = mpc_feedback(problem, x_current, np.tile(c, (problem.horizon, 1)), z_current)
        if best is None or sol.cost < best[1].cost:
            best = (u, sol)
    return best


def _stage_std(gp_uncertainty, states, n_x):
    """Predictive standard deviation at each predicted state, shape (N, n_x)."""
    models = gp_uncertainty if isinstance(gp_uncertainty, (list, tuple)) else [gp_uncertainty]
    if len(models) not in (1, n_x):
        raise DimensionMismatch("give one GP, or one GP per state component")
    cols = []
    for gp in models:
        if isinstance(gp, GpModel):
            _, var = gp_predict_many(gp, states)
        else:
            var = np.asarray(gp(states), dtype=float).ravel()
        cols.append(np.sqrt(np.maximum(var, 0.0)))
    std = np.column_stack(cols)
    return np.broadcast_to(std, (states.shape[0], n_x))


def backoff_bounds(problem: MpcProblem, gp_uncertainty, lam: float, predicted_states):
    """Tightened per-stage state bounds ``lo + lam*sd``, ``hi - lam*sd``.

    ``predicted_states`` are the stage 1..N states along which the GP
    variance is evaluated.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("lambda must be a finite nonnegative number")
    lo, hi = problem.stage_state_bounds()
    margin = lam * _stage_std(gp_uncertainty, np.asarray(predicted_states, dtype=float), problem.plant.n_x)
    lo = lo + margin
    hi = hi - margin
    if np.any(lo > hi):
        bad = np.argwhere(lo > hi)[0]
        raise InfeasibleBackoff(f"tightened state box is empty at stage {bad[0] + 1}, component {bad[1]}")
    return lo, hi


def backoff_mpc_feedback(problem: MpcProblem, gp_uncertainty, lam: float, x_current,
                         warm_start: WarmStart = None, z_current=None):
    """MPC with state bounds backed off by ``lam`` predictive standard deviations.

    ``gp_uncertainty`` is a :class:`GpModel` whose features are the state
    (applied to every component), a list with one GP per state component, or
    a callable returning variances for a batch of states.  Variances are
    evaluated once, along the warm-start prediction.
    """
    m = problem.plant
    x0 = np.asarray(x_current, dtype=float).ravel()
    if not np.all(np.isfinite(x0)):
        raise MpcRolloutFailed("non-finite current state")
    ulo, uhi = problem.path_boxes[2]
    n = problem.horizon
    warm = _snap(_initial_inputs(problem, warm_start).ravel(), np.tile(ulo, n), np.tile(uhi, n)).reshape(n, m.n_u)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            z0 = solve_algebraic(m, x0, warm[0], z_current)
            xs, _ = _Shooting(problem, x0, z0, None, None, None, None).rollout(warm)
        except (NonFiniteState, NewtonDiverged) as exc:
            raise MpcRolloutFailed(f"warm-start rollout failed: {exc}") from exc
    bounds = backoff_bounds(problem, gp_uncertainty, lam, xs[1:])
    sol = _solve(problem, x0, warm, z_current, bounds)
    return sol.first_input, sol
