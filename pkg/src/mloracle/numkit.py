"""Dense linear algebra, finite differences and small box-constrained solvers.

Everything here works on plain numpy arrays: a ``DenseMatrix`` is simply a
2-D float array.  The solvers are deliberately small (projected gradient with
backtracking, quadratic penalty on top of it) since every problem in this
package is desk-sized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    InfeasibleBounds,
    NewtonDiverged,
    NonFiniteObjective,
    NotPositiveDefinite,
    PenaltyDiverged,
)

ARMIJO = 1e-4


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    initial_step: float = 1.0
    backtracking_factor: float = 0.5
    penalty_growth: float = 10.0
    fd_step: Optional[float] = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be > 0")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be > 0")
        if not 0 < self.backtracking_factor < 1:
            raise ValueError("backtracking_factor must lie in (0, 1)")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must be > 1")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError("fd_step must be > 0")


def as_matrix(values, rows=None, cols=None) -> np.ndarray:
    """Build a dense matrix, optionally from a flat row-major sequence."""
    a = np.asarray(values, dtype=float)
    if rows is not None:
        if a.size != rows * (cols if cols is not None else a.size // rows):
            raise ValueError("values length must equal rows * cols")
        a = a.reshape(rows, -1 if cols is None else cols)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# Cholesky


def cholesky_factor(a) -> np.ndarray:
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError("matrix must be square")
    scale = max(np.max(np.abs(a)), 1e-300)
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def cholesky_solve(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``A X = B`` for symmetric positive definite ``A``.

    Returns ``(X, L)`` where ``L`` is the lower Cholesky factor of ``A``.
    ``B`` may be a vector, in which case ``X`` is a vector too.
    """
    lower = cholesky_factor(a)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != lower.shape[0]:
        raise ValueError("row count of B must equal the dimension of A")
    y = solve_triangular(lower, b, lower=True, check_finite=False)
    x = solve_triangular(lower.T, y, lower=False, check_finite=False)
    return x, lower


# ---------------------------------------------------------------------------
# Finite differences


def _scaled_steps(x: np.ndarray, step: Optional[float]) -> np.ndarray:
    if step is None:
        return 1e-6 * (1.0 + np.abs(x))
    if not step > 0:
        raise ValueError("finite-difference step must be > 0")
    return np.full(x.shape, float(step))


def _checked(value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteObjective(f"objective returned {value}")
    return value


def finite_diff_gradient(objective: Callable, point, step: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient.

    With ``step=None`` each component uses ``1e-6 * (1 + |x_i|)``; an explicit
    ``step`` is used unscaled.
    """
    x = np.array(point, dtype=float).ravel()
    h = _scaled_steps(x, step)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        grad[i] = (_checked(objective(xp)) - _checked(objective(xm))) / (2.0 * h[i])
    return grad


def finite_diff_jacobian(fun: Callable, point, step: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued map, shape (m, n)."""
    x = np.array(point, dtype=float).ravel()
    h = _scaled_steps(x, step)
    cols = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        fp = np.asarray(fun(xp), dtype=float).ravel()
        fm = np.asarray(fun(xm), dtype=float).ravel()
        cols.append((fp - fm) / (2.0 * h[i]))
    if not cols:
        m = np.asarray(fun(x), dtype=float).size
        return np.zeros((m, 0))
    jac = np.column_stack(cols)
    if not np.all(np.isfinite(jac)):
        raise NonFiniteObjective("non-finite Jacobian entry")
    return jac


def newton_solve(residual: Callable, x0, tol: float = 1e-10, maxiter: int = 50, what: str = "newton"):
    """Damped Newton iteration on a square system with a finite-difference Jacobian.

    The step is halved until the max-norm of the residual decreases.  Raises
    :class:`NewtonDiverged` when ``maxiter`` is exhausted or the residual turns
    non-finite.
    """
    z = np.array(x0, dtype=float).ravel()
    with np.errstate(all="ignore"):
        r = np.asarray(residual(z), dtype=float).ravel()
    norm = float(np.max(np.abs(r))) if r.size else 0.0
    for _ in range(maxiter):
        if not math.isfinite(norm):
            raise NewtonDiverged(f"{what}: residual became non-finite")
        if norm <= tol:
            return z
        try:
            with np.errstate(all="ignore"):
                jac = finite_diff_jacobian(residual, z)
            dz = np.linalg.solve(jac, -r)
        except (np.linalg.LinAlgError, NonFiniteObjective):
            raise NewtonDiverged(f"{what}: singular or non-finite Jacobian") from None
        t = 1.0
        while True:
            z_new = z + t * dz
            with np.errstate(all="ignore"):
                r_new = np.asarray(residual(z_new), dtype=float).ravel()
            n_new = float(np.max(np.abs(r_new)))
            if math.isfinite(n_new) and n_new < norm:
                break
            t *= 0.5
            if t < 1e-8:
                break
        z, r, norm = z_new, r_new, n_new
    if math.isfinite(norm) and norm <= tol:
        return z
    raise NewtonDiverged(f"{what}: no convergence in {maxiter} iterations (residual {norm:.3g})")


# ---------------------------------------------------------------------------
# Projected gradient


@dataclass
class BoxResult:
    """Outcome of :func:`minimize_box`; unpacks as ``argmin, value``."""

    x: np.ndarray
    value: float
    iterations: int = 0
    converged: bool = False
    loss_trace: list = field(default_factory=list)

    def __iter__(self):
        yield self.x
        yield self.value


def _bounds(initial, lower, upper):
    x0 = np.array(initial, dtype=float).ravel()
    lo = np.broadcast_to(np.asarray(-np.inf if lower is None else lower, dtype=float), x0.shape).copy()
    hi = np.broadcast_to(np.asarray(np.inf if upper is None else upper, dtype=float), x0.shape).copy()
    if np.any(lo > hi):
        raise InfeasibleBounds(f"lower > upper at indices {np.flatnonzero(lo > hi).tolist()}")
    return x0, lo, hi


def minimize_box(
    objective: Callable,
    initial,
    lower=None,
    upper=None,
    config: OptimizerConfig = OptimizerConfig(),
    gradient: Optional[Callable] = None,
) -> BoxResult:
    """Minimize ``objective`` over a box by projected gradient descent.

    Trial steps use the Barzilai-Borwein length of the previous iteration
    (``config.initial_step`` on the first one) and are shortened by
    ``backtracking_factor`` until the projected Armijo condition holds, so
    the recorded loss trace is non-increasing.  ``gradient`` defaults to
    central finite differences with ``config.fd_step``.
    """
    x, lo, hi = _bounds(initial, lower, upper)
    x = np.clip(x, lo, hi)
    if gradient is None:
        fd = config.fd_step

        def gradient(v):
            return finite_diff_gradient(objective, v, fd)

    fx = _checked(objective(x))
    g = np.asarray(gradient(x), dtype=float).ravel()
    if not np.all(np.isfinite(g)):
        raise NonFiniteObjective("non-finite gradient")
    trace = [fx]
    alpha = config.initial_step / max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        pg = x - np.clip(x - g, lo, hi)
        if np.linalg.norm(pg) <= config.gradient_tolerance:
            converged = True
            it -= 1
            break
        step = alpha
        accepted = False
        while step > 1e-20:
            x_new = np.clip(x - step * g, lo, hi)
            d = x_new - x
            if not np.any(d):
                break
            f_new = float(objective(x_new))
            if math.isfinite(f_new) and f_new <= fx + ARMIJO * float(g @ d):
                accepted = True
                break
            step *= config.backtracking_factor
        if not accepted:
            break
        g_new = np.asarray(gradient(x_new), dtype=float).ravel()
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteObjective("non-finite gradient")
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        alpha = float(s @ s) / sy if sy > 0 else config.initial_step
        alpha = min(max(alpha, 1e-12), 1e12)
        x, fx, g = x_new, f_new, g_new
        trace.append(fx)
    else:
        pg = x - np.clip(x - g, lo, hi)
        converged = bool(np.linalg.norm(pg) <= config.gradient_tolerance)
    return BoxResult(x=x, value=fx, iterations=it, converged=converged, loss_trace=trace)


# ---------------------------------------------------------------------------
# Quadratic penalty


@dataclass
class PenaltyResult:
    x: np.ndarray
    value: float
    max_equality_violation: float
    rounds: int = 0
    penalty: float = 0.0

    def __iter__(self):
        yield self.x
        yield self.value
        yield self.max_equality_violation


def solve_penalty_nlp(
    objective: Callable,
    equality_residuals: Callable,
    initial,
    lower=None,
    upper=None,
    config: OptimizerConfig = OptimizerConfig(),
    tolerance: float = 1e-6,
    max_rounds: int = 30,
    initial_penalty: float = 10.0,
    objective_gradient: Optional[Callable] = None,
    residual_jacobian: Optional[Callable] = None,
) -> PenaltyResult:
    """Equality-constrained minimization over a box by a quadratic penalty loop.

    ``value`` is the unpenalized objective at the returned point and
    ``max_equality_violation`` is ``max|residual|`` re-evaluated there.
    The penalized gradient is assembled as ``grad J + 2 rho J_r^T r`` from
    the optional analytic pieces, or from central differences of ``J`` and
    of the residual vector separately.
    """
    x, lo, hi = _bounds(initial, lower, upper)

    def violation(v):
        r = np.asarray(equality_residuals(v), dtype=float).ravel()
        if not np.all(np.isfinite(r)):
            raise NonFiniteObjective("non-finite equality residual")
        return float(np.max(np.abs(r))) if r.size else 0.0

    rho = initial_penalty
    best_viol = violation(np.clip(x, lo, hi))
    stalled = 0
    rounds = 0
    for rounds in range(1, max_rounds + 1):

        def penalized(v, rho=rho):
            r = np.asarray(equality_residuals(v), dtype=float).ravel()
            return float(objective(v)) + rho * float(r @ r)

        def penalized_grad(v, rho=rho):
            # Differencing the residuals rather than the penalized sum keeps
            # the gradient accurate once rho is large.
            r = np.asarray(equality_residuals(v), dtype=float).ravel()
            g_obj = finite_diff_gradient(objective, v, config.fd_step) if objective_gradient is None \
                else np.asarray(objective_gradient(v), dtype=float).ravel()
            jac = finite_diff_jacobian(equality_residuals, v, config.fd_step) if residual_jacobian is None \
                else np.atleast_2d(np.asarray(residual_jacobian(v), dtype=float))
            return g_obj + 2.0 * rho * (jac.T @ r)

        x = minimize_box(penalized, x, lo, hi, config, gradient=penalized_grad).x
        viol = violation(x)
        if viol <= tolerance:
            break
        if viol < best_viol * (1.0 - 1e-3):
            best_viol = viol
            stalled = 0
        else:
            stalled += 1
            if stalled >= 5:
                raise PenaltyDiverged(
                    f"equality violation stuck at {viol:.3g} for 5 rounds", x=x, violation=viol
                )
        rho *= config.penalty_growth
    return PenaltyResult(
        x=x,
        value=_checked(objective(x)),
        max_equality_violation=violation(x),
        rounds=rounds,
        penalty=rho,
    )


# ---------------------------------------------------------------------------
# Least squares


def least_squares_box(
    residuals: Callable,
    initial,
    lower=None,
    upper=None,
    config: OptimizerConfig = OptimizerConfig(),
    jacobian: Optional[Callable] = None,
    damping: float = 1e-3,
) -> BoxResult:
    """Minimize ``|r(x)|^2`` over a box by projected Levenberg-Marquardt.

    Each trial step solves the damped Gauss-Newton system and is projected
    onto the box; it is kept only if the cost decreases, otherwise the
    damping grows tenfold.  ``jacobian`` defaults to central differences.
    The loss trace is non-increasing.
    """
    x, lo, hi = _bounds(initial, lower, upper)
    x = np.clip(x, lo, hi)
    if jacobian is None:
        fd = config.fd_step

        def jacobian(v):
            return finite_diff_jacobian(residuals, v, fd)

    def cost_of(r):
        return float(r @ r)

    r = np.asarray(residuals(x), dtype=float).ravel()
    fx = _checked(cost_of(r))
    trace = [fx]
    lam = damping
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        jac = jacobian(x)
        g = 2.0 * jac.T @ r
        pg = x - np.clip(x - g, lo, hi)
        if np.linalg.norm(pg) <= config.gradient_tolerance:
            converged = True
            break
        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        improved = False
        while lam < 1e16:
            a = jtj + lam * (np.diag(diag) + np.eye(x.size))
            try:
                step = np.linalg.solve(a, -jac.T @ r)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + step, lo, hi)
            with np.errstate(all="ignore"):
                r_new = np.asarray(residuals(x_new), dtype=float).ravel()
            f_new = cost_of(r_new)
            if math.isfinite(f_new) and f_new < fx:
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
        rel = (fx - f_new) / max(fx, 1e-300)
        x, r, fx = x_new, r_new, f_new
        trace.append(fx)
        lam = max(lam / 10.0, 1e-12)
        if rel < 1e-15:
            break
    return BoxResult(x=x, value=fx, iterations=it, converged=converged, loss_trace=trace)
