"""Learning an explicit approximation of an MPC law, with a Hoeffding check.

States are sampled over a box, each one is labelled with the MPC input, and
a feed-forward network is trained on the pairs through the ml-oracle.  A
separate validation pass estimates how often the network deviates from MPC
by more than a tolerance and attaches a one-sided Hoeffding bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ImitationSampleFailed, MlOracleError
from ..oracle import Dataset, FnnSetup, TrainingSpec, coordinate
from .mpc import MpcProblem, mpc_feedback

DEFAULT_DEVIATIONS = (0.01, 0.02, 0.05, 0.1)


def hoeffding_delta(n: int, t: float) -> float:
    """Failure probability ``exp(-2 n t^2)`` of the one-sided bound ``p <= p_hat + t``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.exp(-2.0 * n * t * t)


@dataclass(frozen=True)
class ValidationCertificate:
    """Empirical violation rate with Hoeffding bounds.

    ``bounds`` holds ``(t, delta, p_hat + t)`` triples: with probability at
    least ``1 - delta`` the true rate is at most ``p_hat + t``.
    """

    epsilon: float
    sample_count: int
    violations: int
    empirical_rate: float
    bounds: tuple

    @property
    def confidence(self) -> float:
        """Confidence ``1 - delta`` of the first (tightest) bound."""
        return 1.0 - self.bounds[0][1]

    def recompute(self) -> "ValidationCertificate":
        ts = [b[0] for b in self.bounds]
        return _certificate(self.epsilon, self.sample_count, self.violations, ts)


def _certificate(epsilon, n, violations, deviations):
    p_hat = violations / n
    bounds = tuple((float(t), hoeffding_delta(n, t), p_hat + t) for t in deviations)
    return ValidationCertificate(float(epsilon), int(n), int(violations), p_hat, bounds)


@dataclass(frozen=True, eq=False)
class ImitationPolicy:
    """State-to-input map standing in for MPC on ``training_domain``."""

    network: Callable
    training_domain: tuple
    validation_certificate: Optional[ValidationCertificate] = None

    def __call__(self, x) -> np.ndarray:
        net = self.network
        if hasattr(net, "evaluate"):
            return np.asarray(net.evaluate(np.asarray(x, dtype=float)), dtype=float).ravel()
        return np.asarray(net(np.asarray(x, dtype=float)), dtype=float).ravel()

    def with_certificate(self, certificate: ValidationCertificate) -> "ImitationPolicy":
        return replace(self, validation_certificate=certificate)


def _domain(domain):
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in domain)
    if lo.shape != hi.shape or np.any(lo > hi) or not np.all(np.isfinite(lo) & np.isfinite(hi)):
        raise ValueError("domain must be a finite nonempty box")
    return lo, hi


def sample_states(domain, count: int, seed: int = 0, method: Optional[str] = None) -> np.ndarray:
    """Grid (dimension <= 2) or uniform random states in the box.

    A grid uses ``ceil(count ** (1/d))`` points per axis.
    """
    lo, hi = _domain(domain)
    if count < 1:
        raise ValueError("at least one sample is required")
    d = lo.size
    method = method or ("grid" if d <= 2 else "uniform")
    if method == "grid":
        per_axis = int(math.ceil(count ** (1.0 / d) - 1e-12))
        axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(d)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    if method == "uniform":
        rng = np.random.Generator(np.random.Philox(key=seed))
        return lo + (hi - lo) * rng.random((count, d))
    raise ValueError(f"unknown sampling method {method!r}")


def _label(problem: MpcProblem, states: np.ndarray) -> np.ndarray:
    labels = []
    for x in states:
        try:
            u, _ = mpc_feedback(problem, x)
        except MlOracleError as exc:
            raise ImitationSampleFailed(f"MPC failed at sampled state {x}: {exc}", x) from exc
        labels.append(u)
    return np.vstack(labels)


def imitation_train(problem: MpcProblem, domain, count: int, spec: TrainingSpec,
                    setup: Optional[FnnSetup] = None, method: Optional[str] = None) -> ImitationPolicy:
    """Fit a network to MPC inputs on sampled states of ``domain``.

    ``setup`` defaults to one hidden tanh layer of 16 units with a linear
    output; pass ``FnnSetup((n_x, n_u), ("linear",))`` for an affine law.
    """
    states = sample_states(domain, count, spec.seed, method)
    labels = _label(problem, states)
    m = problem.plant
    setup = setup or FnnSetup((m.n_x, 16, m.n_u), ("tanh", "linear"))
    trained = coordinate(Dataset(states, labels), None, spec, setup)
    return ImitationPolicy(network=trained, training_domain=_domain(domain))


def imitation_validate(policy: ImitationPolicy, problem: MpcProblem, epsilon: float, count: int, seed: int,
                       deviations: Sequence[float] = DEFAULT_DEVIATIONS) -> ValidationCertificate:
    """Empirical rate of ``||policy(x) - mpc(x)||_inf > epsilon`` with Hoeffding bounds.

    States are drawn i.i.d. uniformly from the policy's training domain with
    a generator keyed by ``seed``.
    """
    if count < 1:
        raise ValueError("at least one validation sample is required")
    states = sample_states(policy.training_domain, count, seed, "uniform")
    mpc_inputs = _label(problem, states)
    violations = 0
    for x, u in zip(states, mpc_inputs):
        if np.max(np.abs(policy(x) - u)) > epsilon:
            violations += 1
    return _certificate(epsilon, count, violations, deviations)
