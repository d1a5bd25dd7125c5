"""Setup-function families: feed-forward networks, a recurrent cell, and GPs.

All three are plain value objects over numpy arrays.  Networks expose a flat
parameter vector (``flat`` / ``with_flat``) so that the training code can
hand them to the box-constrained optimizer directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NonFiniteState, NotPositiveDefinite
from .numkit import cholesky_solve

ACTIVATIONS = ("tanh", "relu", "linear", "sigmoid")
GP_FIT_JITTER = 1e-10


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _relu(a):
    return np.maximum(a, 0.0)


def _identity(a):
    return a


_ACTIVATE = {"tanh": np.tanh, "relu": _relu, "linear": _identity, "sigmoid": _sigmoid}


def activate(kind: str, a: np.ndarray) -> np.ndarray:
    try:
        return _ACTIVATE[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def activation_slope(kind: str, a: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Derivative of the activation given its pre-activation and output."""
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "relu":
        return (a > 0).astype(float)
    if kind == "linear":
        return np.ones_like(a)
    if kind == "sigmoid":
        return out * (1.0 - out)
    raise ValueError(f"unknown activation {kind!r}")


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


# ---------------------------------------------------------------------------
# feed-forward network


@dataclass(frozen=True, eq=False)
class FnnModel:
    layer_sizes: tuple
    weights: tuple
    biases: tuple
    activations: tuple

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=float) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=float).ravel() for b in self.biases))
        object.__setattr__(self, "activations", tuple(self.activations))
        n_layers = len(sizes) - 1
        if n_layers < 1:
            raise ValueError("need at least an input and an output size")
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n_layers):
            raise ValueError("one weight matrix, bias and activation per layer")
        for l, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise DimensionMismatch(f"layer {l}: W {w.shape}, b {b.shape} do not match sizes {sizes}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], activations: Sequence[str], seed: int = 0) -> "FnnModel":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        sizes = list(layer_sizes)
        weights = [glorot_uniform(rng, sizes[l + 1], sizes[l]) for l in range(len(sizes) - 1)]
        biases = [np.zeros(sizes[l + 1]) for l in range(len(sizes) - 1)]
        return cls(tuple(sizes), tuple(weights), tuple(biases), tuple(activations))

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_flat(self, theta) -> "FnnModel":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n_parameters:
            raise DimensionMismatch(f"expected {self.n_parameters} parameters, got {theta.size}")
        weights, biases, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[i:i + w.size].reshape(w.shape))
            i += w.size
            biases.append(theta[i:i + b.size])
            i += b.size
        return replace(self, weights=tuple(weights), biases=tuple(biases))

    def __call__(self, feature) -> np.ndarray:
        return fnn_forward(self, feature)


def _forward_layers(model: FnnModel, x: np.ndarray):
    """Batched forward pass; x has shape (batch, n0)."""
    pre, post = [], [x]
    for w, b, act in zip(model.weights, model.biases, model.activations):
        a = post[-1] @ w.T + b
        pre.append(a)
        post.append(activate(act, a))
    return pre, post


def fnn_forward(model: FnnModel, features) -> np.ndarray:
    """Evaluate on one feature vector (returns 1-D) or a batch (returns 2-D)."""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != model.layer_sizes[0]:
        raise DimensionMismatch(f"feature length {x.shape[-1]} != {model.layer_sizes[0]}")
    if x.ndim == 1:
        for w, b, act in zip(model.weights, model.biases, model.activations):
            x = _ACTIVATE[act](w @ x + b)
    else:
        for w, b, act in zip(model.weights, model.biases, model.activations):
            x = _ACTIVATE[act](x @ w.T + b)
    if not math.isfinite(float(np.sum(x))):
        raise NonFiniteState("network output overflowed")
    return x


def fnn_backward(model: FnnModel, features: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward plus reverse accumulation.

    ``upstream`` is d(loss)/d(output) with shape (batch, n_out); returns the
    outputs and the flat parameter gradient summed over the batch.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        pre, post = _forward_layers(model, features)
    out = post[-1]
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("network output overflowed")
    delta = np.asarray(upstream, dtype=float).reshape(out.shape)
    grads = []
    for l in range(len(model.weights) - 1, -1, -1):
        delta = delta * activation_slope(model.activations[l], pre[l], post[l + 1])
        grads.append((delta.T @ post[l], delta.sum(axis=0)))
        delta = delta @ model.weights[l]
    grads.reverse()
    return out, np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def fnn_eval_and_grad(model: FnnModel, feature, want_grad: bool = False, upstream=None):
    """Forward pass and, optionally, the parameter gradient of a scalar loss.

    ``upstream`` is the loss gradient with respect to the network output (for
    a squared loss this is the residual ``out - target``).  Returns
    ``(label, gradient_or_None)``; the gradient is flat, in the order used
    by :meth:`FnnModel.flat`.
    """
    x = np.asarray(feature, dtype=float).reshape(1, -1)
    if x.shape[1] != model.layer_sizes[0]:
        raise DimensionMismatch(f"feature length {x.shape[1]} != {model.layer_sizes[0]}")
    if not want_grad:
        return fnn_forward(model, x[0]), None
    if upstream is None:
        raise ValueError("want_grad requires the upstream residual")
    out, grad = fnn_backward(model, x, np.asarray(upstream, dtype=float).reshape(1, -1))
    return out[0], grad


# ---------------------------------------------------------------------------
# recurrent cell


@dataclass(frozen=True, eq=False)
class RnnCell:
    """Elman-type cell: h' = act_h(W_f f + W_h h + b_h), out = act_l(W_l h' + b_l)."""

    w_f: np.ndarray
    w_h: np.ndarray
    b_h: np.ndarray
    w_l: np.ndarray
    b_l: np.ndarray
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        for name in ("w_f", "w_h", "w_l"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("b_h", "b_l"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        n_h, n_f = self.w_f.shape
        n_l = self.w_l.shape[0]
        if self.w_h.shape != (n_h, n_h) or self.b_h.shape != (n_h,):
            raise DimensionMismatch("W_h must be n_h x n_h and b_h of length n_h")
        if self.w_l.shape != (n_l, n_h) or self.b_l.shape != (n_l,):
            raise DimensionMismatch("W_l must be n_l x n_h and b_l of length n_l")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    input_dim = property(lambda self: self.w_f.shape[1])
    hidden_dim = property(lambda self: self.w_f.shape[0])
    output_dim = property(lambda self: self.w_l.shape[0])

    @classmethod
    def initialize(cls, input_dim, hidden_dim, output_dim, hidden_activation="tanh",
                   output_activation="linear", seed=0) -> "RnnCell":
        rng = np.random.default_rng(seed)
        return cls(
            glorot_uniform(rng, hidden_dim, input_dim),
            glorot_uniform(rng, hidden_dim, hidden_dim),
            np.zeros(hidden_dim),
            glorot_uniform(rng, output_dim, hidden_dim),
            np.zeros(output_dim),
            hidden_activation,
            output_activation,
        )

    _ORDER = ("w_f", "w_h", "b_h", "w_l", "b_l")

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in self._ORDER])

    def with_flat(self, theta) -> "RnnCell":
        theta = np.asarray(theta, dtype=float).ravel()
        parts, i = {}, 0
        for n in self._ORDER:
            shape = getattr(self, n).shape
            size = int(np.prod(shape))
            parts[n] = theta[i:i + size].reshape(shape)
            i += size
        if i != theta.size:
            raise DimensionMismatch(f"expected {i} parameters, got {theta.size}")
        return replace(self, **parts)


def rnn_step(cell: RnnCell, feature, hidden) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(feature, dtype=float).ravel()
    h = np.asarray(hidden, dtype=float).ravel()
    if f.size != cell.input_dim or h.size != cell.hidden_dim:
        raise DimensionMismatch("feature or hidden state has the wrong length")
    h_next = activate(cell.hidden_activation, cell.w_f @ f + cell.w_h @ h + cell.b_h)
    out = activate(cell.output_activation, cell.w_l @ h_next + cell.b_l)
    return out, h_next


def rnn_sequence(cell: RnnCell, features) -> tuple[np.ndarray, np.ndarray]:
    """Fold :func:`rnn_step` over a sequence from a zero hidden state.

    Returns ``(outputs, hiddens)`` with one row per time step.
    """
    h = np.zeros(cell.hidden_dim)
    outs, hiddens = [], []
    for f in np.atleast_2d(np.asarray(features, dtype=float)):
        out, h = rnn_step(cell, f, h)
        outs.append(out)
        hiddens.append(h)
    return np.array(outs), np.array(hiddens)


def rnn_sequence_grad(cell: RnnCell, features, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Unrolled reverse accumulation through a sequence.

    ``upstream[k]`` is d(loss)/d(output_k).  Returns ``(outputs, flat_grad)``
    with the gradient ordered as :meth:`RnnCell.flat`.
    """
    fs = np.atleast_2d(np.asarray(features, dtype=float))
    ups = np.atleast_2d(np.asarray(upstream, dtype=float))
    n = fs.shape[0]
    hs = [np.zeros(cell.hidden_dim)]
    pre_h, pre_l, outs = [], [], []
    for f in fs:
        a = cell.w_f @ f + cell.w_h @ hs[-1] + cell.b_h
        h = activate(cell.hidden_activation, a)
        c = cell.w_l @ h + cell.b_l
        pre_h.append(a)
        hs.append(h)
        pre_l.append(c)
        outs.append(activate(cell.output_activation, c))
    g = {name: np.zeros_like(getattr(cell, name)) for name in RnnCell._ORDER}
    carry = np.zeros(cell.hidden_dim)
    for k in range(n - 1, -1, -1):
        d_c = ups[k] * activation_slope(cell.output_activation, pre_l[k], outs[k])
        g["w_l"] += np.outer(d_c, hs[k + 1])
        g["b_l"] += d_c
        d_h = cell.w_l.T @ d_c + carry
        d_a = d_h * activation_slope(cell.hidden_activation, pre_h[k], hs[k + 1])
        g["w_f"] += np.outer(d_a, fs[k])
        g["w_h"] += np.outer(d_a, hs[k])
        g["b_h"] += d_a
        carry = cell.w_h.T @ d_a
    return np.array(outs), np.concatenate([g[name].ravel() for name in RnnCell._ORDER])


# ---------------------------------------------------------------------------
# Gaussian process


def kernel_se(f1, f2, h1: float, h2: float) -> float:
    """Squared-exponential kernel ``h1 * exp(-|f1 - f2|^2 / h2)``."""
    d = np.asarray(f1, dtype=float).ravel() - np.asarray(f2, dtype=float).ravel()
    return float(h1 * math.exp(-float(d @ d) / h2))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def kernel_matrix(a, b, h1: float, h2: float) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(len(a), -1)
    b = np.asarray(b, dtype=float).reshape(len(b), -1)
    return h1 * np.exp(-_sq_dists(a, b) / h2)


def covariance_matrix(inputs, h1, h2, nu) -> np.ndarray:
    k = kernel_matrix(inputs, inputs, h1, h2)
    k = 0.5 * (k + k.T)
    k[np.diag_indices_from(k)] += nu
    return k


@dataclass(frozen=True, eq=False)
class GpModel:
    h1: float
    h2: float
    nu: float
    inputs: np.ndarray
    labels: np.ndarray
    lower: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def gp_fit(inputs, labels, h1: float = 1.0, h2: float = 1.0, nu: float = 1e-2) -> GpModel:
    """Factor the covariance matrix of the training data and cache ``K^-1 l``.

    A failed factorization is retried once with ``GP_FIT_JITTER`` added to
    the diagonal; the jitter actually used is stored on the model.
    """
    x = np.asarray(inputs, dtype=float)
    x = x.reshape(x.shape[0], -1)
    y = np.asarray(labels, dtype=float).ravel()
    if x.shape[0] < 1:
        raise ValueError("need at least one training sample")
    if y.size != x.shape[0]:
        raise DimensionMismatch("one scalar label per training input")
    if not (h1 > 0 and h2 > 0 and nu >= 0):
        raise ValueError("require h1 > 0, h2 > 0, nu >= 0")
    k = covariance_matrix(x, h1, h2, nu)
    jitter = 0.0
    try:
        alpha, lower = cholesky_solve(k, y)
    except NotPositiveDefinite:
        jitter = GP_FIT_JITTER
        k[np.diag_indices_from(k)] += jitter
        alpha, lower = cholesky_solve(k, y)
    return GpModel(float(h1), float(h2), float(nu), x, y, lower, alpha, jitter)


def gp_predict(model: GpModel, query) -> tuple[float, float]:
    """Posterior mean and variance (zero prior mean) at one query point."""
    mean, var = gp_predict_many(model, np.asarray(query, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


def gp_predict_many(model: GpModel, queries) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(queries, dtype=float)
    q = q.reshape(q.shape[0], -1)
    if q.shape[1] != model.inputs.shape[1]:
        raise DimensionMismatch(f"query dimension {q.shape[1]} != {model.inputs.shape[1]}")
    k_star = kernel_matrix(model.inputs, q, model.h1, model.h2)
    mean = k_star.T @ model.alpha
    v = solve_triangular(model.lower, k_star, lower=True, check_finite=False)
    var = model.h1 - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def log_marginal_likelihood(inputs, labels, h1, h2, nu, jitter: float = 0.0, with_grad: bool = False):
    """Gaussian log evidence of the labels; optional gradient w.r.t. log(h1, h2, nu)."""
    x = np.asarray(inputs, dtype=float)
    x = x.reshape(x.shape[0], -1)
    y = np.asarray(labels, dtype=float).ravel()
    n = y.size
    d2 = _sq_dists(x, x)
    e = np.exp(-d2 / h2)
    k = h1 * e
    k = 0.5 * (k + k.T)
    k[np.diag_indices_from(k)] += nu + jitter
    alpha, lower = cholesky_solve(k, y)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(lower)))) - 0.5 * n * math.log(2 * math.pi)
    if not with_grad:
        return lml
    k_inv = cholesky_solve(k, np.eye(n))[0]
    inner = np.outer(alpha, alpha) - k_inv
    grads = np.array([
        0.5 * np.sum(inner * (h1 * e)),
        0.5 * np.sum(inner * (h1 * e * d2 / h2)),
        0.5 * nu * np.trace(inner),
    ])
    return lml, grads


# ---------------------------------------------------------------------------
# serialization


def _arr(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "values": [float(v) for v in a.ravel()]}


def _unarr(d):
    return np.array(d["values"], dtype=float).reshape(d["shape"])


def model_to_dict(model) -> dict:
    if isinstance(model, FnnModel):
        return {
            "kind": "fnn",
            "layer_sizes": list(model.layer_sizes),
            "activations": list(model.activations),
            "weights": [_arr(w) for w in model.weights],
            "biases": [_arr(b) for b in model.biases],
        }
    if isinstance(model, RnnCell):
        d = {"kind": "rnn", "hidden_activation": model.hidden_activation,
             "output_activation": model.output_activation}
        d.update({n: _arr(getattr(model, n)) for n in RnnCell._ORDER})
        return d
    if isinstance(model, GpModel):
        return {
            "kind": "gp",
            "h1": model.h1,
            "h2": model.h2,
            "nu": model.nu,
            "inputs": _arr(model.inputs),
            "labels": _arr(model.labels),
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    kind = d["kind"]
    if kind == "fnn":
        return FnnModel(
            tuple(d["layer_sizes"]),
            tuple(_unarr(w) for w in d["weights"]),
            tuple(_unarr(b) for b in d["biases"]),
            tuple(d["activations"]),
        )
    if kind == "rnn":
        return RnnCell(**{n: _unarr(d[n]) for n in RnnCell._ORDER},
                       hidden_activation=d["hidden_activation"],
                       output_activation=d["output_activation"])
    if kind == "gp":
        return gp_fit(_unarr(d["inputs"]), _unarr(d["labels"]), d["h1"], d["h2"], d["nu"])
    raise ValueError(f"unknown model kind {kind!r}")


def dumps(model) -> str:
    """JSON text; floats are written with ``repr`` so the round trip is exact."""
    return json.dumps(model_to_dict(model), indent=1)


def loads(text: str):
    return model_from_dict(json.loads(text))
