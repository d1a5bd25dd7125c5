"""Built-in benchmark plants: a jacketed CSTR and a fed-batch bioreactor.

Nominal parameters live in ``data/benchmarks.ini`` and are read once at
import.  Each benchmark exposes its reaction kinetics separately so that the
kinetics can be hidden and learned; in that case the model's
``learned_dynamics`` hole must be filled through :meth:`Benchmark.embed`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np
from scipy.linalg import expm, logm

from .plant import OperatingMode, PlantModel


def _load_reference():
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string(resources.files("mloracle").joinpath("data/benchmarks.ini").read_text())
    return {
        section: {k: float(v) for k, v in parser[section].items()}
        for section in parser.sections()
    }


REFERENCE = _load_reference()
REFERENCE_VERSION = int(REFERENCE["meta"]["version"])
CSTR = REFERENCE["cstr"]
FEDBATCH = REFERENCE["fedbatch_bioreactor"]
BENCHMARKS = ("cstr", "fedbatch_bioreactor")


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A benchmark plant together with its ground-truth kinetics.

    ``kinetics`` maps the kinetic feature vector (``(c, theta)`` for the
    CSTR, ``(S,)`` for the bioreactor) to a length-1 rate array.
    ``kinetic_features`` extracts that feature vector from a state.
    """

    name: str
    model: PlantModel
    kinetics: Callable
    kinetic_features: Callable
    embed: Callable
    mode: OperatingMode
    nominal_input: np.ndarray


# ---------------------------------------------------------------------------
# CSTR


def cstr_rate(features) -> np.ndarray:
    c, theta = features[0], features[1]
    return np.array([CSTR["k0"] * np.exp(-CSTR["activation_e"] / theta) * c])


def _cstr_transport(x, z, u, p):
    c, theta = x
    d = CSTR["flow_q"] / CSTR["volume_v"]
    return np.array([
        d * (CSTR["c_in"] - c),
        d * (CSTR["theta_in"] - theta) - CSTR["beta"] * (theta - u[0]),
    ])


def _cstr_increment(rate: Callable) -> Callable:
    gamma = CSTR["gamma"]

    def increment(x, z, p):
        r = rate(x[:2])[0]
        return np.array([-r, gamma * r])

    return increment


def _make_cstr(hide: bool) -> Benchmark:
    base = PlantModel(
        n_x=2,
        n_u=1,
        first_principles_dynamics=_cstr_transport,
        sampling_time=CSTR["sampling_time"],
        state_bounds=([0.0, CSTR["theta_min"]], [CSTR["c_in"], CSTR["theta_max"]]),
        input_bounds=([CSTR["coolant_min"]], [CSTR["coolant_max"]]),
        learned_dynamics=None if hide else _cstr_increment(cstr_rate),
        name="cstr",
    )
    mode = OperatingMode("continuous", np.array([CSTR["c_initial"], CSTR["theta_initial"]]))
    return Benchmark(
        name="cstr",
        model=base,
        kinetics=cstr_rate,
        kinetic_features=lambda x: np.asarray(x[:2], dtype=float),
        embed=lambda rate: base.with_learned(dynamics=_cstr_increment(rate)),
        mode=mode,
        nominal_input=np.array([CSTR["coolant_nominal"]]),
    )


# ---------------------------------------------------------------------------
# fed-batch bioreactor


def monod_rate(features) -> np.ndarray:
    s = features[0]
    return np.array([FEDBATCH["mu_max"] * s / (FEDBATCH["k_s"] + s)])


def _fedbatch_transport(x, z, u, p):
    biomass, substrate, volume = x
    dilution = u[0] / volume
    return np.array([
        -dilution * biomass,
        dilution * (FEDBATCH["s_in"] - substrate),
        u[0],
    ])


def _fedbatch_increment(rate: Callable) -> Callable:
    yield_xs = FEDBATCH["yield_xs"]

    def increment(x, z, p):
        growth = rate(x[1:2])[0] * x[0]
        return np.array([growth, -growth / yield_xs, 0.0])

    return increment


def _make_fedbatch(hide: bool) -> Benchmark:
    base = PlantModel(
        n_x=3,
        n_u=1,
        first_principles_dynamics=_fedbatch_transport,
        sampling_time=FEDBATCH["sampling_time"],
        state_bounds=([0.0, 0.0, 0.5], [50.0, FEDBATCH["s_in"], 5.0]),
        input_bounds=([FEDBATCH["feed_min"]], [FEDBATCH["feed_max"]]),
        learned_dynamics=None if hide else _fedbatch_increment(monod_rate),
        name="fedbatch_bioreactor",
    )
    mode = OperatingMode(
        "fed_batch",
        np.array([FEDBATCH["x_initial"], FEDBATCH["s_initial"], FEDBATCH["v_initial"]]),
        FEDBATCH["batch_duration"],
    )
    return Benchmark(
        name="fedbatch_bioreactor",
        model=base,
        kinetics=monod_rate,
        kinetic_features=lambda x: np.asarray(x[1:2], dtype=float),
        embed=lambda rate: base.with_learned(dynamics=_fedbatch_increment(rate)),
        mode=mode,
        nominal_input=np.array([0.0]),
    )


# ---------------------------------------------------------------------------
# linear test plants


def linear_plant(a, b, c=None, sampling_time: float = 1.0, input_bounds=None, state_bounds=None,
                 name: str = "linear") -> PlantModel:
    """Continuous-time plant whose one-step map is ``x+ = a x + b u``.

    ``a`` must have no eigenvalues on the closed negative real axis (so that
    a real matrix logarithm exists).  The continuous matrices are
    ``A_c = log(a) / T`` and ``B_c = Phi^{-1} b`` with
    ``Phi = int_0^T exp(A_c s) ds``, so exact sampling reproduces ``(a, b)``;
    the fixed-step integrator matches it to within its truncation error
    (about 1e-11 per step for moderate ``a``).  ``c`` is the output
    matrix (identity when omitted).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    b = np.asarray(b, dtype=float).reshape(n, -1)
    nu = b.shape[1]
    t = float(sampling_time)
    ac = np.real(logm(a)) / t if not np.allclose(a, np.eye(n)) else np.zeros((n, n))
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = ac * t
    aug[:n, n:] = np.eye(n) * t
    phi = expm(aug)[:n, n:]
    bc = np.linalg.solve(phi, b)
    output_map = None
    if c is not None:
        cm = np.atleast_2d(np.asarray(c, dtype=float))

        def measured(x, z):
            return cm @ x

        output_map = measured

    return PlantModel(
        n_x=n,
        n_u=nu,
        n_y=None if c is None else cm.shape[0],
        first_principles_dynamics=lambda x, z, u, p: ac @ x + bc @ u,
        output_map=output_map,
        sampling_time=t,
        input_bounds=input_bounds,
        state_bounds=state_bounds,
        name=name,
    )


def make_benchmark(which: str, hide_kinetics: bool = False) -> Benchmark:
    """Build a benchmark plant.

    With ``hide_kinetics`` the reaction term is left out of the model (the
    ``learned_dynamics`` hole is empty) and must be supplied via
    ``Benchmark.embed(rate)``; ``Benchmark.kinetics`` is the true rate.
    """
    if which == "cstr":
        return _make_cstr(hide_kinetics)
    if which == "fedbatch_bioreactor":
        return _make_fedbatch(hide_kinetics)
    raise ValueError(f"unknown benchmark {which!r}; choose from {BENCHMARKS}")
