"""Closed-loop scenario execution and Monte Carlo batching.

A scenario wires one controller to one plant, runs it for ``steps``
samples (or ILC iterations of a batch of that length) and collects a
:class:`RunReport`.  Every random draw comes from a Philox generator keyed
by the config seed, so a run is a pure function of its config.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .. import __version__
from ..benchmarks import REFERENCE_VERSION, linear_plant, make_benchmark
from ..control import (
    IlcController,
    ImcState,
    MpcProblem,
    RtoProblem,
    backoff_mpc_feedback,
    build_lifted,
    gradient_gain,
    ilc_update,
    imc_step,
    imitation_train,
    imitation_validate,
    inverse_gain,
    mpc_feedback,
    mpc_feedback_multistart,
    solve_rto,
)
from ..errors import MlOracleError, StepFailed
from ..monitor import SoftSensorSpec, soft_sensor_train, window_features
from ..numkit import OptimizerConfig
from ..oracle import Dataset, FnnSetup, TrainingSpec, coordinate
from ..plant import PlantModel, SampledTrajectory, integrate_step, simulate, solve_algebraic
from ..surrogates import gp_fit, gp_predict
from .config import config_hash, validate_config, with_seed

# second Philox key word for the estimator's training data stream
_ESTIMATOR_STREAM = 1 << 64


@dataclass
class RunReport:
    """Per-step records plus summary metrics and provenance.

    Row k of every array belongs to sample k; there are ``steps + 1`` rows.
    ``inputs[k]`` is the input applied from sample k on, so the final row
    holds NaN, as do ``cost`` entries of controllers without a cost.
    """

    times: np.ndarray
    states: np.ndarray
    algebraic: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    setpoints: np.ndarray
    estimates: np.ndarray
    cost: np.ndarray
    violation: np.ndarray
    summary: dict
    provenance: dict
    config: dict
    step_metadata: list = field(default_factory=list)

    def __len__(self):
        return self.times.size

    def columns(self) -> list:
        def names(prefix, n):
            return [f"{prefix}{i}" for i in range(n)]

        return (["t"] + names("x", self.states.shape[1]) + names("z", self.algebraic.shape[1])
                + names("u", self.inputs.shape[1]) + names("y", self.outputs.shape[1])
                + names("sp", self.setpoints.shape[1]) + names("est", self.estimates.shape[1])
                + ["cost", "violation"])

    def table(self) -> np.ndarray:
        return np.column_stack([
            self.times, self.states, self.algebraic, self.inputs, self.outputs,
            self.setpoints, self.estimates, self.cost, self.violation,
        ]) if len(self) else np.zeros((0, len(self.columns())))


# ---------------------------------------------------------------------------
# building blocks


def _box(block, n):
    if block is None:
        return None
    lo = np.broadcast_to(np.asarray(block["lower"], dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(block["upper"], dtype=float), (n,)).copy()
    return lo, hi


def build_plant(block: dict) -> tuple[PlantModel, np.ndarray]:
    """Plant model and initial state from a ``plant`` config block."""
    kind = block["benchmark"]
    if kind == "linear":
        a = np.asarray(block["a"], dtype=float)
        n = a.shape[0]
        b = np.asarray(block["b"], dtype=float)
        model = linear_plant(
            a, b, block.get("c"), block.get("sampling_time", 1.0),
            input_bounds=_box(block.get("input_bounds"), b.shape[1]),
            state_bounds=_box(block.get("state_bounds"), n),
        )
        x0 = np.asarray(block.get("initial_state", np.zeros(n)), dtype=float)
    else:
        bench = make_benchmark(kind)
        model = bench.model
        changes = {}
        if "state_bounds" in block:
            changes["state_bounds"] = _box(block["state_bounds"], model.n_x)
        if "input_bounds" in block:
            changes["input_bounds"] = _box(block["input_bounds"], model.n_u)
        if "sampling_time" in block:
            changes["sampling_time"] = float(block["sampling_time"])
        if changes:
            model = dataclasses.replace(model, **changes)
        x0 = np.asarray(block.get("initial_state", bench.mode.initial_state), dtype=float)
    if x0.size != model.n_x:
        raise StepFailed(f"initial_state must have {model.n_x} entries", 0)
    return model, x0


def _mpc_problem(model: PlantModel, block: dict, setpoint=None) -> MpcProblem:
    if setpoint is None:
        sp = block["setpoint"]
        setpoint = (sp["x"], sp.get("z"), sp["u"])
    path = (_box(block.get("state_bounds"), model.n_x), None, None)
    term = (_box(block.get("terminal_state_bounds"), model.n_x), None)
    return MpcProblem(
        plant=model,
        horizon=block["horizon"],
        q=np.asarray(block["q"], dtype=float),
        r=None if "r" not in block else np.asarray(block["r"], dtype=float),
        s=np.asarray(block["s"], dtype=float),
        setpoint=setpoint,
        path_boxes=path,
        terminal_boxes=term,
        max_iterations=block.get("max_iterations", 30),
    )


def _economic(block: dict):
    def vec(key):
        return None if key not in block else np.asarray(block[key], dtype=float)

    terms = {v: (vec(f"{v}_linear"), vec(f"{v}_quadratic"), vec(f"{v}_target")) for v in "xzu"}

    def objective(x, z, u, p):
        total = 0.0
        for v, val in (("x", x), ("z", z), ("u", u)):
            lin, quad, target = terms[v]
            if lin is not None:
                total += float(lin @ val)
            if quad is not None:
                ref = 0.0 if target is None else target
                total += float(quad @ (val - ref) ** 2)
        return total

    return objective


def _fit_gp(block: dict):
    return gp_fit(np.asarray(block["inputs"], dtype=float), np.asarray(block["labels"], dtype=float),
                  block.get("h1", 1.0), block.get("h2", 1.0), block.get("nu", 1e-2))


def _output_setpoint(model: PlantModel, x, z, u):
    zz = np.asarray(z, dtype=float) if z is not None and len(z) == model.n_z else solve_algebraic(model, x, u)
    return model.output(np.asarray(x, dtype=float), zz)


def _fnn_setup(n_in, n_out, hidden):
    if hidden:
        return FnnSetup((n_in, hidden, n_out), ("tanh", "linear"))
    return FnnSetup((n_in, n_out), ("linear",))


class _Controller:
    """Feedback law interface used by the closed loop."""

    cost_available = False
    setpoint_output: np.ndarray
    constraint_box: Optional[tuple] = None
    summary_extra: dict

    def step(self, k, x, z):  # pragma: no cover - interface
        raise NotImplementedError


class _OpenLoop(_Controller):
    def __init__(self, model, block, steps):
        seq = np.asarray(block["inputs"], dtype=float).reshape(-1, model.n_u)
        self.inputs = seq if seq.shape[0] >= steps else np.vstack([seq, np.tile(seq[-1], (steps - seq.shape[0], 1))])
        self.setpoint_output = np.full(model.n_y, np.nan)
        self.summary_extra = {}

    def step(self, k, x, z):
        return self.inputs[k], math.nan, {}


class _Mpc(_Controller):
    cost_available = True

    def __init__(self, model, problem: MpcProblem, summary_extra=None):
        self.model = model
        self.problem = problem
        x_s, z_s, u_s = problem.setpoint
        self.setpoint_output = _output_setpoint(model, x_s, z_s if model.n_z else None, u_s)
        self.constraint_box = problem.path_boxes[0]
        self.previous = None
        self.summary_extra = summary_extra or {}

    def solve(self, x, z):
        zc = z if self.model.n_z else None
        if self.previous is None:
            return mpc_feedback_multistart(self.problem, x, zc)
        return mpc_feedback(self.problem, x, self.previous, zc)

    def step(self, k, x, z):
        u, sol = self.solve(x, z)
        self.previous = sol
        return u, sol.cost, sol.metadata()


class _Backoff(_Mpc):
    def __init__(self, model, problem, gp, lam):
        super().__init__(model, problem, {"lambda": lam})
        self.gp = gp
        self.lam = lam

    def solve(self, x, z):
        return backoff_mpc_feedback(self.problem, self.gp, self.lam, x, self.previous, z if self.model.n_z else None)


class _Policy(_Controller):
    def __init__(self, model, policy, summary_extra):
        self.model = model
        self.policy = policy
        self.setpoint_output = np.full(model.n_y, np.nan)
        self.summary_extra = summary_extra

    def step(self, k, x, z):
        lo, hi = self.model.input_bounds
        return np.clip(self.policy(x), lo, hi), math.nan, {}


def _build_controller(model: PlantModel, cfg: dict) -> _Controller:
    name, block = next(iter(cfg["controller"].items()))
    if name == "open_loop":
        return _OpenLoop(model, block, cfg["steps"])
    if name == "mpc":
        return _Mpc(model, _mpc_problem(model, block))
    if name == "rto":
        g = block["guess"]
        sol = solve_rto(RtoProblem(_economic(block["economic"]), model),
                        (g["x"], g.get("z", np.zeros(model.n_z)), g["u"]))
        problem = _mpc_problem(model, block["tracking"], (sol.x_s, sol.z_s, sol.u_s))
        return _Mpc(model, problem, {
            "rto_setpoint": {"x": sol.x_s.tolist(), "z": sol.z_s.tolist(), "u": sol.u_s.tolist()},
            "rto_value": sol.value,
            "rto_violation": sol.max_violation,
        })
    if name == "backoff_mpc":
        gp_block = block.get("gp", cfg.get("noise", {}).get("gp_disturbance"))
        if "lambda" in block:
            lam = float(block["lambda"])
        elif "target_violation" in block:
            lam = float(norm.ppf(1.0 - block["target_violation"]))
        else:
            lam = 0.0
        return _Backoff(model, _mpc_problem(model, block["mpc"]), _fit_gp(gp_block), lam)
    if name == "imitation":
        problem = _mpc_problem(model, block["mpc"])
        domain = _box(block["domain"], model.n_x)
        spec = TrainingSpec(
            split_fractions=(0.8, 0.2, 0.0),
            seed=cfg["seed"],
            optimizer=OptimizerConfig(max_iterations=block.get("max_iterations", 2000), gradient_tolerance=1e-12),
        )
        setup = _fnn_setup(model.n_x, model.n_u, block.get("hidden_units", 16))
        policy = imitation_train(problem, domain, block["samples"], spec, setup)
        extra = {"imitation_train_rmse": policy.network.provenance.get("test_metric")}
        if "validation_samples" in block:
            cert = imitation_validate(policy, problem, block.get("epsilon", 1e-2), block["validation_samples"],
                                      cfg["seed"])
            extra["certificate"] = dataclasses.asdict(cert)
        ctl = _Policy(model, policy, extra)
        x_s, z_s, u_s = problem.setpoint
        ctl.setpoint_output = _output_setpoint(model, x_s, z_s if model.n_z else None, u_s)
        ctl.constraint_box = problem.path_boxes[0]
        return ctl
    raise ValueError(f"controller {name!r} is not a feedback law")


# ---------------------------------------------------------------------------
# noise and estimation


class _Noise:
    def __init__(self, cfg: dict, model: PlantModel, rng: np.random.Generator):
        block = cfg.get("noise", {})
        self.rng = rng
        self.meas = np.broadcast_to(np.asarray(block.get("measurement_std", 0.0), dtype=float), (model.n_y,))
        self.proc = np.broadcast_to(np.asarray(block.get("process_std", 0.0), dtype=float), (model.n_x,))
        self.gp = _fit_gp(block["gp_disturbance"]) if "gp_disturbance" in block else None

    def disturb(self, x_prev, x_next):
        if np.any(self.proc):
            x_next = x_next + self.proc * self.rng.standard_normal(x_next.size)
        if self.gp is not None:
            mean, var = gp_predict(self.gp, x_prev)
            x_next = x_next + mean + math.sqrt(var) * self.rng.standard_normal(x_next.size)
        return x_next

    def measure(self, y):
        if np.any(self.meas):
            return y + self.meas * self.rng.standard_normal(y.size)
        return y


class _Estimator:
    """Soft sensor trained on seeded open-loop runs of the same plant."""

    def __init__(self, cfg: dict, model: PlantModel, x0: np.ndarray):
        block = cfg["estimator"]
        self.spec = SoftSensorSpec(block["window"], tuple(block["targets"]),
                                   tuple(block["outputs"]) if "outputs" in block else None)
        rng = np.random.Generator(np.random.Philox(key=cfg["seed"] + _ESTIMATOR_STREAM))
        lo, hi = model.input_bounds
        lo = np.where(np.isfinite(lo), lo, -1.0)
        hi = np.where(np.isfinite(hi), hi, 1.0)
        steps = max(cfg["steps"], block["window"] + 1)
        runs = [simulate(model, x0, np.tile(lo + (hi - lo) * rng.random(model.n_u), (steps, 1)))
                for _ in range(block["training_runs"])]
        spec = TrainingSpec(split_fractions=(0.8, 0.2, 0.0), seed=cfg["seed"],
                            optimizer=OptimizerConfig(max_iterations=3000))
        self.sensor = soft_sensor_train(runs, self.spec, spec)
        self.width = len(self.spec.target_indices)

    def estimate(self, outputs: np.ndarray) -> np.ndarray:
        w = self.spec.window_length
        if outputs.shape[0] < w:
            return np.full(self.width, np.nan)
        traj = SampledTrajectory(
            times=np.arange(w, dtype=float), states=np.zeros((w, 1)), algebraic=np.zeros((w, 0)),
            inputs=np.zeros((w - 1, 1)), outputs=outputs[-w:],
        )
        f, _ = window_features(traj, w, self.spec.output_indices)
        return self.sensor.evaluate_many(f)[-1]


# ---------------------------------------------------------------------------
# summaries


def _violation(x, box) -> float:
    if box is None:
        return 0.0
    lo, hi = box
    return float(max(np.max(np.maximum(x - hi, 0.0), initial=0.0), np.max(np.maximum(lo - x, 0.0), initial=0.0)))


def _tracking_rmse(outputs, setpoints) -> float:
    d = outputs[1:] - setpoints[1:]
    d = d[np.isfinite(d)]
    return float(math.sqrt(np.mean(d * d))) if d.size else math.nan


def _summary(report_arrays, steps, extra) -> dict:
    viol = report_arrays["violation"][1:]
    count = int(np.sum(viol > 0))
    out = {
        "steps": steps,
        "tracking_rmse": _tracking_rmse(report_arrays["outputs"], report_arrays["setpoints"]),
        "violation_count": count,
        "violation_rate": count / steps if steps else 0.0,
    }
    out.update(extra)
    return out


def _provenance(cfg: dict) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "version": __version__,
        "benchmark_reference_version": REFERENCE_VERSION,
    }


# ---------------------------------------------------------------------------
# scenario loops


def _closed_loop(cfg, model, x0, rng) -> RunReport:
    steps = cfg["steps"]
    noise = _Noise(cfg, model, rng)
    estimator = _Estimator(cfg, model, x0) if "estimator" in cfg else None
    name = next(iter(cfg["controller"]))
    try:
        if name == "imc":
            return _imc_loop(cfg, model, x0, noise, estimator)
        ctl = _build_controller(model, cfg)
    except MlOracleError as exc:
        raise StepFailed(f"controller setup failed: {exc}", 0, exc) from exc
    box = ctl.constraint_box if ctl.constraint_box is not None else model.state_bounds
    n_est = estimator.width if estimator else 0
    x = x0.copy()
    u_lo, u_hi = model.input_bounds
    rows = {k: [] for k in ("states", "algebraic", "inputs", "outputs", "cost", "violation", "estimates")}
    meta = []
    z = None
    for k in range(steps + 1):
        try:
            z = solve_algebraic(model, x, np.zeros(model.n_u) if not rows["inputs"] else rows["inputs"][-1], z)
            y = noise.measure(model.output(x, z))
            rows["states"].append(x)
            rows["algebraic"].append(z)
            rows["outputs"].append(y)
            rows["violation"].append(_violation(x, box))
            rows["estimates"].append(estimator.estimate(np.vstack(rows["outputs"])) if estimator else np.zeros(0))
            if k == steps:
                break
            u, cost, info = ctl.step(k, x, z)
            u = np.asarray(u, dtype=float).ravel()
            if np.any(u < u_lo) or np.any(u > u_hi):
                raise StepFailed(f"controller returned input {u} outside the input box", k)
            rows["inputs"].append(u)
            rows["cost"].append(cost)
            meta.append(info)
            x_next, z = integrate_step(model, x, u, z if model.n_z else None)
            x = noise.disturb(x, x_next)
        except StepFailed:
            raise
        except MlOracleError as exc:
            raise StepFailed(str(exc), k, exc) from exc
    n = steps + 1
    arrays = {
        "states": np.vstack(rows["states"]),
        "algebraic": np.vstack(rows["algebraic"]) if model.n_z else np.zeros((n, 0)),
        "inputs": np.vstack(rows["inputs"] + [np.full(model.n_u, np.nan)]),
        "outputs": np.vstack(rows["outputs"]),
        "setpoints": np.tile(ctl.setpoint_output, (n, 1)),
        "estimates": np.vstack(rows["estimates"]) if n_est else np.zeros((n, 0)),
        "cost": np.asarray(rows["cost"] + [math.nan], dtype=float),
        "violation": np.asarray(rows["violation"], dtype=float),
    }
    return RunReport(
        times=np.arange(n) * model.sampling_time,
        summary=_summary(arrays, steps, ctl.summary_extra),
        provenance=_provenance(cfg),
        config=cfg,
        step_metadata=meta,
        **arrays,
    )


def _imc_loop(cfg, model, x0, noise, estimator) -> RunReport:
    block = cfg["controller"]["imc"]
    real, real_x0 = build_plant(block["real_plant"]) if "real_plant" in block else (model, x0)
    if "real_plant" in block and "initial_state" not in block["real_plant"]:
        real_x0 = x0
    inverse = _train_inverse(model, block, cfg["seed"])
    setpoint = np.asarray(block["setpoint"], dtype=float)
    steps = cfg["steps"]
    state = ImcState(model, x0.copy(), real, real_x0.copy())
    rows = {k: [] for k in ("states", "inputs", "outputs", "violation", "estimates")}
    for k in range(steps + 1):
        try:
            x = state.plant_state
            y = noise.measure(real.output(x, np.zeros(real.n_z)))
            rows["states"].append(x)
            rows["outputs"].append(y)
            rows["violation"].append(_violation(x, real.state_bounds))
            rows["estimates"].append(estimator.estimate(np.vstack(rows["outputs"])) if estimator else np.zeros(0))
            if k == steps:
                break
            u, state, _ = imc_step(inverse, state, setpoint)
            state = dataclasses.replace(state, plant_state=noise.disturb(x, state.plant_state))
            rows["inputs"].append(u)
        except MlOracleError as exc:
            raise StepFailed(str(exc), k, exc) from exc
    n = steps + 1
    arrays = {
        "states": np.vstack(rows["states"]),
        "algebraic": np.zeros((n, 0)),
        "inputs": np.vstack(rows["inputs"] + [np.full(real.n_u, np.nan)]),
        "outputs": np.vstack(rows["outputs"]),
        "setpoints": np.tile(setpoint, (n, 1)),
        "estimates": np.vstack(rows["estimates"]) if estimator else np.zeros((n, 0)),
        "cost": np.full(n, math.nan),
        "violation": np.asarray(rows["violation"], dtype=float),
    }
    return RunReport(times=np.arange(n) * real.sampling_time, summary=_summary(arrays, steps, {}),
                     provenance=_provenance(cfg), config=cfg, **arrays)


def _train_inverse(model: PlantModel, block: dict, seed: int):
    """Inverse model ``(y_next, x) -> u`` fitted on one-step transitions of the model."""
    if model.n_z:
        raise StepFailed("IMC is only wired for ODE plants", 0)
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = block["samples"]

    def finite(lo, hi, centre):
        lo = np.where(np.isfinite(lo), lo, centre - 10.0)
        hi = np.where(np.isfinite(hi), hi, centre + 10.0)
        return lo, hi

    xlo, xhi = finite(*model.state_bounds, np.zeros(model.n_x))
    ulo, uhi = finite(*model.input_bounds, np.zeros(model.n_u))
    xs = xlo + (xhi - xlo) * rng.random((n, model.n_x))
    us = ulo + (uhi - ulo) * rng.random((n, model.n_u))
    ys = np.vstack([model.output(integrate_step(model, x, u)[0], np.zeros(0)) for x, u in zip(xs, us)])
    data = Dataset(np.hstack([ys, xs]), us)
    spec = TrainingSpec(split_fractions=(0.8, 0.2, 0.0), seed=seed,
                        optimizer=OptimizerConfig(max_iterations=block.get("max_iterations", 3000),
                                                  gradient_tolerance=1e-12))
    return coordinate(data, None, spec, _fnn_setup(data.feature_dim, model.n_u, block.get("hidden_units", 0)))


def _ilc_loop(cfg, model, x0, rng) -> RunReport:
    block = cfg["controller"]["ilc"]
    noise = _Noise(cfg, model, rng)
    n = cfg["steps"]
    ref = np.asarray(block["reference"], dtype=float)
    if ref.size != n:
        raise StepFailed(f"reference has {ref.size} samples but steps = {n}", 0)
    g, _ = build_lifted(model, n, x0)
    gain = inverse_gain(g) if block.get("gain", "inverse") == "inverse" else gradient_gain(g, block.get("gamma"))
    ctl = IlcController(g, np.eye(n), gain, ref, np.zeros(n))

    def batch(u):
        x = x0.copy()
        states, outputs = [x], [noise.measure(model.output(x, np.zeros(model.n_z)))]
        for k in range(n):
            x_next, _ = integrate_step(model, x, [u[k]])
            x = noise.disturb(x, x_next)
            states.append(x)
            outputs.append(noise.measure(model.output(x, np.zeros(model.n_z))))
        return np.vstack(states), np.vstack(outputs)

    for it in range(block["iterations"]):
        try:
            _, ys = batch(ctl.current_input)
            ctl = ilc_update(ctl, ys[1:, 0])
        except MlOracleError as exc:
            raise StepFailed(str(exc), it, exc) from exc
    states, outputs = batch(ctl.current_input)
    final_error = float(np.linalg.norm(ref - outputs[1:, 0]))
    arrays = {
        "states": states,
        "algebraic": np.zeros((n + 1, model.n_z)),
        "inputs": np.concatenate([ctl.current_input, [math.nan]]).reshape(-1, 1),
        "outputs": outputs,
        "setpoints": np.concatenate([[math.nan], ref]).reshape(-1, 1),
        "estimates": np.zeros((n + 1, 0)),
        "cost": np.full(n + 1, math.nan),
        "violation": np.asarray([_violation(x, model.state_bounds) for x in states]),
    }
    extra = {"ilc_error_norms": list(ctl.error_norms) + [final_error], "ilc_iterations": ctl.iteration}
    return RunReport(times=np.arange(n + 1) * model.sampling_time, summary=_summary(arrays, n, extra),
                     provenance=_provenance(cfg), config=cfg, **arrays)


def run_scenario(config: dict) -> RunReport:
    """Execute one scenario described by a validated config dict."""
    cfg = validate_config(config)
    model, x0 = build_plant(cfg["plant"])
    rng = np.random.Generator(np.random.Philox(key=cfg["seed"]))
    if "ilc" in cfg["controller"]:
        return _ilc_loop(cfg, model, x0, rng)
    return _closed_loop(cfg, model, x0, rng)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MonteCarloResult:
    reports: list
    failures: list
    aggregate: dict


def aggregate_reports(reports) -> dict:
    """Pooled violation rate and mean tracking RMSE over successful replicates."""
    ok = [r for r in reports if r is not None]
    steps = sum(r.summary["steps"] for r in ok)
    violations = sum(r.summary["violation_count"] for r in ok)
    rmses = [r.summary["tracking_rmse"] for r in ok if not math.isnan(r.summary["tracking_rmse"])]
    return {
        "replicates": len(reports),
        "succeeded": len(ok),
        "violation_count": violations,
        "violation_rate": violations / steps if steps else 0.0,
        "mean_tracking_rmse": float(np.mean(rmses)) if rmses else math.nan,
    }


def run_monte_carlo(config: dict, replicates: int) -> MonteCarloResult:
    """Run ``replicates`` copies with seeds ``seed + i``.

    A failing replicate leaves ``None`` in ``reports`` and an
    ``(index, error)`` pair in ``failures``; the others still run.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    base = validate_config(config)
    reports, failures = [], []
    for i in range(replicates):
        try:
            reports.append(run_scenario(with_seed(base, base["seed"] + i)))
        except MlOracleError as exc:
            reports.append(None)
            failures.append((i, exc))
    return MonteCarloResult(reports, failures, aggregate_reports(reports))
