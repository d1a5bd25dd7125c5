"""Learning-based monitoring: windowed soft sensors and a fault classifier.

Both estimators read a sliding window of past outputs.  The feature at
sample k is ``(y_{k-w+1}, ..., y_k)`` flattened oldest first, optionally
followed by the input ``u_k`` applied at that sample, so an estimate never
depends on data after time k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, SingleClassDataset
from .oracle import Dataset, FnnSetup, TrainedMap, TrainingSpec, coordinate
from .plant import SampledTrajectory


@dataclass(frozen=True)
class SoftSensorSpec:
    """Feature construction for a soft sensor.

    ``output_indices`` selects the measured outputs (all when ``None``);
    ``setup`` is the oracle setup function, a one-hidden-layer tanh network
    when omitted.
    """

    window_length: int
    target_indices: tuple
    output_indices: Optional[tuple] = None
    include_input: bool = False
    setup: object = None

    def __post_init__(self):
        if int(self.window_length) < 1:
            raise ValueError("window_length must be >= 1")
        if not len(self.target_indices):
            raise ValueError("at least one target state is required")


@dataclass(frozen=True)
class FaultLabel:
    class_index: int
    class_names: tuple = ("normal", "faulty")

    def __post_init__(self):
        if not 0 <= self.class_index < len(self.class_names):
            raise ValueError("class_index out of range")

    @property
    def name(self) -> str:
        return self.class_names[self.class_index]


def _measured(traj: SampledTrajectory, output_indices) -> np.ndarray:
    y = np.asarray(traj.outputs, dtype=float)
    return y if output_indices is None else y[:, list(output_indices)]


def window_features(traj: SampledTrajectory, window: int, output_indices=None,
                    include_input: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Causal window features of one trajectory.

    Returns ``(features, sample_index)`` where row i uses outputs up to and
    including sample ``sample_index[i]``.
    """
    y = _measured(traj, output_indices)
    last = y.shape[0] - 1
    if include_input:
        last = min(last, len(traj.inputs) - 1)
    ks = np.arange(window - 1, last + 1)
    if ks.size == 0:
        return np.zeros((0, window * y.shape[1] + (traj.inputs.shape[1] if include_input else 0))), ks
    rows = [y[k - window + 1:k + 1].ravel() for k in ks]
    feats = np.vstack(rows)
    if include_input:
        feats = np.hstack([feats, np.asarray(traj.inputs, dtype=float)[ks]])
    return feats, ks


def _default_setup(n_in: int, n_out: int) -> FnnSetup:
    return FnnSetup((n_in, 16, n_out), ("tanh", "linear"))


def soft_sensor_train(trajectories: Sequence[SampledTrajectory], spec: SoftSensorSpec,
                      training: TrainingSpec) -> TrainedMap:
    """Train a map from output windows to the target state components.

    Trajectories not longer than the window are skipped.
    """
    feats, labels = [], []
    targets = list(spec.target_indices)
    for traj in trajectories:
        if len(traj.times) <= spec.window_length:
            continue
        f, ks = window_features(traj, spec.window_length, spec.output_indices, spec.include_input)
        if ks.size == 0:
            continue
        feats.append(f)
        labels.append(np.asarray(traj.states, dtype=float)[ks][:, targets])
    if not feats:
        raise InsufficientData(f"no trajectory is longer than the window ({spec.window_length} samples)")
    data = Dataset(np.vstack(feats), np.vstack(labels))
    setup = spec.setup or _default_setup(data.feature_dim, len(targets))
    trained = coordinate(data, None, training, setup)
    trained.provenance.update(window_length=spec.window_length, target_indices=targets)
    return trained


def soft_sensor_estimate(sensor: TrainedMap, traj: SampledTrajectory, spec: SoftSensorSpec) -> np.ndarray:
    """Run the sensor over a trajectory; rows before the first full window are NaN."""
    f, ks = window_features(traj, spec.window_length, spec.output_indices, spec.include_input)
    out = np.full((len(traj.times), len(spec.target_indices)), np.nan)
    if ks.size:
        out[ks] = sensor.evaluate_many(f)
    return out


def fault_classifier_train(normal_runs: Sequence[SampledTrajectory], faulty_runs: Sequence[SampledTrajectory],
                           training: TrainingSpec, window_length: int = 1, output_indices=None,
                           hidden: int = 8) -> TrainedMap:
    """Two-class probability map (0 = normal, 1 = faulty) over output windows.

    The network has one tanh hidden layer and a softmax output and is trained
    with cross-entropy through the oracle's classification branch.
    """
    if not normal_runs or not faulty_runs:
        raise SingleClassDataset("both normal and faulty runs are required")
    feats, labels = [], []
    for cls, runs in ((0, normal_runs), (1, faulty_runs)):
        for traj in runs:
            f, _ = window_features(traj, window_length, output_indices)
            feats.append(f)
            labels.append(np.full(f.shape[0], cls))
    x = np.vstack(feats)
    y = np.concatenate(labels)
    if x.shape[0] == 0:
        raise InsufficientData("no run is as long as the window")
    if np.unique(y).size < 2:
        raise SingleClassDataset("windows of only one class remain")
    setup = FnnSetup((x.shape[1], hidden, 2), ("tanh", "linear"), feature_scale=_scale(x))
    trained = coordinate(Dataset(x, y, "classification"), None, training, setup)
    trained.provenance.update(window_length=window_length, classes=["normal", "faulty"])
    return trained


def _scale(x: np.ndarray) -> float:
    s = float(np.max(np.abs(x))) if x.size else 1.0
    return s if s > 0 and math.isfinite(s) else 1.0


def classify_windows(classifier: TrainedMap, traj: SampledTrajectory, window_length: int = 1,
                     output_indices=None) -> list:
    f, _ = window_features(traj, window_length, output_indices)
    probs = classifier.evaluate_many(f)
    return [FaultLabel(int(i)) for i in np.argmax(probs, axis=1)]
