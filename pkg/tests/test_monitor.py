import numpy as np
import pytest

from mloracle.benchmarks import linear_plant, make_benchmark
from mloracle.errors import InsufficientData, SingleClassDataset
from mloracle.monitor import (
    FaultLabel,
    SoftSensorSpec,
    classify_windows,
    fault_classifier_train,
    soft_sensor_estimate,
    soft_sensor_train,
    window_features,
)
from mloracle.numkit import OptimizerConfig
from mloracle.oracle import FnnSetup, GpSetup, TrainingSpec
from mloracle.plant import SampledTrajectory, simulate


def runs_of(plant, x0s, inputs):
    return [simulate(plant, x0, inputs) for x0 in x0s]


def synthetic(offset, n, rng, length=15):
    """Two-output runs whose first output hovers around ``offset``."""
    runs = []
    for _ in range(n):
        y = np.column_stack([offset + 0.3 * rng.standard_normal(length), rng.standard_normal(length)])
        runs.append(SampledTrajectory(np.arange(length, dtype=float), y, np.zeros((length, 0)),
                                      np.zeros((length - 1, 1)), y))
    return runs


class TestWindows:
    def test_layout(self):
        plant = linear_plant(0.5, 1.0)
        traj = simulate(plant, [1.0], [[0.0]] * 4)
        f, ks = window_features(traj, 2)
        np.testing.assert_array_equal(ks, [1, 2, 3, 4])
        np.testing.assert_allclose(f[0], traj.outputs[0:2, 0])
        f, ks = window_features(traj, 1, include_input=True)
        assert f.shape == (4, 2)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SoftSensorSpec(0, (0,))
        with pytest.raises(ValueError):
            FaultLabel(2)
        assert FaultLabel(1).name == "faulty"


class TestSoftSensor:
    def test_identity_output(self):
        plant = linear_plant(np.diag([0.9, 0.7]), np.eye(2))
        rng = np.random.default_rng(0)
        runs = [simulate(plant, rng.standard_normal(2), rng.standard_normal((10, 2))) for _ in range(4)]
        spec = SoftSensorSpec(1, (0, 1), setup=FnnSetup((2, 2), ("linear",)))
        sensor = soft_sensor_train(runs, spec, TrainingSpec())
        assert sensor.provenance["test_metric"] <= 1e-6

    def test_biomass_from_substrate_and_volume(self):
        bench = make_benchmark("fedbatch_bioreactor")
        x0 = bench.mode.initial_state
        runs = [simulate(bench.model, x0, np.full((20, 1), f)) for f in (0.0, 0.03, 0.06, 0.1)]
        held = simulate(bench.model, x0, np.full((20, 1), 0.045))
        spec = SoftSensorSpec(1, (0,), output_indices=(1, 2), setup=GpSetup())
        sensor = soft_sensor_train(runs, spec, TrainingSpec(objective_kind="evidence_based",
                                                            split_fractions=(0.8, 0.2, 0.0)))
        est = soft_sensor_estimate(sensor, held, spec)
        err = np.sqrt(np.mean((est[:, 0] - held.states[:, 0]) ** 2))
        assert err <= 0.05 * np.max(held.states[:, 0])

    def test_window_too_long(self):
        plant = linear_plant(0.5, 1.0)
        runs = runs_of(plant, [[1.0]], [[0.0]] * 3)
        with pytest.raises(InsufficientData):
            soft_sensor_train(runs, SoftSensorSpec(10, (0,)), TrainingSpec())

    def test_causal(self):
        plant = linear_plant(0.8, 0.5)
        rng = np.random.default_rng(1)
        runs = [simulate(plant, [x0], rng.uniform(-1, 1, (12, 1))) for x0 in (-1.0, 0.0, 1.0)]
        spec = SoftSensorSpec(3, (0,), include_input=True)
        sensor = soft_sensor_train(runs, spec, TrainingSpec(optimizer=OptimizerConfig(max_iterations=100)))
        traj = runs[0]
        base = soft_sensor_estimate(sensor, traj, spec)
        assert np.all(np.isnan(base[:2]))
        k = 6
        outputs = traj.outputs.copy()
        inputs = traj.inputs.copy()
        outputs[k + 1:] += 10.0
        inputs[k + 1:] -= 3.0
        tampered = SampledTrajectory(traj.times, traj.states, traj.algebraic, inputs, outputs)
        after = soft_sensor_estimate(sensor, tampered, spec)
        np.testing.assert_array_equal(after[:k + 1], base[:k + 1])
        assert not np.allclose(after[k + 1:], base[k + 1:])


class TestFaultClassifier:
    def test_separable(self):
        rng = np.random.default_rng(2)
        clf = fault_classifier_train(synthetic(0.0, 6, rng), synthetic(3.0, 6, rng), TrainingSpec())
        held_normal, held_faulty = synthetic(0.0, 2, rng), synthetic(3.0, 2, rng)
        labels = [l.class_index for t in held_normal for l in classify_windows(clf, t)]
        labels += [1 - l.class_index for t in held_faulty for l in classify_windows(clf, t)]
        assert 1.0 - np.mean(labels) >= 0.95

    def test_indistinguishable(self):
        rng = np.random.default_rng(3)
        same = synthetic(0.0, 8, rng, length=40)
        clf = fault_classifier_train(same[:4], same[4:], TrainingSpec(optimizer=OptimizerConfig(max_iterations=300)))
        held = synthetic(0.0, 4, rng, length=50)
        pred = np.array([l.class_index for t in held for l in classify_windows(clf, t)])
        # the true class of held-out windows is arbitrary; half are called normal, half faulty
        truth = np.repeat([0, 1], pred.size // 2)
        assert abs(np.mean(pred == truth) - 0.5) <= 0.1

    def test_probabilities(self):
        rng = np.random.default_rng(4)
        clf = fault_classifier_train(synthetic(0.0, 3, rng), synthetic(2.0, 3, rng), TrainingSpec(), window_length=2)
        probes = rng.uniform(-10, 10, (1000, 4))
        p = clf.evaluate_many(probes)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_single_class(self):
        rng = np.random.default_rng(5)
        with pytest.raises(SingleClassDataset):
            fault_classifier_train(synthetic(0.0, 3, rng), [], TrainingSpec())
