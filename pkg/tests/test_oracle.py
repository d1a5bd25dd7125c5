import math

import numpy as np
import pytest

from mloracle import benchmarks
from mloracle.benchmarks import make_benchmark
from mloracle.errors import AcceptanceNotReached, EmptyDataset, TransformFailed
from mloracle.numkit import OptimizerConfig
from mloracle.oracle import (
    AdditionalData,
    Dataset,
    FnnSetup,
    GpSetup,
    ParametricSetup,
    TrainingSpec,
    coordinate,
    metric,
    read_dataset,
    split_indices,
    train_error_based,
    train_evidence_based,
    train_integrated,
    train_sequential,
    transform_dataset,
    write_dataset,
)
from mloracle.plant import simulate

LINEAR = FnnSetup((1, 1), ("linear",))


def line_data(n=40, slope=2.0, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    f = np.linspace(-1, 1, n)
    return Dataset(f, slope * f + noise * rng.standard_normal(n))


class TestDataset:
    def test_shapes(self):
        ds = Dataset([1.0, 2.0], [3.0, 4.0])
        assert ds.features.shape == (2, 1) and ds.labels.shape == (2, 1)

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            Dataset([1.0, 2.0], [3.0])

    def test_classification_labels(self):
        with pytest.raises(ValueError):
            Dataset([[0.0]], [0.5], "classification")
        assert Dataset([[0.0], [1.0]], [0, 2], "classification").label_dim == 3

    def test_text_round_trip(self, tmp_path, rng):
        ds = Dataset(rng.standard_normal((5, 2)), rng.standard_normal((5, 1)))
        write_dataset(ds, tmp_path / "d.csv")
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "f0,f1,l0"
        back = read_dataset(tmp_path / "d.csv")
        assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)

    def test_bad_header(self, tmp_path):
        (tmp_path / "d.csv").write_text("x,y\n1,2\n")
        with pytest.raises(ValueError):
            read_dataset(tmp_path / "d.csv")


class TestSplit:
    def test_sizes(self):
        tr, te, va = split_indices(100, (0.7, 0.15, 0.15), seed=3)
        assert (tr.size, te.size, va.size) == (70, 15, 15)

    def test_disjoint_exhaustive_reproducible(self):
        parts = split_indices(37, (0.5, 0.3, 0.2), seed=11)
        joined = np.concatenate(parts)
        assert np.array_equal(np.sort(joined), np.arange(37))
        again = split_indices(37, (0.5, 0.3, 0.2), seed=11)
        assert all(np.array_equal(a, b) for a, b in zip(parts, again))

    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            TrainingSpec(split_fractions=(0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            TrainingSpec(max_rounds=0)


class TestErrorBased:
    def test_fits_slope(self):
        res = train_error_based(line_data(), LINEAR, TrainingSpec())
        assert abs(res.parameters[0] - 2.0) <= 1e-3
        assert np.all(np.diff(res.loss_trace) <= 0)

    def test_bias_only(self):
        setup = ParametricSetup(lambda f, w: np.full((len(f), 1), w[0]), (0.0,))
        ds = Dataset(np.arange(10.0), np.full(10, 3.25))
        res = train_error_based(ds, setup, TrainingSpec())
        assert abs(res.parameters[0] - 3.25) <= 1e-6

    def test_regularization_dominates(self):
        ds = line_data()
        plain = train_error_based(ds, LINEAR, TrainingSpec())
        heavy = train_error_based(ds, LINEAR, TrainingSpec(regularization_weight=1e6))
        assert np.max(np.abs(heavy.parameters)) <= 1e-4
        pred = heavy.parameters[0] * ds.features[:, 0] + heavy.parameters[1]
        plain_pred = plain.parameters[0] * ds.features[:, 0] + plain.parameters[1]
        assert np.mean((pred - ds.labels[:, 0]) ** 2) >= np.mean((plain_pred - ds.labels[:, 0]) ** 2)

    def test_classification(self):
        f = np.linspace(-2, 2, 40)
        ds = Dataset(f, (f > 0).astype(int), "classification")
        trained = coordinate(ds, None, TrainingSpec(split_fractions=(1, 0, 0)), FnnSetup((1, 2), ("linear",)))
        assert metric(trained, ds) == 1.0
        assert trained.classify([1.5]) == 1 and trained.classify([-1.5]) == 0
        np.testing.assert_allclose(trained.evaluate([0.3]).sum(), 1.0)

    def test_empty_split(self):
        with pytest.raises(EmptyDataset):
            train_error_based(Dataset(np.zeros((0, 1)), np.zeros((0, 1))), LINEAR, TrainingSpec())


class TestEvidence:
    def test_single_point(self):
        res = train_evidence_based(Dataset([0.0], [1.0]), GpSetup(), TrainingSpec())
        assert np.all(np.isfinite(res.parameters))

    def test_beats_defaults_on_sinusoid(self):
        x = np.linspace(0, 6, 25)
        train = Dataset(x, np.sin(x))
        xt = np.linspace(0.1, 5.9, 50)
        test = Dataset(xt, np.sin(xt))
        spec = TrainingSpec(split_fractions=(1, 0, 0))
        tuned = coordinate(train, None, spec, GpSetup())
        fixed = coordinate(train, None, spec, GpSetup(optimize=False))
        assert metric(tuned, test) < metric(fixed, test)

    def test_conflicting_duplicates_raise_noise(self):
        ds = Dataset([0.0, 0.0], [1.0, -1.0])
        res = train_evidence_based(ds, GpSetup(initial=(1.0, 1.0, 1e-8)), TrainingSpec())
        assert res.parameters[0, 2] > 1e-8

    def test_variance_nonnegative(self, rng):
        x = rng.uniform(-2, 2, 15)
        trained = coordinate(Dataset(x, np.cos(x)), None, TrainingSpec(split_fractions=(1, 0, 0)), GpSetup())
        for q in rng.uniform(-5, 5, 200):
            assert trained.predictive_variance([q]) >= 0.0


class TestCoordinate:
    def test_accepted_first_round(self):
        trained = coordinate(line_data(), None, TrainingSpec(acceptance_rmse=1e-3), LINEAR)
        assert trained.provenance["round"] == 1
        assert trained.provenance["split_sizes"] == [28, 6, 6]
        assert math.isfinite(trained.provenance["validation_metric"])

    def test_unreachable_threshold(self):
        with pytest.raises(AcceptanceNotReached) as info:
            coordinate(line_data(noise=0.1), None, TrainingSpec(acceptance_rmse=0.0, max_rounds=2), LINEAR)
        assert info.value.best is not None
        assert info.value.best_metric > 0

    def test_deterministic(self):
        setup = FnnSetup((1, 3, 1), ("tanh", "linear"))
        spec = TrainingSpec(optimizer=OptimizerConfig(max_iterations=200))
        a = coordinate(line_data(noise=0.05), None, spec, setup)
        b = coordinate(line_data(noise=0.05), None, spec, setup)
        assert a.provenance["parameters"] == b.provenance["parameters"]

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            coordinate(Dataset(np.zeros((0, 1)), np.zeros((0, 1))), None, TrainingSpec(), LINEAR)

    def test_output_box_clamps(self, rng):
        spec = TrainingSpec(constraint_set=([-0.5], [0.5]), split_fractions=(1, 0, 0))
        trained = coordinate(line_data(slope=0.4), None, spec, LINEAR)
        out = trained.evaluate_many(rng.uniform(-100, 100, (10_000, 1)))
        assert np.all(out >= -0.5) and np.all(out <= 0.5)


class TestSequential:
    def test_identity_transforms_reduce_to_coordinate(self):
        ds = line_data(noise=0.05)
        ident = AdditionalData(transform_pre=lambda f: f, transform_post=lambda l: l)
        a = train_sequential(ds, ident, LINEAR, TrainingSpec())
        b = coordinate(ds, None, TrainingSpec(), LINEAR)
        assert a.provenance["parameters"] == b.provenance["parameters"]

    def test_exponential_pre_model(self):
        u = np.linspace(-1, 1, 30)
        ds = Dataset(u, np.exp(u))
        trained = train_sequential(ds, AdditionalData(transform_pre=np.exp), LINEAR,
                                   TrainingSpec(split_fractions=(1, 0, 0)))
        z = np.exp(u)[:, None]
        assert metric(trained, Dataset(z, z)) <= 1e-3

    def test_implicit_cubic(self):
        u = np.linspace(-2, 2, 9)
        ds = Dataset(u, np.zeros(9))
        out = transform_dataset(ds, AdditionalData(implicit_pre=lambda z, f: z - f ** 3))
        np.testing.assert_allclose(out.features[:, 0], u ** 3, atol=1e-10)

    def test_failure_index(self):
        ds = Dataset([1.0, -1.0, 2.0], [0.0, 0.0, 0.0])
        with pytest.raises(TransformFailed) as info:
            with np.errstate(invalid="ignore"):
                transform_dataset(ds, AdditionalData(transform_pre=np.sqrt))
        assert info.value.index == 1


def fedbatch_data(n=8):
    truth = make_benchmark("fedbatch_bioreactor")
    hidden = make_benchmark("fedbatch_bioreactor", hide_kinetics=True)
    x0 = truth.mode.initial_state
    sched = np.full((n, 1), 0.05)
    traj = simulate(truth.model, x0, sched)
    ds = Dataset(traj.times[1:], traj.outputs[1:])
    extra = AdditionalData(initial_state=x0, input_schedule=sched, plant_skeleton=hidden.model, embed=hidden.embed)
    return ds, extra


def monod_setup(initial):
    return ParametricSetup(lambda f, w: w[0] * f / (w[1] + f), tuple(initial), lower=(0.0, 1e-3), upper=(5.0, 10.0))


class TestIntegrated:
    def test_perfect_model_has_zero_loss(self):
        ds, extra = fedbatch_data()
        truth = (benchmarks.FEDBATCH["mu_max"], benchmarks.FEDBATCH["k_s"])
        trained = train_integrated(ds, extra, monod_setup(truth),
                                   TrainingSpec(optimizer=OptimizerConfig(max_iterations=1)))
        assert trained.provenance["initial_loss"] < 1e-8

    def test_recovers_monod_parameters(self):
        ds, extra = fedbatch_data()
        trained = train_integrated(ds, extra, monod_setup((0.3, 0.5)),
                                   TrainingSpec(optimizer=OptimizerConfig(max_iterations=50, gradient_tolerance=1e-12)))
        w = trained.provenance["parameters"]
        assert trained.provenance["train_loss"] <= trained.provenance["initial_loss"]
        np.testing.assert_allclose(w, [benchmarks.FEDBATCH["mu_max"], benchmarks.FEDBATCH["k_s"]], rtol=1e-4)

    def test_empty_schedule(self):
        ds, extra = fedbatch_data()
        bad = AdditionalData(initial_state=extra.initial_state, input_schedule=np.zeros((0, 1)),
                             plant_skeleton=extra.plant_skeleton, embed=extra.embed)
        with pytest.raises(ValueError):
            train_integrated(ds, bad, monod_setup((0.5, 1.0)), TrainingSpec())

    def test_skeleton_needs_schedule(self):
        with pytest.raises(ValueError):
            AdditionalData(plant_skeleton=make_benchmark("cstr").model)

    def test_algebraic_case(self):
        # z1 solves z1 + s(z1) = u with s(z) = w z; the output is z1
        u = np.linspace(0.5, 3, 10)
        ds = Dataset(u, u / 3.0)
        extra = AdditionalData(algebraic_residual=lambda z1, z2, uu: z1 + z2 - uu,
                               algebraic_output=lambda z1, z2: z1)
        setup = ParametricSetup(lambda f, w: w[0] * f, (1.0,))
        trained = train_integrated(ds, extra, setup, TrainingSpec(optimizer=OptimizerConfig(max_iterations=50)))
        assert abs(trained.provenance["parameters"][0] - 2.0) <= 1e-6
