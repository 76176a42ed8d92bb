import json
import math

import numpy as np
import pytest

from mvdistill.oracle import conditional_mutual_info, mutual_info
from mvdistill.probe import (
    UndersampledError,
    canonical_pair,
    discretize,
    joint_code,
    nuisance_info,
    plugin_info,
    probe_accuracy,
    probe_report,
    view_specific_plugin,
)
from mvdistill.synth import DiscreteSpec, generate_discrete


def world_samples(n, seed):
    w = generate_discrete(DiscreteSpec(n_views=2, n_classes=2, private_leak=0.4, shared_noise=0.2, private_noise=0.1))
    s = w.pmf.sample(n, np.random.default_rng(seed))
    return w, {"y": s[:, 0], "v1": s[:, 1], "v2": s[:, 2]}


class TestDiscretize:
    def test_median_split(self, rng):
        x = rng.standard_normal(1001)
        x = np.concatenate([x, -x])
        counts = np.bincount(discretize(x, 2)[:, 0])
        assert abs(counts[0] - counts[1]) <= 1

    def test_constant_column(self):
        x = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
        with pytest.warns(RuntimeWarning, match="constant"):
            codes = discretize(x, 3)
        assert np.all(codes[:, 0] == 0)
        assert set(codes[:, 1]) == {0, 1, 2}

    @pytest.mark.parametrize("n", [1000, 1001, 1003])
    def test_gaussian_quantiles(self, rng, n):
        counts = np.bincount(discretize(rng.standard_normal((n, 2)), 4)[:, 1], minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_codes_in_range(self, rng):
        c = discretize(rng.standard_normal((50, 3)), 5)
        assert c.min() == 0 and c.max() == 4

    def test_monotone(self, rng):
        x = rng.standard_normal(200)
        c = discretize(x, 4)[:, 0]
        order = np.argsort(x)
        assert np.all(np.diff(c[order]) >= 0)

    def test_bad_bins(self):
        with pytest.raises(ValueError):
            discretize(np.ones((4, 1)), 1)

    def test_joint_code(self):
        assert list(joint_code(np.array([[0, 0], [1, 2], [2, 1]]), 3)) == [0, 5, 7]


class TestPlugin:
    def test_permutation_null(self):
        rng = np.random.default_rng(0)
        z = discretize(rng.standard_normal(10_000), 3)[:, 0]
        y = rng.permutation(np.arange(10_000) % 3)
        assert plugin_info({"z": z, "y": y}, "z", "y") < 0.02

    def test_copy(self):
        rng = np.random.default_rng(1)
        y = rng.integers(0, 4, 10_000)
        h = -sum(p * math.log(p) for p in np.bincount(y) / len(y))
        assert plugin_info({"z": y.copy(), "y": y}, "z", "y") == pytest.approx(h, abs=0.02)
        assert h == pytest.approx(math.log(4), abs=0.02)

    def test_world_truth(self):
        w, cols = world_samples(100_000, 2)
        truth = mutual_info(w.pmf, "y", "v1")
        cards = {"y": 2, "v1": 9, "v2": 9}
        assert abs(plugin_info(cols, "y", "v1", cardinalities=cards) - truth) < 0.03
        cond_truth = conditional_mutual_info(w.pmf, "y", "v1", "v2")
        assert abs(plugin_info(cols, "y", "v1", "v2", cardinalities=cards) - cond_truth) < 0.03

    def test_consistency(self):
        errors = []
        for n in (1_000, 10_000, 100_000):
            reps = []
            for seed in range(5):
                w, cols = world_samples(n, 100 + seed)
                reps.append(abs(plugin_info(cols, "y", "v1", cardinalities={"y": 2, "v1": 9}) - mutual_info(w.pmf, "y", "v1")))
            errors.append(np.mean(reps))
        assert errors[0] > errors[1] > errors[2]

    def test_undersampled(self):
        rng = np.random.default_rng(3)
        cols = {"a": rng.integers(0, 4, 500), "b": rng.integers(0, 4, 500)}
        with pytest.raises(UndersampledError):
            plugin_info(cols, "a", "b")
        assert plugin_info(cols, "a", "b", min_per_cell=10) >= 0

    def test_code_range_checked(self):
        with pytest.raises(ValueError):
            plugin_info({"a": np.array([0, 3]), "b": np.array([0, 1])}, "a", "b", cardinalities={"a": 2}, min_per_cell=0)


class TestSummaries:
    def test_canonical_pair_finds_shared_direction(self, rng):
        s = rng.standard_normal(5000)
        a = np.column_stack([rng.standard_normal(5000), s + 0.1 * rng.standard_normal(5000)])
        b = np.column_stack([-s, rng.standard_normal(5000), rng.standard_normal(5000)])
        _, _, rho = canonical_pair(a, b)
        assert rho > 0.99

    def test_nuisance_info_extremes(self, rng):
        nuis = rng.standard_normal((20_000, 2))
        assert nuisance_info(rng.standard_normal((20_000, 3)), nuis) < 0.02
        leaky = np.column_stack([nuis[:, 0] + 0.1 * rng.standard_normal(20_000), rng.standard_normal(20_000)])
        assert nuisance_info(leaky, nuis) > 0.5

    def test_nuisance_free_view(self, rng):
        assert nuisance_info(rng.standard_normal((10, 2)), np.zeros((10, 0))) == 0.0

    def test_view_specific_plugin(self, rng):
        n = 30_000
        y = rng.integers(0, 2, n)
        shared = y + 0.3 * rng.standard_normal(n)
        z1 = np.column_stack([shared])
        z2 = np.column_stack([shared + 0.01 * rng.standard_normal(n)])
        z3 = np.column_stack([rng.standard_normal(n)])
        vs = view_specific_plugin([z1, z2, z3], y)
        assert all(0 <= v < 0.02 for v in vs)


class TestProbeAccuracy:
    def test_noise_is_chance(self):
        rng = np.random.default_rng(4)
        k, n = 4, 4000
        y = np.arange(n) % k
        acc = probe_accuracy([rng.standard_normal((n, 3))], y)
        sigma = math.sqrt(0.25 * 0.75 / (0.3 * n))
        assert abs(acc - 1 / k) < 3 * sigma

    def test_one_hot(self):
        y = np.arange(300) % 3
        assert probe_accuracy([np.eye(3)[y]], y) >= 0.99

    def test_modes(self, rng):
        y = np.arange(600) % 2
        good = np.eye(2)[y] + 0.01 * rng.standard_normal((600, 2))
        noise = rng.standard_normal((600, 2))
        reps = [good, noise]
        assert probe_accuracy(reps, y, "single-view", 0) >= 0.99
        assert probe_accuracy(reps, y, "leave-one-out", 0) < 0.7
        with pytest.raises(ValueError):
            probe_accuracy(reps, y, "sideways")
        with pytest.raises(ValueError):
            probe_accuracy([good], y, "leave-one-out", 0)

    def test_too_few_per_class(self, rng):
        y = np.array([0] * 100 + [1] * 5)
        with pytest.raises(ValueError):
            probe_accuracy([rng.standard_normal((105, 2))], y)


def test_probe_report(rng):
    n = 6000
    y = np.arange(n) % 3
    nuis = [rng.standard_normal((n, 2)) for _ in range(2)]
    reps = [np.eye(3)[y] + 0.5 * rng.standard_normal((n, 3)) + 0.3 * np.pad(nuis[i], ((0, 0), (0, 1))) for i in range(2)]
    report = probe_report(reps, y, nuis)
    d = report.to_dict()
    assert json.loads(report.to_json()) == d
    assert len(report.csv_header()) == len(report.csv_row())
    for i, v in enumerate(report.views):
        assert min(v.plugin_label, v.plugin_nuisance, v.plugin_view_specific) >= 0
        for acc in (v.acc_single, v.acc_leave_one_out):
            assert 0 <= acc <= 1
    assert report.acc_all_views >= max(v.acc_single for v in report.views) - 0.02
