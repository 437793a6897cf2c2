import dataclasses

import numpy as np
import pytest

from ccar import data
from ccar.data import DatasetSpec, GroupThresholds
from ccar.losses import ClassStats


def counts(**kw):
    return data.exponential_class_counts(DatasetSpec(**kw)).tolist()


class TestCounts:
    def test_three_classes(self):
        assert counts(num_classes=3, max_count=100, imbalance_factor=100) == [100, 10, 1]

    def test_balanced(self):
        assert counts(num_classes=5, max_count=50, imbalance_factor=1) == [50] * 5

    def test_cifar_profile(self):
        c = counts(num_classes=100, max_count=500, imbalance_factor=100)
        assert c[0] == 500 and c[-1] == 5
        assert all(a >= b for a, b in zip(c, c[1:]))

    def test_matches_direct_formula(self):
        K, n1, IF = 10, 500, 50
        mu = IF ** (-1 / (K - 1))
        assert counts(num_classes=K, max_count=n1, imbalance_factor=IF) == [int(n1 * mu**c + 0.5) for c in range(K)]

    def test_half_tail_rounds_up(self):
        assert counts(num_classes=10, max_count=500, imbalance_factor=200)[-1] == 3

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError, match="zero samples"):
            counts(num_classes=10, max_count=10, imbalance_factor=100)

    @pytest.mark.parametrize("IF", [10, 50, 100, 200])
    @pytest.mark.parametrize("K", [10, 25, 100])
    def test_imbalance_fidelity(self, IF, K):
        c = np.array(counts(num_classes=K, max_count=500, imbalance_factor=IF))
        assert np.all(np.diff(c) <= 0)
        assert 0.8 * IF <= c.max() / c.min() <= 1.2 * IF


@pytest.mark.parametrize("kw", [dict(num_classes=2), dict(max_count=9), dict(imbalance_factor=0.5), dict(input_dim=1),
                                dict(class_separation=0), dict(noise_sigma=-1), dict(test_per_class=0), dict(seed=-1)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        DatasetSpec(**kw)


class TestGenerate:
    spec = DatasetSpec(num_classes=10, max_count=60, imbalance_factor=20, input_dim=5, seed=4, test_per_class=13)

    def test_deterministic(self):
        a = data.generate(self.spec)
        b = data.generate(self.spec)
        for x, y in zip(a[:2], b[:2]):
            assert np.array_equal(x.features, y.features) and np.array_equal(x.labels, y.labels)

    def test_seeds_differ(self):
        a, _, _ = data.generate(self.spec)
        b, _, _ = data.generate(dataclasses.replace(self.spec, seed=5))
        assert not np.array_equal(a.features, b.features)

    def test_stats_from_train(self):
        train, test, stats = data.generate(self.spec)
        assert stats.counts.tolist() == np.bincount(train.labels).tolist() == data.exponential_class_counts(self.spec).tolist()
        assert stats.frequencies.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_array_equal(stats.frequencies, stats.counts / stats.total)

    def test_test_split_balanced(self):
        _, test, _ = data.generate(self.spec)
        assert np.bincount(test.labels).tolist() == [13] * 10

    def test_head_tail_ratio(self):
        _, _, stats = data.generate(DatasetSpec(num_classes=10, max_count=500, imbalance_factor=100))
        assert stats.frequencies[0] / stats.frequencies[-1] == pytest.approx(100, rel=0.2)

    def test_centers_on_sphere(self):
        rng = np.random.default_rng(0)
        c = data.class_centers(dataclasses.replace(self.spec, class_separation=2.5), rng)
        np.testing.assert_allclose(np.linalg.norm(c, axis=1), 2.5)

    def test_noise_scale(self):
        spec = dataclasses.replace(self.spec, imbalance_factor=1, max_count=400, noise_sigma=0.7)
        train, _, _ = data.generate(spec)
        resid = np.concatenate([train.features[train.labels == k] - train.features[train.labels == k].mean(0)
                                for k in range(10)])
        assert resid.std() == pytest.approx(0.7, rel=0.05)


class TestGroups:
    def test_thresholds(self):
        assert data.assign_groups(ClassStats([500, 50, 5])) == ["many", "medium", "few"]

    def test_inclusive_bounds(self):
        assert data.assign_groups(ClassStats([100, 21, 20])) == ["many", "medium", "few"]

    def test_custom_thresholds(self):
        assert data.assign_groups(ClassStats([30, 10, 5]), GroupThresholds(many_min=30, few_max=5)) == ["many", "medium", "few"]

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            GroupThresholds(many_min=20, few_max=20)

    def test_cifar_profile_has_all_groups(self):
        c = data.exponential_class_counts(DatasetSpec(num_classes=100, max_count=500, imbalance_factor=100))
        tags = data.assign_groups(ClassStats(c))
        assert tags.count("many") == int(np.sum(c >= 100)) > 0
        assert tags.count("few") == int(np.sum(c <= 20)) > 0
        assert tags.count("medium") > 0


def test_csv_round_trip(tmp_path):
    train, _, _ = data.generate(DatasetSpec(num_classes=4, max_count=12, imbalance_factor=3, input_dim=3, seed=2))
    path = tmp_path / "train.csv"
    data.write_csv(train, path)
    text = path.read_bytes()
    assert text.startswith(b"feature_0,feature_1,feature_2,label\n")
    assert b"\r" not in text
    back = data.read_csv(path, num_classes=4)
    assert np.array_equal(back.features, train.features)
    assert np.array_equal(back.labels, train.labels)
    assert back.counts.tolist() == train.counts.tolist()


def test_csv_bad_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b,label\n1,2,0\n")
    with pytest.raises(ValueError, match="header"):
        data.read_csv(path)
