import dataclasses

import numpy as np
import pytest

from ccar import data, losses
from ccar import tinynet as T
from ccar.losses import ClassStats, LossConfig


def test_init_is_deterministic():
    a = T.init_params([2, 3], seed=7)
    b = T.init_params([2, 3], seed=7)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != T.init_params([2, 3], seed=8).tobytes()


def test_init_shapes():
    p = T.init_params([4, 8, 3], seed=0)
    assert [W.shape for W, _ in p.layers] == [(8, 4), (3, 8)]
    assert [b.shape for _, b in p.layers] == [(8,), (3,)]
    assert all(np.all(b == 0) for _, b in p.layers)
    assert p.dims == [4, 8, 3]


def test_init_bound():
    p = T.init_params([50, 2000], seed=3)  # 1e5 draws
    W = p.layers[0][0]
    bound = np.sqrt(6.0 / 50)
    assert np.all(np.abs(W) <= bound)
    assert np.abs(W).max() > 0.99 * bound


@pytest.mark.parametrize("dims", [[], [3]])
def test_init_needs_two_dims(dims):
    with pytest.raises(ValueError):
        T.init_params(dims, 0)


def test_params_shape_contract():
    with pytest.raises(ValueError):
        T.MLPParams([(np.zeros((3, 2)), np.zeros(3)), (np.zeros((2, 4)), np.zeros(2))])


def test_single_linear_layer_is_a_matrix_product():
    p = T.init_params([3, 2], seed=1)
    p.layers[0][1][:] = [0.5, -0.25]
    X = np.arange(12.0).reshape(4, 3)
    logits, _ = T.forward(p, X)
    np.testing.assert_allclose(logits, X @ p.layers[0][0].T + [0.5, -0.25])


def test_relu_between_layers_only():
    W1 = np.array([[1.0], [-1.0]])
    W2 = np.array([[1.0, 1.0]])
    p = T.MLPParams([(W1, np.zeros(2)), (W2, np.array([-5.0]))])
    out, _ = T.forward(p, np.array([[2.0], [-3.0]]))
    # hidden relu(+-x) sums to |x|; output stays linear so it can go negative
    np.testing.assert_allclose(out[:, 0], [-3.0, -2.0])


def test_forward_rejects_wrong_input_dim():
    with pytest.raises(ValueError):
        T.forward(T.init_params([3, 2], 0), np.zeros((2, 4)))


def _fd_param_grads(params, X, y, stats, cfg, step=1e-6):
    out = []
    for W, b in params.layers:
        pair = []
        for arr in (W, b):
            def fn(v, arr=arr):
                saved = arr.copy()
                arr[...] = v
                loss, _ = T.loss_and_param_grads(params, X, y, stats, cfg)
                arr[...] = saved
                return loss
            pair.append(losses.central_difference(fn, arr.copy(), step))
        out.append(pair)
    return out


def test_backward_two_layer_five_samples():
    rng = np.random.default_rng(0)
    stats = ClassStats([10, 5, 2])
    params = T.init_params([3, 6, 3], seed=2)
    X = rng.normal(size=(5, 3))
    y = np.array([0, 1, 2, 0, 1])
    cfg = LossConfig()
    _, grads = T.loss_and_param_grads(params, X, y, stats, cfg)
    for (gW, gb), (fW, fb) in zip(grads, _fd_param_grads(params, X, y, stats, cfg)):
        assert losses.relative_error(gW, fW) < 1e-4
        assert losses.relative_error(gb, fb) < 1e-4


@pytest.mark.parametrize("cfg", list(losses.config_grid()), ids=lambda c: f"{c.base.value}-{c.ccar}")
def test_end_to_end_gradient_every_config(cfg):
    rng = np.random.default_rng(5)
    stats = ClassStats([40, 25, 15, 8, 2])
    params = T.init_params([4, 8, 5], seed=9)
    X = rng.normal(size=(3, 4))
    y = np.array([1, 3, 4])
    _, grads = T.loss_and_param_grads(params, X, y, stats, cfg)
    for (gW, gb), (fW, fb) in zip(grads, _fd_param_grads(params, X, y, stats, cfg)):
        assert losses.relative_error(gW, fW) < 1e-4
        assert losses.relative_error(gb, fb) < 1e-4


def test_sgd_without_momentum_or_decay_is_gradient_descent():
    p = T.init_params([3, 2], seed=0)
    before = p.copy()
    grads = [(np.ones((2, 3)), np.full(2, 2.0))]
    cfg = T.SGDConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0)
    T.sgd_step(p, grads, None, cfg)
    np.testing.assert_allclose(p.layers[0][0], before.layers[0][0] - 0.1)
    np.testing.assert_allclose(p.layers[0][1], before.layers[0][1] - 0.2)


def test_sgd_momentum_and_decay():
    p = T.MLPParams([(np.array([[1.0]]), np.array([0.0]))])
    cfg = T.SGDConfig(learning_rate=0.5, momentum=0.9, weight_decay=0.1)
    g = [(np.array([[2.0]]), np.array([0.0]))]
    _, v = T.sgd_step(p, g, None, cfg)
    # v1 = -0.5 (2 + 0.1) = -1.05, w1 = -0.05
    assert p.layers[0][0][0, 0] == pytest.approx(-0.05)
    T.sgd_step(p, g, v, cfg)
    # v2 = 0.9 v1 - 0.5 (g + 0.1 w1)
    assert v[0][0, 0] == pytest.approx(0.9 * -1.05 - 0.5 * (2 + 0.1 * -0.05))
    assert p.layers[0][0][0, 0] == pytest.approx(-0.05 + v[0][0, 0])


def test_sgd_shape_mismatch():
    p = T.init_params([3, 2], seed=0)
    with pytest.raises(ValueError):
        T.sgd_step(p, [(np.ones((3, 2)), np.ones(2))], None, T.SGDConfig())


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(momentum=1.0), dict(weight_decay=-1),
                                dict(epochs=0), dict(batch_size=0), dict(seed=-1), dict(seed=2**64)])
def test_sgd_config_validation(kw):
    with pytest.raises(ValueError):
        T.SGDConfig(**kw)


def _blobs(seed, IF=1.0):
    spec = data.DatasetSpec(num_classes=4, max_count=80, imbalance_factor=IF, input_dim=3,
                            class_separation=5.0, noise_sigma=0.5, seed=seed, test_per_class=25)
    return data.generate(spec)


@pytest.mark.parametrize("seed", range(4))
def test_training_loss_decreases(seed):
    train, _, stats = _blobs(seed)
    params = T.init_params([3, 16, 4], seed)
    _, trace = T.train(params, train.features, train.labels, stats, LossConfig(), T.SGDConfig(epochs=8, batch_size=16, seed=seed))
    assert all(np.isfinite(trace))
    assert trace[-1] < trace[0]


def test_training_is_deterministic():
    train, _, stats = _blobs(1, IF=10)
    runs = []
    for _ in range(2):
        params = T.init_params([3, 16, 4], 3)
        p, trace = T.train(params, train.features, train.labels, stats, LossConfig(base="bs", ccar=True),
                           T.SGDConfig(epochs=3, batch_size=16, seed=11))
        runs.append((p.tobytes(), trace))
    assert runs[0] == runs[1]


def test_divergence_reports_position():
    train, _, stats = _blobs(0)
    params = T.init_params([3, 16, 4], 0)
    with pytest.raises(T.TrainingDiverged) as info:
        with np.errstate(all="ignore"):
            T.train(params, train.features * 1e300, train.labels, stats, LossConfig(),
                    T.SGDConfig(learning_rate=1.0, epochs=2, seed=0))
    err = info.value
    assert err.epoch == 0
    assert f"epoch {err.epoch}, batch {err.batch}" in str(err)


def test_train_rejects_empty_and_mismatched():
    _, _, stats = _blobs(0)
    params = T.init_params([3, 4], 0)
    with pytest.raises(ValueError):
        T.train(params, np.zeros((0, 3)), np.zeros(0, int), stats, LossConfig(), T.SGDConfig())
    with pytest.raises(ValueError):
        T.train(T.init_params([3, 5], 0), np.zeros((2, 3)), [0, 1], stats, LossConfig(), T.SGDConfig())


class TestEvaluate:
    groups = ["many", "many", "medium", "few", "few"]

    def test_constant_classifier(self):
        y = np.repeat(np.arange(5), 20)
        acc = T.group_accuracy(np.zeros_like(y), y, self.groups)
        assert acc.overall == pytest.approx(1 / 5)
        assert acc.many == pytest.approx(0.5)
        assert acc.medium == 0.0 and acc.few == 0.0

    def test_perfect_classifier(self):
        y = np.repeat(np.arange(5), 20)
        acc = T.group_accuracy(y, y, self.groups)
        assert (acc.overall, acc.many, acc.medium, acc.few) == (1.0, 1.0, 1.0, 1.0)

    def test_empty_group_is_absent(self):
        y = np.repeat(np.arange(3), 4)
        acc = T.group_accuracy(y, y, ["many", "many", "few"])
        assert acc.medium is None
        assert acc.few == 1.0

    def test_macro_not_micro(self):
        y = np.array([0] * 90 + [1] * 10)
        pred = np.zeros_like(y)
        assert T.group_accuracy(pred, y, ["many", "few"]).overall == pytest.approx(0.5)

    def test_random_scores_near_chance(self):
        # Monte-Carlo oracle: argmax of random scores is uniform over K classes
        spec = data.DatasetSpec(num_classes=10, max_count=100, imbalance_factor=10, test_per_class=100)
        means = []
        for seed in range(5):
            _, test, stats = data.generate(dataclasses.replace(spec, seed=seed))
            rng = np.random.default_rng(seed)
            pred = rng.normal(size=(len(test.labels), 10)).argmax(axis=1)
            means.append(T.group_accuracy(pred, test.labels, data.assign_groups(stats)).overall)
        assert abs(np.mean(means) - 0.1) < 0.03

    def test_evaluate_uses_raw_argmax(self):
        p = T.MLPParams([(np.eye(3), np.zeros(3))])
        X = np.eye(3)
        acc = T.evaluate(p, X, np.arange(3), ["many", "medium", "few"])
        assert acc.overall == 1.0

