import math

import numpy as np
import pytest

import radiohybrid.fusionnet as fn
from oracles import check_config
from radiohybrid.errors import (
    BadMagic,
    DegenerateBatch,
    DimMismatch,
    EmptyComponent,
    EmptyDataset,
    ShapeMismatch,
    StaleCache,
)
from radiohybrid.fusionnet import (
    EarlyStopping,
    ModelParams,
    OptimizerState,
    PlateauScheduler,
    TrainConfig,
    TrainHistory,
    _batches,
    _onehot,
    adam_step,
    compound_scaling,
    cross_entropy,
    fuse_features,
    fuse_matrices,
    gelu,
    gelu_grad,
    head_backward,
    head_forward,
    init_params,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    softmax,
    train,
    update_running_stats,
)
from radiohybrid.radiomics import concat_radiomic


def separable(rng, n_per_class=50, dim=10):
    centres = rng.normal(0, 4.0, (4, dim))
    y = np.repeat(np.arange(4), n_per_class)
    x = centres[y] + rng.normal(0, 1.0, (len(y), dim))
    return x, y


class TestScalingAndFusion:
    def test_compound_scaling(self):
        d, w, r, resid = compound_scaling(1.2, 1.1, 1.15, 2)
        assert d == pytest.approx(1.44, abs=1e-12)
        assert w == pytest.approx(1.21, abs=1e-12)
        assert r == pytest.approx(1.3225, abs=1e-12)
        assert resid == pytest.approx(abs(1.2 * 1.1**2 * 1.15**2 - 2), abs=1e-12)
        assert resid == pytest.approx(0.0797, abs=1e-4)

    def test_fuse_order(self):
        rad = concat_radiomic([1.0], [2.0], [3.0], [4.0])
        f = fuse_features([9.0, 8.0], rad)
        assert f.vector.tolist() == [9.0, 8.0, 1.0, 2.0, 3.0, 4.0]
        assert (f.deep_dim, f.radiomic_dim) == (2, 4)

    def test_2048_wide_deep_input(self, rng):
        rad = rng.random(26537)
        f = fuse_features(rng.random(2048), rad)
        assert f.vector.size == 2048 + 26537 and f.deep_dim == 2048
        assert np.array_equal(f.vector[2048:], rad)

    def test_fuse_empty(self):
        with pytest.raises(EmptyComponent):
            fuse_features([], [1.0])

    def test_fuse_matrices(self):
        assert fuse_matrices(None, np.ones((2, 3))).shape == (2, 3)
        assert fuse_matrices(np.zeros((2, 1)), np.ones((2, 3)))[:, 0].tolist() == [0, 0]
        with pytest.raises(DimMismatch):
            fuse_matrices(np.zeros((3, 1)), np.ones((2, 3)))


class TestElementwise:
    def test_gelu_value(self):
        expected = 3.0 * 0.5 * (1.0 + math.erf(3.0 / math.sqrt(2.0)))
        assert gelu(3.0) == pytest.approx(expected, abs=1e-12)
        assert gelu(3.0) == pytest.approx(2.99595, abs=1e-5)

    def test_gelu_odd_identity(self):
        x = np.linspace(-8, 8, 1001)
        assert np.max(np.abs(gelu(x) - gelu(-x) - x)) < 1e-12

    def test_gelu_grad_matches_difference(self):
        x = np.linspace(-5, 5, 101)
        h = 1e-6
        num = (gelu(x + h) - gelu(x - h)) / (2 * h)
        assert np.max(np.abs(gelu_grad(x) - num)) < 1e-8

    def test_softmax_of_logs(self):
        p = softmax(np.log([1.0, 2.0, 3.0, 4.0]))
        assert np.allclose(p, [0.1, 0.2, 0.3, 0.4], atol=1e-15)

    def test_softmax_large_logits_stable(self):
        p = softmax(np.array([[1000.0, 1000.0, -1000.0, 0.0]]))
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-15

    def test_cross_entropy_cases(self):
        assert cross_entropy(np.full((1, 4), 0.25), [[0, 1, 0, 0]]) == pytest.approx(math.log(4), abs=1e-12)
        assert cross_entropy(np.eye(4), np.eye(4)) == 0.0
        # clipped, not infinite
        assert cross_entropy([[0.0, 1.0, 0.0, 0.0]], [[1, 0, 0, 0]]) == pytest.approx(-math.log(1e-12))

    def test_cross_entropy_shape(self):
        with pytest.raises(ShapeMismatch):
            cross_entropy(np.ones((2, 4)) / 4, np.ones((2, 3)))


class TestHead:
    def test_param_count(self):
        p = init_params((10, 6, 4))
        assert p.n_parameters() == 10 * 6 + 6 + 6 * 4 + 4 + 2 * 6

    def test_bn_train_statistics(self, rng):
        p = init_params((8, 16, 4), seed=1)
        _, cache = head_forward(p, rng.normal(size=(64, 8)), "train", 0)
        xhat = cache["layers"][0]["xhat"]
        assert np.max(np.abs(xhat.mean(axis=0))) < 1e-6
        assert np.max(np.abs(xhat.var(axis=0) - 1.0)) < 1e-4

    def test_forward_is_pure(self, rng):
        p = init_params((5, 4, 4), seed=2)
        before = [a.copy() for a in p.bn_mean + p.bn_var]
        head_forward(p, rng.normal(size=(6, 5)), "train", 0)
        assert all(np.array_equal(a, b) for a, b in zip(before, p.bn_mean + p.bn_var))

    def test_running_stats_momentum(self, rng):
        p = init_params((5, 3, 4), seed=2)
        x = rng.normal(size=(6, 5))
        _, cache = head_forward(p, x, "train", 0)
        update_running_stats(p, cache, 0.1)
        z = x @ p.weights[0] + p.biases[0]
        assert np.allclose(p.bn_mean[0], 0.1 * z.mean(axis=0), atol=1e-14)
        assert np.allclose(p.bn_var[0], 0.9 + 0.1 * z.var(axis=0, ddof=1), atol=1e-14)

    def test_dropout_expectation(self):
        p = init_params((3, 4, 4), seed=5, dropout=0.5)
        x = np.array([[0.5, -1.0, 2.0], [1.0, 0.0, -0.5]])
        _, c0 = head_forward(init_params((3, 4, 4), seed=5, dropout=0.0), x, "train", 0)
        ref = c0["h_last"]
        acc = np.zeros_like(ref)
        trials = 10_000
        for s in range(trials):
            _, c = head_forward(p, x, "train", s)
            acc += c["h_last"]
        mean = acc / trials
        assert np.max(np.abs(mean - ref)) <= 0.02 * np.max(np.abs(ref))

    def test_eval_has_no_dropout(self, rng):
        p = init_params((4, 5, 4), seed=3, dropout=0.5)
        x = rng.normal(size=(3, 4))
        assert np.array_equal(head_forward(p, x, "eval", 1)[0], head_forward(p, x, "eval", 2)[0])

    def test_duplicated_batch_same_gradient(self, rng):
        p = init_params((4, 5, 4), seed=3, dropout=0.0)
        x = rng.normal(size=(5, 4))
        t = _onehot(rng.integers(0, 4, 5), 4)
        g1 = head_backward(head_forward(p, x, "train")[1], t)
        g2 = head_backward(head_forward(p, np.vstack([x, x]), "train")[1], np.vstack([t, t]))
        for k in g1:
            assert np.allclose(g1[k], g2[k], atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_check(self, seed):
        assert check_config(np.random.default_rng(seed)) < 1e-4

    def test_single_row_train_batch(self):
        with pytest.raises(DegenerateBatch):
            head_forward(init_params((3, 4, 4)), np.zeros((1, 3)), "train")

    def test_width_mismatch(self):
        with pytest.raises(ShapeMismatch):
            head_forward(init_params((3, 4, 4)), np.zeros((2, 5)))

    def test_stale_cache(self, rng):
        p = init_params((3, 4, 4))
        x = rng.normal(size=(4, 3))
        t = _onehot(np.arange(4), 4)
        with pytest.raises(StaleCache):
            head_backward(head_forward(p, x, "eval")[1], t)
        _, cache = head_forward(p, x, "train")
        adam_step(p, head_backward(cache, t), OptimizerState())
        with pytest.raises(StaleCache):
            head_backward(cache, t)


def _single_param(value, grad):
    p = ModelParams((1, 1), [np.array([[value]])], [np.zeros(1)], [], [], [], [], 0.0, ("a",))
    return p, {"W0": np.array([[grad]]), "b0": np.zeros(1)}


class TestAdam:
    def test_first_step(self):
        p, g = _single_param(1.0, 0.5)
        adam_step(p, g, OptimizerState(lr=1e-3))
        # m_hat = 0.5, v_hat = 0.25
        assert p.weights[0][0, 0] == pytest.approx(1.0 - 1e-3 * 0.5 / (0.5 + 1e-8), abs=1e-15)
        assert p.version == 1

    def test_zero_gradient_no_move(self):
        p, g = _single_param(2.0, 0.0)
        adam_step(p, g, OptimizerState())
        assert p.weights[0][0, 0] == 2.0

    def test_step_size_bounded_by_lr(self, rng):
        p, _ = _single_param(0.0, 0.0)
        st = OptimizerState(lr=1e-2)
        for _ in range(50):
            before = p.weights[0][0, 0]
            adam_step(p, {"W0": np.array([[rng.normal() * 10]]), "b0": np.zeros(1)}, st)
            assert abs(p.weights[0][0, 0] - before) <= 1e-2 * 3.5

    def test_decoupled_weight_decay(self):
        p, g = _single_param(1.0, 0.0)
        adam_step(p, g, OptimizerState(lr=0.1, weight_decay=0.5))
        assert p.weights[0][0, 0] == pytest.approx(0.95, abs=1e-15)

    def test_missing_key(self):
        p, g = _single_param(1.0, 0.0)
        del g["b0"]
        with pytest.raises(ShapeMismatch):
            adam_step(p, g, OptimizerState())


class TestSchedules:
    def test_plateau_reduces_after_patience(self):
        s = PlateauScheduler(0.1, 5, 1e-6)
        lr = 1e-3
        lrs = []
        for loss in [1.0] + [1.0] * 5:
            lr = s.step(loss, lr)
            lrs.append(lr)
        assert lrs[:5] == [1e-3] * 5
        assert lrs[5] == pytest.approx(1e-4)

    def test_plateau_floor(self):
        s = PlateauScheduler(0.1, 1, 1e-6)
        lr = 1e-5
        s.step(1.0, lr)
        for _ in range(4):
            lr = s.step(2.0, lr)
        assert lr == 1e-6

    def test_plateau_resets_on_improvement(self):
        s = PlateauScheduler(0.1, 3)
        lr = 1.0
        for loss in [5, 6, 6, 4, 6, 6]:
            lr = s.step(loss, lr)
        assert lr == 1.0

    def test_early_stopping(self):
        es = EarlyStopping(10)
        stops = [es.step(float(e), e) for e in range(1, 20)]
        assert stops.index(True) == 10  # epoch 11
        assert es.best_epoch == 1


class TestTraining:
    def test_batches_fold_singleton(self):
        sizes = [len(b) for b in _batches(np.arange(65), 32)]
        assert sizes == [32, 33]
        assert [len(b) for b in _batches(np.arange(64), 32)] == [32, 32]

    def test_separable_reaches_95(self, rng):
        x, y = separable(rng)
        cfg = TrainConfig(batch_size=16, max_epochs=40, hidden=(32,), dropout=0.2, seed=1)
        params, hist = train(x, y, x, y, cfg)
        assert np.mean(np.argmax(predict_proba(params, x), 1) == y) >= 0.95
        assert len(hist) >= 1 and hist.best_epoch >= 1

    def test_deterministic(self, rng):
        x, y = separable(rng, 20, 6)
        cfg = TrainConfig(batch_size=8, max_epochs=5, hidden=(8,), seed=4)
        a = train(x, y, x, y, cfg)
        b = train(x, y, x, y, cfg)
        assert a[1].to_csv() == b[1].to_csv()
        assert all(np.array_equal(u, v) for u, v in zip(a[0].weights, b[0].weights))

    def test_history_csv_round_trip(self, tmp_path, rng):
        x, y = separable(rng, 10, 4)
        _, hist = train(x, y, x, y, TrainConfig(max_epochs=3, hidden=(4,)))
        hist.write_csv(tmp_path / "h.csv")
        back = TrainHistory.read_csv(tmp_path / "h.csv")
        assert back.rows == hist.rows

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            train(np.zeros((0, 3)), [], np.zeros((2, 3)), [0, 1])

    def test_width_mismatch(self):
        with pytest.raises(DimMismatch):
            train(np.zeros((4, 3)), [0, 1, 2, 3], np.zeros((2, 5)), [0, 1])

    def test_worsening_validation_protocol(self, monkeypatch, rng):
        calls = {"n": 0}

        def fake_eval(params, x, y):
            calls["n"] += 1
            # even calls are validation; loss grows every epoch
            return (float(calls["n"]), 0.5) if calls["n"] % 2 == 0 else (0.1, 1.0)

        monkeypatch.setattr(fn, "_evaluate_split", fake_eval)
        x, y = separable(rng, 5, 3)
        _, hist = train(x, y, x, y, TrainConfig(max_epochs=50, hidden=(4,)))
        assert len(hist) == 11 and hist.stopped_early and hist.best_epoch == 1
        lrs = hist.column("lr")
        assert lrs[:6] == [1e-3] * 6
        assert lrs[6:] == pytest.approx([1e-4] * 5)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        p = init_params((6, 5, 3, 4), seed=9, dropout=0.25)
        p.bn_mean[0] += 0.5
        save_checkpoint(p, tmp_path / "m.rhn")
        q = load_checkpoint(tmp_path / "m.rhn")
        assert q.sizes == p.sizes and q.classes == p.classes and q.dropout == 0.25
        x = rng.normal(size=(4, 6)).astype(np.float32).astype(np.float64)
        for a, b in zip(p.trainable().values(), q.trainable().values()):
            assert np.array_equal(a.astype(np.float32), b)
        assert np.allclose(predict_proba(p, x), predict_proba(q, x), atol=1e-5)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.rhn").write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(BadMagic):
            load_checkpoint(tmp_path / "x.rhn")
