"""Linear-probe tests: analytic forms, oracles, training behavior."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semprobe.errors import InputError, ShapeError
from semprobe.probe import (
    AdamWState,
    LinearProbe,
    TrainConfig,
    adamw_step,
    cross_entropy,
    forward,
    gradient,
    softmax,
    topk_accuracy,
    train,
)
from semprobe.synthetic import BlobSpec, gen_blobs


def loss_oracle_f64(weights, bias, features, labels):
    """Independent float64 cross-entropy used by the finite-difference check."""
    logits = features.astype(np.float64) @ weights.T.astype(np.float64) + bias.astype(np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    return float(np.mean(-np.log(p[np.arange(len(labels)), labels])))


class TestForward:
    def test_zero_model_gives_zero_logits(self):
        w, b = np.zeros((3, 4), np.float32), np.zeros(3, np.float32)
        x = np.random.default_rng(0).standard_normal((5, 4)).astype(np.float32)
        assert np.all(forward(w, b, x) == 0)

    def test_identity_model_passes_basis_through(self):
        w = np.eye(4, dtype=np.float32)
        b = np.zeros(4, np.float32)
        x = np.eye(4, dtype=np.float32)
        assert np.array_equal(forward(w, b, x), x)

    def test_matches_hand_dot_products(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal((2, 3)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        x = rng.standard_normal((4, 3)).astype(np.float32)
        logits = forward(w, b, x)
        for i in range(4):
            for c in range(2):
                expected = sum(float(w[c, j]) * float(x[i, j]) for j in range(3)) + float(b[c])
                assert logits[i, c] == pytest.approx(expected, rel=1e-5)

    def test_dimension_mismatch_names_both(self):
        w, b = np.zeros((3, 4), np.float32), np.zeros(3, np.float32)
        with pytest.raises(ShapeError, match="5.*4"):
            forward(w, b, np.zeros((2, 5), np.float32))


class TestSoftmax:
    def test_uniform_on_zeros(self):
        assert np.allclose(softmax(np.zeros((1, 4), np.float32)), 0.25)

    def test_closed_form_log_inputs(self):
        p = softmax(np.log(np.array([[1.0, 2.0, 3.0]], dtype=np.float32)))
        assert np.allclose(p, [[1 / 6, 2 / 6, 3 / 6]], atol=1e-7)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
           st.floats(-100, 100))
    def test_shift_invariance(self, vals, c):
        v = np.array([vals], dtype=np.float32)
        assert np.allclose(softmax(v + np.float32(c)), softmax(v), atol=1e-6)

    def test_sums_to_one_and_order_preserved(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((10, 7)).astype(np.float32) * 20
        p = softmax(logits)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert np.array_equal(np.argsort(p, axis=1), np.argsort(logits, axis=1))

    def test_nan_input_rejected(self):
        with pytest.raises(InputError):
            softmax(np.array([[np.nan, 0.0]], dtype=np.float32))


class TestCrossEntropy:
    def test_uniform_thousand_classes(self):
        probs = np.full((4, 1000), 1 / 1000, dtype=np.float32)
        labels = np.array([0, 1, 2, 3])
        assert cross_entropy(probs, labels) == pytest.approx(6.9078, abs=1e-4)

    def test_one_hot_correct_is_zero(self):
        probs = np.eye(3, dtype=np.float32)
        assert cross_entropy(probs, np.arange(3)) == 0.0

    def test_hand_case(self):
        probs = np.array([[0.7, 0.2, 0.1]], dtype=np.float32)
        assert cross_entropy(probs, np.array([1])) == pytest.approx(1.6094, abs=1e-4)

    def test_log_floor_prevents_inf(self):
        probs = np.array([[1.0, 0.0]], dtype=np.float32)
        loss = cross_entropy(probs, np.array([1]))
        assert math.isfinite(loss)
        assert loss == pytest.approx(-math.log(1e-12), rel=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(InputError, match="label"):
            cross_entropy(np.full((1, 3), 1 / 3, np.float32), np.array([3]))

    @pytest.mark.parametrize("c", [10, 100, 1000])
    def test_zero_model_loss_is_ln_c_exactly(self, c):
        rng = np.random.default_rng(c)
        x = rng.standard_normal((128, 16)).astype(np.float32)
        w, b = np.zeros((c, 16), np.float32), np.zeros(c, np.float32)
        y = rng.integers(0, c, 128)
        loss = cross_entropy(softmax(forward(w, b, x)), y)
        assert loss == float(np.float32(np.log(c)))


class TestGradient:
    def test_confident_model_has_tiny_gradient(self):
        w = np.array([[40.0, 0.0], [0.0, 40.0]], dtype=np.float32)
        b = np.zeros(2, np.float32)
        x = np.eye(2, dtype=np.float32)
        dw, db = gradient(w, b, x, np.array([0, 1]))
        assert np.linalg.norm(dw) < 1e-6 and np.linalg.norm(db) < 1e-6

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_central_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        c, d, batch = 3, 5, 4
        w = rng.standard_normal((c, d)).astype(np.float32)
        b = rng.standard_normal(c).astype(np.float32)
        x = rng.standard_normal((batch, d)).astype(np.float32)
        y = rng.integers(0, c, batch)
        dw, db = gradient(w, b, x, y)
        h = 1e-3
        w64, b64 = w.astype(np.float64), b.astype(np.float64)
        fd_w = np.zeros_like(w64)
        for i in range(c):
            for j in range(d):
                up, down = w64.copy(), w64.copy()
                up[i, j] += h
                down[i, j] -= h
                fd_w[i, j] = (loss_oracle_f64(up, b64, x, y) - loss_oracle_f64(down, b64, x, y)) / (2 * h)
        fd_b = np.zeros_like(b64)
        for i in range(c):
            up, down = b64.copy(), b64.copy()
            up[i] += h
            down[i] -= h
            fd_b[i] = (loss_oracle_f64(w64, up, x, y) - loss_oracle_f64(w64, down, x, y)) / (2 * h)
        # denominator floored so near-zero components compare absolutely
        rel_w = np.abs(dw - fd_w) / np.maximum(np.maximum(np.abs(dw), np.abs(fd_w)), 1e-2)
        rel_b = np.abs(db - fd_b) / np.maximum(np.maximum(np.abs(db), np.abs(fd_b)), 1e-2)
        assert rel_w.max() < 1e-4 and rel_b.max() < 1e-4

    def test_batch_gradient_is_mean_of_per_example(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((3, 4)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        x = rng.standard_normal((6, 4)).astype(np.float32)
        y = rng.integers(0, 3, 6)
        dw, db = gradient(w, b, x, y)
        per = [gradient(w, b, x[i : i + 1], y[i : i + 1]) for i in range(6)]
        assert np.allclose(dw, np.mean([g[0] for g in per], axis=0), atol=1e-6)
        assert np.allclose(db, np.mean([g[1] for g in per], axis=0), atol=1e-6)


def scalar_adamw_reference(thetas, grad_fn, config, steps):
    """Pure-python AdamW on a list of scalars; independent of the module."""
    m = [0.0] * len(thetas)
    v = [0.0] * len(thetas)
    thetas = list(thetas)
    for t in range(1, steps + 1):
        grads = grad_fn(thetas)
        for i, g in enumerate(grads):
            m[i] = config.beta1 * m[i] + (1 - config.beta1) * g
            v[i] = config.beta2 * v[i] + (1 - config.beta2) * g * g
            m_hat = m[i] / (1 - config.beta1**t)
            v_hat = v[i] / (1 - config.beta2**t)
            thetas[i] -= config.learning_rate * (
                m_hat / (math.sqrt(v_hat) + config.eps) + config.weight_decay * thetas[i]
            )
    return thetas


class TestAdamW:
    def test_zero_gradient_keeps_parameters(self):
        config = TrainConfig(weight_decay=0.0)
        w = np.ones((2, 2), np.float32)
        state = AdamWState.for_params([w])
        (w2,), _ = adamw_step([w], state, [np.zeros_like(w)], config)
        assert np.array_equal(w2, w)

    def test_first_step_is_signed_learning_rate(self):
        config = TrainConfig(learning_rate=0.01)
        w = np.zeros(4, np.float64)
        g = np.array([0.5, -2.0, 3.0, -0.001])
        state = AdamWState.for_params([w])
        (w2,), state = adamw_step([w], state, [g], config)
        assert state.t == 1
        assert np.allclose(w2, -config.learning_rate * np.sign(g), rtol=1e-5)

    def test_ten_step_trajectory_matches_scalar_reference(self):
        config = TrainConfig(learning_rate=0.05, weight_decay=0.01)
        target = [1.5, -2.0]
        curvature = [1.0, 3.0]

        def grad_list(ths):
            return [2 * a * (th - c) for a, (th, c) in zip(curvature, zip(ths, target))]

        expected = scalar_adamw_reference([0.0, 0.0], grad_list, config, steps=10)

        theta = np.zeros(2, np.float64)
        state = AdamWState.for_params([theta])
        for _ in range(10):
            g = np.array(grad_list(theta.tolist()))
            (theta,), state = adamw_step([theta], state, [g], config)
        assert np.allclose(theta, expected, atol=1e-6)


class TestTopK:
    def test_k_equals_c_is_one(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((5, 3)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        x = rng.standard_normal((20, 3)).astype(np.float32)
        y = rng.integers(0, 5, 20)
        assert topk_accuracy(w, b, x, y, 5) == 1.0

    def test_perfect_one_hot_model(self):
        w = (np.eye(3) * 10).astype(np.float32)
        b = np.zeros(3, np.float32)
        x = np.eye(3, dtype=np.float32)
        assert topk_accuracy(w, b, x, np.arange(3), 1) == 1.0

    def test_ties_prefer_lower_class_index(self):
        w, b = np.zeros((3, 2), np.float32), np.zeros(3, np.float32)
        x = np.ones((2, 2), np.float32)
        # all logits equal: rank order is class 0, 1, 2
        assert topk_accuracy(w, b, x, np.array([0, 0]), 1) == 1.0
        assert topk_accuracy(w, b, x, np.array([2, 2]), 1) == 0.0
        assert topk_accuracy(w, b, x, np.array([1, 2]), 2) == 0.5

    def test_k_out_of_range(self):
        w, b = np.zeros((3, 2), np.float32), np.zeros(3, np.float32)
        with pytest.raises(InputError):
            topk_accuracy(w, b, np.zeros((1, 2), np.float32), np.array([0]), 4)
        with pytest.raises(InputError):
            topk_accuracy(w, b, np.zeros((1, 2), np.float32), np.array([0]), 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_top1_never_exceeds_top5(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((6, 4)).astype(np.float32)
        b = rng.standard_normal(6).astype(np.float32)
        x = rng.standard_normal((50, 4)).astype(np.float32)
        y = rng.integers(0, 6, 50)
        t1 = topk_accuracy(w, b, x, y, 1)
        t5 = topk_accuracy(w, b, x, y, 5)
        assert 0.0 <= t1 <= t5 <= 1.0


class TestTrain:
    def test_defaults_are_the_standard_recipe(self):
        config = TrainConfig()
        assert (config.epochs, config.batch_size, config.learning_rate) == (10, 128, 1e-3)
        probe = LinearProbe()
        assert (probe.epochs, probe.batch_size, probe.learning_rate) == (10, 128, 1e-3)

    def test_empty_dataset_rejected(self):
        with pytest.raises(InputError):
            train(np.zeros((0, 4), np.float32), np.zeros(0, np.int64), 2, TrainConfig())

    def test_single_class_rejected(self):
        with pytest.raises(InputError):
            train(np.zeros((4, 4), np.float32), np.zeros(4, np.int64), 1, TrainConfig())

    def test_same_seed_is_bit_identical(self):
        fm, lv = gen_blobs(BlobSpec(num_classes=3, dim=8, per_class=30, seed=5))
        runs = [
            train(fm.features, lv.labels, 3, TrainConfig(epochs=3, seed=11))
            for _ in range(2)
        ]
        assert runs[0][0].tobytes() == runs[1][0].tobytes()
        assert runs[0][1].tobytes() == runs[1][1].tobytes()
        assert runs[0][2] == runs[1][2]

    def test_loss_decreases_three_epochs_on_separable_data(self):
        fm, lv = gen_blobs(BlobSpec(num_classes=4, dim=16, per_class=100, separation=6, seed=2))
        _, _, history = train(fm.features, lv.labels, 4, TrainConfig(epochs=3, seed=0))
        losses = [h["train_loss"] for h in history]
        assert losses[0] > losses[1] > losses[2]

    def test_blobs_reach_high_accuracy(self):
        fm, lv = gen_blobs(BlobSpec(num_classes=5, dim=32, per_class=200, separation=6, seed=1))
        n_val = 200
        w, b, history = train(
            fm.features[n_val:], lv.labels[n_val:], 5, TrainConfig(seed=0),
            val_features=fm.features[:n_val], val_labels=lv.labels[:n_val],
        )
        assert history[-1]["val_top1"] >= 0.99


class TestEstimator:
    def test_fit_predict_roundtrip(self):
        fm, lv = gen_blobs(BlobSpec(num_classes=3, dim=8, per_class=50, separation=8, seed=0))
        probe = LinearProbe(epochs=5, seed=0).fit(fm.features, lv.labels)
        preds = probe.predict(fm.features)
        assert preds.shape == (150,)
        assert probe.score(fm.features, lv.labels) > 0.99
        assert probe.predict_proba(fm.features).shape == (150, 3)
        assert probe.coef_.shape == (3, 8)

    def test_get_params_round_trip(self):
        probe = LinearProbe(epochs=3, learning_rate=0.01)
        params = probe.get_params()
        assert params["epochs"] == 3
        clone = LinearProbe(**params)
        assert clone.get_params() == params

    def test_unfitted_predict_raises(self):
        with pytest.raises(InputError, match="not fitted"):
            LinearProbe().predict(np.zeros((1, 2), np.float32))
