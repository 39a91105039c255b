"""Engine-level oracles: hand matmuls, finite differences, closed forms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siglearn import autodiff as ad


def make_leaf(value):
    tape = ad.Tape()
    return tape, tape.leaf(np.asarray(value, dtype=np.float64))


class TestDense:
    def test_identity(self):
        _, x = make_leaf([1.0, 0.0])
        out = ad.dense(x, np.eye(2), np.zeros(2), activation="relu")
        np.testing.assert_array_equal(out.value, [1.0, 0.0])

    def test_relu_clips_negative(self):
        _, x = make_leaf([1.0, -1.0])
        out = ad.dense(x, np.eye(2), np.zeros(2), activation="relu")
        np.testing.assert_array_equal(out.value, [1.0, 0.0])

    def test_random_case_matches_triple_loop(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=3)
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=4)
        _, xn = make_leaf(x)
        out = ad.dense(xn, w, b).value

        expected = np.zeros(4)
        for j in range(4):
            acc = b[j]
            for i in range(3):
                acc += x[i] * w[i, j]
            expected[j] = acc
        np.testing.assert_allclose(out, expected, atol=1e-12, rtol=0)

    def test_shape_mismatch_raises(self):
        _, x = make_leaf([1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            ad.dense(x, np.eye(2), np.zeros(2))

    def test_linear_in_input_without_activation(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 2))
        x, y = rng.normal(size=3), rng.normal(size=3)
        a = 2.5

        def f(v):
            _, n = make_leaf(v)
            return ad.dense(n, w, None).value

        np.testing.assert_allclose(f(a * x + y), a * f(x) + f(y), atol=1e-12)


class TestSoftmaxTemp:
    def test_uniform_logits(self):
        out = ad.ArrayOps.softmax_temp(np.array([1.0, 1.0, 1.0]), 1.0)
        np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-15)

    def test_closed_form(self):
        out = ad.ArrayOps.softmax_temp(np.array([0.0, math.log(2.0)]), 1.0)
        np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-15)

    def test_shift_invariance(self):
        out = ad.ArrayOps.softmax_temp(np.array([5.0, 5.0 + math.log(3.0)]), 1.0)
        np.testing.assert_allclose(out, [1 / 4, 3 / 4], atol=1e-14)

    def test_masked_slots_get_zero(self):
        valid = np.array([True, False, True])
        out = ad.ArrayOps.softmax_temp(np.array([1.0, 50.0, 1.0]), 1.0, valid)
        np.testing.assert_allclose(out, [0.5, 0.0, 0.5], atol=1e-15)

    def test_all_masked_raises(self):
        with pytest.raises(ValueError):
            ad.ArrayOps.softmax_temp(np.zeros(3), 1.0, np.zeros(3, dtype=bool))

    def test_nonpositive_temperature_raises(self):
        with pytest.raises(ValueError):
            ad.ArrayOps.softmax_temp(np.zeros(3), 0.0)

    def test_huge_logits_do_not_overflow(self):
        out = ad.ArrayOps.softmax_temp(np.array([1e4, 1e4 + 1.0]), 1.0)
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
           st.floats(0.1, 5.0), st.floats(-10, 10))
    def test_properties(self, logits, tau, shift):
        e = np.asarray(logits)
        out = ad.ArrayOps.softmax_temp(e, tau)
        assert abs(out.sum() - 1.0) < 1e-9
        assert ((out >= 0) & (out <= 1)).all()
        shifted = ad.ArrayOps.softmax_temp(e + shift, tau)
        np.testing.assert_allclose(out, shifted, atol=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        e0 = rng.normal(size=(2, 5))
        valid = np.array([True, True, True, True, False])
        target = rng.normal(size=(2, 5))

        def f(params):
            alpha = ad.ArrayOps.softmax_temp(params["e"], 0.7, valid)
            return float(((alpha - target) ** 2).sum())

        params = {"e": e0.copy()}
        tape = ad.Tape()
        node = tape.leaf(params["e"])
        alpha = ad.softmax_temp(node, 0.7, valid)
        loss = ad.reduce_sum(ad.square(ad.sub(alpha, target)))
        ad.backward(loss)
        numeric = ad.finite_difference_gradients(f, params)
        assert ad.max_relative_error({"e": node.grad}, numeric) < 1e-6


class TestBackward:
    def test_sum_of_entries_gives_all_ones(self):
        tape = ad.Tape()
        w = tape.leaf(np.arange(6, dtype=float).reshape(2, 3))
        loss = ad.reduce_sum(w)
        ad.backward(loss)
        np.testing.assert_array_equal(w.grad, np.ones((2, 3)))

    def test_random_net_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        params = {
            "W1": rng.normal(size=(4, 5)) * 0.5,
            "b1": rng.normal(size=5) * 0.1,
            "W2": rng.normal(size=(5, 2)) * 0.5,
            "b2": rng.normal(size=2) * 0.1,
        }
        x = rng.normal(size=(3, 4))
        y = rng.normal(size=(3, 2))

        def value(p):
            h = np.maximum(x @ p["W1"] + p["b1"], 0.0)
            out = h @ p["W2"] + p["b2"]
            return float(((out - y) ** 2).mean())

        tape = ad.Tape()
        nodes = {k: tape.leaf(v, name=k) for k, v in params.items()}
        h = ad.dense(ad.dense(tape.constant(x), nodes["W1"], nodes["b1"],
                              activation="relu"),
                     nodes["W2"], nodes["b2"])
        loss = ad.reduce_mean(ad.square(ad.sub(h, y)))
        ad.backward(loss)
        analytic = {k: n.grad for k, n in nodes.items()}
        numeric = ad.finite_difference_gradients(value, params)
        assert ad.max_relative_error(analytic, numeric) < 1e-4

    def test_two_losses_accumulate_additively(self):
        tape = ad.Tape()
        w = tape.leaf(np.array([1.0, 2.0]))
        first = ad.reduce_sum(ad.mul(w, np.array([3.0, 3.0])))
        second = ad.reduce_sum(ad.square(w))
        ad.backward(first)
        only_first = w.grad.copy()
        ad.backward(second)
        np.testing.assert_allclose(w.grad, only_first + 2.0 * w.value)

    def test_non_scalar_loss_raises(self):
        tape = ad.Tape()
        w = tape.leaf(np.ones(3))
        with pytest.raises(ValueError):
            ad.backward(ad.mul(w, 2.0))

    def test_take_neighbors_scatter(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 3))
        idx = np.array([[0, 1], [1, 1], [2, 0], [3, 3]])
        tape = ad.Tape()
        xn = tape.leaf(x)
        gathered = ad.take_neighbors(xn, idx)
        weights = rng.normal(size=gathered.value.shape)
        ad.backward(ad.reduce_sum(ad.mul(gathered, weights)))

        manual = np.zeros_like(x)
        for i in range(4):
            for s in range(2):
                manual[idx[i, s]] += weights[i, s]
        np.testing.assert_allclose(xn.grad, manual, atol=1e-12)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = ad.AdamState(lr=0.1)
        ad.adam_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_constant_gradient_update_approaches_lr(self):
        # with a constant gradient the bias-corrected moments converge to
        # (g, g^2), so each step's magnitude approaches lr exactly
        params = {"w": np.array([0.0])}
        state = ad.AdamState(lr=1e-2)
        g = {"w": np.array([0.37])}
        previous = params["w"].copy()
        for _ in range(3000):
            previous = params["w"].copy()
            ad.adam_step(params, g, state)
        assert abs(abs(params["w"][0] - previous[0]) - 1e-2) < 1e-5

    def test_nan_gradient_errors_without_mutation(self):
        params = {"w": np.array([1.0, 2.0])}
        state = ad.AdamState()
        with pytest.raises(ValueError):
            ad.adam_step(params, {"w": np.array([np.nan, 0.0])}, state)
        np.testing.assert_array_equal(params["w"], [1.0, 2.0])
        assert state.step == 0

    def test_shape_mismatch_errors(self):
        params = {"w": np.zeros(2)}
        with pytest.raises(ValueError):
            ad.adam_step(params, {"w": np.zeros(3)}, ad.AdamState())


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        params = {
            "a": rng.normal(size=(3, 7)),
            "b": rng.normal(size=5) * 1e-17,
            "c": np.array([1 / 3, math.pi, 2 ** -1074]),
        }
        path = tmp_path / "ck.json"
        ad.save_params(params, path)
        loaded = ad.load_params(path)
        assert set(loaded) == set(params)
        for name in params:
            assert loaded[name].shape == params[name].shape
            assert np.array_equal(loaded[name], params[name])
            assert loaded[name].dtype == np.float64
