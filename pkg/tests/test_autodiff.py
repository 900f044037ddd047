import threading

import numpy as np
import pytest

from translabel import autodiff as ad
from translabel.autodiff import (
    LstmWeights,
    NonFiniteError,
    ShapeError,
    Tensor,
    init_lstm,
    lstm_step,
    no_grad,
)


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64))


class TestForward:
    def test_add_broadcasts(self):
        a = leaf([[1.0, 2.0], [3.0, 4.0]])
        b = leaf([10.0, 20.0])
        out = a + b
        np.testing.assert_allclose(out.data, [[11.0, 22.0], [13.0, 24.0]])

    def test_matmul_shapes(self):
        a = leaf(np.ones((3, 4)))
        b = leaf(np.ones((4, 2)))
        assert (a @ b).data.shape == (3, 2)
        v = leaf(np.ones(4))
        assert (a @ v).data.shape == (3,)
        assert (v @ b).data.shape == (2,)

    def test_matmul_rejects_bad_shapes(self):
        with pytest.raises(ShapeError):
            leaf(np.ones((3, 4))) @ leaf(np.ones((3, 2)))

    def test_softmax_sums_to_one(self):
        x = leaf([1.0, 2.0, 3.0, -50.0])
        s = ad.softmax(x)
        assert abs(s.data.sum() - 1.0) < 1e-12

    def test_softmax_is_shift_invariant(self):
        x = np.array([3.0, -1.0, 0.5])
        a = ad.softmax(leaf(x)).data
        b = ad.softmax(leaf(x + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_sigmoid_extremes_are_finite(self):
        out = leaf([-800.0, 800.0]).sigmoid()
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-12)

    def test_log_of_nonpositive_raises(self):
        with pytest.raises(NonFiniteError):
            leaf([1.0, 0.0]).log()

    def test_concat_and_narrow(self):
        a = leaf([1.0, 2.0])
        b = leaf([3.0])
        cat = ad.concat([a, b])
        np.testing.assert_allclose(cat.data, [1.0, 2.0, 3.0])
        mid = ad.narrow(cat, 1, 2)
        np.testing.assert_allclose(mid.data, [2.0, 3.0])

    def test_stack_rows(self):
        rows = [leaf([1.0, 2.0]), leaf([3.0, 4.0])]
        out = ad.stack(rows)
        assert out.data.shape == (2, 2)

    def test_take_repeated_indices(self):
        x = leaf([10.0, 20.0, 30.0])
        out = ad.take(x, [0, 0, 2])
        np.testing.assert_allclose(out.data, [10.0, 10.0, 30.0])


class TestBackward:
    def test_add_mul_chain(self):
        a = leaf([2.0])
        b = leaf([3.0])
        out = ((a * b) + a).sum()
        out.backward()
        np.testing.assert_allclose(a.grad, [4.0])  # d/da (ab + a) = b + 1
        np.testing.assert_allclose(b.grad, [2.0])

    def test_broadcast_add_accumulates(self):
        a = leaf(np.ones((3, 2)))
        b = leaf([1.0, 1.0])
        (a + b).sum().backward()
        np.testing.assert_allclose(b.grad, [3.0, 3.0])

    def test_take_accumulates_repeats(self):
        x = leaf([1.0, 2.0, 3.0])
        ad.take(x, [1, 1, 1]).sum().backward()
        np.testing.assert_allclose(x.grad, [0.0, 3.0, 0.0])

    def test_shared_node_used_twice(self):
        x = leaf([2.0])
        y = x * x
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])  # d/dx 2x^2

    def test_backward_twice_replays_identically(self):
        x = leaf([1.5, -0.5])
        out = (x.tanh() * x).sum()
        out.backward()
        first = x.grad.copy()
        out.backward()
        np.testing.assert_array_equal(x.grad, first)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_overflow_in_forward_is_named(self):
        x = leaf([1e300])
        with pytest.raises(NonFiniteError) as err:
            x * x  # overflows to inf at node creation
        assert "mul" in str(err.value)


class TestNoGrad:
    def test_no_graph_is_built(self):
        with no_grad():
            a = leaf([1.0]) * leaf([2.0])
        assert a._parents == ()
        assert a._bw is None

    def test_nested_restores(self):
        with no_grad():
            with no_grad():
                pass
            inner = leaf([1.0]) + leaf([1.0])
        outer = leaf([1.0]) + leaf([1.0])
        assert inner._parents == ()
        assert outer._parents != ()

    def test_flag_is_per_thread(self):
        # a worker thread paused inside no_grad must not stop the main
        # thread from recording graphs
        entered = threading.Event()
        release = threading.Event()

        def worker():
            with no_grad():
                entered.set()
                release.wait(timeout=10)

        t = threading.Thread(target=worker)
        t.start()
        try:
            assert entered.wait(timeout=10)
            here = leaf([1.0]) + leaf([1.0])
            assert here._parents != ()
        finally:
            release.set()
            t.join()

    def test_concurrent_workers_leave_main_thread_recording(self):
        # regression: a shared flag let one worker's restore clobber
        # another's, leaving recording off for the whole process
        def churn():
            for _ in range(200):
                with no_grad():
                    leaf([1.0]) * leaf([2.0])

        workers = [threading.Thread(target=churn) for _ in range(4)]
        for t in workers:
            t.start()
        for t in workers:
            t.join()
        after = leaf([1.0]) + leaf([1.0])
        assert after._parents != ()


class TestNll:
    def test_matches_negative_log(self):
        mass = leaf([0.25])
        out = ad.nll(mass.sum())
        assert abs(out.data - (-np.log(0.25 + ad.EPS))) < 1e-12

    def test_zero_mass_stays_finite(self):
        out = ad.nll(leaf([0.0]).sum())
        assert np.isfinite(out.data)


class TestCrossEntropy:
    def test_rejects_unnormalized(self):
        probs = leaf([0.5, 0.2])
        with pytest.raises(ValueError):
            ad.cross_entropy(probs, 0)

    def test_rejects_out_of_range_target(self):
        probs = leaf([0.5, 0.5])
        with pytest.raises(IndexError):
            ad.cross_entropy(probs, 2)


class TestLstm:
    def test_forget_bias_initialized_to_one(self):
        rng = np.random.default_rng(0)
        w = init_lstm(rng, d_in=3, d=4, dtype=np.float64)
        np.testing.assert_allclose(w.bias.data[4:8], 1.0)

    def test_step_shapes(self):
        rng = np.random.default_rng(0)
        w = init_lstm(rng, d_in=3, d=4, dtype=np.float64)
        x = leaf(np.zeros(3))
        h, c = lstm_step(x, (leaf(np.zeros(4)), leaf(np.zeros(4))), w)
        assert h.data.shape == (4,)
        assert c.data.shape == (4,)

    def test_zero_input_zero_bias_gives_zero_state(self):
        rng = np.random.default_rng(0)
        w = init_lstm(rng, d_in=2, d=2, dtype=np.float64)
        w.bias.data[:] = 0.0
        h, c = lstm_step(leaf(np.zeros(2)), (leaf(np.zeros(2)), leaf(np.zeros(2))), w)
        # the candidate gate is tanh(0) = 0, so nothing enters the cell
        np.testing.assert_allclose(c.data, 0.0, atol=1e-12)
        np.testing.assert_allclose(h.data, 0.0, atol=1e-12)


class TestUniformInit:
    def test_bounds_follow_fan_in(self):
        rng = np.random.default_rng(42)
        data = ad.uniform_init(rng, (200, 50), fan_in=25, dtype=np.float64)
        bound = 1.0 / np.sqrt(25)
        assert data.max() <= bound
        assert data.min() >= -bound
        assert data.std() > bound / 4  # actually spread out, not collapsed

    def test_deterministic_for_seed(self):
        a = ad.uniform_init(np.random.default_rng(9), (4, 4), 4, np.float32)
        b = ad.uniform_init(np.random.default_rng(9), (4, 4), 4, np.float32)
        np.testing.assert_array_equal(a, b)
