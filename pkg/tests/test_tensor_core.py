import numpy as np
import pytest

import unicoh.tensor as T
from unicoh.tensor import Tensor, checkpoint
from unicoh.tensor.gradcheck import GradCheckError


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a numpy scalar function; independent of the autodiff path."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        gf[i] = (up - down) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestForward:
    def test_softmax_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-15)

    def test_softmax_sum_has_zero_gradient(self, rng):
        x = Tensor(rng.normal(size=5), requires_grad=True)
        T.softmax(x).sum().backward()
        np.testing.assert_allclose(x.grad, np.zeros(5), atol=1e-15)

    def test_softmax_empty_axis_errors(self):
        with pytest.raises(T.ShapeError):
            T.softmax(Tensor(np.zeros((2, 0))), axis=1)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(T.ShapeError, match="inner dimensions"):
            Tensor(np.zeros((3, 4))) @ Tensor(np.zeros((3, 2)))

    def test_add_broadcast_mismatch(self):
        with pytest.raises(T.ShapeError, match="broadcast"):
            Tensor(np.zeros(3)) + Tensor(np.zeros(4))

    def test_concat_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2)))], axis=0)

    def test_pad_and_slice(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        y = T.pad(x, axis=0, before=1, after=2)
        assert y.shape == (5, 3)
        np.testing.assert_array_equal(y.data[1:3], x.data)
        np.testing.assert_array_equal(y[1:3].data, x.data)

    def test_depthwise_conv_identity_and_delay(self):
        h = Tensor(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_array_equal(T.depthwise_conv1d(h, Tensor([[1.0]])).data, h.data)
        np.testing.assert_array_equal(T.depthwise_conv1d(h, Tensor([[0.0, 1.0, 0.0]])).data, h.data)
        delayed = T.depthwise_conv1d(h, Tensor([[1.0, 0.0, 0.0]])).data
        np.testing.assert_array_equal(delayed[:, 0], [0.0, 1.0, 2.0])

    def test_depthwise_conv_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            T.depthwise_conv1d(Tensor(np.zeros((3, 2))), Tensor(np.zeros((2, 2))))


class TestGradients:
    """Each primitive against independent numpy central differences."""

    def _check(self, build, *arrays, tol=1e-7):
        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        build(*leaves).backward()
        for i, leaf in enumerate(leaves):

            def f(v, i=i):
                args = [Tensor(a) for a in arrays]
                args[i] = Tensor(v)
                return float(build(*args).data)

            num = numeric_grad(f, arrays[i].copy())
            assert rel_err(leaf.grad, num) <= tol, (i, leaf.grad, num)

    def test_matmul_3x4_4x2(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))
        self._check(lambda x, y: (x @ y * Tensor(w)).sum(), a, b)

    def test_matmul_vector_and_batched(self, rng):
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4,))
        self._check(lambda x, y: T.tanh(x @ y).sum(), a, b)
        c, d = rng.normal(size=(4,)), rng.normal(size=(2, 4, 3))
        self._check(lambda x, y: T.tanh(x @ y).sum(), c, d)

    def test_elementwise_broadcast(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
        self._check(lambda x, y: ((x + y) * (x - y) / (T.exp(y) + 1.0)).sum(), a, b)

    def test_nonlinearities(self, rng):
        a = rng.normal(size=(3, 5))
        self._check(lambda x: (T.sigmoid(x) * T.tanh(x)).sum(), a)
        self._check(lambda x: T.log(T.exp(x) + 2.0).mean(), a)
        w = rng.normal(size=(3, 5))
        self._check(lambda x: (T.softmax(x, axis=1) * Tensor(w)).sum(), a)
        self._check(lambda x: (T.softmax(x, axis=0) * Tensor(w)).sum(), a)
        self._check(lambda x: (T.log_softmax(x, axis=1) * Tensor(w)).sum(), a)

    def test_relu_away_from_kink(self, rng):
        a = rng.normal(size=20)
        a[np.abs(a) < 1e-2] = 0.5
        self._check(lambda x: (T.relu(x) * x).sum(), a)

    def test_shape_ops(self, rng):
        a = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(4, 3, 2))
        self._check(lambda x: (x.transpose(2, 1, 0) * Tensor(w)).sum(), a)
        self._check(lambda x: (x.reshape(6, 4)[1:4] * 3.0).sum(axis=0).sum(), a)
        self._check(lambda x: T.pad(x, axis=1, before=2, after=1).mean(axis=(0, 1)).sum(), a)

    def test_gather_ops(self, rng):
        a = rng.normal(size=(5, 3))
        idx = np.array([[0, 4], [4, 2], [1, 1]])
        self._check(lambda x: T.tanh(T.take(x, idx)).sum(), a)
        targets = np.array([2, 0, 1, 1, 2])
        self._check(lambda x: T.pick(T.log_softmax(x, axis=1), targets).sum(), a)

    def test_concat(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
        w = rng.normal(size=(2, 8))
        self._check(lambda x, y: (T.concat([x, y, x], axis=1)[:, :8] * Tensor(w)).sum(), a, b)

    def test_bilinear(self, rng):
        x, y = rng.normal(size=(3, 4)), rng.normal(size=(3, 5))
        w, b = rng.normal(size=(2, 4, 5)), rng.normal(size=2)
        v = rng.normal(size=(3, 2))
        self._check(lambda x_, w_, y_, b_: (T.bilinear(x_, w_, y_, b_) * Tensor(v)).sum(), x, w, y, b)

    def test_depthwise_conv(self, rng):
        h, w = rng.normal(size=(2, 6, 4)), rng.normal(size=(4, 5))
        v = rng.normal(size=(2, 6, 4))
        self._check(lambda h_, w_: (T.depthwise_conv1d(h_, w_) * Tensor(v)).sum(), h, w)

    def test_lstm_sequence(self, rng):
        S, Tn, e, p = 3, 5, 4, 3
        x = rng.normal(size=(S, Tn, e))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0], [1, 0, 0, 0, 0]], dtype=bool)
        wx, wh, b = rng.normal(size=(e, 4 * p)), rng.normal(size=(p, 4 * p)), rng.normal(size=4 * p)
        v = rng.normal(size=(S, Tn, p))

        def build(x_, wx_, wh_, b_):
            return (T.lstm_sequence(x_, mask, wx_, wh_, b_) * Tensor(v)).sum()

        self._check(build, x, wx, wh, b)


class TestGraphSemantics:
    def test_reuse_doubles_gradient(self):
        x = Tensor([2.0, -1.0], requires_grad=True)
        x.sum().backward()
        once = x.grad.copy()
        x.grad = None
        (x + x).sum().backward()
        np.testing.assert_array_equal(x.grad, 2 * once)

    def test_leaf_grad_accumulates_over_uses(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x + T.tanh(x) * x
        y.backward()
        expected = 2 * 3.0 + np.tanh(3.0) + 3.0 * (1 - np.tanh(3.0) ** 2)
        assert abs(float(x.grad) - expected) < 1e-12

    def test_no_grad_records_nothing(self):
        x = Tensor(1.0, requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(7)
            a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
            b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
            loss = T.log_softmax(T.tanh(a @ b), axis=1).sum()
            loss.backward()
            return loss.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

        assert run() == run()


class TestGradCheck:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        report = T.grad_check(lambda: x * x, [x])
        assert abs(float(x.grad) - 6.0) == 0.0
        assert report["param0"] <= 1e-9

    def test_softmax_sum(self, rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)
        report = T.grad_check(lambda: T.softmax(x).sum(), {"x": x})
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)
        assert report["x"] <= 1e-9

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GradCheckError, match="scalar"):
            T.grad_check(lambda: x * 2.0, [x])

    def test_non_finite_rejected(self):
        x = Tensor(0.0, requires_grad=True)
        with pytest.raises(GradCheckError, match="non-finite"):
            T.grad_check(lambda: T.log(x), [x])

    def test_detects_wrong_gradient(self):
        x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

        def bad():
            # forward is x^2 summed, backward claims 3x
            return T.Tensor._from_op((x.data**2).sum(), (x,), lambda g: (3 * g * x.data,))

        assert T.grad_check(bad, [x])["param0"] > 0.1


class TestAdam:
    def test_zero_grad_no_l2_is_noop(self):
        p = Tensor([0.5, -2.0])
        p.grad = np.zeros(2)
        state = T.AdamState.for_param(p)
        T.adam_step(p, state)
        np.testing.assert_array_equal(p.data, [0.5, -2.0])
        assert state.step_count == 1

    def test_l2_becomes_effective_gradient(self):
        p = Tensor([1.0])
        p.grad = np.zeros(1)
        state = T.AdamState.for_param(p, l2=1e-5)
        T.adam_step(p, state)
        # first moment after one step = (1 - beta1) * effective gradient
        np.testing.assert_allclose(state.first_moment, [0.1 * 1e-5], rtol=1e-12)
        np.testing.assert_allclose(state.second_moment, [0.001 * 1e-10], rtol=1e-12)

    def test_first_step_moves_by_lr(self):
        # hand-evaluated recurrence: m=1, v=0.1, m_hat=10, v_hat=100
        lr, g, eps = 1e-3, 10.0, 1e-8
        expected = 0.0 - lr * 10.0 / (np.sqrt(100.0) + eps)
        p = Tensor([0.0])
        p.grad = np.array([g])
        T.adam_step(p, T.AdamState.for_param(p, lr=lr))
        assert abs(p.data[0] - expected) < 1e-15
        assert abs(p.data[0] + 0.001) < 1e-9

    def test_missing_grad_errors(self):
        p = Tensor([1.0])
        with pytest.raises(ValueError, match="no grad"):
            T.adam_step(p, T.AdamState.for_param(p))

    def test_step_count_increments(self):
        p = Tensor([1.0])
        state = T.AdamState.for_param(p)
        for i in range(3):
            p.grad = np.array([0.1])
            T.adam_step(p, state)
            assert state.step_count == i + 1


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        arrays = {
            "a.w": rng.normal(size=(3, 4)),
            "b": np.array([np.pi, -0.0, 1e-300, np.nextafter(1.0, 2.0)]),
            "scalar": np.array(2.5),
        }
        meta = {"config": {"tau": 1.0}, "vocab": ["<pad>", "x"]}
        path = tmp_path / "m.ckpt"
        checkpoint.save(path, arrays, meta)
        back, back_meta = checkpoint.load(path)
        assert back_meta == meta
        for k, v in arrays.items():
            assert back[k].shape == v.shape
            assert back[k].tobytes() == np.asarray(v, dtype="<f8").tobytes()
        checkpoint.save(tmp_path / "again.ckpt", back, back_meta)
        assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()

    def test_bad_magic(self):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(b"NOTACKPT" + b"\0" * 16)


def test_float32_precision_context():
    with T.precision(np.float32):
        x = Tensor([1.0, 2.0])
        y = T.tanh(x * 2.0)
    assert x.data.dtype == np.float32 and y.data.dtype == np.float32
    assert Tensor([1.0]).data.dtype == np.float64


def test_segment_sum_forward_and_gradient():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 2))
    ids = np.array([2, 0, 2, 1, 2])
    out = T.segment_sum(Tensor(a), ids, 4)
    np.testing.assert_allclose(out.data[2], a[0] + a[2] + a[4])
    np.testing.assert_array_equal(out.data[3], 0.0)
    w = rng.normal(size=(4, 2))
    TestGradients()._check(lambda x: (T.segment_sum(x, ids, 4) * Tensor(w)).sum(), a)
