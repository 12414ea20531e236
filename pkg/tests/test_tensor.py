import numpy as np
import pytest

from robustprune import tensor as T
from robustprune.errors import ContractError, NumericError, ShapeError
from robustprune.tensor import Adam, Tensor

from gradcheck import check_op, op_cases


def test_matmul_hand_example():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_relu_definition():
    out = T.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_softmax_symmetry():
    out = T.softmax(Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_rows_normalized():
    rng = np.random.default_rng(0)
    out = T.softmax(Tensor(rng.normal(size=(20, 7)) * 10))
    assert (out.data >= 0).all()
    assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    T.tensor_sum(T.square(x)).backward()
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_mean():
    x = Tensor([1.0, 5.0, -2.0, 0.5], requires_grad=True)
    T.mean(x).backward()
    assert np.allclose(x.grad, [0.25] * 4)


def test_backward_requires_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        T.square(x).backward()


def test_backward_reused_node_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = T.add(T.square(x), T.mul(x, x))  # 2x^2, x used twice
    T.tensor_sum(y).backward()
    assert np.allclose(x.grad, [8.0])


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_non_finite_rejected():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        T.log(Tensor([-1.0]))
    with pytest.raises(NumericError):
        T.log(Tensor([0.0]))


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(7)
    w1 = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    x = rng.normal(size=(6, 4))

    def loss_value(a, b):
        h = np.maximum(x @ a, 0.0)
        return float(np.mean((h @ b) ** 2))

    out = T.mean(T.square(T.matmul(T.relu(T.matmul(Tensor(x), w1)), w2)))
    out.backward()

    h = 1e-6
    for tensor in (w1, w2):
        flat = tensor.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_value(w1.data, w2.data)
            flat[i] = orig - h
            fm = loss_value(w1.data, w2.data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = tensor.grad.ravel()[i]
            assert abs(ana - num) <= 1e-5 * max(1.0, abs(num))


def test_every_op_gradient_small_sample():
    rng = np.random.default_rng(11)
    for _ in range(3):
        for name, (build, inputs) in op_cases(rng).items():
            check_op(build, inputs, rng)


def test_tape_replay_determinism():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        loss = T.mean(T.square(T.softmax(T.matmul(x, w))))
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    a = run()
    b = run()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_maxpool_forward_and_tie_break():
    x = np.zeros((1, 1, 2, 2))
    x[0, 0] = [[3.0, 3.0], [1.0, 2.0]]
    xt = Tensor(x, requires_grad=True)
    out = T.maxpool2d(xt, 2)
    assert out.data.reshape(()) == 3.0
    T.tensor_sum(out).backward()
    # first maximum in row-major window order receives the gradient
    assert xt.grad[0, 0, 0, 0] == 1.0
    assert xt.grad[0, 0, 0, 1] == 0.0


def test_conv2d_hand_example():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    w = np.zeros((1, 1, 2, 2))
    w[0, 0, 0, 0] = 1.0  # identity on the top-left corner of each window
    out = T.conv2d(Tensor(x), Tensor(w))
    assert np.array_equal(out.data[0, 0], x[0, 0, :3, :3])


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        before = p.data.copy()
        opt.step()
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude_is_lr(self):
        p = Tensor([1.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.ones(1)
        opt.step()
        assert np.isclose(1.0 - p.data[0], 0.1, rtol=1e-6)

    def test_identical_params_stay_identical(self):
        a = Tensor([0.3, -0.7], requires_grad=True)
        b = Tensor([0.3, -0.7], requires_grad=True)
        opt = Adam([a, b], lr=0.05)
        for _ in range(5):
            g = np.array([0.2, -0.1])
            a.grad, b.grad = g.copy(), g.copy()
            opt.step()
        assert np.array_equal(a.data, b.data)

    def test_missing_grad_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        opt = Adam([p])
        with pytest.raises(ContractError):
            opt.step()
