from __future__ import annotations

import numpy as np
import pytest

from kgadapt import autodiff as ad


def check_op(fn, *shapes, rng, positive=False, tol=1e-6):
    """Compare reverse-mode gradients of sum(fn(*xs) * probe) with central differences."""
    xs = [rng.normal(size=s) for s in shapes]
    if positive:
        xs = [np.abs(x) + 0.5 for x in xs]
    probe = rng.normal(size=np.shape(fn(*[ad.Tensor(x) for x in xs]).data))

    def value():
        return float((fn(*[ad.Tensor(x) for x in xs]).data * probe).sum())

    ts = [ad.Tensor(x, requires_grad=True) for x in xs]
    ad.sum(ad.mul(fn(*ts), probe)).backward()
    for x, t in zip(xs, ts):
        for idx in np.ndindex(x.shape):
            num = ad.numerical_grad(value, x, idx)
            assert abs(t.grad[idx] - num) <= tol * max(1.0, abs(num)), (idx, t.grad[idx], num)


OPS = {
    "add_broadcast": (lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
    "sub_broadcast": (lambda a, b: ad.sub(a, b), [(3, 1), (3, 4)]),
    "mul": (lambda a, b: ad.mul(a, b), [(2, 3), (2, 3)]),
    "div": (lambda a, b: ad.div(a, b), [(2, 3), (2, 3)]),
    "matmul": (lambda a, b: ad.matmul(a, b), [(2, 3), (3, 4)]),
    "batched_matmul": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 2)]),
    "sum_axis": (lambda a: ad.sum(a, axis=1, keepdims=True), [(3, 4)]),
    "mean": (lambda a: ad.mean(a, axis=0), [(3, 4)]),
    "reshape": (lambda a: ad.reshape(a, (4, 3)), [(3, 4)]),
    "transpose": (lambda a: ad.transpose(a, (1, 0, 2)), [(2, 3, 2)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=0), [(2, 3), (1, 3)]),
    "take_repeated": (lambda a: ad.take(a, [0, 2, 0, 1]), [(3, 2)]),
    "exp": (lambda a: ad.exp(a), [(3,)]),
    "elu": (lambda a: ad.elu(a), [(6,)]),
    "gelu": (lambda a: ad.gelu(a), [(6,)]),
    "softmax": (lambda a: ad.softmax(a, axis=-1), [(2, 4)]),
    "log_softmax": (lambda a: ad.log_softmax(a, axis=-1), [(2, 4)]),
    "layer_norm": (lambda a, g, b: ad.layer_norm(a, g, b), [(3, 5), (5,), (5,)]),
}


class TestOps:
    @pytest.mark.parametrize("name", sorted(OPS))
    def test_gradient(self, name, rng):
        fn, shapes = OPS[name]
        positive = name == "div"
        check_op(fn, *shapes, rng=rng, positive=positive)

    def test_log_and_power_on_positive_inputs(self, rng):
        check_op(lambda a: ad.log(a), (4,), rng=rng, positive=True)
        check_op(lambda a: ad.power(a, -0.5), (4,), rng=rng, positive=True)

    def test_elu_values(self):
        out = ad.elu(ad.Tensor([-1.0, 0.0, 2.0])).data
        assert out.tolist() == [np.expm1(-1.0), 0.0, 2.0]

    def test_softmax_stable_for_large_logits(self):
        out = ad.softmax(ad.Tensor([1000.0, 1000.0])).data
        assert out.tolist() == [0.5, 0.5]


class TestTape:
    def test_shared_subexpression_accumulates(self):
        x = ad.Tensor(3.0, requires_grad=True)
        y = x * x
        (y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
        assert x.grad == pytest.approx(6.0 + 27.0)

    def test_constants_get_no_grad(self):
        c = ad.Tensor([1.0, 2.0])
        x = ad.Tensor([3.0, 4.0], requires_grad=True)
        ad.sum(c * x).backward()
        assert c.grad is None and x.grad.tolist() == [1.0, 2.0]

    def test_non_scalar_needs_seed(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()
        (x * 2.0).backward(np.array([1.0, -1.0]))
        assert x.grad.tolist() == [2.0, -2.0]

    def test_no_graph_without_grad(self):
        out = ad.Tensor([1.0]) * ad.Tensor([2.0])
        assert not out.requires_grad and out._parents == ()

    def test_numerical_grad_restores(self):
        arr = np.array([1.0, 2.0])
        g = ad.numerical_grad(lambda: float(arr[0] ** 2), arr, (0,))
        assert g == pytest.approx(2.0, abs=1e-8) and arr.tolist() == [1.0, 2.0]
