"""Finite-difference validation of every autodiff operation (float64)."""

import numpy as np
import pytest

from emdkit.nn import autodiff as ad
from emdkit.nn.autodiff import Tensor


def numeric_grad(loss_fn, arrays, step=1e-6):
    """Central differences of loss_fn(list of arrays) w.r.t. each array."""
    grads = []
    for idx, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = loss_fn(arrays)
            flat[k] = orig - step
            lo = loss_fn(arrays)
            flat[k] = orig
            gflat[k] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def check_op(build, shapes, rng, atol=1e-7):
    """build(tensors) -> scalar Tensor; compare tape grads to central FD."""
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [ad.parameter(a.copy()) for a in arrays]
    out = build(tensors)
    out.backward()

    def loss_fn(arrs):
        ts = [Tensor(a) for a in arrs]
        return float(build(ts).data)

    fd = numeric_grad(loss_fn, [a.copy() for a in arrays])
    for t, g in zip(tensors, fd):
        np.testing.assert_allclose(t.grad, g, atol=atol, rtol=1e-5)


class TestOps:
    def test_add_broadcast(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.mul(ad.add(ts[0], ts[1]), ts[2])),
            [(3, 4), (4,), (3, 4)],
            rng,
        )

    def test_sub(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.mul(ad.sub(ts[0], ts[1]), ad.sub(ts[0], ts[1]))),
            [(5,), (5,)],
            rng,
        )

    def test_mul_scalar(self, rng):
        check_op(lambda ts: ad.tsum(ad.mul(ts[0], 2.5)), [(4, 2)], rng)

    def test_matmul_2d(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.matmul(ts[0], ts[1])), [(3, 4), (4, 5)], rng
        )

    def test_matmul_batched(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.matmul(ts[0], ts[1])),
            [(2, 3, 4, 5), (2, 3, 5, 4)],
            rng,
        )

    def test_linear_with_bias(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.linear(ts[0], ts[1], ts[2])),
            [(2, 3, 4), (4, 6), (6,)],
            rng,
        )

    def test_relu(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.mul(ad.relu(ts[0]), ts[1])),
            [(4, 4), (4, 4)],
            rng,
        )

    def test_reshape_transpose(self, rng):
        check_op(
            lambda ts: ad.tsum(
                ad.mul(
                    ad.transpose(ad.reshape(ts[0], (2, 3, 2, 2)), (0, 2, 1, 3)),
                    ts[1],
                )
            ),
            [(6, 4), (2, 2, 3, 2)],
            rng,
        )

    def test_concat(self, rng):
        check_op(
            lambda ts: ad.tsum(
                ad.mul(ad.concat([ts[0], ts[1]], axis=1), ts[2])
            ),
            [(3, 2), (3, 4), (3, 6)],
            rng,
        )

    def test_getitem(self, rng):
        check_op(
            lambda ts: ad.tsum(
                ad.mul(ad.getitem(ts[0], (slice(1, 3), slice(0, 2))), ts[1])
            ),
            [(4, 4), (2, 2)],
            rng,
        )

    def test_sum_axis(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.mul(ad.tsum(ts[0], axis=1), ts[1])),
            [(3, 5, 2), (3, 2)],
            rng,
        )

    def test_mean(self, rng):
        check_op(
            lambda ts: ad.tmean(ad.mul(ts[0], ts[0])), [(4, 3)], rng
        )

    def test_layer_norm(self, rng):
        check_op(
            lambda ts: ad.tsum(
                ad.mul(ad.layer_norm(ts[0], ts[1], ts[2]), ts[3])
            ),
            [(3, 6), (6,), (6,), (3, 6)],
            rng,
            atol=1e-6,
        )

    def test_softmax(self, rng):
        check_op(
            lambda ts: ad.tsum(ad.mul(ad.softmax(ts[0]), ts[1])),
            [(2, 3, 5), (2, 3, 5)],
            rng,
        )

    def test_cross_entropy_mean(self, rng):
        targets = np.array([1, 0, 3, 2])
        check_op(
            lambda ts: ad.cross_entropy_mean(ts[0], targets), [(4, 4)], rng
        )

    def test_embedding(self, rng):
        idx = np.array([0, 1, 1, 0, 1])
        check_op(
            lambda ts: ad.tsum(ad.mul(ad.embedding(ts[0], idx), ts[1])),
            [(2, 3), (5, 3)],
            rng,
        )


class TestEngine:
    def test_backward_requires_scalar(self, rng):
        t = ad.parameter(rng.standard_normal((3,)))
        with pytest.raises(ValueError):
            ad.mul(t, 2.0).backward()

    def test_gradient_accumulates_across_uses(self, rng):
        a = ad.parameter(np.array([2.0, 3.0]))
        out = ad.tsum(ad.mul(a, a))  # d/da (a^2) = 2a via two-parent paths
        out.backward()
        np.testing.assert_allclose(a.grad, [4.0, 6.0])

    def test_no_grad_without_requires(self, rng):
        a = Tensor(rng.standard_normal((3,)))
        b = ad.parameter(rng.standard_normal((3,)))
        out = ad.tsum(ad.mul(a, b))
        out.backward()
        assert a.grad is None
        assert b.grad is not None

    def test_cross_entropy_uniform_rows(self):
        logits = ad.parameter(np.zeros((3, 4)))
        loss = ad.cross_entropy_mean(logits, np.array([0, 1, 2]))
        assert float(loss.data) == pytest.approx(np.log(4.0))

    def test_dtype_preserved_f32(self, rng):
        a = ad.parameter(rng.standard_normal((3, 3)).astype(np.float32))
        out = ad.tmean(ad.mul(ad.softmax(a), 2.0))
        out.backward()
        assert out.data.dtype == np.float32
        assert a.grad.dtype == np.float32
