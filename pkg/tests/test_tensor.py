"""Tensor graph mechanics: construction, backward traversal, accumulation."""

import numpy as np
import pytest

from effcxr.tensor import Tensor, as_tensor


def scalar_chain(x):
    """x -> y = 2x -> z = sum(y) with hand-wired closures."""
    y = Tensor(x.data * 2.0, _prev=(x,), _op="double")

    def back_y():
        x.accumulate_grad(y.grad * 2.0)

    y._backward = back_y
    z = Tensor(np.asarray(y.data.sum(), dtype=y.dtype), _prev=(y,), _op="sum")

    def back_z():
        y.accumulate_grad(np.broadcast_to(z.grad, y.shape).astype(y.dtype))

    z._backward = back_z
    return z


class TestConstruction:
    def test_defaults_to_float32(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float32
        assert t.shape == (2, 2)
        assert t.grad is None
        assert not t.requires_grad

    def test_float64_preserved(self):
        t = Tensor(np.zeros((3,), dtype=np.float64))
        assert t.dtype == np.float64

    def test_int_input_upcast(self):
        t = Tensor(np.arange(4, dtype=np.int64))
        assert t.dtype == np.float32

    def test_empty_array_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((0, 3)))

    def test_scalar_allowed(self):
        t = Tensor(1.5)
        assert t.size == 1
        assert t.ndim == 0

    def test_repr_mentions_shape_and_op(self):
        t = Tensor(np.zeros((2, 3)), _prev=(Tensor(1.0),), _op="fake")
        assert "(2, 3)" in repr(t)
        assert "fake" in repr(t)

    def test_as_tensor_passthrough(self):
        t = Tensor(np.ones(3))
        assert as_tensor(t) is t
        u = as_tensor(np.ones(3), requires_grad=True)
        assert isinstance(u, Tensor)
        assert u.requires_grad


class TestBackward:
    def test_simple_chain(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        z = scalar_chain(x)
        z.backward()
        assert np.allclose(x.grad, [2.0, 2.0, 2.0])

    def test_gradient_accumulates_on_reuse(self):
        x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        y = Tensor(x.data + x.data, _prev=(x, x), _op="self_add")

        def back():
            x.accumulate_grad(y.grad)
            x.accumulate_grad(y.grad)

        y._backward = back
        z = Tensor(np.asarray(y.data.sum(), dtype=y.dtype), _prev=(y,), _op="sum")

        def back_z():
            y.accumulate_grad(np.broadcast_to(z.grad, y.shape).astype(y.dtype))

        z._backward = back_z
        z.backward()
        assert np.allclose(x.grad, [2.0, 2.0])

    def test_diamond_graph_runs_each_node_once(self):
        # x feeds two branches that rejoin; the shared parent's closure must
        # fire only after both branch gradients have arrived.
        x = Tensor(np.array([3.0]), requires_grad=True)
        calls = []

        a = Tensor(x.data * 2, _prev=(x,), _op="a")

        def back_a():
            calls.append("a")
            x.accumulate_grad(a.grad * 2)

        a._backward = back_a
        b = Tensor(x.data * 5, _prev=(x,), _op="b")

        def back_b():
            calls.append("b")
            x.accumulate_grad(b.grad * 5)

        b._backward = back_b
        s = Tensor(np.asarray((a.data + b.data).sum()), _prev=(a, b), _op="s")

        def back_s():
            calls.append("s")
            a.accumulate_grad(np.broadcast_to(s.grad, a.shape).astype(a.dtype))
            b.accumulate_grad(np.broadcast_to(s.grad, b.shape).astype(b.dtype))

        s._backward = back_s
        s.backward()
        assert calls == ["s", "b", "a"] or calls == ["s", "a", "b"]
        assert np.allclose(x.grad, [7.0])

    def test_backward_without_graph_raises(self):
        with pytest.raises(RuntimeError):
            Tensor(np.array([1.0]), requires_grad=True).backward()

    def test_backward_nonscalar_without_grad_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(x.data * 2, _prev=(x,), _op="double")
        with pytest.raises(ValueError):
            y.backward()

    def test_backward_with_explicit_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(x.data * 2, _prev=(x,), _op="double")

        def back():
            x.accumulate_grad(y.grad * 2)

        y._backward = back
        y.backward(np.array([1.0, 10.0, 100.0]))
        assert np.allclose(x.grad, [2.0, 20.0, 200.0])

    def test_backward_grad_shape_mismatch_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(x.data * 2, _prev=(x,), _op="double")
        with pytest.raises(ValueError):
            y.backward(np.ones(4))

    def test_zero_grad_clears(self):
        x = Tensor(np.ones(2), requires_grad=True)
        z = scalar_chain(x)
        z.backward()
        assert x.grad is not None
        x.zero_grad()
        assert x.grad is None

    def test_needs_grad(self):
        leaf = Tensor(np.ones(2))
        assert not leaf.needs_grad()
        assert Tensor(np.ones(2), requires_grad=True).needs_grad()
        assert Tensor(np.ones(2), _prev=(leaf,)).needs_grad()

    def test_accumulate_grad_copies_first_delivery(self):
        x = Tensor(np.ones(2), requires_grad=True)
        g = np.array([1.0, 2.0], dtype=np.float32)
        x.accumulate_grad(g)
        g[0] = 99.0
        assert np.allclose(x.grad, [1.0, 2.0])

    def test_grad_matches_data_dtype(self):
        x = Tensor(np.ones(2, dtype=np.float64), requires_grad=True)
        x.accumulate_grad(np.ones(2, dtype=np.float32))
        assert x.grad.dtype == np.float64


class TestSeededChains:
    def test_random_linear_chains(self):
        # random-depth chains of y = c*x; the end-to-end gradient is the
        # product of the constants, checked exactly.
        rng = np.random.default_rng(11)
        for trial in range(20):
            depth = int(rng.integers(1, 6))
            consts = rng.uniform(-2, 2, size=depth)
            x = Tensor(rng.normal(size=(4,)), requires_grad=True)
            t = x
            for c in consts:
                prev = t
                nxt = Tensor(prev.data * c, _prev=(prev,), _op="scale")

                def back(prev=prev, nxt=nxt, c=c):
                    prev.accumulate_grad(nxt.grad * c)

                nxt._backward = back
                t = nxt
            z = Tensor(np.asarray(t.data.sum(), dtype=t.dtype), _prev=(t,), _op="sum")

            def back_z(t=t, z=z):
                t.accumulate_grad(np.broadcast_to(z.grad, t.shape).astype(t.dtype))

            z._backward = back_z
            z.backward()
            expected = np.full(4, np.prod(consts), dtype=np.float64)
            assert np.allclose(x.grad, expected, rtol=1e-5), f"trial {trial}"
