import numpy as np
import pytest

from nibkit import tensor as T
from nibkit.errors import (
    DegenerateInputError,
    GraphError,
    IndexOutOfRangeError,
    NonFiniteError,
    ShapeError,
)
from nibkit.tensor import Graph, Tensor, finite_diff_grad


def t(data):
    return Tensor(np.asarray(data, dtype=np.float64))


class TestConstruction:
    def test_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])

    def test_rejects_inf(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_data_is_immutable(self):
        x = t([1.0, 2.0])
        with pytest.raises(ValueError):
            x.data[0] = 5.0

    def test_does_not_alias_caller_array(self):
        arr = np.array([1.0, 2.0])
        x = Tensor(arr)
        arr[0] = 99.0
        assert x.data[0] == 1.0


class TestMatmul:
    def test_identity(self):
        a = np.arange(9.0).reshape(3, 3)
        out = T.matmul(t(np.eye(3)), t(a))
        assert np.array_equal(out.data, a)

    def test_spec_example(self):
        out = T.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t(np.eye(2)))
        assert np.array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))


class TestElementwise:
    def test_scale_by_one_is_identity(self):
        z = t([[1.5, -2.5], [0.25, 3.0]])
        assert np.array_equal(T.scale(z, 1.0).data, z.data)

    def test_scale_by_zero(self):
        z = t([[1.5, -2.5]])
        assert np.array_equal(T.scale(z, 0.0).data, np.zeros((1, 2)))

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(t([1.0]), t([1.0, 2.0]))

    def test_mul_values(self):
        out = T.mul(t([2.0, 3.0]), t([4.0, 5.0]))
        assert np.array_equal(out.data, [8.0, 15.0])


class TestActivations:
    def test_softmax_symmetry(self):
        out = T.softmax(t([0.0, 0.0, 0.0]), axis=0)
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_softmax_rows_sum_to_one(self, rng):
        x = t(rng.normal(0, 10, (6, 9)))
        out = T.softmax(x, axis=1)
        assert np.abs(out.data.sum(axis=1) - 1.0).max() <= 1e-12

    def test_softmax_bad_axis(self):
        with pytest.raises(IndexOutOfRangeError):
            T.softmax(t([1.0]), axis=3)

    def test_layer_norm_constant_row_is_zero_pre_affine(self):
        x = t(np.full((2, 8), 3.7))
        out = T.layer_norm(x, t(np.ones(8)), t(np.zeros(8)), eps=1e-6)
        assert np.array_equal(out.data, np.zeros((2, 8)))

    def test_layer_norm_moments(self, rng):
        # pre-affine output: per-row mean ~0 and variance ~1 for tiny eps
        x = t(rng.normal(2.0, 3.0, (5, 32)))
        out = T.layer_norm(x, t(np.ones(32)), t(np.zeros(32)), eps=1e-12)
        assert np.abs(out.data.mean(axis=1)).max() <= 1e-10
        assert np.abs(out.data.var(axis=1) - 1.0).max() <= 1e-8

    def test_gelu_known_values(self):
        out = T.gelu(t([0.0, 100.0, -100.0]))
        assert out.data[0] == 0.0
        assert np.isclose(out.data[1], 100.0)
        assert np.isclose(out.data[2], 0.0, atol=1e-12)


class TestLookupAndPooling:
    def test_embedding_rows(self):
        table = t(np.arange(12.0).reshape(4, 3))
        out = T.embedding_lookup(table, [2, 0, 2])
        assert np.array_equal(out.data, table.data[[2, 0, 2]])

    def test_embedding_out_of_range(self):
        with pytest.raises(IndexOutOfRangeError):
            T.embedding_lookup(t(np.ones((4, 3))), [4])

    def test_mean_pool(self):
        out = T.mean_pool(t([[1.0, 3.0], [5.0, 7.0]]), axis=0)
        assert np.array_equal(out.data, [3.0, 5.0])


class TestCosine:
    def test_self_similarity_is_one(self, rng):
        u = t(rng.normal(0, 1, 16))
        assert T.cosine_similarity(u, u).item() == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert T.cosine_similarity(t([1.0, 0.0]), t([0.0, 1.0])).item() == 0.0

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            T.cosine_similarity(t([0.0, 0.0]), t([1.0, 0.0]))

    def test_range(self, rng):
        for _ in range(20):
            u, v = t(rng.normal(0, 1, 8)), t(rng.normal(0, 1, 8))
            assert -1.0 <= T.cosine_similarity(u, v).item() <= 1.0


class TestBackward:
    def test_product_rule(self):
        g = Graph()
        x = Tensor(np.array(2.0).reshape(()), graph=g)
        y = Tensor(np.array(3.0).reshape(()), graph=g)
        loss = T.mul(x, y)
        grads = g.backward(loss)
        assert grads[x.node_id] == 3.0
        assert grads[y.node_id] == 2.0

    def test_scale_gradient_wrt_factor(self, rng):
        # d(scale(z, s))/ds = sum(z * upstream); upstream here is all-ones
        z_val = rng.normal(0, 1, (3, 4))
        g = Graph()
        s = Tensor(np.array(0.7).reshape(()), graph=g)
        out = T.sum_all(T.scale(Tensor(z_val), s))
        grads = g.backward(out)
        assert grads[s.node_id] == pytest.approx(z_val.sum(), rel=1e-12)

    def test_non_scalar_loss_rejected(self):
        g = Graph()
        x = Tensor(np.ones(3), graph=g)
        with pytest.raises(GraphError):
            g.backward(T.scale(x, 2.0))

    def test_mixed_graphs_rejected(self):
        g1, g2 = Graph(), Graph()
        a = Tensor(np.ones(3), graph=g1)
        b = Tensor(np.ones(3), graph=g2)
        with pytest.raises(GraphError):
            T.add(a, b)

    def test_shared_subexpression_accumulates(self):
        g = Graph()
        x = Tensor(np.array(2.0).reshape(()), graph=g)
        loss = T.add(T.mul(x, x), x)  # x^2 + x -> 2x + 1 = 5
        grads = g.backward(loss)
        assert grads[x.node_id] == pytest.approx(5.0)


class TestFiniteDiff:
    def test_quadratic(self):
        grad = finite_diff_grad(lambda x: float((x ** 2).sum()), np.array([1.0, 2.0]), h=1e-5)
        assert np.allclose(grad, [2.0, 4.0], atol=1e-9)

    def test_constant_function(self):
        grad = finite_diff_grad(lambda x: 3.5, np.ones((2, 2)), h=1e-5)
        assert np.array_equal(grad, np.zeros((2, 2)))

    def test_cosine_matches_backward(self, rng):
        u_val = rng.normal(0, 1, 16)
        v_val = rng.normal(0, 1, 16)
        g = Graph()
        u = Tensor(u_val, graph=g)
        loss = T.cosine_similarity(u, Tensor(v_val))
        grads = g.backward(loss)

        def f(x):
            return T.cosine_similarity(Tensor(x), Tensor(v_val)).item()

        fd = finite_diff_grad(f, u_val, h=1e-5)
        assert np.abs(grads[u.node_id] - fd).max() <= 1e-6 * max(np.abs(fd).max(), 1e-12)

    def test_bad_step_rejected(self):
        with pytest.raises(DegenerateInputError):
            finite_diff_grad(lambda x: 0.0, np.ones(2), h=0.0)


class TestDeterminism:
    def test_forward_bitwise_repeatable(self, rng):
        x_val = rng.normal(0, 1, (16, 16))
        w_val = rng.normal(0, 1, (16, 16))
        outs = []
        for _ in range(3):
            out = T.softmax(T.matmul(Tensor(x_val), Tensor(w_val)), axis=1)
            outs.append(out.data.tobytes())
        assert outs[0] == outs[1] == outs[2]
