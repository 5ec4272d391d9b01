import numpy as np
import pytest

import tensor as T
from errors import ContractError, ShapeError
from tensor import Matrix, Parameter, Tape


def weighted(out, weights):
    return T.sum_all(T.mul(out, weights))


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Matrix(np.eye(2)), Matrix([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.value, [[1, 2], [3, 4]])

    def test_hand_product(self):
        out = T.matmul(Matrix([[1, 2]]), Matrix([[3], [4]]))
        assert out.item() == 11

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError) as info:
            T.matmul(Matrix(np.ones((2, 3))), Matrix(np.ones((2, 3))))
        assert "(2, 3) vs (2, 3)" in info.value.detail

    def test_gradient_matches_finite_differences(self, f64, rng, gradcheck):
        for _ in range(20):
            a = Parameter(rng.normal(size=(3, 4)), "a")
            b = Parameter(rng.normal(size=(4, 2)), "b")
            r = Matrix(rng.normal(size=(3, 2)))
            assert gradcheck([a, b], lambda: weighted(T.matmul(a, b), r), h=1e-4) < 1e-5

    def test_batched_weight_gradient_sums_over_stack(self, f64, rng, gradcheck):
        x = Parameter(rng.normal(size=(3, 2, 4)), "x")
        w = Parameter(rng.normal(size=(4, 5)), "w")
        r = Matrix(rng.normal(size=(3, 2, 5)))
        assert gradcheck([x, w], lambda: weighted(T.matmul(x, w), r), h=1e-4) < 1e-5


class TestSoftmaxRows:
    def test_uniform_on_zeros(self):
        np.testing.assert_allclose(T.softmax_rows(Matrix(np.zeros((1, 4)))).value, [[0.25] * 4])

    def test_large_logits_do_not_overflow(self):
        out = T.softmax_rows(Matrix([[1000.0, 0.0]])).value
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-6)

    def test_rows_normalized(self, rng):
        for magnitude in (1.0, 100.0, 1e4):
            out = T.softmax_rows(Matrix(rng.normal(size=(5, 7)) * magnitude)).value
            assert np.all(out >= 0)
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_gradient(self, f64, rng, gradcheck):
        for _ in range(20):
            x = Parameter(rng.normal(size=(3, 5)), "x")
            r = Matrix(rng.normal(size=(3, 5)))
            assert gradcheck([x], lambda: weighted(T.softmax_rows(x), r)) < 1e-5


class TestElementwise:
    def test_fixed_points(self):
        assert T.tanh_elem(Matrix([[0.0]])).item() == 0.0
        assert T.sigmoid_elem(Matrix([[0.0]])).item() == 0.5
        assert T.gelu_elem(Matrix([[0.0]])).item() == 0.0

    @pytest.mark.parametrize("op", [T.tanh_elem, T.sigmoid_elem, T.gelu_elem])
    def test_gradient(self, op, f64, rng, gradcheck):
        for _ in range(20):
            x = Parameter(rng.normal(size=(2, 4)), "x")
            r = Matrix(rng.normal(size=(2, 4)))
            assert gradcheck([x], lambda: weighted(op(x), r)) < 1e-5

    def test_composite_sigmoid_tanh(self, f64, rng, gradcheck):
        for _ in range(20):
            w = Parameter(rng.normal(size=(3, 4)), "w")
            x = Parameter(rng.normal(size=(4, 2)), "x")
            r = Matrix(rng.normal(size=(3, 2)))
            loss = lambda: weighted(T.sigmoid_elem(T.tanh_elem(T.matmul(w, x))), r)
            assert gradcheck([w, x], loss) < 1e-5

    def test_add_bias_gradient(self, f64, rng, gradcheck):
        x = Parameter(rng.normal(size=(3, 4)), "x")
        b = Parameter(rng.normal(size=(1, 4)), "b")
        r = Matrix(rng.normal(size=(3, 4)))
        assert gradcheck([x, b], lambda: weighted(T.add_bias(x, b), r)) < 1e-5

    def test_add_bias_rejects_wrong_layout(self):
        with pytest.raises(ShapeError):
            T.add_bias(Matrix(np.ones((3, 4))), Matrix(np.ones((1, 3))))


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        gain = Parameter(np.ones((1, 4)), "g")
        bias = Parameter(np.zeros((1, 4)), "b")
        out = T.layer_norm(Matrix([[3.0, 3.0, 3.0, 3.0]]), gain, bias)
        np.testing.assert_array_equal(out.value, np.zeros((1, 4)))

    def test_gradient(self, f64, rng, gradcheck):
        for _ in range(20):
            x = Parameter(rng.normal(size=(3, 6)), "x")
            gain = Parameter(rng.normal(size=(1, 6)), "g")
            bias = Parameter(rng.normal(size=(1, 6)), "b")
            r = Matrix(rng.normal(size=(3, 6)))
            assert gradcheck([x, gain, bias], lambda: weighted(T.layer_norm(x, gain, bias), r)) < 1e-5


class TestGathers:
    def test_embedding_out_of_range(self):
        table = Parameter(np.zeros((5, 3)), "e")
        with pytest.raises(IndexError):
            T.embedding_lookup(table, [1, 5])

    def test_embedding_gradient_with_repeats(self, f64, rng, gradcheck):
        table = Parameter(rng.normal(size=(6, 3)), "e")
        ids = np.array([[0, 2, 2], [5, 0, 1]])
        r = Matrix(rng.normal(size=(2, 3, 3)))
        assert gradcheck([table], lambda: weighted(T.embedding_lookup(table, ids), r)) < 1e-5

    def test_take_concat_and_pooling_gradients(self, f64, rng, gradcheck):
        x = Parameter(rng.normal(size=(4, 3)), "x")
        y = Parameter(rng.normal(size=(2, 3)), "y")
        r = Matrix(rng.normal(size=(1, 3)))

        def loss():
            stacked = T.concat_rows([T.take_rows(x, [3, 0, 1]), y])
            return T.add(weighted(T.mean_rows(stacked), r), weighted(T.max_rows(stacked), r))

        assert gradcheck([x, y], loss) < 1e-5

    def test_permute_reshape_transpose_gradients(self, f64, rng, gradcheck):
        x = Parameter(rng.normal(size=(2, 3, 4)), "x")
        r = Matrix(rng.normal(size=(4, 6)))

        def loss():
            moved = T.permute(x, (2, 0, 1))
            return weighted(T.transpose(T.reshape(moved, (4, 6))), T.transpose(r))

        assert gradcheck([x], loss) < 1e-5


class TestLosses:
    def test_cross_entropy_gradient(self, f64, rng, gradcheck):
        logits = Parameter(rng.normal(size=(4, 7)), "z")
        targets = rng.integers(0, 7, size=4)
        assert gradcheck([logits], lambda: T.cross_entropy_rows(logits, targets)) < 1e-5

    def test_cross_entropy_uniform_is_log_v(self):
        loss = T.cross_entropy_rows(Matrix(np.zeros((3, 50))), [0, 4, 9])
        np.testing.assert_allclose(loss.item(), np.log(50), rtol=1e-6)

    def test_bce_gradient(self, f64, rng, gradcheck):
        z = Parameter(rng.normal(size=(2, 5)), "z")
        y = (rng.random((2, 5)) > 0.5).astype(float)
        assert gradcheck([z], lambda: T.binary_cross_entropy(T.sigmoid_elem(z), y)) < 1e-5


class TestTape:
    def test_backward_rejects_non_scalar(self):
        w = Parameter(np.ones((2, 2)), "w")
        with Tape() as tape:
            out = T.matmul(w, w)
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_unreachable_parameter_keeps_zero_grad(self):
        used = Parameter(np.ones((2, 2)), "used")
        unused = Parameter(np.ones((2, 2)), "unused")
        with Tape() as tape:
            loss = T.sum_all(T.mul(used, used))
        tape.backward(loss)
        assert np.all(used.grad == 2)
        assert np.all(unused.grad == 0)

    def test_records_replay_in_reverse_order(self):
        w = Parameter(np.ones((2, 2)), "w")
        with Tape() as tape:
            a = T.tanh_elem(w)
            b = T.scale(a, 2.0)
            loss = T.sum_all(b)
        assert [r.output for r in tape.records] == [a, b, loss]

    def test_no_tape_means_no_recording(self):
        w = Parameter(np.ones((2, 2)), "w")
        out = T.tanh_elem(w)
        assert not out.requires_grad

    def test_forward_replay_is_bitwise_identical(self, rng):
        w = Parameter(rng.normal(size=(8, 8)), "w")
        x = Matrix(rng.normal(size=(8, 16)))
        first = T.softmax_rows(T.tanh_elem(T.matmul(w, x))).value
        second = T.softmax_rows(T.tanh_elem(T.matmul(w, x))).value
        np.testing.assert_array_equal(first, second)

    def test_outputs_are_immutable(self):
        out = T.tanh_elem(Matrix(np.zeros((2, 2))))
        with pytest.raises(ValueError):
            out.value[0, 0] = 1.0
