import numpy as np
import pytest

import evgraph.autodiff as ad
from evgraph.autodiff import Tape, Tensor, backward, constant, finite_diff_check, parameter
from evgraph.errors import NonScalarLoss, ShapeMismatch, UnsortedSegments


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


def to_scalar(t):
    """Reduce any tensor to a scalar through sum_rows + segment_sum."""
    col = ad.sum_rows(t)
    return ad.segment_sum(col, np.zeros(col.shape[0], dtype=np.int64), 1)


class TestForwardSemantics:
    def test_matmul_matches_triple_loop(self):
        a, b = rand((2, 3), 1), rand((3, 2), 2)
        expected = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(3):
                    expected[i, j] += a[i, k] * b[k, j]
        assert np.allclose(ad.matmul(Tensor(a), Tensor(b)).data, expected)

    def test_segment_softmax_symmetry(self):
        out = ad.segment_softmax(Tensor([[1.0], [1.0]]), np.array([0, 0]))
        assert np.allclose(out.data, [[0.5], [0.5]])

    def test_segment_softmax_singleton(self):
        out = ad.segment_softmax(Tensor([[5.0]]), np.array([0]))
        assert np.allclose(out.data, [[1.0]])

    def test_segment_softmax_sums_to_one(self):
        rng = np.random.default_rng(3)
        scores = Tensor(rng.normal(size=(30, 1)) * 10)
        ids = np.sort(rng.integers(0, 7, size=30))
        out = ad.segment_softmax(scores, ids)
        sums = np.zeros(7)
        np.add.at(sums, ids, out.data.ravel())
        present = np.unique(ids)
        assert np.allclose(sums[present], 1.0, atol=1e-12)

    def test_segment_sum_basic(self):
        vals = Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = ad.segment_sum(vals, np.array([0, 0, 2]), num_segments=3)
        assert np.allclose(out.data, [[4, 6], [0, 0], [5, 6]])

    def test_unsorted_segments_rejected(self):
        with pytest.raises(UnsortedSegments):
            ad.segment_sum(Tensor(rand((3, 2))), np.array([1, 0, 2]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ad.matmul(Tensor(rand((2, 3))), Tensor(rand((2, 3))))
        with pytest.raises(ShapeMismatch):
            ad.add(Tensor(rand((2, 3))), Tensor(rand((3, 2))))
        with pytest.raises(ShapeMismatch):
            ad.hadamard(Tensor(rand((2, 3))), Tensor(rand((1, 3))))

    def test_elu_and_relu_values(self):
        x = Tensor([[-1.0, 0.0, 2.0]])
        assert np.allclose(ad.relu(x).data, [[0, 0, 2]])
        assert np.allclose(ad.elu(x).data, [[np.expm1(-1), 0, 2]])


class TestBackward:
    def test_grad_of_square_sum(self):
        x = parameter(rand((4, 3), 5))
        with Tape() as tape:
            loss = to_scalar(ad.hadamard(x, x))
        tape.backward(loss)
        assert np.allclose(x.grad, 2 * x.data)

    def test_sigmoid_grad_at_zero(self):
        x = parameter(np.zeros((1, 1)))
        with Tape():
            loss = ad.sigmoid(x)
            backward(loss)
        assert np.allclose(x.grad, 0.25)

    def test_grad_accumulates_until_zeroed(self):
        x = parameter(np.ones((1, 1)))
        for _ in range(2):
            with Tape() as tape:
                loss = ad.scale(x, 3.0)
            tape.backward(loss)
        assert np.allclose(x.grad, 6.0)
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss_rejected(self):
        x = parameter(rand((2, 2)))
        with Tape() as tape:
            y = ad.scale(x, 1.0)
        with pytest.raises(NonScalarLoss):
            tape.backward(y)

    def test_backward_linearity(self):
        xdata = rand((3, 3), 8)
        def grad_of(fn):
            x = parameter(xdata.copy())
            with Tape() as tape:
                loss = fn(x)
            tape.backward(loss)
            return x.grad
        f = lambda x: to_scalar(ad.exp(x))
        g = lambda x: to_scalar(ad.hadamard(x, x))
        combo = lambda x: ad.add(ad.scale(f(x), 2.0), ad.scale(g(x), -3.0))
        assert np.allclose(grad_of(combo), 2 * grad_of(f) - 3 * grad_of(g))

    def test_no_recording_outside_tape(self):
        x = parameter(rand((2, 2)))
        y = ad.sigmoid(x)
        assert y.tape is None and not y.requires_grad


UNARY_OPS = {
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "relu": ad.relu,
    "elu": ad.elu,
    "scale": lambda t: ad.scale(t, -2.5),
    "sum_rows": ad.sum_rows,
}


class TestGradientsAgainstFiniteDifferences:
    @pytest.mark.parametrize("name", sorted(UNARY_OPS))
    def test_unary(self, name):
        op = UNARY_OPS[name]
        x = parameter(rand((4, 3), seed=hash(name) % 100) + 0.01)
        err = finite_diff_check(lambda t: to_scalar(op(t)), [x])
        assert err < 1e-6, name

    def test_log(self):
        x = parameter(rand((4, 3), 3, lo=0.5, hi=2.0))
        assert finite_diff_check(lambda t: to_scalar(ad.log(t)), [x]) < 1e-6

    def test_matmul(self):
        a, b = parameter(rand((3, 4), 1)), parameter(rand((4, 2), 2))
        err = finite_diff_check(lambda x, y: to_scalar(ad.matmul(x, y)), [a, b])
        assert err < 1e-6

    def test_add_with_row_bias(self):
        a, b = parameter(rand((5, 3), 4)), parameter(rand((1, 3), 5))
        err = finite_diff_check(lambda x, y: to_scalar(ad.add(x, y)), [a, b])
        assert err < 1e-6

    def test_hadamard(self):
        a, b = parameter(rand((4, 4), 6)), parameter(rand((4, 4), 7))
        err = finite_diff_check(lambda x, y: to_scalar(ad.hadamard(x, y)), [a, b])
        assert err < 1e-6

    def test_gather_rows_with_repeats(self):
        x = parameter(rand((5, 3), 8))
        idx = np.array([0, 2, 2, 4, 0])
        err = finite_diff_check(lambda t: to_scalar(ad.gather_rows(t, idx)), [x])
        assert err < 1e-6

    def test_concat_cols(self):
        a, b = parameter(rand((3, 2), 9)), parameter(rand((3, 4), 10))
        err = finite_diff_check(lambda x, y: to_scalar(ad.concat_cols(x, y)), [a, b])
        assert err < 1e-6

    def test_segment_sum(self):
        x = parameter(rand((6, 3), 11))
        ids = np.array([0, 0, 1, 1, 1, 3])
        err = finite_diff_check(
            lambda t: to_scalar(ad.segment_sum(t, ids, 4)), [x])
        assert err < 1e-6

    def test_segment_softmax(self):
        x = parameter(rand((7, 1), 12) * 3)
        ids = np.array([0, 0, 0, 1, 1, 2, 2])
        # weight the softmax output so the gradient is not identically zero
        w = constant(rand((7, 1), 13))
        err = finite_diff_check(
            lambda t: to_scalar(ad.hadamard(ad.segment_softmax(t, ids), w)), [x])
        assert err < 1e-6

    def test_composite_graph(self):
        a = parameter(rand((4, 3), 14))
        b = parameter(rand((3, 5), 15))
        c = parameter(rand((1, 5), 16))
        def f(a, b, c):
            h = ad.elu(ad.add(ad.matmul(a, b), c))
            s = ad.sigmoid(h)
            return to_scalar(ad.hadamard(s, h))
        assert finite_diff_check(f, [a, b, c]) < 1e-6

    def test_linear_function_is_exact(self):
        x = parameter(rand((3, 3), 17))
        err = finite_diff_check(lambda t: to_scalar(ad.scale(t, 4.0)), [x])
        assert err < 1e-10

    def test_constant_function(self):
        x = parameter(rand((2, 2), 18))
        k = constant(np.ones((2, 2)))
        err = finite_diff_check(lambda t: to_scalar(ad.hadamard(k, k)), [x])
        assert err == 0.0

    def test_coordinate_subsampling(self):
        x = parameter(rand((10, 10), 19))
        err = finite_diff_check(lambda t: to_scalar(ad.hadamard(t, t)), [x],
                                max_coords_per_tensor=20)
        assert err < 1e-6
