"""Autodiff core: forward values against numpy, gradients against finite
differences, tape replay semantics, and shape discipline."""

import numpy as np
import pytest

import hamnet.tensor as T
from hamnet.errors import NumericalError, ShapeError
from hamnet.tensor import Tape, Tensor, check_gradients


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, coordinate by coordinate."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        up = f()
        flat[i] = saved - eps
        down = f()
        flat[i] = saved
        gf[i] = (up - down) / (2 * eps)
    return g


def tape_grad(build, params):
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = build()
    tape.backward(out)
    return [p.grad for p in params]


class TestForwardValues:
    def test_matmul_matches_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(b)).data, a @ b)

    def test_matmul_vector_cases(self):
        rng = np.random.default_rng(1)
        m, v = rng.normal(size=(3, 4)), rng.normal(size=4)
        np.testing.assert_allclose(T.matmul(Tensor(m), Tensor(v)).data, m @ v)
        np.testing.assert_allclose(T.matmul(Tensor(v), Tensor(m.T)).data, v @ m.T)
        out = T.matmul(Tensor(v), Tensor(v))
        assert out.data.shape == ()
        np.testing.assert_allclose(out.data, v @ v)

    def test_add_bias_broadcasts_rows_only(self):
        x = np.arange(6.0).reshape(2, 3)
        b = np.array([10.0, 20.0, 30.0])
        np.testing.assert_array_equal(T.add_bias(Tensor(x), Tensor(b)).data, x + b)
        with pytest.raises(ShapeError):
            T.add_bias(Tensor(x), Tensor(np.zeros(2)))

    def test_elementwise_ops_require_exact_shapes(self):
        a = Tensor(np.ones((2, 3)))
        with pytest.raises(ShapeError):
            T.add(a, Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            T.mul(a, Tensor(np.ones((3, 2))))
        with pytest.raises(ShapeError):
            T.matmul(a, Tensor(np.ones((2, 2))))

    def test_scalar_helpers(self):
        s = Tensor(np.asarray(2.0))
        x = Tensor(np.arange(3.0))
        np.testing.assert_array_equal(T.smul(s, x).data, [0.0, 2.0, 4.0])
        np.testing.assert_array_equal(T.scale(x, -1.0).data, [0.0, -1.0, -2.0])
        assert T.sum_all(x).item() == 3.0
        assert T.mean_all(x).item() == 1.0

    def test_shape_surgery(self):
        x = Tensor(np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(T.transpose(x).data, x.data.T)
        np.testing.assert_array_equal(T.reshape(x, (4, 3)).data, x.data.reshape(4, 3))
        np.testing.assert_array_equal(T.slice_rows(x, 1, 3).data, x.data[1:3])
        np.testing.assert_array_equal(T.slice_cols(x, 0, 2).data, x.data[:, :2])
        np.testing.assert_array_equal(T.take_row(x, 2).data, x.data[2])
        v = Tensor(np.array([1.0, 2.0]))
        np.testing.assert_array_equal(T.tile_rows(v, 3).data, np.tile([1.0, 2.0], (3, 1)))
        np.testing.assert_array_equal(T.tile_cols(v, 3).data,
                                      np.array([[1.0] * 3, [2.0] * 3]))

    def test_concat_and_gather(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.zeros((1, 3)))
        assert T.concat([a, b], axis=0).data.shape == (3, 3)
        with pytest.raises(ShapeError):
            T.concat([a, Tensor(np.zeros((1, 2)))], axis=0)
        table = Tensor(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(T.gather_rows(table, [2, 0, 2]).data,
                                      table.data[[2, 0, 2]])
        with pytest.raises(ShapeError):
            T.gather_rows(table, [4])


class TestSoftmax:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = rng.normal(scale=30.0, size=(5, 7))
        s = T.softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=1), np.ones(5), atol=1e-12)
        assert (s > 0).all()

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 6))
        base = T.softmax_rows(Tensor(x)).data
        shifted = T.softmax_rows(Tensor(x + 123.456)).data
        np.testing.assert_allclose(shifted, base, atol=1e-12)

    def test_extreme_values_stay_finite(self):
        x = np.array([[1000.0, 0.0, -1000.0]])
        s = T.softmax_rows(Tensor(x)).data
        assert np.isfinite(s).all()
        np.testing.assert_allclose(s[0, 0], 1.0, atol=1e-12)

    def test_single_element_row(self):
        np.testing.assert_array_equal(T.softmax_rows(Tensor(np.array([5.0]))).data, [1.0])

    def test_empty_distribution_rejected(self):
        with pytest.raises(ShapeError):
            T.softmax_rows(Tensor(np.zeros((0, 3))))
        with pytest.raises(ShapeError):
            T.softmax_rows(Tensor(np.zeros((3, 0))))


class TestLogsumexp:
    def test_matches_naive_on_moderate_values(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=9)
        out = T.logsumexp(Tensor(x)).item()
        np.testing.assert_allclose(out, np.log(np.exp(x).sum()), rtol=1e-12)

    def test_axis_reductions(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 4))
        ref0 = np.log(np.exp(x).sum(axis=0))
        ref1 = np.log(np.exp(x).sum(axis=1))
        np.testing.assert_allclose(T.logsumexp(Tensor(x), axis=0).data, ref0, rtol=1e-12)
        np.testing.assert_allclose(T.logsumexp(Tensor(x), axis=1).data, ref1, rtol=1e-12)

    def test_large_values_do_not_overflow(self):
        x = np.array([1000.0, 1000.0])
        np.testing.assert_allclose(T.logsumexp(Tensor(x)).item(),
                                   1000.0 + np.log(2.0), rtol=1e-12)


class TestLayerNorm:
    def test_rows_are_normalized(self):
        rng = np.random.default_rng(6)
        x = rng.normal(loc=3.0, scale=10.0, size=(6, 32))
        out = T.layer_norm_rows(Tensor(x)).data
        np.testing.assert_allclose(out.mean(axis=1), np.zeros(6), atol=1e-10)
        np.testing.assert_allclose(out.var(axis=1), np.ones(6), atol=1e-8)

    def test_constant_row_stays_finite(self):
        out = T.layer_norm_rows(Tensor(np.full((1, 4), 7.0))).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, np.zeros((1, 4)), atol=1e-6)


class TestTape:
    def test_backward_visits_each_node_once(self):
        # f(x) = sum(x * x): reusing x twice must accumulate, not double-run
        x = T.parameter(np.array([1.0, 2.0, 3.0]))
        with Tape() as tape:
            out = T.sum_all(T.mul(x, x))
        tape.backward(out)
        np.testing.assert_allclose(x.grad, 2 * x.data)
        assert len(tape.nodes) == 2

    def test_no_tape_means_no_recording(self):
        x = T.parameter(np.ones(3))
        out = T.mul(x, x)
        assert out.requires_grad is False

    def test_tapes_do_not_nest(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass

    def test_backward_requires_scalar(self):
        x = T.parameter(np.ones(3))
        with Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_grad_accumulates_across_backwards(self):
        x = T.parameter(np.array([2.0]))
        for _ in range(2):
            with Tape() as tape:
                out = T.sum_all(T.mul(x, x))
            tape.backward(out)
        np.testing.assert_allclose(x.grad, [8.0])  # 2 runs x 2x


class TestGradients:
    """Every primitive's backward against central differences."""

    CASES = [
        ("add", lambda p: T.sum_all(T.add(p[0], p[1])), [(3, 4), (3, 4)]),
        ("sub", lambda p: T.sum_all(T.mul(T.sub(p[0], p[1]), p[0])), [(3, 4), (3, 4)]),
        ("neg", lambda p: T.sum_all(T.mul(T.neg(p[0]), p[0])), [(5,)]),
        ("mul", lambda p: T.sum_all(T.mul(p[0], p[1])), [(2, 3), (2, 3)]),
        ("scale", lambda p: T.sum_all(T.mul(T.scale(p[0], 2.5), p[0])), [(4,)]),
        ("smul", lambda p: T.sum_all(T.smul(p[0], p[1])), [(), (3, 2)]),
        ("add_bias", lambda p: T.sum_all(T.mul(T.add_bias(p[0], p[1]), p[0])),
         [(3, 4), (4,)]),
        ("matmul22", lambda p: T.sum_all(T.matmul(p[0], p[1])), [(3, 4), (4, 2)]),
        ("matmul21", lambda p: T.sum_all(T.matmul(p[0], p[1])), [(3, 4), (4,)]),
        ("matmul12", lambda p: T.sum_all(T.matmul(p[0], p[1])), [(4,), (4, 3)]),
        ("matmul11", lambda p: T.matmul(p[0], p[1]), [(4,), (4,)]),
        ("transpose", lambda p: T.sum_all(T.matmul(T.transpose(p[0]), p[0])), [(3, 4)]),
        ("relu", lambda p: T.sum_all(T.relu(p[0])), [(4, 4)]),
        ("tanh", lambda p: T.sum_all(T.tanh(p[0])), [(3, 3)]),
        ("sigmoid", lambda p: T.sum_all(T.sigmoid(p[0])), [(3, 3)]),
        ("softmax", lambda p: T.sum_all(T.mul(T.softmax_rows(p[0]), p[0])), [(3, 5)]),
        ("logsumexp1", lambda p: T.logsumexp(p[0]), [(6,)]),
        ("logsumexp_ax0", lambda p: T.sum_all(T.logsumexp(p[0], axis=0)), [(3, 4)]),
        ("logsumexp_ax1", lambda p: T.sum_all(T.logsumexp(p[0], axis=1)), [(3, 4)]),
        ("layernorm", lambda p: T.sum_all(T.mul(T.layer_norm_rows(p[0]), p[0])), [(3, 6)]),
        ("reshape", lambda p: T.sum_all(T.mul(T.reshape(p[0], (6,)), T.reshape(p[0], (6,)))),
         [(2, 3)]),
        ("concat0", lambda p: T.sum_all(T.mul(T.concat([p[0], p[1]], axis=0),
                                              T.concat([p[0], p[1]], axis=0))),
         [(2, 3), (1, 3)]),
        ("concat1", lambda p: T.sum_all(T.mul(T.concat([p[0], p[1]], axis=1),
                                              T.concat([p[0], p[1]], axis=1))),
         [(2, 2), (2, 3)]),
        ("slice_rows", lambda p: T.sum_all(T.mul(T.slice_rows(p[0], 1, 3),
                                                 T.slice_rows(p[0], 1, 3))), [(4, 3)]),
        ("slice_cols", lambda p: T.sum_all(T.mul(T.slice_cols(p[0], 0, 2),
                                                 T.slice_cols(p[0], 0, 2))), [(3, 4)]),
        ("take_row", lambda p: T.sum_all(T.mul(T.take_row(p[0], 1), T.take_row(p[0], 1))),
         [(3, 4)]),
        ("tile_rows", lambda p: T.sum_all(T.mul(T.tile_rows(p[0], 3), T.tile_rows(p[0], 3))),
         [(4,)]),
        ("tile_cols", lambda p: T.sum_all(T.mul(T.tile_cols(p[0], 3), T.tile_cols(p[0], 3))),
         [(4,)]),
        ("gather", lambda p: T.sum_all(T.mul(T.gather_rows(p[0], [0, 2, 0]),
                                             T.gather_rows(p[0], [0, 2, 0]))), [(3, 2)]),
    ]

    @pytest.mark.parametrize("name,build,shapes", CASES, ids=[c[0] for c in CASES])
    def test_primitive_gradient(self, name, build, shapes):
        rng = np.random.default_rng(hash(name) % 2**32)
        params = [T.parameter(rng.normal(size=s)) for s in shapes]
        analytic = tape_grad(lambda: build(params), params)
        for p, g in zip(params, analytic):
            ref = numeric_grad(lambda: float(build(params).data), p.data)
            np.testing.assert_allclose(g, ref, rtol=1e-6, atol=1e-8)

    def test_dropout_mask_scales_gradient(self):
        x = T.parameter(np.ones((50, 4)))
        with Tape() as tape:
            out = T.sum_all(T.dropout(x, 0.5, np.random.default_rng(0)))
        tape.backward(out)
        kept = x.grad != 0.0
        np.testing.assert_allclose(x.grad[kept], 2.0)
        assert 0.3 < kept.mean() < 0.7

    def test_dropout_zero_rate_is_identity(self):
        x = T.parameter(np.ones((3, 3)))
        assert T.dropout(x, 0.0, np.random.default_rng(0)) is x


class TestCheckGradients:
    def test_quadratic_has_tiny_error(self):
        x = T.parameter(np.array([1.0, -2.0, 0.5]))
        err = check_gradients(lambda: T.sum_all(T.mul(x, x)), {"x": x})
        assert err < 1e-9

    def test_flags_a_wrong_gradient(self):
        # a deliberately broken op: forward x^2 but gradient reported as 1
        def bad_square(t):
            out = Tensor(t.data ** 2, requires_grad=T._tracing(t))
            if out.requires_grad:
                T._record(out, lambda g: t._accumulate(np.ones_like(t.data)))
            return out

        x = T.parameter(np.array([3.0]))
        err = check_gradients(lambda: T.sum_all(bad_square(x)), {"x": x})
        assert err > 0.5

    def test_sampling_limits_probe_count(self):
        x = T.parameter(np.random.default_rng(0).normal(size=(10, 10)))
        err = check_gradients(lambda: T.sum_all(T.mul(x, x)), {"x": x},
                              samples_per_param=5, rng=np.random.default_rng(1))
        assert err < 1e-9

    def test_nonfinite_objective_names_parameter(self):
        # test-local op with a pole: 1/x blows up when the probe hits zero
        def recip(t):
            with np.errstate(divide="ignore"):
                out = Tensor(1.0 / t.data, requires_grad=T._tracing(t))
            if out.requires_grad:
                T._record(out, lambda g: t._accumulate(-g / (t.data ** 2)))
            return out

        x = T.parameter(np.array([1e-5]))  # minus-epsilon probe lands exactly on 0
        with pytest.raises(NumericalError, match="'x'"):
            check_gradients(lambda: T.sum_all(recip(x)), {"x": x}, epsilon=1e-5)

    def test_rejects_vector_objective(self):
        x = T.parameter(np.ones(3))
        with pytest.raises(ShapeError):
            check_gradients(lambda: T.mul(x, x), {"x": x})


class TestDeterminism:
    def test_identical_runs_are_bit_identical(self):
        def run():
            rng = np.random.default_rng(42)
            x = T.parameter(rng.normal(size=(8, 8)))
            with Tape() as tape:
                out = T.sum_all(T.softmax_rows(T.matmul(x, T.transpose(x))))
            tape.backward(out)
            return out.data.copy(), x.grad.copy()

        (o1, g1), (o2, g2) = run(), run()
        assert o1.tobytes() == o2.tobytes()
        assert g1.tobytes() == g2.tobytes()
