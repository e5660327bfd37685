"""Tensor kernel: forward values, gradient rules against finite differences, tape semantics."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcrnn import tensor as T
from pcrnn.errors import EvaluationError, GraphError, InvalidMaskError, ShapeError
from pcrnn.tensor import Graph, Tensor, grad_check


def param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. the array ``x`` (mutated in place)."""
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return out


def analytic_grad(build, params):
    for p in params:
        p.zero_grad()
    with Graph() as g:
        out = build()
        g.backward(out)
    return [p.grad.copy() for p in params]


def rel_err(a, b):
    return float(T.relative_error(a, b).max())


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(T.matmul(a, Tensor(np.eye(2))).values, a.values)

    def test_inner_product(self):
        out = T.matmul(Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[3.0], [4.0]])))
        assert out.values.tolist() == [[11.0]]

    def test_against_triple_loop(self, rng):
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        expected = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for r in range(4):
                    expected[i, j] += a[i, r] * b[r, j]
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).values, expected, rtol=0, atol=1e-12)

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_gradient_rule(self, rng):
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        ga, gb = analytic_grad(lambda: T.total(T.mul(T.matmul(a, b), Tensor(w))), [a, b])
        np.testing.assert_allclose(ga, w @ b.values.T, atol=1e-12)
        np.testing.assert_allclose(gb, a.values.T @ w, atol=1e-12)


class TestElementwise:
    def test_fixed_points(self):
        zero = Tensor(np.zeros(1))
        assert T.tanh(zero).values[0] == 0.0
        assert T.sigmoid(zero).values[0] == 0.5
        assert T.relu(Tensor(np.array([-1.0]))).values[0] == 0.0

    def test_add(self):
        assert T.add(Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0]))).values.tolist() == [4.0, 6.0]

    def test_bias_row_is_the_only_broadcast(self):
        x = Tensor(np.zeros((2, 3)))
        out = T.add(x, Tensor(np.array([1.0, 2.0, 3.0])))
        np.testing.assert_array_equal(out.values, [[1, 2, 3], [1, 2, 3]])
        with pytest.raises(ShapeError):
            T.add(x, Tensor(np.ones((1, 3))))
        with pytest.raises(ShapeError):
            T.mul(x, Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            T.sub(x, Tensor(np.ones((3, 2))))

    def test_sigmoid_is_stable_far_out(self):
        y = T.sigmoid(Tensor(np.array([-800.0, 800.0]))).values
        assert np.all(np.isfinite(y))
        np.testing.assert_array_equal(y, [0.0, 1.0])

    @pytest.mark.parametrize("kind", ["tanh", "sigmoid", "relu", "abs"])
    @pytest.mark.parametrize("seed", range(10))
    def test_unary_gradients(self, kind, seed):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=6)
        values[np.abs(values) < 1e-3] = 0.5  # keep kinks away from the stencil
        op = {"tanh": T.tanh, "sigmoid": T.sigmoid, "relu": T.relu, "abs": T.absolute}[kind]
        x = param(values)
        w = rng.normal(size=6)
        build = lambda: T.total(T.mul(op(x), Tensor(w)))  # noqa: E731
        (ga,) = analytic_grad(build, [x])
        gn = numeric_grad(lambda: float(build().values), x.values)
        assert rel_err(ga, gn) < 1e-6

    @pytest.mark.parametrize("kind", ["add", "sub", "mul"])
    @pytest.mark.parametrize("seed", range(10))
    def test_binary_gradients(self, kind, seed):
        rng = np.random.default_rng(seed)
        a, b = param(rng.normal(size=(2, 3))), param(rng.normal(size=(2, 3)))
        op = {"add": T.add, "sub": T.sub, "mul": T.mul}[kind]
        w = rng.normal(size=(2, 3))
        build = lambda: T.total(T.mul(op(a, b), Tensor(w)))  # noqa: E731
        ga, gb = analytic_grad(build, [a, b])
        assert rel_err(ga, numeric_grad(lambda: float(build().values), a.values)) < 1e-6
        assert rel_err(gb, numeric_grad(lambda: float(build().values), b.values)) < 1e-6

    def test_relu_gradient_is_zero_at_zero(self):
        x = param(np.array([0.0]))
        (g,) = analytic_grad(lambda: T.total(T.relu(x)), [x])
        assert g[0] == 0.0

    def test_log_floor(self):
        x = param(np.array([0.0, 0.5]))
        y = T.log(x, floor=1e-12)
        np.testing.assert_allclose(y.values, [np.log(1e-12), np.log(0.5)])
        (g,) = analytic_grad(lambda: T.total(T.log(x, floor=1e-12)), [x])
        np.testing.assert_allclose(g, [0.0, 2.0])

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
    def test_outputs_stay_finite(self, values):
        x = Tensor(np.array(values))
        for op in (T.tanh, T.sigmoid, T.relu, T.absolute):
            assert np.all(np.isfinite(op(x).values))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor(np.zeros(3))).values, [1 / 3] * 3, atol=1e-15)

    def test_two_to_one(self):
        np.testing.assert_allclose(T.softmax(Tensor(np.array([np.log(2.0), 0.0]))).values, [2 / 3, 1 / 3],
                                   atol=1e-15)

    def test_mask_contract(self):
        y = T.softmax(Tensor(np.array([5.0, 1.0, 9.0])), mask=np.array([True, False, True])).values
        assert y[1] == 0.0
        assert abs(y.sum() - 1.0) < 1e-12

    def test_all_masked_row_is_rejected(self):
        with pytest.raises(InvalidMaskError):
            T.softmax(Tensor(np.ones((2, 3))), mask=np.array([[True, False, False], [False, False, False]]))

    def test_large_scores_do_not_overflow(self):
        y = T.softmax(Tensor(np.array([1000.0, 999.0, -1000.0]))).values
        assert np.all(np.isfinite(y))
        assert abs(y.sum() - 1) < 1e-12

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.data())
    def test_sums_to_one_over_unmasked(self, values, data):
        mask = np.array(data.draw(st.lists(st.booleans(), min_size=len(values), max_size=len(values))))
        if not mask.any():
            mask[0] = True
        y = T.softmax(Tensor(np.array(values)), mask=mask).values
        assert np.all(y >= 0)
        assert abs(y[mask].sum() - 1.0) < 1e-9
        assert np.all(y[~mask] == 0.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        v = param(rng.normal(size=(2, 5)))
        mask = np.ones((2, 5), dtype=bool)
        mask[1, 3:] = False
        w = rng.normal(size=(2, 5))
        build = lambda: T.total(T.mul(T.softmax(v, mask), Tensor(w)))  # noqa: E731
        (g,) = analytic_grad(build, [v])
        assert rel_err(g, numeric_grad(lambda: float(build().values), v.values)) < 1e-5
        assert np.all(g[1, 3:] == 0.0)


class TestConcat:
    def test_values(self):
        out = T.concat([Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0]))])
        assert out.values.tolist() == [1.0, 2.0, 3.0]

    def test_paper_context_width(self):
        parts = [Tensor(np.ones(32)), Tensor(np.ones(16)), Tensor(np.ones(16))]
        assert T.concat(parts).shape == (64,)

    def test_backward_splits_ones(self):
        a, b = param(np.ones((2, 3))), param(np.ones((2, 1)))
        ga, gb = analytic_grad(lambda: T.total(T.concat([a, b], axis=1)), [a, b])
        np.testing.assert_array_equal(ga, np.ones((2, 3)))
        np.testing.assert_array_equal(gb, np.ones((2, 1)))

    def test_off_axis_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)

    @pytest.mark.parametrize("seed", range(20))
    def test_composed_gradient(self, seed):
        rng = np.random.default_rng(seed)
        a, b = param(rng.normal(size=(3, 2))), param(rng.normal(size=(3, 4)))
        w = param(rng.normal(size=(6, 2)))
        build = lambda: T.total(T.tanh(T.matmul(T.concat([a, b], axis=1), w)))  # noqa: E731
        grads = analytic_grad(build, [a, b, w])
        for p, g in zip([a, b, w], grads):
            assert rel_err(g, numeric_grad(lambda: float(build().values), p.values)) < 1e-5


class TestStructuralOps:
    @pytest.mark.parametrize("op", ["take", "select", "reshape", "expand", "stack", "index_rows", "pick",
                                    "linear", "batch_matvec", "where", "transpose"])
    def test_gradient(self, op, rng):
        x = param(rng.normal(size=(3, 4)))
        y = param(rng.normal(size=(3, 4)))
        w = param(rng.normal(size=(2, 4)))
        b = param(rng.normal(size=2))
        builders = {
            "take": lambda: T.take(x, 1, 3, axis=1),
            "select": lambda: T.select(x, 2, axis=0),
            "reshape": lambda: T.reshape(x, (4, 3)),
            "expand": lambda: T.expand(x, 1, 5),
            "stack": lambda: T.stack([x, y], axis=1),
            "index_rows": lambda: T.index_rows(x, np.array([0, 2, 0])),
            "pick": lambda: T.pick(x, np.array([3, 0, 1])),
            "linear": lambda: T.linear(x, w, b),
            "batch_matvec": lambda: T.batch_matvec(T.reshape(x, (3, 4)), T.expand(y, 2, 2)),
            "where": lambda: T.where(np.array([[True, False, True, False]] * 3), x, y),
            "transpose": lambda: T.transpose(x),
        }
        probe_shape = builders[op]().shape
        probe = rng.normal(size=probe_shape)
        build = lambda: T.total(T.mul(T.tanh(builders[op]()), Tensor(probe)))  # noqa: E731
        params = [x, y, w, b]
        grads = analytic_grad(build, params)
        for p, g in zip(params, grads):
            assert rel_err(g, numeric_grad(lambda: float(build().values), p.values)) < 1e-6

    def test_take_out_of_range(self):
        with pytest.raises(ShapeError):
            T.take(Tensor(np.ones((2, 3))), 2, 5, axis=1)


class TestLstmSequenceKernel:
    """The fused sequence kernel against a step-by-step numpy recurrence."""

    def reference(self, proj, w_hh, mask, reverse):
        batch, steps, four_d = proj.shape
        d = four_d // 4
        h = np.zeros((batch, d))
        c = np.zeros((batch, d))
        out = np.zeros((batch, steps, 2 * d))
        sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
        for k in (reversed(range(steps)) if reverse else range(steps)):
            a = proj[:, k] + h @ w_hh.T
            i, f, g, o = sig(a[:, :d]), sig(a[:, d:2 * d]), np.tanh(a[:, 2 * d:3 * d]), sig(a[:, 3 * d:])
            c_new = f * c + i * g
            h_new = o * np.tanh(c_new)
            live = mask[:, k:k + 1]
            h = np.where(live, h_new, h)
            c = np.where(live, c_new, c)
            out[:, k, :d], out[:, k, d:] = h, c
        return out

    @pytest.mark.parametrize("reverse", [False, True])
    def test_forward_matches_reference(self, reverse, rng):
        proj, w = rng.normal(size=(3, 5, 8)), rng.normal(size=(8, 2))
        mask = np.ones((3, 5), dtype=bool)
        mask[1, 3:] = False
        mask[2, 1:] = False
        got = T.lstm_sequence(Tensor(proj), Tensor(w), mask, reverse).values
        np.testing.assert_allclose(got, self.reference(proj, w, mask, reverse), atol=1e-12)

    @pytest.mark.parametrize("reverse", [False, True])
    def test_gradient(self, reverse, rng):
        proj, w = param(rng.normal(size=(2, 4, 8))), param(rng.normal(size=(8, 2)))
        mask = np.array([[True] * 4, [True, True, False, False]])
        probe = rng.normal(size=(2, 4, 4))
        build = lambda: T.total(T.mul(T.lstm_sequence(proj, w, mask, reverse), Tensor(probe)))  # noqa: E731
        gp, gw = analytic_grad(build, [proj, w])
        assert rel_err(gp, numeric_grad(lambda: float(build().values), proj.values)) < 1e-6
        assert rel_err(gw, numeric_grad(lambda: float(build().values), w.values)) < 1e-6


class TestBackward:
    def test_square(self):
        x = param(np.array([3.0]))
        (g,) = analytic_grad(lambda: T.total(T.mul(x, x)), [x])
        assert g[0] == 6.0

    def test_unused_parameter_gets_exact_zero(self):
        x, unused = param(np.array([2.0])), param(np.array([5.0]))
        gx, gu = analytic_grad(lambda: T.total(T.scale(x, 3.0)), [x, unused])
        assert gx[0] == 3.0 and gu[0] == 0.0

    def test_fan_out_sums_branches(self):
        x = param(np.array([0.7]))
        (g,) = analytic_grad(lambda: T.total(T.add(T.tanh(x), T.mul(x, x))), [x])
        assert abs(g[0] - ((1 - np.tanh(0.7) ** 2) + 2 * 0.7)) < 1e-15

    def test_gradients_accumulate_across_passes(self):
        x = param(np.array([1.5]))
        x.zero_grad()
        for _ in range(2):
            with Graph() as g:
                g.backward(T.total(T.scale(x, 2.0)))
        assert x.grad[0] == 4.0

    def test_seed_not_in_graph(self):
        x = param(np.array([1.0]))
        outside = T.total(T.scale(x, 2.0))
        with Graph() as g, pytest.raises(GraphError):
            g.backward(outside)

    def test_seed_must_be_scalar(self):
        x = param(np.ones(3))
        with Graph() as g:
            y = T.scale(x, 2.0)
            with pytest.raises(GraphError):
                g.backward(y)

    def test_nodes_visited_once_in_reverse_order(self):
        x = param(np.array([0.3, -0.2]))
        visits = []
        with Graph() as g:
            out = T.total(T.tanh(T.scale(x, 2.0)))
            for idx, node in enumerate(g.nodes):
                inner = node.backward
                node.backward = lambda grad, inner=inner, idx=idx: (visits.append(idx), inner(grad))[1]
            g.backward(out)
        assert visits == list(reversed(range(len(g.nodes))))

    def test_inputs_precede_outputs_on_tape(self, rng):
        x = param(rng.normal(size=(2, 3)))
        with Graph() as g:
            T.total(T.softmax(T.tanh(T.concat([x, x], axis=1))))
        seen = set()
        for node in g.nodes:
            for inp in node.inputs:
                assert inp.requires_grad or id(inp) in seen
            seen.add(id(node.output))

    def test_replay_is_bit_identical(self, rng):
        x = param(rng.normal(size=(4, 3)))
        w = param(rng.normal(size=(2, 3)))

        def run():
            x.zero_grad()
            w.zero_grad()
            with Graph() as g:
                y = T.total(T.softmax(T.linear(x, w)))
                g.backward(y)
            return y.values.copy(), x.grad.copy(), w.grad.copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_nothing_recorded_outside_a_graph(self):
        x = param(np.ones(2))
        with Graph() as g:
            pass
        T.tanh(x)
        assert g.nodes == []


class TestGradCheck:
    def test_quadratic_is_exact(self):
        p = param(np.array([0.5, -1.0, 2.0]))
        report = grad_check(lambda: T.total(T.mul(p, p)), {"p": p}, eps=1e-5)
        assert report.max_rel_error < 1e-9
        assert report.passed

    def test_corrupted_gradient_is_named(self):
        p = param(np.array([0.5, -1.0, 2.0]))
        q = param(np.array([1.0]))
        f = lambda: T.add(T.total(T.mul(p, p)), T.total(q))  # noqa: E731
        wrong = {"p": 2 * p.values + 0.1, "q": np.ones(1)}
        report = grad_check(f, {"p": p, "q": q}, analytic=wrong)
        assert not report.passed
        assert report.worst_param == "p"
        assert report.failing == ["p"]

    def test_non_finite_objective(self):
        p = param(np.array([0.0]))
        with pytest.raises(EvaluationError):
            grad_check(lambda: T.total(T.log(p)), {"p": p}, analytic={"p": np.zeros(1)})

    def test_relative_error_definition(self):
        assert T.relative_error(np.array([0.5]), np.array([0.25]))[0] == 0.25
        assert T.relative_error(np.array([10.0]), np.array([5.0]))[0] == 0.5
