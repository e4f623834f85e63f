"""Tests for the truncated-backprop Jacobian against finite differences."""

import numpy as np
import pytest

from lstmkf.model import (
    DimensionMismatchError,
    LstmParams,
    LstmState,
    ModelDims,
    init_params,
    node_partition,
    predict_step,
)
from lstmkf.tbptt import (
    EmptyContextError,
    TbpttContext,
    fd_jacobian,
    loss_gradient,
    slice_node_jacobian,
    tbptt_jacobian,
)


def run_context(params, xs, depth):
    ctx = TbpttContext(params.dims, depth)
    pred = None
    for x in xs:
        pred = ctx.advance(params, x)
    return ctx, pred


class TestJacobianVsFiniteDifferences:
    def test_matches_within_window(self):
        rng = np.random.default_rng(0)
        for model_seed, (n_x, n_s, n_d, length) in enumerate(
            [(2, 1, 1, 3), (3, 2, 1, 5), (2, 4, 2, 8), (3, 4, 2, 10)]
        ):
            dims = ModelDims(n_x, n_s, n_d)
            params = init_params(dims, 0.1, seed=model_seed)
            xs = rng.standard_normal((length, n_x))
            ctx, _ = run_context(params, xs, depth=16)
            h = tbptt_jacobian(ctx, params)
            fd = fd_jacobian(xs, params)
            assert np.allclose(h, fd, rtol=1e-5, atol=1e-8), (
                f"model {model_seed}: max abs diff {np.max(np.abs(h - fd))}"
            )

    def test_fd_step_halving_is_stable(self):
        rng = np.random.default_rng(3)
        dims = ModelDims(2, 2, 1)
        params = init_params(dims, 0.1, seed=8)
        xs = rng.standard_normal((4, 2))
        coarse = fd_jacobian(xs, params, h=1e-4)
        fine = fd_jacobian(xs, params, h=5e-5)
        assert np.max(np.abs(coarse - fine)) <= 1e-6

    def test_truncation_is_real(self):
        """Beyond the window the truncated Jacobian departs from a deeper one."""
        rng = np.random.default_rng(4)
        dims = ModelDims(2, 3, 1)
        params = init_params(dims, 0.8, seed=21)  # strong recurrence
        xs = rng.standard_normal((12, 2))
        shallow, _ = run_context(params, xs, depth=4)
        deep, _ = run_context(params, xs, depth=12)
        h_shallow = tbptt_jacobian(shallow, params)
        h_deep = tbptt_jacobian(deep, params)
        assert not np.array_equal(h_shallow, h_deep)

    def test_extra_depth_changes_nothing_within_window(self):
        rng = np.random.default_rng(5)
        dims = ModelDims(3, 3, 2)
        params = init_params(dims, 0.2, seed=6)
        xs = rng.standard_normal((7, 3))
        ctx_a, _ = run_context(params, xs, depth=7)
        ctx_b, _ = run_context(params, xs, depth=20)
        assert np.array_equal(tbptt_jacobian(ctx_a, params),
                              tbptt_jacobian(ctx_b, params))


class TestReadoutRows:
    def test_closed_form_readout_block(self):
        """Readout-weight columns equal (1 - d_hat^2) outer y exactly."""
        rng = np.random.default_rng(7)
        dims = ModelDims(3, 4, 2)
        params = init_params(dims, 0.3, seed=17)
        xs = rng.standard_normal((6, 3))
        ctx, d_hat = run_context(params, xs, depth=10)
        h = tbptt_jacobian(ctx, params)
        block = h[:, dims.n_gate_params :].reshape(dims.n_d, dims.n_d, dims.n_s)
        y = ctx.state.y
        expected = np.zeros_like(block)
        for j in range(dims.n_d):
            expected[j, j] = (1.0 - d_hat[j] ** 2) * y
        assert np.max(np.abs(block - expected)) <= 1e-12

    def test_zero_weights_zero_jacobian_readout(self):
        dims = ModelDims(2, 2, 1)
        params = LstmParams.zeros(dims)
        ctx, _ = run_context(params, np.ones((3, 2)), depth=5)
        h = tbptt_jacobian(ctx, params)
        # y_t = 0 under zero weights, so the readout block vanishes
        assert np.array_equal(h[:, dims.n_gate_params :], np.zeros((1, 2)))


class TestDepthOneConvention:
    def test_previous_state_is_constant(self):
        """With depth 1 the buffered previous state carries no derivative."""
        rng = np.random.default_rng(9)
        dims = ModelDims(2, 3, 1)
        params = init_params(dims, 0.4, seed=30)
        c0 = rng.standard_normal(3)
        y0 = rng.uniform(-0.9, 0.9, 3)
        x = rng.standard_normal(2)

        ctx = TbpttContext(dims, depth=1)
        ctx.state = LstmState(c0.copy(), y0.copy())
        ctx.advance(params, x)
        h = tbptt_jacobian(ctx, params)

        step = 1e-5
        fd = np.zeros_like(h)
        for k in range(dims.n_params):
            bumped = params.flat.copy()
            bumped[k] += step
            hi, _ = predict_step(LstmParams(dims, bumped), x, LstmState(c0, y0))
            bumped[k] -= 2 * step
            lo, _ = predict_step(LstmParams(dims, bumped), x, LstmState(c0, y0))
            fd[:, k] = (hi - lo) / (2 * step)
        assert np.allclose(h, fd, rtol=1e-5, atol=1e-8)


class TestNodeSlicing:
    def test_slices_reconstruct_jacobian(self):
        rng = np.random.default_rng(11)
        dims = ModelDims(3, 2, 2)
        params = init_params(dims, 0.2, seed=3)
        ctx, _ = run_context(params, rng.standard_normal((4, 3)), depth=8)
        h = tbptt_jacobian(ctx, params)
        parts = [slice_node_jacobian(h, s) for s in node_partition(dims)]
        assert np.array_equal(np.concatenate(parts, axis=1), h)

    def test_blockwise_product_identity(self):
        """Summing per-node contributions H_i v_i recovers H v."""
        rng = np.random.default_rng(12)
        dims = ModelDims(2, 3, 2)
        params = init_params(dims, 0.2, seed=4)
        ctx, _ = run_context(params, rng.standard_normal((5, 2)), depth=8)
        h = tbptt_jacobian(ctx, params)
        v = rng.standard_normal(dims.n_params)
        total = np.zeros(dims.n_d)
        for s in node_partition(dims):
            total += slice_node_jacobian(h, s) @ v[s.offset : s.stop]
        assert np.allclose(total, h @ v, rtol=0, atol=1e-12)


class TestLossGradient:
    def test_zero_error_zero_gradient(self, rng):
        h = rng.standard_normal((2, 7))
        assert np.array_equal(loss_gradient(h, np.zeros(2)), np.zeros(7))

    def test_scalar_formula(self):
        h = np.array([[1.0, -2.0, 0.5]])
        g = loss_gradient(h, np.array([0.25]))
        assert np.array_equal(g, -2 * 0.25 * h[0])

    def test_matches_loss_finite_differences(self):
        rng = np.random.default_rng(13)
        dims = ModelDims(2, 2, 2)
        params = init_params(dims, 0.1, seed=19)
        xs = rng.standard_normal((5, 2))
        d = rng.uniform(-1, 1, 2)
        ctx, d_hat = run_context(params, xs, depth=8)
        g = loss_gradient(tbptt_jacobian(ctx, params), d - d_hat)

        def loss(flat):
            p = LstmParams(dims, flat)
            state = LstmState.zeros(dims)
            out = None
            for x in xs:
                out, state = predict_step(p, x, state)
            return float(np.sum((d - out) ** 2))

        step = 1e-5
        fd = np.zeros(dims.n_params)
        for k in range(dims.n_params):
            bumped = params.flat.copy()
            bumped[k] += step
            hi = loss(bumped)
            bumped[k] -= 2 * step
            lo = loss(bumped)
            fd[k] = (hi - lo) / (2 * step)
        assert np.allclose(g, fd, rtol=1e-4, atol=1e-8)


class TestContextBasics:
    def test_empty_context_raises(self):
        dims = ModelDims(2, 2, 1)
        with pytest.raises(EmptyContextError):
            tbptt_jacobian(TbpttContext(dims, 5), LstmParams.zeros(dims))

    def test_buffer_depth_cap(self):
        dims = ModelDims(2, 2, 1)
        params = init_params(dims, 0.1, seed=1)
        ctx = TbpttContext(dims, depth=3)
        for t in range(7):
            ctx.advance(params, np.ones(2))
            assert len(ctx) == min(t + 1, 3)

    def test_invalid_depth(self):
        with pytest.raises(ValueError):
            TbpttContext(ModelDims(2, 2, 1), depth=0)

    def test_advance_returns_prediction(self):
        dims = ModelDims(2, 3, 2)
        params = init_params(dims, 0.3, seed=23)
        ctx = TbpttContext(dims, depth=4)
        state = LstmState.zeros(dims)
        for x in np.random.default_rng(2).standard_normal((5, 2)):
            expected, state = predict_step(params, x, state)
            assert np.array_equal(ctx.advance(params, x), expected)


class TestFdJacobian:
    def test_rejects_bad_step(self):
        dims = ModelDims(2, 2, 1)
        with pytest.raises(ValueError):
            fd_jacobian(np.ones((2, 2)), LstmParams.zeros(dims), h=0.0)

    def test_rejects_bad_input_shape(self):
        dims = ModelDims(2, 2, 1)
        with pytest.raises(DimensionMismatchError):
            fd_jacobian(np.ones((2, 3)), LstmParams.zeros(dims))
