"""Output Jacobians by truncated backpropagation through time.

The trainers need H_t = d(d_hat_t)/d(theta), the derivative of the
current prediction with respect to every weight. It is computed by
unrolling the chain rule backward over the last tau steps with two fixed
conventions:

* hard truncation: the state entering the window is treated as a
  constant, so nothing flows past the oldest buffered step;
* stale activations: the buffer keeps whatever activations the forward
  passes actually produced, and is never recomputed after a weight
  update. The backward pass pairs those buffered activations with the
  current weights.

Exactness against the finite-difference oracle therefore only holds for
sequences no longer than tau with no update in between, which is what
the tests assert.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import (
    DimensionMismatchError,
    LstmParams,
    LstmState,
    ModelDims,
    NodeSlice,
    cell_parts,
    output_layer,
    predict_step,
)

__all__ = [
    "EmptyContextError",
    "TbpttContext",
    "tbptt_jacobian",
    "slice_node_jacobian",
    "loss_gradient",
    "fd_jacobian",
]


class EmptyContextError(ValueError):
    """Jacobian requested before any forward step was taken."""


@dataclass
class _StepCache:
    u: np.ndarray
    z: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray
    y: np.ndarray


class TbpttContext:
    """Owns the recurrent state and the last `depth` steps of activations.

    One context belongs to one trainer; it is mutable, single-owner
    state. `advance` runs the forward pass (through the same code path as
    plain prediction), buffers the intermediates, and returns the
    prediction made with the given weights.
    """

    def __init__(self, dims: ModelDims, depth: int = 10):
        if depth < 1:
            raise ValueError("truncation depth must be >= 1")
        self.dims = dims
        self.depth = depth
        self.state = LstmState.zeros(dims)
        self._buffer: deque[_StepCache] = deque(maxlen=depth)
        self.t = 0

    def __len__(self) -> int:
        return len(self._buffer)

    def advance(self, params: LstmParams, x: np.ndarray) -> np.ndarray:
        u, z, i, f, o, c, tanh_c, y = cell_parts(params, x, self.state)
        self._buffer.append(
            _StepCache(u, z, i, f, o, self.state.c, tanh_c, y)
        )
        self.state = LstmState(c, y)
        self.t += 1
        return output_layer(params, y)


def tbptt_jacobian(ctx: TbpttContext, params: LstmParams) -> np.ndarray:
    """d(d_hat_t)/d(theta) over the buffered window; shape (n_d, n_params).

    All n_d output rows are propagated together, carried as the leading
    axis of the running gradients.
    """
    if len(ctx) == 0:
        raise EmptyContextError("no forward steps buffered")
    d = params.dims
    n_s, n_d, n_in = d.n_s, d.n_d, d.n_in
    w_d = params.w_d
    w_rec = params.w_gates[:, d.n_x :]  # recurrent part feeding y_{t-1}

    last = ctx._buffer[-1]
    d_hat = np.tanh(w_d @ last.y)
    dtanh = 1.0 - d_hat * d_hat  # (n_d,)

    grad_wd = np.zeros((n_d, n_d, n_s))
    grad_wd[np.arange(n_d), np.arange(n_d), :] = dtanh[:, None] * last.y
    grad_wg = np.zeros((n_d, 4 * n_s, n_in))

    g_y = dtanh[:, None] * w_d  # (n_d, n_s)
    g_c = np.zeros((n_d, n_s))
    for rec in reversed(ctx._buffer):
        g_o = g_y * rec.tanh_c
        g_c = g_c + g_y * rec.o * (1.0 - rec.tanh_c * rec.tanh_c)
        g_z = g_c * rec.i
        g_i = g_c * rec.z
        g_f = g_c * rec.c_prev
        g_pre = np.concatenate(
            [
                g_z * (1.0 - rec.z * rec.z),
                g_i * rec.i * (1.0 - rec.i),
                g_f * rec.f * (1.0 - rec.f),
                g_o * rec.o * (1.0 - rec.o),
            ],
            axis=1,
        )  # (n_d, 4*n_s), pre-activation order z, i, f, o
        grad_wg += g_pre[:, :, None] * rec.u[None, None, :]
        g_y = g_pre @ w_rec
        g_c = g_c * rec.f
    return np.concatenate(
        [grad_wg.reshape(n_d, -1), grad_wd.reshape(n_d, -1)], axis=1
    )


def slice_node_jacobian(h: np.ndarray, node: NodeSlice) -> np.ndarray:
    """Column restriction of H to one node's span."""
    return h[:, node.offset : node.stop]


def loss_gradient(h: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Gradient of ||d - d_hat||^2 w.r.t. theta: -2 H^T e."""
    return -2.0 * (h.T @ e)


def fd_jacobian(
    inputs: np.ndarray, params: LstmParams, h: float = 1e-4
) -> np.ndarray:
    """Central-difference Jacobian of the fully unfolded prediction.

    Runs the whole input sequence from zero initial state for every
    perturbed coordinate; O(n_params * L) forward steps, so keep the
    sequences short. This is the test oracle for tbptt_jacobian.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.dims.n_x:
        raise DimensionMismatchError(
            f"inputs must have shape (L, {params.dims.n_x})"
        )
    d = params.dims
    base = params.flat

    def unfolded(flat: np.ndarray) -> np.ndarray:
        p = LstmParams(d, flat)
        state = LstmState.zeros(d)
        out = np.zeros(d.n_d)
        for x in inputs:
            out, state = predict_step(p, x, state)
        return out

    jac = np.zeros((d.n_d, d.n_params))
    for k in range(d.n_params):
        bumped = base.copy()
        bumped[k] = base[k] + h
        hi = unfolded(bumped)
        bumped[k] = base[k] - h
        lo = unfolded(bumped)
        jac[:, k] = (hi - lo) / (2.0 * h)
    return jac
