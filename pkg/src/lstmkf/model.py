"""LSTM forward model, flat parameter packing, and the per-node partition.

The cell is the classic no-peephole LSTM driven by an input vector that
already carries its bias dimension (callers append a constant 1.0, the
cell never does):

    u_t = [x_t ; y_{t-1}]
    z_t = tanh(W_z u_t)          block input
    i_t = sigmoid(W_i u_t)       input gate
    f_t = sigmoid(W_f u_t)       forget gate
    c_t = i_t * z_t + f_t * c_{t-1}
    o_t = sigmoid(W_o u_t)       output gate
    y_t = o_t * tanh(c_t)
    d_t = tanh(W_d y_t)          readout

All weights live in one flat float64 vector: the rows of W_z, W_i, W_f,
W_o (each n_s x (n_x+n_s)), then the rows of W_d (n_d x n_s), each row
contiguous. The flat order is what defines node indices: each row is one
"node", the unit at which the decoupled trainers keep an independent
covariance block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "DimensionMismatchError",
    "ModelDims",
    "LstmParams",
    "LstmState",
    "NodeSlice",
    "init_params",
    "forward_cell",
    "output_layer",
    "predict_step",
    "node_partition",
]


class DimensionMismatchError(ValueError):
    """Input or state shape inconsistent with the model dimensions."""


@dataclass(frozen=True)
class ModelDims:
    """Model sizes: n_x inputs (bias included), n_s hidden units, n_d outputs."""

    n_x: int
    n_s: int
    n_d: int

    def __post_init__(self):
        for name in ("n_x", "n_s", "n_d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    @property
    def n_in(self) -> int:
        """Width of the concatenated cell input [x ; y]."""
        return self.n_x + self.n_s

    @property
    def n_gate_params(self) -> int:
        return 4 * self.n_s * self.n_in

    @property
    def n_params(self) -> int:
        return 4 * self.n_s * self.n_in + self.n_s * self.n_d

    @property
    def n_nodes(self) -> int:
        return 4 * self.n_s + self.n_d


@dataclass
class LstmParams:
    """Flat parameter vector plus structured views into it.

    The views share memory with `flat`, so in-place updates through
    either side stay consistent and the flat/structured round trip is
    exact by construction.
    """

    dims: ModelDims
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.dims.n_params,):
            raise DimensionMismatchError(
                f"flat vector has shape {self.flat.shape}, "
                f"expected ({self.dims.n_params},)"
            )

    @classmethod
    def zeros(cls, dims: ModelDims) -> "LstmParams":
        return cls(dims, np.zeros(dims.n_params))

    def copy(self) -> "LstmParams":
        return LstmParams(self.dims, self.flat.copy())

    @property
    def w_gates(self) -> np.ndarray:
        """All four gate matrices stacked: rows z, i, f, o; shape (4*n_s, n_x+n_s)."""
        d = self.dims
        return self.flat[: d.n_gate_params].reshape(4 * d.n_s, d.n_in)

    @property
    def w_z(self) -> np.ndarray:
        return self.w_gates[: self.dims.n_s]

    @property
    def w_i(self) -> np.ndarray:
        return self.w_gates[self.dims.n_s : 2 * self.dims.n_s]

    @property
    def w_f(self) -> np.ndarray:
        return self.w_gates[2 * self.dims.n_s : 3 * self.dims.n_s]

    @property
    def w_o(self) -> np.ndarray:
        return self.w_gates[3 * self.dims.n_s :]

    @property
    def w_d(self) -> np.ndarray:
        d = self.dims
        return self.flat[d.n_gate_params :].reshape(d.n_d, d.n_s)


@dataclass
class LstmState:
    """Cell state c and hidden output y; both length n_s."""

    c: np.ndarray
    y: np.ndarray

    @classmethod
    def zeros(cls, dims: ModelDims) -> "LstmState":
        return cls(np.zeros(dims.n_s), np.zeros(dims.n_s))

    def copy(self) -> "LstmState":
        return LstmState(self.c.copy(), self.y.copy())


@dataclass(frozen=True)
class NodeSlice:
    """One node's contiguous span in the flat parameter vector."""

    index: int
    offset: int
    length: int

    @property
    def stop(self) -> int:
        return self.offset + self.length


def init_params(dims: ModelDims, std_dev: float, seed: int) -> LstmParams:
    """i.i.d. zero-mean Gaussian parameters from a seeded generator."""
    if std_dev < 0:
        raise ValueError("std_dev must be non-negative")
    rng = np.random.default_rng(seed)
    return LstmParams(dims, std_dev * rng.standard_normal(dims.n_params))


def _check_input(dims: ModelDims, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dims.n_x,):
        raise DimensionMismatchError(
            f"input has shape {x.shape}, expected ({dims.n_x},)"
        )
    return x


def cell_parts(params: LstmParams, x: np.ndarray, prev: LstmState):
    """One cell step, returning every intermediate the backward pass needs.

    Returns (u, z, i, f, o, c, tanh_c, y). forward_cell and the TBPTT
    buffer both go through here so the stored activations are exactly the
    ones the prediction used.
    """
    d = params.dims
    x = _check_input(d, x)
    if prev.y.shape != (d.n_s,) or prev.c.shape != (d.n_s,):
        raise DimensionMismatchError("state vectors must have length n_s")
    u = np.concatenate([x, prev.y])
    a = params.w_gates @ u
    n_s = d.n_s
    z = np.tanh(a[:n_s])
    i = expit(a[n_s : 2 * n_s])
    f = expit(a[2 * n_s : 3 * n_s])
    o = expit(a[3 * n_s :])
    c = i * z + f * prev.c
    tanh_c = np.tanh(c)
    y = o * tanh_c
    return u, z, i, f, o, c, tanh_c, y


def forward_cell(params: LstmParams, x: np.ndarray, prev: LstmState) -> LstmState:
    """Advance the cell one step."""
    _, _, _, _, _, c, _, y = cell_parts(params, x, prev)
    return LstmState(c, y)


def output_layer(params: LstmParams, y: np.ndarray) -> np.ndarray:
    """Readout d = tanh(W_d y); every entry strictly inside (-1, 1)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (params.dims.n_s,):
        raise DimensionMismatchError(
            f"hidden vector has shape {y.shape}, expected ({params.dims.n_s},)"
        )
    return np.tanh(params.w_d @ y)


def predict_step(params: LstmParams, x: np.ndarray, prev: LstmState):
    """forward_cell followed by output_layer: returns (d_hat, next_state)."""
    state = forward_cell(params, x, prev)
    return output_layer(params, state.y), state


def node_partition(dims: ModelDims) -> list[NodeSlice]:
    """The per-node covariance partition of the flat vector.

    4*n_s gate nodes of length n_x+n_s (one per gate-matrix row, in flat
    order) followed by n_d output nodes of length n_s. The slices are
    disjoint and cover [0, n_params) exactly.
    """
    slices = []
    offset = 0
    for k in range(4 * dims.n_s):
        slices.append(NodeSlice(k, offset, dims.n_in))
        offset += dims.n_in
    for k in range(dims.n_d):
        slices.append(NodeSlice(4 * dims.n_s + k, offset, dims.n_s))
        offset += dims.n_s
    return slices
