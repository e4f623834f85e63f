"""Data sources: delimited regression files, the n-sequence binary
addition task, and a noisy teacher LSTM for controlled experiments.

Every source produces a RegressionStream whose inputs already carry the
constant 1.0 bias dimension and whose targets lie in [-1, 1]^{n_d}; the
trainers rely on both properties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LstmState, ModelDims, forward_cell, init_params

__all__ = [
    "ParseError",
    "RaggedRowsError",
    "ConstantTargetError",
    "TargetScale",
    "RegressionStream",
    "scale_targets",
    "load_delimited",
    "binary_addition_stream",
    "teacher_lstm_stream",
]


class ParseError(ValueError):
    """A cell failed to parse as a number; carries its 1-based position."""

    def __init__(self, row: int, col: int, text: str):
        self.row = row
        self.col = col
        super().__init__(f"row {row}, column {col}: cannot parse {text!r} as a number")


class RaggedRowsError(ValueError):
    """Rows of a delimited file disagree on column count."""


class ConstantTargetError(ValueError):
    """A target dimension has max == min; it cannot be scaled to [-1, 1]."""


@dataclass(frozen=True)
class TargetScale:
    """Per-dimension affine map between raw targets and [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def scale(self, raw: np.ndarray) -> np.ndarray:
        return 2.0 * (raw - self.lo) / (self.hi - self.lo) - 1.0

    def unscale(self, scaled: np.ndarray) -> np.ndarray:
        return self.lo + 0.5 * (scaled + 1.0) * (self.hi - self.lo)


@dataclass
class RegressionStream:
    """A finite stream of (input, target) pairs held as dense arrays.

    x has shape (length, n_x) with the bias column last; d has shape
    (length, n_d) with every entry in [-1, 1].
    """

    name: str
    x: np.ndarray
    d: np.ndarray
    target_scale: TargetScale | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.x.ndim != 2 or self.d.ndim != 2:
            raise ValueError("x and d must be 2-D arrays")
        if len(self.x) != len(self.d):
            raise ValueError("x and d must have the same length")

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    @property
    def n_d(self) -> int:
        return self.d.shape[1]

    def __len__(self) -> int:
        return len(self.x)

    def __iter__(self):
        for t in range(len(self.x)):
            yield self.x[t], self.d[t]

    def take(self, steps: int) -> "RegressionStream":
        """First `steps` pairs as a new stream (views, not copies)."""
        return RegressionStream(
            self.name, self.x[:steps], self.d[:steps], self.target_scale
        )


def scale_targets(raw: np.ndarray):
    """Affinely map each target dimension onto [-1, 1] using its min/max.

    Returns (scaled, TargetScale). The min/max come from the whole
    array in one pass, so the bounds are exact for the data given.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("targets must be a (length, n_d) array")
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    flat_dims = np.flatnonzero(hi == lo)
    if flat_dims.size:
        raise ConstantTargetError(
            f"target dimension(s) {flat_dims.tolist()} are constant"
        )
    ts = TargetScale(lo, hi)
    return ts.scale(raw), ts


def load_delimited(
    path,
    delimiter: str | None = None,
    target_columns=(-1,),
    has_header: bool = False,
) -> RegressionStream:
    """Load a delimited numeric text file as a regression stream.

    delimiter None means any whitespace. target_columns are 0-based
    file column indices (negatives allowed); all remaining columns
    become features, in file order, with a bias 1.0 appended. Targets
    are scaled to [-1, 1]. Malformed cells raise ParseError with their
    1-based file position; inconsistent widths raise RaggedRowsError.
    """
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if has_header and lineno == 1:
                continue
            stripped = line.strip()
            if not stripped:
                continue
            cells = stripped.split(delimiter)
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise RaggedRowsError(
                    f"row {lineno} has {len(cells)} columns, expected {width}"
                )
            parsed = []
            for colno, cell in enumerate(cells, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(lineno, colno, cell.strip()) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows)
    n_cols = data.shape[1]
    targets = [c % n_cols for c in target_columns]
    if len(set(targets)) != len(targets):
        raise ValueError("duplicate target columns")
    if len(targets) >= n_cols:
        raise ValueError("at least one feature column is required")
    feature_cols = [c for c in range(n_cols) if c not in targets]
    x = np.column_stack([data[:, feature_cols], np.ones(len(data))])
    d, ts = scale_targets(data[:, targets])
    return RegressionStream(str(path), x, d, ts)


def binary_addition_stream(n: int, seed: int, length: int) -> RegressionStream:
    """Stream of n simultaneous binary sequences plus their running sum bit.

    Bits arrive least-significant first, drawn i.i.d. Bernoulli(0.5). At
    each step the target is the current output bit of the n-way binary
    addition (sum of the incoming bits plus the carry, mod 2), mapped
    {0 -> -1, 1 -> +1}; the carry is the temporal state the model has to
    discover. Inputs are the n raw bits plus the bias, so n_x = n + 1.
    One continuous stream; the carry is never reset.
    """
    if n < 2:
        raise ValueError("need at least two summand sequences")
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(length, n))
    targets = np.empty(length, dtype=np.int64)
    carry = 0
    for t in range(length):
        s = int(bits[t].sum()) + carry
        targets[t] = s & 1
        carry = s >> 1
    x = np.column_stack([bits.astype(np.float64), np.ones(length)])
    d = (2.0 * targets - 1.0).reshape(-1, 1)
    return RegressionStream(f"binadd{n}-seed{seed}", x, d)


def teacher_lstm_stream(
    dims: ModelDims,
    teacher_seed: int,
    noise_std: float,
    input_seed: int,
    length: int,
    teacher_std: float = 0.5,
) -> RegressionStream:
    """Targets generated by a fixed, randomly drawn LSTM plus noise.

    The teacher's weights are Gaussian with std teacher_std (large
    enough for non-trivial dynamics); inputs are i.i.d. N(0,1) features
    with the bias appended; observation noise is added to the teacher's
    outputs and the result is clamped to [-1, 1]. Everything is seeded,
    so the same arguments always give the same stream.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    teacher = init_params(dims, teacher_std, teacher_seed)
    rng = np.random.default_rng(input_seed)
    feats = rng.standard_normal((length, dims.n_x - 1))
    x = np.column_stack([feats, np.ones(length)])
    outs = np.zeros((length, dims.n_d))
    state = LstmState.zeros(dims)
    w_d = teacher.w_d
    for t in range(length):
        state = forward_cell(teacher, x[t], state)
        outs[t] = np.tanh(w_d @ state.y)
    if noise_std > 0:
        outs = outs + noise_std * rng.standard_normal(outs.shape)
    d = np.clip(outs, -1.0, 1.0)
    return RegressionStream(
        f"teacher{dims.n_s}-t{teacher_seed}-i{input_seed}", x, d
    )
