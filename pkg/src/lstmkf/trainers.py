"""Online trainers: full EKF, decoupled EKF variants, a gated adaptive
variant, an exponentially weighted mixture over gate thresholds, and
first-order baselines.

Every trainer speaks the same streaming protocol:

    d_hat = trainer.predict(x_t)     # strictly before seeing d_t
    updated = trainer.observe(d_t)   # innovation-driven weight update

The Kalman trainers treat the flat weight vector as the hidden state of
a filter whose observation map is the LSTM prediction, linearized by the
TBPTT Jacobian H_t:

    G = P H^T (H P H^T + r I)^{-1}
    theta <- theta + G (d - d_hat)
    P <- sym((I - G H) P) + q I

The decoupled variants keep one small covariance block per node (one
gate-matrix row or one readout row) instead of the full n_theta^2
matrix, which drops the per-step cost by roughly the node count.

The gated variant only updates when the squared innovation exceeds
4*zeta_bar^2 and sets the per-node measurement noise adaptively to
3*Tr(H_i P_i H_i^T)/n_d. The mixture runs one gated trainer per
threshold on a halving grid and combines their predictions with
multiplicative weights exp(-loss/(8 n_d)), which buys a regret bound of
8 n_d ln N against the best threshold in hindsight.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import linalg
from .model import LstmParams, ModelDims, predict_step
from .tbptt import TbpttContext, loss_gradient, tbptt_jacobian

__all__ = [
    "InvalidZetaMinError",
    "NoiseSchedule",
    "block_kalman_update",
    "EkfTrainer",
    "DekfTrainer",
    "GatedDekfTrainer",
    "GatedDekfMixture",
    "FirstOrderTrainer",
    "zeta_grid",
    "TrainerStep",
    "RunResult",
    "train_online",
]

TRACE_TOL = 1e-10

# A node whose innovation signal Tr(H_i P_i H_i^T) falls below this is
# treated as carrying no information (the float64 reading of H_i == 0).
# The adaptive-noise gain scales like 1/||H_i||, so updating through a
# denormal-sized signal would command an astronomically large weight
# jump; such nodes are skipped, exactly like exact-zero Jacobians.
SIGNAL_FLOOR = 1e-30


class InvalidZetaMinError(ValueError):
    """zeta_min must lie strictly between 0 and sqrt(n_d)."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric interpolation from start to end over a step horizon.

    value(t) = start * (end/start)^(min(t, horizon)/horizon); t counts
    observe() calls from 0, so value(0) == start and value(horizon) and
    beyond == end.
    """

    start: float
    end: float
    horizon: int

    def __post_init__(self):
        if self.start <= 0 or self.end <= 0:
            raise ValueError("schedule values must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @classmethod
    def constant(cls, value: float) -> "NoiseSchedule":
        return cls(value, value, 1)

    def value(self, t: int) -> float:
        frac = min(t, self.horizon) / self.horizon
        return self.start * (self.end / self.start) ** frac


def zeta_grid(n_d: int, zeta_min: float) -> np.ndarray:
    """Halving grid of gate thresholds: sqrt(n_d), sqrt(n_d)/2, ...,
    then zeta_min appended exactly as the last entry."""
    top = float(np.sqrt(n_d))
    if not 0.0 < zeta_min < top:
        raise InvalidZetaMinError(
            f"zeta_min must be in (0, sqrt(n_d)) = (0, {top:g}), got {zeta_min!r}"
        )
    values = []
    v = top
    while v > zeta_min:
        values.append(v)
        v *= 0.5
    values.append(zeta_min)
    return np.asarray(values)


def block_kalman_update(
    theta, p, h, e, *, r=None, q=0.0, r_floor=0.0, trace_tol=TRACE_TOL
):
    """One decoupled Kalman step over a stack of same-sized blocks.

    theta: (B, L) block rows of the flat weight vector, updated in place
           (pass a reshaped view to write through to the flat vector).
    p:     (B, L, L) covariance blocks.
    h:     (B, n_d, L) per-block Jacobian slices.
    e:     (n_d,) shared innovation.
    r:     scalar or (B,) measurement noise; None selects the adaptive
           rule r_b = 3 * Tr(H_b P_b H_b^T) / n_d. Blocks whose signal
           Tr(H_b P_b H_b^T) does not clear SIGNAL_FLOOR carry no usable
           information and are left completely untouched.
    q:     scalar process noise added to the diagonal afterwards.
    r_floor: lower clamp on the adaptive r_b (ignored when r is given).
           The pure rule makes the per-block gain scale-free: H_b G_b is
           exactly 1/4 for n_d = 1 however small the Jacobian gets, so
           the commanded weight step grows like 1/||H_b|| and a
           weak-signal block is flung into saturation. Clamping r_b from
           below turns that regime into an ordinary damped Kalman step
           (gain -> P_b H_b^T / r_floor -> 0 as H_b -> 0) while leaving
           every block with 3 * Tr(H_b P_b H_b^T) / n_d >= r_floor on
           the unmodified rule. Zero disables the clamp.

    Returns (p_new, r_used, trace_violations) where trace_violations
    counts blocks for which Tr((I - G H) P) exceeded Tr(P) + trace_tol
    (analytically impossible; counted as a numerical health check).
    """
    b_count, block_len = theta.shape
    n_d = e.shape[0]
    hp = h @ p  # (B, n_d, L)
    s = hp @ np.swapaxes(h, 1, 2)  # (B, n_d, n_d)

    if r is None:
        signal = np.atleast_1d(linalg.trace(s))
        r_used = np.maximum(3.0 * signal / n_d, r_floor)
        live = signal > SIGNAL_FLOOR
        if not live.all():
            # Blocks with (numerically) zero Jacobian carry no information
            # under the adaptive rule; leave their theta and P untouched.
            idx = np.flatnonzero(live)
            p_new = p.copy()
            violations = 0
            if idx.size:
                th_sub = theta[idx]  # fancy index: a copy
                p_sub, _, violations = block_kalman_update(
                    th_sub, p[idx], h[idx], e,
                    r=r_used[idx], q=q, trace_tol=trace_tol,
                )
                theta[idx] = th_sub
                p_new[idx] = p_sub
            return p_new, r_used, violations
    else:
        r_used = np.broadcast_to(
            np.asarray(r, dtype=np.float64), (b_count,)
        )

    diag = np.arange(n_d)
    s[:, diag, diag] += r_used[:, None]
    x = np.linalg.solve(s, hp)  # (B, n_d, L) = S^{-1} H P
    g = np.swapaxes(x, 1, 2)  # (B, L, n_d) = P H^T S^{-1}
    theta += g @ e
    ghp = g @ hp  # (B, L, L)
    tr_drop = np.atleast_1d(linalg.trace(ghp))
    violations = int(np.sum(tr_drop < -trace_tol))
    p_new = linalg.symmetrize(p - ghp)
    if q:
        d = np.arange(block_len)
        p_new[:, d, d] += q
    if not linalg.cholesky_ok(p_new):
        for k in range(b_count):
            if not linalg.cholesky_ok(p_new[k]):
                p_new[k] = linalg.ensure_spd(p_new[k])
    return p_new, r_used, violations


class _RecurrentTrainer:
    """State shared by every trainer: weights, TBPTT context, step count."""

    def __init__(self, params: LstmParams, tbptt_depth: int = 10):
        self.params = params
        self.dims: ModelDims = params.dims
        self.ctx = TbpttContext(params.dims, tbptt_depth)
        self.t = 0
        self.n_updates = 0
        self.trace_violations = 0
        self._last_pred: np.ndarray | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Advance the recurrent state and return d_hat for this step."""
        self._last_pred = self.ctx.advance(self.params, x)
        return self._last_pred

    def observe(self, d: np.ndarray) -> bool:
        raise NotImplementedError

    def forecast(self, xs: np.ndarray) -> np.ndarray:
        """Open-loop rollout from the current state with frozen weights.

        Does not touch the trainer's own state; used for k-step-ahead
        evaluation.
        """
        state = self.ctx.state
        preds = np.zeros((len(xs), self.dims.n_d))
        for k, x in enumerate(xs):
            d_hat, state = predict_step(self.params, x, state)
            preds[k] = d_hat
        return preds

    def _innovation(self, d: np.ndarray) -> np.ndarray:
        if self._last_pred is None:
            raise RuntimeError("observe() called before predict()")
        return np.asarray(d, dtype=np.float64) - self._last_pred


class EkfTrainer(_RecurrentTrainer):
    """Extended Kalman filter over the full flat weight vector.

    Keeps the dense n_theta x n_theta covariance; every observe() costs
    O(n_theta^2). P is kept symmetric explicitly; a full factorization
    check only runs every spd_check_interval steps (and whenever the
    innovation solve fails) because at these sizes it costs more than
    the update itself.
    """

    def __init__(
        self,
        params: LstmParams,
        r_schedule: NoiseSchedule,
        q_schedule: NoiseSchedule,
        p0: float = 100.0,
        tbptt_depth: int = 10,
        spd_check_interval: int = 25,
    ):
        super().__init__(params, tbptt_depth)
        if p0 <= 0:
            raise ValueError("p0 must be positive")
        n = self.dims.n_params
        self.p = p0 * np.eye(n)
        self.r_schedule = r_schedule
        self.q_schedule = q_schedule
        self.spd_check_interval = spd_check_interval
        self._scratch = np.empty((n, n))

    def observe(self, d: np.ndarray) -> bool:
        e = self._innovation(d)
        r = self.r_schedule.value(self.t)
        q = self.q_schedule.value(self.t)
        h = tbptt_jacobian(self.ctx, self.params)
        hp = h @ self.p  # (n_d, n_theta)
        s = hp @ h.T
        s[np.diag_indices_from(s)] += r
        try:
            x = linalg.spd_solve(s, hp)  # S^{-1} H P
        except linalg.NotPositiveDefiniteError:
            # S = H P H^T + rI with r > 0 can only fail through a damaged
            # P; repair it once and retry before giving up.
            self.p = linalg.ensure_spd(self.p)
            hp = h @ self.p
            s = hp @ h.T
            s[np.diag_indices_from(s)] += r
            x = linalg.spd_solve(s, hp)
        self.params.flat += e @ x  # G e with G = (S^{-1} H P)^T
        np.matmul(x.T, hp, out=self._scratch)  # G H P
        if float(np.trace(self._scratch)) < -TRACE_TOL:
            self.trace_violations += 1
        np.subtract(self.p, self._scratch, out=self.p)
        np.add(self.p, self.p.T, out=self._scratch)
        np.multiply(self._scratch, 0.5, out=self.p)
        self.p[np.diag_indices_from(self.p)] += q
        self.t += 1
        self.n_updates += 1
        if self.spd_check_interval and self.t % self.spd_check_interval == 0:
            self.p = linalg.ensure_spd(self.p)
        elif not np.isfinite(self.p).all():
            self.p = linalg.ensure_spd(self.p)
        return True


class _BlockCovariance:
    """Per-node covariance storage: one stack per homogeneous node group.

    The node partition has 4*n_s gate rows of width n_x+n_s and n_d
    readout rows of width n_s, so two stacked arrays cover every block
    and all updates stay batched.
    """

    def __init__(self, dims: ModelDims, p0: float):
        self.dims = dims
        n_in, n_s, n_d = dims.n_in, dims.n_s, dims.n_d
        self.gate = np.zeros((4 * n_s, n_in, n_in))
        self.gate[:, np.arange(n_in), np.arange(n_in)] = p0
        self.out = np.zeros((n_d, n_s, n_s))
        self.out[:, np.arange(n_s), np.arange(n_s)] = p0

    def total_trace(self) -> float:
        return float(np.sum(linalg.trace(self.gate)) + np.sum(linalg.trace(self.out)))


def _split_jacobian(h: np.ndarray, dims: ModelDims):
    """Reshape H (n_d, n_theta) into per-node stacks matching the partition:
    gate part (4*n_s, n_d, n_in) and readout part (n_d, n_d, n_s)."""
    gs = dims.n_gate_params
    hg = h[:, :gs].reshape(dims.n_d, 4 * dims.n_s, dims.n_in).swapaxes(0, 1)
    ho = h[:, gs:].reshape(dims.n_d, dims.n_d, dims.n_s).swapaxes(0, 1)
    return hg, ho


class DekfTrainer(_RecurrentTrainer):
    """Decoupled EKF: independent Kalman filter per node.

    Same innovation as the full EKF, but the covariance is block
    diagonal over the node partition, with user-scheduled measurement
    and process noise. No gate: every step updates.
    """

    def __init__(
        self,
        params: LstmParams,
        r_schedule: NoiseSchedule,
        q_schedule: NoiseSchedule,
        p0: float = 100.0,
        tbptt_depth: int = 10,
    ):
        super().__init__(params, tbptt_depth)
        if p0 <= 0:
            raise ValueError("p0 must be positive")
        self.cov = _BlockCovariance(self.dims, p0)
        self.r_schedule = r_schedule
        self.q_schedule = q_schedule

    def _theta_views(self):
        d = self.dims
        flat = self.params.flat
        return (
            flat[: d.n_gate_params].reshape(4 * d.n_s, d.n_in),
            flat[d.n_gate_params :].reshape(d.n_d, d.n_s),
        )

    def _node_update(self, e: np.ndarray, r, q: float, r_floor: float = 0.0) -> None:
        h = tbptt_jacobian(self.ctx, self.params)
        hg, ho = _split_jacobian(h, self.dims)
        th_g, th_o = self._theta_views()
        self.cov.gate, _, v1 = block_kalman_update(
            th_g, self.cov.gate, hg, e, r=r, q=q, r_floor=r_floor
        )
        self.cov.out, _, v2 = block_kalman_update(
            th_o, self.cov.out, ho, e, r=r, q=q, r_floor=r_floor
        )
        self.trace_violations += v1 + v2
        self.n_updates += 1

    def observe(self, d: np.ndarray) -> bool:
        e = self._innovation(d)
        r = self.r_schedule.value(self.t)
        q = self.q_schedule.value(self.t)
        self._node_update(e, r, q)
        self.t += 1
        return True


class GatedDekfTrainer(DekfTrainer):
    """Decoupled EKF with an innovation gate and adaptive noise.

    Updates only when ||d - d_hat||^2 > 4*zeta_bar^2; on an update, each
    node's measurement noise is set to 3*Tr(H_i P_i H_i^T)/n_d rather
    than scheduled, clamped from below by r_floor (see
    block_kalman_update for why the clamp exists; r_floor=0 gives the
    unmodified rule). Steps that fail the gate leave weights and
    covariances bit-identical; only the step counter moves.
    """

    def __init__(
        self,
        params: LstmParams,
        zeta_bar: float,
        q_schedule: NoiseSchedule,
        p0: float = 10.0,
        tbptt_depth: int = 10,
        r_floor: float = 1.0,
    ):
        super().__init__(
            params,
            r_schedule=NoiseSchedule.constant(1.0),  # unused, gate sets r
            q_schedule=q_schedule,
            p0=p0,
            tbptt_depth=tbptt_depth,
        )
        if zeta_bar <= 0:
            raise ValueError("zeta_bar must be positive")
        if r_floor < 0:
            raise ValueError("r_floor must be >= 0")
        self.zeta_bar = zeta_bar
        self.gate_threshold = 4.0 * zeta_bar * zeta_bar
        self.r_floor = r_floor

    def observe(self, d: np.ndarray) -> bool:
        e = self._innovation(d)
        if float(e @ e) <= self.gate_threshold:
            self.t += 1
            return False
        q = self.q_schedule.value(self.t)
        self._node_update(e, r=None, q=q, r_floor=self.r_floor)
        self.t += 1
        return True


class GatedDekfMixture:
    """Exponentially weighted mixture of gated trainers over a threshold grid.

    Thresholds come from zeta_grid (halving from sqrt(n_d) down to
    zeta_min). All instances start from identical weights and
    covariances; each one predicts, gates and updates on its own error,
    and the mixture prediction is the weight-averaged instance
    prediction. Weights multiply by exp(-||d - d_hat_j||^2 / (8 n_d))
    and are stored as logs so thousands of steps cannot underflow them.
    """

    def __init__(
        self,
        params: LstmParams,
        zeta_min: float = 0.01,
        q_schedule: NoiseSchedule | None = None,
        p0: float = 10.0,
        tbptt_depth: int = 10,
        r_floor: float = 1.0,
    ):
        if q_schedule is None:
            q_schedule = NoiseSchedule.constant(1e-7)
        self.dims = params.dims
        self.grid = zeta_grid(params.dims.n_d, zeta_min)
        self.instances = [
            GatedDekfTrainer(params.copy(), z, q_schedule, p0, tbptt_depth, r_floor)
            for z in self.grid
        ]
        n = len(self.instances)
        self.log_w = np.full(n, -np.log(n))
        self.t = 0
        self.n_updates = 0
        self.instance_loss_sums = np.zeros(n)
        self.mixture_loss_sum = 0.0
        self._inst_preds: np.ndarray | None = None
        self._last_pred: np.ndarray | None = None

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def weights(self) -> np.ndarray:
        """Normalized mixture weights (sum to 1)."""
        return np.exp(self.log_w)

    @property
    def trace_violations(self) -> int:
        return sum(inst.trace_violations for inst in self.instances)

    @property
    def last_instance_predictions(self) -> np.ndarray | None:
        return self._inst_preds

    def predict(self, x: np.ndarray) -> np.ndarray:
        preds = np.stack([inst.predict(x) for inst in self.instances])
        self._inst_preds = preds
        self._last_pred = self.weights @ preds
        return self._last_pred

    def observe(self, d: np.ndarray) -> bool:
        if self._inst_preds is None or self._last_pred is None:
            raise RuntimeError("observe() called before predict()")
        d = np.asarray(d, dtype=np.float64)
        any_update = False
        for inst in self.instances:
            any_update = inst.observe(d) or any_update
        sq = np.sum((d - self._inst_preds) ** 2, axis=1)
        self.instance_loss_sums += sq
        err = d - self._last_pred
        self.mixture_loss_sum += float(err @ err)
        self.log_w -= sq / (8.0 * self.dims.n_d)
        self.log_w -= logsumexp(self.log_w)
        self.t += 1
        if any_update:
            self.n_updates += 1
        return any_update

    def forecast(self, xs: np.ndarray) -> np.ndarray:
        rollouts = np.stack([inst.forecast(xs) for inst in self.instances])
        return np.tensordot(self.weights, rollouts, axes=1)


class FirstOrderTrainer(_RecurrentTrainer):
    """SGD / RMSprop / Adam on the streaming squared loss.

    Uses the same TBPTT Jacobian as the Kalman trainers (gradient
    -2 H^T e), so baseline comparisons share one derivative pipeline.
    """

    KINDS = ("sgd", "rmsprop", "adam")

    def __init__(
        self,
        params: LstmParams,
        kind: str,
        learning_rate: float,
        tbptt_depth: int = 10,
        rmsprop_decay: float = 0.9,
        adam_betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        super().__init__(params, tbptt_depth)
        if kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}, got {kind!r}")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.kind = kind
        self.lr = learning_rate
        self.rmsprop_decay = rmsprop_decay
        self.adam_betas = adam_betas
        self.eps = eps
        n = self.dims.n_params
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self._applied = 0

    def apply_gradient(self, g: np.ndarray) -> None:
        flat = self.params.flat
        self._applied += 1
        if self.kind == "sgd":
            flat -= self.lr * g
        elif self.kind == "rmsprop":
            self.v = self.rmsprop_decay * self.v + (1.0 - self.rmsprop_decay) * g * g
            flat -= self.lr * g / (np.sqrt(self.v) + self.eps)
        else:  # adam
            b1, b2 = self.adam_betas
            self.m = b1 * self.m + (1.0 - b1) * g
            self.v = b2 * self.v + (1.0 - b2) * g * g
            m_hat = self.m / (1.0 - b1**self._applied)
            v_hat = self.v / (1.0 - b2**self._applied)
            flat -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def observe(self, d: np.ndarray) -> bool:
        e = self._innovation(d)
        h = tbptt_jacobian(self.ctx, self.params)
        self.apply_gradient(loss_gradient(h, e))
        self.t += 1
        self.n_updates += 1
        return True


@dataclass
class TrainerStep:
    """Record of one online step."""

    t: int
    prediction: np.ndarray
    loss: float
    updated: bool
    elapsed: float  # cumulative training-loop seconds up to this step


@dataclass
class RunResult:
    """Outcome of one train_online call."""

    steps: list[TrainerStep]
    diverged: bool = False
    forecast_sq_errors: np.ndarray | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([s.loss for s in self.steps])

    @property
    def predictions(self) -> np.ndarray:
        return np.stack([s.prediction for s in self.steps])

    @property
    def updates(self) -> int:
        return sum(1 for s in self.steps if s.updated)

    @property
    def elapsed(self) -> float:
        return self.steps[-1].elapsed if self.steps else 0.0


def train_online(trainer, stream, steps=None, forecast_horizon=None) -> RunResult:
    """Run a trainer over a stream: predict, then observe, one pair at a time.

    The prediction for step t is made strictly before d_t is shown to
    the trainer. Wall-clock accumulates around predict/observe only.
    When forecast_horizon=k is set, every step also rolls the frozen
    model forward k steps on the true upcoming inputs and records the
    squared error against d_{t+k} (used for k-step-ahead scoring).

    A non-finite loss ends the run early and marks it diverged.
    """
    x_arr = np.asarray(stream.x, dtype=np.float64)
    d_arr = np.asarray(stream.d, dtype=np.float64)
    total = len(x_arr) if steps is None else min(steps, len(x_arr))
    records: list[TrainerStep] = []
    fc_err = np.full(total, np.nan) if forecast_horizon else None
    cum = 0.0
    for t in range(total):
        tick = time.perf_counter()
        d_hat = trainer.predict(x_arr[t])
        updated = trainer.observe(d_arr[t])
        cum += time.perf_counter() - tick
        err = d_arr[t] - d_hat
        loss = float(err @ err)
        records.append(TrainerStep(t, d_hat, loss, updated, cum))
        if not np.isfinite(loss):
            return RunResult(records, diverged=True, forecast_sq_errors=fc_err)
        if forecast_horizon and t + forecast_horizon < total:
            preds = trainer.forecast(x_arr[t + 1 : t + 1 + forecast_horizon])
            fe = preds[-1] - d_arr[t + forecast_horizon]
            fc_err[t] = float(fe @ fe)
    return RunResult(records, forecast_sq_errors=fc_err)
