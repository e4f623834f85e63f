"""Online LSTM regression with Kalman-filter trainers.

A small numpy/scipy library for streaming (one pass, predict before
update) training of a single-layer LSTM regressor, with a full-covariance
extended Kalman filter, decoupled per-node filters, a gated adaptive
variant, an exponentially weighted mixture over gate thresholds,
first-order baselines, and a benchmark harness around all of them.
"""

from .linalg import NotPositiveDefiniteError, ensure_spd, spd_solve, symmetrize
from .metrics import (
    ConfidenceBand,
    HorizonOutOfRangeError,
    ZeroVarianceError,
    confidence_band,
    knse,
    nse,
    sustainable_prediction,
)
from .model import (
    DimensionMismatchError,
    LstmParams,
    LstmState,
    ModelDims,
    NodeSlice,
    forward_cell,
    init_params,
    node_partition,
    output_layer,
    predict_step,
)
from .streams import (
    ConstantTargetError,
    ParseError,
    RaggedRowsError,
    RegressionStream,
    TargetScale,
    binary_addition_stream,
    load_delimited,
    scale_targets,
    teacher_lstm_stream,
)
from .tbptt import (
    EmptyContextError,
    TbpttContext,
    fd_jacobian,
    loss_gradient,
    slice_node_jacobian,
    tbptt_jacobian,
)
from .trainers import (
    DekfTrainer,
    EkfTrainer,
    FirstOrderTrainer,
    GatedDekfMixture,
    GatedDekfTrainer,
    InvalidZetaMinError,
    NoiseSchedule,
    RunResult,
    TrainerStep,
    block_kalman_update,
    train_online,
    zeta_grid,
)
from .harness import (
    BinaryAdditionOutcome,
    ExperimentConfig,
    ExperimentReport,
    OptimizerSpec,
    SweepConfig,
    TaskSpec,
    build_trainer,
    emit_outputs,
    grid_sweep,
    run_binary_addition,
    run_experiment,
)

__version__ = "0.1.0"
