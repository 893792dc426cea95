"""
Training loop, optimizer, learning-rate schedule and metrics

The loop follows the delta-learning recipe: compute the ground-truth fidelity gap, cut the aligned
sequence into windows, then per epoch shuffle the windows, run every batch through the network,
compute the residual loss and update the parameters with Adam. The learning rate is halved when
the epoch loss stagnates.
"""
import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from aero_fusion.dataset import NormStats, normalize, FLOAT_FORMAT
from aero_fusion.labels import HISTORY_COLUMNS, METRIC_NAMES
from aero_fusion.lgfnet import LGFNetModel, fgdl_loss, fuse_inference, window_table
from aero_fusion.tensor import Tensor, backward

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes NaN or infinite"""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch}: loss {loss}")


@dataclass
class TrainConfig:
    """
    Optimization settings

    The defaults are Adam with learning rate 5e-4, batches of 64 windows and a learning rate that is
    halved after 15 epochs without improvement of the training loss. A new model starts with a
    zeroed output head (*zero_head*), so the untrained network predicts no residual and the fused
    response starts at the low fidelity carrier.
    """
    learning_rate: float = 5e-4
    batch_size: int = 64
    epochs: int = 500
    factor: float = 0.5
    patience: int = 15
    min_delta: float = 1e-6
    min_lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    zero_head: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"Learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError(f"Batch size ({self.batch_size}) and epochs ({self.epochs}) must "
                             f"be >= 1")
        if not 0 < self.factor < 1:
            raise ValueError(f"Decay factor must lie in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ValueError(f"Patience must be >= 1, got {self.patience}")

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    """Adam moments per parameter, step count and learning rate"""
    first_moments: list
    second_moments: list
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    @classmethod
    def create(cls, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(first_moments=[np.zeros(param.shape) for param in params],
                   second_moments=[np.zeros(param.shape) for param in params],
                   learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(state, params, grads):
    """
    One bias-corrected Adam update, applied in place

    Parameters
    ----------
    state: OptimizerState
        Moments and step count, updated in place
    params: list of Tensor
        The parameters, in the order the moments were created
    grads: list of np.ndarray
        Gradients matching *params*
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise ValueError(f"Got {len(params)} parameters, {len(grads)} gradients and "
                         f"{len(state.first_moments)} moment accumulators")
    state.step += 1
    correction1 = 1 - state.beta1 ** state.step
    correction2 = 1 - state.beta2 ** state.step
    for i_param, (param, grad) in enumerate(zip(params, grads)):
        if grad.shape != param.shape:
            raise ValueError(f"Gradient {grad.shape} does not match parameter {param.name} "
                             f"{param.shape}")
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"Non-finite gradient for parameter {param.name}")
        first = state.beta1 * state.first_moments[i_param] + (1 - state.beta1) * grad
        second = state.beta2 * state.second_moments[i_param] + (1 - state.beta2) * grad * grad
        state.first_moments[i_param] = first
        state.second_moments[i_param] = second
        param.data -= state.learning_rate * (first / correction1) / (
            np.sqrt(second / correction2) + state.epsilon)
    return params, state


@dataclass
class SchedulerState:
    """Reduce-on-plateau bookkeeping"""
    learning_rate: float
    factor: float = 0.5
    patience: int = 15
    min_delta: float = 1e-6
    min_lr: float = 1e-6
    best: float = np.inf
    wait: int = 0
    stop: bool = False

    @classmethod
    def from_config(cls, config):
        return cls(learning_rate=config.learning_rate, factor=config.factor,
                   patience=config.patience, min_delta=config.min_delta, min_lr=config.min_lr)


def scheduler_step(state, epoch_loss):
    """
    Update the plateau counter with the loss of an epoch

    After *patience* epochs without an improvement of more than *min_delta*, the learning rate is
    multiplied by *factor*. A decay that would go below *min_lr* is not applied; instead the stop
    flag is raised.

    Returns
    -------
    float:
        The learning rate for the next epoch
    """
    if not np.isfinite(epoch_loss):
        raise ValueError(f"Scheduler got a non-finite loss {epoch_loss}")
    if epoch_loss < state.best - state.min_delta:
        state.best = epoch_loss
        state.wait = 0
        return state.learning_rate

    state.wait += 1
    if state.wait >= state.patience:
        state.wait = 0
        reduced = state.learning_rate * state.factor
        if reduced < state.min_lr:
            state.stop = True
            logger.info(f"Learning rate {state.learning_rate:.3g} reached its floor")
        else:
            state.learning_rate = reduced
            logger.info(f"Loss stagnated for {state.patience} epochs, learning rate reduced to "
                        f"{reduced:.3g}")
    return state.learning_rate


@dataclass
class Metrics:
    rmse: float
    mae: float
    r2: float
    r2_defined: bool = True

    def as_dict(self, prefix=""):
        return {f"{prefix}{name}": getattr(self, name) for name in METRIC_NAMES}


def evaluate_metrics(predictions, truth):
    """
    Root mean square error, mean absolute error and coefficient of determination

    When the truth is constant, R^2 is undefined and reported as NaN with ``r2_defined`` False
    """
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if predictions.shape != truth.shape:
        raise ValueError(f"Predictions {predictions.shape} and truth {truth.shape} differ in "
                         f"length")
    if len(truth) < 2:
        raise ValueError(f"Need at least 2 values to evaluate metrics, got {len(truth)}")
    error = predictions - truth
    rmse = float(np.sqrt(np.mean(error ** 2)))
    mae = float(np.mean(np.abs(error)))
    total = float(np.sum((truth - truth.mean()) ** 2))
    if total == 0:
        logger.warning("The truth is constant, R^2 is undefined")
        return Metrics(rmse=rmse, mae=mae, r2=float("nan"), r2_defined=False)
    return Metrics(rmse=rmse, mae=mae, r2=1.0 - float(np.sum(error ** 2)) / total)


@dataclass
class TrainReport:
    """Loss and learning rate per epoch, final metrics and wall time"""
    losses: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    train_metrics: Metrics = None
    test_metrics: Metrics = None
    wall_time: float = 0.0
    stopped_early: bool = False

    @property
    def n_epochs(self):
        return len(self.losses)

    def history_frame(self):
        return pd.DataFrame({HISTORY_COLUMNS[0]: np.arange(1, self.n_epochs + 1),
                             HISTORY_COLUMNS[1]: self.losses,
                             HISTORY_COLUMNS[2]: self.learning_rates})

    def summary(self):
        row = dict(epochs=self.n_epochs, final_loss=self.losses[-1] if self.losses else np.nan,
                   final_lr=self.learning_rates[-1] if self.learning_rates else np.nan,
                   stopped_early=self.stopped_early)
        for prefix, metrics in (("train_", self.train_metrics), ("test_", self.test_metrics)):
            if metrics is not None:
                row.update(metrics.as_dict(prefix))
        return row

    def to_csv(self, history_path, summary_path=None):
        """Write the per-epoch history and, optionally, the summary row"""
        self.history_frame().to_csv(history_path, index=False, float_format=FLOAT_FORMAT,
                                    lineterminator="\n")
        if summary_path is not None:
            pd.DataFrame([self.summary()]).to_csv(summary_path, index=False,
                                                  float_format=FLOAT_FORMAT, lineterminator="\n")


def training_windows(aligned, arch, input_stats, residual_stats):
    """Normalized input windows (K x L x d) and residual target windows (K x L x d_y)"""
    table = normalize(aligned.table, input_stats)
    target = normalize(aligned.delta, residual_stats)
    inputs = window_table(table, arch)
    targets = window_table(target, arch)
    return inputs.blocks, targets.blocks


def train(aligned, arch, config=None, seed=42, model=None):
    """
    Train the network on the residual of an aligned pair

    Parameters
    ----------
    aligned: AlignedPair
        Training rows of the aligned data, in sequence order
    arch: ArchConfig
        Architecture; its widths are set from the data
    config: TrainConfig
        Optimization settings
    seed: int
        Seed of the initialization, the dropout masks and the batch shuffle
    model: LGFNetModel or None
        Model to continue training; a new one is created when None

    Returns
    -------
    tuple:
        (LGFNetModel, TrainReport) with the model of the final epoch in evaluation mode

    Raises
    ------
    TrainingDivergedError:
        If a batch loss is not finite
    """
    config = config or TrainConfig()
    if len(aligned) == 0:
        raise ValueError("Cannot train on an empty aligned pair")
    arch.input_width = aligned.table.shape[1]
    arch.output_width = aligned.delta.shape[1]
    arch.validate()

    input_stats = NormStats.from_values(aligned.table,
                                        aligned.state_names + aligned.response_names)
    residual_stats = NormStats.from_values(aligned.delta)
    if model is None:
        model = LGFNetModel(arch, seed=seed, input_stats=input_stats,
                            residual_stats=residual_stats)
        if config.zero_head:
            model.zero_head()
    inputs, targets = training_windows(aligned, model.arch, model.input_stats,
                                       model.residual_stats)
    n_windows = len(inputs)
    batch_size = config.batch_size
    if batch_size > n_windows:
        logger.warning(f"Batch size {batch_size} exceeds the {n_windows} windows; using "
                       f"{n_windows}")
        batch_size = n_windows

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    params = model.parameters()
    optimizer = OptimizerState.create(params, config.learning_rate, config.beta1, config.beta2,
                                      config.epsilon)
    scheduler = SchedulerState.from_config(config)
    report = TrainReport()
    logger.info(f"Training {model} on {n_windows} windows, batch size {batch_size}")

    start_time = time.perf_counter()
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_windows)
        epoch_loss = 0.0
        for i_batch, start in enumerate(range(0, n_windows, batch_size)):
            rows = order[start:start + batch_size]
            prediction = model.forward(Tensor(inputs[rows]))
            loss = fgdl_loss(prediction, targets[rows][:, None, :, :])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, i_batch, value)
            grads = backward(loss, params)
            adam_step(optimizer, params, grads)
            epoch_loss += value * len(rows)
        epoch_loss /= n_windows

        report.losses.append(epoch_loss)
        report.learning_rates.append(optimizer.learning_rate)
        optimizer.learning_rate = scheduler_step(scheduler, epoch_loss)
        logger.debug(f"Epoch {epoch}: loss {epoch_loss:.6g}, lr {report.learning_rates[-1]:.3g}")
        if scheduler.stop:
            report.stopped_early = True
            logger.info(f"Stopping after epoch {epoch}: learning rate floor reached")
            break

    report.wall_time = time.perf_counter() - start_time
    logger.info(f"Trained {report.n_epochs} epochs in {report.wall_time:.1f} s, final loss "
                f"{report.losses[-1]:.6g}")
    return model.eval(), report


@dataclass
class SplitResult:
    """Everything produced by one train/infer/evaluate cycle"""
    model: LGFNetModel
    report: TrainReport
    delta: np.ndarray
    fused: np.ndarray
    train_rows: np.ndarray
    test_rows: np.ndarray


def run_split_experiment(aligned, train_rows, test_rows, arch, config=None, seed=42):
    """
    Train on the training rows, infer the full sequence and score train and test rows

    The metrics compare the fused response with the high fidelity truth. Inference runs over the
    whole aligned sequence so every row receives a prediction.
    """
    train_rows = np.asarray(train_rows, dtype=int)
    test_rows = np.asarray(test_rows, dtype=int)
    model, report = train(aligned.subset(train_rows), arch, config=config, seed=seed)
    result = fuse_inference(model, aligned.states, aligned.y_low)
    report.train_metrics = evaluate_metrics(result.fused[train_rows],
                                            aligned.y_high[train_rows])
    if len(test_rows) >= 2:
        report.test_metrics = evaluate_metrics(result.fused[test_rows], aligned.y_high[test_rows])
    return SplitResult(model=model, report=report, delta=result.delta, fused=result.fused,
                       train_rows=train_rows, test_rows=test_rows)
