"""Training loop: Adam, reduce-on-plateau schedule, deterministic batching.

The learning rate starts at 1e-4 and divides by 10 whenever the epoch loss
has not improved by at least 1e-4 (absolute) for ``plateau_patience``
consecutive epochs.  All shuffling and dropout derives from the config seed,
so identical configs produce identical loss traces.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .classify import FlatModel
from .data import ImageLoader, ManifestEntry
from .ops import cross_entropy
from .tensor import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

TRACE_HEADER = ("epoch", "loss", "lr")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 8
    plateau_patience: int = 2
    plateau_factor: float = 10.0
    min_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive; got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1; got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1; got {self.batch_size}")
        if self.plateau_patience < 1:
            raise ValueError(f"plateau_patience must be >= 1; got {self.plateau_patience}")
        if self.plateau_factor <= 1:
            raise ValueError(f"plateau_factor must be > 1; got {self.plateau_factor}")


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    Parameters without an accumulated gradient are skipped; frozen layers are
    never in ``params`` at all, so they keep no optimizer state.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class PlateauScheduler:
    """Keras-style reduce-on-plateau with absolute improvement threshold.

    An epoch counts as improved only if it beats the best loss by at least
    ``min_delta``; after ``patience`` non-improving epochs in a row the rate
    divides by ``factor`` and the wait counter resets.
    """

    lr: float
    patience: int = 2
    factor: float = 10.0
    min_delta: float = 1e-4
    best: float = float("inf")
    wait: int = 0
    drops: list[int] = field(default_factory=list)

    def update(self, loss: float, epoch: int) -> float:
        """Fold in one epoch's loss; returns the rate for the next epoch."""
        if self.best - loss >= self.min_delta:
            self.best = loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr /= self.factor
                self.wait = 0
                self.drops.append(epoch)
        return self.lr


def lr_trace(
    losses,
    initial_lr: float = 1e-4,
    patience: int = 2,
    factor: float = 10.0,
    min_delta: float = 1e-4,
) -> list[float]:
    """Learning rate actually used in each epoch for a given loss sequence."""
    sched = PlateauScheduler(lr=initial_lr, patience=patience, factor=factor, min_delta=min_delta)
    used = []
    for epoch, loss in enumerate(losses, start=1):
        used.append(sched.lr)
        sched.update(float(loss), epoch)
    return used


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    loss: float
    lr: float


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in rows:
            writer.writerow([r.epoch, f"{r.loss:.6f}", f"{r.lr:.10g}"])


def read_trace(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_HEADER:
            raise ValueError(f"bad trace header {header!r}")
        return [TraceRow(int(e), float(l), float(r)) for e, l, r in reader]


def _batch_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, batch]).generate_state(1)[0])


def calibrate_bn_stats(network, images: np.ndarray, batch_size: int, seed: int) -> None:
    """Replace batch-norm running statistics with full-dataset moments.

    A momentum-0.99 running average needs thousands of updates before its
    initial values wash out, so after a short run the stored statistics still
    mostly reflect the init, and inference-mode normalization diverges from
    what the network saw in training.  This pass re-walks the data in train
    mode and folds the per-batch moments into an exact weighted average, so
    the stored statistics describe the trained network.  Frozen batch-norm
    layers keep their statistics untouched.
    """
    layers = [lp for lp in network.batch_norm_layers() if lp.trainable]
    if not layers:
        return
    for lp in layers:
        lp.bn_stats.mean[...] = 0.0
        lp.bn_stats.variance[...] = 0.0
    n = images.shape[0]
    seen = 0
    for batch_index, start in enumerate(range(0, n, batch_size)):
        x = Tensor(images[start : start + batch_size])
        size = x.data.shape[0]
        network.forward(
            x,
            mode="train",
            rng_seed=_batch_seed(seed, 0, batch_index),
            bn_momentum=seen / (seen + size),
        )
        seen += size


def train(
    model: FlatModel,
    entries: list[ManifestEntry],
    config: TrainConfig,
    loader: ImageLoader | None = None,
) -> list[TraceRow]:
    """Train a flat model on manifest rows; returns the per-epoch trace.

    Updates the model's parameter store in place.  Raises if the loss goes
    non-finite (with the offending epoch/batch in the message) rather than
    continuing silently.  Finishes with a batch-norm calibration pass over
    the training set so inference-mode statistics match the trained network
    even after a run too short for the running averages to converge.
    """
    if not entries:
        raise ValueError("training manifest is empty")
    if loader is None:
        loader = ImageLoader()
    label_to_index = {label: i for i, label in enumerate(model.labels)}
    for e in entries:
        if e.label not in label_to_index:
            raise ValueError(
                f"manifest row {e.path!r} has label {e.label!r} outside the model's "
                f"label set {model.labels}"
            )

    network = model.network
    params = network.trainable_params()
    state = AdamState()
    sched = PlateauScheduler(
        lr=config.learning_rate,
        patience=config.plateau_patience,
        factor=config.plateau_factor,
        min_delta=config.min_delta,
    )

    images = loader.batch(entries, model.resolution)
    labels = np.array([label_to_index[e.label] for e in entries], dtype=np.int64)
    n = len(entries)

    rows: list[TraceRow] = []
    for epoch in range(1, config.epochs + 1):
        lr_used = sched.lr
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed, epoch])
        ).permutation(n)
        total_loss = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            x = Tensor(images[idx])
            y = labels[idx]
            probs = network.forward(
                x, mode="train", rng_seed=_batch_seed(config.seed, epoch, batch_index)
            )
            loss = cross_entropy(probs, y)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise RuntimeError(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch {batch_index}; "
                    "check the learning rate and input scaling"
                )
            network.zero_grad()
            loss.backward()
            adam_step(params, state, lr_used)
            total_loss += loss_value * len(idx)
        epoch_loss = total_loss / n
        rows.append(TraceRow(epoch=epoch, loss=epoch_loss, lr=lr_used))
        sched.update(epoch_loss, epoch)
    calibrate_bn_stats(network, images, config.batch_size, config.seed)
    return rows
