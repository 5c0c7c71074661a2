"""From-scratch training with budget-scaled epochs.

A pruned network gets its epoch count scaled by the FLOPS ratio so the
total compute spent matches what the full network would have used. Runs
are seeded end to end: weight init, data order, and augmentation all
derive from one run seed, so paired comparisons see identical sample
streams.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import arch as A
from . import tensor as T
from .data import Dataset, augment_batch, derive_rng, derive_seed
from .errors import BudgetError, ConfigError, DivergenceError, NonFiniteError

OPTIMIZERS = ("sgd", "adam")
LR_POLICIES = ("step-decay", "cosine")


@dataclass(frozen=True)
class TrainSchedule:
    """Optimizer and schedule settings for one training run.

    ``effective_epochs`` is the number actually run; None means run the
    base count. Budget-scaled runs pass the output of ``budget_epochs``
    here.
    """
    base_epochs: int
    effective_epochs: int | None = None
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_policy: str = "step-decay"
    lr0: float = 0.1
    batch_size: int = 128
    label_smoothing: float = 0.0
    milestones: tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 0.1
    augment: bool = False

    def __post_init__(self):
        if self.base_epochs < 0:
            raise ConfigError("base_epochs must be >= 0")
        if self.effective_epochs is not None and self.effective_epochs < 0:
            raise ConfigError("effective_epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_policy not in LR_POLICIES:
            raise ConfigError(f"unknown lr policy {self.lr_policy!r}")
        if self.lr0 <= 0.0:
            raise ConfigError("lr0 must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if any(not 0.0 < m <= 1.0 for m in self.milestones):
            raise ConfigError("milestones are fractions in (0, 1]")

    @property
    def epochs(self) -> int:
        return (self.base_epochs if self.effective_epochs is None
                else self.effective_epochs)


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch metrics plus the one test-set reading taken at the end."""
    seed: int
    train_loss: tuple[float, ...]
    val_accuracy: tuple[float, ...]
    lr: tuple[float, ...]
    test_accuracy: float
    wall_time: float


def budget_epochs(base_epochs: int, full_flops: int,
                  pruned_flops: int) -> int:
    """Epoch count that spends the full model's compute on the pruned one."""
    if pruned_flops <= 0:
        raise BudgetError("pruned FLOPS must be positive")
    if pruned_flops > full_flops:
        raise BudgetError(
            f"pruned FLOPS {pruned_flops} exceeds full FLOPS {full_flops}")
    return round(base_epochs * full_flops / pruned_flops)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def epoch_lr(schedule: TrainSchedule, epoch: int, total_epochs: int) -> float:
    """Learning rate for a 0-based epoch index under the schedule policy."""
    if schedule.lr_policy == "cosine":
        return cosine_lr(epoch, max(1, total_epochs), schedule.lr0)
    passed = sum(1 for m in schedule.milestones
                 if epoch >= m * total_epochs)
    return schedule.lr0 * schedule.decay_factor ** passed


def label_smooth_loss(logits: T.Tensor, labels: np.ndarray, eps: float = 0.0,
                      tape: T.Tape | None = None) -> T.Tensor:
    """Cross-entropy against (1-eps) true-class + eps/K uniform targets."""
    if not 0.0 <= eps < 1.0:
        raise ConfigError("smoothing must lie in [0, 1)")
    return T.cross_entropy(logits, labels, smoothing=eps, tape=tape)


# ---------------------------------------------------------------------------
# lottery-ticket slicing

def lottery_slice_init(full_model: A.Model,
                       config: A.ChannelConfig | None) -> dict[str, np.ndarray]:
    """Sub-tensors of a full-width model's state along kept channels.

    Output-channel axes take the layer's kept set, input-channel axes the
    producing layer's, so connectivity is preserved and the sliced net
    computes exactly what the gated full net computes under 0/1 gates.
    """
    if full_model.config is not None:
        raise ConfigError("lottery slicing starts from a full-width model")
    widths = A.resolve_widths(full_model.arch, config)
    state = full_model.state_arrays()
    out: dict[str, np.ndarray] = {}
    for l in full_model.arch.layers:
        lw = widths[l.id]
        osel = (slice(None) if lw.out_idx is None
                else np.asarray(lw.out_idx, dtype=np.intp))
        isel = (slice(None) if lw.in_idx is None
                else np.asarray(lw.in_idx, dtype=np.intp))
        if l.kind in ("conv", "linear"):
            out[f"{l.id}.w"] = state[f"{l.id}.w"][osel][:, isel]
            if l.kind == "linear":
                out[f"{l.id}.b"] = state[f"{l.id}.b"][osel]
        elif l.kind == "depthwise-conv":
            out[f"{l.id}.w"] = state[f"{l.id}.w"][osel]
        elif l.kind == "batchnorm":
            for part in ("gamma", "beta", "running_mean", "running_var"):
                out[f"{l.id}.{part}"] = state[f"{l.id}.{part}"][osel]
    return out


def lottery_model(full_model: A.Model, config: A.ChannelConfig) -> A.Model:
    """Pruned model carrying the full model's sliced weights and stats."""
    pruned = A.Model(full_model.arch, config, seed=0)
    pruned.load_state(lottery_slice_init(full_model, config))
    return pruned


# ---------------------------------------------------------------------------
# training loop

def fit(model: A.Model, data: dict[str, Dataset], schedule: TrainSchedule,
        seed: int, checkpoint_sink=None) -> TrainReport:
    """Train ``model`` in place and report per-epoch metrics.

    ``checkpoint_sink(epoch, model)`` fires at epoch 0 (initial weights)
    and after every completed epoch. The test split is evaluated exactly
    once, after the last epoch.
    """
    for split in ("train", "val", "test"):
        if split not in data:
            raise ConfigError(f"missing data split {split!r}")
    train, val, test = data["train"], data["val"], data["test"]
    tensors = [t for _, t in model.trainable()]
    for t in tensors:
        t.requires_grad = True
    vel = [np.zeros_like(t.data) for t in tensors]
    m1 = [np.zeros_like(t.data) for t in tensors]
    m2 = [np.zeros_like(t.data) for t in tensors]
    total = schedule.epochs
    losses: list[float] = []
    accs: list[float] = []
    lrs: list[float] = []
    step = 0
    t0 = time.perf_counter()
    if checkpoint_sink is not None:
        checkpoint_sink(0, model)
    try:
        for epoch in range(total):
            lr = epoch_lr(schedule, epoch, total)
            order = derive_rng(seed, "scratch-shuffle",
                               str(epoch)).permutation(len(train.images))
            aug_rng = derive_rng(seed, "scratch-augment", str(epoch))
            loss_sum = 0.0
            seen = 0
            for i in range(0, len(order), schedule.batch_size):
                idx = order[i:i + schedule.batch_size]
                xb = train.images[idx]
                if schedule.augment:
                    xb = augment_batch(xb, aug_rng)
                tape = T.Tape()
                try:
                    logits = model.forward(xb, train=True, tape=tape)
                    loss = label_smooth_loss(logits, train.labels[idx],
                                             schedule.label_smoothing, tape)
                except NonFiniteError as exc:
                    raise DivergenceError(str(exc), step=epoch) from exc
                lval = loss.item()
                if not np.isfinite(lval):
                    raise DivergenceError("training loss is not finite",
                                          step=epoch)
                grads = tape.backward(loss, tensors)
                step += 1
                for j, t in enumerate(tensors):
                    g = grads[t] + schedule.weight_decay * t.data
                    if schedule.optimizer == "sgd":
                        vel[j] = schedule.momentum * vel[j] + g
                        t.data -= lr * vel[j]
                    else:
                        m1[j] = 0.9 * m1[j] + 0.1 * g
                        m2[j] = 0.999 * m2[j] + 0.001 * g * g
                        mhat = m1[j] / (1.0 - 0.9 ** step)
                        vhat = m2[j] / (1.0 - 0.999 ** step)
                        t.data -= lr * mhat / (np.sqrt(vhat) + 1e-8)
                loss_sum += lval * len(idx)
                seen += len(idx)
            losses.append(loss_sum / seen)
            accs.append(A.evaluate_accuracy(model, val.images, val.labels))
            lrs.append(lr)
            if checkpoint_sink is not None:
                checkpoint_sink(epoch + 1, model)
    finally:
        for t in tensors:
            t.requires_grad = False
    test_acc = A.evaluate_accuracy(model, test.images, test.labels)
    return TrainReport(seed=seed, train_loss=tuple(losses),
                       val_accuracy=tuple(accs), lr=tuple(lrs),
                       test_accuracy=test_acc,
                       wall_time=time.perf_counter() - t0)


def train_from_scratch(arch: A.ArchSpec, config: A.ChannelConfig | None,
                       data: dict[str, Dataset], schedule: TrainSchedule,
                       seed: int, checkpoint_sink=None) -> TrainReport:
    """Fresh seeded weights for ``config``, then a full ``fit`` run."""
    model = A.Model(arch, config, derive_seed(seed, "scratch-init"))
    return fit(model, data, schedule, seed, checkpoint_sink=checkpoint_sink)


# ---------------------------------------------------------------------------
# report serialization

def report_csv(report: TrainReport) -> str:
    """Per-epoch metrics as CSV (repr floats round-trip exactly)."""
    lines = ["epoch,lr,train_loss,val_acc"]
    rows = zip(report.lr, report.train_loss, report.val_accuracy)
    for e, (lr, tl, va) in enumerate(rows, start=1):
        lines.append(f"{e},{lr!r},{tl!r},{va!r}")
    return "\n".join(lines) + "\n"


def report_to_dict(report: TrainReport) -> dict:
    return {"seed": report.seed,
            "train_loss": list(report.train_loss),
            "val_accuracy": list(report.val_accuracy),
            "lr": list(report.lr),
            "test_accuracy": report.test_accuracy,
            "wall_time": report.wall_time}


def report_from_dict(d: dict) -> TrainReport:
    return TrainReport(seed=int(d["seed"]),
                       train_loss=tuple(d["train_loss"]),
                       val_accuracy=tuple(d["val_accuracy"]),
                       lr=tuple(d["lr"]),
                       test_accuracy=float(d["test_accuracy"]),
                       wall_time=float(d["wall_time"]))
