"""Channel-importance learning on frozen random weights.

Per-channel gates in [0,1] multiply the outputs of selected batch-norm
layers. Only the gates receive gradient updates: the optimizer walks
them down a classification loss plus a sparsity penalty that pulls the
element-wise mean of all gates toward a target ratio, projecting back
into the box after every step. Weights never enter the gradient target
set, so they stay bitwise intact; batch-norm running statistics do
update, since the forward pass runs in training mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .arch import Model, evaluate_accuracy
from .data import Dataset, derive_rng
from .errors import ConfigError, DivergenceError, NonFiniteError

PENALTY_KINDS = ("ratio", "l1")


@dataclass
class GateState:
    """Per-gated-layer gate vectors plus the optimizer step counter."""
    lam: list[np.ndarray]
    step: int = 0

    @property
    def sparsity(self) -> float:
        """Element-wise mean of all gates across layers."""
        total = sum(float(np.sum(v, dtype=np.float64)) for v in self.lam)
        count = sum(v.size for v in self.lam)
        return total / count

    def copy(self) -> "GateState":
        return GateState([v.copy() for v in self.lam], self.step)


@dataclass(frozen=True)
class GateSnapshot:
    """Gate values at one evaluation point during importance learning.

    ``train_loss`` is the mean classification loss over the batches of
    the enclosing epoch seen so far (train-mode statistics)."""
    gates: GateState
    val_accuracy: float
    epoch: int
    sparsity: float
    train_loss: float


@dataclass(frozen=True)
class ImportanceConfig:
    """Hyperparameters for channel-importance learning."""
    gamma: float = 0.5
    target_sparsity: float = 0.5
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    penalty: str = "ratio"
    evals_per_epoch: int = 1

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.target_sparsity <= 1.0:
            raise ConfigError(
                f"target sparsity must be in (0, 1], got "
                f"{self.target_sparsity}")
        if self.penalty not in PENALTY_KINDS:
            raise ConfigError(f"penalty must be one of {PENALTY_KINDS}")
        if self.evals_per_epoch < 1:
            raise ConfigError("need at least one evaluation per epoch")


def _vectors(gates) -> list[np.ndarray]:
    return list(getattr(gates, "lam", gates))


def sparsity_penalty(gates, r: float, kind: str = "ratio") -> float:
    """Squared deviation of the mean gate from ``r`` (kind "ratio"), or
    the normalized l1 mass itself (kind "l1"). All gates are in [0,1],
    so the l1 norm is a plain sum. Accumulated in float64."""
    vectors = _vectors(gates)
    total = sum(float(np.sum(v, dtype=np.float64)) for v in vectors)
    count = sum(v.size for v in vectors)
    mean = total / count
    if kind == "l1":
        return mean
    return (mean - r) ** 2


def sparsity_penalty_grad(gates, r: float,
                          kind: str = "ratio") -> list[np.ndarray]:
    """Subgradient of ``sparsity_penalty`` per gate entry: uniform
    2(mean - r)/count for "ratio", 1/count for "l1"."""
    vectors = _vectors(gates)
    count = sum(v.size for v in vectors)
    if kind == "l1":
        g = 1.0 / count
    else:
        total = sum(float(np.sum(v, dtype=np.float64)) for v in vectors)
        g = 2.0 * (total / count - r) / count
    return [np.full_like(v, g) for v in vectors]


def project_gates(gates: GateState) -> GateState:
    """Clamp every gate into [0, 1], in place, and return the state."""
    for v in gates.lam:
        np.clip(v, 0.0, 1.0, out=v)
    return gates


def init_gates(model: Model) -> GateState:
    """All-ones gates (identity modulation) sized to the gated layers."""
    lam = [np.ones(model.widths[lid].cout, dtype=T.default_dtype())
           for lid in model.placement.gated_layer_ids]
    return GateState(lam)


def as_gate_dict(model: Model, gates) -> dict[str, T.Tensor]:
    """Wrap gate vectors as tensors keyed by gated layer id."""
    vectors = _vectors(gates)
    ids = model.placement.gated_layer_ids
    if len(vectors) != len(ids):
        raise ConfigError(
            f"{len(vectors)} gate vectors for {len(ids)} gated layers")
    return {lid: T.Tensor(v) for lid, v in zip(ids, vectors)}


def objective(model: Model, images: np.ndarray, labels: np.ndarray,
              gates, gamma: float, r: float, kind: str = "ratio",
              train: bool = False) -> float:
    """Classification loss plus weighted sparsity penalty, as a float."""
    logits = model.forward(images, train=train, gates=as_gate_dict(model,
                                                                   gates))
    ce = T.cross_entropy(logits, labels)
    return float(ce) + gamma * sparsity_penalty(gates, r, kind)


def learn_channel_importance(model: Model, train: Dataset, val: Dataset,
                             cfg: ImportanceConfig,
                             seed: int) -> list[GateSnapshot]:
    """Adaptive-moment subgradient descent on the gates of ``model``.

    The model's weights are left untouched (they are never gradient
    targets); batch-norm running statistics update as a side effect of
    train-mode forward passes. Returns one snapshot per evaluation point,
    at least one per epoch, each carrying a deep copy of the gates and
    its validation accuracy.
    """
    if val.split == "test" or train.split == "test":
        raise ConfigError("importance learning must not touch the test split")
    state = init_gates(model)
    gate_ts = [T.Tensor(v, requires_grad=True) for v in state.lam]
    gate_map = dict(zip(model.placement.gated_layer_ids, gate_ts))
    m = [np.zeros_like(v) for v in state.lam]
    v2 = [np.zeros_like(v) for v in state.lam]
    snapshots: list[GateSnapshot] = []
    n = len(train)
    steps_per_epoch = max(1, (n + cfg.batch_size - 1) // cfg.batch_size)
    eval_every = max(1, steps_per_epoch // cfg.evals_per_epoch)

    epoch_ce = [0.0, 0]  # running (sum, count) of batch losses

    def take_snapshot(epoch: int) -> None:
        acc = evaluate_accuracy(model, val.images, val.labels,
                                gates=as_gate_dict(model, state))
        snap = state.copy()
        mean_ce = epoch_ce[0] / max(1, epoch_ce[1])
        snapshots.append(GateSnapshot(snap, acc, epoch, snap.sparsity,
                                      mean_ce))

    for epoch in range(1, cfg.epochs + 1):
        order = derive_rng(seed, "gate-shuffle", str(epoch)).permutation(n)
        epoch_ce = [0.0, 0]
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if idx.size == 0:
                continue
            tape = T.Tape()
            try:
                logits = model.forward(train.images[idx], train=True,
                                       gates=gate_map, tape=tape)
                ce = T.cross_entropy(logits, train.labels[idx], tape=tape)
                grads = tape.backward(ce, gate_ts)
            except NonFiniteError as e:
                raise DivergenceError(
                    f"non-finite loss at step {state.step}: {e}",
                    step=state.step) from e
            loss = float(ce) + cfg.gamma * sparsity_penalty(
                state, cfg.target_sparsity, cfg.penalty)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at step {state.step}",
                    step=state.step)
            epoch_ce[0] += float(ce)
            epoch_ce[1] += 1
            pen = sparsity_penalty_grad(state, cfg.target_sparsity,
                                        cfg.penalty)
            state.step += 1
            t = state.step
            for j, gt in enumerate(gate_ts):
                g = grads[gt] + cfg.gamma * pen[j]
                m[j] = cfg.beta1 * m[j] + (1 - cfg.beta1) * g
                v2[j] = cfg.beta2 * v2[j] + (1 - cfg.beta2) * g * g
                mhat = m[j] / (1 - cfg.beta1 ** t)
                vhat = v2[j] / (1 - cfg.beta2 ** t)
                gt.data -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
            project_gates(state)
            if cfg.evals_per_epoch > 1 and (b + 1) % eval_every == 0 \
                    and b + 1 < steps_per_epoch:
                take_snapshot(epoch)
        take_snapshot(epoch)
    return snapshots


def select_best_gates(snapshots: list[GateSnapshot], r: float) -> GateState:
    """Best snapshot rule: among snapshots with sparsity <= r, maximize
    validation accuracy (ties go to the later one). If none qualifies,
    fall back to the minimum-sparsity snapshot with a warning."""
    if not snapshots:
        raise ConfigError("snapshot list is empty")
    qualifying = [(i, s) for i, s in enumerate(snapshots) if s.sparsity <= r]
    if qualifying:
        _, best = max(qualifying,
                      key=lambda p: (p[1].val_accuracy, p[1].epoch, p[0]))
        return best.gates
    warnings.warn(
        f"no snapshot reached sparsity <= {r}; "
        "falling back to the sparsest one", RuntimeWarning)
    _, best = min(enumerate(snapshots),
                  key=lambda p: (p[1].sparsity, -p[0]))
    return best.gates


def snapshot_dump(snapshots: list[GateSnapshot]) -> tuple[list[dict],
                                                          np.ndarray]:
    """Persistable view: per-snapshot scalars plus a [S, total] gate
    matrix (rows in snapshot order, columns in layer order)."""
    meta = [{"epoch": s.epoch, "sparsity": float(s.sparsity),
             "val_accuracy": float(s.val_accuracy),
             "train_loss": float(s.train_loss)} for s in snapshots]
    if snapshots:
        blob = np.stack([np.concatenate(s.gates.lam).astype(np.float32)
                         for s in snapshots])
    else:
        blob = np.zeros((0, 0), dtype=np.float32)
    return meta, blob


def gates_from_dump(blob_row: np.ndarray, widths: list[int]) -> GateState:
    """Rebuild a GateState from one flattened dump row."""
    if blob_row.size != sum(widths):
        raise ConfigError(
            f"dump row has {blob_row.size} values for widths {widths}")
    lam = []
    off = 0
    for w in widths:
        lam.append(np.asarray(blob_row[off:off + w],
                              dtype=T.default_dtype()).copy())
        off += w
    return GateState(lam)
