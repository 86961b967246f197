"""Training and evaluation: cross-entropy, Adam, step LR decay, metrics.

Everything here is deterministic given (seed, config, data): batch order is
derived from (seed, epoch), the optimizer is pure arithmetic, and evaluation
never mutates model or batch-norm state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import HsiCube, LabelGrid, SplitManifest, extract_patches
from .models import Model
from .tensor import (
    NumericError,
    Tensor,
    broadcast_to,
    exp,
    ln,
    mul,
    no_grad,
    reduce_max,
    reduce_mean,
    reduce_sum,
    sub,
)

__all__ = [
    "TrainConfig",
    "StepSchedule",
    "Adam",
    "MetricsReport",
    "EpochSummary",
    "cross_entropy",
    "schedule_lr",
    "train_epoch",
    "evaluate",
    "compute_metrics",
    "assemble_batch",
]


class ConfigError(ValueError):
    """A configuration value violates its contract."""


@dataclass(frozen=True)
class StepSchedule:
    period: int
    gamma: float

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError(f"schedule period must be >= 1, got {self.period}")
        if not self.gamma > 0:
            raise ConfigError(f"schedule gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0
    scheduler: StepSchedule | None = None
    precision: int = 32
    force_lr: bool = False

    def __post_init__(self):
        if not self.force_lr and not 0.001 <= self.learning_rate <= 0.4:
            raise ConfigError(
                f"learning rate {self.learning_rate} outside [0.001, 0.4]; pass force_lr to override"
            )
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


def schedule_lr(scheduler: StepSchedule | None, epoch: int, base_lr: float) -> float:
    """base_lr for no schedule; base_lr * gamma^(epoch // period) for step decay."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if scheduler is None:
        return base_lr
    return base_lr * scheduler.gamma ** (epoch // scheduler.period)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean of -log softmax(logits)[target], via the log-sum-exp stabilized form."""
    if logits.values.ndim != 2:
        raise ValueError(f"logits must be [batch, classes], got {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ValueError(f"targets must have shape ({n},), got {targets.shape}")
    if targets.min() < 0 or targets.max() >= c:
        raise ValueError(f"target ids must be in [0, {c})")
    m = reduce_max(logits, axis=1, keepdims=True)
    z = sub(logits, broadcast_to(m, logits.shape))
    lse = ln(reduce_sum(exp(z), axis=1, keepdims=True))
    onehot = np.zeros((n, c), dtype=logits.values.dtype)
    onehot[np.arange(n), targets] = 1.0
    picked = reduce_sum(mul(z, Tensor(onehot)), axis=1, keepdims=True)
    return reduce_mean(sub(lse, picked))


class Adam:
    """Bias-corrected Adam over named parameter tensors."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for _, p in self.params]
        self.v = [np.zeros_like(p.values) for _, p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.values = p.values - (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.values.dtype)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


@dataclass
class EpochSummary:
    epoch: int
    mean_loss: float
    train_accuracy: float
    lr: float


def train_epoch(model: Model, x: np.ndarray, y: np.ndarray, optimizer: Adam,
                config: TrainConfig, epoch: int) -> EpochSummary:
    """One pass over (x, y): forward, loss, backward, step per batch.

    Batch order is a permutation seeded by (seed, epoch); batch-norm layers
    run in train mode.
    """
    n = x.shape[0]
    rng = np.random.default_rng([config.seed, epoch, 404])
    perm = rng.permutation(n)
    lr = schedule_lr(config.scheduler, epoch, config.learning_rate)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, config.batch_size):
        sel = perm[start : start + config.batch_size]
        xb = Tensor(x[sel], dtype=config.dtype)
        yb = y[sel]
        try:
            logits = model.forward(xb, train=True)
            loss = cross_entropy(logits, yb)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)
        except NumericError as e:
            raise NumericError(f"batch starting at {start} (epoch {epoch}): {e}") from e
        total_loss += loss.item() * sel.size
        correct += int((logits.values.argmax(axis=1) == yb).sum())
    return EpochSummary(epoch=epoch, mean_loss=total_loss / n,
                        train_accuracy=100.0 * correct / n, lr=lr)


@dataclass
class MetricsReport:
    confusion: np.ndarray  # [C, C], rows = true class, cols = predicted
    overall_accuracy: float  # percent
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    f1: list[float] = field(default_factory=list)
    weighted_f1: float = 0.0

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "weighted_f1": self.weighted_f1,
            "per_class_f1": list(self.f1),
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(confusion: np.ndarray) -> MetricsReport:
    """OA, per-class precision/recall/F1 and support-weighted F1 from a
    confusion matrix (rows = true class, cols = predicted)."""
    conf = np.asarray(confusion)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {conf.shape}")
    if (conf < 0).any():
        raise ValueError("confusion matrix entries must be non-negative")
    total = conf.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    conf = conf.astype(np.int64)
    oa = 100.0 * float(np.trace(conf)) / float(total)
    c = conf.shape[0]
    precision, recall, f1 = [], [], []
    for i in range(c):
        col = conf[:, i].sum()
        row = conf[i, :].sum()
        p = conf[i, i] / col if col else 0.0
        r = conf[i, i] / row if row else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(2.0 * p * r / (p + r)) if (p + r) else 0.0)
    support = conf.sum(axis=1)
    wf1 = float((support * np.array(f1)).sum() / support.sum())
    return MetricsReport(confusion=conf, overall_accuracy=oa,
                         precision=precision, recall=recall, f1=f1, weighted_f1=wf1)


def assemble_batch(patches: np.ndarray, input_shape: tuple[int, ...]) -> np.ndarray:
    """Arrange [N, S, S, B] patches into the model's per-sample layout.

    (B,)          spectrum             (patch must be 1)
    (1, B)        spectrum as 1 channel
    (B, S, S)     bands as channels
    (1, B, S, S)  single-channel volume
    """
    n, s, _, b = patches.shape
    if len(input_shape) == 1:
        if s != 1:
            raise ValueError(f"spectral input needs patch 1, got {s}")
        return patches.reshape(n, b)
    if len(input_shape) == 2:
        if s != 1:
            raise ValueError(f"spectral input needs patch 1, got {s}")
        return patches.reshape(n, 1, b)
    vol = np.ascontiguousarray(patches.transpose(0, 3, 1, 2))  # [N, B, S, S]
    if len(input_shape) == 3:
        return vol
    return vol[:, None]


def evaluate(model: Model, cube: HsiCube, labels: LabelGrid, manifest: SplitManifest,
             patch: int, batch_size: int = 256) -> MetricsReport:
    """Confusion matrix over the manifest's test pixels; eval mode, no gradients."""
    if cube.h != labels.h or cube.w != labels.w:
        raise ValueError("cube and label extents differ")
    test_idx = manifest.test_indices
    if test_idx.size == 0:
        raise ValueError("manifest has no test pixels")
    if test_idx.max() >= cube.h * cube.w:
        raise ValueError("manifest indices exceed scene extent")
    flat_labels = labels.labels.reshape(-1)
    if (flat_labels[test_idx] == 0).any():
        raise ValueError("manifest test set contains void pixels")
    classes = model.spec.classes
    conf = np.zeros((classes, classes), dtype=np.int64)
    with no_grad():
        for start in range(0, test_idx.size, batch_size):
            sel = test_idx[start : start + batch_size]
            xb = assemble_batch(extract_patches(cube, sel, patch), model.spec.input_shape)
            logits = model.forward(Tensor(xb, dtype=model.dtype), train=False)
            pred = logits.values.argmax(axis=1)
            true = flat_labels[sel] - 1
            np.add.at(conf, (true, pred), 1)
    return compute_metrics(conf)
