"""Identity-supervised losses with analytic gradients.

Every loss takes a :class:`Batch` of embeddings (single-branch outputs or
fused two-branch outputs) and returns the loss value together with the
gradient on the embeddings.  Class centers are constants inside the losses;
they move only through :func:`center_update`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sbnet import _kernels
from sbnet.errors import BatchTooSmallError, ConfigError, DimensionError, LabelError
from sbnet.numerics import Rng, gaussian, row_l2_normalize_backward, row_norms

LOSSES = ("fop", "center", "git")
PAIR_REDUCTIONS = ("mean", "sum")


@dataclass
class Batch:
    embeddings: np.ndarray
    labels: np.ndarray
    modality: str = "fused"

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.ndim != 2 or self.labels.shape != (self.embeddings.shape[0],):
            raise DimensionError(f"embeddings {self.embeddings.shape} vs labels {self.labels.shape}")
        if self.embeddings.shape[0] < 1:
            raise BatchTooSmallError("empty batch")


@dataclass
class ClassifierHead:
    W: np.ndarray
    b: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]

    def trainable(self) -> dict[str, np.ndarray]:
        return {"head.W": self.W, "head.b": self.b}

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.W = arrays.get("head.W", self.W)
        self.b = arrays.get("head.b", self.b)


@dataclass
class LossConfig:
    loss: str = "fop"
    alpha: float = 1.0
    alpha_c: float = 0.003
    alpha_g: float = 0.003
    center_lr: float = 0.5
    pair_reduction: str = "mean"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.pair_reduction not in PAIR_REDUCTIONS:
            raise ConfigError(f"pair_reduction must be one of {PAIR_REDUCTIONS}")
        for name in ("alpha", "alpha_c", "alpha_g", "center_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def uses_centers(self) -> bool:
        return self.loss in ("center", "git")


@dataclass
class LossOutput:
    loss: float
    grad_embeddings: np.ndarray
    grad_head: dict[str, np.ndarray]
    parts: dict[str, float] = field(default_factory=dict)


def init_head(d: int, n_classes: int, rng: Rng) -> ClassifierHead:
    if n_classes < 2:
        raise LabelError(f"classifier needs at least 2 classes, got {n_classes}")
    return ClassifierHead(W=gaussian(rng, d, n_classes, 0.0, np.sqrt(1.0 / d)), b=np.zeros(n_classes))


def init_centers(n_classes: int, d: int) -> np.ndarray:
    return np.zeros((n_classes, d))


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise LabelError(f"label {int(bad)} outside [0, {n_classes})")


def ce_loss(head: ClassifierHead, batch: Batch):
    """Mean softmax cross-entropy of a linear head.

    Returns ``(loss, grad_embeddings, grad_head)``.
    """
    _check_labels(batch.labels, head.n_classes)
    x = batch.embeddings
    B = x.shape[0]
    logits = x @ head.W + head.b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(log_z - shifted[rows, batch.labels]))

    probs = np.exp(shifted - log_z[:, None])
    probs[rows, batch.labels] -= 1.0
    d_logits = probs / B
    grad_head = {"head.W": x.T @ d_logits, "head.b": d_logits.sum(axis=0)}
    return loss, d_logits @ head.W.T, grad_head


def oc_loss(batch: Batch, reduction: str = "mean"):
    """Orthogonality-constraint loss on cosine similarities.

    ``1 - pos + |neg|`` where ``pos``/``neg`` aggregate pairwise cosines over
    same-identity and different-identity ordered pairs (i != j).  With
    ``reduction="mean"`` each term is a pair average; with ``"sum"`` it is the
    raw pair sum.  An empty pair set contributes 0.
    """
    x = batch.embeddings
    B = x.shape[0]
    if B < 2:
        raise BatchTooSmallError("oc_loss needs at least 2 embeddings")
    norms = row_norms(x)
    n = x / norms[:, None]
    S = np.clip(n @ n.T, -1.0, 1.0)

    same = batch.labels[:, None] == batch.labels[None, :]
    off_diag = ~np.eye(B, dtype=bool)
    pos_mask = same & off_diag
    neg_mask = ~same
    n_pos = int(pos_mask.sum())
    n_neg = int(neg_mask.sum())
    if reduction == "mean":
        w_pos = 1.0 / n_pos if n_pos else 0.0
        w_neg = 1.0 / n_neg if n_neg else 0.0
    elif reduction == "sum":
        w_pos = w_neg = 1.0
    else:
        raise ConfigError(f"pair_reduction must be one of {PAIR_REDUCTIONS}")

    pos = w_pos * float(S[pos_mask].sum())
    neg = w_neg * float(S[neg_mask].sum())
    loss = 1.0 - pos + abs(neg)

    # S is symmetric and both masks are symmetric, so dS/dn doubles the row term
    dS = -w_pos * pos_mask + np.sign(neg) * w_neg * neg_mask
    grad_n = 2.0 * (dS @ n)
    return loss, row_l2_normalize_backward(grad_n, n, norms)


def center_loss(batch: Batch, centers: np.ndarray):
    """Half the summed squared distance of each embedding to its class center."""
    _check_labels(batch.labels, centers.shape[0])
    diff = batch.embeddings - centers[batch.labels]
    return 0.5 * float(np.sum(diff * diff)), diff


def center_update(centers: np.ndarray, batch: Batch, center_lr: float) -> np.ndarray:
    """Delta-rule center step; classes absent from the batch keep their center."""
    _check_labels(batch.labels, centers.shape[0])
    out = centers.copy()
    classes, inverse, counts = np.unique(batch.labels, return_inverse=True, return_counts=True)
    delta = np.zeros((classes.size, centers.shape[1]))
    np.add.at(delta, inverse, centers[batch.labels] - batch.embeddings)
    delta /= (1.0 + counts)[:, None]
    out[classes] -= center_lr * delta
    return out


def git_loss(batch: Batch, centers: np.ndarray):
    """Push term: sum over cross-class ordered pairs of ``1 / (1 + |I_i - c_{y_j}|^2)``."""
    if batch.embeddings.shape[0] < 2:
        raise BatchTooSmallError("git_loss needs at least 2 embeddings")
    _check_labels(batch.labels, centers.shape[0])
    loss, grad = _kernels.git_push(
        np.ascontiguousarray(batch.embeddings), np.ascontiguousarray(batch.labels), np.ascontiguousarray(centers)
    )
    return float(loss), grad


def total_loss(config: LossConfig, head: ClassifierHead, centers: np.ndarray | None, batch: Batch) -> LossOutput:
    """CE plus the weighted auxiliary terms of the selected formulation.

    A zero weight skips its term entirely, so the result is bit-identical to
    plain CE when every auxiliary weight is zero.
    """
    if config.loss not in LOSSES:
        raise ConfigError(f"unknown loss {config.loss!r}")
    loss, grad, grad_head = ce_loss(head, batch)
    parts = {"ce": loss}

    if config.loss == "fop":
        if config.alpha:
            oc, g = oc_loss(batch, config.pair_reduction)
            parts["oc"] = oc
            loss += config.alpha * oc
            grad = grad + config.alpha * g
    else:
        if centers is None:
            raise ConfigError(f"loss {config.loss!r} needs class centers")
        if config.alpha_c:
            c, g = center_loss(batch, centers)
            parts["center"] = c
            loss += config.alpha_c * c
            grad = grad + config.alpha_c * g
        if config.loss == "git" and config.alpha_g:
            gl, g = git_loss(batch, centers)
            parts["git"] = gl
            loss += config.alpha_g * gl
            grad = grad + config.alpha_g * g
    return LossOutput(loss, grad, grad_head, parts)
