"""Loss functions with analytic gradients.

Per-example semantics: every loss returns (values, grads) where ``values``
holds one scalar per batch row and ``grads`` the gradient of that row's value
with respect to the logit block passed in. ``combined_loss`` aggregates to the
batch mean and assembles the full-width gradient.

Sequence-dependent combination: the first sequence trains with the
new-category loss alone; later sequences add a squared recall-label residual
on old categories (optionally divided per category by the recall-label
variance) and a loss over all categories. In regression variants the softmax
cross-entropies are replaced by L2 against the clamped outputs; the recall
residual always acts on raw logits, since recall labels are raw logits of the
previous model.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .model import clamp_backward, clamp_output
from .nnmath import softmax_rows


class LossMode(Enum):
    RECALL = "recall"
    RECALL_VAR = "recall-var"
    RECALL_REG = "recall-reg"
    RECALL_VAR_REG = "recall-var-reg"
    NAIVE = "naive"

    @property
    def uses_recall(self) -> bool:
        return self is not LossMode.NAIVE

    @property
    def uses_variance(self) -> bool:
        return self in (LossMode.RECALL_VAR, LossMode.RECALL_VAR_REG)

    @property
    def regression_link(self) -> bool:
        return self in (LossMode.RECALL_REG, LossMode.RECALL_VAR_REG)

    @property
    def link(self) -> str:
        return "clamp" if self.regression_link else "softmax"


@dataclass
class CategoryStats:
    """Per-old-category mean/variance of the recall labels for one sequence."""

    mean: np.ndarray
    variance: np.ndarray
    floor: float = 1e-6

    def __post_init__(self):
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise ValidationError("mean/variance must be matching 1-D arrays")
        if self.floor <= 0:
            raise ValidationError("variance floor must be positive")
        if np.any(self.variance < 0):
            raise ValidationError("variance must be nonnegative")

    def divisors(self) -> np.ndarray:
        return np.maximum(self.variance, self.floor)


@dataclass
class LossBreakdown:
    l_old: float
    l_new: float
    l_all: float
    total: float


def compute_category_stats(recall_labels: np.ndarray, variance_floor: float = 1e-6) -> CategoryStats:
    """Mean and population variance of each old category's recall labels."""
    r = np.asarray(recall_labels, dtype=np.float64)
    if r.ndim != 2:
        raise ValidationError("recall labels must be (examples x old categories)")
    if r.shape[0] < 2:
        raise ValidationError(f"need at least 2 examples for category stats, got {r.shape[0]}")
    mean = r.mean(axis=0)
    variance = np.mean((r - mean) ** 2, axis=0)
    return CategoryStats(mean=mean, variance=variance, floor=variance_floor)


def loss_old(
    old_logits: np.ndarray, recall_labels: np.ndarray, stats: CategoryStats | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Squared residual between live old-category logits and recall labels,
    averaged over old categories; with ``stats`` each residual is divided by
    that category's (floored) variance before squaring."""
    o = np.asarray(old_logits, dtype=np.float64)
    r = np.asarray(recall_labels, dtype=np.float64)
    if o.shape != r.shape or o.ndim != 2 or o.shape[1] == 0:
        raise ValidationError(f"recall labels {r.shape} do not cover old logits {o.shape}")
    k = o.shape[1]
    if stats is not None:
        if stats.variance.shape[0] != k:
            raise ValidationError("category stats do not cover all old categories")
        d = stats.divisors()
    else:
        d = np.ones(k)
    scaled = (o - r) / d
    values = np.mean(scaled**2, axis=1)
    grads = (2.0 / k) * scaled / d
    return values, grads


def _check_one_hot(y: np.ndarray, what: str) -> np.ndarray:
    if y.ndim != 2:
        raise ValidationError(f"{what} must be 2-D")
    if not np.all((y == 0.0) | (y == 1.0)) or np.any(y.sum(axis=1) != 1.0):
        raise ValidationError(f"{what} must be one-hot (exactly one 1 per row)")
    return y.argmax(axis=1)


def _cross_entropy(logits: np.ndarray, one_hot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if logits.shape != one_hot.shape:
        raise ValidationError(f"one-hot shape {one_hot.shape} != logits {logits.shape}")
    true_idx = _check_one_hot(one_hot, "label")
    m = logits.shape[1]
    p = softmax_rows(logits)
    values = -np.log(p[np.arange(len(p)), true_idx]) / m
    grads = (p - one_hot) / m
    return values, grads


def loss_new_ce(new_logits: np.ndarray, one_hot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy with softmax restricted to the current categories."""
    return _cross_entropy(np.asarray(new_logits, dtype=np.float64), np.asarray(one_hot, dtype=np.float64))


def loss_all_ce(all_logits: np.ndarray, one_hot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy with softmax over every known category."""
    return _cross_entropy(np.asarray(all_logits, dtype=np.float64), np.asarray(one_hot, dtype=np.float64))


def _clamped_l2(raw_logits: np.ndarray, one_hot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if raw_logits.shape != one_hot.shape:
        raise ValidationError(f"one-hot shape {one_hot.shape} != logits {raw_logits.shape}")
    _check_one_hot(one_hot, "label")
    m = raw_logits.shape[1]
    clamped = clamp_output(raw_logits)
    values = np.mean((clamped - one_hot) ** 2, axis=1)
    grads = clamp_backward(raw_logits, (2.0 / m) * (clamped - one_hot))
    return values, grads


def loss_new_reg(new_logits: np.ndarray, one_hot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2 between clamped current-category outputs and the one-hot target.

    Takes raw logits; the value uses the clamped outputs while the gradient
    chains through the clamp's mask (zero outside the open interval (0, 1)).
    """
    return _clamped_l2(np.asarray(new_logits, dtype=np.float64), np.asarray(one_hot, dtype=np.float64))


def loss_all_reg(all_logits: np.ndarray, one_hot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """As ``loss_new_reg`` over every known category."""
    return _clamped_l2(np.asarray(all_logits, dtype=np.float64), np.asarray(one_hot, dtype=np.float64))


def combined_loss(
    mode: LossMode,
    sequence: int,
    logits: np.ndarray,
    targets: np.ndarray,
    n_new: int,
    stats: CategoryStats | None = None,
) -> tuple[LossBreakdown, np.ndarray]:
    """Batch loss and gradient of the batch mean w.r.t. the full logit block.

    ``targets`` is the concatenated per-example target: recall labels on the
    old categories (zeros for the naive baseline) followed by the one-hot
    encoding of the current category. The last ``n_new`` columns are the
    current sequence's categories.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape or logits.ndim != 2:
        raise ValidationError(f"targets {targets.shape} do not match logits {logits.shape}")
    n, width = logits.shape
    if not 1 <= n_new <= width:
        raise ValidationError(f"n_new={n_new} out of range for {width} logits")
    n_old = width - n_new
    if (sequence == 0) != (n_old == 0):
        raise ValidationError(
            f"sequence {sequence} inconsistent with {n_old} old categories"
        )
    if mode.uses_variance and n_old > 0 and stats is None:
        raise ValidationError(f"{mode.value} requires category stats after sequence 0")

    grad = np.zeros_like(logits)
    new_logits = logits[:, n_old:]
    new_onehot = targets[:, n_old:]

    if mode is LossMode.NAIVE:
        if n_old and np.any(targets[:, :n_old] != 0.0):
            raise ValidationError("naive baseline targets must be zero on old categories")
        vals, g = loss_all_ce(logits, targets)
        grad += g
        if sequence == 0:
            breakdown = LossBreakdown(0.0, float(vals.mean()), 0.0, float(vals.mean()))
        else:
            breakdown = LossBreakdown(0.0, 0.0, float(vals.mean()), float(vals.mean()))
        return breakdown, grad / n

    new_fn = loss_new_reg if mode.regression_link else loss_new_ce
    all_fn = loss_all_reg if mode.regression_link else loss_all_ce

    vals_new, g_new = new_fn(new_logits, new_onehot)
    grad[:, n_old:] += g_new
    l_new = float(vals_new.mean())

    if sequence == 0:
        return LossBreakdown(0.0, l_new, 0.0, l_new), grad / n

    vals_old, g_old = loss_old(
        logits[:, :n_old], targets[:, :n_old], stats if mode.uses_variance else None
    )
    grad[:, :n_old] += g_old
    l_old_val = float(vals_old.mean())

    onehot_all = targets.copy()
    onehot_all[:, :n_old] = 0.0
    vals_all, g_all = all_fn(logits, onehot_all)
    grad += g_all
    l_all_val = float(vals_all.mean())

    total = l_old_val + l_new + l_all_val
    return LossBreakdown(l_old_val, l_new, l_all_val, total), grad / n
