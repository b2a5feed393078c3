"""Per-sequence training: recall labels, target concatenation, network
expansion, minibatch optimization, and the full curriculum loop.

For each sequence s > 0 the previous model's raw logits on the *current*
sequence's training examples are captured before expansion (the recall
labels), concatenated with the one-hot label of the current category, and
used as the regression target for old categories. Recall labels live only
for the duration of their sequence; nothing from earlier sequences is read,
which the access log proves after every run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .data import AccessLog, FeatureDataset, SequenceDataView, SequenceManifest, audit_rehearsal_free, sequence_view
from .errors import ContractError, ValidationError
from .losses import CategoryStats, LossBreakdown, LossMode, combined_loss, compute_category_stats
from .metrics import MetricsReport, evaluate, logit_variance
from .model import (
    MultiHeadModel,
    backward_training,
    expand_network,
    flatten_gradients,
    forward_training,
    model_parameters,
    save_model,
)
from .nnmath import AUTO, ActivationSpec, InitSpec, make_rng

# master-seed stream ids
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1


@dataclass
class SequenceState:
    """Which categories are current (C_s) vs already known (old)."""

    index: int
    current_ids: list[int]
    old_ids: list[int]

    def __post_init__(self):
        if self.index < 0:
            raise ValidationError("sequence index must be >= 0")
        if (self.index == 0) != (len(self.old_ids) == 0):
            raise ValidationError(
                f"sequence {self.index} with {len(self.old_ids)} old categories is inconsistent"
            )
        if set(self.current_ids) & set(self.old_ids):
            raise ValidationError("current and old categories overlap")
        if not self.current_ids:
            raise ValidationError("a sequence must introduce at least one category")

    @property
    def all_ids(self) -> list[int]:
        return self.old_ids + self.current_ids


@dataclass
class RecallLabeledExample:
    """One training example with its concatenated regression/one-hot target."""

    features: np.ndarray
    one_hot: np.ndarray  # over current categories
    recall_label: np.ndarray  # over old categories; empty at s=0
    target: np.ndarray  # concatenate(recall_label, one_hot)

    @classmethod
    def assemble(cls, features, one_hot, recall_label) -> "RecallLabeledExample":
        recall_label = np.asarray(recall_label, dtype=np.float64)
        one_hot = np.asarray(one_hot, dtype=np.float64)
        return cls(
            np.asarray(features, dtype=np.float64),
            one_hot,
            recall_label,
            np.concatenate([recall_label, one_hot]),
        )


@dataclass
class TrainConfig:
    mode: LossMode = LossMode.RECALL
    epochs_per_sequence: int = 50
    batch_size: int = 64
    optimizer: str = "adam"  # "adam" | "sgd"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0  # master seed: derives shuffle and head-init streams
    arch_mode: str = "per-seq-head"
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    hidden_width: int = 1024
    hidden_layer_count: int = 1
    variance_floor: float = 1e-6

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValidationError("learning rate must be >= 0 (0 only for diagnostics)")
        if self.epochs_per_sequence < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be >= 1")
        if self.variance_floor <= 0:
            raise ValidationError("variance floor must be positive")


def config_echo(config: TrainConfig) -> dict:
    echo = asdict(config)
    echo["mode"] = config.mode.value
    return echo


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    _scratch: list[np.ndarray] = field(default_factory=list, repr=False)


def make_optimizer_state(params: list[np.ndarray], config: TrainConfig) -> OptimizerState:
    state = OptimizerState(kind=config.optimizer)
    if config.optimizer == "adam":
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        state._scratch = [np.empty_like(p) for p in params] + [np.empty_like(p) for p in params]
    return state


def optimizer_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState, config: TrainConfig
) -> OptimizerState:
    """Update parameters in place; returns the advanced state."""
    if len(params) != len(grads):
        raise ValidationError("params/grads length mismatch")
    lr = config.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        state.step += 1
        return state
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    corr1 = 1 - b1**t
    corr2 = 1 - b2**t
    n = len(params)
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.m[i], state.v[i]
        buf, buf2 = state._scratch[i], state._scratch[n + i]
        # m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2, all in place
        m *= b1
        np.multiply(g, 1 - b1, out=buf)
        m += buf
        v *= b2
        np.multiply(g, g, out=buf)
        buf *= 1 - b2
        v += buf
        # p -= lr * (m/corr1) / (sqrt(v/corr2) + eps)
        np.divide(v, corr2, out=buf2)
        np.sqrt(buf2, out=buf2)
        buf2 += config.eps_adam
        np.divide(m, corr1, out=buf)
        buf /= buf2
        buf *= lr
        p -= buf
    return state


def compute_recall_labels(model: MultiHeadModel, features: np.ndarray) -> np.ndarray:
    """Raw logits of the pre-expansion model on the new sequence's examples.

    Row i is bitwise what ``predict_without_softmax`` returns for example i.
    """
    if not model.heads:
        raise ContractError("recall labels are undefined at sequence 0 (no previous model)")
    logits, _ = forward_training(model, np.asarray(features, dtype=np.float64))
    return logits


def _one_hot(labels: np.ndarray, category_order: list[int]) -> np.ndarray:
    index = {c: i for i, c in enumerate(category_order)}
    out = np.zeros((len(labels), len(category_order)))
    for i, lab in enumerate(labels):
        out[i, index[int(lab)]] = 1.0
    return out


def train_sequence(
    model: MultiHeadModel,
    state: SequenceState,
    data: SequenceDataView,
    config: TrainConfig,
) -> tuple[MultiHeadModel, list[LossBreakdown], CategoryStats | None]:
    """Run one sequence end to end; returns (model', per-epoch loss trace,
    category stats used by the variance modes)."""
    if model.category_ids != state.old_ids:
        raise ContractError(
            f"model covers {model.category_ids}, expected old categories {state.old_ids}"
        )
    X, labels = data.arrays()
    leaked = set(int(c) for c in np.unique(labels)) - set(state.current_ids)
    if leaked:
        raise ValidationError(f"examples labeled outside the current sequence: {sorted(leaked)}")

    recall = None
    stats = None
    if state.index > 0 and config.mode.uses_recall:
        recall = compute_recall_labels(model, X)
        if len(recall) != len(X):
            raise ContractError("recall label count does not match example count")
        if config.mode.uses_variance:
            stats = compute_category_stats(recall, config.variance_floor)

    init = InitSpec(scheme=AUTO, rng_seed=config.seed, stream=(_STREAM_INIT, state.index))
    model = expand_network(model, state.current_ids, config.hidden_width, init)

    one_hot = _one_hot(labels, state.current_ids)
    n_old = len(state.old_ids)
    if recall is None:
        targets = np.concatenate([np.zeros((len(X), n_old)), one_hot], axis=1)
    else:
        targets = np.concatenate([recall, one_hot], axis=1)
    del recall  # recall labels live only inside this sequence

    params = model_parameters(model)
    opt_state = make_optimizer_state(params, config)  # fresh state each sequence
    n = len(X)
    n_new = len(state.current_ids)
    trace: list[LossBreakdown] = []
    for epoch in range(config.epochs_per_sequence):
        order = make_rng(config.seed, _STREAM_SHUFFLE, state.index, epoch).permutation(n)
        sums = np.zeros(4)
        for lo in range(0, n, config.batch_size):
            batch_idx = order[lo : lo + config.batch_size]
            logits, caches = forward_training(model, X[batch_idx])
            breakdown, dlogits = combined_loss(
                config.mode, state.index, logits, targets[batch_idx], n_new, stats
            )
            grads = flatten_gradients(backward_training(model, caches, dlogits))
            optimizer_step(params, grads, opt_state, config)
            k = len(batch_idx)
            sums += k * np.array([breakdown.l_old, breakdown.l_new, breakdown.l_all, breakdown.total])
        trace.append(LossBreakdown(*(sums / n)))
    return model, trace, stats


def run_curriculum(
    manifest: SequenceManifest,
    train_dataset: FeatureDataset,
    val_dataset: FeatureDataset,
    config: TrainConfig,
    checkpoint_dir=None,
    access_log: AccessLog | None = None,
) -> tuple[MultiHeadModel, MetricsReport]:
    """Train every sequence in order and evaluate after each one.

    Raises if the manifest does not cover the data, and audits at the end
    that no sequence's training loop read another sequence's examples.
    Pass an ``access_log`` to inspect the audit trail afterwards.
    """
    covered = manifest.all_categories()
    for name, ds in (("train", train_dataset), ("val", val_dataset)):
        extra = set(ds.categories()) - covered
        if extra:
            raise ValidationError(f"{name} dataset has categories missing from manifest: {sorted(extra)}")
    if train_dataset.feature_dim != val_dataset.feature_dim:
        raise ValidationError("train/val feature dimensions differ")

    model = MultiHeadModel(
        feature_dim=train_dataset.feature_dim,
        activation=config.activation,
        arch_mode=config.arch_mode,
        hidden_layer_count=config.hidden_layer_count,
    )
    log = access_log if access_log is not None else AccessLog()
    allowed: dict[int, set[int]] = {}
    overall_accuracy: list[float] = []
    accuracy_matrix: list[list[float]] = []
    variance_trace: list[float] = []

    val_features = val_dataset.features.astype(np.float64)
    val_labels = val_dataset.category_ids.astype(np.int64)

    for s, cats in enumerate(manifest.sequences):
        state = SequenceState(
            index=s,
            current_ids=list(cats),
            old_ids=[c for prev in manifest.sequences[:s] for c in prev],
        )
        view = sequence_view(train_dataset, cats, s, log)
        allowed[s] = set(int(i) for i in view.example_ids)
        model, _, _ = train_sequence(model, state, view, config)
        if checkpoint_dir is not None:
            save_model(model, f"{checkpoint_dir}/seq_{s:03d}.ckpt")

        seen = [list(c) for c in manifest.sequences[: s + 1]]
        mask = np.isin(val_labels, state.all_ids)
        overall, per_origin = evaluate(model, val_features[mask], val_labels[mask], seen)
        overall_accuracy.append(overall)
        accuracy_matrix.append(per_origin)
        variance_trace.append(logit_variance(model, val_features[mask]))

    violations = audit_rehearsal_free(log, allowed)
    if violations:
        raise ContractError("rehearsal-free audit failed: " + "; ".join(violations))

    origin_counts = [
        int(np.isin(val_labels, list(cats)).sum()) for cats in manifest.sequences
    ]
    report = MetricsReport(
        overall_accuracy=overall_accuracy,
        accuracy_matrix=accuracy_matrix,
        variance_trace=variance_trace,
        origin_counts=origin_counts,
        config_echo=config_echo(config),
        seeds=[config.seed],
    )
    return model, report
