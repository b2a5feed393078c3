"""Growing multi-head classifier over a fixed-dimension feature input.

Every head maps the shared feature vector through ``hidden_layer_count``
activated hidden layers to a linear output layer with one logit per category.
Two growth strategies:

* ``per-seq-head`` -- each expansion appends a fresh head.
* ``expand-last``  -- a single head whose output layer gains rows.

Expansion never changes an existing parameter, and old-category logits are
bit-identical before and after expansion for any input (the forward kernels
in :mod:`featcl.nnmath` guarantee this).

Global category order is head order, then within-head order, and is frozen
by the sequence of expansions; checkpoints preserve it exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, ShapeError, ValidationError
from .nnmath import (
    AUTO,
    FIRST,
    GLOROT_UNIFORM,
    HIDDEN,
    SIREN_FIRST,
    SIREN_HIDDEN,
    ActivationSpec,
    InitSpec,
    activation_backward,
    activation_forward,
    affine_backward,
    affine_forward,
    affine_forward_colwise,
    init_parameters,
    softmax_rows,
)

PER_SEQ_HEAD = "per-seq-head"
EXPAND_LAST = "expand-last"

CHECKPOINT_MAGIC = b"MHM1"
CHECKPOINT_VERSION = 1


@dataclass
class Head:
    """Layer stack (W, b pairs; last layer linear) plus its category ids."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    category_ids: list[int]


@dataclass
class MultiHeadModel:
    feature_dim: int
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    arch_mode: str = PER_SEQ_HEAD
    hidden_layer_count: int = 1
    heads: list[Head] = field(default_factory=list)

    def __post_init__(self):
        if self.arch_mode not in (PER_SEQ_HEAD, EXPAND_LAST):
            raise ValidationError(f"unknown arch mode {self.arch_mode!r}")
        if not 0 <= self.hidden_layer_count <= 3:
            raise ValidationError("hidden_layer_count must be in 0..3")

    @property
    def category_ids(self) -> list[int]:
        """Global logit order: head order, then within-head order."""
        return [c for head in self.heads for c in head.category_ids]

    @property
    def num_categories(self) -> int:
        return sum(len(h.category_ids) for h in self.heads)


@dataclass
class LogitOutput:
    """Raw logits plus the representation the loss link actually consumes."""

    logits: np.ndarray  # (n, C)
    clamped: np.ndarray | None = None  # regression link only
    probabilities: np.ndarray | None = None  # softmax link only


def _layer_position(index: int) -> str:
    return FIRST if index == 0 else HIDDEN


def _resolve_scheme(init: InitSpec, activation: ActivationSpec, layer_index: int) -> InitSpec:
    """Map 'auto' to the concrete scheme for this layer of this activation."""
    if init.scheme != AUTO:
        return init
    if activation.kind == "siren":
        scheme = SIREN_FIRST if layer_index == 0 else SIREN_HIDDEN
        return replace(init, scheme=scheme, omega=activation.omega_hidden)
    return replace(init, scheme=GLOROT_UNIFORM)


def _new_head(
    model: MultiHeadModel, category_ids: list[int], hidden_width: int, init: InitSpec
) -> Head:
    dims = [model.feature_dim] + [hidden_width] * model.hidden_layer_count + [len(category_ids)]
    weights, biases = [], []
    head_index = len(model.heads)
    for i in range(len(dims) - 1):
        spec = _resolve_scheme(
            replace(init, stream=init.stream + (head_index, i)), model.activation, i
        )
        W, b = init_parameters(spec, fan_in=dims[i], fan_out=dims[i + 1])
        weights.append(W)
        biases.append(b)
    return Head(weights, biases, list(category_ids))


def _check_new_ids(model: MultiHeadModel, new_category_ids) -> list[int]:
    ids = [int(c) for c in new_category_ids]
    if not ids:
        raise ValidationError("expansion requires at least one new category")
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate category ids in expansion: {ids}")
    clash = set(ids) & set(model.category_ids)
    if clash:
        raise ValidationError(f"category ids already present: {sorted(clash)}")
    return ids


def expand_network(
    model: MultiHeadModel,
    new_category_ids,
    hidden_width: int,
    init: InitSpec,
) -> MultiHeadModel:
    """Grow the network for a new sequence; existing parameters are copied
    bit-for-bit and old-category logits are unchanged for every input."""
    ids = _check_new_ids(model, new_category_ids)
    heads = [Head([w.copy() for w in h.weights], [b.copy() for b in h.biases], list(h.category_ids))
             for h in model.heads]
    grown = replace(model, heads=heads)
    if model.arch_mode == PER_SEQ_HEAD or not heads:
        grown.heads.append(_new_head(grown, ids, hidden_width, init))
        return grown
    # expand-last: widen the single head's output layer by |ids| rows
    head = grown.heads[0]
    last = len(head.weights) - 1
    fan_in = head.weights[last].shape[1]
    spec = _resolve_scheme(
        replace(init, stream=init.stream + (0, last, len(head.category_ids))),
        grown.activation,
        last,
    )
    W_new, b_new = init_parameters(spec, fan_in=fan_in, fan_out=len(ids))
    head.weights[last] = np.vstack([head.weights[last], W_new])
    head.biases[last] = np.concatenate([head.biases[last], b_new])
    head.category_ids.extend(ids)
    return grown


def _head_forward(model: MultiHeadModel, head: Head, X: np.ndarray, want_cache: bool):
    """Forward one head; cache holds per-layer inputs and pre-activations."""
    acts = [X]
    pre = []
    a = X
    last = len(head.weights) - 1
    for i in range(last):
        z = affine_forward(head.weights[i], head.biases[i], a)
        a = activation_forward(model.activation, _layer_position(i), z)
        if want_cache:
            pre.append(z)
            acts.append(a)
    logits = affine_forward_colwise(head.weights[last], head.biases[last], a)
    cache = {"acts": acts, "pre": pre} if want_cache else None
    return logits, cache


def _forward(model: MultiHeadModel, X: np.ndarray, want_cache: bool):
    if X.ndim != 2:
        raise ShapeError("batch must be 2-D (examples x feature_dim)")
    if X.shape[1] != model.feature_dim:
        raise ShapeError(f"feature dim {X.shape[1]} != model feature_dim {model.feature_dim}")
    if not model.heads:
        raise ValidationError("model has no heads yet")
    parts, caches = [], []
    for head in model.heads:
        logits, cache = _head_forward(model, head, X, want_cache)
        parts.append(logits)
        caches.append(cache)
    return np.concatenate(parts, axis=1), caches


def predict_without_softmax(model: MultiHeadModel, features: np.ndarray) -> np.ndarray:
    """Raw logits over all known categories for one feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ShapeError("features must be a 1-D vector")
    logits, _ = _forward(model, features[None, :], want_cache=False)
    return logits[0]


def forward_training(model: MultiHeadModel, batch: np.ndarray):
    """Batched forward returning (logits (n, C), caches for backprop).

    Row i is bitwise identical to ``predict_without_softmax`` on row i.
    """
    logits, caches = _forward(model, np.asarray(batch, dtype=np.float64), want_cache=True)
    return logits, caches


def backward_training(model: MultiHeadModel, caches, dlogits: np.ndarray):
    """Gradients for every head parameter given d(loss)/d(logits).

    Returns a list parallel to ``model.heads`` of (dweights, dbiases) lists.
    """
    grads = []
    col = 0
    for head, cache in zip(model.heads, caches):
        width = len(head.category_ids)
        g = dlogits[:, col : col + width]
        col += width
        last = len(head.weights) - 1
        dws: list[np.ndarray | None] = [None] * (last + 1)
        dbs: list[np.ndarray | None] = [None] * (last + 1)
        dW, db, da = affine_backward(head.weights[last], head.biases[last], cache["acts"][last], g)
        dws[last], dbs[last] = dW, db
        for i in range(last - 1, -1, -1):
            dz = activation_backward(model.activation, _layer_position(i), cache["pre"][i], da)
            dW, db, da = affine_backward(head.weights[i], head.biases[i], cache["acts"][i], dz)
            dws[i], dbs[i] = dW, db
        grads.append((dws, dbs))
    return grads


def clamp_output(logits: np.ndarray) -> np.ndarray:
    """Clamp logits to [0, 1] (regression link)."""
    return np.clip(logits, 0.0, 1.0)


def clamp_backward(logits: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Clamp gradient: 1 on the open interval (0, 1), 0 at and beyond the rails."""
    return upstream * ((logits > 0.0) & (logits < 1.0))


def make_logit_output(logits: np.ndarray, link: str) -> LogitOutput:
    """Materialize the link-specific view: 'softmax' or 'clamp'."""
    if link == "softmax":
        return LogitOutput(logits, probabilities=softmax_rows(logits))
    if link == "clamp":
        return LogitOutput(logits, clamped=clamp_output(logits))
    raise ValidationError(f"unknown link {link!r}")


def model_parameters(model: MultiHeadModel) -> list[np.ndarray]:
    """Flat parameter list in (head, layer, W-then-b) order."""
    params = []
    for head in model.heads:
        for W, b in zip(head.weights, head.biases):
            params.append(W)
            params.append(b)
    return params


def flatten_gradients(grads) -> list[np.ndarray]:
    """Flatten ``backward_training`` output to match ``model_parameters``."""
    flat = []
    for dws, dbs in grads:
        for dW, db in zip(dws, dbs):
            flat.append(dW)
            flat.append(db)
    return flat


_ARCH_CODES = {PER_SEQ_HEAD: 0, EXPAND_LAST: 1}
_ACT_CODES = {"relu": 0, "siren": 1}


def save_model(model: MultiHeadModel, path) -> None:
    """Write the checkpoint format documented in docs/formats.md."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<IIBBHdd",
                CHECKPOINT_VERSION,
                model.feature_dim,
                _ARCH_CODES[model.arch_mode],
                _ACT_CODES[model.activation.kind],
                model.hidden_layer_count,
                model.activation.omega_first,
                model.activation.omega_hidden,
            )
        )
        fh.write(struct.pack("<I", len(model.heads)))
        for head in model.heads:
            fh.write(struct.pack("<II", len(head.weights), len(head.category_ids)))
            fh.write(np.asarray(head.category_ids, dtype="<u4").tobytes())
            for W, b in zip(head.weights, head.biases):
                fh.write(struct.pack("<II", W.shape[0], W.shape[1]))
                fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated checkpoint while reading {what} at byte {fh.tell() - len(data)}")
    return data


def load_model(path) -> MultiHeadModel:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a model checkpoint (bad magic)")
        version, feature_dim, arch_code, act_code, layer_count, om_f, om_h = struct.unpack(
            "<IIBBHdd", _read_exact(fh, 28, "header")
        )
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        arch = {v: k for k, v in _ARCH_CODES.items()}.get(arch_code)
        act = {v: k for k, v in _ACT_CODES.items()}.get(act_code)
        if arch is None or act is None:
            raise FormatError(f"{path}: unknown arch/activation code")
        model = MultiHeadModel(
            feature_dim=feature_dim,
            activation=ActivationSpec(act, om_f, om_h),
            arch_mode=arch,
            hidden_layer_count=layer_count,
        )
        (n_heads,) = struct.unpack("<I", _read_exact(fh, 4, "head count"))
        for _ in range(n_heads):
            n_layers, n_cats = struct.unpack("<II", _read_exact(fh, 8, "head header"))
            cats = np.frombuffer(_read_exact(fh, 4 * n_cats, "category ids"), dtype="<u4")
            weights, biases = [], []
            for _ in range(n_layers):
                rows, cols = struct.unpack("<II", _read_exact(fh, 8, "layer shape"))
                W = np.frombuffer(
                    _read_exact(fh, 8 * rows * cols, "weights"), dtype="<f8"
                ).reshape(rows, cols)
                b = np.frombuffer(_read_exact(fh, 8 * rows, "bias"), dtype="<f8")
                weights.append(W.copy())
                biases.append(b.copy())
            model.heads.append(Head(weights, biases, [int(c) for c in cats]))
    return model
