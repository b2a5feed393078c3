"""Dense numeric kernel: affine layers, activations, softmax, parameter init.

All training math is float64. Matrices are plain 2-D numpy arrays in row-major
order; weight matrices are (fan_out, fan_in) so a layer computes X @ W.T + b.

Reproducibility contract: forward passes must give bitwise-identical results
per example regardless of batch size, and results for existing output units
must not change when a weight matrix later grows rows (network expansion).
BLAS picks different summation orders for different problem shapes, so the
forward kernels below always present the same geometry to BLAS:

* ``affine_forward`` processes rows in fixed blocks of ``ROW_BLOCK`` (padding
  short blocks with zeros), so each row goes through an identically-shaped
  GEMM no matter how many rows the caller passed.
* ``affine_forward_colwise`` additionally computes each output column as an
  independent matrix-vector product, so appending rows to W can never perturb
  the columns that already existed. Used for final layers, which are the only
  layers that can grow.

Randomness comes from the counter-based Philox generator keyed through
``numpy.random.SeedSequence``, which is platform-independent; every consumer
derives its own stream via ``make_rng(seed, *stream)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

ROW_BLOCK = 64

GLOROT_UNIFORM = "glorot-uniform"
SIREN_FIRST = "siren-first"
SIREN_HIDDEN = "siren-hidden"
AUTO = "auto"  # resolved per layer from the activation spec by the model

_SCHEMES = (GLOROT_UNIFORM, SIREN_FIRST, SIREN_HIDDEN, AUTO)

FIRST = "first"
HIDDEN = "hidden"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for (seed, stream); identical on every platform."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ActivationSpec:
    kind: str = "relu"  # "relu" | "siren"
    omega_first: float = 30.0
    omega_hidden: float = 30.0

    def __post_init__(self):
        if self.kind not in ("relu", "siren"):
            raise ValidationError(f"unknown activation kind {self.kind!r}")
        if self.omega_first <= 0 or self.omega_hidden <= 0:
            raise ValidationError("omega values must be positive")

    def omega(self, layer_position: str) -> float:
        return self.omega_first if layer_position == FIRST else self.omega_hidden


@dataclass(frozen=True)
class InitSpec:
    """Weight init: scheme + seed. ``stream`` namespaces independent draws
    (e.g. per head/layer) off the same seed; ``omega`` only affects the
    siren-hidden bound."""

    scheme: str
    rng_seed: int
    omega: float = 30.0
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValidationError(f"unknown init scheme {self.scheme!r}")
        if self.omega <= 0:
            raise ValidationError("omega must be positive")


def init_parameters(spec: InitSpec, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw W (fan_out, fan_in) uniform within the scheme's bound; b is zero."""
    if fan_in < 1 or fan_out < 1:
        raise ValidationError("fan_in and fan_out must be >= 1")
    if spec.scheme == GLOROT_UNIFORM:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
    elif spec.scheme == SIREN_FIRST:
        bound = 1.0 / fan_in
    elif spec.scheme == SIREN_HIDDEN:
        bound = np.sqrt(6.0 / fan_in) / spec.omega
    else:
        raise ValidationError("scheme 'auto' must be resolved before drawing")
    rng = make_rng(spec.rng_seed, *spec.stream)
    W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    b = np.zeros(fan_out)
    return W, b


def _check_affine(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> None:
    if W.ndim != 2 or X.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"affine expects W 2-D, b 1-D, X 2-D; got {W.ndim}/{b.ndim}/{X.ndim}")
    if X.shape[1] != W.shape[1]:
        raise ShapeError(f"fan-in mismatch: X has {X.shape[1]} columns, W expects {W.shape[1]}")
    if b.shape[0] != W.shape[0]:
        raise ShapeError(f"bias length {b.shape[0]} != fan-out {W.shape[0]}")


def _row_blocks(X: np.ndarray):
    n = X.shape[0]
    for lo in range(0, n, ROW_BLOCK):
        hi = min(lo + ROW_BLOCK, n)
        chunk = X[lo:hi]
        if hi - lo < ROW_BLOCK:
            padded = np.zeros((ROW_BLOCK, X.shape[1]))
            padded[: hi - lo] = chunk
            chunk = padded
        yield lo, hi, chunk


def affine_forward(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """X @ W.T + b, one row per example, row-block geometry fixed at 64."""
    _check_affine(W, b, X)
    WT = W.T
    n = X.shape[0]
    if n == ROW_BLOCK:  # exact block: single gemm, no copies
        out = X @ WT
        out += b
        return out
    out = np.empty((n, W.shape[0]))
    for lo, hi, chunk in _row_blocks(X):
        out[lo:hi] = (chunk @ WT)[: hi - lo]
    out += b
    return out


def affine_forward_colwise(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Like ``affine_forward`` but each output column is its own gemv, so the
    result for column j is unaffected by rows later appended to W."""
    _check_affine(W, b, X)
    out = np.empty((X.shape[0], W.shape[0]))
    for lo, hi, chunk in _row_blocks(X):
        for j in range(W.shape[0]):
            out[lo:hi, j] = (chunk @ W[j])[: hi - lo]
    out += b
    return out


def affine_backward(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of an affine layer; returns (dW, db, dX)."""
    _check_affine(W, b, X)
    if upstream.shape != (X.shape[0], W.shape[0]):
        raise ShapeError(
            f"upstream shape {upstream.shape} != {(X.shape[0], W.shape[0])}"
        )
    dW = upstream.T @ X
    db = upstream.sum(axis=0)
    dX = upstream @ W
    return dW, db, dX


def activation_forward(spec: ActivationSpec, layer_position: str, Z: np.ndarray) -> np.ndarray:
    if spec.kind == "relu":
        return np.maximum(Z, 0.0)
    return np.sin(spec.omega(layer_position) * Z)


def activation_backward(
    spec: ActivationSpec, layer_position: str, Z: np.ndarray, upstream: np.ndarray
) -> np.ndarray:
    """Gradient through the activation, given the pre-activation Z."""
    if spec.kind == "relu":
        return upstream * (Z > 0)
    omega = spec.omega(layer_position)
    return upstream * (omega * np.cos(omega * Z))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax of a vector; stable for arbitrarily large inputs."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ShapeError("softmax expects a non-empty 1-D vector")
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a batch; each row matches ``softmax`` bitwise."""
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise ShapeError("softmax_rows expects a (n, c) block with c >= 1")
    shifted = np.exp(Z - Z.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)
