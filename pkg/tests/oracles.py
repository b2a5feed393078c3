"""Independent brute-force oracles used to check the library's fast paths.

These stay deliberately naive (plain loops, extended precision, fsum) so a
bug in the library cannot hide in a shared code path.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np


def naive_matmul_affine(W, b, X):
    """Triple-loop X @ W.T + b."""
    n, k = X.shape
    m = W.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += X[i, t] * W[j, t]
            out[i, j] = acc + b[j]
    return out


def softmax_extended(logits, dps: int = 50):
    """Direct e^z / sum e^z evaluated in extended precision."""
    with mpmath.workdps(dps):
        exps = [mpmath.exp(mpmath.mpf(float(z))) for z in logits]
        total = mpmath.fsum(exps)
        return np.array([float(e / total) for e in exps])


def two_pass_variance(values) -> float:
    """Population variance: explicit mean pass then squared-deviation pass."""
    flat = [float(v) for v in np.asarray(values).ravel()]
    mean = math.fsum(flat) / len(flat)
    return math.fsum((v - mean) ** 2 for v in flat) / len(flat)


def brute_force_forgetting(matrix):
    """max-over-sequences minus last, straight from the definition."""
    n = len(matrix)
    out = []
    for k in range(n):
        best = -np.inf
        for s in range(k, n):
            best = max(best, matrix[s][k])
        out.append(best - matrix[n - 1][k])
    return out


def finite_difference_gradients(loss_fn, params, h: float = 1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. each array in
    ``params``; mutates entries in place and restores them."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.ravel()
        flat_g = g.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = loss_fn()
            flat_p[i] = orig - h
            down = loss_fn()
            flat_p[i] = orig
            flat_g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, eps: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, eps) over all parameter arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), eps)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def min_kink_distance(model, X) -> float:
    """Distance of the nearest forward value to a non-differentiable point
    (ReLU pre-activations to 0; logits to the clamp rails 0 and 1).

    Finite differences are only a valid oracle when this is well above h, so
    FD-based tests reject setups where it is small.
    """
    from featcl.model import forward_training

    logits, caches = forward_training(model, X)
    dist = float(np.minimum(np.abs(logits), np.abs(logits - 1.0)).min())
    if model.activation.kind == "relu":
        for cache in caches:
            for z in cache["pre"]:
                dist = min(dist, float(np.abs(z).min()))
    return dist


def nearest_centroid_accuracy(train_features, train_labels, test_features, test_labels) -> float:
    """1-nearest-centroid classifier accuracy; certifies a benchmark is learnable."""
    cats = np.unique(train_labels)
    centroids = np.stack([train_features[train_labels == c].mean(axis=0) for c in cats])
    dists = ((test_features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predictions = cats[dists.argmin(axis=1)]
    return float((predictions == test_labels).mean())
