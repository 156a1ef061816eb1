"""Brute-force reference computations for tests and the grad-check command.

Nothing here calls into :mod:`cmgn.losses`. The loss is written out
directly from its definition (``acos``/``cos`` for the angular margin,
plain ``exp`` sums without max-shifting), so it will overflow for very
large scales; at ``s <= 64`` and cosines in ``[-1, 1]`` every exponent
stays below ~200, well inside float64.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq


@dataclass(frozen=True)
class FiniteDiffSpec:
    step_h: float = 1e-6
    exclusion_band: float = 1e-4
    tolerance_rel: float = 1e-6

    def __post_init__(self):
        if not (self.step_h > 0 and self.exclusion_band > 0 and self.tolerance_rel > 0):
            raise ValueError("finite-difference settings must all be positive")


@dataclass
class FiniteDiffResult:
    grad: np.ndarray
    skipped: np.ndarray  # True where +h and -h landed on different branches


def _kind(variant):
    return variant.kind.value


def _target_value(c, kind, m):
    if kind == "softmax":
        return c
    if kind == "cosface":
        return c - m
    return np.cos(np.arccos(c) + m)


def _other_value(c, target, kind, t):
    """Negative-class value and its hardness flag, straight from the case split."""
    hard = target - c < 0
    if kind == "curricularface":
        return np.where(hard, c * (t + c), c), hard
    if kind == "mv-arc-softmax":
        return np.where(hard, t * c + t - 1, c), hard
    return c, np.zeros_like(hard)


def _stack_terms(cosines, labels, variant, t):
    cos = np.asarray(cosines, dtype=np.float64)
    if cos.ndim == 2:
        cos = cos[None]
    labels = np.asarray(labels)
    k, b, n = cos.shape
    kind = _kind(variant)
    m = variant.margin_m
    s = variant.scale_s
    if variant.fixed_t is not None:
        t = variant.fixed_t
    onehot = np.zeros((b, n), dtype=bool)
    onehot[np.arange(b), labels] = True

    gt = cos[:, onehot].reshape(k, b)
    target = _target_value(gt, kind, m)
    values, hard = _other_value(cos, target[:, :, None], kind, t)
    hard = hard & ~onehot
    numerator = np.exp(s * target)
    others = np.where(onehot, 0.0, np.exp(s * values)).sum(axis=2)
    # -log(num / (num + others)), rearranged so saturated samples keep their digits
    per_sample = np.log1p(others / numerator)
    return per_sample, hard


def direct_loss_stack(cosines, labels, variant, t=0.0):
    """Mean loss for each of ``K`` stacked cosine matrices ``(K, B, n)``."""
    per_sample, _ = _stack_terms(cosines, labels, variant, t)
    return per_sample.mean(axis=1)


def hard_pairs_stack(cosines, labels, variant, t=0.0):
    """Hardness masks ``(K, B, n)`` for stacked cosine matrices."""
    _, hard = _stack_terms(cosines, labels, variant, t)
    return hard


def direct_loss(batch, variant, t=0.0):
    """Loss of a single batch, one sample at a time in plain Python."""
    kind = _kind(variant)
    m, s = variant.margin_m, variant.scale_s
    if variant.fixed_t is not None:
        t = variant.fixed_t
    total = 0.0
    cos = batch.cosines
    for i, y in enumerate(batch.labels):
        c_gt = float(cos[i, y])
        if kind == "softmax":
            target = c_gt
        elif kind == "cosface":
            target = c_gt - m
        else:
            target = math.cos(math.acos(c_gt) + m)
        denom = math.exp(s * target)
        for j in range(cos.shape[1]):
            if j == y:
                continue
            c = float(cos[i, j])
            if target - c >= 0 or kind in ("softmax", "cosface", "arcface"):
                value = c
            elif kind == "curricularface":
                value = c * (t + c)
            else:
                value = t * c + t - 1
            denom += math.exp(s * value)
        total += -math.log(math.exp(s * target) / denom)
    return total / len(batch.labels)


def finite_diff_grad(loss_fn, point, spec=FiniteDiffSpec(), batched=False, branch_fn=None):
    """Central-difference gradient of ``loss_fn`` at ``point``.

    The step for coordinate i is ``step_h * max(1, |x_i|)``. With
    ``batched=True`` ``loss_fn`` receives every perturbed copy at once as a
    ``(2P, *shape)`` array (``+h`` copies first) and returns ``2P`` values.
    ``branch_fn`` maps points the same way to a branch signature (for
    instance a hardness mask); coordinates whose ``+h`` and ``-h``
    signatures differ are skipped and reported.
    """
    x0 = np.asarray(point, dtype=np.float64)
    flat = x0.ravel()
    p = flat.size
    h = spec.step_h * np.maximum(1.0, np.abs(flat))

    stack = np.repeat(flat[None, :], 2 * p, axis=0)
    idx = np.arange(p)
    stack[idx, idx] += h
    stack[p + idx, idx] -= h
    stack = stack.reshape((2 * p,) + x0.shape)

    if batched:
        values = np.asarray(loss_fn(stack))
    else:
        values = np.array([loss_fn(pt) for pt in stack])
    # difference in the loss function's own precision before rounding to float64
    grad = ((values[:p] - values[p:]) / (2.0 * h)).astype(np.float64)

    skipped = np.zeros(p, dtype=bool)
    if branch_fn is not None:
        if batched:
            sig = np.asarray(branch_fn(stack)).reshape(2 * p, -1)
        else:
            sig = np.array([np.asarray(branch_fn(pt)).ravel() for pt in stack])
        skipped = np.any(sig[:p] != sig[p:], axis=1)
    grad[skipped] = np.nan
    return FiniteDiffResult(grad.reshape(x0.shape), skipped.reshape(x0.shape))


def near_boundary(cosines, labels, variant, band):
    """Pairs whose ``T(cos_gt) - cos_j`` lies within ``band`` of zero."""
    cos = np.asarray(cosines, dtype=np.float64)
    b = len(labels)
    gt = cos[np.arange(b), labels]
    target = _target_value(gt, _kind(variant), variant.margin_m)
    near = np.abs(target[:, None] - cos) <= band
    near[np.arange(b), labels] = False
    if not variant.mines_hard:
        near[:] = False
    return near


def exclusion_masks(cosines, labels, variant, band, d):
    """Coordinates to leave out of a gradient comparison.

    Returns masks shaped like the cosines ``(B, n)``, the features
    ``(B, d)`` and the classifier ``(d, n)``. A sample with any near-boundary
    pair has its whole cosine row and feature row excluded; a classifier
    column is excluded when it touches such a pair directly or is the
    ground-truth column of such a sample.
    """
    near = near_boundary(cosines, labels, variant, band)
    sample_near = near.any(axis=1)
    cos_mask = np.repeat(sample_near[:, None], near.shape[1], axis=1)
    feat_mask = np.repeat(sample_near[:, None], d, axis=1)
    col = near.any(axis=0)
    col[np.asarray(labels)[sample_near]] = True
    cls_mask = np.repeat(col[None, :], d, axis=0)
    return cos_mask, feat_mask, cls_mask


def relative_error(analytic, numeric, floor=None):
    """``|a - f| / max(|a|, |f|, floor)`` elementwise.

    ``floor`` defaults to the largest ``|a|`` in the array, which makes
    entries far below the gradient's scale count relative to that scale
    instead of to their own (noise-dominated) size. NaNs in ``numeric``
    (skipped coordinates) come back as 0.
    """
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    if floor is None:
        floor = float(np.max(np.abs(a))) if a.size else 0.0
    floor = max(floor, np.finfo(np.float64).tiny)
    err = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return np.where(np.isnan(f), 0.0, err)


def solve_boundary(target_fn, other_value, lo, hi):
    """Root of ``target_fn(cos(theta_y)) - other_value`` for ``theta_y`` in ``[lo, hi]``.

    Returns NaN if the bracket does not straddle a sign change.
    """
    def f(theta):
        return float(target_fn(math.cos(theta))) - other_value

    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        return math.nan
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def random_batch(rng, b=8, n=10, d=16, spread=None):
    """Random unit features and classifier plus their cosines and labels.

    Each feature is pulled toward its label's column by a random amount so
    that both easy and hard pairs appear. Returns ``(features, classifier,
    cosines, labels)``.
    """
    w = rng.standard_normal((d, n))
    w /= np.linalg.norm(w, axis=0, keepdims=True)
    labels = rng.integers(0, n, size=b)
    pull = rng.uniform(0.0, 3.0, size=b) if spread is None else np.full(b, spread)
    x = rng.standard_normal((b, d)) / math.sqrt(d) + pull[:, None] * w[:, labels].T
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    cos = np.clip(x @ w, -1 + 1e-7, 1 - 1e-7)
    return x, w, cos, labels
