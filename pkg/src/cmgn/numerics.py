"""Small float64 helpers: normalization, clamped cosines, log-softmax."""

import numpy as np

from cmgn.errors import DegenerateInputError, ShapeError

COS_EPS = 1e-7
COS_MIN = -1.0 + COS_EPS
COS_MAX = 1.0 - COS_EPS


def l2_normalize(v):
    """Return ``v / ||v||`` as float64.

    Raises DegenerateInputError for a zero vector.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm):
        raise DegenerateInputError("vector has non-finite entries")
    if norm == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norm


def l2_normalize_rows(x):
    """Row-wise l2 normalization. Returns ``(normalized, norms)``."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(~(norms > 0.0) | ~np.isfinite(norms))
    if bad.size:
        raise DegenerateInputError(f"row {bad[0]} has zero or non-finite norm")
    return x / norms[:, None], norms


def normalize_columns(w):
    """Scale every column of ``w`` to unit norm."""
    w = np.asarray(w, dtype=np.float64)
    norms = np.linalg.norm(w, axis=0)
    bad = np.flatnonzero(~(norms > 0.0))
    if bad.size:
        raise DegenerateInputError(f"classifier column {bad[0]} has zero norm")
    return w / norms[None, :]


def clamp_cosines(c):
    return np.clip(c, COS_MIN, COS_MAX)


def cosine_batch(features, classifier):
    """Cosine of every (sample, class) pair, clamped away from +-1.

    ``features`` is ``(B, d)`` with unit rows, ``classifier`` is ``(d, n)``
    with unit columns. The result is ``(B, n)``.
    """
    features = np.asarray(features, dtype=np.float64)
    classifier = np.asarray(classifier, dtype=np.float64)
    if features.ndim != 2 or classifier.ndim != 2:
        raise ShapeError("features and classifier must both be 2-D")
    if features.shape[1] != classifier.shape[0]:
        raise ShapeError(
            f"feature dim {features.shape[1]} != classifier rows {classifier.shape[0]}"
        )
    return clamp_cosines(features @ classifier)


def stable_log_softmax(logits, axis=-1):
    """Log-softmax along ``axis`` with the max subtracted first."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("log-softmax input contains non-finite values")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
