"""Verification and identification metrics on unit embeddings."""

import csv
from dataclasses import dataclass, field

import numpy as np

from cmgn.losses import LossKind, modulation_coefficient, negative_transform


@dataclass
class VerificationReport:
    best_accuracy: float
    best_threshold: float
    tar_at_far: list = field(default_factory=list)  # (far_target, tar, threshold)
    roc_points: list = field(default_factory=list)  # (far, tar)

    def to_dict(self):
        return {
            "best_accuracy": self.best_accuracy,
            "best_threshold": self.best_threshold,
            "tar_at_far": [
                {"far_target": f, "tar": t, "threshold": th} for f, t, th in self.tar_at_far
            ],
            "roc_points": [list(p) for p in self.roc_points],
        }


def pair_scores(embeddings, pairs):
    e = np.asarray(embeddings, dtype=np.float64)
    return np.einsum("ij,ij->i", e[pairs.index_a], e[pairs.index_b])


def threshold_sweep(scores, same):
    """Accept/reject counts for every distinct threshold, highest first.

    A pair is accepted when ``score >= threshold``. The candidate list is
    ``+inf`` (accept nothing) followed by the distinct scores in descending
    order; the last one accepts everything. Returns ``(thresholds, tp, fp)``
    with counts per threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    tp_cum = np.cumsum(same[order])
    fp_cum = np.cumsum(~same[order])
    # last position of each run of equal scores
    last = np.flatnonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))
    thresholds = np.concatenate([[np.inf], s_sorted[last]])
    tp = np.concatenate([[0], tp_cum[last]])
    fp = np.concatenate([[0], fp_cum[last]])
    return thresholds, tp, fp


def verification_report(embeddings, pairs, far_targets=(1e-4, 1e-3, 1e-2, 1e-1)):
    """Best accuracy over all thresholds plus TAR at each requested FAR.

    For TAR@FAR the chosen threshold is the lowest one whose FAR does not
    exceed the target, i.e. the highest TAR reachable without overshooting.
    """
    scores = pair_scores(embeddings, pairs)
    same = np.asarray(pairs.same, dtype=bool)
    n_pos, n_neg = int(same.sum()), int((~same).sum())
    far_targets = list(far_targets)
    if far_targets and n_neg == 0:
        raise ValueError("TAR@FAR needs at least one negative pair")
    if len(same) == 0:
        raise ValueError("no pairs to evaluate")

    thresholds, tp, fp = threshold_sweep(scores, same)
    tn = n_neg - fp
    acc = (tp + tn) / len(same)
    best = int(np.argmax(acc))
    tar = tp / n_pos if n_pos else np.zeros_like(tp, dtype=np.float64)
    far = fp / n_neg if n_neg else np.zeros_like(fp, dtype=np.float64)

    tar_at = []
    for target in far_targets:
        ok = np.flatnonzero(far <= target)
        k = int(ok[-1])  # thresholds descend, so the last admissible one is the lowest
        tar_at.append((float(target), float(tar[k]), float(thresholds[k])))

    return VerificationReport(
        best_accuracy=float(acc[best]),
        best_threshold=float(thresholds[best]),
        tar_at_far=tar_at,
        roc_points=[(float(f), float(t)) for f, t in zip(far, tar)],
    )


def rank1_identification(probe, gallery, probe_labels, gallery_labels):
    """Fraction of probes whose most similar gallery row has the same label.

    Ties go to the lowest gallery index.
    """
    gallery = np.asarray(gallery, dtype=np.float64)
    probe = np.asarray(probe, dtype=np.float64)
    if gallery.shape[0] == 0:
        raise ValueError("empty gallery")
    if probe.shape[0] == 0:
        raise ValueError("no probes")
    nearest = np.argmax(probe @ gallery.T, axis=1)
    return float(np.mean(np.asarray(gallery_labels)[nearest] == np.asarray(probe_labels)))


def modulation_curves(variant, t_values, cos_grid):
    """Rows ``(t, cos_j, I, N)`` of the hard-branch negative transform.

    For the non-mining variants there is no hard branch, so ``I = 1`` and
    ``N = cos_j``.
    """
    t_values = list(t_values)
    cos_grid = np.asarray(list(cos_grid), dtype=np.float64)
    if not t_values or cos_grid.size == 0:
        raise ValueError("t_values and cos_grid must be non-empty")
    if np.any(np.abs(cos_grid) > 1.0):
        raise ValueError("cos_grid values must lie in [-1, 1]")
    hard = variant.kind in (LossKind.MV_ARC_SOFTMAX, LossKind.CURRICULAR)
    rows = []
    for t in t_values:
        coef = modulation_coefficient(cos_grid, t, variant, hard)
        val = negative_transform(cos_grid, t, variant, hard)
        rows.extend(zip([float(t)] * len(cos_grid), cos_grid.tolist(), np.ravel(coef).tolist(), np.ravel(val).tolist()))
    return rows


CURVE_HEADER = ["t", "cos_j", "I", "N"]


def write_curves_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
