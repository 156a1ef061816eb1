"""Randomized comparison of analytic loss gradients against finite differences.

Each trial draws a random batch (features, classifier, labels) and a value
of ``t``, then checks ``dL/dcos``, ``dL/dfeatures`` and ``dL/dclassifier``
from :mod:`cmgn.losses` against central differences of the independent
loss in :mod:`cmgn.oracle`. Coordinates touching a pair within the
exclusion band of the easy/hard boundary, or whose +h/-h evaluations land
on different branches, are left out.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from cmgn import oracle
from cmgn.losses import CosineBatch, LossKind, backward, forward


@dataclass
class Offender:
    error: float
    trial: int
    array: str
    index: tuple
    analytic: float
    numeric: float
    scale_s: float


@dataclass
class GradCheckResult:
    variant: str
    trials: int
    max_error: float = 0.0
    worst: Offender | None = None
    checked: int = 0
    excluded: int = 0
    skipped: int = 0
    per_scale: dict = field(default_factory=dict)

    def passed(self, tolerance):
        return self.max_error <= tolerance


def _trial_variant(variant, rng):
    if variant.kind is LossKind.MV_ARC_SOFTMAX:
        return dataclasses.replace(variant, fixed_t=float(rng.uniform(1.0, 1.5)))
    return variant


def check_variant(variant, trials, seed, scales=(1.0, 64.0), b=8, n=10, d=16, spec=oracle.FiniteDiffSpec()):
    """Run ``trials`` random batches, cycling through ``scales``.

    ``t`` is drawn from U(0, 1) per trial (for MV-Arc-Softmax ``fixed_t`` is
    drawn from U(1, 1.5) instead).
    """
    rng = np.random.default_rng(seed)
    result = GradCheckResult(variant.kind.value, trials)
    for trial in range(trials):
        s = float(scales[trial % len(scales)])
        v = _trial_variant(dataclasses.replace(variant, scale_s=s), rng)
        t = float(rng.uniform(0.0, 1.0))
        x, w, cos, labels = oracle.random_batch(rng, b, n, d)

        batch = CosineBatch(cos, labels)
        out = forward(batch, v, t)
        gx, gw = backward(batch, v, t, x, w, output=out)
        cos_ex, feat_ex, cls_ex = oracle.exclusion_masks(cos, labels, v, spec.exclusion_band, d)

        def loss_of(c):
            return oracle.direct_loss_stack(c, labels, v, t)

        def branch_of(c):
            return oracle.hard_pairs_stack(c, labels, v, t)

        checks = [
            ("cosines", out.grad_cosines, cos, lambda p: p, cos_ex),
            ("features", gx, x, lambda p: p @ w, feat_ex),
            ("classifier", gw, w, lambda p: x @ p, cls_ex),
        ]
        for name, analytic, point, to_cos, excluded in checks:
            fd = oracle.finite_diff_grad(
                lambda p: loss_of(to_cos(p)),
                point,
                spec,
                batched=True,
                branch_fn=lambda p: branch_of(to_cos(p)),
            )
            numeric = np.where(excluded, np.nan, fd.grad)
            err = np.nan_to_num(oracle.relative_error(analytic, numeric), nan=np.inf)
            result.checked += int(np.sum(~np.isnan(numeric)))
            result.excluded += int(np.sum(excluded))
            result.skipped += int(np.sum(fd.skipped & ~excluded))
            i = np.unravel_index(int(np.argmax(err)), err.shape)
            e = float(err[i])
            result.per_scale[s] = max(result.per_scale.get(s, 0.0), e)
            if e > result.max_error or result.worst is None:
                result.max_error = max(result.max_error, e)
                result.worst = Offender(e, trial, name, tuple(int(k) for k in i), float(analytic[i]), float(fd.grad[i]), s)
    return result
