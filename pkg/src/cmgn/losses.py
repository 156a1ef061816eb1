"""Margin-based softmax losses on cosine logits.

Every variant is expressed as a pair of transforms: ``T`` acts on the
ground-truth cosine, ``N`` on each non-ground-truth cosine. The loss is
cross-entropy over the scaled logits ``s*T`` (ground truth) and ``s*N``
(others). The mining variants (MV-Arc-Softmax and CurricularFace) switch
``N`` per (sample, class) pair depending on whether ``T(cos_gt) >= cos_j``.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from cmgn.errors import NumericalFailure, ShapeError
from cmgn.numerics import stable_log_softmax


class LossKind(str, enum.Enum):
    NORMALIZED_SOFTMAX = "softmax"
    COSFACE = "cosface"
    ARCFACE = "arcface"
    MV_ARC_SOFTMAX = "mv-arc-softmax"
    CURRICULAR = "curricularface"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        aliases = {
            "normalized-softmax": cls.NORMALIZED_SOFTMAX,
            "normalizedsoftmax": cls.NORMALIZED_SOFTMAX,
            "mvarcsoftmax": cls.MV_ARC_SOFTMAX,
            "mv-arc": cls.MV_ARC_SOFTMAX,
            "curricular": cls.CURRICULAR,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown loss variant {name!r}") from None


ANGULAR_KINDS = (LossKind.ARCFACE, LossKind.MV_ARC_SOFTMAX, LossKind.CURRICULAR)
MINING_KINDS = (LossKind.MV_ARC_SOFTMAX, LossKind.CURRICULAR)


@dataclass(frozen=True)
class LossVariant:
    """Which loss to use and its hyperparameters.

    ``margin_m`` is an angle in radians for the angular variants and a
    cosine offset for CosFace; it is ignored by the normalized softmax.
    ``fixed_t`` pins the curriculum parameter: it is required for
    MV-Arc-Softmax and optional for CurricularFace (fixed-t ablations).
    """

    kind: LossKind = LossKind.CURRICULAR
    margin_m: float = 0.5
    scale_s: float = 64.0
    fixed_t: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind.parse(self.kind))
        if not (self.scale_s > 0 and math.isfinite(self.scale_s)):
            raise ValueError(f"scale_s must be positive, got {self.scale_s}")
        if not (self.margin_m >= 0 and math.isfinite(self.margin_m)):
            raise ValueError(f"margin_m must be >= 0, got {self.margin_m}")
        if self.kind in ANGULAR_KINDS and self.margin_m >= math.pi / 2:
            raise ValueError("angular margin must be below pi/2")
        if self.kind is LossKind.MV_ARC_SOFTMAX:
            if self.fixed_t is None or not self.fixed_t >= 1.0:
                raise ValueError("mv-arc-softmax needs fixed_t >= 1")
        if self.fixed_t is not None and not math.isfinite(self.fixed_t):
            raise ValueError("fixed_t must be finite")
        if self.fixed_t is not None and self.kind not in MINING_KINDS:
            raise ValueError(f"fixed_t has no meaning for {self.kind.value}")

    @property
    def mines_hard(self):
        return self.kind in MINING_KINDS

    @property
    def adaptive(self):
        """True when t must come from a curriculum state."""
        return self.kind is LossKind.CURRICULAR and self.fixed_t is None

    def offset_c(self, t):
        """The additive constant in ``N = I*cos + c`` for hard pairs."""
        if self.kind is LossKind.MV_ARC_SOFTMAX:
            return t - 1.0
        return 0.0

    def resolve_t(self, t):
        if self.fixed_t is not None:
            return float(self.fixed_t)
        if t is None:
            if self.mines_hard:
                raise ValueError(f"{self.kind.value} needs a value for t")
            return 0.0
        return float(t)

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "margin_m": self.margin_m,
            "scale_s": self.scale_s,
            "fixed_t": self.fixed_t,
        }


@dataclass
class CosineBatch:
    cosines: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.cosines = np.asarray(self.cosines, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.cosines.ndim != 2:
            raise ShapeError("cosines must be (B, n)")
        b, n = self.cosines.shape
        if self.labels.shape != (b,):
            raise ShapeError(f"expected {b} labels, got shape {self.labels.shape}")
        if b == 0:
            raise ValueError("empty batch")
        if np.any(self.labels < 0) or np.any(self.labels >= n):
            raise ValueError("labels out of range")

    @property
    def gt_cosines(self):
        return self.cosines[np.arange(len(self.labels)), self.labels]

    def gt_mask(self):
        mask = np.zeros(self.cosines.shape, dtype=bool)
        mask[np.arange(len(self.labels)), self.labels] = True
        return mask


@dataclass
class LossOutput:
    loss: float
    grad_cosines: np.ndarray
    hard_mask: np.ndarray
    r_stat: float
    prob_gt: np.ndarray
    t: float = 0.0
    logits: np.ndarray = field(default=None, repr=False)

    @property
    def hard_sample_fraction(self):
        """Fraction of samples with at least one hard pair."""
        return float(np.mean(np.any(self.hard_mask, axis=1)))


def _sin_from_cos(c):
    return np.sqrt(np.maximum(1.0 - np.square(c), 0.0))


def positive_transform(cos_gt, variant):
    """``T(cos_gt)``; ``cos(theta+m)`` goes through the angle-addition identity."""
    c = np.asarray(cos_gt, dtype=np.float64)
    kind = variant.kind
    if kind is LossKind.NORMALIZED_SOFTMAX:
        out = c.copy()
    elif kind is LossKind.COSFACE:
        out = c - variant.margin_m
    else:
        m = variant.margin_m
        out = c * math.cos(m) - _sin_from_cos(c) * math.sin(m)
    return out if out.ndim else float(out)


def positive_transform_derivative(cos_gt, variant):
    """``dT/dcos``. For the angular margin this is ``sin(theta+m)/sin(theta)``."""
    c = np.asarray(cos_gt, dtype=np.float64)
    if variant.kind in ANGULAR_KINDS:
        m = variant.margin_m
        sin_t = np.maximum(_sin_from_cos(c), 1e-7)
        sin_tm = sin_t * math.cos(m) + c * math.sin(m)
        out = sin_tm / sin_t
    else:
        out = np.ones_like(c)
    return out if out.ndim else float(out)


def classify_hard(cos_gt, cos_j, variant):
    """True where ``T(cos_gt) - cos_j < 0``. Ties count as easy."""
    return np.asarray(positive_transform(cos_gt, variant)) - np.asarray(cos_j) < 0


def modulation_coefficient(cos_j, t, variant, is_hard):
    """The multiplier ``I`` in ``N = I*cos_j + c``."""
    cos_j = np.asarray(cos_j, dtype=np.float64)
    is_hard = np.asarray(is_hard, dtype=bool)
    if variant.kind is LossKind.CURRICULAR:
        hard_coef = t + cos_j
    elif variant.kind is LossKind.MV_ARC_SOFTMAX:
        hard_coef = np.full_like(cos_j, t)
    else:
        hard_coef = np.ones_like(cos_j)
    out = np.where(is_hard, hard_coef, 1.0)
    return out if out.ndim else float(out)


def negative_transform(cos_j, t, variant, is_hard):
    """``N(t, cos_j)``: identity unless the pair is hard under a mining variant."""
    cos_j = np.asarray(cos_j, dtype=np.float64)
    is_hard = np.asarray(is_hard, dtype=bool)
    if variant.kind is LossKind.CURRICULAR:
        hard_val = (t + cos_j) * cos_j
    elif variant.kind is LossKind.MV_ARC_SOFTMAX:
        hard_val = t * cos_j + t - 1.0
    else:
        hard_val = cos_j
    out = np.where(is_hard, hard_val, cos_j)
    return out if out.ndim else float(out)


def negative_transform_derivative(cos_j, t, variant, is_hard):
    """``dN/dcos_j``: 1 when easy, ``2cos_j + t`` (CurricularFace) or ``t`` (MV) when hard."""
    cos_j = np.asarray(cos_j, dtype=np.float64)
    is_hard = np.asarray(is_hard, dtype=bool)
    if variant.kind is LossKind.CURRICULAR:
        hard_d = gradient_modulation(cos_j, t)
    elif variant.kind is LossKind.MV_ARC_SOFTMAX:
        hard_d = np.full_like(cos_j, t)
    else:
        hard_d = np.ones_like(cos_j)
    out = np.where(is_hard, hard_d, 1.0)
    return out if out.ndim else float(out)


def gradient_modulation(cos_j, t):
    """Gradient multiplier ``M = 2*cos_j + t`` on hard CurricularFace pairs."""
    return 2.0 * np.asarray(cos_j, dtype=np.float64) + t


def hard_mask(batch, variant):
    """Per-pair hardness; all False for the non-mining variants."""
    if not variant.mines_hard:
        return np.zeros(batch.cosines.shape, dtype=bool)
    gt_t = positive_transform(batch.gt_cosines, variant)
    mask = batch.cosines > gt_t[:, None]
    mask[np.arange(len(batch.labels)), batch.labels] = False
    return mask


def branch_gap(batch, variant):
    """``T(cos_gt) - cos_j`` for every pair, ``+inf`` on ground-truth entries."""
    gt_t = positive_transform(batch.gt_cosines, variant)
    gap = gt_t[:, None] - batch.cosines
    gap[np.arange(len(batch.labels)), batch.labels] = np.inf
    return gap


def modulated_logits(batch, variant, t):
    """Scaled logits ``s*T`` / ``s*N`` and the hardness mask used to build them."""
    mask = hard_mask(batch, variant)
    rows = np.arange(len(batch.labels))
    neg = negative_transform(batch.cosines, t, variant, mask)
    logits = variant.scale_s * neg
    logits[rows, batch.labels] = variant.scale_s * positive_transform(batch.gt_cosines, variant)
    return logits, mask


def forward(batch, variant, t=None):
    """Mean cross-entropy over the modulated logits, with ``dL/dcos``.

    ``t`` is ignored when the variant carries ``fixed_t``.
    """
    t = variant.resolve_t(t)
    logits, mask = modulated_logits(batch, variant, t)
    finite = np.all(np.isfinite(logits), axis=1)
    if not np.all(finite):
        i = int(np.flatnonzero(~finite)[0])
        raise NumericalFailure(f"non-finite logit in sample {i}", sample_index=i)

    b = len(batch.labels)
    rows = np.arange(b)
    logp = stable_log_softmax(logits, axis=1)
    per_sample = -logp[rows, batch.labels]
    prob = np.exp(logp)

    dlogits = prob
    # p_gt - 1 written as -(sum of the other probabilities); no cancellation when p_gt ~ 1
    dlogits[rows, batch.labels] = 0.0
    dlogits[rows, batch.labels] = -np.sum(dlogits, axis=1)
    dlogits /= b

    dcos = negative_transform_derivative(batch.cosines, t, variant, mask)
    dcos[rows, batch.labels] = positive_transform_derivative(batch.gt_cosines, variant)
    grad = dlogits * variant.scale_s * dcos
    if not np.all(np.isfinite(grad)):
        i = int(np.flatnonzero(~np.all(np.isfinite(grad), axis=1))[0])
        raise NumericalFailure(f"non-finite gradient in sample {i}", sample_index=i)

    return LossOutput(
        loss=float(np.mean(per_sample)),
        grad_cosines=grad,
        hard_mask=mask,
        r_stat=float(np.mean(batch.gt_cosines)),
        prob_gt=np.exp(-per_sample),
        t=t,
        logits=logits,
    )


def backward(batch, variant, t, features, classifier, output=None):
    """Gradients of the mean loss w.r.t. the unit features and classifier.

    With ``cos = features @ classifier`` this is the chain rule applied to
    ``dL/dcos``: sample i gets ``sum_j g_ij W_j`` and column j gets
    ``sum_i g_ij x_i``. Pass ``output`` to reuse an existing forward pass.
    """
    if output is None:
        output = forward(batch, variant, t)
    g = output.grad_cosines
    features = np.asarray(features, dtype=np.float64)
    classifier = np.asarray(classifier, dtype=np.float64)
    if features.shape[0] != g.shape[0] or classifier.shape[1] != g.shape[1]:
        raise ShapeError("features/classifier do not match the cosine batch")
    return g @ classifier.T, features.T @ g


def hard_gradient_range(batch, output, variant):
    """(min, max) of the hard-pair gradient multiplier, NaNs if nothing is hard."""
    mask = output.hard_mask
    if not np.any(mask):
        return math.nan, math.nan
    if variant.kind is LossKind.MV_ARC_SOFTMAX:
        return output.t, output.t
    m = gradient_modulation(batch.cosines[mask], output.t)
    return float(np.min(m)), float(np.max(m))


def decision_boundary(variant, theta_j, t=0.0, hard=False):
    """Ground-truth angle on the decision boundary for a given ``theta_j``.

    Closed forms per loss:

    ==============  ===================================================
    softmax         cos(theta_y) = cos(theta_j)
    cosface         cos(theta_y) - m = cos(theta_j)
    arcface         cos(theta_y + m) = cos(theta_j)
    mv (hard)       cos(theta_y + m) = t cos(theta_j) + t - 1
    curricular (h)  cos(theta_y + m) = (t + cos(theta_j)) cos(theta_j)
    ==============  ===================================================

    Easy branches of the mining variants coincide with arcface. Returns NaN
    where no boundary angle exists in ``[0, pi]``.
    """
    theta_j = np.asarray(theta_j, dtype=np.float64)
    m = variant.margin_m
    cj = np.cos(theta_j)
    kind = variant.kind
    with np.errstate(invalid="ignore"):
        if kind is LossKind.NORMALIZED_SOFTMAX:
            out = theta_j.copy()
        elif kind is LossKind.COSFACE:
            out = np.arccos(cj + m)
        elif kind is LossKind.MV_ARC_SOFTMAX and hard:
            out = np.arccos(t * cj + t - 1.0) - m
        elif kind is LossKind.CURRICULAR and hard:
            out = np.arccos((t + cj) * cj) - m
        else:
            out = theta_j - m
    out = np.where((out >= 0) & (out <= np.pi), out, np.nan)
    return out if out.ndim else float(out)
