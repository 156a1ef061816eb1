"""EMA tracking of the curriculum parameter ``t``.

``t`` starts at zero and moves toward a per-batch statistic ``r``. By
default the momentum weight sits on the history,
``t_new = (1 - momentum) * r + momentum * t_old``, so that ``t`` drifts
slowly over thousands of steps. ``weight_on_history=False`` swaps the
weights (``t_new = momentum * r + (1 - momentum) * t_old``).
"""

import enum
import math
from dataclasses import dataclass, replace

import numpy as np


class StatisticKind(str, enum.Enum):
    MEAN_POSITIVE_COSINE = "mean-cos"
    MODE_POSITIVE_COSINE = "mode-cos"
    MEAN_GT_PROBABILITY = "mean-prob"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        aliases = {
            "meanpositivecosine": cls.MEAN_POSITIVE_COSINE,
            "mean-positive-cosine": cls.MEAN_POSITIVE_COSINE,
            "modepositivecosine": cls.MODE_POSITIVE_COSINE,
            "mode-positive-cosine": cls.MODE_POSITIVE_COSINE,
            "meangtprobability": cls.MEAN_GT_PROBABILITY,
            "mean-gt-probability": cls.MEAN_GT_PROBABILITY,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown statistic kind {name!r}") from None


MODE_BIN_WIDTH = 0.01


@dataclass(frozen=True)
class CurriculumState:
    t: float = 0.0
    momentum: float = 0.99
    iteration_k: int = 0
    statistic_kind: StatisticKind = StatisticKind.MEAN_POSITIVE_COSINE
    weight_on_history: bool = True

    def __post_init__(self):
        object.__setattr__(self, "statistic_kind", StatisticKind.parse(self.statistic_kind))
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.iteration_k < 0:
            raise ValueError("iteration_k must be >= 0")

    def to_dict(self):
        return {
            "t": self.t,
            "momentum": self.momentum,
            "iteration_k": self.iteration_k,
            "statistic_kind": self.statistic_kind.value,
            "weight_on_history": self.weight_on_history,
        }


def mode_of_cosines(values):
    """Midpoint of the fullest 0.01-wide bin over [-1, 1]; ties go to the lower bin."""
    v = np.asarray(values, dtype=np.float64)
    # round first so a value on a bin edge (0.29/0.01 = 28.999999999999996) stays in its bin
    idx = np.floor(np.round(v / MODE_BIN_WIDTH, 9)).astype(np.int64)
    nbins = int(round(2.0 / MODE_BIN_WIDTH))
    idx = np.clip(idx + nbins // 2, 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    best = int(np.argmax(counts))
    return (best - nbins // 2 + 0.5) * MODE_BIN_WIDTH


def batch_statistic(batch, prob_gt, kind):
    """The per-batch ``r`` fed into the EMA."""
    kind = StatisticKind.parse(kind)
    gt = batch.gt_cosines
    if gt.size == 0:
        raise ValueError("empty batch")
    if kind is StatisticKind.MEAN_POSITIVE_COSINE:
        return float(np.mean(gt))
    if kind is StatisticKind.MODE_POSITIVE_COSINE:
        return float(mode_of_cosines(gt))
    prob_gt = np.asarray(prob_gt, dtype=np.float64)
    if prob_gt.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(prob_gt))


def update_t(state, r):
    """One EMA step; returns a new state with ``iteration_k`` advanced."""
    if not math.isfinite(r):
        raise ValueError(f"batch statistic must be finite, got {r}")
    a = state.momentum
    if state.weight_on_history:
        t = (1.0 - a) * r + a * state.t
    else:
        t = a * r + (1.0 - a) * state.t
    return replace(state, t=t, iteration_k=state.iteration_k + 1)


def replay(r_values, state=None):
    """Run ``update_t`` over a recorded r stream, returning the t sequence."""
    state = state or CurriculumState()
    out = []
    for r in r_values:
        state = update_t(state, float(r))
        out.append(state.t)
    return out
