"""JSON experiment configs with strict key checking.

A config document looks like::

    {
      "name": "golden",
      "data": {"num_classes": 10, "input_dim": 16, ...},      # optional
      "train": {"learning_rate": 0.1, "epochs": 30, ...},
      "variant": {"kind": "curricularface", "margin_m": 0.5, "scale_s": 64},
      "statistic_kind": "mean-cos",
      "eval": {"pairs_per_polarity": 500, "pair_seed": 1, "far_targets": [0.001, 0.01]},
      "outputs": {"checkpoint": "checkpoint.cmgn", "trace": "trace.csv", "metrics": "metrics.json"}
    }

Unknown keys anywhere raise ``ValueError``; every section is validated by
the dataclass it maps onto.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from cmgn.curriculum import StatisticKind
from cmgn.datasets import SyntheticSpec
from cmgn.losses import LossVariant
from cmgn.trainer import TrainConfig

_TOP_KEYS = {"name", "data", "train", "variant", "statistic_kind", "eval", "outputs"}


@dataclass(frozen=True)
class EvalConfig:
    pairs_per_polarity: int = 500
    pair_seed: int = 1
    far_targets: tuple = (1e-3, 1e-2, 1e-1)

    def __post_init__(self):
        object.__setattr__(self, "far_targets", tuple(float(f) for f in self.far_targets))
        if self.pairs_per_polarity < 1:
            raise ValueError("pairs_per_polarity must be >= 1")
        if any(not 0.0 <= f <= 1.0 for f in self.far_targets):
            raise ValueError("far_targets must lie in [0, 1]")


@dataclass(frozen=True)
class OutputPaths:
    checkpoint: str = "checkpoint.cmgn"
    trace: str = "trace.csv"
    metrics: str = "metrics.json"


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    data: SyntheticSpec | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    outputs: OutputPaths = field(default_factory=OutputPaths)

    @property
    def variant(self):
        return self.train.variant

    def to_dict(self):
        t = self.train.to_dict()
        variant = t.pop("variant")
        statistic = t.pop("statistic_kind")
        out = {"name": self.name}
        if self.data is not None:
            out["data"] = dataclasses.asdict(self.data)
        out.update(
            train=t,
            variant=variant,
            statistic_kind=statistic,
            eval={**dataclasses.asdict(self.eval), "far_targets": list(self.eval.far_targets)},
            outputs=dataclasses.asdict(self.outputs),
        )
        return out


def _strict(cls, section, where):
    if not isinstance(section, dict):
        raise ValueError(f"{where}: expected an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ValueError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ValueError(f"{where}: {exc}") from None


def parse_experiment(doc):
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise ValueError(f"unknown top-level key(s) {', '.join(unknown)}")
    train_doc = dict(doc.get("train", {}))
    if "variant" in train_doc or "statistic_kind" in train_doc:
        raise ValueError("train: put variant and statistic_kind at the top level")
    variant = _strict(LossVariant, doc.get("variant", {}), "variant")
    train_doc["variant"] = variant
    train_doc["statistic_kind"] = StatisticKind.parse(doc.get("statistic_kind", "mean-cos"))
    train = _strict(TrainConfig, train_doc, "train")
    data = _strict(SyntheticSpec, doc["data"], "data") if doc.get("data") is not None else None
    return ExperimentConfig(
        name=str(doc.get("name", "experiment")),
        data=data,
        train=train,
        eval=_strict(EvalConfig, doc.get("eval", {}), "eval"),
        outputs=_strict(OutputPaths, doc.get("outputs", {}), "outputs"),
    )


def load_experiment(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from None
    return parse_experiment(doc)


def load_synthetic_spec(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from None
    return _strict(SyntheticSpec, doc, "spec")
