"""End-to-end runs used by the CLI: train, evaluate, compare."""

import concurrent.futures
import dataclasses
import json
import os
from pathlib import Path

from cmgn.checkpoint import save_checkpoint
from cmgn.curriculum import StatisticKind
from cmgn.datasets import make_pairs
from cmgn.errors import NumericalFailure
from cmgn.evaluation import verification_report
from cmgn.losses import LossKind, LossVariant
from cmgn.trainer import forward_embed, train, train_accuracy

TABLE_HEADER = [
    "name",
    "variant",
    "t_setting",
    "statistic",
    "train_accuracy",
    "verification_accuracy",
    "final_t",
    "final_loss",
    "status",
]


def check_compatible(config, dataset):
    """Raise ValueError if the config's data section disagrees with the dataset."""
    spec = config.data
    if spec is None:
        return
    if spec.input_dim != dataset.input_dim:
        raise ValueError(f"config expects input_dim {spec.input_dim}, data has {dataset.input_dim}")
    if spec.num_classes != dataset.num_classes:
        raise ValueError(f"config expects {spec.num_classes} classes, data has {dataset.num_classes}")


def evaluate(params, dataset, config):
    pairs = make_pairs(dataset, config.eval.pairs_per_polarity, config.eval.pair_seed)
    emb = forward_embed(params, dataset.inputs)
    return verification_report(emb, pairs, config.eval.far_targets)


def run_experiment(config, dataset):
    """Train and evaluate. Returns ``(state, trace, metrics_dict)``."""
    check_compatible(config, dataset)
    state, trace = train(config.train, dataset)
    report = evaluate(state.params, dataset, config)
    last = trace.records[-1]
    metrics = {
        "name": config.name,
        "iterations": len(trace),
        "final_loss": last.loss,
        "final_t": last.t,
        "train_accuracy": train_accuracy(state.params, dataset),
        "verification": report.to_dict(),
        "config": config.to_dict(),
    }
    return state, trace, metrics


def write_run(out_dir, config, state, trace, metrics):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state.params, state.curriculum, out / config.outputs.checkpoint, velocity=state.velocity)
    trace.write_csv(out / config.outputs.trace)
    with open(out / config.outputs.metrics, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def t_setting(variant):
    if variant.kind not in (LossKind.CURRICULAR, LossKind.MV_ARC_SOFTMAX):
        return "n/a"
    return "adaptive" if variant.fixed_t is None else repr(float(variant.fixed_t))


def _compare_row(config, dataset):
    v = config.variant
    row = {
        "name": config.name,
        "variant": v.kind.value,
        "t_setting": t_setting(v),
        "statistic": config.train.statistic_kind.value,
    }
    try:
        _, trace, metrics = run_experiment(config, dataset)
    except (NumericalFailure, ValueError) as exc:
        code = 2 if isinstance(exc, NumericalFailure) else 1
        row.update(train_accuracy="", verification_accuracy="", final_t="", final_loss="", status=f"error: {exc}")
        return row, code
    row.update(
        train_accuracy=repr(metrics["train_accuracy"]),
        verification_accuracy=repr(metrics["verification"]["best_accuracy"]),
        final_t=repr(metrics["final_t"]),
        final_loss=repr(metrics["final_loss"]),
        status="ok",
    )
    return row, 0


def thread_cap():
    """Worker count from ``CMGN_THREADS``; 0 or unset means serial."""
    raw = os.environ.get("CMGN_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"CMGN_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("CMGN_THREADS must be >= 0")
    return n


def compare(configs, dataset, workers=0):
    """One table row per config, in input order. Returns ``(rows, exit_code)``.

    Runs are independent and individually deterministic, so running them in
    worker processes does not change the table.
    """
    if workers > 0 and len(configs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_compare_row, configs, [dataset] * len(configs)))
    else:
        results = [_compare_row(c, dataset) for c in configs]
    rows = [r for r, _ in results]
    codes = [c for _, c in results if c]
    return rows, (codes[0] if codes else 0)


def t_ablation(base, fixed_values=(0.0, 0.3, 0.7, 1.0)):
    """Fixed-t CurricularFace runs plus the adaptive one, in table order."""
    out = []
    for t in fixed_values:
        v = dataclasses.replace(base.variant, kind=LossKind.CURRICULAR, fixed_t=float(t))
        out.append(with_train(base, f"t={t:g}", variant=v))
    v = dataclasses.replace(base.variant, kind=LossKind.CURRICULAR, fixed_t=None)
    out.append(with_train(base, "adaptive", variant=v))
    return out


def statistic_ablation(base):
    """Adaptive CurricularFace under each statistic for ``t``."""
    v = dataclasses.replace(base.variant, kind=LossKind.CURRICULAR, fixed_t=None)
    order = [
        StatisticKind.MODE_POSITIVE_COSINE,
        StatisticKind.MEAN_GT_PROBABILITY,
        StatisticKind.MEAN_POSITIVE_COSINE,
    ]
    return [with_train(base, k.value, variant=v, statistic_kind=k) for k in order]


def with_train(base, name, **train_changes):
    return dataclasses.replace(base, name=name, train=dataclasses.replace(base.train, **train_changes))


def variant_for(name, margin_m=None, scale_s=64.0, fixed_t=None):
    """Build a variant from a CLI name with sensible per-kind defaults."""
    kind = LossKind.parse(name)
    if margin_m is None:
        margin_m = {LossKind.COSFACE: 0.35, LossKind.NORMALIZED_SOFTMAX: 0.0}.get(kind, 0.5)
    if kind is LossKind.MV_ARC_SOFTMAX and fixed_t is None:
        fixed_t = 1.2
    return LossVariant(kind, margin_m, scale_s, fixed_t)

