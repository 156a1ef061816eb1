"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are also
collected into an "acceptance criteria" section of the terminal summary.
"""

import csv
import dataclasses
import math
import time

import numpy as np
import pytest

from cmgn import oracle
from cmgn.checkpoint import load_checkpoint, save_checkpoint
from cmgn.cli import main
from cmgn.config import load_experiment, load_synthetic_spec
from cmgn.curriculum import CurriculumState, replay, update_t
from cmgn.datasets import generate
from cmgn.experiments import run_experiment
from cmgn.gradcheck import check_variant
from cmgn.losses import (
    CosineBatch,
    LossKind,
    LossVariant,
    backward,
    decision_boundary,
    forward,
    hard_mask,
    negative_transform,
    positive_transform,
)
from cmgn.trainer import TrainState, TrainTrace, iterations_per_epoch, train

from conftest import CONFIGS, DATA, report

VARIANTS = {
    "softmax": LossVariant(LossKind.NORMALIZED_SOFTMAX, 0.0, 64.0),
    "cosface": LossVariant(LossKind.COSFACE, 0.35, 64.0),
    "arcface": LossVariant(LossKind.ARCFACE, 0.5, 64.0),
    "mv-arc-softmax": LossVariant(LossKind.MV_ARC_SOFTMAX, 0.5, 64.0, fixed_t=1.2),
    "curricularface": LossVariant(LossKind.CURRICULAR, 0.5, 64.0),
}
SCALES = (1.0, 64.0)


@pytest.fixture(scope="module")
def golden():
    """The golden CurricularFace run plus its NormalizedSoftmax baseline."""
    config = load_experiment(CONFIGS / "golden.json")
    dataset = generate(config.data)
    start = time.perf_counter()
    state, trace, metrics = run_experiment(config, dataset)
    seconds = time.perf_counter() - start
    base = load_experiment(CONFIGS / "golden_softmax.json")
    _, _, base_metrics = run_experiment(base, dataset)
    return dict(config=config, dataset=dataset, state=state, trace=trace, metrics=metrics,
                seconds=seconds, baseline=base_metrics)


def test_criterion_01_gradient_correctness():
    start = time.perf_counter()
    worst, lines = 0.0, []
    for i, (name, variant) in enumerate(VARIANTS.items()):
        res = check_variant(variant, 1000, seed=100 + i, scales=SCALES)
        worst = max(worst, res.max_error)
        lines.append(f"{name}={res.max_error:.1e}")
        assert res.checked > 0
    seconds = time.perf_counter() - start
    ok = worst <= 1e-6 and seconds <= 60.0
    report(1, ok, f"max rel err {worst:.2e} <= 1e-6 ({', '.join(lines)}); {seconds:.1f}s <= 60s")
    assert worst <= 1e-6
    assert seconds <= 60.0


def _all_easy_batch(rng, variant):
    while True:
        x, w, cos, labels = oracle.random_batch(rng, spread=3.0)
        batch = CosineBatch(cos, labels)
        if not hard_mask(batch, variant).any():
            return x, w, batch


def _max_gap(a_variant, b_variant, batch, x, w, t):
    oa, ob = forward(batch, a_variant, t), forward(batch, b_variant, t)
    ga = backward(batch, a_variant, t, x, w, output=oa)
    gb = backward(batch, b_variant, t, x, w, output=ob)
    return max(
        abs(oa.loss - ob.loss),
        float(np.max(np.abs(oa.grad_cosines - ob.grad_cosines))),
        *(float(np.max(np.abs(p - q))) for p, q in zip(ga, gb)),
    )


def test_criterion_02_reduction_identities():
    rng = np.random.default_rng(2)
    gaps = {"curricular(all-easy)=arcface": 0.0, "arcface(m=0)=softmax": 0.0, "mv(t=1)=arcface": 0.0}
    for k in range(100):
        s = SCALES[k % 2]
        t = float(rng.uniform())
        arc = LossVariant(LossKind.ARCFACE, 0.5, s)
        cur = LossVariant(LossKind.CURRICULAR, 0.5, s)
        x, w, batch = _all_easy_batch(rng, cur)
        gaps["curricular(all-easy)=arcface"] = max(gaps["curricular(all-easy)=arcface"], _max_gap(cur, arc, batch, x, w, t))

        x, w, cos, labels = oracle.random_batch(rng)
        batch = CosineBatch(cos, labels)
        arc0 = LossVariant(LossKind.ARCFACE, 0.0, s)
        soft = LossVariant(LossKind.NORMALIZED_SOFTMAX, 0.0, s)
        gaps["arcface(m=0)=softmax"] = max(gaps["arcface(m=0)=softmax"], _max_gap(arc0, soft, batch, x, w, t))

        x, w, cos, labels = oracle.random_batch(rng)
        batch = CosineBatch(cos, labels)
        mv1 = LossVariant(LossKind.MV_ARC_SOFTMAX, 0.5, s, fixed_t=1.0)
        gaps["mv(t=1)=arcface"] = max(gaps["mv(t=1)=arcface"], _max_gap(mv1, arc, batch, x, w, t))
    worst = max(gaps.values())
    report(2, worst <= 1e-12, ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()) + " <= 1e-12")
    assert worst <= 1e-12


def test_criterion_03_oracle_equivalence():
    rng = np.random.default_rng(3)
    worst = {}
    for name, variant in VARIANTS.items():
        worst[name] = 0.0
        for k in range(1000):
            v = dataclasses.replace(variant, scale_s=SCALES[k % 2])
            _, _, cos, labels = oracle.random_batch(rng)
            batch = CosineBatch(cos, labels)
            t = float(rng.uniform())
            worst[name] = max(worst[name], abs(forward(batch, v, t).loss - oracle.direct_loss(batch, v, t)))
    top = max(worst.values())
    report(3, top <= 1e-10, f"max |forward - direct| {top:.1e} <= 1e-10 over 1000 batches x 5 variants")
    assert top <= 1e-10


def test_criterion_04_ema_contraction_and_replay(golden):
    worst = 0.0
    for r_bar in (0.8, 0.35, -0.4, 1.0):
        state = CurriculumState(t=0.0, momentum=0.99)
        for k in range(1, 10_001):
            state = update_t(state, r_bar)
            worst = max(worst, abs(abs(state.t - r_bar) - abs(r_bar) * 0.99 ** k))
    traced = golden["trace"]
    replayed = replay(traced.column("r"), CurriculumState(momentum=0.99))
    committed = TrainTrace.read_csv(DATA / "golden_trace.csv")
    replayed_file = replay(committed.column("r"), CurriculumState(momentum=0.99))
    exact = replayed == traced.column("t").tolist() and replayed_file == committed.column("t").tolist()
    ok = worst <= 1e-12 and exact
    report(4, ok, f"max contraction deviation {worst:.1e} <= 1e-12 over k <= 1e4; "
                  f"replay of {len(traced)} traced r values bit-exact: {exact}")
    assert worst <= 1e-12
    assert exact


def test_criterion_05_decision_boundaries():
    grid = np.linspace(0.0, math.pi, 200)
    cases = [
        ("softmax", VARIANTS["softmax"], 0.0, False),
        ("cosface", VARIANTS["cosface"], 0.0, False),
        ("arcface", VARIANTS["arcface"], 0.0, False),
        ("mv-hard t=1.2", VARIANTS["mv-arc-softmax"], 1.2, True),
        ("curricular-easy", VARIANTS["curricularface"], 0.0, False),
    ] + [(f"curricular-hard t={t}", VARIANTS["curricularface"], t, True) for t in (0.0, 0.3, 0.7, 1.0)]
    worst, mismatched, compared = 0.0, 0, 0
    for _, variant, t, hard in cases:
        angular = variant.kind not in (LossKind.NORMALIZED_SOFTMAX, LossKind.COSFACE)
        upper = math.pi - variant.margin_m if angular else math.pi
        closed = decision_boundary(variant, grid, t=t, hard=hard)
        for theta_j, want in zip(grid, closed):
            other = float(negative_transform(math.cos(theta_j), t, variant, hard))
            got = oracle.solve_boundary(lambda c, v=variant: positive_transform(c, v), other, 0.0, upper)
            if math.isnan(want) or math.isnan(got):
                mismatched += math.isnan(want) != math.isnan(got)
                continue
            compared += 1
            worst = max(worst, abs(got - want))
    ok = worst <= 1e-9 and mismatched == 0
    report(5, ok, f"max |theta_root - theta_closed| {worst:.1e} <= 1e-9 on {compared} crossings "
                  f"({len(cases)} curves x 200 points), existence mismatches {mismatched}")
    assert worst <= 1e-9
    assert mismatched == 0


def test_criterion_06_toy_convergence(golden):
    m, base = golden["metrics"], golden["baseline"]
    acc = m["train_accuracy"]
    ver, ver_base = m["verification"]["best_accuracy"], base["verification"]["best_accuracy"]
    epochs = golden["config"].train.epochs
    ok = acc >= 0.95 and ver >= ver_base - 0.01 and epochs <= 30 and golden["seconds"] <= 300
    report(6, ok, f"train acc {acc:.4f} >= 0.95; verification {ver:.4f} >= softmax {ver_base:.4f} - 0.01; "
                  f"{epochs} epochs; {golden['seconds']:.1f}s <= 300s")
    assert acc >= 0.95
    assert ver >= ver_base - 0.01
    assert epochs <= 30 and golden["seconds"] <= 300


def test_criterion_07_curriculum_progression(golden):
    trace = golden["trace"]
    per_epoch = iterations_per_epoch(golden["config"].train, golden["dataset"].summary()["train"])
    t = trace.column("t")
    hard = trace.column("hard_fraction")
    t_epoch1, t_final = t[per_epoch - 1], t[-1]
    hard_first, hard_last = hard[:per_epoch].mean(), hard[-per_epoch:].mean()
    ok = t_final > t_epoch1 and hard_last < hard_first
    report(7, ok, f"t {t_epoch1:.4f} (end of epoch 1) -> {t_final:.4f} (final); "
                  f"hard_fraction mean {hard_first:.3f} (epoch 1) -> {hard_last:.3f} (final epoch)")
    assert t_final > t_epoch1
    assert hard_last < hard_first


def test_criterion_08_hard_config_robustness():
    spec = load_synthetic_spec(CONFIGS / "hard_data.json")
    dataset = generate(spec)
    means, finite = {}, {}
    for name in ("hard_curricular", "hard_arcface"):
        config = load_experiment(CONFIGS / f"{name}.json")
        assert config.data == spec
        _, trace = train(config.train, dataset)
        losses = trace.column("loss")
        finite[name] = bool(np.all(np.isfinite([[getattr(r, f) for f in ("loss", "t", "r", "hard_fraction")]
                                                 for r in trace.records])))
        means[name] = float(np.mean(losses[:200]))
    ok = means["hard_curricular"] <= means["hard_arcface"] and all(finite.values())
    report(8, ok, f"mean loss iters 1-200: curricular {means['hard_curricular']:.3f} <= "
                  f"arcface {means['hard_arcface']:.3f}; all finite: {all(finite.values())}")
    assert means["hard_curricular"] <= means["hard_arcface"]
    assert all(finite.values())


def _compare_table(tmp_path, data, configs, tag):
    out = tmp_path / f"{tag}.csv"
    code = main(["compare", "--configs", *map(str, configs), "--data", str(data), "--out", str(out)])
    with open(out, newline="") as fh:
        return code, out.read_bytes(), list(csv.DictReader(fh))


def test_criterion_09_ablation_tables(tmp_path):
    data = tmp_path / "golden.csv"
    assert main(["gen-data", "--spec", str(CONFIGS / "golden_data.json"), "--out", str(data)]) == 0
    t_cfgs = [CONFIGS / "ablation_t" / f for f in ("t_0.json", "t_0.3.json", "t_0.7.json", "t_1.json", "adaptive.json")]
    s_cfgs = sorted((CONFIGS / "ablation_stat").glob("*.json"))
    code_t, bytes_t, rows_t = _compare_table(tmp_path, data, t_cfgs, "t1")
    code_t2, bytes_t2, _ = _compare_table(tmp_path, data, t_cfgs, "t2")
    code_s, bytes_s, rows_s = _compare_table(tmp_path, data, s_cfgs, "s1")
    code_s2, bytes_s2, _ = _compare_table(tmp_path, data, s_cfgs, "s2")

    shape = (len(rows_t) == 5 and len(rows_s) == 3
             and [r["t_setting"] for r in rows_t] == ["0.0", "0.3", "0.7", "1.0", "adaptive"]
             and [r["statistic"] for r in rows_s] == ["mode-cos", "mean-prob", "mean-cos"]
             and all(r["status"] == "ok" for r in rows_t + rows_s)
             and code_t == code_t2 == code_s == code_s2 == 0)
    deterministic = bytes_t == bytes_t2 and bytes_s == bytes_s2
    fixed = [float(r["verification_accuracy"]) for r in rows_t[:4]]
    adaptive = float(rows_t[4]["verification_accuracy"])
    ok = shape and deterministic and adaptive >= max(fixed) - 0.005
    report(9, ok, f"5-row and 3-row tables: {shape}; reruns identical: {deterministic}; "
                  f"adaptive {adaptive:.4f} >= best fixed {max(fixed):.4f} - 0.005")
    assert shape
    assert deterministic
    assert adaptive >= max(fixed) - 0.005


def test_criterion_10_determinism_and_resume(golden, tmp_path):
    config, dataset = golden["config"], golden["dataset"]
    _, rerun = train(config.train, dataset)
    same_run = rerun.records == golden["trace"].records
    golden["trace"].write_csv(tmp_path / "trace.csv")
    same_file = (tmp_path / "trace.csv").read_bytes() == (DATA / "golden_trace.csv").read_bytes()

    per_epoch = iterations_per_epoch(config.train, dataset.summary()["train"])
    stop = 7 * per_epoch + per_epoch // 2  # mid-epoch, with momentum buffers in flight
    mid, first = train(config.train, dataset, stop_after=stop)
    path = tmp_path / "mid.cmgn"
    save_checkpoint(mid.params, mid.curriculum, path, velocity=mid.velocity)
    params, curriculum, velocity = load_checkpoint(path)
    end, rest = train(config.train, dataset, state=TrainState(params, velocity, curriculum))
    resumed = first.records + rest.records == golden["trace"].records
    same_params = all(np.array_equal(a, b) for a, b in zip(end.params.arrays(), golden["state"].params.arrays()))
    ok = same_run and same_file and resumed and same_params
    report(10, ok, f"rerun bit-identical: {same_run}; matches committed golden trace: {same_file}; "
                   f"resume at iteration {stop} reproduces trace: {resumed}, final params: {same_params}")
    assert same_run and same_file
    assert resumed and same_params
