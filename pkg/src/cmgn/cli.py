"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

import argparse
import csv
import json
import logging
import sys

import numpy as np

from cmgn import config as cfg
from cmgn import experiments
from cmgn.datasets import generate, load_csv, save_csv
from cmgn.errors import CheckpointFormatError, NumericalFailure
from cmgn.evaluation import modulation_curves, write_curves_csv
from cmgn.gradcheck import check_variant
from cmgn.numerics import COS_MAX, COS_MIN
from cmgn.oracle import FiniteDiffSpec

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("cmgn")


def cmd_gen_data(args):
    spec = cfg.load_synthetic_spec(args.spec)
    ds = generate(spec)
    save_csv(ds, args.out)
    s = ds.summary()
    print(f"wrote {args.out}: N={s['rows']} classes={s['classes']} d={s['input_dim']} "
          f"train={s['train']} holdout={s['holdout']}")
    return EXIT_OK


def cmd_train(args):
    config = cfg.load_experiment(args.config)
    if args.variant:
        v = experiments.variant_for(args.variant, scale_s=config.variant.scale_s)
        config = experiments.with_train(config, config.name, variant=v)
    dataset = load_csv(args.data)
    state, trace, metrics = experiments.run_experiment(config, dataset)
    experiments.write_run(args.out_dir, config, state, trace, metrics)
    ver = metrics["verification"]["best_accuracy"]
    print(f"{config.name}: {len(trace)} iterations, final loss {metrics['final_loss']:.6g}, "
          f"t {metrics['final_t']:.4f}, train acc {metrics['train_accuracy']:.4f}, "
          f"verification acc {ver:.4f}")
    return EXIT_OK


def cmd_compare(args):
    configs = [cfg.load_experiment(p) for p in args.configs]
    dataset = load_csv(args.data)
    rows, code = experiments.compare(configs, dataset, workers=experiments.thread_cap())
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=experiments.TABLE_HEADER)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['name']:>12}  {r['t_setting']:>9}  {r['statistic']:>9}  "
              f"verification={r['verification_accuracy'] or '-'}  {r['status']}")
    return code


def _float_list(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def cmd_trace(args):
    variant = experiments.variant_for(args.variant, margin_m=args.margin_m)
    grid = np.linspace(COS_MIN, COS_MAX, args.points) if args.cos_grid is None else args.cos_grid
    rows = modulation_curves(variant, args.t_values, grid)
    write_curves_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_grad_check(args):
    variant = experiments.variant_for(args.variant)
    spec = FiniteDiffSpec(tolerance_rel=args.tolerance)
    if args.trials == 0:
        print("warning: --trials 0, nothing checked", file=sys.stderr)
    res = check_variant(variant, args.trials, args.seed, spec=spec)
    print(f"{res.variant}: trials={res.trials} checked={res.checked} excluded={res.excluded} "
          f"branch-skipped={res.skipped} max relative error={res.max_error:.3e}")
    if res.passed(spec.tolerance_rel):
        return EXIT_OK
    w = res.worst
    print(f"tolerance {spec.tolerance_rel:g} exceeded: trial {w.trial}, s={w.scale_s:g}, "
          f"d/d{w.array}{list(w.index)} analytic={w.analytic!r} finite-diff={w.numeric!r}",
          file=sys.stderr)
    return EXIT_NUMERIC


def build_parser():
    p = argparse.ArgumentParser(prog="cmgn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    g.add_argument("--spec", required=True, help="JSON synthetic-data spec")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--variant", help="override the config's loss variant")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="train several configs and tabulate them")
    c.add_argument("--configs", required=True, nargs="+")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    tr = sub.add_parser("trace", help="emit modulation curves (t, cos_j, I, N)")
    tr.add_argument("--variant", required=True)
    tr.add_argument("--t-values", required=True, type=_float_list)
    tr.add_argument("--out", required=True)
    tr.add_argument("--margin-m", type=float, default=None)
    tr.add_argument("--points", type=int, default=201)
    tr.add_argument("--cos-grid", type=_float_list, default=None)
    tr.set_defaults(func=cmd_trace)

    gc = sub.add_parser("grad-check", help="compare analytic gradients to finite differences")
    gc.add_argument("--variant", required=True)
    gc.add_argument("--trials", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-6)
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
