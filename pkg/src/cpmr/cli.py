"""Command-line entry point: preprocess, train, eval, sweep, ablate, gradcheck.

Exit status: 0 success, 2 user/config error, 3 numerical abort. The
CPMR_THREADS environment variable caps BLAS thread pools (set before
numpy is first imported, so heavy imports happen lazily inside main).
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _cap_threads():
    n = os.environ.get("CPMR_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _build_parser():
    p = argparse.ArgumentParser(prog="cpmr",
                                description="incremental sequential recommender")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="parse, 5-core filter and canonicalize a raw log")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", required=True, choices=["amazon_csv", "movielens_tab"])
    sp.add_argument("--output", required=True, help="output directory")
    sp.add_argument("--k-core", type=int, default=5)

    st = sub.add_parser("train", help="train on the canonical dataset of a config")
    st.add_argument("--config", required=True)

    se = sub.add_parser("eval", help="incremental evaluation of a checkpoint")
    se.add_argument("--config", required=True)
    se.add_argument("--checkpoint", required=True)
    se.add_argument("--split", choices=["val", "test"], default=None)

    sw = sub.add_parser("sweep", help="sweep s_days or n_tbptt")
    sw.add_argument("--config", required=True)
    sw.add_argument("--param", required=True, choices=["s_days", "n_tbptt"])
    sw.add_argument("--values", required=True, help="comma-separated integers")

    sa = sub.add_parser("ablate", help="train/evaluate one model variant")
    sa.add_argument("--config", required=True)
    sa.add_argument("--variant", required=True,
                    choices=["full", "wo_ctx", "wo_his", "wo_fusion"])

    sg = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sg.add_argument("--seed", type=int, default=0)
    return p


def cmd_preprocess(args):
    from . import data

    with open(args.input, "rb") as fh:
        events = data.parse_interactions(fh, args.format)
    if not events:
        raise_user_error("input contains no interaction records")
    events = data.k_core_filter(events, args.k_core)
    if not events:
        raise_user_error(f"no interactions survive the {args.k_core}-core filter")
    ds = data.canonicalize(events)
    os.makedirs(args.output, exist_ok=True)
    out = os.path.join(args.output, "dataset.bin")
    data.save_dataset(out, ds)
    summary = data.summarize(ds)
    summary["path"] = out
    print(json.dumps(summary))
    return 0


def raise_user_error(msg):
    from .errors import DataError

    raise DataError(msg)


def _load_run(config_path):
    from . import data
    from .runconfig import RunConfig

    run = RunConfig.from_file(config_path)
    ds = data.load_dataset(run.data_path)
    return run, ds


def cmd_train(args):
    from . import autodiff as ad
    from .training import train

    run, ds = _load_run(args.config)
    print(run.echo())
    os.makedirs(run.output_dir, exist_ok=True)
    model, history = train(ds, run.model, run.train,
                           log_path=os.path.join(run.output_dir, "train.log"))
    ad.save_checkpoint(os.path.join(run.output_dir, "checkpoint.bin"), model.params)
    print(json.dumps({"best_epoch": history["best_epoch"],
                      "best_val_mrr": history["best_val_mrr"],
                      "checkpoint": os.path.join(run.output_dir, "checkpoint.bin")}))
    return 0


def cmd_eval(args):
    import numpy as np

    from . import autodiff as ad
    from .evaluation import incremental_eval
    from .model import CpmrModel

    run, ds = _load_run(args.config)
    split = args.split or run.eval_split
    model = CpmrModel(ds.n_users, ds.n_items, ds.day_unit, run.model,
                      rng=np.random.default_rng(run.train.seed))
    model.load_params(ad.load_checkpoint(args.checkpoint))
    report = incremental_eval(ds, model, split=split, seed=run.train.seed,
                              filter_interacted=run.eval_filter)
    os.makedirs(run.output_dir, exist_ok=True)
    line = json.dumps(report.to_dict())
    with open(os.path.join(run.output_dir, "metrics.jsonl"), "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


def cmd_sweep(args):
    import dataclasses

    from .evaluation import incremental_eval, sweep_rows_to_csv, window_sweep
    from .training import train as train_fn

    run, ds = _load_run(args.config)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise_user_error("empty sweep value list")
    os.makedirs(run.output_dir, exist_ok=True)
    if args.param == "s_days":
        rows = window_sweep(ds, values, run.model, run.train, split=run.eval_split)
        sweep_rows_to_csv(rows, os.path.join(run.output_dir, "sweep.csv"))
    else:
        rows = []
        for v in values:
            tcfg = dataclasses.replace(run.train, n_tbptt=v)
            model, _ = train_fn(ds, run.model, tcfg)
            report = incremental_eval(ds, model, split=run.eval_split,
                                      seed=tcfg.seed)
            rows.append({"n_tbptt": v, "mrr": report.mrr,
                         "recall_at_10": report.recall_at_10})
        with open(os.path.join(run.output_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
            fh.write("n_tbptt,mrr,recall_at_10\n")
            for r in rows:
                fh.write(f"{r['n_tbptt']},{r['mrr']!r},{r['recall_at_10']!r}\n")
    for r in rows:
        print(json.dumps(r))
    return 0


def cmd_ablate(args):
    from .evaluation import ablation_run

    run, ds = _load_run(args.config)
    report = ablation_run(ds, args.variant, run.model, run.train,
                          split=run.eval_split)
    os.makedirs(run.output_dir, exist_ok=True)
    line = json.dumps(report.to_dict())
    with open(os.path.join(run.output_dir, "metrics.jsonl"), "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_suite

    lines, worst = run_suite(args.seed)
    for name, err in lines:
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{status:4s} {name:28s} max_rel_err={err:.3e}")
    print(f"worst={worst:.3e} tolerance={TOLERANCE:.0e}")
    return 0 if worst <= TOLERANCE else 1


def main(argv=None):
    _cap_threads()
    args = _build_parser().parse_args(argv)
    from .errors import ConfigError, DataError, NumericalError

    handlers = {
        "preprocess": cmd_preprocess,
        "train": cmd_train,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
        "ablate": cmd_ablate,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
