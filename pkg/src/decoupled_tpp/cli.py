"""Command-line harness: simulate, preprocess, train, evaluate, sample,
export-trajectories, benchmark.

Every subcommand takes --seed, --config, and --out; file formats are the
JSONL corpus (+ sidecar header), JSON checkpoints/reports, and CSV logs.
Errors print to stderr and exit 1; usage problems exit 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import data as dmod
from . import hawkes as hk
from .config import ExperimentConfig
from .data import DataError, Dataset, load_dataset, save_dataset
from .evaluation import evaluate
from .model import DecoupledModel, influence_table
from .nets import load_params, save_params
from .training import TrainConfig, benchmark_kernels, benchmark_modes, fit


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=str, default=None, help="experiment config JSON")
    p.add_argument("--out", type=str, required=True, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decoupled-tpp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a Hawkes corpus to JSONL")
    p.add_argument("--spec", required=True, help="HawkesSpec JSON (baseline/alpha/beta)")
    p.add_argument("--n", type=int, default=100, help="number of sequences")
    p.add_argument("--horizon", type=float, default=30.0)
    p.add_argument("--max-events", type=int, default=100_000)
    _add_common(p)

    p = sub.add_parser("preprocess", help="sort, drop time ties, scale, split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test fractions")
    _add_common(p)

    p = sub.add_parser("train", help="maximum-likelihood training")
    p.add_argument("--train", dest="train_path", required=True)
    p.add_argument("--val", dest="val_path", default=None)
    p.add_argument("--log", default=None, help="training-log CSV path")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)

    p = sub.add_parser("evaluate", help="NLL/RMSE/ACC with bootstrap")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bootstrap", type=int, default=None)
    p.add_argument("--no-predict", action="store_true", help="skip RMSE/ACC passes")
    _add_common(p)

    p = sub.add_parser("sample", help="draw next events after each history by thinning")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--num", type=int, default=1, help="samples per sequence")
    _add_common(p)

    p = sub.add_parser("export-trajectories", help="per-event influence tables to CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--limit", type=int, default=None, help="max sequences to export")
    _add_common(p)

    p = sub.add_parser("benchmark", help="sec/iter for training modes and kernel backends")
    p.add_argument("--data", required=True)
    p.add_argument("--modes", default="parallel,sequential")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--kernels", default="active", help="'active' or 'all' backends")
    _add_common(p)
    return parser


def _experiment(args, num_marks: int) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config, num_marks=num_marks)
    else:
        from .model import ModelConfig

        cfg = ExperimentConfig(model=ModelConfig(num_marks=num_marks))
    return cfg


def _load_model(checkpoint: str) -> tuple[DecoupledModel, dict]:
    from .model import ModelConfig

    with open(checkpoint) as fh:
        blob = json.load(fh)
    model = DecoupledModel(ModelConfig.from_dict(blob["model_config"]), seed=0)
    extra = load_params(checkpoint, model.parameters())
    return model, extra


def cmd_simulate(args) -> int:
    with open(args.spec) as fh:
        spec = hk.HawkesSpec.from_dict(json.load(fh))
    ds = hk.simulate_dataset(spec, args.n, hk.SimConfig(args.horizon, args.max_events, args.seed))
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} sequences ({ds.num_events} events) to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    fractions = tuple(float(x) for x in args.split.split(","))
    if len(fractions) != 3:
        raise DataError("--split needs three comma-separated fractions")
    raw = load_dataset(args.data)
    cleaned = Dataset(
        [dmod.deduplicate(dmod.sort_by_time(s)) for s in raw.sequences],
        raw.num_marks,
        raw.time_scale,
    )
    train, val, test = dmod.split(cleaned, fractions, args.seed)
    scale = dmod.compute_time_scale(train)
    import os

    os.makedirs(args.out, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test)):
        save_dataset(os.path.join(args.out, f"{name}.jsonl"), dmod.apply_scale(part, scale))
    print(f"time scale {scale:.6g}; splits of {len(train)}/{len(val)}/{len(test)} in {args.out}")
    return 0


def cmd_train(args) -> int:
    train_ds = load_dataset(args.train_path)
    val_ds = load_dataset(args.val_path) if args.val_path else None
    cfg = _experiment(args, num_marks=train_ds.num_marks)
    tcfg = cfg.train
    if args.seed:
        tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "seed": args.seed})
    model = DecoupledModel(cfg.model, seed=tcfg.seed)
    log_rows: list[dict] = []
    result = fit(model, train_ds, val_ds, tcfg, log_rows=log_rows, verbose=not args.quiet)
    save_params(
        args.out,
        model.parameters(),
        extra={
            "model_config": cfg.model.to_dict(),
            "train_config": tcfg.to_dict(),
            "config_hash": cfg.hash(),
            "time_scale": train_ds.time_scale,
            "best_epoch": result.best_epoch,
            "best_val_nll": result.best_val_nll,
        },
    )
    if args.log:
        with open(args.log, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["epoch", "split", "nll", "nll_lambda", "nll_mark", "sec_per_iter"]
            )
            writer.writeheader()
            writer.writerows(log_rows)
    print(f"checkpoint written to {args.out} (config hash {cfg.hash()})")
    return 0


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.data)
    model, extra = _load_model(args.checkpoint)
    cfg = _experiment(args, num_marks=ds.num_marks)
    report = evaluate(
        model,
        ds,
        nll_cfg=cfg.nll,
        density_cfg=cfg.density_solver,
        horizon_cfg=cfg.horizon,
        resamples=args.bootstrap or cfg.bootstrap_resamples,
        seed=args.seed,
        predict=not args.no_predict,
    )
    report.config_hash = cfg.hash()
    report.checkpoint_hash = extra.get("config_hash")
    with open(args.out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(json.dumps(report.metrics, indent=2))
    return 0


def cmd_sample(args) -> int:
    from .sampling import sample_from_model

    ds = load_dataset(args.data)
    model, _ = _load_model(args.checkpoint)
    cfg = _experiment(args, num_marks=ds.num_marks)
    rng = np.random.default_rng(args.seed)
    with open(args.out, "w") as fh:
        for i, seq in enumerate(ds.sequences):
            draws = sample_from_model(
                model, seq, args.num, rng, cfg.density_solver, cfg.horizon
            )
            fh.write(
                json.dumps(
                    {
                        "seq": i,
                        "samples": [{"t": t, "k": k} for t, k in draws],
                    }
                )
                + "\n"
            )
    print(f"wrote thinning samples for {len(ds)} histories to {args.out}")
    return 0


def cmd_export_trajectories(args) -> int:
    ds = load_dataset(args.data)
    model, _ = _load_model(args.checkpoint)
    cfg = _experiment(args, num_marks=ds.num_marks)
    k = model.config.num_marks
    limit = args.limit if args.limit is not None else len(ds.sequences)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["seq_id", "event_idx", "mark", "t", "mu"] + [f"fhat_{i}" for i in range(k)]
        )
        for i, seq in enumerate(ds.sequences[:limit]):
            for row in influence_table(model, seq, cfg.nll.mark_solver, seq_id=i):
                writer.writerow(row)
    print(f"trajectories for {min(limit, len(ds))} sequences written to {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    ds = load_dataset(args.data)
    cfg = _experiment(args, num_marks=ds.num_marks)
    tcfg = cfg.train
    model = DecoupledModel(cfg.model, seed=tcfg.seed)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    rows = []
    if args.kernels == "all":
        for entry in benchmark_kernels(model, ds, tcfg, args.iters):
            rows.append(
                {
                    "dataset": args.data,
                    "kernels": entry["kernels"],
                    "mode": "parallel",
                    "sec_per_iter": entry["parallel_sec_per_iter"],
                    "ratio": entry["ratio"],
                }
            )
            rows.append(
                {
                    "dataset": args.data,
                    "kernels": entry["kernels"],
                    "mode": "sequential",
                    "sec_per_iter": entry["sequential_sec_per_iter"],
                    "ratio": entry["ratio"],
                }
            )
    else:
        from . import kernels as kmod

        timing = benchmark_modes(model, ds, tcfg, args.iters)
        for mode in modes:
            rows.append(
                {
                    "dataset": args.data,
                    "kernels": kmod.backend_name(),
                    "mode": mode,
                    "sec_per_iter": timing[mode],
                    "ratio": timing["ratio"],
                }
            )
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["dataset", "kernels", "mode", "sec_per_iter", "ratio"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(row)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sample": cmd_sample,
    "export-trajectories": cmd_export_trajectories,
    "benchmark": cmd_benchmark,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        # missing inputs are usage problems: same exit code as bad flags
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
