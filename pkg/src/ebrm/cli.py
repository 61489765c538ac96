"""Command-line entry point: ``ebrm <subcommand> [options]``."""

from __future__ import annotations

import argparse
import sys

from .chain import TabularPolicy, generate_dataset, OfflineDataset, true_return_table
from .harness import (
    PRESETS,
    _estimate,
    cell_seed,
    load_config,
    run_lepski,
    run_rho_demo,
    run_sweep,
    run_table9,
)
from .metrics import expected_energy, expected_w1
from .rng import derive_seed
from .selfcheck import format_report, run_selfcheck


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args):
    over = _overrides(args.set)
    if args.seed is not None:
        over["master_seed"] = str(args.seed)
    if args.out is not None:
        over["output_dir"] = args.out
    if args.timing:
        over["record_timing"] = "true"
    return load_config(args.config, args.preset, over)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebrm", description="Energy Bellman residual estimation on the chain MDP.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="scenario preset applied before the config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory (default: $EBRM_OUTPUT_DIR or ./results)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--timing", action="store_true", help="fill the wall_ms column (output is then not reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a generated dataset as CSV")
    p.add_argument("-N", type=int, help="sample size (default: first configured size)")
    p = sub.add_parser("run", parents=[common], help="fit the configured estimator once and print the result")
    p.add_argument("-N", type=int, help="sample size (default: first configured size)")
    p.add_argument("--data", help="dataset CSV to use instead of generating one")
    sub.add_parser("sweep", parents=[common], help="replication sweep over sample sizes")
    sub.add_parser("table9", parents=[common], help="best linear approximations for both discounts")
    sub.add_parser("rho-demo", parents=[common], help="population objective curves for the correlation model")
    p = sub.add_parser("lepski", parents=[common], help="step-level selection on one dataset")
    p.add_argument("-N", type=int, help="sample size (default: first configured size)")
    sub.add_parser("selfcheck", parents=[common], help="run built-in invariant checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selfcheck":
        results = run_selfcheck()
        print(format_report(results))
        return 0 if all(r.passed for r in results) else 1
    cfg = _config(args)
    out = cfg.out_path
    if args.command == "gen-data":
        N = args.N or cfg.sample_sizes[0]
        seed = cell_seed(cfg.master_seed, N, 0)
        ds = generate_dataset(cfg.env, TabularPolicy.uniform(cfg.env.n_states), N, derive_seed(seed, 0))
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"dataset_N{N}.csv"
        ds.to_csv(path)
        print(path)
    elif args.command == "run":
        if args.data:
            ds = OfflineDataset.from_csv(args.data, cfg.env.n_states)
            N = len(ds)
        else:
            N = args.N or cfg.sample_sizes[0]
            seed0 = cell_seed(cfg.master_seed, N, 0)
            ds = generate_dataset(cfg.env, TabularPolicy.uniform(cfg.env.n_states), N, derive_seed(seed0, 0))
        seed = cell_seed(cfg.master_seed, N, 0)
        spec = cfg.model_spec()
        theta, obj, table = _estimate(cfg, ds, spec, derive_seed(seed, 1))
        truth = true_return_table(cfg.env, TabularPolicy.always_right(cfg.env.n_states))
        if theta is not None:
            for name, val in zip(spec.param_names, theta):
                print(f"{name} = {val!r}")
            print(f"objective = {obj!r}")
        print(f"e_bar = {expected_energy(table, truth)!r}")
        print(f"w1_bar = {expected_w1(table, truth)!r}")
    elif args.command == "sweep":
        res = run_sweep(cfg, jobs=args.jobs)
        print(res["detail"])
        print(res["summary"])
    elif args.command == "table9":
        for row in run_table9(cfg):
            print(",".join(str(x) for x in row))
        print(out / "table9.csv")
    elif args.command == "rho-demo":
        res = run_rho_demo(cfg)
        for label, rho, val in res["argmin"]:
            print(f"m={label}: argmin rho = {rho:.3f} (F = {val:.5g})")
        print(out / "rho_curves.csv")
    elif args.command == "lepski":
        res = run_lepski(cfg, args.N)
        for k in sorted(res.intervals, reverse=True):
            lo, hi = res.intervals[k]
            print(f"m={res.levels[k]}: interval [{lo:.6g}, {hi:.6g}]")
        print(f"selected m = {res.selected_m}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
