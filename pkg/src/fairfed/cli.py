"""``fairfed run`` and ``fairfed sweep``."""
import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import parse_config
from .errors import FairFedError
from .federation import run_experiment

METRICS = ("tprd", "tprsd", "wtpr", "btpr")


def format_table(report, title=None):
    """Per-client summary shaped like the paper's result tables (percent, 1 dp)."""
    lines = [] if title is None else [title]
    lines.append(f"{'client':>6} {'TPRD':>6} {'TPRSD':>6} {'WTPR':>6} {'BTPR':>6} {'thresh':>6}  ok")
    for c in report.per_client:
        v = c.threshold_verdict
        lines.append(f"{c.client_id:>6} {100 * c.tprd:6.1f} {100 * c.tprsd:6.1f} {100 * c.wtpr:6.1f} "
                     f"{100 * c.btpr:6.1f} {100 * v.threshold:6.1f}  {'yes' if v.satisfied else 'NO'}")
    return "\n".join(lines)


def _overrides(args):
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if getattr(args, "algorithm", None):
        out["algorithm"] = args.algorithm
    if getattr(args, "dp_epsilon", None) is not None:
        out["dp_epsilon"] = args.dp_epsilon
    if getattr(args, "eta_mu", None) is not None:
        out["eta_mu"] = args.eta_mu
    if getattr(args, "output_dir", None):
        out["output_dir"] = args.output_dir
    for item in args.set or []:
        key, _, value = item.partition("=")
        out[key.strip()] = value
    return out


def _reference(cfg, enabled):
    """Final report of the matching FedAvg run, or None."""
    if not enabled or cfg.algorithm == "fedavg":
        return None
    base = dataclasses.replace(cfg, algorithm="fedavg", output_dir="")
    return run_experiment(base, persist=False).final_report


def cmd_run(args):
    cfg = parse_config(args.config, _overrides(args))
    result = run_experiment(cfg, reference=_reference(cfg, args.reference))
    print(format_table(result.final_report, f"{cfg.algorithm} seed={cfg.seed} rounds={len(result.records)}"))
    if cfg.output_dir:
        print(f"artifacts written to {cfg.output_dir}")
    violated = [c.client_id for c in result.final_report.per_client if not c.threshold_verdict.satisfied]
    if violated and args.fail_on_threshold:
        print(f"threshold violated on client(s) {violated}", file=sys.stderr)
        return 1
    return 0


def _parse_vary(text):
    key, sep, values = text.partition("=")
    if not sep or not values.strip():
        raise FairFedError(f"--vary expects key=v1,v2,..., got {text!r}")
    return key.strip(), [v.strip() for v in values.split(",") if v.strip()]


def cmd_sweep(args):
    base = _overrides(args)
    key, values = _parse_vary(args.vary)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [None]
    root = base.pop("output_dir", "") or parse_config(args.config).output_dir
    summary = []
    for value in values:
        reports = []
        for seed in seeds:
            overrides = dict(base, **{key: value})
            if seed is not None:
                overrides["seed"] = seed
            if root:
                tag = f"{key}={value}" + ("" if seed is None else f"/seed={seed}")
                overrides["output_dir"] = os.path.join(root, tag)
            cfg = parse_config(args.config, overrides)
            reports.append(run_experiment(cfg, reference=_reference(cfg, args.reference)).final_report)
        # mean and population SD over seeds of the client-averaged metric
        row = {"key": key, "value": value, "seeds": len(reports)}
        for m in METRICS:
            per_seed = np.array([r.column(m).mean() for r in reports])
            row[m] = float(per_seed.mean())
            row[m + "_sd"] = float(per_seed.std())
        summary.append(row)
        print(f"{key}={value:>10}  " + "  ".join(
            f"{m.upper()} {100 * row[m]:5.1f}±{100 * row[m + '_sd']:.1f}" for m in METRICS))
    if root:
        os.makedirs(root, exist_ok=True)
        with open(os.path.join(root, "sweep.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fairfed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        p.add_argument("--reference", action="store_true",
                       help="derive thresholds from a matching FedAvg run")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.add_argument("--algorithm", choices=["fedavg", "mwr"])
    run.add_argument("--dp-epsilon", type=float)
    run.add_argument("--eta-mu", type=float)
    run.add_argument("--fail-on-threshold", action="store_true")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one experiment per value of a config key")
    common(sweep)
    sweep.add_argument("--vary", required=True, metavar="KEY=V1,V2,...")
    sweep.add_argument("--seeds", help="comma-separated seeds, aggregated by mean and SD")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FairFedError, OSError) as exc:
        print(f"fairfed: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
