"""Batch experiment runner.

Subcommands: ``run`` (one seeded simulation from a config file), ``model``
(the analytical throughput table as CSV), ``fuzz`` (a seed sweep with a
per-protocol fault matrix), and ``check`` (re-verify a history file).
Exit codes: 0 all checks passed, 1 consistency violation or liveness alarm,
2 configuration error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

from . import cache as cache_mod
from . import checker as chk
from . import harness
from .config import ConfigError, RunConfig, parse_config
from .fuzz import FUZZ_PROTOCOLS, run_matrix


def _load_config(path: str | None, overrides) -> RunConfig:
    if path:
        with open(path) as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = RunConfig()
    if overrides.seed is not None:
        cfg.seed = overrides.seed
    if overrides.protocol is not None:
        cfg.protocol = overrides.protocol
    if getattr(overrides, "no_check", False):
        cfg.check = False
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args)
    retain = args.out_dir is not None
    rep, ctl = harness.run_controller(cfg, max_ticks=args.max_ticks,
                                      retain_trace=retain)
    sys.stdout.write(rep.to_text())
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "report.txt"), "w") as fh:
            fh.write(rep.to_text())
        with open(os.path.join(args.out_dir, "trace.log"), "w") as fh:
            fh.write("\n".join(ctl.sim.trace_lines or []) + "\n")
        chk.dump_history(ctl.events, os.path.join(args.out_dir, "history.jsonl"))
        with open(os.path.join(args.out_dir, "config.echo"), "w") as fh:
            fh.write(rep.config_text)
    return 0 if rep.ok else 1


def cmd_model(args) -> int:
    n_values = [int(x) for x in args.n.split(",")]
    w_values = [float(x) for x in args.w.split(",")]
    rows = cache_mod.model_table(n_values, w_values, h=args.h,
                                 b_rr=args.b_rr, b_g=args.b_g,
                                 bw=cache_mod.gbps(args.bw_gbps))
    sys.stdout.write("n,w,t_cckvs_mreqs,t_uniform_mreqs,break_even_w\n")
    for n, w, tc, tu, be in rows:
        tc_s = "inf" if math.isinf(tc) else f"{tc / 1e6:.3f}"
        tu_s = "inf" if math.isinf(tu) else f"{tu / 1e6:.3f}"
        be_s = "" if math.isnan(be) else f"{be:.6f}"
        sys.stdout.write(f"{n},{w},{tc_s},{tu_s},{be_s}\n")
    return 0


def cmd_fuzz(args) -> int:
    seeds = range(args.seed_start, args.seed_start + args.seeds)
    summary = run_matrix(args.protocol, seeds, jobs=args.jobs,
                         mutation=args.mutation)
    sys.stdout.write(summary.to_text())
    return 0 if summary.ok else 1


def cmd_check(args) -> int:
    events = chk.load_history(args.history)
    ops = chk.pair_events(events)
    if args.kind == "serializability":
        comps = harness._components(ops)
        for comp in comps:
            res = chk.check_strict_serializable(comp)
            if isinstance(res, chk.Violation):
                sys.stdout.write(f"verdict violation: {res.reason}\n")
                return 1
    else:
        by_key: dict = {}
        for op in ops:
            by_key.setdefault(op.key, []).append(op)
        for key in sorted(by_key):
            res = chk.check_linearizable(by_key[key])
            if isinstance(res, chk.Violation):
                sys.stdout.write(f"verdict violation on key {key}: {res.reason}\n")
                return 1
    sys.stdout.write("verdict ok\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invkv",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run", help="one deterministic simulation")
    run_p.add_argument("--config", help="flat key = value config file")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--protocol", choices=["galene", "hermes", "zeus", "cache"],
                       default=None)
    run_p.add_argument("--out-dir", default=None,
                       help="write report.txt, trace.log, history.jsonl")
    run_p.add_argument("--no-check", action="store_true")
    run_p.add_argument("--max-ticks", type=int, default=200_000)
    run_p.set_defaults(fn=cmd_run)

    model_p = sub.add_parser("model", help="analytical throughput table (CSV)")
    model_p.add_argument("--n", default="5,9,15,20,30,40",
                         help="comma-separated server counts")
    model_p.add_argument("--w", default="0.0,0.01,0.05",
                         help="comma-separated write ratios")
    model_p.add_argument("--h", type=float, default=0.65)
    model_p.add_argument("--b-rr", type=float, default=113.0)
    model_p.add_argument("--b-g", type=float, default=183.0)
    model_p.add_argument("--bw-gbps", type=float, default=21.5)
    model_p.set_defaults(fn=cmd_model)

    fuzz_p = sub.add_parser("fuzz", help="seed sweep over the fault matrix")
    fuzz_p.add_argument("--protocol", choices=sorted(FUZZ_PROTOCOLS), required=True)
    fuzz_p.add_argument("--seeds", type=int, default=100)
    fuzz_p.add_argument("--seed-start", type=int, default=1)
    fuzz_p.add_argument("--jobs", type=int, default=1)
    fuzz_p.add_argument("--mutation", default="",
                        help="deliberately broken variant to hunt")
    fuzz_p.set_defaults(fn=cmd_fuzz)

    check_p = sub.add_parser("check", help="re-verify a history file")
    check_p.add_argument("history")
    check_p.add_argument("--kind", choices=["linearizability", "serializability"],
                         default="linearizability")
    check_p.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        sys.stderr.write(f"config error: {e}\n")
        return 2
    except FileNotFoundError as e:
        sys.stderr.write(f"config error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
