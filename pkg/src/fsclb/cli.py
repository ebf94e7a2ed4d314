"""Command-line entry point: ``fsclb {run,sweep,check,serve,agent,plotdata}``."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, load_sweep_grid
from .errors import FSCLBError
from .harness import (CURVE_COLUMNS, _jsonable, invariant_suite, make_server, run_experiment,
                      write_curves_csv, write_outputs)
from .protocol import serve_tcp

log = logging.getLogger("fsclb")


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "algo", None):
        changes["algo"] = args.algo
    if getattr(args, "transport", None):
        changes["transport"] = args.transport
    if getattr(args, "theory", False):
        changes["theory"] = True
    if getattr(args, "trials", None):
        changes["trials"] = args.trials
    if getattr(args, "T", None):
        changes["T"] = args.T
    host = os.environ.get("FSCLB_HOST")
    port = os.environ.get("FSCLB_PORT")
    if getattr(args, "host", None):
        host = args.host
    if getattr(args, "port", None) is not None:
        port = args.port
    if host:
        changes["host"] = host
    if port is not None:
        changes["port"] = int(port)
    return cfg.with_(**changes) if changes else cfg


def _print_summary(summary: dict) -> None:
    for name, stat in summary["aggregate"].items():
        if name in ("cum_regret", "switching_count", "com_T", "total_bytes", "wall_time_s",
                    "trigger_ns_median"):
            print(f"{name:>18}: {stat['mean']:.6g} +/- {stat['std']:.3g}")


def cmd_run(args, connect=None) -> int:
    cfg = _config_from_args(args)
    results = run_experiment(cfg, connect)
    summary = write_outputs(results, args.out)
    _print_summary(summary)
    if cfg.theory:
        ok = all(t["passed"] for t in summary["theory"])
        print("theory checks:", "PASS" if ok else "FAIL")
        return 0 if ok else 1
    return 0


def cmd_agent(args) -> int:
    """Agent role: the round loop runs here, the server is a separate ``serve`` process."""
    host = args.host or os.environ.get("FSCLB_HOST", "127.0.0.1")
    port = args.port if args.port is not None else int(os.environ.get("FSCLB_PORT", "5555"))
    args.transport = "tcp"
    return cmd_run(args, connect=(host, port))


def _parse_list(text, cast):
    return [cast(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    grid = load_sweep_grid(args.config) if args.config else {}
    for key, cast in (("d", int), ("l", int), ("alpha", float)):
        if getattr(args, key) is not None:
            grid[key] = _parse_list(getattr(args, key), cast)
    keys = [k for k in ("d", "l", "alpha") if k in grid]
    if not keys:
        print("sweep: nothing to sweep (give --d/--l/--alpha or a [sweep] table)", file=sys.stderr)
        return 2
    out = Path(args.out)
    rows = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, combo))
        if point.get("l", cfg.l) >= point.get("d", cfg.d) and cfg.algo == "fsclb":
            log.warning("skipping %s: needs l < d", point)
            continue
        sub = cfg.with_(**point)
        tag = "_".join(f"{k}{v}" for k, v in point.items())
        summary = write_outputs(run_experiment(sub), out / tag)
        agg = summary["aggregate"]
        rows.append({**point, **{f"{m}_mean": agg[m]["mean"] for m in
                                 ("cum_regret", "switching_count", "com_T", "wall_time_s")}})
        print(tag, " ".join(f"{k}={v:.6g}" for k, v in rows[-1].items() if k not in point))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return 0


def cmd_check(args) -> int:
    if args.config:
        cfg = _config_from_args(args)
    else:
        cfg = ExperimentConfig(d=10, l=4, M=3, K=10, T=2000, alpha=1.0)
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
    report = invariant_suite(cfg)
    for name, chk in report["checks"].items():
        status = "PASS" if chk["passed"] else "FAIL"
        line = f"{status} {name}: {chk['evaluations']} evaluations, worst residual {chk['worst_residual']:.3e}"
        if chk["first_failure"]:
            line += f" ({chk['first_failure']})"
        print(line)
    print(f"communications {report['comm_count']} <= bound {report['comm_bound']:.1f} "
          f"(eps_hat={report['eps_hat']:.4g})")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "check.json").write_text(json.dumps(_jsonable(report), indent=2))
    return 0 if report["passed"] else 1


def cmd_serve(args) -> int:
    host = args.host or os.environ.get("FSCLB_HOST", "127.0.0.1")
    port = args.port if args.port is not None else int(os.environ.get("FSCLB_PORT", "5555"))
    serve_tcp(host, port, make_server, max_sessions=args.sessions)
    return 0


def cmd_plotdata(args) -> int:
    src = Path(args.out)
    files = sorted(src.glob("rounds*.csv"))
    if not files:
        print(f"plotdata: no rounds*.csv under {src}", file=sys.stderr)
        return 2
    curves = []
    for f in files:
        with open(f, newline="") as fh:
            rows = list(csv.DictReader(fh))
        reward = np.array([float(r["reward"]) for r in rows])
        scal = np.array([int(r["upload_scalars"]) + int(r["download_scalars"]) for r in rows])
        curves.append({
            "cum_regret": np.array([float(r["cum_regret"]) for r in rows]),
            "cum_reward": np.cumsum(reward),
            "cum_scalars": np.cumsum(scal),
            "cum_round_ns": np.cumsum([int(r["round_ns"]) for r in rows]),
        })
    n = len(curves)
    report = {"curves": {c: {"mean": np.mean([cv[c] for cv in curves], axis=0),
                             "std": (np.std([cv[c] for cv in curves], axis=0, ddof=1) if n > 1
                                     else np.zeros(len(curves[0][c])))}
                         for c in CURVE_COLUMNS}}
    target = Path(args.dest) if args.dest else src / "curves.csv"
    write_curves_csv(report, target)
    print(f"wrote {target} from {n} trial file(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsclb", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--algo", choices=("fsclb", "fedlinucb", "random"))
        sp.add_argument("--transport", choices=("inproc", "tcp"))
        sp.add_argument("--theory", action="store_true", help="assert theory checks each round")
        sp.add_argument("--trials", type=int)
        sp.add_argument("--T", type=int, help="horizon override")
        sp.add_argument("--host")
        sp.add_argument("--port", type=int)

    sp = sub.add_parser("run", help="run one configuration")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="grid over d / l / alpha")
    common(sp)
    sp.add_argument("--d")
    sp.add_argument("--l")
    sp.add_argument("--alpha")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("check", help="run the invariant suite")
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("serve", help="TCP server role")
    sp.add_argument("--host")
    sp.add_argument("--port", type=int)
    sp.add_argument("--sessions", type=int, help="exit after this many client sessions")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("agent", help="agent role: run the round loop against a TCP server")
    common(sp)
    sp.set_defaults(func=cmd_agent)

    sp = sub.add_parser("plotdata", help="per-round mean curves from rounds*.csv")
    sp.add_argument("--out", required=True, help="directory holding rounds*.csv")
    sp.add_argument("--dest", help="output CSV (default <out>/curves.csv)")
    sp.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FSCLBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
