"""Command-line entry point: ``vcongest {gen,run,sweep,check,repro}``.

Exit status: 0 on success, 1 when a property check or acceptance claim
fails, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import yaml

from .analysis import check_invariants, check_properties, summarize
from .engine import VERBOSE_NODE_LIMIT, RunTrace, SimConfig, run
from .harness import WORKERS_ENV, Campaign, default_workers, execute
from .topology import TopologyError, build_gnk, write_edge_list

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_config(path: str | None, seed: int | None) -> SimConfig:
    if not path:
        raise UsageError("--config is required")
    try:
        data: Any = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping of SimConfig fields")
    try:
        cfg = SimConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _trial_configs(cfg: SimConfig, trials: int | None) -> list[SimConfig]:
    count = trials or cfg.trials
    return [replace(cfg, seed=cfg.seed + j) for j in range(count)]


def _delivery_records(trace: RunTrace) -> list[dict[str, Any]]:
    recs = []
    for t, choice, kinds in trace.send_log or []:
        recs.append({"record": "round", "t": t, "sends": [int(c) for c in choice], "kinds": [int(x) for x in kinds]})
    for start, end in trace.filler_blocks or []:
        recs.append({"record": "filler_block", "start": start, "end": end})
    return recs


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        topo = build_gnk(args.n, args.k)
    except TopologyError as exc:
        raise UsageError(str(exc)) from exc
    out = args.out_path or args.out
    if out:
        write_edge_list(topo, out)
        print(f"wrote G({args.n},{args.k}): {topo.node_count} nodes, {len(topo.edges())} edges -> {out}")
    else:
        sys.stdout.write(f"{args.n} {args.k}\n" + "".join(f"{u} {v}\n" for u, v in topo.edges()))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    base = _load_config(args.config, args.seed)
    topo = build_gnk(base.n, base.k)
    verbose_log = args.verbose and base.n <= VERBOSE_NODE_LIMIT
    out_lines: list[str] = []
    for cfg in _trial_configs(base, args.trials):
        trace = run(cfg, topo, log_sends=verbose_log)
        ok = trace.complete and trace.aborted is None
        phases = "" if cfg.protocol == "uniform" else f" phases={trace.phases_used}"
        print(
            f"seed={cfg.seed} protocol={cfg.protocol} n={cfg.n} k={cfg.k} q={cfg.q:g} "
            f"completion_round={trace.completion_round}{phases} survivors: {len(trace.survivors)} "
            f"success={ok} digest={trace.digest[:16]}"
        )
        if trace.aborted:
            print(f"  aborted: {trace.aborted}")
        if args.out:
            out_lines.append(trace.to_jsonl())
            out_lines.extend(json.dumps(r, sort_keys=True) + "\n" for r in _delivery_records(trace))
    if args.out:
        Path(args.out).write_text("".join(out_lines))
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    base = _load_config(args.config, args.seed)
    if base.q != 0:
        raise UsageError("check runs the property checkers, which apply to fault-free configs (q = 0)")
    topo = build_gnk(base.n, base.k)
    failed = False
    for cfg in _trial_configs(base, args.trials):
        plan = cfg.plan()
        trace = run(cfg, topo, plan, snapshots=True, log_sends=cfg.n <= VERBOSE_NODE_LIMIT)
        inv = check_invariants(trace, topo, plan)
        line = " ".join(f"{k}={v}" for k, v in sorted(inv.items()))
        print(f"seed={cfg.seed} invariants: {line}")
        failed |= any(inv.values())
        if cfg.protocol != "uniform":
            rep = check_properties(trace, topo, plan)
            for p, counts in sorted(rep.per_phase.items()):
                if args.verbose or any(counts.values()):
                    print(f"  phase {p}: " + " ".join(f"{k}={v}" for k, v in counts.items()))
            print(f"seed={cfg.seed} properties over {rep.checked_phases} phases: "
                  + " ".join(f"{k}={v}" for k, v in rep.totals().items()))
            failed |= not rep.clean
        if trace.aborted:
            print(f"seed={cfg.seed} aborted: {trace.aborted}")
            failed = True
    print("FAIL" if failed else "PASS")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    if not args.config:
        raise UsageError("--config is required")
    try:
        camp = Campaign.from_file(args.config)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    if args.trials:
        camp.trials = args.trials
    if args.seed is not None:
        camp.base_seed = args.seed
    result = execute(camp, workers=args.workers, out=args.out)
    for err in camp.errors:
        print(f"skipped cell {err.cell}: {err.reason}")
    print(f"{'protocol':16} {'n':>5} {'k':>4} {'q':>10} {'trials':>6} {'success':>8} {'mean':>10} {'median':>10} {'phases':>7}")
    for r in result.rows:
        mean = "-" if r.mean_rounds is None else f"{r.mean_rounds:.1f}"
        med = "-" if r.median_rounds is None else f"{r.median_rounds:.1f}"
        ph = "-" if r.mean_phases is None else f"{r.mean_phases:.2f}"
        print(f"{r.protocol:16} {r.n:5d} {r.k:4d} {r.q:10.3g} {r.trials:6d} {r.success_rate:8.3f} {mean:>10} {med:>10} {ph:>7}")
    print(f"results in {Path(args.out or camp.out)}")
    return EXIT_OK


def cmd_repro(args: argparse.Namespace) -> int:
    from .claims import CLAIMS, run_claim

    ids = list(CLAIMS) if args.claim == "all" else [args.claim]
    if any(i not in CLAIMS for i in ids):
        raise UsageError(f"unknown claim {args.claim!r}; choose from {', '.join(CLAIMS)} or 'all'")
    ok = True
    for cid in ids:
        res = run_claim(cid)
        print(res.report(), flush=True)
        ok &= res.passed
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file: SimConfig fields (run, check) or a campaign (sweep)")
    common.add_argument("--seed", type=int, help="override the seed (base seed for sweep)")
    common.add_argument("--trials", type=int, help="number of trials; seeds are seed, seed+1, ...")
    common.add_argument("--workers", type=int, default=None,
                        help=f"parallel trial workers for sweep (default ${WORKERS_ENV} or 1)")
    common.add_argument("--out", help="output path (edge list, trace JSON-lines or sweep directory)")
    common.add_argument("--verbose", "-v", action="store_true",
                        help=f"debug logging; per-round delivery logs in run output for n <= {VERBOSE_NODE_LIMIT}")

    parser = argparse.ArgumentParser(
        prog="vcongest",
        description="Round-synchronous Vertex-Congest simulator for information spreading on G(n, k).",
        epilog="Exit status: 0 success, 1 property or acceptance failure, 2 usage error.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gen,run,sweep,check,repro}")

    p = sub.add_parser("gen", parents=[common], help="write the edge list of G(n, k)")
    p.add_argument("n", type=int)
    p.add_argument("k", type=int)
    p.add_argument("out_path", nargs="?", help="edge-list file (same as --out; stdout if omitted)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", parents=[common], help="run trials of one config and print summaries")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="execute a campaign grid with resume")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", parents=[common], help="run property and invariant checkers; exit 1 on violations")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("repro", parents=[common], help="run the campaign behind one acceptance claim")
    p.add_argument("claim", help="claim number 1-9, or 'all'")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is None:
        args.workers = default_workers()
    elif args.workers < 1:
        parser.error("--workers must be positive")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vcongest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
