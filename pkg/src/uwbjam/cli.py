"""Command-line entry point: ``uwbjam <subcommand>``."""

from __future__ import annotations

import argparse
import inspect
import json
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .attacker import SniffFailed, search_space_size, sniff_with_oracle, staged_search_size
from .experiments import EXPERIMENTS, OUTPUT_ENV, ExperimentError, output_dir
from .phy import DEFAULT_DOMAINS, default_config
from .simcore import ScenarioError, compute_metrics, load_scenario, read_events, run

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_INVALID = 2


def _parse_values(text: str) -> list:
    """``8,15`` or ``700:900:10`` (inclusive) into a list of numbers or strings."""
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError("sweep step must be positive")
        n = int(round((hi - lo) / step)) + 1
        return [lo + i * step for i in range(n)]
    out = []
    for v in text.split(","):
        try:
            out.append(float(v))
        except ValueError:
            out.append(v)
    return out


def _sweep_kwargs(fn, sweeps: list[str], extra: dict) -> dict:
    params = inspect.signature(fn).parameters
    kwargs = {}
    for item in sweeps:
        name, _, values = item.partition("=")
        if name not in params or not values:
            raise ValueError(f"unknown sweep parameter {name!r}; try one of {sorted(params)}")
        vals = _parse_values(values)
        default = params[name].default
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if len(vals) != 1:
                raise ValueError(f"{name} takes a single value")
            kwargs[name] = type(default)(vals[0])
        else:
            kwargs[name] = vals
    for name, value in extra.items():
        if value is not None and name in params:
            kwargs[name] = value
    return kwargs


def cmd_experiment(args) -> int:
    fn = EXPERIMENTS[args.name]
    extra = {"seed": args.seed, "workers": args.workers, "sessions": args.sessions}
    try:
        kwargs = _sweep_kwargs(fn, args.sweep, extra)
        out_dir = Path(args.out) if args.out else output_dir()
        if args.traces and "trace_dir" in inspect.signature(fn).parameters:
            kwargs["trace_dir"] = out_dir / f"{args.name}_traces"
        table = fn(**kwargs)
    except (ValueError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    path = table.write(out_dir / f"{args.name}.csv")
    print(f"wrote {path}")
    if args.check:
        failures = acceptance.check(table)
        for f in failures:
            print(f"FAIL {f}")
        if failures:
            return EXIT_ACCEPTANCE
        print("PASS")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except (OSError, ScenarioError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None:
        from dataclasses import replace

        sc = replace(sc, seed=args.seed)
    trace = run(sc)
    out_dir = Path(args.out) if args.out else output_dir()
    trace_path, summary = trace.write(out_dir / (Path(args.scenario).stem + ".jsonl"))
    print(trace.summary_json(), end="")
    print(f"wrote {trace_path} and {summary}")
    return EXIT_OK


def cmd_sniff_demo(args) -> int:
    rng = np.random.default_rng(args.seed)
    victim = default_config() if args.default else DEFAULT_DOMAINS.random_config(rng)
    print("victim  ", json.dumps(victim.to_dict(), sort_keys=True))
    try:
        state = sniff_with_oracle(victim)
    except SniffFailed as exc:
        print(f"sniff failed: {exc}")
        return EXIT_ACCEPTANCE
    print("sniffed ", json.dumps(state.candidate().to_dict(), sort_keys=True))
    for i, n in enumerate(state.stage_packets, 1):
        print(f"stage {i}: {n} packets")
    print(f"total {state.packets_consumed} packets, {state.packets_consumed / args.rate:.2f} s "
          f"at {args.rate:g} sessions/s")
    same = state.candidate().receiver_view() == victim.receiver_view()
    return EXIT_OK if same else EXIT_ACCEPTANCE


def cmd_domains(args) -> int:
    d = DEFAULT_DOMAINS
    if args.json:
        print(json.dumps(d.to_dict(), sort_keys=True, indent=2))
    else:
        for name, values in d.to_dict().items():
            print(f"{name:16s} {values}")
        sizes = [len(s) for s in d.stages()]
        print(f"full search space {search_space_size(d)}")
        print(f"staged worst case {staged_search_size(d)} ({' + '.join(map(str, sizes))})")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        events = read_events(args.trace)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(compute_metrics(events), sort_keys=True, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwbjam", description="UWB ranging jamming simulator",
                                epilog=f"Output goes to ./results unless --out or ${OUTPUT_ENV} is set.")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run a scenario file and write its trace")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sniff-demo", help="staged configuration search against one victim")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--rate", type=float, default=6.0, help="ranging sessions per second")
    s.add_argument("--default", action="store_true", help="use the experiment config as victim")
    s.set_defaults(func=cmd_sniff_demo)

    s = sub.add_parser("experiment", help="run a built-in experiment to CSV")
    s.add_argument("name", choices=sorted(EXPERIMENTS))
    s.add_argument("--sweep", action="append", default=[], metavar="PARAM=VALUES",
                   help="e.g. gains=8,15 or delays=700:900:10")
    s.add_argument("--seed", type=int)
    s.add_argument("--sessions", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.add_argument("--traces", action="store_true", help="also write per-point traces")
    s.add_argument("--check", action="store_true", help="exit 1 if acceptance thresholds fail")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("domains", help="list configuration domains and search sizes")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_domains)

    s = sub.add_parser("report", help="recompute summary metrics from a trace")
    s.add_argument("trace")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
