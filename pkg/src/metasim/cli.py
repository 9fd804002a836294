"""``metasim`` command line: run experiments, generate and validate traces."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import ConfigError, SimConfig, load_config, parse_assignments, parse_value
from .harness import EXPERIMENTS, emit_csv, emit_summary, get_experiment, run_experiment, write_trap_log
from .machine import MachineConfig, SimulationFault
from .metadata import MetadataConfig
from .trace import TraceFormatError, trace_read, trace_write, validate_trace
from .workloads import GENERATORS, generate

EXIT_OK = 0
EXIT_FAULT = 2
EXIT_CONFIG = 3

# every scalar config field gets an override flag of the same name
FIELD_FLAGS = [f.name for cls in (MachineConfig, MetadataConfig, SimConfig)
               for f in dataclasses.fields(cls)
               if f.name not in ("machine", "metadata", "clients", "seed")]


def _parser():
    p = argparse.ArgumentParser(prog="metasim", description="Tagged-memory metadata plane simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named experiment and write CSV rows")
    run.add_argument("--experiment", required=True, help=f"one of {', '.join(sorted(EXPERIMENTS))}")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--trace", action="append",
                     help="trace spec (e.g. stream:bytes=65536) or trace file; repeatable")
    run.add_argument("--out", required=True, help="CSV output path")
    run.add_argument("--seed", type=int)
    run.add_argument("--reps", type=int)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--clients", help="comma-separated client list for the 'single' experiment")
    run.add_argument("--summary", help="also write mean/min/max per configuration here")
    run.add_argument("--trap-log", help="write trap records here")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override any config key; repeatable")
    for name in FIELD_FLAGS:
        opts = ["--" + name]
        if "_" in name:
            opts.append("--" + name.replace("_", "-"))
        run.add_argument(*opts, dest=name, type=parse_value, metavar="VALUE")

    gen = sub.add_parser("gen", help="generate a workload trace file")
    gen.add_argument("--workload", required=True, help=f"one of {', '.join(sorted(GENERATORS))}")
    gen.add_argument("--params", nargs="*", default=[], metavar="KEY=VALUE")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", required=True)

    val = sub.add_parser("validate", help="check a trace file")
    val.add_argument("--trace", required=True)
    return p


def _cmd_run(a):
    overrides = parse_assignments(a.set)
    for name in FIELD_FLAGS:
        v = getattr(a, name)
        if v is not None:
            overrides[name] = v
    if a.clients is not None:
        overrides["clients"] = [c for c in a.clients.split(",") if c]
    cfg = load_config(a.config, overrides)
    exp = get_experiment(a.experiment, seed=a.seed, repetitions=a.reps)
    traps = [] if a.trap_log else None
    rows = run_experiment(exp, cfg, traces=a.trace, workers=a.workers, trap_log=traps)
    emit_csv(rows, a.out)
    if a.summary:
        emit_summary(rows, a.summary)
    if a.trap_log:
        write_trap_log(traps, a.trap_log)
    print(f"{len(rows)} rows -> {a.out}")
    return EXIT_OK


def _cmd_gen(a):
    params = parse_assignments(a.params)
    if a.seed is not None:
        params["seed"] = a.seed
    try:
        trace = generate(a.workload, **params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    trace_write(trace, a.out)
    print(f"{len(trace.events)} events -> {a.out}")
    return EXIT_OK


def _cmd_validate(a):
    trace = trace_read(a.trace)
    problems = validate_trace(trace)
    for msg in problems:
        print(msg)
    summary = {"events": len(trace.events), "generator": trace.header.generator,
               "problems": len(problems)}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_FAULT if problems else EXIT_OK


def main(argv=None):
    a = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "gen": _cmd_gen, "validate": _cmd_validate}[a.command]
    try:
        return handler(a)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationFault, TraceFormatError) as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
