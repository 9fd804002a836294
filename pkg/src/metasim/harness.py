"""Named experiments, result rows and CSV emission.

CSV schema (one header line, columns in this order)::

    experiment, trace, axis, value, baseline, rep, seed,
    <every Stats counter>, normalized_time, mmc_hit_rate, extra_mem_accesses

``normalized_time`` is ``cycles / baseline_cycles`` where the baseline is
the row named in ``baseline`` for the same trace and repetition; baseline
rows therefore print ``1.0``.  ``extra_mem_accesses`` is the difference in
``mem_accesses`` against that same baseline.
"""

from __future__ import annotations

import csv
import dataclasses
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import ConfigError, SimConfig, apply_overrides
from .machine import Stats
from .sim import run_one
from .workloads import inject_meta_ops, instrument_software_checks, make_trace, strip_meta

TRANSFORMS = {
    None: lambda t: t,
    "strip_meta": strip_meta,
    "sw_bounds": lambda t: instrument_software_checks(t, "bounds"),
    "canary": lambda t: instrument_software_checks(strip_meta(t), "canary"),
    "ops8": lambda t: inject_meta_ops(t, 8),
    "ops2": lambda t: inject_meta_ops(t, 2),
}


@dataclass
class Variant:
    """One configuration in a sweep.  ``baseline`` names the variant it is normalized to."""

    label: str
    clients: tuple = ()
    overrides: dict = field(default_factory=dict)
    transform: str | None = None
    baseline: str | None = None  # None: this variant is its own baseline

    @property
    def baseline_label(self):
        return self.baseline or self.label


@dataclass
class Experiment:
    name: str
    axis: str
    variants: list
    traces: list
    repetitions: int = 5
    seed: int = 0
    base_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        labels = [v.label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate variant labels in {self.name}")
        for v in self.variants:
            if v.baseline_label not in labels:
                raise ConfigError(f"variant {v.label!r} names unknown baseline {v.baseline!r}")
            if v.transform not in TRANSFORMS:
                raise ConfigError(f"unknown trace transform {v.transform!r}")

    def rep_seeds(self):
        ss = np.random.SeedSequence(self.seed)
        return [int(c.generate_state(1)[0]) for c in ss.spawn(self.repetitions)]


@dataclass
class ResultRow:
    experiment: str
    trace: str
    axis: str
    value: str
    baseline: str
    rep: int
    seed: int
    stats: Stats
    baseline_cycles: int
    baseline_mem_accesses: int

    @property
    def normalized_time(self) -> Fraction:
        if self.baseline_cycles == 0:
            return Fraction(1) if self.stats.cycles == 0 else Fraction(self.stats.cycles)
        return Fraction(self.stats.cycles, self.baseline_cycles)

    @property
    def mmc_hit_rate(self):
        return self.stats.mmc_hit_rate

    @property
    def extra_mem_accesses(self):
        return self.stats.mem_accesses - self.baseline_mem_accesses

    def sort_key(self):
        return (self.experiment, self.trace, self.axis, self.value, self.rep)


COLUMNS = (["experiment", "trace", "axis", "value", "baseline", "rep", "seed"]
           + Stats.field_names() + ["normalized_time", "mmc_hit_rate", "extra_mem_accesses"])


def _fmt(x):
    if isinstance(x, Fraction):
        x = float(x)
    if isinstance(x, float):
        return repr(round(x, 9))
    return str(x)


def row_values(row: ResultRow):
    head = [row.experiment, row.trace, row.axis, row.value, row.baseline, row.rep, row.seed]
    counters = [getattr(row.stats, f) for f in Stats.field_names()]
    derived = [row.normalized_time, row.mmc_hit_rate, row.extra_mem_accesses]
    return [_fmt(v) for v in head + counters + derived]


def emit_csv(rows, path):
    if not rows:
        raise ValueError("no rows to emit")
    rows = sorted(rows, key=ResultRow.sort_key)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow(row_values(r))
    return path


def summarize(rows):
    """Mean/min/max normalized time and mean hit rate per (trace, value)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.experiment, r.trace, r.value), []).append(r)
    out = []
    for (exp, trace, value), rs in sorted(groups.items()):
        norm = [float(r.normalized_time) for r in rs]
        out.append({
            "experiment": exp, "trace": trace, "value": value, "reps": len(rs),
            "normalized_mean": statistics.fmean(norm),
            "normalized_min": min(norm), "normalized_max": max(norm),
            "mmc_hit_rate_mean": statistics.fmean(r.mmc_hit_rate for r in rs),
            "cycles_mean": statistics.fmean(r.stats.cycles for r in rs),
        })
    return out


def emit_summary(rows, path):
    summary = summarize(rows)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        for s in summary:
            w.writerow({k: _fmt(v) for k, v in s.items()})
    return path


def write_trap_log(traps, path):
    """``traps`` is an iterable of (trace, variant, rep, TrapRecord)."""
    with open(path, "w") as f:
        f.write("trace,variant,rep,kind,vaddr,position,expected\n")
        for trace, variant, rep, rec in traps:
            f.write(f"{trace},{variant},{rep},{rec.line()}\n")
    return path


# -- built-in experiments ------------------------------------------------------

STREAM = "stream:bytes=262144"
RANDOM = "random:region_bytes=26214400,accesses=20000"
ARRAY3D = "array3d:dx=136,dy=8,dz=8"
ARRAY3D_THRASH = "array3d:dx=128,dy=512,dz=32,i_limit=1"
LIST = "linked_list:nodes=2048,traversals=4"
GRAPH = "graph:vertices=4096,avg_degree=8"
BOUNDS = "safety:kind=bounds,scale=5000"
RAP = "safety:kind=rap,scale=2000"

BASE = Variant("baseline", transform="strip_meta")


def _lookup_triggers():
    return Experiment("lookup_triggers", "trigger", [
        BASE,
        Variant("all_access", ("null_all",), baseline="baseline"),
        Variant("miss_only", ("null_miss",), baseline="baseline"),
    ], [STREAM, ARRAY3D, LIST, RANDOM])


def _bandwidth():
    variants = []
    for label, interval in (("0.5x", 8), ("1x", 4), ("2x", 2)):
        over = {"mem_issue_interval_cycles": interval}
        variants.append(Variant(f"{label}:baseline", (), over, "strip_meta"))
        variants.append(Variant(label, ("null_all",), over, baseline=f"{label}:baseline"))
    return Experiment("bandwidth", "bandwidth", variants, [RANDOM, STREAM])


def _sweep(name, key, values, traces):
    variants = [BASE] + [Variant(str(v), ("null_all",), {key: v}, baseline="baseline")
                         for v in values]
    return Experiment(name, key, variants, traces)


def _translation():
    return Experiment("translation", "translation_mode", [
        BASE,
        Variant("virtual", ("null_all",), {"translation_mode": "virtual"}, baseline="baseline"),
        Variant("physical", ("null_all",), {"translation_mode": "physical"}, baseline="baseline"),
    ], [RANDOM, LIST])


def _contention():
    return Experiment("contention", "clients", [
        BASE,
        Variant("one_client", ("null_all",), baseline="baseline"),
        Variant("two_clients", ("null_all", "tlb_miss"), baseline="baseline"),
    ], [RANDOM, ARRAY3D_THRASH])


def _mitigation():
    two = ("null_all", "tlb_miss")
    return Experiment("mitigation", "policy", [
        BASE,
        Variant("shared", two, baseline="baseline"),
        Variant("partitioned", two, {"mmc_mode": "partitioned"}, baseline="baseline"),
        Variant("prioritized", two, {"mmc_mode": "prioritized", "priority_client": "tlb_miss"},
                baseline="baseline"),
        Variant("no_stall", ("null_all:no_stall", "tlb_miss:no_stall"), baseline="baseline"),
    ], [ARRAY3D_THRASH, RANDOM])


def _op_density():
    return Experiment("op_density", "ops_per_mem", [
        Variant("none", ("null_all",)),
        Variant("per8", ("null_all",), transform="ops8", baseline="none"),
        Variant("per2", ("null_all",), transform="ops2", baseline="none"),
    ], [STREAM])


def _usecase_prefetch():
    return Experiment("usecase_prefetch", "prefetcher", [
        Variant("none", transform="strip_meta", baseline="stride"),
        Variant("stride", ("stride_prefetch",), transform="strip_meta"),
        Variant("graph_pref", ("graph_pref_ideal",), baseline="stride"),
        Variant("tagged", ("graph_prefetch",), baseline="stride"),
    ], [GRAPH])


def _usecase_bounds():
    return Experiment("usecase_bounds", "checker", [
        Variant("baseline", transform="strip_meta"),
        Variant("software", transform="sw_bounds", baseline="baseline"),
        Variant("tagged", ("bounds",), {"granularity": 64}, baseline="baseline"),
    ], [BOUNDS], base_overrides={"trap_mode": "record"})


def _usecase_rap():
    return Experiment("usecase_rap", "protector", [
        Variant("baseline", transform="strip_meta"),
        Variant("canary", transform="canary", baseline="baseline"),
        Variant("tagged", ("rap",), {"granularity": 64}, baseline="baseline"),
    ], [RAP], base_overrides={"trap_mode": "record"})


def _single():
    return Experiment("single", "config", [
        BASE,
        Variant("configured", None, baseline="baseline"),
    ], [STREAM])


EXPERIMENTS = {
    "lookup_triggers": _lookup_triggers,
    "bandwidth": _bandwidth,
    "mmc_size": lambda: _sweep("mmc_size", "mmc_entries", [16, 32, 64, 128, 256, 512],
                               [STREAM, LIST, RANDOM]),
    "granularity": lambda: _sweep("granularity", "granularity", [64, 128, 256, 512, 1024, 2048],
                                  [STREAM, LIST, RANDOM]),
    "translation": _translation,
    "contention": _contention,
    "mitigation": _mitigation,
    "op_density": _op_density,
    "usecase_prefetch": _usecase_prefetch,
    "usecase_bounds": _usecase_bounds,
    "usecase_rap": _usecase_rap,
    "single": _single,
}


def get_experiment(name, **changes) -> Experiment:
    try:
        exp = EXPERIMENTS[name]()
    except KeyError:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {sorted(EXPERIMENTS)}") from None
    return dataclasses.replace(exp, **{k: v for k, v in changes.items() if v is not None})


def variant_config(base: SimConfig, exp: Experiment, v: Variant, seed):
    over = dict(exp.base_overrides)
    over.update(v.overrides)
    over["seed"] = seed
    if v.clients is not None:
        over["clients"] = list(v.clients)
    return apply_overrides(base, over)


def _run_cell(args):
    cfg, trace = args
    stats, traps = run_one(cfg, trace)
    return stats, traps


def run_experiment(exp: Experiment, base_config: SimConfig | None = None, traces=None,
                   workers=1, trap_log=None):
    """Run every (trace x variant x repetition) cell; returns sorted ResultRows.

    ``traces`` overrides the experiment's trace specs (spec strings, file
    paths or Trace objects).  When ``trap_log`` is a list, trap records are
    appended to it as (trace, variant, rep, record).
    """
    base = base_config or SimConfig()
    specs = list(traces) if traces is not None else list(exp.traces)
    seeds = exp.rep_seeds()
    built = {}
    cells = []
    for spec in specs:
        trace = spec if not isinstance(spec, str) else make_trace(spec, seed=exp.seed)
        name = spec if isinstance(spec, str) else trace.header.generator
        for v in exp.variants:
            key = (name, v.transform)
            if key not in built:
                built[key] = TRANSFORMS[v.transform](trace)
            for rep, seed in enumerate(seeds):
                cells.append((name, v, rep, seed, variant_config(base, exp, v, seed), built[key]))
    jobs = [(c[4], c[5]) for c in cells]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    by_key = {}
    for (name, v, rep, seed, _, _), (stats, traps) in zip(cells, results):
        by_key[(name, v.label, rep)] = stats
        if trap_log is not None:
            trap_log.extend((name, v.label, rep, t) for t in traps)
    rows = []
    for name, v, rep, seed, _, _ in cells:
        stats = by_key[(name, v.label, rep)]
        b = by_key[(name, v.baseline_label, rep)]
        rows.append(ResultRow(exp.name, name, exp.axis, v.label, v.baseline_label, rep, seed,
                              stats, b.cycles, b.mem_accesses))
    rows.sort(key=ResultRow.sort_key)
    return rows
