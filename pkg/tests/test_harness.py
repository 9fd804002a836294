import csv
from fractions import Fraction
from pathlib import Path

import pytest

from metasim.config import ConfigError, SimConfig
from metasim.harness import (COLUMNS, EXPERIMENTS, Experiment, ResultRow, Variant, emit_csv,
                             emit_summary, get_experiment, run_experiment, variant_config,
                             write_trap_log)
from metasim.machine import MachineConfig, Stats
from metasim.metadata import MetadataConfig
from metasim.sim import run_one
from metasim.trace import Trace, TraceHeader
from metasim.workloads import gen_safety_corpus, gen_stream

GOLDEN = Path(__file__).parent / "golden"
MINI = ["stream:bytes=8192", "array3d:dx=8,dy=16,dz=4"]


def mini_rows():
    exp = get_experiment("lookup_triggers", repetitions=2, seed=7)
    return run_experiment(exp, traces=MINI)


def row(value, cycles, base_cycles, baseline="b"):
    return ResultRow("e", "t", "a", value, baseline, 0, 1, Stats(cycles=cycles, mem_accesses=3),
                     base_cycles, 1)


def test_run_one_empty_trace():
    stats, traps = run_one(SimConfig(), Trace(TraceHeader("empty")))
    assert stats == Stats() and traps == []


def test_run_one_stream_compulsory_misses():
    stats, _ = run_one(SimConfig(), gen_stream(64 * 1024))
    assert stats.l1_misses == 1024


def test_run_one_is_deterministic():
    cfg = SimConfig(clients=["null_all", "tlb_miss"], seed=3)
    t = gen_stream(16 * 1024)
    assert run_one(cfg, t) == run_one(cfg, t)


def test_emit_csv_lines_and_baseline(tmp_path):
    rows = [row("b", 100, 100), row("x", 150, 100), row("y", 99, 100)]
    p = emit_csv(rows, tmp_path / "o.csv")
    lines = Path(p).read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].split(",") == COLUMNS
    recs = list(csv.DictReader(lines))
    assert recs[0]["normalized_time"] == "1.0"
    assert recs[1]["normalized_time"] == "1.5"
    assert recs[2]["extra_mem_accesses"] == "2"


def test_emit_csv_byte_identical(tmp_path):
    rows = mini_rows()
    a = emit_csv(rows, tmp_path / "a.csv")
    b = emit_csv(list(reversed(rows)), tmp_path / "b.csv")
    assert Path(a).read_bytes() == Path(b).read_bytes()


def test_emit_csv_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "x.csv")


def test_golden_mini_suite(tmp_path):
    out = emit_csv(mini_rows(), tmp_path / "mini.csv")
    assert Path(out).read_text() == (GOLDEN / "lookup_triggers_mini.csv").read_text()


def test_normalization_is_exact():
    for r in mini_rows():
        assert isinstance(r.normalized_time, Fraction)
        assert r.normalized_time * r.baseline_cycles == r.stats.cycles
        if r.value == r.baseline:
            assert r.normalized_time == 1


def test_rows_cover_every_cell():
    rows = mini_rows()
    assert len(rows) == 2 * 3 * 2
    assert rows == sorted(rows, key=ResultRow.sort_key)


def test_rep_seeds_distinct_and_stable():
    exp = get_experiment("mmc_size")
    assert exp.repetitions == 5
    assert exp.rep_seeds() == exp.rep_seeds()
    assert len(set(exp.rep_seeds())) == 5


def test_parallel_matches_serial():
    exp = get_experiment("lookup_triggers", repetitions=2)
    serial = run_experiment(exp, traces=MINI[:1])
    parallel = run_experiment(exp, traces=MINI[:1], workers=2)
    assert [(r.value, r.rep, r.stats) for r in serial] == [(r.value, r.rep, r.stats) for r in parallel]


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        get_experiment("nope")


def test_bad_experiment_definitions():
    with pytest.raises(ConfigError):
        Experiment("x", "a", [Variant("v")], [], repetitions=0)
    with pytest.raises(ConfigError):
        Experiment("x", "a", [Variant("v", baseline="missing")], [])
    with pytest.raises(ConfigError):
        Experiment("x", "a", [Variant("v", transform="rot13")], [])


@pytest.mark.parametrize("name", sorted(EXPERIMENTS))
def test_baselines_use_table_defaults(name):
    exp = get_experiment(name)
    labels = {v.label: v for v in exp.variants}
    for v in exp.variants:
        if v.baseline_label != v.label:
            continue
        cfg = variant_config(SimConfig(), exp, v, 0)
        axis_keys = set(v.overrides)
        for f, default in vars(MachineConfig()).items():
            if f not in axis_keys:
                assert getattr(cfg.machine, f) == default
        for f, default in vars(MetadataConfig()).items():
            if f not in axis_keys:
                assert getattr(cfg.metadata, f) == default
    assert labels


def test_lookup_triggers_on_stream():
    rows = run_experiment(get_experiment("lookup_triggers", repetitions=1),
                          traces=["stream:bytes=65536"])
    by = {r.value: r for r in rows}
    ratio = by["all_access"].stats.lookups_issued / by["miss_only"].stats.lookups_issued
    assert ratio == 16
    ea, em = by["all_access"].extra_mem_accesses, by["miss_only"].extra_mem_accesses
    assert abs(ea - em) <= 0.05 * max(ea, em)


def test_summary_and_trap_log(tmp_path):
    rows = mini_rows()
    s = emit_summary(rows, tmp_path / "s.csv")
    lines = Path(s).read_text().splitlines()
    assert lines[0].startswith("experiment,trace,value,reps,normalized_mean")
    assert len(lines) == 1 + 2 * 3

    exp = get_experiment("usecase_bounds", repetitions=1)
    traps = []
    t = gen_safety_corpus("bounds", 50, seed=3, inject=2)
    run_experiment(exp, traces=[t], trap_log=traps)
    assert [rec.position for _, v, _, rec in traps if v == "tagged"] == t.expected["violations"]
    log = write_trap_log(traps, tmp_path / "traps.csv")
    assert Path(log).read_text().count("BoundsViolation") == 2
