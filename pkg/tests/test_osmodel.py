import pytest
from hypothesis import given, settings, strategies as st

from metasim.config import ClientSpec, SimConfig
from metasim.isa import Create, Map
from metasim.machine import SimulationFault
from metasim.osmodel import TrapKind, TrapRecord, allocate_mmt, build_context
from metasim.sim import Simulator, run_processes
from metasim.trace import Call, Meta, Trace, TraceHeader, load, store

GB = 1 << 30
MB = 1 << 20


def test_allocate_mmt_full_size():
    mmt = allocate_mmt(8 * GB, 512)
    assert mmt.size_bytes == 16 * MB
    assert round(mmt.footprint_fraction * 100, 1) == 0.2


@pytest.mark.parametrize("mem,g,n", [(MB, 512, 2048), (MB, 64, 16384)])
def test_allocate_mmt_entries(mem, g, n):
    assert len(allocate_mmt(mem, g).entries) == n


def test_allocate_mmt_errors():
    with pytest.raises(ValueError):
        allocate_mmt(MB, 2 * MB)
    with pytest.raises(ValueError):
        allocate_mmt(MB, 96)


def test_mmt_sits_above_process_data():
    mmt = allocate_mmt(GB, 512)
    ctx = build_context(64 * MB, mmt, scatter_seed=5)
    assert mmt.base_paddr + mmt.size_bytes <= GB
    data_frames = {ctx(v) for v in range(ctx.data_pages)}
    assert max(data_frames) * 4096 + 4096 <= ctx.pt_base < mmt.base_paddr


def test_unmapped_page_faults():
    ctx = build_context(MB, allocate_mmt(GB, 512))
    with pytest.raises(SimulationFault):
        ctx(ctx.data_pages + 3)


# -- context switch -------------------------------------------------------------

def meta_sim(**over):
    cfg = SimConfig(clients=[ClientSpec("null_all", client_id=0)]).replace(**over)
    return Simulator(cfg, MB)


def test_switch_flushes_pmt_and_mmc():
    sim = meta_sim()
    sim.run([Meta(Map(1, 0x2000, 64)), Meta(Create(0, 1, b"secret")), load(0x2000)])
    assert sim.plane.pmt(0).written(1)
    before = sim.machine.now
    assert sim.context_switch() == 1000
    assert sim.machine.now - before == 1000
    assert sim.plane.pmt(0).read(1) == bytes(64)
    assert len(sim.machine.tlb) == 0
    r = sim.plane.lookup(0, 0x2000, now=sim.machine.now)
    assert not r.mmc_hit and r.tag == 1


def test_switch_can_keep_mmc():
    sim = meta_sim(flush_mmc_on_switch=False)
    sim.run([load(0x2000)])
    sim.context_switch()
    assert sim.plane.lookup(0, 0x2000, now=sim.machine.now).mmc_hit


def test_two_process_isolation():
    first = Trace(TraceHeader("p1"), [Meta(Map(1, 0x2000, 64)), Meta(Create(0, 1, b"secret")),
                                      load(0x2000)])
    second = Trace(TraceHeader("p2"), [load(0x2000), load(0x2004)])
    sim = run_processes(SimConfig(clients=[ClientSpec("null_all", client_id=0)]), [first, second])
    assert sim.plane.pmt(0).read(1) == bytes(64)
    assert not sim.plane.pmt(0).written(1)
    assert sim.stats.cycles > 1000


# -- remap ----------------------------------------------------------------------

def test_remap_tagged_page_keeps_tags():
    sim = meta_sim()
    sim.execute_map(Map(3, 0x5000, 4096))
    spare = sim.ctx.reserved_start - 1
    assert sim.remap(5, spare) == 8
    assert sim.plane.lookup(0, 0x5000, now=0).tag == 3
    assert sim.plane.lookup(0, 0x5FFF, now=5000).tag == 3
    assert sim.plane.mmt.tag_at(0x5000) == 0


def test_remap_untagged_page():
    sim = meta_sim()
    assert sim.remap(5, sim.ctx.reserved_start - 1) == 0


def test_remap_invalidates_stale_mmc_entry():
    sim = meta_sim()
    sim.execute_map(Map(3, 0x5000, 512))
    assert sim.plane.lookup(0, 0x5000, now=0).tag == 3
    sim.remap(5, sim.ctx.reserved_start - 1)
    r = sim.plane.lookup(0, 0x5000, now=5000)
    assert not r.mmc_hit and r.tag == 3


def test_remap_unmapped_faults():
    sim = meta_sim()
    with pytest.raises(SimulationFault):
        sim.remap(sim.ctx.data_pages + 2, 7)


steps = st.lists(st.one_of(
    st.tuples(st.just("map"), st.integers(1, 255), st.integers(0, 16 * 4096 - 1), st.integers(1, 5000)),
    st.tuples(st.just("look"), st.just(0), st.integers(0, 16 * 4096 - 1), st.just(0)),
    st.tuples(st.just("remap"), st.just(0), st.integers(0, 15), st.just(0)),
), max_size=60)


@settings(max_examples=60, deadline=None)
@given(steps, st.sampled_from([64, 512]))
def test_remap_transparency(seq, g):
    def observe(with_remaps):
        cfg = SimConfig(clients=[ClientSpec("null_all", client_id=0)])
        sim = Simulator(cfg.replace(granularity=g, mmc_entries=8), 16 * 4096)
        fresh = iter(range(sim.ctx.reserved_start - 1, 16, -1))
        out = []
        t = 0
        for kind, tag, a, n in seq:
            t += 1000
            if kind == "map":
                sim.execute_map(Map(tag, a, min(n, 16 * 4096 - a)))
            elif kind == "look":
                out.append(sim.plane.lookup(0, a, now=t).tag)
            elif with_remaps:
                sim.remap(a, next(fresh))
        return out

    assert observe(True) == observe(False)


# -- traps ----------------------------------------------------------------------

def test_bounds_mismatch_traps():
    sim = Simulator(SimConfig(clients=["bounds"]), MB)
    sim.run([Meta(Map(3, 0x3000, 64)), Meta(Create(0, 2, b"")), load(0x3000), load(0x4000)])
    assert [t.kind for t in sim.traps] == [TrapKind.BOUNDS_VIOLATION]
    # terminate mode: the run stops at the trap
    assert sim.stats.l1_hits + sim.stats.l1_misses == 1


def test_store_to_return_slot_traps():
    sim = Simulator(SimConfig(clients=["rap"], trap_mode="record"), MB)
    sim.run([Call(0x8000), store(0x8000, 8)])
    assert [(t.kind, t.vaddr, t.position) for t in sim.traps] == [
        (TrapKind.RETURN_ADDRESS_OVERWRITE, 0x8000, 1)]
    assert sim.stats.traps == 1


def test_clean_trace_has_no_traps():
    sim = Simulator(SimConfig(clients=["rap", "bounds"]).replace(granularity=64), MB)
    sim.run([Call(0x8000), store(0x8040, 8), load(0x8000, 8)])
    assert sim.traps == []


def test_trap_record_line():
    rec = TrapRecord(TrapKind.BOUNDS_VIOLATION, 4096, 17, True)
    assert rec.line() == "BoundsViolation,4096,17,1"
