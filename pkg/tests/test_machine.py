import math

import pytest
from hypothesis import given, settings, strategies as st

from metasim.config import SimConfig
from metasim.machine import (MachineConfig, MemController, SetAssocCache, SimulationFault, Stats,
                             Tlb, mem_request, translate)
from metasim.sim import Simulator
from metasim.trace import Compute, load, store


def identity(vpn):
    return vpn


def no_pages_above(limit):
    def page_map(vpn):
        if vpn >= limit:
            raise SimulationFault(f"unmapped {vpn}")
        return vpn
    return page_map


class BruteLru:
    """Reference LRU: per set, remember the last-use time of every line."""

    def __init__(self, sets, ways):
        self.sets, self.ways = sets, ways
        self.last = [dict() for _ in range(sets)]
        self.clock = 0

    def access(self, line):
        self.clock += 1
        s = self.last[line % self.sets]
        hit = line in s
        victim = None
        if not hit and len(s) == self.ways:
            victim = min(s, key=s.get)
            del s[victim]
        s[line] = self.clock
        return hit, victim


# -- config -------------------------------------------------------------------

def test_defaults_match_table():
    c = MachineConfig()
    assert (c.l1_size_bytes, c.l1_ways, c.l1_line_bytes, c.l1_hit_cycles) == (16384, 4, 64, 4)
    assert (c.mshr_entries, c.tlb_entries, c.page_bytes) == (2, 16, 4096)
    assert c.l1_sets == 64


@pytest.mark.parametrize("bad", [{"l1_ways": 0}, {"l1_size_bytes": 1000}, {"page_bytes": 3000}])
def test_config_rejects(bad):
    with pytest.raises(ValueError):
        MachineConfig(**bad)


# -- translate ----------------------------------------------------------------

def test_translate_cold_then_warm():
    tlb = Tlb(16)
    assert translate(tlb, identity, 0x0) == (0x0, False, 1)
    assert translate(tlb, identity, 0x0) == (0x0, True, 0)


def test_translate_offset_and_mapping():
    tlb = Tlb(16)
    paddr, hit, walks = translate(tlb, lambda vpn: vpn + 10, 3 * 4096 + 17)
    assert paddr == 13 * 4096 + 17 and not hit and walks == 1


def test_translate_unmapped_faults():
    with pytest.raises(SimulationFault):
        translate(Tlb(4), no_pages_above(2), 5 * 4096)


def test_tlb_round_robin_17_pages_always_misses():
    tlb = Tlb(16)
    for p in range(17):
        translate(tlb, identity, p * 4096)
    hits = [translate(tlb, identity, p * 4096)[1] for _ in range(3) for p in range(17)]
    assert not any(hits)


@given(st.lists(st.integers(0, 40), max_size=200))
def test_tlb_matches_brute_lru_and_has_no_duplicates(vpns):
    tlb = Tlb(16)
    ref = BruteLru(1, 16)
    for v in vpns:
        _, hit, _ = translate(tlb, identity, v * 4096)
        assert hit == ref.access(v)[0]
        resident = tlb.resident()
        assert len(resident) == len(set(resident)) <= 16


# -- cache --------------------------------------------------------------------

def test_cache_cold_miss_then_hit():
    c = SetAssocCache(64, 4, 64)
    assert c.access(0x1234)[0] is False
    assert c.access(0x1234)[0] is True


def test_cache_five_lines_one_set_evicts_first():
    c = SetAssocCache(64, 4, 64)
    lines = [1 + 64 * k for k in range(5)]
    for ln in lines:
        c.access_line(ln)
    hit, _ = c.access_line(lines[0])
    assert hit is False


@settings(max_examples=200)
@given(st.lists(st.integers(0, 63), max_size=300))
def test_cache_lru_matches_brute_force(lines):
    c = SetAssocCache(4, 4, 64)
    ref = BruteLru(4, 4)
    for ln in lines:
        assert c.access_line(ln) == ref.access(ln)
        for s in range(4):
            rec = c.recency(s)
            assert sorted(rec.values()) == list(range(len(rec)))


@given(st.lists(st.integers(0, 31), min_size=1, max_size=300), st.integers(0, 2**32))
def test_cache_nmru_never_evicts_mru(lines, seed):
    import random
    c = SetAssocCache(1, 4, 64, "NMRU", random.Random(seed))
    prev = None
    for ln in lines:
        _, victim = c.access_line(ln)
        if victim is not None:
            assert victim != prev
        prev = ln


# -- memory controller ----------------------------------------------------------

def test_mem_request_examples():
    mc = MemController(100, 4)
    assert mem_request(mc, 0) == 100
    assert mem_request(mc, 0) == 104
    assert mem_request(MemController(100, 4), 1000) == 1100


@given(st.lists(st.integers(0, 500), min_size=1, max_size=60))
def test_mem_controller_in_order_matches_formula(times):
    times = sorted(times)
    mc = MemController(100, 4)
    free = 0
    for t in times:
        slot = max(t, free)
        free = slot + 4
        assert mc.request(t) == slot + 100


@given(st.lists(st.integers(0, 300), min_size=1, max_size=60))
def test_mem_controller_slots_never_overlap(times):
    mc = MemController(50, 4)
    slots = sorted(mc.request(t) - 50 for t in times)
    assert all(b - a >= 4 for a, b in zip(slots, slots[1:]))
    assert all(s >= 0 for s in slots)


# -- charged cycles -----------------------------------------------------------

def _sim(**over):
    return Simulator(SimConfig().replace(**over), 1 << 20)


def test_compute_costs_n_cycles():
    sim = _sim()
    sim.step(Compute(10), 0)
    assert sim.machine.now == 10


def test_load_hit_costs_one_plus_hit_latency():
    sim = _sim()
    sim.step(load(0x2000), 0)
    before = sim.machine.now
    sim.step(load(0x2004), 1)
    assert sim.machine.now - before == 1 + 4


def test_load_miss_costs_one_plus_memory_latency():
    sim = _sim()
    sim.step(load(0x2000), 0)  # warms the TLB entry for the page
    sim.step(Compute(500), 1)  # let the memory controller go idle
    before = sim.machine.now
    sim.step(load(0x2000 + 64), 2)
    assert sim.machine.now - before == 1 + 100
    assert sim.stats.l1_misses == 2


def test_store_miss_is_posted():
    sim = _sim()
    sim.step(load(0x2000), 0)
    sim.step(Compute(500), 1)
    before = sim.machine.now
    sim.step(store(0x2000 + 128), 2)
    assert sim.machine.now - before == 1 + 4


def test_third_outstanding_miss_waits_for_mshr():
    sim = _sim()
    sim.step(load(0x2000), 0)
    sim.step(Compute(500), 1)
    for k in range(1, 4):
        sim.step(store(0x2000 + 64 * k), k + 1)
    # two posted stores hold both MSHRs; the third must wait for one to free
    assert sim.machine.now > 500 + 100


@pytest.mark.parametrize("n", [1, 15, 16, 17, 1000, 4096])
def test_stream_l1_misses_closed_form(n):
    sim = _sim()
    stats = sim.run([load(0x1000 + 4 * i) for i in range(n)])
    assert stats.l1_misses == math.ceil(4 * n / 64)


@given(st.integers(1, 16), st.integers(2, 4), st.integers(0, 2**16))
def test_tlb_misses_equal_distinct_pages(pages, touches, seed):
    import random
    rng = random.Random(seed)
    order = [p for p in range(1, pages + 1) for _ in range(touches)]
    rng.shuffle(order)
    stats = _sim().run([load(p * 4096 + 8) for p in order])
    assert stats.tlb_misses == pages


def test_half_bandwidth_never_faster():
    events = [load(0x1000 + 4096 * (i % 200) + 64 * (i % 7)) for i in range(3000)]
    base = _sim().run(events).cycles
    slow = _sim(mem_issue_interval_cycles=8).run(events).cycles
    fast = _sim(mem_issue_interval_cycles=2).run(events).cycles
    assert fast <= base <= slow


def test_stats_counters_monotone_during_run():
    sim = _sim()
    prev = Stats().as_dict()
    for i in range(400):
        sim.step(load(0x1000 + 68 * i) if i % 3 else store(0x9000 + 4 * i), i)
        cur = sim.stats.as_dict()
        assert all(cur[k] >= prev[k] for k in cur)
        prev = cur


def test_unmapped_access_faults_with_position():
    sim = _sim()
    with pytest.raises(SimulationFault) as exc:
        sim.run([load(0x1000), load(1 << 40)])
    assert exc.value.position == 1
