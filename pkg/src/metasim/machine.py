"""In-order machine timing model: L1 data cache, data TLB, MSHRs and a
latency/bandwidth memory controller.

All times are absolute core cycles.  Structures are functional (they track
contents) and the memory controller / MSHR file additionally track when
requests are in flight, so background work (prefetches, no-stall metadata
refills) competes with demand traffic for bandwidth.
"""

from __future__ import annotations

import bisect
import dataclasses
import random
from collections import OrderedDict
from dataclasses import dataclass, field


class SimulationFault(Exception):
    """Malformed trace or impossible machine state (e.g. unmapped page)."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (event {position})"
        super().__init__(message)
        self.position = position


@dataclass
class MachineConfig:
    l1_size_bytes: int = 16 * 1024
    l1_ways: int = 4
    l1_line_bytes: int = 64
    l1_hit_cycles: int = 4
    mshr_entries: int = 2
    tlb_entries: int = 16
    page_bytes: int = 4096
    mem_latency_cycles: int = 100
    mem_issue_interval_cycles: int = 4
    tlb_walk_mem_accesses: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.l1_size_bytes % (self.l1_ways * self.l1_line_bytes):
            raise ValueError("l1_size_bytes must be divisible by l1_ways * l1_line_bytes")
        for name in ("l1_line_bytes", "page_bytes"):
            v = getattr(self, name)
            if v & (v - 1):
                raise ValueError(f"{name} must be a power of two")

    @property
    def l1_sets(self):
        return self.l1_size_bytes // (self.l1_ways * self.l1_line_bytes)


@dataclass
class Stats:
    cycles: int = 0
    instructions: int = 0
    l1_hits: int = 0
    l1_misses: int = 0
    tlb_hits: int = 0
    tlb_misses: int = 0
    mem_accesses: int = 0
    mmc_hits: int = 0
    mmc_misses: int = 0
    mmt_mem_accesses: int = 0
    lookups_issued: int = 0
    lookups_dropped: int = 0
    prefetches_issued: int = 0
    prefetches_useful: int = 0
    traps: int = 0
    map_ops: int = 0
    create_ops: int = 0

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    def as_dict(self):
        return dataclasses.asdict(self)

    @property
    def mmc_hit_rate(self):
        looked = self.mmc_hits + self.mmc_misses
        return self.mmc_hits / looked if looked else 0.0


class SetAssocCache:
    """Set-associative cache of line numbers with LRU or NMRU replacement.

    Each set is a list of resident line numbers ordered from least to most
    recently used, so a line's index in the list is its recency rank.
    """

    def __init__(self, sets, ways, line_bytes, replacement="LRU", rng=None):
        if replacement not in ("LRU", "NMRU"):
            raise ValueError(f"unknown replacement policy {replacement!r}")
        self.sets = sets
        self.ways = ways
        self.line_bytes = line_bytes
        self.replacement = replacement
        self._rng = rng or random.Random(0)
        self._sets = [[] for _ in range(sets)]

    @classmethod
    def from_config(cls, cfg: MachineConfig):
        return cls(cfg.l1_sets, cfg.l1_ways, cfg.l1_line_bytes)

    def line_of(self, paddr):
        return paddr // self.line_bytes

    def contains(self, line):
        return line in self._sets[line % self.sets]

    def recency(self, set_index):
        """Map line -> recency rank (0 = LRU) for the lines resident in a set."""
        return {line: rank for rank, line in enumerate(self._sets[set_index])}

    def access(self, paddr, is_write=False):
        """Returns (hit, evicted_line).  Misses allocate (write-allocate)."""
        line = paddr // self.line_bytes
        return self.access_line(line)

    def access_line(self, line):
        s = self._sets[line % self.sets]
        if line in s:
            s.remove(line)
            s.append(line)
            return True, None
        victim = None
        if len(s) >= self.ways:
            if self.replacement == "LRU":
                victim = s.pop(0)
            else:
                victim = s.pop(self._rng.randrange(len(s) - 1))
        s.append(line)
        return False, victim

    def install(self, line):
        """Fill a line without counting it as an access."""
        return self.access_line(line)[1]

    def flush(self):
        for s in self._sets:
            s.clear()


class Tlb:
    """Fully associative LRU data TLB."""

    def __init__(self, entries):
        self.entries = entries
        self._map = OrderedDict()

    def lookup(self, vpn):
        ppn = self._map.get(vpn)
        if ppn is not None:
            self._map.move_to_end(vpn)
        return ppn

    def install(self, vpn, ppn):
        if vpn in self._map:
            self._map.move_to_end(vpn)
        elif len(self._map) >= self.entries:
            self._map.popitem(last=False)
        self._map[vpn] = ppn

    def invalidate(self, vpn):
        return self._map.pop(vpn, None) is not None

    def flush(self):
        self._map.clear()

    def resident(self):
        return list(self._map)

    def __len__(self):
        return len(self._map)


def translate(tlb: Tlb, page_map, vaddr, page_bytes=4096, walk_mem_accesses=1, install=True):
    """Translate ``vaddr`` through ``tlb``.

    ``page_map`` is a callable vpn -> ppn that raises SimulationFault for
    unmapped pages.  Returns (paddr, tlb_hit, extra_mem_accesses).
    """
    vpn, offset = divmod(vaddr, page_bytes)
    ppn = tlb.lookup(vpn)
    if ppn is not None:
        return ppn * page_bytes + offset, True, 0
    ppn = page_map(vpn)
    if install:
        tlb.install(vpn, ppn)
    return ppn * page_bytes + offset, False, walk_mem_accesses


class MemController:
    """Fixed-latency memory with one request issued per ``interval`` cycles.

    Requests may be reserved out of time order (background work is
    scheduled ahead of the core), so the controller keeps merged busy
    intervals of issue slots and each request takes the earliest free slot
    at or after its arrival.
    """

    def __init__(self, latency, interval):
        self.latency = latency
        self.interval = interval
        self._starts = []
        self._ends = []

    @property
    def next_free(self):
        return self._ends[-1] if self._ends else 0

    def request(self, now):
        """Reserve an issue slot; returns the completion cycle."""
        iv = self.interval
        starts, ends = self._starts, self._ends
        i = bisect.bisect_right(ends, now)
        s = now
        while i < len(starts) and starts[i] < s + iv:
            s = max(s, ends[i])
            i += 1
        # [s, s+iv) fits before interval i; merge with neighbours
        lo, hi = s, s + iv
        if i > 0 and ends[i - 1] == lo:
            i -= 1
            lo = starts[i]
            del starts[i], ends[i]
        if i < len(starts) and starts[i] == hi:
            hi = ends[i]
            del starts[i], ends[i]
        starts.insert(i, lo)
        ends.insert(i, hi)
        return s + self.latency

    def retire(self, before):
        """Forget busy time that ended before ``before``."""
        cut = bisect.bisect_right(self._ends, before)
        if cut:
            del self._starts[:cut], self._ends[:cut]


def mem_request(mc: MemController, now):
    return mc.request(now)


class MshrFile:
    """Outstanding-miss tracker: intervals [start, end) of occupied entries."""

    def __init__(self, entries):
        self.entries = entries
        self._busy = []

    def available_at(self, t):
        """Earliest cycle >= t with a free entry."""
        ends = sorted(e for s, e in self._busy if s <= t < e)
        if len(ends) < self.entries:
            return t
        return ends[len(ends) - self.entries]

    def occupy(self, start, end):
        self._busy.append((start, end))

    def occupancy(self, t):
        return sum(1 for s, e in self._busy if s <= t < e)

    def retire(self, before):
        self._busy = [iv for iv in self._busy if iv[1] > before]


@dataclass
class PrefetchBuffer:
    """FIFO buffer of prefetched lines: line -> (issue cycle, arrival cycle)."""

    capacity: int = 32
    lines: "OrderedDict[int, tuple]" = field(default_factory=OrderedDict)

    def __contains__(self, line):
        return line in self.lines

    def insert(self, line, ready, issued=0):
        if line in self.lines:
            return
        if len(self.lines) >= self.capacity:
            self.lines.popitem(last=False)
        self.lines[line] = (issued, ready)

    def ready(self, line):
        return self.lines[line][1]

    def take(self, line, t=None):
        """Remove a line; returns its arrival cycle, or None when absent or
        (given ``t``) when the prefetch had not been issued by cycle ``t``."""
        entry = self.lines.pop(line, None)
        if entry is None or (t is not None and entry[0] > t):
            return None
        return entry[1]

    def flush(self):
        self.lines.clear()


class Machine:
    """Timed view of the core's memory side.

    ``page_map`` resolves vpn -> ppn on TLB misses.  ``pte_addr`` gives the
    physical address a page walk reads for a vpn.
    """

    def __init__(self, cfg: MachineConfig, page_map, pte_addr=None, stats=None,
                 prefetch_buffer_lines=32):
        self.cfg = cfg
        self.page_map = page_map
        self.pte_addr = pte_addr or (lambda vpn: 0)
        self.stats = stats if stats is not None else Stats()
        self.l1 = SetAssocCache.from_config(cfg)
        self.tlb = Tlb(cfg.tlb_entries)
        self.mc = MemController(cfg.mem_latency_cycles, cfg.mem_issue_interval_cycles)
        self.mshr = MshrFile(cfg.mshr_entries)
        self.pbuf = PrefetchBuffer(prefetch_buffer_lines)
        # line -> cycle its (store or prefetch) fill arrives
        self._pending_fill = {}
        self.now = 0

    def mem(self, t):
        self.stats.mem_accesses += 1
        return self.mc.request(t)

    def translate_at(self, vaddr, t, install=True):
        """Timed translation.  Returns (paddr, tlb_hit, done).

        ``install=False`` walks without filling the TLB (used by prefetchers,
        whose walks finish ahead of the core's timeline).
        """
        cfg = self.cfg
        paddr, hit, walks = translate(self.tlb, self.page_map, vaddr,
                                      cfg.page_bytes, cfg.tlb_walk_mem_accesses, install)
        if hit:
            self.stats.tlb_hits += 1
            return paddr, True, t
        self.stats.tlb_misses += 1
        for _ in range(walks):
            t = self.mem(t)
        return paddr, False, t

    def data_access(self, paddr, is_write, t):
        """L1 access issued at ``t``.  Returns (l1_hit, done).

        Loads block until data returns.  Store misses are posted: they hold
        an MSHR but the core moves on after the hit latency.
        """
        cfg = self.cfg
        line = paddr // cfg.l1_line_bytes
        hit, _ = self.l1.access_line(line)
        if hit:
            self.stats.l1_hits += 1
            done = t + cfg.l1_hit_cycles
            ready = self._pending_fill.get(line)
            if ready is not None:
                if ready <= t:
                    del self._pending_fill[line]
                elif not is_write:
                    done = max(done, ready)
            return True, done
        self.stats.l1_misses += 1
        # a prefetch scheduled after this access cannot serve it
        ready = self.pbuf.take(line, t)
        if ready is not None:
            self.stats.prefetches_useful += 1
            return False, max(t + cfg.l1_hit_cycles, ready)
        start = self.mshr.available_at(t)
        completion = self.mem(start)
        self.mshr.occupy(start, completion)
        if is_write:
            self._pending_fill[line] = completion
            return False, start + cfg.l1_hit_cycles
        return False, completion

    def prefetch(self, paddr, t, wait_for_mshr=False):
        """Issue a prefetch at ``t`` into the prefetch buffer.

        Returns the cycle the line's data is available, or None if the
        prefetch was dropped (no free MSHR and ``wait_for_mshr`` unset).
        Lines already present are not re-requested.
        """
        line = paddr // self.cfg.l1_line_bytes
        if self.l1.contains(line):
            return max(t, self._pending_fill.get(line, t))
        if line in self.pbuf:
            return max(t, self.pbuf.ready(line))
        free = self.mshr.available_at(t)
        if free > t:
            if not wait_for_mshr:
                return None
            t = free
        completion = self.mem(t)
        self.mshr.occupy(t, completion)
        self.pbuf.insert(line, completion, t)
        self.stats.prefetches_issued += 1
        return completion

    def posted_write(self, t):
        """Uncached write traffic (MMT updates) that never stalls the core."""
        return self.mem(t)

    def retire(self):
        t = self.now
        self.mc.retire(t)
        if len(self.mshr._busy) > 64:
            self.mshr.retire(t)
        if len(self._pending_fill) > 256:
            self._pending_fill = {k: v for k, v in self._pending_fill.items() if v > t}
