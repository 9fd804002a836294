"""Trace-driven simulator tying the machine, metadata plane and clients together."""

from __future__ import annotations

import random

from .clients import AccessInfo, ReturnAddressProtector, make_client
from .config import SimConfig
from .isa import PendingBinding, exec_map
from .machine import Machine, SimulationFault, Stats
from .metadata import CapacityError, MetadataPlane, ReservedTagError
from .osmodel import TrapRecord, allocate_mmt, build_context, context_switch, remap_page
from .trace import Call, Compute, Label, MemAccess, MemoryImage, Meta, Return, Trace

_RETIRE_EVERY = 256


class TrapStop(Exception):
    """Raised internally to end a run in terminate mode."""


class Simulator:
    """One process on one core.

    Each non-memory instruction costs one cycle.  A memory access issues the
    cycle after the previous instruction commits, translates, then probes
    the L1; metadata lookups triggered by the access run alongside the L1
    access and force-stall lookups hold the commit until they resolve.
    """

    def __init__(self, cfg: SimConfig, address_space=1 << 24, image=None):
        self.cfg = cfg
        self.stats = Stats()
        mcfg, dcfg = cfg.machine, cfg.metadata
        self.mmt = allocate_mmt(dcfg.physical_memory_bytes, dcfg.granularity, mcfg.page_bytes)
        self.ctx = build_context(address_space, self.mmt, mcfg.page_bytes, cfg.frame_scatter_seed)
        self.machine = Machine(mcfg, self.ctx, self.ctx.pte_addr, self.stats,
                               cfg.prefetch_buffer_lines)
        self.clients = [make_client(spec, cfg) for spec in cfg.clients]
        mmc_users = [c for c in self.clients if c.uses_mmc]
        self.plane = MetadataPlane(dcfg, self.machine, self.mmt, random.Random(cfg.seed),
                                   partitions=max(1, len(mmc_users)))
        for c in self.clients:
            part = mmc_users.index(c) if c in mmc_users else None
            self.plane.register(c.client_id, part)
            if dcfg.priority_client == c.name:
                self.plane.sticky_clients.add(c.client_id)
        self._access_clients = [c for c in self.clients if c.wants_access]
        self._tlb_clients = [c for c in self.clients if c.wants_tlb_miss]
        self._rap = [c for c in self.clients if isinstance(c, ReturnAddressProtector)]
        self.pending = PendingBinding()
        self.image = image if image is not None else MemoryImage()
        self.traps = []
        self.prefetch_log = []
        self._label_at = None
        self._position = 0
        self._accesses = 0

    @classmethod
    def for_trace(cls, cfg, trace: Trace):
        return cls(cfg, trace.header.address_space, trace.image)

    # -- services used by clients and the OS model --------------------------

    def execute_map(self, op):
        """Apply a map immediately (used by hardware-initiated tagging)."""
        return exec_map(op, self.plane, self.machine)

    def raise_trap(self, kind, vaddr, position):
        expected = self._label_at == position
        rec = TrapRecord(kind, vaddr, position, expected)
        self.traps.append(rec)
        self.stats.traps += 1
        if self.cfg.trap_mode == "terminate":
            raise TrapStop(rec)

    def lookup(self, client_id, vaddr, mode, now=None):
        return self.plane.lookup(client_id, vaddr, mode, now=now)

    def context_switch(self):
        return context_switch(self)

    def remap(self, vpn, new_ppn):
        return remap_page(self, vpn, new_ppn)

    # -- execution ----------------------------------------------------------

    def _commit_pending(self):
        try:
            self.pending.flush(self.plane, self.machine)
        except (ReservedTagError, CapacityError, ValueError) as exc:
            raise SimulationFault(str(exc), self._position) from None
        except KeyError as exc:
            raise SimulationFault(exc.args[0], self._position) from None

    def _access(self, vaddr, is_write, pos):
        if self.pending:
            self._commit_pending()
        m = self.machine
        self.stats.instructions += 1
        t = m.now + 1
        try:
            paddr, tlb_hit, t_tr = m.translate_at(vaddr, t)
        except SimulationFault as exc:
            raise SimulationFault(str(exc), pos) from None
        commit = t_tr
        if not tlb_hit and self._tlb_clients:
            vpn = vaddr // m.cfg.page_bytes
            for c in self._tlb_clients:
                d = c.on_tlb_miss(self, vpn, t)
                if d is not None and d > commit:
                    commit = d
        l1_hit, done = m.data_access(paddr, is_write, t_tr)
        if done > commit:
            commit = done
        if self._access_clients:
            info = AccessInfo(pos, vaddr, paddr, is_write, l1_hit, t_tr)
            for c in self._access_clients:
                d = c.on_access(self, info)
                if d is not None and d > commit:
                    commit = d
        m.now = commit
        self._accesses += 1
        if self._accesses % _RETIRE_EVERY == 0:
            m.retire()

    def step(self, ev, pos):
        self._position = pos
        t = type(ev)
        m = self.machine
        if t is MemAccess:
            self._access(ev.vaddr, ev.kind == "store", pos)
        elif t is Compute:
            m.now += ev.n
            self.stats.instructions += ev.n
        elif t is Meta:
            self.pending.push(ev.op)
            m.now += 1
            self.stats.instructions += 1
        elif t is Call:
            m.now += 1
            self.stats.instructions += 1
            self._access(ev.ret_slot, True, pos)
            for c in self._rap:
                m.now += c.on_call(self, ev.ret_slot, pos)
                self.stats.instructions += 1
        elif t is Return:
            self._access(ev.ret_slot, False, pos)
            for c in self._rap:
                m.now += c.on_return(self, ev.ret_slot, pos)
                self.stats.instructions += 1
            m.now += 1
            self.stats.instructions += 1
        elif t is Label:
            self._label_at = pos + 1
        else:
            raise SimulationFault(f"unknown event {ev!r}", pos)

    def run(self, events):
        """Run events (a Trace or iterable); returns the Stats."""
        if isinstance(events, Trace):
            events = events.events
        try:
            for pos, ev in enumerate(events):
                self.step(ev, pos)
            if self.pending:
                self._commit_pending()
        except TrapStop:
            pass
        self.stats.cycles = self.machine.now
        return self.stats


def run_processes(cfg: SimConfig, traces):
    """Run traces back to back on one core with a context switch between them.

    Returns the Simulator.  Tags written by one process stay in the MMT
    (they describe physical memory) but its PMT contents do not survive the
    switch.
    """
    traces = list(traces)
    space = max(t.header.address_space for t in traces)
    sim = Simulator(cfg, space, traces[0].image)
    for i, trace in enumerate(traces):
        if i:
            sim.context_switch()
            sim.image = trace.image
        try:
            for pos, ev in enumerate(trace.events):
                sim.step(ev, pos)
            if sim.pending:
                sim._commit_pending()
        except TrapStop:
            break
    sim.stats.cycles = sim.machine.now
    return sim


def run_one(cfg: SimConfig, trace: Trace):
    """Simulate ``trace`` under ``cfg``.  Returns (stats, traps)."""
    sim = Simulator.for_trace(cfg, trace)
    stats = sim.run(trace)
    return stats, sim.traps


def simulate(cfg, trace):
    """Like :func:`run_one` but returns the Simulator for inspection."""
    sim = Simulator.for_trace(cfg, trace)
    sim.run(trace)
    return sim
