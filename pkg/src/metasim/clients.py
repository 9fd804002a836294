"""Optimization clients driven by the simulator's trigger events.

Every client exposes some of:

* ``on_access(sim, info)`` for each L1 access (``info`` is an AccessInfo);
* ``on_tlb_miss(sim, vpn, t)`` for each data TLB miss;
* ``on_call(sim, ret_slot, pos)`` / ``on_return(sim, ret_slot, pos)``.

Access and TLB hooks return the cycle the core must wait for (force-stall
lookups) or None when the work happens in the background.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .isa import Map, exec_map
from .metadata import LookupMode
from .osmodel import TrapKind

RAP_TAG = 1
RETURN_SLOT_BYTES = 8


@dataclass(frozen=True, slots=True)
class AccessInfo:
    position: int
    vaddr: int
    paddr: int
    is_write: bool
    l1_hit: bool
    t: int  # cycle the access reaches the L1 (after translation)


class Client:
    name = "client"
    uses_mmc = True
    wants_access = True
    wants_tlb_miss = False

    def __init__(self, client_id, mode=LookupMode.FORCE_STALL):
        self.client_id = client_id
        self.mode = LookupMode(mode)

    def _lookup(self, sim, info):
        r = sim.plane.lookup(self.client_id, info.vaddr, self.mode, now=info.t, paddr=info.paddr)
        return r, (r.done if self.mode is LookupMode.FORCE_STALL else None)


class NullClient(Client):
    """Characterization client: looks up and discards the result."""

    def __init__(self, client_id, mode=LookupMode.FORCE_STALL, miss_only=False):
        super().__init__(client_id, mode)
        self.miss_only = miss_only
        self.name = "null_miss" if miss_only else "null_all"

    def on_access(self, sim, info):
        if self.miss_only and info.l1_hit:
            return None
        return self._lookup(sim, info)[1]


class TlbMissClient(Client):
    """Looks up metadata for the page-table entry read by every data TLB miss."""

    name = "tlb_miss"
    wants_access = False
    wants_tlb_miss = True

    def on_tlb_miss(self, sim, vpn, t):
        pte = sim.ctx.pte_addr(vpn)
        r = sim.plane.lookup(self.client_id, pte, self.mode, now=t, paddr=pte)
        return r.done if self.mode is LookupMode.FORCE_STALL else None


class BoundsChecker(Client):
    """Compares the tag armed by the last CREATE with the accessed address's tag."""

    name = "bounds"

    def __init__(self, client_id, mode=LookupMode.FORCE_STALL, check_loads=True,
                 check_stores=True):
        super().__init__(client_id, mode)
        self.check_loads = check_loads
        self.check_stores = check_stores

    def on_access(self, sim, info):
        if not (self.check_stores if info.is_write else self.check_loads):
            return None
        armed = sim.plane.armed.pop(self.client_id, None)
        if armed is None:
            return None
        r, wait = self._lookup(sim, info)
        if not r.dropped and r.tag != armed:
            sim.raise_trap(TrapKind.BOUNDS_VIOLATION, info.vaddr, info.position)
        return wait


class ReturnAddressProtector(Client):
    """Tags return-address slots with tag 1 and rejects stores to them."""

    name = "rap"

    def on_access(self, sim, info):
        if not info.is_write:
            return None
        r, wait = self._lookup(sim, info)
        if r.tag == RAP_TAG:
            sim.raise_trap(TrapKind.RETURN_ADDRESS_OVERWRITE, info.vaddr, info.position)
        return wait

    def on_call(self, sim, ret_slot, pos):
        return sim.execute_map(Map(RAP_TAG, ret_slot, RETURN_SLOT_BYTES))

    def on_return(self, sim, ret_slot, pos):
        return sim.execute_map(Map(0, ret_slot, RETURN_SLOT_BYTES))


_GP = struct.Struct("<QQQIIB")


@dataclass(frozen=True)
class GraphPrefetchMeta:
    own_base: int
    own_size: int
    next_struct_base: int | None
    elem_size: int = 4
    stride: int = 1
    next_elem_size: int | None = None

    def __post_init__(self):
        if self.elem_size not in (1, 2, 4, 8):
            raise ValueError("elem_size must be 1, 2, 4 or 8")
        if self.stride < 1 or self.stride > 63:
            raise ValueError("stride must fit in 6 bits and be >= 1")

    def pack(self):
        nes = self.next_elem_size or self.elem_size
        return _GP.pack(self.own_base, self.own_size, self.next_struct_base or 0,
                        self.elem_size, nes, self.stride)

    @classmethod
    def unpack(cls, raw):
        base, size, nxt, es, nes, stride = _GP.unpack_from(raw)
        if es == 0:
            return None
        return cls(base, size, nxt or None, es, stride, nes)

    def __contains__(self, addr):
        return self.own_base <= addr < self.own_base + self.own_size


class GraphPrefetcher(Client):
    """Data-structure-aware prefetcher for dependent graph traversals.

    On every core access into a tracked structure it prefetches the element
    ``stride`` positions ahead, reads that element's value once it arrives,
    and follows it into the next structure (value used as an index),
    prefetching one element per structure until a structure without a
    successor is reached.  ``ideal`` reads tags straight from the MMT with no
    MMC, latency or memory traffic (the dedicated-hardware comparison point).
    """

    name = "graph_prefetch"

    def __init__(self, client_id, mode=LookupMode.BEST_EFFORT, ideal=False):
        super().__init__(client_id, mode)
        self.ideal = ideal
        if ideal:
            self.name = "graph_pref_ideal"
            self.uses_mmc = False
        self._decoded = {}

    def _meta(self, raw):
        m = self._decoded.get(raw)
        if m is None:
            m = GraphPrefetchMeta.unpack(raw)
            self._decoded[raw] = m
        return m

    def _resolve(self, sim, vaddr, t, paddr=None):
        """(metadata or None, cycle the lookup resolves); None metadata ends the chain."""
        if self.ideal:
            if paddr is None:
                paddr = sim.ctx(vaddr // sim.machine.cfg.page_bytes) * sim.machine.cfg.page_bytes \
                    + vaddr % sim.machine.cfg.page_bytes
            tag = sim.plane.functional_tag(paddr)
            if not tag:
                return None, t
            pmt = sim.plane.pmts[self.client_id]
            return (self._meta(pmt.read(tag)) if pmt.written(tag) else None), t
        r = sim.plane.lookup(self.client_id, vaddr, self.mode, now=t, paddr=paddr)
        if r.dropped or not r.tag:
            return None, r.done
        return self._meta(r.metadata), r.done

    def on_access(self, sim, info):
        meta, t = self._resolve(sim, info.vaddr, info.t, info.paddr)
        addr = info.vaddr
        m = sim.machine
        target = addr + meta.stride * meta.elem_size if meta is not None else None
        paddr = None
        while meta is not None and addr in meta and target in meta:
            if paddr is None:
                paddr, _, t = m.translate_at(target, t, install=False)
            ready = m.prefetch(paddr, t, wait_for_mshr=True)
            sim.prefetch_log.append(target)
            if meta.next_struct_base is None:
                break
            value = sim.image.value_at(target)
            if value is None:
                break
            addr = target = meta.next_struct_base + value * (meta.next_elem_size or meta.elem_size)
            paddr, _, t = m.translate_at(addr, ready, install=False)
            meta, t = self._resolve(sim, addr, t, paddr)
        return None


class StridePrefetcher(Client):
    """Next-N-lines prefetcher triggered by demand L1 misses (no metadata)."""

    name = "stride_prefetch"
    uses_mmc = False

    def __init__(self, client_id, mode=LookupMode.BEST_EFFORT, degree=2):
        super().__init__(client_id, mode)
        self.degree = degree

    def on_access(self, sim, info):
        if info.l1_hit:
            return None
        m = sim.machine
        line_bytes = m.cfg.l1_line_bytes
        page = m.cfg.page_bytes
        for k in range(1, self.degree + 1):
            p = info.paddr + k * line_bytes
            if p // page != info.paddr // page:
                break
            m.prefetch(p, info.t)
        return None


def make_client(spec, cfg):
    mode = spec.lookup_mode
    cid = spec.client_id
    name = spec.name
    if name == "null_all":
        return NullClient(cid, mode)
    if name == "null_miss":
        return NullClient(cid, mode, miss_only=True)
    if name == "tlb_miss":
        return TlbMissClient(cid, mode)
    if name == "bounds":
        return BoundsChecker(cid, mode)
    if name == "rap":
        return ReturnAddressProtector(cid, mode)
    if name == "graph_prefetch":
        return GraphPrefetcher(cid, mode)
    if name == "graph_pref_ideal":
        return GraphPrefetcher(cid, mode, ideal=True)
    if name == "stride_prefetch":
        return StridePrefetcher(cid, mode, degree=cfg.stride_prefetch_degree)
    raise ValueError(f"unknown client {name!r}")
