"""OS duties around the metadata plane: MMT allocation, context switches,
page remapping and trap delivery."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .machine import SimulationFault
from .metadata import Mmt

PTE_BYTES = 8


def allocate_mmt(physical_memory, granularity, page_bytes=4096):
    """Allocate the MMT at the top of physical memory (page aligned)."""
    if granularity > physical_memory:
        raise ValueError("granularity larger than physical memory")
    if granularity <= 0 or granularity & (granularity - 1):
        raise ValueError("granularity must be a power of two")
    size = physical_memory // granularity
    base = (physical_memory - size) // page_bytes * page_bytes
    return Mmt(physical_memory, granularity, base_paddr=base)


@dataclass
class ProcessContext:
    """A process's virtual -> physical page map.

    Data pages ``[0, data_pages)`` map to frames from ``frames`` (identity
    when None).  Pages at or above ``reserved_start`` (page table and MMT)
    are identity mapped so hardware tables have stable virtual addresses.
    ``overrides`` records remaps.
    """

    data_pages: int
    reserved_start: int
    total_pages: int
    frames: np.ndarray | None = None
    overrides: dict = field(default_factory=dict)
    mmt_base: int = 0
    pt_base: int = 0
    live: bool = True

    def __call__(self, vpn):
        ppn = self.overrides.get(vpn)
        if ppn is not None:
            return ppn
        if 0 <= vpn < self.data_pages:
            return int(self.frames[vpn]) if self.frames is not None else vpn
        if self.reserved_start <= vpn < self.total_pages:
            return vpn
        raise SimulationFault(f"unmapped virtual page {vpn:#x}")

    def is_mapped(self, vpn):
        try:
            self(vpn)
        except SimulationFault:
            return False
        return True

    def pte_addr(self, vpn):
        return self.pt_base + vpn * PTE_BYTES


def build_context(address_space, mmt: Mmt, page_bytes=4096, scatter_seed=None):
    """Lay out physical memory: data frames, then the flat page table, then the MMT."""
    phys = mmt.physical_memory_bytes
    data_pages = -(-address_space // page_bytes)
    pt_bytes = data_pages * PTE_BYTES
    pt_base = (mmt.base_paddr - pt_bytes) // page_bytes * page_bytes
    if data_pages * page_bytes > pt_base:
        raise ValueError("address space does not fit below the page table and MMT")
    frames = None
    if scatter_seed is not None:
        rng = np.random.default_rng(scatter_seed)
        frames = rng.permutation(pt_base // page_bytes)[:data_pages]
    return ProcessContext(
        data_pages=data_pages,
        reserved_start=pt_base // page_bytes,
        total_pages=phys // page_bytes,
        frames=frames,
        mmt_base=mmt.base_paddr,
        pt_base=pt_base,
    )


class TrapKind(enum.Enum):
    BOUNDS_VIOLATION = "BoundsViolation"
    RETURN_ADDRESS_OVERWRITE = "ReturnAddressOverwrite"


@dataclass(frozen=True)
class TrapRecord:
    kind: TrapKind
    vaddr: int
    position: int
    expected: bool = False

    def line(self):
        return f"{self.kind.value},{self.vaddr},{self.position},{int(self.expected)}"


def context_switch(sim):
    """Flush PMTs, TLB (and the MMC unless configured otherwise); charge the switch cost."""
    sim.plane.flush_pmts()
    sim.machine.tlb.flush()
    if sim.cfg.flush_mmc_on_switch:
        sim.plane.mmc.flush()
    cost = sim.cfg.context_switch_cycles
    sim.machine.now += cost
    return cost


def remap_page(sim, vpn, new_ppn):
    """Move a virtual page to a new frame, migrating its MMT tags.

    Returns the number of tagged regions migrated.
    """
    ctx = sim.ctx
    if not ctx.is_mapped(vpn):
        raise SimulationFault(f"remap of unmapped virtual page {vpn:#x}")
    page = sim.machine.cfg.page_bytes
    mmt = sim.plane.mmt
    g = mmt.granularity
    if g > page:
        raise ValueError("remap needs granularity <= page size")
    old = ctx(vpn)
    old_rr = mmt.regions_for(old * page, page)
    new_rr = mmt.regions_for(new_ppn * page, page)
    tags = mmt.entries[old_rr.start:old_rr.stop].copy()
    mmt.entries[old_rr.start:old_rr.stop] = 0
    mmt.entries[new_rr.start:new_rr.stop] = tags
    sim.plane.mmc.invalidate_range(old_rr)
    sim.plane.mmc.invalidate_range(new_rr)
    ctx.overrides[vpn] = new_ppn
    tlb = sim.machine.tlb
    if tlb.lookup(vpn) is not None:
        tlb.install(vpn, new_ppn)
    return int(np.count_nonzero(tags))
