"""Tagged-memory metadata plane.

Physical memory is split into fixed-size regions, each carrying an 8-bit
tag in the Metadata Mapping Table (MMT).  The Metadata Mapping Cache (MMC)
holds recently used region -> tag mappings; each optimization client keeps a
256-slot Private Metadata Table (PMT) indexed by tag.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass

import numpy as np

UNTAGGED = 0
MAX_TAG = 255
PMT_SLOTS = 256


class ReservedTagError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class LookupMode(enum.Enum):
    FORCE_STALL = "force_stall"
    NO_STALL = "no_stall"
    BEST_EFFORT = "best_effort"


class MmcMode(enum.Enum):
    SHARED = "shared"
    PARTITIONED = "partitioned"
    PRIORITIZED = "prioritized"


class TranslationMode(enum.Enum):
    VIRTUAL = "virtual"
    PHYSICAL = "physical"


def check_tag(tag):
    if not 0 <= tag <= MAX_TAG:
        raise ValueError(f"tag {tag} does not fit in 8 bits")
    return tag


def mmt_index(paddr, granularity):
    return paddr // granularity


class Mmt:
    """Flat table of one-byte tags, one per ``granularity``-byte region."""

    entry_bytes = 1

    def __init__(self, physical_memory_bytes, granularity=512, base_paddr=0):
        if granularity <= 0 or granularity & (granularity - 1):
            raise ValueError("granularity must be a power of two")
        if granularity > physical_memory_bytes:
            raise ValueError("granularity larger than physical memory")
        self.physical_memory_bytes = physical_memory_bytes
        self.granularity = granularity
        self.base_paddr = base_paddr
        self.entries = np.zeros(physical_memory_bytes // granularity, dtype=np.uint8)

    @property
    def size_bytes(self):
        return len(self.entries) * self.entry_bytes

    @property
    def footprint_fraction(self):
        return self.size_bytes / self.physical_memory_bytes

    def region(self, paddr):
        return paddr // self.granularity

    def entry_paddr(self, region):
        return self.base_paddr + region * self.entry_bytes

    def tag_at(self, paddr):
        return int(self.entries[paddr // self.granularity])

    def regions_for(self, pstart, length):
        """Half-open region index range overlapping [pstart, pstart+length)."""
        if length <= 0:
            return range(0)
        g = self.granularity
        return range(pstart // g, (pstart + length - 1) // g + 1)

    def set_range(self, pstart, length, tag):
        check_tag(tag)
        rr = self.regions_for(pstart, length)
        if rr and (rr.start < 0 or rr.stop > len(self.entries)):
            raise ValueError("range outside physical memory")
        self.entries[rr.start:rr.stop] = tag
        return len(rr)


def mmt_set_range(mmt: Mmt, pstart, length, tag):
    return mmt.set_range(pstart, length, tag)


class Mmc:
    """Fully associative cache of region -> tag mappings with NMRU replacement.

    In PARTITIONED mode the slots are split evenly between the registered
    partitions and a client's fills only ever replace slots in its own
    partition.  In PRIORITIZED mode fills marked sticky are evicted last.
    A hit is served from any partition.
    """

    def __init__(self, entries=128, mode=MmcMode.SHARED, partitions=1, rng=None):
        if entries < 1:
            raise ValueError("MMC needs at least one entry")
        self.capacity = entries
        self.mode = MmcMode(mode)
        nparts = partitions if self.mode is MmcMode.PARTITIONED else 1
        if nparts < 1 or nparts > entries:
            raise ValueError("bad partition count")
        rng = rng or random.Random(0)
        # one victim stream per partition so partitions cannot perturb each other
        self._rngs = [rng] if nparts == 1 else [random.Random(rng.getrandbits(64)) for _ in range(nparts)]
        self.region = [None] * entries
        self.tag = [0] * entries
        self.owner = [0] * entries
        self.sticky = [False] * entries
        self._where = {}
        bounds = [entries * p // nparts for p in range(nparts + 1)]
        self._parts = [(bounds[p], bounds[p + 1]) for p in range(nparts)]
        self._free = [list(range(hi - 1, lo - 1, -1)) for lo, hi in self._parts]
        self._mru = [None] * nparts
        self._part_of_client = {}

    def __len__(self):
        return len(self._where)

    def __contains__(self, region):
        return region in self._where

    @property
    def partitions(self):
        return len(self._parts)

    def assign_partition(self, client, index):
        self._part_of_client[client] = index % len(self._parts)

    def _part(self, client):
        if len(self._parts) == 1:
            return 0
        return self._part_of_client.get(client, client % len(self._parts))

    def _slot_part(self, slot):
        for p, (lo, hi) in enumerate(self._parts):
            if lo <= slot < hi:
                return p
        raise IndexError(slot)

    def get(self, region):
        """Tag for a cached region (marking it MRU), or None on a miss."""
        slot = self._where.get(region)
        if slot is None:
            return None
        self._mru[self._slot_part(slot) if len(self._parts) > 1 else 0] = slot
        return self.tag[slot]

    def peek(self, region):
        slot = self._where.get(region)
        return None if slot is None else self.tag[slot]

    def mru_region(self, part=0):
        slot = self._mru[part]
        return None if slot is None else self.region[slot]

    def _pick_victim(self, part):
        lo, hi = self._parts[part]
        n = hi - lo
        mru = self._mru[part]
        rng = self._rngs[part]
        if n == 1:
            return lo
        sticky = self.sticky
        for _ in range(64):
            r = lo + rng.randrange(n - 1)
            if mru is not None and r >= mru:
                r += 1
            if not sticky[r]:
                return r
        candidates = [s for s in range(lo, hi) if s != mru and not sticky[s]]
        if not candidates:
            candidates = [s for s in range(lo, hi) if s != mru]
        return candidates[rng.randrange(len(candidates))]

    def fill(self, region, tag, client=0, sticky=False):
        """Insert a mapping; returns the evicted region or None."""
        if region in self._where:
            slot = self._where[region]
            self.tag[slot] = tag
            self._mru[self._slot_part(slot) if len(self._parts) > 1 else 0] = slot
            return None
        part = self._part(client)
        victim = None
        if self._free[part]:
            slot = self._free[part].pop()
        else:
            slot = self._pick_victim(part)
            victim = self.region[slot]
            del self._where[victim]
        self.region[slot] = region
        self.tag[slot] = tag
        self.owner[slot] = client
        self.sticky[slot] = bool(sticky) and self.mode is MmcMode.PRIORITIZED
        self._where[region] = slot
        self._mru[part] = slot
        return victim

    def access(self, region, fill_tag_on_miss, client=0, sticky=False):
        """Returns (hit, victim_region)."""
        if self.get(region) is not None:
            return True, None
        return False, self.fill(region, fill_tag_on_miss, client, sticky)

    def invalidate(self, region):
        slot = self._where.pop(region, None)
        if slot is None:
            return False
        self.region[slot] = None
        self.sticky[slot] = False
        part = self._slot_part(slot) if len(self._parts) > 1 else 0
        if self._mru[part] == slot:
            self._mru[part] = None
        self._free[part].append(slot)
        return True

    def invalidate_range(self, regions: range):
        """Invalidate every cached region in ``regions``; returns the count."""
        if len(regions) <= len(self._where):
            hits = [r for r in regions if r in self._where]
        else:
            hits = [r for r in self._where if r in regions]
        for r in hits:
            self.invalidate(r)
        return len(hits)

    def update_range(self, regions: range, tag):
        """Rewrite the tag of every cached region in ``regions`` in place."""
        if len(regions) <= len(self._where):
            hits = [r for r in regions if r in self._where]
        else:
            hits = [r for r in self._where if r in regions]
        for r in hits:
            self.tag[self._where[r]] = tag
        return len(hits)

    def flush(self):
        for r in list(self._where):
            self.invalidate(r)

    def resident(self, client=None):
        """Regions currently cached, optionally only those in a client's partition."""
        if client is None:
            return set(self._where)
        lo, hi = self._parts[self._part(client)]
        return {r for r, s in self._where.items() if lo <= s < hi}


def mmc_access(mmc: Mmc, region, fill_tag_on_miss, client=0, sticky=False):
    return mmc.access(region, fill_tag_on_miss, client, sticky)


def mmc_invalidate(mmc: Mmc, region):
    return mmc.invalidate(region)


class Pmt:
    """Private metadata table: 256 opaque byte slots indexed by tag."""

    def __init__(self, owner, entry_bytes=64):
        self.owner = owner
        self.entry_bytes = entry_bytes
        self._slots = {}

    def write(self, tag, metadata: bytes):
        check_tag(tag)
        if tag == UNTAGGED:
            raise ReservedTagError("tag 0 is reserved for untagged memory")
        metadata = bytes(metadata)
        if len(metadata) > self.entry_bytes:
            raise CapacityError(
                f"{len(metadata)} bytes of metadata exceed the {self.entry_bytes}-byte PMT entry")
        self._slots[tag] = metadata.ljust(self.entry_bytes, b"\0")

    def read(self, tag):
        check_tag(tag)
        if tag == UNTAGGED:
            raise ReservedTagError("tag 0 is reserved for untagged memory")
        return self._slots.get(tag, bytes(self.entry_bytes))

    def written(self, tag):
        return tag in self._slots

    def flush(self):
        self._slots.clear()

    def __len__(self):
        return PMT_SLOTS


def pmt_write(pmt: Pmt, tag, metadata):
    pmt.write(tag, metadata)


def pmt_read(pmt: Pmt, tag):
    return pmt.read(tag)


@dataclass
class LookupResult:
    tag: int | None
    metadata: bytes | None
    mmc_hit: bool
    dropped: bool
    stall_cycles: int
    background_cycles: int
    done: int

    @property
    def valid(self):
        return not self.dropped


@dataclass
class MetadataConfig:
    mmc_entries: int = 128
    granularity: int = 512
    mmc_mode: str = "shared"
    translation_mode: str = "virtual"
    mmc_hit_cycles: int = 1
    pmt_entry_bytes: int = 64
    physical_memory_bytes: int = 1 << 30
    mmt_line_entries: int = 64
    priority_client: str | None = None

    def __post_init__(self):
        MmcMode(self.mmc_mode)
        TranslationMode(self.translation_mode)
        g = self.granularity
        if g <= 0 or g & (g - 1):
            raise ValueError("granularity must be a power of two")
        if not 1 <= self.pmt_entry_bytes <= 512:
            raise ValueError("pmt_entry_bytes must be in 1..512")
        if self.mmc_entries < 1 or self.mmc_hit_cycles < 0:
            raise ValueError("bad MMC parameters")


class MetadataPlane:
    """MMT + MMC + PMTs plus the timed lookup pipeline.

    The plane borrows a :class:`~metasim.machine.Machine` for translation and
    memory traffic.  ``mmt_vaddr`` maps an MMT entry's physical address to
    the virtual address used when the table is reached through the TLB.
    """

    def __init__(self, cfg: MetadataConfig, machine, mmt: Mmt, rng=None,
                 partitions=1, mmt_vaddr=None):
        self.cfg = cfg
        self.machine = machine
        self.stats = machine.stats
        self.mmt = mmt
        self.mmc = Mmc(cfg.mmc_entries, MmcMode(cfg.mmc_mode), partitions, rng=rng)
        self.translation = TranslationMode(cfg.translation_mode)
        self.mmt_vaddr = mmt_vaddr or (lambda paddr: paddr)
        self.pmts = {}
        self.armed = {}
        self.sticky_clients = set()
        # (start, end) of the last MMT refill, for best-effort dropping
        self._refill = (0, 0)

    @property
    def granularity(self):
        return self.mmt.granularity

    def register(self, client_id, partition=None):
        if client_id in self.pmts:
            raise ValueError(f"client id {client_id} registered twice")
        self.pmts[client_id] = Pmt(client_id, self.cfg.pmt_entry_bytes)
        if partition is not None:
            self.mmc.assign_partition(client_id, partition)

    def pmt(self, client_id):
        try:
            return self.pmts[client_id]
        except KeyError:
            raise KeyError(f"unknown client id {client_id}") from None

    def refill_outstanding(self, t):
        s, e = self._refill
        return s <= t < e

    def lookup(self, client_id, vaddr, mode=LookupMode.FORCE_STALL, now=None,
               paddr=None) -> LookupResult:
        """Resolve the tag and PMT metadata for ``vaddr``.

        Pass ``paddr`` when the trigger already translated the address (L1
        triggered lookups share the access's translation).
        """
        m = self.machine
        st = self.stats
        t0 = m.now if now is None else now
        st.lookups_issued += 1
        t = t0
        if paddr is None:
            paddr, _, t = m.translate_at(vaddr, t)
        region = paddr // self.mmt.granularity
        t += self.cfg.mmc_hit_cycles
        tag = self.mmc.get(region)
        hit = tag is not None
        if hit:
            st.mmc_hits += 1
        else:
            if mode is LookupMode.BEST_EFFORT and self.refill_outstanding(t0):
                st.lookups_dropped += 1
                return LookupResult(None, None, False, True, 0, 0, t0)
            st.mmc_misses += 1
            entry = self.mmt.entry_paddr(region)
            if self.translation is TranslationMode.VIRTUAL:
                _, _, t = m.translate_at(self.mmt_vaddr(entry), t)
            start = t
            st.mmt_mem_accesses += 1
            t = m.mem(t)
            self._refill = (start, t)
            tag = int(self.mmt.entries[region])
            self.mmc.fill(region, tag, client_id, client_id in self.sticky_clients)
        meta = None
        pmt = self.pmts.get(client_id)
        if tag != UNTAGGED and pmt is not None:
            meta = pmt.read(tag)
        latency = t - t0
        if mode is LookupMode.FORCE_STALL:
            return LookupResult(tag, meta, hit, False, latency, 0, t)
        return LookupResult(tag, meta, hit, False, 0, latency, t)

    def functional_tag(self, paddr):
        """Tag straight from the MMT with no timing or cache side effects."""
        return self.mmt.tag_at(paddr)

    def write_tags(self, pstart, length, tag, t):
        """Tag a physical range, keep the MMC coherent and charge MMT writes.

        Cached copies of the written regions are updated in place (the MMC
        is private to the core issuing the MAP), so they never go stale.
        Returns the number of regions written.
        """
        mmt = self.mmt
        rr = mmt.regions_for(pstart, length)
        n = mmt.set_range(pstart, length, tag)
        if n:
            self.mmc.update_range(rr, tag)
            per = self.cfg.mmt_line_entries
            first = mmt.entry_paddr(rr.start) // per
            last = mmt.entry_paddr(rr.stop - 1) // per
            for _ in range(last - first + 1):
                self.machine.posted_write(t)
        return n

    def flush_pmts(self):
        for p in self.pmts.values():
            p.flush()
        self.armed.clear()
