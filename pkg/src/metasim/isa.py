"""CREATE / MAP / UNMAP operators and their binding to the next load/store."""

from __future__ import annotations

from dataclasses import dataclass

from .metadata import UNTAGGED, ReservedTagError, check_tag


@dataclass(frozen=True)
class Create:
    client: int
    tag: int
    metadata: bytes = b""


@dataclass(frozen=True)
class Map:
    tag: int
    vstart: int
    size: int


@dataclass(frozen=True)
class Map2D:
    tag: int
    vstart: int
    len_x: int
    size_x: int
    size_y: int


@dataclass(frozen=True)
class Map3D:
    tag: int
    vstart: int
    len_x: int
    len_y: int
    size_x: int
    size_y: int
    size_z: int


def Unmap(vstart, size):
    return Map(UNTAGGED, vstart, size)


def Unmap2D(vstart, len_x, size_x, size_y):
    return Map2D(UNTAGGED, vstart, len_x, size_x, size_y)


def Unmap3D(vstart, len_x, len_y, size_x, size_y, size_z):
    return Map3D(UNTAGGED, vstart, len_x, len_y, size_x, size_y, size_z)


MAP_OPS = (Map, Map2D, Map3D)


def strips(op):
    """Decompose a (multi-dimensional) map into 1D (vstart, length) strips.

    2D: ``len_x`` useful bytes in each of ``size_y`` rows of pitch ``size_x``.
    3D: ``size_z`` planes of pitch ``size_y * size_x``; in each plane the
    first ``len_y`` rows (pitch ``size_x``) contribute ``len_x`` bytes.
    """
    if isinstance(op, Map):
        return [(op.vstart, op.size)]
    if isinstance(op, Map2D):
        return [(op.vstart + r * op.size_x, op.len_x) for r in range(op.size_y)]
    if isinstance(op, Map3D):
        plane = op.size_y * op.size_x
        return [(op.vstart + q * plane + r * op.size_x, op.len_x)
                for q in range(op.size_z) for r in range(op.len_y)]
    raise TypeError(f"not a map operator: {op!r}")


def physical_chunks(vstart, length, page_map, page_bytes):
    """Split a virtual range into page-contiguous physical (pstart, len) pieces."""
    out = []
    v, end = vstart, vstart + length
    while v < end:
        vpn, off = divmod(v, page_bytes)
        n = min(end - v, page_bytes - off)
        p = page_map(vpn) * page_bytes + off
        if out and out[-1][0] + out[-1][1] == p:
            out[-1] = (out[-1][0], out[-1][1] + n)
        else:
            out.append((p, n))
        v += n
    return out


def exec_create(op: Create, plane):
    """Write the client's PMT slot and arm its tag register.  Costs 1 cycle."""
    check_tag(op.tag)
    if op.tag == UNTAGGED:
        raise ReservedTagError("CREATE with reserved tag 0")
    plane.pmt(op.client).write(op.tag, op.metadata)
    plane.armed[op.client] = op.tag
    plane.stats.create_ops += 1
    return 1


def exec_map(op, plane, machine, t=None):
    """Apply a 1D/2D/3D (UN)MAP.  Returns cycles charged to the core (1).

    MMT write traffic is posted to the memory controller and does not stall
    the core.
    """
    check_tag(op.tag)
    t = machine.now if t is None else t
    cfg = machine.cfg
    for vstart, length in strips(op):
        for pstart, n in physical_chunks(vstart, length, machine.page_map, cfg.page_bytes):
            plane.write_tags(pstart, n, op.tag, t)
    plane.stats.map_ops += 1
    return 1


exec_map_nd = exec_map


class PendingBinding:
    """Operators waiting for the next load/store to commit with."""

    def __init__(self):
        self.ops = []

    def push(self, op):
        self.ops.append(op)

    def __len__(self):
        return len(self.ops)

    def __bool__(self):
        return bool(self.ops)

    def flush(self, plane, machine):
        """Commit queued operators in program order."""
        ops, self.ops = self.ops, []
        for op in ops:
            if isinstance(op, Create):
                exec_create(op, plane)
            else:
                exec_map(op, plane, machine)
        return len(ops)
