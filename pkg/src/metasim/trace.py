"""Trace events and the line-oriented trace file format (see docs/trace-format.md)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .isa import Create, Map, Map2D, Map3D

FORMAT_VERSION = 1
MAGIC = f"#metasim-trace v{FORMAT_VERSION}"


class TraceFormatError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TraceIntegrityError(TraceFormatError):
    pass


@dataclass(frozen=True, slots=True)
class MemAccess:
    kind: str  # "load" | "store"
    vaddr: int
    size: int = 4

    @property
    def is_write(self):
        return self.kind == "store"


@dataclass(frozen=True, slots=True)
class Meta:
    op: object


@dataclass(frozen=True, slots=True)
class Call:
    ret_slot: int


@dataclass(frozen=True, slots=True)
class Return:
    ret_slot: int


@dataclass(frozen=True, slots=True)
class Compute:
    n: int


@dataclass(frozen=True, slots=True)
class Label:
    kind: str


def load(vaddr, size=4):
    return MemAccess("load", vaddr, size)


def store(vaddr, size=4):
    return MemAccess("store", vaddr, size)


@dataclass
class Segment:
    """Contiguous array of unsigned little integers in the memory image."""

    base: int
    elem_size: int
    values: list

    def __contains__(self, addr):
        return self.base <= addr < self.base + len(self.values) * self.elem_size


@dataclass
class MemoryImage:
    segments: list = field(default_factory=list)

    def add(self, base, elem_size, values):
        self.segments.append(Segment(base, elem_size, [int(v) for v in values]))

    def value_at(self, addr):
        for s in self.segments:
            if addr in s:
                off = addr - s.base
                if off % s.elem_size:
                    return None
                return s.values[off // s.elem_size]
        return None

    def __bool__(self):
        return bool(self.segments)


@dataclass
class TraceHeader:
    generator: str
    seed: int = 0
    params: dict = field(default_factory=dict)
    address_space: int = 1 << 24


@dataclass
class Trace:
    header: TraceHeader
    events: list = field(default_factory=list)
    image: MemoryImage = field(default_factory=MemoryImage)
    expected: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.events)

    def mem_positions(self):
        return [i for i, e in enumerate(self.events) if type(e) is MemAccess]


def _hex(b):
    return b.hex() if b else "-"


def event_line(ev):
    t = type(ev)
    if t is MemAccess:
        return f"{'LD' if ev.kind == 'load' else 'ST'} {ev.vaddr} {ev.size}"
    if t is Compute:
        return f"CPU {ev.n}"
    if t is Call:
        return f"CALL {ev.ret_slot}"
    if t is Return:
        return f"RET {ev.ret_slot}"
    if t is Label:
        return f"LABEL {ev.kind}"
    if t is Meta:
        op = ev.op
        if isinstance(op, Create):
            return f"CREATE {op.client} {op.tag} {_hex(op.metadata)}"
        if isinstance(op, Map):
            return f"MAP {op.tag} {op.vstart} {op.size}"
        if isinstance(op, Map2D):
            return f"MAP2D {op.tag} {op.vstart} {op.len_x} {op.size_x} {op.size_y}"
        if isinstance(op, Map3D):
            return (f"MAP3D {op.tag} {op.vstart} {op.len_x} {op.len_y} "
                    f"{op.size_x} {op.size_y} {op.size_z}")
    raise TypeError(f"cannot serialize {ev!r}")


_ARITY = {"LD": 2, "ST": 2, "CPU": 1, "CALL": 1, "RET": 1, "LABEL": 1,
          "CREATE": 3, "MAP": 3, "MAP2D": 5, "MAP3D": 7}


def parse_event(line, lineno=None):
    parts = line.split()
    if not parts:
        raise TraceFormatError("empty event line", lineno)
    code, args = parts[0], parts[1:]
    if code not in _ARITY:
        raise TraceFormatError(f"unknown event code {code!r}", lineno)
    if len(args) != _ARITY[code]:
        raise TraceFormatError(f"{code} takes {_ARITY[code]} fields, got {len(args)}", lineno)
    if code == "LABEL":
        return Label(args[0])
    try:
        if code == "CREATE":
            meta = b"" if args[2] == "-" else bytes.fromhex(args[2])
            return Meta(Create(int(args[0]), int(args[1]), meta))
        nums = [int(a) for a in args]
    except ValueError as exc:
        raise TraceFormatError(f"bad field in {code}: {exc}", lineno) from None
    if code == "LD":
        return MemAccess("load", nums[0], nums[1])
    if code == "ST":
        return MemAccess("store", nums[0], nums[1])
    if code == "CPU":
        return Compute(nums[0])
    if code == "CALL":
        return Call(nums[0])
    if code == "RET":
        return Return(nums[0])
    if code == "MAP":
        return Meta(Map(*nums))
    if code == "MAP2D":
        return Meta(Map2D(*nums))
    return Meta(Map3D(*nums))


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_lines(trace: Trace):
    h = trace.header
    yield MAGIC
    yield f"H {h.generator} {h.seed} {h.address_space} {_dump(h.params)}"
    for s in trace.image.segments:
        yield f"I {s.base} {s.elem_size} {len(s.values)} " + " ".join(map(str, s.values))
    yield f"X {_dump(trace.expected)}"
    for ev in trace.events:
        yield event_line(ev)


def trace_write(trace: Trace, path):
    digest = hashlib.sha256()
    n = 0
    with open(path, "w") as f:
        for line in trace_lines(trace):
            digest.update(line.encode())
            digest.update(b"\n")
            f.write(line)
            f.write("\n")
            n += 1
        f.write(f"END {n} {digest.hexdigest()}\n")
    return Path(path)


def trace_read(path) -> Trace:
    digest = hashlib.sha256()
    header = None
    image = MemoryImage()
    expected = None
    events = []
    trailer = None
    count = 0
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if trailer is not None:
                if line.strip():
                    raise TraceFormatError("data after END trailer", lineno)
                continue
            if line.startswith("END "):
                trailer = (lineno, line)
                continue
            digest.update(line.encode())
            digest.update(b"\n")
            count += 1
            if lineno == 1:
                if line != MAGIC:
                    raise TraceFormatError(f"expected {MAGIC!r} header", lineno)
                continue
            tag, _, rest = line.partition(" ")
            if tag == "H":
                try:
                    gen, seed, space, params = rest.split(" ", 3)
                    header = TraceHeader(gen, int(seed), json.loads(params), int(space))
                except ValueError as exc:
                    raise TraceFormatError(f"bad header: {exc}", lineno) from None
            elif tag == "I":
                try:
                    fields = rest.split()
                    base, esize, n = int(fields[0]), int(fields[1]), int(fields[2])
                    vals = [int(v) for v in fields[3:]]
                except (ValueError, IndexError) as exc:
                    raise TraceFormatError(f"bad image segment: {exc}", lineno) from None
                if len(vals) != n:
                    raise TraceFormatError("image segment length mismatch", lineno)
                image.add(base, esize, vals)
            elif tag == "X":
                try:
                    expected = json.loads(rest)
                except ValueError as exc:
                    raise TraceFormatError(f"bad expected-outcome record: {exc}", lineno) from None
            else:
                if header is None or expected is None:
                    raise TraceFormatError("event before header", lineno)
                events.append(parse_event(line, lineno))
    if header is None:
        raise TraceFormatError("missing header")
    if trailer is None:
        raise TraceFormatError("missing END trailer (truncated file?)", count + 1)
    lineno, line = trailer
    try:
        _, n, hexdigest = line.split()
        n = int(n)
    except ValueError:
        raise TraceFormatError("bad END trailer", lineno) from None
    if n != count:
        raise TraceFormatError(f"trailer says {n} lines, found {count} (truncated file?)", lineno)
    if hexdigest != digest.hexdigest():
        raise TraceIntegrityError("checksum mismatch: header or body modified after writing", lineno)
    return Trace(header, events, image, expected)


def validate_trace(trace: Trace):
    """Structural checks; returns a list of problem strings (empty when clean)."""
    problems = []
    space = trace.header.address_space
    events = trace.events
    pending_ops = 0
    for i, ev in enumerate(events):
        t = type(ev)
        if t is Label:
            if i + 1 >= len(events) or type(events[i + 1]) not in (MemAccess, Call, Return):
                problems.append(f"event {i}: label not followed by a memory access")
        elif t is MemAccess:
            pending_ops = 0
            if not 0 <= ev.vaddr < space or ev.vaddr + ev.size > space:
                problems.append(f"event {i}: address {ev.vaddr} outside address space")
            if ev.kind not in ("load", "store"):
                problems.append(f"event {i}: bad access kind {ev.kind!r}")
        elif t in (Call, Return):
            pending_ops = 0
            if not 0 <= ev.ret_slot < space:
                problems.append(f"event {i}: return slot outside address space")
        elif t is Meta:
            pending_ops += 1
            op = ev.op
            if isinstance(op, Create) and op.tag == 0:
                problems.append(f"event {i}: CREATE with reserved tag 0")
        elif t is Compute:
            if ev.n < 0:
                problems.append(f"event {i}: negative compute burst")
    if pending_ops:
        problems.append(f"{pending_ops} operator(s) not followed by any load/store")
    return problems
