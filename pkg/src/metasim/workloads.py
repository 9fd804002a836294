"""Deterministic trace generators, the graph prefetch oracle, safety corpora
and software-check baselines.

Every generator is a pure function of its parameters and seed.
"""

from __future__ import annotations

import os
from collections import deque

import numpy as np

from .clients import GraphPrefetchMeta
from .isa import Create, Map
from .trace import (Call, Compute, Label, MemAccess, Meta, Return, Trace, TraceHeader,
                    load, store, trace_read)

PAGE = 4096
BASE = 0x1000  # leave page 0 unused
MB = 1 << 20

GRAPH_CLIENT = 0
BOUNDS_CLIENT = 0
SCRATCH_TAG = 7


def _align(x, a):
    return -(-x // a) * a


def _space(end):
    """Address-space size covering ``end`` plus a spare page, in whole MB."""
    return max(MB, _align(end + PAGE, MB))


def _trace(name, seed, params, events, end, image=None, expected=None):
    t = Trace(TraceHeader(name, seed, params, _space(end)), events)
    if image is not None:
        t.image = image
    t.expected = expected or {}
    return t


# -- stress microbenchmarks ---------------------------------------------------

def gen_stream(bytes=64 * 1024, elem=4, seed=0):
    """Sequential loads over one array, each element touched once."""
    if bytes < elem:
        raise ValueError("bytes must be >= elem")
    n = bytes // elem
    events = [Meta(Map(1, BASE, n * elem))]
    events += [MemAccess("load", BASE + i * elem, elem) for i in range(n)]
    return _trace("stream", seed, {"bytes": bytes, "elem": elem}, events, BASE + n * elem)


def gen_random(region_bytes=25 * MB, accesses=20000, seed=0):
    """Uniform random 4-byte loads over a region."""
    if region_bytes < 64:
        raise ValueError("region_bytes must cover at least one cache line")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, region_bytes // 4, size=accesses)
    events = [Meta(Map(1, BASE, region_bytes))]
    events += [MemAccess("load", BASE + 4 * int(i), 4) for i in idx]
    params = {"region_bytes": region_bytes, "accesses": accesses}
    return _trace("random", seed, params, events, BASE + region_bytes)


def array3d_addresses(dx, dy, dz, elem=4, base=BASE, i_limit=None):
    """Addresses of the 3D traversal: i outermost, k innermost.

    The array is laid out contiguous in the first dimension, so consecutive
    accesses are ``dx * dy * elem`` bytes apart.
    """
    ni = dx if i_limit is None else min(dx, i_limit)
    i = np.arange(ni)[:, None, None]
    j = np.arange(dy)[None, :, None]
    k = np.arange(dz)[None, None, :]
    return (base + ((k * dy + j) * dx + i) * elem).ravel()


def gen_3d_array(dx=136, dy=8, dz=8, elem=4, i_limit=None, seed=0):
    if min(dx, dy, dz, elem) < 1:
        raise ValueError("dimensions must be >= 1")
    total = dx * dy * dz * elem
    events = [Meta(Map(1, BASE, total))]
    events += [MemAccess("load", int(a), elem) for a in array3d_addresses(dx, dy, dz, elem, BASE, i_limit)]
    params = {"dx": dx, "dy": dy, "dz": dz, "elem": elem}
    if i_limit is not None:
        params["i_limit"] = i_limit
    return _trace("array3d", seed, params, events, BASE + total)


def gen_linked_list(nodes=2048, traversals=4, seed=0, slot_bytes=64, insert_fraction=0.125):
    """Build a list by appends then random insertions, then walk it.

    Nodes occupy ``slot_bytes`` slots of a pool in a shuffled order.  The
    next pointer lives at offset 0 of a node and its value at offset 4.
    The memory image holds each slot's final next pointer (0 at the tail).
    """
    if nodes < 2:
        raise ValueError("need at least two nodes")
    if slot_bytes < 8:
        raise ValueError("slot_bytes must hold a node (8 bytes)")
    rng = np.random.default_rng(seed)
    pool = BASE
    place = rng.permutation(nodes)
    addr = [pool + int(p) * slot_bytes for p in place]
    n_ins = min(nodes - 1, int(nodes * insert_fraction))
    n_app = nodes - n_ins
    events = [Meta(Map(1, pool, nodes * slot_bytes))]
    nxt = {}
    # creation: append nodes in allocation order
    for n in range(n_app):
        a = addr[n]
        events += [store(a + 4), store(a)]
        nxt[a] = 0
        if n:
            events.append(store(addr[n - 1]))
            nxt[addr[n - 1]] = a
    # insertion: splice remaining nodes after random existing ones
    chain = addr[:n_app]
    for n in range(n_app, nodes):
        a = addr[n]
        p = int(rng.integers(0, len(chain)))
        prev = chain[p]
        events += [load(prev), store(a + 4), store(a), store(prev)]
        nxt[a] = nxt[prev]
        nxt[prev] = a
        chain.insert(p + 1, a)
    for _ in range(traversals):
        for a in chain:
            events += [load(a), Compute(1)]
    image_vals = [0] * nodes
    for a, b in nxt.items():
        image_vals[(a - pool) // slot_bytes] = b
    t = _trace("linked_list", seed,
               {"nodes": nodes, "traversals": traversals, "slot_bytes": slot_bytes,
                "insert_fraction": insert_fraction},
               events, pool + nodes * slot_bytes,
               expected={"head": chain[0], "nodes": nodes})
    t.image.add(pool, slot_bytes, image_vals)
    return t


def linked_list_chain(trace):
    """Follow next pointers in the memory image from the recorded head."""
    out = []
    a = trace.expected["head"]
    while a:
        out.append(a)
        a = trace.image.value_at(a)
    return out


# -- graph traversal ----------------------------------------------------------

GRAPH_STRUCTS = ("worklist", "vertices", "edges", "property")


def _bfs_order(offsets, targets, n):
    seen = np.zeros(n, dtype=bool)
    order = []
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        q = deque([root])
        while q:
            v = q.popleft()
            order.append(v)
            for u in targets[int(offsets[v]):int(offsets[v + 1])]:
                if not seen[u]:
                    seen[u] = True
                    q.append(int(u))
    return order


def gen_graph_traversal(vertices=64, avg_degree=4, seed=0, stride=1, with_oracle=None):
    """BFS-like traversal over a random CSR graph (see :func:`graph_trace`)."""
    if vertices < 1:
        raise ValueError("need at least one vertex")
    rng = np.random.default_rng(seed)
    degrees = rng.integers(0, 2 * avg_degree + 1, size=vertices)
    offsets = np.concatenate([[0], np.cumsum(degrees)]).astype(np.int64)
    targets = rng.integers(0, vertices, size=int(offsets[-1]))
    prop = rng.integers(0, 1 << 16, size=vertices)
    params = {"vertices": vertices, "avg_degree": avg_degree, "stride": stride}
    if with_oracle is None:
        with_oracle = vertices <= 1024
    return graph_trace(offsets.tolist(), targets.tolist(), prop=prop.tolist(), stride=stride,
                       seed=seed, params=params, with_oracle=with_oracle)


def graph_trace(offsets, targets, worklist=None, prop=None, stride=1, seed=0, params=None,
                with_oracle=True):
    """Trace for a traversal of the CSR graph ``(offsets, targets)``.

    Four arrays (work list, vertex offsets, edge targets, vertex property)
    each start on their own page.  The preamble registers one prefetcher
    descriptor per array and tags each array with its own tag.  The body
    walks the work list (BFS order by default): for each vertex it reads its
    two offsets, then each edge target and that target's property.
    """
    n = len(offsets) - 1
    if worklist is None:
        worklist = _bfs_order(offsets, targets, n)
    if prop is None:
        prop = list(range(n))
    es = 4
    arrays = [list(worklist), list(offsets), list(targets), list(prop)]
    bases = []
    a = BASE
    for arr in arrays:
        bases.append(a)
        a = _align(a + max(1, len(arr)) * es, PAGE)
    end = a
    structs = []
    for s, (arr, b) in enumerate(zip(arrays, bases)):
        nxt = s + 1 if s + 1 < len(arrays) else None
        structs.append({"name": GRAPH_STRUCTS[s], "base": b, "size": len(arr) * es,
                        "elem": es, "stride": stride, "next": nxt})
    events = []
    for tag, st in enumerate(structs, 1):
        nb = structs[st["next"]]["base"] if st["next"] is not None else None
        meta = GraphPrefetchMeta(st["base"], st["size"], nb, es, stride, es)
        events.append(Meta(Create(GRAPH_CLIENT, tag, meta.pack())))
    for tag, st in enumerate(structs, 1):
        events.append(Meta(Map(tag, st["base"], st["size"])))
    wl, vl, el, pr = bases
    for i, v in enumerate(worklist):
        events.append(load(wl + i * es))
        events.append(load(vl + v * es))
        events.append(load(vl + (v + 1) * es))
        for e in range(int(offsets[v]), int(offsets[v + 1])):
            events.append(load(el + e * es))
            events.append(load(pr + int(targets[e]) * es))
            events.append(Compute(2))
        events.append(Compute(1))
    if params is None:
        params = {"vertices": n, "edges": len(targets), "stride": stride}
    t = _trace("graph", seed, params, events, end, expected={"structures": structs})
    for arr, b in zip(arrays, bases):
        t.image.add(b, es, arr)
    if with_oracle:
        t.expected["oracle"] = graph_prefetch_oracle(t)
    return t


def graph_prefetch_oracle(trace):
    """Prefetch addresses a perfect dependent-chain prefetcher would issue.

    Works only from the recorded structure layout and the memory image:
    each demand access inside a structure prefetches the element ``stride``
    ahead, then every following structure is entered at the element
    indexed by the value just fetched.
    """
    structs = trace.expected["structures"]
    image = trace.image

    def owner(addr):
        for s in structs:
            if s["base"] <= addr < s["base"] + s["size"]:
                return s
        return None

    out = []
    for ev in trace.events:
        if type(ev) is not MemAccess:
            continue
        s = owner(ev.vaddr)
        if s is None:
            continue
        target = ev.vaddr + s["stride"] * s["elem"]
        while s["base"] <= target < s["base"] + s["size"]:
            out.append(target)
            if s["next"] is None:
                break
            value = image.value_at(target)
            if value is None:
                break
            nxt = structs[s["next"]]
            target = nxt["base"] + value * nxt["elem"]
            s = nxt
    return out


# -- safety corpora -----------------------------------------------------------

BOUNDS_GAP = 256
FRAME_BYTES = 128
CANARY_OFFSET = 64
LOCALS_OFFSET = 72
STACK_TOP = 0x80000


def label_positions(events):
    """Positions of the events that Labels point at."""
    return [i + 1 for i, e in enumerate(events) if type(e) is Label]


def _bounds_corpus(n, seed, inject, array_elems=512):
    """``n`` iterations of the three-array loop, sweeping arrays of
    ``array_elems`` elements repeatedly (index ``i % array_elems``)."""
    rng = np.random.default_rng(seed)
    es = 4
    span = _align(array_elems * es, 64)
    bases = [BASE + k * (span + BOUNDS_GAP) for k in range(3)]
    events = [Meta(Map(tag, b, span)) for tag, b in enumerate(bases, 1)]
    hits = {}
    if inject:
        its = rng.choice(n, size=inject, replace=False)
        for it in sorted(int(x) for x in its):
            which = int(rng.integers(0, 3))
            if rng.integers(0, 2):
                # overflow into the untagged gap after the array
                off = span + int(rng.integers(0, BOUNDS_GAP // es)) * es
                bad = bases[which] + off
            else:
                other = (which + 1 + int(rng.integers(0, 2))) % 3
                bad = bases[other] + int(rng.integers(0, array_elems)) * es
            hits[it] = (which, bad)
    for i in range(n):
        bad = hits.get(i)
        idx = i % array_elems
        for k in range(3):
            events.append(Meta(Create(BOUNDS_CLIENT, k + 1, bytes([k + 1]))))
            addr = bases[k] + idx * es
            if bad is not None and bad[0] == k:
                events.append(Label("bounds"))
                addr = bad[1]
            events.append(MemAccess("store" if k == 2 else "load", addr, es))
            if k == 1:
                events.append(Compute(1))
        events.append(Compute(2))
    layout = [{"tag": tag, "base": b, "size": span} for tag, b in enumerate(bases, 1)]
    expected = {"kind": "bounds", "arrays": layout, "checked": 3 * n, "array_elems": array_elems}
    return events, bases[2] + span, expected


def _rap_corpus(calls, seed, inject):
    rng = np.random.default_rng(seed)
    events = []
    injected = set(int(x) for x in rng.choice(calls, size=inject, replace=False)) if inject else set()

    def frame(fp, depth, attack):
        slot = fp
        events.append(Call(slot))
        nlocals = int(rng.integers(2, 7))
        for j in range(nlocals):
            loc = fp + LOCALS_OFFSET + 8 * (j % 7)
            events.append(store(loc, 8) if rng.integers(0, 2) else load(loc, 8))
            events.append(Compute(1))
        if depth < 3 and (attack or rng.random() < 0.5):
            frame(fp - FRAME_BYTES, depth + 1, attack)
        elif attack:
            # overwrite a live return slot: this frame's or an ancestor's
            victim = fp + FRAME_BYTES * int(rng.integers(0, depth))
            events.append(Label("rap"))
            events.append(store(victim, 8))
        events.append(Compute(1))
        events.append(Return(slot))

    for c in range(calls):
        frame(STACK_TOP - FRAME_BYTES, 1, c in injected)
        events.append(Compute(2))
    expected = {"kind": "rap", "frame_bytes": FRAME_BYTES, "canary_offset": CANARY_OFFSET}
    return events, STACK_TOP, expected


def gen_safety_corpus(kind="bounds", scale=1000, seed=0, inject=0, array_elems=512):
    """Bounds corpus: ``scale`` loop iterations over three tagged arrays of
    ``array_elems`` elements.  RAP corpus: ``scale`` top-level calls nesting
    up to three deep.
    """
    if inject < 0:
        raise ValueError("inject must be >= 0")
    if kind == "bounds":
        if inject > scale:
            raise ValueError("cannot inject more violations than iterations")
        events, end, expected = _bounds_corpus(scale, seed, inject, array_elems)
    elif kind == "rap":
        if inject > scale:
            raise ValueError("cannot inject more violations than calls")
        events, end, expected = _rap_corpus(scale, seed, inject)
    else:
        raise ValueError(f"unknown corpus kind {kind!r}")
    expected["violations"] = label_positions(events)
    params = {"kind": kind, "scale": scale, "inject": inject}
    if kind == "bounds":
        params["array_elems"] = array_elems
    return _trace(f"safety_{kind}", seed, params, events, end, expected=expected)


def _retrace(trace, events, suffix):
    h = trace.header
    expected = dict(trace.expected)
    if "violations" in expected:
        expected["violations"] = label_positions(events)
    return Trace(TraceHeader(h.generator + suffix, h.seed, dict(h.params), h.address_space),
                 events, trace.image, expected)


def strip_meta(trace):
    """Drop every CREATE/MAP (the uninstrumented program)."""
    return _retrace(trace, [e for e in trace.events if type(e) is not Meta], "")


def instrument_software_checks(trace, kind="bounds", check_cost=2, compare_cost=1):
    """Replace hardware checks with their software equivalents.

    bounds: each access guarded by a CREATE gets ``check_cost`` compute
    instructions in front of it instead; all CREATE/MAP are dropped.
    canary: a canary store after each Call and a canary load plus compare
    before each Return.
    """
    corpus = trace.expected.get("kind")
    if kind == "bounds":
        if corpus != "bounds":
            raise ValueError(f"bounds instrumentation needs a bounds corpus, got {corpus!r}")
        out = []
        guarded = False
        for e in trace.events:
            t = type(e)
            if t is Meta:
                guarded = guarded or isinstance(e.op, Create)
                continue
            if t is MemAccess and guarded:
                if out and type(out[-1]) is Label:
                    out.insert(len(out) - 1, Compute(check_cost))
                else:
                    out.append(Compute(check_cost))
                guarded = False
            out.append(e)
        return _retrace(trace, out, "+swbounds")
    if kind == "canary":
        if corpus != "rap":
            raise ValueError(f"canary instrumentation needs a rap corpus, got {corpus!r}")
        off = trace.expected["canary_offset"]
        out = []
        for e in trace.events:
            t = type(e)
            if t is Return:
                out += [load(e.ret_slot + off, 8), Compute(compare_cost)]
            out.append(e)
            if t is Call:
                out.append(store(e.ret_slot + off, 8))
        return _retrace(trace, out, "+canary")
    raise ValueError(f"unknown instrumentation {kind!r}")


def inject_meta_ops(trace, every, client=2, tag=SCRATCH_TAG):
    """Insert one MAP + CREATE on a scratch buffer after every ``every`` accesses."""
    if every < 1:
        raise ValueError("every must be >= 1")
    scratch = trace.header.address_space - PAGE
    out = []
    seen = 0
    for e in trace.events:
        out.append(e)
        if type(e) is MemAccess:
            seen += 1
            if seen % every == 0:
                out.append(Meta(Map(tag, scratch, 64)))
                out.append(Meta(Create(client, tag, b"")))
    return _retrace(trace, out, f"+ops{every}")


# -- trace specs ---------------------------------------------------------------

GENERATORS = {
    "stream": gen_stream,
    "random": gen_random,
    "array3d": gen_3d_array,
    "linked_list": gen_linked_list,
    "graph": gen_graph_traversal,
    "safety": gen_safety_corpus,
}
ALIASES = {"3d": "array3d", "ll": "linked_list", "list": "linked_list"}


def _coerce(v):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    if v in ("none", "None"):
        return None
    return v


def parse_trace_spec(spec):
    """``"name:key=value,key=value"`` -> (generator name, params)."""
    name, _, rest = spec.partition(":")
    name = ALIASES.get(name.strip(), name.strip())
    if name not in GENERATORS:
        raise ValueError(f"unknown workload {name!r}; expected one of {sorted(GENERATORS)}")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        k, sep, v = item.partition("=")
        if not sep:
            raise ValueError(f"expected key=value in trace spec, got {item!r}")
        params[k.strip()] = _coerce(v.strip())
    return name, params


def generate(name, **params):
    name = ALIASES.get(name, name)
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown workload {name!r}; expected one of {sorted(GENERATORS)}") from None
    return gen(**params)


def make_trace(spec, seed=None):
    """Build a trace from a spec string, or read it if ``spec`` names a file."""
    if os.path.exists(spec):
        return trace_read(spec)
    name, params = parse_trace_spec(spec)
    if seed is not None:
        params.setdefault("seed", seed)
    return generate(name, **params)
