"""
A metadata-driven prefetcher on a graph traversal
=================================================

"""

from metasim.config import SimConfig
from metasim.sim import run_one
from metasim.workloads import gen_graph_traversal, strip_meta

trace = gen_graph_traversal(vertices=1024, avg_degree=8, seed=3)
print(len(trace.events), "events")

base, _ = run_one(SimConfig(), strip_meta(trace))
stride, _ = run_one(SimConfig(clients=["stride_prefetch"]), strip_meta(trace))
pref, _ = run_one(SimConfig(clients=["graph_prefetch"]), trace)
ideal, _ = run_one(SimConfig(clients=["graph_pref_ideal"]), trace)

for name, s in [("no prefetch", base), ("stride", stride), ("tagged", pref), ("ideal", ideal)]:
    print(f"{name:12s} {s.cycles:8d} cycles  speedup {base.cycles / s.cycles:.3f}")
