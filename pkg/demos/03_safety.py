"""
Bounds checking and return-address protection
=============================================

"""

from metasim.config import SimConfig
from metasim.sim import run_one, simulate
from metasim.workloads import gen_safety_corpus, instrument_software_checks, strip_meta

cfg = SimConfig(clients=["bounds"], trap_mode="record").replace(granularity=64)

corpus = gen_safety_corpus("bounds", scale=2000, seed=1, inject=5)
sim = simulate(cfg, corpus)
print("injected at", corpus.expected["violations"])
print("trapped at ", [t.position for t in sim.traps])

base = run_one(SimConfig(), strip_meta(corpus))[0].cycles
sw = run_one(SimConfig(), instrument_software_checks(corpus, "bounds"))[0].cycles
print(f"overhead: tagged {sim.stats.cycles / base - 1:.1%}, software {sw / base - 1:.1%}")

# return slots tagged on call, checked on every store
rap = SimConfig(clients=["rap"], trap_mode="record").replace(granularity=64)
calls = gen_safety_corpus("rap", scale=500, seed=2, inject=3)
print("rap traps:", [(t.kind.name, t.position) for t in simulate(rap, calls).traps])
