"""
Tagging memory and looking tags up
==================================

"""

from metasim.config import SimConfig
from metasim.isa import Map
from metasim.sim import Simulator

sim = Simulator(SimConfig(clients=["null_all"]), address_space=1 << 20)

# tag 64 KB starting at 0x4000 with tag 5; regions are 512 B by default
sim.execute_map(Map(5, 0x4000, 64 * 1024))

# first lookup misses the metadata cache and reads the table from memory
r = sim.plane.lookup(2, 0x4000, now=0)
print("tag", r.tag, "hit", r.mmc_hit, "done at cycle", r.done)

# the neighbouring lines of the same region hit
r = sim.plane.lookup(2, 0x4040, now=1000)
print("tag", r.tag, "hit", r.mmc_hit, "done at cycle", r.done)

# outside the mapped range
print("untagged:", sim.plane.lookup(2, 0x100, now=2000).tag)

# the table costs one byte per region of physical memory
mmt = sim.mmt
print(f"table: {mmt.size_bytes} bytes for {mmt.physical_memory_bytes >> 20} MB "
      f"({mmt.footprint_fraction:.3%})")
