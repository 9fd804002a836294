"""
Running a sweep and reading the CSV
===================================

"""

import csv
import tempfile
from pathlib import Path

from metasim.harness import emit_csv, get_experiment, run_experiment

exp = get_experiment("mmc_size", repetitions=2)
rows = run_experiment(exp, traces=["stream:bytes=65536", "linked_list:nodes=512,traversals=2"])

out = Path(tempfile.mkdtemp()) / "mmc_size.csv"
emit_csv(rows, out)

with open(out) as f:
    for r in csv.DictReader(f):
        if r["rep"] == "0":
            print(r["trace"].split(":")[0], r["value"], r["normalized_time"], r["mmc_hit_rate"])
