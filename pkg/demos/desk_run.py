"""Desk-scale layered run end to end.

Builds the 4x4 / 32x32 version of the channel-and-inclusion medium, runs
CEM -> POD -> reduced sweep -> fine reference and prints the per-layer
report.  Takes a couple of seconds.

    python demos/desk_run.py [output-dir]
"""

import sys

from parawave.cli import load_config, run

out = sys.argv[1] if len(sys.argv) > 1 else "out/demo-desk"
cfg = load_config("experiment1-desk")
res = run(cfg, out)

print(f"{len(res.cem)} CEM functions -> {len(res.pod)} POD vectors")
print(f"CFL delta = {res.solution.cfl_delta:.4e} ({'stable' if res.solution.cfl_passed else 'beyond estimate'})")
print(res.report.to_csv(), end="")
print(f"artifacts in {res.output}")
