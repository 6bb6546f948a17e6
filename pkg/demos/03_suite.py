"""Run the seven shipped experiments with a reduced repetition count.

The full run (40 repetitions each) is ``kcs suite --out report``; this
script uses 10 repetitions to finish quickly.

Run: python3 demos/03_suite.py [out_dir]
"""

import sys
from dataclasses import replace

from kcs.harness import report_csv, run_suite, table1_specs
from kcs.typists import make_user_traces

out_dir = sys.argv[1] if len(sys.argv) > 1 else None
users = make_user_traces()
specs = [replace(s, repetitions=10) for s in table1_specs()]
report = run_suite(specs, users[0], users, out_dir, base_seed=0)

print("zscore distances:")
print(report_csv(report))
print("raw millisecond distances:")
print(report_csv(report, raw=True))
for r in report.results:
    for sub in r.sub_results:
        print(f"exp {r.id} {sub.label:>6}: distance {sub.avg_distance:.3f}, delay {sub.avg_delay_ms:.2f} ms")
