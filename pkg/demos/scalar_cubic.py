"""Walk through the scalar cubic scenario.

Synthesizes a gain schedule at a small relaxation order, compares each step's
probability bound with Monte Carlo containment, and then checks the published
order-10 gains against the same rollouts.

    python demos/scalar_cubic.py [order] [max_order]
"""

import sys

from chancetube.driver import load_gains, synthesize, verify
from chancetube.mcverify import rollout
from chancetube.scenario import bundled, load_scenario

N, SEED = 100_000, 1

scn = load_scenario(bundled("ex1"))
order = int(sys.argv[1]) if len(sys.argv) > 1 else 3
top = int(sys.argv[2]) if len(sys.argv) > 2 else 4

sched = synthesize(scn, order=order, max_order=top)
print(f"synthesis complete: {sched.complete}")
for ev in sched.events:
    print("  note:", ev)

batch = verify(scn, sched, N, SEED)
print("\n k   d   g1        g2        bound     MC rate")
for rec, row in zip(sched.steps, batch.comparison):
    r = rec.result
    print(f"{rec.k:2d}  {r.order}  {r.gains['g1']:+.4f}  {r.gains['g2']:+.4f}  {r.bound:.5f}  {row['rate']:.5f}")
print(f"joint containment: {batch.joint_rate:.5f} +- {batch.joint_se:.5f}")

ref = rollout(scn, load_gains(bundled("ex1_reference_gains.json")), N, SEED)
print(f"published gains, joint containment: {ref.joint_rate:.5f}")
