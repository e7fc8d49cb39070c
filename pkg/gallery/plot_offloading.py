"""
Mobile data offloading with message accounting
==============================================

Five base stations push traffic to access points.  The run goes
through the coordinator/worker simulator, which reports how many reals
cross each edge per round.
"""

import numpy as np

from mbadmm.distsim import message_stats, simulate
from mbadmm.offload import build_offload

for A in (5, 10):
    inst = build_offload(5, A, cap=10.0, theta_seed=0)
    tr, rep, log = simulate("Offloading", inst)
    stats = message_stats(log)
    edges = stats[0].edge_reals
    print(f"B=5 A={A}: {rep.status.value} in {rep.iterations} iterations, "
          f"objective {rep.objective:.4f}")
    print(f"  reals per BS edge {edges[0]}, per AP edge {edges[5]}, "
          f"{len(stats)} rounds, {sum(s.bytes for s in stats)} bytes")
    print(f"  offloaded per AP: {np.round(inst.y.sum(axis=1), 3).tolist()}")
