"""Seeded and hand-built problem instances shared by tests, gallery and CLI."""

from __future__ import annotations

import json
import os
from importlib import resources

import numpy as np

from .offload import build_offload
from .problem import Quadratic, assemble_problem, problem_to_dict
from .scopf import case_from_dict, synthetic_case

DIVERGE3_START = [[1.0], [1.0], [1.0]]

# smallest singular value accepted for the stacked coupling matrix of the
# strongly convex suite; keeps every convergent engine under a few
# thousand iterations at rho = 1
MIN_SIGMA = 0.5


def diverge3():
    """Three scalar blocks, ``f = 0``, ``c = 0``, columns
    ``(1,1,1), (1,1,2), (1,2,2)``.  The direct Gauss-Seidel extension
    diverges on it from any start off the solution set."""
    cols = [(1.0, 1.0, 1.0), (1.0, 1.0, 2.0), (1.0, 2.0, 2.0)]
    return assemble_problem([{"coupling": np.array(c).reshape(3, 1)} for c in cols], np.zeros(3))


def strongly_convex_instance(seed, N=None):
    """Seeded separable strongly convex QP with linear coupling.

    ``N`` cycles through 2, 3, 4, 6 with the seed unless given; block
    sizes are 1..10, ``m <= min(20, sum n_i)``; each ``A_i`` has
    orthonormal columns and each ``Q_i`` eigenvalues in [1, 3].  Draws
    whose stacked coupling matrix has a singular value below
    ``MIN_SIGMA`` are rejected.
    """
    rng = np.random.default_rng(seed)
    N = [2, 3, 4, 6][seed % 4] if N is None else N
    while True:
        dims = rng.integers(1, 11, size=N)
        m = int(rng.integers(max(dims), min(20, int(dims.sum())) + 1))
        blocks = []
        for n in dims:
            U, _ = np.linalg.qr(rng.normal(size=(n, n)))
            Q = (U * rng.uniform(1.0, 3.0, size=n)) @ U.T
            Q = 0.5 * (Q + Q.T)
            A, _ = np.linalg.qr(rng.normal(size=(m, n)))
            blocks.append({"coupling": A, "objective": Quadratic(Q, rng.normal(size=n))})
        rhs = rng.normal(size=m)
        stacked = np.hstack([b["coupling"] for b in blocks])
        if np.linalg.svd(stacked, compute_uv=False).min() >= MIN_SIGMA:
            return assemble_problem(blocks, rhs)


def quadratic_oracle(p):
    """Centralized KKT solution of a problem whose blocks are all free
    quadratics: ``(x_flat, lam)`` in this package's sign convention."""
    from scipy.linalg import block_diag

    Q = block_diag(*[b.objective.Q for b in p.blocks])
    q = np.concatenate([b.objective.q for b in p.blocks])
    A = np.hstack(p.A)
    n, m = Q.shape[0], A.shape[0]
    K = np.block([[Q, -A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.r_[-q, p.rhs])
    return sol[:n], sol[n:]


def fig3_case_dict():
    return json.loads(resources.files("mbadmm.data").joinpath("scopf_3bus.json").read_text())


def fig3_case():
    return case_from_dict(fig3_case_dict())


def _problem_doc(p, start=None):
    doc = problem_to_dict(p)
    if start is not None:
        doc["start"] = {"x": start}
    return doc


def fixture_documents():
    """Name -> JSON document for every bundled fixture."""
    docs = {
        "fixture_diverge3.json": _problem_doc(diverge3(), DIVERGE3_START),
        "scopf_3bus.json": fig3_case_dict(),
        "scopf_6bus.json": synthetic_case(0).to_dict(),
        "offload_b5a5.json": build_offload(5, 5, 10.0, 0).to_dict(),
        "offload_b5a10.json": build_offload(5, 10, 10.0, 0).to_dict(),
    }
    for N in (2, 3, 4, 6):
        docs[f"convex_n{N}_s0.json"] = _problem_doc(strongly_convex_instance(0, N))
    return docs


FIXTURE_NAMES = (
    "fixture_diverge3.json",
    "scopf_3bus.json",
    "scopf_6bus.json",
    "offload_b5a5.json",
    "offload_b5a10.json",
    "convex_n2_s0.json",
    "convex_n3_s0.json",
    "convex_n4_s0.json",
    "convex_n6_s0.json",
)


def write_fixtures(directory):
    os.makedirs(directory, exist_ok=True)
    written = []
    for name, doc in fixture_documents().items():
        path = os.path.join(directory, name)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        written.append(path)
    return written
