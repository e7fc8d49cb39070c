"""Acceptance criteria 1-8.

Each criterion prints one ``criterion N: PASS|FAIL`` line with its
runtime.  Run through pytest (``pytest tests/test_acceptance.py -s``) or
directly (``python tests/test_acceptance.py``).
"""

import sys
import time
from pathlib import Path

import cvxpy as cp
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import iteration_map_radius, kkt_oracle  # noqa: E402

from mbadmm.distsim import message_stats, simulate  # noqa: E402
from mbadmm.engines import (  # noqa: E402
    ENGINES,
    default_prox_weights,
    run_gauss_seidel,
    run_gbs,
    run_jacobi,
    run_prox_jacobi,
    run_two_block,
    run_variable_splitting,
)
from mbadmm.fixtures import DIVERGE3_START, diverge3, fig3_case, strongly_convex_instance  # noqa: E402
from mbadmm.offload import bs_gradient, build_offload, run_offloading  # noqa: E402
from mbadmm.problem import Linear, NegLogAffine, Quadratic, objective_value, primal_residual  # noqa: E402
from mbadmm.prox import check_gradient, project_box, project_capped_simplexoid  # noqa: E402
from mbadmm.scopf import assemble_scopf, centralized_scopf_oracle, run_distributed_scopf, synthetic_case  # noqa: E402
from mbadmm.trace import SolverConfig, Status  # noqa: E402

LIMITS = {1: 10.0, 2: 30.0, 3: 60.0, 4: None, 5: 60.0, 6: 60.0, 7: 30.0, 8: None}


def _recorded(engine, p, cfg, **kw):
    snaps = []
    tr, rep = engine(p, cfg, observer=lambda k, x, lam: snaps.append(([xi.copy() for xi in x], lam.copy())), **kw)
    return tr, rep, snaps


def _bitwise(a, b):
    (ta, _, sa), (tb, _, sb) = a, b
    if ta != tb or len(sa) != len(sb):
        return False
    return all(np.array_equal(la, lb) and all(np.array_equal(u, w) for u, w in zip(xa, xb))
               for (xa, la), (xb, lb) in zip(sa, sb))


# ---------------------------------------------------------------------------


def criterion_1():
    bad = []
    for seed in range(20):
        p2 = strongly_convex_instance(seed, N=2)
        cfg = SolverConfig()
        if not _bitwise(_recorded(run_gauss_seidel, p2, cfg), _recorded(run_two_block, p2, cfg)):
            bad.append(f"gs/two-block seed {seed}")
        p = strongly_convex_instance(seed)
        pj = SolverConfig(prox=0.0, gamma=1.0)
        if not _bitwise(_recorded(run_prox_jacobi, p, pj), _recorded(run_jacobi, p, cfg)):
            bad.append(f"prox-jacobi/jacobi seed {seed}")
    return not bad, "40 bitwise comparisons" + (f"; mismatches: {bad}" if bad else "")


def criterion_2():
    p = diverge3()
    radius = iteration_map_radius([A.ravel() for A in p.A], rho=1.0, sequential=True)
    _, gs = run_gauss_seidel(p, SolverConfig(max_iter=5000), x0=DIVERGE3_START)
    _, gbs = run_gbs(p, SolverConfig(alpha=0.5, max_iter=5000), x0=DIVERGE3_START)
    _, vs = run_variable_splitting(p, SolverConfig(max_iter=5000), x0=DIVERGE3_START)
    r_gbs = float(np.linalg.norm(primal_residual(p, gbs.x)))
    r_vs = float(np.linalg.norm(primal_residual(p, vs.x)))
    ok = (radius > 1.0 and gs.status is Status.DIVERGED and gs.primal_residual > 1e8
          and gbs.status is Status.CONVERGED and r_gbs <= 1e-6 and vs.status is Status.CONVERGED and r_vs <= 1e-6)
    return ok, (f"GS map radius {radius:.4f}, GS {gs.status.value} at iteration {gs.iterations}; "
                f"GBS {gbs.status.value} |r|={r_gbs:.1e}; VS {vs.status.value} |r|={r_vs:.1e}")


def criterion_3():
    worst_f = worst_x = 0.0
    converged = total = 0
    fails = []
    for seed in range(50):
        p = strongly_convex_instance(seed)
        x_ref, _, f_ref = kkt_oracle(p)
        for name, engine in ENGINES.items():
            if name == "two-block" and p.N != 2:
                continue
            prox = default_prox_weights(p, 1.0, 1.0) if name == "prox-jacobi" else None
            _, rep = engine(p, SolverConfig(prox=prox, max_iter=3000))
            total += 1
            if rep.status is not Status.CONVERGED:
                continue
            converged += 1
            ef = abs(objective_value(p, rep.x) - f_ref) / max(1.0, abs(f_ref))
            ex = float(np.abs(rep.x.flat - x_ref).max())
            worst_f, worst_x = max(worst_f, ef), max(worst_x, ex)
            if ef > 1e-5 or ex > 1e-4:
                fails.append((seed, name))
    return not fails, (f"{converged}/{total} runs converged; worst objective rel err {worst_f:.1e}, "
                       f"worst x err {worst_x:.1e}" + (f"; out of tolerance: {fails}" if fails else ""))


def criterion_4():
    ratios = []
    ok = True
    for seed in range(5):
        p = strongly_convex_instance(seed, N=4)
        cfg = SolverConfig(prox=default_prox_weights(p, 1.0, 1.0), max_iter=5000, tol_primal=1e-300, tol_dual=1e-300)
        _, _, snaps = _recorded(run_prox_jacobi, p, cfg)
        V = np.array([np.zeros(sum(p.dims) + p.m)] + [np.r_[np.concatenate(x), lam] for x, lam in snaps])
        k = np.arange(1, len(V))
        run_min = np.minimum.accumulate(k * np.sum(np.diff(V, axis=0) ** 2, axis=1))
        ratio = run_min[-1] / run_min[9]
        ratios.append(ratio)
        ok = ok and len(k) == 5000 and bool(np.all(np.diff(run_min) <= 0)) and ratio < 0.01
    return ok, f"5 seeds x 5000 iterations; final/k=10 ratio of running min <= {max(ratios):.1e}"


def criterion_5():
    details = []
    ok = True
    case = fig3_case()
    inst = assemble_scopf(case)
    _, rep, sols = run_distributed_scopf(inst)
    obj, _, _ = centralized_scopf_oracle(inst)
    rel = abs(rep.objective - obj) / obj
    flows_ok = all(np.abs(s.flows).max() <= 300.0 + 1e-6 for s in sols)
    gen_ok = all(abs(s.Pg.sum() - 450.0) <= 1e-4 for s in sols)
    ok = ok and rep.converged and rep.primal_residual <= 1e-5 and flows_ok and gen_ok and rel <= 1e-4
    details.append(f"3-bus C=1: P0={np.round(sols[0].Pg, 4).tolist()} rel err {rel:.1e}")
    big = synthetic_case(0)
    for C in (1, 2, 3):
        inst = assemble_scopf(big, big.contingencies[:C])
        _, rep, _ = run_distributed_scopf(inst)
        obj, _, _ = centralized_scopf_oracle(inst)
        rel = abs(rep.objective - obj) / abs(obj)
        ok = ok and rep.converged and rel <= 1e-4
        details.append(f"6-bus C={C}: {rep.iterations} it, rel err {rel:.1e}")
    return ok, "; ".join(details)


def _offload_oracle(inst):
    y = cp.Variable((inst.A, inst.B), nonneg=True)
    prob = cp.Problem(cp.Minimize(inst.theta @ cp.sum(y, axis=1) - cp.sum(cp.log(cp.sum(y, axis=0) + 1))),
                      [cp.sum(y, axis=1) <= inst.cap])
    prob.solve(solver=cp.CLARABEL)
    return prob.value


def criterion_6():
    i5 = build_offload(5, 5, 10.0, 0)
    _, r5 = run_offloading(i5)
    ref = _offload_oracle(i5)
    cons = float(np.abs(i5.x - i5.y.T).max())
    rel = abs(r5.objective - ref) / abs(ref)
    _, r10 = run_offloading(build_offload(5, 10, 10.0, 0))
    ok = r5.converged and cons <= 1e-5 and rel <= 1e-4 and r10.converged and r10.iterations > r5.iterations
    return ok, (f"B5A5 {r5.iterations} it, max|x-y^T|={cons:.1e}, rel err {rel:.1e}; "
                f"B5A10 {r10.iterations} it")


def criterion_7():
    ok = True
    runs = 0
    block_fixtures = [(diverge3(), DIVERGE3_START)] + [(strongly_convex_instance(0, N), None) for N in (2, 3, 4, 6)]
    for p, x0 in block_fixtures:
        pj = SolverConfig(prox=default_prox_weights(p, 1.0, 1.0))
        for kind, runner, cfg in [("Jacobi", run_jacobi, SolverConfig(max_iter=2000)), ("ProxJacobi", run_prox_jacobi, pj),
                                  ("VariableSplitting", run_variable_splitting, SolverConfig())]:
            tr, rep, _ = simulate(kind, p, cfg, x0=x0)
            tr2, rep2 = runner(p, cfg, x0=x0)
            ok = ok and tr == tr2 and np.array_equal(rep.lam, rep2.lam) and np.array_equal(rep.x.flat, rep2.x.flat)
            runs += 1
    for A in (5, 10):
        tr, rep, log = simulate("Offloading", build_offload(5, A, 10.0, 0))
        tr2, rep2 = run_offloading(build_offload(5, A, 10.0, 0))
        ok = ok and tr == tr2 and np.array_equal(rep.lam, rep2.lam)
        for st in message_stats(log)[:-1]:
            ok = ok and all(r == (2 * A if w < 5 else 10) for w, r in st.edge_reals.items())
        runs += 1
    return ok, f"{runs} simulated runs bitwise equal; BS edges 2A and AP edges 2B reals per round"


def _identity_worst(p, snaps, scale, preds=None):
    worst = 0.0
    prev = np.zeros(p.m)
    for j, (x, lam) in enumerate(snaps):
        r = primal_residual(p, preds[j] if preds is not None else x)
        dev = np.abs((prev - lam) - scale * r).max() / max(1.0, np.abs(prev).max(), np.abs(lam).max())
        worst = max(worst, float(dev))
        prev = lam
    return worst


def criterion_8():
    rng = np.random.default_rng(8)
    # gradients
    g_worst = 0.0
    pts = rng.uniform(0.0, 2.0, size=(100, 4))
    M = rng.normal(size=(4, 4))
    for term in (Quadratic(M @ M.T, rng.normal(size=4)), Linear(rng.normal(size=4)),
                 NegLogAffine(rng.uniform(0.1, 1.0, size=4), 1.0, 2.0)):
        g_worst = max(g_worst, check_gradient(term.value, term.gradient, pts))
    inst = build_offload(5, 5, 10.0, 0)
    for k in range(100):
        pb = rng.normal(size=5)
        x = rng.uniform(0.0, 3.0, size=(1, 5))
        b = k % 5

        def f(z, b=b, pb=pb):
            return (-np.log(1 + z.sum()) + 0.5 * inst.rho * np.sum((z - pb) ** 2)
                    + 0.5 * inst.prox * np.sum((z - inst.x[b]) ** 2))

        g_worst = max(g_worst, check_gradient(f, lambda z, b=b, pb=pb: bs_gradient(inst, b, pb, z), x))
    # projections
    p_worst = 0.0
    expansive = 0
    for _ in range(1000):
        x, y = rng.normal(scale=3.0, size=(2, 6))
        lo = rng.normal(size=6) - 1.0
        hi = lo + rng.uniform(0.0, 2.0, size=6)
        cap = float(rng.uniform(0.0, 3.0))
        for proj in (lambda z: project_box(z, lo, hi), lambda z: project_capped_simplexoid(z, cap)):
            px, py = proj(x), proj(y)
            p_worst = max(p_worst, float(np.abs(proj(px) - px).max()))
            expansive += np.linalg.norm(px - py) > np.linalg.norm(x - y) + 1e-12
    # multiplier identity
    m_worst = 0.0
    import mbadmm.engines as eng

    for seed in range(3):
        for name, engine in ENGINES.items():
            p = strongly_convex_instance(seed, N=2 if name == "two-block" else 3)
            cfg = SolverConfig(rho=1.3, gamma=0.7, alpha=0.4, prox=1.0, max_iter=300)
            preds = []
            if name == "gbs":
                orig = eng.gbs_predict

                def spy(*a, orig=orig):
                    out = orig(*a)
                    preds.append(out[0])
                    return out

                eng.gbs_predict = spy
            try:
                _, _, snaps = _recorded(engine, p, cfg)
            finally:
                if name == "gbs":
                    eng.gbs_predict = orig
            scale = {"prox-jacobi": 0.7 * 1.3, "gbs": 0.4 * 1.3, "variable-splitting": 1.3 / p.N}.get(name, 1.3)
            m_worst = max(m_worst, _identity_worst(p, snaps, scale, preds if name == "gbs" else None))
    ok = g_worst <= 1e-5 and p_worst <= 1e-12 and expansive == 0 and m_worst <= 1e-12
    return ok, (f"gradient FD rel err {g_worst:.1e}; projection idempotence {p_worst:.1e}, "
                f"{expansive} expansive pairs; multiplier identity {m_worst:.1e}")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


def evaluate(n):
    t = time.perf_counter()
    ok, detail = CRITERIA[n]()
    dt = time.perf_counter() - t
    limit = LIMITS[n]
    in_time = limit is None or dt < limit
    budget = f", limit {limit:.0f} s" if limit else ""
    line = f"criterion {n}: {'PASS' if ok and in_time else 'FAIL'} ({dt:.1f} s{budget}) {detail}"
    return ok and in_time, line


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    ok, line = evaluate(n)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(n) for n in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
