"""DC security-constrained optimal power flow.

Scenario 0 is the intact network; scenario ``c >= 1`` removes one branch.
Every scenario has its own angles ``theta^c`` (slack angle pinned to 0)
and dispatch ``P^c``; the ramp coupling
``|P^0 - P^c| <= Delta`` is written with a slack ``0 <= p^c <= 2 Delta``
as the equality ``P^0 - P^c + p^c = Delta``.  Only the base dispatch is
costed.

The distributed solver alternates a base-case QP, C independent
contingency QPs and a scaled dual step, i.e. two-block ADMM between the
base case and the group of contingencies.  Powers are in MW, angles in
radians, susceptances in p.u. on ``base_mva``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix

from .errors import Disconnected, Infeasible, InfeasibleScenario, InvalidCase, ParseError
from .prox import solve_qp
from .trace import ConvergenceReport, IterationTrace, SolverConfig, Status

# MW-scale dispatch with costs of order 0.01-0.05 $/MW^2: rho = 0.1 balances
# the cost curvature against the coupling penalty
DEFAULT_RHO = 0.1


@dataclass(frozen=True)
class Bus:
    id: int
    demand: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float


@dataclass(frozen=True)
class Generator:
    bus: int
    a: float
    b: float
    pmin: float
    pmax: float
    ramp: float


@dataclass
class PowerCase:
    buses: List[Bus]
    branches: List[Branch]
    generators: List[Generator]
    slack_bus: int
    contingencies: List[int] = field(default_factory=list)
    base_mva: float = 100.0

    def __post_init__(self):
        validate_case(self)

    @property
    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def demand(self):
        return np.array([b.demand for b in self.buses], dtype=float)

    def to_dict(self):
        return {
            "base_mva": self.base_mva,
            "buses": [{"id": b.id, "demand": b.demand} for b in self.buses],
            "branches": [
                {"from": br.from_bus, "to": br.to_bus, "susceptance": br.susceptance, "limit": br.limit}
                for br in self.branches
            ],
            "generators": [
                {"bus": g.bus, "a": g.a, "b": g.b, "pmin": g.pmin, "pmax": g.pmax, "ramp": g.ramp}
                for g in self.generators
            ],
            "slack_bus": self.slack_bus,
            "contingencies": list(self.contingencies),
        }


def _connected(n, edges):
    if n == 0:
        return False
    if not edges:
        return n == 1
    i, j = zip(*edges)
    g = coo_matrix((np.ones(len(edges)), (i, j)), shape=(n, n))
    return connected_components(g, directed=False)[0] == 1


def validate_case(case: PowerCase):
    """Raise :class:`InvalidCase` naming the first violated invariant."""
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise InvalidCase("bus ids must be unique")
    idx = {b: i for i, b in enumerate(ids)}
    if case.slack_bus not in idx:
        raise InvalidCase(f"slack bus {case.slack_bus} is not a bus")
    if not case.generators:
        raise InvalidCase("at least one generator is required")
    for k, br in enumerate(case.branches):
        if br.from_bus not in idx or br.to_bus not in idx:
            raise InvalidCase(f"branch {k} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise InvalidCase(f"branch {k} is a self loop")
        if not br.susceptance > 0:
            raise InvalidCase(f"branch {k}: susceptance must be positive")
        if not br.limit > 0:
            raise InvalidCase(f"branch {k}: flow limit must be positive")
    for k, g in enumerate(case.generators):
        if g.bus not in idx:
            raise InvalidCase(f"generator {k} sits on unknown bus {g.bus}")
        if not 0 <= g.pmin <= g.pmax:
            raise InvalidCase(f"generator {k}: bounds must satisfy 0 <= pmin <= pmax")
        if not g.ramp >= 0:
            raise InvalidCase(f"generator {k}: ramp must be nonnegative")
        if g.a < 0:
            raise InvalidCase(f"generator {k}: quadratic cost must be convex")
    if not case.base_mva > 0:
        raise InvalidCase("base_mva must be positive")
    edges = [(idx[br.from_bus], idx[br.to_bus]) for br in case.branches]
    if not _connected(len(ids), edges):
        raise Disconnected("network graph is disconnected")
    for c in case.contingencies:
        if not 0 <= c < len(case.branches):
            raise InvalidCase(f"contingency references unknown branch {c}")


def _require(d, key, where):
    if key not in d:
        raise ParseError(f"{where}: missing field '{key}'")
    return d[key]


def case_from_dict(doc: dict) -> PowerCase:
    try:
        buses = [Bus(int(_require(b, "id", f"buses[{i}]")), float(b.get("demand", 0.0)))
                 for i, b in enumerate(_require(doc, "buses", "case"))]
        branches = [
            Branch(int(_require(b, "from", f"branches[{i}]")), int(_require(b, "to", f"branches[{i}]")),
                   float(_require(b, "susceptance", f"branches[{i}]")), float(_require(b, "limit", f"branches[{i}]")))
            for i, b in enumerate(_require(doc, "branches", "case"))
        ]
        gens = []
        for i, g in enumerate(_require(doc, "generators", "case")):
            w = f"generators[{i}]"
            gens.append(Generator(int(_require(g, "bus", w)), float(g.get("a", 0.0)), float(g.get("b", 0.0)),
                                  float(g.get("pmin", 0.0)), float(_require(g, "pmax", w)), float(_require(g, "ramp", w))))
        slack = int(_require(doc, "slack_bus", "case"))
    except (TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed case field: {exc}") from exc
    return PowerCase(buses, branches, gens, slack, [int(c) for c in doc.get("contingencies", [])],
                     float(doc.get("base_mva", 100.0)))


def load_case(path) -> PowerCase:
    """Read a JSON case file (see :meth:`PowerCase.to_dict` for the schema)."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return case_from_dict(doc)


def build_dc_matrices(case: PowerCase, outage: Optional[int] = None):
    """``(B_bus, B_f, A_g)`` in p.u., with branch ``outage`` removed.

    ``B_f`` has one row ``b_l (e_from - e_to)`` per remaining branch,
    ``B_bus = B_f^T C`` is the susceptance-weighted Laplacian and ``A_g``
    the bus-generator incidence.
    """
    idx = case.bus_index
    n = len(case.buses)
    kept = [k for k in range(len(case.branches)) if k != outage]
    edges = [(idx[case.branches[k].from_bus], idx[case.branches[k].to_bus]) for k in kept]
    if not _connected(n, edges):
        raise Disconnected(f"network is disconnected after removing branch {outage}")
    Bf = np.zeros((len(kept), n))
    Bbus = np.zeros((n, n))
    for r, (k, (i, j)) in enumerate(zip(kept, edges)):
        b = case.branches[k].susceptance
        Bf[r, i], Bf[r, j] = b, -b
        Bbus[i, i] += b
        Bbus[j, j] += b
        Bbus[i, j] -= b
        Bbus[j, i] -= b
    Ag = np.zeros((n, len(case.generators)))
    for g, gen in enumerate(case.generators):
        Ag[idx[gen.bus], g] = 1.0
    return Bbus, Bf, Ag


@dataclass
class Scenario:
    """Constraint data of one scenario over ``(theta_nonslack, P[, p])``."""

    outage: Optional[int]
    Bbus: np.ndarray
    Bf: np.ndarray
    Ag: np.ndarray
    fmax: np.ndarray
    branches: list


@dataclass
class ScopfInstance:
    case: PowerCase
    scenarios: List[Scenario]
    delta: np.ndarray
    nonslack: np.ndarray

    @property
    def C(self):
        return len(self.scenarios) - 1

    @property
    def G(self):
        return len(self.case.generators)

    @property
    def n_theta(self):
        return len(self.nonslack)

    def cost(self, P):
        a = np.array([g.a for g in self.case.generators])
        b = np.array([g.b for g in self.case.generators])
        return float(a @ (P * P) + b @ P)

    def constraints(self, c, with_slack):
        """``(E, d, G, h)`` for scenario ``c`` over ``(theta, P[, p])``."""
        sc = self.scenarios[c]
        nt, G = self.n_theta, self.G
        nv = nt + G + (G if with_slack else 0)
        base = self.case.base_mva
        E = np.zeros((len(self.case.buses), nv))
        E[:, :nt] = base * sc.Bbus[:, self.nonslack]
        E[:, nt:nt + G] = -sc.Ag
        d = -self.case.demand
        flow = base * sc.Bf[:, self.nonslack]
        rows = [np.hstack([flow, np.zeros((flow.shape[0], nv - nt))])]
        rhs = [sc.fmax]
        rows.append(-rows[0])
        rhs.append(sc.fmax)
        eye = np.eye(G)
        up = np.zeros((G, nv))
        up[:, nt:nt + G] = eye
        rows += [up, -up]
        rhs += [np.array([g.pmax for g in self.case.generators]), -np.array([g.pmin for g in self.case.generators])]
        if with_slack:
            sl = np.zeros((G, nv))
            sl[:, nt + G:] = eye
            rows += [sl, -sl]
            rhs += [2.0 * self.delta, np.zeros(G)]
        return E, d, np.vstack(rows), np.concatenate(rhs)

    def flows(self, c, theta_ns):
        sc = self.scenarios[c]
        return self.case.base_mva * (sc.Bf[:, self.nonslack] @ theta_ns)


def assemble_scopf(case: PowerCase, contingencies=None) -> ScopfInstance:
    """Scenario 0 plus one scenario per outaged branch.

    ``contingencies`` defaults to the case's own list; ``[]`` gives a
    plain DC-OPF.
    """
    cont = case.contingencies if contingencies is None else list(contingencies)
    delta = np.array([g.ramp for g in case.generators], dtype=float)
    if cont and not np.all(np.isfinite(delta)):
        raise InvalidCase("ramp limits must be finite when contingencies are present")
    scen = []
    for outage in [None] + list(cont):
        if outage is not None and not 0 <= outage < len(case.branches):
            raise InvalidCase(f"contingency references unknown branch {outage}")
        Bbus, Bf, Ag = build_dc_matrices(case, outage)
        kept = [k for k in range(len(case.branches)) if k != outage]
        fmax = np.array([case.branches[k].limit for k in kept])
        scen.append(Scenario(outage, Bbus, Bf, Ag, fmax, kept))
    slack = case.bus_index[case.slack_bus]
    nonslack = np.array([i for i in range(len(case.buses)) if i != slack], dtype=int)
    return ScopfInstance(case, scen, delta, nonslack)


@dataclass
class ScenarioSolution:
    scenario: int
    outage: Optional[int]
    theta: np.ndarray
    Pg: np.ndarray
    slack: Optional[np.ndarray]
    flows: np.ndarray

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "outage": self.outage,
            "theta_rad": self.theta.tolist(),
            "Pg_MW": self.Pg.tolist(),
            "slack_MW": None if self.slack is None else self.slack.tolist(),
            "flows_MW": self.flows.tolist(),
        }


def _full_theta(inst, theta_ns):
    th = np.zeros(len(inst.case.buses))
    th[inst.nonslack] = theta_ns
    return th


def _solution(inst, c, z):
    nt, G = inst.n_theta, inst.G
    th = z[:nt]
    return ScenarioSolution(c, inst.scenarios[c].outage, _full_theta(inst, th), z[nt:nt + G].copy(),
                            z[nt + G:].copy() if c > 0 else None, inst.flows(c, th))


def _solve(inst, c, Q, q, with_slack):
    E, d, Gm, h = inst.constraints(c, with_slack)
    try:
        return solve_qp(Q, q, E, d, Gm, h)
    except Infeasible as exc:
        raise InfeasibleScenario(f"scenario {c}: {exc}", scenario=c) from exc


def run_distributed_scopf(inst: ScopfInstance, cfg: SolverConfig = None, *, rho_callback: Callable = None,
                          observer=None):
    """Distributed SCOPF: base update, parallel contingency updates and
    scaled dual updates.

    Per iteration, with ``u^c = P^c - p^c`` and residual
    ``r^c = P^0 - u^c - Delta``:

    * base: ``min f(P^0) + sum_c rho_c/2 ||P^0 - u^c - Delta + mu^c||^2``
      over the intact-network constraints;
    * contingency ``c``: ``min rho_c/2 ||P^0 - u^c - Delta + mu^c||^2``
      over scenario ``c``'s constraints and ``0 <= p^c <= 2 Delta``;
    * ``mu^c <- mu^c + r^c``.

    Stops when ``max_c ||r^c||_inf <= tol_primal`` and
    ``max_c rho_c ||u^c_new - u^c_old||_inf <= tol_dual``.  The trace's
    primal column is that max residual.  ``rho_callback(k, rho, r)`` may
    return a new per-scenario penalty vector (scaled duals are rescaled
    accordingly); it is off by default.

    Returns ``(trace, report, solutions)``.
    """
    cfg = cfg or SolverConfig(rho=DEFAULT_RHO)
    C, G, nt = inst.C, inst.G, inst.n_theta
    rho = np.full(C, float(cfg.rho))
    a = np.array([g.a for g in inst.case.generators])
    b = np.array([g.b for g in inst.case.generators])
    nb = nt + G
    nc = nt + 2 * G
    mu = np.zeros((C, G))
    u = np.zeros((C, G))
    zc = [None] * C
    tr = IterationTrace()
    status = None
    z0 = None
    for k in range(cfg.max_iter):
        # base update
        Q = np.zeros((nb, nb))
        q = np.zeros(nb)
        Q[nt:, nt:] = np.diag(2.0 * a + rho.sum())
        q[nt:] = b + (rho[:, None] * (-u - inst.delta + mu)).sum(axis=0)
        z0 = _solve(inst, 0, Q, q, False)
        P0 = z0[nt:]
        # contingency updates; the objective only sees u = P - p
        u_old = u.copy()
        for c in range(C):
            Qc = np.zeros((nc, nc))
            Qc[nt:, nt:] = rho[c] * np.block([[np.eye(G), -np.eye(G)], [-np.eye(G), np.eye(G)]])
            w = P0 - inst.delta + mu[c]
            qc = np.zeros(nc)
            qc[nt:nt + G] = -rho[c] * w
            qc[nt + G:] = rho[c] * w
            zc[c] = _solve(inst, c + 1, Qc, qc, True)
            u[c] = zc[c][nt:nt + G] - zc[c][nt + G:]
        r = P0[None, :] - u - inst.delta[None, :]
        mu = mu + r
        res = float(np.abs(r).max()) if C else 0.0
        dual = float((rho[:, None] * np.abs(u - u_old)).max()) if C else 0.0
        tr.append(k, inst.cost(P0), res, dual)
        if observer is not None:
            observer(k, z0.copy(), mu.copy())
        if not np.isfinite(res) or res > cfg.divergence_threshold:
            status = Status.DIVERGED
            break
        if res <= cfg.tol_primal and dual <= cfg.tol_dual:
            status = Status.CONVERGED
            break
        if rho_callback is not None:
            new = rho_callback(k, rho.copy(), r.copy())
            if new is not None:
                new = np.broadcast_to(np.asarray(new, dtype=float), (C,)).copy()
                if not np.all(new > 0):
                    raise ValueError("rho_callback must return positive penalties")
                mu = mu * (rho / new)[:, None]
                rho = new
    sols = [_solution(inst, 0, z0)] + [_solution(inst, c + 1, zc[c]) for c in range(C)]
    last = tr[-1]
    rep = ConvergenceReport(
        status=status or Status.MAX_ITER,
        iterations=len(tr),
        primal_residual=last[2],
        dual_metric=last[3],
        x=None,
        lam=mu * rho[:, None],
        objective=last[1],
        extra={"rho": rho.tolist()},
    )
    return tr, rep, sols


def centralized_scopf_oracle(inst: ScopfInstance):
    """Solve all scenarios as one stacked QP.

    Returns ``(objective, base dispatch, solutions)``; raises
    :class:`Infeasible` if no dispatch survives every scenario.
    """
    C, G, nt = inst.C, inst.G, inst.n_theta
    sizes = [nt + G] + [nt + 2 * G] * C
    off = np.r_[0, np.cumsum(sizes)]
    n = off[-1]
    Q = np.zeros((n, n))
    q = np.zeros(n)
    a = np.array([g.a for g in inst.case.generators])
    b = np.array([g.b for g in inst.case.generators])
    Q[nt:nt + G, nt:nt + G] = np.diag(2.0 * a)
    q[nt:nt + G] = b
    Es, ds, Gs, hs = [], [], [], []
    for c in range(C + 1):
        E, d, Gm, h = inst.constraints(c, c > 0)
        Eb = np.zeros((E.shape[0], n))
        Eb[:, off[c]:off[c + 1]] = E
        Gb = np.zeros((Gm.shape[0], n))
        Gb[:, off[c]:off[c + 1]] = Gm
        Es.append(Eb)
        ds.append(d)
        Gs.append(Gb)
        hs.append(h)
    for c in range(1, C + 1):
        # P^0 - P^c + p^c = Delta
        cp = np.zeros((G, n))
        cp[:, nt:nt + G] = np.eye(G)
        cp[:, off[c] + nt:off[c] + nt + G] = -np.eye(G)
        cp[:, off[c] + nt + G:off[c + 1]] = np.eye(G)
        Es.append(cp)
        ds.append(inst.delta)
    z = solve_qp(Q, q, np.vstack(Es), np.concatenate(ds), np.vstack(Gs), np.concatenate(hs))
    sols = [_solution(inst, c, z[off[c]:off[c + 1]]) for c in range(C + 1)]
    return inst.cost(sols[0].Pg), sols[0].Pg.copy(), sols


def synthetic_case(seed=0, n_bus=6, n_gen=3, n_cont=3, max_tries=200) -> PowerCase:
    """Seeded random meshed network whose SCOPF is feasible for every
    prefix ``1..n_cont`` of its contingency list.

    Draws are repeated (same generator stream) until the stacked oracle
    solves with each prefix and the first contingency actually raises the
    cost above the plain DC-OPF, so security constraints bind.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        # random spanning tree plus extra chords
        order = rng.permutation(n_bus)
        pairs = {tuple(sorted((int(order[i]), int(order[rng.integers(0, i)])))) for i in range(1, n_bus)}
        while len(pairs) < n_bus + 3:
            i, j = rng.choice(n_bus, size=2, replace=False)
            pairs.add(tuple(sorted((int(i), int(j)))))
        pairs = sorted(pairs)
        branches = [Branch(i + 1, j + 1, float(rng.uniform(0.5, 2.0)), float(rng.uniform(80.0, 200.0)))
                    for i, j in pairs]
        demand = rng.uniform(20.0, 100.0, size=n_bus)
        gbus = rng.choice(n_bus, size=n_gen, replace=False)
        total = demand.sum()
        gens = [Generator(int(gb) + 1, float(rng.uniform(0.01, 0.05)), float(rng.uniform(10.0, 40.0)), 0.0,
                          float(rng.uniform(0.5, 0.9) * total), float(rng.uniform(10.0, 30.0))) for gb in gbus]
        buses = [Bus(i + 1, float(d)) for i, d in enumerate(demand)]
        cand = [k for k in rng.permutation(len(branches))
                if _connected(n_bus, [((br.from_bus - 1), (br.to_bus - 1)) for m, br in enumerate(branches) if m != k])]
        if len(cand) < n_cont:
            continue
        case = PowerCase(buses, branches, gens, 1, [int(k) for k in cand[:n_cont]])
        try:
            costs = [centralized_scopf_oracle(assemble_scopf(case, case.contingencies[:C]))[0]
                     for C in range(n_cont + 1)]
        except Infeasible:
            continue
        if costs[1] > costs[0] * (1 + 1e-6):
            return case
    raise InvalidCase(f"no feasible synthetic case found for seed {seed}")
