"""Mobile data offloading through an SDN controller.

``B`` base stations offload traffic to ``A`` access points.  BS ``b``
chooses ``x[b, a]`` (Mbps sent through AP ``a``) and earns
``log(sum_a x[b, a] + 1)``; AP ``a`` admits ``y[a, b]`` at cost
``theta_a * sum_b y[a, b]`` subject to ``sum_b y[a, b] <= C_a``.  The
controller enforces consensus ``x[b, a] == y[a, b]`` through per-pair
multipliers ``lam[a, b]`` and runs proximal Jacobian ADMM over the
``B + A`` agents:

    x_b  <- argmin -log(1'x_b + 1) + rho/2 ||x_b - p_b||^2 + 1/2 ||x_b - x_b^k||^2_{P}
    y_a  <- argmin theta_a 1'y_a + rho/2 ||y_a - q_a||^2 + 1/2 ||y_a - y_a^k||^2_{P},
            y_a >= 0, 1'y_a <= C_a
    lam  <- lam - gamma * rho * (x^T - y)

with signals ``p[a, b] = y[a, b] + lam[a, b] / rho`` (to BS ``b``) and
``q[b, a] = x[b, a] - lam[a, b] / rho`` (to AP ``a``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import prox
from .engines import LocalTransport, _Clock, _make_pool
from .errors import InvalidDims, ObserverFailure, ShapeMismatch
from .problem import BlockVector
from .trace import ConvergenceReport, IterationTrace, SolverConfig, Status

THETA_FLOOR = 0.01


@dataclass
class OffloadInstance:
    """Problem data plus the current iterate ``(x, y, lam)``.

    Shapes: ``x`` is ``(B, A)``, ``y`` and ``lam`` are ``(A, B)``.
    """

    B: int
    A: int
    cap: np.ndarray
    theta: np.ndarray
    rho: float = 1.0
    gamma: float = None
    prox: float = 0.1
    x: np.ndarray = field(default=None, repr=False)
    y: np.ndarray = field(default=None, repr=False)
    lam: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.B) < 1 or int(self.A) < 1:
            raise InvalidDims(f"need B >= 1 and A >= 1, got B={self.B}, A={self.A}")
        self.B, self.A = int(self.B), int(self.A)
        cap = np.array(self.cap, dtype=float)
        self.cap = np.full(self.A, float(cap)) if cap.ndim == 0 else cap
        self.theta = np.array(self.theta, dtype=float)
        if self.cap.shape != (self.A,) or self.theta.shape != (self.A,):
            raise InvalidDims("cap and theta need one entry per access point")
        if np.any(self.cap < 0):
            raise InvalidDims("capacities must be nonnegative")
        if self.gamma is None:
            self.gamma = 1.0 / self.A
        if not (self.rho > 0 and self.gamma >= 0 and self.prox >= 0):
            raise InvalidDims("rho must be positive, gamma and prox nonnegative")
        if self.x is None:
            self.x = np.zeros((self.B, self.A))
        if self.y is None:
            self.y = np.zeros((self.A, self.B))
        if self.lam is None:
            self.lam = np.zeros((self.A, self.B))

    def objective(self, x=None, y=None):
        """``sum_a L_a(y_a) - sum_b U_b(x_b)``."""
        x = self.x if x is None else x
        y = self.y if y is None else y
        s = x.sum(axis=1) + 1.0
        with np.errstate(invalid="ignore", divide="ignore"):
            util = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -np.inf)
        return float(self.theta @ y.sum(axis=1) - util.sum())

    def to_dict(self):
        return {
            "B": self.B,
            "A": self.A,
            "cap": self.cap.tolist(),
            "theta": self.theta.tolist(),
            "rho": self.rho,
            "gamma": self.gamma,
            "prox": self.prox,
        }

    @classmethod
    def from_dict(cls, d):
        """Build from a JSON-style dict; ``theta`` may be replaced by ``seed``."""
        if "theta" in d:
            return cls(d["B"], d["A"], d.get("cap", 10.0), d["theta"], rho=d.get("rho", 1.0),
                       gamma=d.get("gamma"), prox=d.get("prox", 0.1))
        return build_offload(d["B"], d["A"], d.get("cap", 10.0), d.get("seed", 0), rho=d.get("rho", 1.0),
                             gamma=d.get("gamma"), prox=d.get("prox", 0.1))


@dataclass
class SignalBundle:
    p: np.ndarray  # (A, B), controller -> BS
    q: np.ndarray  # (B, A), controller -> AP


def build_offload(B, A, cap=10.0, theta_seed=0, *, rho=1.0, gamma=None, prox=0.1):
    """Seeded instance with ``theta_a ~ N(0, 1)`` clamped to ``>= 0.01``.

    The draws are sequential, so instances with the same seed share their
    leading ``theta`` values regardless of ``A``.
    """
    if int(B) < 1 or int(A) < 1:
        raise InvalidDims(f"need B >= 1 and A >= 1, got B={B}, A={A}")
    if np.any(np.asarray(cap, dtype=float) < 0):
        raise InvalidDims("capacity must be nonnegative")
    rng = np.random.default_rng(theta_seed)
    theta = np.maximum(rng.standard_normal(int(A)), THETA_FLOOR)
    return OffloadInstance(B, A, cap, theta, rho=rho, gamma=gamma, prox=prox)


def make_signals(inst: OffloadInstance, x=None, y=None, lam=None):
    x = inst.x if x is None else x
    y = inst.y if y is None else y
    lam = inst.lam if lam is None else lam
    return SignalBundle(p=y + lam / inst.rho, q=x - lam.T / inst.rho)


def bs_update(b, inst: OffloadInstance, signals: SignalBundle):
    """Proximal update of BS ``b`` (unconstrained, strongly convex).

    Stationarity reads ``h x = rho p + w x^k + 1 / (s + 1)`` with
    ``h = rho + w`` and ``s = 1'x``, so ``s`` is the unique root above -1
    of ``h s^2 + (h - S0) s - (S0 + A) = 0`` and ``x`` follows in closed
    form.
    """
    return _bs_solve(inst, b, signals.p[:, b])


def bs_gradient(inst, b, pb, x):
    """Gradient of BS ``b``'s subproblem at ``x`` (for checks)."""
    return -1.0 / (x.sum() + 1.0) + inst.rho * (x - pb) + inst.prox * (x - inst.x[b])


def _bs_solve(inst, b, pb):
    rho, w = inst.rho, inst.prox
    h = rho + w
    base = rho * pb + w * inst.x[b]
    S0 = base.sum()
    bq = h - S0
    cq = -(S0 + pb.size)
    root = np.sqrt(bq * bq - 4.0 * h * cq)
    # pick the cancellation-free form of the larger root
    s = -2.0 * cq / (bq + root) if bq >= 0 else (root - bq) / (2.0 * h)
    return (base + 1.0 / (s + 1.0)) / h


def ap_update(a, inst: OffloadInstance, signals: SignalBundle):
    """Proximal update of AP ``a``: a scaled-identity QP over
    ``{y >= 0, sum y <= C_a}``, solved exactly by projecting the
    unconstrained minimizer."""
    return _ap_solve(inst, a, signals.q[:, a])


def _ap_solve(inst, a, qa):
    rho, w = inst.rho, inst.prox
    yk = inst.y[a]
    u = (rho * qa + w * yk - inst.theta[a]) / (rho + w)
    return prox.project_capped_simplexoid(u, inst.cap[a])


def controller_update(inst: OffloadInstance, x_new, y_new, gamma=None):
    """Per-pair multiplier step ``lam[a, b] -= gamma * rho * (x[b, a] - y[a, b])``."""
    gamma = inst.gamma if gamma is None else gamma
    x_new = np.asarray(x_new, dtype=float)
    y_new = np.asarray(y_new, dtype=float)
    if x_new.shape != (inst.B, inst.A) or y_new.shape != (inst.A, inst.B):
        raise ShapeMismatch(
            f"expected x {(inst.B, inst.A)} and y {(inst.A, inst.B)}, got {x_new.shape} and {y_new.shape}"
        )
    return inst.lam - (gamma * inst.rho) * (x_new.T - y_new)


def _agent_signals(inst, sig):
    """Per-worker signal payloads: BSs ``0..B-1`` then APs ``B..B+A-1``."""
    return [sig.p[:, b] for b in range(inst.B)] + [sig.q[:, a] for a in range(inst.A)]


def run_offloading(inst: OffloadInstance, cfg: SolverConfig = None, *, observer=None, transport=None):
    """Distributed offloading (BS and AP updates in parallel, then the
    controller's multiplier step).

    ``inst.rho``, ``inst.gamma`` and ``inst.prox`` set the algorithm
    parameters; ``cfg`` supplies tolerances, ``max_iter`` and the
    divergence threshold.  The trace's primal column is the consensus
    violation ``max |x[b, a] - y[a, b]|``; the dual metric is
    ``rho * max`` over agents of the 2-norm of that agent's move.  The
    instance is updated in place and returned iterates are copies.
    """
    cfg = cfg or SolverConfig()
    B = inst.B
    tr = IterationTrace()
    pool = _make_pool(cfg) if transport is None else None
    tp = transport or LocalTransport(pool)
    status = None
    k = -1

    def work(i, v):
        return _bs_solve(inst, i, v) if i < B else _ap_solve(inst, i - B, v)

    try:
        for k in range(cfg.max_iter):
            clock = _Clock(cfg.timing)
            with clock:
                sig = make_signals(inst)
                out = tp.exchange(k, _agent_signals(inst, sig), work)
            x_new = np.array(out[:B])
            y_new = np.array(out[B:])
            lam = controller_update(inst, x_new, y_new)
            res = float(np.abs(x_new.T - y_new).max())
            dual = inst.rho * max(
                float(np.linalg.norm(x_new - inst.x, axis=1).max()),
                float(np.linalg.norm(y_new - inst.y, axis=1).max()),
            )
            obj = inst.objective(x_new, y_new)
            inst.x, inst.y, inst.lam = x_new, y_new, lam
            tr.append(k, obj, res, dual, clock.total)
            if observer is not None:
                try:
                    observer(k, BlockVector([r.copy() for r in x_new] + [r.copy() for r in y_new]), lam.copy())
                except Exception as exc:
                    raise ObserverFailure(f"observer raised at iteration {k}: {exc!r}") from exc
            if not (np.isfinite(res) and np.isfinite(dual) and np.all(np.isfinite(lam))) \
                    or res > cfg.divergence_threshold:
                status = Status.DIVERGED
                break
            if res <= cfg.tol_primal and dual <= cfg.tol_dual:
                status = Status.CONVERGED
                break
    finally:
        if pool is not None:
            pool.shutdown()
    tp.finish(k)
    last = tr[-1]
    rep = ConvergenceReport(
        status=status or Status.MAX_ITER,
        iterations=len(tr),
        primal_residual=last[2],
        dual_metric=last[3],
        x=BlockVector([r.copy() for r in inst.x] + [r.copy() for r in inst.y]),
        lam=inst.lam.copy(),
        objective=last[1],
        extra={"x": inst.x.copy(), "y": inst.y.copy()},
    )
    return tr, rep

