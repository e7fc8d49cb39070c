"""Multi-block ADMM engines.

All engines share one run interface::

    trace, report = run_xxx(problem, cfg, x0=None, lam0=None, observer=None)

``observer(k, x, lam)`` is called after every iteration with read-only
snapshots.  The multiplier sign convention throughout is

    L(x, lam) = sum f_i(x_i) - lam^T (sum A_i x_i - c) + rho/2 ||sum A_i x_i - c||^2
    lam <- lam - step * rho * (sum A_i x_i - c)

Block subproblems are written in target form: with ``s`` the contribution
of the other blocks, minimizing ``L`` over ``x_i`` equals minimizing
``f_i(x_i) + rho/2 ||A_i x_i - v||^2`` with ``v = c - s + lam / rho``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, ObserverFailure, SingularBlock
from .problem import (
    BlockProblem,
    BlockVector,
    as_block_vector,
    dual_residual_metric,
    objective_value,
    primal_residual,
)
from .subproblem import block_solvers
from .trace import ConvergenceReport, IterationTrace, SolverConfig, Status

__all__ = [
    "CorrectionMatrices",
    "build_correction_matrices",
    "initial_point",
    "run_two_block",
    "run_gauss_seidel",
    "run_jacobi",
    "run_prox_jacobi",
    "run_variable_splitting",
    "run_gbs",
    "gbs_predict",
    "default_prox_weights",
    "LocalTransport",
    "ENGINES",
]


# ---------------------------------------------------------------------------
# shared pieces


def initial_point(p: BlockProblem, x0=None):
    """``x0`` if given, else the projection of zero onto each block's set."""
    if x0 is not None:
        return list(as_block_vector(p, x0).copy())
    out = []
    for b in p.blocks:
        z = np.zeros(b.dim)
        proj = getattr(b.set, "project", None)
        out.append(proj(z) if proj is not None else z)
    return out


def _initial_lam(p, lam0):
    if lam0 is None:
        return np.zeros(p.m)
    lam = np.array(lam0, dtype=float).reshape(-1)
    if lam.shape != (p.m,):
        raise DimensionMismatch(f"lam0 has length {lam.shape[0]}, expected {p.m}")
    return lam


def block_target(p: BlockProblem, prods, lam, rho, i):
    """``c - sum_{j != i} A_j x_j + lam / rho`` from precomputed products."""
    s = np.zeros(p.m)
    for j, pj in enumerate(prods):
        if j != i:
            s = s + pj
    return (p.rhs - s) + lam / rho


def multiplier_step(p, x, lam, rho, step=1.0):
    """Dual update ``lam - step * rho * (sum A_i x_i - c)``; returns (lam, r)."""
    r = primal_residual(p, x)
    return lam - (step * rho) * r, r


class _Monitor:
    """Trace bookkeeping, observer calls and stopping decisions."""

    def __init__(self, p, cfg, observer):
        self.p = p
        self.cfg = cfg
        self.observer = observer
        self.trace = IterationTrace()

    def record(self, k, x_prev, x, lam, block_ms, dual=None, extra_primal=None):
        p, cfg = self.p, self.cfg
        r = primal_residual(p, x)
        rn = float(np.linalg.norm(r))
        if dual is None:
            with np.errstate(all="ignore"):
                dual = dual_residual_metric(p, x_prev, x, cfg.rho)
        with np.errstate(all="ignore"):
            obj = objective_value(p, x)
        self.trace.append(k, obj, rn, dual, block_ms)
        if self.observer is not None:
            try:
                self.observer(k, BlockVector(x).copy(), np.array(lam, copy=True))
            except Exception as exc:
                raise ObserverFailure(f"observer raised at iteration {k}: {exc!r}") from exc
        finite = np.isfinite(rn) and np.isfinite(dual) and np.all(np.isfinite(lam))
        finite = finite and all(np.all(np.isfinite(xi)) for xi in x)
        if not finite or rn > cfg.divergence_threshold:
            return Status.DIVERGED
        ok = rn <= cfg.tol_primal and dual <= cfg.tol_dual
        if extra_primal is not None:
            ok = ok and extra_primal <= cfg.tol_primal
        return Status.CONVERGED if ok else None

    def report(self, status, x, lam, **extra):
        tr = self.trace
        last = tr[-1] if len(tr) else (0, float("nan"), float("nan"), float("nan"), 0.0)
        return ConvergenceReport(
            status=status or Status.MAX_ITER,
            iterations=len(tr),
            primal_residual=last[2],
            dual_metric=last[3],
            x=BlockVector(x),
            lam=np.array(lam, copy=True),
            objective=last[1],
            extra=extra,
        )


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled
        self.total = 0.0

    def __enter__(self):
        if self.enabled:
            self._t = time.perf_counter()
        return self

    def __exit__(self, *exc):
        if self.enabled:
            self.total += (time.perf_counter() - self._t) * 1e3


# ---------------------------------------------------------------------------
# Gauss-Seidel family


def _gauss_seidel_sweep(p, solvers, x, lam, rho, order):
    """One sequential sweep; blocks see the freshest values of earlier blocks."""
    x = list(x)
    prods = [A @ xi for A, xi in zip(p.A, x)]
    for i in order:
        v = block_target(p, prods, lam, rho, i)
        x[i] = solvers[i].solve(v, x[i])
        prods[i] = p.A[i] @ x[i]
    return x


def run_two_block(p: BlockProblem, cfg: SolverConfig = None, *, x0=None, lam0=None, observer=None):
    """Classical two-block ADMM: x1-step, x2-step, multiplier step."""
    if p.N != 2:
        raise DimensionMismatch(f"two-block ADMM needs exactly 2 blocks, got {p.N}")
    cfg = cfg or SolverConfig()
    rho = cfg.rho
    s1, s2 = block_solvers(p, rho)
    A1, A2 = p.A
    x1, x2 = initial_point(p, x0)
    lam = _initial_lam(p, lam0)
    mon = _Monitor(p, cfg, observer)
    status = None
    for k in range(cfg.max_iter):
        x_prev = [x1, x2]
        clock = _Clock(cfg.timing)
        with clock:
            x1 = s1.solve(block_target(p, [A1 @ x1, A2 @ x2], lam, rho, 0), x1)
            x2 = s2.solve(block_target(p, [A1 @ x1, A2 @ x2], lam, rho, 1), x2)
        lam, _ = multiplier_step(p, [x1, x2], lam, rho)
        status = mon.record(k, x_prev, [x1, x2], lam, clock.total)
        if status:
            break
    return mon.trace, mon.report(status, [x1, x2], lam)


def run_gauss_seidel(p: BlockProblem, cfg: SolverConfig = None, *, x0=None, lam0=None, observer=None, order=None):
    """Direct Gauss-Seidel extension to N blocks.

    Blocks are updated sequentially (``order``, default index order), each
    using the latest values of the blocks already updated in the sweep;
    the multiplier is updated once per sweep.  Not convergent in general:
    a ``Diverged`` status is a legitimate outcome.
    """
    cfg = cfg or SolverConfig()
    rho = cfg.rho
    order = list(range(p.N)) if order is None else list(order)
    solvers = block_solvers(p, rho)
    x = initial_point(p, x0)
    lam = _initial_lam(p, lam0)
    mon = _Monitor(p, cfg, observer)
    status = None
    for k in range(cfg.max_iter):
        clock = _Clock(cfg.timing)
        with clock:
            x_new = _gauss_seidel_sweep(p, solvers, x, lam, rho, order)
        lam, _ = multiplier_step(p, x_new, lam, rho)
        status = mon.record(k, x, x_new, lam, clock.total)
        x = x_new
        if status:
            break
    return mon.trace, mon.report(status, x, lam)


# ---------------------------------------------------------------------------
# Gaussian back substitution


@dataclass(frozen=True, eq=False)
class CorrectionMatrices:
    """Block data of the correction step ``H^{-1} M^T (v+ - v) = alpha (v~ - v)``.

    ``v = (x_2, ..., x_N, lam)``.  ``H`` holds the diagonal blocks
    ``rho A_i^T A_i`` (i >= 2) and ``I/rho``; ``M`` shares that diagonal
    and has strictly-lower blocks ``rho A_j^T A_i`` for j > i >= 2.
    Blocks are kept separately and never assembled into one matrix
    except by :meth:`dense` for diagnostics.
    """

    rho: float
    H: tuple
    M_lower: dict
    _factors: tuple

    @property
    def nblocks(self):
        return len(self.H)

    def back_substitute(self, rhs):
        """Solve ``H^{-1} M^T d = rhs`` from the last block (the multiplier)
        backwards."""
        nb = self.nblocks
        d = [None] * nb
        for a in range(nb - 1, -1, -1):
            acc = None
            for (j, i), Mji in self.M_lower.items():
                if i == a:
                    t = Mji.T @ d[j]
                    acc = t if acc is None else acc + t
            if acc is None:
                d[a] = np.array(rhs[a], dtype=float)
            else:
                d[a] = rhs[a] - sla.cho_solve(self._factors[a], acc)
        return d

    def apply(self, d):
        """Compute ``H^{-1} M^T d`` block by block."""
        nb = self.nblocks
        out = []
        for a in range(nb):
            acc = self.H[a] @ d[a]
            for (j, i), Mji in self.M_lower.items():
                if i == a:
                    acc = acc + Mji.T @ d[j]
            out.append(sla.cho_solve(self._factors[a], acc))
        return out

    def dense(self):
        """Dense ``(H, M)`` pair; diagnostics only."""
        sizes = [h.shape[0] for h in self.H]
        off = np.r_[0, np.cumsum(sizes)]
        n = off[-1]
        H = np.zeros((n, n))
        M = np.zeros((n, n))
        for a, h in enumerate(self.H):
            H[off[a]:off[a + 1], off[a]:off[a + 1]] = h
            M[off[a]:off[a + 1], off[a]:off[a + 1]] = h
        for (j, i), Mji in self.M_lower.items():
            M[off[j]:off[j + 1], off[i]:off[i + 1]] = Mji
        return H, M

    def check_structure(self, tol=1e-10):
        """Max deviation of ``H^{-1} M^T`` from block upper triangular with
        identity diagonal blocks."""
        sizes = [h.shape[0] for h in self.H]
        worst = 0.0
        for b in range(self.nblocks):
            # column block b of H^{-1} M^T, obtained by applying to unit blocks
            for col in range(sizes[b]):
                d = [np.zeros(s) for s in sizes]
                d[b][col] = 1.0
                out = self.apply(d)
                for a in range(self.nblocks):
                    if a > b:
                        worst = max(worst, np.abs(out[a]).max(initial=0.0))
                    elif a == b:
                        e = np.zeros(sizes[a])
                        e[col] = 1.0
                        worst = max(worst, np.abs(out[a] - e).max(initial=0.0))
        return worst


def build_correction_matrices(p: BlockProblem, rho: float) -> CorrectionMatrices:
    """Assemble and validate the correction-step blocks for ``p``.

    Raises :class:`SingularBlock` when some ``A_i^T A_i`` (i >= 2) is
    singular or too ill-conditioned for the identity-diagonal check.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    A = p.A
    H, factors = [], []
    for i in range(1, p.N):
        G = A[i].T @ A[i]
        if np.linalg.matrix_rank(A[i]) < A[i].shape[1] or np.linalg.cond(G) > 1e10:
            raise SingularBlock(f"A_{i}^T A_{i} is singular (block {i})", block=i)
        h = rho * G
        try:
            factors.append(sla.cho_factor(h))
        except np.linalg.LinAlgError as exc:
            raise SingularBlock(f"A_{i}^T A_{i} is not positive definite (block {i})", block=i) from exc
        H.append(h)
    lam_block = np.eye(p.m) / rho
    H.append(lam_block)
    factors.append(sla.cho_factor(lam_block))
    M_lower = {}
    for j in range(1, p.N):
        for i in range(1, j):
            M_lower[(j - 1, i - 1)] = rho * (A[j].T @ A[i])
    cm = CorrectionMatrices(rho, tuple(H), M_lower, tuple(factors))
    dev = cm.check_structure()
    if dev > 1e-10:
        raise SingularBlock(f"H^-1 M^T deviates from unit upper-triangular form by {dev:.2e}")
    return cm


def gbs_predict(p, solvers, x, lam, rho):
    """Prediction: one forward Gauss-Seidel sweep and the trial multiplier
    computed from the freshly predicted blocks."""
    xt = _gauss_seidel_sweep(p, solvers, x, lam, rho, range(p.N))
    lam_t, _ = multiplier_step(p, xt, lam, rho)
    return xt, lam_t


def gbs_correct(cm: CorrectionMatrices, x, lam, xt, lam_t, alpha):
    """Correction: back substitution for ``v = (x_2..x_N, lam)``; x_1 takes
    its predicted value."""
    rhs = [alpha * (xt[i] - x[i]) for i in range(1, len(x))] + [alpha * (lam_t - lam)]
    d = cm.back_substitute(rhs)
    x_new = [xt[0]] + [x[i] + d[i - 1] for i in range(1, len(x))]
    lam_new = lam + d[-1]
    return x_new, lam_new


def run_gbs(p: BlockProblem, cfg: SolverConfig = None, *, x0=None, lam0=None, observer=None):
    """ADMM with Gaussian back substitution (prediction + correction)."""
    cfg = cfg or SolverConfig()
    rho, alpha = cfg.rho, cfg.alpha
    cm = build_correction_matrices(p, rho)
    solvers = block_solvers(p, rho)
    x = initial_point(p, x0)
    lam = _initial_lam(p, lam0)
    mon = _Monitor(p, cfg, observer)
    status = None
    for k in range(cfg.max_iter):
        clock = _Clock(cfg.timing)
        with clock:
            xt, lam_t = gbs_predict(p, solvers, x, lam, rho)
        x_new, lam = gbs_correct(cm, x, lam, xt, lam_t, alpha)
        status = mon.record(k, x, x_new, lam, clock.total)
        x = x_new
        if status:
            break
    return mon.trace, mon.report(status, x, lam)


# ---------------------------------------------------------------------------
# Jacobi family


def jacobi_targets(p, x, lam, rho):
    """Targets ``v_i`` for every block, all computed from iteration-k values."""
    prods = [A @ xi for A, xi in zip(p.A, x)]
    return [block_target(p, prods, lam, rho, i) for i in range(p.N)]


class LocalTransport:
    """In-process gather/scatter used by the Jacobi-family loops.

    ``exchange(k, signals, work, order)`` hands ``signals[i]`` to worker
    ``i`` and returns the list of ``work(i, signals[i])`` results.  With a
    thread pool the solves run concurrently; results are merged by index,
    so iterates do not depend on scheduling.  :mod:`mbadmm.distsim`
    substitutes a transport that also logs every message.
    """

    def __init__(self, pool=None):
        self.pool = pool

    def exchange(self, k, signals, work, order=None):
        n = len(signals)
        order = range(n) if order is None else order
        out = [None] * n
        if self.pool is None:
            for i in order:
                out[i] = work(i, signals[i])
        else:
            futs = {i: self.pool.submit(work, i, signals[i]) for i in order}
            for i in range(n):
                out[i] = futs[i].result()
        return out

    def finish(self, k):
        pass


def _make_pool(cfg):
    return ThreadPoolExecutor(cfg.workers) if cfg.workers and cfg.workers > 1 else None


def _run_jacobi_family(p, cfg, prox_mats, gamma, x0, lam0, observer, order, transport=None):
    rho = cfg.rho
    order = list(range(p.N)) if order is None else list(order)
    if sorted(order) != list(range(p.N)):
        raise ValueError("order must be a permutation of the block indices")
    solvers = block_solvers(p, rho, prox_mats)
    x = initial_point(p, x0)
    lam = _initial_lam(p, lam0)
    mon = _Monitor(p, cfg, observer)
    status = None
    pool = _make_pool(cfg) if transport is None else None
    tp = transport or LocalTransport(pool)
    k = -1
    try:
        for k in range(cfg.max_iter):
            clock = _Clock(cfg.timing)
            with clock:
                targets = jacobi_targets(p, x, lam, rho)
                x_cur = x
                x_new = tp.exchange(k, targets, lambda i, v: solvers[i].solve(v, x_cur[i]), order)
            lam, _ = multiplier_step(p, x_new, lam, rho, gamma)
            status = mon.record(k, x, x_new, lam, clock.total)
            x = x_new
            if status:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    tp.finish(k)
    return mon.trace, mon.report(status, x, lam)


def run_jacobi(p: BlockProblem, cfg: SolverConfig = None, *, x0=None, lam0=None, observer=None, order=None,
               transport=None):
    """Direct Jacobian extension: all blocks updated from iteration-k values.

    ``order`` only changes the evaluation order of the block solves (and
    ``cfg.workers`` runs them on a thread pool); iterates do not depend on
    either.  Not convergent in general, even for two blocks.
    """
    cfg = cfg or SolverConfig()
    return _run_jacobi_family(p, cfg, None, 1.0, x0, lam0, observer, order, transport)


def run_prox_jacobi(p: BlockProblem, cfg: SolverConfig = None, *, x0=None, lam0=None, observer=None, order=None,
                    transport=None):
    """Proximal Jacobian ADMM.

    Block ``i`` adds ``1/2 ||x_i - x_i^k||_{P_i}^2`` (``cfg.prox``) to its
    Jacobi subproblem, and the multiplier step is damped by ``cfg.gamma``.
    With ``P_i = 0`` and ``gamma = 1`` this is exactly :func:`run_jacobi`.
    """
    cfg = cfg or SolverConfig()
    prox_mats = cfg.prox_matrices(p.dims)
    return _run_jacobi_family(p, cfg, prox_mats, cfg.gamma, x0, lam0, observer, order, transport)


def default_prox_weights(p: BlockProblem, rho: float, gamma: float, margin: float = 1.05):
    """Proximal matrices ``P_i = margin * rho * (N / (2 - gamma) - 1) A_i^T A_i``.

    This choice satisfies the sufficient condition
    ``P_i > rho (1/eps_i - 1) A_i^T A_i`` with ``sum eps_i < 2 - gamma``
    under which proximal Jacobian ADMM converges; ``gamma`` must be below 2.
    """
    if not 0 < gamma < 2:
        raise ValueError("gamma must lie in (0, 2)")
    c = margin * rho * (p.N / (2.0 - gamma) - 1.0)
    return [c * (A.T @ A) + 1e-12 * np.eye(A.shape[1]) for A in p.A]


# ---------------------------------------------------------------------------
# variable splitting


@dataclass
class SplitState:
    """Iterates of the split problem ``A_i x_i + z_i = c / N``, ``sum z_i = 0``."""

    x: list
    z: list
    lams: list


def split_targets(p, st: SplitState, rho):
    cN = p.rhs / p.N
    return [(cN - st.z[i]) + st.lams[i] / rho for i in range(p.N)]


def split_coordinate(p, x_new, st: SplitState, rho):
    """z-group update (projection onto the zero-sum set) and per-split
    multiplier updates.  Returns ``(z, lams, split_residuals)``."""
    N = p.N
    cN = p.rhs / N
    prods = [A @ xi for A, xi in zip(p.A, x_new)]
    w = [(cN + st.lams[i] / rho) - prods[i] for i in range(N)]
    total = np.zeros(p.m)
    for wi in w:
        total = total + wi
    mean = total / N
    z = [wi - mean for wi in w]
    res = [prods[i] + z[i] - cN for i in range(N)]
    lams = [st.lams[i] - rho * res[i] for i in range(N)]
    return z, lams, res


def aggregate_multiplier(lams):
    """Multiplier of the original coupling constraint recovered from the
    split multipliers (they agree at a solution)."""
    total = np.zeros_like(lams[0])
    for l in lams:
        total = total + l
    return total / len(lams)


def run_variable_splitting(p: BlockProblem, cfg: SolverConfig = None, *, x0=None, lam0=None, observer=None,
                           transport=None):
    """Variable-splitting ADMM.

    Introduces ``z_i`` with ``A_i x_i + z_i = c/N`` and ``sum z_i = 0`` and
    runs two-block ADMM on the groups ``{x_i}`` and ``{z_i}``.  The trace
    reports the residual of the original constraint; stopping additionally
    requires the split residual ``||(A_i x_i + z_i - c/N)_i||`` to be below
    ``tol_primal``, and the dual metric covers both ``x`` and ``z`` moves.
    The reported multiplier is the mean of the split multipliers.
    """
    cfg = cfg or SolverConfig()
    if p.N < 2:
        raise DimensionMismatch("variable splitting needs at least 2 blocks")
    rho = cfg.rho
    solvers = block_solvers(p, rho)
    x = initial_point(p, x0)
    lam_start = _initial_lam(p, lam0)
    st = SplitState(x=x, z=[np.zeros(p.m) for _ in range(p.N)], lams=[lam_start.copy() for _ in range(p.N)])
    mon = _Monitor(p, cfg, observer)
    tp = transport or LocalTransport()
    status = None
    k = -1
    for k in range(cfg.max_iter):
        clock = _Clock(cfg.timing)
        with clock:
            targets = split_targets(p, st, rho)
            x_cur = st.x
            x_new = tp.exchange(k, targets, lambda i, v: solvers[i].solve(v, x_cur[i]))
        z, lams, res = split_coordinate(p, x_new, st, rho)
        dual = rho * max(
            max(float(np.linalg.norm(A @ (b - a))) for A, a, b in zip(p.A, st.x, x_new)),
            max(float(np.linalg.norm(zn - zo)) for zn, zo in zip(z, st.z)),
        )
        split_norm = float(np.sqrt(sum(float(r @ r) for r in res)))
        lam = aggregate_multiplier(lams)
        x_prev = st.x
        st = SplitState(x=x_new, z=z, lams=lams)
        status = mon.record(k, x_prev, x_new, lam, clock.total, dual=dual, extra_primal=split_norm)
        if status:
            break
    tp.finish(k)
    return mon.trace, mon.report(status, st.x, aggregate_multiplier(st.lams), z=st.z, split_multipliers=st.lams)


ENGINES = {
    "two-block": run_two_block,
    "gauss-seidel": run_gauss_seidel,
    "jacobi": run_jacobi,
    "variable-splitting": run_variable_splitting,
    "gbs": run_gbs,
    "prox-jacobi": run_prox_jacobi,
}
