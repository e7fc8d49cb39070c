"""Subproblem solvers used inside ADMM iterations.

Every block update in the engines reduces either to a convex quadratic
program over one of the feasible-set vocabulary sets, or to a strongly
convex smooth minimization.  Inner tolerances default to ``1e-8``, two
orders tighter than the outer ``1e-6`` stopping test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    CrossedBounds,
    DimensionMismatch,
    Infeasible,
    MaxIterExceeded,
    NegativeCap,
    NonFiniteEncountered,
    SingularKkt,
)

INNER_TOL = 1e-8


# ---------------------------------------------------------------------------
# projections


def project_box(x, lower, upper):
    """Clamp ``x`` componentwise into ``[lower, upper]``."""
    x = np.asarray(x, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    if np.any(lower > upper):
        raise CrossedBounds("lower bound exceeds upper bound")
    return np.minimum(np.maximum(x, lower), upper)


def capped_threshold(x, cap):
    """Return ``tau >= 0`` with ``sum(max(x - tau, 0)) == cap``, or 0 if
    ``sum(max(x, 0)) <= cap`` already."""
    pos = np.maximum(x, 0.0)
    if pos.sum() <= cap:
        return 0.0
    # stable sort keeps equal entries in index order
    u = -np.sort(-x, kind="stable")
    css = np.cumsum(u)
    idx = np.arange(1, u.size + 1)
    cond = u - (css - cap) / idx > 0
    rho = idx[cond][-1]
    return max((css[rho - 1] - cap) / rho, 0.0)


def project_capped_simplexoid(x, cap):
    """Euclidean projection onto ``{y : y >= 0, sum(y) <= cap}``."""
    if not cap >= 0:
        raise NegativeCap(f"cap must be nonnegative, got {cap}")
    x = np.asarray(x, dtype=float)
    tau = capped_threshold(x, cap)
    return np.maximum(x - tau, 0.0)


# ---------------------------------------------------------------------------
# quadratic programs


@dataclass(frozen=True, eq=False)
class QpSpec:
    """``min 0.5 x^T Q x + q^T x`` over ``set``."""

    Q: np.ndarray
    q: np.ndarray
    set: object

    def solve(self, tol=INNER_TOL, max_iter=500, x0=None):
        from .problem import AffineEquality, Box, Free, NonNegCappedSum

        s = self.set
        n = self.q.shape[0]
        if isinstance(s, Free):
            return np.linalg.lstsq(self.Q, -self.q, rcond=None)[0]
        if isinstance(s, Box):
            return solve_box_qp(self.Q, self.q, s.lower, s.upper, tol=tol, max_iter=max_iter, x0=x0)
        if isinstance(s, AffineEquality):
            return solve_eq_qp(self.Q, self.q, s.E, s.d)
        if isinstance(s, NonNegCappedSum):
            G = np.vstack([-np.eye(n), np.ones((1, n))])
            h = np.r_[np.zeros(n), s.cap]
            return solve_qp(self.Q, self.q, G=G, h=h, tol=tol * 1e-2)
        raise TypeError(f"no QP solver for set {s!r}")


def _box_objective(Q, q, x):
    with np.errstate(over="ignore", invalid="ignore"):
        return 0.5 * x @ (Q @ x) + q @ x


def solve_box_qp(Q, q, lower, upper, *, tol=INNER_TOL, max_iter=500, x0=None):
    """Minimize ``0.5 x^T Q x + q^T x`` over a box by projected Newton.

    Each step solves the Newton system restricted to the variables not
    held at a bound, followed by an Armijo search along the projection
    arc.  A projected-gradient step is taken whenever the Newton step
    fails to make progress, so the method also works for singular ``Q``.
    Terminates when ``||x - P(x - grad)||_inf <= tol``.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
    if np.any(lo > hi):
        raise CrossedBounds("lower bound exceeds upper bound")
    x = project_box(np.zeros(n) if x0 is None else x0, lo, hi)
    L = max(float(np.linalg.eigvalsh(Q).max()) if n else 0.0, 1e-300)
    f = _box_objective(Q, q, x)
    for _ in range(max_iter):
        g = Q @ x + q
        if not np.all(np.isfinite(g)):
            raise NonFiniteEncountered("non-finite gradient in box QP")
        w = np.abs(x - project_box(x - g, lo, hi)).max(initial=0.0)
        if w <= tol:
            return x
        # Bertsekas' rule: the active-set margin shrinks with the residual
        eps = min(1e-3, w)
        active = ((x <= lo + eps) & (g > 0)) | ((x >= hi - eps) & (g < 0))
        free = ~active
        d = np.zeros(n)
        if free.any():
            # a tiny shift keeps singular faces solvable; flat directions
            # then get long steps that the projection arc cuts back
            QF = Q[np.ix_(free, free)] + (1e-10 * L) * np.eye(int(free.sum()))
            d[free] = np.linalg.solve(QF, -g[free])
        x_new, f_new = _arc_search(Q, q, x, f, g, d, lo, hi)
        if x_new is None:
            x_new, f_new = _arc_search(Q, q, x, f, g, -g / L, lo, hi)
        if x_new is not None and not (np.isfinite(f_new) and np.abs(x_new).max() < 1e100):
            raise Infeasible("box QP is unbounded below")
        if x_new is None:
            # no decrease along either direction: already optimal to rounding
            return x
        x, f = x_new, f_new
    raise MaxIterExceeded(f"box QP did not reach tolerance {tol} in {max_iter} iterations", best=x)


def _arc_search(Q, q, x, f, g, d, lo, hi, shrink=0.5, c1=1e-4, tries=60):
    t = 1.0
    for _ in range(tries):
        xt = project_box(x + t * d, lo, hi)
        step = xt - x
        if not np.any(step):
            return None, None
        ft = _box_objective(Q, q, xt)
        if ft <= f + c1 * (g @ step):
            return xt, ft
        t *= shrink
    return None, None


def solve_eq_qp(Q, q, E, d):
    """Minimize ``0.5 x^T Q x + q^T x`` subject to ``E x = d`` via the KKT system."""
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    E = np.atleast_2d(np.asarray(E, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    n, p = q.shape[0], E.shape[0]
    if Q.shape != (n, n) or E.shape[1] != n or d.shape[0] != p:
        raise DimensionMismatch("inconsistent KKT dimensions")
    if p and np.linalg.matrix_rank(E) < p:
        raise SingularKkt("equality matrix is rank deficient")
    K = np.block([[Q, E.T], [E, np.zeros((p, p))]])
    if np.linalg.cond(K) > 1e14:
        raise SingularKkt("KKT matrix is singular")
    sol = np.linalg.solve(K, np.r_[-q, d])
    x = sol[:n]
    scale = 1.0 + np.abs(d).max(initial=0.0) + np.abs(E).max(initial=0.0) * np.abs(x).max(initial=0.0)
    if p and np.abs(E @ x - d).max() > 1e-9 * scale:
        raise SingularKkt("KKT solve lost feasibility")
    return x


# scaled KKT residual at which a stalled interior-point run still returns
# its best iterate
_ACCEPT = 1e-7


def solve_qp(Q, q, E=None, d=None, G=None, h=None, *, tol=1e-10, max_iter=100):
    """Minimize ``0.5 x^T Q x + q^T x`` s.t. ``E x = d``, ``G x <= h``.

    Dense Mehrotra predictor-corrector interior-point method.  ``Q`` only
    needs to be positive semidefinite as long as the reduced KKT systems
    stay nonsingular, which holds whenever every zero-curvature direction
    is limited by an inequality.  Raises :class:`Infeasible` when the
    iteration blows up or stalls with a large primal residual.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    d = np.zeros(0) if d is None else np.asarray(d, dtype=float).reshape(-1)
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    p, mi = E.shape[0], G.shape[0]
    if E.shape[1] != n or G.shape[1] != n or d.shape[0] != p or h.shape[0] != mi:
        raise DimensionMismatch("inconsistent QP dimensions")

    x = np.zeros(n)
    y = np.zeros(p)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(mi)
    sq = 1.0 + np.abs(q).max(initial=0.0)
    sd = 1.0 + np.abs(d).max(initial=0.0)
    sh = 1.0 + np.abs(h).max(initial=0.0)

    def kkt_solve(W, rhs_x, rhs_y):
        K = np.block([[Q + G.T @ (W[:, None] * G), E.T], [E, np.zeros((p, p))]])
        try:
            sol = np.linalg.solve(K, np.r_[rhs_x, rhs_y])
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, np.r_[rhs_x, rhs_y], rcond=None)[0]
        return sol[:n], sol[n:]

    best_x, best_merit = x, np.inf
    for _ in range(max_iter):
        rd = Q @ x + q + E.T @ y + G.T @ z
        re = E @ x - d
        ri = G @ x + s - h
        mu = (s @ z) / mi if mi else 0.0
        merit = max(
            np.abs(rd).max(initial=0.0) / sq,
            np.abs(re).max(initial=0.0) / sd,
            np.abs(ri).max(initial=0.0) / sh,
            mu / max(sq, sh),
        )
        if merit <= tol:
            return x
        if merit < best_merit:
            best_x, best_merit = x, merit
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))) or np.abs(x).max(initial=0) > 1e14 or np.abs(z).max(initial=0) > 1e14:
            # late blow-ups come from the ill-conditioned KKT system near
            # the solution; keep the best iterate if it was good enough
            if best_merit <= _ACCEPT:
                return best_x
            raise Infeasible("interior-point iterates diverged; problem looks infeasible")

        W = z / s

        def direction(rc):
            # rc is the complementarity right-hand side for S dz + Z ds = rc
            rhs_x = -rd - G.T @ ((rc + z * ri) / s)
            dx, dy = kkt_solve(W, rhs_x, -re)
            ds = -ri - G @ dx
            dz = (rc - z * ds) / s
            return dx, dy, ds, dz

        dx, dy, ds, dz = direction(-s * z)
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        if mi:
            mu_aff = ((s + a_aff * ds) @ (z + a_aff * dz)) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, ds, dz = direction(-s * z - ds * dz + sigma * mu)
        a = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + a * dx
        y = y + a * dy
        s = s + a * ds
        z = z + a * dz

    if best_merit <= _ACCEPT:
        return best_x
    rp = max(np.abs(E @ x - d).max(initial=0.0) / sd, np.abs(G @ x + s - h).max(initial=0.0) / sh)
    if rp > 1e-6:
        raise Infeasible(f"interior-point method stalled with primal residual {rp:.3g}")
    raise MaxIterExceeded(f"interior-point method did not converge in {max_iter} iterations", best=x)


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, (-v[neg] / dv[neg]).min()))


# ---------------------------------------------------------------------------
# smooth minimization


@dataclass(frozen=True, eq=False)
class SmoothSpec:
    """A strongly convex smooth objective for :func:`minimize_smooth`.

    ``hess`` is optional; when present (and ``n <= 64``) a damped Newton
    method is used, otherwise gradient descent with step ``1/lipschitz``.
    ``fun`` may return ``inf`` outside its domain.
    """

    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    mu: float
    lipschitz: float
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.lipschitz < self.mu:
            raise ValueError("lipschitz bound must be at least the strong convexity modulus")


def minimize_smooth(spec: SmoothSpec, tol=INNER_TOL, max_iter=1000):
    """Minimize a strongly convex smooth function until ``||grad||_2 <= tol``."""
    if not spec.mu > 0:
        raise ValueError("minimize_smooth needs a strongly convex objective (mu > 0)")
    x = np.array(spec.x0, dtype=float)
    fx = spec.fun(x)
    if not np.isfinite(fx):
        raise NonFiniteEncountered("objective is not finite at the start point")
    use_newton = spec.hess is not None and x.shape[0] <= 64
    for _ in range(max_iter):
        g = spec.grad(x)
        if not np.all(np.isfinite(g)):
            raise NonFiniteEncountered("non-finite gradient")
        gn = np.linalg.norm(g)
        if gn <= tol:
            return x
        if use_newton:
            step = -np.linalg.solve(spec.hess(x), g)
            t = 1.0
            for _ in range(60):
                xt = x + t * step
                ft = spec.fun(xt)
                if np.isfinite(ft) and ft <= fx + 1e-4 * t * (g @ step):
                    break
                t *= 0.5
            else:
                # rounding floor reached: accept the full Newton step if the
                # gradient still shrinks
                xt = x + step
                ft = spec.fun(xt)
                if not (np.isfinite(ft) and np.linalg.norm(spec.grad(xt)) < gn):
                    raise MaxIterExceeded("Newton line search failed", best=x)
            x, fx = xt, ft
        else:
            x = x - g / spec.lipschitz
            fx = spec.fun(x)
            if not np.isfinite(fx):
                raise NonFiniteEncountered("gradient step left the domain")
    raise MaxIterExceeded(f"smooth minimization did not reach {tol} in {max_iter} iterations", best=x)


def check_gradient(fun, grad, points, h=1e-6):
    """Central finite-difference check of ``grad`` at each point.

    Returns the worst relative error, measured as
    ``|fd - g| / max(1, |g|)`` over all coordinates and points.
    """
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        g = np.asarray(grad(x), dtype=float)
        for j in range(x.shape[0]):
            e = np.zeros_like(x)
            step = h * max(1.0, abs(x[j]))
            e[j] = step
            fd = (fun(x + e) - fun(x - e)) / (2 * step)
            worst = max(worst, abs(fd - g[j]) / max(1.0, abs(g[j])))
    return worst
