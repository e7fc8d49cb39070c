"""Dispatch of block updates onto the prox kit.

Every engine needs, for block ``i``,

    argmin_x  f_i(x) + rho/2 ||A_i x - v||^2 + 1/2 ||x - x_prev||_P^2   s.t. x in X_i

for a target vector ``v`` that depends on the algorithm.  :func:`block_solver`
inspects the objective/set pair once, before iteration starts, and returns
a :class:`BlockSolver` with any factorization cached.  Unsupported pairs
fail here with :class:`UnsupportedSubproblem`.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from . import prox
from .errors import Infeasible, UnsupportedSubproblem
from .problem import (
    AffineEquality,
    Box,
    Free,
    Linear,
    NegLogAffine,
    NonNegCappedSum,
    Quadratic,
    SmoothOracle,
    Zero,
)


class BlockSolver:
    """Solver for one block's augmented-Lagrangian subproblem."""

    def __init__(self, index, block, rho, P=None, inner_tol=prox.INNER_TOL):
        self.index = index
        self.block = block
        self.rho = rho
        self.P = P
        self.inner_tol = inner_tol
        A = block.coupling
        self.A = A
        H = rho * (A.T @ A)
        if P is not None:
            H = H + P
        obj, fset = block.objective, block.set
        self.smooth = isinstance(obj, (NegLogAffine, SmoothOracle))
        if isinstance(obj, Quadratic):
            H = H + obj.Q
        self.H = H
        self.q = obj.q if isinstance(obj, (Linear, Quadratic)) else None

        if self.smooth:
            if not isinstance(fset, Free):
                raise UnsupportedSubproblem(
                    f"block {index}: smooth objectives are only supported on free blocks"
                )
            ev = np.linalg.eigvalsh(H)
            self.mu, self.L_quad = float(ev.min()), float(ev.max())
            if not self.mu > 1e-12 * max(1.0, self.L_quad):
                raise UnsupportedSubproblem(
                    f"block {index}: smooth subproblem is not strongly convex; add a proximal term"
                )
            self.kind = "smooth"
        elif isinstance(obj, (Zero, Linear, Quadratic)):
            if isinstance(fset, Free):
                self.kind = "linear"
                try:
                    self._chol = sla.cho_factor(H)
                except np.linalg.LinAlgError:
                    self._chol = None
                    self._pinv = np.linalg.pinv(H)
            elif isinstance(fset, Box):
                self.kind = "box"
            elif isinstance(fset, AffineEquality):
                self.kind = "eq"
            elif isinstance(fset, NonNegCappedSum):
                d = np.diag(H)
                if np.count_nonzero(H - np.diag(d)) == 0 and np.all(d == d[0]) and d[0] > 0:
                    self.kind = "capped_scaled"
                else:
                    self.kind = "capped_qp"
            else:
                raise UnsupportedSubproblem(f"block {index}: no solver for set {type(fset).__name__}")
        else:
            raise UnsupportedSubproblem(f"block {index}: unknown objective {type(obj).__name__}")

    def linear_term(self, v, x_prev):
        g = -self.rho * (self.A.T @ v)
        if self.q is not None:
            g = g + self.q
        if self.P is not None:
            g = g - self.P @ x_prev
        return g

    def solve(self, v, x_prev):
        """Return the minimizer for target ``v`` and previous iterate ``x_prev``."""
        g = self.linear_term(v, x_prev)
        fset = self.block.set
        kind = self.kind
        if kind == "linear":
            if self._chol is not None:
                return sla.cho_solve(self._chol, -g)
            x = self._pinv @ (-g)
            if np.abs(self.H @ x + g).max() > 1e-8 * (1.0 + np.abs(g).max()):
                raise Infeasible(f"block {self.index}: subproblem is unbounded below")
            return x
        if kind == "box":
            return prox.solve_box_qp(self.H, g, fset.lower, fset.upper, tol=self.inner_tol, x0=x_prev)
        if kind == "eq":
            return prox.solve_eq_qp(self.H, g, fset.E, fset.d)
        if kind == "capped_scaled":
            return prox.project_capped_simplexoid(-g / self.H[0, 0], fset.cap)
        if kind == "capped_qp":
            return prox.QpSpec(self.H, g, fset).solve(tol=self.inner_tol)
        return self._solve_smooth(g, x_prev)

    def _solve_smooth(self, g, x_prev):
        obj = self.block.objective
        H = self.H

        def fun(x):
            return obj.value(x) + 0.5 * x @ (H @ x) + g @ x

        def grad(x):
            return obj.gradient(x) + H @ x + g

        x0 = np.array(x_prev, dtype=float)
        if isinstance(obj, NegLogAffine):

            def hess(x):
                return obj.hessian(x) + H

            slack = obj.a @ x0 + obj.b
            if not slack > 0:
                x0 = x0 + ((1.0 - slack) / (obj.a @ obj.a)) * obj.a
            L = self.L_quad + obj.w * (obj.a @ obj.a) / max(obj.a @ x0 + obj.b, 1e-12) ** 2
        else:
            hess = None
            L = self.L_quad + obj.lipschitz
        spec = prox.SmoothSpec(fun, grad, x0, self.mu, max(L, self.mu), hess)
        return prox.minimize_smooth(spec, tol=self.inner_tol, max_iter=100000)


def block_solvers(p, rho, prox_mats=None):
    if prox_mats is None:
        prox_mats = [None] * p.N
    return [BlockSolver(i, b, rho, P) for i, (b, P) in enumerate(zip(p.blocks, prox_mats))]
