import cvxpy as cp
import numpy as np
import pytest

from mbadmm.errors import UnsupportedSubproblem
from mbadmm.problem import AffineEquality, Block, Box, Free, Linear, NegLogAffine, NonNegCappedSum, Quadratic, SmoothOracle
from mbadmm.subproblem import BlockSolver


def cvx_block(block, rho, v, x_prev, P=None):
    """Reference minimizer of f + rho/2||A x - v||^2 + 1/2||x - x_prev||_P^2 over the block set."""
    n = block.dim
    x = cp.Variable(n)
    obj = block.objective
    if isinstance(obj, Quadratic):
        f = 0.5 * cp.quad_form(x, cp.psd_wrap(obj.Q)) + obj.q @ x
    elif isinstance(obj, Linear):
        f = obj.q @ x
    elif isinstance(obj, NegLogAffine):
        f = -obj.w * cp.log(obj.a @ x + obj.b)
    else:
        f = 0
    f = f + rho / 2 * cp.sum_squares(block.coupling @ x - v)
    if P is not None:
        f = f + 0.5 * cp.quad_form(x - x_prev, cp.psd_wrap(P))
    s = block.set
    cons = []
    if isinstance(s, Box):
        cons = [x >= s.lower, x <= s.upper]
    elif isinstance(s, NonNegCappedSum):
        cons = [x >= 0, cp.sum(x) <= s.cap]
    elif isinstance(s, AffineEquality):
        cons = [s.E @ x == s.d]
    cp.Problem(cp.Minimize(f), cons).solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return x.value


def _blocks(rng, n=3, m=4):
    A = rng.normal(size=(m, n))
    M = rng.normal(size=(n, n))
    Q = Quadratic(M @ M.T, rng.normal(size=n))
    return [
        Block(n, Q, Free(), A),
        Block(n, Linear(rng.normal(size=n)), Box(-np.ones(n), np.ones(n)), A),
        Block(n, Q, NonNegCappedSum(1.5, n), A),
        Block(n, Q, AffineEquality(np.ones((1, n)), [0.5]), A),
        Block(n, NegLogAffine(np.abs(rng.normal(size=n)) + 0.1, 1.0, 2.0), Free(), A),
    ]


@pytest.mark.parametrize("seed", range(3))
def test_block_solutions_match_cvxpy(seed):
    rng = np.random.default_rng(seed)
    for block in _blocks(rng):
        for rho, P in [(1.0, None), (0.3, 0.7 * np.eye(3))]:
            v = rng.normal(size=4)
            x_prev = rng.uniform(0.0, 0.3, size=3)
            x = BlockSolver(0, block, rho, P).solve(v, x_prev)
            ref = cvx_block(block, rho, v, x_prev, P)
            assert np.allclose(x, ref, atol=2e-6), type(block.set).__name__


def test_capped_scaled_identity_is_projection():
    blk = Block(2, Quadratic(np.eye(2), np.zeros(2)), NonNegCappedSum(10.0, 2), np.zeros((1, 2)))
    s = BlockSolver(0, blk, 1.0)
    assert s.kind == "capped_scaled"
    assert np.allclose(s.solve(np.zeros(1), np.zeros(2)), [0.0, 0.0])
    blk = Block(2, Linear([-6.0, -6.0]), NonNegCappedSum(10.0, 2), np.zeros((1, 2)))
    assert np.allclose(BlockSolver(0, blk, 1.0, np.eye(2)).solve(np.zeros(1), np.zeros(2)), [5.0, 5.0])


def test_smooth_oracle_block():
    a = np.array([1.0, -2.0])
    obj = SmoothOracle(lambda x: float(np.sum(np.cosh(x - a))), lambda x: np.sinh(x - a), 2, 10.0)
    blk = Block(2, obj, Free(), np.eye(2))
    x = BlockSolver(0, blk, 1.0).solve(np.zeros(2), np.zeros(2))
    assert np.allclose(np.sinh(x - a) + x, 0.0, atol=1e-7)


def test_smooth_on_constrained_set_rejected():
    blk = Block(1, NegLogAffine([1.0]), Box([0.0], [1.0]), np.ones((1, 1)))
    with pytest.raises(UnsupportedSubproblem, match="block 4"):
        BlockSolver(4, blk, 1.0)


def test_smooth_without_curvature_rejected():
    blk = Block(2, NegLogAffine([1.0, 1.0]), Free(), np.array([[1.0, 1.0]]))
    with pytest.raises(UnsupportedSubproblem):
        BlockSolver(0, blk, 1.0)
