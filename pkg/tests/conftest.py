import numpy as np
import pytest

from mbadmm.problem import assemble_problem


def kkt_oracle(p):
    """Centralized solution of a free, all-quadratic block problem.

    Stationarity ``Q x + q - A^T lam = 0`` and feasibility ``A x = c``
    solved as one dense linear system, independently of the package's
    own solvers.
    """
    Qs = [b.objective.Q for b in p.blocks]
    n = sum(Q.shape[0] for Q in Qs)
    Q = np.zeros((n, n))
    off = 0
    for Qi in Qs:
        k = Qi.shape[0]
        Q[off:off + k, off:off + k] = Qi
        off += k
    q = np.concatenate([b.objective.q for b in p.blocks])
    A = np.hstack([b.coupling for b in p.blocks])
    m = A.shape[0]
    K = np.block([[Q, -A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-q, p.rhs]))
    x = sol[:n]
    return x, sol[n:], float(0.5 * x @ Q @ x + q @ x + sum(b.objective.r for b in p.blocks))


def scalar_columns_problem(cols, rhs=None):
    cols = [np.asarray(c, dtype=float).reshape(-1, 1) for c in cols]
    m = cols[0].shape[0]
    return assemble_problem([{"coupling": c} for c in cols], np.zeros(m) if rhs is None else rhs)


def iteration_map_radius(cols, rho=1.0, sequential=True):
    """Spectral radius of the linear ADMM map on ``(x, lam)`` for zero
    objectives, free scalar blocks and ``c = 0``.

    Written from the closed-form block minimizer
    ``x_i = a_i^T v_i / a_i^T a_i`` so it does not share code with the
    engines.
    """
    a = [np.asarray(c, dtype=float) for c in cols]
    N, m = len(a), a[0].size
    n = N + m
    M = np.zeros((n, n))
    for col in range(n):
        e = np.zeros(n)
        e[col] = 1.0
        x = list(e[:N])
        lam = e[N:]
        old = list(x)
        for i in range(N):
            src = x if sequential else old
            v = lam / rho - sum(a[j] * src[j] for j in range(N) if j != i)
            x[i] = a[i] @ v / (a[i] @ a[i])
        r = sum(a[i] * x[i] for i in range(N))
        M[:, col] = np.concatenate([x, lam - rho * r])
    return float(np.abs(np.linalg.eigvals(M)).max())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
