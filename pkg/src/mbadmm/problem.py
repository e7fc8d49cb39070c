"""Block-structured convex problems.

A :class:`BlockProblem` is

.. math::

    \\min_{x_1,\\ldots,x_N} \\sum_i f_i(x_i) \\quad \\text{s.t.} \\quad
    \\sum_i A_i x_i = c, \\quad x_i \\in X_i,

with each objective term ``f_i`` and feasible set ``X_i`` drawn from the
small vocabulary defined here.  Everything is immutable once assembled,
so instances can be shared freely between engine workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, InvalidSet, NonPSD, NegativeCap, CrossedBounds

#: slack allowed when deciding whether a point lies in a feasible set
SET_TOL = 1e-9


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# objective terms


@dataclass(frozen=True)
class Zero:
    """The zero function."""

    dim = None

    def value(self, x):
        return 0.0

    def gradient(self, x):
        return np.zeros_like(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Linear:
    """``q^T x``."""

    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _frozen(self.q, 1, "q"))

    @property
    def dim(self):
        return self.q.shape[0]

    def value(self, x):
        return float(self.q @ x)

    def gradient(self, x):
        return self.q.copy()


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``0.5 x^T Q x + q^T x + r`` with ``Q`` symmetric positive semidefinite."""

    Q: np.ndarray
    q: Optional[np.ndarray] = None
    r: float = 0.0

    def __post_init__(self):
        Q = _frozen(self.Q, 2, "Q")
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise DimensionMismatch(f"Q must be square, got {Q.shape}")
        q = np.zeros(n) if self.q is None else self.q
        q = _frozen(q, 1, "q")
        if q.shape[0] != n:
            raise DimensionMismatch(f"q has length {q.shape[0]}, Q is {n}x{n}")
        scale = max(1.0, float(np.abs(Q).max(initial=0.0)))
        if np.abs(Q - Q.T).max(initial=0.0) > 1e-12 * scale:
            raise NonPSD("quadratic term is not symmetric")
        if n and np.linalg.eigvalsh(Q).min() < -1e-10 * np.linalg.norm(Q, 2):
            raise NonPSD("quadratic term is not positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", float(self.r))

    @property
    def dim(self):
        return self.Q.shape[0]

    def value(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.r)

    def gradient(self, x):
        return self.Q @ x + self.q


@dataclass(frozen=True, eq=False)
class NegLogAffine:
    """``-w log(a^T x + b)``; ``+inf`` outside the domain ``a^T x + b > 0``."""

    a: np.ndarray
    b: float = 1.0
    w: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a, 1, "a"))
        if not self.b > 0:
            raise InvalidSet("NegLogAffine needs b > 0")
        if not self.w > 0:
            raise InvalidSet("NegLogAffine needs w > 0")
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "w", float(self.w))

    @property
    def dim(self):
        return self.a.shape[0]

    def value(self, x):
        s = float(self.a @ x) + self.b
        if s <= 0:
            return math.inf
        return -self.w * math.log(s)

    def gradient(self, x):
        s = float(self.a @ x) + self.b
        return (-self.w / s) * self.a

    def hessian(self, x):
        s = float(self.a @ x) + self.b
        return (self.w / (s * s)) * np.outer(self.a, self.a)


@dataclass(frozen=True, eq=False)
class SmoothOracle:
    """User-supplied smooth convex term given by value and gradient callbacks.

    ``lipschitz`` bounds the gradient's Lipschitz constant; it fixes the
    step length of the gradient method that minimizes subproblems
    containing this term.
    """

    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    n: int
    lipschitz: float

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise InvalidSet("SmoothOracle needs a positive Lipschitz bound")

    @property
    def dim(self):
        return self.n

    def value(self, x):
        return float(self.fun(x))

    def gradient(self, x):
        return np.asarray(self.grad(x), dtype=float)


ObjectiveTerm = Union[Zero, Linear, Quadratic, NegLogAffine, SmoothOracle]


# ---------------------------------------------------------------------------
# feasible sets


@dataclass(frozen=True)
class Free:
    dim = None

    def contains(self, x, tol=SET_TOL):
        return True

    def project(self, x):
        return np.array(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Box:
    """``lower <= x <= upper``; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lower, 1, "lower")
        hi = _frozen(self.upper, 1, "upper")
        if lo.shape != hi.shape:
            raise DimensionMismatch("box bounds differ in length")
        if np.any(lo > hi):
            raise CrossedBounds("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]

    def contains(self, x, tol=SET_TOL):
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def project(self, x):
        from .prox import project_box

        return project_box(x, self.lower, self.upper)


@dataclass(frozen=True)
class NonNegCappedSum:
    """``x >= 0`` and ``sum(x) <= cap``."""

    cap: float
    n: int

    def __post_init__(self):
        if not self.cap >= 0:
            raise NegativeCap(f"cap must be nonnegative, got {self.cap}")
        object.__setattr__(self, "cap", float(self.cap))

    @property
    def dim(self):
        return self.n

    def contains(self, x, tol=SET_TOL):
        return bool(np.all(x >= -tol) and x.sum() <= self.cap + tol)

    def project(self, x):
        from .prox import project_capped_simplexoid

        return project_capped_simplexoid(x, self.cap)


@dataclass(frozen=True, eq=False)
class AffineEquality:
    """``E x = d`` with ``E`` of full row rank."""

    E: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        E = _frozen(self.E, 2, "E")
        d = _frozen(self.d, 1, "d")
        if E.shape[0] != d.shape[0]:
            raise DimensionMismatch("E and d disagree on the number of rows")
        if np.linalg.matrix_rank(E) < E.shape[0]:
            raise InvalidSet("E must have full row rank")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "d", d)

    @property
    def dim(self):
        return self.E.shape[1]

    def contains(self, x, tol=SET_TOL):
        return bool(np.all(np.abs(self.E @ x - self.d) <= tol))

    def project(self, x):
        from .prox import solve_eq_qp

        n = self.dim
        return solve_eq_qp(np.eye(n), -np.asarray(x, float), self.E, self.d)


@dataclass(frozen=True)
class ZeroSumAcrossBlocks:
    """Marker for the set ``{z : sum_i z_i = 0}`` used by variable splitting.

    Membership involves every block at once, so per-block checks accept
    any point.
    """

    dim = None

    def contains(self, x, tol=SET_TOL):
        return True


FeasibleSet = Union[Free, Box, NonNegCappedSum, AffineEquality, ZeroSumAcrossBlocks]


# ---------------------------------------------------------------------------
# problems and block vectors


@dataclass(frozen=True, eq=False)
class Block:
    dim: int
    objective: ObjectiveTerm
    set: FeasibleSet
    coupling: np.ndarray


@dataclass(frozen=True, eq=False)
class BlockProblem:
    blocks: tuple
    rhs: np.ndarray

    @property
    def N(self):
        return len(self.blocks)

    @property
    def m(self):
        return self.rhs.shape[0]

    @property
    def dims(self):
        return [b.dim for b in self.blocks]

    @property
    def A(self):
        return [b.coupling for b in self.blocks]

    def zeros(self):
        return BlockVector([np.zeros(n) for n in self.dims])


class BlockVector:
    """Per-block segments ``x_1, ..., x_N`` of a stacked vector."""

    __slots__ = ("segments",)

    def __init__(self, segments):
        self.segments = tuple(np.array(s, dtype=float).reshape(-1) for s in segments)

    @classmethod
    def from_flat(cls, flat, dims):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (sum(dims),):
            raise DimensionMismatch(f"flat vector of length {flat.size} does not match dims {dims}")
        return cls(np.split(flat, np.cumsum(dims)[:-1]))

    @property
    def flat(self):
        if not self.segments:
            return np.zeros(0)
        return np.concatenate(self.segments)

    def copy(self):
        return BlockVector([s.copy() for s in self.segments])

    def __len__(self):
        return len(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def __iter__(self):
        return iter(self.segments)

    def __repr__(self):
        return f"BlockVector({[s.tolist() for s in self.segments]})"


def as_block_vector(p: BlockProblem, x) -> BlockVector:
    """Coerce ``x`` (BlockVector, sequence of segments, or flat array) to match ``p``."""
    if isinstance(x, BlockVector):
        bv = x
    elif isinstance(x, np.ndarray) and x.ndim == 1:
        bv = BlockVector.from_flat(x, p.dims)
    else:
        bv = BlockVector(x)
    if len(bv) != p.N:
        raise DimensionMismatch(f"expected {p.N} blocks, got {len(bv)}")
    for i, (seg, n) in enumerate(zip(bv, p.dims)):
        if seg.shape[0] != n:
            raise DimensionMismatch(f"block {i}: segment has length {seg.shape[0]}, expected {n}")
    return bv


def assemble_problem(blocks: Sequence, rhs) -> BlockProblem:
    """Validate block specs and build a :class:`BlockProblem`.

    Each entry of ``blocks`` is a :class:`Block` or a mapping/tuple with
    ``coupling``, and optionally ``objective`` (default :class:`Zero`),
    ``set`` (default :class:`Free`) and ``dim`` (default: column count of
    the coupling matrix).
    """
    if len(blocks) == 0:
        raise DimensionMismatch("a problem needs at least one block")
    c = _frozen(rhs, 1, "rhs")
    m = c.shape[0]
    built = []
    for i, spec in enumerate(blocks):
        if isinstance(spec, Block):
            dim, obj, fset, A = spec.dim, spec.objective, spec.set, spec.coupling
        elif isinstance(spec, dict):
            A = spec["coupling"]
            obj = spec.get("objective", Zero())
            fset = spec.get("set", Free())
            dim = spec.get("dim")
        else:
            A, obj, fset = spec[0], spec[1], spec[2]
            dim = None
        A = np.array(A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(-1, 1)
        if A.ndim != 2:
            raise DimensionMismatch(f"block {i}: coupling matrix must be 2-D")
        if A.shape[0] != m:
            raise DimensionMismatch(
                f"block {i}: coupling matrix has {A.shape[0]} rows, rhs has {m}"
            )
        dim = A.shape[1] if dim is None else int(dim)
        if dim < 1 or A.shape[1] != dim:
            raise DimensionMismatch(f"block {i}: dim {dim} does not match coupling {A.shape}")
        for what, item in (("objective", obj), ("set", fset)):
            if item.dim is not None and item.dim != dim:
                raise DimensionMismatch(f"block {i}: {what} has dimension {item.dim}, block has {dim}")
        A.setflags(write=False)
        built.append(Block(dim, obj, fset, A))
    return BlockProblem(tuple(built), c)


def primal_residual(p: BlockProblem, x) -> np.ndarray:
    """``sum_i A_i x_i - c``."""
    x = as_block_vector(p, x)
    r = np.zeros(p.m)
    for A, xi in zip(p.A, x):
        r = r + A @ xi
    return r - p.rhs


def objective_value(p: BlockProblem, x) -> float:
    """Sum of the block objectives, ``+inf`` if some block leaves its set."""
    x = as_block_vector(p, x)
    total = 0.0
    for blk, xi in zip(p.blocks, x):
        if not blk.set.contains(xi):
            return math.inf
        total += blk.objective.value(xi)
    return total


def dual_residual_metric(p: BlockProblem, x_prev, x_curr, rho: float) -> float:
    """Stopping heuristic ``rho * max_i ||A_i (x_i^k - x_i^{k-1})||``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    x_prev = as_block_vector(p, x_prev)
    x_curr = as_block_vector(p, x_curr)
    worst = 0.0
    for A, a, b in zip(p.A, x_prev, x_curr):
        worst = max(worst, float(np.linalg.norm(A @ (b - a))))
    return rho * worst


# ---------------------------------------------------------------------------
# JSON documents


def _objective_to_dict(obj):
    if isinstance(obj, Zero):
        return {"kind": "zero"}
    if isinstance(obj, Linear):
        return {"kind": "linear", "q": obj.q.tolist()}
    if isinstance(obj, Quadratic):
        return {"kind": "quadratic", "Q": obj.Q.tolist(), "q": obj.q.tolist(), "r": obj.r}
    if isinstance(obj, NegLogAffine):
        return {"kind": "neglog_affine", "a": obj.a.tolist(), "b": obj.b, "w": obj.w}
    raise TypeError(f"{type(obj).__name__} objectives cannot be serialized")


def _objective_from_dict(d):
    kind = d["kind"]
    if kind == "zero":
        return Zero()
    if kind == "linear":
        return Linear(d["q"])
    if kind == "quadratic":
        return Quadratic(d["Q"], d.get("q"), d.get("r", 0.0))
    if kind == "neglog_affine":
        return NegLogAffine(d["a"], d.get("b", 1.0), d.get("w", 1.0))
    raise ValueError(f"unknown objective kind {kind!r}")


def _set_to_dict(s):
    if isinstance(s, Free):
        return {"kind": "free"}
    if isinstance(s, Box):
        return {"kind": "box", "lower": s.lower.tolist(), "upper": s.upper.tolist()}
    if isinstance(s, NonNegCappedSum):
        return {"kind": "nonneg_capped_sum", "cap": s.cap, "n": s.n}
    if isinstance(s, AffineEquality):
        return {"kind": "affine_equality", "E": s.E.tolist(), "d": s.d.tolist()}
    if isinstance(s, ZeroSumAcrossBlocks):
        return {"kind": "zero_sum"}
    raise TypeError(f"cannot serialize set {s!r}")


def _set_from_dict(d, dim):
    kind = d["kind"]
    if kind == "free":
        return Free()
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "nonneg_capped_sum":
        return NonNegCappedSum(d["cap"], d.get("n", dim))
    if kind == "affine_equality":
        return AffineEquality(d["E"], d["d"])
    if kind == "zero_sum":
        return ZeroSumAcrossBlocks()
    raise ValueError(f"unknown set kind {kind!r}")


def problem_to_dict(p: BlockProblem) -> dict:
    return {
        "rhs": p.rhs.tolist(),
        "blocks": [
            {
                "dim": b.dim,
                "objective": _objective_to_dict(b.objective),
                "set": _set_to_dict(b.set),
                "coupling": b.coupling.tolist(),
            }
            for b in p.blocks
        ],
    }


def problem_from_dict(doc: dict) -> BlockProblem:
    blocks = []
    for b in doc["blocks"]:
        dim = int(b["dim"])
        blocks.append(
            {
                "dim": dim,
                "coupling": b["coupling"],
                "objective": _objective_from_dict(b.get("objective", {"kind": "zero"})),
                "set": _set_from_dict(b.get("set", {"kind": "free"}), dim),
            }
        )
    return assemble_problem(blocks, doc["rhs"])


def dumps_problem(p: BlockProblem, **kw) -> str:
    return json.dumps(problem_to_dict(p), **kw)


def loads_problem(text: str) -> BlockProblem:
    return problem_from_dict(json.loads(text))
