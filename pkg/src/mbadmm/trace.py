"""Solver configuration, iteration traces and convergence reports."""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .problem import BlockVector

TRACE_COLUMNS = ("k", "objective", "primal_residual", "dual_metric", "block_ms")


@dataclass
class SolverConfig:
    """Parameters shared by every engine.

    ``prox`` holds the proximal weights ``P_i``: ``None`` (no proximal
    term), a scalar (``prox * I`` for every block) or a per-block list of
    scalars / matrices.  ``timing`` turns on per-iteration wall-clock
    recording; it is off by default so traces stay bit-reproducible.
    """

    rho: float = 1.0
    gamma: float = 1.0
    alpha: float = 0.5
    prox: object = None
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    max_iter: int = 10000
    divergence_threshold: float = 1e8
    seed: int = 0
    timing: bool = False
    workers: Optional[int] = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.divergence_threshold > 0:
            raise ValueError("divergence_threshold must be positive")

    def prox_matrices(self, dims: Sequence[int]):
        """Expand ``prox`` into one matrix (or ``None``) per block."""
        from .errors import DimensionMismatch, NonPSD

        P = self.prox
        if P is None:
            return [None] * len(dims)
        if np.isscalar(P):
            items = [P] * len(dims)
        else:
            items = list(P)
            if len(items) != len(dims):
                raise DimensionMismatch(f"{len(items)} proximal weights for {len(dims)} blocks")
        out = []
        for i, (Pi, n) in enumerate(zip(items, dims)):
            if Pi is None:
                out.append(None)
                continue
            if np.isscalar(Pi):
                if Pi < 0:
                    raise NonPSD(f"block {i}: negative proximal weight")
                out.append(None if Pi == 0 else float(Pi) * np.eye(n))
                continue
            M = np.array(Pi, dtype=float)
            if M.shape != (n, n):
                raise DimensionMismatch(f"block {i}: proximal matrix {M.shape}, block dim {n}")
            if np.abs(M - M.T).max() > 1e-12 * max(1.0, np.abs(M).max()):
                raise NonPSD(f"block {i}: proximal matrix is not symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
                raise NonPSD(f"block {i}: proximal matrix is not PSD")
            out.append(None if not M.any() else M)
        return out


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIterReached"
    DIVERGED = "Diverged"


class IterationTrace:
    """Append-only per-iteration record."""

    def __init__(self):
        self._rows = []

    def append(self, k, objective, primal_residual, dual_metric, block_ms=0.0):
        if self._rows and k <= self._rows[-1][0]:
            raise ValueError("iteration indices must increase")
        if not self._rows and k != 0:
            raise ValueError("traces start at k = 0")
        self._rows.append((int(k), float(objective), float(primal_residual), float(dual_metric), float(block_ms)))

    def __len__(self):
        return len(self._rows)

    def __iter__(self):
        return iter(self._rows)

    def __getitem__(self, i):
        return self._rows[i]

    def column(self, name):
        j = TRACE_COLUMNS.index(name)
        return np.array([r[j] for r in self._rows])

    def __eq__(self, other):
        if not isinstance(other, IterationTrace) or len(self) != len(other):
            return False
        a = np.array(self._rows, dtype=float).reshape(-1, 5)
        b = np.array(other._rows, dtype=float).reshape(-1, 5)
        return bool(np.array_equal(a, b, equal_nan=True))

    def to_csv(self, path_or_buf=None):
        """Write the trace as CSV; returns the text when no target is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k, *vals in self._rows:
            w.writerow([k] + [repr(v) for v in vals])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text):
        tr = cls()
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {rows[0]}")
        for r in rows[1:]:
            tr.append(int(r[0]), *map(float, r[1:]))
        return tr


@dataclass
class ConvergenceReport:
    status: Status
    iterations: int
    primal_residual: float
    dual_metric: float
    x: BlockVector
    lam: np.ndarray
    objective: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.status is Status.CONVERGED

    def to_dict(self):
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, BlockVector):
                return [s.tolist() for s in v]
            if isinstance(v, dict):
                return {k: clean(w) for k, w in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(w) for w in v]
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            return v

        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_metric": self.dual_metric,
            "objective": self.objective,
            "x": clean(self.x),
            "lambda": clean(self.lam),
            "extra": clean(self.extra),
        }

    def to_json(self, path=None, **kw):
        text = json.dumps(self.to_dict(), indent=kw.pop("indent", 2), **kw)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text
