"""Round-based coordinator/worker simulation of the parallel engines.

Workers own blocks and run the block updates; the coordinator owns the
multipliers, computes the signals each worker needs and gathers the
updated blocks.  Each round therefore has one ``Signal`` per worker
(coordinator -> worker) followed by one ``BlockUpdate`` per worker
(worker -> coordinator).  A final ``Halt`` round tells every worker to
stop.  Workers never talk to each other.

The simulation drives the same kernels as the in-process engines through
a logging transport, so traces and reports are bitwise identical to
``run_jacobi`` / ``run_prox_jacobi`` / ``run_variable_splitting`` /
``run_offloading``.
"""

from __future__ import annotations

import enum
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .engines import run_jacobi, run_prox_jacobi, run_variable_splitting
from .errors import SequentialEngineRejected
from .trace import SolverConfig

BYTES_PER_REAL = 8


class Role(str, enum.Enum):
    COORDINATOR = "Coordinator"
    WORKER = "Worker"


class Kind(str, enum.Enum):
    BLOCK_UPDATE = "BlockUpdate"
    SIGNAL = "Signal"
    HALT = "Halt"


@dataclass(frozen=True)
class NodeId:
    role: Role
    index: int = 0

    def __str__(self):
        return "coordinator" if self.role is Role.COORDINATOR else f"worker{self.index}"


COORDINATOR = NodeId(Role.COORDINATOR, 0)


@dataclass(frozen=True, eq=False)
class Message:
    src: NodeId
    dst: NodeId
    round: int
    kind: Kind
    payload: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return int(self.payload.size)

    def to_dict(self):
        return {"round": self.round, "from": str(self.src), "to": str(self.dst), "kind": self.kind.value, "dim": self.dim}


class MessageLog:
    """Ordered message list with per-round byte counts."""

    def __init__(self):
        self.messages = []
        self.bytes_per_round = OrderedDict()

    def append(self, msg: Message):
        if msg.round < 0:
            raise ValueError("rounds are nonnegative")
        if self.messages and msg.round < self.messages[-1].round:
            raise ValueError("rounds must be nondecreasing in log order")
        if msg.src.role is Role.WORKER and msg.dst.role is Role.WORKER:
            raise ValueError("workers only talk to the coordinator")
        self.messages.append(msg)
        self.bytes_per_round[msg.round] = self.bytes_per_round.get(msg.round, 0) + BYTES_PER_REAL * msg.dim

    def __len__(self):
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def to_jsonl(self, path=None):
        text = "".join(json.dumps(m.to_dict()) + "\n" for m in self.messages)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def signature(self):
        """Hashable summary (structure and payload bytes) for determinism checks."""
        return tuple((m.round, str(m.src), str(m.dst), m.kind.value, m.payload.tobytes()) for m in self.messages)


class LoggingTransport:
    """Transport that records every signal and block update.

    Payloads are copied at send time, so the log is a faithful record of
    what crossed each edge.
    """

    def __init__(self, n_workers, log=None):
        self.n = n_workers
        self.log = MessageLog() if log is None else log

    def exchange(self, k, signals, work, order=None):
        if len(signals) != self.n:
            raise ValueError(f"{len(signals)} signals for {self.n} workers")
        for i, s in enumerate(signals):
            self.log.append(Message(COORDINATOR, NodeId(Role.WORKER, i), k, Kind.SIGNAL, np.array(s, dtype=float)))
        order = range(self.n) if order is None else order
        out = [None] * self.n
        for i in order:
            out[i] = work(i, signals[i])
        for i, xi in enumerate(out):
            self.log.append(Message(NodeId(Role.WORKER, i), COORDINATOR, k, Kind.BLOCK_UPDATE, np.array(xi, dtype=float)))
        return out

    def finish(self, k):
        for i in range(self.n):
            self.log.append(Message(COORDINATOR, NodeId(Role.WORKER, i), k + 1, Kind.HALT, np.zeros(0)))


ENGINE_KINDS = ("Jacobi", "ProxJacobi", "VariableSplitting", "Offloading")
_ALIASES = {
    "jacobi": "Jacobi",
    "proxjacobi": "ProxJacobi",
    "variablesplitting": "VariableSplitting",
    "offloading": "Offloading",
    "offload": "Offloading",
}
_SEQUENTIAL = {"gaussseidel", "gs", "twoblock", "gbs"}


def _norm_kind(kind):
    key = str(kind).lower()
    for ch in "-_ ":
        key = key.replace(ch, "")
    if key in _ALIASES:
        return _ALIASES[key]
    if key in _SEQUENTIAL:
        raise SequentialEngineRejected(
            f"{kind} updates blocks sequentially and cannot run as a parallel gather/scatter round"
        )
    raise ValueError(f"unknown engine kind {kind!r}; expected one of {ENGINE_KINDS}")


def simulate(engine_kind, p, cfg: SolverConfig = None, **kw):
    """Run ``engine_kind`` as a coordinator/worker message exchange.

    ``p`` is a :class:`~mbadmm.problem.BlockProblem`, or an
    :class:`~mbadmm.offload.OffloadInstance` for ``"Offloading"``.
    Extra keyword arguments go to the engine.  Returns
    ``(trace, report, log)``.
    """
    kind = _norm_kind(engine_kind)
    cfg = cfg or SolverConfig()
    if kind == "Offloading":
        from .offload import run_offloading

        tp = LoggingTransport(p.B + p.A)
        tr, rep = run_offloading(p, cfg, transport=tp, **kw)
        return tr, rep, tp.log
    tp = LoggingTransport(p.N)
    runner = {"Jacobi": run_jacobi, "ProxJacobi": run_prox_jacobi, "VariableSplitting": run_variable_splitting}[kind]
    tr, rep = runner(p, cfg, transport=tp, **kw)
    return tr, rep, tp.log


@dataclass
class RoundStats:
    round: int
    counts: dict
    reals: int
    bytes: int
    edge_reals: dict


def message_stats(log: MessageLog):
    """Per-round message counts by kind, payload reals and the reals
    carried on each coordinator-worker edge (both directions summed)."""
    out = OrderedDict()
    for m in log:
        st = out.get(m.round)
        if st is None:
            st = out[m.round] = RoundStats(m.round, {}, 0, 0, {})
        st.counts[m.kind.value] = st.counts.get(m.kind.value, 0) + 1
        st.reals += m.dim
        st.bytes += BYTES_PER_REAL * m.dim
        worker = m.dst if m.src.role is Role.COORDINATOR else m.src
        st.edge_reals[worker.index] = st.edge_reals.get(worker.index, 0) + m.dim
    return list(out.values())
