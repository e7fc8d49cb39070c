import json
import math

import numpy as np
import pytest

from mbadmm.errors import DimensionMismatch, NonPSD
from mbadmm.problem import BlockVector
from mbadmm.trace import TRACE_COLUMNS, ConvergenceReport, IterationTrace, SolverConfig, Status


@pytest.mark.parametrize("kw", [
    {"rho": 0.0}, {"gamma": -1.0}, {"alpha": 1.0}, {"alpha": 0.0},
    {"tol_primal": 0.0}, {"max_iter": 0}, {"divergence_threshold": 0.0},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_config_defaults():
    c = SolverConfig()
    assert (c.rho, c.gamma, c.tol_primal, c.tol_dual, c.max_iter) == (1.0, 1.0, 1e-6, 1e-6, 10000)
    assert c.timing is False


def test_prox_matrices_expansion():
    assert SolverConfig().prox_matrices([1, 2]) == [None, None]
    P = SolverConfig(prox=2.0).prox_matrices([1, 2])
    assert np.array_equal(P[1], 2 * np.eye(2))
    with pytest.raises(DimensionMismatch):
        SolverConfig(prox=[1.0]).prox_matrices([1, 2])
    with pytest.raises(NonPSD):
        SolverConfig(prox=[np.diag([1.0, -1.0])]).prox_matrices([2])
    with pytest.raises(NonPSD):
        SolverConfig(prox=-1.0).prox_matrices([2])


def test_trace_csv_roundtrip_is_exact():
    tr = IterationTrace()
    tr.append(0, 1.0 / 3.0, math.pi, 1e-300)
    tr.append(1, -2.5, 0.1 + 0.2, 7e-7, 0.25)
    text = tr.to_csv()
    assert text.splitlines()[0] == ",".join(TRACE_COLUMNS)
    back = IterationTrace.from_csv(text)
    assert back == tr
    assert back.to_csv() == text
    assert list(tr.column("k")) == [0, 1]


def test_trace_rejects_bad_header():
    with pytest.raises(ValueError):
        IterationTrace.from_csv("a,b\n1,2\n")


def test_report_json(tmp_path):
    rep = ConvergenceReport(Status.CONVERGED, 3, 1e-7, 2e-7, BlockVector([np.ones(2), np.zeros(1)]),
                            np.array([0.5]), 1.25, extra={"w": np.arange(2)})
    path = tmp_path / "r.json"
    rep.to_json(path)
    doc = json.loads(path.read_text())
    assert doc["status"] == "Converged" and doc["iterations"] == 3
    assert doc["x"] == [[1.0, 1.0], [0.0]] and doc["lambda"] == [0.5]
    assert doc["extra"] == {"w": [0, 1]}
    assert rep.converged
