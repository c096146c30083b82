"""Pluggable LP solver backends.

A backend solves ``min c'x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub`` over free
variables and must return row duals in *sensitivity* form: ``y = d(obj)/d(b)``.
With that convention the stationarity condition is ``c = A_eq' y_eq + A_ub' y_ub``
and every ``y_ub`` is non-positive at an optimum.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

ENV_BACKEND = "DUALMERIT_BACKEND"
DEFAULT_BACKEND = "highs"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class BackendResult:
    status: str
    x: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    y_ub: np.ndarray | None = None
    objective: float | None = None
    message: str = ""


class ScipyHighsBackend:
    """HiGHS dual simplex through :func:`scipy.optimize.linprog` (vertex duals)."""

    name = "highs"
    returns_duals = True
    returns_reduced_costs = False

    def __init__(self, method: str = "highs-ds"):
        self.method = method

    def solve(self, c, A_ub, b_ub, A_eq, b_eq) -> BackendResult:
        res = linprog(
            c,
            A_ub=A_ub if A_ub.shape[0] else None,
            b_ub=b_ub if A_ub.shape[0] else None,
            A_eq=A_eq if A_eq.shape[0] else None,
            b_eq=b_eq if A_eq.shape[0] else None,
            bounds=(None, None),
            method=self.method,
        )
        status = {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, NUMERICAL_FAILURE)
        if status != OPTIMAL:
            return BackendResult(status, message=str(res.message))
        y_eq = np.asarray(res.eqlin.marginals) if A_eq.shape[0] else np.zeros(0)
        y_ub = np.asarray(res.ineqlin.marginals) if A_ub.shape[0] else np.zeros(0)
        return BackendResult(status, np.asarray(res.x), y_eq, y_ub, float(res.fun), str(res.message))


class HighspyBackend:
    """Direct ``highspy`` interface, for when finer solver control is wanted."""

    name = "highspy"
    returns_duals = True
    returns_reduced_costs = True

    def solve(self, c, A_ub, b_ub, A_eq, b_eq) -> BackendResult:
        import highspy

        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("solver", "simplex")
        A = sparse.vstack([A_eq, A_ub]).tocsr() if (A_eq.shape[0] + A_ub.shape[0]) else sparse.csr_matrix((0, len(c)))
        n_eq = A_eq.shape[0]
        inf = highspy.kHighsInf
        lower = np.concatenate([b_eq, np.full(A_ub.shape[0], -inf)])
        upper = np.concatenate([b_eq, b_ub])

        lp = highspy.HighsLp()
        lp.num_col_ = len(c)
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = np.asarray(c, dtype=float)
        lp.col_lower_ = np.full(len(c), -inf)
        lp.col_upper_ = np.full(len(c), inf)
        lp.row_lower_ = lower
        lp.row_upper_ = upper
        csc = A.tocsc()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = csc.indptr
        lp.a_matrix_.index_ = csc.indices
        lp.a_matrix_.value_ = csc.data
        h.passModel(lp)
        h.run()
        model_status = h.getModelStatus()
        if model_status == highspy.HighsModelStatus.kOptimal:
            sol = h.getSolution()
            y = np.asarray(sol.row_dual)
            return BackendResult(
                OPTIMAL,
                np.asarray(sol.col_value),
                y[:n_eq],
                y[n_eq:],
                float(h.getInfo().objective_function_value),
            )
        text = h.modelStatusToString(model_status)
        if model_status == highspy.HighsModelStatus.kInfeasible:
            return BackendResult(INFEASIBLE, message=text)
        if model_status in (highspy.HighsModelStatus.kUnbounded,
                            highspy.HighsModelStatus.kUnboundedOrInfeasible):
            return BackendResult(UNBOUNDED, message=text)
        return BackendResult(NUMERICAL_FAILURE, message=text)


BACKENDS = {
    "highs": ScipyHighsBackend,
    "highspy": HighspyBackend,
}


def get_backend(name=None):
    """Resolve a backend by name, falling back to ``$DUALMERIT_BACKEND``."""
    if name is not None and not isinstance(name, str):
        return name
    name = name or os.environ.get(ENV_BACKEND, DEFAULT_BACKEND)
    try:
        return BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {', '.join(BACKENDS)}") from None
