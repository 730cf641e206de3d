"""Thin LP front end shared by economic dispatch and the MDP solver.

Problems are stated as::

    minimize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                lo <= x <= hi

and solved with the HiGHS dual simplex, which is deterministic for a
given input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class LPError(Exception):
    pass


class LPInfeasible(LPError):
    pass


class LPUnbounded(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int
    ineq_slack: np.ndarray | None = None
    ineq_marginals: np.ndarray | None = None


_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


def lp_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=(0, None)) -> LPResult:
    """Solve a linear program; raise LPInfeasible / LPUnbounded on failure."""
    res = linprog(np.asarray(c, dtype=float), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs-ds", options=_HIGHS_OPTIONS)
    if res.status == 2:
        raise LPInfeasible(res.message)
    if res.status == 3:
        raise LPUnbounded(res.message)
    if res.status != 0:
        raise LPError(res.message)
    slack = marg = None
    if A_ub is not None:
        slack = np.asarray(res.slack)
        marg = np.asarray(res.ineqlin.marginals)
    return LPResult(np.asarray(res.x), float(res.fun), int(res.nit), slack, marg)
