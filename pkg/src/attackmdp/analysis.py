"""Stationary behaviour of the policy-induced chain and attack likelihoods."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .attack import Action
from .mdp import ConvergenceError, Policy, TransitionModel, policy_rows


@dataclass
class StationaryDistribution:
    prob: np.ndarray
    residual: float
    method: str
    iterations: int
    reducible: bool = False
    n_closed_classes: int = 1


@dataclass
class AnalysisReport:
    c: float
    g_u: float
    p_t: float
    gamma: float
    line_prob: np.ndarray
    device_prob: np.ndarray
    actions: list[str] = field(default_factory=list)
    stationary: StationaryDistribution | None = None

    @property
    def n_attacking_states(self) -> int:
        return sum(a != "no-attack" for a in self.actions)


def induced_chain(tm: TransitionModel, policy: Policy) -> sp.csr_matrix:
    """P_pi(s'|s) = P(s'|s, pi(s))."""
    return tm.P[policy_rows(tm, policy)].tocsr()


def closed_classes(chain) -> int:
    """Number of closed communicating classes (1 means a unique stationary law)."""
    chain = sp.csr_matrix(chain)
    n_comp, labels = connected_components(chain, directed=True, connection="strong")
    coo = chain.tocoo()
    leaves = np.ones(n_comp, dtype=bool)
    cross = labels[coo.row] != labels[coo.col]
    leaves[labels[coo.row[cross & (coo.data > 0)]]] = False
    return int(leaves.sum())


def _residual(pi: np.ndarray, P) -> float:
    return float(np.abs(P.T @ pi - pi).sum())


def stationary_distribution(chain, tol: float = 1e-10, max_iter: int = 10**6,
                            max_period: int = 64) -> StationaryDistribution:
    """Power iteration from the uniform vector.

    If the iterates settle into a cycle (periodic chain), the last full
    period is averaged (Cesaro mean), which is stationary.
    """
    P = sp.csr_matrix(chain, dtype=float)
    n = P.shape[0]
    PT = P.T.tocsr()
    n_closed = closed_classes(P)
    reducible = connected_components(P, directed=True, connection="strong")[0] > 1

    pi = np.full(n, 1.0 / n)
    history: deque[np.ndarray] = deque(maxlen=max_period + 1)
    history.append(pi)
    for it in range(1, max_iter + 1):
        nxt = PT @ pi
        nxt /= nxt.sum()
        step = float(np.abs(nxt - pi).sum())
        pi = nxt
        history.append(pi)
        if step <= tol:
            return StationaryDistribution(pi, _residual(pi, P), "power-iteration", it,
                                          reducible, n_closed)
        if it % 256 == 0:
            for period in range(2, len(history)):
                if np.abs(history[-1] - history[-1 - period]).sum() <= tol:
                    avg = np.mean(list(history)[-period:], axis=0)
                    avg /= avg.sum()
                    res = _residual(avg, P)
                    if res <= 1e-9:
                        return StationaryDistribution(avg, res, "cesaro", it, reducible, n_closed)
    raise ConvergenceError(f"stationary distribution: residual {_residual(pi, P):.3e} "
                           f"after {max_iter} iterations")


def line_attack_probabilities(actions: list[Action], dist: np.ndarray, n_lines: int) -> np.ndarray:
    """Per line: stationary mass of states whose chosen action targets it."""
    out = np.zeros(n_lines)
    for a, p in zip(actions, dist):
        for ln in a.target_lines:
            out[ln] += p
    return out


def device_intrusion_probabilities(actions: list[Action], dist: np.ndarray,
                                   n_devices: int) -> np.ndarray:
    """Per device: stationary mass of states whose chosen action intrudes it."""
    out = np.zeros(n_devices)
    for a, p in zip(actions, dist):
        for j in a.footprint:
            out[j] += p
    return out


REPORT_HEADER = "c,kind,id,probability"


def report_rows(reports: list[AnalysisReport]) -> list[str]:
    """Columnar rows sorted by (c, kind, id); probabilities with 9 decimals."""
    rows = []
    for r in reports:
        rows += [(r.c, "device", j, p) for j, p in enumerate(r.device_prob)]
        rows += [(r.c, "line", k, p) for k, p in enumerate(r.line_prob)]
    rows.sort(key=lambda t: (t[0], t[1], t[2]))
    return [f"{c:g},{kind},{i},{p:.9f}" for c, kind, i, p in rows]


def format_report(reports: list[AnalysisReport]) -> str:
    return "\n".join([REPORT_HEADER, *report_rows(reports)]) + "\n"
