"""Discounted MDP: transition assembly, LP and value-iteration solvers, policies."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .attack import (Action, AttackParams, attack_cost, detection_probability,
                     expected_reward)
from .discretize import DiscretizationScheme, StateSpace
from .lp import lp_solve

LP_TOL = 1e-8
VI_TOL = 1e-9
ROW_SUM_TOL = 1e-9
TIE_TOL = 1e-10


class TransitionError(Exception):
    pass


class ConvergenceError(Exception):
    pass


@dataclass
class TransitionModel:
    """One row per (state, action) pair, grouped by state.

    Pairs of state s occupy rows ``offsets[s]:offsets[s+1]``; the first pair
    of every state is its NoAttack action when built from a catalog.
    """

    P: sp.csr_matrix
    reward: np.ndarray
    cost: np.ndarray
    offsets: np.ndarray
    actions: list[list[Action]] | None = None

    @property
    def n_states(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_pairs(self) -> int:
        return len(self.reward)

    @property
    def net(self) -> np.ndarray:
        return self.reward - self.cost

    def pair(self, s: int, a: int) -> int:
        return int(self.offsets[s]) + a

    def n_actions(self, s: int) -> int:
        return int(self.offsets[s + 1] - self.offsets[s])

    def row_state(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states), np.diff(self.offsets))


@dataclass
class ValueFunction:
    q: np.ndarray
    gamma: float
    method: str = ""
    iterations: int = 0
    residual: float = float("nan")


@dataclass
class Policy:
    choice: np.ndarray
    actions: list[Action] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.choice)


def from_arrays(P: list[np.ndarray], reward: list[np.ndarray],
                cost: list[np.ndarray] | None = None) -> TransitionModel:
    """Build a model from per-state arrays: P[s] is (n_actions, n_states)."""
    rows = np.vstack(P)
    r = np.concatenate(reward)
    c = np.zeros_like(r) if cost is None else np.concatenate(cost)
    offsets = np.concatenate([[0], np.cumsum([len(x) for x in reward])])
    tm = TransitionModel(sp.csr_matrix(rows), r, c, offsets)
    check_stochastic(tm)
    return tm


def check_stochastic(tm: TransitionModel, tol: float = ROW_SUM_TOL) -> None:
    sums = np.asarray(tm.P.sum(axis=1)).ravel()
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if len(bad) or (tm.P.data < 0).any():
        raise TransitionError(f"{len(bad)} transition rows are not probability vectors")


def device_transition(open_mask: int, intruded: frozenset[int], p_detect: float, p_t: float,
                      n_devices: int) -> dict[int, float]:
    """Next device-mask distribution.

    Open devices not intruded stay open. All intruded devices are
    protected together with probability ``p_detect`` (a single detection
    event). Each device protected now reopens independently with
    probability ``p_t``; newly protected ones cannot reopen this step.
    """
    protected = [j for j in range(n_devices) if not open_mask >> j & 1]
    out: dict[int, float] = {}
    detect_branches = [(False, 1.0 - p_detect)]
    if intruded and p_detect > 0:
        detect_branches.append((True, p_detect))
    for detected, p_branch in detect_branches:
        if p_branch == 0:
            continue
        base = open_mask
        if detected:
            for j in intruded:
                base &= ~(1 << j)
        for reopen in itertools.product((False, True), repeat=len(protected)):
            p = p_branch
            mask = base
            for j, r in zip(protected, reopen):
                p *= p_t if r else 1.0 - p_t
                if r:
                    mask |= 1 << j
            if p > 0:
                out[mask] = out.get(mask, 0.0) + p
    return out


def _load_rows(chains, scenarios) -> list[np.ndarray]:
    """Next-scenario distribution for each scenario (first chain fastest)."""
    rows = []
    for idx in scenarios:
        row = np.ones(1)
        for chain, q in zip(reversed(chains), reversed(idx)):
            row = np.kron(row, chain.transition[q])
        rows.append(row)
    return rows


def build_transitions(space: StateSpace, actions: list[list[Action]], chains,
                      scheme: DiscretizationScheme, params: AttackParams) -> TransitionModel:
    """P(s'|s,a) = P_loads(s'|s) * P_devices(mask'|mask, a), with R and G per pair."""
    n_scen = space.n_scenarios
    load_rows = _load_rows(chains, space.scenarios)
    load_nz = [(np.flatnonzero(r), r[np.flatnonzero(r)]) for r in load_rows]

    indptr, indices, data = [0], [], []
    reward, cost = [], []
    for s in space:
        mask = s.index // n_scen
        l_idx, l_p = load_nz[s.scenario]
        for a in actions[s.index]:
            dev = device_transition(mask, a.footprint, detection_probability(a, scheme, params),
                                    params.p_t, space.n_devices)
            for m2 in sorted(dev):
                indices.append(l_idx + n_scen * m2)
                data.append(l_p * dev[m2])
            indptr.append(indptr[-1] + len(l_idx) * len(dev))
            reward.append(expected_reward(a, scheme, params))
            cost.append(attack_cost(a, params))
    n = len(space)
    P = sp.csr_matrix((np.concatenate(data), np.concatenate(indices), np.array(indptr)),
                      shape=(len(reward), n))
    offsets = np.concatenate([[0], np.cumsum([len(a) for a in actions])])
    tm = TransitionModel(P, np.array(reward), np.array(cost), offsets, actions)
    check_stochastic(tm)
    return tm


def q_values(tm: TransitionModel, values: np.ndarray, gamma: float) -> np.ndarray:
    return tm.net + gamma * (tm.P @ values)


def bellman(tm: TransitionModel, values: np.ndarray, gamma: float) -> np.ndarray:
    return np.maximum.reduceat(q_values(tm, values, gamma), tm.offsets[:-1])


def solve_mdp_lp(tm: TransitionModel, gamma: float) -> ValueFunction:
    """min sum_s Q(s)  s.t.  Q(s) >= R(s,a) - G(s,a) + gamma * sum_s' P(s'|s,a) Q(s')."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if np.any(np.diff(tm.offsets) < 1):
        raise ValueError("every state needs at least one action")
    n = tm.n_states
    sel = sp.csr_matrix((np.ones(tm.n_pairs), (np.arange(tm.n_pairs), tm.row_state())),
                        shape=(tm.n_pairs, n))
    A_ub = (gamma * tm.P - sel).tocsr()
    res = lp_solve(np.ones(n), A_ub, -tm.net, bounds=(None, None))
    q = res.x
    return ValueFunction(q, gamma, "lp", res.iterations,
                         float(np.max(np.abs(bellman(tm, q, gamma) - q))))


def value_iteration(tm: TransitionModel, gamma: float, tol: float = VI_TOL,
                    max_iters: int = 10**5, q0: np.ndarray | None = None) -> ValueFunction:
    """Iterate the Bellman optimality operator until within tol of its fixed point.

    A sweep that moves by at most ``step`` leaves the iterate within
    gamma/(1-gamma) * step of the fixed point, so the stopping threshold is
    scaled by (1-gamma)/gamma; it never goes below a few ulps of |q|.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    q = np.zeros(tm.n_states) if q0 is None else np.asarray(q0, dtype=float)
    scaled = tol * (1.0 - gamma) / gamma if gamma > 0 else tol
    for it in range(1, max_iters + 1):
        q_new = bellman(tm, q, gamma)
        step = float(np.max(np.abs(q_new - q), initial=0.0))
        q = q_new
        if step <= max(scaled, 8 * np.finfo(float).eps * float(np.max(np.abs(q), initial=0.0))):
            return ValueFunction(q, gamma, "value-iteration", it, step)
    raise ConvergenceError(f"value iteration: residual {step:.3e} after {max_iters} sweeps")


def extract_policy(tm: TransitionModel, vf: ValueFunction, tie_tol: float = TIE_TOL) -> Policy:
    """Greedy policy w.r.t. vf; ties go to the lowest action index (NoAttack first)."""
    qv = q_values(tm, vf.q, vf.gamma)
    choice = np.empty(tm.n_states, dtype=int)
    for s in range(tm.n_states):
        seg = qv[tm.offsets[s]:tm.offsets[s + 1]]
        choice[s] = int(np.flatnonzero(seg >= seg.max() - tie_tol)[0])
    acts = [tm.actions[s][choice[s]] for s in range(tm.n_states)] if tm.actions else []
    return Policy(choice, acts)


def policy_rows(tm: TransitionModel, policy: Policy) -> np.ndarray:
    return tm.offsets[:-1] + policy.choice


def evaluate_policy(tm: TransitionModel, policy: Policy, gamma: float) -> np.ndarray:
    """W_pi from the linear system (I - gamma P_pi) W = r_pi."""
    rows = policy_rows(tm, policy)
    P = tm.P[rows].toarray()
    return np.linalg.solve(np.eye(tm.n_states) - gamma * P, tm.net[rows])
