"""Exact ground truth on finite models.

``solve_gvf`` solves the Bellman system by dense factorization.
``enumerate_return`` sums the truncated generalized return over every
trajectory by pushing path mass forward one step at a time (the sum over
paths factorizes by current state), and ``enumerate_paths`` is the literal
depth-first expansion for tiny problems.  The two families share only the
tabulated model, so each checks the other.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ConstantContinuation, GvfSpec, IndicatorCumulant, UniformPolicy, compose_continuation
from .errors import InvalidArgument, NoSolution, ResourceLimit

RESIDUAL_TOL = 1e-9


@dataclass
class ExactSolution:
    v: np.ndarray
    q: np.ndarray
    residual: float


class EnumResult(NamedTuple):
    value: float
    tail_bound: float
    alive_mass: float


def continuation_vector(continuation, model):
    """gamma(s') per state with terminal states forced to 0."""
    if hasattr(continuation, "vector"):
        g = np.asarray(continuation.vector(model.n_states), dtype=float).copy()
    else:
        g = np.array([continuation(s) for s in model.states()], dtype=float)
    g[model.terminal] = 0.0
    return g


def _tabulate(model, gvf):
    T = gvf.target_policy.matrix(model.states())
    C = gvf.cumulant.table(model)
    g = continuation_vector(gvf.continuation, model)
    return T, C, g


def solve_gvf(model, gvf):
    T, C, g = _tabulate(model, gvf)
    S = model.n_states
    live = ~model.terminal
    # expected one-step cumulant and discounted transition matrix under tau
    r = np.einsum("sa,sat,sat->s", T, model.P, C)
    M = np.einsum("sa,sat->st", T, model.P) * g[None, :]
    L = np.flatnonzero(live)
    A = np.eye(L.size) - M[np.ix_(L, L)]
    v = np.zeros(S)
    if L.size:
        if np.linalg.cond(A) > 1e12:
            raise NoSolution(f"Bellman system for '{gvf.name}' is singular (non-terminating continuation)")
        try:
            v[L] = np.linalg.solve(A, r[L])
        except np.linalg.LinAlgError as exc:
            raise NoSolution(str(exc)) from None
    residual = float(np.max(np.abs(v[L] - (r[L] + M[L] @ v)))) if L.size else 0.0
    if not residual <= RESIDUAL_TOL:
        raise NoSolution(f"residual {residual:.3e} exceeds {RESIDUAL_TOL:g}")
    q = np.einsum("sat,sat->sa", model.P, C + g[None, None, :] * v[None, None, :])
    q[model.terminal] = 0.0
    return ExactSolution(v, q, residual)


def enumerate_return(model, gvf, start, horizon, max_work=5e9):
    """Expected return truncated after ``horizon`` steps, summed over all paths."""
    if horizon < 1:
        raise InvalidArgument("horizon must be >= 1")
    S, A = model.n_states, model.n_actions
    if float(horizon) * S * S * A > max_work:
        raise ResourceLimit(f"expansion needs ~{horizon * S * S * A:.2e} operations > {max_work:.2e}")
    T, C, g = _tabulate(model, gvf)
    # path mass per (state) after k steps, already weighted by the product of
    # continuations collected along the way
    mass = np.zeros(S)
    mass[start] = 1.0
    value = 0.0
    for _ in range(horizon):
        flow = mass[:, None, None] * T[:, :, None] * model.P
        value += float(np.sum(flow * C))
        mass = flow.sum(axis=(0, 1)) * g
    cmax = float(np.max(np.abs(C))) if C.size else 0.0
    gmax = float(np.max(g)) if g.size else 0.0
    tail = cmax * gmax**horizon / (1.0 - gmax) if gmax < 1.0 else float("inf")
    return EnumResult(value, tail, float(mass.sum()))


def enumerate_paths(model, gvf, start, horizon, max_paths=200_000):
    """Literal depth-first expansion of every (action, next state) branch."""
    T, C, g = _tabulate(model, gvf)
    count = 0
    total = 0.0
    stack = [(int(start), 0, 1.0, 1.0)]  # state, depth, path prob, continuation product
    while stack:
        s, depth, prob, disc = stack.pop()
        if depth == horizon or disc == 0.0:
            count += 1
            if count > max_paths:
                raise ResourceLimit(f"more than {max_paths} paths")
            continue
        for a in range(model.n_actions):
            pa = T[s, a]
            if pa == 0.0:
                continue
            for s2 in np.flatnonzero(model.P[s, a]):
                p = prob * pa * model.P[s, a, s2]
                total += p * disc * C[s, a, s2]
                stack.append((int(s2), depth + 1, p, disc * g[s2]))
    return total


def option_value(model, option, cumulant, gamma, horizon):
    """Option value with survival (1 - beta) and discount gamma^k kept as separate factors."""
    T = option.policy.matrix(model.states())
    C = cumulant.table(model)
    beta = continuation_vector(_Survival(option.termination), model)  # holds 1 - beta, 0 at terminals
    S = model.n_states
    values = np.zeros(S)
    for start in range(S):
        if model.terminal[start]:
            continue
        survive = np.zeros(S)
        survive[start] = 1.0
        total = 0.0
        for k in range(horizon):
            flow = survive[:, None, None] * T[:, :, None] * model.P
            total += gamma**k * float(np.sum(flow * C))
            survive = flow.sum(axis=(0, 1)) * beta
        values[start] = total
    return values


class _Survival:
    def __init__(self, beta):
        self.beta = beta

    def __call__(self, state):
        return 1.0 - self.beta(state)

    def vector(self, n_states):
        return 1.0 - self.beta.vector(n_states)


def _absorb(model, R, M, tol=1e-15, max_steps=1_000_000):
    """sum_k M^k R for every start state, run until the surviving mass vanishes."""
    S = model.n_states
    mass = np.eye(S)
    mass[model.terminal] = 0.0
    value = np.zeros(S)
    for _ in range(max_steps):
        value += mass @ R
        mass = mass @ M
        if mass.sum() < tol:
            return value
    raise NoSolution("trajectories do not terminate")


@dataclass
class ReductionReport:
    value: np.ndarray
    reference: np.ndarray
    max_abs_error: float
    ok: bool
    action_max_abs_error: float = 0.0


def verify_supervised_reduction(model, option, outcome_cumulant, tol=1e-9):
    """A gamma=1 GVF on a terminal label equals the expected final outcome."""
    C = outcome_cumulant.table(model)
    if np.any(C[:, :, ~model.terminal] != 0.0):
        raise InvalidArgument("outcome cumulant must be zero on non-terminal transitions")
    gvf = GvfSpec("outcome", outcome_cumulant, option.policy, compose_continuation(1.0, option.termination))
    sol = solve_gvf(model, gvf)
    T, C, g = _tabulate(model, gvf)
    R = np.einsum("sa,sat,sat->s", T, model.P, C)
    M = np.einsum("sa,sat->st", T, model.P) * g[None, :]
    expected = _absorb(model, R, M)
    err = float(np.max(np.abs(sol.v - expected)))
    return ReductionReport(sol.v, expected, err, err <= tol)


def verify_nextstep_reduction(model, j, policy=None, tol=1e-12):
    """A gamma=0 GVF on the indicator of state j reproduces p(j | s) and p(j | s, a)."""
    policy = policy or UniformPolicy(model.n_actions)
    gvf = GvfSpec(f"next_{j}", IndicatorCumulant([j]), policy, ConstantContinuation(0.0))
    sol = solve_gvf(model, gvf)
    live = ~model.terminal
    T = policy.matrix(model.states())
    ref_v = np.einsum("sa,sa->s", T, model.P[:, :, j])
    err_v = float(np.max(np.abs(sol.v[live] - ref_v[live]))) if live.any() else 0.0
    err_q = float(np.max(np.abs(sol.q[live] - model.P[live, :, j]))) if live.any() else 0.0
    return ReductionReport(sol.v, ref_v, err_v, max(err_v, err_q) <= tol, err_q)


def value_iteration(model, reward, continuation, tol=1e-13, max_iter=100_000):
    """Optimal control values for reward table ``reward[s, a, s']`` and gamma(s').

    Returns (v, q); greedy actions are ``argmax`` of q (lowest index on ties).
    """
    g = continuation if isinstance(continuation, np.ndarray) else continuation_vector(continuation, model)
    g = g.copy()
    g[model.terminal] = 0.0
    v = np.zeros(model.n_states)
    for _ in range(max_iter):
        q = np.einsum("sat,sat->sa", model.P, reward + g[None, None, :] * v[None, None, :])
        q[model.terminal] = 0.0
        new = q.max(axis=1)
        if np.max(np.abs(new - v)) < tol:
            return new, q
        v = new
    raise NoSolution("value iteration did not converge")
