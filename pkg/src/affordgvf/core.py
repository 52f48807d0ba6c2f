"""Domain types: states, transitions, policies, options, cumulants, continuations
and the GVF / affordance specifications built from them.

All objects here are immutable after construction.  Callables that depend on a
state receive a :class:`State`, which carries both the discrete index (when the
environment has one) and the feature vector seen by approximators.
"""
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import _kernels
from .errors import InvalidArgument, InvalidParameter

PROB_ATOL = 1e-12


class State(NamedTuple):
    id: Optional[int]
    x: np.ndarray


def one_hot(index, dim):
    x = np.zeros(dim)
    x[index] = 1.0
    return x


@dataclass(frozen=True, slots=True, eq=False)
class Transition:
    """One environment step as stored in replay memory."""

    features: np.ndarray
    action: int
    next_features: np.ndarray
    signals: dict
    behavior_prob: float
    terminal: bool = False
    state_id: Optional[int] = None
    next_state_id: Optional[int] = None

    def __post_init__(self):
        if not self.behavior_prob > 0.0:
            raise InvalidArgument(f"behavior_prob must be > 0, got {self.behavior_prob}")

    @property
    def state(self):
        return State(self.state_id, self.features)

    @property
    def next_state(self):
        return State(self.next_state_id, self.next_features)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

class Policy:
    """Distribution over actions conditioned on state."""

    kind = "abstract"

    def __init__(self, n_actions):
        if n_actions < 1:
            raise InvalidParameter("policy needs at least one action")
        self.n_actions = int(n_actions)

    def probs(self, state):
        raise NotImplementedError

    def prob(self, state, action):
        return policy_prob(self, state, action)

    def sample(self, state, rng):
        p = self.probs(state)
        a = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        if a >= self.n_actions:
            a = int(np.flatnonzero(p > 0)[-1])
        return a

    def matrix(self, states):
        """Action probabilities for each state in ``states`` as a (S, A) array."""
        return np.array([self.probs(s) for s in states])


class UniformPolicy(Policy):
    kind = "uniform-random"

    def __init__(self, n_actions):
        super().__init__(n_actions)
        self._p = np.full(self.n_actions, 1.0 / self.n_actions)

    def probs(self, state):
        return self._p


class FixedActionPolicy(Policy):
    kind = "fixed-action"

    def __init__(self, action, n_actions):
        super().__init__(n_actions)
        if not 0 <= action < n_actions:
            raise InvalidParameter(f"fixed action {action} outside [0, {n_actions})")
        self.action = int(action)
        self._p = one_hot(self.action, self.n_actions)

    def probs(self, state):
        return self._p


class TabularPolicy(Policy):
    kind = "tabular-stochastic"

    def __init__(self, table):
        table = np.array(table, dtype=float)
        if table.ndim != 2:
            raise InvalidParameter("tabular policy needs a (n_states, n_actions) table")
        if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > PROB_ATOL):
            raise InvalidParameter("tabular policy rows must be non-negative and sum to 1")
        super().__init__(table.shape[1])
        table.setflags(write=False)
        self.table = table

    def probs(self, state):
        return self.table[state.id]


def greedy_action(values):
    """argmax with ties broken toward the lowest index (np.argmax already does)."""
    return int(np.argmax(values))


class GreedyPolicy(Policy):
    """Greedy or epsilon-greedy over an action-value predictor.

    ``q`` is anything with ``predict_all(x) -> array of shape (n_actions,)``,
    typically an action-form :class:`~affordgvf.vfa.LinearVfa`.
    """

    def __init__(self, q, epsilon=0.0, n_actions=None):
        super().__init__(n_actions if n_actions is not None else q.n_actions)
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidParameter(f"epsilon must lie in [0, 1], got {epsilon}")
        self.q = q
        self.epsilon = float(epsilon)
        self.kind = "greedy-over-gavf" if epsilon == 0.0 else "epsilon-greedy-over-gavf"

    def probs(self, state):
        p = np.full(self.n_actions, self.epsilon / self.n_actions)
        p[greedy_action(self.q.predict_all(state.x))] += 1.0 - self.epsilon
        return p


def policy_prob(policy, state, action):
    if not 0 <= action < policy.n_actions:
        raise InvalidArgument(f"action {action} outside [0, {policy.n_actions})")
    return float(policy.probs(state)[action])


# ---------------------------------------------------------------------------
# termination and continuation
# ---------------------------------------------------------------------------

def _check_unit(value, what):
    if not 0.0 <= value <= 1.0:
        raise InvalidParameter(f"{what} must lie in [0, 1], got {value}")


class ConstantTermination:
    def __init__(self, prob):
        _check_unit(prob, "termination probability")
        self.prob = float(prob)

    def __call__(self, state):
        return self.prob

    def vector(self, n_states):
        return np.full(n_states, self.prob)


class SetTermination:
    """beta = 1 inside the state set, 0 outside."""

    def __init__(self, state_ids):
        self.state_ids = frozenset(int(s) for s in state_ids)

    def __call__(self, state):
        return 1.0 if state.id in self.state_ids else 0.0

    def vector(self, n_states):
        v = np.zeros(n_states)
        v[sorted(self.state_ids)] = 1.0
        return v


class TableTermination:
    def __init__(self, table):
        table = np.array(table, dtype=float)
        if np.any(table < 0) or np.any(table > 1):
            raise InvalidParameter("termination table entries must lie in [0, 1]")
        table.setflags(write=False)
        self.table = table

    def __call__(self, state):
        return float(self.table[state.id])

    def vector(self, n_states):
        return self.table[:n_states].copy()


class ConstantContinuation:
    def __init__(self, value):
        _check_unit(value, "continuation")
        self.value = float(value)

    def __call__(self, state):
        return self.value

    def vector(self, n_states):
        return np.full(n_states, self.value)


class ComposedContinuation:
    """gamma(s) = gamma_const * (1 - beta(s))."""

    def __init__(self, gamma, beta):
        _check_unit(gamma, "gamma_const")
        self.gamma = float(gamma)
        self.beta = beta

    def __call__(self, state):
        return self.gamma * (1.0 - self.beta(state))

    def vector(self, n_states):
        return self.gamma * (1.0 - self.beta.vector(n_states))


class TableContinuation:
    def __init__(self, table):
        table = np.array(table, dtype=float)
        if np.any(table < 0) or np.any(table > 1):
            raise InvalidParameter("continuation table entries must lie in [0, 1]")
        table.setflags(write=False)
        self.table = table

    def __call__(self, state):
        return float(self.table[state.id])

    def vector(self, n_states):
        return self.table[:n_states].copy()


def compose_continuation(gamma_const, beta):
    return ComposedContinuation(gamma_const, beta)


# ---------------------------------------------------------------------------
# cumulants
# ---------------------------------------------------------------------------
# Each cumulant maps a Transition to a float and can tabulate itself over a
# finite model as an (S, A, S') array for the oracle.

class ConstantCumulant:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, tr):
        return self.value

    def table(self, model):
        return np.full(model.P.shape, self.value)


class SignalCumulant:
    """Reads a named signal channel, optionally scaled (e.g. by 1 - gamma)."""

    def __init__(self, channel, scale=1.0):
        self.channel = channel
        self.scale = float(scale)

    def __call__(self, tr):
        return self.scale * tr.signals[self.channel]

    def table(self, model):
        return self.scale * model.signals[self.channel]


class IndicatorCumulant:
    """1 when the arrival state belongs to the set."""

    def __init__(self, state_ids, value=1.0):
        self.state_ids = frozenset(int(s) for s in state_ids)
        self.value = float(value)

    def __call__(self, tr):
        return self.value if tr.next_state_id in self.state_ids else 0.0

    def table(self, model):
        t = np.zeros(model.P.shape)
        t[:, :, sorted(self.state_ids)] = self.value
        return t


class OutcomeCumulant:
    """A terminal label: the channel's value on terminal transitions, 0 before."""

    def __init__(self, channel):
        self.channel = channel

    def __call__(self, tr):
        return tr.signals[self.channel] if tr.terminal else 0.0

    def table(self, model):
        return model.signals[self.channel] * model.terminal[None, None, :]


class PredicateCumulant:
    """``value(s')`` when ``predicate(s')`` holds on arrival, else 0."""

    def __init__(self, predicate, value=None):
        self.predicate = predicate
        self.value = value

    def _at(self, state):
        if not self.predicate(state):
            return 0.0
        return 1.0 if self.value is None else float(self.value(state))

    def __call__(self, tr):
        return self._at(tr.next_state)

    def table(self, model):
        per_state = np.array([self._at(s) for s in model.states()])
        return np.broadcast_to(per_state, model.P.shape).copy()


# ---------------------------------------------------------------------------
# options and specifications
# ---------------------------------------------------------------------------

class StateSet:
    """Initiation predicate given by membership in a set of state ids."""

    def __init__(self, state_ids):
        self.state_ids = frozenset(int(s) for s in state_ids)

    def __call__(self, state):
        return state.id in self.state_ids


def everywhere(state):
    return True


@dataclass(frozen=True)
class OptionSpec:
    initiation: Callable
    termination: object
    policy: Policy
    name: str = ""


@dataclass(frozen=True)
class GvfSpec:
    name: str
    cumulant: object
    target_policy: Policy
    continuation: object

    def cumulant_of(self, tr):
        return self.cumulant(tr)

    def gamma_next(self, tr):
        """Continuation on arrival; environments' terminal transitions force 0."""
        return 0.0 if tr.terminal else self.continuation(tr.next_state)


@dataclass(frozen=True)
class AffordanceSpec:
    gvf: GvfSpec
    option: OptionSpec = field(repr=False)

    def __post_init__(self):
        if self.gvf.target_policy is not self.option.policy:
            raise InvalidArgument("affordance GVF must follow the option's policy")
        cont = self.gvf.continuation
        if not isinstance(cont, ComposedContinuation) or cont.beta is not self.option.termination:
            raise InvalidArgument("affordance continuation must be composed from the option's termination")

    @classmethod
    def bind(cls, name, cumulant, option, gamma):
        gvf = GvfSpec(name, cumulant, option.policy, compose_continuation(gamma, option.termination))
        return cls(gvf, option)

    @property
    def name(self):
        return self.gvf.name


# ---------------------------------------------------------------------------
# return arithmetic
# ---------------------------------------------------------------------------

def trajectory_return(cumulants, continuations):
    """sum_k (prod_{i<k} gamma_{i}) c_k over a finite trajectory."""
    c = np.asarray(cumulants, dtype=float)
    g = np.asarray(continuations, dtype=float)
    if c.shape != g.shape or c.ndim != 1:
        raise InvalidArgument("cumulants and continuations must be 1-D and equal length")
    if np.any(g < 0) or np.any(g > 1):
        raise InvalidArgument("continuations must lie in [0, 1]")
    return float(_kernels.generalized_return(c, g))


def option_return(rewards, betas, gamma):
    r = np.asarray(rewards, dtype=float)
    b = np.asarray(betas, dtype=float)
    if r.shape != b.shape or r.ndim != 1:
        raise InvalidArgument("rewards and betas must be 1-D and equal length")
    if np.any(b < 0) or np.any(b > 1):
        raise InvalidArgument("termination probabilities must lie in [0, 1]")
    _check_unit(gamma, "gamma")
    total = 0.0
    survive = 1.0
    for k in range(r.shape[0]):
        total += survive * gamma**k * r[k]
        survive *= 1.0 - b[k]
    return total
