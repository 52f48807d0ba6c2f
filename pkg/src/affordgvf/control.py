"""Acting on learned affordances: Pavlovian rules, what-if action selection
and option chaining through learned initiation sets."""
import operator
from dataclasses import dataclass, field

import numpy as np

from .core import GvfSpec, PredicateCumulant, UniformPolicy
from .envs import make_transition
from .errors import ConfigError, EmptyTarget, InvalidArgument
from .learners import LearnerConfig, make_learner
from .runner import behavior_stream

DEFAULT_THRESHOLD = 0.8
DEFAULT_FIND_GAMMA = 0.9

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


# ---------------------------------------------------------------------------
# Pavlovian control
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PavlovianRule:
    """Fire ``action`` when every (demon, op, threshold) condition holds.

    A rule with no conditions always holds and serves as the default.
    """

    action: int
    conditions: tuple = ()
    priority: int = 0

    def __post_init__(self):
        for cond in self.conditions:
            if len(cond) != 3 or cond[1] not in _OPS:
                raise ConfigError(f"bad rule condition {cond!r}; expected (demon, op, threshold)")

    def holds(self, values):
        return all(_OPS[op](values[name], thr) for name, op, thr in self.conditions)


class PavlovianController:
    """Validated rule set; rules are tried by descending priority, then declaration order."""

    def __init__(self, rules, demon_names):
        self.names = list(demon_names)
        known = set(self.names)
        for rule in rules:
            for name, _, _ in rule.conditions:
                if name not in known:
                    raise ConfigError(f"rule references unknown demon '{name}'")
        if not any(not r.conditions for r in rules):
            raise ConfigError("rule set needs a default rule with no conditions")
        order = sorted(range(len(rules)), key=lambda i: (-rules[i].priority, i))
        self.rules = [rules[i] for i in order]

    def act(self, upsilon):
        values = dict(zip(self.names, np.asarray(upsilon, dtype=float).tolist()))
        for rule in self.rules:
            if rule.holds(values):
                return rule.action
        raise AssertionError("unreachable: default rule always holds")


def pavlovian_act(rules, upsilon, demon_names):
    return PavlovianController(rules, demon_names).act(upsilon)


# ---------------------------------------------------------------------------
# what-if selection
# ---------------------------------------------------------------------------

def what_if_select(gavfs, weights, x, candidates):
    """Score each candidate by sum_k weight_k * Q_k(x, a); return (argmax, scores).

    One pass over the candidates; ties go to the earliest candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise InvalidArgument("what-if selection needs at least one candidate")
    for name in weights:
        if name not in gavfs:
            raise ConfigError(f"what-if weight names unknown GAVF '{name}'")
    scores = {}
    for a in candidates:
        scores[a] = sum(w * gavfs[name].predict_q(x, a) for name, w in weights.items())
    best = candidates[0]
    for a in candidates[1:]:
        if scores[a] > scores[best]:
            best = a
    return best, scores


# ---------------------------------------------------------------------------
# initiation sets and behavior chaining
# ---------------------------------------------------------------------------

class LearnedInitiationSet:
    """Membership holds where the success prediction reaches the threshold (>=)."""

    def __init__(self, success, threshold=DEFAULT_THRESHOLD):
        if not 0.0 <= threshold <= 1.0:
            raise InvalidArgument(f"threshold must lie in [0, 1], got {threshold}")
        self.success = success
        self.threshold = float(threshold)

    def value(self, state):
        # learners expose predict(state); bare approximators predict_v(x)
        if hasattr(self.success, "predict"):
            return self.success.predict(state)
        return self.success.predict_v(state.x)

    def __call__(self, state):
        return self.value(state) >= self.threshold


class FindContinuation:
    """gamma = 0 inside the target set, ``off_gamma`` elsewhere."""

    def __init__(self, target, off_gamma):
        self.target = target
        self.off_gamma = float(off_gamma)

    def __call__(self, state):
        return 0.0 if self.target(state) else self.off_gamma


@dataclass
class FindTask:
    """Cumulant and continuation of a control GVF that seeks the target set."""

    target: object
    cumulant: object
    continuation: FindContinuation
    dim: int
    name: str = "find"

    def gvf(self, policy):
        return GvfSpec(self.name, self.cumulant, policy, self.continuation)


def build_find_option(target, states, off_gamma=DEFAULT_FIND_GAMMA, name="find"):
    """c = 1 and gamma = 0 on arrival in the target set, c = 0 and gamma = off_gamma elsewhere."""
    if not off_gamma > 0.0:
        raise InvalidArgument("off-target continuation must be > 0")
    states = list(states)
    if not any(target(s) for s in states):
        raise EmptyTarget("no state belongs to the target initiation set")
    dim = len(states[0].x)
    return FindTask(target, PredicateCumulant(target), FindContinuation(target, off_gamma), dim, name)


def value_refined_find(comfort, task):
    """Same structure as ``task`` but paying the comfort prediction on arrival."""
    if comfort.dim != task.dim or comfort.action_form:
        raise ConfigError(f"comfort predictor has dim {comfort.dim}, task features have dim {task.dim}")
    cumulant = PredicateCumulant(task.target, lambda s: comfort.predict_v(s.x))
    return FindTask(task.target, cumulant, task.continuation, task.dim, task.name + "_refined")


def train_find_option(task, env, steps, step_size=0.5, seed=0, behavior=None):
    """Q-learning on the find task from a uniform behavior stream; returns the learner."""
    behavior = behavior or UniformPolicy(env.n_actions)
    learner = make_learner("control", task.gvf(behavior), env.feature_dim,
                           LearnerConfig(step_size=step_size, seed=seed), env.n_actions)
    for tr in behavior_stream(env, behavior, steps, seed):
        learner.step(tr)
    return learner


@dataclass
class ChainPlan:
    find_policy: object
    target: object
    option: object
    success_channel: str = "success"


@dataclass
class ChainReport:
    status: str
    phase1_steps: int
    phase2_steps: int
    success: bool
    transitions: list = field(default_factory=list, repr=False)

    @property
    def reached(self):
        return self.status != "chain-failure"


def execute_chain(plan, env, max_steps, seed, rng=None):
    """Run the find policy until the target set holds, then the target option.

    Phase 1 failing to reach the set within ``max_steps`` yields status
    "chain-failure".  Phase 2 ends with "success" or "failure" on environment
    termination (judged by the success channel), "option-terminated" when the
    option's beta fires, or "budget".
    """
    if max_steps < 1:
        raise InvalidArgument("max_steps must be >= 1")
    rng = rng if rng is not None else np.random.default_rng([int(seed), 0xC4A1])
    state = env.reset(seed)
    trace = []
    used = 0
    phase1 = 0
    while not plan.target(state):
        if used >= max_steps:
            return ChainReport("chain-failure", phase1, 0, False, trace)
        a = plan.find_policy.sample(state, rng)
        result = env.step(a)
        trace.append(make_transition(state, a, result, 1.0))
        used += 1
        phase1 += 1
        if result.terminal or result.truncated:
            # the episode ended before the option became available
            return ChainReport("chain-failure", phase1, 0, False, trace)
        state = result.state
    phase2 = 0
    option = plan.option
    while used < max_steps:
        a = option.policy.sample(state, rng)
        result = env.step(a)
        trace.append(make_transition(state, a, result, 1.0))
        used += 1
        phase2 += 1
        if result.terminal:
            ok = result.signals.get(plan.success_channel, 0.0) > 0.0
            return ChainReport("success" if ok else "failure", phase1, phase2, ok, trace)
        if rng.random() < option.termination(result.state):
            return ChainReport("option-terminated", phase1, phase2, False, trace)
        if result.truncated:
            break
        state = result.state
    return ChainReport("budget", phase1, phase2, False, trace)
