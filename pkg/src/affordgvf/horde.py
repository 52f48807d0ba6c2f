"""Many demons learning from one behavior stream, and the prediction vector
they produce used as a predictive state for a tabular agent."""
import hashlib
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import AffordanceSpec
from .errors import AffordGvfError, ConfigError, InvalidParameter
from .learners import make_learner


def demon_seed(master_seed, name):
    """Stable 64-bit seed derived from (master seed, demon name)."""
    digest = hashlib.blake2b(f"{int(master_seed)}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class AffordanceSet:
    """Options O, cumulants C and questions Omega = (option, cumulant, learner spec)."""

    options: dict
    cumulants: dict
    questions: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for q in self.questions:
            name, option, cumulant = q["name"], q["option"], q["cumulant"]
            if name in seen:
                raise ConfigError(f"duplicate question name '{name}'")
            seen.add(name)
            if option not in self.options:
                raise ConfigError(f"question '{name}' references unknown option '{option}'")
            if cumulant not in self.cumulants:
                raise ConfigError(f"question '{name}' references unknown cumulant '{cumulant}'")

    def specs(self):
        """One AffordanceSpec per question, continuation composed from the option."""
        out = []
        for q in self.questions:
            option = self.options[q["option"]]
            out.append(AffordanceSpec.bind(q["name"], self.cumulants[q["cumulant"]], option, q.get("gamma", 1.0)))
        return out


@dataclass
class Demon:
    name: str
    spec: object
    learner: object

    @property
    def gvf(self):
        return self.spec.gvf if isinstance(self.spec, AffordanceSpec) else self.spec


class Horde:
    def __init__(self, behavior, master_seed=0):
        self.behavior = behavior
        self.master_seed = int(master_seed)
        self.demons = []
        self._names = set()

    def add(self, spec, algorithm, dim, config, n_actions=None, vfa=None):
        """Append a demon; its learner seed is derived from the master seed and its name."""
        gvf = spec.gvf if isinstance(spec, AffordanceSpec) else spec
        if gvf.name in self._names:
            raise ConfigError(f"duplicate demon name '{gvf.name}'")
        config = replace(config, seed=demon_seed(self.master_seed, gvf.name))
        learner = make_learner(algorithm, gvf, dim, config, n_actions, vfa)
        demon = Demon(gvf.name, spec, learner)
        self.demons.append(demon)
        self._names.add(gvf.name)
        return demon

    def __len__(self):
        return len(self.demons)

    @property
    def names(self):
        return [d.name for d in self.demons]

    def step(self, tr, executor=None):
        """Update every demon from one transition.

        Returns {name: delta} with an exception instance in place of delta for
        demons whose update failed.  Demons share no mutable state, so passing
        a ``concurrent.futures`` executor gives identical results.
        """
        if executor is None:
            results = [_safe_step(d, tr) for d in self.demons]
        else:
            results = list(executor.map(lambda d: _safe_step(d, tr), self.demons))
        return dict(zip(self.names, results))

    def step_parallel(self, tr, max_workers=4):
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return self.step(tr, pool)

    def predict_vector(self, state):
        return np.array([d.learner.predict(state) for d in self.demons], dtype=float)

    def __getitem__(self, name):
        for d in self.demons:
            if d.name == name:
                return d
        raise KeyError(name)


def _safe_step(demon, tr):
    try:
        return demon.learner.step(tr)
    except AffordGvfError as exc:
        return exc


def horde_step(horde, tr):
    return horde.step(tr)


def predict_vector(horde, state):
    return horde.predict_vector(state)


# ---------------------------------------------------------------------------
# predictive state agent
# ---------------------------------------------------------------------------

class UniformBinner:
    """Uniform bins per dimension of the prediction vector; out-of-range clamps."""

    def __init__(self, lows, highs, bins=10):
        self.lows = np.asarray(lows, dtype=float)
        self.highs = np.asarray(highs, dtype=float)
        if self.lows.shape != self.highs.shape or np.any(self.highs <= self.lows):
            raise InvalidParameter("binner needs matching lows < highs")
        self.bins = int(bins)
        if self.bins < 1:
            raise InvalidParameter("bins must be >= 1")
        self.clamped = 0

    def __call__(self, upsilon):
        u = np.asarray(upsilon, dtype=float)
        raw = np.floor((u - self.lows) / (self.highs - self.lows) * self.bins).astype(int)
        # the upper edge belongs to the last bin
        raw = np.where(u == self.highs, self.bins - 1, raw)
        idx = np.clip(raw, 0, self.bins - 1)
        if np.any(idx != raw):
            self.clamped += 1
        return tuple(int(i) for i in idx)


class PsrAgent:
    """Tabular Q-learning over the discretized prediction vector."""

    def __init__(self, binner, n_actions, step_size=0.1, gamma=0.9, epsilon=0.1, seed=0):
        self.binner = binner
        self.n_actions = int(n_actions)
        self.step_size = float(step_size)
        self.gamma = float(gamma)
        self.epsilon = float(epsilon)
        self.rng = np.random.default_rng(seed)
        self.q = defaultdict(lambda: np.zeros(self.n_actions))

    def values(self, upsilon):
        return self.q[self.binner(upsilon)]

    def greedy(self, upsilon):
        return int(np.argmax(self.values(upsilon)))

    def act(self, upsilon):
        if self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.n_actions))
        return self.greedy(upsilon)

    def update(self, upsilon, action, reward, next_upsilon, terminal):
        q = self.values(upsilon)
        boot = 0.0 if terminal else float(np.max(self.values(next_upsilon)))
        q[action] += self.step_size * (reward + self.gamma * boot - q[action])
        return q


def psr_agent_step(agent, upsilon, action, reward, next_upsilon, terminal=False):
    return agent.update(upsilon, action, reward, next_upsilon, terminal)


@dataclass
class MarkovReport:
    max_discrepancy: float
    max_excess: float
    compared: int
    unreliable: int
    details: list

    @property
    def markov(self):
        return self.max_excess <= 0.0


def _tv(p, q):
    keys = set(p) | set(q)
    np_, nq = sum(p.values()), sum(q.values())
    return 0.5 * sum(abs(p.get(k, 0) / np_ - q.get(k, 0) / nq) for k in keys)


def markov_diagnostic(episodes, discretize=None, min_support=30):
    """Compare next-step distributions conditioned on (v_t, a_t) and (v_t, a_t, y_{t-1}).

    ``episodes`` yields ``(upsilons, actions)`` or ``(upsilons, actions, observations)``
    where ``upsilons`` has one more entry than ``actions``.  The predicted
    quantity y is the next observation when observations are given, otherwise
    the next discretized prediction vector.  Conditions with fewer than
    ``min_support`` samples on either side are counted as unreliable.  The
    sampling-noise allowance per comparison is 0.5 * sqrt(K) * (n1^-1/2 + n2^-1/2)
    with K the number of distinct outcomes seen.
    """
    discretize = discretize or (lambda u: tuple(np.asarray(u, dtype=float).ravel().tolist()))
    short = defaultdict(Counter)
    long = defaultdict(Counter)
    for ep in episodes:
        ups, acts = ep[0], ep[1]
        obs = ep[2] if len(ep) > 2 and ep[2] is not None else None
        keys = [discretize(u) for u in ups]
        ys = keys if obs is None else [o if not isinstance(o, np.ndarray) else tuple(o.tolist()) for o in obs]
        for t in range(1, len(acts)):
            cond = (keys[t], int(acts[t]))
            y = ys[t + 1]
            short[cond][y] += 1
            long[cond + (ys[t - 1],)][y] += 1
    details = []
    unreliable = 0
    max_tv = 0.0
    max_excess = -np.inf
    for key, dist in long.items():
        base = short[key[:2]]
        n1, n2 = sum(dist.values()), sum(base.values())
        if n1 < min_support or n2 < min_support:
            unreliable += 1
            continue
        tv = _tv(dist, base)
        k = len(set(dist) | set(base))
        noise = 0.5 * np.sqrt(k) * (n1**-0.5 + n2**-0.5)
        details.append((key, tv, noise, n1, n2))
        max_tv = max(max_tv, tv)
        max_excess = max(max_excess, tv - noise)
    if not details:
        max_excess = 0.0
    return MarkovReport(max_tv, float(max_excess), len(details), unreliable, details)

