"""Online GVF / GAVF learners.

TD error follows the convention delta = V(s) - y with descent updates
theta <- theta - alpha * delta * grad V, i.e. the classic
theta <- theta + alpha * (y - V) * x.
"""
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import GreedyPolicy, one_hot
from .errors import CoverageViolation, InvalidArgument, InvalidParameter, NumericOverflow, PolicyMismatch
from .vfa import LinearVfa

ALGORITHMS = ("td", "is", "resampled", "gavf", "montecarlo", "control")


@dataclass(frozen=True)
class LearnerConfig:
    step_size: float
    buffer_capacity: int = 10_000
    minibatch_size: int = 32
    rho_clip: Optional[float] = None
    seed: int = 0
    use_rho_bar: bool = True
    ude_window: int = 100

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidParameter(f"step_size must be > 0, got {self.step_size}")
        if not self.buffer_capacity >= self.minibatch_size >= 1:
            raise InvalidParameter("need buffer_capacity >= minibatch_size >= 1")
        if self.rho_clip is not None and not self.rho_clip > 0:
            raise InvalidParameter("rho_clip must be positive")
        if self.ude_window < 1:
            raise InvalidParameter("ude_window must be >= 1")


# ---------------------------------------------------------------------------
# scalar pieces
# ---------------------------------------------------------------------------

def _finite(*values):
    for v in values:
        if not np.isfinite(v):
            raise NumericOverflow(f"non-finite input {v!r}")


def td_target(c, gamma_next, v_next):
    _finite(c, gamma_next, v_next)
    if not 0.0 <= gamma_next <= 1.0:
        raise InvalidArgument(f"gamma_next must lie in [0, 1], got {gamma_next}")
    return c + gamma_next * v_next


def td_error(v, y):
    return v - y


def importance_ratio(tau_prob, mu_prob, rho_clip=None):
    if mu_prob <= 0.0:
        if tau_prob > 0.0:
            raise CoverageViolation(f"target takes an action with probability {tau_prob} that behavior never takes")
        return 0.0
    rho = tau_prob / mu_prob
    if rho_clip is not None:
        rho = min(rho, rho_clip)
    return rho


def gavf_target(c, gamma_next, q_next, tau_next):
    return c + gamma_next * float(np.dot(tau_next, q_next))


class UdeTracker:
    """Unexpected demon error: |windowed mean delta| / (windowed std delta + eps)."""

    def __init__(self, window=100, eps=1e-8):
        if window < 1:
            raise InvalidParameter("UDE window must be >= 1")
        self.window = int(window)
        self.eps = float(eps)
        self.deltas = deque(maxlen=self.window)

    def update(self, delta):
        self.deltas.append(float(delta))
        return self.value()

    def value(self):
        if not self.deltas:
            return 0.0
        d = np.fromiter(self.deltas, dtype=float, count=len(self.deltas))
        std = float(d.std(ddof=1)) if d.size > 1 else 0.0
        return min(abs(float(d.mean())) / (std + self.eps), 1.0 / self.eps)


def ude(tracker, deltas):
    for d in deltas:
        tracker.update(d)
    return tracker.value()


class ReplayBuffer:
    """Ring buffer of (x, a, c, gamma, x', rho) with an exactly recomputed rho sum."""

    def __init__(self, capacity, dim):
        self.capacity = int(capacity)
        self.X = np.zeros((self.capacity, dim))
        self.X_next = np.zeros((self.capacity, dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.c = np.zeros(self.capacity)
        self.gamma = np.zeros(self.capacity)
        self.rho = np.zeros(self.capacity)
        self.size = 0
        self.pos = 0

    def add(self, x, a, c, gamma, x_next, rho):
        if not (rho >= 0.0 and np.isfinite(rho)):
            raise InvalidArgument(f"rho must be finite and >= 0, got {rho}")
        i = self.pos
        self.X[i] = x
        self.X_next[i] = x_next
        self.actions[i] = a
        self.c[i] = c
        self.gamma[i] = gamma
        self.rho[i] = rho
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def rho_sum(self):
        return float(np.sum(self.rho[:self.size]))

    def rho_bar(self):
        return self.rho_sum() / self.size if self.size else 0.0

    def __len__(self):
        return self.size


# ---------------------------------------------------------------------------
# learners
# ---------------------------------------------------------------------------

class Learner:
    """Owns one approximator for one GVF specification."""

    algorithm = "abstract"
    action_form = False

    def __init__(self, gvf, dim, config, n_actions=None, vfa=None):
        self.gvf = gvf
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        n_actions = n_actions if n_actions is not None else gvf.target_policy.n_actions
        if vfa is None:
            vfa = LinearVfa(dim, n_actions if self.action_form else 0, name=gvf.name, seed=config.seed)
        if vfa.action_form != self.action_form:
            raise InvalidArgument(f"{self.algorithm} learner needs an {'action' if self.action_form else 'state'}-value approximator")
        self.vfa = vfa
        self.ude = UdeTracker(config.ude_window)
        self.last_delta = 0.0
        self.last_rho = 1.0
        self.last_rho_bar = 1.0
        self.last_cumulant = 0.0

    def predict(self, state):
        """GVF prediction at a state (for action forms: expectation under tau)."""
        if self.action_form:
            return float(self.gvf.target_policy.probs(state) @ self.vfa.predict_all(state.x))
        return self.vfa.predict_v(state.x)

    def step(self, tr):
        raise NotImplementedError

    def _record(self, delta, rho=1.0, rho_bar=1.0):
        self.last_delta = float(delta)
        self.last_rho = float(rho)
        self.last_rho_bar = float(rho_bar)
        self.ude.update(delta)
        return delta

    def _td(self, tr, scale):
        c = self.gvf.cumulant(tr)
        self.last_cumulant = c
        gamma = self.gvf.gamma_next(tr)
        delta, ok = _kernels.linear_td_step(self.vfa.weights, tr.features, tr.next_features, c, gamma, scale)
        if not ok:
            raise NumericOverflow(f"update of '{self.gvf.name}' would produce non-finite weights")
        return delta


class TDLearner(Learner):
    """On-policy TD(0)."""

    algorithm = "td"

    def step(self, tr):
        return self._record(self._td(tr, self.config.step_size))


class ISLearner(Learner):
    """Off-policy TD(0) with per-step importance sampling; returns rho * delta."""

    algorithm = "is"

    def step(self, tr):
        tau = self.gvf.target_policy.probs(tr.state)[tr.action]
        rho = importance_ratio(tau, tr.behavior_prob, self.config.rho_clip)
        delta = self._td(tr, self.config.step_size * rho)
        self._record(delta, rho)
        return rho * delta


class ResamplingLearner(Learner):
    """Replay with importance resampling and buffer-average rho correction."""

    algorithm = "resampled"

    def __init__(self, gvf, dim, config, n_actions=None, vfa=None):
        super().__init__(gvf, dim, config, n_actions, vfa)
        self.buffer = ReplayBuffer(config.buffer_capacity, self.vfa.dim)
        self.skipped_updates = 0

    def step(self, tr):
        tau = self.gvf.target_policy.probs(tr.state)[tr.action]
        rho = importance_ratio(tau, tr.behavior_prob, self.config.rho_clip)
        c = self.gvf.cumulant(tr)
        self.last_cumulant = c
        self.buffer.add(tr.features, tr.action, c, self.gvf.gamma_next(tr), tr.next_features, rho)
        total = self.buffer.rho_sum()
        if total <= 0.0:
            self.skipped_updates += 1
            self._record(0.0, rho, 0.0)
            return 0.0
        rho_bar = total / len(self.buffer) if self.config.use_rho_bar else 1.0
        idx = self.sample_indices(self.config.minibatch_size)
        grad, mean_abs = self.minibatch_gradient(idx)
        self.vfa.apply_update(rho_bar * grad, self.config.step_size)
        self._record(mean_abs, rho, rho_bar)
        return mean_abs

    def sample_indices(self, k):
        b = self.buffer
        return _kernels.resample_indices(b.rho, b.size, self.rng.random(k))

    def minibatch_gradient(self, idx):
        """Mean delta_i * x_i over the sampled buffer rows, and mean |delta_i|."""
        b = self.buffer
        return _kernels.minibatch_td_gradient(self.vfa.weights, b.X, b.X_next, b.c, b.gamma, idx)


class GavfLearner(Learner):
    """Expected-target TD for action values; needs no importance weights."""

    algorithm = "gavf"
    action_form = True

    def _bootstrap_probs(self, tr):
        return self.gvf.target_policy.probs(tr.next_state)

    def step(self, tr):
        c = self.gvf.cumulant(tr)
        self.last_cumulant = c
        gamma = self.gvf.gamma_next(tr)
        probs = self._bootstrap_probs(tr) if gamma != 0.0 else np.zeros(self.vfa.n_actions)
        delta, ok = _kernels.action_td_step(
            self.vfa.weights, tr.features, tr.action, tr.next_features,
            np.asarray(probs, dtype=float), c, gamma, self.config.step_size,
        )
        if not ok:
            raise NumericOverflow(f"update of '{self.gvf.name}' would produce non-finite weights")
        return self._record(delta)


class ControlLearner(GavfLearner):
    """Q-learning: bootstrap on max_a' Q(s', a'); act greedily via ``greedy_policy``."""

    algorithm = "control"

    def __init__(self, gvf, dim, config, n_actions=None, vfa=None):
        super().__init__(gvf, dim, config, n_actions, vfa)
        self.greedy_policy = GreedyPolicy(self.vfa)

    def _bootstrap_probs(self, tr):
        return one_hot(int(np.argmax(self.vfa.weights @ tr.next_features)), self.vfa.n_actions)

    def predict(self, state):
        return float(np.max(self.vfa.predict_all(state.x)))


class MonteCarloLearner(Learner):
    """Regression toward complete on-policy returns, one episode at a time."""

    algorithm = "montecarlo"

    def __init__(self, gvf, dim, config, n_actions=None, vfa=None):
        super().__init__(gvf, dim, config, n_actions, vfa)
        self.pending = []
        self.last_mse = 0.0

    def step(self, tr):
        """Buffer a transition; fit the episode once it terminates."""
        self.pending.append(tr)
        self.last_cumulant = self.gvf.cumulant(tr)
        if tr.terminal:
            episode, self.pending = self.pending, []
            self.episode(episode)
        return self.last_delta

    def flush(self):
        """Fit a truncated episode (bootstrapping nothing past its end)."""
        if self.pending:
            episode, self.pending = self.pending, []
            self.episode(episode)

    def episode(self, transitions):
        for tr in transitions:
            tau = self.gvf.target_policy.probs(tr.state)[tr.action]
            if abs(tau - tr.behavior_prob) > 1e-12:
                raise PolicyMismatch(
                    f"'{self.gvf.name}' Monte-Carlo learner needs on-policy data "
                    f"(tau={tau}, mu={tr.behavior_prob})"
                )
        if not transitions:
            return 0.0
        X = np.array([tr.features for tr in transitions])
        c = np.array([self.gvf.cumulant(tr) for tr in transitions], dtype=float)
        g = np.array([self.gvf.gamma_next(tr) for tr in transitions], dtype=float)
        return self.fit(X, c, g)

    def fit(self, X, cumulants, gammas):
        returns = monte_carlo_returns(cumulants, gammas)
        theta = self.vfa.weights.copy()
        sq = _kernels.supervised_sweep(theta, np.ascontiguousarray(X, dtype=float), returns, self.config.step_size)
        if not np.all(np.isfinite(theta)):
            raise NumericOverflow(f"update of '{self.gvf.name}' would produce non-finite weights")
        self.vfa.weights = theta
        self.last_mse = float(np.mean(sq))
        self._record(float(np.sqrt(sq[-1])))
        return self.last_mse


def monte_carlo_returns(cumulants, gammas):
    c = np.asarray(cumulants, dtype=float)
    g = np.asarray(gammas, dtype=float)
    if c.shape != g.shape:
        raise InvalidArgument("cumulants and gammas must have equal length")
    return _kernels.discounted_returns(c, g)


_CLASSES = {
    "td": TDLearner,
    "is": ISLearner,
    "resampled": ResamplingLearner,
    "gavf": GavfLearner,
    "montecarlo": MonteCarloLearner,
    "control": ControlLearner,
}


def make_learner(algorithm, gvf, dim, config, n_actions=None, vfa=None):
    try:
        cls = _CLASSES[algorithm]
    except KeyError:
        raise InvalidParameter(f"unknown algorithm '{algorithm}'; expected one of {ALGORITHMS}") from None
    return cls(gvf, dim, config, n_actions, vfa)


# functional aliases -------------------------------------------------------------

def on_policy_step(learner, tr):
    return learner.step(tr)


def off_policy_is_step(learner, tr):
    return learner.step(tr)


def resampled_replay_step(learner, tr):
    return learner.step(tr)


def gavf_step(learner, tr):
    return learner.step(tr)


def control_gavf_step(learner, tr):
    return learner.step(tr)


def monte_carlo_episode(learner, episode):
    return learner.episode(episode)
