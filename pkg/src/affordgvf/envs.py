"""Bundled environments.

Every environment follows the same stepping contract: ``reset(seed)`` returns
the initial :class:`~affordgvf.core.State`, ``step(action)`` returns a
:class:`StepResult` whose signals are computed on the arrival state.  Finite
(or discretizable) environments also expose ``model()``, the full transition
tensor plus per-transition signal tables, used by the oracle.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .core import State, Transition, one_hot
from .errors import InvalidParameter, NotAvailable, ProtocolError


@dataclass
class FiniteModel:
    """p(s'|s,a) as ``P[s, a, s']`` with signal tables of the same shape.

    Terminal states are absorbing (self-loop rows) and carry value 0.
    """

    P: np.ndarray
    terminal: np.ndarray
    signals: dict
    features: np.ndarray

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]

    def states(self):
        return [State(s, self.features[s]) for s in range(self.n_states)]

    def row_sum_error(self):
        return float(np.max(np.abs(self.P.sum(axis=2) - 1.0)))


class StepResult(NamedTuple):
    state: State
    signals: dict
    terminal: bool
    truncated: bool = False


class Env:
    n_states = None
    n_actions = 0
    feature_dim = 0
    signal_names = ()

    def __init__(self):
        self.rng = np.random.default_rng(0)
        self.state = None
        self.done = True

    def reset(self, seed):
        self.rng = np.random.default_rng(seed)
        self.done = False
        self.t = 0
        self.state = self._initial_state()
        return self.state

    def step(self, action):
        if self.done:
            raise ProtocolError("step() called on a finished episode; call reset() first")
        if not 0 <= action < self.n_actions:
            raise InvalidParameter(f"action {action} outside [0, {self.n_actions})")
        result = self._step(int(action))
        self.t += 1
        self.state = result.state
        self.done = result.terminal or result.truncated
        return result

    def model(self):
        raise NotAvailable(f"{type(self).__name__} has no finite model")

    def features_of(self, state_id):
        raise NotAvailable(f"{type(self).__name__} has no discrete states")

    def state_of(self, state_id):
        return State(int(state_id), self.features_of(state_id))

    def _initial_state(self):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


def make_transition(state, action, result, behavior_prob):
    return Transition(
        features=state.x,
        action=action,
        next_features=result.state.x,
        signals=result.signals,
        behavior_prob=behavior_prob,
        terminal=result.terminal,
        state_id=state.id,
        next_state_id=result.state.id,
    )


# ---------------------------------------------------------------------------
# ChainWorld
# ---------------------------------------------------------------------------

class ChainWorld(Env):
    """n cells in a row; LEFT/RIGHT move deterministically; both ends terminate.

    Cells are states 0..n-1, the left exit is state n and the right exit n+1.
    Features are one-hot over all n+2 states.
    """

    LEFT, RIGHT = 0, 1
    n_actions = 2
    signal_names = ("step_cost", "goal")

    def __init__(self, n=5):
        super().__init__()
        if n < 1:
            raise InvalidParameter("ChainWorld needs n >= 1")
        self.n = int(n)
        self.n_states = self.n + 2
        self.feature_dim = self.n_states
        self.left_exit = self.n
        self.right_exit = self.n + 1
        self._eye = np.eye(self.n_states)

    def features_of(self, state_id):
        return self._eye[state_id]

    def _initial_state(self):
        return self.state_of(self.n // 2)

    def _next(self, s, a):
        if s >= self.n:
            return s
        if a == self.LEFT:
            return self.left_exit if s == 0 else s - 1
        return self.right_exit if s == self.n - 1 else s + 1

    def _signals(self, s_next):
        return {"step_cost": 1.0, "goal": 1.0 if s_next == self.right_exit else 0.0}

    def _step(self, action):
        s_next = self._next(self.state.id, action)
        return StepResult(self.state_of(s_next), self._signals(s_next), s_next >= self.n)

    def model(self):
        S, A = self.n_states, self.n_actions
        P = np.zeros((S, A, S))
        step_cost = np.zeros((S, A, S))
        goal = np.zeros((S, A, S))
        for s in range(S):
            for a in range(A):
                s2 = self._next(s, a)
                P[s, a, s2] = 1.0
                if s < self.n:
                    sig = self._signals(s2)
                    step_cost[s, a, s2] = sig["step_cost"]
                    goal[s, a, s2] = sig["goal"]
        terminal = np.zeros(S, dtype=bool)
        terminal[self.n:] = True
        return FiniteModel(P, terminal, {"step_cost": step_cost, "goal": goal}, self._eye.copy())


# ---------------------------------------------------------------------------
# GridWorld
# ---------------------------------------------------------------------------

class GridWorld(Env):
    """Rectangular grid with walls, named zones, goal and trap cells, and slip.

    With probability ``slip`` the chosen action is replaced by one drawn
    uniformly from all four.  Bumping a wall or the border leaves the agent in
    place.  Entering a goal cell emits ``success`` and a trap cell emits
    ``failure``; both terminate the episode.  Every zone name is also a signal
    channel that reads 1 when the arrival cell is in the zone.

    Cells are (x, y) with y growing downward; state ids enumerate free cells
    row by row.
    """

    UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
    MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))
    n_actions = 4

    def __init__(self, width, height, walls=(), zones=None, goal=(), traps=(), start=None, slip=0.0):
        super().__init__()
        if width < 1 or height < 1:
            raise InvalidParameter("grid dimensions must be positive")
        if not 0.0 <= slip <= 1.0:
            raise InvalidParameter(f"slip must lie in [0, 1], got {slip}")
        self.width, self.height = int(width), int(height)
        self.walls = frozenset(tuple(c) for c in walls)
        self.cells = [(x, y) for y in range(self.height) for x in range(self.width)
                      if (x, y) not in self.walls]
        self.index = {c: i for i, c in enumerate(self.cells)}
        self.n_states = len(self.cells)
        self.feature_dim = self.n_states
        self.slip = float(slip)

        def ids(cells, what):
            out = []
            for c in cells:
                c = tuple(c)
                if c not in self.index:
                    raise InvalidParameter(f"{what} cell {c} is a wall or outside the grid")
                out.append(self.index[c])
            return frozenset(out)

        self.zones = {name: ids(cells, f"zone '{name}'") for name, cells in (zones or {}).items()}
        for reserved in ("success", "failure"):
            if reserved in self.zones:
                raise InvalidParameter(f"zone name '{reserved}' is reserved")
        self.goal = ids(goal, "goal")
        self.traps = ids(traps, "trap")
        self.terminal_ids = self.goal | self.traps
        self.start = None if start is None else next(iter(ids([start], "start")))
        self.signal_names = ("success", "failure") + tuple(self.zones)
        self._eye = np.eye(self.n_states)
        self._moves = np.array([[self._move(s, a) for a in range(4)] for s in range(self.n_states)])

    def features_of(self, state_id):
        return self._eye[state_id]

    def cell_id(self, cell):
        return self.index[tuple(cell)]

    def _move(self, s, a):
        x, y = self.cells[s]
        dx, dy = self.MOVES[a]
        target = (x + dx, y + dy)
        return self.index.get(target, s)

    def _signals(self, s_next):
        sig = {
            "success": 1.0 if s_next in self.goal else 0.0,
            "failure": 1.0 if s_next in self.traps else 0.0,
        }
        for name, members in self.zones.items():
            sig[name] = 1.0 if s_next in members else 0.0
        return sig

    def _initial_state(self):
        if self.start is not None:
            return self.state_of(self.start)
        candidates = [s for s in range(self.n_states) if s not in self.terminal_ids]
        return self.state_of(candidates[int(self.rng.integers(len(candidates)))])

    def _step(self, action):
        if self.slip > 0.0 and self.rng.random() < self.slip:
            action = int(self.rng.integers(4))
        s_next = int(self._moves[self.state.id, action])
        return StepResult(self.state_of(s_next), self._signals(s_next), s_next in self.terminal_ids)

    def model(self):
        S = self.n_states
        P = np.zeros((S, 4, S))
        for s in range(S):
            if s in self.terminal_ids:
                P[s, :, s] = 1.0
                continue
            for a in range(4):
                P[s, a, self._moves[s, a]] += 1.0 - self.slip
                for b in range(4):
                    P[s, a, self._moves[s, b]] += self.slip / 4.0
        live = np.array([s not in self.terminal_ids for s in range(S)], dtype=float)
        signals = {}
        per_state = {name: np.zeros(S) for name in self.signal_names}
        for s in range(S):
            for name, value in self._signals(s).items():
                per_state[name][s] = value
        for name, values in per_state.items():
            # signals exist only on transitions out of live states
            signals[name] = live[:, None, None] * np.broadcast_to(values, (S, 4, S))
        terminal = ~live.astype(bool)
        return FiniteModel(P, terminal, signals, self._eye.copy())

    def shortest_path_lengths(self, targets):
        """Breadth-first distances (ignoring slip) from every cell to the target set."""
        dist = np.full(self.n_states, -1, dtype=int)
        dist[sorted(int(t) for t in targets)] = 0
        level = 0
        while True:
            new = [s for s in range(self.n_states)
                   if dist[s] < 0 and s not in self.terminal_ids
                   and any(dist[self._moves[s, a]] == level for a in range(4))]
            if not new:
                return dist
            level += 1
            dist[new] = level

    def toward_table(self, targets, within=None):
        """Policy table stepping along a shortest path to ``targets`` (lowest action on ties).

        When ``within`` is given, cells outside it step away from the targets
        instead.  Cells that cannot reach the targets, and target cells
        themselves, act uniformly.
        """
        dist = self.shortest_path_lengths(targets)
        inside = None if within is None else set(int(s) for s in within)
        table = np.full((self.n_states, 4), 0.25)
        for s in range(self.n_states):
            if dist[s] <= 0:
                continue
            nxt = dist[self._moves[s]]
            if inside is None or s in inside:
                best = int(np.argmax(nxt == dist[s] - 1))
            else:
                best = int(np.argmax(nxt))
            table[s] = one_hot(best, 4)
        return table


# ---------------------------------------------------------------------------
# LaneWorld
# ---------------------------------------------------------------------------

class LaneWorld(Env):
    """Lateral lane position under steering and Gaussian drift.

    Position p lives in [-1.2, 1.2]; the lane is |p| <= 1.  Steering shifts p
    by -step, 0 or +step, then ``drift + sigma * N(0, 1)`` is added.  Leaving
    the lane terminates the episode; reaching ``horizon`` steps truncates it.

    Discrete state ids are the uniform position bins; ``features`` selects
    one-hot bins or Gaussian radial basis functions centered on the bins.
    The model is the bin-level chain obtained by assuming p uniform within a
    bin, so it approximates the continuous simulation rather than matching it
    exactly.  Choose ``bins`` as a multiple of 12 so that |p| = 1 falls on a bin
    edge.
    """

    LIMIT = 1.2
    LANE = 1.0
    n_actions = 3
    signal_names = ("lane_centeredness", "out_of_lane", "position")

    def __init__(self, bins, sigma=0.01, step=0.05, drift=0.0, horizon=1000,
                 start_spread=0.5, features="bins"):
        super().__init__()
        if bins < 2:
            raise InvalidParameter("LaneWorld needs at least 2 bins")
        if sigma < 0:
            raise InvalidParameter("sigma must be non-negative")
        if features not in ("bins", "rbf"):
            raise InvalidParameter(f"unknown feature encoding '{features}'")
        self.bins = int(bins)
        self.sigma = float(sigma)
        self.step_size = float(step)
        self.drift = float(drift)
        self.horizon = int(horizon)
        self.start_spread = float(start_spread)
        self.encoding = features
        self.n_states = self.bins
        self.feature_dim = self.bins
        self.edges = np.linspace(-self.LIMIT, self.LIMIT, self.bins + 1)
        self.width = self.edges[1] - self.edges[0]
        self.centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.terminal_bins = np.abs(self.centers) > self.LANE
        if self.encoding == "bins":
            self._table = np.eye(self.bins)
        else:
            self._table = np.array([self._rbf(c) for c in self.centers])
        self.p = 0.0

    def bin_of(self, p):
        return min(max(int((p + self.LIMIT) / self.width), 0), self.bins - 1)

    def _rbf(self, p):
        return np.exp(-0.5 * ((p - self.centers) / self.width) ** 2)

    def encode(self, p):
        b = self.bin_of(p)
        x = self._table[b] if self.encoding == "bins" else self._rbf(p)
        return State(b, x)

    def features_of(self, state_id):
        return self._table[state_id]

    def _initial_state(self):
        self.p = float(self.rng.uniform(-self.start_spread, self.start_spread))
        return self.encode(self.p)

    def _signals(self, p):
        return {
            "lane_centeredness": min(max(1.0 - abs(p), 0.0), 1.0),
            "out_of_lane": 1.0 if abs(p) > self.LANE else 0.0,
            "position": p,
        }

    def _step(self, action):
        shift = (action - 1) * self.step_size + self.drift
        noise = self.sigma * self.rng.standard_normal() if self.sigma > 0 else 0.0
        p = self.p + shift + noise
        self.p = min(max(p, -self.LIMIT), self.LIMIT)
        terminal = abs(self.p) > self.LANE
        truncated = not terminal and self.t + 1 >= self.horizon
        return StepResult(self.encode(self.p), self._signals(self.p), terminal, truncated)

    def _arrival_cdf(self, lo, shift):
        """P(p' <= e) for every bin edge e, with p ~ U[lo, lo + width]."""
        e = self.edges
        if self.sigma == 0.0:
            return np.clip((e - shift - lo) / self.width, 0.0, 1.0)
        s = self.sigma

        def G(z):
            return z * norm.cdf(z) + norm.pdf(z)

        F = (s / self.width) * (G((e - lo - shift) / s) - G((e - lo - self.width - shift) / s))
        return np.clip(F, 0.0, 1.0)

    def model(self):
        S, A = self.bins, self.n_actions
        P = np.zeros((S, A, S))
        for b in range(S):
            if self.terminal_bins[b]:
                P[b, :, b] = 1.0
                continue
            for a in range(A):
                F = self._arrival_cdf(self.edges[b], (a - 1) * self.step_size + self.drift)
                F[0], F[-1] = 0.0, 1.0  # clipping folds the tails into the end bins
                P[b, a] = np.diff(F)
        live = (~self.terminal_bins).astype(float)
        signals = {}
        for name in self.signal_names:
            values = np.array([self._signals(c)[name] for c in self.centers])
            signals[name] = live[:, None, None] * np.broadcast_to(values, (S, A, S))
        return FiniteModel(P, self.terminal_bins.copy(), signals, self._table.copy())


def reset(env, seed):
    return env.reset(seed)


def step(env, action):
    return env.step(action)


def model(env):
    return env.model()
