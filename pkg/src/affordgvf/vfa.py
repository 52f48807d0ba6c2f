"""Linear value-function approximation: V(s) = theta . x(s), Q(s, a) = theta_a . x(s).

Model files are a one-line JSON header followed by the weights as contiguous
little-endian float64.  Header keys are sorted so identical models produce
identical bytes.
"""
import json
from pathlib import Path

import numpy as np

from .errors import CorruptFile, InvalidArgument, NumericOverflow, VersionMismatch

FORMAT_VERSION = 1
MAGIC = "affordgvf-model"


class LinearVfa:
    def __init__(self, dim, n_actions=0, weights=None, name="", seed=0):
        if dim < 1:
            raise InvalidArgument("dim must be >= 1")
        if n_actions < 0:
            raise InvalidArgument("n_actions must be >= 0")
        self.dim = int(dim)
        self.n_actions = int(n_actions)
        self.name = name
        self.seed = int(seed)
        shape = (self.n_actions, self.dim) if self.n_actions else (self.dim,)
        if weights is None:
            self.weights = np.zeros(shape)
        else:
            w = np.array(weights, dtype=np.float64)
            if w.shape != shape:
                raise InvalidArgument(f"weights shape {w.shape} != expected {shape}")
            if not np.all(np.isfinite(w)):
                raise InvalidArgument("weights must be finite")
            self.weights = w

    @property
    def action_form(self):
        return self.n_actions > 0

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InvalidArgument(f"feature vector has shape {x.shape}, expected ({self.dim},)")
        return x

    def _check_action(self, a):
        if not self.action_form:
            raise InvalidArgument("state-value approximator has no actions")
        if a is None:
            raise InvalidArgument("action-value approximator needs an action")
        if not 0 <= a < self.n_actions:
            raise InvalidArgument(f"action {a} outside [0, {self.n_actions})")

    def predict_v(self, x):
        if self.action_form:
            raise InvalidArgument("predict_v needs a state-value approximator")
        return float(self.weights @ self._check_x(x))

    def predict_q(self, x, a):
        self._check_action(a)
        return float(self.weights[a] @ self._check_x(x))

    def predict_all(self, x):
        """Q(x, .) for every action."""
        if not self.action_form:
            raise InvalidArgument("predict_all needs an action-value approximator")
        return self.weights @ self._check_x(x)

    def gradient(self, x, a=None):
        x = self._check_x(x)
        if not self.action_form:
            if a is not None:
                raise InvalidArgument("state-value approximator takes no action")
            return x.copy()
        self._check_action(a)
        g = np.zeros_like(self.weights)
        g[a] = x
        return g

    def apply_update(self, scaled_gradient, step_size):
        """theta <- theta - step_size * scaled_gradient; refuses non-finite results."""
        g = np.asarray(scaled_gradient, dtype=float)
        if g.shape != self.weights.shape:
            raise InvalidArgument(f"gradient shape {g.shape} != weights {self.weights.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            new = self.weights - step_size * g
        if not np.all(np.isfinite(new)):
            raise NumericOverflow(f"update of '{self.name}' would produce non-finite weights")
        self.weights = new

    def copy(self):
        return LinearVfa(self.dim, self.n_actions, self.weights.copy(), self.name, self.seed)

    # persistence -----------------------------------------------------------

    def to_bytes(self):
        header = {
            "magic": MAGIC,
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "dim": self.dim,
            "n_actions": self.n_actions,
            "seed": self.seed,
            "dtype": "<f8",
            "count": int(self.weights.size),
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
        return head + self.weights.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data):
        nl = data.find(b"\n")
        if nl < 0:
            raise CorruptFile("model header not terminated")
        try:
            header = json.loads(data[:nl].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptFile(f"unreadable model header: {exc}") from None
        if not isinstance(header, dict) or header.get("magic") != MAGIC:
            raise CorruptFile("not a model file")
        if header.get("format_version") != FORMAT_VERSION:
            raise VersionMismatch(
                f"model format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
            )
        try:
            dim, n_actions, count = int(header["dim"]), int(header["n_actions"]), int(header["count"])
        except (KeyError, TypeError, ValueError):
            raise CorruptFile("model header missing dimensions") from None
        body = data[nl + 1:]
        expected = dim * max(n_actions, 1)
        if count != expected or len(body) != 8 * count:
            raise CorruptFile(f"model body has {len(body)} bytes, expected {8 * expected}")
        w = np.frombuffer(body, dtype="<f8").astype(np.float64)
        if not np.all(np.isfinite(w)):
            raise CorruptFile("model weights contain non-finite values")
        if n_actions:
            w = w.reshape(n_actions, dim)
        return cls(dim, n_actions, w, header.get("name", ""), header.get("seed", 0))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def predict_v(vfa, x):
    return vfa.predict_v(x)


def predict_q(vfa, x, a):
    return vfa.predict_q(x, a)


def gradient(vfa, x, a=None):
    return vfa.gradient(x, a)


def apply_update(vfa, scaled_gradient, step_size):
    vfa.apply_update(scaled_gradient, step_size)


def save(vfa, path):
    vfa.save(path)


def load(path):
    return LinearVfa.load(path)
