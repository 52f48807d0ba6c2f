"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with ``numba.njit`` and a
vectorized pure-numpy form.  The numba path is used unless numba is missing
or ``AFFORDGVF_DISABLE_NUMBA`` is set to a non-empty value other than ``0``.
Both forms share signatures so callers never branch on the backend.

Kernels never draw random numbers; callers pass uniforms produced by their
own ``numpy.random.Generator`` so results do not depend on the backend's RNG.
"""
import os
import types

import numpy as np

_flag = os.environ.get("AFFORDGVF_DISABLE_NUMBA", "")
NUMBA_REQUESTED = _flag in ("", "0")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# loop forms (numba source)
# ---------------------------------------------------------------------------

def _linear_td_step(theta, x, x_next, c, gamma, scale):
    """theta -= scale * delta * x; returns (delta, applied)."""
    v = 0.0
    v_next = 0.0
    for j in range(theta.shape[0]):
        v += theta[j] * x[j]
        v_next += theta[j] * x_next[j]
    delta = v - (c + gamma * v_next)
    s = scale * delta
    if not np.isfinite(s):
        return delta, False
    for j in range(theta.shape[0]):
        if not np.isfinite(theta[j] - s * x[j]):
            return delta, False
    for j in range(theta.shape[0]):
        theta[j] -= s * x[j]
    return delta, True


def _action_td_step(theta, x, a, x_next, probs_next, c, gamma, scale):
    """Expected-bootstrap update of one action block of a (A, d) weight matrix."""
    n_actions, d = theta.shape
    q = 0.0
    for j in range(d):
        q += theta[a, j] * x[j]
    boot = 0.0
    for b in range(n_actions):
        p = probs_next[b]
        if p != 0.0:
            qb = 0.0
            for j in range(d):
                qb += theta[b, j] * x_next[j]
            boot += p * qb
    delta = q - (c + gamma * boot)
    s = scale * delta
    if not np.isfinite(s):
        return delta, False
    for j in range(d):
        if not np.isfinite(theta[a, j] - s * x[j]):
            return delta, False
    for j in range(d):
        theta[a, j] -= s * x[j]
    return delta, True


def _resample_indices(rho, n, uniforms):
    """Indices drawn with probability rho_i / sum(rho[:n]) from uniforms in [0, 1)."""
    cum = np.empty(n)
    total = 0.0
    for i in range(n):
        total += rho[i]
        cum[i] = total
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    for k in range(uniforms.shape[0]):
        target = uniforms[k] * total
        i = np.searchsorted(cum, target, side="right")
        if i >= n:
            i = n - 1
            while rho[i] <= 0.0:
                i -= 1
        out[k] = i
    return out


def _minibatch_td_gradient(theta, X, X_next, C, G, idx):
    """Mean of delta_i * x_i over the sampled rows; also mean |delta_i|."""
    d = theta.shape[0]
    grad = np.zeros(d)
    abs_sum = 0.0
    k = idx.shape[0]
    for m in range(k):
        i = idx[m]
        v = 0.0
        v_next = 0.0
        for j in range(d):
            v += theta[j] * X[i, j]
            v_next += theta[j] * X_next[i, j]
        delta = v - (C[i] + G[i] * v_next)
        abs_sum += abs(delta)
        for j in range(d):
            grad[j] += delta * X[i, j]
    for j in range(d):
        grad[j] /= k
    return grad, abs_sum / k


def _discounted_returns(c, gamma):
    """G_t = c_{t+1} + gamma_{t+1} G_{t+1}, with G after the last step = 0."""
    n = c.shape[0]
    out = np.empty(n)
    g = 0.0
    for t in range(n - 1, -1, -1):
        g = c[t] + gamma[t] * g
        out[t] = g
    return out


def _generalized_return(c, gamma):
    total = 0.0
    disc = 1.0
    for k in range(c.shape[0]):
        total += disc * c[k]
        disc *= gamma[k]
    return total


def _supervised_sweep(theta, X, G, step_size):
    """Sequential regression steps toward fixed targets; returns squared errors."""
    n, d = X.shape
    sq = np.empty(n)
    for t in range(n):
        v = 0.0
        for j in range(d):
            v += theta[j] * X[t, j]
        err = v - G[t]
        sq[t] = err * err
        s = step_size * err
        for j in range(d):
            theta[j] -= s * X[t, j]
    return sq


# ---------------------------------------------------------------------------
# vectorized numpy forms
# ---------------------------------------------------------------------------

def _np_linear_td_step(theta, x, x_next, c, gamma, scale):
    delta = float(theta @ x - (c + gamma * (theta @ x_next)))
    s = scale * delta
    if not np.isfinite(s):
        return delta, False
    new = theta - s * x
    if not np.all(np.isfinite(new)):
        return delta, False
    theta[:] = new
    return delta, True


def _np_action_td_step(theta, x, a, x_next, probs_next, c, gamma, scale):
    q = float(theta[a] @ x)
    boot = float(probs_next @ (theta @ x_next))
    delta = q - (c + gamma * boot)
    s = scale * delta
    if not np.isfinite(s):
        return delta, False
    new = theta[a] - s * x
    if not np.all(np.isfinite(new)):
        return delta, False
    theta[a] = new
    return delta, True


def _np_resample_indices(rho, n, uniforms):
    cum = np.cumsum(rho[:n])
    idx = np.searchsorted(cum, uniforms * cum[-1], side="right")
    if np.any(idx >= n):
        last = int(np.flatnonzero(rho[:n] > 0.0)[-1])
        idx = np.where(idx >= n, last, idx)
    return idx.astype(np.int64)


def _np_minibatch_td_gradient(theta, X, X_next, C, G, idx):
    xs = X[idx]
    delta = xs @ theta - (C[idx] + G[idx] * (X_next[idx] @ theta))
    grad = delta @ xs / idx.shape[0]
    return grad, float(np.mean(np.abs(delta)))


def _np_discounted_returns(c, gamma):
    n = c.shape[0]
    # time-varying coefficients with possible zeros: no division-free vector form
    out = np.empty(n)
    g = 0.0
    for t in range(n - 1, -1, -1):
        g = c[t] + gamma[t] * g
        out[t] = g
    return out


def _np_generalized_return(c, gamma):
    if c.shape[0] == 0:
        return 0.0
    disc = np.concatenate(([1.0], np.cumprod(gamma[:-1])))
    return float(disc @ c)


def _np_supervised_sweep(theta, X, G, step_size):
    sq = np.empty(X.shape[0])
    for t in range(X.shape[0]):
        err = float(theta @ X[t]) - G[t]
        sq[t] = err * err
        theta -= (step_size * err) * X[t]
    return sq


_NAMES = (
    "linear_td_step",
    "action_td_step",
    "resample_indices",
    "minibatch_td_gradient",
    "discounted_returns",
    "generalized_return",
    "supervised_sweep",
)

numpy_impl = types.SimpleNamespace(**{name: globals()["_np_" + name] for name in _NAMES})

if HAVE_NUMBA:
    numba_impl = types.SimpleNamespace(
        **{name: numba.njit(cache=True)(globals()["_" + name]) for name in _NAMES}
    )
else:  # pragma: no cover
    numba_impl = None

USE_NUMBA = HAVE_NUMBA and NUMBA_REQUESTED
active = numba_impl if USE_NUMBA else numpy_impl
BACKEND = "numba" if USE_NUMBA else "numpy"

linear_td_step = active.linear_td_step
action_td_step = active.action_td_step
resample_indices = active.resample_indices
minibatch_td_gradient = active.minibatch_td_gradient
discounted_returns = active.discounted_returns
generalized_return = active.generalized_return
supervised_sweep = active.supervised_sweep


def warmup(impl=None):
    """Trigger compilation of every kernel with representative argument types."""
    k = impl or active
    theta = np.zeros(3)
    x = np.array([1.0, 0.0, 0.0])
    k.linear_td_step(theta, x, x, 0.0, 0.0, 0.0)
    k.action_td_step(np.zeros((2, 3)), x, 0, x, np.array([0.5, 0.5]), 0.0, 0.0, 0.0)
    rho = np.ones(4)
    idx = k.resample_indices(rho, 4, np.array([0.1, 0.9]))
    k.minibatch_td_gradient(theta, np.eye(4, 3), np.eye(4, 3), np.zeros(4), np.zeros(4), idx)
    k.discounted_returns(np.zeros(2), np.zeros(2))
    k.generalized_return(np.zeros(2), np.zeros(2))
    k.supervised_sweep(theta, np.eye(2, 3), np.zeros(2), 0.0)
