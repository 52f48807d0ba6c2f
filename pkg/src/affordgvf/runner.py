"""Rollout loops that turn an environment plus a policy into transitions."""
import numpy as np

from .envs import make_transition
from .errors import InvalidArgument


def episode_seed(seed, episode, stream=0):
    """Reset seed for episode ``episode``; ``stream`` separates independent uses of one seed."""
    key = [int(seed), int(episode)] + ([int(stream)] if stream else [])
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])


def episode_stream(env, behavior, seed, steps=None, episodes=None, max_episode_steps=None):
    """Yield ``(episode, transition, ended)`` under ``behavior``.

    Stops after ``steps`` transitions or ``episodes`` completed episodes
    (whichever is given).  An episode that runs ``max_episode_steps`` steps
    without ending is cut off and reported as ended.  Episode k is reset with
    a seed derived from (seed, k); action draws use their own generator so
    environment and behavior randomness stay independent.
    """
    if (steps is None) == (episodes is None):
        raise InvalidArgument("give exactly one of steps or episodes")
    rng = np.random.default_rng([int(seed), 0xBE4A])
    episode = 0
    taken = 0
    if steps == 0 or episodes == 0:
        return
    state = env.reset(episode_seed(seed, episode))
    in_episode = 0
    while True:
        probs = behavior.probs(state)
        a = behavior.sample(state, rng)
        result = env.step(a)
        taken += 1
        in_episode += 1
        ended = env.done or (max_episode_steps is not None and in_episode >= max_episode_steps)
        yield episode, make_transition(state, a, result, float(probs[a])), ended
        if steps is not None and taken >= steps:
            return
        if ended:
            episode += 1
            if episodes is not None and episode >= episodes:
                return
            state = env.reset(episode_seed(seed, episode))
            in_episode = 0
        else:
            state = result.state


def behavior_stream(env, behavior, steps, seed):
    """Yield ``steps`` transitions under ``behavior``, resetting after each episode."""
    for _, tr, _ in episode_stream(env, behavior, seed, steps=steps):
        yield tr


def run_episode(env, policy, seed, max_steps, termination=None, rng=None):
    """One episode under ``policy``; stops at env termination, at a sampled
    ``termination`` (option beta evaluated on arrival), or after ``max_steps``.

    Returns (transitions, stopped_by) with stopped_by in {"terminal", "beta", "budget", "truncated"}.
    """
    rng = rng if rng is not None else np.random.default_rng([int(seed), 0xE915])
    state = env.reset(seed)
    out = []
    for _ in range(max_steps):
        probs = policy.probs(state)
        a = policy.sample(state, rng)
        result = env.step(a)
        out.append(make_transition(state, a, result, float(probs[a])))
        if result.terminal:
            return out, "terminal"
        if termination is not None and rng.random() < termination(result.state):
            return out, "beta"
        if result.truncated:
            return out, "truncated"
        state = result.state
    return out, "budget"
