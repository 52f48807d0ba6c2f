"""Implementations behind the command-line subcommands.

Every command takes a resolved :class:`~affordgvf.config.Experiment` and
writes its CSV/model outputs under the experiment's output directory.  Floats
are written with ``repr`` so they round-trip exactly, which also makes reruns
with the same seed byte-identical.
"""
import csv
import os

import numpy as np

from .control import (
    ChainPlan, LearnedInitiationSet, PavlovianController, PavlovianRule,
    build_find_option, execute_chain, train_find_option, what_if_select,
)
from .envs import LaneWorld
from .errors import AffordGvfError, ConfigError, InvalidArgument, ModelFileError, NotAvailable
from .horde import PsrAgent, UniformBinner, demon_seed, markov_diagnostic
from .oracle import value_iteration
from .config import demon_oracle, resolve_state
from .core import UniformPolicy
from .runner import episode_seed, episode_stream
from .vfa import LinearVfa

RUN_LOG_TAIL = ["delta", "rho", "rho_bar", "ude", "episode", "cumulant_observed"]

# independent seed streams for the demo phases
_PAVLOV_STREAM, _CHAIN_STREAM, _PSR_STREAM, _PSR_EVAL_STREAM, _MARKOV_STREAM = 11, 12, 13, 14, 15


class RunFailure(AffordGvfError):
    """A demon update failed mid-run; the message names the demon and step."""


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def model_path(directory, name):
    return os.path.join(directory, f"{name}.gvfm")


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def cmd_oracle(exp):
    try:
        model = exp.model()
    except NotAvailable as exc:
        raise NotAvailable(f"oracle needs a finite or discretizable environment: {exc}") from None
    A = model.n_actions
    rows = []
    for d in exp.demons:
        v, q = demon_oracle(model, d)
        for s in range(model.n_states):
            if model.terminal[s]:
                continue
            rows.append([d.name, s, v[s]] + list(q[s]))
    header = ["demon", "state", "v"] + [f"q_{a}" for a in range(A)]
    return write_csv(exp.path("oracle"), header, rows)


def read_oracle_csv(path):
    """{demon: {state: (v, q array)}} from a file written by :func:`cmd_oracle`."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            q = np.array([float(row[k]) for k in row if k.startswith("q_")])
            out.setdefault(row["demon"], {})[int(row["state"])] = (float(row["v"]), q)
    return out


# ---------------------------------------------------------------------------
# learning
# ---------------------------------------------------------------------------

def _has_training(exp):
    run = exp.cfg["run"]
    return run.get("steps", 0) > 0 or run.get("episodes", 0) > 0


def train(exp, horde=None, on_log=None):
    """Run the behavior policy and update every demon; returns the horde.

    ``on_log(step, episode, horde, tr)`` fires every log interval.
    """
    horde = horde or exp.build_horde()
    run = exp.cfg["run"]
    steps, episodes = run.get("steps"), run.get("episodes")
    if steps is None and episodes is None:
        steps = 0
    interval = run.get("log_interval", 1000)
    mc = [d for d in horde.demons if d.learner.algorithm == "montecarlo"]
    t = 0
    stream = episode_stream(exp.env, exp.behavior, exp.seed, steps=steps, episodes=episodes,
                            max_episode_steps=run.get("max_episode_steps"))
    for episode, tr, ended in stream:
        report = horde.step(tr)
        for name, result in report.items():
            if isinstance(result, Exception):
                raise RunFailure(f"demon '{name}' failed at step {t}: {result}")
        if ended:
            for d in mc:
                try:
                    d.learner.flush()
                except AffordGvfError as exc:
                    raise RunFailure(f"demon '{d.name}' failed at step {t}: {exc}") from None
        t += 1
        if on_log is not None and t % interval == 0:
            on_log(t, episode, horde, tr)
    return horde


def save_models(exp, horde, directory=None):
    directory = directory or exp.path("models")
    os.makedirs(directory, exist_ok=True)
    paths = []
    for d in horde.demons:
        path = model_path(directory, d.name)
        d.learner.vfa.save(path)
        paths.append(path)
    return paths


def cmd_learn(exp):
    probes = [exp.env.state_of(s) for s in exp.probe_states]
    rows = []
    ups = []

    def on_log(step, episode, horde, tr):
        for d in horde.demons:
            lr = d.learner
            preds = [lr.predict(s) for s in probes]
            rows.append([step, d.name] + preds + [
                lr.last_delta, lr.last_rho, lr.last_rho_bar, lr.ude.value(), episode, float(lr.last_cumulant),
            ])
        ups.append([step, episode] + list(horde.predict_vector(tr.next_state)))

    horde = train(exp, on_log=on_log)
    header = ["step", "demon"] + [f"pred_{s}" for s in exp.probe_states] + RUN_LOG_TAIL
    log = write_csv(exp.path("run_log"), header, rows)
    if "upsilon" in exp.outputs:
        write_csv(exp.path("upsilon"), ["step", "episode"] + horde.names, ups)
    save_models(exp, horde)
    return horde, log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def load_models(exp, directory):
    """Copy saved weights into the experiment's approximators, checking shapes."""
    for d in exp.demons:
        path = model_path(directory, d.name)
        try:
            vfa = LinearVfa.load(path)
        except FileNotFoundError:
            raise ModelFileError(f"missing model file {path}") from None
        if vfa.dim != d.vfa.dim or vfa.n_actions != d.vfa.n_actions:
            raise InvalidArgument(
                f"model {path} has dim={vfa.dim}, n_actions={vfa.n_actions}; "
                f"demon '{d.name}' needs dim={d.vfa.dim}, n_actions={d.vfa.n_actions}"
            )
        d.vfa.weights = vfa.weights.copy()


def _oracle_or_none(exp):
    try:
        return exp.model()
    except NotAvailable:
        return None


def cmd_eval(exp, models_dir=None):
    load_models(exp, models_dir or exp.path("models"))
    horde = exp.build_horde()
    model = _oracle_or_none(exp)
    rows = []
    summary = {}
    for d in horde.demons:
        plan = exp.demon(d.name)
        v = demon_oracle(model, plan)[0] if model is not None else None
        errs = []
        for s in exp.probe_states:
            pred = d.learner.predict(exp.env.state_of(s))
            if v is None:
                rows.append([d.name, s, pred, "", ""])
            else:
                err = abs(pred - v[s])
                errs.append(err)
                rows.append([d.name, s, pred, v[s], err])
        if errs:
            summary[d.name] = max(errs)
            rows.append([d.name, "Linf", "", "", summary[d.name]])
    write_csv(exp.path("eval"), ["demon", "state", "prediction", "oracle", "abs_error"], rows)
    return summary


# ---------------------------------------------------------------------------
# demos
# ---------------------------------------------------------------------------

def prepare_demons(exp, block, which):
    """Trained horde for a demo: load models, run the embedded training, or use oracle weights."""
    if "models" in block:
        load_models(exp, block["models"])
        return exp.build_horde()
    if _has_training(exp):
        return train(exp)
    if exp.demons and all(d.init == "oracle" for d in exp.demons):
        return exp.build_horde()
    raise ConfigError(
        f"config.control.{which}: no trained models; set control.{which}.models "
        "or configure run.steps / run.episodes for embedded training"
    )


def _report_path(exp, which):
    if "report" in exp.cfg.get("output", {}):
        return exp.path("report")
    return os.path.join(exp.out_dir, f"{which}-report.csv")


def demo_pavlovian(exp):
    block = exp.cfg["control"]["pavlovian"]
    if not isinstance(exp.env, LaneWorld):
        raise ConfigError("config.control.pavlovian: the lane-keeping demo needs a lane environment")
    horde = prepare_demons(exp, block, "pavlovian")
    rules = [PavlovianRule(r["action"], tuple(tuple(c) for c in r.get("when", [])), r.get("priority", 0))
             for r in block["rules"]]
    ctl = PavlovianController(rules, horde.names)
    env = exp.env
    total, steps, ep = block["steps"], 0, 0
    rows = []
    in_lane_total = exits = 0
    while steps < total:
        state = env.reset(episode_seed(exp.seed, ep, _PAVLOV_STREAM))
        n = in_lane = 0
        left = False
        while steps < total:
            result = env.step(ctl.act(horde.predict_vector(state)))
            steps += 1
            n += 1
            in_lane += abs(env.p) <= env.LANE
            if result.terminal or result.truncated:
                left = result.terminal
                break
            state = result.state
        rows.append(["episode", ep, n, in_lane, in_lane / n, left])
        in_lane_total += in_lane
        exits += left
        ep += 1
    summary = {"episodes": ep, "steps": steps, "in_lane_fraction": in_lane_total / steps, "exits": exits}
    rows.append(["summary", ep, steps, in_lane_total, summary["in_lane_fraction"], exits])
    write_csv(_report_path(exp, "pavlovian"),
              ["row", "episode", "steps", "in_lane_steps", "in_lane_fraction", "left_lane"], rows)
    return summary


def demo_chain(exp):
    block = exp.cfg["control"]["chain"]
    horde = prepare_demons(exp, block, "chain")
    env = exp.env
    success = horde[block["success_demon"]]
    target = LearnedInitiationSet(success.learner, block.get("threshold", 0.8))
    states = [env.state_of(s) for s in range(env.n_states)]
    fb = block["find"]
    task = build_find_option(target, states, fb.get("gamma", 0.9))
    finder = train_find_option(task, env, fb["steps"], fb.get("step_size", 0.5),
                               seed=demon_seed(exp.seed, "find"))
    plan = ChainPlan(finder.greedy_policy, target, success.spec.option)
    saved_start = env.start
    if block.get("start") is not None:
        env.start = resolve_state(env, block["start"], "config.control.chain.start")
    rows = []
    try:
        reports = [execute_chain(plan, env, block["max_steps"], episode_seed(exp.seed, k, _CHAIN_STREAM))
                   for k in range(block["episodes"])]
    finally:
        env.start = saved_start
    for k, rep in enumerate(reports):
        rows.append(["episode", k, rep.status, rep.phase1_steps, rep.phase2_steps, rep.success])
    n = len(reports)
    summary = {
        "episodes": n,
        "success_rate": sum(r.success for r in reports) / n,
        "mean_phase1": float(np.mean([r.phase1_steps for r in reports])),
        "mean_phase2": float(np.mean([r.phase2_steps for r in reports])),
        "initiation_size": sum(bool(target(s)) for s in states),
        "chain_failures": sum(r.status == "chain-failure" for r in reports),
    }
    rows.append(["summary", n, "", summary["mean_phase1"], summary["mean_phase2"], summary["success_rate"]])
    write_csv(_report_path(exp, "chain"),
              ["row", "episode", "status", "phase1_steps", "phase2_steps", "success"], rows)
    summary["reports"] = reports
    summary["finder"] = finder
    summary["target"] = target
    return summary


def demo_psr(exp):
    block = exp.cfg["control"]["psr"]
    horde = prepare_demons(exp, block, "psr")
    env = exp.env
    channel = block["reward_channel"]
    gamma = block.get("gamma", 0.9)
    max_steps = block.get("max_steps", 100)
    binner = UniformBinner(block["lows"], block["highs"], block.get("bins", 10))
    agent = PsrAgent(binner, env.n_actions, block.get("step_size", 0.5), gamma,
                     block.get("epsilon", 0.1), seed=demon_seed(exp.seed, "psr-agent"))
    rows = []

    def rollout(seed, greedy):
        state = env.reset(seed)
        u = horde.predict_vector(state)
        ret, k = 0.0, 0
        for k in range(1, max_steps + 1):
            a = agent.greedy(u) if greedy else agent.act(u)
            result = env.step(a)
            r = result.signals[channel]
            u2 = horde.predict_vector(result.state)
            if not greedy:
                agent.update(u, a, r, u2, result.terminal)
            ret += gamma ** (k - 1) * r
            if result.terminal or result.truncated:
                break
            u = u2
        return state, k, ret

    for ep in range(block["episodes"]):
        _, k, ret = rollout(episode_seed(exp.seed, ep, _PSR_STREAM), greedy=False)
        rows.append(["episode", ep, k, ret, "", "", "", "", ""])
    start, k, greedy_return = rollout(episode_seed(exp.seed, 0, _PSR_EVAL_STREAM), greedy=True)
    summary = {"greedy_steps": k, "greedy_return": greedy_return, "clamped": binner.clamped}
    model = _oracle_or_none(exp)
    if model is not None:
        v, _ = value_iteration(model, model.signals[channel], np.full(model.n_states, gamma))
        summary["optimal_return"] = float(v[start.id])
        summary["match"] = abs(greedy_return - summary["optimal_return"]) <= 1e-9
    markov = None
    n_markov = block.get("markov_episodes", 0)
    if n_markov:
        episodes = []
        mu = UniformPolicy(env.n_actions)
        rng = np.random.default_rng(demon_seed(exp.seed, "markov"))
        for ep in range(n_markov):
            state = env.reset(episode_seed(exp.seed, ep, _MARKOV_STREAM))
            us, acts = [horde.predict_vector(state)], []
            for _ in range(max_steps):
                a = mu.sample(state, rng)
                result = env.step(a)
                acts.append(a)
                us.append(horde.predict_vector(result.state))
                if result.terminal or result.truncated:
                    break
                state = result.state
            episodes.append((us, acts))
        markov = markov_diagnostic(episodes, binner)
        summary.update(markov_discrepancy=markov.max_discrepancy, markov_excess=markov.max_excess,
                       markov=markov.markov)
    rows.append(["summary", block["episodes"], k, greedy_return, summary.get("optimal_return", ""),
                 summary.get("match", ""),
                 "" if markov is None else markov.max_discrepancy,
                 "" if markov is None else markov.max_excess,
                 "" if markov is None else markov.markov])
    write_csv(_report_path(exp, "psr"),
              ["row", "episode", "steps", "return", "optimal_return", "match",
               "markov_discrepancy", "markov_excess", "markov"], rows)
    return summary


def demo_whatif(exp):
    block = exp.cfg["control"]["whatif"]
    horde = prepare_demons(exp, block, "whatif")
    env = exp.env
    weights = block["weights"]
    candidates = block.get("candidates", list(range(env.n_actions)))
    gavfs = {name: horde[name].learner.vfa for name in weights}
    if "states" in block:
        states = [resolve_state(env, s, f"config.control.whatif.states[{i}]") for i, s in enumerate(block["states"])]
    else:
        states = exp.probe_states
    model = _oracle_or_none(exp)
    ref = None
    if model is not None:
        ref = sum(w * demon_oracle(model, exp.demon(name))[1] for name, w in weights.items())
    rows = []
    matches = []
    for s in states:
        best, scores = what_if_select(gavfs, weights, env.features_of(s), candidates)
        oracle_best = ""
        if ref is not None:
            oracle_best = max(candidates, key=lambda a: (ref[s, a], -candidates.index(a)))
            matches.append(best == oracle_best)
        rows.append(["state", s, best, oracle_best, "" if ref is None else best == oracle_best]
                    + [scores[a] for a in candidates])
    summary = {"states": len(states)}
    if matches:
        summary["match_rate"] = sum(matches) / len(matches)
    rows.append(["summary", len(states), "", "", summary.get("match_rate", "")] + [""] * len(candidates))
    write_csv(_report_path(exp, "whatif"),
              ["row", "state", "selected", "oracle_action", "match"] + [f"score_{a}" for a in candidates], rows)
    return summary


DEMOS = {"pavlovian": demo_pavlovian, "chain": demo_chain, "psr": demo_psr, "whatif": demo_whatif}


def cmd_demo(which, exp):
    if which not in exp.cfg.get("control", {}):
        raise ConfigError(f"config.control.{which}: missing block for the '{which}' demo")
    return DEMOS[which](exp)
