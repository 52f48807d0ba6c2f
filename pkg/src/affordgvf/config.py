"""Experiment configuration: JSON schema, validation and object construction.

Validation happens in two passes.  The JSON schema checks structure and
types and rejects unknown keys; the resolution pass checks names that only
make sense against a built environment (signal channels, state ids, demon
references).  Both report errors as ``config.<path>: message``.
"""
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .core import (
    AffordanceSpec, ConstantContinuation, ConstantCumulant,
    ConstantTermination, GreedyPolicy, GvfSpec, IndicatorCumulant, OptionSpec,
    OutcomeCumulant, SetTermination, SignalCumulant, StateSet, TableContinuation,
    TableTermination, TabularPolicy, FixedActionPolicy, UniformPolicy, everywhere,
)
from .envs import ChainWorld, GridWorld, LaneWorld
from .errors import AffordGvfError, ConfigError
from .horde import Horde
from .learners import ALGORITHMS, LearnerConfig
from .oracle import continuation_vector, solve_gvf, value_iteration
from .vfa import LinearVfa

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_CELL = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
_STATE_REF = {"anyOf": [{"type": "integer", "minimum": 0}, _CELL]}
_STATE_LIST = {"type": "array", "items": _STATE_REF}
_CELL_LIST = {"type": "array", "items": _CELL}
_NAME = {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}


def _obj(properties, required=()):
    return {"type": "object", "properties": properties, "required": list(required),
            "additionalProperties": False}


def _tagged(variants):
    """Object discriminated by its ``type`` field; each variant lists its own keys."""
    rules = []
    for tag, (props, req) in variants.items():
        props = dict(props, type={"const": tag})
        rules.append({"if": {"properties": {"type": {"const": tag}}, "required": ["type"]},
                      "then": _obj(props, ("type",) + tuple(req))})
    return {"type": "object", "required": ["type"],
            "properties": {"type": {"enum": sorted(variants)}}, "allOf": rules}


ENVIRONMENT = _tagged({
    "chain": ({"n": {"type": "integer", "minimum": 1}}, ()),
    "grid": ({
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "walls": _CELL_LIST,
        "zones": {"type": "object", "additionalProperties": _CELL_LIST},
        "goal": _CELL_LIST,
        "traps": _CELL_LIST,
        "start": {"anyOf": [_CELL, {"type": "null"}]},
        "slip": _UNIT,
    }, ("width", "height")),
    "lane": ({
        "bins": {"type": "integer", "minimum": 2},
        "sigma": {"type": "number", "minimum": 0},
        "step": _NUM,
        "drift": _NUM,
        "horizon": {"type": "integer", "minimum": 1},
        "start_spread": {"type": "number", "minimum": 0},
        "features": {"enum": ["bins", "rbf"]},
    }, ("bins",)),
})

POLICY = _tagged({
    "uniform": ({}, ()),
    "fixed": ({"action": {"type": "integer", "minimum": 0}}, ("action",)),
    "tabular": ({"probs": {"type": "array", "items": {"type": "array", "items": _UNIT}}}, ("probs",)),
    "greedy": ({"demon": _NAME, "epsilon": _UNIT}, ("demon",)),
    "toward": ({"targets": _STATE_LIST, "within": _STATE_LIST}, ("targets",)),
})

CUMULANT = _tagged({
    "constant": ({"value": _NUM}, ("value",)),
    "signal": ({"channel": {"type": "string"}, "scale": _NUM}, ("channel",)),
    "indicator": ({"states": _STATE_LIST, "value": _NUM}, ("states",)),
    "outcome": ({"channel": {"type": "string"}}, ("channel",)),
})

TERMINATION = _tagged({
    "constant": ({"prob": _UNIT}, ("prob",)),
    "set": ({"states": _STATE_LIST, "complement": {"type": "boolean"}}, ("states",)),
    "table": ({"values": {"type": "array", "items": _UNIT}}, ("values",)),
})

CONTINUATION = _tagged({
    "constant": ({"value": _UNIT}, ("value",)),
    "table": ({"values": {"type": "array", "items": _UNIT}}, ("values",)),
})

LEARNER = _obj({
    "algorithm": {"enum": list(ALGORITHMS)},
    "step_size": {"type": "number", "exclusiveMinimum": 0},
    "buffer": {"type": "integer", "minimum": 1},
    "minibatch": {"type": "integer", "minimum": 1},
    "rho_clip": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]},
    "use_rho_bar": {"type": "boolean"},
    "ude_window": {"type": "integer", "minimum": 2},
    "init": {"enum": ["zero", "oracle"]},
}, ("algorithm", "step_size"))

OPTION = _obj({
    "policy": POLICY,
    "termination": TERMINATION,
    "gamma": _UNIT,
    "initiation": _STATE_LIST,
}, ("policy", "termination"))

DEMON = {
    **_obj({
        "name": _NAME,
        "cumulant": CUMULANT,
        "target_policy": POLICY,
        "continuation": CONTINUATION,
        "option": OPTION,
        "learner": LEARNER,
    }, ("name", "cumulant", "learner")),
    "oneOf": [{"required": ["continuation"]}, {"required": ["option"]}],
}

CONDITION = {"type": "array", "prefixItems": [_NAME, {"enum": ["<", "<=", ">", ">="]}, _NUM],
             "items": False, "minItems": 3}

CONTROL = _obj({
    "pavlovian": _obj({
        "rules": {"type": "array", "minItems": 1, "items": _obj({
            "action": {"type": "integer", "minimum": 0},
            "when": {"type": "array", "items": CONDITION},
            "priority": {"type": "integer"},
        }, ("action",))},
        "steps": {"type": "integer", "minimum": 1},
        "models": {"type": "string"},
    }, ("rules", "steps")),
    "whatif": _obj({
        "weights": {"type": "object", "minProperties": 1, "additionalProperties": _NUM},
        "candidates": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "states": _STATE_LIST,
        "models": {"type": "string"},
    }, ("weights",)),
    "chain": _obj({
        "success_demon": _NAME,
        "threshold": _UNIT,
        "find": _obj({
            "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "steps": {"type": "integer", "minimum": 1},
            "step_size": {"type": "number", "exclusiveMinimum": 0},
        }, ("steps",)),
        "episodes": {"type": "integer", "minimum": 1},
        "max_steps": {"type": "integer", "minimum": 1},
        "start": {"anyOf": [_STATE_REF, {"type": "null"}]},
        "models": {"type": "string"},
    }, ("success_demon", "find", "episodes", "max_steps")),
    "psr": _obj({
        "reward_channel": {"type": "string"},
        "gamma": _UNIT,
        "bins": {"type": "integer", "minimum": 1},
        "lows": {"type": "array", "items": _NUM},
        "highs": {"type": "array", "items": _NUM},
        "episodes": {"type": "integer", "minimum": 1},
        "max_steps": {"type": "integer", "minimum": 1},
        "epsilon": _UNIT,
        "step_size": {"type": "number", "exclusiveMinimum": 0},
        "markov_episodes": {"type": "integer", "minimum": 0},
        "models": {"type": "string"},
    }, ("reward_channel", "lows", "highs", "episodes")),
})

RUN = {
    **_obj({
        "steps": {"type": "integer", "minimum": 0},
        "episodes": {"type": "integer", "minimum": 0},
        "max_episode_steps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "log_interval": {"type": "integer", "minimum": 1},
        "probe_states": _STATE_LIST,
    }, ()),
    "not": {"required": ["steps", "episodes"]},
}

OUTPUT = _obj({
    "dir": {"type": "string"},
    "run_log": {"type": "string"},
    "upsilon": {"type": "string"},
    "models": {"type": "string"},
    "oracle": {"type": "string"},
    "eval": {"type": "string"},
    "report": {"type": "string"},
})

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    **_obj({
        "schema_version": {"const": SCHEMA_VERSION},
        "environment": ENVIRONMENT,
        "behavior": POLICY,
        "demons": {"type": "array", "items": DEMON},
        "control": CONTROL,
        "run": RUN,
        "output": OUTPUT,
    }, ("schema_version", "environment", "demons", "run")),
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _path(parts):
    out = "config"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _leaf_errors(error):
    """Descend into if/then and oneOf wrappers to the error that names the real problem."""
    if error.context:
        deepest = max(error.context, key=lambda e: len(e.absolute_path))
        if len(deepest.absolute_path) >= len(error.absolute_path):
            return _leaf_errors(deepest)
    return error


def validate(cfg):
    """Raise ConfigError with every schema violation, one per line, path-qualified."""
    errors = sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        lines = []
        for err in errors:
            leaf = _leaf_errors(err)
            lines.append(f"{_path(leaf.absolute_path)}: {leaf.message}")
        raise ConfigError("\n".join(dict.fromkeys(lines)))
    return cfg


def fixture_path(name):
    """Path of a shipped fixture file, e.g. ``fixture_path("chain-td.json")``."""
    return str(resources.files("affordgvf") / "fixtures" / name)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return validate(cfg)


# ---------------------------------------------------------------------------
# resolution against a built environment
# ---------------------------------------------------------------------------

def build_env(block):
    kind = block["type"]
    params = {k: v for k, v in block.items() if k != "type"}
    try:
        if kind == "chain":
            return ChainWorld(**params)
        if kind == "grid":
            for key in ("walls", "goal", "traps"):
                if key in params:
                    params[key] = [tuple(c) for c in params[key]]
            if params.get("start") is not None:
                params["start"] = tuple(params["start"])
            return GridWorld(**params)
        return LaneWorld(**params)
    except AffordGvfError as exc:
        raise ConfigError(f"config.environment: {exc}") from None


def resolve_state(env, ref, where):
    if isinstance(ref, list):
        if not isinstance(env, GridWorld):
            raise ConfigError(f"{where}: cell coordinates need a grid environment")
        if tuple(ref) not in env.index:
            raise ConfigError(f"{where}: cell {tuple(ref)} is a wall or outside the grid")
        return env.index[tuple(ref)]
    if not 0 <= ref < env.n_states:
        raise ConfigError(f"{where}: state {ref} outside [0, {env.n_states})")
    return int(ref)


def resolve_states(env, refs, where):
    return [resolve_state(env, r, f"{where}[{i}]") for i, r in enumerate(refs)]


def _table(values, n, where):
    if len(values) != n:
        raise ConfigError(f"{where}: expected {n} entries, got {len(values)}")
    return np.asarray(values, dtype=float)


def build_policy(block, env, vfas, where):
    kind = block["type"]
    A = env.n_actions
    if kind == "uniform":
        return UniformPolicy(A)
    if kind == "fixed":
        if block["action"] >= A:
            raise ConfigError(f"{where}.action: {block['action']} outside [0, {A})")
        return FixedActionPolicy(block["action"], A)
    if kind == "tabular":
        probs = np.asarray(block["probs"], dtype=float)
        if probs.shape != (env.n_states, A):
            raise ConfigError(f"{where}.probs: expected shape ({env.n_states}, {A}), got {probs.shape}")
        try:
            return TabularPolicy(probs)
        except AffordGvfError as exc:
            raise ConfigError(f"{where}.probs: {exc}") from None
    if kind == "toward":
        if not isinstance(env, GridWorld):
            raise ConfigError(f"{where}: 'toward' policies need a grid environment")
        within = resolve_states(env, block["within"], f"{where}.within") if "within" in block else None
        return TabularPolicy(env.toward_table(resolve_states(env, block["targets"], f"{where}.targets"), within))
    name = block["demon"]
    if name not in vfas:
        raise ConfigError(f"{where}.demon: unknown demon '{name}'")
    if not vfas[name].action_form:
        raise ConfigError(f"{where}.demon: '{name}' is not an action-value demon")
    return GreedyPolicy(vfas[name], block.get("epsilon", 0.0))


def build_cumulant(block, env, where):
    kind = block["type"]
    if kind == "constant":
        return ConstantCumulant(block["value"])
    if kind == "indicator":
        return IndicatorCumulant(resolve_states(env, block["states"], f"{where}.states"), block.get("value", 1.0))
    channel = block["channel"]
    if channel not in env.signal_names:
        raise ConfigError(f"{where}.channel: unknown signal '{channel}'; available: {', '.join(env.signal_names)}")
    if kind == "signal":
        return SignalCumulant(channel, block.get("scale", 1.0))
    return OutcomeCumulant(channel)


def build_termination(block, env, where):
    kind = block["type"]
    if kind == "constant":
        return ConstantTermination(block["prob"])
    if kind == "table":
        return TableTermination(_table(block["values"], env.n_states, f"{where}.values"))
    ids = set(resolve_states(env, block["states"], f"{where}.states"))
    if block.get("complement", False):
        ids = set(range(env.n_states)) - ids
    return SetTermination(ids)


def build_continuation(block, env, where):
    if block["type"] == "constant":
        return ConstantContinuation(block["value"])
    return TableContinuation(_table(block["values"], env.n_states, f"{where}.values"))


def _is_action_form(algorithm):
    return algorithm in ("gavf", "control")


@dataclass
class DemonPlan:
    name: str
    spec: object
    algorithm: str
    config: LearnerConfig
    vfa: LinearVfa
    init: str = "zero"

    @property
    def gvf(self):
        return self.spec.gvf if isinstance(self.spec, AffordanceSpec) else self.spec

    @property
    def option(self):
        return self.spec.option if isinstance(self.spec, AffordanceSpec) else None


@dataclass
class Experiment:
    cfg: dict
    env: object
    behavior: object
    demons: list
    seed: int
    probe_states: list
    out_dir: str
    outputs: dict = field(default_factory=dict)
    _model: object = None

    @property
    def names(self):
        return [d.name for d in self.demons]

    def model(self):
        if self._model is None:
            self._model = self.env.model()
        return self._model

    def path(self, key):
        return os.path.join(self.out_dir, self.outputs[key])

    def demon(self, name):
        for d in self.demons:
            if d.name == name:
                return d
        raise KeyError(name)

    def build_horde(self):
        horde = Horde(self.behavior, self.seed)
        for d in self.demons:
            horde.add(d.spec, d.algorithm, self.env.feature_dim, d.config, self.env.n_actions, d.vfa)
        return horde


DEFAULT_OUTPUTS = {
    "run_log": "run.csv",
    "models": "models",
    "oracle": "oracle.csv",
    "eval": "eval.csv",
    "report": "report.csv",
}


def build_experiment(cfg, seed=None, out_dir=None):
    """Resolve a validated config into environment, behavior and demon plans."""
    env = build_env(cfg["environment"])
    run = cfg["run"]
    seed = int(run.get("seed", 0) if seed is None else seed)
    # approximators first so greedy policies can refer to any demon
    names = [d["name"] for d in cfg["demons"]]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ConfigError(f"config.demons: duplicate demon names {sorted(dupes)}")
    vfas = {}
    for d in cfg["demons"]:
        action_form = _is_action_form(d["learner"]["algorithm"])
        vfas[d["name"]] = LinearVfa(env.feature_dim, env.n_actions if action_form else 0, name=d["name"])
    behavior = build_policy(cfg.get("behavior", {"type": "uniform"}), env, vfas, "config.behavior")
    demons = []
    for i, d in enumerate(cfg["demons"]):
        where = f"config.demons[{i}]"
        cumulant = build_cumulant(d["cumulant"], env, f"{where}.cumulant")
        if "option" in d:
            ob = d["option"]
            if "target_policy" in d:
                raise ConfigError(f"{where}.target_policy: an option-bound demon follows the option's policy")
            policy = build_policy(ob["policy"], env, vfas, f"{where}.option.policy")
            beta = build_termination(ob["termination"], env, f"{where}.option.termination")
            init = StateSet(resolve_states(env, ob["initiation"], f"{where}.option.initiation")) \
                if "initiation" in ob else everywhere
            option = OptionSpec(init, beta, policy, d["name"])
            spec = AffordanceSpec.bind(d["name"], cumulant, option, ob.get("gamma", 1.0))
        else:
            policy = build_policy(d.get("target_policy", {"type": "uniform"}), env, vfas, f"{where}.target_policy")
            spec = GvfSpec(d["name"], cumulant, policy, build_continuation(d["continuation"], env, f"{where}.continuation"))
        lb = d["learner"]
        lcfg = LearnerConfig(
            step_size=lb["step_size"],
            buffer_capacity=lb.get("buffer", 10_000),
            minibatch_size=lb.get("minibatch", 32),
            rho_clip=lb.get("rho_clip"),
            seed=0,
            use_rho_bar=lb.get("use_rho_bar", True),
            ude_window=lb.get("ude_window", 100),
        )
        demons.append(DemonPlan(d["name"], spec, lb["algorithm"], lcfg, vfas[d["name"]], lb.get("init", "zero")))
    if "probe_states" in run:
        probes = resolve_states(env, run["probe_states"], "config.run.probe_states")
    else:
        probes = _default_probes(env)
    outputs = dict(DEFAULT_OUTPUTS, **{k: v for k, v in cfg.get("output", {}).items() if k != "dir"})
    out = out_dir if out_dir is not None else cfg.get("output", {}).get("dir", ".")
    exp = Experiment(cfg, env, behavior, demons, seed, probes, out, outputs)
    _check_control(exp)
    for d in exp.demons:
        if d.init == "oracle":
            load_oracle_weights(exp, d)
    return exp


def _default_probes(env):
    try:
        terminal = env.model().terminal
    except AffordGvfError:
        return list(range(env.n_states))
    return [s for s in range(env.n_states) if not terminal[s]]


def _check_control(exp):
    ctl = exp.cfg.get("control", {})
    names = set(exp.names)
    for i, rule in enumerate(ctl.get("pavlovian", {}).get("rules", [])):
        where = f"config.control.pavlovian.rules[{i}]"
        if rule["action"] >= exp.env.n_actions:
            raise ConfigError(f"{where}.action: {rule['action']} outside [0, {exp.env.n_actions})")
        for j, cond in enumerate(rule.get("when", [])):
            if cond[0] not in names:
                raise ConfigError(f"{where}.when[{j}]: unknown demon '{cond[0]}'")
    if "pavlovian" in ctl and not any(not r.get("when") for r in ctl["pavlovian"]["rules"]):
        raise ConfigError("config.control.pavlovian.rules: a default rule (no 'when') is required")
    whatif = ctl.get("whatif")
    if whatif:
        for name in whatif["weights"]:
            if name not in names:
                raise ConfigError(f"config.control.whatif.weights.{name}: unknown demon '{name}'")
            if not exp.demon(name).vfa.action_form:
                raise ConfigError(f"config.control.whatif.weights.{name}: '{name}' is not an action-value demon")
        for a in whatif.get("candidates", []):
            if a >= exp.env.n_actions:
                raise ConfigError(f"config.control.whatif.candidates: action {a} outside [0, {exp.env.n_actions})")
    chain = ctl.get("chain")
    if chain:
        name = chain["success_demon"]
        if name not in names:
            raise ConfigError(f"config.control.chain.success_demon: unknown demon '{name}'")
        if exp.demon(name).option is None:
            raise ConfigError(f"config.control.chain.success_demon: '{name}' has no option binding")
        if not isinstance(exp.env, GridWorld):
            raise ConfigError("config.control.chain: the chain demo needs a grid environment")
    psr = ctl.get("psr")
    if psr:
        if psr["reward_channel"] not in exp.env.signal_names:
            raise ConfigError(f"config.control.psr.reward_channel: unknown signal '{psr['reward_channel']}'")
        n = len(exp.demons)
        for key in ("lows", "highs"):
            if len(psr[key]) != n:
                raise ConfigError(f"config.control.psr.{key}: expected {n} entries (one per demon)")


# ---------------------------------------------------------------------------
# oracle values per demon
# ---------------------------------------------------------------------------

def demon_oracle(model, plan):
    """Exact (v, q) for a demon; control demons get the optimal values."""
    gvf = plan.gvf
    if plan.algorithm == "control":
        reward = gvf.cumulant.table(model)
        v, q = value_iteration(model, reward, continuation_vector(gvf.continuation, model))
        return v, q
    sol = solve_gvf(model, gvf)
    return sol.v, sol.q


def load_oracle_weights(exp, plan):
    """Set weights to the least-squares fit of the oracle values (exact for one-hot features)."""
    model = exp.model()
    v, q = demon_oracle(model, plan)
    F = model.features
    if plan.vfa.action_form:
        w = np.linalg.lstsq(F, q, rcond=None)[0].T
    else:
        w = np.linalg.lstsq(F, v, rcond=None)[0]
    plan.vfa.weights = np.ascontiguousarray(w, dtype=float)
