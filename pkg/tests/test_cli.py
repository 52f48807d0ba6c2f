import copy
import csv
import json
import os

import numpy as np
import pytest

from affordgvf import cli
from affordgvf.commands import fmt, read_oracle_csv
from affordgvf.config import build_experiment, fixture_path, validate
from affordgvf.errors import ConfigError
from affordgvf.oracle import solve_gvf
from affordgvf.vfa import LinearVfa

from conftest import load_fixture

FIXTURES = ["chain-td", "chain-offpolicy", "grid-supervised", "grid-chain",
            "lane-horde", "lane-pavlovian", "chain-psr", "chain-whatif"]


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _chain(**run):
    cfg = load_fixture("chain-td.json")
    cfg["run"].update(run)
    return cfg


def _set(cfg, path, value):
    node = cfg
    for key in path[:-1]:
        node = node[key]
    if value is _DELETE:
        del node[path[-1]]
    else:
        node[path[-1]] = value
    return cfg


_DELETE = object()

MALFORMED = [
    (("schema_version",), 2, "config.schema_version"),
    (("schema_version",), _DELETE, "config: 'schema_version' is a required property"),
    (("environment", "type"), "maze", "config.environment.type"),
    (("environment", "n"), 0, "config.environment.n"),
    (("environment", "colour"), "red", "config.environment"),
    (("demons", 0, "learner", "algorithm"), "sarsa", "config.demons[0].learner.algorithm"),
    (("demons", 0, "learner", "step_size"), 0, "config.demons[0].learner.step_size"),
    (("demons", 0, "learner", "step_size"), _DELETE, "config.demons[0].learner"),
    (("demons", 0, "continuation", "value"), 1.5, "config.demons[0].continuation.value"),
    (("demons", 0, "continuation"), _DELETE, "config.demons[0]"),
    (("demons", 0, "cumulant", "type"), "bogus", "config.demons[0].cumulant.type"),
    (("demons", 0, "cumulant", "scale"), "x", "config.demons[0].cumulant.scale"),
    (("demons", 0, "name"), "has space", "config.demons[0].name"),
    (("run", "steps"), -1, "config.run.steps"),
    (("run", "episodes"), 10, "config.run"),
    (("run", "probe_states"), ["a"], "config.run.probe_states[0]"),
    (("output", "extra"), "x", "config.output"),
    (("behavior",), {"type": "fixed"}, "config.behavior"),
    (("extra",), 1, "config"),
]


class TestConfigValidation:
    @pytest.mark.parametrize("path,value,where", MALFORMED)
    def test_malformed_rejected_with_path(self, tmp_path, capsys, path, value, where):
        cfg = _set(load_fixture("chain-td.json"), path, value)
        with pytest.raises(ConfigError) as info:
            validate(cfg)
        assert where in str(info.value)
        assert _run("oracle", "--config", _write(tmp_path, cfg), "--out", tmp_path) == 1
        assert where in capsys.readouterr().err

    @pytest.mark.parametrize("mutate,where", [
        (lambda c: c["demons"][0]["cumulant"].update(channel="nope"), "config.demons[0].cumulant.channel"),
        (lambda c: c["run"].update(probe_states=[9]), "config.run.probe_states[0]"),
        (lambda c: c.update(behavior={"type": "fixed", "action": 5}), "config.behavior.action"),
        (lambda c: c.update(behavior={"type": "greedy", "demon": "goal"}), "config.behavior.demon"),
        (lambda c: c["demons"].append(copy.deepcopy(c["demons"][0])), "config.demons"),
        (lambda c: c["demons"][0].update(continuation={"type": "table", "values": [0.5]}),
         "config.demons[0].continuation.values"),
        (lambda c: c.update(control={"whatif": {"weights": {"goal": 1.0}}}), "config.control.whatif.weights.goal"),
        (lambda c: c.update(control={"pavlovian": {"rules": [{"action": 0, "when": [["goal", "<", 1]]}],
                                                   "steps": 5}}), "config.control.pavlovian.rules"),
    ])
    def test_semantic_errors(self, tmp_path, capsys, mutate, where):
        cfg = load_fixture("chain-td.json")
        mutate(cfg)
        assert _run("oracle", "--config", _write(tmp_path, cfg), "--out", tmp_path) == 1
        assert where in capsys.readouterr().err

    def test_lane_without_bins(self, tmp_path, capsys):
        cfg = load_fixture("lane-horde.json")
        del cfg["environment"]["bins"]
        assert _run("oracle", "--config", _write(tmp_path, cfg), "--out", tmp_path) == 1
        err = capsys.readouterr().err
        assert "config.environment" in err and "bins" in err

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert _run("oracle", "--config", path) == 1
        assert "invalid JSON" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert _run("oracle", "--config", tmp_path / "absent.json") == 1

    @pytest.mark.parametrize("argv", [[], ["learn"], ["fly", "--config", "x"], ["demo", "nope", "--config", "x"]])
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 1

    @pytest.mark.parametrize("name", FIXTURES)
    def test_every_fixture_builds(self, name):
        exp = build_experiment(validate(load_fixture(f"{name}.json")))
        assert exp.demons


class TestOracle:
    def test_chain_rows(self, tmp_path):
        assert _run("oracle", "--config", _write(tmp_path, _chain()), "--out", tmp_path, "--quiet") == 0
        rows = _rows(tmp_path / "oracle.csv")
        assert rows[0] == ["demon", "state", "v", "q_0", "q_1"]
        assert len(rows) == 6
        v = [float(r[2]) for r in rows[1:]]
        assert all(0.0 <= x <= 1.0 for x in v)
        assert v == pytest.approx([(s + 1) / 6 for s in range(5)], abs=1e-12)

    def test_zero_cumulant(self, tmp_path):
        cfg = _chain()
        cfg["demons"][0]["cumulant"] = {"type": "constant", "value": 0.0}
        assert _run("oracle", "--config", _write(tmp_path, cfg), "--out", tmp_path, "--quiet") == 0
        assert all(float(x) == 0.0 for r in _rows(tmp_path / "oracle.csv")[1:] for x in r[2:])

    def test_roundtrip_reader(self, tmp_path):
        _run("oracle", "--config", _write(tmp_path, _chain()), "--out", tmp_path, "--quiet")
        table = read_oracle_csv(tmp_path / "oracle.csv")
        exp = build_experiment(_chain())
        exact = solve_gvf(exp.model(), exp.demons[0].gvf)
        for s, (v, q) in table["goal"].items():
            assert v == exact.v[s] and np.array_equal(q, exact.q[s])


class TestLearn:
    def test_zero_steps(self, tmp_path):
        assert _run("learn", "--config", _write(tmp_path, _chain(steps=0)), "--out", tmp_path, "--quiet") == 0
        rows = _rows(tmp_path / "run.csv")
        assert rows == [["step", "demon", "pred_0", "pred_1", "pred_2", "pred_3", "pred_4",
                         "delta", "rho", "rho_bar", "ude", "episode", "cumulant_observed"]]
        assert not LinearVfa.load(tmp_path / "models" / "goal.gvfm").weights.any()

    def test_log_rows(self, tmp_path):
        _run("learn", "--config", _write(tmp_path, _chain(steps=300, log_interval=100)), "--out", tmp_path, "--quiet")
        rows = _rows(tmp_path / "run.csv")[1:]
        assert [r[0] for r in rows] == ["100", "200", "300"]
        assert all(r[1] == "goal" for r in rows)

    def test_seed_override_changes_log(self, tmp_path):
        cfg = _write(tmp_path, _chain(steps=500, log_interval=100))
        _run("learn", "--config", cfg, "--out", tmp_path / "a", "--quiet")
        _run("learn", "--config", cfg, "--out", tmp_path / "b", "--quiet", "--seed", "5")
        assert (tmp_path / "a" / "run.csv").read_bytes() != (tmp_path / "b" / "run.csv").read_bytes()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _write(tmp_path, _chain(steps=2000, log_interval=100))
        for sub in ("a", "b"):
            assert _run("learn", "--config", cfg, "--out", tmp_path / sub, "--quiet") == 0
        for rel in ("run.csv", os.path.join("models", "goal.gvfm")):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_quiet(self, tmp_path, capsys):
        cfg = _write(tmp_path, _chain(steps=10))
        _run("learn", "--config", cfg, "--out", tmp_path, "--quiet")
        assert capsys.readouterr().out == ""
        _run("learn", "--config", cfg, "--out", tmp_path)
        assert "wrote" in capsys.readouterr().out

    def test_upsilon_output(self, tmp_path):
        cfg = load_fixture("lane-horde.json")
        cfg["run"].update(steps=200, log_interval=100)
        assert _run("learn", "--config", _write(tmp_path, cfg), "--out", tmp_path, "--quiet") == 0
        rows = _rows(tmp_path / cfg["output"]["upsilon"])
        assert rows[0][:2] == ["step", "episode"] and len(rows[0]) == 2 + len(cfg["demons"])
        assert len(rows) == 3


class TestEval:
    def test_oracle_initialized_model_is_exact(self, tmp_path, capsys):
        cfg = _chain(steps=0)
        cfg["demons"][0]["learner"]["init"] = "oracle"
        path = _write(tmp_path, cfg)
        _run("learn", "--config", path, "--out", tmp_path, "--quiet")
        assert _run("eval", "--config", path, "--out", tmp_path) == 0
        assert "Linf=0.0" in capsys.readouterr().out
        rows = _rows(tmp_path / "eval.csv")
        assert rows[-1] == ["goal", "Linf", "", "", "0.0"]

    def test_zero_model_error_is_max_oracle(self, tmp_path):
        path = _write(tmp_path, _chain(steps=0))
        _run("learn", "--config", path, "--out", tmp_path, "--quiet")
        _run("eval", "--config", path, "--out", tmp_path, "--quiet")
        assert float(_rows(tmp_path / "eval.csv")[-1][-1]) == pytest.approx(5 / 6, abs=1e-15)

    def test_dimension_mismatch(self, tmp_path, capsys):
        _run("learn", "--config", _write(tmp_path, _chain(steps=0)), "--out", tmp_path / "m", "--quiet")
        bigger = _chain(steps=0)
        bigger["environment"]["n"] = 6
        code = _run("eval", "--config", _write(tmp_path, bigger, "big.json"), "--out", tmp_path,
                    "--models", tmp_path / "m" / "models")
        assert code == 2
        assert "goal" in capsys.readouterr().err

    def test_missing_models(self, tmp_path):
        assert _run("eval", "--config", _write(tmp_path, _chain()), "--out", tmp_path, "--quiet") == 2

    def test_learn_then_eval_composes(self, tmp_path):
        path = _write(tmp_path, _chain(steps=3000))
        assert _run("learn", "--config", path, "--out", tmp_path, "--quiet") == 0
        assert _run("eval", "--config", path, "--out", tmp_path, "--quiet") == 0
        rows = _rows(tmp_path / "eval.csv")
        assert rows[0] == ["demon", "state", "prediction", "oracle", "abs_error"]
        assert len(rows) == 1 + 5 + 1


class TestDemo:
    def test_missing_models_without_training(self, tmp_path, capsys):
        cfg = load_fixture("chain-whatif.json")
        cfg["demons"][0]["learner"]["init"] = "zero"
        assert _run("demo", "whatif", "--config", _write(tmp_path, cfg), "--out", tmp_path) == 1
        assert "config.control.whatif" in capsys.readouterr().err

    def test_missing_block(self, tmp_path, capsys):
        assert _run("demo", "psr", "--config", _write(tmp_path, _chain()), "--out", tmp_path) == 1
        assert "config.control.psr" in capsys.readouterr().err

    def test_whatif(self, tmp_path, capsys):
        path = fixture_path("chain-whatif.json")
        assert _run("demo", "whatif", "--config", path, "--out", tmp_path) == 0
        assert "match_rate=1.0" in capsys.readouterr().out
        assert _rows(tmp_path / "whatif-report.csv")[-1][:5] == ["summary", "5", "", "", "1.0"]

    def test_chain_start_inside(self, tmp_path):
        cfg = load_fixture("grid-chain.json")
        cfg["demons"][0]["learner"]["init"] = "oracle"
        cfg["run"] = {"steps": 0, "seed": 0}
        cfg["control"]["chain"].update(start=[3, 2], episodes=5, find={"steps": 2000})
        assert _run("demo", "chain", "--config", _write(tmp_path, cfg), "--out", tmp_path, "--quiet") == 0
        rows = _rows(tmp_path / "chain-report.csv")
        episodes = [r for r in rows[1:] if r[0] == "episode"]
        assert len(episodes) == 5 and all(r[3] == "0" for r in episodes)

    def test_pavlovian_needs_lane(self, tmp_path, capsys):
        cfg = _chain()
        cfg["control"] = {"pavlovian": {"rules": [{"action": 0}], "steps": 5}}
        assert _run("demo", "pavlovian", "--config", _write(tmp_path, cfg), "--out", tmp_path) == 1
        assert "lane" in capsys.readouterr().err


@pytest.mark.parametrize("value,text", [(1.0, "1.0"), (0.1, "0.1"), (True, "1"), (np.int64(3), "3"),
                                        (np.float64(1 / 3), repr(1 / 3)), ("x", "x")])
def test_fmt(value, text):
    assert fmt(value) == text
    if isinstance(value, float):
        assert float(fmt(value)) == value
