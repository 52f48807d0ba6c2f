import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affordgvf.core import (
    ConstantContinuation, ConstantCumulant, FixedActionPolicy, GvfSpec, SignalCumulant,
    TabularPolicy, Transition, UniformPolicy,
)
from affordgvf.envs import make_transition
from affordgvf.errors import (
    CoverageViolation, InvalidArgument, InvalidParameter, NumericOverflow, PolicyMismatch,
)
from affordgvf.learners import (
    LearnerConfig, MonteCarloLearner, ReplayBuffer, UdeTracker, gavf_target, importance_ratio,
    make_learner, monte_carlo_returns, td_error, td_target, ude,
)
from affordgvf.oracle import solve_gvf, value_iteration
from affordgvf.runner import behavior_stream
from affordgvf.vfa import LinearVfa


def _goal(policy=None, gamma=1.0):
    return GvfSpec("goal", SignalCumulant("goal"), policy or UniformPolicy(2), ConstantContinuation(gamma))


def _train(learner, env, behavior, steps, seed=0):
    for tr in behavior_stream(env, behavior, steps, seed):
        learner.step(tr)
    return learner


def _values(learner, env, states):
    return np.array([learner.predict(env.state_of(s)) for s in states])


class TestScalars:
    def test_td_target(self):
        assert td_target(1.0, 0.5, 4.0) == 3.0

    @pytest.mark.parametrize("gamma", [-0.1, 1.1])
    def test_td_target_rejects_gamma(self, gamma):
        with pytest.raises(InvalidArgument):
            td_target(0.0, gamma, 0.0)

    @pytest.mark.parametrize("args", [(np.nan, 0.5, 0.0), (0.0, 0.5, np.inf)])
    def test_td_target_rejects_non_finite(self, args):
        with pytest.raises(NumericOverflow):
            td_target(*args)

    def test_td_error_sign(self):
        assert td_error(2.0, 3.0) == -1.0

    @pytest.mark.parametrize("tau,mu,clip,expected", [
        (0.5, 0.5, None, 1.0),
        (1.0, 0.25, None, 4.0),
        (1.0, 0.25, 2.0, 2.0),
        (0.0, 0.5, None, 0.0),
        (0.0, 0.0, None, 0.0),
    ])
    def test_importance_ratio(self, tau, mu, clip, expected):
        assert importance_ratio(tau, mu, clip) == expected

    def test_importance_ratio_coverage(self):
        with pytest.raises(CoverageViolation):
            importance_ratio(0.5, 0.0)

    def test_gavf_target(self):
        assert gavf_target(1.0, 0.5, np.array([2.0, 4.0]), np.array([0.25, 0.75])) == pytest.approx(2.75)

    def test_monte_carlo_returns(self):
        assert np.allclose(monte_carlo_returns([1.0, 0.0, 2.0], [0.5, 0.5, 0.0]), [1.5, 1.0, 2.0])

    def test_monte_carlo_returns_length(self):
        with pytest.raises(InvalidArgument):
            monte_carlo_returns([1.0], [0.5, 0.5])


class TestUde:
    def test_empty_and_single(self):
        t = UdeTracker(5)
        assert t.value() == 0.0
        assert t.update(0.0) == 0.0

    def test_zero_variance_is_capped(self):
        assert ude(UdeTracker(5), [1.0] * 5) == pytest.approx(1e8)

    def test_window(self):
        t = UdeTracker(3)
        ude(t, [100.0, 1.0, -1.0, 1.0])
        d = np.array([1.0, -1.0, 1.0])
        assert t.value() == pytest.approx(abs(d.mean()) / (d.std(ddof=1) + 1e-8))

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=30))
    def test_non_negative_and_scale_free(self, deltas):
        a = ude(UdeTracker(100), deltas)
        b = ude(UdeTracker(100), [3.0 * d for d in deltas])
        assert a >= 0.0
        if np.std(deltas) > 1e-3:
            assert b == pytest.approx(a, rel=1e-6)

    def test_invalid_window(self):
        with pytest.raises(InvalidParameter):
            UdeTracker(0)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"step_size": 0.0},
        {"step_size": 0.1, "buffer_capacity": 4, "minibatch_size": 8},
        {"step_size": 0.1, "minibatch_size": 0},
        {"step_size": 0.1, "rho_clip": 0.0},
        {"step_size": 0.1, "ude_window": 0},
    ])
    def test_rejected(self, kw):
        with pytest.raises(InvalidParameter):
            LearnerConfig(**kw)

    def test_unknown_algorithm(self):
        with pytest.raises(InvalidParameter):
            make_learner("sarsa", _goal(), 7, LearnerConfig(0.1))

    def test_form_mismatch(self):
        with pytest.raises(InvalidArgument):
            make_learner("gavf", _goal(), 7, LearnerConfig(0.1), 2, LinearVfa(7))


class TestTd:
    def test_single_update(self):
        learner = make_learner("td", GvfSpec("c", ConstantCumulant(1.0), UniformPolicy(2),
                                              ConstantContinuation(0.5)), 2, LearnerConfig(0.1))
        learner.vfa.weights[:] = [1.0, 2.0]
        tr = Transition(np.array([1.0, 0.0]), 0, np.array([0.0, 1.0]), {}, 0.5)
        # y = 1 + 0.5 * 2 = 2, delta = 1 - 2 = -1
        assert learner.step(tr) == pytest.approx(-1.0)
        assert np.allclose(learner.vfa.weights, [1.1, 2.0])

    def test_terminal_does_not_bootstrap(self):
        learner = make_learner("td", GvfSpec("c", ConstantCumulant(1.0), UniformPolicy(2),
                                              ConstantContinuation(0.9)), 2, LearnerConfig(1.0))
        learner.vfa.weights[:] = [0.0, 10.0]
        learner.step(Transition(np.array([1.0, 0.0]), 0, np.array([0.0, 1.0]), {}, 0.5, terminal=True))
        assert learner.vfa.weights[0] == 1.0

    def test_overflow_names_demon(self):
        learner = make_learner("td", GvfSpec("big", ConstantCumulant(1e308), UniformPolicy(2),
                                              ConstantContinuation(0.0)), 1, LearnerConfig(1e10))
        with pytest.raises(NumericOverflow, match="big"):
            learner.step(Transition(np.array([-1e300]), 0, np.array([0.0]), {}, 0.5))
        assert learner.vfa.weights[0] == 0.0

    def test_converges_on_chain(self, chain):
        learner = make_learner("td", _goal(), 7, LearnerConfig(0.02))
        _train(learner, chain, UniformPolicy(2), 30000)
        exact = solve_gvf(chain.model(), _goal()).v
        assert np.max(np.abs(_values(learner, chain, range(5)) - exact[:5])) < 0.1


class TestOffPolicy:
    def test_is_learner_returns_weighted_delta(self, chain):
        learner = make_learner("is", _goal(FixedActionPolicy(1, 2)), 7, LearnerConfig(0.1))
        s = chain.reset(0)
        tr = make_transition(s, 0, chain.step(0), 0.5)
        assert learner.step(tr) == 0.0 and learner.last_rho == 0.0

    @pytest.mark.parametrize("algorithm,alpha", [("is", 0.05), ("resampled", 0.1), ("gavf", 0.1)])
    def test_off_policy_learners_reach_target_values(self, chain, algorithm, alpha):
        gvf = _goal(FixedActionPolicy(1, 2))
        learner = make_learner(algorithm, gvf, 7, LearnerConfig(alpha, buffer_capacity=2000))
        _train(learner, chain, UniformPolicy(2), 20000)
        exact = solve_gvf(chain.model(), gvf).v
        assert np.max(np.abs(_values(learner, chain, range(5)) - exact[:5])) < 1e-3

    def test_gavf_ignores_behavior_probability(self, chain):
        gvf = _goal(TabularPolicy([[0.2, 0.8]] * 7), gamma=0.9)
        a = make_learner("gavf", gvf, 7, LearnerConfig(0.1))
        b = make_learner("gavf", gvf, 7, LearnerConfig(0.1))
        for tr in behavior_stream(chain, UniformPolicy(2), 500, 3):
            a.step(tr)
            b.step(Transition(tr.features, tr.action, tr.next_features, tr.signals, 0.01,
                              tr.terminal, tr.state_id, tr.next_state_id))
        assert np.array_equal(a.vfa.weights, b.vfa.weights)

    def test_control_matches_value_iteration(self, chain):
        gvf = _goal(gamma=0.9)
        learner = make_learner("control", gvf, 7, LearnerConfig(0.2), 2)
        _train(learner, chain, UniformPolicy(2), 20000)
        model = chain.model()
        _, q = value_iteration(model, model.signals["goal"], ConstantContinuation(0.9))
        assert np.max(np.abs(learner.vfa.weights.T[:5] - q[:5])) < 1e-3
        assert learner.greedy_policy.probs(chain.state_of(0))[1] == 1.0


class TestResampling:
    def test_buffer_ring(self):
        b = ReplayBuffer(3, 1)
        for i in range(5):
            b.add(np.ones(1), 0, float(i), 0.5, np.ones(1), float(i))
        assert len(b) == 3 and sorted(b.c.tolist()) == [2.0, 3.0, 4.0]
        assert b.rho_sum() == 9.0 and b.rho_bar() == 3.0

    @pytest.mark.parametrize("rho", [-1.0, np.nan, np.inf])
    def test_buffer_rejects_bad_rho(self, rho):
        with pytest.raises(InvalidArgument):
            ReplayBuffer(2, 1).add(np.ones(1), 0, 0.0, 0.5, np.ones(1), rho)

    def test_sampling_proportional_to_rho(self):
        gvf = _goal(FixedActionPolicy(1, 2))
        learner = make_learner("resampled", gvf, 1, LearnerConfig(0.1, buffer_capacity=4, minibatch_size=1))
        for rho in (0.0, 1.0, 2.0, 5.0):
            learner.buffer.add(np.ones(1), 0, 0.0, 0.0, np.ones(1), rho)
        idx = learner.sample_indices(80000)
        freq = np.bincount(idx, minlength=4) / idx.size
        assert np.allclose(freq, [0.0, 0.125, 0.25, 0.625], atol=0.01)

    def test_all_zero_rho_skips_update(self, chain):
        learner = make_learner("resampled", _goal(FixedActionPolicy(1, 2)), 7, LearnerConfig(0.1))
        s = chain.reset(0)
        tr = make_transition(s, 0, chain.step(0), 0.5)
        assert learner.step(tr) == 0.0
        assert learner.skipped_updates == 1 and not learner.vfa.weights.any()

    def test_update_scaled_by_buffer_mean_rho(self):
        gvf = GvfSpec("c", ConstantCumulant(1.0), FixedActionPolicy(1, 2), ConstantContinuation(0.0))
        learner = make_learner("resampled", gvf, 1, LearnerConfig(0.1, buffer_capacity=4, minibatch_size=1))
        learner.buffer.add(np.ones(1), 1, 1.0, 0.0, np.ones(1), 2.0)
        tr = Transition(np.ones(1), 0, np.ones(1), {}, 0.5)  # rho = 0 for this one
        learner.step(tr)
        # only row 0 can be drawn; delta = 0 - 1; rho_bar = (2 + 0) / 2
        assert learner.last_rho_bar == 1.0
        assert learner.vfa.weights[0] == pytest.approx(0.1)

    def test_resampled_update_unbiased_across_seeds(self):
        # the scaled resampled mean is an unbiased estimate of the IS-weighted mean update
        rng = np.random.default_rng(0)
        d, n, draws = 4, 100, 20_000
        gvf = GvfSpec("r", SignalCumulant("c"), UniformPolicy(2), ConstantContinuation(0.9))
        rho = rng.choice([0.0, 0.5, 1.0, 2.0, 4.0], size=n)
        rows = [(rng.normal(size=d), rng.normal(), rng.normal(size=d)) for _ in range(n)]
        theta = rng.normal(size=d)
        zs = []
        for seed in range(40):
            learner = make_learner("resampled", gvf, d, LearnerConfig(0.1, n, 1, seed=seed))
            learner.vfa.weights[:] = theta
            for (x, c, x2), r in zip(rows, rho):
                learner.buffer.add(x, 0, c, 0.9, x2, r)
            b = learner.buffer
            per_row = (b.X @ theta - (b.c + b.gamma * (b.X_next @ theta)))[:, None] * b.X
            exact = (rho[:, None] * per_row).mean(axis=0)
            idx = learner.sample_indices(draws)
            se = b.rho_bar() * per_row[idx].std(axis=0, ddof=1) / np.sqrt(draws)
            zs.append((b.rho_bar() * learner.minibatch_gradient(idx)[0] - exact) / se)
        zs = np.array(zs)
        assert np.all(np.abs(zs.mean(axis=0)) < 3.0 / np.sqrt(len(zs)))
        assert np.all((zs.std(axis=0) > 0.6) & (zs.std(axis=0) < 1.4))

    def test_without_rho_bar(self):
        gvf = GvfSpec("c", ConstantCumulant(1.0), FixedActionPolicy(1, 2), ConstantContinuation(0.0))
        cfg = LearnerConfig(0.1, buffer_capacity=4, minibatch_size=1, use_rho_bar=False)
        learner = make_learner("resampled", gvf, 1, cfg)
        learner.buffer.add(np.ones(1), 1, 1.0, 0.0, np.ones(1), 4.0)
        learner.step(Transition(np.ones(1), 0, np.ones(1), {}, 0.5))
        assert learner.last_rho_bar == 1.0


class TestMonteCarlo:
    def test_rejects_off_policy_data(self, chain):
        learner = make_learner("montecarlo", _goal(FixedActionPolicy(1, 2)), 7, LearnerConfig(0.1))
        s = chain.reset(0)
        tr = make_transition(s, 1, chain.step(1), 0.5)
        with pytest.raises(PolicyMismatch):
            learner.episode([tr])

    def test_fits_on_terminal_and_flush(self, chain):
        learner = make_learner("montecarlo", _goal(), 7, LearnerConfig(1.0))
        assert isinstance(learner, MonteCarloLearner)
        s = chain.reset(0)
        r = chain.step(1)
        learner.step(make_transition(s, 1, r, 0.5))
        assert learner.pending and not learner.vfa.weights.any()
        learner.flush()
        assert not learner.pending
        # truncated after one step with zero cumulant: target 0
        assert not learner.vfa.weights.any()
        s = r.state
        r = chain.step(1)
        learner.step(make_transition(s, 1, r, 0.5))
        s = r.state
        r = chain.step(1)
        learner.step(make_transition(s, 1, r, 0.5))
        assert r.terminal and not learner.pending
        assert learner.vfa.weights[4] == 1.0

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.floats(0.0, 1.0))
    def test_returns_match_backward_recursion(self, c, gamma):
        g = [gamma] * (len(c) - 1) + [0.0]
        expected = np.zeros(len(c))
        acc = 0.0
        for k in reversed(range(len(c))):
            acc = c[k] + g[k] * acc
            expected[k] = acc
        assert np.allclose(monte_carlo_returns(c, g), expected, atol=1e-9)
