"""Tests for rollouts, return estimation, and the k-NN information estimators."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlpipe import (
    FiniteMdp,
    RngStream,
    RunawayEpisodeError,
    chain_mdp,
    dataset_state_action_entropy,
    default_lqg,
    evaluate_policy,
    knn_entropy,
    knn_mutual_information,
    rollout_batch,
    rollout_dataset,
)
from rlpipe.units.policies import ConstantActionPolicy, TabularGreedyPolicy


def constant_reward_mdp(horizon, gamma=0.9):
    # one state, one action, reward 1 every step
    p = np.ones((1, 1, 1))
    r = np.ones((1, 1))
    return FiniteMdp(p, r, gamma=gamma, horizon=horizon)


def stay_policy(mdp):
    return TabularGreedyPolicy(np.zeros((mdp.n_states, mdp.n_actions)))


class TestRollout:
    def test_same_stream_reproduces_batch(self):
        env = default_lqg()
        pol = ConstantActionPolicy(0.0, env.spec.action_space)
        a = rollout_batch(env.copy(), pol, 7, RngStream(3).child(1))
        b = rollout_batch(env.copy(), pol, 7, RngStream(3).child(1))
        np.testing.assert_array_equal(a.discounted, b.discounted)
        np.testing.assert_array_equal(a.total, b.total)

    def test_distinct_streams_differ(self):
        env = default_lqg()
        pol = ConstantActionPolicy(0.0, env.spec.action_space)
        a = rollout_batch(env.copy(), pol, 7, RngStream(3).child(1))
        b = rollout_batch(env.copy(), pol, 7, RngStream(3).child(2))
        assert not np.array_equal(a.discounted, b.discounted)

    def test_horizon_truncation_sets_last_not_absorbing(self):
        mdp = constant_reward_mdp(horizon=4)
        data = rollout_dataset(mdp, stay_policy(mdp), 3, RngStream(0).child(0))
        assert data.n_trajectories == 3
        for i in range(3):
            traj = data.trajectory(i)
            assert len(traj) == 4
            assert [t.last for t in traj] == [False, False, False, True]
            assert not any(t.absorbing for t in traj)

    def test_lengths_match_horizon(self):
        env = default_lqg(horizon=6)
        pol = ConstantActionPolicy(0.0, env.spec.action_space)
        batch = rollout_batch(env, pol, 5, RngStream(1).child(0))
        np.testing.assert_array_equal(batch.lengths, np.full(5, 6))

    def test_record_false_keeps_no_trajectories(self):
        mdp = constant_reward_mdp(horizon=2)
        batch = rollout_batch(mdp, stay_policy(mdp), 2, RngStream(0).child(0))
        assert batch.trajectories is None

    def test_runaway_episode_raises(self):
        mdp = constant_reward_mdp(horizon=None, gamma=0.9)
        with pytest.raises(RunawayEpisodeError):
            rollout_batch(mdp, stay_policy(mdp), 2, RngStream(0).child(0), max_steps=50)

    def test_rejects_zero_episodes(self):
        mdp = constant_reward_mdp(horizon=2)
        with pytest.raises(ValueError):
            rollout_batch(mdp, stay_policy(mdp), 0, RngStream(0).child(0))


class TestEvaluatePolicy:
    def test_constant_reward_discounted(self):
        # 1 + 0.9 + 0.81 over a horizon of three
        mdp = constant_reward_mdp(horizon=3)
        est = evaluate_policy(mdp, stay_policy(mdp), 10, "discounted", RngStream(0).child(0))
        assert est.mean == pytest.approx(2.71, abs=1e-12)
        assert est.std == pytest.approx(0.0, abs=1e-12)
        assert est.n_episodes == 10
        assert est.kind == "discounted"

    def test_constant_reward_total(self):
        mdp = constant_reward_mdp(horizon=3)
        est = evaluate_policy(mdp, stay_policy(mdp), 10, "total", RngStream(0).child(0))
        assert est.mean == pytest.approx(3.0, abs=1e-12)

    def test_constant_reward_average(self):
        mdp = constant_reward_mdp(horizon=3)
        est = evaluate_policy(mdp, stay_policy(mdp), 10, "average", RngStream(0).child(0))
        assert est.mean == pytest.approx(1.0, abs=1e-12)

    def test_unknown_kind_rejected(self):
        mdp = constant_reward_mdp(horizon=3)
        with pytest.raises(ValueError, match="kind"):
            evaluate_policy(mdp, stay_policy(mdp), 10, "median", RngStream(0).child(0))

    def test_lqg_returns_negative(self):
        env = default_lqg()
        pol = ConstantActionPolicy(0.0, env.spec.action_space)
        est = evaluate_policy(env, pol, 50, "discounted", RngStream(5).child(0))
        assert est.mean < 0.0
        assert est.std > 0.0

    def test_chain_mdp_reproducible(self):
        mdp = chain_mdp()
        pol = stay_policy(mdp)
        a = evaluate_policy(mdp, pol, 30, "discounted", RngStream(9).child(0))
        b = evaluate_policy(mdp, pol, 30, "discounted", RngStream(9).child(0))
        assert a.mean == b.mean and a.std == b.std


def quantized_uniform(g, n, d, low=0.0, high=1.0):
    # samples on a 2^-20 grid so adding an integer offset is exact in floats
    grid = g.integers(0, 2**20, size=(n, d))
    return low + (high - low) * (grid / float(2**20))


class TestKnnEntropy:
    def test_uniform_unit_square_near_zero(self):
        g = RngStream(101).child(0).generator()
        pts = g.uniform(0.0, 1.0, size=(10_000, 2))
        est = knn_entropy(pts, 5)
        assert abs(est.value) <= 0.05
        assert est.k == 5 and est.n_samples == 10_000

    def test_scale_law_two_dimensional(self):
        # H(aX) = H(X) + d ln a; doubling in 2-d adds exactly 2 ln 2
        g = RngStream(102).child(0).generator()
        pts = g.uniform(0.0, 1.0, size=(2_000, 2))
        h1 = knn_entropy(pts, 5).value
        h2 = knn_entropy(2.0 * pts, 5).value
        assert h2 - h1 == pytest.approx(2.0 * math.log(2.0), abs=1e-9)

    def test_translation_invariance_bitwise(self):
        g = RngStream(103).child(0).generator()
        pts = quantized_uniform(g, 1_500, 2)
        h1 = knn_entropy(pts, 5).value
        h2 = knn_entropy(pts + 3.0, 5).value
        assert h1 == h2

    def test_permutation_invariance_bitwise(self):
        g = RngStream(104).child(0).generator()
        pts = g.uniform(0.0, 1.0, size=(800, 2))
        perm = g.permutation(800)
        assert knn_entropy(pts, 5).value == knn_entropy(pts[perm], 5).value

    def test_one_dimensional_vector_accepted(self):
        g = RngStream(105).child(0).generator()
        x = g.standard_normal(4_000)
        est = knn_entropy(x, 5)
        truth = 0.5 * math.log(2.0 * math.pi * math.e)
        assert est.value == pytest.approx(truth, abs=0.05)

    def test_k_out_of_range_rejected(self):
        pts = np.zeros((10, 2))
        with pytest.raises(ValueError, match="k must"):
            knn_entropy(pts, 0)
        with pytest.raises(ValueError, match="k must"):
            knn_entropy(pts, 10)

    def test_duplicate_points_floored_not_inf(self):
        pts = np.zeros((20, 2))
        est = knn_entropy(pts, 5)
        assert math.isfinite(est.value)

    def test_gaussian_reference_value(self):
        # 2-d standard normal: H = ln(2 pi e)
        g = RngStream(106).child(0).generator()
        pts = g.standard_normal((6_000, 2))
        truth = math.log(2.0 * math.pi * math.e)
        assert knn_entropy(pts, 5).value == pytest.approx(truth, abs=0.06)

    @given(st.integers(min_value=1, max_value=4))
    @settings(max_examples=10, deadline=None)
    def test_scale_law_property(self, a):
        g = RngStream(107).child(a).generator()
        pts = g.uniform(0.0, 1.0, size=(300, 2))
        h1 = knn_entropy(pts, 3).value
        h2 = knn_entropy(float(a) * pts, 3).value
        assert h2 - h1 == pytest.approx(2.0 * math.log(a), abs=1e-9)


class TestKnnMutualInformation:
    @pytest.mark.parametrize("rho,truth", [(0.0, 0.0), (0.5, 0.1438), (0.9, 0.8304)])
    def test_bivariate_gaussian(self, rho, truth):
        g = RngStream(201).child(int(rho * 10)).generator()
        z = g.standard_normal((10_000, 2))
        x = z[:, :1]
        y = rho * z[:, :1] + math.sqrt(1.0 - rho * rho) * z[:, 1:]
        est = knn_mutual_information(x, y, 5)
        assert est.value == pytest.approx(truth, abs=0.05)

    def test_independent_uniforms_near_zero(self):
        g = RngStream(202).child(0).generator()
        x = g.uniform(size=(3_000, 1))
        y = g.uniform(size=(3_000, 1))
        assert knn_mutual_information(x, y, 5).value <= 0.05

    def test_value_clamped_at_zero(self):
        g = RngStream(203).child(0).generator()
        x = g.uniform(size=(500, 1))
        y = g.uniform(size=(500, 1))
        est = knn_mutual_information(x, y, 5)
        assert est.value == max(est.raw, 0.0)
        assert est.value >= 0.0

    def test_constant_marginal_degenerate_zero(self):
        g = RngStream(204).child(0).generator()
        x = np.full((100, 1), 2.5)
        y = g.uniform(size=(100, 1))
        est = knn_mutual_information(x, y, 5)
        assert est.value == 0.0 and est.raw == 0.0

    def test_mismatched_rows_rejected(self):
        with pytest.raises(ValueError, match="pair"):
            knn_mutual_information(np.zeros((10, 1)), np.zeros((9, 1)), 3)

    def test_k_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="k must"):
            knn_mutual_information(np.zeros((10, 1)), np.ones((10, 1)), 10)

    def test_permutation_invariance_bitwise(self):
        g = RngStream(205).child(0).generator()
        z = g.standard_normal((600, 2))
        x, y = z[:, :1], 0.7 * z[:, :1] + z[:, 1:]
        perm = g.permutation(600)
        a = knn_mutual_information(x, y, 4)
        b = knn_mutual_information(x[perm], y[perm], 4)
        assert a.value == b.value and a.raw == b.raw

    def test_deterministic_bijection_high_mi(self):
        g = RngStream(206).child(0).generator()
        x = g.uniform(size=(1_000, 1))
        y = x + 1e-9 * g.standard_normal((1_000, 1))
        assert knn_mutual_information(x, y, 5).value > 2.0

    def test_vector_inputs_accepted(self):
        g = RngStream(207).child(0).generator()
        x = g.uniform(size=400)
        y = g.uniform(size=400)
        est = knn_mutual_information(x, y, 3)
        assert math.isfinite(est.value)


class TestDatasetEntropy:
    def test_matches_manual_concatenation(self):
        env = default_lqg()
        pol = ConstantActionPolicy([0.5, -0.5, 0.0], env.spec.action_space)
        data = rollout_dataset(env, pol, 20, RngStream(301).child(0))
        manual = knn_entropy(
            np.concatenate([data.states(), data.actions()], axis=1), 5)
        auto = dataset_state_action_entropy(data, k=5)
        assert auto.value == manual.value

    def test_wider_exploration_higher_entropy(self):
        env = default_lqg()
        narrow = ConstantActionPolicy(0.0, env.spec.action_space)
        from rlpipe.units.policies import LinearGaussianPolicy
        wide = LinearGaussianPolicy(np.zeros((3, 2)), math.log(1.0), env.spec.action_space)
        d_narrow = rollout_dataset(env.copy(), narrow, 40, RngStream(302).child(0))
        d_wide = rollout_dataset(env.copy(), wide, 40, RngStream(302).child(1))
        assert dataset_state_action_entropy(d_wide).value > dataset_state_action_entropy(d_narrow).value
