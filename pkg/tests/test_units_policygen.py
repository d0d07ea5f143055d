"""Tests for the policy-generation units: FQI, LSPI, Q-learning, and GPOMDP."""
import math

import numpy as np
import pytest

from rlpipe import (
    Box,
    Dataset,
    Discrete,
    FiniteMdp,
    LqgEnv,
    RngStream,
    Transition,
    chain_mdp,
    default_lqg,
    riccati_solve,
    value_iteration,
)
from rlpipe.units.policies import policy_from_json, policy_to_json
from rlpipe.units.policygen import (
    AffineBasis,
    GpomdpDivergedError,
    OneHotBasis,
    action_grid_for,
    basis_from_json,
    gpomdp_gradient,
    pg_fqi,
    pg_gpomdp,
    pg_lspi,
    pg_q_learning,
)


def exhaustive_dataset(mdp, counts=None):
    """One row per (s, a, s') at the exact transition frequencies.

    counts[s, a, s'] gives the row multiplicity; the default reads integer
    multiplicities straight off a deterministic transition matrix.
    """
    if counts is None:
        counts = mdp.p.astype(int)
        assert np.array_equal(counts, mdp.p), "default needs a deterministic MDP"
    trajectories = []
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for sn in range(mdp.n_states):
                for _ in range(int(counts[s, a, sn])):
                    trajectories.append([Transition(
                        [float(s)], [float(a)], float(mdp.r[s, a]),
                        [float(sn)], False, True)])
    return Dataset.from_trajectories(trajectories)


def random_count_mdp(seed, n_states=4, n_actions=2, gamma=0.7):
    """Finite MDP whose transition probabilities are integer counts over 5."""
    g = RngStream(seed).child(0).generator()
    counts = np.zeros((n_states, n_actions, n_states), dtype=int)
    for s in range(n_states):
        for a in range(n_actions):
            split = np.sort(g.integers(0, 6, size=n_states - 1))
            counts[s, a] = np.diff(np.concatenate([[0], split, [5]]))
    r = np.round(g.uniform(-1.0, 1.0, size=(n_states, n_actions)), 3)
    mdp = FiniteMdp(counts / 5.0, r, gamma=gamma, horizon=20)
    return mdp, counts


def q_table_from_model(model, mdp):
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            q[s, a] = model.predict(np.array([[float(s)]]), np.array([[float(a)]]))[0]
    return q


class TestActionGrid:
    def test_discrete_grid_is_action_set(self):
        np.testing.assert_array_equal(
            action_grid_for(Discrete(3)), np.array([[0.0], [1.0], [2.0]]))

    def test_box_one_dim_linspace(self):
        grid = action_grid_for(Box([-1.0], [1.0]), points_per_dim=5)
        np.testing.assert_allclose(grid[:, 0], np.linspace(-1.0, 1.0, 5))

    def test_box_grid_capped(self):
        grid = action_grid_for(Box([-1.0] * 3, [1.0] * 3), points_per_dim=8,
                               max_points=64)
        assert len(grid) == 64  # 4 points per axis in 3-d

    def test_unknown_space_rejected(self):
        with pytest.raises(TypeError):
            action_grid_for(object())


class TestFqi:
    def test_one_iteration_is_reward_table(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        pol = pg_fqi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                     RngStream(0).child(0), regressor="tabular_mean", n_iterations=1)
        np.testing.assert_allclose(q_table_from_model(pol.model, mdp), mdp.r,
                                   atol=1e-15)

    @pytest.mark.parametrize("iters", [1, 2, 5, 10])
    def test_matches_value_iteration_on_chain(self, iters):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        pol = pg_fqi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                     RngStream(0).child(0), regressor="tabular_mean",
                     n_iterations=iters)
        np.testing.assert_allclose(
            q_table_from_model(pol.model, mdp), value_iteration(mdp, iters),
            atol=1e-12)

    def test_matches_value_iteration_on_stochastic_mdp(self):
        mdp, counts = random_count_mdp(3)
        data = exhaustive_dataset(mdp, counts)
        pol = pg_fqi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                     RngStream(0).child(0), regressor="tabular_mean",
                     n_iterations=5)
        np.testing.assert_allclose(
            q_table_from_model(pol.model, mdp), value_iteration(mdp, 5),
            atol=1e-12)

    def test_greedy_policy_solves_the_chain(self):
        mdp = chain_mdp(n_states=3)
        data = exhaustive_dataset(mdp)
        pol = pg_fqi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                     RngStream(0).child(0), regressor="tabular_mean",
                     n_iterations=20)
        # advance until the end, then stay
        assert pol.act(np.array([0.0]), None)[0] == 0.0
        assert pol.act(np.array([1.0]), None)[0] == 0.0
        assert pol.act(np.array([2.0]), None)[0] == 1.0

    def test_knn_regressor_variant_runs(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        pol = pg_fqi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                     RngStream(0).child(0), regressor="knn", k=1, n_iterations=3)
        assert pol.act(np.array([1.0]), None)[0] == 1.0

    def test_absorbing_transitions_truncate_backup(self):
        # absorbing rows contribute r alone regardless of iteration count
        tr = [Transition([0.0], [0.0], 2.0, [0.0], True, True)]
        data = Dataset.from_trajectories([tr])
        pol = pg_fqi(data, 0.9, np.array([[0.0]]), RngStream(0).child(0),
                     regressor="tabular_mean", n_iterations=5)
        assert pol.model.predict(np.array([[0.0]]), np.array([[0.0]]))[0] == 2.0

    def test_invalid_iterations_rejected(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        with pytest.raises(ValueError):
            pg_fqi(data, 0.5, action_grid_for(Discrete(2)),
                   RngStream(0).child(0), n_iterations=0)


class TestBases:
    def test_one_hot_features(self):
        basis = OneHotBasis(2, 2)
        phi = basis.features(np.array([[1.0]]), np.array([0]))
        np.testing.assert_array_equal(phi, [[0.0, 0.0, 1.0, 0.0]])

    def test_affine_features(self):
        basis = AffineBasis(2, 2)
        phi = basis.features(np.array([[2.0, 3.0]]), np.array([1]))
        np.testing.assert_array_equal(phi, [[0.0, 0.0, 0.0, 2.0, 3.0, 1.0]])

    def test_json_round_trip(self):
        for basis in (OneHotBasis(3, 2), AffineBasis(4, 5)):
            assert basis_from_json(basis.to_json_dict()) == basis

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            basis_from_json({"kind": "rbf"})


class TestLspi:
    def test_one_hot_matches_value_iteration(self):
        mdp = chain_mdp()
        # several rows per cell so the ridge bias sits well under the tolerance
        data = exhaustive_dataset(mdp, counts=10 * mdp.p.astype(int))
        basis = OneHotBasis(mdp.n_states, mdp.n_actions)
        pol = pg_lspi(data, mdp.spec.gamma, action_grid_for(Discrete(2)), basis)
        q_star = value_iteration(mdp, 200)
        np.testing.assert_allclose(
            pol.model.weights.reshape(mdp.n_states, mdp.n_actions), q_star,
            atol=1e-6)

    def test_one_hot_matches_value_iteration_stochastic(self):
        mdp, counts = random_count_mdp(9)
        data = exhaustive_dataset(mdp, counts)
        basis = OneHotBasis(mdp.n_states, mdp.n_actions)
        pol = pg_lspi(data, mdp.spec.gamma, action_grid_for(Discrete(2)), basis)
        q_star = value_iteration(mdp, 400)
        np.testing.assert_allclose(
            pol.model.weights.reshape(mdp.n_states, mdp.n_actions), q_star,
            atol=1e-5)

    def test_zero_rewards_give_zero_weights(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        zeroed = Dataset(
            tuple(Transition(t.state, t.action, 0.0, t.next_state, t.absorbing, t.last)
                  for t in data.transitions),
            data.trajectory_offsets)
        basis = OneHotBasis(mdp.n_states, mdp.n_actions)
        pol = pg_lspi(zeroed, mdp.spec.gamma, action_grid_for(Discrete(2)), basis)
        np.testing.assert_array_equal(pol.model.weights, np.zeros(basis.dim))

    def test_early_stop_matches_long_run(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        basis = OneHotBasis(mdp.n_states, mdp.n_actions)
        short = pg_lspi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                        basis, n_iterations=20)
        long = pg_lspi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                       basis, n_iterations=200)
        np.testing.assert_array_equal(short.model.weights, long.model.weights)

    def test_greedy_policy_solves_the_chain(self):
        mdp = chain_mdp(n_states=3)
        data = exhaustive_dataset(mdp)
        basis = OneHotBasis(mdp.n_states, mdp.n_actions)
        pol = pg_lspi(data, mdp.spec.gamma, action_grid_for(Discrete(2)), basis)
        assert pol.act(np.array([0.0]), None)[0] == 0.0
        assert pol.act(np.array([2.0]), None)[0] == 1.0

    def test_off_grid_action_rejected(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        with pytest.raises(ValueError, match="grid"):
            pg_lspi(data, mdp.spec.gamma, np.array([[5.0]]),
                    OneHotBasis(mdp.n_states, mdp.n_actions))

    def test_invalid_iterations_rejected(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        with pytest.raises(ValueError):
            pg_lspi(data, 0.5, action_grid_for(Discrete(2)),
                    OneHotBasis(2, 2), n_iterations=0)


class TestQLearning:
    def test_gamma_zero_learns_reward_table(self):
        base = chain_mdp()
        mdp = FiniteMdp(base.p, base.r, gamma=0.0, horizon=10, mu0=base.mu0)
        pol = pg_q_learning(mdp, RngStream(1).child(0), n_episodes=10_000,
                            learning_rate=0.1, epsilon=1.0)
        np.testing.assert_allclose(pol.q, mdp.r, atol=0.01)

    def test_solves_the_chain(self):
        mdp = chain_mdp(n_states=3)
        pol = pg_q_learning(mdp, RngStream(2).child(0), n_episodes=3_000,
                            learning_rate=0.2, epsilon=0.3)
        assert pol.act(np.array([0.0]), None)[0] == 0.0
        assert pol.act(np.array([1.0]), None)[0] == 0.0
        assert pol.act(np.array([2.0]), None)[0] == 1.0

    def test_q_approaches_value_iteration(self):
        mdp = chain_mdp()
        pol = pg_q_learning(mdp, RngStream(3).child(0), n_episodes=20_000,
                            learning_rate=0.05, epsilon=1.0)
        np.testing.assert_allclose(pol.q, value_iteration(mdp, 200), atol=0.05)

    def test_deterministic_given_stream(self):
        mdp = chain_mdp()
        a = pg_q_learning(mdp, RngStream(4).child(0), n_episodes=200)
        b = pg_q_learning(mdp, RngStream(4).child(0), n_episodes=200)
        np.testing.assert_array_equal(a.q, b.q)

    def test_continuous_env_rejected(self):
        with pytest.raises(TypeError):
            pg_q_learning(default_lqg(), RngStream(0).child(0))

    def test_invalid_epsilon_rejected(self):
        with pytest.raises(ValueError):
            pg_q_learning(chain_mdp(), RngStream(0).child(0), epsilon=1.5)


def crn_return(env, gain, log_std, n_episodes, stream):
    """Discounted batch return with the same draw order as the gradient."""
    from rlpipe.units.policygen import _collect_linear_gaussian

    g = stream.generator()
    std = math.exp(float(log_std))
    _, _, rew, _ = _collect_linear_gaussian(env, np.asarray(gain, dtype=float),
                                            std, n_episodes, g)
    gammas = env.spec.gamma ** np.arange(rew.shape[0])
    return float((gammas[:, None] * rew).sum(axis=0).mean())


class TestGpomdpGradient:
    def test_matches_finite_differences_under_crn(self):
        env = default_lqg()
        g = RngStream(7).child(0).generator()
        gain = 0.2 * g.standard_normal((3, 2))
        log_std = math.log(0.4)
        n = 20_000
        stream = RngStream(7).child(1)
        grad_gain, grad_ls = gpomdp_gradient(env, gain, log_std, n,
                                             stream.generator())
        delta = 1e-4
        fd = np.zeros_like(gain)
        for i in range(gain.shape[0]):
            for j in range(gain.shape[1]):
                up = gain.copy()
                up[i, j] += delta
                dn = gain.copy()
                dn[i, j] -= delta
                fd[i, j] = (crn_return(env, up, log_std, n, stream)
                            - crn_return(env, dn, log_std, n, stream)) / (2 * delta)
        rel = np.linalg.norm(grad_gain - fd) / np.linalg.norm(fd)
        assert rel <= 0.15
        fd_ls = (crn_return(env, gain, log_std + delta, n, stream)
                 - crn_return(env, gain, log_std - delta, n, stream)) / (2 * delta)
        assert grad_ls == pytest.approx(fd_ls, rel=0.2, abs=0.05)

    def test_near_stationary_at_riccati_gain(self):
        env = default_lqg()
        sol = riccati_solve(env)
        stream = RngStream(8).child(0)
        at_opt, _ = gpomdp_gradient(env, sol.gains[0], math.log(0.1), 20_000,
                                    stream.generator())
        at_zero, _ = gpomdp_gradient(env, np.zeros((3, 2)), math.log(0.1), 20_000,
                                     stream.generator())
        assert np.abs(at_opt).max() < 0.15 * np.abs(at_zero).max()

    def test_unbiased_against_large_sample(self):
        # mean of many small estimates agrees with one large estimate
        env = default_lqg(horizon=5)
        gain = np.zeros((3, 2))
        log_std = math.log(0.5)
        small = np.array([
            gpomdp_gradient(env, gain, log_std, 50,
                            RngStream(9).child(i).generator(), baseline="none")[0]
            for i in range(200)
        ])
        big, _ = gpomdp_gradient(env, gain, log_std, 10_000,
                                 RngStream(10).child(0).generator(), baseline="none")
        se = small.std(axis=0) / math.sqrt(len(small))
        assert np.all(np.abs(small.mean(axis=0) - big) <= 3.0 * se + 0.05)

    def test_baseline_reduces_variance(self):
        env = default_lqg(horizon=5)
        gain = np.zeros((3, 2))
        with_b = np.array([
            gpomdp_gradient(env, gain, 0.0, 30,
                            RngStream(11).child(i).generator(), baseline="mean")[0]
            for i in range(60)
        ])
        without = np.array([
            gpomdp_gradient(env, gain, 0.0, 30,
                            RngStream(11).child(i).generator(), baseline="none")[0]
            for i in range(60)
        ])
        assert with_b.var(axis=0).sum() < without.var(axis=0).sum()

    def test_invalid_baseline_rejected(self):
        with pytest.raises(ValueError):
            gpomdp_gradient(default_lqg(), np.zeros((3, 2)), 0.0, 10,
                            RngStream(0).child(0).generator(), baseline="gae")

    def test_infinite_horizon_rejected(self):
        env = default_lqg()
        env.spec = type(env.spec)(env.spec.state_space, env.spec.action_space,
                                  env.spec.gamma, None)
        with pytest.raises(ValueError, match="horizon"):
            gpomdp_gradient(env, np.zeros((3, 2)), 0.0, 10,
                            RngStream(0).child(0).generator())


class TestPgGpomdp:
    def test_zero_learning_rate_keeps_initial_parameters(self):
        env = default_lqg()
        pol = pg_gpomdp(env, RngStream(0).child(0), learning_rate=0.0,
                        n_epochs=3, n_episodes_per_fit=5, init_std=0.7)
        np.testing.assert_array_equal(pol.gain, np.zeros((3, 2)))
        assert pol.log_std == math.log(0.7)

    def test_improves_over_initial_policy(self):
        from rlpipe import evaluate_policy
        from rlpipe.units.policies import LinearGaussianPolicy

        env = default_lqg()
        trained = pg_gpomdp(env.copy(), RngStream(1).child(0), learning_rate=2e-3,
                            n_epochs=100, n_episodes_per_fit=100, init_std=0.1)
        initial = LinearGaussianPolicy(np.zeros((3, 2)), math.log(0.1),
                                       env.spec.action_space)
        j_trained = evaluate_policy(env.copy(), trained, 100, "discounted",
                                    RngStream(1).child(1)).mean
        j_initial = evaluate_policy(env.copy(), initial, 100, "discounted",
                                    RngStream(1).child(1)).mean
        assert j_trained > j_initial + 1.0

    def test_divergence_raises_with_context(self):
        env = default_lqg()
        with pytest.raises(GpomdpDivergedError) as exc:
            pg_gpomdp(env, RngStream(2).child(0), learning_rate=50.0,
                      n_epochs=50, n_episodes_per_fit=10, init_std=1.0)
        assert exc.value.epoch >= 0
        mag = exc.value.magnitude
        assert not math.isfinite(mag) or mag > 1e6

    def test_deterministic_given_stream(self):
        env = default_lqg()
        a = pg_gpomdp(env.copy(), RngStream(3).child(0), n_epochs=3,
                      n_episodes_per_fit=5, learning_rate=1e-3)
        b = pg_gpomdp(env.copy(), RngStream(3).child(0), n_epochs=3,
                      n_episodes_per_fit=5, learning_rate=1e-3)
        np.testing.assert_array_equal(a.gain, b.gain)
        assert a.log_std == b.log_std

    def test_discrete_action_space_rejected(self):
        with pytest.raises(TypeError):
            pg_gpomdp(chain_mdp(), RngStream(0).child(0))

    @pytest.mark.parametrize("kwargs", [
        {"init_std": 0.0},
        {"n_epochs": 0},
        {"n_episodes_per_fit": 0},
    ])
    def test_invalid_settings_rejected(self, kwargs):
        with pytest.raises(ValueError):
            pg_gpomdp(default_lqg(), RngStream(0).child(0), **kwargs)


class TestPolicyJson:
    def test_linear_gaussian_round_trip(self):
        env = default_lqg()
        pol = pg_gpomdp(env, RngStream(5).child(0), learning_rate=1e-3,
                        n_epochs=2, n_episodes_per_fit=5)
        again = policy_from_json(policy_to_json(pol))
        np.testing.assert_array_equal(again.gain, pol.gain)
        assert again.log_std == pol.log_std

    def test_tabular_round_trip(self):
        pol = pg_q_learning(chain_mdp(), RngStream(6).child(0), n_episodes=100)
        again = policy_from_json(policy_to_json(pol))
        np.testing.assert_array_equal(again.q, pol.q)

    def test_grid_greedy_round_trip(self):
        mdp = chain_mdp()
        data = exhaustive_dataset(mdp)
        pol = pg_fqi(data, mdp.spec.gamma, action_grid_for(Discrete(2)),
                     RngStream(0).child(0), regressor="tabular_mean",
                     n_iterations=2)
        again = policy_from_json(policy_to_json(pol))
        s = np.array([[0.0], [1.0]])
        for state in s:
            np.testing.assert_array_equal(again.act(state, None), pol.act(state, None))
