"""Environment construction, sampling laws, and text round-trips."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npghm.envs import (
    PointMassEnv,
    TabularMdp,
    Trajectory,
    bandit,
    chain,
    discounted_return,
    dump_mdp_text,
    geometric_cap,
    load_mdp_text,
    pointmass,
    random_mdp,
    sample_state_action,
    sample_state_actions_batch,
    sample_trajectories_batch,
    sample_trajectory,
)
from npghm.oracles import exact_state_action_visitation, exact_visitation
from npghm.policies import TabularSoftmaxPolicy
from npghm.seeding import substream


def uniform_policy(mdp):
    return TabularSoftmaxPolicy.zeros(mdp.n_states, mdp.n_actions)


class TestTrajectory:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Trajectory(states=np.zeros(3, dtype=int), actions=np.zeros(3, dtype=int), rewards=np.zeros(3))

    def test_horizon(self):
        traj = Trajectory(states=np.zeros(4, dtype=int), actions=np.zeros(3, dtype=int), rewards=np.zeros(3))
        assert traj.horizon == 3

    def test_discounted_return_hand_value(self):
        # 1 + 0.5*2 + 0.25*4 = 3
        traj = Trajectory(
            states=np.zeros(4, dtype=int),
            actions=np.zeros(3, dtype=int),
            rewards=np.array([1.0, 2.0, 4.0]),
        )
        assert discounted_return(traj, 0.5) == pytest.approx(3.0)


class TestTabularMdp:
    def test_rejects_unnormalized_transitions(self):
        mdp = chain(3)
        bad = mdp.transition.copy()
        bad[0, 0, 0] += 0.1
        with pytest.raises(ValueError):
            TabularMdp(transition=bad, reward=mdp.reward, init_dist=mdp.init_dist, gamma=mdp.gamma)

    def test_rejects_reward_outside_unit_interval(self):
        mdp = chain(3)
        bad = mdp.reward.copy()
        bad[0, 0, 0] = 1.5
        with pytest.raises(ValueError):
            TabularMdp(transition=mdp.transition, reward=bad, init_dist=mdp.init_dist, gamma=mdp.gamma)

    def test_rejects_gamma_one(self):
        mdp = chain(3)
        with pytest.raises(ValueError):
            TabularMdp(transition=mdp.transition, reward=mdp.reward, init_dist=mdp.init_dist, gamma=1.0)

    def test_chain_dynamics(self):
        mdp = chain(4)
        # right from state 2 lands in state 3 and pays 1
        assert mdp.transition[2, 1, 3] == 1.0
        assert mdp.reward[2, 1, 3] == 1.0
        # left from state 0 stays (clipped), no reward
        assert mdp.transition[0, 0, 0] == 1.0
        assert mdp.reward[0, 0, 0] == 0.0
        # right from the last state stays there and keeps paying
        assert mdp.transition[3, 1, 3] == 1.0
        assert mdp.reward[3, 1, 3] == 1.0
        assert np.argmax(mdp.init_dist) == 0

    def test_bandit(self):
        mdp = bandit([0.1, 0.9, 0.4])
        assert mdp.n_states == 1
        assert mdp.n_actions == 3
        assert mdp.reward[0, 1, 0] == pytest.approx(0.9)

    def test_random_mdp_is_seeded(self):
        a = random_mdp(4, 3, seed=7)
        b = random_mdp(4, 3, seed=7)
        c = random_mdp(4, 3, seed=8)
        assert np.array_equal(a.transition, b.transition)
        assert not np.array_equal(a.transition, c.transition)

    def test_step_respects_support(self):
        mdp = chain(5)
        rng = substream(0, "trajectory")
        s2, r = mdp.step(3, 1, rng)
        assert s2 == 4 and r == 1.0


class TestSampling:
    def test_trajectory_lengths_and_determinism(self):
        mdp = chain(5)
        pol = uniform_policy(mdp)
        traj = sample_trajectory(mdp, pol, horizon=12, rng=substream(3, "trajectory"))
        assert traj.horizon == 12
        assert traj.states.shape == (13,)
        traj2 = sample_trajectory(mdp, pol, horizon=12, rng=substream(3, "trajectory"))
        assert np.array_equal(traj.states, traj2.states)
        assert np.array_equal(traj.rewards, traj2.rewards)

    def test_visitation_law_matches_linear_solve(self):
        mdp = chain(4)
        pol = uniform_policy(mdp)
        rng = substream(0, "evaluation")
        states, actions = sample_state_actions_batch(mdp, pol.theta.reshape(4, 2), 200_000, rng)
        empirical = np.bincount(states, minlength=mdp.n_states) / states.size
        exact = exact_visitation(mdp, pol.probs_matrix())
        assert np.abs(empirical - exact).max() < 0.01
        sa = np.zeros((mdp.n_states, mdp.n_actions))
        np.add.at(sa, (states, actions), 1.0)
        sa /= states.size
        exact_sa = exact_state_action_visitation(mdp, pol.probs_matrix())
        assert np.abs(sa - exact_sa).max() < 0.01

    def test_geometric_cap_value(self):
        assert geometric_cap(0.9) == 100
        assert geometric_cap(0.99) == 1000
        assert geometric_cap(0.5) == 20

    def test_gamma_zero_draws_initial_state(self):
        mdp = bandit([0.5, 0.5], gamma=0.0)
        pol = uniform_policy(mdp)
        rng = substream(1, "trajectory")
        for _ in range(20):
            s, a = sample_state_action(mdp, pol, rng)
            assert s == 0 and a in (0, 1)

    def test_batch_sampler_matches_scalar_law(self):
        # same marginal mean reward from the batched and scalar samplers
        mdp = chain(3)
        pol = uniform_policy(mdp)
        rng = substream(5, "trajectory")
        states, actions, rewards = sample_trajectories_batch(
            mdp, pol.theta.reshape(3, 2), horizon=6, n_traj=40_000, rng=rng
        )
        assert states.shape == (40_000, 7)
        mean_batch = rewards.mean()
        rng2 = substream(6, "trajectory")
        scalar = [sample_trajectory(mdp, pol, 6, rng2).rewards.mean() for _ in range(4000)]
        assert abs(mean_batch - np.mean(scalar)) < 0.01

    def test_batch_sampler_per_chain_logits(self):
        mdp = chain(3)
        n = 500
        logits = np.zeros((n, 3, 2))
        logits[: n // 2, :, 1] = 50.0  # first half: always-right policies
        rng = substream(7, "trajectory")
        states, actions, _ = sample_trajectories_batch(mdp, logits, horizon=4, n_traj=n, rng=rng)
        assert (actions[: n // 2] == 1).all()
        assert states[: n // 2, -1].max() == 2


class TestPointMass:
    def test_reward_is_negative_quadratic_scaled(self):
        env = pointmass()
        rng = substream(0, "trajectory")
        _, r0 = env.step(0.0, 0.0, rng)
        assert r0 == pytest.approx(0.0)
        _, r_worst = env.step(env.state_radius, env.action_radius, rng)
        assert r_worst == pytest.approx(-1.0)

    def test_state_clipping(self):
        env = PointMassEnv(noise_std=0.0)
        s_next, _ = env.step(env.state_radius, env.action_radius, substream(0, "trajectory"))
        assert abs(s_next) <= env.state_radius

    def test_rejects_invalid_parameters(self):
        with pytest.raises(ValueError):
            PointMassEnv(gamma=1.0)
        with pytest.raises(ValueError):
            PointMassEnv(init_state=5.0)


class TestMdpText:
    def test_round_trip(self, tmp_path):
        mdp = random_mdp(3, 2, seed=5, gamma=0.8)
        path = tmp_path / "m.mdp"
        dump_mdp_text(mdp, path)
        back = load_mdp_text(path)
        assert back.n_states == 3 and back.n_actions == 2
        assert back.gamma == mdp.gamma
        assert np.array_equal(back.transition, mdp.transition)
        assert np.array_equal(back.reward, mdp.reward)
        assert np.array_equal(back.init_dist, mdp.init_dist)

    def test_comments_ignored(self, tmp_path):
        mdp = bandit([0.25, 0.75])
        path = tmp_path / "b.mdp"
        dump_mdp_text(mdp, path)
        body = "# header comment\n" + path.read_text(encoding="utf-8")
        path.write_text(body, encoding="utf-8")
        back = load_mdp_text(path)
        assert np.array_equal(back.reward, mdp.reward)


@settings(max_examples=25, deadline=None)
@given(
    n_states=st.integers(min_value=2, max_value=6),
    n_actions=st.integers(min_value=2, max_value=4),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_random_mdp_always_valid(n_states, n_actions, seed):
    mdp = random_mdp(n_states, n_actions, seed=seed)
    assert np.allclose(mdp.transition.sum(axis=2), 1.0)
    assert (mdp.reward >= -1).all() and (mdp.reward <= 1).all()
    assert mdp.init_dist.sum() == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(gamma=st.floats(min_value=0.0, max_value=0.99), seed=st.integers(0, 1000))
def test_sampled_step_obeys_transition_support(gamma, seed):
    mdp = random_mdp(4, 2, seed=3, gamma=gamma)
    rng = substream(seed, "trajectory")
    s = mdp.initial_state(rng)
    for _ in range(5):
        a = int(rng.integers(mdp.n_actions))
        s_next, r = mdp.step(s, a, rng)
        assert mdp.transition[s, a, s_next] > 0
        s = s_next
