"""Discounted MDP environments, trajectory sampling, and the discounted
state-action sampler used by the natural-gradient sub-problem.

Conventions: a trajectory of horizon H stores H+1 states, H actions, H
rewards; rewards are stored exactly as sampled (post-clip) and are never
re-derived by downstream estimators; all rewards live in [-1, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_ATOL = 1e-12

# A discounted-horizon draw h ~ Geom(1-gamma) is redrawn when it exceeds
# GEOM_CAP_MULTIPLIER * ceil(1/(1-gamma)); the cap goes into run metadata.
GEOM_CAP_MULTIPLIER = 10


def geometric_cap(gamma: float) -> int:
    """Redraw cap for the geometric-horizon sampler."""
    # The tiny slack keeps 1/(1-gamma) from ceiling up on float noise
    # (e.g. 1/(1-0.9) = 10.000000000000002).
    return GEOM_CAP_MULTIPLIER * math.ceil(1.0 / (1.0 - gamma) - 1e-9)


@dataclass(frozen=True)
class Trajectory:
    """One sampled rollout: H+1 states, H actions, H rewards."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        h = len(self.actions)
        if len(self.rewards) != h or len(self.states) != h + 1:
            raise ValueError(
                f"inconsistent trajectory: {len(self.states)} states, "
                f"{h} actions, {len(self.rewards)} rewards"
            )

    @property
    def horizon(self) -> int:
        return len(self.actions)


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """sum_h gamma^h r_h for the stored rewards."""
    h = traj.horizon
    if h == 0:
        return 0.0
    return float(np.dot(gamma ** np.arange(h), traj.rewards))


@dataclass(frozen=True)
class TabularMdp:
    """Finite discounted MDP with dense tables.

    transition[s, a, s'] = P(s' | s, a); reward[s, a, s'] in [-1, 1];
    init_dist[s] = rho(s); 0 <= gamma < 1.
    """

    transition: np.ndarray
    reward: np.ndarray
    init_dist: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "init_dist", np.asarray(self.init_dist, dtype=float))
        p, r, rho = self.transition, self.reward, self.init_dist
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must be (S, A, S), got {p.shape}")
        if r.shape != p.shape:
            raise ValueError(f"reward shape {r.shape} != transition shape {p.shape}")
        if rho.shape != (p.shape[0],):
            raise ValueError(f"init_dist shape {rho.shape} != ({p.shape[0]},)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if np.any(p < -_ATOL) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("transition rows must be distributions summing to 1")
        if np.any(rho < -_ATOL) or abs(rho.sum() - 1.0) > 1e-9:
            raise ValueError("init_dist must be a distribution summing to 1")
        if np.any(np.abs(r) > 1.0 + _ATOL):
            raise ValueError("rewards must lie in [-1, 1]")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    # Cumulative tables for inverse-CDF sampling, built lazily once.
    @property
    def _cum_transition(self) -> np.ndarray:
        cached = getattr(self, "_cum_p", None)
        if cached is None:
            cached = np.cumsum(self.transition, axis=2)
            object.__setattr__(self, "_cum_p", cached)
        return cached

    @property
    def _cum_init(self) -> np.ndarray:
        cached = getattr(self, "_cum_rho", None)
        if cached is None:
            cached = np.cumsum(self.init_dist)
            object.__setattr__(self, "_cum_rho", cached)
        return cached

    def initial_state(self, rng: np.random.Generator) -> int:
        s = int(np.searchsorted(self._cum_init, rng.random(), side="right"))
        return min(s, self.n_states - 1)

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        s2 = int(np.searchsorted(self._cum_transition[s, a], rng.random(), side="right"))
        s2 = min(s2, self.n_states - 1)
        return s2, float(self.reward[s, a, s2])


@dataclass(frozen=True)
class PointMassEnv:
    """Scalar linear system with quadratic cost emitted as a clipped reward.

    Dynamics: s' = clip(a_dyn*s + b_dyn*a + noise_std*N(0,1), +-state_radius).
    Reward: -(q_s*s^2 + q_a*a^2) / (q_s*state_radius^2 + q_a*action_radius^2),
    clipped into [-1, 1]; the declared radii fix the scale so rewards are
    bounded regardless of the policy's actions.
    """

    a_dyn: float = 0.9
    b_dyn: float = 0.5
    noise_std: float = 0.05
    q_s: float = 1.0
    q_a: float = 0.1
    state_radius: float = 2.0
    action_radius: float = 2.0
    init_state: float = 1.0
    gamma: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.q_s < 0 or self.q_a < 0 or self.noise_std < 0:
            raise ValueError("q_s, q_a, noise_std must be nonnegative")
        if self.state_radius <= 0 or self.action_radius <= 0:
            raise ValueError("declared radii must be positive")
        if abs(self.init_state) > self.state_radius:
            raise ValueError("init_state must lie within the state radius")

    @property
    def reward_scale(self) -> float:
        denom = self.q_s * self.state_radius**2 + self.q_a * self.action_radius**2
        return 1.0 / denom if denom > 0 else 0.0

    def initial_state(self, rng: np.random.Generator) -> float:
        return self.init_state

    def step(self, s: float, a: float, rng: np.random.Generator) -> tuple[float, float]:
        r = -(self.q_s * s * s + self.q_a * a * a) * self.reward_scale
        r = float(np.clip(r, -1.0, 1.0))
        s2 = self.a_dyn * s + self.b_dyn * a + self.noise_std * rng.standard_normal()
        s2 = float(np.clip(s2, -self.state_radius, self.state_radius))
        return s2, r


def sample_trajectory(env, policy, horizon: int, rng: np.random.Generator) -> Trajectory:
    """Roll `policy` for `horizon` steps from the initial distribution."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    tabular = isinstance(env, TabularMdp)
    states = np.empty(horizon + 1, dtype=np.int64 if tabular else float)
    actions = np.empty(horizon, dtype=np.int64 if tabular else float)
    rewards = np.empty(horizon, dtype=float)
    s = env.initial_state(rng)
    states[0] = s
    for h in range(horizon):
        a = policy.sample_action(s, rng)
        s, r = env.step(s, a, rng)
        actions[h] = a
        rewards[h] = r
        states[h + 1] = s
    return Trajectory(states=states, actions=actions, rewards=rewards)


def sample_state_action(env, policy, rng: np.random.Generator):
    """One (s, a) draw from the discounted state-action visitation.

    h ~ Geom(1-gamma) (so P(h=k) = (1-gamma) gamma^k), the policy is rolled
    h steps, and (s_h, a_h) with a_h ~ pi(.|s_h) is returned. Draws of h
    above geometric_cap(gamma) are redrawn.
    """
    gamma = env.gamma
    if gamma == 0.0:
        h = 0
    else:
        cap = geometric_cap(gamma)
        h = int(rng.geometric(1.0 - gamma)) - 1
        while h > cap:
            h = int(rng.geometric(1.0 - gamma)) - 1
    s = env.initial_state(rng)
    for _ in range(h):
        a = policy.sample_action(s, rng)
        s, _ = env.step(s, a, rng)
    return s, policy.sample_action(s, rng)


# ---------------------------------------------------------------------------
# Vectorized samplers for tabular MDPs under softmax-style logits. Same law
# as the scalar API; used where Monte-Carlo sizes of 1e5..1e6 must stay fast.
# ---------------------------------------------------------------------------

def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _categorical(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cum: (n, k) cumulative rows; u: (n,) uniforms
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def sample_trajectories_batch(
    mdp: TabularMdp,
    logits: np.ndarray,
    horizon: int,
    n_traj: int,
    rng: np.random.Generator | None = None,
    uniforms: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample n_traj softmax-policy rollouts at once.

    logits is (S, A) for one shared policy or (n_traj, S, A) for one policy
    per rollout. Returns (states (n, H+1), actions (n, H), rewards (n, H)).
    `uniforms` = (u_init (n,), u_act (n, H), u_next (n, H)) lets callers
    reuse common random numbers across parameter perturbations.
    """
    logits = np.asarray(logits, dtype=float)
    per_chain = logits.ndim == 3
    probs = _softmax_rows(logits)
    cum_pi = np.cumsum(probs, axis=-1)
    cum_p = mdp._cum_transition
    if uniforms is None:
        if rng is None:
            raise ValueError("need either rng or explicit uniforms")
        u_init = rng.random(n_traj)
        u_act = rng.random((n_traj, horizon))
        u_next = rng.random((n_traj, horizon))
    else:
        u_init, u_act, u_next = uniforms

    states = np.empty((n_traj, horizon + 1), dtype=np.int64)
    actions = np.empty((n_traj, horizon), dtype=np.int64)
    rewards = np.empty((n_traj, horizon), dtype=float)
    cum_rho = np.cumsum(mdp.init_dist)
    s = np.minimum(np.searchsorted(cum_rho, u_init, side="right"), mdp.n_states - 1)
    states[:, 0] = s
    rows = np.arange(n_traj)
    for h in range(horizon):
        pi_rows = cum_pi[rows, s] if per_chain else cum_pi[s]
        a = _categorical(pi_rows, u_act[:, h])
        s2 = _categorical(cum_p[s, a], u_next[:, h])
        rewards[:, h] = mdp.reward[s, a, s2]
        actions[:, h] = a
        states[:, h + 1] = s2
        s = s2
    return states, actions, rewards


def sample_state_actions_batch(
    mdp: TabularMdp,
    logits: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """n_samples i.i.d. draws from the discounted visitation (batch law of
    sample_state_action for a softmax policy with the given logits)."""
    gamma = mdp.gamma
    cap = geometric_cap(gamma) if gamma > 0 else 0
    if gamma == 0.0:
        h = np.zeros(n_samples, dtype=np.int64)
    else:
        h = rng.geometric(1.0 - gamma, size=n_samples) - 1
        bad = h > cap
        while bad.any():
            h[bad] = rng.geometric(1.0 - gamma, size=int(bad.sum())) - 1
            bad = h > cap
    probs = _softmax_rows(np.asarray(logits, dtype=float))
    cum_pi = np.cumsum(probs, axis=-1)
    cum_p = mdp._cum_transition
    cum_rho = np.cumsum(mdp.init_dist)
    s = np.minimum(
        np.searchsorted(cum_rho, rng.random(n_samples), side="right"), mdp.n_states - 1
    )
    h_max = int(h.max()) if n_samples else 0
    for k in range(h_max):
        active = k < h
        # Draw for every chain each step so the stream layout is fixed.
        u_a = rng.random(n_samples)
        u_s = rng.random(n_samples)
        a = _categorical(cum_pi[s], u_a)
        s2 = _categorical(cum_p[s, a], u_s)
        s = np.where(active, s2, s)
    a_final = _categorical(cum_pi[s], rng.random(n_samples))
    return s, a_final


# ---------------------------------------------------------------------------
# Built-in environments
# ---------------------------------------------------------------------------

def chain(n_states: int, gamma: float = 0.9) -> TabularMdp:
    """Deterministic left/right chain: start at state 0, reward 1 exactly on
    transitions into the last state."""
    if n_states < 2:
        raise ValueError("chain needs at least 2 states")
    s_count, a_count = n_states, 2
    p = np.zeros((s_count, a_count, s_count))
    for s in range(s_count):
        p[s, 0, max(s - 1, 0)] = 1.0
        p[s, 1, min(s + 1, s_count - 1)] = 1.0
    r = np.zeros_like(p)
    r[:, :, s_count - 1] = 1.0
    rho = np.zeros(s_count)
    rho[0] = 1.0
    return TabularMdp(transition=p, reward=r, init_dist=rho, gamma=gamma)


def bandit(rewards: Sequence[float], gamma: float = 0.9) -> TabularMdp:
    """Single-state MDP whose actions pay the given deterministic rewards."""
    rewards = np.asarray(rewards, dtype=float)
    a_count = rewards.size
    p = np.ones((1, a_count, 1))
    r = rewards.reshape(1, a_count, 1)
    return TabularMdp(transition=p, reward=r, init_dist=np.ones(1), gamma=gamma)


def random_mdp(
    n_states: int, n_actions: int, seed: int, gamma: float = 0.9
) -> TabularMdp:
    """Dirichlet transitions, uniform rewards in [-1, 1], Dirichlet rho."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, n_states))
    rho = rng.dirichlet(np.ones(n_states))
    return TabularMdp(transition=p, reward=r, init_dist=rho, gamma=gamma)


def pointmass(**kwargs) -> PointMassEnv:
    """PointMassEnv with keyword overrides of the defaults."""
    return PointMassEnv(**kwargs)


# ---------------------------------------------------------------------------
# Plain-text MDP files: counts line, then row-major tables.
# ---------------------------------------------------------------------------

def load_mdp_text(path) -> TabularMdp:
    """Read a TabularMdp from the plain-text table format.

    Token stream (whitespace/newline separated, '#' starts a comment):
    S A gamma, then S*A rows of S transition probabilities (s outer, a
    inner), then S*A rows of S rewards, then one row of S initial
    probabilities.
    """
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
    if len(tokens) < 3:
        raise ValueError(f"{path}: truncated MDP file")
    s_count, a_count = int(tokens[0]), int(tokens[1])
    gamma = float(tokens[2])
    need = 3 + 2 * s_count * a_count * s_count + s_count
    if len(tokens) != need:
        raise ValueError(f"{path}: expected {need} tokens, found {len(tokens)}")
    vals = np.asarray(tokens[3:], dtype=float)
    n_tab = s_count * a_count * s_count
    p = vals[:n_tab].reshape(s_count, a_count, s_count)
    r = vals[n_tab : 2 * n_tab].reshape(s_count, a_count, s_count)
    rho = vals[2 * n_tab :]
    return TabularMdp(transition=p, reward=r, init_dist=rho, gamma=gamma)


def dump_mdp_text(mdp: TabularMdp, path) -> None:
    """Write `mdp` in the plain-text table format (repr floats round-trip)."""
    lines = [f"{mdp.n_states} {mdp.n_actions} {float(mdp.gamma)!r}"]
    for table in (mdp.transition, mdp.reward):
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                lines.append(" ".join(repr(float(x)) for x in table[s, a]))
    lines.append(" ".join(repr(float(x)) for x in mdp.init_dist))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
