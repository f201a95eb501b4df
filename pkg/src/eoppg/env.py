"""Finite-horizon environments, trajectory sampling and the LQ benchmark.

Decision steps are indexed ``t = 0..H-1``.  A trajectory stores the
``H + 1`` states ``s_0..s_H`` and the ``H`` actions and rewards taken at the
decision steps, so ``r_t`` is the reward collected at ``s_t``.

Sampling is driven by pre-drawn standard normals.  Trajectory ``i`` of a
dataset draws all of its noise from the substream keyed by ``(seed, i)``,
which makes a dataset independent of how the work is split across workers.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ._rng import substream
from .policy import GaussianLinearPolicy


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray   # (H+1, state_dim)
    actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)

    def __post_init__(self):
        H = self.actions.shape[0]
        if self.states.shape[0] != H + 1 or self.rewards.shape[0] != H:
            raise ValueError("trajectory needs H+1 states and H actions/rewards")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


@dataclass(frozen=True)
class Dataset:
    """``n`` trajectories of a common horizon, stored as stacked arrays."""

    states: np.ndarray   # (n, H+1, state_dim)
    actions: np.ndarray  # (n, H)
    rewards: np.ndarray  # (n, H)

    def __post_init__(self):
        n, H = self.actions.shape
        if self.states.shape[:2] != (n, H + 1) or self.rewards.shape != (n, H):
            raise ValueError(
                f"inconsistent shapes: states {self.states.shape}, "
                f"actions {self.actions.shape}, rewards {self.rewards.shape}"
            )
        if n < 1:
            raise ValueError("a dataset needs at least one trajectory")

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.rewards[i])

    def __iter__(self) -> Iterator[Trajectory]:
        return (self[i] for i in range(self.n))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.states[idx], self.actions[idx], self.rewards[idx])

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "Dataset":
        if len({t.horizon for t in trajs}) > 1:
            raise ValueError("all trajectories must share the same horizon")
        return cls(
            np.stack([t.states for t in trajs]),
            np.stack([t.actions for t in trajs]),
            np.stack([t.rewards for t in trajs]),
        )

    def to_csv(self, path) -> None:
        """One row per (trajectory, step); the terminal state row has no a, r."""
        ds = self.state_dim
        s_cols = ["s"] if ds == 1 else [f"s{k}" for k in range(ds)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["traj_id", "t", *s_cols, "a", "r"])
            for i in range(self.n):
                for t in range(self.horizon + 1):
                    s = [repr(float(x)) for x in self.states[i, t]]
                    if t < self.horizon:
                        w.writerow([i, t, *s, repr(float(self.actions[i, t])), repr(float(self.rewards[i, t]))])
                    else:
                        w.writerow([i, t, *s, "", ""])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        s_cols = [c for c in rows[0] if c == "s" or (c.startswith("s") and c[1:].isdigit())]
        n = max(int(r["traj_id"]) for r in rows) + 1
        H = max(int(r["t"]) for r in rows)
        states = np.zeros((n, H + 1, len(s_cols)))
        actions = np.zeros((n, H))
        rewards = np.zeros((n, H))
        for r in rows:
            i, t = int(r["traj_id"]), int(r["t"])
            states[i, t] = [float(r[c]) for c in s_cols]
            if t < H:
                actions[i, t] = float(r["a"])
                rewards[i, t] = float(r["r"])
        return cls(states, actions, rewards)


class EnvSpec:
    """Base class for finite-horizon environments.

    Subclasses set ``horizon``, ``state_dim``, ``init_noise_dim`` and
    ``step_noise_dim`` and implement the three batch functions below.  All
    randomness arrives as standard normal draws, so a transition is a
    deterministic function of (state, action, draw).
    """

    horizon: int
    state_dim: int = 1
    init_noise_dim: int = 0
    step_noise_dim: int = 0

    def initial_state(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transition(self, t: int, s: np.ndarray, a: np.ndarray, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reward(self, t: int, s: np.ndarray, a: np.ndarray, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def noise_size(self) -> int:
        return self.init_noise_dim + self.horizon * (1 + self.step_noise_dim)


@dataclass(frozen=True)
class LQBenchmark(EnvSpec):
    """Scalar linear-quadratic chain: ``s_0 = 0``, ``s_{t+1} = a_t - s_t``,
    ``r_t = -s_t^2``, Gaussian-linear policies ``N(theta s, sigma^2)``.
    """

    horizon: int = 50
    sigma: float = 0.2
    behavior_coef: float = 0.8

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def initial_state(self, z):
        return np.zeros((z.shape[0], 1))

    def transition(self, t, s, a, z):
        return a[:, None] - s

    def reward(self, t, s, a, z):
        return -s[:, 0] ** 2

    def target_policy(self, theta) -> GaussianLinearPolicy:
        return GaussianLinearPolicy(theta, self.sigma)

    def behavior_policy(self) -> GaussianLinearPolicy:
        return GaussianLinearPolicy(self.behavior_coef, self.sigma)


@dataclass(frozen=True)
class LoggedBandit(EnvSpec):
    """One decision step (logged contextual bandit with a fixed context).

    The reward for action ``a`` in {0, 1} is ``means[a] + noise * z``.
    """

    means: tuple = (0.0, 1.0)
    noise: float = 0.0
    context: float = 1.0
    horizon: int = 1
    step_noise_dim: int = 1

    def initial_state(self, z):
        return np.full((z.shape[0], 1), self.context)

    def transition(self, t, s, a, z):
        return s.copy()

    def reward(self, t, s, a, z):
        means = np.asarray(self.means, dtype=float)
        return means[a.astype(int)] + self.noise * z[:, 0]


@dataclass(frozen=True)
class BoundsProfile:
    """Diagnostic caps on reward, score norm, step ratio and marginal ratio.

    Only reported, never used to clip an estimator.
    """

    r_max: float
    g_max: float
    c1: float
    c2: float

    def __post_init__(self):
        for name in ("r_max", "g_max", "c1", "c2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _rollout(env: EnvSpec, policy, noise: np.ndarray) -> Dataset:
    n = noise.shape[0]
    H = env.horizon
    k0, k = env.init_noise_dim, 1 + env.step_noise_dim
    z0 = noise[:, :k0]
    zs = noise[:, k0:].reshape(n, H, k)

    s = np.asarray(env.initial_state(z0), dtype=float).reshape(n, env.state_dim)
    states = np.empty((n, H + 1, env.state_dim))
    actions = np.empty((n, H))
    rewards = np.empty((n, H))
    states[:, 0] = s
    for t in range(H):
        a = policy.sample(s, zs[:, t, 0])
        env_z = zs[:, t, 1:]
        rewards[:, t] = env.reward(t, s, a, env_z)
        s = env.transition(t, s, a, env_z)
        actions[:, t] = a
        states[:, t + 1] = s
    return Dataset(states, actions, rewards)


def sample_trajectory(env: EnvSpec, policy, rng: np.random.Generator) -> Trajectory:
    noise = rng.standard_normal(env.noise_size())[None, :]
    return _rollout(env, policy, noise)[0]


def _seed_key(seed) -> tuple:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)


def trajectory_noise(env: EnvSpec, seed, indices) -> np.ndarray:
    key = _seed_key(seed)
    size = env.noise_size()
    return np.stack([substream(*key, int(i)).standard_normal(size) for i in indices])


def sample_dataset(env: EnvSpec, policy, n: int, seed, workers: int = 1) -> Dataset:
    """Draw ``n`` trajectories; trajectory ``i`` equals
    ``sample_trajectory(env, policy, substream(seed, i))``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if workers <= 1:
        noise = trajectory_noise(env, seed, range(n))
    else:
        chunks = np.array_split(np.arange(n), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda idx: trajectory_noise(env, seed, idx), chunks))
        noise = np.concatenate(parts, axis=0)
    return _rollout(env, policy, noise)


def state_second_moments(theta: float, horizon: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """``E[s_t^2]`` and its theta-derivative for t = 0..H under N(theta s, sigma^2)."""
    u = (theta - 1.0) ** 2
    du = 2.0 * (theta - 1.0)
    V = np.zeros(horizon + 1)
    dV = np.zeros(horizon + 1)
    for t in range(horizon):
        V[t + 1] = u * V[t] + sigma**2
        dV[t + 1] = u * dV[t] + du * V[t]
    return V, dV


def analytic_value(theta: float, bench: LQBenchmark) -> float:
    V, _ = state_second_moments(float(np.squeeze(theta)), bench.horizon, bench.sigma)
    return -float(V[: bench.horizon].sum())


def analytic_gradient(theta: float, bench: LQBenchmark) -> float:
    _, dV = state_second_moments(float(np.squeeze(theta)), bench.horizon, bench.sigma)
    return -float(dV[: bench.horizon].sum())

