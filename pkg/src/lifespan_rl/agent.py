"""Soft Actor-Critic with double critics, Polyak targets and auto temperature.

Everything runs in float64 on the CPU. All randomness (initialisation,
exploration noise, minibatch sampling) flows from explicit generators so a
run is reproducible bit-for-bit given its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ContractError, NotReady, NumericalFault

DTYPE = torch.float64
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
EPS = 1e-6


@dataclass(frozen=True)
class SacConfig:
    obs_dim: int = 4
    act_dim: int = 2
    hidden: int = 64
    gamma: float = 0.99
    tau: float = 0.005  # Polyak coefficient: target <- tau * online + (1 - tau) * target
    lr: float = 3e-4
    batch_size: int = 32
    alpha: float = 0.2
    auto_alpha: bool = True
    target_entropy: float | None = None
    obs_scale: float = 10.0
    a_max: float = 1.0

    @property
    def entropy_target(self) -> float:
        return -float(self.act_dim) if self.target_entropy is None else self.target_entropy


def mlp(sizes: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1], dtype=DTYPE))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class Actor(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden: int, obs_scale: float = 1.0):
        super().__init__()
        self.obs_scale = obs_scale
        self.body = mlp([obs_dim, hidden, hidden])
        self.body.append(nn.ReLU())
        self.mu = nn.Linear(hidden, act_dim, dtype=DTYPE)
        self.log_std = nn.Linear(hidden, act_dim, dtype=DTYPE)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.body(obs * self.obs_scale)
        return self.mu(h), self.log_std(h).clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, obs: torch.Tensor, noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Reparameterised squashed sample in [-1, 1] and its log-density."""
        mu, log_std = self(obs)
        std = log_std.exp()
        u = mu + std * noise
        a = torch.tanh(u)
        logp = squashed_log_prob(u, mu, log_std)
        return a, logp

    def mean_action(self, obs: torch.Tensor) -> torch.Tensor:
        mu, _ = self(obs)
        return torch.tanh(mu)


def squashed_log_prob(u: torch.Tensor, mu: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """log density of ``tanh(u)`` for ``u ~ N(mu, exp(log_std)^2)``, summed over dims."""
    gauss = -0.5 * ((u - mu) / log_std.exp()) ** 2 - log_std - 0.5 * math.log(2 * math.pi)
    # log(1 - tanh(u)^2) written in a numerically stable form
    correction = 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))
    return (gauss - correction).sum(-1)


class Critic(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden: int, obs_scale: float = 1.0):
        super().__init__()
        self.obs_scale = obs_scale
        self.net = mlp([obs_dim + act_dim, hidden, hidden, 1])

    def forward(self, obs: torch.Tensor, act: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs * self.obs_scale, act], dim=-1)).squeeze(-1)


@dataclass
class Batch:
    obs: torch.Tensor
    act: torch.Tensor  # normalised to [-1, 1]
    reward: torch.Tensor
    next_obs: torch.Tensor
    done: torch.Tensor
    timestep: np.ndarray
    episode: np.ndarray


class SAC:
    def __init__(self, config: SacConfig, seed: int):
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            c = config
            self.actor = Actor(c.obs_dim, c.act_dim, c.hidden, c.obs_scale)
            self.q1 = Critic(c.obs_dim, c.act_dim, c.hidden, c.obs_scale)
            self.q2 = Critic(c.obs_dim, c.act_dim, c.hidden, c.obs_scale)
        self.q1_target = Critic(c.obs_dim, c.act_dim, c.hidden, c.obs_scale)
        self.q2_target = Critic(c.obs_dim, c.act_dim, c.hidden, c.obs_scale)
        self.q1_target.load_state_dict(self.q1.state_dict())
        self.q2_target.load_state_dict(self.q2.state_dict())
        for p in list(self.q1_target.parameters()) + list(self.q2_target.parameters()):
            p.requires_grad_(False)
        self.log_alpha = torch.tensor(math.log(c.alpha), dtype=DTYPE, requires_grad=True)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=c.lr)
        self.critic_opt = torch.optim.Adam(list(self.q1.parameters()) + list(self.q2.parameters()), lr=c.lr)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=c.lr)
        self.generator = torch.Generator().manual_seed(seed + 1)

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.detach().exp())

    def modules(self) -> dict[str, nn.Module]:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2, "q1_target": self.q1_target, "q2_target": self.q2_target}

    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {"actor_opt": self.actor_opt, "critic_opt": self.critic_opt, "alpha_opt": self.alpha_opt}

    def _check_finite(self) -> None:
        for name, module in self.modules().items():
            for pname, p in module.named_parameters():
                if not torch.all(torch.isfinite(p)):
                    raise NumericalFault(f"non-finite parameter {name}.{pname}")

    def noise(self, shape) -> torch.Tensor:
        return torch.randn(shape, generator=self.generator, dtype=DTYPE)

    def act(self, obs: np.ndarray, deterministic: bool = False) -> np.ndarray:
        """Action in physical units, each component within [-a_max, a_max]."""
        obs_t = torch.as_tensor(np.asarray(obs, dtype=float), dtype=DTYPE)
        if not torch.all(torch.isfinite(obs_t)):
            raise ContractError("observation contains non-finite values")
        with torch.no_grad():
            if deterministic:
                a = self.actor.mean_action(obs_t)
            else:
                a, _ = self.actor.sample(obs_t, self.noise(obs_t.shape[:-1] + (self.config.act_dim,)))
        if not torch.all(torch.isfinite(a)):
            self._check_finite()
            raise NumericalFault("policy produced a non-finite action")
        return a.numpy() * self.config.a_max

    # --- losses -----------------------------------------------------------
    def critic_loss(self, batch: Batch, next_noise: torch.Tensor) -> torch.Tensor:
        c = self.config
        with torch.no_grad():
            next_a, next_logp = self.actor.sample(batch.next_obs, next_noise)
            q_next = torch.min(self.q1_target(batch.next_obs, next_a), self.q2_target(batch.next_obs, next_a))
            target = batch.reward + c.gamma * (1.0 - batch.done) * (q_next - self.alpha * next_logp)
        q1 = self.q1(batch.obs, batch.act)
        q2 = self.q2(batch.obs, batch.act)
        return F.mse_loss(q1, target) + F.mse_loss(q2, target)

    def actor_loss(self, obs: torch.Tensor, noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a, logp = self.actor.sample(obs, noise)
        q = torch.min(self.q1(obs, a), self.q2(obs, a))
        return (self.alpha * logp - q).mean(), logp

    # --- updates ----------------------------------------------------------
    def critic_update(self, batch: Batch) -> float:
        loss = self.critic_loss(batch, self.noise(batch.act.shape))
        if not torch.isfinite(loss):
            raise NumericalFault(f"critic loss is {float(loss)}")
        self.critic_opt.zero_grad()
        loss.backward()
        self.critic_opt.step()
        return loss.item()

    def actor_update(self, batch: Batch) -> float:
        for p in list(self.q1.parameters()) + list(self.q2.parameters()):
            p.requires_grad_(False)
        try:
            loss, logp = self.actor_loss(batch.obs, self.noise(batch.act.shape))
            if not torch.isfinite(loss):
                raise NumericalFault(f"actor loss is {float(loss)}")
            self.actor_opt.zero_grad()
            loss.backward()
            self.actor_opt.step()
        finally:
            for p in list(self.q1.parameters()) + list(self.q2.parameters()):
                p.requires_grad_(True)
        if self.config.auto_alpha:
            alpha_loss = -(self.log_alpha * (logp.detach() + self.config.entropy_target)).mean()
            self.alpha_opt.zero_grad()
            alpha_loss.backward()
            self.alpha_opt.step()
        return loss.item()

    def soft_update(self) -> None:
        tau = self.config.tau
        with torch.no_grad():
            for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
                for p, tp in zip(online.parameters(), target.parameters()):
                    tp.mul_(1.0 - tau).add_(tau * p)

    def update(self, batch: Batch) -> tuple[float, float]:
        critic = self.critic_update(batch)
        actor = self.actor_update(batch)
        self.soft_update()
        return critic, actor


class ReplayBuffer:
    """Ring buffer of raw transitions plus an episode outcome table.

    Transitions keep their within-episode timestep and episode id; rewards
    are produced at sampling time by joining against the episode table, and
    transitions of episodes that are not yet finalized are never sampled.
    """

    def __init__(self, capacity: int, obs_dim: int = 4, act_dim: int = 2):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.task_reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.timestep = np.zeros(capacity, dtype=np.int64)
        self.episode = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.cursor = 0
        self.outcomes: dict[int, object] = {}

    def add(self, obs, act, task_reward, next_obs, done, timestep, episode) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.act[i] = act
        self.task_reward[i] = task_reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.timestep[i] = timestep
        self.episode[i] = episode
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def finalize(self, episode: int, outcome) -> None:
        """Record an episode's outcome (the RUL backfill)."""
        self.outcomes[int(episode)] = outcome
        live = set(np.unique(self.episode[: self.size]).tolist())
        for stale in [e for e in self.outcomes if e not in live]:
            del self.outcomes[stale]

    def ready_indices(self) -> np.ndarray:
        if not self.outcomes:
            return np.empty(0, dtype=np.int64)
        ep = self.episode[: self.size]
        return np.flatnonzero(np.isin(ep, np.fromiter(self.outcomes, dtype=np.int64)))

    def sample_ready(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        ready = self.ready_indices()
        if ready.size < batch_size:
            raise NotReady(f"{ready.size} finalized transitions < batch size {batch_size}")
        return ready[rng.integers(0, ready.size, size=batch_size)]


def sample_ready_batch(
    buffer: ReplayBuffer,
    batch_size: int,
    rng: np.random.Generator,
    reward_fn: Callable[[np.ndarray, np.ndarray, list], np.ndarray],
    a_max: float = 1.0,
) -> Batch:
    """Uniform minibatch over finalized transitions with rewards joined in."""
    idx = buffer.sample_ready(batch_size, rng)
    outcomes = [buffer.outcomes[int(e)] for e in buffer.episode[idx]]
    rewards = reward_fn(buffer.task_reward[idx], buffer.timestep[idx], outcomes)
    t = lambda x: torch.as_tensor(x, dtype=DTYPE)
    return Batch(
        obs=t(buffer.obs[idx]),
        act=t(buffer.act[idx] / a_max),
        reward=t(rewards),
        next_obs=t(buffer.next_obs[idx]),
        done=t(buffer.done[idx]),
        timestep=buffer.timestep[idx].copy(),
        episode=buffer.episode[idx].copy(),
    )
