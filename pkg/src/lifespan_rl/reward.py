"""Lifespan-guided reward with adaptive normalization, plus baseline variants.

Rewards are never stored; they are recomputed from the raw task reward,
the within-episode timestep and the episode's finalized outcome every time
a minibatch is drawn, so updating the normalization bounds re-scales every
past transition at once.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, ContractError, DomainError, NotReady

log = logging.getLogger(__name__)

VARIANTS = ("ours", "baseline", "ours_no_arn", "torque")
FAILED_TOOL_REWARD = -100.0
BUFFER_CAPACITY = 500


@dataclass(frozen=True)
class ArnConfig:
    beta: float = 5.0
    alpha_s: float = 0.2
    gamma_b: float = 0.95
    rul_cap: float = 1e9
    clamp: bool = False
    capacity: int = BUFFER_CAPACITY

    def __post_init__(self):
        if not 0.0 < self.alpha_s < 1.0:
            raise ConfigError("alpha_s must lie in (0, 1)")
        if not 0.0 <= self.gamma_b <= 1.0:
            raise ConfigError("gamma_b must lie in [0, 1]")
        if not 0.0 < self.beta < 50.0:
            raise ConfigError("beta must lie in (0, 50)")
        if not (self.rul_cap > 0 and math.isfinite(self.rul_cap)):
            raise ConfigError("rul_cap must be a positive finite number")
        if self.capacity < 1:
            raise ConfigError("capacity must be positive")


@dataclass(frozen=True)
class NormBounds:
    eta_upper: float
    eta_lower: float
    episode_index: int = -1


@dataclass(frozen=True)
class EpisodeOutcome:
    success: bool
    tool_rul: float
    length: int
    torque: float = 0.0

    def __post_init__(self):
        if self.length < 1:
            raise ContractError("episode length must be at least 1")


def clamp_rul(eta: float, cap: float) -> float:
    return cap if eta > cap else float(eta)


class LifespanBuffer:
    """FIFO history of finite RUL values from recent successful episodes."""

    def __init__(self, capacity: int = BUFFER_CAPACITY, cap: float = 1e9):
        self.capacity = capacity
        self.cap = cap
        self._values: deque[float] = deque(maxlen=capacity)

    def add(self, eta: float) -> None:
        if math.isnan(eta):
            raise DomainError("cannot store NaN lifespan")
        self._values.append(clamp_rul(eta, self.cap))

    def extend(self, values: Iterable[float]) -> None:
        for v in values:
            self.add(v)

    def values(self) -> np.ndarray:
        return np.fromiter(self._values, dtype=float, count=len(self._values))

    def __len__(self) -> int:
        return len(self._values)


def rul_reward_static(eta: float, bounds: NormBounds, success: bool, clamp: bool = False) -> float:
    """Success-gated min-max normalization of a lifespan value."""
    span = bounds.eta_upper - bounds.eta_lower
    if not span > 0:
        raise DomainError(f"degenerate normalization bounds {bounds}")
    if not success:
        return 0.0
    value = (eta - bounds.eta_lower) / span
    return min(max(value, 0.0), 1.0) if clamp else value


def redistribute(task_reward: float, rul_reward: float, t: int, T: int, gamma_b: float) -> float:
    """Spread the terminal lifespan reward back in time with decay ``gamma_b``."""
    if not 0 <= t <= T:
        raise ContractError(f"timestep {t} outside [0, {T}]")
    return task_reward + gamma_b ** (T - t) * rul_reward


def percentile_bounds(values, beta: float) -> tuple[float, float]:
    """``(P[100 - beta], P[beta])`` with inclusive linear interpolation."""
    data = values.values() if isinstance(values, LifespanBuffer) else np.asarray(values, dtype=float)
    if data.size == 0:
        raise NotReady("lifespan buffer is empty")
    upper, lower = np.percentile(data, [100.0 - beta, beta], method="linear")
    return float(upper), float(lower)


def smooth_bounds(previous: NormBounds, hat: tuple[float, float], alpha_s: float, episode_index: int | None = None) -> NormBounds:
    upper = alpha_s * hat[0] + (1.0 - alpha_s) * previous.eta_upper
    lower = alpha_s * hat[1] + (1.0 - alpha_s) * previous.eta_lower
    if upper < lower:
        log.warning("smoothed bounds crossed (upper=%g < lower=%g); swapping", upper, lower)
        upper, lower = lower, upper
    index = previous.episode_index + 1 if episode_index is None else episode_index
    return NormBounds(upper, lower, index)


def arn_reward(
    task_reward: float,
    timestep: int,
    outcome: EpisodeOutcome | None,
    bounds: NormBounds | None,
    config: ArnConfig,
) -> float:
    """Training reward of one stored transition under ARN.

    ``timestep`` is the 0-based index of the transition inside its episode;
    the final transition (``timestep == outcome.length - 1``) receives the
    full lifespan reward. With no bounds yet (bootstrap) the lifespan term
    is zero.
    """
    if outcome is None:
        raise NotReady("episode has not been finalized")
    if bounds is None or not outcome.success:
        life = 0.0
    else:
        eta = clamp_rul(outcome.tool_rul, config.rul_cap)
        life = rul_reward_static(eta, bounds, outcome.success, config.clamp)
    return redistribute(task_reward, life, timestep + 1, outcome.length, config.gamma_b)


def static_life_reward(eta: float) -> float:
    """``1 - 1/eta``; approaches 1 for long lives."""
    if not eta > 0:
        raise DomainError(f"lifespan must be positive, got {eta}")
    return 1.0 - 1.0 / eta


def torque_reward(tau: float, bounds: NormBounds) -> float:
    span = bounds.eta_upper - bounds.eta_lower
    if not span > 0:
        raise DomainError(f"degenerate torque bounds {bounds}")
    return 1.0 - (tau - bounds.eta_lower) / span


@dataclass
class AdaptiveNormalizer:
    """Percentile + EMA bounds over a rolling history of successful episodes.

    Bounds stay ``None`` until the history holds two values; they are then
    initialised from those two values and smoothed after every episode.
    """

    config: ArnConfig = field(default_factory=ArnConfig)
    buffer: LifespanBuffer = field(init=False)
    bounds: NormBounds | None = None

    def __post_init__(self):
        self.buffer = LifespanBuffer(self.config.capacity, self.config.rul_cap)

    def end_episode(self, value: float, success: bool, episode_index: int) -> NormBounds | None:
        if success:
            self.buffer.add(value)
        if len(self.buffer) < 2:
            return self.bounds
        if self.bounds is None:
            vals = self.buffer.values()
            self.bounds = NormBounds(float(vals.max()), float(vals.min()), episode_index)
        else:
            hat = percentile_bounds(self.buffer, self.config.beta)
            self.bounds = smooth_bounds(self.bounds, hat, self.config.alpha_s, episode_index)
        return self.bounds

    def usable(self) -> NormBounds | None:
        b = self.bounds
        if b is None or not b.eta_upper > b.eta_lower:
            return None
        return b

    def state(self) -> dict:
        b = self.bounds
        return {
            "buffer": self.buffer.values().tolist(),
            "bounds": None if b is None else [b.eta_upper, b.eta_lower, b.episode_index],
        }

    def load_state(self, state: dict) -> None:
        self.buffer = LifespanBuffer(self.config.capacity, self.config.rul_cap)
        self.buffer.extend(state["buffer"])
        b = state["bounds"]
        self.bounds = None if b is None else NormBounds(float(b[0]), float(b[1]), int(b[2]))


class RewardModel:
    """Per-variant training reward evaluated at sampling time."""

    def __init__(self, variant: str, config: ArnConfig):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown reward variant '{variant}'; expected one of {VARIANTS}")
        self.variant = variant
        self.config = config
        self.normalizer = AdaptiveNormalizer(config)

    def end_episode(self, outcome: EpisodeOutcome, episode_index: int) -> NormBounds | None:
        if self.variant == "ours":
            return self.normalizer.end_episode(outcome.tool_rul, outcome.success, episode_index)
        if self.variant == "torque":
            return self.normalizer.end_episode(outcome.torque, outcome.success, episode_index)
        return None

    def snapshot(self) -> NormBounds | None:
        return self.normalizer.usable()

    def life_term(self, outcome: EpisodeOutcome, bounds: NormBounds | None) -> float:
        if not outcome.success:
            return 0.0
        if self.variant == "baseline":
            return 0.0
        if self.variant == "ours":
            if bounds is None:
                return 0.0
            return rul_reward_static(clamp_rul(outcome.tool_rul, self.config.rul_cap), bounds, True, self.config.clamp)
        if self.variant == "ours_no_arn":
            eta = clamp_rul(outcome.tool_rul, self.config.rul_cap)
            return FAILED_TOOL_REWARD if eta <= 0 else static_life_reward(eta)
        # torque
        if bounds is None:
            return 0.0
        value = torque_reward(outcome.torque, bounds)
        return min(max(value, 0.0), 1.0) if self.config.clamp else value

    def batch(self, task_reward: np.ndarray, timestep: np.ndarray, outcomes: list[EpisodeOutcome], bounds: NormBounds | None = None) -> np.ndarray:
        """Vectorised training rewards for a minibatch."""
        if self.variant == "baseline":
            return np.asarray(task_reward, dtype=float).copy()
        life = np.array([self.life_term(o, bounds) for o in outcomes])
        length = np.array([o.length for o in outcomes])
        t = np.asarray(timestep) + 1
        if np.any(t > length) or np.any(t < 1):
            raise ContractError("timestep outside its episode")
        return np.asarray(task_reward, dtype=float) + self.config.gamma_b ** (length - t) * life
