"""Planar object-moving task with a translating tool.

The tool is a rigid polygon (the union of its mesh triangles) whose mount
point follows the commanded XY displacement. A disk resting on the floor is
pushed quasi-statically: any overlap is resolved by sliding the disk along
the contact normal, and while it slides the floor friction transmits a
force of magnitude ``mu * m * g`` back into the tool.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .fea import Mesh

GRAVITY = 9.81
SUBSTEPS = 4


@dataclass(frozen=True)
class EnvConfig:
    friction_range: tuple[float, float] = (0.45, 0.55)
    mass_range: tuple[float, float] = (1.9, 2.1)
    horizon: int = 20
    a_max: float = 0.03
    goal_radius: float = 0.03
    alpha_dis: float = 0.1
    object_radius: float = 0.04
    goal: tuple[float, float] = (0.0, 0.25)
    tool_start: tuple[float, float] = (0.0, -0.2)
    spawn_low: tuple[float, float] = (-0.1, 0.0)
    spawn_high: tuple[float, float] = (0.1, 0.05)
    workspace_low: tuple[float, float] = (-0.45, -0.4)
    workspace_high: tuple[float, float] = (0.45, 0.5)

    def __post_init__(self):
        for name in ("friction_range", "mass_range", "goal", "tool_start", "spawn_low",
                     "spawn_high", "workspace_low", "workspace_high"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        lo, hi = self.friction_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid friction range {self.friction_range}")
        lo, hi = self.mass_range
        if not 0 < lo <= hi:
            raise ConfigError(f"invalid mass range {self.mass_range}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        object.__setattr__(self, "horizon", int(self.horizon))
        if not self.a_max > 0:
            raise ConfigError("a_max must be positive")
        if not (self.goal_radius > 0 and self.object_radius > 0):
            raise ConfigError("radii must be positive")
        if self.alpha_dis < 0:
            raise ConfigError("alpha_dis must be non-negative")
        if any(l > h for l, h in zip(self.spawn_low, self.spawn_high)):
            raise ConfigError("spawn region is empty")
        if any(l >= h for l, h in zip(self.workspace_low, self.workspace_high)):
            raise ConfigError("workspace is empty")


@dataclass(frozen=True)
class EnvState:
    tool_position: np.ndarray
    object_position: np.ndarray
    goal_position: np.ndarray
    step_index: int = 0
    friction: float = 0.5
    mass: float = 2.0

    def observation(self) -> np.ndarray:
        """``[object - tool, goal - object]``."""
        return np.concatenate(
            [self.object_position - self.tool_position, self.goal_position - self.object_position]
        )


@dataclass(frozen=True)
class Contact:
    point: np.ndarray  # tool frame, relative to the mount
    force: np.ndarray  # force exerted on the tool (N)

    @property
    def torque(self) -> float:
        """Reaction torque magnitude about the mount, |r x F|."""
        return float(abs(self.point[0] * self.force[1] - self.point[1] * self.force[0]))


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    task_reward: float
    contact: Contact | None
    done: bool
    success: bool
    distance: float = field(default=0.0)


class ToolGeometry:
    """Collision shape of a tool mesh in its own frame (mount at origin)."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        edges = mesh.boundary_edges()
        self.seg_a = mesh.nodes[edges[:, 0]]
        self.seg_d = mesh.nodes[edges[:, 1]] - self.seg_a
        self.seg_len2 = np.sum(self.seg_d**2, axis=1)
        tri = mesh.nodes[mesh.elements]
        self._tri0 = tri[:, 0]
        self._e1 = tri[:, 1] - tri[:, 0]
        self._e2 = tri[:, 2] - tri[:, 0]
        self._det = self._e1[:, 0] * self._e2[:, 1] - self._e1[:, 1] * self._e2[:, 0]

    def contains(self, q: np.ndarray) -> bool:
        r = q - self._tri0
        u = (r[:, 0] * self._e2[:, 1] - r[:, 1] * self._e2[:, 0]) / self._det
        v = (self._e1[:, 0] * r[:, 1] - self._e1[:, 1] * r[:, 0]) / self._det
        return bool(np.any((u >= 0) & (v >= 0) & (u + v <= 1)))

    def nearest_boundary_point(self, q: Sequence[float]) -> tuple[np.ndarray, float]:
        q = np.asarray(q, dtype=float)
        s = np.clip(np.einsum("ij,ij->i", q - self.seg_a, self.seg_d) / self.seg_len2, 0.0, 1.0)
        pts = self.seg_a + s[:, None] * self.seg_d
        d2 = np.sum((pts - q) ** 2, axis=1)
        k = int(np.argmin(d2))
        return pts[k], float(np.sqrt(d2[k]))

    def gap(self, q: Sequence[float], radius: float) -> float:
        """Clearance between the tool and a disk centred at ``q`` (0 if touching)."""
        q = np.asarray(q, dtype=float)
        if self.contains(q):
            return 0.0
        _, d = self.nearest_boundary_point(q)
        return max(d - radius, 0.0)


class PushEnv:
    def __init__(self, config: EnvConfig, tool: Mesh):
        self.config = config
        self.tool = ToolGeometry(tool)

    def reset(self, seed) -> EnvState:
        cfg = self.config
        rng = np.random.default_rng(seed)
        obj = rng.uniform(cfg.spawn_low, cfg.spawn_high)
        friction = rng.uniform(*cfg.friction_range)
        mass = rng.uniform(*cfg.mass_range)
        return EnvState(
            tool_position=np.array(cfg.tool_start),
            object_position=obj,
            goal_position=np.array(cfg.goal),
            step_index=0,
            friction=float(friction),
            mass=float(mass),
        )

    def _resolve(self, tool: np.ndarray, obj: np.ndarray) -> tuple[np.ndarray, bool]:
        r = self.config.object_radius
        q = obj - tool
        p, d = self.tool.nearest_boundary_point(q)
        inside = self.tool.contains(q)
        if not inside and d >= r:
            return obj, False
        if d == 0.0:
            raise DataError("object centre lies exactly on the tool boundary")
        n = (p - q) / d if inside else (q - p) / d
        return tool + p + n * r, True

    def contact_force(self, before: EnvState, after: EnvState) -> Contact:
        """Coulomb sliding force on the tool, applied at the nearest boundary point."""
        if np.array_equal(before.object_position, after.object_position):
            raise ContractError("contact_force called for a step without contact")
        q = after.object_position - after.tool_position
        p, d = self.tool.nearest_boundary_point(q)
        n = (p - q) / d if self.tool.contains(q) else (q - p) / d
        magnitude = after.friction * after.mass * GRAVITY
        return Contact(point=p, force=-magnitude * n)

    def task_reward(self, state: EnvState) -> float:
        dx, dy = np.abs(state.object_position - state.goal_position)
        d_ee = self.tool.gap(state.object_position - state.tool_position, self.config.object_radius)
        return -float(dx + dy + self.config.alpha_dis * d_ee)

    def step(self, state: EnvState, action: Sequence[float]) -> StepOutcome:
        cfg = self.config
        action = np.asarray(action, dtype=float)
        if action.shape != (2,) or not np.all(np.isfinite(action)):
            raise DataError(f"action must be a finite 2-vector, got {action!r}")
        if not (np.all(np.isfinite(state.tool_position)) and np.all(np.isfinite(state.object_position))):
            raise DataError("state contains non-finite values")
        if state.step_index >= cfg.horizon:
            raise ContractError("episode already finished")
        delta = np.clip(action, -cfg.a_max, cfg.a_max)
        lo, hi = np.array(cfg.workspace_low), np.array(cfg.workspace_high)
        tool = state.tool_position.copy()
        obj = state.object_position.copy()
        touched = False
        for _ in range(SUBSTEPS):
            tool = np.clip(tool + delta / SUBSTEPS, lo, hi)
            obj, hit = self._resolve(tool, obj)
            touched |= hit
        obj = np.clip(obj, lo, hi)
        nxt = replace(state, tool_position=tool, object_position=obj, step_index=state.step_index + 1)
        contact = self.contact_force(state, nxt) if touched and not np.array_equal(obj, state.object_position) else None
        distance = float(np.linalg.norm(obj - nxt.goal_position))
        success = distance <= cfg.goal_radius
        done = success or nxt.step_index >= cfg.horizon
        return StepOutcome(nxt, self.task_reward(nxt), contact, done, success, distance)


def write_trajectory_csv(path: str | Path, rows: Sequence[dict]) -> None:
    columns = ["step", "tool_x", "tool_y", "obj_x", "obj_y", "reward", "contact_fx", "contact_fy"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})
