"""Training, evaluation and stress analysis around the lifespan-guided reward."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from . import svg
from .agent import SAC, ReplayBuffer, sample_ready_batch
from .config import RunConfig, from_dict
from .env import Contact, PushEnv
from .errors import NotReady, NumericalFault, VersionError
from .fatigue import RulEstimate, SnCurve, StressHistory, episode_rul
from .fea import StressSampler, read_mesh
from .reward import EpisodeOutcome, NormBounds, RewardModel, clamp_rul

log = logging.getLogger(__name__)

RECORD_COLUMNS = (
    "episode", "success", "tool_rul", "return", "final_distance",
    "eta_upper", "eta_lower", "torque", "contacts",
)
SUMMARY_COLUMNS = (
    "variant", "checkpoint", "trials", "mean_rul", "std_rul", "success_rate",
    "mean_final_distance", "std_final_distance", "improvement",
)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


@dataclass
class Step:
    obs: np.ndarray
    action: np.ndarray
    task_reward: float
    next_obs: np.ndarray
    terminal: bool
    timestep: int
    contact: Contact | None


@dataclass
class EpisodeResult:
    steps: list[Step]
    trajectory: list[dict]
    history: StressHistory
    rul: RulEstimate | None
    outcome: EpisodeOutcome
    final_distance: float
    episode_return: float
    fault: str | None = None

    @property
    def contacts(self) -> int:
        return sum(s.contact is not None for s in self.steps)


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    success: bool
    tool_rul: float
    episode_return: float
    final_distance: float
    eta_upper: float | None
    eta_lower: float | None
    torque: float
    contacts: int
    wall_clock: float = field(default=0.0, compare=False)

    def row(self) -> list[str]:
        return [
            _fmt(self.episode), _fmt(self.success), _fmt(self.tool_rul), _fmt(self.episode_return),
            _fmt(self.final_distance), _fmt(self.eta_upper), _fmt(self.eta_lower),
            _fmt(self.torque), _fmt(self.contacts),
        ]


class Workbench:
    """Environment, FEA sampler and S-N curve built from one config."""

    def __init__(self, config: RunConfig):
        self.config = config.check()
        self.mesh = read_mesh(config.mesh_path)
        self.mesh_digest = ckpt.file_digest(config.mesh_path)
        self.env = PushEnv(config.env, self.mesh)
        self.sampler = StressSampler(self.mesh, config.material)
        self.curve: SnCurve = config.sn_curve

    def episode_seed(self, base: int, index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([int(base), int(index)])


def run_episode(
    policy: Callable[[np.ndarray], np.ndarray],
    bench: Workbench,
    seed,
    on_step: Callable[[Step], None] | None = None,
) -> EpisodeResult:
    """Roll out one episode and compute its tool RUL from the stress history.

    The tool is unloaded before the first step, so the history starts with
    a zero-stress sample followed by one sample per environment step.
    """
    env, sampler = bench.env, bench.sampler
    state = env.reset(seed)
    obs = state.observation()
    fields_ = [sampler.zero()]
    steps: list[Step] = []
    trajectory: list[dict] = []
    total = 0.0
    success = False
    fault = None
    torque = 0.0
    distance = float(np.linalg.norm(state.object_position - state.goal_position))
    while True:
        action = np.asarray(policy(obs), dtype=float)
        out = env.step(state, action)
        state = out.next_state
        next_obs = state.observation()
        if out.contact is None:
            fields_.append(sampler.zero())
        else:
            fields_.append(sampler.sample_at(out.contact.point, out.contact.force))
            torque = max(torque, out.contact.torque)
        step = Step(obs, action, out.task_reward, next_obs, out.success, len(steps), out.contact)
        steps.append(step)
        force = out.contact.force if out.contact is not None else (0.0, 0.0)
        trajectory.append({
            "step": state.step_index,
            "tool_x": state.tool_position[0], "tool_y": state.tool_position[1],
            "obj_x": state.object_position[0], "obj_y": state.object_position[1],
            "reward": out.task_reward, "contact_fx": force[0], "contact_fy": force[1],
        })
        if on_step is not None:
            on_step(step)
        total += out.task_reward
        obs = next_obs
        distance = out.distance
        success = out.success
        if out.done:
            break
    history = StressHistory.from_fields(fields_)
    try:
        rul = episode_rul(history, bench.curve, bench.config.include_residuals)
        eta = rul.tool_rul
    except NumericalFault as exc:  # pragma: no cover - defensive
        log.error("fatigue evaluation failed: %s", exc)
        rul, eta, success, fault = None, 0.0, False, str(exc)
    outcome = EpisodeOutcome(success=success, tool_rul=eta, length=len(steps), torque=torque)
    return EpisodeResult(steps, trajectory, history, rul, outcome, distance, total, fault)


class Trainer:
    """Runs the lifespan-guided training loop for one (variant, seed)."""

    def __init__(self, config: RunConfig):
        torch.set_num_threads(1)
        self.config = config
        self.bench = Workbench(config)
        self.sac_config = config.sac
        self.knobs = config.knobs
        self.agent = SAC(self.sac_config, config.seed)
        self.buffer = ReplayBuffer(self.knobs.replay_capacity, self.sac_config.obs_dim, self.sac_config.act_dim)
        self.reward = RewardModel(config.variant, config.arn)
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
        self.episode = 0
        self.records: list[EpisodeRecord] = []
        self.updates = 0
        self._bounds: NormBounds | None = None

    # -- checkpointing -----------------------------------------------------
    def meta(self) -> dict:
        return {
            "config": self.config.raw,
            "config_digest": self.config.digest(),
            "base_dir": str(self.config.base_dir.resolve()),
            "mesh_digest": self.bench.mesh_digest,
            "variant": self.config.variant,
            "seed": self.config.seed,
            "episode": self.episode,
            "updates": self.updates,
            "numpy_rng": self.rng.bit_generator.state,
            "reward": self.reward.normalizer.state(),
            "outcomes": [[e, o.success, o.tool_rul, o.length, o.torque] for e, o in self.buffer.outcomes.items()],
            "records": [list(r.row()) for r in self.records],
        }

    def save(self, path: str | Path) -> Path:
        return ckpt.save(path, self.agent, self.buffer, self.meta())

    @classmethod
    def resume(cls, path: str | Path, config: RunConfig | None = None) -> "Trainer":
        meta, arrays = ckpt.load(path)
        if config is None:
            config = from_dict(meta["config"], meta["base_dir"])
        elif _comparable(meta["config"]) != _comparable(config.raw):
            raise VersionError("checkpoint was written with a different configuration")
        trainer = cls(config)
        if meta["mesh_digest"] != trainer.bench.mesh_digest:
            raise VersionError("tool mesh changed since the checkpoint was written")
        ckpt.restore_agent(trainer.agent, meta, arrays)
        ckpt.restore_buffer(trainer.buffer, meta, arrays)
        trainer.rng.bit_generator.state = meta["numpy_rng"]
        trainer.reward.normalizer.load_state(meta["reward"])
        trainer.buffer.outcomes = {
            int(e): EpisodeOutcome(bool(s), float(r), int(n), float(q)) for e, s, r, n, q in meta["outcomes"]
        }
        trainer.episode = int(meta["episode"])
        trainer.updates = int(meta["updates"])
        trainer.records = [_record_from_row(row) for row in meta["records"]]
        return trainer

    # -- training ----------------------------------------------------------
    def _reward_fn(self, task_reward, timestep, outcomes):
        return self.reward.batch(task_reward, timestep, outcomes, self._bounds)

    def _gradient_steps(self) -> None:
        c = self.sac_config
        for _ in range(self.knobs.gradient_steps):
            try:
                batch = sample_ready_batch(self.buffer, c.batch_size, self.rng, self._reward_fn, c.a_max)
            except NotReady:
                return
            self.agent.update(batch)
            self.updates += 1

    def train_episode(self) -> EpisodeRecord:
        e = self.episode
        start = time.perf_counter()
        # rewards sampled during this episode use the bounds fixed at its start
        self._bounds = self.reward.snapshot()
        explore = e < self.knobs.random_episodes
        a_max = self.sac_config.a_max

        def policy(obs):
            if explore:
                return self.rng.uniform(-a_max, a_max, size=self.sac_config.act_dim)
            return self.agent.act(obs)

        def on_step(step: Step):
            self.buffer.add(step.obs, np.clip(step.action, -a_max, a_max), step.task_reward,
                            step.next_obs, step.terminal, step.timestep, e)
            self._gradient_steps()

        result = run_episode(policy, self.bench, self.bench.episode_seed(self.config.seed, e), on_step)
        outcome = result.outcome
        self.buffer.finalize(e, outcome)
        bounds = self.reward.end_episode(outcome, e)
        record = EpisodeRecord(
            episode=e,
            success=outcome.success,
            tool_rul=clamp_rul(outcome.tool_rul, self.config.arn.rul_cap),
            episode_return=result.episode_return,
            final_distance=result.final_distance,
            eta_upper=None if bounds is None else bounds.eta_upper,
            eta_lower=None if bounds is None else bounds.eta_lower,
            torque=outcome.torque,
            contacts=result.contacts,
            wall_clock=time.perf_counter() - start,
        )
        self.records.append(record)
        self.episode += 1
        return record

    def run(self, until: int | None = None, checkpoint_dir: str | Path | None = None) -> list[EpisodeRecord]:
        until = self.config.episodes if until is None else until
        every = self.config.checkpoint_every
        while self.episode < until:
            try:
                self.train_episode()
            except NumericalFault:
                if checkpoint_dir is not None:
                    log.error("numerical fault; last good checkpoint in %s", checkpoint_dir)
                raise
            if checkpoint_dir is not None and every and self.episode % every == 0:
                self.save(Path(checkpoint_dir) / "checkpoint.npz")
        return self.records


def _comparable(raw: dict) -> dict:
    # the episode budget may be extended when resuming
    return {k: v for k, v in raw.items() if k not in ("episodes", "output_dir")}


def _record_from_row(row: Sequence[str]) -> EpisodeRecord:
    opt = lambda s: None if s == "" else float(s)
    return EpisodeRecord(
        episode=int(row[0]), success=bool(int(row[1])), tool_rul=float(row[2]),
        episode_return=float(row[3]), final_distance=float(row[4]),
        eta_upper=opt(row[5]), eta_lower=opt(row[6]), torque=float(row[7]), contacts=int(row[8]),
    )


def write_records(path: str | Path, records: Sequence[EpisodeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(r.row())


def read_records(path: str | Path) -> list[EpisodeRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [_record_from_row(r) for r in rows[1:]]


def train(config: RunConfig, resume: str | Path | None = None) -> tuple[Path, list[EpisodeRecord]]:
    """Train one run and persist checkpoint, episode log and manifest."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer.resume(resume, config) if resume else Trainer(config)
    records = trainer.run(checkpoint_dir=out)
    ckpt_path = trainer.save(out / "checkpoint.npz")
    write_records(out / "episodes.csv", records)
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "wall_clock_s"])
        w.writerows([[r.episode, f"{r.wall_clock:.6f}"] for r in records])
    manifest = {
        "variant": config.variant,
        "seed": config.seed,
        "episodes": config.episodes,
        "config_digest": config.digest(),
        "mesh_digest": trainer.bench.mesh_digest,
        "checkpoint": ckpt_path.name,
        "config": config.raw,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return ckpt_path, records


# -- evaluation ------------------------------------------------------------
@dataclass
class LoadedPolicy:
    config: RunConfig
    bench: Workbench
    agent: SAC
    path: Path

    def act(self, obs):
        return self.agent.act(obs, deterministic=True)


def load_policy(path: str | Path, config_base: str | Path | None = None) -> LoadedPolicy:
    torch.set_num_threads(1)
    meta, arrays = ckpt.load(path)
    config = from_dict(meta["config"], config_base if config_base is not None else meta["base_dir"])
    bench = Workbench(config)
    if meta["mesh_digest"] != bench.mesh_digest:
        raise VersionError(f"mesh {config.mesh_path} does not match the checkpoint")
    agent = SAC(config.sac, config.seed)
    ckpt.restore_agent(agent, meta, arrays, with_optimizers=False)
    return LoadedPolicy(config, bench, agent, Path(path))


def evaluate_policy(policy: LoadedPolicy, trials: int, seed: int) -> list[EpisodeResult]:
    return [run_episode(policy.act, policy.bench, np.random.SeedSequence([seed, i])) for i in range(trials)]


def summarize(variant: str, path: str, results: Sequence[EpisodeResult], cap: float) -> dict:
    n = len(results)
    if n == 0:
        return {"variant": variant, "checkpoint": path, "trials": 0, "mean_rul": float("nan"),
                "std_rul": float("nan"), "success_rate": float("nan"),
                "mean_final_distance": float("nan"), "std_final_distance": float("nan")}
    rul = np.array([clamp_rul(r.outcome.tool_rul, cap) for r in results])
    dist = np.array([r.final_distance for r in results])
    return {
        "variant": variant,
        "checkpoint": path,
        "trials": n,
        "mean_rul": float(rul.mean()),
        "std_rul": float(rul.std()),
        "success_rate": float(np.mean([r.outcome.success for r in results])),
        "mean_final_distance": float(dist.mean()),
        "std_final_distance": float(dist.std()),
    }


def add_improvement(rows: list[dict]) -> list[dict]:
    base = next((r for r in rows if r["variant"] == "baseline" and r["trials"] > 0), None)
    for r in rows:
        r["improvement"] = (r["mean_rul"] / base["mean_rul"]) if base and r["trials"] > 0 else float("nan")
    return rows


def evaluate(checkpoints: Sequence[str | Path], trials: int, seed: int = 10_000, output_dir: str | Path | None = None) -> list[dict]:
    """Deterministic-policy evaluation of one or more checkpoints.

    All checkpoints see the same sequence of randomized resets, so rows are
    paired trial-by-trial.
    """
    rows = []
    if trials > 0:
        for path in checkpoints:
            policy = load_policy(path)
            results = evaluate_policy(policy, trials, seed)
            rows.append(summarize(policy.config.variant, str(path), results, policy.config.arn.rul_cap))
    rows = add_improvement(rows)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(out / "evaluation.csv", rows)
        (out / "evaluation.svg").write_text(svg.bar_chart(rows))
    return rows


def write_summary(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([r[c] if isinstance(r[c], str) else _fmt(r[c]) for c in SUMMARY_COLUMNS])


# -- stress analysis ---------------------------------------------------------
def analyze_stress(checkpoint_path: str | Path, seed: int = 10_000, output_dir: str | Path | None = None) -> dict:
    """Per-element RUL of one deterministic rollout."""
    policy = load_policy(checkpoint_path)
    result = run_episode(policy.act, policy.bench, np.random.SeedSequence([seed, 0]))
    cap = policy.config.arn.rul_cap
    eta = np.minimum(result.rul.per_element, cap)
    critical = int(result.rul.critical_element) if np.any(result.rul.damage > 0) else int(np.argmin(eta))
    data = {
        "eta": eta,
        "damage": result.rul.damage,
        "critical_element": critical,
        "tool_rul": clamp_rul(result.rul.tool_rul, cap),
        "trajectory": result.trajectory,
        "mesh": policy.bench.mesh,
    }
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        centroids = policy.bench.mesh.centroids()
        with open(out / "element_rul.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["element", "rul", "log10_rul", "damage", "centroid_x", "centroid_y", "critical"])
            for i, (e, d) in enumerate(zip(eta, result.rul.damage)):
                w.writerow([i, _fmt(e), _fmt(math.log10(e) if e > 0 else float("-inf")), _fmt(d),
                            _fmt(centroids[i, 0]), _fmt(centroids[i, 1]), int(i == critical)])
        (out / "rul_heatmap.svg").write_text(svg.mesh_heatmap(policy.bench.mesh, eta, critical))
        from .env import write_trajectory_csv

        write_trajectory_csv(out / "trajectory.csv", result.trajectory)
    return data
