"""Multi-seed comparison of reward variants under one training protocol."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .config import RunConfig
from .harness import EpisodeRecord, LoadedPolicy, Trainer, evaluate_policy, write_records
from .reward import clamp_rul

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    variant: str
    seed: int
    records: list[EpisodeRecord]
    eval_rul: np.ndarray
    eval_success: np.ndarray
    eval_distance: np.ndarray

    @property
    def mean_eval_rul(self) -> float:
        return float(self.eval_rul.mean())

    @property
    def mean_success_rul(self) -> float:
        """Mean RUL over successful trials only.

        A failed trial that never touches the object has zero damage and would
        score the RUL cap, so failures say nothing about tool life.
        """
        rul = self.eval_rul[self.eval_success]
        return float(rul.mean()) if rul.size else float("nan")

    @property
    def success_rate(self) -> float:
        return float(self.eval_success.mean())

    def final_training_rul(self, window: int = 50) -> float:
        """Mean logged RUL of the successful episodes in the last ``window`` episodes."""
        tail = [r.tool_rul for r in self.records[-window:] if r.success]
        return float(np.mean(tail)) if tail else float("nan")


def run_one(config: RunConfig, trials: int, eval_seed: int, out_dir: Path | None = None) -> RunResult:
    trainer = Trainer(config)
    records = trainer.run()
    policy = LoadedPolicy(config, trainer.bench, trainer.agent, Path("."))
    results = evaluate_policy(policy, trials, eval_seed)
    cap = config.arn.rul_cap
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_records(out_dir / "episodes.csv", records)
        trainer.save(out_dir / "checkpoint.npz")
    return RunResult(
        variant=config.variant,
        seed=config.seed,
        records=records,
        eval_rul=np.array([clamp_rul(r.outcome.tool_rul, cap) for r in results]),
        eval_success=np.array([r.outcome.success for r in results], dtype=bool),
        eval_distance=np.array([r.final_distance for r in results]),
    )


def run_protocol(
    base: RunConfig,
    variants: Sequence[str],
    seeds: Sequence[int],
    episodes: int,
    trials: int,
    out_dir: str | Path | None = None,
) -> dict[tuple[str, int], RunResult]:
    out = Path(out_dir) if out_dir is not None else None
    results = {}
    for seed in seeds:
        for variant in variants:
            cfg = base.with_overrides(variant=variant, seed=seed, episodes=episodes)
            sub = None if out is None else out / f"{variant}_seed{seed}"
            res = run_one(cfg, trials, base.eval_seed, sub)
            log.info("%s seed %d: eval RUL %.4g, success %.2f", variant, seed, res.mean_eval_rul, res.success_rate)
            results[(variant, seed)] = res
    if out is not None:
        write_protocol_summary(out / "summary.csv", results)
    return results


def write_protocol_summary(path: Path, results: dict[tuple[str, int], RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "mean_eval_rul", "mean_success_rul", "median_eval_rul", "success_rate",
                    "final_training_rul"])
        for (variant, seed), r in sorted(results.items()):
            w.writerow([variant, seed, repr(r.mean_eval_rul), repr(r.mean_success_rul), repr(float(np.median(r.eval_rul))),
                        repr(r.success_rate), repr(r.final_training_rul())])


@dataclass(frozen=True)
class Comparison:
    factor: float
    p_value: float
    per_seed: list[tuple[float, float]]


def compare_lifespan(results, seeds, treated: str = "ours", control: str = "baseline",
                     metric: str = "mean_eval_rul") -> Comparison:
    """Ratio of across-seed mean evaluation RUL and a paired one-sided test.

    ``metric`` names the per-run statistic (``mean_eval_rul`` or
    ``mean_success_rul``). The test is a paired t-test on log10 of the per-seed
    values (RUL is heavy-tailed, so logs are closer to normal).
    """
    pairs = [(getattr(results[(treated, s)], metric), getattr(results[(control, s)], metric)) for s in seeds]
    t, c = np.array(pairs).T
    factor = float(t.mean() / c.mean())
    p = float(stats.ttest_rel(np.log10(t), np.log10(c), alternative="greater").pvalue)
    return Comparison(factor, p, pairs)
