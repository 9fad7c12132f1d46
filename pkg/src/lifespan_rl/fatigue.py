"""Stress history -> rainflow cycles -> Miner damage -> remaining useful life.

All functions are pure. Stresses are in Pa; RUL is expressed in repeatable
load-cycles of the analysed history (one "cycle" = one episode's worth of
loading).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, DomainError

Cycle = tuple[float, float]  # (amplitude, count)


@dataclass(frozen=True)
class StressHistory:
    """Per-element von Mises stress over one episode.

    ``samples`` has shape ``(element_count, len(sample_times))``.
    """

    samples: np.ndarray
    sample_times: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        times = np.asarray(self.sample_times, dtype=float)
        if samples.ndim != 2:
            raise DataError(f"samples must be 2-D, got shape {samples.shape}")
        if samples.shape[0] < 1:
            raise DataError("history needs at least one element")
        if times.ndim != 1 or times.shape[0] != samples.shape[1]:
            raise DataError(
                f"sample_times length {times.shape} does not match samples {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise DataError("stress history contains non-finite values")
        if np.any(samples < 0.0):
            raise DataError("von Mises stress must be non-negative")
        if np.any(np.diff(times) < 0.0):
            raise DataError("sample_times must be ordered")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_times", times)

    @property
    def element_count(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_fields(cls, fields: Sequence[np.ndarray], sample_times=None) -> "StressHistory":
        """Stack a time-ordered list of per-element stress fields."""
        if len(fields) == 0:
            raise DataError("cannot build a history from zero samples")
        samples = np.stack([np.asarray(f, dtype=float) for f in fields], axis=1)
        if sample_times is None:
            sample_times = np.arange(samples.shape[1], dtype=float)
        return cls(samples, np.asarray(sample_times, dtype=float))


@dataclass(frozen=True)
class SnCurve:
    """Basquin S-N curve ``N = a * amplitude**(-b)``."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and np.isfinite(self.a)):
            raise DomainError(f"Basquin coefficient must be positive, got {self.a}")
        if not (self.b > 0 and np.isfinite(self.b)):
            raise DomainError(f"Basquin exponent must be positive, got {self.b}")

    @classmethod
    def from_reference(cls, amplitude: float, cycles: float, b: float) -> "SnCurve":
        """Curve passing through ``(amplitude, cycles)`` with slope ``b``."""
        return cls(a=cycles * amplitude**b, b=b)


@dataclass(frozen=True)
class RulEstimate:
    per_element: np.ndarray
    tool_rul: float
    damage: np.ndarray = field(repr=False)

    @property
    def critical_element(self) -> int:
        """Index of the element with the smallest RUL (largest damage)."""
        return int(np.argmax(self.damage))


def turning_points(series: Sequence[float]) -> np.ndarray:
    """Reduce a sequence to its reversals.

    Plateaus collapse to one point; a point is kept when the direction of
    travel changes strictly. End points are always kept.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise DataError("stress sequence must be 1-D and non-empty")
    if not np.all(np.isfinite(x)):
        raise DataError("stress sequence contains non-finite values")
    keep = np.concatenate(([True], np.diff(x) != 0.0))
    x = x[keep]
    if x.size <= 2:
        return x
    d = np.diff(x)
    reversal = np.sign(d[1:]) != np.sign(d[:-1])
    mask = np.concatenate(([True], reversal, [True]))
    return x[mask]


def rainflow_count(series: Sequence[float]) -> list[Cycle]:
    """Four-point rainflow counting with residual half-cycles.

    Returns ``(amplitude, count)`` pairs in extraction order: closed cycles
    (count 1.0) as they are found, followed by the residual half-cycles
    (count 0.5). Amplitude is half the cycle range.
    """
    points = turning_points(series)
    cycles: list[Cycle] = []
    stack: list[float] = []
    for p in points:
        stack.append(float(p))
        while len(stack) >= 4:
            a, b, c, d = stack[-4:]
            inner = abs(b - c)
            if inner <= abs(a - b) and inner <= abs(c - d):
                cycles.append((0.5 * inner, 1.0))
                del stack[-3:-1]
            else:
                break
    for lo, hi in zip(stack[:-1], stack[1:]):
        cycles.append((0.5 * abs(hi - lo), 0.5))
    return cycles


def cycles_to_failure(amplitude: float, curve: SnCurve) -> float:
    """Basquin life at a stress amplitude."""
    if not amplitude > 0:
        raise DomainError(f"amplitude must be positive, got {amplitude}")
    return curve.a * amplitude ** (-curve.b)


def _element_damage(cycles: Sequence[Cycle], curve: SnCurve, include_residuals: bool) -> float:
    total = 0.0
    for amplitude, count in cycles:
        if count < 1.0 and not include_residuals:
            continue
        total += count / cycles_to_failure(amplitude, curve)
    return total


def miner_damage(
    series: Sequence[Sequence[Cycle]], curve: SnCurve, include_residuals: bool = True
) -> np.ndarray:
    """Linear damage sum per element.

    ``series`` holds one cycle list per element. Residual half-cycles count
    with weight 0.5 unless ``include_residuals`` is False.
    """
    return np.array(
        [_element_damage(cycles, curve, include_residuals) for cycles in series], dtype=float
    )


def rul_from_damage(damage: Sequence[float]) -> RulEstimate:
    """Per-element RUL ``1/D - 1``; zero damage maps to ``inf``."""
    d = np.asarray(damage, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise DataError("damage must be a non-empty vector")
    if np.any(np.isnan(d)) or np.any(d < 0.0):
        raise DomainError("damage values must be non-negative")
    eta = np.full(d.shape, np.inf)
    hit = d > 0.0
    eta[hit] = 1.0 / d[hit] - 1.0
    return RulEstimate(per_element=eta, tool_rul=float(np.min(eta)), damage=d)


def episode_rul(
    history: StressHistory, curve: SnCurve, include_residuals: bool = True
) -> RulEstimate:
    series = [rainflow_count(row) for row in history.samples]
    return rul_from_damage(miner_damage(series, curve, include_residuals))
