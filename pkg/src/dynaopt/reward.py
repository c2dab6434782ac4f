"""Constraint scoring: clipped, normalized, weighted sum of metric violations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence


class ConfigError(ValueError):
    """Invalid experiment or constraint configuration."""


class EvaluationError(RuntimeError):
    """A measurement could not be produced or is unusable for scoring."""


@dataclass(frozen=True)
class ConstraintSpec:
    metric: str
    lower: Optional[float] = None
    upper: Optional[float] = None
    weight: float = 1.0
    unit: str = ""
    # unclipped objective terms keep the positive side of the normalization
    objective: bool = False

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise ConfigError(f"{self.metric}: constraint needs a lower or upper bound")
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ConfigError(f"{self.metric}: lower bound must be below upper bound")
        for b in (self.lower, self.upper):
            if b is not None and not (math.isfinite(b) and b >= 0):
                raise ConfigError(f"{self.metric}: bounds must be finite and non-negative")
        if not self.weight > 0:
            raise ConfigError(f"{self.metric}: weight must be positive")

    def term(self, m: float) -> float:
        r = 0.0
        if self.lower is not None:
            v = (m - self.lower) / (m + self.lower) if m + self.lower > 0 else 0.0
            r += v if self.objective else min(v, 0.0)
        if self.upper is not None:
            v = (self.upper - m) / (self.upper + m) if self.upper + m > 0 else 0.0
            r += v if self.objective else min(v, 0.0)
        return r


@dataclass
class RewardValue:
    total: float
    per_metric: dict[str, float] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.total == 0.0


def score(constraints: Sequence[ConstraintSpec], metrics: Mapping[str, float]) -> RewardValue:
    """Weighted sum of per-constraint terms, each in [-1, 0] when clipped."""
    per = {}
    total = 0.0
    for c in constraints:
        if c.metric not in metrics:
            raise ConfigError(f"metric {c.metric!r} missing from measurements")
        m = float(metrics[c.metric])
        if not math.isfinite(m) or m < 0:
            raise EvaluationError(f"metric {c.metric!r} has unusable value {m!r}")
        r = c.term(m)
        per[c.metric] = r
        total += c.weight * r
    return RewardValue(total, per)


def failure_reward(constraints: Sequence[ConstraintSpec]) -> RewardValue:
    """Worst clipped score: every constraint at -1."""
    return RewardValue(-sum(c.weight for c in constraints), {c.metric: -1.0 for c in constraints})


def worst_total(constraints: Sequence[ConstraintSpec]) -> float:
    return -sum(c.weight for c in constraints)


def default_constraints() -> list[ConstraintSpec]:
    return [
        ConstraintSpec("gain", lower=200.0, unit="V/V"),
        ConstraintSpec("ugbw", lower=1e6, unit="Hz"),
        ConstraintSpec("phase_margin", lower=60.0, unit="deg"),
        ConstraintSpec("ibias", upper=10e-3, unit="A"),
    ]
