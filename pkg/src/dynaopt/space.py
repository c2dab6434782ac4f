"""Discrete design spaces: per-parameter value grids and action encodings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ActionError(ValueError):
    """An action vector that does not fit its parameter space."""


def grid_build(lo: float, hi: float, count: int, scale: str = "log") -> list[float]:
    """Inclusive grid of ``count`` values from ``lo`` to ``hi``."""
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise ValueError(f"invalid grid range [{lo}, {hi}]")
    if count < 2:
        raise ValueError("a grid needs at least 2 values")
    if scale == "linear":
        values = np.linspace(lo, hi, count)
    elif scale == "log":
        if lo <= 0:
            raise ValueError("log-scaled grids need positive bounds")
        values = np.geomspace(lo, hi, count)
    else:
        raise ValueError(f"unknown grid scale {scale!r}")
    values[0], values[-1] = lo, hi
    return [float(v) for v in values]


@dataclass(frozen=True)
class ParamSpec:
    name: str
    grid: tuple[float, ...]
    unit: str = ""
    scale: str = "log"

    def __post_init__(self):
        if len(self.grid) < 2:
            raise ValueError(f"{self.name}: grid needs at least 2 values")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError(f"{self.name}: grid must be strictly increasing")
        if not all(math.isfinite(v) for v in self.grid):
            raise ValueError(f"{self.name}: grid values must be finite")

    @classmethod
    def build(cls, name: str, lo: float, hi: float, count: int, scale: str = "log", unit: str = "") -> "ParamSpec":
        return cls(name, tuple(grid_build(lo, hi, count, scale)), unit, scale)

    @property
    def size(self) -> int:
        return len(self.grid)


class ParameterSpace:
    """Ordered collection of parameter grids; actions are index vectors."""

    def __init__(self, params: Sequence[ParamSpec]):
        if not params:
            raise ValueError("a parameter space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        self.params = tuple(params)
        self._grids = [np.asarray(p.grid) for p in self.params]

    def __len__(self) -> int:
        return len(self.params)

    def __eq__(self, other) -> bool:
        return isinstance(other, ParameterSpace) and self.params == other.params

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def sizes(self) -> list[int]:
        return [p.size for p in self.params]

    def cardinality(self) -> int:
        return math.prod(self.sizes)

    def validate(self, action: Sequence[int]) -> tuple[int, ...]:
        if len(action) != len(self.params):
            raise ActionError(f"action has {len(action)} entries, space has {len(self.params)}")
        out = []
        for i, (a, p) in enumerate(zip(action, self.params)):
            if int(a) != a or not 0 <= a < p.size:
                raise ActionError(f"index {a} out of range for {p.name} (size {p.size})")
            out.append(int(a))
        return tuple(out)

    def decode(self, action: Sequence[int]) -> np.ndarray:
        action = self.validate(action)
        return np.array([g[a] for g, a in zip(self._grids, action)])

    def decode_named(self, action: Sequence[int]) -> dict[str, float]:
        return dict(zip(self.names, (float(v) for v in self.decode(action))))

    def encode(self, values: Sequence[float]) -> tuple[int, ...]:
        """Exact-match inverse of :meth:`decode`."""
        out = []
        for v, g, p in zip(values, self._grids, self.params):
            hit = np.flatnonzero(g == v)
            if hit.size == 0:
                raise ActionError(f"{v} is not on the grid of {p.name}")
            out.append(int(hit[0]))
        return tuple(out)

    def normalize(self, action: Sequence[int]) -> np.ndarray:
        action = self.validate(action)
        return np.array([2.0 * a / (g - 1) - 1.0 for a, g in zip(action, self.sizes)])

    def normalize_many(self, actions) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        return 2.0 * actions / (np.asarray(self.sizes, dtype=np.float64) - 1.0) - 1.0

    def random_action(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(rng.integers(g)) for g in self.sizes)

    def to_config(self) -> list[dict]:
        return [
            {"name": p.name, "min": p.grid[0], "max": p.grid[-1], "count": p.size, "scale": p.scale, "unit": p.unit}
            for p in self.params
        ]


WIDTH_NAMES = ("w_in", "w_load", "w_tail", "w_out", "w_sink", "w_bias")


def default_opamp_space(count: int = 100) -> ParameterSpace:
    """Six device width multipliers in [1, 100] and a 0.1-10 pF Miller capacitor."""
    params = [ParamSpec.build(n, 1.0, 100.0, count, "log", "") for n in WIDTH_NAMES]
    params.append(ParamSpec.build("cc", 0.1e-12, 10e-12, count, "log", "F"))
    return ParameterSpace(params)
