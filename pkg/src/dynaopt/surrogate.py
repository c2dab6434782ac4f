"""Neural reward model trained by regression on evaluated samples."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import Mlp, OptimizerState, apply_update
from .reward import ConstraintSpec, RewardValue, worst_total
from .serialize import dumps
from .space import ParameterSpace

SCALAR = "scalar"
PER_METRIC = "per_metric"


class RegressionError(RuntimeError):
    pass


@dataclass
class RegressionConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.holdout_fraction <= 0.5:
            raise ValueError("holdout_fraction must lie in [0, 0.5]")


@dataclass
class FitReport:
    n_used: int
    n_train: int
    n_holdout: int
    train_mse: float
    holdout_mse: float
    first_epoch_mse: float


class RewardModel:
    """Shared ReLU backbone with a scalar reward output or one output per constraint.

    Parameters
    ----------
    space : ParameterSpace
        Actions are fed as normalized indices in [-1, 1].
    constraints : list of ConstraintSpec
        Fixes the prediction range and, in per-metric mode, the outputs.
    hidden : sequence of int
        Backbone widths.
    """

    def __init__(
        self,
        space: ParameterSpace,
        constraints: Sequence[ConstraintSpec],
        head_mode: str = PER_METRIC,
        hidden: Sequence[int] = (16, 16, 16),
        rng: np.random.Generator | None = None,
    ):
        if head_mode not in (SCALAR, PER_METRIC):
            raise ValueError(f"unknown head mode {head_mode!r}")
        self.space = space
        self.constraints = list(constraints)
        self.head_mode = head_mode
        n_out = 1 if head_mode == SCALAR else len(self.constraints)
        self.net = Mlp([len(space), *hidden, n_out], "relu", "identity", rng=rng)

    @property
    def metric_names(self) -> list[str]:
        return [c.metric for c in self.constraints]

    def raw(self, actions) -> np.ndarray:
        return self.net.forward(self.space.normalize_many(actions))

    def predict_totals(self, actions) -> np.ndarray:
        """Clamped total reward for each row of an ``(n, T)`` action array."""
        out = self.raw(np.atleast_2d(actions))
        if self.head_mode == SCALAR:
            return np.clip(out[:, 0], worst_total(self.constraints), 0.0)
        w = np.array([c.weight for c in self.constraints])
        return np.clip(out, -1.0, 0.0) @ w

    def predict(self, action: Sequence[int]) -> RewardValue:
        action = self.space.validate(action)
        out = self.net.forward(self.space.normalize(action))
        if self.head_mode == SCALAR:
            return RewardValue(float(np.clip(out[0], worst_total(self.constraints), 0.0)), {})
        per = {c.metric: float(np.clip(v, -1.0, 0.0)) for c, v in zip(self.constraints, out)}
        total = 0.0
        for c in self.constraints:
            total += c.weight * per[c.metric]
        return RewardValue(total, per)

    def targets(self, samples) -> np.ndarray:
        if self.head_mode == SCALAR:
            return np.array([[s.reward.total] for s in samples])
        return np.array([[s.reward.per_metric[m] for m in self.metric_names] for s in samples])

    def fit(self, samples, cfg: RegressionConfig, rng: np.random.Generator) -> FitReport:
        """Minimize mean squared error on the non-failed samples, in place."""
        usable = [s for s in samples if not s.failed]
        if not usable:
            raise RegressionError("no usable (non-failed) samples to fit")
        X = self.space.normalize_many([s.action for s in usable])
        Y = self.targets(usable)
        order = rng.permutation(len(usable))
        n_hold = int(round(cfg.holdout_fraction * len(usable)))
        if n_hold >= len(usable):
            n_hold = 0
        hold, train = order[:n_hold], order[n_hold:]
        Xt, Yt = X[train], Y[train]
        opt = OptimizerState("adam", cfg.learning_rate)
        first_epoch = float("nan")
        for epoch in range(cfg.epochs):
            perm = rng.permutation(len(train))
            for start in range(0, len(train), cfg.batch_size):
                b = perm[start:start + cfg.batch_size]
                err = self.net.forward(Xt[b]) - Yt[b]
                apply_update(self.net, self.net.backward(Xt[b], 2.0 * err / err.size), opt)
            if epoch == 0:
                first_epoch = _mse(self.net, Xt, Yt)
        return FitReport(
            n_used=len(usable),
            n_train=len(train),
            n_holdout=n_hold,
            train_mse=_mse(self.net, Xt, Yt),
            holdout_mse=_mse(self.net, X[hold], Y[hold]) if n_hold else float("nan"),
            first_epoch_mse=first_epoch,
        )

    def mse(self, samples) -> float:
        usable = [s for s in samples if not s.failed]
        return _mse(self.net, self.space.normalize_many([s.action for s in usable]), self.targets(usable))

    def warm_start(self, source: "RewardModel") -> "RewardModel":
        if not self.net.same_architecture(source.net) or self.head_mode != source.head_mode:
            raise ValueError("warm start needs an identical architecture")
        self.net = source.net.copy()
        return self

    def copy(self) -> "RewardModel":
        other = RewardModel.__new__(RewardModel)
        other.space = self.space
        other.constraints = list(self.constraints)
        other.head_mode = self.head_mode
        other.net = self.net.copy()
        return other

    def to_dict(self) -> dict:
        return {
            "kind": "reward_model",
            "head_mode": self.head_mode,
            "metrics": self.metric_names,
            "parameters": self.space.names,
            "network": self.net.to_dict(),
        }

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path, space: ParameterSpace, constraints: Sequence[ConstraintSpec]) -> "RewardModel":
        d = json.loads(Path(path).read_text())
        if d.get("kind") != "reward_model":
            raise ValueError(f"{path} is not a reward-model checkpoint")
        if d["parameters"] != space.names or d["metrics"] != [c.metric for c in constraints]:
            raise ValueError(f"{path}: checkpoint does not match space/constraints")
        model = cls.__new__(cls)
        model.space = space
        model.constraints = list(constraints)
        model.head_mode = d["head_mode"]
        model.net = Mlp.from_dict(d["network"])
        return model


def _mse(net: Mlp, X: np.ndarray, Y: np.ndarray) -> float:
    if len(X) == 0:
        return float("nan")
    return float(np.mean((net.forward(X) - Y) ** 2))
