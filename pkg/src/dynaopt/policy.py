"""Noise-conditioned product-of-categoricals policy trained with REINFORCE."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import Mlp, OptimizerState, apply_update
from .serialize import dumps
from .space import ParameterSpace


@dataclass
class PolicyUpdateConfig:
    learning_rate: float = 1e-3
    entropy_coeff: float = 0.01
    baseline_decay: float = 0.99
    optimizer: str = "adam"
    hidden: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.entropy_coeff < 0:
            raise ValueError("entropy_coeff must be non-negative")
        if not 0 < self.baseline_decay < 1:
            raise ValueError("baseline_decay must lie in (0, 1)")


@dataclass
class Baseline:
    """Exponential moving average of observed rewards."""

    decay: float = 0.99
    value: float = 0.0
    initialized: bool = False

    def update(self, reward: float) -> None:
        if not self.initialized:
            self.value = float(reward)
            self.initialized = True
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * float(reward)

    def advantage(self, reward: float) -> float:
        return float(reward) - self.value if self.initialized else 0.0

    def to_dict(self) -> dict:
        return {"decay": self.decay, "value": self.value, "initialized": self.initialized}


class PolicyGenerator:
    """One small network per parameter, each reading one scalar of noise.

    Head ``i`` maps ``z[i]`` to log-probabilities over the ``G_i`` grid
    indices of parameter ``i``; the joint policy is their product.
    """

    def __init__(
        self,
        space: ParameterSpace,
        rng: np.random.Generator | None = None,
        cfg: PolicyUpdateConfig | None = None,
    ):
        self.space = space
        self.cfg = cfg or PolicyUpdateConfig()
        self.heads = [
            Mlp([1, self.cfg.hidden, g], "tanh", "log_softmax", rng=rng) for g in space.sizes
        ]
        self.optimizers = [self._new_optimizer() for _ in self.heads]

    def _new_optimizer(self) -> OptimizerState:
        return OptimizerState(self.cfg.optimizer, self.cfg.learning_rate)

    def reset_optimizers(self) -> None:
        self.optimizers = [self._new_optimizer() for _ in self.heads]

    @property
    def n_params(self) -> int:
        return len(self.heads)

    def copy(self) -> "PolicyGenerator":
        other = PolicyGenerator.__new__(PolicyGenerator)
        other.space = self.space
        other.cfg = self.cfg
        other.heads = [h.copy() for h in self.heads]
        other.optimizers = [OptimizerState.from_dict(o.to_dict()) for o in self.optimizers]
        return other

    def noise(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(len(self.heads))

    def _check_noise(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (len(self.heads),):
            raise ValueError(f"noise has shape {z.shape}, expected ({len(self.heads)},)")
        return z

    def forward_heads(self, z) -> list:
        """Per-head forward caches; ``cache[1][-1]`` holds the log-probabilities."""
        z = self._check_noise(z)
        return [h.forward_cache(z[i:i + 1]) for i, h in enumerate(self.heads)]

    def head_log_probs(self, z, caches=None) -> list[np.ndarray]:
        if caches is None:
            caches = self.forward_heads(z)
        return [c[1][-1] for c in caches]

    def sample(self, z, rng: np.random.Generator, caches=None) -> tuple[tuple[int, ...], float]:
        lps = self.head_log_probs(z, caches)
        action = []
        total = 0.0
        for lp in lps:
            cdf = np.cumsum(np.exp(lp))
            k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            k = min(k, lp.size - 1)
            action.append(k)
            total += float(lp[k])
        return tuple(action), total

    def sample_batch(self, Z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Actions for each row of ``Z``; shape ``(n, T)``."""
        Z = np.asarray(Z, dtype=np.float64)
        n = Z.shape[0]
        out = np.empty((n, len(self.heads)), dtype=np.int64)
        u = rng.random((n, len(self.heads)))
        for i, h in enumerate(self.heads):
            cdf = np.cumsum(np.exp(h.forward(Z[:, i:i + 1])), axis=1)
            k = (cdf < (u[:, i:i + 1] * cdf[:, -1:])).sum(axis=1)
            out[:, i] = np.minimum(k, cdf.shape[1] - 1)
        return out

    def log_prob(self, z, action: Sequence[int]) -> float:
        action = self.space.validate(action)
        return float(sum(lp[a] for lp, a in zip(self.head_log_probs(z), action)))

    def entropy(self, z, caches=None) -> float:
        return float(sum(-np.dot(np.exp(lp), lp) for lp in self.head_log_probs(z, caches)))

    def loss_upstreams(self, z, action, advantage: float, beta: float, caches=None) -> list[np.ndarray]:
        """d/d(log-prob outputs) of ``-(adv * log pi(a|z) + beta * H)`` per head."""
        ups = []
        for lp, a in zip(self.head_log_probs(z, caches), action):
            p = np.exp(lp)
            up = beta * p * (lp + 1.0)
            up[a] -= advantage
            ups.append(up)
        return ups

    def reinforce_update(
        self,
        z,
        action: Sequence[int],
        reward: float,
        baseline: Baseline,
        entropy_coeff: float | None = None,
        caches=None,
    ) -> float:
        """One optimizer step on the REINFORCE-with-baseline loss.

        Returns the advantage used. The baseline absorbs ``reward`` afterwards.
        ``caches`` may carry :meth:`forward_heads` output computed at the
        current weights for this ``z``.
        """
        if not math.isfinite(reward):
            raise ValueError(f"non-finite reward {reward!r}")
        action = self.space.validate(action)
        beta = self.cfg.entropy_coeff if entropy_coeff is None else entropy_coeff
        adv = baseline.advantage(reward)
        z = self._check_noise(z)
        if caches is None:
            caches = self.forward_heads(z)
        ups = self.loss_upstreams(z, action, adv, beta, caches)
        for i, (head, opt, up, c) in enumerate(zip(self.heads, self.optimizers, ups, caches)):
            apply_update(head, head.backward(z[i:i + 1], up, cache=c), opt)
        baseline.update(reward)
        return adv

    def to_dict(self, baseline: Baseline | None = None) -> dict:
        return {
            "kind": "policy",
            "parameters": self.space.names,
            "sizes": self.space.sizes,
            "config": {
                "learning_rate": self.cfg.learning_rate,
                "entropy_coeff": self.cfg.entropy_coeff,
                "baseline_decay": self.cfg.baseline_decay,
                "optimizer": self.cfg.optimizer,
                "hidden": self.cfg.hidden,
            },
            "heads": [h.to_dict() for h in self.heads],
            "optimizers": [o.to_dict() for o in self.optimizers],
            "baseline": (baseline or Baseline(self.cfg.baseline_decay)).to_dict(),
        }

    def save(self, path, baseline: Baseline | None = None) -> None:
        Path(path).write_text(dumps(self.to_dict(baseline)) + "\n")

    @classmethod
    def load(cls, path, space: ParameterSpace) -> tuple["PolicyGenerator", Baseline]:
        d = json.loads(Path(path).read_text())
        if d.get("kind") != "policy":
            raise ValueError(f"{path} is not a policy checkpoint")
        if d["parameters"] != space.names or d["sizes"] != space.sizes:
            raise ValueError(f"{path}: checkpoint does not match the parameter space")
        policy = cls.__new__(cls)
        policy.space = space
        policy.cfg = PolicyUpdateConfig(**d["config"])
        policy.heads = [Mlp.from_dict(h) for h in d["heads"]]
        policy.optimizers = [OptimizerState.from_dict(o) for o in d["optimizers"]]
        return policy, Baseline(**d["baseline"])


def evaluate_policy(policy: PolicyGenerator, env, constraints, n: int, rng: np.random.Generator) -> list:
    """Score ``n`` actions drawn from fresh N(0, 1) noise; returns the Samples."""
    from .env import evaluate_samples

    if n < 1:
        raise ValueError("n must be at least 1")
    Z = rng.standard_normal((n, policy.n_params))
    actions = policy.sample_batch(Z, rng)
    return evaluate_samples(env, constraints, actions)


def success_rate(samples) -> float:
    return sum(s.reward.total == 0.0 for s in samples) / len(samples)
