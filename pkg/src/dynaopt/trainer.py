"""Model-free, model-based, transfer and Dyna training loops."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .env import POST_LAYOUT, SCHEMATIC, Evaluator, Sample, evaluate_sample, evaluate_samples
from .policy import Baseline, PolicyGenerator, PolicyUpdateConfig
from .reward import RewardValue
from .serialize import dumps
from .surrogate import PER_METRIC, FitReport, RegressionConfig, RewardModel

log = logging.getLogger(__name__)

MODES = ("model_free", "model_based", "dyna", "transfer")
STREAMS = ("policy_init", "model_init", "noise", "sampling", "shuffle", "eval")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    mode: str = "dyna"
    n_direct: int = 100
    n_model: int = 3000
    cycles: int = 5
    total_steps: int = 20000
    eval_samples: int = 200
    seed: int = 0
    early_stop_epsilon: Optional[float] = None
    trailing_window: int = 500
    head_mode: str = PER_METRIC
    # fit the reward model on only the last N buffer samples
    model_window: Optional[int] = None
    model_entropy_bonus: bool = True
    separate_model_baseline: bool = False
    reset_policy_optimizer: bool = False
    policy: PolicyUpdateConfig = field(default_factory=PolicyUpdateConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("n_direct", "n_model", "cycles", "total_steps", "eval_samples"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.mode == "dyna" and (self.n_direct < 1 or self.cycles < 1):
            raise ValueError("dyna mode needs n_direct >= 1 and cycles >= 1")
        if self.trailing_window < 1:
            raise ValueError("trailing_window must be positive")


class Streams:
    """Independent named generators split from one master seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(STREAMS))
        for name, child in zip(STREAMS, children):
            setattr(self, name, np.random.default_rng(child))


class SampleBuffer:
    """Append-only archive of evaluated samples."""

    HEADER = {"format": "dynaopt-buffer", "version": 1}

    def __init__(self, samples: Iterable[Sample] = ()):
        self._samples: list[Sample] = list(samples)

    def append(self, sample: Sample) -> None:
        self._samples.append(sample)

    def extend(self, samples: Iterable[Sample]) -> None:
        self._samples.extend(samples)

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self):
        return iter(self._samples)

    def __getitem__(self, i):
        return self._samples[i]

    @property
    def samples(self) -> list[Sample]:
        return list(self._samples)

    def tail(self, n: Optional[int]) -> list[Sample]:
        return self.samples if n is None else self._samples[-n:]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(dumps(self.HEADER) + "\n")
            for s in self._samples:
                fh.write(dumps(_sample_record(s)) + "\n")

    @classmethod
    def load(cls, path) -> "SampleBuffer":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise ValueError(f"{path}: empty file (missing header)")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError:
            header = None
        if header != cls.HEADER:
            raise ValueError(f"{path}:1: not a sample buffer header")
        out = cls()
        for lineno, line in enumerate(lines[1:], 2):
            try:
                out.append(_sample_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
        return out


def _sample_record(s: Sample) -> dict:
    return {
        "action": list(s.action),
        "metrics": s.metrics,
        "reward": s.reward.total,
        "per_metric": s.reward.per_metric,
        "phase": s.phase,
        "failed": s.failed,
        "step": s.step,
    }


def _sample_from_record(d: dict) -> Sample:
    if d["phase"] not in (SCHEMATIC, POST_LAYOUT):
        raise ValueError(f"unknown phase {d['phase']!r}")
    return Sample(
        action=tuple(int(a) for a in d["action"]),
        metrics={k: float(v) for k, v in d["metrics"].items()},
        reward=RewardValue(float(d["reward"]), {k: float(v) for k, v in d["per_metric"].items()}),
        phase=d["phase"],
        failed=bool(d["failed"]),
        step=int(d["step"]),
    )


STEP_COLUMNS = ("step", "phase", "loop", "reward", "baseline", "entropy", "predicted")
CYCLE_COLUMNS = (
    "cycle",
    "buffer_size",
    "fit_n_used",
    "fit_train_mse",
    "fit_holdout_mse",
    "cycle_mean_reward",
    "cycle_success_rate",
)


@dataclass
class RunLog:
    steps: list[dict] = field(default_factory=list)
    cycles: list[dict] = field(default_factory=list)
    stop_step: Optional[int] = None

    @property
    def real_evals(self) -> int:
        return sum(1 for r in self.steps if r["loop"] == "real")

    def real_rewards(self) -> np.ndarray:
        return np.array([r["reward"] for r in self.steps if r["loop"] == "real"])

    def write_csv(self, path) -> None:
        _write_csv(path, STEP_COLUMNS, self.steps)

    def write_cycles_csv(self, path) -> None:
        _write_csv(path, CYCLE_COLUMNS, self.cycles)

    @classmethod
    def read_csv(cls, path) -> "RunLog":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.steps.append(
                    {
                        "step": int(row["step"]),
                        "phase": row["phase"],
                        "loop": row["loop"],
                        "reward": float(row["reward"]),
                        "baseline": float(row["baseline"]),
                        "entropy": float(row["entropy"]),
                        "predicted": float(row["predicted"]) if row["predicted"] else math.nan,
                    }
                )
        return out


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return "" if v is None else v


class Agent:
    """Policy plus its baseline(s) and random streams for one run."""

    def __init__(self, policy: PolicyGenerator, streams: Streams, baseline: Baseline | None = None):
        self.policy = policy
        self.streams = streams
        self.baseline = baseline or Baseline(policy.cfg.baseline_decay)
        self.model_baseline: Baseline | None = None
        self.updates = 0

    @classmethod
    def create(cls, space, cfg: TrainerConfig) -> "Agent":
        streams = Streams(cfg.seed)
        return cls(PolicyGenerator(space, streams.policy_init, cfg.policy), streams)

    def baseline_for(self, loop: str, cfg: TrainerConfig) -> Baseline:
        if loop == "model" and cfg.separate_model_baseline:
            if self.model_baseline is None:
                self.model_baseline = Baseline(self.policy.cfg.baseline_decay)
            return self.model_baseline
        return self.baseline

    def draw(self):
        z = self.policy.noise(self.streams.noise)
        caches = self.policy.forward_heads(z)
        action, _ = self.policy.sample(z, self.streams.sampling, caches)
        return z, action, caches


def _record(agent: Agent, phase, loop, reward, entropy, predicted=math.nan) -> dict:
    return {
        "step": agent.updates,
        "phase": phase,
        "loop": loop,
        "reward": reward,
        "baseline": agent.baseline.value,
        "entropy": entropy,
        "predicted": predicted,
    }


def _real_loop(cfg, agent, env, constraints, buffer, runlog, n_steps, early_stop=False) -> None:
    window: list[float] = []
    for _ in range(n_steps):
        z, action, caches = agent.draw()
        entropy = agent.policy.entropy(z, caches)
        sample = evaluate_sample(env, constraints, action, step=agent.updates)
        reward = sample.reward.total
        agent.policy.reinforce_update(z, action, reward, agent.baseline_for("real", cfg), caches=caches)
        buffer.append(sample)
        runlog.steps.append(_record(agent, sample.phase, "real", reward, entropy))
        agent.updates += 1
        if early_stop and cfg.early_stop_epsilon is not None:
            window.append(reward)
            if len(window) > cfg.trailing_window:
                window.pop(0)
            if len(window) == cfg.trailing_window and np.mean(window) >= -cfg.early_stop_epsilon:
                runlog.stop_step = agent.updates
                log.info("early stop at step %d", agent.updates)
                return


def _model_loop(cfg, agent, model: RewardModel, runlog, n_steps, phase) -> None:
    beta = None if cfg.model_entropy_bonus else 0.0
    baseline = agent.baseline_for("model", cfg)
    for _ in range(n_steps):
        z, action, caches = agent.draw()
        entropy = agent.policy.entropy(z, caches)
        predicted = model.predict(action).total
        agent.policy.reinforce_update(z, action, predicted, baseline, entropy_coeff=beta, caches=caches)
        runlog.steps.append(_record(agent, phase, "model", predicted, entropy, predicted))
        agent.updates += 1


def run_model_free(cfg: TrainerConfig, agent: Agent, env: Evaluator, constraints, buffer: SampleBuffer, runlog: RunLog | None = None) -> RunLog:
    """REINFORCE on real evaluations, one evaluation per update."""
    if cfg.total_steps < 1:
        raise ValueError("model-free training needs total_steps >= 1")
    runlog = runlog or RunLog()
    _real_loop(cfg, agent, env, constraints, buffer, runlog, cfg.total_steps, early_stop=True)
    return runlog


def run_model_based(cfg: TrainerConfig, agent: Agent, model: RewardModel, runlog: RunLog | None = None, phase: str = SCHEMATIC) -> RunLog:
    """``cfg.n_model`` REINFORCE updates against the reward model only."""
    runlog = runlog or RunLog()
    _model_loop(cfg, agent, model, runlog, cfg.n_model, phase)
    return runlog


def _cycle_record(cycle, buffer, report: FitReport | None, rewards) -> dict:
    rewards = np.asarray(rewards)
    return {
        "cycle": cycle,
        "buffer_size": len(buffer),
        "fit_n_used": report.n_used if report else 0,
        "fit_train_mse": report.train_mse if report else math.nan,
        "fit_holdout_mse": report.holdout_mse if report else math.nan,
        "cycle_mean_reward": float(rewards.mean()) if rewards.size else math.nan,
        "cycle_success_rate": float(np.mean(rewards == 0.0)) if rewards.size else math.nan,
    }


def run_dyna(cfg: TrainerConfig, agent: Agent, model: RewardModel, env: Evaluator, constraints, buffer: SampleBuffer, runlog: RunLog | None = None) -> RunLog:
    """Alternate real REINFORCE, reward-model regression and simulated REINFORCE."""
    runlog = runlog or RunLog()
    for cycle in range(cfg.cycles):
        if cfg.reset_policy_optimizer and cycle > 0:
            agent.policy.reset_optimizers()
        start = len(buffer)
        _real_loop(cfg, agent, env, constraints, buffer, runlog, cfg.n_direct)
        fresh = [s.reward.total for s in buffer.samples[start:]]
        report = model.fit(buffer.tail(cfg.model_window), cfg.regression, agent.streams.shuffle)
        log.info(
            "cycle %d: buffer=%d mean=%.4f holdout_mse=%.5f",
            cycle, len(buffer), float(np.mean(fresh)), report.holdout_mse,
        )
        _model_loop(cfg, agent, model, runlog, cfg.n_model, env.phase)
        runlog.cycles.append(_cycle_record(cycle, buffer, report, fresh))
    return runlog


def run_transfer(
    cfg: TrainerConfig,
    agent: Agent,
    schematic_buffer: SampleBuffer,
    post_env: Evaluator,
    constraints,
    model: RewardModel | None = None,
    runlog: RunLog | None = None,
    fit_source: bool = True,
) -> tuple[RunLog, RewardModel]:
    """Reuse schematic data, fine-tune on ``n_direct`` post-layout samples, then train on the model.

    New samples are appended to ``schematic_buffer`` with their own phase tag.
    Pass an already trained ``model`` with ``fit_source=False`` to skip the pre-fit.
    """
    if len(schematic_buffer) == 0:
        raise TrainingError("transfer needs a non-empty schematic buffer")
    runlog = runlog or RunLog()
    if model is None:
        if not fit_source:
            raise TrainingError("fit_source=False needs a trained model")
        model = RewardModel(agent.policy.space, constraints, cfg.head_mode, rng=agent.streams.model_init)
    pre_report = model.fit(schematic_buffer.samples, cfg.regression, agent.streams.shuffle) if fit_source else None
    runlog.cycles.append(_cycle_record(0, schematic_buffer, pre_report, []))

    Z = agent.streams.noise.standard_normal((cfg.n_direct, agent.policy.n_params))
    actions = agent.policy.sample_batch(Z, agent.streams.sampling)
    new = evaluate_samples(post_env, constraints, actions, first_step=agent.updates)
    for s, z in zip(new, Z):
        s.phase = POST_LAYOUT
        runlog.steps.append(_record(agent, POST_LAYOUT, "real", s.reward.total, agent.policy.entropy(z)))
    schematic_buffer.extend(new)

    tuned = RewardModel(agent.policy.space, constraints, cfg.head_mode).warm_start(model)
    report = tuned.fit(new, cfg.regression, agent.streams.shuffle)
    _model_loop(cfg, agent, tuned, runlog, cfg.n_model, POST_LAYOUT)
    runlog.cycles.append(_cycle_record(1, schematic_buffer, report, [s.reward.total for s in new]))
    return runlog, tuned


def summarize(samples) -> dict:
    rewards = np.array([s.reward.total for s in samples])
    return {
        "n": int(rewards.size),
        "mean_reward": float(rewards.mean()),
        "success_rate": float(np.mean(rewards == 0.0)),
        "failures": int(sum(s.failed for s in samples)),
    }


def config_dict(cfg: TrainerConfig) -> dict:
    return asdict(cfg)
