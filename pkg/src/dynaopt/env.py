"""Evaluation backends: the analytic two-stage op-amp and an external simulator adapter."""

from __future__ import annotations

import logging
import math
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .reward import ConstraintSpec, EvaluationError, RewardValue, failure_reward, score
from .space import ParameterSpace

log = logging.getLogger(__name__)

SCHEMATIC = "schematic"
POST_LAYOUT = "post_layout"
PHASES = (SCHEMATIC, POST_LAYOUT)

POST_LAYOUT_PARASITIC = 200e-12


@dataclass
class Sample:
    action: tuple[int, ...]
    metrics: dict[str, float]
    reward: RewardValue
    phase: str = SCHEMATIC
    failed: bool = False
    step: int = 0


class Evaluator:
    """Maps an action to a dict of measured metrics.

    ``evaluate`` raises :class:`EvaluationError` when no usable measurement
    exists. ``pure`` evaluators return identical metrics for identical actions.
    """

    pure = False
    phase = SCHEMATIC

    def evaluate(self, action: Sequence[int]) -> dict[str, float]:
        raise NotImplementedError

    def evaluate_many(self, actions: Sequence[Sequence[int]]) -> list:
        """Metrics dict or the raised EvaluationError, in submission order."""
        out = []
        for a in actions:
            try:
                out.append(self.evaluate(a))
            except EvaluationError as exc:
                out.append(exc)
        return out


def to_sample(result, action, constraints: Sequence[ConstraintSpec], phase: str, step: int) -> Sample:
    """Score one evaluation result, applying the failure policy."""
    action = tuple(int(a) for a in action)
    if not isinstance(result, EvaluationError):
        try:
            return Sample(action, dict(result), score(constraints, result), phase, False, step)
        except EvaluationError as exc:
            result = exc
    log.debug("evaluation failed for %s: %s", action, result)
    return Sample(action, {}, failure_reward(constraints), phase, True, step)


def evaluate_sample(env: Evaluator, constraints, action, step: int = 0) -> Sample:
    try:
        result = env.evaluate(action)
    except EvaluationError as exc:
        result = exc
    return to_sample(result, action, constraints, env.phase, step)


def evaluate_samples(env: Evaluator, constraints, actions, first_step: int = 0) -> list[Sample]:
    results = env.evaluate_many([tuple(int(x) for x in a) for a in actions])
    return [to_sample(r, a, constraints, env.phase, first_step + k) for k, (r, a) in enumerate(zip(results, actions))]


class CountingEvaluator(Evaluator):
    """Wraps another evaluator and counts every call that reaches it."""

    def __init__(self, inner: Evaluator):
        self.inner = inner
        self.calls = 0

    @property
    def pure(self):
        return self.inner.pure

    @property
    def phase(self):
        return self.inner.phase

    def evaluate(self, action):
        self.calls += 1
        return self.inner.evaluate(action)

    def evaluate_many(self, actions):
        self.calls += len(actions)
        return self.inner.evaluate_many(actions)


# -- analytic two-stage Miller op-amp ---------------------------------------


@dataclass(frozen=True)
class OpAmpModelConfig:
    kn: float = 200e-6
    kp: float = 100e-6
    lambda_n: float = 0.1
    lambda_p: float = 0.1
    i_ref: float = 10e-6
    c_load: float = 10e-12
    c_par: float = 0.0
    vdd: float = 1.8
    # parasitic pole at the first-stage output; off by default
    first_stage_pole: bool = False

    def __post_init__(self):
        for name in ("kn", "kp", "lambda_n", "lambda_p", "i_ref", "c_load", "vdd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.c_par < 0:
            raise ValueError("c_par must be non-negative")


OPAMP_PARAMS = ("w_in", "w_load", "w_tail", "w_out", "w_sink", "w_bias", "cc")


def opamp_small_signal(cfg: OpAmpModelConfig, values: Mapping[str, float]) -> dict[str, float]:
    """Square-law operating point and small-signal quantities."""
    w_in, w_tail, w_out = values["w_in"], values["w_tail"], values["w_out"]
    w_sink, w_bias, cc = values["w_sink"], values["w_bias"], values["cc"]
    lam = cfg.lambda_n + cfg.lambda_p
    i_tail = cfg.i_ref * (w_tail / w_bias)
    i_out = cfg.i_ref * (w_sink / w_bias)
    gm1 = math.sqrt(2.0 * cfg.kn * w_in * i_tail / 2.0)
    gm6 = math.sqrt(2.0 * cfg.kp * w_out * i_out)
    r_a = 1.0 / (lam * i_tail / 2.0)
    gain1 = gm1 * r_a
    gain2 = gm6 / (lam * i_out)
    ugbw = gm1 / (2.0 * math.pi * cc)
    c_eff = cfg.c_load + cfg.c_par
    p2 = gm6 / (2.0 * math.pi * c_eff)
    z1 = gm6 / (2.0 * math.pi * cc)
    out = {
        "i_tail": i_tail,
        "i_out": i_out,
        "gm1": gm1,
        "gm6": gm6,
        "r_a": r_a,
        "gain1": gain1,
        "gain2": gain2,
        "ugbw": ugbw,
        "p2": p2,
        "z1": z1,
        "p3": math.inf,
    }
    if cfg.c_par > 0 and cfg.first_stage_pole:
        out["p3"] = 1.0 / (2.0 * math.pi * r_a * cfg.c_par)
    return out


def opamp_evaluate(cfg: OpAmpModelConfig, space: ParameterSpace, action: Sequence[int]) -> dict[str, float]:
    values = space.decode_named(action)
    missing = [n for n in OPAMP_PARAMS if n not in values]
    if missing:
        raise EvaluationError(f"parameter space lacks op-amp parameters {missing}")
    ss = opamp_small_signal(cfg, values)
    ugbw = ss["ugbw"]
    lag = math.degrees(math.atan(ugbw / ss["p2"]) + math.atan(ugbw / ss["z1"]))
    if math.isfinite(ss["p3"]):
        lag += math.degrees(math.atan(ugbw / ss["p3"]))
    metrics = {
        "gain": ss["gain1"] * ss["gain2"],
        "ugbw": ugbw,
        # unstable designs report zero margin
        "phase_margin": max(90.0 - lag, 0.0),
        "ibias": cfg.i_ref + ss["i_tail"] + ss["i_out"],
    }
    if not all(math.isfinite(v) for v in metrics.values()):
        raise EvaluationError(f"non-finite metrics {metrics}")
    return metrics


class AnalyticOpAmp(Evaluator):
    pure = True

    def __init__(self, space: ParameterSpace, cfg: OpAmpModelConfig | None = None, phase: str = SCHEMATIC):
        self.space = space
        self.cfg = cfg or OpAmpModelConfig()
        self.phase = phase

    def evaluate(self, action):
        return opamp_evaluate(self.cfg, self.space, action)

    def evaluate_array(self, actions) -> dict[str, np.ndarray]:
        """Vectorized metrics for an ``(n, 7)`` index array (used for scans)."""
        actions = np.asarray(actions)
        idx = {n: i for i, n in enumerate(self.space.names)}
        grid = {n: np.asarray(self.space.params[idx[n]].grid)[actions[:, idx[n]]] for n in OPAMP_PARAMS}
        c = self.cfg
        lam = c.lambda_n + c.lambda_p
        i_tail = c.i_ref * grid["w_tail"] / grid["w_bias"]
        i_out = c.i_ref * grid["w_sink"] / grid["w_bias"]
        gm1 = np.sqrt(2.0 * c.kn * grid["w_in"] * i_tail / 2.0)
        gm6 = np.sqrt(2.0 * c.kp * grid["w_out"] * i_out)
        r_a = 1.0 / (lam * i_tail / 2.0)
        ugbw = gm1 / (2.0 * np.pi * grid["cc"])
        p2 = gm6 / (2.0 * np.pi * (c.c_load + c.c_par))
        z1 = gm6 / (2.0 * np.pi * grid["cc"])
        lag = np.degrees(np.arctan(ugbw / p2) + np.arctan(ugbw / z1))
        if c.c_par > 0 and c.first_stage_pole:
            lag += np.degrees(np.arctan(ugbw * 2.0 * np.pi * r_a * c.c_par))
        return {
            "gain": gm1 * r_a * gm6 / (lam * i_out),
            "ugbw": ugbw,
            "phase_margin": np.maximum(90.0 - lag, 0.0),
            "ibias": c.i_ref + i_tail + i_out,
        }


def make_env(phase: str, space: ParameterSpace, cfg: OpAmpModelConfig | None = None, c_par: float | None = None) -> AnalyticOpAmp:
    """Analytic op-amp for the schematic (no parasitics) or post-layout phase."""
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    cfg = cfg or OpAmpModelConfig()
    if phase == SCHEMATIC:
        cfg = replace(cfg, c_par=0.0)
    else:
        cfg = replace(cfg, c_par=POST_LAYOUT_PARASITIC if c_par is None else c_par)
    return AnalyticOpAmp(space, cfg, phase)


# -- external simulator -----------------------------------------------------


@dataclass
class ExternalSimConfig:
    command: list[str]
    timeout: float = 60.0
    max_workers: int = 1
    workdir: str | None = None
    required: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if isinstance(self.command, str):
            self.command = shlex.split(self.command)
        if not self.command:
            raise ValueError("external simulator command is empty")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_workers < 1:
            raise ValueError("max_workers must be at least 1")


def write_params_file(path: Path, values: Mapping[str, float]) -> None:
    path.write_text("".join(f"{name.lower()} {float(v)!r}\n" for name, v in values.items()))


def parse_metrics_file(path: Path) -> dict[str, float]:
    metrics = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise EvaluationError(f"{path}:{lineno}: expected '<name> <value>', got {line!r}")
        try:
            metrics[parts[0]] = float(parts[1])
        except ValueError:
            raise EvaluationError(f"{path}:{lineno}: bad number {parts[1]!r}") from None
    return metrics


class ExternalSimulator(Evaluator):
    """Runs ``command <params-path> <metrics-path>`` in a private directory per call.

    Directories of failed calls are kept for inspection; successful ones are removed.
    """

    def __init__(self, cfg: ExternalSimConfig, space: ParameterSpace, phase: str = SCHEMATIC, pure: bool = False):
        self.cfg = cfg
        self.space = space
        self.phase = phase
        self.pure = pure
        if cfg.workdir is not None:
            Path(cfg.workdir).mkdir(parents=True, exist_ok=True)

    def evaluate(self, action):
        values = self.space.decode_named(action)
        tmp = Path(tempfile.mkdtemp(prefix="sim-", dir=self.cfg.workdir))
        params_path = tmp / "params.txt"
        metrics_path = tmp / "metrics.txt"
        write_params_file(params_path, values)
        try:
            proc = subprocess.run(
                [*self.cfg.command, str(params_path), str(metrics_path)],
                cwd=tmp,
                capture_output=True,
                timeout=self.cfg.timeout,
            )
        except subprocess.TimeoutExpired:
            raise EvaluationError(f"simulator timed out after {self.cfg.timeout}s (kept {tmp})") from None
        except OSError as exc:
            raise EvaluationError(f"cannot run simulator: {exc}") from None
        if proc.returncode != 0:
            raise EvaluationError(f"simulator exited with {proc.returncode} (kept {tmp})")
        if not metrics_path.exists():
            raise EvaluationError(f"simulator wrote no metrics file (kept {tmp})")
        metrics = parse_metrics_file(metrics_path)
        missing = [m for m in self.cfg.required if m not in metrics]
        if missing:
            raise EvaluationError(f"metrics file lacks {missing} (kept {tmp})")
        for p in tmp.iterdir():
            p.unlink()
        tmp.rmdir()
        return metrics

    def evaluate_many(self, actions):
        if self.cfg.max_workers == 1 or len(actions) < 2:
            return super().evaluate_many(actions)

        def run(a):
            try:
                return self.evaluate(a)
            except EvaluationError as exc:
                return exc

        with ThreadPoolExecutor(self.cfg.max_workers) as pool:
            return list(pool.map(run, actions))
