"""Command-line entry point: ``dynaopt run | eval | export``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .env import POST_LAYOUT, CountingEvaluator, Evaluator, ExternalSimulator, make_env
from .policy import PolicyGenerator, evaluate_policy
from .report import (
    mean_reward_curve,
    read_rewards_csv,
    reward_histogram,
    write_curve_csv,
    write_rewards_csv,
)
from .reward import ConfigError, EvaluationError, worst_total
from .surrogate import RegressionError, RewardModel
from .trainer import (
    Agent,
    RunLog,
    SampleBuffer,
    Streams,
    TrainingError,
    run_dyna,
    run_model_based,
    run_model_free,
    run_transfer,
    summarize,
)

log = logging.getLogger("dynaopt")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_env(cfg: ExperimentConfig, out_dir: Path | None = None) -> Evaluator:
    env = cfg.env
    if env.kind == "external":
        ext = env.external
        if ext.workdir is None and out_dir is not None:
            ext.workdir = str(out_dir / "sim")
        return ExternalSimulator(ext, cfg.space, phase=env.phase)
    if env.phase == POST_LAYOUT:
        return make_env(POST_LAYOUT, cfg.space, env.opamp, env.c_par)
    return make_env(env.phase, cfg.space, env.opamp)


def _prepare_out(out_dir: Path, overwrite: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()) and not overwrite:
        raise ConfigError(f"output directory {out_dir} is not empty (use --overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)


def run_experiment(cfg: ExperimentConfig, out_dir, overwrite: bool = False, plots: bool = True) -> dict:
    """Execute the configured mode and write every artifact into ``out_dir``."""
    out_dir = Path(out_dir)
    _prepare_out(out_dir, overwrite)
    tc = cfg.trainer
    env = CountingEvaluator(build_env(cfg, out_dir))
    buffer = SampleBuffer()
    model = None

    if tc.mode in ("transfer", "model_based") and cfg.pretrained_policy:
        policy, _ = PolicyGenerator.load(cfg.pretrained_policy, cfg.space)
        agent = Agent(policy, Streams(tc.seed))
    else:
        agent = Agent.create(cfg.space, tc)

    if tc.mode == "model_free":
        runlog = run_model_free(tc, agent, env, cfg.constraints, buffer)
    elif tc.mode == "dyna":
        model = RewardModel(cfg.space, cfg.constraints, tc.head_mode, rng=agent.streams.model_init)
        runlog = run_dyna(tc, agent, model, env, cfg.constraints, buffer)
    elif tc.mode == "model_based":
        model = RewardModel.load(cfg.pretrained_model, cfg.space, cfg.constraints)
        runlog = run_model_based(tc, agent, model, phase=env.phase)
    else:
        buffer = SampleBuffer.load(cfg.schematic_buffer)
        source = None
        if cfg.pretrained_model:
            source = RewardModel.load(cfg.pretrained_model, cfg.space, cfg.constraints)
        runlog, model = run_transfer(tc, agent, buffer, env, cfg.constraints, model=source, fit_source=source is None)
    train_calls = env.calls

    eval_env = CountingEvaluator(env.inner)
    samples = evaluate_policy(agent.policy, eval_env, cfg.constraints, tc.eval_samples, agent.streams.eval) if tc.eval_samples else []

    runlog.write_csv(out_dir / "runlog.csv")
    if runlog.cycles:
        runlog.write_cycles_csv(out_dir / "cycles.csv")
    buffer.save(out_dir / "buffer.jsonl")
    agent.policy.save(out_dir / "policy.json", agent.baseline)
    if model is not None:
        model.save(out_dir / "reward_model.json")

    lo = worst_total(cfg.constraints)
    summary = {
        "mode": tc.mode,
        "seed": tc.seed,
        "real_evals": train_calls,
        "eval_evals": eval_env.calls,
        "updates": agent.updates,
        "stop_step": runlog.stop_step,
        "buffer_size": len(buffer),
    }
    if samples:
        s = summarize(samples)
        summary.update(final_mean_reward=s["mean_reward"], success_rate=s["success_rate"], eval_failures=s["failures"])
        write_rewards_csv(out_dir / "eval_rewards.csv", samples)
        hist = reward_histogram([x.reward.total for x in samples], lo=lo)
        hist.write_csv(out_dir / "histogram.csv")
    rewards = runlog.real_rewards()
    curve = mean_reward_curve(rewards, 100)
    if curve.size:
        write_curve_csv(out_dir / "mean_reward_curve.csv", curve, 100)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    if plots:
        from . import plotting

        if samples:
            plotting.plot_histogram(hist, out_dir / "histogram.png", title=f"{tc.mode}, seed {tc.seed}")
        if curve.size:
            plotting.plot_reward_curve(curve, 100, out_dir / "mean_reward_curve.png")
        if tc.mode == "dyna" and tc.n_direct:
            per_cycle = [rewards[k * tc.n_direct:(k + 1) * tc.n_direct] for k in range(tc.cycles)]
            final = np.array([x.reward.total for x in samples]) if samples else None
            plotting.plot_cycle_histograms(per_cycle, final, out_dir / "cycle_histograms.png", lo=lo)
    return summary


def eval_checkpoint(cfg: ExperimentConfig, policy_path, n: int, out_dir, overwrite=False, plots=True) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = [out_dir / f for f in ("eval_histogram.csv", "eval_rewards.csv", "eval_summary.json")]
    if not overwrite and any(p.exists() for p in targets):
        raise ConfigError(f"evaluation files already exist in {out_dir} (use --overwrite)")
    policy, _ = PolicyGenerator.load(policy_path, cfg.space)
    env = CountingEvaluator(build_env(cfg, out_dir))
    samples = evaluate_policy(policy, env, cfg.constraints, n, Streams(cfg.trainer.seed).eval)
    hist = reward_histogram([s.reward.total for s in samples], lo=worst_total(cfg.constraints))
    hist.write_csv(targets[0])
    write_rewards_csv(targets[1], samples)
    summary = {**summarize(samples), "evaluations": env.calls, "policy": str(policy_path)}
    targets[2].write_text(json.dumps(summary, indent=2) + "\n")
    if plots:
        from . import plotting

        plotting.plot_histogram(hist, out_dir / "eval_histogram.png", title=Path(policy_path).name)
    return summary


def export(runlog_path, what: str, out_dir=None, window: int = 100, lo: float = -4.0, bins: int = 40, plots=True) -> Path:
    runlog_path = Path(runlog_path)
    out_dir = Path(out_dir) if out_dir else runlog_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    if what == "mean-reward-curve":
        rewards = RunLog.read_csv(runlog_path).real_rewards()
        curve = mean_reward_curve(rewards, window)
        path = out_dir / "mean_reward_curve.csv"
        write_curve_csv(path, curve, window)
        if plots and curve.size:
            from . import plotting

            plotting.plot_reward_curve(curve, window, out_dir / "mean_reward_curve.png")
        return path
    if runlog_path.name.endswith("rewards.csv"):
        rewards = read_rewards_csv(runlog_path)
    else:
        rewards = RunLog.read_csv(runlog_path).real_rewards()
    hist = reward_histogram(rewards, bins=bins, lo=lo)
    path = out_dir / "histogram_export.csv"
    hist.write_csv(path)
    if plots:
        from . import plotting

        plotting.plot_histogram(hist, out_dir / "histogram_export.png")
    return path


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynaopt", description="Dyna-style policy optimization for discrete design spaces.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train with the configured mode")
    r.add_argument("--config", required=True, metavar="PATH")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["model_free", "model_based", "dyna", "transfer"])
    r.add_argument("--out", metavar="DIR")
    r.add_argument("--overwrite", action="store_true")
    r.add_argument("--eval-samples", type=int)
    r.add_argument("--no-plots", action="store_true")

    e = sub.add_parser("eval", help="sample a policy checkpoint and score it")
    e.add_argument("--config", required=True, metavar="PATH")
    e.add_argument("--policy", required=True, metavar="PATH")
    e.add_argument("--eval-samples", type=int, default=200)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", metavar="DIR")
    e.add_argument("--overwrite", action="store_true")
    e.add_argument("--no-plots", action="store_true")

    x = sub.add_parser("export", help="turn a runlog into curve or histogram CSV")
    x.add_argument("runlog", metavar="RUNLOG")
    x.add_argument("--what", choices=["mean-reward-curve", "histogram"], default="mean-reward-curve")
    x.add_argument("--window", type=int, default=100)
    x.add_argument("--bins", type=int, default=40)
    x.add_argument("--lo", type=float, default=-4.0)
    x.add_argument("--out", metavar="DIR")
    x.add_argument("--no-plots", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config, overrides={"seed": args.seed, "mode": args.mode, "output_dir": args.out})
            if args.eval_samples is not None:
                if args.eval_samples < 0:
                    raise ConfigError("--eval-samples must be non-negative")
                cfg.trainer.eval_samples = args.eval_samples
            result = run_experiment(cfg, cfg.output_dir, args.overwrite, plots=not args.no_plots)
        elif args.command == "eval":
            cfg = load_config(args.config, overrides={"seed": args.seed})
            if args.eval_samples < 1:
                raise ConfigError("--eval-samples must be at least 1")
            out = args.out or str(Path(args.policy).parent / "eval")
            result = eval_checkpoint(cfg, args.policy, args.eval_samples, out, args.overwrite, plots=not args.no_plots)
        else:
            result = {"written": str(export(args.runlog, args.what, args.out, args.window, args.lo, args.bins, plots=not args.no_plots))}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, TrainingError, RegressionError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
