import json

import numpy as np
import pytest

from dynaopt.env import POST_LAYOUT, SCHEMATIC, CountingEvaluator, make_env
from dynaopt.reward import default_constraints, score
from dynaopt.space import default_opamp_space
from dynaopt.surrogate import RegressionConfig, RewardModel
from dynaopt.trainer import (
    Agent,
    RunLog,
    SampleBuffer,
    TrainerConfig,
    TrainingError,
    run_dyna,
    run_model_based,
    run_model_free,
    run_transfer,
)

SPACE = default_opamp_space()
CONS = default_constraints()
FAST = RegressionConfig(epochs=5)


def cfg(**kw):
    kw.setdefault("regression", FAST)
    return TrainerConfig(**kw)


def counted(phase=SCHEMATIC):
    return CountingEvaluator(make_env(phase, SPACE))


def weights(agent):
    return np.concatenate([h.get_flat() for h in agent.policy.heads])


class OracleModel:
    """Reward model stub that scores the analytic op-amp exactly."""

    def __init__(self):
        self.env = make_env(SCHEMATIC, SPACE)

    def predict(self, action):
        return score(CONS, self.env.evaluate(action))


def test_model_free_counts():
    c = cfg(mode="model_free", total_steps=250)
    env, buf = counted(), SampleBuffer()
    log = run_model_free(c, Agent.create(SPACE, c), env, CONS, buf)
    assert env.calls == 250 == len(buf) == log.real_evals
    assert [r["step"] for r in log.steps] == list(range(250))


def test_early_stop_within_budget():
    c = cfg(mode="model_free", total_steps=400, early_stop_epsilon=4.0, trailing_window=50)
    env, buf = counted(), SampleBuffer()
    log = run_model_free(c, Agent.create(SPACE, c), env, CONS, buf)
    assert log.stop_step == 50 and env.calls == 50


def test_dyna_counts_and_cycles():
    c = cfg(n_direct=40, n_model=60, cycles=3)
    env, buf = counted(), SampleBuffer()
    agent = Agent.create(SPACE, c)
    log = run_dyna(c, agent, RewardModel(SPACE, CONS, rng=agent.streams.model_init), env, CONS, buf)
    assert env.calls == 120 == len(buf) == log.real_evals
    assert agent.updates == 300
    assert [r["buffer_size"] for r in log.cycles] == [40, 80, 120]
    loops = [r["loop"] for r in log.steps]
    assert loops == (["real"] * 40 + ["model"] * 60) * 3
    assert all(r["predicted"] == r["reward"] for r in log.steps if r["loop"] == "model")


def test_dyna_without_model_steps_is_model_free():
    c = cfg(n_direct=30, n_model=0, cycles=4)
    agent = Agent.create(SPACE, c)
    run_dyna(c, agent, RewardModel(SPACE, CONS, rng=agent.streams.model_init), counted(), CONS, SampleBuffer())
    m = cfg(mode="model_free", total_steps=120)
    ref = Agent.create(SPACE, m)
    run_model_free(m, ref, counted(), CONS, SampleBuffer())
    assert np.array_equal(weights(agent), weights(ref))


def test_model_based_makes_no_env_calls_and_matches_oracle():
    c = cfg(mode="model_based", n_model=300)
    agent = Agent.create(SPACE, c)
    log = run_model_based(c, agent, OracleModel())
    assert log.real_evals == 0 and all(r["loop"] == "model" for r in log.steps)
    m = cfg(mode="model_free", total_steps=300)
    ref = Agent.create(SPACE, m)
    ref_log = run_model_free(m, ref, counted(), CONS, SampleBuffer())
    # exact reward as the model: identical learning trajectory
    assert np.array_equal(weights(agent), weights(ref))
    assert [r["reward"] for r in log.steps] == [r["reward"] for r in ref_log.steps]


def test_optimizer_reset_option():
    c = cfg(n_direct=10, n_model=10, cycles=2, reset_policy_optimizer=True)
    agent = Agent.create(SPACE, c)
    run_dyna(c, agent, RewardModel(SPACE, CONS, rng=agent.streams.model_init), counted(), CONS, SampleBuffer())
    assert agent.policy.optimizers[0].step_count == 20


def test_separate_model_baseline_option():
    c = cfg(n_direct=10, n_model=10, cycles=1, separate_model_baseline=True)
    agent = Agent.create(SPACE, c)
    run_dyna(c, agent, RewardModel(SPACE, CONS, rng=agent.streams.model_init), counted(), CONS, SampleBuffer())
    assert agent.model_baseline is not None and agent.model_baseline.initialized


def _run(seed):
    c = cfg(seed=seed, n_direct=30, n_model=30, cycles=2)
    buf = SampleBuffer()
    agent = Agent.create(SPACE, c)
    log = run_dyna(c, agent, RewardModel(SPACE, CONS, rng=agent.streams.model_init), counted(), CONS, buf)
    return log, buf, agent


def test_determinism(tmp_path):
    (l1, b1, a1), (l2, b2, a2) = _run(3), _run(3)
    for name, (log, buf) in (("a", (l1, b1)), ("b", (l2, b2))):
        log.write_csv(tmp_path / f"{name}.csv")
        buf.save(tmp_path / f"{name}.jsonl")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert np.array_equal(weights(a1), weights(a2))
    _, b3, _ = _run(4)
    assert [s.action for s in b3] != [s.action for s in b1]


def test_buffer_round_trip(tmp_path):
    c = cfg(mode="model_free", total_steps=500)
    buf = SampleBuffer()
    run_model_free(c, Agent.create(SPACE, c), counted(), CONS, buf)
    buf.samples[7].failed = True
    buf.save(tmp_path / "b.jsonl")
    back = SampleBuffer.load(tmp_path / "b.jsonl")
    assert len(back) == 500
    assert back.samples == buf.samples
    assert json.loads((tmp_path / "b.jsonl").read_text().splitlines()[0])["format"] == "dynaopt-buffer"


def test_empty_buffer_file_is_header_only(tmp_path):
    SampleBuffer().save(tmp_path / "e.jsonl")
    lines = (tmp_path / "e.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert len(SampleBuffer.load(tmp_path / "e.jsonl")) == 0


def test_malformed_buffer_line_named(tmp_path):
    c = cfg(mode="model_free", total_steps=3)
    buf = SampleBuffer()
    run_model_free(c, Agent.create(SPACE, c), counted(), CONS, buf)
    buf.save(tmp_path / "b.jsonl")
    lines = (tmp_path / "b.jsonl").read_text().splitlines()
    lines[2] = lines[2][:-5]
    (tmp_path / "b.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match=r"b\.jsonl:3"):
        SampleBuffer.load(tmp_path / "b.jsonl")


def test_runlog_csv_round_trip(tmp_path):
    log, _, _ = _run(5)
    log.write_csv(tmp_path / "r.csv")
    back = RunLog.read_csv(tmp_path / "r.csv")
    assert np.array_equal(back.real_rewards(), log.real_rewards())
    assert back.real_evals == log.real_evals


def test_transfer_workflow(tmp_path):
    c = cfg(mode="model_free", total_steps=200)
    buf = SampleBuffer()
    pre = Agent.create(SPACE, c)
    run_model_free(c, pre, counted(), CONS, buf)
    buf.save(tmp_path / "sch.jsonl")
    schematic = SampleBuffer.load(tmp_path / "sch.jsonl")

    t = cfg(mode="transfer", n_direct=100, n_model=50)
    agent = Agent(pre.policy.copy(), pre.streams)
    post = counted(POST_LAYOUT)
    log, tuned = run_transfer(t, agent, schematic, post, CONS)
    assert post.calls == 100
    assert len(schematic) == 300
    assert [s.phase for s in schematic] == [SCHEMATIC] * 200 + [POST_LAYOUT] * 100
    assert log.real_evals == 100 and sum(r["loop"] == "model" for r in log.steps) == 50
    assert tuned is not None


def test_transfer_skips_prefit_with_trained_model():
    buf = SampleBuffer()
    c = cfg(mode="model_free", total_steps=20)
    run_model_free(c, Agent.create(SPACE, c), counted(), CONS, buf)
    t = cfg(mode="transfer", n_direct=5, n_model=5)
    with pytest.raises(TrainingError):
        run_transfer(t, Agent.create(SPACE, t), buf, counted(POST_LAYOUT), CONS, fit_source=False)
    src = RewardModel(SPACE, CONS, rng=np.random.default_rng(0))
    log, _ = run_transfer(t, Agent.create(SPACE, t), buf, counted(POST_LAYOUT), CONS, model=src, fit_source=False)
    assert log.cycles[0]["fit_n_used"] == 0


def test_transfer_needs_schematic_data():
    t = cfg(mode="transfer")
    with pytest.raises(TrainingError):
        run_transfer(t, Agent.create(SPACE, t), SampleBuffer(), counted(POST_LAYOUT), CONS)


@pytest.mark.parametrize("kw", [{"n_direct": -1}, {"mode": "dyna", "cycles": 0}, {"mode": "bogus"}, {"trailing_window": 0}])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainerConfig(**kw)
