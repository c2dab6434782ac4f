import math
import sys
import textwrap

import numpy as np
import pytest

from dynaopt.env import (
    POST_LAYOUT,
    POST_LAYOUT_PARASITIC,
    SCHEMATIC,
    CountingEvaluator,
    ExternalSimConfig,
    ExternalSimulator,
    OpAmpModelConfig,
    evaluate_sample,
    evaluate_samples,
    make_env,
    opamp_small_signal,
    parse_metrics_file,
    write_params_file,
)
from dynaopt.reward import EvaluationError, default_constraints
from dynaopt.space import ParameterSpace, ParamSpec, default_opamp_space

SPACE = default_opamp_space()


def values(**kw):
    v = {"w_in": 10.0, "w_load": 10.0, "w_tail": 10.0, "w_out": 10.0, "w_sink": 10.0, "w_bias": 10.0, "cc": 1e-12}
    v.update(kw)
    return v


def test_ugbw_hand_value():
    cfg = OpAmpModelConfig()
    # kn * w_in * i_tail = 1e-6 gives gm1 = 1 mS
    ss = opamp_small_signal(cfg, values(w_in=50.0, w_tail=10.0, w_bias=1.0))
    assert ss["gm1"] == pytest.approx(1e-3, rel=1e-12)
    assert ss["ugbw"] == pytest.approx(159.1549430918953e6, rel=1e-12)


def test_unit_mirror_ratio_current():
    space = ParameterSpace([ParamSpec.build(n, 1, 100, 100) for n in ("w_in", "w_load", "w_tail", "w_out", "w_sink", "w_bias")] + [ParamSpec.build("cc", 0.1e-12, 10e-12, 100)])
    env = make_env(SCHEMATIC, space)
    m = env.evaluate([40, 10, 50, 20, 50, 50, 30])
    assert m["ibias"] == pytest.approx(3 * 10e-6, rel=1e-12)


def test_hand_computed_metrics():
    cfg = OpAmpModelConfig()
    v = values(w_in=20.0, w_tail=4.0, w_out=30.0, w_sink=8.0, w_bias=2.0, cc=2e-12)
    ss = opamp_small_signal(cfg, v)
    i_tail, i_out = 10e-6 * 2, 10e-6 * 4
    gm1 = math.sqrt(200e-6 * 20 * i_tail)
    gm6 = math.sqrt(2 * 100e-6 * 30 * i_out)
    assert ss["gm1"] == pytest.approx(gm1, rel=1e-14)
    assert ss["gm6"] == pytest.approx(gm6, rel=1e-14)
    assert ss["gain1"] * ss["gain2"] == pytest.approx(gm1 * (2 / (0.2 * i_tail)) * gm6 / (0.2 * i_out), rel=1e-12)
    assert ss["p2"] == pytest.approx(gm6 / (2 * math.pi * 10e-12), rel=1e-14)


def test_post_layout_default_parasitic():
    env = make_env(POST_LAYOUT, SPACE)
    assert POST_LAYOUT_PARASITIC == 2e-10
    assert env.cfg.c_par == 2e-10
    assert make_env(SCHEMATIC, SPACE, OpAmpModelConfig(c_par=1e-12)).cfg.c_par == 0.0


def test_parasitic_lowers_phase_margin():
    sch, post = make_env(SCHEMATIC, SPACE), make_env(POST_LAYOUT, SPACE)
    a = [60, 30, 50, 90, 70, 20, 80]
    assert sch.evaluate(a)["phase_margin"] > 0
    assert post.evaluate(a)["phase_margin"] < sch.evaluate(a)["phase_margin"]


def test_analytic_env_is_pure():
    env = make_env(SCHEMATIC, SPACE)
    assert env.pure
    assert env.evaluate([1, 2, 3, 4, 5, 6, 7]) == env.evaluate([1, 2, 3, 4, 5, 6, 7])


def test_vectorized_scan_matches_scalar_path():
    env = make_env(POST_LAYOUT, SPACE)
    A = np.random.default_rng(0).integers(0, 100, (50, 7))
    arr = env.evaluate_array(A)
    for k, a in enumerate(A):
        m = env.evaluate(a)
        for name in m:
            assert arr[name][k] == pytest.approx(m[name], rel=1e-12, abs=1e-12)


def _bump(a, i, step):
    b = list(a)
    b[i] += step
    return b


def test_monotone_physics():
    env = make_env(SCHEMATIC, SPACE)
    post = make_env(POST_LAYOUT, SPACE)
    rng = np.random.default_rng(1)
    ix = {n: i for i, n in enumerate(SPACE.names)}
    for _ in range(300):
        a = list(rng.integers(0, 99, 7))
        m = env.evaluate(a)
        assert env.evaluate(_bump(a, ix["cc"], 1))["ugbw"] < m["ugbw"]
        assert env.evaluate(_bump(a, ix["w_in"], 1))["gain"] > m["gain"]
        assert env.evaluate(_bump(a, ix["w_tail"], 1))["ibias"] > m["ibias"]
        assert post.evaluate(a)["phase_margin"] <= m["phase_margin"]


def test_benchmark_is_nontrivial():
    env = make_env(SCHEMATIC, SPACE)
    A = np.random.default_rng(2).integers(0, 100, (10_000, 7))
    m = env.evaluate_array(A)
    feasible = (m["gain"] > 200) & (m["ugbw"] > 1e6) & (m["phase_margin"] > 60) & (m["ibias"] < 10e-3)
    assert 0.001 < feasible.mean() < 0.5


def test_counting_evaluator():
    env = CountingEvaluator(make_env(SCHEMATIC, SPACE))
    evaluate_sample(env, default_constraints(), [0] * 7)
    evaluate_samples(env, default_constraints(), [[1] * 7, [2] * 7])
    assert env.calls == 3
    assert env.pure and env.phase == SCHEMATIC


def test_params_file_format(tmp_path):
    p = tmp_path / "params.txt"
    write_params_file(p, {"W_IN": 2.0, "cc": 1e-12})
    assert p.read_text() == "w_in 2.0\ncc 1e-12\n"


def test_metrics_parse_errors_name_the_line(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("gain 300\nugbw two\n")
    with pytest.raises(EvaluationError, match=":2:"):
        parse_metrics_file(p)
    p.write_text("gain 300 V\n")
    with pytest.raises(EvaluationError, match=":1:"):
        parse_metrics_file(p)


MOCK = """
import sys, time
params, metrics = sys.argv[1], sys.argv[2]
vals = dict(line.split() for line in open(params))
mode = {mode!r}
if mode == "fail":
    sys.exit(1)
if mode == "sleep":
    time.sleep(5)
if mode == "silent":
    sys.exit(0)
with open(metrics, "w") as fh:
    fh.write("gain 412.5\\nugbw 2500000.0\\n")
    if mode != "partial":
        fh.write("phase_margin 61.25\\nibias " + vals["cc"] + "\\n")
"""


def mock_sim(tmp_path, mode="ok", timeout=10.0, workers=1):
    script = tmp_path / f"mock_{mode}.py"
    script.write_text(textwrap.dedent(MOCK.format(mode=mode)))
    cfg = ExternalSimConfig([sys.executable, str(script)], timeout=timeout, max_workers=workers,
                            workdir=str(tmp_path / "sim"), required=("gain", "ugbw", "phase_margin", "ibias"))
    return ExternalSimulator(cfg, SPACE)


def test_external_round_trip(tmp_path):
    sim = mock_sim(tmp_path)
    a = [0, 0, 0, 0, 0, 0, 50]
    m = sim.evaluate(a)
    assert m == {"gain": 412.5, "ugbw": 2.5e6, "phase_margin": 61.25, "ibias": SPACE.decode(a)[6]}
    assert not any((tmp_path / "sim").iterdir())


def test_external_params_line(tmp_path):
    sim = mock_sim(tmp_path)
    space = ParameterSpace([ParamSpec("cc", (1e-12, 2e-12))])
    write_params_file(tmp_path / "p.txt", space.decode_named([0]))
    assert (tmp_path / "p.txt").read_text() == "cc 1e-12\n"
    assert sim.evaluate([0] * 7)["ibias"] == 0.1e-12


@pytest.mark.parametrize("mode", ["fail", "silent", "partial"])
def test_external_failures_score_minus_k(tmp_path, mode):
    sim = mock_sim(tmp_path, mode)
    with pytest.raises(EvaluationError):
        sim.evaluate([0] * 7)
    s = evaluate_sample(sim, default_constraints(), [0] * 7)
    assert s.failed and s.reward.total == -4.0
    # failed call directories are kept for inspection
    assert len(list((tmp_path / "sim").iterdir())) == 2


def test_external_timeout(tmp_path):
    sim = mock_sim(tmp_path, "sleep", timeout=0.5)
    with pytest.raises(EvaluationError, match="timed out"):
        sim.evaluate([0] * 7)


def test_external_parallel_preserves_order(tmp_path):
    sim = mock_sim(tmp_path, workers=3)
    actions = [[0] * 6 + [k] for k in range(6)]
    out = sim.evaluate_many(actions)
    assert [m["ibias"] for m in out] == [SPACE.decode(a)[6] for a in actions]


def test_negative_metric_becomes_failure():
    class Neg:
        phase = SCHEMATIC

        def evaluate(self, a):
            return {"gain": 300.0, "ugbw": 2e6, "phase_margin": -5.0, "ibias": 1e-3}

    s = evaluate_sample(Neg(), default_constraints(), [0] * 7)
    assert s.failed and s.reward.total == -4.0 and s.metrics == {}


def test_external_config_validation():
    with pytest.raises(ValueError):
        ExternalSimConfig([])
    with pytest.raises(ValueError):
        ExternalSimConfig("sim", timeout=0)
    assert ExternalSimConfig("python3 sim.py --fast").command == ["python3", "sim.py", "--fast"]
