import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynaopt.report import mean_reward_curve, read_rewards_csv, reward_histogram, write_curve_csv, write_rewards_csv
from dynaopt.serialize import dumps, format_float


def test_constant_rewards_give_constant_curve():
    np.testing.assert_array_equal(mean_reward_curve([-0.25] * 300, 100), -0.25)


def test_curve_length():
    assert mean_reward_curve(np.zeros(1000), 100).size == 901
    assert mean_reward_curve(np.zeros(50), 100).size == 0
    with pytest.raises(ValueError):
        mean_reward_curve([0.0], 0)


def test_curve_matches_direct_windows():
    r = np.random.default_rng(0).uniform(-4, 0, 250)
    c = mean_reward_curve(r, 100)
    for i in (0, 71, 150):
        assert c[i] == pytest.approx(r[i:i + 100].mean(), rel=1e-13)


def test_default_histogram_bins():
    h = reward_histogram([-4.0, -2.0, 0.0, 0.0, -7.0])
    assert len(h.bin_edges) == 41 and h.bin_edges[0] == -4.0 and h.bin_edges[-1] == 0.0
    assert np.allclose(np.diff(h.bin_edges), 0.1)
    assert sum(h.counts) == 5 and h.counts[0] == 2 and h.counts[-1] == 2
    assert h.success_rate == pytest.approx(0.4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-4, 0), min_size=1, max_size=200))
def test_histogram_conserves_counts(rewards):
    assert sum(reward_histogram(rewards).counts) == len(rewards)


def test_csv_writers(tmp_path):
    write_curve_csv(tmp_path / "c.csv", np.array([-1.0, -0.5]), 100)
    assert (tmp_path / "c.csv").read_text().splitlines() == ["step,mean_reward", "100,-1.0", "101,-0.5"]

    class S:
        def __init__(self, r):
            self.action, self.failed = (1, 2), False
            self.reward = type("R", (), {"total": r})()

    write_rewards_csv(tmp_path / "r.csv", [S(-0.1), S(0.0)])
    assert list(read_rewards_csv(tmp_path / "r.csv")) == [-0.1, 0.0]


def test_float_format_round_trips():
    for x in (0.1, 1e-12, -1 / 3, 2.0**-60, 123456789.123456789):
        assert float(format_float(x)) == x
    with pytest.raises(ValueError):
        format_float(float("nan"))
    assert dumps({"a": [1, 2.5, True, None], "b": "x"}) == '{"a":[1,2.5,true,null],"b":"x"}'
