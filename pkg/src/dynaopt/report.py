"""Reward histograms and learning curves as CSV data."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class HistogramExport:
    bin_edges: list[float]
    counts: list[int]
    n: int
    success_rate: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([repr(lo), repr(hi), c])


def reward_histogram(rewards: Sequence[float], bins: int = 40, lo: float = -4.0, hi: float = 0.0) -> HistogramExport:
    """Uniform bins over ``[lo, hi]``; values outside are clipped into the end bins."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("no rewards to histogram")
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(rewards, lo, hi), bins=edges)
    return HistogramExport(
        bin_edges=[float(e) for e in edges],
        counts=[int(c) for c in counts],
        n=int(rewards.size),
        success_rate=float(np.mean(rewards == 0.0)),
    )


def mean_reward_curve(rewards: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing mean over ``window`` consecutive rewards; length ``n - window + 1``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be positive")
    if rewards.size < window:
        return np.empty(0)
    return np.lib.stride_tricks.sliding_window_view(rewards, window).mean(axis=1)


def write_curve_csv(path, curve: np.ndarray, window: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_reward"])
        for i, v in enumerate(curve):
            w.writerow([i + window, repr(float(v))])


def write_rewards_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "reward", "failed", *[f"a{i}" for i in range(len(samples[0].action))]])
        for i, s in enumerate(samples):
            w.writerow([i, repr(s.reward.total), int(s.failed), *s.action])


def read_rewards_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(r["reward"]) for r in csv.DictReader(fh)])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
