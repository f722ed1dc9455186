"""Synthetic expert trajectories: straight strokes and constant-curvature arcs."""

from __future__ import annotations

import numpy as np

from hwgail.data import Dataset
from hwgail.trajectory import Trajectory, normalize_unit_square, resample_uniform


def line_stroke(rng: np.random.Generator, n: int = 200) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi)
    s = np.linspace(0.0, 1.0, n)[:, None]
    return s * np.array([np.cos(theta), np.sin(theta)])


def arc_stroke(rng: np.random.Generator, n: int = 200, min_span: float = 0.5 * np.pi,
               max_span: float = 1.5 * np.pi) -> np.ndarray:
    start = rng.uniform(0.0, 2.0 * np.pi)
    span = rng.uniform(min_span, max_span) * rng.choice([-1.0, 1.0])
    phi = start + np.linspace(0.0, span, n)
    return np.column_stack([np.cos(phi), np.sin(phi)])


def synthetic_experts(n: int, horizon: int = 50, seed: int = 0, line_fraction: float = 0.5) -> Dataset:
    """``n`` unit-square trajectories of ``horizon`` points; each is a line
    with probability ``line_fraction`` and an arc otherwise."""
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n):
        is_line = rng.uniform() < line_fraction
        raw = line_stroke(rng) if is_line else arc_stroke(rng)
        pts = resample_uniform(normalize_unit_square(raw), horizon)
        samples.append(Trajectory(pts, label="line" if is_line else "arc", id=f"syn{k:05d}"))
    return Dataset(horizon, samples, split="train", seed=seed)
