"""Synthetic-expert smoke experiment and the shared curvature-comparison step.

The smoke run trains GAIL and the prediction baseline on synthetic lines
and arcs, completes held-out expert prefixes with both models and with the
untrained actor, and compares their multi-scale curvature histograms with
the expert's.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from hwgail.baseline import train_predictor
from hwgail.data import Dataset, write_canonical
from hwgail.evaluation import (
    CurvatureHistogram,
    curvature_histogram,
    generate_batch,
    histogram_distance,
    mode_bin,
    qmap,
    render,
    render_delta_profile,
    render_trajectory_grid,
    write_histogram,
    write_qmap,
)
from hwgail.gail import TrainingConfig, train_gail
from hwgail.networks import ParameterSet, actor_spec, init_params
from hwgail.synthetic import synthetic_experts
from hwgail.trajectory import Trajectory, make_state

logger = logging.getLogger(__name__)


@dataclass
class EvalConfig:
    t0: int = 20
    t_range: Tuple[int, int] = (21, 50)
    delta_max: int = 20
    bins: int = 50
    kappa_max: float = 30.0
    grid: int = 64
    report_delta: int = 10

    def __post_init__(self):
        self.t_range = tuple(int(v) for v in self.t_range)


def smoke_training_config(**overrides) -> TrainingConfig:
    """GAIL settings used by the smoke experiment."""
    base = dict(
        total_steps=20000,
        optimizer="adam",
        lr_actor=3e-5,
        lr_critic=1e-3,
        lr_discriminator=1e-4,
        noise_scale=0.1,
        prefix_mode="random",
        min_prefix=20,
        max_prefix=20,
        rollout_every=4,
        actor_warmup=1000,
        expert_state_fraction=1.0,
        checkpoint_interval=2000,
        log_interval=250,
    )
    base.update(overrides)
    return TrainingConfig.from_dict(base)


def baseline_training_config(**overrides) -> TrainingConfig:
    base = dict(total_steps=3000, optimizer="adam", lr_actor=1e-3, batch_size=256,
                checkpoint_interval=3000, log_interval=250)
    base.update(overrides)
    return TrainingConfig.from_dict(base)


@dataclass
class SmokeConfig:
    n_train: int = 500
    n_test: int = 200
    data_seed: int = 1
    qmap_count: int = 3
    min_reduction: float = 0.30
    training: TrainingConfig = field(default_factory=smoke_training_config)
    baseline: Optional[TrainingConfig] = field(default_factory=baseline_training_config)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "SmokeConfig":
        d = dict(d)
        training = smoke_training_config(**d.pop("training", {}))
        baseline_d = d.pop("baseline", {})
        baseline = None if baseline_d is None else baseline_training_config(**baseline_d)
        evaluation = EvalConfig(**d.pop("evaluation", {}))
        return cls(training=training, baseline=baseline, evaluation=evaluation, **d)


# ---------------------------------------------------------------------------
# curvature comparison


def compare_curvature(sets: Dict[str, np.ndarray], reference: str, out_dir, ev: EvalConfig,
                      render_images: bool = True) -> dict:
    """Histogram every trajectory set, export CSVs and images, and report
    each set's distance to ``reference``."""
    out_dir = Path(out_dir)
    hdir = out_dir / "histograms"
    hdir.mkdir(parents=True, exist_ok=True)
    hists: Dict[str, CurvatureHistogram] = {}
    for name, pts in sets.items():
        h = curvature_histogram(pts, ev.t_range, ev.delta_max, ev.bins, ev.kappa_max)
        hists[name] = h
        write_histogram(h, hdir / f"{name}.csv")
        if render_images:
            render(h, hdir / f"{name}.png")
    ref = hists[reference]
    rd = min(ev.report_delta, ev.delta_max)
    report = {
        "reference": reference,
        "distance": {name: histogram_distance(h, ref) for name, h in hists.items()},
        "mode_bin": {name: mode_bin(h, rd) for name, h in hists.items()},
        "report_delta": rd,
    }
    if render_images:
        render_delta_profile(hists, rd, out_dir / f"delta{rd}_profile.png")
    (out_dir / "distances.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# smoke experiment


@dataclass
class SmokeReport:
    distance_trained: float
    distance_untrained: float
    distance_baseline: Optional[float]
    mode_bin_trained: int
    mode_bin_expert: int
    reduction: float
    passed_distance: bool
    passed_mode: bool
    wall_seconds: float
    motion: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.passed_distance and self.passed_mode


def motion_stats(points: np.ndarray, t0: int, still: float = 1e-3) -> Dict[str, float]:
    """Step statistics of the generated part (points ``t0`` onward, 0-based).

    ``stationary`` is the share of generated steps shorter than ``still``; a
    policy that parks on one point scores zero curvature everywhere, so this
    separates imitation from collapse.  ``first_jump`` is the mean distance
    from the prefix end to the first generated point.
    """
    steps = np.linalg.norm(np.diff(points[:, t0 - 1:], axis=1), axis=2)
    return {
        "mean_step": float(steps.mean()),
        "stationary": float((steps < still).mean()),
        "first_jump": float(steps[:, 0].mean()),
    }


def _generated(name: str, pts: np.ndarray, ref: Dataset) -> Dataset:
    samples = [Trajectory(p, label=s.label, id=s.id) for p, s in zip(pts, ref.samples)]
    return Dataset(ref.horizon, samples, split=f"generated-{name}", seed=ref.seed)


def run_smoke(cfg: SmokeConfig, out_dir, render_images: bool = True) -> SmokeReport:
    start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev, tc = cfg.evaluation, cfg.training
    train = synthetic_experts(cfg.n_train, tc.horizon, cfg.data_seed)
    test = synthetic_experts(cfg.n_test, tc.horizon, cfg.data_seed + 1)
    test.split = "test"
    (out / "data").mkdir(exist_ok=True)
    write_canonical(train, out / "data" / "train.jsonl")
    write_canonical(test, out / "data" / "test.jsonl")

    untrained = init_params(actor_spec(tc.horizon), tc.seed, tc.torch_dtype)
    logger.info("training GAIL for %d steps", tc.total_steps)
    result = train_gail(tc, train, out / "gail")

    actors: Dict[str, ParameterSet] = {"untrained": untrained, "gail": result.actor}
    if cfg.baseline is not None:
        bc = cfg.baseline
        logger.info("training baseline for %d steps", bc.total_steps)
        actors["baseline"], _ = train_predictor(bc, train, out / "baseline")

    sets = {"expert": test.points}
    gdir = out / "generated"
    gdir.mkdir(exist_ok=True)
    for name, actor in actors.items():
        pts = generate_batch(actor, test.points, ev.t0)
        sets[name] = pts
        write_canonical(_generated(name, pts, test), gdir / f"{name}.jsonl")
        if render_images:
            render_trajectory_grid(list(pts[:15]), gdir / f"{name}.png", prefix_len=ev.t0)

    report = compare_curvature(sets, "expert", out / "eval", ev, render_images)

    qdir = out / "qmaps"
    qdir.mkdir(exist_ok=True)
    rng = np.random.default_rng(tc.seed)
    for k, i in enumerate(rng.choice(len(test), size=min(cfg.qmap_count, len(test)), replace=False)):
        state = make_state(test.samples[int(i)].points[: ev.t0], tc.horizon)
        q = qmap(result.critic, result.discriminator, state, ev.grid, tc.gamma)
        write_qmap(q, qdir / f"qmap_{k}.csv")
        if render_images:
            render(q, qdir / f"qmap_{k}.png")

    d_gail, d_untrained = report["distance"]["gail"], report["distance"]["untrained"]
    reduction = 1.0 - d_gail / d_untrained if d_untrained > 0 else 0.0
    smoke = SmokeReport(
        distance_trained=d_gail,
        distance_untrained=d_untrained,
        distance_baseline=report["distance"].get("baseline"),
        mode_bin_trained=report["mode_bin"]["gail"],
        mode_bin_expert=report["mode_bin"]["expert"],
        reduction=reduction,
        passed_distance=reduction >= cfg.min_reduction,
        passed_mode=report["mode_bin"]["gail"] == 0,
        wall_seconds=round(time.perf_counter() - start, 3),
        motion={name: motion_stats(pts, ev.t0) for name, pts in sets.items()},
    )
    (out / "report.json").write_text(json.dumps({**asdict(smoke), "passed": smoke.passed}, indent=2) + "\n")
    return smoke


def smoke_config_dict(cfg: SmokeConfig) -> dict:
    d = asdict(cfg)
    d["evaluation"]["t_range"] = list(cfg.evaluation.t_range)
    return d


def set_threads(n: int = 1) -> None:
    torch.set_num_threads(max(1, n))
