"""Supervised next-point predictor used as the comparison model.

Same architecture as the actor, trained to regress the true next pen
position from every prefix of every training trajectory, then rolled out
autoregressively.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np
import torch

from hwgail.data import Dataset
from hwgail.gail import (
    TrainerBase,
    TrainingConfig,
    prefix_states,
    rollout_points,
    run_training,
)
from hwgail.networks import ParameterSet, actor_batch, actor_spec, init_params, value_and_gradients
from hwgail.optim import apply_step, make_optimizer
from hwgail.trajectory import EpisodeComplete, State, Trajectory


def prediction_loss(params: ParameterSet, states: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean squared Euclidean distance between predicted and true next points."""
    return ((actor_batch(params, states) - targets) ** 2).sum(dim=1).mean()


def training_pairs(points: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Every ``(sample, t)`` with ``1 <= t < T``: states of length ``t`` and
    the point at index ``t`` as target."""
    N, T, _ = points.shape
    sample = torch.arange(N).repeat_interleave(T - 1)
    lengths = torch.arange(1, T).repeat(N)
    return sample, lengths


class PredictorTrainer(TrainerBase):
    model_kind = "predictor"

    def __init__(self, config: TrainingConfig, train_set: Dataset, out_dir=None):
        super().__init__(config, train_set, out_dir)
        self.params = init_params(actor_spec(config.horizon), config.seed, self.dtype)
        self.optimizer = make_optimizer(config.optimizer, config.lr_actor, config.momentum)
        self.sample_idx, self.lengths = training_pairs(self.expert)

    def batch(self) -> Tuple[torch.Tensor, torch.Tensor]:
        n_pairs = len(self.lengths)
        if self.config.batch_size >= n_pairs:
            pick = torch.arange(n_pairs)
        else:
            pick = torch.from_numpy(self.rng.integers(0, n_pairs, size=self.config.batch_size))
        idx, lengths = self.sample_idx[pick], self.lengths[pick]
        pts = self.expert[idx]
        return prefix_states(pts, lengths), pts[torch.arange(len(pick)), lengths]

    def step(self) -> dict:
        states, targets = self.batch()
        loss, grads = value_and_gradients(lambda p: prediction_loss(p, states, targets), self.params)
        self.params = apply_step(self.params, grads, self.config.lr_actor, self.optimizer)
        self.step_count += 1
        return {"prediction_loss": loss}

    def networks(self):
        return {"predictor": self.params}


def train_predictor(config: TrainingConfig, train_set: Dataset, out_dir=None) -> Tuple[ParameterSet, List[float]]:
    """Returns the trained parameters and the per-step (pre-update) loss curve."""
    trainer = PredictorTrainer(config, train_set, out_dir)
    curve: List[float] = []
    step = trainer.step

    def recording_step():
        rec = step()
        curve.append(rec["prediction_loss"])
        return rec

    trainer.step = recording_step
    run_training(trainer, config.total_steps, config.log_interval, config.checkpoint_interval)
    return trainer.params, curve


def predict_rollout(params: ParameterSet, prefix: State, horizon: int) -> Trajectory:
    """Repeatedly predict the next point and append it until ``horizon`` points."""
    if prefix.horizon != horizon:
        raise ValueError(f"prefix horizon {prefix.horizon} != {horizon}")
    if prefix.is_full:
        raise EpisodeComplete("prefix already has the full horizon")
    pts = torch.zeros((1, horizon, 2), dtype=params.dtype)
    pts[0, : prefix.length] = torch.from_numpy(np.array(prefix.points)).to(params.dtype)
    out = rollout_points(params, pts, torch.tensor([prefix.length]))
    final = np.clip(out[0].to(torch.float64).numpy(), 0.0, 1.0)
    final[: prefix.length] = prefix.points
    return Trajectory(final)


def heldout_rmse(params: ParameterSet, dataset: Dataset) -> float:
    """Root mean squared Euclidean next-point error over all prefixes."""
    pts = torch.from_numpy(dataset.points).to(params.dtype)
    idx, lengths = training_pairs(pts)
    with torch.no_grad():
        pred = actor_batch(params, prefix_states(pts[idx], lengths))
    err = pred - pts[idx, lengths]
    return float(torch.sqrt((err.to(torch.float64) ** 2).sum(dim=1).mean()))
