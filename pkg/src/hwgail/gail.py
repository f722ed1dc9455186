"""Model-based adversarial imitation training of the pen-trajectory actor.

The writing environment is explicit: the successor state is the current
state with the action written into its first empty slot.  Because of that
the critic only has to learn state values ``V(s)``, and the action value is
assembled from the discriminator reward and the critic:

    Q(s, a) = R(s, a) + gamma * V(s'),   s' = env_step(s, a)
    R(s, a) = logit(D(s'))

The actor is improved by ascending ``Q(s, actor(s))`` with gradients flowing
through the differentiable transition into both terms.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from hwgail.data import Dataset
from hwgail.networks import (
    ParameterSet,
    actor_batch,
    actor_spec,
    as_float64,
    critic_batch,
    critic_spec,
    discriminator_logits,
    discriminator_spec,
    init_params,
    value_and_gradients,
    save_params,
    states_tensor,
)
from hwgail.optim import apply_step, make_optimizer
from hwgail.trajectory import Action, EpisodeComplete, State, env_step, make_state

logger = logging.getLogger(__name__)

REWARD_EPS = 1e-6
REWARD_BOUND = math.log((1.0 - REWARD_EPS) / REWARD_EPS)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    horizon: int = 50
    gamma: float = 0.9
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    lr_discriminator: float = 1e-4
    optimizer: str = "sgd"  # "sgd" (momentum) or "adam"
    momentum: float = 0.9
    batch_size: int = 32  # critic/actor transitions per update
    disc_batch_size: int = 32  # per class
    rollout_batch_size: int = 16  # episodes per rollout round
    rollout_every: int = 1
    buffer_episodes: int = 2048
    total_steps: int = 20000
    noise_scale: float = 0.05
    tau: float = 0.005
    seed: int = 0
    checkpoint_interval: int = 1000
    log_interval: int = 100
    prefix_mode: str = "first"  # "first": length-1 expert prefixes; "random": lengths in [min_prefix, max_prefix]
    min_prefix: int = 1
    max_prefix: int = 40
    expert_state_fraction: float = 0.0  # share of actor-update states that are raw expert prefixes
    actor_warmup: int = 0  # steps of discriminator/critic training before the first actor update
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        for name in ("lr_actor", "lr_critic", "lr_discriminator"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "disc_batch_size", "rollout_batch_size", "rollout_every",
                     "buffer_episodes", "checkpoint_interval", "log_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")
        if not 0.0 <= self.expert_state_fraction <= 1.0:
            raise ValueError("expert_state_fraction must lie in [0, 1]")
        if self.actor_warmup < 0:
            raise ValueError("actor_warmup must be nonnegative")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.prefix_mode not in ("first", "random"):
            raise ValueError(f"unknown prefix_mode {self.prefix_mode!r}")
        if not 1 <= self.min_prefix <= self.max_prefix < self.horizon:
            raise ValueError("need 1 <= min_prefix <= max_prefix < horizon")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        # YAML 1.1 reads "1e-4" as a string; coerce numeric fields by default type
        coerced = {}
        for k, v in d.items():
            default = cls.__dataclass_fields__[k].default
            if isinstance(default, (int, float)) and not isinstance(default, bool) and isinstance(v, str):
                try:
                    v = type(default)(float(v)) if isinstance(default, float) else int(v)
                except ValueError:
                    raise ValueError(f"{k}: expected a number, got {v!r}") from None
            coerced[k] = v
        return cls(**coerced)


class Transition(NamedTuple):
    s: State
    a: Action
    s_next: State


@dataclass
class Episode:
    transitions: List[Transition]

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def final(self) -> State:
        return self.transitions[-1].s_next

    @property
    def points(self) -> np.ndarray:
        return self.final.points


class TransitionBatch(NamedTuple):
    states: torch.Tensor  # (B, T, 3)
    actions: torch.Tensor  # (B, 2)
    next_states: torch.Tensor  # (B, T, 3)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], dtype=torch.float64) -> "TransitionBatch":
        for tr in transitions:
            if env_step(tr.s, tr.a) != tr.s_next:
                raise ValueError("transition does not chain: s_next != env_step(s, a)")
        return cls(
            states_tensor([t.s for t in transitions], dtype),
            torch.tensor([tuple(t.a) for t in transitions], dtype=dtype),
            states_tensor([t.s_next for t in transitions], dtype),
        )


# ---------------------------------------------------------------------------
# batched environment


def state_lengths(states: torch.Tensor) -> torch.Tensor:
    return states[..., 2].sum(dim=1).round().long()


def prefix_states(points: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Padded states holding the first ``lengths[i]`` points of ``points[i]``."""
    T = points.shape[1]
    mask = (torch.arange(T) < lengths[:, None]).to(points.dtype)[..., None]
    return torch.cat([points * mask, mask], dim=2)


def append_points(states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """Batched ``env_step``; differentiable with respect to ``actions``."""
    T = states.shape[1]
    lengths = state_lengths(states)
    if bool((lengths >= T).any()):
        raise EpisodeComplete("cannot step a full state")
    slot = (torch.arange(T) == lengths[:, None]).to(states.dtype)[..., None]
    written = torch.cat([actions, torch.ones_like(actions[:, :1])], dim=1)[:, None, :]
    return states + slot * written


def _as_batch(states, dtype) -> torch.Tensor:
    if isinstance(states, torch.Tensor):
        return states.to(dtype)
    return states_tensor(list(states), dtype)


# ---------------------------------------------------------------------------
# reward and action value


def reward_from_logits(logits: torch.Tensor) -> torch.Tensor:
    # logit(clamp(sigmoid(z), eps, 1 - eps)) == clamp(z, -bound, bound)
    return logits.clamp(-REWARD_BOUND, REWARD_BOUND)


def rewards(disc_params: ParameterSet, next_states: torch.Tensor) -> torch.Tensor:
    return reward_from_logits(discriminator_logits(disc_params, next_states))


def reward_of(disc_params: ParameterSet, s_next: State) -> float:
    with torch.no_grad():
        return float(rewards(as_float64(disc_params), states_tensor(s_next))[0])


def q_values(critic_params, disc_params, states: torch.Tensor, actions: torch.Tensor, gamma: float) -> torch.Tensor:
    s_next = append_points(states, actions)
    return rewards(disc_params, s_next) + gamma * critic_batch(critic_params, s_next)


def q_value(critic_params, disc_params, s: State, a, gamma: float) -> float:
    if s.is_full:
        raise EpisodeComplete("q_value needs a state with room for one more point")
    with torch.no_grad():
        act = torch.from_numpy(np.asarray(a, dtype=np.float64).reshape(1, 2))
        q = q_values(as_float64(critic_params), as_float64(disc_params), states_tensor(s), act, gamma)
        return float(q[0])


# ---------------------------------------------------------------------------
# losses


def discriminator_loss(disc_params, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy, expert states labelled 1, generated 0."""
    logits = discriminator_logits(disc_params, torch.cat([real, fake]))
    labels = torch.cat([torch.ones(len(real)), torch.zeros(len(fake))]).to(logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, labels)


def bellman_targets(disc_params, target_params, next_states: torch.Tensor, gamma: float) -> torch.Tensor:
    with torch.no_grad():
        return rewards(disc_params, next_states) + gamma * critic_batch(target_params, next_states)


def critic_loss(critic_params, states: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return ((critic_batch(critic_params, states) - targets) ** 2).mean()


def actor_objective(actor_params, critic_params, disc_params, states: torch.Tensor, gamma: float) -> torch.Tensor:
    return q_values(critic_params, disc_params, states, actor_batch(actor_params, states), gamma).mean()


def soft_update(target: ParameterSet, online: ParameterSet, tau: float) -> ParameterSet:
    return ParameterSet(target.spec, ((k, ((1 - tau) * v + tau * online[k]).detach()) for k, v in target.items()))


# ---------------------------------------------------------------------------
# single updates


def update_discriminator(disc_params, real_states, fake_states, lr: float, optimizer=None):
    """One step on the discriminator's BCE; returns ``(new_params, pre-step loss)``."""
    dtype = disc_params.dtype
    real, fake = _as_batch(real_states, dtype), _as_batch(fake_states, dtype)
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("real and fake batches must be non-empty")
    loss, grads = value_and_gradients(lambda p: discriminator_loss(p, real, fake), disc_params)
    return apply_step(disc_params, grads, lr, optimizer), loss


def update_critic(critic_params, disc_params, transitions, gamma: float, lr: float,
                  target_params: Optional[ParameterSet] = None, tau: float = 0.005, optimizer=None):
    """One step on the squared Bellman residual against the detached target
    ``R + gamma * V_target(s')``.  Returns ``(new_params, pre-step loss, new_target)``."""
    dtype = critic_params.dtype
    if not isinstance(transitions, TransitionBatch):
        transitions = TransitionBatch.from_transitions(transitions, dtype)
    if len(transitions.states) == 0:
        raise ValueError("empty transition batch")
    if target_params is None:
        target_params = critic_params
    targets = bellman_targets(disc_params, target_params, transitions.next_states.to(dtype), gamma)
    states = transitions.states.to(dtype)
    if not bool(torch.isfinite(targets).all()):
        raise FloatingPointError("non-finite Bellman target")
    loss, grads = value_and_gradients(lambda p: critic_loss(p, states, targets), critic_params)
    new = apply_step(critic_params, grads, lr, optimizer)
    return new, loss, soft_update(target_params, new, tau)


def update_actor(actor_params, critic_params, disc_params, states, gamma: float, lr: float, optimizer=None):
    """One ascent step on mean ``Q(s, actor(s))``; returns ``(new_params, pre-step objective)``."""
    batch = _as_batch(states, actor_params.dtype)
    if len(batch) == 0:
        raise ValueError("empty state batch")
    neg, grads = value_and_gradients(
        lambda p: -actor_objective(p, critic_params, disc_params, batch, gamma), actor_params
    )
    return apply_step(actor_params, grads, lr, optimizer), -neg


# ---------------------------------------------------------------------------
# rollouts


def rollout_points(actor_params, points: torch.Tensor, t0: torch.Tensor, noise_scale: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> torch.Tensor:
    """Complete each row of ``points`` (B, T, 2) after its first ``t0[i]`` points
    by iterating the actor; returns the finished (B, T, 2) trajectories."""
    B, T, _ = points.shape
    if bool((t0 >= T).any()) or bool((t0 < 1).any()):
        raise EpisodeComplete("initial prefixes must have between 1 and T-1 points")
    if noise_scale > 0 and rng is None:
        raise ValueError("noisy rollouts need an rng")
    out = points.clone()
    out[torch.arange(T)[None, :].expand(B, T) >= t0[:, None]] = 0.0
    with torch.no_grad():
        for k in range(int(t0.min()), T):
            rows = torch.nonzero(t0 <= k).flatten()
            if len(rows) == 0:
                continue
            lengths = torch.full((len(rows),), k, dtype=torch.long)
            act = actor_batch(actor_params, prefix_states(out[rows], lengths))
            if noise_scale > 0:
                noise = torch.from_numpy(rng.normal(0.0, noise_scale, size=(len(rows), 2))).to(act.dtype)
                act = (act + noise).clamp(0.0, 1.0)
            out[rows, k] = act
    return out


def episode_from_points(points: np.ndarray, t0: int) -> Episode:
    T = len(points)
    state = make_state(points[:t0], T)
    transitions = []
    for k in range(t0, T):
        a = Action(float(points[k, 0]), float(points[k, 1]))
        nxt = env_step(state, a)
        transitions.append(Transition(state, a, nxt))
        state = nxt
    return Episode(transitions)


def rollout(actor_params, initial: State, horizon: int, noise_scale: float = 0.0, seed: int = 0) -> Episode:
    """Generate from ``initial`` until ``horizon`` points; deterministic given ``seed``."""
    if initial.horizon != horizon:
        raise ValueError(f"initial state horizon {initial.horizon} != {horizon}")
    if initial.is_full:
        raise EpisodeComplete("initial state is already full")
    pts = torch.zeros((1, horizon, 2), dtype=actor_params.dtype)
    pts[0, : initial.length] = torch.from_numpy(np.array(initial.points)).to(actor_params.dtype)
    rng = np.random.default_rng(seed)
    out = rollout_points(actor_params, pts, torch.tensor([initial.length]), noise_scale, rng)
    final = np.clip(out[0].to(torch.float64).numpy(), 0.0, 1.0)
    final[: initial.length] = initial.points
    return episode_from_points(final, initial.length)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    actor: ParameterSet
    critic: ParameterSet
    discriminator: ParameterSet
    metrics: List[dict] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)


def _jsonable(d: dict) -> dict:
    return {k: (round(v, 12) if isinstance(v, float) else v) for k, v in d.items()}


class TrainerBase:
    """Shared plumbing: expert data, seeded rng, checkpoints and run manifest."""

    model_kind = "base"

    def __init__(self, config: TrainingConfig, train_set: Dataset, out_dir=None):
        if len(train_set) == 0:
            raise ValueError("training set is empty")
        if train_set.horizon != config.horizon:
            raise ValueError(f"dataset horizon {train_set.horizon} != config horizon {config.horizon}")
        self.config = config
        self.dtype = config.torch_dtype
        self.expert = torch.from_numpy(train_set.points).to(self.dtype)
        self.data_fingerprint = train_set.fingerprint()
        self.rng = np.random.default_rng(config.seed)
        self.step_count = 0
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.checkpoints: List[Path] = []

    def networks(self) -> Dict[str, ParameterSet]:
        raise NotImplementedError

    def step(self) -> dict:
        raise NotImplementedError

    def checkpoint(self) -> Optional[Path]:
        if self.out_dir is None:
            return None
        ckdir = self.out_dir / "checkpoints" / f"step_{self.step_count:08d}"
        ckdir.mkdir(parents=True, exist_ok=True)
        for name, params in self.networks().items():
            save_params(params, ckdir / f"{name}.npz", seed=self.config.seed, step=self.step_count,
                        model_kind=self.model_kind, network=name, gamma=self.config.gamma)
        latest = self.out_dir / "checkpoints" / "latest"
        tmp = latest.with_name("latest.tmp")
        tmp.write_text(ckdir.name + "\n")
        tmp.replace(latest)
        self.checkpoints.append(ckdir)
        return ckdir

    def write_manifest(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "model_kind": self.model_kind,
            "config": asdict(self.config),
            "seed": self.config.seed,
            "data_fingerprint": self.data_fingerprint,
        }
        (self.out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


class GailTrainer(TrainerBase):
    """Holds networks, optimizers and the rollout buffer for one training run."""

    model_kind = "gail"

    def __init__(self, config: TrainingConfig, train_set: Dataset, out_dir=None):
        super().__init__(config, train_set, out_dir)
        T = config.horizon
        self.actor = init_params(actor_spec(T), config.seed, self.dtype)
        self.critic = init_params(critic_spec(T), config.seed + 1, self.dtype)
        self.discriminator = init_params(discriminator_spec(T), config.seed + 2, self.dtype)
        self.critic_target = self.critic.detached()
        mk = lambda lr: make_optimizer(config.optimizer, lr, config.momentum)  # noqa: E731
        self.opt_actor = mk(config.lr_actor)
        self.opt_critic = mk(config.lr_critic)
        self.opt_disc = mk(config.lr_discriminator)
        self.buffer_points: deque = deque(maxlen=config.buffer_episodes)
        self.buffer_t0: deque = deque(maxlen=config.buffer_episodes)
        self.last_displacement = float("nan")

    # -- sampling -----------------------------------------------------------

    def _initial_lengths(self, n: int) -> np.ndarray:
        c = self.config
        if c.prefix_mode == "first":
            return np.ones(n, dtype=np.int64)
        return self.rng.integers(c.min_prefix, c.max_prefix + 1, size=n)

    def collect(self) -> None:
        c = self.config
        idx = self.rng.integers(0, len(self.expert), size=c.rollout_batch_size)
        t0 = torch.from_numpy(self._initial_lengths(c.rollout_batch_size))
        pts = rollout_points(self.actor, self.expert[idx], t0, c.noise_scale, self.rng)
        steps = pts[:, 1:] - pts[:, :-1]
        gen = torch.arange(1, c.horizon)[None, :] >= t0[:, None]
        self.last_displacement = float(steps.norm(dim=2)[gen].mean())
        for p, t in zip(pts, t0.tolist()):
            self.buffer_points.append(p)
            self.buffer_t0.append(t)

    def _sample_buffer(self, n: int, offset: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """Sample buffered episodes and a length ``t`` per episode with
        ``t0 + offset <= t <= T - 1 + offset``."""
        T = self.config.horizon
        idx = self.rng.integers(0, len(self.buffer_points), size=n)
        pts = torch.stack([self.buffer_points[i] for i in idx])
        t0 = np.array([self.buffer_t0[i] for i in idx])
        lengths = self.rng.integers(t0 + offset, T + offset)
        return pts, torch.from_numpy(lengths)

    def transition_batch(self, n: int) -> TransitionBatch:
        pts, lengths = self._sample_buffer(n, 0)
        s = prefix_states(pts, lengths)
        s_next = prefix_states(pts, lengths + 1)
        return TransitionBatch(s, pts[torch.arange(n), lengths], s_next)

    def discriminator_batch(self, n: int) -> Tuple[torch.Tensor, torch.Tensor]:
        pts, lengths = self._sample_buffer(n, 1)
        fake = prefix_states(pts, lengths)
        idx = self.rng.integers(0, len(self.expert), size=n)
        real = prefix_states(self.expert[idx], lengths)
        return real, fake

    def actor_states(self, n: int) -> torch.Tensor:
        """Buffered rollout states, with a configured share replaced by expert
        prefixes of lengths in ``[min_prefix, T - 1]``."""
        c = self.config
        n_expert = int(round(c.expert_state_fraction * n))
        parts = []
        if n_expert < n:
            parts.append(self.transition_batch(n - n_expert).states)
        if n_expert:
            idx = self.rng.integers(0, len(self.expert), size=n_expert)
            lengths = torch.from_numpy(self.rng.integers(c.min_prefix, c.horizon, size=n_expert))
            parts.append(prefix_states(self.expert[idx], lengths))
        return torch.cat(parts)

    # -- one iteration ------------------------------------------------------

    def step(self) -> dict:
        c = self.config
        if self.step_count % c.rollout_every == 0 or not self.buffer_points:
            self.collect()
        real, fake = self.discriminator_batch(c.disc_batch_size)
        self.discriminator, d_loss = update_discriminator(
            self.discriminator, real, fake, c.lr_discriminator, self.opt_disc
        )
        batch = self.transition_batch(c.batch_size)
        with torch.no_grad():
            mean_reward = float(rewards(self.discriminator, batch.next_states).mean())
        self.critic, c_loss, self.critic_target = update_critic(
            self.critic, self.discriminator, batch, c.gamma, c.lr_critic,
            self.critic_target, c.tau, self.opt_critic,
        )
        states = self.actor_states(c.batch_size)
        if self.step_count < c.actor_warmup:
            with torch.no_grad():
                objective = float(actor_objective(self.actor, self.critic, self.discriminator, states, c.gamma))
        else:
            self.actor, objective = update_actor(
                self.actor, self.critic, self.discriminator, states, c.gamma, c.lr_actor, self.opt_actor
            )
        self.step_count += 1
        return {
            "discriminator_loss": d_loss,
            "critic_loss": c_loss,
            "actor_objective": objective,
            "mean_reward": mean_reward,
            "mean_displacement": self.last_displacement,
        }

    # -- persistence --------------------------------------------------------

    def networks(self) -> Dict[str, ParameterSet]:
        return {
            "actor": self.actor,
            "critic": self.critic,
            "critic_target": self.critic_target,
            "discriminator": self.discriminator,
        }

    def result(self, metrics) -> TrainResult:
        return TrainResult(self.actor, self.critic, self.discriminator, metrics, list(self.checkpoints))


def run_training(trainer, total_steps: int, log_interval: int, checkpoint_interval: int) -> List[dict]:
    """Drive ``trainer.step()`` with periodic metrics and checkpoints.

    Metrics are averaged over each logging interval and appended to
    ``metrics.jsonl`` in the trainer's output directory.
    """
    out_dir = trainer.out_dir
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.jsonl"
        log_path.write_text("")
    trainer.write_manifest()
    trainer.checkpoint()
    metrics: List[dict] = []
    pending: List[dict] = []
    start = time.perf_counter()
    for _ in range(total_steps):
        try:
            pending.append(trainer.step())
        except (FloatingPointError, ValueError, RuntimeError) as e:
            raise TrainingError(f"training aborted at step {trainer.step_count + 1}: {e}") from e
        step = trainer.step_count
        if step % log_interval == 0 or step == total_steps:
            record = {"step": step}
            for key in pending[0]:
                record[key] = float(np.mean([p[key] for p in pending]))
            record["wall_seconds"] = round(time.perf_counter() - start, 3)
            record = _jsonable(record)
            metrics.append(record)
            pending = []
            if log_path is not None:
                with open(log_path, "a") as f:
                    f.write(json.dumps(record) + "\n")
            logger.info("step %d %s", step, record)
        if step % checkpoint_interval == 0 and step != total_steps:
            trainer.checkpoint()
    if total_steps > 0:
        trainer.checkpoint()
    return metrics


def train_gail(config: TrainingConfig, train_set: Dataset, out_dir=None) -> TrainResult:
    trainer = GailTrainer(config, train_set, out_dir)
    metrics = run_training(trainer, config.total_steps, config.log_interval, config.checkpoint_interval)
    return trainer.result(metrics)
