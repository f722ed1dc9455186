"""Conv-conv-dense function approximators for the actor, critic and discriminator.

All three networks share one architecture: two 1-D convolutions with ReLU
(128 then 64 channels, kernel 7, stride 1, zero padding that keeps the
sequence length) followed by a single dense layer.  The actor squashes its
2-d output with a sigmoid, the discriminator its scalar output; the critic
is linear.

Parameters live in a :class:`ParameterSet`, an ordered mapping of named
tensors tied to its :class:`NetworkSpec`.  Forward passes are pure functions
of ``(params, states)`` so that gradients can be taken with respect to
either argument.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from hwgail.trajectory import Action, State

CHECKPOINT_VERSION = "hwgail-checkpoint/1"
PARAM_NAMES = ("conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "dense.weight", "dense.bias")


@dataclass(frozen=True)
class NetworkSpec:
    sequence_length: int
    output_dim: int
    squash: str  # "sigmoid" or "identity"
    input_channels: int = 3
    conv1_channels: int = 128
    conv2_channels: int = 64
    kernel: int = 7
    stride: int = 1

    def __post_init__(self):
        if self.squash not in ("sigmoid", "identity"):
            raise ValueError(f"unknown squash {self.squash!r}")
        if self.sequence_length < 1 or self.output_dim < 1:
            raise ValueError("sequence_length and output_dim must be positive")

    def conv_out_len(self, length: int) -> int:
        pad = self.kernel // 2
        return (length + 2 * pad - self.kernel) // self.stride + 1

    @property
    def dense_in(self) -> int:
        n = self.conv_out_len(self.conv_out_len(self.sequence_length))
        return self.conv2_channels * n

    def shapes(self) -> Dict[str, tuple]:
        return OrderedDict(
            [
                ("conv1.weight", (self.conv1_channels, self.input_channels, self.kernel)),
                ("conv1.bias", (self.conv1_channels,)),
                ("conv2.weight", (self.conv2_channels, self.conv1_channels, self.kernel)),
                ("conv2.bias", (self.conv2_channels,)),
                ("dense.weight", (self.output_dim, self.dense_in)),
                ("dense.bias", (self.output_dim,)),
            ]
        )


def actor_spec(horizon: int) -> NetworkSpec:
    return NetworkSpec(horizon, 2, "sigmoid")


def critic_spec(horizon: int) -> NetworkSpec:
    return NetworkSpec(horizon, 1, "identity")


def discriminator_spec(horizon: int) -> NetworkSpec:
    return NetworkSpec(horizon, 1, "sigmoid")


class ParameterSet(OrderedDict):
    """Named parameter tensors for one network."""

    def __init__(self, spec: NetworkSpec, tensors: Union[Dict[str, torch.Tensor], Iterable] = ()):
        super().__init__(tensors)
        self.spec = spec
        shapes = spec.shapes()
        if list(self.keys()) != list(shapes):
            raise ValueError(f"parameter names {list(self.keys())} do not match {list(shapes)}")
        for name, shape in shapes.items():
            if tuple(self[name].shape) != shape:
                raise ValueError(f"{name} has shape {tuple(self[name].shape)}, expected {shape}")

    @property
    def dtype(self) -> torch.dtype:
        return self["dense.weight"].dtype

    def map(self, fn: Callable[[torch.Tensor], torch.Tensor]) -> "ParameterSet":
        return ParameterSet(self.spec, ((k, fn(v)) for k, v in self.items()))

    def detached(self) -> "ParameterSet":
        return self.map(lambda t: t.detach().clone())

    def to(self, dtype: torch.dtype) -> "ParameterSet":
        return self.map(lambda t: t.detach().to(dtype))

    def numpy(self) -> Dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.items()}

    def equal(self, other: "ParameterSet") -> bool:
        return self.spec == other.spec and all(torch.equal(self[k], other[k]) for k in self)

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(v).all()) for v in self.values())


def init_params(spec: NetworkSpec, seed: int, dtype: torch.dtype = torch.float64) -> ParameterSet:
    """Fan-in scaled uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in spec.shapes().items():
        if name.endswith(".bias"):
            tensors[name] = torch.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = torch.from_numpy(rng.uniform(-bound, bound, size=shape)).to(dtype)
    return ParameterSet(spec, tensors)


def zero_params(spec: NetworkSpec, dtype: torch.dtype = torch.float64) -> ParameterSet:
    return ParameterSet(spec, ((k, torch.zeros(s, dtype=dtype)) for k, s in spec.shapes().items()))


def states_tensor(states: Union[State, Sequence[State]], dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Stack states into a ``(B, T, 3)`` tensor."""
    if isinstance(states, State):
        states = [states]
    return torch.from_numpy(np.stack([s.slots for s in states])).to(dtype)


def raw_forward(params: ParameterSet, states: torch.Tensor) -> torch.Tensor:
    """Pre-squash network output for a ``(B, T, 3)`` batch, shape ``(B, out)``."""
    spec = params.spec
    if states.ndim != 3 or states.shape[1:] != (spec.sequence_length, spec.input_channels):
        raise ValueError(
            f"expected states of shape (B, {spec.sequence_length}, {spec.input_channels}), "
            f"got {tuple(states.shape)}"
        )
    pad = spec.kernel // 2
    h = states.transpose(1, 2)
    h = F.relu(F.conv1d(h, params["conv1.weight"], params["conv1.bias"], stride=spec.stride, padding=pad))
    h = F.relu(F.conv1d(h, params["conv2.weight"], params["conv2.bias"], stride=spec.stride, padding=pad))
    return F.linear(h.flatten(1), params["dense.weight"], params["dense.bias"])


def forward(params: ParameterSet, states: torch.Tensor) -> torch.Tensor:
    out = raw_forward(params, states)
    return torch.sigmoid(out) if params.spec.squash == "sigmoid" else out


def actor_batch(params: ParameterSet, states: torch.Tensor) -> torch.Tensor:
    """Next pen positions, ``(B, 2)`` in [0, 1]."""
    return forward(params, states)


def critic_batch(params: ParameterSet, states: torch.Tensor) -> torch.Tensor:
    """State values, ``(B,)``."""
    return forward(params, states)[:, 0]


def discriminator_logits(params: ParameterSet, states: torch.Tensor) -> torch.Tensor:
    return raw_forward(params, states)[:, 0]


def as_float64(params: ParameterSet) -> ParameterSet:
    return params if params.dtype == torch.float64 else params.to(torch.float64)


def _single(params: ParameterSet, state: State) -> torch.Tensor:
    # single-state evaluation is always double precision
    with torch.no_grad():
        return forward(as_float64(params), states_tensor(state))[0]


def actor_forward(params: ParameterSet, state: State) -> Action:
    out = _single(params, state)
    return Action(float(out[0]), float(out[1]))


def critic_forward(params: ParameterSet, state: State) -> float:
    return float(_single(params, state)[0])


def discriminator_forward(params: ParameterSet, state: State) -> float:
    return float(_single(params, state)[0])


def value_and_gradients(
    loss: Callable[[ParameterSet], torch.Tensor], params: ParameterSet
) -> Tuple[float, Dict[str, torch.Tensor]]:
    """``(loss(params), d loss / d params)``; raises on a non-finite loss."""
    leaves = params.map(lambda t: t.detach().clone().requires_grad_(True))
    value = loss(leaves)
    if not isinstance(value, torch.Tensor):
        value = torch.as_tensor(value, dtype=params.dtype)
    if value.numel() != 1:
        raise ValueError("loss must be a scalar")
    scalar = float(value.detach())
    if not math.isfinite(scalar):
        raise FloatingPointError(f"loss is not finite: {scalar}")
    if not value.requires_grad:
        return scalar, OrderedDict((k, torch.zeros_like(v)) for k, v in params.items())
    grads = torch.autograd.grad(value, list(leaves.values()), allow_unused=True)
    return scalar, OrderedDict(
        (k, torch.zeros_like(v) if g is None else g) for (k, v), g in zip(params.items(), grads)
    )


def loss_gradients(
    loss: Callable[[ParameterSet], torch.Tensor], params: ParameterSet
) -> Dict[str, torch.Tensor]:
    """Exact gradients of a scalar ``loss(params)`` with respect to every parameter."""
    return value_and_gradients(loss, params)[1]


# ---------------------------------------------------------------------------
# Checkpoints: one .npz per network; arrays little-endian, plus a JSON manifest
# stored as the uint8 array "__manifest__".


def save_params(params: ParameterSet, path, seed: Optional[int] = None, step: int = 0, **extra) -> Path:
    path = Path(path)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "spec": asdict(params.spec),
        "seed": seed,
        "step": step,
        "dtype": str(params.dtype).replace("torch.", ""),
        **extra,
    }
    arrays = {k: v.astype(v.dtype.newbyteorder("<")) for k, v in params.numpy().items()}
    arrays["__manifest__"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    tmp.replace(path)
    return path


def load_params(path) -> tuple:
    """Return ``(ParameterSet, manifest)``."""
    with np.load(Path(path)) as z:
        manifest = json.loads(bytes(z["__manifest__"]).decode())
        spec = NetworkSpec(**manifest["spec"])
        tensors = OrderedDict((k, torch.from_numpy(z[k].astype(z[k].dtype.newbyteorder("=")))) for k in PARAM_NAMES)
    return ParameterSet(spec, tensors), manifest
