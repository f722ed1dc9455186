"""Pen-trajectory geometry and the explicit writing environment.

A state is a fixed-horizon array of ``(x, y, l)`` triples: the first ``t``
slots hold the pen positions written so far with ``l = 1``; the remaining
slots are ``(0, 0, 0)``.  Writing a new point replaces the first empty slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np


class EpisodeComplete(Exception):
    """Raised when stepping a state that already fills its horizon."""


class Action(NamedTuple):
    x: float
    y: float


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {arr.shape}")
    return arr


def _check_unit(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite coordinates")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{what} has coordinates outside [0, 1]")


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    label: Optional[str] = None
    id: Optional[str] = None

    def __post_init__(self):
        arr = _as_points(self.points)
        if len(arr) < 1:
            raise ValueError("a trajectory needs at least one point")
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class State:
    """Zero-padded partial trajectory of ``length`` points out of ``horizon``."""

    slots: np.ndarray
    length: int
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        slots = np.array(self.slots, dtype=np.float64)
        if slots.ndim != 2 or slots.shape[1] != 3:
            raise ValueError(f"state slots must be (T, 3), got {slots.shape}")
        horizon = slots.shape[0]
        if not 1 <= self.length <= horizon:
            raise ValueError(f"state length {self.length} outside [1, {horizon}]")
        if not self._checked:
            valid = slots[: self.length]
            pad = slots[self.length :]
            if np.any(valid[:, 2] != 1.0) or np.any(pad != 0.0):
                raise ValueError("state violates the padding invariant")
            _check_unit(valid[:, :2], "state")
        slots.setflags(write=False)
        object.__setattr__(self, "slots", slots)

    @property
    def horizon(self) -> int:
        return self.slots.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.slots[: self.length, :2]

    @property
    def is_full(self) -> bool:
        return self.length == self.horizon

    def __eq__(self, other) -> bool:
        if not isinstance(other, State):
            return NotImplemented
        return self.length == other.length and np.array_equal(self.slots, other.slots)

    __hash__ = None


def make_state(prefix, horizon: int) -> State:
    """Pad ``prefix`` out to ``horizon`` slots."""
    pts = _as_points(prefix)
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if len(pts) == 0:
        raise ValueError("prefix is empty")
    if len(pts) > horizon:
        raise ValueError(f"prefix of {len(pts)} points exceeds horizon {horizon}")
    _check_unit(pts, "prefix")
    slots = np.zeros((horizon, 3))
    slots[: len(pts), :2] = pts
    slots[: len(pts), 2] = 1.0
    return State(slots, len(pts), _checked=True)


def env_step(state: State, action) -> State:
    """Write ``action`` into the first empty slot; returns a new state."""
    if state.is_full:
        raise EpisodeComplete(f"state already holds {state.horizon} points")
    a = np.asarray(action, dtype=np.float64).reshape(2)
    _check_unit(a, "action")
    slots = state.slots.copy()
    slots[state.length] = (a[0], a[1], 1.0)
    return State(slots, state.length + 1, _checked=True)


def resample_uniform(polyline, target_len: int) -> np.ndarray:
    """Resample a polyline to ``target_len`` points equally spaced in arc length."""
    pts = _as_points(polyline)
    if len(pts) == 0:
        raise ValueError("polyline is empty")
    if target_len < 2:
        raise ValueError("target_len must be at least 2")
    if not np.all(np.isfinite(pts)):
        raise ValueError("polyline contains non-finite coordinates")
    seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(pts[:1], target_len, axis=0)
    # drop zero-length segments so the arc-length abscissa is strictly increasing
    keep = np.concatenate([[True], seg > 0.0])
    cum, pts_k = cum[keep], pts[keep]
    s = np.linspace(0.0, total, target_len)
    out = np.column_stack([np.interp(s, cum, pts_k[:, 0]), np.interp(s, cum, pts_k[:, 1])])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def normalize_unit_square(polyline) -> np.ndarray:
    """Aspect-preserving map into [0, 1]^2: the longer extent spans [0, 1],
    the shorter one is centred."""
    pts = _as_points(polyline)
    if len(pts) == 0:
        raise ValueError("polyline is empty")
    if not np.all(np.isfinite(pts)):
        raise ValueError("polyline contains non-finite coordinates")
    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    scale = extent.max()
    if scale == 0.0:
        return np.full_like(pts, 0.5)
    out = (pts - lo) / scale
    out += (1.0 - extent / scale) / 2.0
    return np.clip(out, 0.0, 1.0)


def polyline_length(polyline) -> float:
    pts = _as_points(polyline)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def concat_strokes(strokes: Sequence) -> np.ndarray:
    """Join pen-down strokes in temporal order, dropping pen-up gaps."""
    parts = [_as_points(s) for s in strokes if len(s)]
    if not parts:
        return np.zeros((0, 2))
    return np.concatenate(parts, axis=0)
