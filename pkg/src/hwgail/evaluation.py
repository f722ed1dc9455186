"""Analysis of generated trajectories.

Indices ``t`` in this module are 1-based pen-step indices, so the default
evaluation window ``(21, 50)`` covers the generated tail of a 50-point
trajectory whose first 20 points were given.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from hwgail.gail import q_values, rollout_points
from hwgail.networks import ParameterSet
from hwgail.trajectory import EpisodeComplete, State, Trajectory, make_state

COLLINEAR_EPS = 1e-12


@dataclass
class CurvatureHistogram:
    matrix: np.ndarray  # (delta_max, bins); row k holds delta = k + 1
    kappa_max: float

    @property
    def delta_max(self) -> int:
        return self.matrix.shape[0]

    @property
    def bins(self) -> int:
        return self.matrix.shape[1]

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.kappa_max, self.bins + 1)

    def row(self, delta: int) -> np.ndarray:
        return self.matrix[delta - 1]


@dataclass
class QMap:
    values: np.ndarray  # (G, G); row i is y, column j is x
    state: State
    gamma: float

    @property
    def grid(self) -> int:
        return self.values.shape[0]

    def action(self, i: int, j: int) -> Tuple[float, float]:
        G = self.grid
        return ((j + 0.5) / G, (i + 0.5) / G)


# ---------------------------------------------------------------------------
# curvature


def _menger(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    """Vectorised 1/r of the circle through three points (0 when collinear)."""
    d21, d31 = p2 - p1, p3 - p1
    cross = d21[..., 0] * d31[..., 1] - d21[..., 1] * d31[..., 0]
    a = np.linalg.norm(d21, axis=-1)
    b = np.linalg.norm(p3 - p2, axis=-1)
    c = np.linalg.norm(d31, axis=-1)
    collinear = np.abs(cross) < COLLINEAR_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = 2.0 * np.abs(cross) / (a * b * c)
    return np.where(collinear, 0.0, kappa)


def curvature_at(traj: Union[Trajectory, np.ndarray], t: int, delta: int) -> float:
    """Curvature through points ``t - delta``, ``t``, ``t + delta`` (1-based)."""
    pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if delta < 1:
        raise ValueError("delta must be positive")
    if t - delta < 1 or t + delta > len(pts):
        raise ValueError(f"indices {t - delta}..{t + delta} outside 1..{len(pts)}")
    return float(_menger(pts[t - delta - 1], pts[t - 1], pts[t + delta - 1]))


def _as_point_stack(trajs) -> np.ndarray:
    if isinstance(trajs, np.ndarray):
        return trajs.astype(np.float64)
    arrs = [t.points if isinstance(t, Trajectory) else np.asarray(t, dtype=np.float64) for t in trajs]
    if not arrs:
        return np.zeros((0, 0, 2))
    lengths = {len(a) for a in arrs}
    if len(lengths) != 1:
        raise ValueError("trajectories must share one length")
    return np.stack(arrs)


def curvature_histogram(
    trajs,
    t_range: Tuple[int, int] = (21, 50),
    delta_max: int = 20,
    bins: int = 50,
    kappa_max: float = 30.0,
) -> CurvatureHistogram:
    """Per-delta normalised curvature histograms over the 1-based window
    ``t_range`` (inclusive); triples reaching outside a trajectory are skipped
    and curvatures above ``kappa_max`` land in the top bin."""
    pts = _as_point_stack(trajs)
    if len(pts) == 0:
        raise ValueError("no trajectories to histogram")
    T = pts.shape[1]
    lo, hi = t_range
    if lo < 1 or hi < lo or hi > T:
        raise ValueError(f"window {t_range} does not fit trajectories of length {T}")
    width = kappa_max / bins
    matrix = np.zeros((delta_max, bins))
    for delta in range(1, delta_max + 1):
        ts = np.arange(max(lo, delta + 1), min(hi, T - delta) + 1)
        if len(ts) == 0:
            continue
        kappa = _menger(pts[:, ts - delta - 1].reshape(-1, 2), pts[:, ts - 1].reshape(-1, 2),
                        pts[:, ts + delta - 1].reshape(-1, 2))
        idx = np.minimum((kappa / width).astype(np.int64), bins - 1)
        counts = np.bincount(idx, minlength=bins).astype(np.float64)
        matrix[delta - 1] = counts / counts.sum()
    return CurvatureHistogram(matrix, float(kappa_max))


def histogram_distance(h1: CurvatureHistogram, h2: CurvatureHistogram) -> float:
    """Mean over deltas of the total-variation distance between rows."""
    if h1.matrix.shape != h2.matrix.shape:
        raise ValueError(f"histogram shapes differ: {h1.matrix.shape} vs {h2.matrix.shape}")
    return float(np.mean(0.5 * np.abs(h1.matrix - h2.matrix).sum(axis=1)))


def mode_bin(h: CurvatureHistogram, delta: int) -> int:
    return int(np.argmax(h.row(delta)))


# ---------------------------------------------------------------------------
# Q-map and generation


def qmap(critic_params: ParameterSet, disc_params: ParameterSet, state: State, grid: int = 64,
         gamma: float = 0.9) -> QMap:
    """Q of every cell-centre action on a ``grid x grid`` lattice (double precision)."""
    if state.is_full:
        raise EpisodeComplete("cannot build a Q-map for a full state")
    critic64, disc64 = critic_params.to(torch.float64), disc_params.to(torch.float64)
    centers = (np.arange(grid) + 0.5) / grid
    ys, xs = np.meshgrid(centers, centers, indexing="ij")
    actions = torch.from_numpy(np.column_stack([xs.ravel(), ys.ravel()]))
    s = torch.from_numpy(np.array(state.slots))[None]
    out = []
    with torch.no_grad():
        for chunk in torch.split(actions, 512):
            out.append(q_values(critic64, disc64, s.expand(len(chunk), -1, -1), chunk, gamma))
    return QMap(torch.cat(out).numpy().reshape(grid, grid), state, gamma)


def generate_batch(actor_params: ParameterSet, sources: np.ndarray, t0: int) -> np.ndarray:
    """Noiseless completion of every ``(N, T, 2)`` source after its first ``t0`` points."""
    sources = np.asarray(sources, dtype=np.float64)
    T = sources.shape[1]
    if not 1 <= t0 < T:
        raise ValueError(f"prefix length {t0} must lie in [1, {T - 1}]")
    pts = torch.from_numpy(sources).to(actor_params.dtype)
    out = rollout_points(actor_params, pts, torch.full((len(sources),), t0, dtype=torch.long))
    final = np.clip(out.to(torch.float64).numpy(), 0.0, 1.0)
    final[:, :t0] = sources[:, :t0]
    return final


def generate_from_prefix(actor_params: ParameterSet, source: Trajectory, t0: int) -> Trajectory:
    """Keep the first ``t0`` points of ``source`` and let the actor write the rest."""
    T = len(source)
    if t0 >= T or t0 < 1:
        raise ValueError(f"prefix length {t0} must lie in [1, {T - 1}]")
    if actor_params.spec.sequence_length != T:
        raise ValueError(f"actor horizon {actor_params.spec.sequence_length} != trajectory length {T}")
    pts = generate_batch(actor_params, source.points[None], t0)[0]
    return Trajectory(pts, label=source.label, id=source.id)


# ---------------------------------------------------------------------------
# export


def write_histogram(h: CurvatureHistogram, path) -> None:
    edges = h.edges
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["delta"] + [f"{float(edges[i])!r}:{float(edges[i + 1])!r}" for i in range(h.bins)])
        for d in range(1, h.delta_max + 1):
            w.writerow([d] + [repr(float(v)) for v in h.row(d)])


def read_histogram(path) -> CurvatureHistogram:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    kappa_max = float(rows[0][-1].split(":")[1])
    matrix = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return CurvatureHistogram(matrix, kappa_max)


def write_qmap(q: QMap, path) -> Path:
    """Matrix as CSV at ``path``; conditioning state in ``<path>.state.json``."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in q.values:
            w.writerow([repr(float(v)) for v in row])
    sidecar = path.with_name(path.name + ".state.json")
    sidecar.write_text(json.dumps({
        "grid": q.grid,
        "gamma": q.gamma,
        "length": q.state.length,
        "horizon": q.state.horizon,
        "points": q.state.points.tolist(),
        "cell_center": "action(i, j) = ((j + 0.5) / grid, (i + 0.5) / grid)",
    }, indent=1) + "\n")
    return sidecar


def read_qmap(path) -> QMap:
    path = Path(path)
    with open(path, newline="") as f:
        values = np.array([[float(v) for v in r] for r in csv.reader(f)])
    meta = json.loads(path.with_name(path.name + ".state.json").read_text())
    state = make_state(np.array(meta["points"]).reshape(-1, 2), meta["horizon"])
    return QMap(values, state, meta["gamma"])


# ---------------------------------------------------------------------------
# rendering


def _figure(width_px: int, height_px: int, dpi: int = 100):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(width_px / dpi, height_px / dpi), dpi=dpi)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_axis_off()
    return fig, ax, plt


def _save(fig, plt, destination) -> None:
    try:
        fig.savefig(destination, dpi=fig.dpi, metadata={"Software": None})
    except OSError as e:
        raise OSError(f"cannot write {destination}: {e}") from e
    finally:
        plt.close(fig)


def _draw_polyline(ax, pts: np.ndarray, color="black", linewidth=1.5, start_color="tab:red"):
    ax.plot(pts[:, 0], pts[:, 1], "-", color=color, linewidth=linewidth)
    ax.plot(pts[:1, 0], pts[:1, 1], "o", color=start_color, markersize=4)


def render(artifact, destination, size_px: int = 256, cell_px: int = 4, cmap: str = "viridis",
           prefix_len: Optional[int] = None) -> None:
    """Write a PNG of a trajectory, Q-map or curvature histogram.

    Trajectories fill the unit square; ``prefix_len`` draws the given prefix
    in grey.  Q-maps are ``grid * cell_px`` pixels square with the
    conditioning trajectory on top.  Histograms are ``bins * cell_px`` wide
    and ``delta_max * cell_px`` tall, delta increasing downwards, white for
    zero mass.
    """
    if isinstance(artifact, Trajectory) or (isinstance(artifact, np.ndarray) and artifact.ndim == 2):
        pts = artifact.points if isinstance(artifact, Trajectory) else artifact
        fig, ax, plt = _figure(size_px, size_px)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        if prefix_len:
            ax.plot(pts[:prefix_len, 0], pts[:prefix_len, 1], "-", color="0.6", linewidth=2.5)
        _draw_polyline(ax, pts)
        _save(fig, plt, destination)
    elif isinstance(artifact, QMap):
        G = artifact.grid
        fig, ax, plt = _figure(G * cell_px, G * cell_px)
        ax.imshow(artifact.values, origin="lower", extent=(0, 1, 0, 1), cmap=cmap,
                  interpolation="nearest", aspect="auto")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        _draw_polyline(ax, artifact.state.points, color="white", linewidth=1.0)
        _save(fig, plt, destination)
    elif isinstance(artifact, CurvatureHistogram):
        m = artifact.matrix
        fig, ax, plt = _figure(artifact.bins * cell_px, artifact.delta_max * cell_px)
        vmax = m.max() if m.max() > 0 else 1.0
        ax.imshow(m, cmap="gray_r", vmin=0.0, vmax=vmax, interpolation="nearest", aspect="auto")
        _save(fig, plt, destination)
    else:
        raise TypeError(f"cannot render {type(artifact).__name__}")


def render_delta_profile(hists: Dict[str, CurvatureHistogram], delta: int, destination) -> None:
    """Overlay the ``delta`` rows of several histograms as step curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    for name, h in hists.items():
        edges = h.edges
        ax.step(edges[:-1], h.row(delta), where="post", label=name)
    ax.set_xlabel("curvature")
    ax.set_ylabel("frequency")
    ax.set_title(f"delta = {delta}")
    ax.legend()
    fig.tight_layout()
    _save(fig, plt, destination)


def render_trajectory_grid(trajs: Sequence[np.ndarray], destination, cols: int = 5, cell_px: int = 128,
                           prefix_len: Optional[int] = None) -> None:
    rows = max(1, -(-len(trajs) // cols))
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(cols * cell_px / 100, rows * cell_px / 100), dpi=100)
    for k, pts in enumerate(trajs):
        r, c = divmod(k, cols)
        ax = fig.add_axes([c / cols, 1 - (r + 1) / rows, 1 / cols, 1 / rows])
        ax.set_xlim(-0.05, 1.05)
        ax.set_ylim(-0.05, 1.05)
        ax.set_xticks([])
        ax.set_yticks([])
        if prefix_len:
            ax.plot(pts[:prefix_len, 0], pts[:prefix_len, 1], "-", color="0.6", linewidth=2.5)
        _draw_polyline(ax, np.asarray(pts), linewidth=1.0)
    _save(fig, plt, destination)
