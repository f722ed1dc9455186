"""Loading online handwriting data and turning it into fixed-length datasets.

Two input formats are understood:

* a subset of the UNIPEN text format (``.SEGMENT`` / ``.PEN_DOWN`` /
  ``.PEN_UP`` declarations followed by coordinate lines), and
* a canonical line-delimited JSON format, one sample per line.

``build_dataset`` concatenates pen-down strokes, maps each sample into the
unit square, resamples it to a fixed number of points and splits the result
with a seeded permutation.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from hwgail.trajectory import Trajectory, concat_strokes, normalize_unit_square, resample_uniform

logger = logging.getLogger(__name__)


class FormatError(ValueError):
    """Malformed input data; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass
class RawSample:
    id: str
    label: str
    strokes: List[np.ndarray]

    def __post_init__(self):
        self.strokes = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in self.strokes]


@dataclass
class Dataset:
    horizon: int
    samples: List[Trajectory]
    split: str = "train"
    seed: int = 0
    dropped: int = 0

    def __post_init__(self):
        for traj in self.samples:
            if len(traj) != self.horizon:
                raise ValueError(f"sample {traj.id!r} has {len(traj)} points, expected {self.horizon}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def points(self) -> np.ndarray:
        """All samples stacked as an ``(N, T, 2)`` array."""
        if not self.samples:
            return np.zeros((0, self.horizon, 2))
        return np.stack([t.points for t in self.samples])

    @property
    def labels(self) -> List[Optional[str]]:
        return [t.label for t in self.samples]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        h.update("\0".join(str(lbl) for lbl in self.labels).encode())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# UNIPEN subset

_QUOTED = re.compile(r'"([^"]*)"')
_RANGE = re.compile(r"^\d+(:\d+)?(-\d+(:\d+)?)?(,\d+(:\d+)?(-\d+(:\d+)?)?)*$")


def _parse_delineation(token: str) -> Optional[List[int]]:
    """Component indices from a delineation like ``0-3`` or ``2,4-5``;
    point-level ``comp:point`` refinements are reduced to whole components."""
    if not _RANGE.match(token):
        return None
    out: List[int] = []
    for part in token.split(","):
        ends = [int(e.split(":")[0]) for e in part.split("-")]
        lo, hi = ends[0], ends[-1]
        if hi < lo:
            return None
        out.extend(range(lo, hi + 1))
    return out


@dataclass
class _Component:
    pen_down: bool
    points: list = field(default_factory=list)
    owner: Optional[int] = None


class UnipenParser:
    """Stateful reader for the UNIPEN subset.

    A ``.SEGMENT`` whose delineation names components that were already read
    (the layout of real UNIPEN files) claims those components.  Any other
    ``.SEGMENT`` acts as a header and owns the pen blocks that follow it.
    ``levels`` restricts output to segments of the given hierarchy levels
    (e.g. ``{"CHARACTER", "DIGIT"}``).
    """

    def __init__(self, levels: Optional[Iterable[str]] = None):
        self.levels = {lv.upper() for lv in levels} if levels else None
        self.skipped = 0

    def parse(self, text) -> List[RawSample]:
        lines = _iter_lines(text)
        components: List[_Component] = []
        segments: list = []  # (label, level, component indices or None)
        current: Optional[_Component] = None
        header_seg: Optional[int] = None

        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("."):
                keyword, _, rest = line.partition(" ")
                keyword = keyword.split("\t")[0].upper()
                if keyword in (".PEN_DOWN", ".PEN_UP"):
                    current = _Component(pen_down=keyword == ".PEN_DOWN", owner=header_seg)
                    components.append(current)
                elif keyword == ".SEGMENT":
                    label, level, comps = self._segment(rest, len(components))
                    segments.append((label, level, comps))
                    header_seg = None if comps is not None else len(segments) - 1
                    current = None
                # unknown keywords are ignored
                continue
            if current is None:
                raise FormatError("coordinate line outside any .PEN_DOWN block", lineno)
            tokens = line.split()
            if len(tokens) < 2:
                raise FormatError(f"expected at least two coordinates, got {line!r}", lineno)
            try:
                x, y = float(tokens[0]), float(tokens[1])
            except ValueError:
                raise FormatError(f"non-numeric coordinate in {line!r}", lineno) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise FormatError(f"non-finite coordinate in {line!r}", lineno)
            current.points.append((x, y))

        samples = []
        for seg_index, (label, level, comps) in enumerate(segments):
            if self.levels is not None and level not in self.levels:
                continue
            if comps is None:
                owned = [c for c in components if c.owner == seg_index]
            else:
                owned = [components[i] for i in comps]
            strokes = [np.array(c.points, dtype=np.float64) for c in owned if c.pen_down and c.points]
            if not strokes:
                self.skipped += 1
                continue
            samples.append(RawSample(id=f"seg{seg_index:05d}", label=label, strokes=strokes))
        if self.skipped:
            logger.warning("skipped %d segment(s) without pen-down points", self.skipped)
        return samples

    @staticmethod
    def _segment(rest: str, n_components: int) -> Tuple[str, str, Optional[List[int]]]:
        m = _QUOTED.search(rest)
        label = m.group(1) if m else ""
        head = rest[: m.start()] if m else rest
        tokens = head.split()
        level = tokens[0].upper() if tokens else ""
        comps = None
        if len(tokens) > 1:
            idx = _parse_delineation(tokens[1])
            if idx is not None and idx and max(idx) < n_components:
                comps = idx
        if not m and len(tokens) > 3:
            label = tokens[-1]
        return label, level, comps


def _iter_lines(text) -> Iterable[str]:
    if isinstance(text, str):
        return io.StringIO(text)
    return text


def parse_unipen_subset(text, levels: Optional[Iterable[str]] = None) -> List[RawSample]:
    """Parse UNIPEN-subset text (a string, file object or iterable of lines)."""
    return UnipenParser(levels).parse(text)


# ---------------------------------------------------------------------------
# Canonical line-delimited format


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _fmt_points(pts: np.ndarray) -> str:
    return "[" + ",".join(f"[{_fmt(x)},{_fmt(y)}]" for x, y in pts) + "]"


def _sample_line(sample: RawSample) -> str:
    strokes = "[" + ",".join(_fmt_points(s) for s in sample.strokes) + "]"
    return f'{{"id":{json.dumps(sample.id)},"label":{json.dumps(sample.label)},"strokes":{strokes}}}'


def _trajectory_line(traj: Trajectory) -> str:
    return (
        f'{{"id":{json.dumps(traj.id or "")},"label":{json.dumps(traj.label or "")},'
        f'"points":{_fmt_points(traj.points)}}}'
    )


def _header_line(ds: Dataset) -> str:
    return json.dumps(
        {"horizon": ds.horizon, "count": len(ds), "split": ds.split, "seed": ds.seed},
        separators=(",", ":"),
    )


def write_canonical(samples: Union[Sequence[RawSample], Dataset], destination) -> None:
    """Write raw samples (``strokes`` records) or a dataset (header plus
    ``points`` records), one JSON object per line."""
    path = Path(destination)
    if isinstance(samples, Dataset):
        lines = [_header_line(samples)] + [_trajectory_line(t) for t in samples.samples]
    else:
        lines = [_sample_line(s) for s in samples]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for line in lines:
                f.write(line + "\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def _read_records(source) -> List[Tuple[int, dict]]:
    path = Path(source)
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"malformed record ({e.msg})", lineno, path) from None
            if not isinstance(rec, dict):
                raise FormatError("record is not an object", lineno, path)
            records.append((lineno, rec))
    return records


def _require(rec: dict, key: str, lineno: int, path) -> object:
    if key not in rec:
        raise FormatError(f"missing required key {key!r}", lineno, path)
    return rec[key]


def _coerce_points(value, lineno, path) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError("coordinates are not numeric [x, y] pairs", lineno, path) from None
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2 or not np.all(np.isfinite(arr)):
        raise FormatError("coordinates are not finite [x, y] pairs", lineno, path)
    return arr


def load_canonical(source) -> List[RawSample]:
    """Read a canonical file.  Dataset files load as one stroke per sample."""
    path = Path(source)
    out = []
    for lineno, rec in _read_records(path):
        if "horizon" in rec and "strokes" not in rec and "points" not in rec:
            continue
        sid = _require(rec, "id", lineno, path)
        label = _require(rec, "label", lineno, path)
        if not isinstance(sid, str) or not isinstance(label, str):
            raise FormatError("'id' and 'label' must be strings", lineno, path)
        if "points" in rec and "strokes" not in rec:
            strokes = [_coerce_points(rec["points"], lineno, path)]
        else:
            value = _require(rec, "strokes", lineno, path)
            if not isinstance(value, list):
                raise FormatError("'strokes' must be an array", lineno, path)
            strokes = [_coerce_points(s, lineno, path) for s in value]
        out.append(RawSample(id=sid, label=label, strokes=strokes))
    return out


def load_dataset(source) -> Dataset:
    """Read a dataset file written by ``write_canonical(Dataset, ...)``."""
    path = Path(source)
    records = _read_records(path)
    if not records:
        raise FormatError("empty dataset file", None, path)
    lineno, header = records[0]
    horizon = _require(header, "horizon", lineno, path)
    count = _require(header, "count", lineno, path)
    samples = []
    for lineno, rec in records[1:]:
        pts = _coerce_points(_require(rec, "points", lineno, path), lineno, path)
        if len(pts) != horizon:
            raise FormatError(f"expected {horizon} points, got {len(pts)}", lineno, path)
        if pts.min(initial=0.0) < 0.0 or pts.max(initial=0.0) > 1.0:
            raise FormatError("points outside the unit square", lineno, path)
        samples.append(
            Trajectory(pts, label=_require(rec, "label", lineno, path), id=_require(rec, "id", lineno, path))
        )
    if len(samples) != count:
        raise FormatError(f"header declares {count} samples, found {len(samples)}", 1, path)
    return Dataset(
        horizon=int(horizon),
        samples=samples,
        split=str(header.get("split", "train")),
        seed=int(header.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# Preprocessing


def preprocess(sample: RawSample, horizon: int) -> Optional[Trajectory]:
    """Concatenate, normalize and resample one sample; ``None`` if unusable."""
    pts = concat_strokes(sample.strokes)
    if len(pts) == 0 or not np.all(np.isfinite(pts)):
        return None
    pts = resample_uniform(normalize_unit_square(pts), horizon)
    return Trajectory(pts, label=sample.label, id=sample.id)


def _preprocess_args(args):
    return preprocess(*args)


def split_sizes(n: int, train_fraction: float) -> Tuple[int, int]:
    n_train = math.floor(train_fraction * n + 1e-9)
    return n_train, n - n_train


def build_dataset(
    raw: Sequence[RawSample],
    horizon: int,
    train_fraction: float = 0.8,
    seed: int = 0,
    workers: int = 1,
) -> Tuple[Dataset, Dataset]:
    if not raw:
        raise ValueError("no samples to build a dataset from")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    jobs = [(s, horizon) for s in raw]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            processed = list(pool.map(_preprocess_args, jobs, chunksize=256))
    else:
        processed = [preprocess(*j) for j in jobs]
    kept = [t for t in processed if t is not None]
    dropped = len(processed) - len(kept)
    if dropped:
        logger.warning("dropped %d unprocessable sample(s)", dropped)
    order = np.random.default_rng(seed).permutation(len(kept))
    n_train, _ = split_sizes(len(kept), train_fraction)
    train = [kept[i] for i in order[:n_train]]
    test = [kept[i] for i in order[n_train:]]
    return (
        Dataset(horizon, train, split="train", seed=seed, dropped=dropped),
        Dataset(horizon, test, split="test", seed=seed, dropped=dropped),
    )
