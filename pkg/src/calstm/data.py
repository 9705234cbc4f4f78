"""Trajectory ingestion, frame subsampling, windowing, normalization and folds.

Canonical on-disk formats, both UTF-8 TSV with an optional header row:
  trajectories.tsv: frame <TAB> agent_id <TAB> x <TAB> y   (x, y in meters)
  scene.tsv:        label <TAB> x <TAB> y                  (row order fixes the
                                                            context index k)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataFormatError, UsageError

log = logging.getLogger(__name__)


@dataclass
class TrajectoryDataset:
    scene_id: str
    # parallel arrays sorted by (frame, agent); at most one record per pair
    frames: np.ndarray  # (R,) int
    agents: np.ndarray  # (R,) int
    xy: np.ndarray      # (R, 2) float

    @classmethod
    def from_records(cls, scene_id: str, records) -> "TrajectoryDataset":
        records = sorted(records)
        frames = np.array([r[0] for r in records], dtype=np.int64)
        agents = np.array([r[1] for r in records], dtype=np.int64)
        xy = np.array([[r[2], r[3]] for r in records], dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(xy)):
            raise DataFormatError(f"{scene_id}: non-finite coordinates")
        pairs = set()
        for f, a in zip(frames, agents):
            if (int(f), int(a)) in pairs:
                raise DataFormatError(f"{scene_id}: duplicate record for frame {f}, agent {a}")
            pairs.add((int(f), int(a)))
        return cls(scene_id, frames, agents, xy)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_values(self) -> np.ndarray:
        return np.unique(self.frames)

    @property
    def agent_ids(self) -> list[int]:
        return sorted(int(a) for a in np.unique(self.agents))

    def by_frame(self) -> dict[int, dict[int, tuple[float, float]]]:
        out: dict[int, dict[int, tuple[float, float]]] = {}
        for f, a, (x, y) in zip(self.frames, self.agents, self.xy):
            out.setdefault(int(f), {})[int(a)] = (float(x), float(y))
        return out

    def records(self):
        for f, a, (x, y) in zip(self.frames, self.agents, self.xy):
            yield int(f), int(a), float(x), float(y)


@dataclass
class Scene:
    scene_id: str
    labels: list[str]
    points: np.ndarray  # (K, 2) float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.labels) != len(self.points):
            raise ConfigurationError("scene labels and points disagree in length")
        if len(set(self.labels)) != len(self.labels):
            raise DataFormatError(f"{self.scene_id}: duplicate static point labels")

    @property
    def k(self) -> int:
        return len(self.labels)

    @classmethod
    def empty(cls, scene_id: str = "empty") -> "Scene":
        return cls(scene_id, [], np.zeros((0, 2)))


def _parse_fields(line: str, lineno: int, path) -> list[str]:
    fields = line.rstrip("\n").split("\t")
    if len(fields) < 4:
        raise DataFormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
    return fields


def _int_field(text: str, name: str, lineno: int, path) -> int:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: non-numeric {name} {text!r}") from None
    if value != int(value):
        raise DataFormatError(f"{path}:{lineno}: {name} must be an integer, got {text!r}")
    return int(value)


def _float_field(text: str, name: str, lineno: int, path) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: non-numeric {name} {text!r}") from None


def load_trajectories(path, scene_id: str | None = None) -> TrajectoryDataset:
    """Parse the canonical trajectory TSV; validates and sorts by (frame, agent)."""
    path = Path(path)
    scene_id = scene_id or path.parent.name or path.stem
    records = []
    seen: dict[tuple[int, int], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if lineno == 1 and line.lstrip()[:1].isalpha():
                continue  # header row
            fields = _parse_fields(line, lineno, path)
            frame = _int_field(fields[0], "frame", lineno, path)
            agent = _int_field(fields[1], "agent_id", lineno, path)
            x = _float_field(fields[2], "x", lineno, path)
            y = _float_field(fields[3], "y", lineno, path)
            if (frame, agent) in seen:
                raise DataFormatError(
                    f"{path}:{lineno}: duplicate (frame, agent) = ({frame}, {agent}), "
                    f"first seen on line {seen[(frame, agent)]}"
                )
            seen[(frame, agent)] = lineno
            records.append((frame, agent, x, y))
    return TrajectoryDataset.from_records(scene_id, records)


def load_scene(path, scene_id: str | None = None) -> Scene:
    """Parse the canonical scene TSV of labeled static points."""
    path = Path(path)
    scene_id = scene_id or path.parent.name or path.stem
    labels: list[str] = []
    points: list[tuple[float, float]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) < 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            if lineno == 1 and fields[0].strip().lower() == "label":
                continue
            label = fields[0].strip()
            x = _float_field(fields[1], "x", lineno, path)
            y = _float_field(fields[2], "y", lineno, path)
            if label in labels:
                raise DataFormatError(f"{path}:{lineno}: duplicate label {label!r}")
            labels.append(label)
            points.append((x, y))
    return Scene(scene_id, labels, np.array(points, dtype=np.float64).reshape(-1, 2))


def save_trajectories(dataset: TrajectoryDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame\tagent_id\tx\ty\n")
        for f, a, x, y in dataset.records():
            fh.write(f"{f}\t{a}\t{x!r}\t{y!r}\n")


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label\tx\ty\n")
        for label, (x, y) in zip(scene.labels, scene.points):
            fh.write(f"{label}\t{float(x)!r}\t{float(y)!r}\n")


def subsample(dataset: TrajectoryDataset, stride: int = 10) -> TrajectoryDataset:
    """Keep one frame every `stride` recorded steps; re-index frames to 0..F-1.

    The recorded step is the smallest positive gap between frame indices, so
    data annotated every 10 raw video frames still drops 9 of 10 steps.
    """
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    frames = dataset.frame_values
    if len(frames) == 0:
        return dataset
    base = int(np.min(np.diff(frames))) if len(frames) > 1 else 1
    first = int(frames[0])
    keep = [int(f) for f in frames if (int(f) - first) % (stride * base) == 0]
    remap = {f: i for i, f in enumerate(keep)}
    records = [
        (remap[f], a, x, y) for f, a, x, y in dataset.records() if f in remap
    ]
    return TrajectoryDataset.from_records(dataset.scene_id, records)


@dataclass
class SceneWindow:
    """A fixed-length slice of a scene: agents observed for t_obs steps, scored
    over the following t_pred steps. Only agents present for the full window
    participate; everyone else appears in `extras` for the frames they exist in
    and contributes to pooling only."""

    t_obs: int
    t_pred: int
    agent_ids: list[int]
    positions: np.ndarray  # (A, t_obs + t_pred, 2)
    extras: list[list[tuple[int, float, float]]] = field(default_factory=list)
    start: int = 0

    def __post_init__(self):
        if self.t_obs < 2:
            raise ConfigurationError(f"t_obs must be >= 2, got {self.t_obs}")
        if self.t_pred < 1:
            raise ConfigurationError(f"t_pred must be >= 1, got {self.t_pred}")
        self.positions = np.asarray(self.positions, dtype=np.float64)
        expected = (len(self.agent_ids), self.t_obs + self.t_pred, 2)
        if self.positions.shape != expected:
            raise ConfigurationError(
                f"window positions shape {self.positions.shape} != {expected}"
            )
        if not self.extras:
            self.extras = [[] for _ in range(self.t_obs + self.t_pred)]

    @property
    def length(self) -> int:
        return self.t_obs + self.t_pred

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    def extra_positions(self, t: int) -> np.ndarray:
        return np.array([(x, y) for _, x, y in self.extras[t]], dtype=np.float64).reshape(-1, 2)


def make_windows(
    dataset: TrajectoryDataset,
    t_obs: int = 8,
    t_pred: int = 12,
    stride: int | None = None,
) -> list[SceneWindow]:
    """Sliding windows over the sampled frame sequence.

    stride defaults to 1 for training; pass t_obs+t_pred for non-overlapping
    evaluation windows. Windows without any full-span agent are dropped.
    """
    if t_obs < 2:
        raise ConfigurationError(f"t_obs must be >= 2, got {t_obs}")
    if t_pred < 1:
        raise ConfigurationError(f"t_pred must be >= 1, got {t_pred}")
    length = t_obs + t_pred
    stride = stride or 1
    frames = [int(f) for f in dataset.frame_values]
    if len(frames) < length:
        log.info(
            "%s: only %d sampled frames, shorter than a %d-frame window; no windows",
            dataset.scene_id, len(frames), length,
        )
        return []
    by_frame = dataset.by_frame()
    windows: list[SceneWindow] = []
    skipped = 0
    for s in range(0, len(frames) - length + 1, stride):
        span = frames[s : s + length]
        present = [set(by_frame.get(f, {})) for f in span]
        full = sorted(set.intersection(*present))
        if not full:
            skipped += 1
            continue
        positions = np.array(
            [[by_frame[f][a] for f in span] for a in full], dtype=np.float64
        )
        extras = [
            [(a, *by_frame[f][a]) for a in sorted(present_t - set(full))]
            for f, present_t in zip(span, present)
        ]
        windows.append(
            SceneWindow(t_obs, t_pred, [int(a) for a in full], positions, extras, start=s)
        )
    if skipped:
        log.info("%s: dropped %d windows with no full-span agent", dataset.scene_id, skipped)
    return windows


def make_folds(scene_ids: list[str], k: int) -> list[dict]:
    """Leave-one-group-out folds over scenes in listed order."""
    n = len(scene_ids)
    if k < 2:
        raise ConfigurationError(f"need k >= 2 folds, got {k}")
    if k > n:
        raise ConfigurationError(f"cannot make {k} folds from {n} scenes")
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    folds = []
    at = 0
    for size in sizes:
        test = list(scene_ids[at : at + size])
        train = [s for s in scene_ids if s not in test]
        folds.append({"train": train, "test": test})
        at += size
    return folds


def save_folds(folds: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"folds": folds}, fh, indent=2)
        fh.write("\n")


def load_folds(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return doc["folds"]


@dataclass(frozen=True)
class NormTransform:
    """Isotropic map p -> (p - center) / scale taking the scene box into [-1, 1]^2."""

    center: tuple[float, float]
    scale: float

    def apply(self, xy: np.ndarray) -> np.ndarray:
        return (np.asarray(xy, dtype=np.float64) - np.asarray(self.center)) / self.scale

    def invert(self, xy: np.ndarray) -> np.ndarray:
        return np.asarray(xy, dtype=np.float64) * self.scale + np.asarray(self.center)


def normalize(dataset: TrajectoryDataset, scene: Scene) -> tuple[TrajectoryDataset, Scene, NormTransform]:
    """Center and isotropically rescale trajectories and static points together."""
    if len(dataset) == 0:
        raise UsageError("cannot normalize an empty dataset")
    pts = dataset.xy
    if scene.k:
        pts = np.vstack([pts, scene.points])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2.0
    scale = float(max(hi[0] - lo[0], hi[1] - lo[1]) / 2.0)
    if scale == 0.0:
        scale = 1.0  # degenerate box
    transform = NormTransform((float(center[0]), float(center[1])), scale)
    new_xy = transform.apply(dataset.xy)
    dataset2 = TrajectoryDataset(dataset.scene_id, dataset.frames.copy(), dataset.agents.copy(), new_xy)
    scene2 = Scene(scene.scene_id, list(scene.labels), transform.apply(scene.points) if scene.k else scene.points)
    return dataset2, scene2, transform


@dataclass
class PreparedScene:
    """A scene normalized to [-1,1]^2 with its windows and inverse transform."""

    scene_id: str
    dataset: TrajectoryDataset
    scene: Scene
    transform: NormTransform
    windows: list[SceneWindow]


def prepare_scene(
    dataset: TrajectoryDataset,
    scene: Scene,
    t_obs: int = 8,
    t_pred: int = 12,
    window_stride: int | None = None,
    subsample_stride: int = 1,
) -> PreparedScene:
    """subsample -> normalize -> window, the standard path from raw data to model food."""
    sampled = subsample(dataset, subsample_stride)
    norm_data, norm_scene, transform = normalize(sampled, scene)
    windows = make_windows(norm_data, t_obs, t_pred, stride=window_stride)
    return PreparedScene(dataset.scene_id, norm_data, norm_scene, transform, windows)
