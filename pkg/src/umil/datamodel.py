"""Datasets on disk and in memory, plus the per-snippet prediction history.

On-disk layout::

    root/manifest.json          {"feature_dim", "frames_per_fine_snippet", "videos": [...]}
    root/features/<id>.csv      one fine snippet per line, d comma-separated reals, no header
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

HISTORY_LEN = 5


class DatasetError(Exception):
    """Raised when a dataset directory cannot be loaded as declared."""


@dataclass
class VideoRecord:
    id: str
    label: int
    fine_snippet_count: int
    frames_per_fine_snippet: int
    class_name: str | None = None
    split: str = "train"
    anomaly_intervals: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DatasetError(f"video {self.id}: label must be 0 or 1, got {self.label}")
        if self.fine_snippet_count < 1:
            raise DatasetError(f"video {self.id}: needs at least one fine snippet")
        n_frames = self.n_frames
        prev_end = 0
        for iv in self.anomaly_intervals:
            start, end = iv
            if not (prev_end <= start < end <= n_frames):
                raise DatasetError(f"video {self.id}: bad anomaly interval {iv} (frames 0..{n_frames})")
            prev_end = end
        if self.label == 0 and self.anomaly_intervals:
            raise DatasetError(f"video {self.id}: normal video with anomaly intervals")

    @property
    def n_frames(self) -> int:
        return self.fine_snippet_count * self.frames_per_fine_snippet

    def frame_labels(self) -> np.ndarray:
        gt = np.zeros(self.n_frames, dtype=np.int8)
        for start, end in self.anomaly_intervals:
            gt[start:end] = 1
        return gt

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SnippetRef:
    video_id: str
    index: int


@dataclass
class Manifest:
    feature_dim: int
    frames_per_fine_snippet: int
    videos: list[VideoRecord]

    def by_id(self) -> dict[str, VideoRecord]:
        return {v.id: v for v in self.videos}

    def split(self, name: str) -> list[VideoRecord]:
        return [v for v in self.videos if v.split == name]

    def to_json(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "frames_per_fine_snippet": self.frames_per_fine_snippet,
            "videos": [v.to_json() for v in self.videos],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Manifest":
        fps = int(doc["frames_per_fine_snippet"])
        videos = []
        for v in doc["videos"]:
            v = dict(v)
            v.setdefault("frames_per_fine_snippet", fps)
            videos.append(VideoRecord(**v))
        return cls(int(doc["feature_dim"]), fps, videos)


class FeatureStore:
    """Per-video (m, d) float64 matrices, read-only once built."""

    def __init__(self, feature_dim: int, features: dict[str, np.ndarray]):
        self.feature_dim = feature_dim
        self._features = {}
        for vid, x in features.items():
            x = np.ascontiguousarray(x, dtype=np.float64)
            if x.ndim != 2 or x.shape[1] != feature_dim:
                raise DatasetError(f"video {vid}: features have shape {x.shape}, expected (m, {feature_dim})")
            if not np.isfinite(x).all():
                raise DatasetError(f"video {vid}: non-finite feature value")
            x.flags.writeable = False
            self._features[vid] = x

    def __getitem__(self, video_id: str) -> np.ndarray:
        return self._features[video_id]

    def __contains__(self, video_id: str) -> bool:
        return video_id in self._features

    def __len__(self):
        return len(self._features)


@dataclass
class Dataset:
    manifest: Manifest
    features: FeatureStore

    def videos(self, split: str | None = None) -> list[VideoRecord]:
        return list(self.manifest.videos) if split is None else self.manifest.split(split)


# --------------------------------------------------------------------------- CSV / JSON I/O


def _format_row(row: np.ndarray) -> str:
    # repr() of a Python float is the shortest string that round-trips
    return ",".join(repr(float(v)) for v in row)


def write_dataset(root, manifest: Manifest, features: FeatureStore | dict) -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=1)
        fh.write("\n")
    for v in manifest.videos:
        x = features[v.id]
        with open(root / "features" / f"{v.id}.csv", "w", encoding="utf-8", newline="\n") as fh:
            for row in x:
                fh.write(_format_row(row))
                fh.write("\n")


def _read_csv(path: Path, video_id: str, d: int) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d:
                raise DatasetError(f"video {video_id}, line {lineno}: {len(parts)} values, expected {d}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DatasetError(f"video {video_id}, line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"video {video_id}, line {lineno}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(len(rows), d)


def load_dataset(root) -> Dataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DatasetError(f"missing manifest: {mpath}")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = Manifest.from_json(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"malformed manifest {mpath}: {exc}") from None
    feats = {}
    for v in manifest.videos:
        path = root / "features" / f"{v.id}.csv"
        if not path.is_file():
            raise DatasetError(f"video {v.id}: missing feature file {path}")
        x = _read_csv(path, v.id, manifest.feature_dim)
        if x.shape[0] != v.fine_snippet_count:
            raise DatasetError(
                f"video {v.id}: {x.shape[0]} feature rows but manifest declares {v.fine_snippet_count}"
            )
        feats[v.id] = x
    return Dataset(manifest, FeatureStore(manifest.feature_dim, feats))


# --------------------------------------------------------------------------- prediction history


class PredictionHistory:
    """Last ``HISTORY_LEN`` predictions for every snippet of a fixed snippet universe.

    Row ``k`` holds snippet ``refs[k]``'s values oldest to newest in
    ``values[k, :count[k]]``.
    """

    def __init__(self, refs: list[SnippetRef], capacity: int = HISTORY_LEN):
        self.refs = list(refs)
        self.capacity = capacity
        self.values = np.zeros((len(self.refs), capacity))
        self.count = np.zeros(len(self.refs), dtype=np.int64)
        self._row = {r: k for k, r in enumerate(self.refs)}

    @classmethod
    def for_videos(cls, videos: list[VideoRecord], capacity: int = HISTORY_LEN) -> "PredictionHistory":
        return cls([SnippetRef(v.id, i) for v in videos for i in range(v.fine_snippet_count)], capacity)

    def __len__(self):
        return len(self.refs)

    def row(self, ref: SnippetRef) -> int:
        return self._row[ref]

    def update_all(self, preds: np.ndarray) -> None:
        """Append one prediction per snippet, in ``refs`` order."""
        preds = np.asarray(preds, dtype=np.float64)
        if preds.shape != (len(self.refs),):
            raise ValueError(f"expected {len(self.refs)} predictions, got shape {preds.shape}")
        full = self.count >= self.capacity
        if full.any():
            self.values[full, :-1] = self.values[full, 1:]
        pos = np.minimum(self.count, self.capacity - 1)
        self.values[np.arange(len(self.refs)), pos] = preds
        self.count = np.minimum(self.count + 1, self.capacity)

    def update(self, ref: SnippetRef, new_pred: float) -> None:
        k = self._row[ref]
        if self.count[k] >= self.capacity:
            self.values[k, :-1] = self.values[k, 1:].copy()
            self.values[k, -1] = new_pred
        else:
            self.values[k, self.count[k]] = new_pred
            self.count[k] += 1

    def get(self, ref: SnippetRef) -> list[float]:
        k = self._row[ref]
        return self.values[k, : self.count[k]].tolist()

    def variances(self) -> np.ndarray:
        return kernels.ring_variance(self.values, self.count)

    def means(self) -> np.ndarray:
        total = np.zeros(len(self.refs))
        for c in range(self.capacity):
            total += np.where(c < self.count, self.values[:, c], 0.0)
        return total / np.maximum(self.count, 1)

    def latest(self) -> np.ndarray:
        return self.values[np.arange(len(self.refs)), np.maximum(self.count - 1, 0)]


def history_update(h: list[float], new_pred: float, capacity: int = HISTORY_LEN) -> list[float]:
    """Append to a single-snippet history list, evicting the oldest value when full."""
    out = list(h) + [float(new_pred)]
    return out[-capacity:]


def history_variance(h) -> float:
    """Population variance of a single-snippet history (0 for a singleton)."""
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ValueError("empty history")
    return float(kernels.ring_variance(h.reshape(1, -1), np.array([h.size]))[0])
