"""Split the snippet universe into a confident set and an ambiguous set."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .datamodel import PredictionHistory, SnippetRef, VideoRecord

STRATEGIES = ("historical_variance", "max_confidence")
LABEL_MODES = ("rounded_mean", "video_label")


@dataclass
class DivisionConfig:
    confident_fraction: float = 0.30
    strategy: str = "historical_variance"
    label_mode: str = "rounded_mean"

    def __post_init__(self):
        if not 0.0 < self.confident_fraction <= 1.0:
            raise ValueError("confident_fraction must lie in (0, 1]")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown division strategy {self.strategy!r}")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"unknown label mode {self.label_mode!r}")


@dataclass
class ConfidentSet:
    refs: list[SnippetRef]
    rows: np.ndarray  # rows into the PredictionHistory
    labels: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.refs)

    def by_video(self) -> dict[str, list[int]]:
        out = defaultdict(list)
        for k, r in enumerate(self.refs):
            out[r.video_id].append(k)
        return dict(out)


@dataclass
class AmbiguousSet:
    refs: list[SnippetRef]
    rows: np.ndarray

    def __len__(self):
        return len(self.refs)


def _confident_size(fraction: float, n: int) -> int:
    return min(n, int(math.floor(fraction * n + 0.5)))


def _split(history: PredictionHistory, primary_key: np.ndarray, n_conf: int):
    vids = np.array([r.video_id for r in history.refs])
    idx = np.array([r.index for r in history.refs], dtype=np.int64)
    # lexsort: last key is primary
    order = np.lexsort((idx, vids, primary_key))
    c_rows = np.sort(order[:n_conf])
    a_rows = np.sort(order[n_conf:])
    refs = history.refs
    return (
        ConfidentSet([refs[k] for k in c_rows], c_rows),
        AmbiguousSet([refs[k] for k in a_rows], a_rows),
    )


def divide_snippets(history: PredictionHistory, config: DivisionConfig):
    """Lowest-variance fraction of snippets becomes the confident set.

    Order is (variance, video id, snippet index) ascending.  Snippets with
    fewer than two stored predictions rank last and are never confident.
    """
    if config.strategy == "max_confidence":
        return max_confidence_divide(history, config.confident_fraction)
    n = len(history)
    if n == 0:
        raise ValueError("cannot divide an empty dataset")
    var = history.variances()
    observed = history.count >= 2
    var = np.where(observed, var, np.inf)
    n_conf = min(_confident_size(config.confident_fraction, n), int(observed.sum()))
    return _split(history, var, n_conf)


def max_confidence_divide(history: PredictionHistory, k: float):
    """Confident set = snippets whose latest prediction is furthest from 0.5."""
    n = len(history)
    if n == 0:
        raise ValueError("cannot divide an empty dataset")
    p = history.latest()
    conf = np.maximum(p, 1.0 - p)
    conf = np.where(history.count >= 1, conf, -np.inf)
    n_conf = min(_confident_size(k, n), int((history.count >= 1).sum()))
    return _split(history, -conf, n_conf)


def assign_confident_labels(
    c: ConfidentSet,
    videos: dict[str, VideoRecord],
    history: PredictionHistory,
    label_mode: str = "rounded_mean",
    use_latest: bool = False,
) -> ConfidentSet:
    """Pseudo-labels for confident snippets.

    Normal-video snippets are always 0.  Abnormal-video snippets get the
    rounded mean of their history (or the latest prediction when
    ``use_latest``), or 1 under ``video_label``.
    """
    if label_mode not in LABEL_MODES:
        raise ValueError(f"unknown label mode {label_mode!r}")
    score = history.latest() if use_latest else history.means()
    labels = np.zeros(len(c), dtype=np.int64)
    for k, (ref, row) in enumerate(zip(c.refs, c.rows)):
        if videos[ref.video_id].label == 0:
            continue
        labels[k] = 1 if label_mode == "video_label" else int(score[row] >= 0.5)
    c.labels = labels
    return c
