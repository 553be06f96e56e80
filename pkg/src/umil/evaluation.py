"""Frame-level scoring and ROC/AUC reporting."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .datamodel import Dataset, VideoRecord

log = logging.getLogger(__name__)

SCHEMES = ("avg_prediction", "avg_feature")


class UndefinedAUCError(ValueError):
    pass


@dataclass
class FrameScoreSeries:
    video_id: str
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class MetricsReport:
    auc_overall: float
    auc_abnormal: float | None
    class_wise: dict[str, float] = field(default_factory=dict)
    roc_points: list[tuple[float, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        doc = {"auc_overall": self.auc_overall}
        if self.auc_abnormal is not None:
            doc["auc_abnormal"] = self.auc_abnormal
        doc["class_wise"] = dict(sorted(self.class_wise.items()))
        doc["roc_points"] = [[float(a), float(b)] for a, b in self.roc_points]
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"


def coarse_scores(model, x: np.ndarray, scheme: str = "avg_prediction", coarse_segments: int = 32) -> np.ndarray:
    """One score per coarse segment of a video's fine snippets."""
    if scheme == "avg_prediction":
        return kernels.segment_means(model.predict(x).reshape(-1, 1), coarse_segments)[:, 0]
    if scheme == "avg_feature":
        return model.predict(kernels.segment_means(x, coarse_segments))
    raise ValueError(f"unknown scoring scheme {scheme!r}")


def frame_scores(
    model, video: VideoRecord, x: np.ndarray, scheme: str = "avg_prediction", coarse_segments: int = 32
) -> FrameScoreSeries:
    """Spread coarse-segment scores over every frame each segment covers."""
    m = x.shape[0]
    if m < 1:
        raise ValueError(f"video {video.id} has no snippets")
    bounds = kernels.segment_bounds(m, coarse_segments)
    seg = coarse_scores(model, x, scheme, coarse_segments)
    frames = np.repeat(seg, np.diff(bounds) * video.frames_per_fine_snippet)
    return FrameScoreSeries(video.id, frames, video.frame_labels())


def roc_auc(scores, labels):
    """Tie-aware ROC AUC (Mann-Whitney with half credit for ties) and the ROC points."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedAUCError("AUC is undefined for single-class input")
    order = np.argsort(-scores, kind="stable")
    fpr, tpr, auc = kernels.roc_sweep(scores[order], labels[order])
    return auc, list(zip(fpr.tolist(), tpr.tolist()))


def _pooled(series: list[FrameScoreSeries]):
    return np.concatenate([s.scores for s in series]), np.concatenate([s.labels for s in series])


def evaluate(model, dataset: Dataset, scheme: str = "avg_prediction", coarse_segments: int = 32) -> MetricsReport:
    """AUC over all test frames, over abnormal test videos, and per anomaly class."""
    videos = dataset.videos("test")
    if not videos:
        raise ValueError("dataset has no test videos")
    series = {v.id: frame_scores(model, v, dataset.features[v.id], scheme, coarse_segments) for v in videos}
    auc_o, points = roc_auc(*_pooled(list(series.values())))
    abnormal = [v for v in videos if v.label == 1]
    auc_a = None
    class_wise = {}
    if abnormal:
        auc_a = roc_auc(*_pooled([series[v.id] for v in abnormal]))[0]
        names = sorted({v.class_name for v in abnormal if v.class_name})
        for name in names:
            group = [series[v.id] for v in abnormal if v.class_name == name]
            try:
                class_wise[name] = roc_auc(*_pooled(group))[0]
            except UndefinedAUCError:
                log.warning("class %s: AUC undefined (single-class frames)", name)
    else:
        log.warning("no abnormal test videos; auc_abnormal omitted")
    return MetricsReport(auc_o, auc_a, class_wise, points)


def export_roc_csv(points, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for fpr, tpr in points:
            w.writerow([repr(float(fpr)), repr(float(tpr))])


def fpr_at_tpr(pos_scores, neg_scores, tpr: float = 0.8) -> float:
    """False-positive rate on ``neg_scores`` at the largest threshold reaching ``tpr`` on ``pos_scores``."""
    pos = np.sort(np.asarray(pos_scores, dtype=np.float64))[::-1]
    if pos.size == 0:
        raise ValueError("no positive scores")
    k = max(1, math.ceil(tpr * pos.size))
    thr = pos[k - 1]
    return float(np.mean(np.asarray(neg_scores) >= thr))
