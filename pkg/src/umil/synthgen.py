"""Seeded generator of weakly labelled feature datasets with a context shortcut.

Each fine snippet is isotropic Gaussian noise plus ``signal_scale`` along the
anomaly axis (``e_a``, coordinate 0) when anomalous and along the context axis
(``e_c``, coordinate 1) when context is present.  In training, context rides
along with most anomalies, so a detector can score high by keying on context
alone.  The test split breaks that coupling: half of the abnormal test
videos show the anomaly without context, and context also appears on
normal snippets of every test video at ``test_context_rate``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datamodel import Dataset, FeatureStore, Manifest, VideoRecord, write_dataset

ANOMALY_AXIS = 0
CONTEXT_AXIS = 1


@dataclass
class GeneratorConfig:
    feature_dim: int = 16
    n_train_normal: int = 80
    n_train_abnormal: int = 80
    n_test_normal: int = 20
    n_test_abnormal: int = 20
    snippets_per_video: int = 40
    frames_per_fine_snippet: int = 30
    anomaly_len_min: int = 4
    anomaly_len_max: int = 12
    bias_rate: float = 0.9
    context_in_normal_rate: float = 0.0
    counter_bias_test_rate: float = 0.5
    noise_sigma: float = 0.5
    signal_scale: float = 2.0
    test_context_rate: float = 0.3
    train_abnormal_context_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        rates = ("bias_rate", "context_in_normal_rate", "counter_bias_test_rate", "test_context_rate",
                 "train_abnormal_context_rate")
        for name in rates:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 1 <= self.anomaly_len_min <= self.anomaly_len_max < self.snippets_per_video:
            raise ValueError("need 1 <= anomaly_len_min <= anomaly_len_max < snippets_per_video")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2 (anomaly and context axes)")


def anomaly_direction(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[ANOMALY_AXIS] = 1.0
    return e


def context_direction(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[CONTEXT_AXIS] = 1.0
    return e


def _interval(rng, cfg):
    length = int(rng.integers(cfg.anomaly_len_min, cfg.anomaly_len_max + 1))
    start = int(rng.integers(0, cfg.snippets_per_video - length + 1))
    flags = np.zeros(cfg.snippets_per_video, dtype=bool)
    flags[start : start + length] = True
    return flags, start, start + length


def generate_arrays(cfg: GeneratorConfig):
    """Build (manifest, features, oracle) in memory."""
    rng = np.random.default_rng(cfg.seed)
    m, d = cfg.snippets_per_video, cfg.feature_dim
    fps = cfg.frames_per_fine_snippet
    e_a, e_c = anomaly_direction(d), context_direction(d)
    videos, feats, oracle = [], {}, {}

    def emit(vid, label, split, anomaly, context, class_name=None, interval=None):
        x = cfg.noise_sigma * rng.standard_normal((m, d))
        x += cfg.signal_scale * (anomaly[:, None] * e_a + context[:, None] * e_c)
        intervals = [[interval[0] * fps, interval[1] * fps]] if interval is not None else []
        videos.append(VideoRecord(vid, label, m, fps, class_name, split, intervals))
        feats[vid] = x
        oracle[vid] = [{"anomaly": bool(a), "context": bool(c)} for a, c in zip(anomaly, context)]

    for k in range(cfg.n_train_normal):
        context = rng.random(m) < cfg.context_in_normal_rate
        emit(f"train_normal_{k:04d}", 0, "train", np.zeros(m, dtype=bool), context)
    for k in range(cfg.n_train_abnormal):
        anomaly, _, _ = _interval(rng, cfg)
        context = anomaly & (rng.random(m) < cfg.bias_rate)
        context |= ~anomaly & (rng.random(m) < cfg.train_abnormal_context_rate)
        # training intervals stay hidden: weak video-level labels only
        emit(f"train_abnormal_{k:04d}", 1, "train", anomaly, context, "anomaly")
    for k in range(cfg.n_test_normal):
        context = rng.random(m) < cfg.test_context_rate
        emit(f"test_normal_{k:04d}", 0, "test", np.zeros(m, dtype=bool), context)
    n_counter = int(round(cfg.counter_bias_test_rate * cfg.n_test_abnormal))
    for k in range(cfg.n_test_abnormal):
        anomaly, start, end = _interval(rng, cfg)
        counter = k < n_counter
        context = ~anomaly & (rng.random(m) < cfg.test_context_rate)
        if not counter:
            context |= anomaly
        name = "plain_anomaly" if counter else "context_anomaly"
        emit(f"test_abnormal_{k:04d}", 1, "test", anomaly, context, name, (start, end))

    manifest = Manifest(d, fps, videos)
    return manifest, FeatureStore(d, feats), oracle


def generate(cfg: GeneratorConfig, out_dir) -> Path:
    """Write manifest.json, features/*.csv and oracle.json under ``out_dir``."""
    out = Path(out_dir)
    manifest, feats, oracle = generate_arrays(cfg)
    write_dataset(out, manifest, feats)
    with open(out / "oracle.json", "w", encoding="utf-8") as fh:
        json.dump(oracle, fh)
        fh.write("\n")
    with open(out / "generator.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def load_oracle(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "oracle.json"
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def flag_correlation(oracle: dict, video_ids) -> float:
    """Pearson correlation of anomaly and context flags over the given videos' snippets (0 if degenerate)."""
    a = np.array([s["anomaly"] for v in video_ids for s in oracle[v]], dtype=np.float64)
    c = np.array([s["context"] for v in video_ids for s in oracle[v]], dtype=np.float64)
    if a.std() == 0 or c.std() == 0:
        return 0.0
    return float(np.corrcoef(a, c)[0, 1])


class _AxisScorer:
    def __init__(self, direction):
        self.direction = direction

    def predict(self, x):
        return np.asarray(x) @ self.direction


def oracle_bayes_auc(dataset: Dataset, oracle: dict | None = None, coarse_segments: int = 32) -> float:
    """Frame-level AUC of the context-free ideal score <x, e_a> on the test split."""
    from .evaluation import evaluate

    scorer = _AxisScorer(anomaly_direction(dataset.manifest.feature_dim))
    return evaluate(scorer, dataset, "avg_prediction", coarse_segments).auc_overall


def probe_sets(dataset: Dataset, oracle: dict):
    """Test snippets grouped for bias probes.

    Returns ``(anomalous, context_only_normal)`` lists of ``(video_id, index)``:
    every anomalous test snippet, and context-only snippets of normal test videos.
    """
    pos, probes = [], []
    for v in dataset.videos("test"):
        for i, s in enumerate(oracle[v.id]):
            if s["anomaly"]:
                pos.append((v.id, i))
            elif v.label == 0 and s["context"]:
                probes.append((v.id, i))
    return pos, probes
