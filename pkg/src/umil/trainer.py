"""MIL pretraining, the UMIL epoch loop and end-to-end runs."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import objectives as obj
from .datamodel import Dataset, PredictionHistory, load_dataset
from .division import DivisionConfig, assign_confident_labels, divide_snippets
from .evaluation import MetricsReport, evaluate
from .model import EncoderSpec, Model
from .numerics import NumericalError, OptimizerConfig, adamw_step, cosine_warmup_lr

log = logging.getLogger(__name__)

C_MODES = ("video_max", "per_snippet")


@dataclass
class RunConfig:
    seed: int = 0
    batch_size: int = 8
    epochs_mil: int = 30
    epochs_umil: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    weights: obj.ObjectiveWeights = field(default_factory=obj.ObjectiveWeights)
    division: DivisionConfig = field(default_factory=DivisionConfig)
    c_supervision_mode: str = "video_max"
    freeze_encoder: bool = False
    hidden_dims: list[int] = field(default_factory=lambda: [64])
    output_dim: int = 32
    scheme: str = "avg_prediction"
    coarse_segments: int = 32

    def __post_init__(self):
        if self.epochs_mil < 0 or self.epochs_umil < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.c_supervision_mode not in C_MODES:
            raise ValueError(f"unknown c_supervision_mode {self.c_supervision_mode!r}")

    def schedule(self) -> OptimizerConfig:
        opt = OptimizerConfig(**asdict(self.optimizer))
        opt.total_epochs = self.epochs_mil + self.epochs_umil
        return opt


@dataclass
class EpochReport:
    epoch: int
    phase: str
    losses: dict
    n_confident: int
    n_ambiguous: int
    lr: float
    wall_time: float
    pair_terms_skipped: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def _check_finite(name, value, epoch, step):
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {name} loss ({value}) at epoch {epoch}, step {step}")


class _Cycler:
    """Endless stream of indices: successive seeded permutations of ``n`` items."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.buf = np.empty(0, dtype=np.int64)

    def take(self, b: int) -> np.ndarray:
        while self.buf.size < b:
            self.buf = np.concatenate([self.buf, self.rng.permutation(self.n)])
        out, self.buf = self.buf[:b], self.buf[b:]
        return out


class Trainer:
    """Holds the model, the prediction history and the random streams of one run.

    Separate generators drive initialisation, MIL batches, confident batches,
    ambiguous batches and augmentation noise, so zeroing a loss weight never
    shifts the sampling of any other term.
    """

    def __init__(self, dataset: Dataset, config: RunConfig):
        self.dataset = dataset
        self.config = config
        self.videos = dataset.videos("train")
        if not self.videos:
            raise ValueError("dataset has no training videos")
        self.video_by_id = {v.id: v for v in self.videos}
        self.X = np.concatenate([dataset.features[v.id] for v in self.videos])
        self.offsets = np.concatenate([[0], np.cumsum([v.fine_snippet_count for v in self.videos])])
        self.snippet_video = np.repeat(np.arange(len(self.videos)), [v.fine_snippet_count for v in self.videos])
        self.history = PredictionHistory.for_videos(self.videos)
        streams = np.random.SeedSequence(config.seed).spawn(5)
        self.rng_init, self.rng_mil, self.rng_c, self.rng_a, self.rng_aug = (
            np.random.default_rng(s) for s in streams
        )
        spec = EncoderSpec(
            dataset.manifest.feature_dim, list(config.hidden_dims), config.output_dim, config.freeze_encoder
        )
        self.model = Model.init(spec, self.rng_init)
        self.opt = config.schedule()
        self.epoch = 0  # global epoch counter driving the LR schedule
        self.reports: list[EpochReport] = []

    # ------------------------------------------------------------------ helpers

    def _lr(self, step_in_epoch: int, steps: int) -> float:
        total = max(self.opt.total_epochs, 1)
        return cosine_warmup_lr((self.epoch + step_in_epoch / steps) / total, self.opt)

    def _step(self, lr: float) -> None:
        self.model.step += 1
        adamw_step(self.model.trainable(), self.opt, lr, self.model.step)

    def refresh_history(self) -> np.ndarray:
        p = self.model.predict(self.X)
        self.history.update_all(p)
        return p

    def _augment(self, X):
        return obj.augment(X, self.config.weights.aug_sigma, self.rng_aug)

    # ------------------------------------------------------------------ MIL

    def mil_epoch(self) -> EpochReport:
        """One epoch of bag-level MIL (max over each video's snippets) plus self-training."""
        t0 = time.perf_counter()
        b, w = self.config.batch_size, self.config.weights
        order = self.rng_mil.permutation(len(self.videos))
        steps = math.ceil(len(order) / b)
        sums = {"mil": 0.0, "st": 0.0}
        lr = 0.0
        for s in range(steps):
            vids = order[s * b : (s + 1) * b]
            rows = np.concatenate([np.arange(self.offsets[v], self.offsets[v + 1]) for v in vids])
            groups = np.repeat(np.arange(len(vids)), np.diff(self.offsets)[vids])
            X = self.X[rows]
            labels = np.array([self.videos[v].label for v in vids], dtype=np.float64)
            l_mil, l_st = mil_objective(self.model, X, groups, labels, self._augment(X), w)
            _check_finite("MIL", l_mil, self.epoch, s)
            _check_finite("self-training", l_st, self.epoch, s)
            lr = self._lr(s, steps)
            self._step(lr)
            sums["mil"] += l_mil
            sums["st"] += l_st
        self.refresh_history()
        rep = EpochReport(
            self.epoch, "mil", {k: v / steps for k, v in sums.items()}, 0, 0, lr, time.perf_counter() - t0
        )
        self.epoch += 1
        self.reports.append(rep)
        return rep

    def pretrain_mil(self) -> Model:
        for _ in range(self.config.epochs_mil):
            self.mil_epoch()
        return self.model

    # ------------------------------------------------------------------ UMIL

    def divide(self):
        c, a = divide_snippets(self.history, self.config.division)
        use_latest = self.config.division.strategy == "max_confidence"
        assign_confident_labels(c, self.video_by_id, self.history, self.config.division.label_mode, use_latest)
        return c, a

    def umil_epoch(self, objective: str = "umil") -> EpochReport:
        """One pass of the unbiased scheme.

        ``objective="mil"`` keeps only the confident-set supervision, which is
        the reference the zero-weight UMIL epoch must reproduce exactly.
        """
        t0 = time.perf_counter()
        cfg, w = self.config, self.config.weights
        b = cfg.batch_size
        self.refresh_history()
        c, a = self.divide()
        if len(c) == 0:
            raise ValueError("confident set is empty")
        use_a = objective == "umil" and len(a) >= 2
        skipped = objective == "umil" and not use_a
        if skipped:
            log.warning("epoch %d: ambiguous set has %d snippets; pair terms skipped", self.epoch, len(a))
        steps = math.ceil(max(len(c), len(a)) / b)
        c_stream = _Cycler(len(c), self.rng_c)
        a_stream = _Cycler(len(a), self.rng_a) if use_a else None
        sums = dict.fromkeys(("c", "af", "ag", "st", "ent", "total"), 0.0)
        lr = 0.0
        for s in range(steps):
            ck = c_stream.take(min(b, len(c)))
            c_rows = c.rows[ck]
            Xa = Xa_aug = None
            if use_a:
                Xa = self.X[a.rows[a_stream.take(b)]]
                Xa_aug = self._augment(Xa)
            terms = umil_objective(
                self.model, self.X[c_rows], c.labels[ck], self.snippet_video[c_rows], Xa, Xa_aug, w, cfg.c_supervision_mode
            )
            for name, val in terms.items():
                _check_finite(name, val, self.epoch, s)
                sums[name] += val
            lr = self._lr(s, steps)
            self._step(lr)
        rep = EpochReport(
            self.epoch,
            objective,
            {k: v / steps for k, v in sums.items()},
            len(c),
            len(a),
            lr,
            time.perf_counter() - t0,
            skipped,
        )
        self.epoch += 1
        self.reports.append(rep)
        return rep

    def train_umil(self) -> Model:
        for _ in range(self.config.epochs_umil):
            self.umil_epoch()
        return self.model

    def evaluate(self) -> MetricsReport:
        return evaluate(self.model, self.dataset, self.config.scheme, self.config.coarse_segments)


def mil_objective(model: Model, X, groups, labels, X_aug, w: obj.ObjectiveWeights):
    """Bag-level MIL plus weighted self-training on one batch of videos.

    Accumulates gradients into ``model`` and returns ``(mil_loss, st_loss)``.
    """
    cache = model.forward(X, with_g=False)
    l_mil, dp = obj.mil_loss_grad(cache.p, groups, labels)
    cache_aug = model.forward(X_aug, with_g=False)
    l_st, dp_st = obj.self_training_grad(cache.p, cache_aug.p, w.delta)
    model.backward(cache, dp=dp)
    model.backward(cache_aug, dp=w.lambda_st * dp_st)
    return l_mil, l_st


def confident_loss_grad(p, labels, video_of, mode: str = "video_max"):
    """C-supervision for one batch of confident snippets."""
    if mode == "per_snippet":
        return obj.snippet_loss_grad(p, labels)
    _, groups = np.unique(video_of, return_inverse=True)
    # a bag is positive iff it holds a positive confident snippet
    glabels = np.zeros(int(groups.max()) + 1)
    np.maximum.at(glabels, groups, np.asarray(labels, dtype=np.float64))
    return obj.mil_loss_grad(p, groups, glabels)


def umil_objective(model: Model, Xc, c_labels, c_video, Xa, Xa_aug, w: obj.ObjectiveWeights, mode="video_max"):
    """Full unbiased objective for one (confident batch, ambiguous batch) pair.

    Cluster labels, cosine targets, the confidence gate and pseudo-labels are
    computed from the current forward pass and treated as constants.  With
    ``Xa is None`` only the confident term is used.  Accumulates gradients
    and returns the per-term losses plus the weighted total.
    """
    cache_c = model.forward(Xc, with_g=False)
    l_c, dp_c = confident_loss_grad(cache_c.p, c_labels, c_video, mode)
    model.backward(cache_c, dp=dp_c)
    l_af = l_ag = l_st = l_ent = 0.0
    if Xa is not None:
        cache_a = model.forward(Xa)
        clusters = obj.cluster_assign(cache_a.q)
        l_af, dp_af = obj.pair_f_loss_grad(cache_a.p, clusters)
        l_ag, dq_ag = obj.pair_g_loss_grad(cache_a.z, cache_a.q, w.tau)
        l_ent, dp_ent = obj.entropy_grad(cache_a.p)
        cache_aug = model.forward(Xa_aug, with_g=False)
        l_st, dp_st = obj.self_training_grad(cache_a.p, cache_aug.p, w.delta)
        model.backward(cache_a, dp=w.alpha * dp_af + w.entropy_weight * dp_ent, dq=w.beta * dq_ag)
        model.backward(cache_aug, dp=w.lambda_st * dp_st)
    return {
        "c": l_c,
        "af": l_af,
        "ag": l_ag,
        "st": l_st,
        "ent": l_ent,
        "total": obj.umil_total(l_c, l_af, l_ag, l_st, l_ent, w),
    }


def pretrain_mil(dataset: Dataset, config: RunConfig) -> Trainer:
    trainer = Trainer(dataset, config)
    trainer.pretrain_mil()
    return trainer


def train_umil_epoch(trainer: Trainer) -> EpochReport:
    return trainer.umil_epoch()


def run(config: RunConfig, dataset, out_dir=None, mil_only: bool = False) -> MetricsReport:
    """Pretrain, train UMIL, evaluate.

    With ``out_dir`` set, writes epochs.jsonl, checkpoint_mil.json,
    metrics_mil.json, checkpoint_umil.json and metrics.json there.
    """
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(dataset, config)
    lines = []
    for _ in range(config.epochs_mil):
        lines.append(json.dumps(trainer.mil_epoch().to_json()))
    baseline = trainer.evaluate()
    if out is not None:
        trainer.model.save(out / "checkpoint_mil.json")
        (out / "metrics_mil.json").write_text(baseline.dumps(), encoding="utf-8")
    report = baseline
    if not mil_only:
        for _ in range(config.epochs_umil):
            lines.append(json.dumps(trainer.umil_epoch().to_json()))
        if config.epochs_umil:
            report = trainer.evaluate()
        if out is not None:
            trainer.model.save(out / "checkpoint_umil.json")
    if out is not None:
        (out / "epochs.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        (out / "metrics.json").write_text(report.dumps(), encoding="utf-8")
    return report
