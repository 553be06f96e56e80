"""Loss terms and their gradients with respect to head outputs.

Every ``*_grad`` function returns ``(loss, dloss/doutput)`` so the trainer can
push the result through :meth:`umil.model.Model.backward`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import EPS, bce, bce_grad, clamp_prob


@dataclass
class ObjectiveWeights:
    alpha: float = 0.1
    beta: float = 0.1
    lambda_st: float = 0.1
    entropy_weight: float = 0.01
    tau: float = 0.8
    delta: float = 0.8
    aug_sigma: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_st", "entropy_weight", "aug_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not -1.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (-1, 1]")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")


@dataclass
class PairBatch:
    similarity: np.ndarray
    label: np.ndarray
    i: np.ndarray
    j: np.ndarray

    def __len__(self):
        return int(self.similarity.shape[0])


# --------------------------------------------------------------------------- MIL


def mil_video_score(preds) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    if preds.size == 0:
        raise ValueError("video has no snippet predictions")
    return float(preds.max())


def mil_loss(scores, labels) -> float:
    """Mean BCE over (video score, video label) tuples."""
    return float(np.mean(bce(np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=np.float64))))


def mil_loss_grad(p, groups, group_labels):
    """MIL loss on per-group maxima.

    ``groups[k]`` is the group (video) index of snippet ``k``; ``group_labels[g]``
    the label of group ``g``.  The gradient flows to the first arg-max of
    each group only.
    """
    p = np.asarray(p, dtype=np.float64)
    groups = np.asarray(groups)
    group_labels = np.asarray(group_labels, dtype=np.float64)
    n_groups = group_labels.shape[0]
    dp = np.zeros_like(p)
    total = 0.0
    for g in range(n_groups):
        idx = np.flatnonzero(groups == g)
        k = idx[np.argmax(p[idx])]
        total += bce(p[k], group_labels[g])
        dp[k] = bce_grad(p[k], group_labels[g]) / n_groups
    return total / n_groups, dp


def snippet_loss_grad(p, labels):
    """Mean BCE over individually labelled snippets."""
    p = np.asarray(p, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean(bce(p, labels))), bce_grad(p, labels) / p.shape[0]


# --------------------------------------------------------------------------- pairs


def _pair_index(b):
    i, j = np.triu_indices(b, k=1)
    return i, j


def build_pairs_g(z, q, tau: float) -> PairBatch:
    """Cluster-head pairs: similarity q_i . q_j, target [cosine(z_i, z_j) > tau]."""
    q = np.asarray(q, dtype=np.float64)
    i, j = _pair_index(q.shape[0])
    sim = (q[i] * q[j]).sum(axis=1)
    return PairBatch(sim, kernels.cosine_pair_labels(z, tau).astype(np.int64), i, j)


def cluster_assign(q) -> np.ndarray:
    """Index of the larger cluster probability; exact ties go to cluster 0."""
    q = np.asarray(q, dtype=np.float64)
    return (q[:, 1] > q[:, 0]).astype(np.int64)


def build_pairs_f(p, cluster_labels) -> PairBatch:
    """Anomaly-head pairs on binary probability vectors (1-p, p); target [same cluster]."""
    p = np.asarray(p, dtype=np.float64)
    c = np.asarray(cluster_labels)
    i, j = _pair_index(p.shape[0])
    sim = p[i] * p[j] + (1.0 - p[i]) * (1.0 - p[j])
    return PairBatch(sim, (c[i] == c[j]).astype(np.int64), i, j)


def pair_bce(pairs: PairBatch) -> float:
    if len(pairs) == 0:
        return 0.0
    return float(np.mean(bce(clamp_prob(pairs.similarity), pairs.label)))


def pair_f_loss_grad(p, cluster_labels):
    """BCE(A_f) and its gradient with respect to the anomaly probabilities."""
    return kernels.pair_prob_loss_grad(p, np.asarray(cluster_labels, dtype=np.int64), EPS)


def pair_g_loss_grad(z, q, tau: float):
    """BCE(A_g) and its gradient with respect to the cluster probabilities (z gives targets only)."""
    return kernels.pair_simplex_loss_grad(q, kernels.cosine_pair_labels(z, tau), EPS)


# --------------------------------------------------------------------------- totals and auxiliaries


def umil_total(loss_c, loss_af, loss_ag, loss_st, loss_ent, w: ObjectiveWeights) -> float:
    return loss_c + w.alpha * loss_af + w.beta * loss_ag + w.lambda_st * loss_st + w.entropy_weight * loss_ent


def confidence_gate(p_clean, delta: float) -> np.ndarray:
    p = np.asarray(p_clean, dtype=np.float64)
    return np.maximum(p, 1.0 - p) > delta


def self_training_grad(p_clean, p_aug, delta: float):
    """FixMatch-style term: pseudo-labels from clean predictions supervise augmented ones.

    Pseudo-labels and the gate are constants; the gradient is w.r.t. ``p_aug``
    only.  Averaged over the whole batch, gated-off rows contributing 0.
    """
    p_clean = np.asarray(p_clean, dtype=np.float64)
    p_aug = np.asarray(p_aug, dtype=np.float64)
    gate = confidence_gate(p_clean, delta)
    pseudo = (p_clean > 0.5).astype(np.float64)
    n = p_aug.shape[0]
    losses = np.where(gate, bce(p_aug, pseudo), 0.0)
    grads = np.where(gate, bce_grad(p_aug, pseudo), 0.0) / n
    return float(losses.sum() / n), grads


def augment(x, aug_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian feature noise."""
    x = np.asarray(x, dtype=np.float64)
    if aug_sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, aug_sigma, size=x.shape)


def self_training_loss(model, x_clean, delta: float, aug_sigma: float, rng: np.random.Generator) -> float:
    """Evaluate the self-training term for a model on a batch of raw features."""
    p = model.predict(x_clean)
    p_aug = model.predict(augment(x_clean, aug_sigma, rng))
    return self_training_grad(p, p_aug, delta)[0]


def entropy_loss(p) -> float:
    return entropy_grad(p)[0]


def entropy_grad(p):
    """Mean binary entropy of the predictions and its gradient (clamped like BCE)."""
    p = np.asarray(p, dtype=np.float64)
    c = clamp_prob(p)
    h = -(c * np.log(c) + (1.0 - c) * np.log1p(-c))
    g = np.log1p(-c) - np.log(c)
    g = np.where((p < EPS) | (p > 1.0 - EPS), 0.0, g)
    return float(h.mean()), g / p.shape[0]
