"""Pure numpy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` function for function.  Pair order everywhere is the
row-major upper triangle: (0,1), (0,2), ..., (0,b-1), (1,2), ...
"""
import numpy as np


def _triu(b):
    return np.triu_indices(b, k=1)


def cosine_pair_labels(z, tau):
    """1 where cosine(z_i, z_j) > tau, for all i < j.  Zero vectors have cosine 0."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    norms = np.sqrt((z * z).sum(axis=1))
    i, j = _triu(z.shape[0])
    dots = (z[i] * z[j]).sum(axis=1)
    denom = norms[i] * norms[j]
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    return (cos > tau).astype(np.uint8)


def _bce_and_slope(s, lab, eps):
    c = np.clip(s, eps, 1.0 - eps)
    loss = -(lab * np.log(c) + (1.0 - lab) * np.log1p(-c))
    slope = (c - lab) / (c * (1.0 - c))
    slope[(s < eps) | (s > 1.0 - eps)] = 0.0
    return loss, slope


def pair_prob_loss_grad(p, cluster, eps):
    """Mean pair BCE over s_ij = p_i p_j + (1-p_i)(1-p_j) with targets [cluster_i == cluster_j].

    Returns ``(loss, dloss/dp)``.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    b = p.shape[0]
    grad = np.zeros(b)
    if b < 2:
        return 0.0, grad
    i, j = _triu(b)
    s = p[i] * p[j] + (1.0 - p[i]) * (1.0 - p[j])
    lab = (np.asarray(cluster)[i] == np.asarray(cluster)[j]).astype(np.float64)
    loss, slope = _bce_and_slope(s, lab, eps)
    n = s.shape[0]
    slope = slope / n
    np.add.at(grad, i, slope * (2.0 * p[j] - 1.0))
    np.add.at(grad, j, slope * (2.0 * p[i] - 1.0))
    return float(loss.sum() / n), grad


def pair_simplex_loss_grad(q, pair_labels, eps):
    """Mean pair BCE over s_ij = q_i . q_j for rows of ``q`` (b, 2).

    Returns ``(loss, dloss/dq)``.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    b = q.shape[0]
    grad = np.zeros_like(q)
    if b < 2:
        return 0.0, grad
    i, j = _triu(b)
    s = (q[i] * q[j]).sum(axis=1)
    lab = np.asarray(pair_labels, dtype=np.float64)
    loss, slope = _bce_and_slope(s, lab, eps)
    n = s.shape[0]
    slope = (slope / n)[:, None]
    np.add.at(grad, i, slope * q[j])
    np.add.at(grad, j, slope * q[i])
    return float(loss.sum() / n), grad


def roc_sweep(scores_desc, labels_desc):
    """Sweep scores already sorted in descending order.

    Tied scores form one ROC point.  The AUC gives half credit to tied
    positive/negative pairs, so it equals the Mann-Whitney statistic.
    Returns ``(fpr, tpr, auc)`` with a leading (0, 0) point.
    """
    s = np.asarray(scores_desc, dtype=np.float64)
    y = np.asarray(labels_desc).astype(np.int64)
    n = s.shape[0]
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ends = np.flatnonzero(np.diff(s) != 0)
    ends = np.append(ends, n - 1)
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    prev_tp = np.concatenate(([0], tps[:-1]))
    prev_fp = np.concatenate(([0], fps[:-1]))
    gp = tps - prev_tp
    gn = fps - prev_fp
    # pairs (pos in group, neg strictly below) + half the within-group pairs
    twice = (2 * gp * (n_neg - fps) + gp * gn).sum()
    auc = float(twice) / (2.0 * n_pos * n_neg)
    fpr = np.concatenate(([0.0], fps / n_neg))
    tpr = np.concatenate(([0.0], tps / n_pos))
    return fpr, tpr, auc


def ring_variance(values, count):
    """Population variance of the first ``count[k]`` entries of each row ``values[k]``."""
    values = np.asarray(values, dtype=np.float64)
    count = np.asarray(count, dtype=np.int64)
    n, cap = values.shape
    total = np.zeros(n)
    for c in range(cap):
        total += np.where(c < count, values[:, c], 0.0)
    safe = np.maximum(count, 1)
    mean = total / safe
    sq = np.zeros(n)
    for c in range(cap):
        d = values[:, c] - mean
        sq += np.where(c < count, d * d, 0.0)
    return np.where(count > 0, sq / safe, 0.0)


def segment_bounds(m, n_segments):
    """Start offsets (length n_segments + 1) of contiguous segments; earlier ones take the remainder."""
    if m < 1 or n_segments < 1:
        raise ValueError("need m >= 1 and n_segments >= 1")
    n_segments = min(n_segments, m)
    base, extra = divmod(m, n_segments)
    sizes = np.full(n_segments, base, dtype=np.int64)
    sizes[:extra] += 1
    return np.concatenate(([0], np.cumsum(sizes)))


def segment_means(values, n_segments):
    """Row means of ``values`` (m, d) over contiguous segments, summed left to right."""
    values = np.asarray(values, dtype=np.float64)
    bounds = segment_bounds(values.shape[0], n_segments)
    starts = bounds[:-1]
    sizes = np.diff(bounds)
    acc = np.zeros((starts.shape[0], values.shape[1]))
    for k in range(int(sizes.max())):
        live = sizes > k
        acc[live] += values[starts[live] + k]
    return acc / sizes[:, None]
