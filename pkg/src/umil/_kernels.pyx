# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.  Same signatures, same pair order."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p, sqrt

cnp.import_array()


cdef inline double _bce_slope(double s, double lab, double eps, double *loss) noexcept nogil:
    cdef double c = s
    if c < eps:
        c = eps
    elif c > 1.0 - eps:
        c = 1.0 - eps
    loss[0] = -(lab * log(c) + (1.0 - lab) * log1p(-c))
    if s < eps or s > 1.0 - eps:
        return 0.0
    return (c - lab) / (c * (1.0 - c))


def cosine_pair_labels(z, double tau):
    cdef const double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t b = zz.shape[0], d = zz.shape[1], i, j, k, t = 0
    cdef double[::1] norms = np.empty(b)
    cdef double acc, denom, cos
    out = np.zeros(b * (b - 1) // 2 if b > 1 else 0, dtype=np.uint8)
    cdef cnp.uint8_t[::1] o = out
    for i in range(b):
        acc = 0.0
        for k in range(d):
            acc = acc + zz[i, k] * zz[i, k]
        norms[i] = sqrt(acc)
    for i in range(b):
        for j in range(i + 1, b):
            acc = 0.0
            for k in range(d):
                acc = acc + zz[i, k] * zz[j, k]
            denom = norms[i] * norms[j]
            cos = acc / denom if denom > 0 else 0.0
            o[t] = 1 if cos > tau else 0
            t += 1
    return out


def pair_prob_loss_grad(p, cluster, double eps):
    cdef const double[::1] pp = np.ascontiguousarray(p, dtype=np.float64)
    cdef const cnp.int64_t[::1] cl = np.ascontiguousarray(cluster, dtype=np.int64)
    cdef Py_ssize_t b = pp.shape[0], i, j
    grad = np.zeros(b)
    cdef double[::1] g = grad
    if b < 2:
        return 0.0, grad
    cdef double n = b * (b - 1) / 2.0
    cdef double total = 0.0, s, lab, slope, l
    for i in range(b):
        for j in range(i + 1, b):
            s = pp[i] * pp[j] + (1.0 - pp[i]) * (1.0 - pp[j])
            lab = 1.0 if cl[i] == cl[j] else 0.0
            slope = _bce_slope(s, lab, eps, &l) / n
            total = total + l
            g[i] = g[i] + slope * (2.0 * pp[j] - 1.0)
            g[j] = g[j] + slope * (2.0 * pp[i] - 1.0)
    return total / n, grad


def pair_simplex_loss_grad(q, pair_labels, double eps):
    cdef const double[:, ::1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef const cnp.uint8_t[::1] lab8 = np.ascontiguousarray(pair_labels, dtype=np.uint8)
    cdef Py_ssize_t b = qq.shape[0], i, j, t = 0
    grad = np.zeros((b, 2))
    cdef double[:, ::1] g = grad
    if b < 2:
        return 0.0, grad
    cdef double n = b * (b - 1) / 2.0
    cdef double total = 0.0, s, slope, l
    for i in range(b):
        for j in range(i + 1, b):
            s = qq[i, 0] * qq[j, 0] + qq[i, 1] * qq[j, 1]
            slope = _bce_slope(s, <double> lab8[t], eps, &l) / n
            total = total + l
            g[i, 0] = g[i, 0] + slope * qq[j, 0]
            g[i, 1] = g[i, 1] + slope * qq[j, 1]
            g[j, 0] = g[j, 0] + slope * qq[i, 0]
            g[j, 1] = g[j, 1] + slope * qq[i, 1]
            t += 1
    return total / n, grad


def roc_sweep(scores_desc, labels_desc):
    cdef const double[::1] s = np.ascontiguousarray(scores_desc, dtype=np.float64)
    cdef const cnp.int64_t[::1] y = np.ascontiguousarray(labels_desc, dtype=np.int64)
    cdef Py_ssize_t n = s.shape[0], k, ng = 0
    cdef cnp.int64_t n_pos = 0, n_neg, tp = 0, fp = 0, gp = 0, gn = 0
    cdef cnp.int64_t twice = 0
    for k in range(n):
        n_pos += y[k]
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    fps = np.empty(n + 1, dtype=np.int64)
    tps = np.empty(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] fo = fps
    cdef cnp.int64_t[::1] to = tps
    fo[0] = 0
    to[0] = 0
    for k in range(n):
        if y[k]:
            gp += 1
        else:
            gn += 1
        if k == n - 1 or s[k + 1] != s[k]:
            tp += gp
            fp += gn
            twice += 2 * gp * (n_neg - fp) + gp * gn
            ng += 1
            fo[ng] = fp
            to[ng] = tp
            gp = 0
            gn = 0
    fpr = fps[:ng + 1] / <double> n_neg
    tpr = tps[:ng + 1] / <double> n_pos
    return fpr, tpr, <double> twice / (2.0 * n_pos * n_neg)


def ring_variance(values, count):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const cnp.int64_t[::1] c = np.ascontiguousarray(count, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0], k, t
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef double mean, sq, d
    for k in range(n):
        if c[k] <= 0:
            continue
        mean = 0.0
        for t in range(c[k]):
            mean = mean + v[k, t]
        mean = mean / c[k]
        sq = 0.0
        for t in range(c[k]):
            d = v[k, t] - mean
            sq = sq + d * d
        o[k] = sq / c[k]
    return out


def segment_bounds(Py_ssize_t m, Py_ssize_t n_segments):
    if m < 1 or n_segments < 1:
        raise ValueError("need m >= 1 and n_segments >= 1")
    if n_segments > m:
        n_segments = m
    cdef Py_ssize_t base = m // n_segments, extra = m % n_segments, k
    out = np.empty(n_segments + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    o[0] = 0
    for k in range(n_segments):
        o[k + 1] = o[k] + base + (1 if k < extra else 0)
    return out


def segment_means(values, Py_ssize_t n_segments):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    bounds = segment_bounds(v.shape[0], n_segments)
    cdef cnp.int64_t[::1] bd = bounds
    cdef Py_ssize_t ns = bd.shape[0] - 1, d = v.shape[1], k, r, col
    out = np.zeros((ns, d))
    cdef double[:, ::1] o = out
    cdef double size
    for k in range(ns):
        size = <double> (bd[k + 1] - bd[k])
        for r in range(bd[k], bd[k + 1]):
            for col in range(d):
                o[k, col] = o[k, col] + v[r, col]
        for col in range(d):
            o[k, col] = o[k, col] / size
    return out
