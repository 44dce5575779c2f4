"""Naive double-loop references for the map metrics."""

import math

import numpy as np

EPS = 1e-6


def _values(m):
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def naive_pearson(a, b):
    x, y = _values(a).ravel().tolist(), _values(b).ravel().tolist()
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sxx = syy = 0.0
    for i in range(n):
        sxy += (x[i] - mx) * (y[i] - my)
        sxx += (x[i] - mx) ** 2
        syy += (y[i] - my) ** 2
    return sxy / math.sqrt(sxx * syy)


def _clip(v, eps=EPS):
    return min(max(v, eps), 1 - eps)


def naive_kl_pixel(x, y):
    return x * math.log2(x / y) + (1 - x) * math.log2((1 - x) / (1 - y))


def naive_kl(a, b, eps=EPS):
    a, b = _values(a), _values(b)
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            total += naive_kl_pixel(_clip(a[i, j], eps), _clip(b[i, j], eps))
    return total / a.size


def naive_jsd(a, b, eps=EPS):
    a, b = _values(a), _values(b)
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            x, y = _clip(a[i, j], eps), _clip(b[i, j], eps)
            m = (x + y) / 2
            total += 0.5 * naive_kl_pixel(x, m) + 0.5 * naive_kl_pixel(y, m)
    return total / a.size


def naive_matrix(maps_by_method, kind):
    ids = list(maps_by_method)
    m = len(ids)
    out = np.eye(m) if kind == "pearson" else np.zeros((m, m))
    f = naive_pearson if kind == "pearson" else naive_jsd
    for i in range(m):
        for j in range(m):
            if i != j:
                vals = [f(a, b) for a, b in zip(maps_by_method[ids[i]], maps_by_method[ids[j]])]
                out[i, j] = sum(vals) / len(vals)
    return out
