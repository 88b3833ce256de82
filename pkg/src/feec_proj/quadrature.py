"""Grundmann-Moeller quadrature on simplices.

Rules are returned in barycentric coordinates with weights summing to one,
so the integral over a simplex T is |T| * sum(w * f(x(bary))).
"""
from functools import lru_cache
from math import factorial

import numpy as np

from .polyform import multi_indices

MAX_DEGREE = 21


@lru_cache(maxsize=None)
def grundmann_moller(n, degree):
    """(bary (npts, n+1), weights (npts,)) exact for polynomials of the given degree."""
    s = max(0, degree // 2)
    d = 2 * s + 1
    pts, wts = [], []
    for i in range(s + 1):
        w = (-1) ** i * 2.0 ** (-2 * s) * (d + n - 2 * i) ** d / (factorial(i) * factorial(d + n - i))
        for beta in multi_indices(n, s - i):
            pts.append([(2 * b + 1) / (d + n - 2 * i) for b in beta])
            wts.append(w)
    bary = np.array(pts)
    wts = np.array(wts) * factorial(n)
    # merge coincident points, which keeps the rule small for low degree
    key, inv = np.unique(np.round(bary, 14), axis=0, return_inverse=True)
    merged = np.zeros(len(key))
    np.add.at(merged, inv.ravel(), wts)
    keep = np.abs(merged) > 1e-16
    out_b, out_w = key[keep], merged[keep]
    out_b.setflags(write=False)
    out_w.setflags(write=False)
    return out_b, out_w


def physical_points(bary, vertices):
    return np.asarray(bary) @ np.asarray(vertices)
