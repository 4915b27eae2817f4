"""Compiled long-horizon centralized dual averaging used by the f* oracle."""

from __future__ import annotations

import numpy as np
from numba import njit

HINGE, ABS, LINEAR = 0, 1, 2


@njit(cache=True)
def _value(kind, data, x):
    n, d = data.shape
    tot = 0.0
    for i in range(n):
        if kind == HINGE:
            m = 0.0
            for k in range(d):
                m += data[i, k] * x[k]
            if m < 1.0:
                tot += 1.0 - m
        elif kind == ABS:
            tot += abs(x[0] - data[i, 0])
        else:
            tot += data[i, 0] * x[0]
    return tot / n


@njit(cache=True)
def _subgradient(kind, data, x, g):
    n, d = data.shape
    for k in range(g.size):
        g[k] = 0.0
    for i in range(n):
        if kind == HINGE:
            m = 0.0
            for k in range(d):
                m += data[i, k] * x[k]
            if m < 1.0:
                for k in range(d):
                    g[k] -= data[i, k]
        elif kind == ABS:
            if x[0] > data[i, 0]:
                g[0] += 1.0
            elif x[0] < data[i, 0]:
                g[0] -= 1.0
        else:
            g[0] += data[i, 0]
    for k in range(g.size):
        g[k] /= n


@njit(cache=True)
def centralized_da(kind, data, radius, R, L, T, check_every):
    """Dual averaging with alpha(t) = R / (4 L sqrt(t)) on a Euclidean ball.

    Returns the best running average seen at the checkpoints and its value.
    """
    d = data.shape[1] if kind == HINGE else 1
    z = np.zeros(d)
    x = np.zeros(d)
    s = np.zeros(d)
    g = np.zeros(d)
    avg = np.zeros(d)
    best = np.inf
    best_x = np.zeros(d)
    for t in range(1, T + 1):
        for k in range(d):
            s[k] += x[k]
        if t % check_every == 0 or t == T:
            for k in range(d):
                avg[k] = s[k] / t
            v = _value(kind, data, avg)
            if v < best:
                best = v
                best_x[:] = avg
        _subgradient(kind, data, x, g)
        alpha = R / (4.0 * L * np.sqrt(t))
        nrm = 0.0
        for k in range(d):
            z[k] += g[k]
            x[k] = -alpha * z[k]
            nrm += x[k] * x[k]
        nrm = np.sqrt(nrm)
        if nrm > radius:
            for k in range(d):
                x[k] *= radius / nrm
    return best_x, best


@njit(cache=True)
def _max_node_error(kind, data, s, t, f_star):
    n = s.shape[0]
    worst = -np.inf
    avg = np.empty(s.shape[1])
    for i in range(n):
        for k in range(s.shape[1]):
            avg[k] = s[i, k] / t
        v = _value(kind, data, avg) - f_star
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _local_subgradients(kind, data, x, g):
    n, d = x.shape
    for i in range(n):
        if kind == HINGE:
            m = 0.0
            for k in range(d):
                m += data[i, k] * x[i, k]
            for k in range(d):
                g[i, k] = -data[i, k] if m < 1.0 else 0.0
        elif kind == ABS:
            if x[i, 0] > data[i, 0]:
                g[i, 0] = 1.0
            elif x[i, 0] < data[i, 0]:
                g[i, 0] = -1.0
            else:
                g[i, 0] = 0.0
        else:
            g[i, 0] = data[i, 0]


@njit(cache=True)
def dda_static_run(kind, data, p, radius, alpha_scale, t_max, eval_every, eps, f_star):
    """Distributed dual averaging with a fixed matrix and alpha(t) = alpha_scale / sqrt(t).

    Stops at the first evaluation round whose worst-node error is <= eps.
    Returns (t_hit or -1, last evaluated error, last evaluation round).
    """
    n = p.shape[0]
    d = data.shape[1] if kind == HINGE else 1
    z = np.zeros((n, d))
    x = np.zeros((n, d))
    s = np.zeros((n, d))
    g = np.zeros((n, d))
    err = np.inf
    last = 0
    for k in range(n):
        for j in range(d):
            s[k, j] = x[k, j]
    for t in range(1, t_max):
        _local_subgradients(kind, data, x, g)
        z = p @ z + g
        alpha = alpha_scale / np.sqrt(t)
        for i in range(n):
            nrm = 0.0
            for j in range(d):
                x[i, j] = -alpha * z[i, j]
                nrm += x[i, j] * x[i, j]
            nrm = np.sqrt(nrm)
            if nrm > radius:
                for j in range(d):
                    x[i, j] *= radius / nrm
            for j in range(d):
                s[i, j] += x[i, j]
        if (t + 1) % eval_every == 0:
            err = _max_node_error(kind, data, s, t + 1, f_star)
            last = t + 1
            if err <= eps:
                return t + 1, err, last
    return -1, err, last
