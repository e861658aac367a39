"""Compiled per-dataset coordinate descent.

Scalar re-implementation of the vectorised numpy loop in
:mod:`mobecr.estimation`. Fixed-step descent on small-sample likelihoods can
need 10^5 sweeps for a single dataset; at that point numpy's per-call overhead
dominates, so the sweep runs compiled instead.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_FLOOR = 1e-300


@numba.njit(cache=True)
def _probs(theta, tau, out_mass, out_e, out_p):
    K = tau.size - 1
    lam = theta[0] + theta[1] + theta[2]
    for i in range(K + 1):
        out_e[i] = math.exp(-lam * tau[i])
    s1 = theta[1] / lam
    s2 = theta[2] / lam
    s0 = theta[0] / lam
    for i in range(K):
        m = out_e[i] * -math.expm1(-lam * (tau[i + 1] - tau[i]))
        out_mass[i] = m
        out_p[3 * i] = m * s1
        out_p[3 * i + 1] = m * s2
        out_p[3 * i + 2] = m * s0
    out_p[3 * K] = out_e[K]
    return lam


@numba.njit(cache=True)
def _value(p, counts, freqs, beta):
    total = 0.0
    if beta == 0.0:
        for l in range(p.size):
            if counts[l] > 0:
                if p[l] <= 0.0:
                    return math.inf
                total -= counts[l] * math.log(p[l])
        return total
    a = 0.0
    b = 0.0
    for l in range(p.size):
        pb = p[l] ** beta
        a += p[l] * pb
        b += freqs[l] * pb
    return a - (1.0 + beta) / beta * b


@numba.njit(cache=True)
def _weight(prob, count, freq, beta):
    """``dH/dp`` for one cell."""
    q = max(prob, _FLOOR)
    if beta == 0.0:
        return -count / q
    qb = q**beta
    return (1.0 + beta) * (qb - freq * qb / q)


@numba.njit(cache=True)
def _partial(j, theta, tau, counts, freqs, beta, mass, e, p):
    K = tau.size - 1
    lam = _probs(theta, tau, mass, e, p)
    share = (theta[1] / lam, theta[2] / lam, theta[0] / lam)
    # slot of the cause whose own rate is lambda_j
    own_slot = 2 if j == 0 else j - 1
    shared = 0.0
    own = 0.0
    for i in range(K):
        dmass = tau[i + 1] * e[i + 1] - tau[i] * e[i]
        acc = 0.0
        for s in range(3):
            w = _weight(p[3 * i + s], counts[3 * i + s], freqs[3 * i + s], beta)
            acc += w * share[s]
            if s == own_slot:
                own += w * mass[i] / lam
        shared += acc * (dmass - mass[i] / lam)
    shared -= _weight(p[3 * K], counts[3 * K], freqs[3 * K], beta) * tau[K] * e[K]
    return own + shared


@numba.njit(cache=True)
def descend_one(tau, counts, freqs, beta, theta0, h0, c, max_iter, backtracking, restore_after, min_rate):
    """Returns ``(theta, value, iterations, converged, final_h)`` for one dataset."""
    K = tau.size - 1
    mass = np.empty(K)
    e = np.empty(K + 1)
    p = np.empty(3 * K + 1)
    theta = theta0.copy()
    th = theta0.copy()
    _probs(theta, tau, mass, e, p)
    value = _value(p, counts, freqs, beta)
    h = h0
    streak = 0
    it = 0
    while it < max_iter:
        for j in range(3):
            g = _partial(j, th, tau, counts, freqs, beta, mass, e, p)
            th[j] = max(th[j] - h * g, min_rate)
        _probs(th, tau, mass, e, p)
        new_value = _value(p, counts, freqs, beta)
        it += 1
        keep = True
        if backtracking:
            if not (new_value <= value):
                keep = False
                h *= 0.5
                streak = 0
            else:
                streak += 1
                if streak >= restore_after:
                    h = h0
                    streak = 0
        moved = 0.0
        for j in range(3):
            moved = max(moved, abs(th[j] - theta[j]))
        if keep:
            done = moved < c and abs(new_value - value) < c
            for j in range(3):
                theta[j] = th[j]
            value = new_value
            if done:
                return theta, value, it, True, h
        else:
            for j in range(3):
                th[j] = theta[j]
    return theta, value, it, False, h


@numba.njit(cache=True)
def descend_batch(tau, counts, freqs, beta, theta0, h0, c, max_iter, backtracking, restore_after, min_rate):
    B = counts.shape[0]
    theta = np.empty((B, 3))
    value = np.empty(B)
    iterations = np.empty(B, dtype=np.int64)
    converged = np.empty(B, dtype=np.bool_)
    h = np.empty(B)
    for b in range(B):
        t, v, it, ok, hb = descend_one(
            tau, counts[b], freqs[b], beta, theta0[b], h0[b], c, max_iter, backtracking, restore_after, min_rate
        )
        theta[b] = t
        value[b] = v
        iterations[b] = it
        converged[b] = ok
        h[b] = hb
    return theta, value, iterations, converged, h
