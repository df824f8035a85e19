"""Compiled forward passes over per-pair event groups.

Events of the unordered pair {u, v} only interact with each other, so every
pass walks one group at a time in time order and keeps, per receiving
direction, a K x K running sum of decayed tag weights.  Contributions of an
event are held in a pending buffer until time strictly advances, which keeps
simultaneous events from exciting each other.

Array conventions
-----------------
t, direction : per-event time and direction bit (0: s < d, 1: s > d)
order, starts: event indices grouped by unordered pair, time-sorted inside
mu_ev        : per-event K x K base rates of the event's own ordered pair
w            : per-event K x K tag weights over the event's own pattern
S            : per-event K x K decayed excitation, in the receiving pattern
               coordinates: S[i, k, k'] sums w[j, k', k] over opposite j
"""

import numpy as np
from numba import njit


@njit(cache=True)
def excitation_fixed(t, direction, order, starts, w, delta):
    n, K = w.shape[0], w.shape[1]
    S = np.zeros((n, K, K))
    state = np.zeros((2, K, K))
    pend = np.zeros((2, K, K))
    for g in range(starts.shape[0] - 1):
        state[:] = 0.0
        pend[:] = 0.0
        has_pend = False
        t_ref = 0.0
        t_pend = 0.0
        for pos in range(starts[g], starts[g + 1]):
            i = order[pos]
            ti = t[i]
            if pos == starts[g]:
                t_ref = ti
            if has_pend and ti > t_pend:
                dec = np.exp(-(t_pend - t_ref) / delta)
                for d in range(2):
                    for a in range(K):
                        for b in range(K):
                            state[d, a, b] = state[d, a, b] * dec + pend[d, a, b]
                            pend[d, a, b] = 0.0
                t_ref = t_pend
                has_pend = False
            d = direction[i]
            dec = np.exp(-(ti - t_ref) / delta)
            for a in range(K):
                for b in range(K):
                    S[i, a, b] = state[d, a, b] * dec
            o = 1 - d
            for a in range(K):
                for b in range(K):
                    pend[o, b, a] += w[i, a, b]
            t_pend = ti
            has_pend = True
    return S


@njit(cache=True)
def responsibilities_forward(t, direction, order, starts, mu_ev, alpha, delta):
    """Causal soft tagging: each event's tag weights are its own
    responsibilities, computed from already-tagged opposite events.

    Returns (p_hat, p_check, lam, bad) where bad is the first event with
    non-positive intensity, or -1.
    """
    n, K = mu_ev.shape[0], mu_ev.shape[1]
    p_hat = np.zeros((n, K, K))
    p_check = np.zeros((n, K, K))
    lam = np.zeros(n)
    state = np.zeros((2, K, K))
    pend = np.zeros((2, K, K))
    bad = -1
    for g in range(starts.shape[0] - 1):
        state[:] = 0.0
        pend[:] = 0.0
        has_pend = False
        t_ref = 0.0
        t_pend = 0.0
        for pos in range(starts[g], starts[g + 1]):
            i = order[pos]
            ti = t[i]
            if pos == starts[g]:
                t_ref = ti
            if has_pend and ti > t_pend:
                dec = np.exp(-(t_pend - t_ref) / delta)
                for d in range(2):
                    for a in range(K):
                        for b in range(K):
                            state[d, a, b] = state[d, a, b] * dec + pend[d, a, b]
                            pend[d, a, b] = 0.0
                t_ref = t_pend
                has_pend = False
            d = direction[i]
            dec = np.exp(-(ti - t_ref) / delta)
            total = 0.0
            for a in range(K):
                for b in range(K):
                    base = mu_ev[i, a, b]
                    exc = alpha[a, b] * state[d, a, b] * dec
                    p_hat[i, a, b] = base
                    p_check[i, a, b] = exc
                    total += base + exc
            lam[i] = total
            if total > 0.0:
                for a in range(K):
                    for b in range(K):
                        p_hat[i, a, b] /= total
                        p_check[i, a, b] /= total
            elif bad < 0:
                bad = i
            o = 1 - d
            for a in range(K):
                for b in range(K):
                    pend[o, b, a] += p_hat[i, a, b] + p_check[i, a, b]
            t_pend = ti
            has_pend = True
    return p_hat, p_check, lam, bad


@njit(cache=True)
def _categorical(weights, total, u):
    # weights flattened K*K; u in [0, 1)
    target = u * total
    acc = 0.0
    last = -1
    for c in range(weights.shape[0]):
        if weights[c] > 0.0:
            last = c
            acc += weights[c]
            if target < acc:
                return c
    return last


@njit(cache=True)
def branching_forward(t, direction, order, starts, mu_ev, alpha, delta,
                      u_branch, u_pattern):
    """Single-site sweep over hard assignments in time order.

    Returns (b, z, lam, bad) with z the flattened pattern index k*K + k'.
    """
    n, K = mu_ev.shape[0], mu_ev.shape[1]
    KK = K * K
    b_out = np.zeros(n, dtype=np.bool_)
    z_out = np.zeros(n, dtype=np.int64)
    lam = np.zeros(n)
    state = np.zeros((2, K, K))
    pend = np.zeros((2, K, K))
    base_w = np.zeros(KK)
    exc_w = np.zeros(KK)
    bad = -1
    for g in range(starts.shape[0] - 1):
        state[:] = 0.0
        pend[:] = 0.0
        has_pend = False
        t_ref = 0.0
        t_pend = 0.0
        for pos in range(starts[g], starts[g + 1]):
            i = order[pos]
            ti = t[i]
            if pos == starts[g]:
                t_ref = ti
            if has_pend and ti > t_pend:
                dec = np.exp(-(t_pend - t_ref) / delta)
                for d in range(2):
                    for a in range(K):
                        for b in range(K):
                            state[d, a, b] = state[d, a, b] * dec + pend[d, a, b]
                            pend[d, a, b] = 0.0
                t_ref = t_pend
                has_pend = False
            d = direction[i]
            dec = np.exp(-(ti - t_ref) / delta)
            mu_sum = 0.0
            exc_sum = 0.0
            for a in range(K):
                for b in range(K):
                    base_w[a * K + b] = mu_ev[i, a, b]
                    exc_w[a * K + b] = alpha[a, b] * state[d, a, b] * dec
                    mu_sum += base_w[a * K + b]
                    exc_sum += exc_w[a * K + b]
            total = mu_sum + exc_sum
            lam[i] = total
            if total <= 0.0:
                if bad < 0:
                    bad = i
                z = 0
                exo = True
            else:
                exo = u_branch[i] * total < mu_sum
                if exo:
                    z = _categorical(base_w, mu_sum, u_pattern[i])
                else:
                    z = _categorical(exc_w, exc_sum, u_pattern[i])
            b_out[i] = exo
            z_out[i] = z
            a = z // K
            b = z % K
            pend[1 - d, b, a] += 1.0
            t_pend = ti
            has_pend = True
    return b_out, z_out, lam, bad
