"""Comparison models: Poisson pairs, shared-parameter mutually exciting Hawkes
with a fixed kernel bank, and two block models (CHIP and Hawkes-SBM).

Every model exposes ``window_integrals(history, t, pi_hat)``: a V x V matrix
of integrated intensity over ``[t, t + pi_hat)`` with the history frozen at
``t`` (zero diagonal), which the evaluation harness turns into link
probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize
from sklearn.cluster import KMeans

from .events import EventSequence

HOUR, DAY, WEEK = 1.0 / 24.0, 1.0, 7.0
_PERIOD_FREQ = 2.0 * math.pi / 7.0


class FitError(ArithmeticError):
    pass


# decayed sums over earlier events sharing a key ------------------------------

@njit(cache=True)
def _grouped_decay_sums(q_key, q_t, s_key, s_t, s_w, scale):
    """For queries and sources both sorted by (key, time): the sum over
    sources with the same key and strictly earlier time of
    w * exp(-(t_q - t_s) / scale)."""
    out = np.zeros(q_t.shape[0])
    j = 0
    ns = s_t.shape[0]
    acc = 0.0
    t_acc = 0.0
    cur = -1
    for i in range(q_t.shape[0]):
        key = q_key[i]
        if key != cur:
            cur = key
            acc = 0.0
            while j < ns and s_key[j] < key:
                j += 1
        while j < ns and s_key[j] == key and s_t[j] < q_t[i]:
            if acc == 0.0:
                acc = s_w[j]
            else:
                acc = acc * np.exp(-(s_t[j] - t_acc) / scale) + s_w[j]
            t_acc = s_t[j]
            j += 1
        if acc != 0.0:
            out[i] = acc * np.exp(-(q_t[i] - t_acc) / scale)
    return out


class DecaySums:
    """Reusable sorted layout for ``_grouped_decay_sums``."""

    def __init__(self, q_key, q_t, s_key, s_t):
        self.q_order = np.lexsort((q_t, q_key))
        self.s_order = np.lexsort((s_t, s_key))
        self.q_key = np.ascontiguousarray(q_key[self.q_order], dtype=np.int64)
        self.q_t = np.ascontiguousarray(q_t[self.q_order], dtype=np.float64)
        self.s_key = np.ascontiguousarray(s_key[self.s_order], dtype=np.int64)
        self.s_t = np.ascontiguousarray(s_t[self.s_order], dtype=np.float64)

    def __call__(self, scale, weights=None):
        w = np.ones(self.s_t.shape[0]) if weights is None \
            else np.ascontiguousarray(np.asarray(weights, dtype=np.float64)[self.s_order])
        sorted_out = _grouped_decay_sums(self.q_key, self.q_t, self.s_key, self.s_t, w,
                                         float(scale))
        out = np.empty_like(sorted_out)
        out[self.q_order] = sorted_out
        return out


def _reverse_pair_sums(data: EventSequence):
    """Layout where event i collects earlier events of the reverse pair."""
    V = max(data.V, 1)
    return DecaySums(data.src * V + data.dst, data.t, data.dst * V + data.src, data.t)


def _pair_matrix(V, rows, cols, values):
    out = np.zeros((V, V))
    np.add.at(out, (rows, cols), values)
    np.fill_diagonal(out, 0.0)
    return out


# Poisson pairs ---------------------------------------------------------------

@dataclass
class PoissonPairs:
    rates: np.ndarray  # V x V, zero diagonal

    def window_integrals(self, history, t, pi_hat):
        return self.rates * pi_hat

    def log_likelihood(self, data: EventSequence, T=None):
        T = data.T if T is None else T
        lam = self.rates[data.src, data.dst]
        return float(np.sum(np.log(lam)) - self.rates.sum() * T)


def fit_pp(data: EventSequence, T=None, eps=0.01) -> PoissonPairs:
    """Per-pair constant rates count / T, plus eps / T smoothing on every pair."""
    T = data.T if T is None else T
    if not T > 0:
        raise ValueError("T must be positive")
    V = data.V
    counts = _pair_matrix(V, data.src, data.dst, np.ones(len(data)))
    rates = (counts + eps) / T
    np.fill_diagonal(rates, 0.0)
    return PoissonPairs(rates)


# shared-parameter Hawkes with a kernel bank ----------------------------------

def kernel_bank(t):
    """The four basis kernels at lags ``t`` (days): hour, day and week
    exponentials and a week-damped periodic kernel.  Shape (..., 4)."""
    t = np.asarray(t, dtype=np.float64)
    week = np.exp(-t / WEEK)
    return np.stack([np.exp(-t / HOUR), np.exp(-t / DAY), week,
                     week * np.sin(math.pi * t / 7.0) ** 2], axis=-1)


def kernel_bank_integral(x):
    """Integrals of each basis kernel over [0, x]; shape (..., 4)."""
    x = np.asarray(x, dtype=np.float64)
    g1 = HOUR * -np.expm1(-x / HOUR)
    g2 = DAY * -np.expm1(-x / DAY)
    g3 = WEEK * -np.expm1(-x / WEEK)
    # sin^2 = (1 - cos) / 2 and the cosine part as a complex exponential
    c = complex(-1.0 / WEEK, _PERIOD_FREQ)
    g4 = 0.5 * g3 - 0.5 * np.real(np.expm1(c * x) / c)
    return np.stack([g1, g2, g3, g4], axis=-1)


@dataclass
class SharedHawkes:
    """lambda_uv(t) = phi + sum over earlier v->u events of sum_b beta_b gamma_b."""

    phi: float
    beta: np.ndarray
    V: int
    grad_norm: float = float("nan")

    @property
    def theta(self):
        return np.concatenate(([self.phi], self.beta))

    def window_integrals(self, history, t, pi_hat):
        h = history.subset(history.t <= t) if len(history) else history
        out = np.full((self.V, self.V), self.phi * pi_hat)
        if len(h):
            w = (kernel_bank_integral(t + pi_hat - h.t) - kernel_bank_integral(t - h.t)) @ self.beta
            out += _pair_matrix(self.V, h.dst, h.src, w)
        np.fill_diagonal(out, 0.0)
        return out

    def log_likelihood(self, data: EventSequence, T=None):
        F, c = mhp_design(data, T)
        return _concave_objective(self.theta, F, c)


def mhp_design(data: EventSequence, T=None):
    """Per-event features [1, G_1..G_4] and compensator coefficients.

    The log likelihood is sum_i log(F_i theta) - c theta for
    theta = (phi, beta_1..beta_4): concave in theta.
    """
    T = data.T if T is None else T
    n, V = len(data), data.V
    F = np.zeros((n, 5))
    F[:, 0] = 1.0
    if n:
        sums = _reverse_pair_sums(data)
        F[:, 1] = sums(HOUR)
        F[:, 2] = sums(DAY)
        F[:, 3] = sums(WEEK)
        wt = _PERIOD_FREQ * data.t
        cos_part = np.cos(wt) * sums(WEEK, np.cos(wt)) + np.sin(wt) * sums(WEEK, np.sin(wt))
        F[:, 4] = np.maximum(0.5 * (F[:, 3] - cos_part), 0.0)
    c = np.zeros(5)
    c[0] = T * V * (V - 1)
    if n:
        c[1:] = kernel_bank_integral(T - data.t).sum(axis=0)
    return F, c


def _concave_objective(theta, F, c):
    lam = F @ theta
    if np.any(~(lam > 0)):
        return -np.inf
    return float(np.sum(np.log(lam)) - c @ theta)


def mhp_gradient(theta, F, c):
    lam = F @ theta
    return F.T @ (1.0 / lam) - c


def fit_mhp(data: EventSequence, T=None, tol=1e-6, max_iter=500) -> SharedHawkes:
    """Maximum likelihood for (phi, beta_1..beta_4) >= 0 by projected Newton.

    Stops when the projected gradient norm falls below ``tol``.
    """
    T = data.T if T is None else T
    if len(data) == 0:
        raise FitError("fit_mhp needs at least one event")
    F, c = mhp_design(data, T)
    x = np.zeros(5)
    x[0] = len(data) / c[0]
    x[1:] = 1e-3 * x[0]
    obj = _concave_objective(x, F, c)
    floor = np.array([1e-12 * x[0], 0.0, 0.0, 0.0, 0.0])
    pg_norm = np.inf
    for _ in range(max_iter):
        lam = F @ x
        g = F.T @ (1.0 / lam) - c
        at_bound = (x <= floor) & (g <= 0)
        pg = np.where(at_bound, 0.0, g)
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm < tol:
            break
        free = ~at_bound
        Fw = F[:, free] / lam[:, None]
        Hf = Fw.T @ Fw
        try:
            step = np.zeros(5)
            step[free] = np.linalg.solve(Hf + 1e-300 * np.eye(Hf.shape[0]), g[free])
        except np.linalg.LinAlgError:
            step = np.where(free, g, 0.0)
        t = 1.0
        improved = False
        for _ in range(60):
            cand = np.maximum(x + t * step, floor)
            new = _concave_objective(cand, F, c)
            if new >= obj + 1e-4 * g @ (cand - x) and np.isfinite(new):
                improved = True
                break
            t *= 0.5
        if not improved:
            # Newton direction failed; fall back to a projected gradient step
            t = 1.0 / max(np.abs(g).max(), 1.0)
            for _ in range(60):
                cand = np.maximum(x + t * g, floor)
                new = _concave_objective(cand, F, c)
                if new > obj:
                    improved = True
                    break
                t *= 0.5
        if not improved:
            break
        x, obj = cand, new
    if not np.isfinite(obj):
        raise FitError("non-finite likelihood in fit_mhp")
    return SharedHawkes(float(x[0]), x[1:].copy(), data.V, pg_norm)


# block models ----------------------------------------------------------------

def spectral_labels(adjacency, k, seed=0):
    """k-means on the top-k left and right singular vectors of the adjacency."""
    A = np.asarray(adjacency, dtype=np.float64)
    V = A.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1 or V <= k:
        return np.zeros(V, dtype=np.int64) if k == 1 else np.arange(V) % k
    U, s, Vt = np.linalg.svd(A)
    emb = np.hstack([U[:, :k], Vt[:k].T])
    km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(emb)
    # relabel by first appearance so labels do not depend on k-means ids
    _, first = np.unique(km.labels_, return_index=True)
    remap = np.empty(k, dtype=np.int64)
    remap[km.labels_[np.sort(first)]] = np.arange(len(first))
    return remap[km.labels_]


def _exp_hawkes_mle(sums_fn, n_events, exposure, source_times, T, init=None):
    """MLE of (phi, alpha, scale) for lambda = phi + alpha sum exp(-dt/scale).

    ``sums_fn(scale)`` gives the decayed sums at the fitted events,
    ``exposure`` multiplies phi in the compensator and ``source_times`` are
    the exciting events.
    """
    if n_events == 0:
        return None

    def negll(z):
        phi, alpha, scale = np.exp(z)
        S = sums_fn(scale)
        lam = phi + alpha * S
        comp = phi * exposure + alpha * scale * np.sum(-np.expm1(-(T - source_times) / scale))
        return -(np.sum(np.log(lam)) - comp)

    phi0 = n_events / exposure if init is None else init[0]
    starts = [np.log([phi0, 0.5, 1.0])] if init is None else [np.log(init)]
    starts.append(np.log([0.5 * phi0, 1.0, 0.2]))
    best = None
    for z0 in starts:
        res = minimize(negll, z0, method="L-BFGS-B",
                       bounds=[(-40.0, 20.0), (-30.0, 10.0), (-10.0, 8.0)])
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise FitError("non-finite likelihood in block Hawkes fit")
    return np.exp(best.x)


@dataclass
class BlockHawkes:
    """Per block pair (phi, alpha, scale); ``kind`` is 'chip' or 'sbm'.

    CHIP: every node pair is its own process with the block pair's
    parameters.  SBM: one process per ordered block pair; its intensity is
    split evenly over the node pairs of the block pair when scoring.
    """

    kind: str
    labels: np.ndarray
    phi: np.ndarray
    alpha: np.ndarray
    scale: np.ndarray

    @property
    def k(self):
        return self.phi.shape[0]

    def _block_pair_sizes(self):
        sizes = np.bincount(self.labels, minlength=self.k).astype(np.float64)
        n = np.outer(sizes, sizes)
        n[np.diag_indices(self.k)] -= sizes
        return n

    def window_integrals(self, history, t, pi_hat):
        V = self.labels.shape[0]
        cu = self.labels[:, None]
        cv = self.labels[None, :]
        h = history.subset(history.t <= t) if len(history) else history
        if self.kind == "chip":
            out = self.phi[cu, cv] * pi_hat * np.ones((V, V))
            if len(h):
                a = self.labels[h.dst]
                b = self.labels[h.src]
                sc = self.scale[a, b]
                w = self.alpha[a, b] * sc * (np.exp(-(t - h.t) / sc) - np.exp(-(t + pi_hat - h.t) / sc))
                out += _pair_matrix(V, h.dst, h.src, w)
        else:
            block = self.phi * pi_hat
            if len(h):
                a = self.labels[h.dst]
                b = self.labels[h.src]
                sc = self.scale[a, b]
                w = self.alpha[a, b] * sc * (np.exp(-(t - h.t) / sc) - np.exp(-(t + pi_hat - h.t) / sc))
                np.add.at(block, (a, b), w)
            n = np.maximum(self._block_pair_sizes(), 1.0)
            out = (block / n)[cu, cv] * np.ones((V, V))
        np.fill_diagonal(out, 0.0)
        return out


def _fit_block(data: EventSequence, labels, k, T, kind):
    cs = labels[data.src]
    cd = labels[data.dst]
    sizes = np.bincount(labels, minlength=k).astype(np.float64)
    n_pairs = np.outer(sizes, sizes)
    n_pairs[np.diag_indices(k)] -= sizes
    phi = np.full((k, k), np.nan)
    alpha = np.full((k, k), np.nan)
    scale = np.full((k, k), np.nan)
    V = data.V
    for a in range(k):
        for b in range(k):
            mine = (cs == a) & (cd == b)
            src = (cs == b) & (cd == a)
            if not mine.any() or n_pairs[a, b] == 0:
                continue
            if kind == "chip":
                sums = DecaySums(data.src[mine] * V + data.dst[mine], data.t[mine],
                                 data.dst[src] * V + data.src[src], data.t[src])
            else:
                sums = DecaySums(np.zeros(mine.sum(), np.int64), data.t[mine],
                                 np.zeros(src.sum(), np.int64), data.t[src])
            exposure = T * (n_pairs[a, b] if kind == "chip" else 1.0)
            est = _exp_hawkes_mle(sums, int(mine.sum()), exposure, data.t[src], T)
            phi[a, b], alpha[a, b], scale[a, b] = est
    return phi, alpha, scale


def fit_blockmodels(data: EventSequence, adjacency, k, T=None, seed=0, labels=None):
    """Spectral labels of the binarised adjacency, then per-block
    exponential-Hawkes MLE.

    Returns ``(chip, sbm)``.  Block pairs without events take the parameters
    of the corresponding one-block fit (for the SBM rescaled to the block
    pair's number of node pairs).
    """
    T = data.T if T is None else T
    if k < 1:
        raise ValueError("k must be >= 1")
    if labels is None:
        # binary: a few bursty pairs would otherwise dominate the embedding
        labels = spectral_labels(np.asarray(adjacency) > 0, k, seed)
    labels = np.asarray(labels, dtype=np.int64)
    ones = np.zeros(data.V, dtype=np.int64)
    out = []
    for kind in ("chip", "sbm"):
        phi, alpha, scale = _fit_block(data, labels, k, T, kind)
        missing = np.isnan(phi)
        if missing.any():
            gphi, galpha, gscale = _fit_block(data, ones, 1, T, kind) if len(data) else \
                (np.full((1, 1), 1e-12),) * 3
            if np.isnan(gphi[0, 0]):
                gphi, galpha, gscale = np.full((1, 1), 1e-12), np.zeros((1, 1)), np.ones((1, 1))
            fill_phi = gphi[0, 0]
            if kind == "sbm":
                V = data.V
                sizes = np.bincount(labels, minlength=k).astype(np.float64)
                n_pairs = np.outer(sizes, sizes)
                n_pairs[np.diag_indices(k)] -= sizes
                fill_phi = gphi[0, 0] * n_pairs / max(V * (V - 1), 1)
                phi[missing] = fill_phi[missing]
            else:
                phi[missing] = fill_phi
            alpha[missing] = galpha[0, 0]
            scale[missing] = gscale[0, 0]
        out.append(BlockHawkes(kind, labels, phi, alpha, scale))
    return tuple(out)
