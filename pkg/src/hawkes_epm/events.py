"""Event sequences, exponential kernels and exact likelihood evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import gammaln, xlogy

from . import _forward

if TYPE_CHECKING:
    from .model import CovariateMatrix, HawkesParams, LatentAssignment


class EvaluationError(ArithmeticError):
    """Raised when an intensity is non-positive at an observed event."""


@dataclass(frozen=True)
class EventSequence:
    """Time-ordered directed events ``(t_i, s_i, d_i)`` on ``[0, T]``."""

    t: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    T: float
    V: int

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        src = np.ascontiguousarray(self.src, dtype=np.int64)
        dst = np.ascontiguousarray(self.dst, dtype=np.int64)
        if not (t.shape == src.shape == dst.shape) or t.ndim != 1:
            raise ValueError("t, src and dst must be 1-d arrays of equal length")
        if self.V < 0 or self.T < 0:
            raise ValueError("V and T must be nonnegative")
        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError("events must be sorted by time")
            if t[0] < 0 or t[-1] > self.T:
                raise ValueError("event times must lie in [0, T]")
            if np.any(src == dst):
                raise ValueError("self-edges are not allowed")
            if min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.V:
                raise ValueError("node ids must lie in [0, V)")
        for name, arr in (("t", t), ("src", src), ("dst", dst)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "V", int(self.V))

    @classmethod
    def from_events(cls, events, T=None, V=None):
        """Build from an iterable of ``(t, s, d)``; sorts stably by time."""
        arr = list(events)
        t = np.array([e[0] for e in arr], dtype=np.float64)
        s = np.array([e[1] for e in arr], dtype=np.int64)
        d = np.array([e[2] for e in arr], dtype=np.int64)
        idx = np.argsort(t, kind="stable")
        if T is None:
            T = float(t.max()) if t.size else 0.0
        if V is None:
            V = int(max(s.max(), d.max()) + 1) if t.size else 0
        return cls(t[idx], s[idx], d[idx], T, V)

    def __len__(self):
        return self.t.shape[0]

    @property
    def N(self):
        return len(self)

    def subset(self, mask_or_idx, T=None):
        idx = np.asarray(mask_or_idx)
        return EventSequence(self.t[idx], self.src[idx], self.dst[idx],
                             self.T if T is None else T, self.V)

    def with_horizon(self, T):
        return EventSequence(self.t, self.src, self.dst, T, self.V)

    def pair_counts(self):
        """Dense V x V matrix of directed event counts."""
        counts = np.zeros((self.V, self.V), dtype=np.int64)
        np.add.at(counts, (self.src, self.dst), 1)
        return counts

    @property
    def index(self) -> "PairIndex":
        # cached: the sequence is immutable
        cached = self.__dict__.get("_index")
        if cached is None:
            cached = PairIndex.build(self)
            object.__setattr__(self, "_index", cached)
        return cached


@dataclass(frozen=True)
class PairIndex:
    """Grouping of events by unordered and ordered node pair."""

    order: np.ndarray        # event ids grouped by unordered pair, time-sorted
    starts: np.ndarray       # group offsets into ``order``
    direction: np.ndarray    # 0 if src < dst else 1
    pairs: np.ndarray        # (P, 2) active ordered pairs, lexicographic
    pair_of_event: np.ndarray

    @classmethod
    def build(cls, data: EventSequence):
        n, V = len(data), max(data.V, 1)
        lo = np.minimum(data.src, data.dst)
        hi = np.maximum(data.src, data.dst)
        key = lo * V + hi
        order = np.argsort(key, kind="stable")
        if n:
            brk = np.flatnonzero(np.diff(key[order])) + 1
            starts = np.concatenate(([0], brk, [n]))
        else:
            starts = np.zeros(1, dtype=np.int64)
        direction = (data.src > data.dst).astype(np.int64)
        okey = data.src * V + data.dst
        uniq, inv = np.unique(okey, return_inverse=True)
        pairs = np.stack([uniq // V, uniq % V], axis=1) if n else np.zeros((0, 2), np.int64)
        return cls(order.astype(np.int64), starts.astype(np.int64), direction,
                   pairs.astype(np.int64), inv.astype(np.int64).reshape(-1))

    @property
    def n_pairs(self):
        return self.pairs.shape[0]


@dataclass(frozen=True)
class ExpKernel:
    """Exponential triggering kernel ``alpha * exp(-dt / delta)``."""

    alpha: float
    delta: float

    def __post_init__(self):
        if self.alpha < 0 or not self.delta > 0:
            raise ValueError("need alpha >= 0 and delta > 0")

    @property
    def stationary(self) -> bool:
        return self.alpha * self.delta < 1.0

    @property
    def total_mass(self) -> float:
        return self.alpha * self.delta


def kernel_value(kernel: ExpKernel, dt):
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("kernel_value needs dt >= 0")
    out = kernel.alpha * np.exp(-dt / kernel.delta)
    return float(out) if out.ndim == 0 else out


def kernel_compensator(kernel: ExpKernel, t_j, start, stop):
    """Integral of the kernel triggered at ``t_j`` over ``[start, stop]``.

    Only the part after ``t_j`` counts.  ``stop`` may be ``inf``.
    """
    t_j, start, stop = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64)
                                             for x in (t_j, start, stop)))
    if np.any(start > stop):
        raise ValueError("kernel_compensator needs start <= stop")
    lo = np.maximum(start, t_j)
    hi = np.maximum(stop, t_j)
    d = kernel.delta
    out = kernel.alpha * d * (np.exp(-(lo - t_j) / d) - np.exp(-(hi - t_j) / d))
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class DirectedPairHistory:
    """Per ordered pair event times, with optional pattern tag weights.

    ``weights[i]`` is a K x K array over the event's own pattern
    ``(z^s, z^d)``: one-hot for hard assignments, responsibilities for soft.
    """

    times: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    @classmethod
    def from_events(cls, data: EventSequence, tag_weights=None):
        hist = cls()
        for key in set(zip(data.src.tolist(), data.dst.tolist())):
            mask = (data.src == key[0]) & (data.dst == key[1])
            hist.times[key] = data.t[mask]
            if tag_weights is not None:
                hist.weights[key] = np.asarray(tag_weights)[mask]
        return hist

    def before(self, t):
        """History restricted to events strictly before ``t``."""
        out = DirectedPairHistory()
        for key, ts in self.times.items():
            m = ts < t
            out.times[key] = ts[m]
            if key in self.weights:
                out.weights[key] = self.weights[key][m]
        return out

    def pair_times(self, u, v):
        return self.times.get((u, v), np.zeros(0))

    def pattern_times(self, u, k, kp, v):
        """Times of ``u -> v`` events tagged with pattern ``(k, kp)``."""
        ts = self.pair_times(u, v)
        if (u, v) not in self.weights:
            raise KeyError("history carries no pattern tags")
        w = self.weights[(u, v)]
        return ts[w[:, k, kp] == 1.0]


def intensity_at(params: "HawkesParams", history: DirectedPairHistory, u, v, t,
                 covariates: "CovariateMatrix | None" = None):
    """lambda_{u,v}(t) from base rates plus decayed opposite events before t."""
    return float(sub_intensities(params, history, u, v, t, covariates).sum())


def sub_intensities(params, history, u, v, t, covariates=None):
    """K x K array of lambda_{u,k,k',v}(t)."""
    base = params.base_matrix(u, v, covariates)
    ts = history.pair_times(v, u)
    mask = ts < t
    if not mask.any():
        return base
    ts = ts[mask]
    K = params.K
    if (v, u) in history.weights:
        w = history.weights[(v, u)][mask]
    elif K == 1:
        w = np.ones((ts.size, 1, 1))
    else:
        raise ValueError("K > 1 needs pattern-tagged history")
    decay = np.exp(-(t - ts) / params.delta)
    # event j with own pattern (k', k) feeds receiving pattern (k, k')
    exc = np.einsum("j,jab->ba", decay, w)
    return base + params.alpha * exc


def naive_excitation(data: EventSequence, weights, delta):
    """O(N^2) reference for the per-event excitation sums."""
    n = len(data)
    K = weights.shape[1]
    S = np.zeros((n, K, K))
    for i in range(n):
        opp = (data.src == data.dst[i]) & (data.dst == data.src[i]) & (data.t < data.t[i])
        for j in np.flatnonzero(opp):
            S[i] += math.exp(-(data.t[i] - data.t[j]) / delta) * weights[j].T
    return S


def event_excitation(data: EventSequence, weights, delta):
    """Recursive per-event excitation sums ``S[i, k, k']`` (see _forward)."""
    ix = data.index
    w = np.ascontiguousarray(weights, dtype=np.float64)
    return _forward.excitation_fixed(data.t, ix.direction, ix.order, ix.starts, w, float(delta))


def event_base_rates(params, data: EventSequence, covariates=None):
    """Per-event K x K base rates of each event's ordered pair."""
    ix = data.index
    mu_pairs = params.base_matrices(ix.pairs, covariates)
    return mu_pairs[ix.pair_of_event]


def compensator(params, data: EventSequence, weights, covariates=None, T=None):
    """Integrated intensity of every ordered pair over ``[0, T]``."""
    T = data.T if T is None else T
    base = params.total_base_rate(covariates) * T
    if len(data) == 0:
        return base
    tail = params.delta * (1.0 - np.exp(-(T - data.t) / params.delta))
    # event j tagged (a, b) triggers kernel alpha[b, a]
    C = np.einsum("j,jab->ba", tail, weights)
    return base + float(np.sum(params.alpha * C))


def tag_weights_for(params, data, assignments=None, covariates=None):
    """Tag weights used to evaluate the likelihood.

    Without explicit assignments the tags are the causal responsibilities
    implied by ``params`` (the expected hard tagging); for K = 1 they are 1.
    """
    if assignments is not None:
        return assignments.tag_weights()
    if params.K == 1:
        return np.ones((len(data), 1, 1))
    p_hat, p_check, _ = responsibilities(params, data, covariates)
    return p_hat + p_check


def responsibilities(params, data, covariates=None):
    """Causal exogenous/endogenous pattern responsibilities and intensities."""
    ix = data.index
    mu_ev = np.ascontiguousarray(event_base_rates(params, data, covariates))
    p_hat, p_check, lam, bad = _forward.responsibilities_forward(
        data.t, ix.direction, ix.order, ix.starts, mu_ev,
        np.ascontiguousarray(params.alpha, dtype=np.float64), float(params.delta))
    if bad >= 0:
        raise EvaluationError(
            f"intensity is zero at event {bad} "
            f"(t={data.t[bad]}, {data.src[bad]}->{data.dst[bad]})")
    return p_hat, p_check, lam


def event_intensities(params, data, weights, covariates=None):
    mu_ev = event_base_rates(params, data, covariates)
    S = event_excitation(data, weights, params.delta)
    return mu_ev.sum(axis=(1, 2)) + np.einsum("ab,iab->i", params.alpha, S)


def log_likelihood(params, data, assignments=None, covariates=None):
    weights = tag_weights_for(params, data, assignments, covariates)
    lam = event_intensities(params, data, weights, covariates)
    bad = np.flatnonzero(~(lam > 0))
    if bad.size:
        i = bad[0]
        raise EvaluationError(
            f"intensity {lam[i]} at event {i} "
            f"(t={data.t[i]}, {data.src[i]}->{data.dst[i]})")
    return float(np.sum(np.log(lam))) - compensator(params, data, weights, covariates)


def log_prior(params, data=None, covariates=None, kind="gamma"):
    """Log prior of the stage-2 parameters.

    ``kind="gamma"`` is the model prior: alpha ~ Gamma(e0, f0) and stored
    base rates mu ~ Gamma(mu~, rate exp(-x'beta)), normalised.
    ``kind="update"`` is unnormalised and adds one to every gamma shape, so
    that the closed-form EM updates (the conjugate posterior means) are the
    exact maximisers; EM ascent is measured on this form.
    beta has a zero-mean Gaussian prior with variances ``nu`` in both forms.
    """
    if kind not in ("gamma", "update"):
        raise ValueError(f"unknown prior kind {kind!r}")
    off = 1.0 if kind == "update" else 0.0
    e0, f0 = params.e0, params.f0
    lp = float(np.sum(xlogy(e0 - 1.0 + off, params.alpha) - f0 * params.alpha))
    if kind == "gamma":
        lp += params.K ** 2 * (e0 * math.log(f0) - math.lgamma(e0))
    if params.mu:
        keys = np.array(sorted(params.mu), dtype=np.int64).reshape(-1, 2)
        mu = np.stack([params.mu[tuple(k)] for k in keys.tolist()])
        shape = params.mu_tilde_pairs(keys)
        eta = params.linear_predictor(keys, covariates)
        # a zero shape is a point mass at zero and contributes nothing
        pos = shape > 0
        lp += float(np.sum(xlogy(shape[pos] - 1.0 + off, mu[pos])
                           - mu[pos] * np.exp(-eta[pos])))
        if kind == "gamma":
            lp += float(np.sum(-shape[pos] * eta[pos] - gammaln(shape[pos])))
    if params.D:
        lp -= 0.5 * float(np.sum(params.beta ** 2 / params.nu))
    return lp


def log_posterior(params: "HawkesParams", data: EventSequence,
                  assignments: "LatentAssignment | None" = None,
                  covariates: "CovariateMatrix | None" = None,
                  include_prior: bool = True, prior: str = "gamma") -> float:
    """Sum of log intensities at events minus the compensator, plus prior.

    Without ``assignments`` the pattern tags of past events are the causal
    responsibilities implied by ``params``.
    """
    ll = log_likelihood(params, data, assignments, covariates)
    if include_prior:
        ll += log_prior(params, data, covariates, kind=prior)
    return ll
