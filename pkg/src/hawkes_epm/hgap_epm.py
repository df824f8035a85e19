"""Truncated hierarchical gamma process edge partition model (stage 1).

Generative model on a binary directed graph without self-edges::

    phi[u, k]    ~ Gamma(a[u], rate c[u])        a[u] ~ Gamma(e0, rate f0)
    r[k]         ~ Gamma(r0 / K, rate c0)
    omega[k, k]  ~ Gamma(xi r[k], rate chi)      omega[k, k'] ~ Gamma(r[k] r[k'], rate chi)
    e[u, v]      = 1(n[u, v] >= 1),              n[u, v] ~ Poisson(phi[u]' omega phi[v])

with Gamma(1, 1) priors on c[u], c0, e0, f0, r0, xi and chi.

The sampler works on the latent Poisson counts: zero-truncated Poisson
draws on edges, a multinomial split of each count over community pairs, and
gamma conjugacy.  Shapes a[u] and r[k] (and e0, r0) are updated by
marginalising their gamma-distributed children into negative binomial counts
and drawing Chinese restaurant table (CRT) counts, the usual augmentation for
gamma shape parameters.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaln

from .events import EventSequence

log = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny
_FLUSH = 1e-100
HYPER_NAMES = ("c0", "e0", "f0", "r0", "xi", "chi")


class SamplerError(ArithmeticError):
    pass


@dataclass
class AggregatedGraph:
    """Binary adjacency: e[u, v] = 1 iff at least one u -> v event."""

    e: np.ndarray

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=bool)
        if self.e.ndim != 2 or self.e.shape[0] != self.e.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any(np.diag(self.e)):
            raise ValueError("adjacency must have a zero diagonal")

    @property
    def V(self):
        return self.e.shape[0]

    @property
    def n_edges(self):
        return int(self.e.sum())


def aggregate(data: EventSequence) -> AggregatedGraph:
    e = np.zeros((data.V, data.V), dtype=bool)
    e[data.src, data.dst] = True
    return AggregatedGraph(e)


@dataclass
class CommunityParams:
    phi: np.ndarray
    omega: np.ndarray
    r: np.ndarray
    a: np.ndarray
    c: np.ndarray
    hyper: dict = field(default_factory=lambda: dict.fromkeys(HYPER_NAMES, 1.0))

    def __post_init__(self):
        for name in ("phi", "omega", "r", "a", "c"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.hyper = {k: float(v) for k, v in self.hyper.items()}

    @property
    def K(self):
        return self.r.shape[0]

    @property
    def V(self):
        return self.phi.shape[0]

    def copy(self):
        return CommunityParams(self.phi.copy(), self.omega.copy(), self.r.copy(),
                               self.a.copy(), self.c.copy(), dict(self.hyper))

    def rates(self):
        """V x V Poisson rates phi_u' omega phi_v with a zero diagonal."""
        z = self.phi @ self.omega @ self.phi.T
        np.fill_diagonal(z, 0.0)
        return z

    def edge_probabilities(self):
        return -np.expm1(-self.rates())

    def check(self):
        arrays = (self.phi, self.omega, self.r)
        if any(np.any(x < 0) or not np.all(np.isfinite(x)) for x in arrays):
            raise SamplerError("negative or non-finite community parameters")
        if np.any(self.a <= 0) or np.any(self.c <= 0) or min(self.hyper.values()) <= 0:
            raise SamplerError("a, c and hyperparameters must be positive")

    def log_joint(self, graph: AggregatedGraph) -> float:
        """Log density of the graph and all parameters (gamma factors on the log scale)."""
        z = self.rates()
        off = ~np.eye(self.V, dtype=bool)
        e = graph.e
        ll = float(np.sum(np.log(-np.expm1(-z[e & off]))) - np.sum(z[~e & off]))
        h = self.hyper
        K = self.K
        lp = _gamma_logpdf(self.phi, self.a[:, None], self.c[:, None])
        lp += _gamma_logpdf(self.a, h["e0"], h["f0"])
        lp += _gamma_logpdf(self.c, 1.0, 1.0)
        lp += _gamma_logpdf(self.r, h["r0"] / K, h["c0"])
        lp += _gamma_logpdf(self.omega, omega_shape(self.r, h["xi"]), h["chi"])
        lp += _gamma_logpdf(np.array([h[k] for k in HYPER_NAMES]), 1.0, 1.0)
        return ll + lp

    def map_score(self, graph: AggregatedGraph) -> float:
        """Criterion used to pick the MAP sample.

        Graph log likelihood plus the log densities of the node-level
        variables (phi, a, c).  Community-level terms are left out: under
        shrinkage most r[k] and omega entries collapse towards zero and their
        log densities swing by orders of magnitude between sweeps without
        reflecting fit.
        """
        z = self.rates()
        off = ~np.eye(self.V, dtype=bool)
        e = graph.e
        ll = float(np.sum(np.log(-np.expm1(-z[e & off]))) - np.sum(z[~e & off]))
        h = self.hyper
        return ll + _gamma_logpdf(self.phi, self.a[:, None], self.c[:, None]) \
            + _gamma_logpdf(self.a, h["e0"], h["f0"]) + _gamma_logpdf(self.c, 1.0, 1.0)

    @classmethod
    def prior_mean(cls, V, K):
        h = dict.fromkeys(HYPER_NAMES, 1.0)
        r = np.full(K, h["r0"] / K / h["c0"])
        return cls(phi=np.ones((V, K)), omega=omega_shape(r, h["xi"]) / h["chi"], r=r,
                   a=np.ones(V), c=np.ones(V), hyper=h)


def _gamma_logpdf(x, shape, rate):
    """Gamma log density of log(x), i.e. including the Jacobian x.

    On this scale the density stays bounded when shapes underflow towards
    zero, which happens to r[k] r[k'] for shrunk communities."""
    x = np.maximum(np.asarray(x, dtype=np.float64), _TINY)
    shape = np.maximum(np.broadcast_to(np.asarray(shape, np.float64), x.shape), _TINY)
    rate = np.broadcast_to(np.asarray(rate, np.float64), x.shape)
    return float(np.sum(shape * np.log(rate) - gammaln(shape) + shape * np.log(x) - rate * x))


def omega_shape(r, xi):
    s = np.outer(r, r)
    np.fill_diagonal(s, xi * r)
    return s


def edge_probability(params: CommunityParams, u, v):
    """Bernoulli-Poisson link 1 - exp(-phi_u' omega phi_v)."""
    if u == v:
        raise ValueError("edge_probability is undefined for u == v")
    zeta = float(params.phi[u] @ params.omega @ params.phi[v])
    return -math.expm1(-zeta)


# latent counts ---------------------------------------------------------------

@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _ztp(rate):
    """Zero-truncated Poisson draw."""
    if rate >= 1.0:
        while True:
            n = np.random.poisson(rate)
            if n >= 1:
                return n
    # inversion on P(n) = rate^n e^-rate / (n! (1 - e^-rate)), n >= 1
    u = np.random.random()
    p = rate * np.exp(-rate) / (-np.expm1(-rate))
    cdf = p
    n = 1
    while u > cdf and n < 10000:
        n += 1
        p *= rate / n
        cdf += p
    return n


@njit(cache=True)
def _partition_counts(eu, ev, phi, omega):
    V, K = phi.shape
    m_node = np.zeros((V, K))
    m_comm = np.zeros((K, K))
    counts = np.zeros(eu.shape[0], dtype=np.int64)
    bad = -1
    w_k = np.zeros(K)
    w_kp = np.zeros(K)
    for e in range(eu.shape[0]):
        u, v = eu[e], ev[e]
        # marginal over the sender community: phi[u,k] * (omega @ phi[v])[k]
        total = 0.0
        for k in range(K):
            s = 0.0
            for kp in range(K):
                s += omega[k, kp] * phi[v, kp]
            w_k[k] = phi[u, k] * s
            total += w_k[k]
        if not (total > 0.0 and np.isfinite(total)):
            if bad < 0 and not np.isfinite(total):
                bad = e
            # a zero rate with an observed edge: put the count on the
            # heaviest cell so the state stays consistent
            total = 0.0
            for k in range(K):
                w_k[k] = phi[u, k] + 1e-300
                total += w_k[k]
        n = _ztp(total) if total > 1e-300 else 1
        counts[e] = n
        for _ in range(n):
            x = np.random.random() * total
            k = 0
            acc = w_k[0]
            while acc < x and k < K - 1:
                k += 1
                acc += w_k[k]
            tot2 = 0.0
            for kp in range(K):
                w_kp[kp] = omega[k, kp] * phi[v, kp]
                tot2 += w_kp[kp]
            if tot2 > 0.0:
                x = np.random.random() * tot2
                kp = 0
                acc = w_kp[0]
                while acc < x and kp < K - 1:
                    kp += 1
                    acc += w_kp[kp]
            else:
                kp = k
            m_node[u, k] += 1.0
            m_node[v, kp] += 1.0
            m_comm[k, kp] += 1.0
    return counts, m_node, m_comm, bad


def crt(m, r, rng):
    """Chinese restaurant table counts CRT(m, r), elementwise."""
    m = np.asarray(m).astype(np.int64)
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), m.shape)
    flat_m, flat_r = m.reshape(-1), r.reshape(-1)
    idx = np.repeat(np.arange(flat_m.size), flat_m)
    if idx.size == 0:
        return np.zeros(m.shape)
    offsets = np.concatenate(([0], np.cumsum(flat_m)[:-1]))
    j = np.arange(idx.size) - offsets[idx]
    denom = flat_r[idx] + j
    prob = np.divide(flat_r[idx], denom, out=np.ones(idx.size), where=denom > 0)
    draws = rng.random(idx.size) < prob
    return np.bincount(idx, weights=draws, minlength=flat_m.size).reshape(m.shape)


# sweep -----------------------------------------------------------------------

def _gamma(rng, shape, rate):
    # draws below _FLUSH become exact zeros: products of three surviving
    # values stay normal floats, avoiding slow denormal arithmetic
    x = rng.gamma(np.maximum(shape, _TINY), 1.0 / rate)
    return np.where(x < _FLUSH, 0.0, x)


def gibbs_sweep(state: CommunityParams, graph: AggregatedGraph, rng,
                update_hyper: bool = True) -> CommunityParams:
    """One full sweep over latent counts, factors, shapes and hyperparameters.

    With ``update_hyper=False`` the six global hyperparameters stay fixed.
    """
    s = state.copy()
    V, K = s.V, s.K
    h = s.hyper
    eu, ev = np.nonzero(graph.e)
    _seed(int(rng.integers(2**31 - 1)))
    _, m_node, m_comm, bad = _partition_counts(eu.astype(np.int64), ev.astype(np.int64),
                                               s.phi, s.omega)
    if bad >= 0:
        raise SamplerError(f"non-finite rate for edge ({eu[bad]}, {ev[bad]})")

    # node factors: (a[u], phi[u]) drawn as a block, a[u] with phi[u]
    # integrated out (negative binomial counts, CRT augmentation)
    col = s.phi.sum(axis=0)
    sym = s.omega + s.omega.T
    for u in range(V):
        others = col - s.phi[u]
        theta = sym @ others
        l_u = crt(m_node[u], s.a[u], rng)
        s.a[u] = _pos(rng, h["e0"] + l_u.sum(), h["f0"] + np.log1p(theta / s.c[u]).sum())
        s.phi[u] = _gamma(rng, s.a[u] + m_node[u], s.c[u] + theta)
        s.c[u] = _pos(rng, 1.0 + K * s.a[u], 1.0 + s.phi[u].sum())
        col = others + s.phi[u]
    log_a = np.log(s.a)
    if update_hyper:
        h["e0"] = _slice_positive(
            lambda e0: -e0 + V * (e0 * math.log(h["f0"]) - math.lgamma(e0))
            + (e0 - 1.0) * log_a.sum(),
            h["e0"], rng)
        h["f0"] = _pos(rng, 1.0 + V * h["e0"], 1.0 + s.a.sum())

    # community weights: omega integrated out while r and xi are updated
    # (CRT counts l ~ Poisson(shape * L)), then omega drawn given the new shapes
    theta_kk = np.maximum(np.outer(col, col) - s.phi.T @ s.phi, 0.0)
    Lkk = np.log1p(theta_kk / h["chi"])
    l_kk = crt(m_comm, omega_shape(s.r, h["xi"]), rng)
    for k in range(K):
        cross = s.r * (Lkk[k] + Lkk[:, k])
        rate = h["c0"] + h["xi"] * Lkk[k, k] + cross.sum() - cross[k]
        cnt = l_kk[k].sum() + l_kk[:, k].sum() - l_kk[k, k]
        s.r[k] = _pos(rng, h["r0"] / K + cnt, rate)
    if update_hyper:
        h["xi"] = _pos(rng, 1.0 + np.trace(l_kk), 1.0 + np.sum(s.r * np.diag(Lkk)))
        h["c0"] = _pos(rng, 1.0 + h["r0"], 1.0 + s.r.sum())
        log_r = np.log(s.r)
        h["r0"] = _slice_positive(
            lambda r0: -r0 + K * (r0 / K * math.log(h["c0"]) - math.lgamma(r0 / K))
            + (r0 / K - 1.0) * log_r.sum(),
            h["r0"], rng)

    shape = omega_shape(s.r, h["xi"])
    s.omega = _gamma(rng, shape + m_comm, h["chi"] + theta_kk)
    if update_hyper:
        h["chi"] = _pos(rng, 1.0 + shape.sum(), 1.0 + s.omega.sum())
    s.check()
    return s


def _pos(rng, shape, rate):
    """Gamma draw(s) floored at the smallest normal float."""
    return np.maximum(rng.gamma(shape, 1.0 / rate), _TINY) if np.ndim(shape) \
        else max(float(rng.gamma(shape, 1.0 / rate)), _TINY)


def _slice_positive(logpdf, x0, rng, width=1.0, max_steps=64):
    """One slice-sampling update of a positive scalar, on the log scale."""
    def target(y):
        x = math.exp(y)
        if not 0.0 < x < math.inf:
            return -math.inf
        return logpdf(x) + y

    y0 = math.log(x0)
    level = target(y0) + math.log(rng.random())
    lo = y0 - width * rng.random()
    hi = lo + width
    for _ in range(max_steps):
        if target(lo) <= level:
            break
        lo -= width
    for _ in range(max_steps):
        if target(hi) <= level:
            break
        hi += width
    while True:
        y = lo + (hi - lo) * rng.random()
        if target(y) > level:
            return math.exp(y)
        if y < y0:
            lo = y
        else:
            hi = y


def initial_state(V, K, rng) -> CommunityParams:
    h = dict.fromkeys(HYPER_NAMES, 1.0)
    r = np.full(K, 1.0 / K)
    return CommunityParams(phi=_pos(rng, np.ones((V, K)), 1.0),
                           omega=omega_shape(r, h["xi"]) / h["chi"],
                           r=r, a=np.ones(V), c=np.ones(V), hyper=h)


@dataclass
class StaticFit:
    params: CommunityParams
    sweep: int
    score: float
    trace: list


def fit_map(graph: AggregatedGraph, K_max: int = 100, sweeps: int = 10000, rng=None,
            estimate: str = "map", callback=None) -> StaticFit:
    """Run the sampler and return the selected post-burn-in state.

    The first half of the sweeps is burn-in.  ``estimate="map"`` keeps the
    sampled state with the highest ``map_score``; ``"mean"`` averages phi,
    omega, r, a and c over the kept sweeps.  ``trace`` holds the full joint
    log density after every sweep.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    if estimate not in ("map", "mean"):
        raise ValueError("estimate must be 'map' or 'mean'")
    rng = np.random.default_rng(rng)
    if graph.n_edges == 0:
        warnings.warn("graph has no edges; returning prior-mean parameters", RuntimeWarning)
        p = CommunityParams.prior_mean(graph.V, K_max)
        return StaticFit(p, 0, p.map_score(graph), [])
    state = initial_state(graph.V, K_max, rng)
    burn = sweeps // 2
    best, best_score, best_sweep = None, -np.inf, -1
    acc, n_acc = None, 0
    trace = []
    for it in range(sweeps):
        state = gibbs_sweep(state, graph, rng)
        lj = state.log_joint(graph)
        if not np.isfinite(lj):
            raise SamplerError(f"joint log density is {lj} after sweep {it}")
        trace.append(lj)
        if callback is not None:
            callback(it, state, lj)
        if it < burn:
            continue
        score = state.map_score(graph)
        if score > best_score:
            best, best_score, best_sweep = state, score, it
        if estimate == "mean":
            if acc is None:
                acc = state.copy()
            else:
                for name in ("phi", "omega", "r", "a", "c"):
                    setattr(acc, name, getattr(acc, name) + getattr(state, name))
            n_acc += 1
    if estimate == "mean":
        for name in ("phi", "omega", "r", "a", "c"):
            setattr(acc, name, getattr(acc, name) / n_acc)
        acc.hyper = dict(best.hyper)
        return StaticFit(acc, sweeps - 1, acc.map_score(graph), trace)
    return StaticFit(best, best_sweep, best_score, trace)


def active_communities(params: CommunityParams, threshold=1e-3):
    """Communities carrying at least ``threshold`` of the total rate mass."""
    col = params.phi.sum(axis=0)
    mass = np.outer(col, col) * params.omega
    share = (mass.sum(axis=0) + mass.sum(axis=1)) / (2.0 * mass.sum())
    keep = np.flatnonzero(share >= threshold)
    return keep if keep.size else np.array([int(np.argmax(share))])


def prune(params: CommunityParams, threshold=1e-3) -> CommunityParams:
    keep = active_communities(params, threshold)
    return CommunityParams(params.phi[:, keep], params.omega[np.ix_(keep, keep)],
                           params.r[keep], params.a.copy(), params.c.copy(), dict(params.hyper))
