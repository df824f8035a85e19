"""Thinning simulator for the Hawkes-EPM and the block kernel-recovery scenario."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .events import EventSequence
from .model import HawkesParams, LatentAssignment


class SimulationCapError(RuntimeError):
    pass


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _tree_add(tree, n_leaves, leaf, value):
    pos = n_leaves + leaf
    while pos >= 1:
        tree[pos] += value
        pos //= 2


@njit(cache=True)
def _tree_find(tree, n_leaves, r):
    pos = 1
    while pos < n_leaves:
        left = tree[2 * pos]
        if r < left:
            pos = 2 * pos
        else:
            r -= left
            pos = 2 * pos + 1
    return pos - n_leaves


@njit(cache=True)
def _tree_rebuild(tree, n_leaves):
    for pos in range(n_leaves - 1, 0, -1):
        tree[pos] = tree[2 * pos] + tree[2 * pos + 1]


@njit(cache=True)
def _thinning(comp_cum, comp_pair, comp_pat, pair_u, pair_v, opposite, alpha, delta,
              T, K, max_events):
    """Global Ogata thinning over all (ordered pair, pattern) sub-processes.

    Excitation of every target decays at the same rate, so weights are kept
    rescaled to a reference time ``t_ref`` and the bound is the total
    intensity just after the latest accepted or rejected candidate.
    """
    KK = K * K
    n_targets = pair_u.shape[0] * KK
    n_leaves = 1
    while n_leaves < max(n_targets, 1):
        n_leaves *= 2
    tree = np.zeros(2 * n_leaves)
    M = comp_cum[-1] if comp_cum.shape[0] else 0.0
    cap = 1024
    ts = np.empty(cap)
    ev_pair = np.empty(cap, dtype=np.int64)
    ev_pat = np.empty(cap, dtype=np.int64)
    ev_exo = np.empty(cap, dtype=np.bool_)
    n = 0
    t_cur = 0.0
    t_ref = 0.0
    bound = M
    capped = False
    while bound > 0.0:
        cand = t_cur + np.random.exponential(1.0 / bound)
        if cand > T:
            break
        exc = tree[1] * np.exp(-(cand - t_ref) / delta)
        lam = M + exc
        t_cur = cand
        accept = np.random.random() * bound <= lam
        bound = lam
        if not accept:
            continue
        if n >= max_events:
            capped = True
            break
        if np.random.random() * lam < M:
            c = np.searchsorted(comp_cum, np.random.random() * M, side="right")
            if c >= comp_cum.shape[0]:
                c = comp_cum.shape[0] - 1
            p = comp_pair[c]
            z = comp_pat[c]
            exo = True
        else:
            leaf = _tree_find(tree, n_leaves, np.random.random() * tree[1])
            if leaf >= n_targets:
                leaf = n_targets - 1
            p = leaf // KK
            z = leaf % KK
            exo = False
        if n == ts.shape[0]:
            ts = np.concatenate((ts, np.empty(n)))
            ev_pair = np.concatenate((ev_pair, np.empty(n, dtype=np.int64)))
            ev_pat = np.concatenate((ev_pat, np.empty(n, dtype=np.int64)))
            ev_exo = np.concatenate((ev_exo, np.empty(n, dtype=np.bool_)))
        ts[n] = cand
        ev_pair[n] = p
        ev_pat[n] = z
        ev_exo[n] = exo
        n += 1
        # event u->v tagged (k, k') excites v->u under (k', k) with alpha[k', k]
        k = z // K
        kp = z % K
        a = alpha[kp, k]
        if a > 0.0:
            if (cand - t_ref) / delta > 200.0:
                scale = np.exp(-(cand - t_ref) / delta)
                for leaf in range(n_targets):
                    tree[n_leaves + leaf] *= scale
                _tree_rebuild(tree, n_leaves)
                t_ref = cand
            target = opposite[p] * KK + kp * K + k
            _tree_add(tree, n_leaves, target, a * np.exp((cand - t_ref) / delta))
            bound = lam + a
    return ts[:n], ev_pair[:n], ev_pat[:n], ev_exo[:n], capped


def simulate(params: HawkesParams, T: float, rng: np.random.Generator, covariates=None,
             max_events: int = 10**7):
    """Draw events on ``[0, T]`` from the factorised intensity by thinning.

    Returns the event sequence and the ground-truth hard assignment.
    """
    if not params.kernel_is_stationary():
        warnings.warn("alpha * delta >= 1 for some pattern; the process may explode "
                      f"and is capped at {max_events} events", RuntimeWarning)
    V, K = params.V, params.K
    pair_keys, comp_pair, comp_pat, rates = [], [], [], []
    for u in range(V):
        vs = np.array([v for v in range(V) if v != u], dtype=np.int64)
        if vs.size == 0:
            continue
        pairs = np.stack([np.full_like(vs, u), vs], axis=1)
        base = params.base_matrices(pairs, covariates).reshape(len(vs), K * K)
        rows, pats = np.nonzero(base > 0)
        if rows.size:
            pair_keys.append(pairs[np.unique(rows)])
            comp_pair.append(u * V + vs[rows])
            comp_pat.append(pats)
            rates.append(base[rows, pats])
    if not rates:
        empty = np.zeros(0, dtype=np.int64)
        return (EventSequence(np.zeros(0), empty, empty, T, V),
                LatentAssignment.hard(np.zeros(0, bool), empty, empty, K))
    keys = np.concatenate(pair_keys)
    support = np.unique(np.concatenate([keys[:, 0] * V + keys[:, 1],
                                        keys[:, 1] * V + keys[:, 0]]))
    pair_u, pair_v = support // V, support % V
    opposite = np.searchsorted(support, pair_v * V + pair_u)
    comp_pair = np.searchsorted(support, np.concatenate(comp_pair))
    comp_pat = np.concatenate(comp_pat).astype(np.int64)
    comp_cum = np.cumsum(np.concatenate(rates))
    _seed(int(rng.integers(2**31 - 1)))
    ts, ev_pair, ev_pat, ev_exo, capped = _thinning(
        comp_cum, comp_pair, comp_pat, pair_u, pair_v, opposite,
        np.ascontiguousarray(params.alpha), float(params.delta), float(T), K, int(max_events))
    if capped:
        raise SimulationCapError(
            f"event cap {max_events} reached at t={ts[-1]:.6g} of T={T}; "
            f"max alpha*delta = {float(np.max(params.alpha) * params.delta):.3g}")
    data = EventSequence(ts, pair_u[ev_pair], pair_v[ev_pair], T, V)
    truth = LatentAssignment.hard(ev_exo, ev_pat // K, ev_pat % K, K)
    return data, truth


# block scenario ------------------------------------------------------------

@dataclass
class BlockScenario:
    params: HawkesParams
    labels: np.ndarray
    community_rates: np.ndarray
    T: float

    def expected_rate(self):
        """Stationary expected number of events per unit time."""
        a = np.diag(self.params.alpha) * self.params.delta
        sizes = np.bincount(self.labels, minlength=self.params.K)
        return float(np.sum(self.community_rates * sizes * (sizes - 1) / (1.0 - a)))

    def expected_count(self, T=None):
        """Expected number of events on [0, T] starting from an empty history.

        The mean intensity m of each pair solves m' = (mu - (1 - rho) m) / delta
        with m(0) = mu and rho = alpha delta.
        """
        T = self.T if T is None else T
        delta = self.params.delta
        rho = np.diag(self.params.alpha) * delta
        sizes = np.bincount(self.labels, minlength=self.params.K)
        mu = self.community_rates * sizes * (sizes - 1)
        g = 1.0 - rho
        transient = rho * delta / g ** 2 * (-np.expm1(-g * T / delta))
        return float(np.sum(mu * (T / g - transient)))


def block_scenario(V=100, alphas=(0.5, 0.88, 1.38, 1.96), delta=0.45, rng=None,
                   n_events=None, T=None, community_rates=None) -> BlockScenario:
    """Nodes split uniformly into K communities; same-community pairs use
    pattern (k, k) with base rate ``mu_k ~ U[0, 1]`` and magnitude alpha_k.

    Pass ``T`` directly, or ``n_events`` to pick T so that the expected
    number of events from an empty start equals it.
    """
    rng = np.random.default_rng(rng)
    alphas = np.asarray(alphas, dtype=np.float64)
    K = alphas.shape[0]
    labels = rng.integers(0, K, size=V)
    if community_rates is None:
        community_rates = rng.uniform(0.0, 1.0, size=K)
    community_rates = np.asarray(community_rates, dtype=np.float64)
    phi = np.zeros((V, K))
    phi[np.arange(V), labels] = 1.0
    params = HawkesParams(phi=phi, omega=np.diag(community_rates), alpha=np.diag(alphas),
                          delta=delta)
    scen = BlockScenario(params, labels, community_rates, 1.0)
    if T is None:
        if n_events is None:
            raise ValueError("need n_events or T")
        if not np.all(np.diag(params.alpha) * delta < 1.0):
            raise ValueError("n_events needs alpha * delta < 1 for every community")
        hi = 2.0 * n_events / scen.expected_rate() + 10.0 * delta
        T = brentq(lambda x: scen.expected_count(x) - n_events, 0.0, hi)
    scen.T = float(T)
    return scen


# scenario config -----------------------------------------------------------

def load_scenario_config(path):
    """Read a JSON or TOML scenario: V, K, alpha, delta, mu, T or n_events,
    seed, max_events."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        import tomli
        with open(path, "rb") as fh:
            cfg = tomli.load(fh)
    else:
        cfg = json.loads(path.read_text())
    for key in ("V", "alpha", "delta"):
        if key not in cfg:
            raise ValueError(f"scenario config misses '{key}'")
    return cfg


def scenario_from_config(cfg, rng):
    alpha = np.asarray(cfg["alpha"], dtype=np.float64)
    alphas = np.diag(alpha) if alpha.ndim == 2 else alpha
    if alpha.ndim == 2 and np.any(alpha - np.diag(alphas)):
        raise ValueError("block scenarios take a diagonal alpha")
    K = int(cfg.get("K", alphas.shape[0]))
    if alphas.shape[0] != K:
        raise ValueError(f"alpha has {alphas.shape[0]} entries but K={K}")
    mu = cfg.get("mu", "uniform")
    rates = None if mu == "uniform" else np.asarray(mu, dtype=np.float64)
    return block_scenario(V=int(cfg["V"]), alphas=alphas, delta=float(cfg["delta"]),
                          rng=rng, n_events=cfg.get("n_events"), T=cfg.get("T"),
                          community_rates=rates)
