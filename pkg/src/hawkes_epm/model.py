"""Hawkes-EPM parameters, latent assignments and covariates."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .events import DirectedPairHistory, EvaluationError, sub_intensities


@dataclass
class CovariateMatrix:
    """Per ordered pair covariate vectors; missing pairs are zero."""

    x: dict = field(default_factory=dict)
    D: int = 0

    def __post_init__(self):
        clean = {}
        for key, vec in self.x.items():
            vec = np.asarray(vec, dtype=np.float64).reshape(-1)
            if vec.shape[0] != self.D:
                raise ValueError(f"covariate of pair {key} has dimension "
                                 f"{vec.shape[0]}, expected {self.D}")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"non-finite covariate for pair {key}")
            clean[(int(key[0]), int(key[1]))] = vec
        self.x = clean

    def get(self, u, v):
        vec = self.x.get((u, v))
        return np.zeros(self.D) if vec is None else vec

    def rows(self, pairs):
        out = np.zeros((len(pairs), self.D))
        for r, (u, v) in enumerate(np.asarray(pairs).reshape(-1, 2).tolist()):
            vec = self.x.get((u, v))
            if vec is not None:
                out[r] = vec
        return out

    def keys(self):
        return sorted(self.x)


@dataclass
class HawkesParams:
    """Stage-2 parameters.

    ``phi`` and ``omega`` come from the stage-1 fit and define the
    factorised rates ``mu~[u, k, k', v] = phi[u, k] omega[k, k'] phi[v, k']``.
    ``mu`` stores explicit K x K base-rate blocks for ordered pairs that were
    fitted; every other pair uses a fallback derived from ``mu~``: the prior
    mean ``mu~ exp(x'beta)`` before fitting, or, once ``fit_horizon`` is set,
    the closed-form update ``mu~ / (T + exp(-x'beta))`` that a pair without
    events receives.
    """

    phi: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    delta: float
    mu: dict = field(default_factory=dict)
    beta: np.ndarray | None = None
    tau: float = 1.0
    nu: np.ndarray | None = None
    fit_horizon: float | None = None
    e0: float = 1.0
    f0: float = 1.0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        K = self.alpha.shape[0]
        if self.phi.ndim != 2 or self.phi.shape[1] != K or self.omega.shape != (K, K) \
                or self.alpha.shape != (K, K):
            raise ValueError("phi must be V x K; omega and alpha K x K")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if np.any(self.alpha < 0) or np.any(self.phi < 0) or np.any(self.omega < 0):
            raise ValueError("phi, omega and alpha must be nonnegative")
        if self.beta is None:
            self.beta = np.zeros((K, K, 0))
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.nu is None:
            self.nu = np.ones(self.beta.shape[2])
        self.nu = np.asarray(self.nu, dtype=np.float64)
        self.mu = {(int(u), int(v)): np.asarray(m, dtype=np.float64).reshape(K, K)
                   for (u, v), m in self.mu.items()}

    @property
    def K(self):
        return self.alpha.shape[0]

    @property
    def V(self):
        return self.phi.shape[0]

    @property
    def D(self):
        return self.beta.shape[2]

    def copy(self):
        return copy.deepcopy(self)

    def kernel_is_stationary(self):
        return bool(np.all(self.alpha * self.delta < 1.0))

    # base rates -----------------------------------------------------------

    def mu_tilde(self, u, v):
        return self.phi[u][:, None] * self.omega * self.phi[v][None, :]

    def mu_tilde_pairs(self, pairs):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return self.phi[pairs[:, 0]][:, :, None] * self.omega[None] \
            * self.phi[pairs[:, 1]][:, None, :]

    def linear_predictor(self, pairs, covariates=None):
        """x_{u,v}' beta_{k,k'} for each pair, shape (P, K, K)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if covariates is None or self.D == 0:
            return np.zeros((pairs.shape[0], self.K, self.K))
        X = covariates.rows(pairs)
        return np.einsum("pd,abd->pab", X, self.beta)

    def fallback_pairs(self, pairs, covariates=None):
        eta = self.linear_predictor(pairs, covariates)
        mt = self.mu_tilde_pairs(pairs)
        if self.fit_horizon is None:
            return mt * np.exp(eta)
        return mt / (self.fit_horizon + np.exp(-eta))

    def base_matrices(self, pairs, covariates=None):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        out = self.fallback_pairs(pairs, covariates)
        if self.mu:
            for r, key in enumerate(map(tuple, pairs.tolist())):
                m = self.mu.get(key)
                if m is not None:
                    out[r] = m
        return out

    def base_matrix(self, u, v, covariates=None):
        return self.base_matrices([[u, v]], covariates)[0]

    def total_base_rate(self, covariates=None):
        """Sum of base rates over all V(V-1) ordered pairs and patterns."""
        col = self.phi.sum(axis=0)
        all_pairs = np.outer(col, col) * self.omega - (self.phi.T @ self.phi) * self.omega
        c0 = 1.0 if self.fit_horizon is None else 1.0 / (self.fit_horizon + 1.0)
        total = c0 * float(all_pairs.sum())
        special = set(self.mu)
        if covariates is not None and self.D:
            special.update(covariates.keys())
        if special:
            keys = np.array(sorted(special), dtype=np.int64)
            total += float(self.base_matrices(keys, covariates).sum()
                           - c0 * self.mu_tilde_pairs(keys).sum())
        return total


def initial_params(phi, omega, delta, alpha0=0.1, D=0, tau=1.0, nu=None) -> HawkesParams:
    """Stage-2 starting point from stage-1 factors: uniform alpha, zero beta,
    base rates from the factorised fallback."""
    K = np.asarray(omega).shape[0]
    return HawkesParams(phi=np.array(phi, dtype=np.float64), omega=np.array(omega, dtype=np.float64),
                        alpha=np.full((K, K), float(alpha0)), delta=delta,
                        beta=np.zeros((K, K, D)), tau=tau, nu=nu)


def base_rate(params: HawkesParams, covariates, u, v, k, kp):
    """Base rate of pattern (k, k') from u to v."""
    return float(params.base_matrix(u, v, covariates)[k, kp])


def pattern_probabilities(params: HawkesParams, history: DirectedPairHistory, t, u, v,
                          covariates=None):
    """Probability of each latent pattern for an event u -> v at time t."""
    lam = sub_intensities(params, history, u, v, t, covariates)
    total = lam.sum()
    if not total > 0:
        raise EvaluationError(f"zero intensity for {u}->{v} at t={t}")
    return lam / total


@dataclass
class LatentAssignment:
    """Per-event latent branching and pattern, hard or soft.

    Hard mode stores ``exogenous`` flags and pattern indices ``zs, zd``.
    Soft mode stores responsibilities ``p_hat`` (exogenous) and ``p_check``
    (endogenous), each N x K x K, summing to one per event.
    """

    K: int
    exogenous: np.ndarray | None = None
    zs: np.ndarray | None = None
    zd: np.ndarray | None = None
    p_hat: np.ndarray | None = None
    p_check: np.ndarray | None = None

    @classmethod
    def hard(cls, exogenous, zs, zd, K):
        return cls(K=K, exogenous=np.asarray(exogenous, dtype=bool),
                   zs=np.asarray(zs, dtype=np.int64), zd=np.asarray(zd, dtype=np.int64))

    @classmethod
    def soft(cls, p_hat, p_check):
        return cls(K=p_hat.shape[1], p_hat=p_hat, p_check=p_check)

    @property
    def is_hard(self):
        return self.exogenous is not None

    def __len__(self):
        return len(self.exogenous) if self.is_hard else self.p_hat.shape[0]

    def tag_weights(self):
        if not self.is_hard:
            return self.p_hat + self.p_check
        w = np.zeros((len(self), self.K, self.K))
        w[np.arange(len(self)), self.zs, self.zd] = 1.0
        return w

    def split_weights(self):
        """(exogenous, endogenous) per-event K x K weights."""
        if not self.is_hard:
            return self.p_hat, self.p_check
        w = self.tag_weights()
        exo = self.exogenous[:, None, None]
        return w * exo, w * ~exo

    def sufficient_statistics(self, data):
        """(m_hat, m_check) per active ordered pair of ``data.index``."""
        ix = data.index
        exo, endo = self.split_weights()
        m_hat = np.zeros((ix.n_pairs, self.K, self.K))
        m_check = np.zeros_like(m_hat)
        np.add.at(m_hat, ix.pair_of_event, exo)
        np.add.at(m_check, ix.pair_of_event, endo)
        return m_hat, m_check
