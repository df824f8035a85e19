"""Gibbs sampler for the stage-2 parameters given stage-1 factors.

One iteration visits every event in time order and redraws its branching
flag and pattern given the tags already drawn for earlier events, then
redraws alpha and the base rates from their gamma conditionals and, with
covariates, the Polya-Gamma regression block (omega, psi, beta, pi).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _forward
from .em import trigger_mass
from .events import EventSequence, event_base_rates, log_posterior
from .model import CovariateMatrix, HawkesParams, LatentAssignment
from .polya_gamma import sample_pg


class SamplerError(ArithmeticError):
    pass


@dataclass
class GibbsState:
    params: HawkesParams
    assignment: LatentAssignment
    pairs: np.ndarray
    omega: np.ndarray | None = None
    psi: np.ndarray | None = None
    pi: np.ndarray | None = None
    m_hat: np.ndarray | None = None
    m_check: np.ndarray | None = None


def init_gibbs_state(params0: HawkesParams, data: EventSequence, T=None) -> GibbsState:
    T = data.T if T is None else T
    params = params0.copy()
    ix = data.index
    n, K = len(data), params.K
    assignment = LatentAssignment.hard(np.ones(n, bool), np.zeros(n, np.int64),
                                       np.zeros(n, np.int64), K)
    state = GibbsState(params, assignment, ix.pairs)
    state.psi = np.full((ix.n_pairs, K, K), math.log(T))
    state.pi = np.ones(ix.n_pairs)
    state.omega = np.full((ix.n_pairs, K, K), 0.25)
    return state


def sample_branching(state: GibbsState, data: EventSequence, rng, covariates=None):
    """Redraw (b_i, z_i^s, z_i^d) for all events in time order.

    Each draw conditions on the tags already redrawn for earlier events:
    exogenous with probability mu / lambda, then the pattern from the base
    rates or from the tagged excitation accordingly.
    """
    p = state.params
    ix = data.index
    n, K = len(data), p.K
    if n == 0:
        return state.assignment
    mu_ev = np.ascontiguousarray(event_base_rates(p, data, covariates))
    u_branch = rng.random(n)
    u_pattern = rng.random(n)
    b, z, _, bad = _forward.branching_forward(
        data.t, ix.direction, ix.order, ix.starts, mu_ev,
        np.ascontiguousarray(p.alpha, dtype=np.float64), float(p.delta), u_branch, u_pattern)
    if bad >= 0:
        raise SamplerError(f"intensity is zero at event {bad} "
                           f"(t={data.t[bad]}, {data.src[bad]}->{data.dst[bad]})")
    state.assignment = LatentAssignment.hard(b, z // K, z % K, K)
    state.m_hat, state.m_check = state.assignment.sufficient_statistics(data)
    return state.assignment


def sample_alpha(state: GibbsState, data: EventSequence, T, rng):
    """alpha[k, k'] ~ Gamma(e0 + endogenous count, rate f0 + trigger mass)."""
    p = state.params
    K = p.K
    if len(data):
        weights = state.assignment.tag_weights()
        shape = p.e0 + state.m_check.sum(axis=0)
        rate = p.f0 + trigger_mass(data, weights, p.delta, T)
    else:
        shape = np.full((K, K), p.e0)
        rate = np.full((K, K), p.f0)
    p.alpha = rng.gamma(shape, 1.0 / rate)
    return p.alpha


def sample_mu(state: GibbsState, T, covariates, rng):
    """Gamma(mu~ + m_hat, rate T + exp(-x'beta)) per active pair; exact zero
    for a vanishing shape.  Inactive pairs use the fitted fallback."""
    p = state.params
    shape = p.mu_tilde_pairs(state.pairs)
    if state.m_hat is not None:
        shape = shape + state.m_hat
    rate = T + np.exp(-p.linear_predictor(state.pairs, covariates))
    mu = np.zeros_like(shape)
    pos = shape > 0
    # a tiny shape can underflow to 0.0, where its density is infinite
    mu[pos] = np.maximum(rng.gamma(shape[pos], 1.0 / rate[pos]), np.finfo(np.float64).tiny)
    p.mu = {(int(u), int(v)): mu[r] for r, (u, v) in enumerate(state.pairs.tolist())}
    p.fit_horizon = float(T)
    return mu


def sample_regression(state: GibbsState, covariates: CovariateMatrix | None, tau, rng, T):
    """omega ~ PG(mu~ + m_hat, psi), psi and beta Gaussian, pi from its prior.

    No-op without covariates.
    """
    p = state.params
    if covariates is None or p.D == 0:
        return None
    K, D = p.K, p.D
    mt = p.mu_tilde_pairs(state.pairs)
    b = mt + state.m_hat
    pos = b > 0
    omega = np.full_like(b, np.inf)
    omega[pos] = sample_pg(b[pos], state.psi[pos], rng)
    state.omega = omega
    offset = np.log(T * state.pi)[:, None, None]
    eta = p.linear_predictor(state.pairs, covariates)
    kappa = (state.m_hat - mt) / 2.0
    # an entry with b = 0 carries no data: omega = inf pins psi to its prior mean
    var = np.where(pos, 1.0 / (np.where(pos, omega, 0.0) + tau), 0.0)
    mean = np.where(pos, var * (kappa + tau * (eta + offset)), eta + offset)
    state.psi = mean + np.sqrt(var) * rng.standard_normal(mean.shape)

    X = covariates.rows(state.pairs)
    prec = tau * X.T @ X + np.diag(1.0 / p.nu)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as err:
        raise SamplerError("beta posterior precision is not positive definite") from err
    target = (state.psi - offset).reshape(-1, K * K)
    rhs = tau * X.T @ target
    mean_b = np.linalg.solve(prec, rhs)
    noise = np.linalg.solve(chol.T, rng.standard_normal((D, K * K)))
    p.beta = (mean_b + noise).T.reshape(K, K, D)
    state.pi = np.exp(rng.standard_normal(state.pairs.shape[0]) / math.sqrt(tau))
    return state.psi, state.pi, p.beta


@dataclass
class GibbsChain:
    log_posterior: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    mu_total: list = field(default_factory=list)
    n_endogenous: list = field(default_factory=list)
    final: GibbsState | None = None
    seconds: float = 0.0

    def alpha_samples(self, burn=0):
        return np.array(self.alpha[burn:])

    def posterior_mean_alpha(self, burn=None):
        burn = len(self.alpha) // 2 if burn is None else burn
        return self.alpha_samples(burn).mean(axis=0)

    def write_csv(self, path):
        K = self.alpha[0].shape[0] if self.alpha else 0
        cols = [f"alpha_{a}_{b}" for a in range(K) for b in range(K)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "log_posterior", "mu_total", "n_endogenous", *cols])
            for i, (lp, a, m, ne) in enumerate(zip(self.log_posterior, self.alpha,
                                                   self.mu_total, self.n_endogenous)):
                w.writerow([i, repr(lp), repr(m), ne, *map(repr, a.ravel().tolist())])

    def to_json(self):
        return {
            "log_posterior": list(self.log_posterior),
            "alpha": [a.tolist() for a in self.alpha],
            "mu_total": list(self.mu_total),
            "n_endogenous": list(self.n_endogenous),
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def run_chain(params0: HawkesParams, data: EventSequence, covariates=None, T=None,
              iters: int = 1000, rng=None, tau=None, trace_log_posterior=True,
              callback=None) -> GibbsChain:
    """Run the sampler for ``iters`` iterations and record per-iteration traces."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(rng)
    T = data.T if T is None else float(T)
    tau = params0.tau if tau is None else tau
    start = time.perf_counter()
    state = init_gibbs_state(params0, data, T)
    state.params.tau = tau
    chain = GibbsChain()
    for it in range(iters):
        sample_branching(state, data, rng, covariates)
        if state.m_hat is None:
            K = state.params.K
            state.m_hat = np.zeros((0, K, K))
            state.m_check = np.zeros((0, K, K))
        sample_alpha(state, data, T, rng)
        sample_mu(state, T, covariates, rng)
        sample_regression(state, covariates, tau, rng, T)
        p = state.params
        if trace_log_posterior:
            lp = log_posterior(p, data, state.assignment, covariates)
            if not math.isfinite(lp):
                raise SamplerError(f"log posterior is {lp} at iteration {it}")
        else:
            lp = float("nan")
        chain.log_posterior.append(lp)
        chain.alpha.append(p.alpha.copy())
        chain.mu_total.append(float(sum(m.sum() for m in p.mu.values())))
        chain.n_endogenous.append(int(np.count_nonzero(~state.assignment.exogenous)))
        if callback is not None:
            callback(it, state)
    chain.final = state
    chain.seconds = time.perf_counter() - start
    return chain
