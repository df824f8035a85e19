"""Expectation-Maximisation for the stage-2 parameters given stage-1 factors."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .events import EventSequence, EvaluationError, log_prior, responsibilities
from .model import CovariateMatrix, HawkesParams, LatentAssignment
from .polya_gamma import pg_expectation

log = logging.getLogger(__name__)


class ConvergenceError(ArithmeticError):
    pass


@dataclass
class EMState:
    params: HawkesParams
    pairs: np.ndarray
    p_hat: np.ndarray | None = None
    p_check: np.ndarray | None = None
    m_hat: np.ndarray | None = None
    m_check: np.ndarray | None = None
    omega_expect: np.ndarray | None = None
    psi: np.ndarray | None = None
    objective_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    seconds: float = 0.0
    n_halvings: int = 0
    stalled: bool = False

    @property
    def assignment(self):
        return LatentAssignment.soft(self.p_hat, self.p_check)

    def report(self):
        p = self.params
        totals = [float(m.sum()) for m in p.mu.values()]
        return {
            "objective_trace": [float(x) for x in self.objective_trace],
            "iterations": self.n_iter,
            "converged": self.converged,
            "alpha": p.alpha.tolist(),
            "delta": p.delta,
            "mu_summary": {
                "stored_pairs": len(totals),
                "mean_total": float(np.mean(totals)) if totals else 0.0,
                "max_total": float(np.max(totals)) if totals else 0.0,
            },
            "step_halvings": self.n_halvings,
            "stalled": self.stalled,
            "wall_clock_seconds": self.seconds,
        }


def init_state(params0: HawkesParams, data: EventSequence, T=None) -> EMState:
    T = data.T if T is None else T
    params = params0.copy()
    ix = data.index
    K = params.K
    state = EMState(params=params, pairs=ix.pairs)
    state.psi = np.full((ix.n_pairs, K, K), math.log(T))
    return state


def expectations(params, data, covariates=None, T=None):
    """Responsibilities, sufficient statistics and objective at ``params``.

    The objective is the log posterior with the update-consistent prior
    (see ``events.log_prior``) and causal soft tags.
    """
    T = data.T if T is None else T
    p_hat, p_check, lam = responsibilities(params, data, covariates)
    m_hat, m_check = LatentAssignment.soft(p_hat, p_check).sufficient_statistics(data)
    weights = p_hat + p_check
    comp = params.total_base_rate(covariates) * T \
        + float(np.sum(params.alpha * trigger_mass(data, weights, params.delta, T)))
    obj = float(np.sum(np.log(lam))) - comp + log_prior(params, data, covariates, kind="update")
    return p_hat, p_check, m_hat, m_check, obj


def e_step(state: EMState, data: EventSequence, covariates=None, T=None):
    """Fill responsibilities and sufficient statistics; return the objective."""
    state.p_hat, state.p_check, state.m_hat, state.m_check, obj = \
        expectations(state.params, data, covariates, T)
    return obj


def trigger_mass(data, weights, delta, T):
    """K x K: sum over events j of delta (1 - exp(-(T - t_j)/delta)) times
    j's tag weight, in the receiving pattern coordinates."""
    if len(data) == 0:
        return np.zeros((weights.shape[1], weights.shape[2]))
    tail = delta * (1.0 - np.exp(-(T - data.t) / delta))
    return np.einsum("j,jab->ba", tail, weights)


def m_step_mu(state: EMState, T, covariates=None):
    p = state.params
    shape = p.mu_tilde_pairs(state.pairs) + state.m_hat
    eta = p.linear_predictor(state.pairs, covariates)
    mu = shape / (T + np.exp(-eta))
    p.mu = {(int(u), int(v)): mu[r] for r, (u, v) in enumerate(state.pairs.tolist())}
    p.fit_horizon = float(T)
    return mu


def m_step_alpha(state: EMState, data, T):
    p = state.params
    weights = state.p_hat + state.p_check if len(data) else np.zeros((0, p.K, p.K))
    num = p.e0 + state.m_check.sum(axis=0) if len(data) else np.full((p.K, p.K), p.e0)
    den = p.f0 + trigger_mass(data, weights, p.delta, T)
    p.alpha = num / den
    return p.alpha


def ridge_coefficients(X, target, tau, nu):
    """argmin ||X b - target||^2 + tau^-1 b' diag(1/nu) b, column-wise."""
    A = np.diag(1.0 / np.asarray(nu, dtype=np.float64))
    G = X.T @ X + A / tau
    return np.linalg.solve(G, X.T @ target)


def m_step_regression(state: EMState, covariates, tau=None, T=None):
    """Closed-form E[omega], psi and beta updates (no-op without covariates)."""
    p = state.params
    if covariates is None or p.D == 0:
        return None
    tau = p.tau if tau is None else tau
    K, D = p.K, p.D
    X = covariates.rows(state.pairs)
    shape = p.mu_tilde_pairs(state.pairs) + state.m_hat
    omega = np.zeros_like(shape)
    pos = shape > 0
    omega[pos] = pg_expectation(shape[pos], state.psi[pos])
    state.omega_expect = omega
    logT = math.log(T)
    eta_old = p.linear_predictor(state.pairs, covariates)
    # beta from the previous psi, psi from E[omega] and the previous beta
    target = (state.psi - logT).reshape(-1, K * K)
    beta = ridge_coefficients(X, target, tau, p.nu)
    kappa = (state.m_hat - p.mu_tilde_pairs(state.pairs)) / 2.0
    state.psi = (kappa + tau * (eta_old + logT)) / (omega + tau)
    p.beta = beta.T.reshape(K, K, D)
    if not np.all(np.isfinite(p.beta)) or not np.all(np.isfinite(state.psi)):
        raise ConvergenceError("non-finite regression update")
    return state.psi, p.beta


def _blend(old: HawkesParams, new: HawkesParams, pairs, step):
    out = new.copy()
    out.alpha = old.alpha + step * (new.alpha - old.alpha)
    if old.D:
        out.beta = old.beta + step * (new.beta - old.beta)
    prev = old.base_matrices(pairs)
    out.mu = {key: prev[r] + step * (new.mu[key] - prev[r])
              for r, key in enumerate(map(tuple, pairs.tolist()))}
    return out


def fit_em(params0: HawkesParams, data: EventSequence, covariates: CovariateMatrix | None = None,
           T=None, max_iter: int = 500, tol: float = 1e-6, tau=None, max_halvings: int = 30,
           callback=None):
    """MAP-style EM; ``delta`` is held fixed.

    Each cycle applies the closed-form updates to the current statistics.
    With several patterns the soft tags move with the parameters, so a full
    update can lower the objective slightly; the step is then halved towards
    the previous iterate until it does not.  Stops when the relative
    objective change is below ``tol``, when no ascent step exists, or after
    ``max_iter`` cycles.  ``callback(it, params)``, if given, sees every
    accepted iterate including the start (``it = 0``).  Returns
    ``(params, state)``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    T = data.T if T is None else float(T)
    start = time.perf_counter()
    state = init_state(params0, data, T)
    if tau is not None:
        state.params.tau = tau

    def evaluate(params, it):
        try:
            out = expectations(params, data, covariates, T)
        except EvaluationError as err:
            raise ConvergenceError(f"iteration {it}: {err}") from err
        if not math.isfinite(out[-1]):
            raise ConvergenceError(f"objective became {out[-1]} at iteration {it}")
        return out

    *stats, obj = evaluate(state.params, 0)
    state.p_hat, state.p_check, state.m_hat, state.m_check = stats
    state.objective_trace.append(obj)
    if callback is not None:
        callback(0, state.params)
    for it in range(max_iter):
        old = state.params
        state.params = old.copy()
        m_step_mu(state, T, covariates)
        m_step_regression(state, covariates, T=T)
        m_step_alpha(state, data, T)
        cand = state.params
        *stats, new_obj = evaluate(cand, it + 1)
        step = 1.0
        while new_obj < obj and step > 0.5 ** max_halvings:
            step *= 0.5
            state.n_halvings += 1
            cand = _blend(old, state.params, state.pairs, step)
            *stats, new_obj = evaluate(cand, it + 1)
        if new_obj < obj:
            # no ascent along the update direction: a fixed point of the safeguarded map
            state.params = old
            state.converged = state.stalled = True
            log.debug("EM stalled at iteration %d", it)
            break
        state.params = cand
        state.p_hat, state.p_check, state.m_hat, state.m_check = stats
        state.objective_trace.append(new_obj)
        state.n_iter = it + 1
        if callback is not None:
            callback(it + 1, state.params)
        log.debug("EM iteration %d objective %.10g (step %g)", it, new_obj, step)
        if abs(new_obj - obj) <= tol * abs(obj):
            state.converged = True
            break
        obj = new_obj
    state.seconds = time.perf_counter() - start
    return state.params, state
