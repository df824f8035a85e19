import csv
import json
import math

import numpy as np
import pytest

from hawkes_epm import em, gibbs
from hawkes_epm.events import DirectedPairHistory, EventSequence
from hawkes_epm.model import CovariateMatrix, HawkesParams, pattern_probabilities
from hawkes_epm.simulation import simulate

from conftest import random_events, random_params


def state_for(params, data, T=None):
    return gibbs.init_gibbs_state(params, data, T)


def test_no_excitation_means_all_exogenous(rng):
    p = random_params(rng, V=4, K=2)
    p.alpha[:] = 0.0
    data = random_events(rng, n=80, V=4)
    s = state_for(p, data)
    for _ in range(5):
        a = gibbs.sample_branching(s, data, rng)
        assert a.exogenous.all()


def test_zero_base_rate_means_endogenous(rng):
    K = 2
    p = random_params(rng, V=2, K=K)
    p.mu = {(0, 1): np.full((K, K), 0.3), (1, 0): np.zeros((K, K))}
    data = EventSequence([0.1, 0.4, 0.5, 0.9, 1.2], [0, 1, 1, 0, 1], [1, 0, 0, 1, 0], 2.0, 2)
    s = state_for(p, data)
    for _ in range(20):
        a = gibbs.sample_branching(s, data, rng)
        back = data.src == 1
        assert not a.exogenous[back].any()


def test_zero_intensity_is_an_error(rng):
    K = 2
    p = random_params(rng, V=2, K=K)
    p.mu = {(1, 0): np.zeros((K, K))}
    data = EventSequence([0.1], [1], [0], 1.0, 2)
    with pytest.raises(gibbs.SamplerError, match="event 0"):
        gibbs.sample_branching(state_for(p, data), data, rng)


def test_pattern_frequencies_match_marginal():
    """Resampled patterns of a reply event follow the marginal pattern law.

    Each replica pair has three forward events whose pattern is forced
    (single nonzero base rate, nothing earlier to excite them), followed by
    one reply whose pattern is random.  Shifting every replica by its own
    offset keeps the probabilities identical.
    """
    K, R = 2, 10_000
    alpha = np.array([[0.7, 0.2], [0.5, 1.1]])
    fwd = np.array([[0.0, 0.4], [0.0, 0.0]])
    back = np.array([[0.3, 0.05], [0.2, 0.15]])
    base_t = np.array([0.3, 0.8, 1.5, 1.9])
    t, src, dst, mu = [], [], [], {}
    for r in range(R):
        a, b = 2 * r, 2 * r + 1
        t.extend(base_t + r * 1e-6)
        src.extend([a, a, a, b])
        dst.extend([b, b, b, a])
        mu[(a, b)] = fwd
        mu[(b, a)] = back
    t = np.array(t)
    order = np.argsort(t, kind="stable")
    data = EventSequence(t[order], np.array(src)[order], np.array(dst)[order], 3.0, 2 * R)
    p = HawkesParams(phi=np.ones((2 * R, K)), omega=np.ones((K, K)), alpha=alpha, delta=0.8, mu=mu)
    s = state_for(p, data)
    rng = np.random.default_rng(3)
    reply = data.src % 2 == 1
    counts = np.zeros((2, K, K))
    for _ in range(10):
        a = gibbs.sample_branching(s, data, rng)
        fwd_events = ~reply
        assert a.exogenous[fwd_events].all()
        assert (a.zs[fwd_events] == 0).all() and (a.zd[fwd_events] == 1).all()
        np.add.at(counts, (a.exogenous[reply].astype(int), a.zs[reply], a.zd[reply]), 1)
    n = counts.sum()
    first = EventSequence(base_t[:3], [0, 0, 0], [1, 1, 1], 3.0, 2)
    tags = np.zeros((3, K, K))
    tags[:, 0, 1] = 1.0
    hist = DirectedPairHistory.from_events(first, tags)
    total = pattern_probabilities(p, hist, base_t[3], 1, 0)
    # the exogenous share of each pattern is mu / lambda, the rest endogenous
    lam_total = back.sum() + sum(alpha[1, 0] * math.exp(-(base_t[3] - tj) / 0.8) for tj in base_t[:3])
    expected_exo = back / lam_total
    expected = np.stack([total - expected_exo, expected_exo])
    freq = counts / n
    sd = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(freq - expected) <= 3 * sd + 1e-12)
    np.testing.assert_allclose(freq.sum(axis=0), total, atol=3 * 0.5 / math.sqrt(n))


def test_alpha_prior_draws_without_events():
    K = 100
    p = HawkesParams(phi=np.ones((2, K)), omega=np.zeros((K, K)), alpha=np.zeros((K, K)), delta=1.0)
    data = EventSequence([], [], [], 1.0, 2)
    s = state_for(p, data)
    rng = np.random.default_rng(5)
    draws = np.stack([gibbs.sample_alpha(s, data, 1.0, rng).copy() for _ in range(10)])
    assert draws.size == 10 ** 5
    assert draws.mean() == pytest.approx(1.0, abs=3 / math.sqrt(10 ** 5))


def test_alpha_conjugate_mean(rng):
    p = random_params(rng, V=3, K=2, delta=0.6)
    data = random_events(rng, n=40, V=3, T=8.0)
    s = state_for(p, data)
    gibbs.sample_branching(s, data, rng)
    a = s.assignment
    # conjugate oracle assembled event by event
    C = np.zeros((2, 2))
    m = np.zeros((2, 2))
    for j in range(len(data)):
        # an event tagged (a, b) triggers the kernel alpha[b, a]
        C[a.zd[j], a.zs[j]] += 0.6 * (1 - math.exp(-(8.0 - data.t[j]) / 0.6))
        if not a.exogenous[j]:
            m[a.zs[j], a.zd[j]] += 1
    expected = (1 + m) / (1 + C)
    draws = np.stack([gibbs.sample_alpha(s, data, 8.0, rng).copy() for _ in range(40_000)])
    sd = np.sqrt((1 + m)) / (1 + C) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * sd)


def test_mu_draws_against_em_update(rng):
    p = random_params(rng, V=3, K=2)
    data = random_events(rng, n=50, V=3, T=6.0)
    s = state_for(p, data)
    gibbs.sample_branching(s, data, rng)
    draws = np.stack([gibbs.sample_mu(s, 6.0, None, rng).copy() for _ in range(20_000)])
    shape = p.mu_tilde_pairs(s.pairs) + s.m_hat
    sd = np.sqrt(shape) / 7.0 / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - shape / 7.0) < 4 * sd + 1e-15)
    # the EM update with the same counts is the conditional mean
    es = em.init_state(p, data, T=6.0)
    es.m_hat = s.m_hat.copy()
    np.testing.assert_allclose(em.m_step_mu(es, 6.0), shape / 7.0, rtol=1e-12)


def test_mu_without_events_or_prior_mass_is_exactly_zero(rng):
    K = 2
    p = HawkesParams(phi=np.array([[1.0, 0.0], [0.0, 1.0]]), omega=np.array([[0.0, 0.5], [0.0, 0.0]]),
                     alpha=np.zeros((K, K)), delta=1.0)
    data = EventSequence([0.5, 1.0], [0, 0], [1, 1], 4.0, 2)
    s = state_for(p, data)
    gibbs.sample_branching(s, data, rng)
    mu = gibbs.sample_mu(s, 4.0, None, rng)
    zero = np.ones((K, K), bool)
    zero[0, 1] = False
    assert np.all(mu[0][zero] == 0.0) and mu[0, 0, 1] > 0


def test_regression_is_noop_without_covariates(rng):
    p = random_params(rng, V=3, K=2)
    data = random_events(rng, n=10, V=3)
    s = state_for(p, data)
    assert gibbs.sample_regression(s, None, 1.0, rng, data.T) is None


def test_regression_beta_matches_ridge_oracle():
    """D=1, three pairs, K=1: beta given psi is Gaussian around the ridge fit."""
    tau, nu, T = 2.0, np.array([0.5]), 5.0
    p = HawkesParams(phi=np.array([[1.0], [0.8], [0.6]]), omega=np.array([[0.4]]),
                     alpha=np.zeros((1, 1)), delta=1.0, beta=np.zeros((1, 1, 1)), tau=tau, nu=nu)
    x = {(0, 1): [0.5], (1, 2): [-1.0], (2, 0): [2.0]}
    cov = CovariateMatrix(x, D=1)
    data = EventSequence([0.5, 1.0, 1.5, 2.0], [0, 1, 2, 0], [1, 2, 0, 1], T, 3)
    s = state_for(p, data, T)
    rng = np.random.default_rng(11)
    gibbs.sample_branching(s, data, rng, cov)
    xs = np.array([x[tuple(k)][0] for k in s.pairs.tolist()])
    resid = []
    for _ in range(20_000):
        pi_before = s.pi.copy()
        gibbs.sample_regression(s, cov, tau, rng, T)
        y = s.psi[:, 0, 0] - np.log(T * pi_before)
        ridge = tau * np.sum(xs * y) / (tau * np.sum(xs ** 2) + 1 / nu[0])
        resid.append(s.params.beta[0, 0, 0] - ridge)
    resid = np.array(resid)
    post_sd = 1 / math.sqrt(tau * np.sum(xs ** 2) + 1 / nu[0])
    assert resid.std() == pytest.approx(post_sd, rel=0.03)
    assert abs(resid.mean()) < 4 * post_sd / math.sqrt(len(resid))
    assert np.all(s.omega > 0)


def test_regression_psi_precision_limit(monkeypatch):
    """A huge PG draw pins psi at kappa / omega with vanishing spread."""
    p = HawkesParams(phi=np.ones((2, 1)), omega=np.array([[0.3]]), alpha=np.zeros((1, 1)),
                     delta=1.0, beta=np.zeros((1, 1, 1)))
    cov = CovariateMatrix({(0, 1): [1.0]}, D=1)
    data = EventSequence([0.5], [0], [1], 2.0, 2)
    s = state_for(p, data)
    rng = np.random.default_rng(0)
    gibbs.sample_branching(s, data, rng, cov)
    monkeypatch.setattr(gibbs, "sample_pg", lambda b, c, r: np.full(np.shape(b), 1e12))
    draws = []
    for _ in range(200):
        gibbs.sample_regression(s, cov, 1.0, rng, 2.0)
        draws.append(s.psi[0, 0, 0])
    kappa = (s.m_hat[0, 0, 0] - 0.3) / 2
    assert np.std(draws) < 1e-5
    assert np.mean(draws) == pytest.approx(kappa / 1e12, abs=1e-5)


def test_chain_invariants_and_traces(tmp_path, block_data):
    scen, data, _ = block_data
    seen = []

    def check(it, state):
        a = state.assignment
        assert state.m_hat.sum() + state.m_check.sum() == len(data)
        # tag weights aggregated per pair agree with the pattern indices
        counts = np.zeros((scen.params.K, scen.params.K))
        np.add.at(counts, (a.zs, a.zd), 1)
        np.testing.assert_array_equal(counts, (state.m_hat + state.m_check).sum(axis=0))
        seen.append(it)

    chain = gibbs.run_chain(scen.params, data, iters=8, rng=2, callback=check)
    assert seen == list(range(8))
    assert all(math.isfinite(v) for v in chain.log_posterior)
    again = gibbs.run_chain(scen.params, data, iters=8, rng=2)
    assert chain.log_posterior == again.log_posterior
    for a, b in zip(chain.alpha, again.alpha):
        assert np.array_equal(a, b)

    chain.write_csv(tmp_path / "trace.csv")
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    K = scen.params.K
    assert rows[0][:4] == ["iteration", "log_posterior", "mu_total", "n_endogenous"]
    assert len(rows) == 9 and len(rows[0]) == 4 + K * K
    assert float(rows[3][1]) == chain.log_posterior[2]
    chain.write_json(tmp_path / "trace.json")
    doc = json.loads((tmp_path / "trace.json").read_text())
    assert doc["log_posterior"] == chain.log_posterior
    assert np.array_equal(np.array(doc["alpha"][-1]), chain.alpha[-1])


def test_chain_rejects_zero_iterations(block_data):
    scen, data, _ = block_data
    with pytest.raises(ValueError):
        gibbs.run_chain(scen.params, data, iters=0, rng=0)


def test_credible_intervals_cover_truth():
    """Simulation-based calibration on a single reciprocal pair with K = 1."""
    covered = 0
    for rep in range(20):
        rng = np.random.default_rng(100 + rep)
        alpha = min(rng.gamma(1.0, 1.0), 2.0)
        delta = 0.4
        truth = HawkesParams(phi=np.ones((2, 1)), omega=np.array([[0.5]]), alpha=np.array([[alpha]]),
                             delta=delta)
        data, _ = simulate(truth, 200.0, rng)
        chain = gibbs.run_chain(truth, data, iters=600, rng=rng, trace_log_posterior=False)
        draws = chain.alpha_samples(200)[:, 0, 0]
        lo, hi = np.quantile(draws, [0.05, 0.95])
        covered += lo <= alpha <= hi
    # nominal 90%: 18 of 20 expected, 14 is three binomial sd below
    assert covered >= 14


def test_tiny_base_rate_shapes_keep_log_posterior_finite(rng):
    # Gamma(1e-12) draws underflow to 0.0, where the prior density is infinite
    p = HawkesParams(phi=np.full((3, 1), 1e-6), omega=np.array([[1e-1]]), alpha=np.array([[0.5]]),
                     delta=1.0)
    data = EventSequence([0.5, 1.0], [0, 1], [1, 0], 2.0, 3)
    p.mu = {(0, 1): np.array([[0.4]])}
    chain = gibbs.run_chain(p, data, iters=20, rng=rng)
    mu = chain.final.params.mu
    assert all(np.all(m > 0) for m in mu.values())
    assert all(math.isfinite(v) for v in chain.log_posterior)
