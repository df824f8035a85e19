import math
import warnings

import numpy as np
import pytest

from hawkes_epm import hgap_epm as H
from hawkes_epm.events import EventSequence
from hawkes_epm.evaluation import auc_roc


def planted_graph(rng, sizes, density):
    lab = np.repeat(np.arange(len(sizes)), sizes)
    e = (lab[:, None] == lab[None, :]) & (rng.random((lab.size, lab.size)) < density)
    np.fill_diagonal(e, False)
    return lab, e


class TestAggregate:
    def test_empty(self):
        data = EventSequence(np.zeros(0), np.zeros(0, int), np.zeros(0, int), 1.0, 4)
        assert not H.aggregate(data).e.any()

    def test_repeated_edge(self):
        data = EventSequence([1.0, 2.0], [3, 3], [7, 7], 2.0, 8)
        e = H.aggregate(data).e
        assert e[3, 7] and e.sum() == 1

    def test_degrees_and_idempotence(self, rng):
        n, V = 200, 9
        src = rng.integers(0, V, n)
        dst = (src + rng.integers(1, V, n)) % V
        data = EventSequence(np.sort(rng.uniform(0, 5, n)), src, dst, 5.0, V)
        e = H.aggregate(data).e
        for u in range(V):
            assert e[u].sum() == len(set(dst[src == u].tolist()))
            assert e[:, u].sum() == len(set(src[dst == u].tolist()))
        again = H.aggregate(EventSequence(np.arange(e.sum(), dtype=float), *np.nonzero(e),
                                          float(e.sum()), V)).e
        assert np.array_equal(e, again)

    def test_validation(self):
        with pytest.raises(ValueError):
            H.AggregatedGraph(np.eye(3))


class TestEdgeProbability:
    def params_with_rate(self, zeta):
        return H.CommunityParams(phi=np.array([[1.0], [1.0]]), omega=np.array([[zeta]]),
                                 r=np.ones(1), a=np.ones(2), c=np.ones(2))

    def test_values(self):
        assert H.edge_probability(self.params_with_rate(0.0), 0, 1) == 0.0
        assert H.edge_probability(self.params_with_rate(math.log(2)), 0, 1) == pytest.approx(0.5)

    def test_self_pair(self):
        with pytest.raises(ValueError):
            H.edge_probability(self.params_with_rate(1.0), 1, 1)


def test_zero_truncated_poisson_mean():
    H._seed(3)
    for zeta in (0.05, 0.7, 4.0):
        eu = np.zeros(100000, dtype=np.int64)
        ev = np.ones(100000, dtype=np.int64)
        phi = np.array([[1.0], [1.0]])
        counts, *_ = H._partition_counts(eu, ev, phi, np.array([[zeta]]))
        assert counts.min() >= 1
        assert counts.mean() == pytest.approx(zeta / -math.expm1(-zeta), rel=0.01)


def test_partition_conserves_counts(rng):
    V, K = 12, 4
    phi = rng.gamma(1.0, 1.0, (V, K))
    omega = rng.gamma(1.0, 1.0, (K, K))
    eu, ev = np.nonzero(~np.eye(V, dtype=bool))
    H._seed(1)
    counts, m_node, m_comm, bad = H._partition_counts(eu.astype(np.int64), ev.astype(np.int64),
                                                      phi, omega)
    assert bad < 0
    assert m_comm.sum() == counts.sum()
    # each count lands once on the sender and once on the receiver
    assert m_node.sum() == 2 * counts.sum()
    assert np.array_equal(m_comm.sum(axis=1), m_comm.sum(axis=1).astype(int))


def test_crt_limits(rng):
    assert np.all(H.crt(np.zeros(5, int), np.ones(5), rng) == 0)
    draws = H.crt(np.full(20000, 10), np.full(20000, 2.0), rng)
    expected = sum(2.0 / (2.0 + j) for j in range(10))
    assert draws.mean() == pytest.approx(expected, rel=0.02)
    assert draws.min() >= 1 and draws.max() <= 10


def test_sweep_keeps_invariants(rng):
    lab, e = planted_graph(rng, (8, 8), 0.7)
    g = H.AggregatedGraph(e)
    s = H.initial_state(16, 10, rng)
    for _ in range(30):
        s = H.gibbs_sweep(s, g, rng)
        s.check()
        assert s.K == 10
        assert np.isfinite(s.log_joint(g))


def test_zero_edges(rng):
    g = H.AggregatedGraph(np.zeros((6, 6), bool))
    with pytest.warns(RuntimeWarning, match="no edges"):
        fit = H.fit_map(g, K_max=5, sweeps=10, rng=0)
    prior = H.CommunityParams.prior_mean(6, 5)
    assert np.array_equal(fit.params.phi, prior.phi)
    # with no edges only the non-edge term acts, so affinities drift down
    s = H.initial_state(6, 5, rng)
    start = np.median(s.phi)
    medians = []
    for i in range(400):
        s = H.gibbs_sweep(s, g, rng, update_hyper=False)
        assert np.isfinite(s.log_joint(g))
        if i >= 200:
            medians.append(np.median(s.phi))
    assert np.median(medians) < start


def test_fit_map_deterministic_and_defaults():
    import inspect
    sig = inspect.signature(H.fit_map)
    assert sig.parameters["K_max"].default == 100
    assert sig.parameters["sweeps"].default == 10000
    lab, e = planted_graph(np.random.default_rng(0), (6, 6), 0.8)
    g = H.AggregatedGraph(e)
    a = H.fit_map(g, K_max=8, sweeps=40, rng=9)
    b = H.fit_map(g, K_max=8, sweeps=40, rng=9)
    assert np.array_equal(a.params.phi, b.params.phi)
    assert a.sweep == b.sweep and a.trace == b.trace
    assert a.sweep >= 20


def test_mean_estimate_option():
    lab, e = planted_graph(np.random.default_rng(0), (6, 6), 0.8)
    fit = H.fit_map(H.AggregatedGraph(e), K_max=6, sweeps=20, rng=1, estimate="mean")
    fit.params.check()
    with pytest.raises(ValueError):
        H.fit_map(H.AggregatedGraph(e), K_max=6, sweeps=20, rng=1, estimate="median")


def test_prune_keeps_mass():
    rng = np.random.default_rng(2)
    s = H.initial_state(5, 4, rng)
    s.omega[3, :] = s.omega[:, 3] = 0.0
    pruned = H.prune(s, threshold=1e-3)
    assert pruned.K == 3
    np.testing.assert_allclose(pruned.rates(), s.rates(), rtol=1e-12)


def test_planted_three_blocks_reconstruction():
    rng = np.random.default_rng(21)
    lab, e = planted_graph(rng, (10, 10, 10), 0.8)
    V = e.shape[0]
    off = ~np.eye(V, dtype=bool)
    held = off & (rng.random((V, V)) < 0.1)
    train = e & ~held
    fit = H.fit_map(H.AggregatedGraph(train), K_max=20, sweeps=2000, rng=4)
    prob = fit.params.edge_probabilities()
    assert auc_roc(prob[held], e[held]) >= 0.9


SLOW_MIXING = ("merging a block split across several communities is slow for this "
               "sampler; see the decisions ledger")


@pytest.mark.xfail(reason=SLOW_MIXING, strict=False)
def test_two_blocks_dominant_community():
    rng = np.random.default_rng(1)
    lab, e = planted_graph(rng, (20, 20), 0.9)
    fit = H.fit_map(H.AggregatedGraph(e), K_max=20, sweeps=2000, rng=3)
    phi = fit.params.phi
    for b in (0, 1):
        members = lab == b
        k = int(np.argmax(phi[members].sum(axis=0)))
        top = phi[:, k] >= 0.5 * phi[:, k].max()
        assert np.array_equal(top, members)


@pytest.mark.xfail(reason=SLOW_MIXING, strict=False)
def test_shrinkage_on_two_blocks():
    rng = np.random.default_rng(1)
    lab, e = planted_graph(rng, (20, 20), 0.9)
    g = H.AggregatedGraph(e)
    s = H.initial_state(40, 100, rng)
    ok = []
    for i in range(2000):
        s = H.gibbs_sweep(s, g, rng)
        if i >= 1000:
            ok.append(np.sum(s.r > 0.01 * s.r.max()) <= 5)
    assert np.mean(ok) >= 0.9
