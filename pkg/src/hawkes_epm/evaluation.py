"""Temporal link prediction: chronological splits, window probabilities,
AUC-ROC / AUC-PR and the experiment driver."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from . import baselines, em, gibbs, hgap_epm
from .events import EventSequence, tag_weights_for
from .model import CovariateMatrix, HawkesParams, initial_params

log = logging.getLogger(__name__)

MODELS = ("pp", "mhp", "chip", "hawkes_sbm", "hawkes_epm", "hawkes_epm_gibbs")


class DegenerateLabels(ValueError):
    pass


def chronological_split(data: EventSequence, p: float):
    """First ceil(p N) events for training, the rest for testing.

    Returns ``(train, test, t_split)`` where ``t_split`` is the time of the
    last training event and also the training horizon.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    N = len(data)
    if N < 2:
        raise ValueError(f"need at least 2 events to split, got {N}")
    n_train = min(math.ceil(p * N), N - 1)
    t_split = float(data.t[n_train - 1])
    idx = np.arange(N)
    train = data.subset(idx[:n_train], T=t_split)
    test = data.subset(idx[n_train:])
    return train, test, t_split


# Hawkes-EPM as a predictor ---------------------------------------------------

class HawkesEPMPredictor:
    """Window integrals for fitted stage-2 parameters.

    Past events carry pattern tag weights: explicit ``tag_weights`` aligned
    with the history passed in, or else the causal responsibilities implied
    by the parameters.
    """

    def __init__(self, params: HawkesParams, covariates: CovariateMatrix | None = None,
                 tag_weights=None, chunk=20000):
        self.params = params
        self.covariates = covariates
        self.tag_weights = tag_weights
        self._base = None
        self._chunk = chunk

    def base_rates(self):
        """V x V total base rate of every ordered pair (zero diagonal)."""
        if self._base is None:
            V = self.params.V
            uu, vv = np.nonzero(~np.eye(V, dtype=bool))
            pairs = np.stack([uu, vv], axis=1)
            tot = np.empty(pairs.shape[0])
            for lo in range(0, pairs.shape[0], self._chunk):
                blk = pairs[lo:lo + self._chunk]
                tot[lo:lo + self._chunk] = self.params.base_matrices(blk, self.covariates).sum(axis=(1, 2))
            base = np.zeros((V, V))
            base[uu, vv] = tot
            self._base = base
        return self._base

    def window_integrals(self, history: EventSequence, t, pi_hat):
        p = self.params
        out = self.base_rates() * pi_hat
        if len(history):
            w = self.tag_weights
            if w is None:
                w = tag_weights_for(p, history, covariates=self.covariates)
            keep = history.t <= t
            tj = history.t[keep]
            # an event tagged (a, b) excites the reverse pair through alpha[b, a]
            amp = np.einsum("jab,ba->j", np.asarray(w)[keep], p.alpha)
            d = p.delta
            mass = amp * d * (np.exp(-(t - tj) / d) - np.exp(-(t + pi_hat - tj) / d))
            np.add.at(out, (history.dst[keep], history.src[keep]), mass)
        np.fill_diagonal(out, 0.0)
        return out


# probabilities and tables ----------------------------------------------------

def link_probabilities(model, history: EventSequence, t, pi_hat):
    """1 - exp(-integral of lambda_{u,v} over [t, t + pi_hat)) for all pairs,
    with the history frozen at ``t``."""
    if not pi_hat > 0:
        raise ValueError("pi_hat must be positive")
    W = model.window_integrals(history, t, pi_hat)
    return -np.expm1(-np.maximum(W, 0.0))


def link_probability(model, history: EventSequence, u, v, t, pi_hat):
    return float(link_probabilities(model, history, t, pi_hat)[u, v])


@dataclass
class PredictionTable:
    pairs: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.scores.shape[0]


def window_labels(test: EventSequence, t, pi_hat, V):
    inside = (test.t >= t) & (test.t < t + pi_hat)
    lab = np.zeros((V, V), dtype=np.int8)
    lab[test.src[inside], test.dst[inside]] = 1
    return lab


def prediction_table(model, train: EventSequence, test: EventSequence, t, pi_hat):
    """Scores and labels over all V(V-1) ordered pairs, row-major."""
    V = train.V
    probs = link_probabilities(model, train, t, pi_hat)
    lab = window_labels(test, t, pi_hat, V)
    uu, vv = np.nonzero(~np.eye(V, dtype=bool))
    return PredictionTable(np.stack([uu, vv], axis=1), probs[uu, vv], lab[uu, vv])


def _scores_labels(table_or_scores, labels=None):
    if labels is None:
        return np.asarray(table_or_scores.scores, float), np.asarray(table_or_scores.labels)
    return np.asarray(table_or_scores, float), np.asarray(labels)


def auc_roc(table_or_scores, labels=None) -> float:
    """Mann-Whitney AUC; ties count one half."""
    s, y = _scores_labels(table_or_scores, labels)
    n_pos = int(np.count_nonzero(y))
    if n_pos == 0:
        raise DegenerateLabels("AUC-ROC needs at least one positive label; none found")
    if n_pos == y.size:
        raise DegenerateLabels("AUC-ROC needs at least one negative label; none found")
    return float(roc_auc_score(y, s))


def auc_pr(table_or_scores, labels=None) -> float:
    """Average precision: precision at each distinct threshold weighted by
    the recall step (step interpolation)."""
    s, y = _scores_labels(table_or_scores, labels)
    if not np.any(y):
        raise DegenerateLabels("AUC-PR needs at least one positive label; none found")
    return float(average_precision_score(y, s))


# experiment driver -----------------------------------------------------------

@dataclass
class ExperimentConfig:
    models: tuple = MODELS
    p_grid: tuple = (0.5, 0.6, 0.7, 0.8, 0.9)
    pi_hat: float = 50.0
    seed: int = 0
    delta: float = 0.1
    K_max: int = 100
    sweeps: int = 10000
    prune_threshold: float = 1e-3
    em_max_iter: int = 500
    em_tol: float = 1e-6
    gibbs_iters: int = 1000
    tau: float = 1.0
    k: int | None = None
    dump_scores: bool = False

    def __post_init__(self):
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}; choose from {MODELS}")
        if not self.pi_hat > 0:
            raise ValueError("pi_hat must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if any(not 0 < p < 1 for p in self.p_grid):
            raise ValueError("every p must lie in (0, 1)")
        self.models = tuple(self.models)
        self.p_grid = tuple(float(p) for p in self.p_grid)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    scores: dict = field(default_factory=dict)

    def metric(self, model, p, name="auc_pr"):
        for r in self.rows:
            if r["model"] == model and r["p"] == p:
                return r[name]
        raise KeyError((model, p))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "p", "auc_roc", "auc_pr", "status"])
            for r in self.rows:
                w.writerow([r["model"], repr(r["p"]), repr(r["auc_roc"]), repr(r["auc_pr"]),
                            r["status"]])

    def write_timings(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "p", "fit_seconds"])
            for r in self.timings:
                w.writerow([r["model"], repr(r["p"]), f"{r['fit_seconds']:.6f}"])

    def write_scores(self, path):
        with open(path, "w") as fh:
            json.dump(self.scores, fh, sort_keys=True)


def stream(seed, *keys):
    """Independent generator for a (root seed, stage keys) combination."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


_STAGE1, _GIBBS, _KMEANS = 1, 2, 3


def fit_stage1(train: EventSequence, cfg: ExperimentConfig, rng):
    graph = hgap_epm.aggregate(train)
    fit = hgap_epm.fit_map(graph, K_max=cfg.K_max, sweeps=cfg.sweeps, rng=rng)
    return hgap_epm.prune(fit.params, cfg.prune_threshold)


def gibbs_predictor(params0, train, covariates, T, iters, rng, tau):
    """Posterior means of alpha and the stored base rates over the second
    half of the chain."""
    burn = iters // 2
    acc = {"alpha": 0.0, "mu": {}, "n": 0}

    def collect(it, state):
        if it < burn:
            return
        p = state.params
        acc["alpha"] = acc["alpha"] + p.alpha
        for key, m in p.mu.items():
            acc["mu"][key] = acc["mu"].get(key, 0.0) + m
        acc["n"] += 1
        acc["last"] = p

    chain = gibbs.run_chain(params0, train, covariates, T=T, iters=iters, rng=rng, tau=tau,
                            trace_log_posterior=False, callback=collect)
    params = acc["last"].copy()
    n = acc["n"]
    params.alpha = acc["alpha"] / n
    params.mu = {k: v / n for k, v in acc["mu"].items()}
    return HawkesEPMPredictor(params, covariates), chain


def fit_model(name, train, T, cfg: ExperimentConfig, stage1, covariates, seed_keys):
    if name == "pp":
        return baselines.fit_pp(train, T)
    if name == "mhp":
        return baselines.fit_mhp(train, T)
    if name in ("chip", "hawkes_sbm"):
        k = cfg.k if cfg.k is not None else stage1().K
        chip, sbm = baselines.fit_blockmodels(train, train.pair_counts(), k, T,
                                              seed=int(stream(cfg.seed, *seed_keys, _KMEANS)
                                                       .integers(2**31 - 1)))
        return chip if name == "chip" else sbm
    static = stage1()
    D = covariates.D if covariates is not None else 0
    params0 = initial_params(static.phi, static.omega, cfg.delta, D=D, tau=cfg.tau)
    if name == "hawkes_epm":
        params, _ = em.fit_em(params0, train, covariates, T=T, max_iter=cfg.em_max_iter,
                              tol=cfg.em_tol, tau=cfg.tau)
        return HawkesEPMPredictor(params, covariates)
    predictor, _ = gibbs_predictor(params0, train, covariates, T, cfg.gibbs_iters,
                                   stream(cfg.seed, *seed_keys, _GIBBS), cfg.tau)
    return predictor


def run_experiment(data: EventSequence, config, covariates: CovariateMatrix | None = None):
    """Fit every model on every chronological split and score all pairs.

    A model that fails to fit is recorded with its error in ``status`` and
    NaN metrics; the run continues.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    report = ExperimentReport()
    for ip, p in enumerate(cfg.p_grid):
        train, test, t = chronological_split(data, p)
        cache = {}

        def stage1():
            if "params" not in cache:
                cache["params"] = fit_stage1(train, cfg, stream(cfg.seed, ip, _STAGE1))
            return cache["params"]

        extrapolative = t + cfg.pi_hat > data.T
        for im, name in enumerate(cfg.models):
            start = time.perf_counter()
            row = {"model": name, "p": p, "auc_roc": float("nan"), "auc_pr": float("nan")}
            try:
                model = fit_model(name, train, t, cfg, stage1, covariates, (ip, im))
                table = prediction_table(model, train, test, t, cfg.pi_hat)
                row["status"] = "extrapolative" if extrapolative else "ok"
                try:
                    row["auc_roc"] = auc_roc(table)
                    row["auc_pr"] = auc_pr(table)
                except DegenerateLabels as err:
                    row["status"] = f"degenerate: {err}"
                if cfg.dump_scores:
                    report.scores[f"{name}@{p!r}"] = {
                        "pairs": table.pairs.tolist(), "scores": table.scores.tolist(),
                        "labels": table.labels.tolist()}
            except Exception as err:  # recorded per cell, the run continues
                log.warning("model %s at p=%s failed: %s", name, p, err)
                row["status"] = f"error: {type(err).__name__}: {err}".replace("\n", " ")
            report.rows.append(row)
            report.timings.append({"model": name, "p": p,
                                   "fit_seconds": time.perf_counter() - start})
    return report
