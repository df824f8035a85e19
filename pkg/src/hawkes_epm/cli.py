"""Command-line pipeline: simulate, fit-static, fit-em, fit-gibbs, evaluate, predict.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The output directory is ``--output-dir``, else ``$HAWKES_EPM_OUTPUT_DIR``,
else the working directory.  Each stochastic stage draws from its own
stream of the root ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import em, evaluation, gibbs, hgap_epm, io, simulation
from .model import initial_params

log = logging.getLogger("hawkes_epm")

OUTPUT_ENV = "HAWKES_EPM_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# stream ids under the root seed
_SIMULATE, _STATIC, _GIBBS = 11, 12, 13


class UsageError(Exception):
    pass


class StageError(io.DataError):
    """An upstream stage's output is missing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{text!r} is not a valid {kind.__name__}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{text!r} must be positive")
        return v
    return conv


def _fraction(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must lie in (0, 1)")
    return v


def build_parser():
    p = _Parser(prog="hawkes-epm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, events=True):
        sp.add_argument("--output-dir", type=Path, default=None)
        if events:
            sp.add_argument("--events", type=Path, required=True, help="CSV with header t,src,dst")
            sp.add_argument("--time-scale", type=_positive(float), default=1.0,
                            help="multiplier converting file times to model units (days)")

    sp = sub.add_parser("simulate", help="draw events from the block scenario")
    common(sp, events=False)
    sp.add_argument("--scenario", type=Path, help="JSON or TOML scenario file")
    sp.add_argument("--V", type=_positive(int), default=100)
    sp.add_argument("--alpha", type=float, nargs="+", default=[0.5, 0.88, 1.38, 1.96])
    sp.add_argument("--delta", type=_positive(float), default=0.45)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--n-events", type=_positive(int))
    g.add_argument("--T", type=_positive(float))
    sp.add_argument("--max-events", type=_positive(int), default=10**7)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", default="events.csv")

    sp = sub.add_parser("fit-static", help="stage 1: communities from the aggregated graph")
    common(sp)
    sp.add_argument("--K-max", type=_positive(int), default=100)
    sp.add_argument("--sweeps", type=_positive(int), default=10000)
    sp.add_argument("--prune-threshold", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", default="static.json")

    for name, help_ in (("fit-em", "stage 2 by EM"), ("fit-gibbs", "stage 2 by Gibbs sampling")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--static", type=Path, default=None,
                        help="stage-1 checkpoint (default <output-dir>/static.json)")
        sp.add_argument("--covariates", type=Path, default=None)
        sp.add_argument("--delta", type=_positive(float), default=0.1)
        sp.add_argument("--tau", type=_positive(float), default=1.0)
        if name == "fit-em":
            sp.add_argument("--max-iter", type=_positive(int), default=500)
            sp.add_argument("--tol", type=_positive(float), default=1e-6)
            sp.add_argument("--out", default="hawkes_em.json")
        else:
            sp.add_argument("--iters", type=_positive(int), default=1000)
            sp.add_argument("--seed", type=int, required=True)
            sp.add_argument("--out", default="hawkes_gibbs.json")

    sp = sub.add_parser("evaluate", help="link-prediction experiment over a train-fraction grid")
    common(sp)
    sp.add_argument("--config", type=Path, help="JSON or TOML experiment config")
    sp.add_argument("--covariates", type=Path, default=None)
    sp.add_argument("--models", nargs="+", choices=evaluation.MODELS)
    sp.add_argument("--p-grid", type=_fraction, nargs="+")
    sp.add_argument("--pi-hat", type=_positive(float))
    sp.add_argument("--delta", type=_positive(float))
    sp.add_argument("--K-max", type=_positive(int))
    sp.add_argument("--sweeps", type=_positive(int))
    sp.add_argument("--gibbs-iters", type=_positive(int))
    sp.add_argument("--k", type=_positive(int))
    sp.add_argument("--dump-scores", action="store_true")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", default="metrics.csv")

    sp = sub.add_parser("predict", help="score all pairs over a window from a stage-2 checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--covariates", type=Path, default=None)
    sp.add_argument("--t", type=float, default=None, help="window start (default: last event)")
    sp.add_argument("--pi-hat", type=_positive(float), required=True)
    sp.add_argument("--out", default="predictions.csv")
    return p


def output_dir(args):
    out = args.output_dir or os.environ.get(OUTPUT_ENV) or "."
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_of(args):
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k not in ("output_dir", "verbose")}


def _emit(out, name, args, seed=None):
    io.append_manifest(out, name, _config_of(args), seed)
    log.info("wrote %s", out / name)


def _read_config(path):
    if path.suffix.lower() == ".toml":
        import tomli
        with open(path, "rb") as fh:
            return tomli.load(fh)
    return json.loads(path.read_text())


def _stage1(args, out):
    path = args.static or out / "static.json"
    if not Path(path).exists():
        raise StageError(f"stage-1 checkpoint {path} not found; run 'hawkes-epm fit-static' first")
    return io.load_checkpoint(path, kind="community")


def cmd_simulate(args, out):
    rng = evaluation.stream(args.seed, _SIMULATE)
    if args.scenario:
        cfg = simulation.load_scenario_config(args.scenario)
        scen = simulation.scenario_from_config(cfg, rng)
        max_events = int(cfg.get("max_events", args.max_events))
    else:
        if args.n_events is None and args.T is None:
            raise UsageError("simulate needs --scenario, --n-events or --T")
        scen = simulation.block_scenario(V=args.V, alphas=args.alpha, delta=args.delta, rng=rng,
                                         n_events=args.n_events, T=args.T)
        max_events = args.max_events
    data, truth = simulation.simulate(scen.params, scen.T, rng, max_events=max_events)
    io.write_events(out / args.out, data)
    _emit(out, args.out, args, args.seed)
    info = {"T": scen.T, "labels": scen.labels.tolist(),
            "community_rates": scen.community_rates.tolist(),
            "alpha": np.diag(scen.params.alpha).tolist(), "delta": scen.params.delta,
            "n_events": len(data), "exogenous": truth.exogenous.astype(int).tolist()}
    name = Path(args.out).stem + "_truth.json"
    (out / name).write_text(json.dumps(info, sort_keys=True))
    _emit(out, name, args, args.seed)
    print(f"simulated {len(data)} events on [0, {scen.T:.6g}]")


def cmd_fit_static(args, out):
    data, vocab, _ = io.load_events(args.events, time_scale=args.time_scale)
    graph = hgap_epm.aggregate(data)
    fit = hgap_epm.fit_map(graph, K_max=args.K_max, sweeps=args.sweeps,
                           rng=evaluation.stream(args.seed, _STATIC))
    params = hgap_epm.prune(fit.params, args.prune_threshold)
    io.save_checkpoint(out / args.out, params, vocab,
                       {"stage": "static", "map_sweep": fit.sweep, "K_max": args.K_max})
    _emit(out, args.out, args, args.seed)
    trace = Path(args.out).stem + "_trace.csv"
    with open(out / trace, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "log_joint"])
        w.writerows([i, repr(v)] for i, v in enumerate(fit.trace))
    _emit(out, trace, args, args.seed)
    print(f"stage 1: {params.K} active communities (MAP sweep {fit.sweep})")


def _stage2_inputs(args, out):
    static, vocab, _ = _stage1(args, out)
    data, vocab, _ = io.load_events(args.events, vocab=vocab, time_scale=args.time_scale)
    cov = io.load_covariates(args.covariates, vocab)
    D = cov.D if cov is not None else 0
    params0 = initial_params(static.phi, static.omega, args.delta, D=D, tau=args.tau)
    return data, vocab, cov, params0


def cmd_fit_em(args, out):
    data, vocab, cov, params0 = _stage2_inputs(args, out)
    params, state = em.fit_em(params0, data, cov, max_iter=args.max_iter, tol=args.tol,
                              tau=args.tau)
    io.save_checkpoint(out / args.out, params, vocab,
                       {"stage": "em", "n_iter": state.n_iter, "converged": state.converged})
    _emit(out, args.out, args)
    trace = Path(args.out).stem + "_trace.csv"
    with open(out / trace, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective"])
        w.writerows([i, repr(v)] for i, v in enumerate(state.objective_trace))
    _emit(out, trace, args)
    print(f"EM: {state.n_iter} iterations, converged={state.converged}")


def cmd_fit_gibbs(args, out):
    data, vocab, cov, params0 = _stage2_inputs(args, out)
    predictor, chain = evaluation.gibbs_predictor(params0, data, cov, data.T, args.iters,
                                                  evaluation.stream(args.seed, _GIBBS), args.tau)
    io.save_checkpoint(out / args.out, predictor.params, vocab,
                       {"stage": "gibbs", "iters": args.iters, "estimate": "posterior mean"})
    _emit(out, args.out, args, args.seed)
    trace = Path(args.out).stem + "_trace.csv"
    chain.write_csv(out / trace)
    _emit(out, trace, args, args.seed)
    print(f"Gibbs: {args.iters} iterations")


def cmd_evaluate(args, out):
    cfg = _read_config(args.config) if args.config else {}
    for key in ("models", "p_grid", "pi_hat", "delta", "K_max", "sweeps", "gibbs_iters", "k"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = tuple(val) if isinstance(val, list) else val
    cfg["seed"] = args.seed
    if args.dump_scores:
        cfg["dump_scores"] = True
    config = evaluation.ExperimentConfig.from_dict(cfg)
    data, vocab, _ = io.load_events(args.events, time_scale=args.time_scale)
    cov = io.load_covariates(args.covariates, vocab)
    report = evaluation.run_experiment(data, config, cov)
    report.write_csv(out / args.out)
    _emit(out, args.out, args, args.seed)
    timings = Path(args.out).stem + "_timings.csv"
    report.write_timings(out / timings)
    _emit(out, timings, args, args.seed)
    if config.dump_scores:
        scores = Path(args.out).stem + "_scores.json"
        report.write_scores(out / scores)
        _emit(out, scores, args, args.seed)
    for r in report.rows:
        print(f"{r['model']:>16} p={r['p']:.2f} auc_roc={r['auc_roc']:.4f} "
              f"auc_pr={r['auc_pr']:.4f} {r['status']}")


def cmd_predict(args, out):
    if not args.checkpoint.exists():
        raise StageError(f"checkpoint {args.checkpoint} not found; run 'hawkes-epm fit-em' "
                         "or 'hawkes-epm fit-gibbs' first")
    params, vocab, _ = io.load_checkpoint(args.checkpoint, kind="hawkes")
    data, vocab, _ = io.load_events(args.events, vocab=vocab, time_scale=args.time_scale)
    cov = io.load_covariates(args.covariates, vocab)
    t = float(data.t[-1]) if args.t is None and len(data) else (args.t or 0.0)
    history = data.subset(data.t <= t, T=max(t, 0.0)) if len(data) else data
    probs = evaluation.link_probabilities(evaluation.HawkesEPMPredictor(params, cov),
                                          history, t, args.pi_hat)
    with open(out / args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "probability"])
        V = params.V
        for u in range(V):
            for v in range(V):
                if u != v:
                    w.writerow([vocab[u], vocab[v], repr(float(probs[u, v]))])
    _emit(out, args.out, args)
    print(f"scored {params.V * (params.V - 1)} pairs over [{t:.6g}, {t + args.pi_hat:.6g})")


COMMANDS = {"simulate": cmd_simulate, "fit-static": cmd_fit_static, "fit-em": cmd_fit_em,
            "fit-gibbs": cmd_fit_gibbs, "evaluate": cmd_evaluate, "predict": cmd_predict}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = output_dir(args)
        COMMANDS[args.command](args, out)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, FileNotFoundError, IsADirectoryError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, simulation.SimulationCapError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
