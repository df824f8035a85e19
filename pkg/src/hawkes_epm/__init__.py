"""Hawkes edge partition model: overlapping communities from an aggregated
graph, mutually exciting event dynamics on top, and a link-prediction
harness with baselines."""

from .events import (DirectedPairHistory, EvaluationError, EventSequence, ExpKernel,
                     intensity_at, kernel_compensator, kernel_value, log_likelihood,
                     log_posterior)
from .model import (CovariateMatrix, HawkesParams, LatentAssignment, base_rate, initial_params,
                    pattern_probabilities)
from .hgap_epm import AggregatedGraph, CommunityParams, aggregate, edge_probability, fit_map
from .em import fit_em
from .gibbs import run_chain
from .simulation import block_scenario, simulate
from .evaluation import (ExperimentConfig, auc_pr, auc_roc, chronological_split,
                         link_probability, run_experiment)

__version__ = "0.1.0"
