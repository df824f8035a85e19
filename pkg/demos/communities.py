"""Finding communities in the graph of who has ever contacted whom.

The first stage of the model ignores timing.  It collapses the event stream
into a binary directed graph and fits an edge partition model whose gamma
process prior switches off unneeded communities.  Here two planted groups
of 20 nodes are densely connected inside and not at all across.

Run:  python demos/communities.py
"""

import numpy as np

from hawkes_epm import hgap_epm

rng = np.random.default_rng(1)
labels = np.repeat([0, 1], 20)
edges = (labels[:, None] == labels[None, :]) & (rng.random((40, 40)) < 0.9)
np.fill_diagonal(edges, False)
graph = hgap_epm.AggregatedGraph(edges)
print(f"{graph.n_edges} edges among {graph.V} nodes")

fit = hgap_epm.fit_map(graph, K_max=20, sweeps=2000, rng=3)
params = hgap_epm.prune(fit.params)
print(f"MAP state from sweep {fit.sweep}; {params.K} of 20 communities carry weight")

# Which communities does each planted group use?
share = params.phi / params.phi.sum(axis=1, keepdims=True)
for g in (0, 1):
    top = np.argsort(-share[labels == g].mean(0))[:3]
    print(f"group {g}: main communities {top.tolist()} "
          f"with average shares {np.round(share[labels == g].mean(0)[top], 2).tolist()}")

# Held-in reconstruction: edge probabilities inside vs across groups.
prob = params.edge_probabilities()
inside = labels[:, None] == labels[None, :]
off = ~np.eye(40, dtype=bool)
print(f"mean edge probability inside groups {prob[inside & off].mean():.3f}, "
      f"across groups {prob[~inside].mean():.3f}")

# One group is usually captured by a single community.  The other is often
# spread over several communities with strong mutual weights: the sampler
# merges such splits slowly, although the fitted edge probabilities are
# the same either way.
