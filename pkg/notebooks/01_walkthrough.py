# %% [markdown]
# # riskgraph walkthrough
#
# Synthetic transactions, the shared-attribute graph, one short training run and
# the evaluation report. Runs in about a minute on one CPU.
# Execute with `python3 notebooks/01_walkthrough.py` or cell by cell in an editor.

# %%
import dataclasses

import numpy as np

from riskgraph import metrics, model
from riskgraph.config import RunConfig
from riskgraph.graph import build_graph, graph_summary
from riskgraph.preprocess import fit_transform
from riskgraph.synth import SynthConfig, generate, logistic_baseline
from riskgraph.train import train_loop

cfg = RunConfig()
cfg = dataclasses.replace(
    cfg,
    synth=SynthConfig(n_transactions=5000, n_rings=10),
    train=dataclasses.replace(cfg.train, max_epochs=40),
)

# %% [markdown]
# ## Data
# Ring members are fraudulent and share a card, a device and an address.

# %%
table, ring = generate(cfg.synth, return_rings=True)
print(table.n_rows, "rows, fraud rate", round(float(table.labels.mean()), 4))
print("ring sizes", np.bincount(ring[ring >= 0]))

features, fitted, _ = fit_transform(table, cfg.preprocess)
print("feature matrix", features.x.shape)
print("split sizes", [int(features.mask(s).sum()) for s in ("train", "val", "test")])

# %% [markdown]
# ## Graph
# Transactions that share a key (card, address, device, email) are linked.

# %%
g = build_graph(table, cfg.graph.rules, cfg.graph.min_component_size)
g.check()
print("\n".join(graph_summary(g).splitlines()[:6]))

deg = g.degrees()
print("mean degree, fraud vs legit:",
      deg[features.y == 1].mean().round(2), deg[features.y == 0].mean().round(2))

# %% [markdown]
# ## Training
# Full-batch training with class weighting and the smoothness penalty.

# %%
result = train_loop(g, features, cfg.model, cfg.train)
print("stopped after", result.stopped_epoch, "epochs; best epoch", result.best_epoch)
for rec in result.history[:: max(1, len(result.history) // 8)]:
    print(f"epoch {rec['epoch']:3d}  loss {rec['loss_total']:10.2f}  "
          f"val AUPRC {rec['val_auprc']:.4f}")

# %% [markdown]
# ## Evaluation
# The graph model against the same features without the graph.

# %%
test = features.mask("test")
p = model.predict(g, features.x, result.params, cfg.model)
p_base, _ = logistic_baseline(features, cfg.train)
for name, scores in (("graph model", p), ("no-graph baseline", p_base)):
    rep = metrics.evaluate(scores[test], features.y[test], split="test")
    print(f"{name:18s} AUROC {rep.auroc:.4f}  AUPRC {rep.auprc:.4f}  "
          f"ECE {rep.ece:.4f}  Brier {rep.brier:.4f}")

# %%
# reliability table: (count, mean confidence, observed rate) per occupied bin
_, table_rows = metrics.ece(p[test], features.y[test])
for row in table_rows:
    if row[0]:
        print(row)
