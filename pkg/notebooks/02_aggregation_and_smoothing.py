# %% [markdown]
# # Aggregation modes and the smoothness penalty
#
# Learned attention against fixed degree normalisation, then the effect of the
# smoothness weight on how close linked embeddings end up. Reduced data and
# short runs, a few minutes on one CPU.

# %%
import dataclasses

from riskgraph import metrics, model
from riskgraph.config import RunConfig
from riskgraph.graph import build_graph
from riskgraph.preprocess import fit_transform
from riskgraph.synth import SynthConfig, generate
from riskgraph.train import mean_edge_gap, train_loop

cfg = RunConfig()
cfg = dataclasses.replace(
    cfg,
    synth=SynthConfig(n_transactions=5000, n_rings=10),
    train=dataclasses.replace(cfg.train, max_epochs=30),
)
table = generate(cfg.synth)
features, _, _ = fit_transform(table, cfg.preprocess)
g = build_graph(table, cfg.graph.rules, cfg.graph.min_component_size)
test = features.mask("test")

# %% [markdown]
# ## Attention vs degree normalisation

# %%
for agg in ("attention", "degree_norm"):
    mcfg = dataclasses.replace(cfg.model, aggregation=agg)
    result = train_loop(g, features, mcfg, cfg.train)
    p = model.predict(g, features.x, result.params, mcfg)
    print(f"{agg:12s} test AUROC {metrics.auroc(p[test], features.y[test]):.4f}  "
          f"best epoch {result.best_epoch}")

# %% [markdown]
# ## Smoothness weight
# Mean squared distance between linked embeddings after training.

# %%
for lam in (0.0, 1e-4, 1e-2, 1e-1):
    tcfg = dataclasses.replace(cfg.train, lambda_smooth=lam)
    result = train_loop(g, features, cfg.model, tcfg)
    h = model.encode(g, features.x, result.params, cfg.model)
    p = model.predict(g, features.x, result.params, cfg.model)
    print(f"lambda {lam:<7g} edge gap {mean_edge_gap(h, g):.5f}  "
          f"test AUROC {metrics.auroc(p[test], features.y[test]):.4f}")
