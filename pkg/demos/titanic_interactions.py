"""Train a two-dimensional INCE model on Titanic and read its feature interactions.

With l=2 every edge latent vector is a point in the plane, so the edge
population can be plotted directly.  The script prints which feature pairs
look most atypical (low Mahalanobis p-value), the per-feature scores p(j),
and how those scores rank against exact Shapley importance.

    python demos/titanic_interactions.py [out_dir]
"""

import sys
import warnings

import numpy as np

from ince.data import prepare_split, train_test_split
from ince.datasets import load_titanic
from ince.interpret import export_embedding_points, interpret
from ince.model import InceConfig, evaluate, train

out_dir = sys.argv[1] if len(sys.argv) > 1 else "titanic_interpretation"

raw, schema = load_titanic()
train_idx, test_idx = train_test_split(raw.columns[schema.target_name], 0.2, seed=0)
train_ds, test_ds = prepare_split(raw, schema, train_idx, test_idx)

config = InceConfig(latent=2, depth=3, n_layers=2, epochs=200, seed=0)
model = train(config, train_ds).final
print(f"test accuracy: {evaluate(model, test_ds)['value']:.3f}")

with warnings.catch_warnings():
    # some (value, value) groups are empty in a 179-row test split
    warnings.simplefilter("ignore", UserWarning)
    result = interpret(model, test_ds, out_dir)

names = result.summary.feature_names
p = result.summary.edge_p
pairs = [(p[i, j], names[i], names[j]) for i in range(len(names)) for j in range(len(names)) if i != j]
print("\nmost atypical directed feature pairs (mean p-value):")
for value, a, b in sorted(pairs)[:5]:
    print(f"  {a:>10} -> {b:<10} {value:.3f}")

print("\nfeature      p(j)   shapley")
for name, score, phi in zip(names, result.summary.feature_scores, result.shapley):
    print(f"  {name:<10} {score:.3f}  {phi:.3f}")
print(f"\nSpearman(1 - p(j), shapley) = {result.rho:.3f}, permutation p = {result.p_value:.3f}")

points = export_embedding_points(model, test_ds, f"{out_dir}/embeddings.csv")
ctx = np.array([[r["x"], r["y"]] for r in points if r["kind"] == "contextual"])
print(f"\n{len(points)} embedding points written; contextual spread per axis: {ctx.std(axis=0).round(3)}")
print(f"heatmaps and summary in {out_dir}/")
