"""Small depth-versus-stack sweep on Titanic with the normalized metric.

Trains the (d, n=1) and (d=1, n) axes at one latent size, persists every run
under ``runs/``, then rescales each curve so the (d=1, n=1) model sits at 0
and the best configuration at 1.  Rerunning skips completed runs.

    python demos/depth_vs_stack.py [out_dir]
"""

import sys

from ince.bench import ExperimentSpec, normalized_metric, run_experiment, write_normalized_csv

out_dir = sys.argv[1] if len(sys.argv) > 1 else "runs"
spec = ExperimentSpec(data="titanic", latent=[16], folds=3, seeds=[0], epochs=100, sweep="axes", out_dir=out_dir)

runs = run_experiment(spec)
print(f"{sum(r.trained for r in runs)} runs trained, {sum(not r.trained for r in runs)} reused")

for table in normalized_metric(out_dir):
    print(f"\n{table.dataset}, l={table.latent} ({table.metric}); base {table.base:.4f}, best {table.best:.4f}")
    if table.degenerate:
        print("  the (d=1, n=1) baseline is already the best configuration; curves are set to 0")
    print("  index   raw(d)  C_d     raw(n)  C_n")
    for i, (rd, cd, rn, cn) in enumerate(zip(table.raw_d, table.c_d, table.raw_n, table.c_n), start=1):
        print(f"  {i:5d}   {rd:.4f}  {cd:+.3f}  {rn:.4f}  {cn:+.3f}")
    write_normalized_csv([table], f"{out_dir}/normalized_metric.csv")
