"""The M0-M3 ablation on leave-cohort-out folds, written out as report tables.

A reduced grid keeps this to a couple of minutes; the CLI's `pipeline`
command runs the default grid.

    python walkthroughs/04_ablation.py [out_dir]
"""
import sys
from pathlib import Path

from dropnet.evalbench import emit_reports, plan_folds, run_ablation
from dropnet.ingest import SyntheticConfig, generate_synthetic

out = Path(sys.argv[1] if len(sys.argv) > 1 else "ablation_out")
ds = generate_synthetic(SyntheticConfig(seed=42))
plan = plan_folds(ds.cohort_sizes())
print(f"{len(plan)} folds:", ", ".join("+".join(f"{c}" if p is None else f"{c}/{p}" for c, p in f.test)
                                      for f in plan.folds))

report = run_ablation(ds, 3, plan, grid={"n_trees": [100], "max_depth": [None, 8], "min_samples_leaf": [5]})
for path in emit_reports(report, out, top_k=10):
    print("wrote", path)
print()
print((out / "model_comparison.csv").read_text())
print((out / "net_effect.csv").read_text())
