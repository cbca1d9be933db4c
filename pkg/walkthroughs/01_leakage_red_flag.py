"""Planted post-outcome flags make every model look perfect; the audit finds them.

Generates a smaller leaky dataset, shows the too-good-to-be-true scores,
audits the full matrix, strips what the audit flags, and reruns.

    python walkthroughs/01_leakage_red_flag.py
"""
from dropnet.audit import audit_matrix, strip_and_rebuild
from dropnet.evalbench import plan_folds, run_ablation
from dropnet.featstack import build_full_matrix
from dropnet.ingest import SyntheticConfig, generate_synthetic

GRID = {"n_trees": [50], "max_depth": [8], "min_samples_leaf": [5]}

ds = generate_synthetic(SyntheticConfig(seed=3, n_cohorts=6, total_students=500, plant_leak_vars=True))
plan = plan_folds(ds.cohort_sizes(), target_folds=6)


def show(report, title):
    print(f"\n{title}")
    for name in report.config_names():
        agg = report.aggregate(name)
        print(f"  {name:<12} F1 {agg['f1']['mean']:.3f}  AUC {agg['roc_auc']['mean']:.3f}")


# gate off: the late columns go straight into the models
leaky = run_ablation(ds, 3, plan, grid=GRID, gate=False, with_logit=False)
show(leaky, "with the planted flags")

audit = audit_matrix(build_full_matrix(ds, 3, gate=False))
print()
print(audit.table())

clean = strip_and_rebuild(build_full_matrix(ds, 3, gate=False), audit)
print("re-audit after stripping:", audit_matrix(clean).verdict)

fixed = run_ablation(ds, 3, plan, grid=GRID, exclude=audit.fatal_columns, with_logit=False)
show(fixed, "after stripping")
