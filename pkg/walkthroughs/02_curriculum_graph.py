"""Curriculum DAG features for a handful of students at the observation boundary.

    python walkthroughs/02_curriculum_graph.py
"""
import json

from dropnet.curricgraph import build_graph, compute_graph_features, graph_stats, identify_bottlenecks, snapshots_at_vot
from dropnet.ingest import SyntheticConfig, generate_synthetic

VOT = 3

ds = generate_synthetic(SyntheticConfig(seed=42))
g = build_graph(ds)
bottlenecks = identify_bottlenecks(g, ds, vot=VOT)

stats = graph_stats(g, bottlenecks)
print(json.dumps({k: stats[k] for k in ("n_nodes", "n_edges", "max_in_degree", "longest_chain")}, indent=2))
print("bottlenecks:", ", ".join(sorted(bottlenecks)))

snaps = snapshots_at_vot(ds, VOT)
outcome = dict(zip(ds.outcomes["student_id"], ds.outcomes["dropout"]))
print(f"\n{'student':<10}{'dropout':>8}{'blocked':>9}{'backbone':>10}{'bn_ratio':>10}{'distance':>10}{'satisf':>8}")
for sid in sorted(snaps)[:12]:
    f = compute_graph_features(g, snaps[sid], bottlenecks)
    print(f"{sid:<10}{int(outcome[sid]):>8}{f.blocked_credits:>9}{f.backbone_completion_rate:>10.2f}"
          f"{f.bottleneck_approval_ratio:>10.2f}{f.distance_to_graduation:>10}{f.prereq_satisfaction_index:>8.2f}")
