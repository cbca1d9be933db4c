"""One cohort's co-enrolment network: projection, Louvain communities, NET features.

    python walkthroughs/03_coenrolment_network.py [cohort_year]
"""
import sys

from dropnet.conet import cohort_network, net_feature_table
from dropnet.ingest import SyntheticConfig, generate_synthetic

VOT = 3

ds = generate_synthetic(SyntheticConfig(seed=42))
cohort = int(sys.argv[1]) if len(sys.argv) > 1 else ds.cohorts[0]
net = cohort_network(ds, cohort, VOT)

g, part = net.pooled, net.pooled_partition
print(f"cohort {cohort}: {len(g.nodes)} students, {len(g.edges())} weighted edges, total weight {g.total_weight:g}")
print(f"Louvain: {len(part.sizes)} communities, sizes {sorted(part.sizes.values(), reverse=True)}, "
      f"Q = {part.modularity:.4f}")
for term, p in sorted(net.term_partitions.items()):
    print(f"  term {term}: {len(p.sizes)} communities, Q = {p.modularity:.4f}")

table = net_feature_table(ds, VOT, standardize=False)
members = table.loc[list(g.nodes)]
print("\nraw NET features (first 8 students):")
print(members.head(8).round(3).to_string())
print("\nsolitary students:", int(members["solitary_flag"].sum()))
