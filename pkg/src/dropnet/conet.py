"""Cohort co-enrolment networks, Louvain communities and social-synchrony features."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .ingest import Dataset

EVENT_FIELDS = ("course_id", "section_id", "term", "kind")
NET_COLUMNS = ("community_size", "belonging_score", "community_stability", "solitary_flag",
               "weighted_degree")


class UnknownCohortError(KeyError):
    pass


@dataclass
class CooccurrenceGraph:
    """Undirected weighted student graph; weight = number of shared events."""

    cohort_year: int | None
    terms: tuple[int, ...]
    nodes: tuple[str, ...]
    adj: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        for n in self.nodes:
            self.adj.setdefault(n, {})

    def weight(self, i: str, j: str) -> float:
        return self.adj.get(i, {}).get(j, 0.0)

    def degree(self, node: str) -> float:
        return float(sum(self.adj[node].values()))

    @property
    def total_weight(self) -> float:
        return sum(sum(nbrs.values()) for nbrs in self.adj.values()) / 2.0

    def edges(self) -> list[tuple[str, str, float]]:
        return [(i, j, w) for i in self.nodes for j, w in sorted(self.adj[i].items()) if i < j]

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str, float]],
                   cohort_year=None, terms=()) -> CooccurrenceGraph:
        g = cls(cohort_year, tuple(terms), tuple(sorted(set(nodes))))
        for i, j, w in edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            g.adj[i][j] = g.adj[i].get(j, 0.0) + float(w)
            g.adj[j][i] = g.adj[j].get(i, 0.0) + float(w)
        return g


def project_events(nodes: Iterable[str], events: pd.DataFrame, cohort_year=None,
                   terms=()) -> CooccurrenceGraph:
    """Project a student x event incidence table onto student pairs."""
    g = CooccurrenceGraph(cohort_year, tuple(terms), tuple(sorted(set(nodes))))
    members = defaultdict(set)
    for sid, *key in events[["student_id", *EVENT_FIELDS]].itertuples(index=False):
        members[tuple(key)].add(sid)
    for key in sorted(members):
        for i, j in combinations(sorted(members[key]), 2):
            g.adj[i][j] = g.adj[i].get(j, 0.0) + 1.0
            g.adj[j][i] = g.adj[j].get(i, 0.0) + 1.0
    return g


def build_cooccurrence(ds: Dataset, cohort_year: int, vot: int, per_term: bool = False):
    """Co-enrolment/co-exam graph of one cohort from events with term <= vot.

    With ``per_term`` a dict ``term -> graph`` is returned whose node sets are
    the cohort students active (with any event) in that term.
    """
    students = ds.students.loc[ds.students["cohort_year"] == cohort_year, "student_id"]
    if students.empty:
        raise UnknownCohortError(cohort_year)
    ids = set(students)
    ev = ds.enrollments
    ev = ev[ev["student_id"].isin(ids) & (ev["term"] <= vot)]
    if not per_term:
        return project_events(ids, ev, cohort_year, range(1, vot + 1))
    out = {}
    for term in range(1, vot + 1):
        sub = ev[ev["term"] == term]
        out[term] = project_events(set(sub["student_id"]), sub, cohort_year, (term,))
    return out


# --------------------------------------------------------------------------
# modularity and Louvain

@dataclass
class Partition:
    membership: dict[str, int]
    modularity: float

    @property
    def communities(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = defaultdict(list)
        for node, c in sorted(self.membership.items()):
            out[c].append(node)
        return dict(sorted(out.items()))

    @property
    def sizes(self) -> dict[int, int]:
        return {c: len(m) for c, m in self.communities.items()}

    def members(self, node: str) -> list[str]:
        return self.communities[self.membership[node]]


def modularity(g: CooccurrenceGraph, membership: Mapping[str, int], resolution: float = 1.0) -> float:
    """Weighted Newman modularity; 0 for graphs without edges."""
    m = g.total_weight
    if m == 0:
        return 0.0
    internal: dict[int, float] = defaultdict(float)
    degree: dict[int, float] = defaultdict(float)
    for i in g.nodes:
        ci = membership[i]
        degree[ci] += g.degree(i)
        for j, w in g.adj[i].items():
            if membership[j] == ci:
                internal[ci] += w  # each internal edge seen twice
    return sum(internal[c] / (2 * m) - resolution * (degree[c] / (2 * m)) ** 2 for c in degree)


def _one_level(adj: list[dict[int, float]], loops: list[float], m2: float, resolution: float):
    """Local-move phase on an integer-indexed graph. Returns community per node."""
    n = len(adj)
    comm = list(range(n))
    k = [sum(nbrs.values()) + 2 * loops[i] for i, nbrs in enumerate(adj)]
    tot = list(k)
    eps = 1e-12
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in range(n):
            ci = comm[i]
            links: dict[int, float] = defaultdict(float)
            for j, w in adj[i].items():
                links[comm[j]] += w
            tot[ci] -= k[i]
            # gain of inserting i into c, relative to leaving it isolated
            def gain(c):
                return links.get(c, 0.0) - resolution * tot[c] * k[i] / m2

            # ascending scan + strict improvement: ties keep the smaller id,
            # and a tie with staying put is not a positive gain
            best_c, best_gain = ci, gain(ci)
            for c in sorted(links):
                if c == ci:
                    continue
                gc = gain(c)
                if gc > best_gain + eps:
                    best_c, best_gain = c, gc
            tot[best_c] += k[i]
            if best_c != ci:
                comm[i] = best_c
                improved = moved_any = True
    return comm, moved_any


def louvain(g: CooccurrenceGraph, seed: int = 0, resolution: float = 1.0) -> Partition:
    """Deterministic Louvain modularity optimisation.

    Nodes are scanned in ascending id order and moved to the neighbouring
    community of largest strictly positive gain (ties to the smaller community
    id); local moves and aggregation alternate until nothing moves. ``seed``
    is accepted for interface stability; the scan order is already fixed.
    """
    del seed
    nodes = list(g.nodes)
    if not nodes:
        return Partition({}, 0.0)
    index = {n: i for i, n in enumerate(nodes)}
    adj = [{index[j]: w for j, w in g.adj[n].items()} for n in nodes]
    loops = [0.0] * len(nodes)
    m2 = 2.0 * g.total_weight
    assignment = list(range(len(nodes)))
    if m2 > 0:
        while True:
            comm, moved = _one_level(adj, loops, m2, resolution)
            if not moved:
                break
            relabel = {c: r for r, c in enumerate(sorted(set(comm)))}
            comm = [relabel[c] for c in comm]
            assignment = [comm[a] for a in assignment]
            n_new = len(relabel)
            new_adj: list[dict[int, float]] = [defaultdict(float) for _ in range(n_new)]
            new_loops = [0.0] * n_new
            for i, nbrs in enumerate(adj):
                ci = comm[i]
                new_loops[ci] += loops[i]
                for j, w in nbrs.items():
                    cj = comm[j]
                    if ci == cj:
                        new_loops[ci] += w / 2.0
                    else:
                        new_adj[ci][cj] += w
            adj = [dict(a) for a in new_adj]
            loops = new_loops
    # community ids ordered by smallest member id
    first: dict[int, int] = {}
    for i, c in enumerate(assignment):
        first.setdefault(c, i)
    order = {c: r for r, c in enumerate(sorted(first, key=first.get))}
    membership = {nodes[i]: order[c] for i, c in enumerate(assignment)}
    return Partition(membership, modularity(g, membership, resolution))


# --------------------------------------------------------------------------
# per-student features

@dataclass(frozen=True)
class NetFeatures:
    community_size: int
    belonging_score: float
    community_stability: float
    solitary_flag: bool
    weighted_degree: float


def _jaccard(a: set, b: set) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def net_features(term_partitions: Mapping[int, Partition], pooled: CooccurrenceGraph,
                 pooled_partition: Partition, student_id: str,
                 degree_floor: float | None = None) -> NetFeatures:
    """Raw (unstandardised) network features for one student.

    ``degree_floor`` is the cohort 5th percentile of weighted degree; when not
    given it is computed from ``pooled``.
    """
    if student_id not in pooled_partition.membership:
        raise KeyError(student_id)
    if degree_floor is None:
        degree_floor = cohort_degree_floor(pooled)
    members = pooled_partition.members(student_id)
    size = len(members)
    degree = pooled.degree(student_id)
    same = set(members)
    inside = sum(w for j, w in pooled.adj[student_id].items() if j in same)
    belonging = inside / degree if degree > 0 else 0.0

    terms = sorted(term_partitions)
    sims = []
    for a, b in zip(terms, terms[1:]):
        pa, pb = term_partitions[a], term_partitions[b]
        if b != a + 1 or student_id not in pa.membership or student_id not in pb.membership:
            continue
        sa = set(pa.members(student_id)) - {student_id}
        sb = set(pb.members(student_id)) - {student_id}
        sims.append(_jaccard(sa, sb))
    stability = float(np.mean(sims)) if sims else 0.0

    solitary = size <= 1 or degree <= degree_floor
    return NetFeatures(size, belonging, stability, bool(solitary), degree)


def cohort_degree_floor(g: CooccurrenceGraph, pct: float = 5.0) -> float:
    degrees = [g.degree(n) for n in g.nodes]
    return float(np.percentile(degrees, pct)) if degrees else 0.0


def standardize_within_cohort(values: Sequence[float], cohorts: Sequence) -> np.ndarray:
    """z-scores per cohort using the population std; constant groups map to 0."""
    x = np.asarray(values, dtype=float)
    cohorts = np.asarray(cohorts)
    out = np.zeros_like(x)
    for c in np.unique(cohorts):
        mask = cohorts == c
        mu = x[mask].mean()
        sd = x[mask].std()
        out[mask] = (x[mask] - mu) / sd if sd > 0 else 0.0
    return out


@dataclass
class CohortNetwork:
    pooled: CooccurrenceGraph
    pooled_partition: Partition
    term_graphs: dict[int, CooccurrenceGraph]
    term_partitions: dict[int, Partition]


def cohort_network(ds: Dataset, cohort_year: int, vot: int, seed: int = 0) -> CohortNetwork:
    pooled = build_cooccurrence(ds, cohort_year, vot)
    terms = build_cooccurrence(ds, cohort_year, vot, per_term=True)
    return CohortNetwork(
        pooled=pooled,
        pooled_partition=louvain(pooled, seed),
        term_graphs=terms,
        term_partitions={t: louvain(tg, seed) for t, tg in terms.items()},
    )


def net_feature_table(ds: Dataset, vot: int, seed: int = 0, standardize: bool = True,
                      networks: Mapping[int, CohortNetwork] | None = None) -> pd.DataFrame:
    """NET block for every student, indexed by student_id.

    All columns except ``solitary_flag`` are z-scored within cohort.
    """
    rows = []
    for cohort in ds.cohorts:
        net = networks[cohort] if networks is not None else cohort_network(ds, cohort, vot, seed)
        floor = cohort_degree_floor(net.pooled)
        for sid in net.pooled.nodes:
            f = net_features(net.term_partitions, net.pooled, net.pooled_partition, sid, floor)
            rows.append((sid, cohort, f.community_size, f.belonging_score, f.community_stability,
                         f.solitary_flag, f.weighted_degree))
    table = pd.DataFrame(rows, columns=["student_id", "cohort_year", *NET_COLUMNS])
    if standardize and not table.empty:
        for col in ("community_size", "belonging_score", "community_stability", "weighted_degree"):
            table[col] = standardize_within_cohort(table[col].astype(float), table["cohort_year"])
    table = table.set_index("student_id").sort_index()
    return table.drop(columns="cohort_year")


def net_stats(ds: Dataset, vot: int, seed: int = 0) -> dict:
    """Per-cohort community summary for the ``net-stats`` command."""
    out = {}
    for cohort in ds.cohorts:
        g = build_cooccurrence(ds, cohort, vot)
        p = louvain(g, seed)
        sizes = sorted(p.sizes.values(), reverse=True)
        out[str(cohort)] = {
            "n_students": len(g.nodes),
            "n_edges": len(g.edges()),
            "total_weight": g.total_weight,
            "n_communities": len(sizes),
            "community_sizes": sizes,
            "modularity": p.modularity,
        }
    return out
