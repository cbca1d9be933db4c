"""Brute-force reference implementations shared by the unit and acceptance tests."""
from fractions import Fraction
from itertools import combinations

import pandas as pd

from dropnet.curricgraph import StudentSnapshot
from dropnet.ingest import CourseSpec


def course(cid, prereqs=(), credits=1, backbone=False):
    return CourseSpec(cid, credits, 1, backbone=backbone, prerequisites=frozenset(prereqs))


# --------------------------------------------------------------------------
# curriculum graphs

def random_dag(rng, n=None, p=None):
    n = int(rng.integers(1, 13)) if n is None else n
    p = rng.uniform(0.05, 0.6) if p is None else p
    names = [f"c{i:02d}" for i in range(n)]
    perm = rng.permutation(n)  # hide the generation order from the names
    courses = []
    bb = rng.random(n) < 0.3
    if not bb.any():
        bb[rng.integers(n)] = True
    for i in range(n):
        pre = [names[perm[j]] for j in range(i) if rng.random() < p]
        courses.append(course(names[perm[i]], pre, int(rng.integers(1, 9)), bool(bb[i])))
    return courses


def random_snapshot(rng, courses):
    ids = [c.course_id for c in courses]
    attempted = {c for c in ids if rng.random() < 0.6}
    passed = {c for c in attempted if rng.random() < 0.7}
    return StudentSnapshot("s", frozenset(passed), frozenset(attempted))


def all_paths(courses):
    """Every directed path (as node lists, length >= 1) by depth-first enumeration."""
    succ = {c.course_id: [] for c in courses}
    for c in courses:
        for p in c.prerequisites:
            succ[p].append(c.course_id)
    out = []

    def walk(path):
        out.append(list(path))
        for nxt in succ[path[-1]]:
            path.append(nxt)
            walk(path)
            path.pop()

    for c in courses:
        walk([c.course_id])
    return out


def graph_oracle(courses, snap, bottlenecks):
    byid = {c.course_id: c for c in courses}
    passed = snap.passed
    unpassed = [c for c in byid if c not in passed]
    paths = all_paths(courses)
    has_succ = {p for c in courses for p in c.prerequisites}
    terminals = [c for c in byid if c not in has_succ]

    blocked = sum(byid[c].credits for c in unpassed if any(p not in passed for p in byid[c].prerequisites))

    backbone = {c for c in byid if byid[c].backbone}
    bb_rate = Fraction(len(backbone & passed), len(backbone))

    tried = snap.attempted & set(bottlenecks)
    approval = Fraction(len(tried & passed), len(tried)) if tried else Fraction(1)

    distance = 0
    for t in terminals:
        if t in passed:
            continue
        from_passed = [len(pa) - 1 for pa in paths if pa[-1] == t and pa[0] in passed]
        if from_passed:
            distance += min(from_passed)
        else:
            distance += max(len(pa) - 1 for pa in paths if pa[-1] == t) + 1

    weight = sum(byid[c].credits for c in unpassed)
    if weight:
        acc = sum(Fraction(byid[c].credits * len(byid[c].prerequisites & passed),
                           max(1, len(byid[c].prerequisites)))
                  if byid[c].prerequisites else Fraction(byid[c].credits) for c in unpassed)
        sat = acc / weight
    else:
        sat = Fraction(1)

    # transitive reading: an unpassed course with any unpassed ancestor
    trans = 0
    for c in unpassed:
        ancestors = {pa[0] for pa in paths if pa[-1] == c and len(pa) > 1}
        if any(a not in passed for a in ancestors):
            trans += byid[c].credits
    return blocked, bb_rate, approval, distance, sat, trans



# --------------------------------------------------------------------------
# co-enrolment networks

def random_events(rng, n_students=None, n_events=None):
    n_students = int(rng.integers(2, 31)) if n_students is None else n_students
    n_events = int(rng.integers(1, 40)) if n_events is None else n_events
    rows = []
    for e in range(n_events):
        key = (f"C{rng.integers(4)}", f"K{rng.integers(2)}", int(rng.integers(1, 4)),
               ["class_section", "exam_sitting"][rng.integers(2)])
        k = int(rng.integers(0, n_students + 1))
        for s in rng.choice(n_students, size=k, replace=False):
            rows.append((f"s{s:02d}", *key))
    df = pd.DataFrame(rows, columns=["student_id", "course_id", "section_id", "term", "kind"])
    return [f"s{i:02d}" for i in range(n_students)], df.drop_duplicates()


def brute_weights(nodes, df):
    events = {tuple(r) for r in df[["course_id", "section_id", "term", "kind"]].itertuples(index=False)}
    sets = {s: {tuple(r) for r in df.loc[df["student_id"] == s,
                                           ["course_id", "section_id", "term", "kind"]].itertuples(index=False)}
            for s in nodes}
    w = {}
    for i, j in combinations(sorted(nodes), 2):
        k = len(sets[i] & sets[j])
        if k:
            w[(i, j)] = k
    return w, events


def q_exact(nodes, edges, labels):
    """Newman modularity from the adjacency-matrix definition, in rationals."""
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    A = [[Fraction(0)] * n for _ in range(n)]
    for i, j, w in edges:
        A[idx[i]][idx[j]] += Fraction(w)
        A[idx[j]][idx[i]] += Fraction(w)
    k = [sum(row) for row in A]
    m2 = sum(k)
    if m2 == 0:
        return Fraction(0)
    return sum(A[a][b] - k[a] * k[b] / m2 for a in range(n) for b in range(n)
               if labels[nodes[a]] == labels[nodes[b]]) / m2


def set_partitions(n):
    """Restricted growth strings of length n."""
    def rec(prefix, top):
        if len(prefix) == n:
            yield list(prefix)
            return
        for c in range(top + 2):
            yield from rec(prefix + [c], max(top, c))
    if n == 0:
        yield []
        return
    yield from rec([0], 0)


def best_modularity(nodes, edges):
    return max(q_exact(nodes, edges, dict(zip(nodes, labels))) for labels in set_partitions(len(nodes)))


def random_graph(rng, n=None):
    n = int(rng.integers(2, 9)) if n is None else n
    nodes = [f"v{i}" for i in range(n)]
    p = rng.uniform(0.2, 0.8)
    edges = [(a, b, int(rng.integers(1, 4))) for a, b in combinations(nodes, 2) if rng.random() < p]
    return nodes, edges



# --------------------------------------------------------------------------
# metrics

def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


# (tp, fp, tn, fn) -> (f1, balanced accuracy), worked by hand
CONFUSION_FIXTURES = [
    ((5, 0, 5, 0), 1.0, 1.0),
    ((0, 5, 0, 5), 0.0, 0.0),
    ((3, 1, 4, 2), Fraction(6, 9), (Fraction(3, 5) + Fraction(4, 5)) / 2),
    ((1, 0, 9, 0), 1.0, 1.0),
    ((0, 0, 9, 1), 0.0, Fraction(1, 2)),
    ((2, 2, 2, 2), Fraction(1, 2), Fraction(1, 2)),
    ((10, 5, 80, 5), Fraction(20, 30), (Fraction(10, 15) + Fraction(80, 85)) / 2),
    ((7, 3, 0, 0), Fraction(14, 17), Fraction(1, 2)),
    ((0, 0, 4, 0), 0.0, Fraction(1, 2)),
    ((4, 0, 0, 0), 1.0, Fraction(1, 2)),
    ((1, 9, 0, 0), Fraction(2, 11), Fraction(1, 2)),
    ((1, 1, 1, 1), Fraction(1, 2), Fraction(1, 2)),
    ((9, 1, 1, 9), Fraction(18, 28), (Fraction(9, 18) + Fraction(1, 2)) / 2),
    ((6, 0, 3, 4), Fraction(12, 16), (Fraction(6, 10) + 1) / 2),
    ((3, 7, 13, 0), Fraction(6, 13), (1 + Fraction(13, 20)) / 2),
    ((50, 25, 100, 25), Fraction(100, 150), (Fraction(50, 75) + Fraction(100, 125)) / 2),
    ((1, 2, 3, 4), Fraction(2, 8), (Fraction(1, 5) + Fraction(3, 5)) / 2),
    ((8, 0, 0, 2), Fraction(16, 18), Fraction(8, 10) / 2),
    ((0, 3, 3, 3), 0.0, Fraction(1, 2) / 2),
    ((12, 4, 20, 4), Fraction(24, 32), (Fraction(12, 16) + Fraction(20, 24)) / 2),
]
