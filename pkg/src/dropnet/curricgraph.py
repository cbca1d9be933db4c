"""Curriculum prerequisite DAG and per-student structural features at the VOT."""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .ingest import CourseSpec, Dataset


class CurriculumError(ValueError):
    pass


class CycleError(CurriculumError):
    def __init__(self, cycle: list[str]):
        super().__init__("prerequisite cycle: " + " -> ".join(cycle + cycle[:1]))
        self.cycle = cycle


class UnknownCourseError(CurriculumError, KeyError):
    pass


class UnknownStudentError(KeyError):
    pass


class CurriculumGraph:
    """Immutable prerequisite DAG; an edge ``p -> c`` means p is required for c."""

    def __init__(self, courses: Iterable[CourseSpec]):
        courses = sorted(courses, key=lambda c: c.course_id)
        self.courses: dict[str, CourseSpec] = {}
        for c in courses:
            if c.course_id in self.courses:
                raise CurriculumError(f"duplicate course {c.course_id!r}")
            self.courses[c.course_id] = c
        for c in courses:
            for p in c.prerequisites:
                if p not in self.courses:
                    raise UnknownCourseError(f"course {c.course_id!r} requires unknown course {p!r}")

        self.nodes: tuple[str, ...] = tuple(self.courses)
        self.credits = {cid: int(c.credits) for cid, c in self.courses.items()}
        self.prereqs: dict[str, frozenset[str]] = {cid: c.prerequisites for cid, c in self.courses.items()}
        succ: dict[str, list[str]] = {cid: [] for cid in self.nodes}
        for cid in self.nodes:
            for p in self.prereqs[cid]:
                succ[p].append(cid)
        self.successors = {cid: tuple(sorted(v)) for cid, v in succ.items()}
        self.edges = tuple(sorted((p, c) for c in self.nodes for p in self.prereqs[c]))
        self.in_degree = {cid: len(self.prereqs[cid]) for cid in self.nodes}
        self.out_degree = {cid: len(self.successors[cid]) for cid in self.nodes}
        self.terminals = frozenset(cid for cid in self.nodes if self.out_degree[cid] == 0)
        self.topological_order = self._toposort()

        # longest prerequisite chain ending at each node, in edges
        chain: dict[str, int] = {}
        for cid in self.topological_order:
            chain[cid] = max((chain[p] + 1 for p in self.prereqs[cid]), default=0)
        self.longest_chain_to = chain

        flagged = frozenset(cid for cid, c in self.courses.items() if c.backbone)
        if flagged or not self.nodes:
            self.backbone = flagged
        else:
            total = {cid: self.in_degree[cid] + self.out_degree[cid] for cid in self.nodes}
            cut = float(np.quantile(list(total.values()), 0.75))
            self.backbone = frozenset(cid for cid, v in total.items() if v >= cut)
        self.foundational = frozenset(cid for cid, c in self.courses.items() if c.foundational)

    def _toposort(self) -> tuple[str, ...]:
        indeg = dict(self.in_degree)
        heap = [cid for cid in self.nodes if indeg[cid] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            cid = heapq.heappop(heap)
            order.append(cid)
            for nxt in self.successors[cid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(heap, nxt)
        if len(order) != len(self.nodes):
            raise CycleError(self._find_cycle({c for c in self.nodes if indeg[c] > 0}))
        return tuple(order)

    def _find_cycle(self, remaining: set[str]) -> list[str]:
        # every node left over by Kahn's algorithm has a prerequisite inside the
        # leftover set, so walking prerequisites must revisit a node
        start = min(remaining)
        seen: dict[str, int] = {}
        path = []
        node = start
        while node not in seen:
            seen[node] = len(path)
            path.append(node)
            node = min(p for p in self.prereqs[node] if p in remaining)
        cycle = path[seen[node]:]
        cycle.reverse()  # prerequisite -> dependent direction
        k = cycle.index(min(cycle))
        return cycle[k:] + cycle[:k]

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, cid) -> bool:
        return cid in self.courses

    def shortest_distances_from(self, sources: Iterable[str]) -> dict[str, int]:
        """Multi-source BFS along prerequisite edges; sources sit at distance 0."""
        dist = {s: 0 for s in sources}
        queue = deque(sorted(dist))
        while queue:
            u = queue.popleft()
            for v in self.successors[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist


def build_graph(spec) -> CurriculumGraph:
    """Build and validate the curriculum DAG from course specs or a :class:`Dataset`."""
    courses = spec.courses if isinstance(spec, Dataset) else spec
    return CurriculumGraph(courses)


def _linear_quantile(values, q: float) -> float:
    return float(np.quantile(np.asarray(values, dtype=float), q)) if len(values) else 0.0


def enrolment_counts(g: CurriculumGraph, ds: Dataset, vot: int | None = None) -> dict[str, int]:
    """Distinct students with at least one event per course (optionally term <= vot)."""
    ev = ds.enrollments
    if vot is not None:
        ev = ev[ev["term"] <= vot]
    counts = ev.groupby("course_id")["student_id"].nunique()
    return {cid: int(counts.get(cid, 0)) for cid in g.nodes}


def identify_bottlenecks(g: CurriculumGraph, ds: Dataset, q: float = 0.75,
                         vot: int | None = None) -> frozenset[str]:
    """Courses at or above the q-quantile of both in-degree and enrolment."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if not g.nodes:
        return frozenset()
    enrol = enrolment_counts(g, ds, vot)
    deg_cut = _linear_quantile([g.in_degree[c] for c in g.nodes], q)
    enr_cut = _linear_quantile([enrol[c] for c in g.nodes], q)
    return frozenset(c for c in g.nodes if g.in_degree[c] >= deg_cut and enrol[c] >= enr_cut)


@dataclass(frozen=True)
class StudentSnapshot:
    student_id: str
    passed: frozenset[str] = frozenset()
    attempted: frozenset[str] = frozenset()
    failures: Mapping[str, int] = field(default_factory=dict)
    credits_earned: int = 0


def _snapshot_from_events(student_id: str, events, credits: Mapping[str, int]) -> StudentSnapshot:
    attempted, passed = set(), set()
    failed_terms: dict[str, set[int]] = {}
    for course, term, result in events:
        attempted.add(course)
        if result == "passed":
            passed.add(course)
        elif result == "failed":
            failed_terms.setdefault(course, set()).add(term)
    return StudentSnapshot(
        student_id=student_id,
        passed=frozenset(passed),
        attempted=frozenset(attempted),
        failures={c: len(t) for c, t in sorted(failed_terms.items())},
        credits_earned=sum(credits.get(c, 0) for c in passed),
    )


def snapshot_at_vot(ds: Dataset, student_id: str, vot: int) -> StudentSnapshot:
    """Course record of one student using only events with term <= vot.

    A course counts as passed when any qualifying event passed; its failure
    count is the number of distinct terms with a failed event.
    """
    if student_id not in set(ds.students["student_id"]):
        raise UnknownStudentError(student_id)
    ev = ds.enrollments
    ev = ev[(ev["student_id"] == student_id) & (ev["term"] <= vot)]
    credits = {c.course_id: int(c.credits) for c in ds.courses}
    return _snapshot_from_events(student_id, ev[["course_id", "term", "result"]].itertuples(index=False),
                                 credits)


def snapshots_at_vot(ds: Dataset, vot: int) -> dict[str, StudentSnapshot]:
    """Snapshots for every student of ``ds`` (students without events get empty ones)."""
    credits = {c.course_id: int(c.credits) for c in ds.courses}
    ev = ds.enrollments
    ev = ev[ev["term"] <= vot]
    grouped: dict[str, list] = {}
    for sid, course, term, result in zip(ev["student_id"], ev["course_id"], ev["term"], ev["result"]):
        grouped.setdefault(sid, []).append((course, term, result))
    return {
        sid: _snapshot_from_events(sid, grouped.get(sid, ()), credits)
        for sid in ds.students["student_id"]
    }


@dataclass(frozen=True)
class GraphFeatures:
    blocked_credits: int
    backbone_completion_rate: float
    bottleneck_approval_ratio: float
    distance_to_graduation: int
    prereq_satisfaction_index: float
    # 0/0 guard for the approval ratio; emitted as its own column
    no_bottleneck_attempted: bool = False

    FEATURE_NAMES = (
        "blocked_credits",
        "backbone_completion_rate",
        "bottleneck_approval_ratio",
        "distance_to_graduation",
        "prereq_satisfaction_index",
    )


def transitive_blocked_credits(g: CurriculumGraph, passed: Iterable[str]) -> int:
    """Credits of unpassed courses with any unpassed ancestor (the transitive reading)."""
    passed = frozenset(passed)
    blocked: set[str] = set()
    for c in g.topological_order:
        if any(p not in passed or p in blocked for p in g.prereqs[c]):
            blocked.add(c)
    return sum(g.credits[c] for c in blocked if c not in passed)


def compute_graph_features(g: CurriculumGraph, snapshot: StudentSnapshot,
                           bottlenecks: Iterable[str]) -> GraphFeatures:
    for c in snapshot.attempted | snapshot.passed:
        if c not in g.courses:
            raise UnknownCourseError(f"snapshot references course {c!r} absent from the curriculum")
    passed = snapshot.passed
    unpassed = [c for c in g.nodes if c not in passed]

    blocked = sum(g.credits[c] for c in unpassed if not g.prereqs[c] <= passed)

    backbone_rate = len(passed & g.backbone) / len(g.backbone) if g.backbone else 1.0

    tried = snapshot.attempted & frozenset(bottlenecks)
    if tried:
        approval, none_tried = len(tried & passed) / len(tried), False
    else:
        approval, none_tried = 1.0, True

    dist = g.shortest_distances_from(passed) if passed else {}
    distance = 0
    for t in sorted(g.terminals):
        if t in passed:
            continue
        distance += dist[t] if t in dist else g.longest_chain_to[t] + 1

    weight = sum(g.credits[c] for c in unpassed)
    if weight:
        acc = sum(
            g.credits[c] * len(g.prereqs[c] & passed) / max(1, len(g.prereqs[c]))
            if g.prereqs[c] else float(g.credits[c])
            for c in unpassed
        )
        satisfaction = acc / weight
    else:
        satisfaction = 1.0

    return GraphFeatures(blocked, backbone_rate, approval, distance, satisfaction, none_tried)


def graph_stats(g: CurriculumGraph, bottlenecks: Iterable[str] = ()) -> dict:
    """JSON-ready structural summary used by the ``graph-stats`` command."""
    return {
        "n_nodes": len(g.nodes),
        "n_edges": len(g.edges),
        "topological_order": list(g.topological_order),
        "terminals": sorted(g.terminals),
        "backbone": sorted(g.backbone),
        "foundational": sorted(g.foundational),
        "bottlenecks": sorted(bottlenecks),
        "max_in_degree": max(g.in_degree.values(), default=0),
        "longest_chain": max(g.longest_chain_to.values(), default=0),
    }
