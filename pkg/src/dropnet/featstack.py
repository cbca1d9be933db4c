"""Block-tagged feature matrix, the VOT gate and fold-local preprocessing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .conet import net_feature_table
from .curricgraph import (
    CurriculumGraph,
    GraphFeatures,
    StudentSnapshot,
    build_graph,
    compute_graph_features,
    identify_bottlenecks,
    snapshots_at_vot,
)
from .ingest import Dataset

BLOCKS = ("N1", "N2", "N3", "N4", "GRAPH", "NET")
DTYPES = ("numeric", "categorical", "boolean")
OTHER = "OTHER"
# row metadata in exported CSVs; prefixed so they never clash with feature names
COHORT_FIELD = "_cohort"
OUTCOME_FIELD = "_dropout"

N3_COLUMNS = (
    ("n_attempted", "numeric"),
    ("n_passed", "numeric"),
    ("pass_ratio", "numeric"),
    ("nothing_attempted", "boolean"),
    ("early_gpa", "numeric"),
    ("n_bottleneck_failures", "numeric"),
    ("no_bottleneck_attempted", "boolean"),
    ("foundational_pass_ratio", "numeric"),
    ("no_foundational_attempted", "boolean"),
    ("credits_earned", "numeric"),
)
GRAPH_COLUMNS = GraphFeatures.FEATURE_NAMES
NET_DTYPES = {
    "community_size": "numeric",
    "belonging_score": "numeric",
    "community_stability": "numeric",
    "solitary_flag": "boolean",
    "weighted_degree": "numeric",
}


class VotViolationError(ValueError):
    """Raised by the VOT gate; ``columns`` lists every offending column."""

    def __init__(self, columns: Sequence[str], vot: int):
        self.columns = list(columns)
        self.vot = vot
        super().__init__(
            f"columns available only after VOT={vot}: {', '.join(self.columns)}"
        )


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    block: str
    dtype: str
    availability_term: int

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise ValueError(f"unknown block {self.block!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")


@dataclass
class FeatureMatrix:
    """Rows are students (sorted by id); ``values`` holds one column per spec."""

    columns: tuple[FeatureColumn, ...]
    values: pd.DataFrame
    outcome: np.ndarray
    cohort: np.ndarray
    vot: int | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        if list(self.values.columns) != names:
            raise ValueError("value grid does not match column specs")
        if not (len(self.values) == len(self.outcome) == len(self.cohort)):
            raise ValueError("outcome/cohort not aligned with rows")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def student_ids(self) -> list[str]:
        return list(self.values.index)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def spec(self, name: str) -> FeatureColumn:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def blocks(self) -> list[str]:
        return [c.block for c in self.columns]

    def drop(self, names: Iterable[str]) -> FeatureMatrix:
        names = set(names)
        keep = tuple(c for c in self.columns if c.name not in names)
        return FeatureMatrix(keep, self.values[[c.name for c in keep]], self.outcome, self.cohort,
                             self.vot)

    def take(self, rows) -> FeatureMatrix:
        mask = row_mask(self, rows)
        return FeatureMatrix(self.columns, self.values[mask], self.outcome[mask], self.cohort[mask],
                             self.vot)

    # ---- export -----------------------------------------------------------
    def to_csv(self, path, spec_path=None) -> tuple[Path, Path]:
        path = Path(path)
        spec_path = Path(spec_path) if spec_path else path.with_suffix(".columns.json")
        frame = self.values.copy()
        for c in self.columns:
            if c.dtype == "boolean":
                frame[c.name] = frame[c.name].map(lambda v: "" if _missing(v) else str(int(bool(v))))
            elif c.dtype == "numeric":
                frame[c.name] = frame[c.name].map(lambda v: "" if _missing(v) else repr(float(v)))
        frame.insert(0, OUTCOME_FIELD, self.outcome.astype(int))
        frame.insert(0, COHORT_FIELD, self.cohort.astype(int))
        frame.index.name = "student_id"
        frame.to_csv(path, lineterminator="\n")
        doc = {
            "vot": self.vot,
            "columns": [
                {"name": c.name, "block": c.block, "dtype": c.dtype,
                 "availability_term": c.availability_term}
                for c in self.columns
            ],
        }
        spec_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return path, spec_path

    @classmethod
    def from_csv(cls, path, spec_path=None) -> FeatureMatrix:
        path = Path(path)
        spec_path = Path(spec_path) if spec_path else path.with_suffix(".columns.json")
        doc = json.loads(spec_path.read_text(encoding="utf-8"))
        columns = tuple(FeatureColumn(**c) for c in doc["columns"])
        frame = pd.read_csv(path, dtype=str, keep_default_na=False).set_index("student_id")
        values = pd.DataFrame(index=frame.index)
        for c in columns:
            raw = frame[c.name]
            if c.dtype == "numeric":
                # float() round-trips repr exactly; pandas' fast parser does not
                values[c.name] = raw.map(lambda v: np.nan if v == "" else float(v)).astype(float)
            elif c.dtype == "boolean":
                values[c.name] = raw.map(lambda v: np.nan if v == "" else float(int(v)))
            else:
                values[c.name] = raw.map(lambda v: None if v == "" else v).astype(object)
        return cls(columns, values, frame[OUTCOME_FIELD].astype(int).to_numpy(),
                   frame[COHORT_FIELD].astype(int).to_numpy(), doc.get("vot"))


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and np.isnan(v))


def row_mask(matrix: FeatureMatrix, rows) -> np.ndarray:
    """Boolean mask from a mask, or from an iterable of student ids."""
    if rows is None:
        return np.ones(len(matrix.values), dtype=bool)
    arr = np.asarray(rows)
    if arr.dtype == bool:
        if arr.shape != (len(matrix.values),):
            raise ValueError("mask length does not match matrix rows")
        return arr
    return matrix.values.index.isin(list(rows))


# --------------------------------------------------------------------------
# blocks

def _decimal_year(v) -> float:
    if _missing(v):
        return np.nan
    d = date.fromisoformat(str(v))
    start = date(d.year, 1, 1)
    return d.year + (d - start).days / (date(d.year + 1, 1, 1) - start).days


def build_n3_features(ds: Dataset, vot: int, bottlenecks: Iterable[str],
                      snapshots: Mapping[str, StudentSnapshot] | None = None) -> pd.DataFrame:
    """Early-performance block from events with term <= vot, indexed by student_id.

    An attempt is a (course, term) pair with any event. Ratios over empty
    sets take the neutral value 1.0 and raise the matching indicator.
    """
    bottlenecks = frozenset(bottlenecks)
    if snapshots is None:
        snapshots = snapshots_at_vot(ds, vot)
    foundational = frozenset(c.course_id for c in ds.courses if c.foundational)
    ev = ds.enrollments[ds.enrollments["term"] <= vot]
    attempts = ev.drop_duplicates(["student_id", "course_id", "term"]).groupby("student_id").size()
    exams = ev[(ev["kind"] == "exam_sitting") & ev["grade"].notna()]
    gpa = exams.groupby("student_id")["grade"].mean()

    rows = []
    for sid in sorted(ds.students["student_id"]):
        snap = snapshots[sid]
        n_att = int(attempts.get(sid, 0))
        n_pass = len(snap.passed)
        f_tried = snap.attempted & foundational
        rows.append({
            "student_id": sid,
            "n_attempted": float(n_att),
            "n_passed": float(n_pass),
            "pass_ratio": n_pass / n_att if n_att else 1.0,
            "nothing_attempted": float(n_att == 0),
            "early_gpa": float(gpa[sid]) if sid in gpa.index else np.nan,
            "n_bottleneck_failures": float(sum(n for c, n in snap.failures.items() if c in bottlenecks)),
            "no_bottleneck_attempted": float(not (snap.attempted & bottlenecks)),
            "foundational_pass_ratio": len(f_tried & snap.passed) / len(f_tried) if f_tried else 1.0,
            "no_foundational_attempted": float(not f_tried),
            "credits_earned": float(snap.credits_earned),
        })
    return pd.DataFrame(rows, columns=["student_id", *(n for n, _ in N3_COLUMNS)]).set_index("student_id")


def build_graph_block(ds: Dataset, vot: int, bottlenecks: Iterable[str],
                      graph: CurriculumGraph | None = None,
                      snapshots: Mapping[str, StudentSnapshot] | None = None) -> pd.DataFrame:
    g = graph or build_graph(ds)
    bottlenecks = frozenset(bottlenecks)
    if snapshots is None:
        snapshots = snapshots_at_vot(ds, vot)
    rows = []
    for sid in sorted(ds.students["student_id"]):
        f = compute_graph_features(g, snapshots[sid], bottlenecks)
        rows.append((sid, *(float(getattr(f, n)) for n in GRAPH_COLUMNS)))
    return pd.DataFrame(rows, columns=["student_id", *GRAPH_COLUMNS]).set_index("student_id")


def assemble(ds: Dataset, vot: int, graph_features: pd.DataFrame | None = None,
             net_features: pd.DataFrame | None = None, *, include_graph: bool = False,
             include_net: bool = False, n3: pd.DataFrame | None = None,
             bottlenecks: Iterable[str] | None = None, gate: bool = True,
             shocks: Mapping[str, Iterable[int]] | None = None,
             exclude: Iterable[str] = ()) -> FeatureMatrix:
    """Stack N1, N2, N3, N4 (always) with optional GRAPH and NET blocks.

    With ``gate`` on, any input attribute whose availability term exceeds
    ``vot`` raises :class:`VotViolationError` naming all of them; with it off
    they are carried through so the audit can see them. ``shocks`` maps an
    indicator name to the cohorts it flags (added to N4).
    """
    exclude = set(exclude)
    late = [n for n, s in ds.attributes.items() if s.availability_term > vot and n not in exclude]
    if gate and late:
        raise VotViolationError(late, vot)

    students = ds.students.set_index("student_id").sort_index()
    index = students.index
    specs: list[FeatureColumn] = []
    data: dict[str, pd.Series] = {}

    def add(name, block, dtype, term, series):
        if name in exclude:
            return
        specs.append(FeatureColumn(name, block, dtype, int(term)))
        data[name] = series.reindex(index)

    for level in ("N1", "N2"):
        for name, s in ds.attributes.items():
            if s.level != level:
                continue
            col = students[name]
            if s.type == "date":
                add(name, level, "numeric", s.availability_term, col.map(_decimal_year).astype(float))
            elif s.type == "numeric":
                add(name, level, "numeric", s.availability_term, col.astype(float))
            else:
                add(name, level, "categorical", s.availability_term, col.astype(object))

    if n3 is None:
        if bottlenecks is None:
            raise ValueError("either n3 or bottlenecks must be given")
        n3 = build_n3_features(ds, vot, bottlenecks)
    for name, dtype in N3_COLUMNS:
        add(name, "N3", dtype, vot, n3[name])

    add("cohort_year", "N4", "categorical", 0, students["cohort_year"].map(str).astype(object))
    for name, s in ds.attributes.items():
        if s.level != "N4":
            continue
        col = students[name]
        if s.type == "date":
            add(name, "N4", "numeric", s.availability_term, col.map(_decimal_year).astype(float))
        elif s.type == "numeric":
            add(name, "N4", "numeric", s.availability_term, col.astype(float))
        else:
            add(name, "N4", "categorical", s.availability_term, col.astype(object))
    for name, cohorts in sorted((shocks or {}).items()):
        flagged = set(int(c) for c in cohorts)
        add(name, "N4", "boolean", 0,
            students["cohort_year"].map(lambda y: float(int(y) in flagged)))

    if include_graph:
        if graph_features is None:
            raise ValueError("include_graph requires graph_features")
        for name in GRAPH_COLUMNS:
            add(name, "GRAPH", "numeric", vot, graph_features[name].astype(float))
    if include_net:
        if net_features is None:
            raise ValueError("include_net requires net_features")
        for name, dtype in NET_DTYPES.items():
            add(name, "NET", dtype, vot, net_features[name].astype(float))

    values = pd.DataFrame(data, index=index)[[c.name for c in specs]]
    outcome = ds.outcomes.set_index("student_id")["dropout"].reindex(index).to_numpy().astype(int)
    return FeatureMatrix(tuple(specs), values, outcome, students["cohort_year"].to_numpy().astype(int),
                         vot)


def build_full_matrix(ds: Dataset, vot: int, *, gate: bool = True, seed: int = 0,
                      exclude: Iterable[str] = ()) -> FeatureMatrix:
    """Every block (the M3 layout) with bottlenecks taken from the whole dataset.

    With ``gate=False`` late columns are kept, which is what the audit needs.
    """
    g = build_graph(ds)
    bottlenecks = identify_bottlenecks(g, ds, vot=vot)
    snaps = snapshots_at_vot(ds, vot)
    n3 = build_n3_features(ds, vot, bottlenecks, snaps)
    gb = build_graph_block(ds, vot, bottlenecks, g, snaps)
    net = net_feature_table(ds, vot, seed)
    return assemble(ds, vot, gb, net, include_graph=True, include_net=True, n3=n3, gate=gate,
                    exclude=exclude)


# --------------------------------------------------------------------------
# preprocessing

@dataclass(frozen=True)
class NumericRule:
    lo: float | None
    hi: float | None
    fill: float
    indicator: bool


@dataclass(frozen=True)
class CategoricalRule:
    fill: str
    vocabulary: tuple[str, ...]


@dataclass(frozen=True)
class PreprocessPlan:
    """Statistics learned on training rows; applying it never looks at other rows."""

    numeric: tuple[tuple[str, NumericRule], ...]
    categorical: tuple[tuple[str, CategoricalRule], ...]
    boolean: tuple[tuple[str, float], ...]
    order: tuple[str, ...]
    design_columns: tuple[str, ...] = field(default=())
    design_sources: tuple[str, ...] = field(default=())


def _numeric_rule(x: np.ndarray) -> NumericRule:
    present = x[~np.isnan(x)]
    if present.size == 0:
        return NumericRule(None, None, 0.0, True)
    lo, hi = np.percentile(present, [1, 99])
    fill = float(np.median(np.clip(present, lo, hi)))
    return NumericRule(float(lo), float(hi), fill, bool(present.size < x.size))


def _mode(values: Iterable[str]) -> str | None:
    counts: dict[str, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    if not counts:
        return None
    best = max(counts.values())
    return min(k for k, n in counts.items() if n == best)


def fit_preprocess(matrix: FeatureMatrix, train_rows) -> PreprocessPlan:
    """Learn winsor bounds, imputation values and one-hot vocabularies.

    Numeric columns: p1/p99 bounds, median fill, and a ``__was_missing``
    indicator when the training rows contain gaps (all-missing columns get fill
    0). Categoricals: mode fill and sorted vocabulary plus an OTHER bucket.
    """
    mask = row_mask(matrix, train_rows)
    if not mask.any():
        raise ValueError("empty training set")
    train = matrix.values[mask]
    numeric, categorical, boolean = [], [], []
    design, sources = [], []
    for c in matrix.columns:
        col = train[c.name]
        if c.dtype == "numeric":
            rule = _numeric_rule(col.to_numpy(dtype=float))
            numeric.append((c.name, rule))
            design.append(c.name)
            sources.append(c.name)
            if rule.indicator:
                design.append(f"{c.name}__was_missing")
                sources.append(c.name)
        elif c.dtype == "boolean":
            x = col.to_numpy(dtype=float)
            present = x[~np.isnan(x)]
            # mode of a 0/1 column; ties go to 0
            fill = float(np.mean(present) > 0.5) if present.size else 0.0
            boolean.append((c.name, fill))
            design.append(c.name)
            sources.append(c.name)
        else:
            present = [str(v) for v in col if not _missing(v)]
            fill = _mode(present)
            vocab = tuple(sorted(set(present)))
            categorical.append((c.name, CategoricalRule(fill if fill is not None else OTHER, vocab)))
            for v in vocab:
                design.append(f"{c.name}={v}")
                sources.append(c.name)
            design.append(f"{c.name}={OTHER}")
            sources.append(c.name)
    return PreprocessPlan(tuple(numeric), tuple(categorical), tuple(boolean),
                          tuple(matrix.names), tuple(design), tuple(sources))


def transform_numeric(x: np.ndarray, rule: NumericRule) -> np.ndarray:
    """Clip to the training bounds, then fill gaps. Idempotent."""
    x = np.asarray(x, dtype=float)
    out = np.where(np.isnan(x), rule.fill, x)
    if rule.lo is not None:
        out = np.clip(out, rule.lo, rule.hi)
    return out


def apply_preprocess(plan: PreprocessPlan, matrix: FeatureMatrix, rows=None) -> np.ndarray:
    """Fully numeric design matrix (no missing values) for the selected rows."""
    if tuple(matrix.names) != plan.order:
        raise ValueError("matrix columns do not match the plan")
    mask = row_mask(matrix, rows)
    frame = matrix.values[mask]
    num = dict(plan.numeric)
    cat = dict(plan.categorical)
    boo = dict(plan.boolean)
    parts = []
    for name in plan.order:
        col = frame[name]
        if name in num:
            rule = num[name]
            raw = col.to_numpy(dtype=float)
            parts.append(transform_numeric(raw, rule))
            if rule.indicator:
                parts.append(np.isnan(raw).astype(float))
        elif name in boo:
            raw = col.to_numpy(dtype=float)
            parts.append(np.where(np.isnan(raw), boo[name], (raw != 0).astype(float)))
        else:
            rule = cat[name]
            filled = [rule.fill if _missing(v) else str(v) for v in col]
            known = set(rule.vocabulary)
            routed = np.array([v if v in known else OTHER for v in filled], dtype=object)
            for v in rule.vocabulary:
                parts.append((routed == v).astype(float))
            parts.append((routed == OTHER).astype(float))
    if not parts:
        return np.zeros((int(mask.sum()), 0))
    return np.column_stack(parts)
