"""Data model, on-disk formats and the synthetic cohort generator.

A dataset lives in a directory holding four files plus a sidecar::

    curriculum.json   {"courses": [{"id", "credits", "recommended_term",
                                     "backbone", "prereqs", "foundational"?}]}
    students.csv      student_id,cohort_year,<attribute columns...>
    attributes.json   {name: {"level", "type", "availability_term"}}
    enrollments.csv   student_id,course_id,section_id,term,kind,result,grade
    outcomes.csv      student_id,dropout,status_at_horizon

In memory the tables are kept as pandas frames sorted by key, so two datasets
with the same content always compare (and serialise) identically.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

LEVELS = ("N1", "N2", "N4")
ATTR_TYPES = ("numeric", "categorical", "date")
KINDS = ("class_section", "exam_sitting")
RESULTS = ("passed", "failed", "absent")
STATUSES = ("graduated", "dropped_out", "enrolled")
ENROLLMENT_COLUMNS = ["student_id", "course_id", "section_id", "term", "kind", "result", "grade"]
OUTCOME_COLUMNS = ["student_id", "dropout", "status_at_horizon"]
EVENT_KEY = ["student_id", "course_id", "section_id", "term", "kind"]

LEAK_ATTRIBUTES = ("still_enrolled_after_vot", "graduated_flag")


class DatasetError(ValueError):
    """Base class for problems found while loading or validating a dataset."""


class SchemaError(DatasetError):
    def __init__(self, message: str, *, file: str | None = None, row: int | None = None,
                 field: str | None = None):
        where = ", ".join(
            part for part in (
                file and f"file {file}",
                row is not None and f"row {row}",
                field and f"field {field!r}",
            ) if part
        )
        super().__init__(f"{message} ({where})" if where else message)
        self.file, self.row, self.field = file, row, field


class DanglingReferenceError(DatasetError):
    def __init__(self, ref: str, kind: str, file: str):
        super().__init__(f"unknown {kind} {ref!r} referenced in {file}")
        self.ref, self.kind, self.file = ref, kind, file


class DuplicateKeyError(DatasetError):
    def __init__(self, key, file: str):
        super().__init__(f"duplicate key {key!r} in {file}")
        self.key, self.file = key, file


# --------------------------------------------------------------------------
# record types

@dataclass(frozen=True)
class CourseSpec:
    course_id: str
    credits: int
    recommended_term: int
    backbone: bool = False
    prerequisites: frozenset[str] = frozenset()
    foundational: bool = False

    def __post_init__(self):
        if not self.course_id:
            raise SchemaError("empty course id", field="id")
        if int(self.credits) < 1:
            raise SchemaError(f"course {self.course_id} has credits < 1", field="credits")
        if int(self.recommended_term) < 1:
            raise SchemaError(f"course {self.course_id} has recommended_term < 1",
                              field="recommended_term")
        if self.course_id in self.prerequisites:
            raise SchemaError(f"course {self.course_id} lists itself as prerequisite",
                              field="prereqs")
        object.__setattr__(self, "prerequisites", frozenset(self.prerequisites))


@dataclass(frozen=True)
class AttributeSpec:
    level: str
    type: str
    availability_term: int = 0

    def __post_init__(self):
        if self.level not in LEVELS:
            raise SchemaError(f"level must be one of {LEVELS}, got {self.level!r}", field="level")
        if self.type not in ATTR_TYPES:
            raise SchemaError(f"type must be one of {ATTR_TYPES}, got {self.type!r}", field="type")
        if int(self.availability_term) < 0:
            raise SchemaError("availability_term must be >= 0", field="availability_term")


@dataclass(frozen=True)
class StudentRecord:
    student_id: str
    cohort_year: int
    attributes: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class EnrollmentEvent:
    student_id: str
    course_id: str
    section_id: str
    term: int
    kind: str
    result: str
    grade: float | None = None


@dataclass(frozen=True)
class OutcomeRecord:
    student_id: str
    dropout: bool
    status_at_horizon: str

    def __post_init__(self):
        if self.status_at_horizon not in STATUSES:
            raise SchemaError(f"bad status {self.status_at_horizon!r}", field="status_at_horizon")
        if bool(self.dropout) != (self.status_at_horizon == "dropped_out"):
            raise SchemaError(f"student {self.student_id}: dropout flag disagrees with status",
                              field="dropout")


# --------------------------------------------------------------------------
# dataset container

@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated, cross-referenced cohort data.

    ``students`` has columns student_id, cohort_year and one column per entry of
    ``attributes``; ``enrollments`` and ``outcomes`` follow the CSV layouts.
    """

    courses: tuple[CourseSpec, ...]
    attributes: dict[str, AttributeSpec]
    students: pd.DataFrame
    enrollments: pd.DataFrame
    outcomes: pd.DataFrame
    pass_threshold: float = 4.0

    @property
    def course_map(self) -> dict[str, CourseSpec]:
        return {c.course_id: c for c in self.courses}

    @property
    def student_ids(self) -> list[str]:
        return self.students["student_id"].tolist()

    @property
    def cohorts(self) -> list[int]:
        return sorted(int(c) for c in self.students["cohort_year"].unique())

    def cohort_sizes(self) -> dict[int, int]:
        counts = self.students.groupby("cohort_year").size()
        return {int(k): int(v) for k, v in counts.items()}

    def subset(self, student_ids: Iterable[str]) -> Dataset:
        keep = set(student_ids)
        return Dataset(
            courses=self.courses,
            attributes=dict(self.attributes),
            students=self.students[self.students["student_id"].isin(keep)].reset_index(drop=True),
            enrollments=self.enrollments[self.enrollments["student_id"].isin(keep)].reset_index(drop=True),
            outcomes=self.outcomes[self.outcomes["student_id"].isin(keep)].reset_index(drop=True),
            pass_threshold=self.pass_threshold,
        )

    def drop_attributes(self, names: Iterable[str]) -> Dataset:
        names = [n for n in names if n in self.attributes]
        return Dataset(
            courses=self.courses,
            attributes={k: v for k, v in self.attributes.items() if k not in names},
            students=self.students.drop(columns=names),
            enrollments=self.enrollments,
            outcomes=self.outcomes,
            pass_threshold=self.pass_threshold,
        )

    def equals(self, other: Dataset) -> bool:
        return (
            self.courses == other.courses
            and self.attributes == other.attributes
            and self.pass_threshold == other.pass_threshold
            and self.students.equals(other.students)
            and self.enrollments.equals(other.enrollments)
            and self.outcomes.equals(other.outcomes)
        )

    @classmethod
    def from_records(
        cls,
        courses: Sequence[CourseSpec],
        students: Sequence[StudentRecord],
        events: Sequence[EnrollmentEvent],
        outcomes: Sequence[OutcomeRecord],
        attributes: Mapping[str, AttributeSpec] | None = None,
        pass_threshold: float = 4.0,
    ) -> Dataset:
        attributes = dict(attributes or {})
        student_rows = []
        for s in students:
            row = {"student_id": s.student_id, "cohort_year": int(s.cohort_year)}
            for name in attributes:
                row[name] = s.attributes.get(name)
            student_rows.append(row)
        student_df = pd.DataFrame(student_rows, columns=["student_id", "cohort_year", *attributes])
        event_df = pd.DataFrame(
            [(e.student_id, e.course_id, e.section_id, int(e.term), e.kind, e.result,
              np.nan if e.grade is None else float(e.grade)) for e in events],
            columns=ENROLLMENT_COLUMNS,
        )
        outcome_df = pd.DataFrame(
            [(o.student_id, int(bool(o.dropout)), o.status_at_horizon) for o in outcomes],
            columns=OUTCOME_COLUMNS,
        )
        return build_dataset(courses, attributes, student_df, event_df, outcome_df, pass_threshold)


def _normalise_frames(attributes, students, enrollments, outcomes):
    students = students.copy()
    students["student_id"] = students["student_id"].astype(str)
    students["cohort_year"] = students["cohort_year"].astype(np.int64)
    for name, spec in attributes.items():
        if spec.type == "numeric":
            students[name] = pd.to_numeric(students[name], errors="raise").astype(float)
        else:
            students[name] = students[name].map(lambda v: None if _is_missing(v) else str(v)).astype(object)
    students = students.sort_values("student_id", kind="mergesort").reset_index(drop=True)

    enrollments = enrollments[ENROLLMENT_COLUMNS].copy()
    for col in ("student_id", "course_id", "section_id", "kind", "result"):
        enrollments[col] = enrollments[col].astype(str)
    enrollments["term"] = enrollments["term"].astype(np.int64)
    enrollments["grade"] = enrollments["grade"].astype(float)
    enrollments = enrollments.sort_values(EVENT_KEY, kind="mergesort").reset_index(drop=True)

    outcomes = outcomes[OUTCOME_COLUMNS].copy()
    outcomes["student_id"] = outcomes["student_id"].astype(str)
    outcomes["dropout"] = outcomes["dropout"].astype(np.int64)
    outcomes["status_at_horizon"] = outcomes["status_at_horizon"].astype(str)
    outcomes = outcomes.sort_values("student_id", kind="mergesort").reset_index(drop=True)
    return students, enrollments, outcomes


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v)) or v == ""


def build_dataset(courses, attributes, students, enrollments, outcomes, pass_threshold=4.0) -> Dataset:
    """Validate in-memory tables and wrap them in a :class:`Dataset`."""
    courses = tuple(sorted(courses, key=lambda c: c.course_id))
    ids = [c.course_id for c in courses]
    seen: set[str] = set()
    for cid in ids:
        if cid in seen:
            raise DuplicateKeyError(cid, "curriculum")
        seen.add(cid)
    for c in courses:
        for p in sorted(c.prerequisites):
            if p not in seen:
                raise DanglingReferenceError(p, "course", "curriculum")

    students, enrollments, outcomes = _normalise_frames(attributes, students, enrollments, outcomes)

    dup = students["student_id"].duplicated()
    if dup.any():
        raise DuplicateKeyError(students.loc[dup, "student_id"].iloc[0], "students")
    known_students = set(students["student_id"])

    bad = ~enrollments["student_id"].isin(known_students)
    if bad.any():
        raise DanglingReferenceError(enrollments.loc[bad, "student_id"].iloc[0], "student", "enrollments")
    bad = ~enrollments["course_id"].isin(seen)
    if bad.any():
        raise DanglingReferenceError(enrollments.loc[bad, "course_id"].iloc[0], "course", "enrollments")
    dup = enrollments.duplicated(EVENT_KEY)
    if dup.any():
        raise DuplicateKeyError(tuple(enrollments.loc[dup, EVENT_KEY].iloc[0]), "enrollments")
    if (enrollments["term"] < 1).any():
        raise SchemaError("term must be >= 1", file="enrollments", field="term")
    if not enrollments["kind"].isin(KINDS).all():
        raise SchemaError("invalid kind", file="enrollments", field="kind")
    if not enrollments["result"].isin(RESULTS).all():
        raise SchemaError("invalid result", file="enrollments", field="result")
    grades = enrollments["grade"].dropna()
    if ((grades < 0) | (grades > 10)).any():
        raise SchemaError("grade outside 0-10", file="enrollments", field="grade")
    ungraded_pass = (
        (enrollments["kind"] == "exam_sitting")
        & (enrollments["result"] == "passed")
        & enrollments["grade"].isna()
    )
    if ungraded_pass.any():
        raise SchemaError("passed exam sitting without grade", file="enrollments", field="grade")

    dup = outcomes["student_id"].duplicated()
    if dup.any():
        raise DuplicateKeyError(outcomes.loc[dup, "student_id"].iloc[0], "outcomes")
    bad = ~outcomes["student_id"].isin(known_students)
    if bad.any():
        raise DanglingReferenceError(outcomes.loc[bad, "student_id"].iloc[0], "student", "outcomes")
    missing = known_students - set(outcomes["student_id"])
    if missing:
        raise SchemaError(f"student {min(missing)!r} has no outcome", file="outcomes")
    if not outcomes["status_at_horizon"].isin(STATUSES).all():
        raise SchemaError("invalid status_at_horizon", file="outcomes", field="status_at_horizon")
    if not outcomes["dropout"].isin([0, 1]).all():
        raise SchemaError("dropout must be 0 or 1", file="outcomes", field="dropout")
    if ((outcomes["dropout"] == 1) != (outcomes["status_at_horizon"] == "dropped_out")).any():
        raise SchemaError("dropout flag disagrees with status_at_horizon", file="outcomes",
                          field="dropout")

    return Dataset(courses, dict(attributes), students, enrollments, outcomes, float(pass_threshold))


# --------------------------------------------------------------------------
# reading and writing

def _resolve_paths(path=None, *, curriculum=None, students=None, enrollments=None, outcomes=None,
                   attributes=None) -> dict[str, Path]:
    base = Path(path) if path is not None else None

    def pick(explicit, name):
        if explicit is not None:
            return Path(explicit)
        if base is None:
            raise TypeError(f"no path given for {name}")
        return base / name

    students_path = pick(students, "students.csv")
    return {
        "curriculum": pick(curriculum, "curriculum.json"),
        "students": students_path,
        "attributes": Path(attributes) if attributes is not None
        else students_path.with_name("attributes.json"),
        "enrollments": pick(enrollments, "enrollments.csv"),
        "outcomes": pick(outcomes, "outcomes.csv"),
    }


def _read_csv(path: Path, required: Sequence[str]) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("missing header row", file=path.name)
        header = list(reader.fieldnames)
        for col in required:
            if col not in header:
                raise SchemaError("missing column", file=path.name, field=col)
        rows = list(reader)
    return header, rows


def _parse_int(value: str, file: str, row: int, name: str, minimum: int | None = None) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise SchemaError(f"expected integer, got {value!r}", file=file, row=row, field=name) from None
    if minimum is not None and out < minimum:
        raise SchemaError(f"value {out} below minimum {minimum}", file=file, row=row, field=name)
    return out


def _parse_course(raw, index: int) -> CourseSpec:
    file = "curriculum.json"
    if not isinstance(raw, dict):
        raise SchemaError("course entry must be an object", file=file, row=index)
    for key in ("id", "credits", "recommended_term", "backbone", "prereqs"):
        if key not in raw:
            raise SchemaError("missing field", file=file, row=index, field=key)
    if not isinstance(raw["id"], str) or not raw["id"]:
        raise SchemaError("id must be a non-empty string", file=file, row=index, field="id")
    for key in ("credits", "recommended_term"):
        if not isinstance(raw[key], int) or isinstance(raw[key], bool) or raw[key] < 1:
            raise SchemaError("must be a positive integer", file=file, row=index, field=key)
    if not isinstance(raw["backbone"], bool):
        raise SchemaError("must be boolean", file=file, row=index, field="backbone")
    if not isinstance(raw.get("foundational", False), bool):
        raise SchemaError("must be boolean", file=file, row=index, field="foundational")
    prereqs = raw["prereqs"]
    if not isinstance(prereqs, list) or not all(isinstance(p, str) for p in prereqs):
        raise SchemaError("prereqs must be a list of ids", file=file, row=index, field="prereqs")
    if raw["id"] in prereqs:
        raise SchemaError(f"course {raw['id']} lists itself as prerequisite", file=file, row=index,
                          field="prereqs")
    return CourseSpec(raw["id"], raw["credits"], raw["recommended_term"], raw["backbone"],
                      frozenset(prereqs), raw.get("foundational", False))


def load_curriculum(path) -> tuple[list[CourseSpec], float]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", file=path.name) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("courses"), list):
        raise SchemaError("expected an object with a 'courses' list", file=path.name, field="courses")
    courses = [_parse_course(raw, i) for i, raw in enumerate(doc["courses"])]
    return courses, float(doc.get("pass_threshold", 4.0))


def load_dataset(path=None, *, curriculum=None, students=None, enrollments=None, outcomes=None,
                 attributes=None) -> Dataset:
    """Load and validate a dataset from a directory or from explicit file paths.

    Raises :class:`SchemaError`, :class:`DanglingReferenceError` or
    :class:`DuplicateKeyError` (all :class:`DatasetError`) on invalid input.
    """
    paths = _resolve_paths(path, curriculum=curriculum, students=students, enrollments=enrollments,
                           outcomes=outcomes, attributes=attributes)
    courses, pass_threshold = load_curriculum(paths["curriculum"])

    try:
        raw_attrs = json.loads(paths["attributes"].read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", file=paths["attributes"].name) from None
    attrs: dict[str, AttributeSpec] = {}
    for name, spec in raw_attrs.items():
        try:
            attrs[name] = AttributeSpec(spec["level"], spec["type"], int(spec["availability_term"]))
        except KeyError as exc:
            raise SchemaError("missing attribute metadata", file="attributes.json",
                              field=f"{name}.{exc.args[0]}") from None
        except SchemaError as exc:
            raise SchemaError(f"attribute {name!r}: {exc}", file="attributes.json") from None

    sfile = paths["students"].name
    header, rows = _read_csv(paths["students"], ["student_id", "cohort_year"])
    extra = [h for h in header if h not in ("student_id", "cohort_year")]
    for h in extra:
        if h not in attrs:
            raise SchemaError("column has no entry in attributes.json", file=sfile, field=h)
    for name in attrs:
        if name not in extra:
            raise SchemaError("attribute declared but absent from students file", file=sfile,
                              field=name)
    # keep the sidecar's declared order
    attrs = {name: attrs[name] for name in extra}
    student_rows = []
    for i, row in enumerate(rows, start=2):
        if not row["student_id"]:
            raise SchemaError("empty student_id", file=sfile, row=i, field="student_id")
        rec = {"student_id": row["student_id"],
               "cohort_year": _parse_int(row["cohort_year"], sfile, i, "cohort_year")}
        for name, spec in attrs.items():
            value = row[name]
            if value == "":
                rec[name] = np.nan if spec.type == "numeric" else None
            elif spec.type == "numeric":
                try:
                    rec[name] = float(value)
                except ValueError:
                    raise SchemaError(f"expected number, got {value!r}", file=sfile, row=i,
                                      field=name) from None
            elif spec.type == "date":
                try:
                    date.fromisoformat(value)
                except ValueError:
                    raise SchemaError(f"expected ISO date, got {value!r}", file=sfile, row=i,
                                      field=name) from None
                rec[name] = value
            else:
                rec[name] = value
        student_rows.append(rec)
    student_df = pd.DataFrame(student_rows, columns=["student_id", "cohort_year", *attrs])

    efile = paths["enrollments"].name
    _, rows = _read_csv(paths["enrollments"], ENROLLMENT_COLUMNS)
    event_rows = []
    for i, row in enumerate(rows, start=2):
        for col in ("student_id", "course_id", "section_id"):
            if not row[col]:
                raise SchemaError("empty value", file=efile, row=i, field=col)
        if row["kind"] not in KINDS:
            raise SchemaError(f"invalid kind {row['kind']!r}", file=efile, row=i, field="kind")
        if row["result"] not in RESULTS:
            raise SchemaError(f"invalid result {row['result']!r}", file=efile, row=i, field="result")
        grade = np.nan
        if row["grade"] != "":
            try:
                grade = float(row["grade"])
            except ValueError:
                raise SchemaError(f"expected number, got {row['grade']!r}", file=efile, row=i,
                                  field="grade") from None
            if not 0 <= grade <= 10:
                raise SchemaError("grade outside 0-10", file=efile, row=i, field="grade")
        elif row["kind"] == "exam_sitting" and row["result"] == "passed":
            raise SchemaError("passed exam sitting without grade", file=efile, row=i, field="grade")
        event_rows.append((row["student_id"], row["course_id"], row["section_id"],
                           _parse_int(row["term"], efile, i, "term", minimum=1),
                           row["kind"], row["result"], grade))
    event_df = pd.DataFrame(event_rows, columns=ENROLLMENT_COLUMNS)

    ofile = paths["outcomes"].name
    _, rows = _read_csv(paths["outcomes"], OUTCOME_COLUMNS)
    outcome_rows = []
    for i, row in enumerate(rows, start=2):
        dropout = _parse_int(row["dropout"], ofile, i, "dropout")
        if dropout not in (0, 1):
            raise SchemaError("dropout must be 0 or 1", file=ofile, row=i, field="dropout")
        if row["status_at_horizon"] not in STATUSES:
            raise SchemaError(f"invalid status {row['status_at_horizon']!r}", file=ofile, row=i,
                              field="status_at_horizon")
        if (dropout == 1) != (row["status_at_horizon"] == "dropped_out"):
            raise SchemaError("dropout flag disagrees with status_at_horizon", file=ofile, row=i,
                              field="dropout")
        outcome_rows.append((row["student_id"], dropout, row["status_at_horizon"]))
    outcome_df = pd.DataFrame(outcome_rows, columns=OUTCOME_COLUMNS)

    return build_dataset(courses, attrs, student_df, event_df, outcome_df, pass_threshold)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_dataset(ds: Dataset, directory) -> Path:
    """Write ``ds`` in the on-disk layout. Output bytes depend only on content."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "courses": [
            {
                "id": c.course_id,
                "credits": int(c.credits),
                "recommended_term": int(c.recommended_term),
                "backbone": bool(c.backbone),
                "prereqs": sorted(c.prerequisites),
                "foundational": bool(c.foundational),
            }
            for c in ds.courses
        ],
        "pass_threshold": ds.pass_threshold,
    }
    (out / "curriculum.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    attrs = {
        name: {"level": s.level, "type": s.type, "availability_term": int(s.availability_term)}
        for name, s in ds.attributes.items()
    }
    (out / "attributes.json").write_text(json.dumps(attrs, indent=2) + "\n", encoding="utf-8")
    scols = ["student_id", "cohort_year", *ds.attributes]
    _write_csv(out / "students.csv", scols, ds.students[scols].itertuples(index=False))
    _write_csv(out / "enrollments.csv", ENROLLMENT_COLUMNS,
               ds.enrollments[ENROLLMENT_COLUMNS].itertuples(index=False))
    _write_csv(out / "outcomes.csv", OUTCOME_COLUMNS, ds.outcomes[OUTCOME_COLUMNS].itertuples(index=False))
    return out


# --------------------------------------------------------------------------
# summaries

@dataclass
class DatasetSummary:
    n_students: int
    n_dropouts: int
    dropout_rate: float
    students_per_cohort: dict[int, int]
    dropouts_per_cohort: dict[int, int]
    dropout_rate_per_cohort: dict[int, float]
    events_per_term: dict[int, int]


def dataset_summary(ds: Dataset) -> DatasetSummary:
    merged = ds.students[["student_id", "cohort_year"]].merge(ds.outcomes, on="student_id")
    per_cohort = merged.groupby("cohort_year")["dropout"].agg(["size", "sum"])
    sizes = {int(k): int(v) for k, v in per_cohort["size"].items()}
    drops = {int(k): int(v) for k, v in per_cohort["sum"].items()}
    events = ds.enrollments.groupby("term").size()
    n = int(len(merged))
    n_drop = int(merged["dropout"].sum()) if n else 0
    return DatasetSummary(
        n_students=n,
        n_dropouts=n_drop,
        dropout_rate=n_drop / n if n else 0.0,
        students_per_cohort=sizes,
        dropouts_per_cohort=drops,
        dropout_rate_per_cohort={k: drops[k] / sizes[k] for k in sizes},
        events_per_term={int(k): int(v) for k, v in events.items()},
    )


# --------------------------------------------------------------------------
# synthetic generator

@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic cohort generator.

    ``total_students`` (when set) rescales the drawn cohort sizes so that they
    sum exactly to it. ``horizon`` is the number of semesters followed up.
    """

    n_cohorts: int = 15
    first_cohort_year: int = 2005
    students_per_cohort_mean: float = 90.0
    students_per_cohort_spread: float = 18.0
    total_students: int | None = 1343
    seed: int = 42
    n_terms: int = 10
    courses_per_term: int = 4
    horizon: int = 14
    section_size: int = 30
    max_load: int = 5
    # pass model: logit(p) = pass_intercept + ability_coef * ability - difficulty
    pass_intercept: float = 1.5
    ability_coef: float = 1.3
    bottleneck_difficulty: float = 0.8
    difficulty_spread: float = 0.35
    absent_intercept: float = -2.6
    # dropout hazard per semester
    hazard_intercept: float = -3.6
    hazard_failures: float = 0.5
    hazard_blocked: float = 3.0
    hazard_noise: float = 1.0
    hazard_shock: float = 0.4
    hazard_term_decay: float = 0.5
    # no dropout before the end of this term: everyone is still enrolled at the VOT
    hazard_start_term: int = 3
    shock_cohorts: tuple[int, ...] = (2009, 2016)
    plant_leak_vars: bool = False
    leak_purity: float = 0.95

    def validate(self) -> None:
        if self.n_cohorts < 1:
            raise ValueError("n_cohorts must be >= 1")
        if self.students_per_cohort_mean <= 0 or self.students_per_cohort_spread < 0:
            raise ValueError("students_per_cohort mean must be > 0 and spread >= 0")
        if self.total_students is not None and self.total_students < self.n_cohorts:
            raise ValueError("total_students must be >= n_cohorts")
        if not 0.0 <= self.leak_purity <= 1.0:
            raise ValueError("leak_purity must lie in [0, 1]")
        if self.n_terms < 1 or self.courses_per_term < 1 or self.horizon < 1:
            raise ValueError("n_terms, courses_per_term and horizon must be >= 1")
        if self.hazard_start_term < 1:
            raise ValueError("hazard_start_term must be >= 1")
        if self.section_size < 1 or self.max_load < 1:
            raise ValueError("section_size and max_load must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def synthetic_curriculum(cfg: SyntheticConfig, rng: np.random.Generator) -> list[CourseSpec]:
    """Term-structured prerequisite DAG.

    Slot 0 of each term is the mathematics line and slot 1 the physics line;
    both form the backbone for the first four terms and are foundational for
    the first three.
    """
    width = cfg.courses_per_term
    grid = [[f"C{t:02d}{s}" for s in "ABCDEFGH"[:width]] for t in range(1, cfg.n_terms + 1)]
    courses = []
    for t in range(1, cfg.n_terms + 1):
        for s in range(width):
            prereqs: set[str] = set()
            if t >= 2:
                prev = grid[t - 2]
                if s == 0:
                    prereqs.add(prev[0])
                    if rng.random() < 0.5 and width > 2:
                        prereqs.add(prev[int(rng.integers(2, width))])
                elif s == 1:
                    prereqs.update({prev[1], prev[0]})
                else:
                    k = int(rng.integers(1, 4))
                    pool = list(prev) + (list(grid[t - 3]) if t >= 3 else [])
                    prereqs.update(rng.choice(pool, size=min(k, len(pool)), replace=False).tolist())
            courses.append(CourseSpec(
                course_id=grid[t - 1][s],
                credits=int(rng.choice([4, 5, 6, 8])),
                recommended_term=t,
                backbone=s < 2 and t <= 4,
                prerequisites=frozenset(prereqs),
                foundational=s < 2 and t <= 3,
            ))
    return courses


def _cohort_sizes(cfg: SyntheticConfig, rng: np.random.Generator) -> list[int]:
    raw = np.maximum(5.0, rng.normal(cfg.students_per_cohort_mean, cfg.students_per_cohort_spread,
                                     size=cfg.n_cohorts))
    if cfg.total_students is None:
        return [int(round(x)) for x in raw]
    # largest-remainder rescaling to hit the requested total exactly
    share = raw / raw.sum() * cfg.total_students
    sizes = np.floor(share).astype(int)
    remainder = cfg.total_students - sizes.sum()
    order = np.argsort(-(share - sizes), kind="stable")
    sizes[order[:remainder]] += 1
    return [max(1, int(x)) for x in sizes]


def generate_synthetic(config: SyntheticConfig | None = None) -> Dataset:
    """Simulate cohorts term by term through a prerequisite-gated curriculum.

    Pass probability is logistic in ability minus course difficulty, with
    high in-degree courses made harder. From the end of ``hazard_start_term``
    on, a student drops out after each semester with a logistic hazard driven
    by that semester's failures, the share of credits blocked by unmet
    prerequisites, and a persistent latent trait.
    """
    cfg = config or SyntheticConfig()
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))

    courses = synthetic_curriculum(cfg, rng)
    in_deg = {c.course_id: len(c.prerequisites) for c in courses}
    deg_cut = np.quantile(list(in_deg.values()), 0.75)
    difficulty = {
        c.course_id: float(rng.normal(0.0, cfg.difficulty_spread))
        + (cfg.bottleneck_difficulty if in_deg[c.course_id] >= max(deg_cut, 1) else 0.0)
        for c in courses
    }
    by_term = sorted(courses, key=lambda c: (c.recommended_term, c.course_id))

    attributes = {
        "birth_date": AttributeSpec("N1", "date", 0),
        "gender": AttributeSpec("N1", "categorical", 0),
        "ses_index": AttributeSpec("N1", "numeric", 0),
        "financial_vulnerability": AttributeSpec("N1", "categorical", 0),
        "secondary_school_type": AttributeSpec("N2", "categorical", 0),
        "school_gpa": AttributeSpec("N2", "numeric", 0),
        "parental_education": AttributeSpec("N2", "categorical", 0),
        "highschool_grad_year": AttributeSpec("N2", "numeric", 0),
        "macro_shock": AttributeSpec("N4", "numeric", 0),
    }
    if cfg.plant_leak_vars:
        attributes["still_enrolled_after_vot"] = AttributeSpec("N1", "numeric", cfg.horizon)
        attributes["graduated_flag"] = AttributeSpec("N1", "numeric", cfg.horizon)

    student_rows, event_rows, outcome_rows = [], [], []
    sizes = _cohort_sizes(cfg, rng)
    for k, size in enumerate(sizes):
        year = cfg.first_cohort_year + k
        shock = 1.0 if year in cfg.shock_cohorts else 0.0
        n_sections = max(1, math.ceil(size / cfg.section_size))
        for i in range(size):
            sid = f"S{year}{i:04d}"
            ses = float(rng.normal())
            ability = float(0.35 * ses + rng.normal())
            trait = float(rng.normal())
            age = 17.5 + float(rng.gamma(2.0, 0.6))
            birth = date(year, 3, 1) - timedelta(days=int(age * 365.25))
            school_gpa = float(np.clip(7.0 + 0.8 * ability + rng.normal(0, 0.8), 4.0, 10.0))
            parental = ["primary", "secondary", "tertiary"][
                int(np.clip(np.floor(1 + 0.6 * ses + rng.normal(0, 0.8)), 0, 2))]
            student_rows.append({
                "student_id": sid,
                "cohort_year": year,
                "birth_date": birth.isoformat(),
                "gender": "F" if rng.random() < 0.3 else "M",
                "ses_index": round(ses, 3),
                "financial_vulnerability": "yes" if rng.random() < _sigmoid(-1.0 - ses) else "no",
                "secondary_school_type": str(rng.choice(
                    ["public_general", "public_technical", "private_general", "private_technical"],
                    p=[0.4, 0.25, 0.2, 0.15])),
                "school_gpa": np.nan if rng.random() < 0.15 else round(school_gpa, 2),
                "parental_education": None if rng.random() < 0.05 else parental,
                "highschool_grad_year": float(year - int(rng.choice([0, 1, 2], p=[0.7, 0.2, 0.1]))),
                "macro_shock": shock,
            })

            group = int(rng.integers(n_sections))
            passed: set[str] = set()
            status = "enrolled"
            for term in range(1, cfg.horizon + 1):
                eligible = [
                    c for c in by_term
                    if c.course_id not in passed
                    and c.recommended_term <= term
                    and c.prerequisites <= passed
                ][: cfg.max_load]
                newly_passed, failures = [], 0
                for c in eligible:
                    on_track = c.recommended_term == term
                    slot = group if on_track else int(rng.integers(n_sections))
                    section = f"K{slot + 1}"
                    if rng.random() < _sigmoid(cfg.absent_intercept - 0.5 * ability):
                        event_rows.append((sid, c.course_id, section, term, "class_section",
                                           "absent", np.nan))
                        failures += 1
                        continue
                    p = _sigmoid(cfg.pass_intercept + cfg.ability_coef * ability
                                 - difficulty[c.course_id] - 0.3 * shock)
                    ok = rng.random() < p
                    if ok:
                        grade = float(np.clip(np.round(6.5 + 1.1 * ability + rng.normal(0, 1.0)), 4, 10))
                    else:
                        grade = float(np.clip(np.round(2.0 + rng.normal(0, 0.8)), 1, 3))
                    result = "passed" if ok else "failed"
                    sitting = f"X{1 + int(rng.random() < 0.4)}"
                    event_rows.append((sid, c.course_id, section, term, "class_section", result, grade))
                    event_rows.append((sid, c.course_id, sitting, term, "exam_sitting", result, grade))
                    if ok:
                        newly_passed.append(c.course_id)
                    else:
                        failures += 1
                passed.update(newly_passed)
                if len(passed) == len(courses):
                    status = "graduated"
                    break
                if term == cfg.horizon:
                    break
                if term < cfg.hazard_start_term:
                    continue
                # friction: share of the credits due by next term that are locked
                due = [c for c in courses if c.recommended_term <= term + 1]
                blocked = sum(
                    c.credits for c in due
                    if c.course_id not in passed and not c.prerequisites <= passed
                )
                hazard = _sigmoid(cfg.hazard_intercept + cfg.hazard_failures * failures
                                  + cfg.hazard_blocked * blocked / sum(c.credits for c in due)
                                  + cfg.hazard_noise * trait - 0.3 * ability
                                  + cfg.hazard_shock * shock
                                  - cfg.hazard_term_decay * (term - cfg.hazard_start_term))
                if rng.random() < hazard:
                    status = "dropped_out"
                    break
            outcome_rows.append((sid, int(status == "dropped_out"), status))

    students = pd.DataFrame(student_rows, columns=["student_id", "cohort_year",
                                                   *[a for a in attributes if a not in LEAK_ATTRIBUTES]])
    outcomes = pd.DataFrame(outcome_rows, columns=OUTCOME_COLUMNS)
    if cfg.plant_leak_vars:
        students["still_enrolled_after_vot"], students["graduated_flag"] = _plant_leaks(
            outcomes, cfg.leak_purity, rng)
    events = pd.DataFrame(event_rows, columns=ENROLLMENT_COLUMNS)
    return build_dataset(courses, attributes, students, events, outcomes)


def _plant_leaks(outcomes: pd.DataFrame, purity: float, rng: np.random.Generator):
    """Post-horizon flags that encode the outcome.

    ``still_enrolled_after_vot`` is the negated dropout flag with
    ``floor((1 - purity) * n)`` non-dropouts (graduates first) coded 0, so the
    value-1 category stays exactly dropout-free at any purity.
    """
    dropout = outcomes["dropout"].to_numpy()
    status = outcomes["status_at_horizon"].to_numpy()
    still = 1.0 - dropout.astype(float)
    n_flip = int(math.floor((1.0 - purity) * len(dropout) + 1e-9))
    grads = np.flatnonzero(status == "graduated")
    enrolled = np.flatnonzero(status == "enrolled")
    pool = np.concatenate([rng.permutation(grads), rng.permutation(enrolled)])
    still[pool[:n_flip]] = 0.0
    graduated = (status == "graduated").astype(float)
    return still, graduated
