import numpy as np
import pytest

from dropnet.ingest import (
    AttributeSpec,
    CourseSpec,
    Dataset,
    EnrollmentEvent,
    OutcomeRecord,
    StudentRecord,
    SyntheticConfig,
    generate_synthetic,
)


@pytest.fixture(scope="session")
def ds42():
    return generate_synthetic(SyntheticConfig(seed=42))


@pytest.fixture(scope="session")
def ds42_leaky():
    return generate_synthetic(SyntheticConfig(seed=42, plant_leak_vars=True))


@pytest.fixture(scope="session")
def small_ds():
    """Six cohorts of ~40 students; big enough for folds and grid search."""
    return generate_synthetic(SyntheticConfig(seed=7, n_cohorts=6, total_students=240,
                                              students_per_cohort_mean=40.0,
                                              students_per_cohort_spread=5.0, n_terms=6))


@pytest.fixture
def tiny_ds():
    """Three students, five courses (A -> B -> C, D, E), hand-written events."""
    courses = [
        CourseSpec("A", 6, 1, backbone=True, foundational=True),
        CourseSpec("B", 6, 2, backbone=True, prerequisites=frozenset({"A"})),
        CourseSpec("C", 4, 3, prerequisites=frozenset({"B"})),
        CourseSpec("D", 4, 1, foundational=True),
        CourseSpec("E", 2, 2),
    ]
    attrs = {"ses_index": AttributeSpec("N1", "numeric", 0),
             "school": AttributeSpec("N2", "categorical", 0)}
    students = [
        StudentRecord("s1", 2010, {"ses_index": 0.5, "school": "public"}),
        StudentRecord("s2", 2010, {"ses_index": -1.0, "school": "private"}),
        StudentRecord("s3", 2011, {"ses_index": None, "school": None}),
    ]
    ev = EnrollmentEvent
    events = [
        ev("s1", "A", "K1", 1, "class_section", "passed", 7.0),
        ev("s1", "A", "X1", 1, "exam_sitting", "passed", 7.0),
        ev("s1", "D", "K1", 1, "class_section", "failed", 2.0),
        ev("s1", "D", "X1", 1, "exam_sitting", "failed", 2.0),
        ev("s1", "D", "X1", 2, "exam_sitting", "passed", 6.0),
        ev("s1", "B", "K1", 2, "class_section", "passed", 8.0),
        ev("s1", "B", "X2", 2, "exam_sitting", "passed", 8.0),
        ev("s2", "A", "K1", 1, "class_section", "failed", 3.0),
        ev("s2", "A", "X1", 1, "exam_sitting", "failed", 3.0),
        ev("s2", "D", "K1", 1, "class_section", "absent", None),
        ev("s2", "A", "X1", 4, "exam_sitting", "passed", 5.0),
    ]
    outcomes = [OutcomeRecord("s1", False, "enrolled"), OutcomeRecord("s2", True, "dropped_out"),
                OutcomeRecord("s3", False, "graduated")]
    return Dataset.from_records(courses, students, events, outcomes, attrs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    prev = _criteria.get(number)
    if prev is None or prev[0] == "PASS":
        _criteria[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"criterion {number:>2} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
