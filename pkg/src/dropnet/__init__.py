"""Leakage-aware dropout prediction with curriculum-graph and co-enrolment network features."""

__version__ = "0.1.0"
