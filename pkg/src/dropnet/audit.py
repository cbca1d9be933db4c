"""Leakage audit: availability-time, conditional-purity and association screens."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .featstack import FeatureColumn, FeatureMatrix, apply_preprocess, fit_preprocess
from .metrics import roc_auc

SCREENS = ("temporal", "purity", "correlation")
MISSING = "<missing>"


@dataclass(frozen=True)
class AuditFinding:
    column: str
    screen: str
    severity: str
    evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.screen not in SCREENS:
            raise ValueError(f"unknown screen {self.screen!r}")
        if self.severity not in ("fatal", "warning"):
            raise ValueError(f"unknown severity {self.severity!r}")

    def to_dict(self) -> dict:
        return {"column": self.column, "screen": self.screen, "severity": self.severity,
                "evidence": self.evidence}


@dataclass(frozen=True)
class AuditReport:
    findings: tuple[AuditFinding, ...]
    vot: int | None = None
    n_rows: int = 0
    n_columns: int = 0

    @property
    def passed(self) -> bool:
        return not any(f.severity == "fatal" for f in self.findings)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    @property
    def counts(self) -> dict[str, int]:
        return {s: sum(f.screen == s for f in self.findings) for s in SCREENS}

    @property
    def fatal_columns(self) -> list[str]:
        return sorted({f.column for f in self.findings if f.severity == "fatal"})

    def screens_for(self, column: str, severity: str | None = None) -> set[str]:
        return {f.screen for f in self.findings
                if f.column == column and (severity is None or f.severity == severity)}

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "vot": self.vot,
            "n_rows": self.n_rows,
            "n_columns": self.n_columns,
            "counts": self.counts,
            "fatal_columns": self.fatal_columns,
            "findings": [f.to_dict() for f in self.findings],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> AuditReport:
        return cls(tuple(AuditFinding(**f) for f in doc["findings"]), doc.get("vot"),
                   doc.get("n_rows", 0), doc.get("n_columns", 0))

    def table(self) -> str:
        lines = [f"audit verdict: {self.verdict.upper()} "
                 f"({len(self.fatal_columns)} fatal column(s), {len(self.findings)} finding(s))"]
        if self.findings:
            lines.append(f"{'column':<32} {'screen':<12} {'severity':<8} evidence")
            for f in self.findings:
                lines.append(f"{f.column:<32} {f.screen:<12} {f.severity:<8} {_brief(f)}")
        return "\n".join(lines) + "\n"


def _brief(f: AuditFinding) -> str:
    e = f.evidence
    if f.screen == "temporal":
        return f"available at term {e['availability_term']} > vot {e['vot']}"
    if f.screen == "purity":
        rates = ", ".join(f"{k}: {v['dropout_rate']:.3f} (n={v['support']})"
                          for k, v in e["categories"].items())
        return f"flagged {e['flagged']}; dropout by category {{{rates}}}"
    return f"r={e['r']:.4f} auc={e['auc']:.4f} via {e['design_column']}"


# --------------------------------------------------------------------------
# screens

def temporal_screen(columns: Iterable[FeatureColumn], vot: int) -> list[AuditFinding]:
    """A fatal finding for every column only available after ``vot``."""
    return [
        AuditFinding(c.name, "temporal", "fatal",
                     {"availability_term": int(c.availability_term), "vot": int(vot)})
        for c in columns if c.availability_term > vot
    ]


def default_min_support(n_rows: int) -> int:
    return max(30, int(np.ceil(0.02 * n_rows)))


def _categories(col: pd.Series, dtype: str) -> tuple[np.ndarray, str]:
    """Category label per row; numeric columns with > 4 distinct values get quartile bins."""
    if dtype == "categorical":
        return np.array([MISSING if v is None or (isinstance(v, float) and np.isnan(v)) else str(v)
                         for v in col], dtype=object), "category"
    x = col.to_numpy(dtype=float)
    present = x[~np.isnan(x)]
    distinct = np.unique(present)
    labels = np.full(x.shape, MISSING, dtype=object)
    ok = ~np.isnan(x)
    if dtype == "boolean" or len(distinct) <= 4:
        labels[ok] = [_num_label(v) for v in x[ok]]
        return labels, "value"
    edges = np.unique(np.quantile(present, [0.25, 0.5, 0.75]))
    bins = np.searchsorted(edges, x[ok], side="left")
    names = [f"Q{i + 1}" for i in range(len(edges) + 1)]
    labels[ok] = [names[b] for b in bins]
    return labels, "quartile"


def _num_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def purity_screen(matrix: FeatureMatrix, min_support: int | None = None,
                  purity_threshold: float = 0.995) -> list[AuditFinding]:
    """Flag columns with a well-supported category of near-certain outcome.

    A category triggers when its dropout rate is <= 1 - threshold or
    >= threshold and it holds at least ``min_support`` rows (default
    max(30, 2% of rows)). One fatal finding per column lists every category.
    """
    y = np.asarray(matrix.outcome).astype(int)
    n = len(y)
    if n == 0:
        return []
    support_floor = default_min_support(n) if min_support is None else int(min_support)
    findings = []
    for c in matrix.columns:
        labels, how = _categories(matrix.values[c.name], c.dtype)
        cats = {}
        flagged = []
        for lab in sorted(set(labels), key=str):
            sel = labels == lab
            k = int(sel.sum())
            rate = float(y[sel].mean())
            cats[lab] = {"support": k, "dropout_rate": rate}
            if k >= support_floor and (rate <= 1.0 - purity_threshold or rate >= purity_threshold):
                flagged.append(lab)
        if flagged:
            findings.append(AuditFinding(c.name, "purity", "fatal", {
                "binning": how,
                "flagged": flagged,
                "categories": cats,
                "min_support": support_floor,
                "purity_threshold": purity_threshold,
            }))
    return findings


def point_biserial(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of x with a 0/1 label; 0 when either is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    den = np.sqrt((xc @ xc) * (yc @ yc))
    return float(xc @ yc / den) if den > 0 else 0.0


def correlation_screen(matrix: FeatureMatrix, r_threshold: float = 0.95,
                       auc_threshold: float = 0.995) -> list[AuditFinding]:
    """Association of each design column with the outcome.

    The design is the fully numeric preprocessing of all rows. AUC is taken
    in its direction-free form max(AUC, 1 - AUC). Either statistic over its
    threshold is a warning; both together are fatal. A source column reports
    its strongest design column.
    """
    y = np.asarray(matrix.outcome).astype(int)
    if len(y) == 0 or len(np.unique(y)) < 2 or not matrix.columns:
        return []
    plan = fit_preprocess(matrix, None)
    X = apply_preprocess(plan, matrix)
    best: dict[str, tuple] = {}
    for j, (design, source) in enumerate(zip(plan.design_columns, plan.design_sources)):
        r = point_biserial(X[:, j], y)
        auc = roc_auc(X[:, j], y)
        auc = max(auc, 1.0 - auc)
        r_hit = abs(r) >= r_threshold
        a_hit = auc >= auc_threshold
        rank = (r_hit and a_hit, r_hit or a_hit, abs(r), auc)
        if source not in best or rank > best[source][0]:
            best[source] = (rank, design, r, auc, r_hit, a_hit)
    findings = []
    for name in matrix.names:
        if name not in best:
            continue
        _, design, r, auc, r_hit, a_hit = best[name]
        if r_hit or a_hit:
            findings.append(AuditFinding(name, "correlation", "fatal" if r_hit and a_hit else "warning", {
                "design_column": design,
                "r": r,
                "auc": auc,
                "r_threshold": r_threshold,
                "auc_threshold": auc_threshold,
            }))
    return findings


def audit_matrix(matrix: FeatureMatrix, vot: int | None = None, *, min_support: int | None = None,
                 purity_threshold: float = 0.995, r_threshold: float = 0.95,
                 auc_threshold: float = 0.995) -> AuditReport:
    """Run all three screens; ``vot`` defaults to the matrix's own."""
    vot = matrix.vot if vot is None else vot
    if vot is None:
        raise ValueError("no VOT given and the matrix carries none")
    findings = (temporal_screen(matrix.columns, vot)
                + purity_screen(matrix, min_support, purity_threshold)
                + correlation_screen(matrix, r_threshold, auc_threshold))
    order = {n: i for i, n in enumerate(matrix.names)}
    findings.sort(key=lambda f: (order[f.column], SCREENS.index(f.screen)))
    return AuditReport(tuple(findings), int(vot), len(matrix.outcome), matrix.n_features)


def strip_and_rebuild(matrix: FeatureMatrix, report: AuditReport) -> FeatureMatrix:
    """Drop every column with a fatal finding."""
    fatal = report.fatal_columns
    if not fatal:
        return matrix
    if len(set(fatal) & set(matrix.names)) == matrix.n_features:
        raise ValueError("stripping the fatal columns would leave an empty matrix")
    return matrix.drop(fatal)


def audit_columns_to_exclude(report: AuditReport) -> Sequence[str]:
    return report.fatal_columns
