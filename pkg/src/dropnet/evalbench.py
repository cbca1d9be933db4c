"""Leave-cohort-out fold planning, the M0-M3 ablation harness and report emission."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .conet import net_feature_table
from .curricgraph import build_graph, identify_bottlenecks, snapshots_at_vot
from .featstack import (
    FeatureMatrix,
    PreprocessPlan,
    apply_preprocess,
    assemble,
    build_graph_block,
    build_n3_features,
    fit_preprocess,
    row_mask,
)
from .ingest import Dataset
from .learn import DEFAULT_GRID, ForestConfig, ForestModel, LogitModel, fit_forest, fit_logit, grid_search
from .metrics import METRIC_NAMES, FoldMetrics, compute_metrics

log = logging.getLogger(__name__)

REPORT_FORMAT = "dropnet.ablation/1"
PERFECT_F1 = 0.995


class FoldPlanError(ValueError):
    pass


# --------------------------------------------------------------------------
# fold planning

def split_halves(student_ids: Iterable[str]) -> tuple[list[str], list[str]]:
    """Deterministic halves of a cohort: ids ordered by SHA-256, first ceil(n/2) go to part 0."""
    ordered = sorted(student_ids, key=lambda s: (hashlib.sha256(s.encode("utf-8")).hexdigest(), s))
    k = (len(ordered) + 1) // 2
    return sorted(ordered[:k]), sorted(ordered[k:])


@dataclass(frozen=True)
class Fold:
    """``test`` holds (cohort, part) units; part is None for a whole cohort, else 0/1."""

    index: int
    test: tuple[tuple[int, int | None], ...]
    train: tuple[int, ...]

    @property
    def test_cohorts(self) -> tuple[int, ...]:
        return tuple(sorted({c for c, _ in self.test}))

    def masks(self, student_ids: Sequence[str], cohorts: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """(train, test) boolean masks over rows given by parallel id/cohort arrays."""
        ids = np.asarray(student_ids, dtype=object)
        cohorts = np.asarray(cohorts)
        train = np.isin(cohorts, list(self.train))
        test = np.zeros(len(ids), dtype=bool)
        for cohort, part in self.test:
            in_cohort = cohorts == cohort
            if part is None:
                test |= in_cohort
            else:
                half = set(split_halves(ids[in_cohort])[part])
                test |= in_cohort & np.array([s in half for s in ids])
        return train, test

    def to_dict(self) -> dict:
        return {"index": self.index, "test": [list(u) for u in self.test], "train": list(self.train)}


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    target_folds: int
    min_test: int

    def __len__(self) -> int:
        return len(self.folds)

    def to_dict(self) -> dict:
        return {"target_folds": self.target_folds, "min_test": self.min_test,
                "folds": [f.to_dict() for f in self.folds]}

    @classmethod
    def from_dict(cls, doc: dict) -> FoldPlan:
        folds = tuple(
            Fold(int(f["index"]), tuple((int(c), None if p is None else int(p)) for c, p in f["test"]),
                 tuple(int(c) for c in f["train"]))
            for f in doc["folds"]
        )
        return cls(folds, int(doc["target_folds"]), int(doc["min_test"]))


def plan_folds(cohort_sizes: Mapping[int, int], target_folds: int = 16, min_test: int = 30) -> FoldPlan:
    """Group adjacent cohorts into test folds.

    Start with one fold per cohort in year order. A fold below ``min_test``
    merges with its smaller neighbour (left on ties), smallest fold first.
    Above ``target_folds``, the adjacent pair with the smallest combined size
    merges. Below it, the largest single-cohort fold whose halves both reach
    ``min_test`` is split in two by hashed student id. Training sets never
    contain any part of a test fold's cohorts.
    """
    sizes = {int(c): int(n) for c, n in cohort_sizes.items()}
    if len(sizes) < 2:
        raise FoldPlanError("at least two cohorts are needed")
    if any(n < 0 for n in sizes.values()):
        raise FoldPlanError("cohort sizes must be non-negative")
    if target_folds < 2:
        raise FoldPlanError("target_folds must be >= 2")
    total = sum(sizes.values())
    if min_test > total:
        raise FoldPlanError(f"min_test={min_test} exceeds the population of {total}")

    years = sorted(sizes)
    groups: list[list[tuple[int, int | None]]] = [[(y, None)] for y in years]

    def size(g):
        return sum(sizes[c] if p is None else (sizes[c] + 1 - p) // 2 for c, p in g)

    def merge(i, j):
        groups[i:j + 1] = [groups[i] + groups[j]]

    while len(groups) > 1:
        small = [i for i, g in enumerate(groups) if size(g) < min_test]
        if not small:
            break
        i = min(small, key=lambda k: (size(groups[k]), k))
        if i == 0:
            merge(0, 1)
        elif i == len(groups) - 1:
            merge(i - 1, i)
        elif size(groups[i - 1]) <= size(groups[i + 1]):
            merge(i - 1, i)
        else:
            merge(i, i + 1)

    while len(groups) > target_folds:
        i = min(range(len(groups) - 1), key=lambda k: (size(groups[k]) + size(groups[k + 1]), k))
        merge(i, i + 1)

    while len(groups) < target_folds:
        candidates = [i for i, g in enumerate(groups)
                      if len(g) == 1 and g[0][1] is None and sizes[g[0][0]] // 2 >= min_test]
        if not candidates:
            break
        i = min(candidates, key=lambda k: (-size(groups[k]), k))
        c = groups[i][0][0]
        groups[i:i + 1] = [[(c, 0)], [(c, 1)]]

    folds = []
    for k, g in enumerate(groups):
        touched = {c for c, _ in g}
        folds.append(Fold(k, tuple(g), tuple(y for y in years if y not in touched)))
    return FoldPlan(tuple(folds), int(target_folds), int(min_test))


# --------------------------------------------------------------------------
# per-fold fitting

@dataclass(frozen=True)
class ConfigSpec:
    name: str
    include_graph: bool
    include_net: bool


DEFAULT_CONFIGS = (
    ConfigSpec("M0_Baseline", False, False),
    ConfigSpec("M1_Network", False, True),
    ConfigSpec("M2_Graph", True, False),
    ConfigSpec("M3_Full", True, True),
)
DELTAS = (("M0_Baseline", "M1_Network"), ("M0_Baseline", "M2_Graph"), ("M2_Graph", "M3_Full"))


@dataclass(eq=False)
class FoldFit:
    plan: PreprocessPlan
    config: ForestConfig
    model: ForestModel
    logit: LogitModel | None = None


def fit_fold(matrix: FeatureMatrix, train_rows, grid: Mapping[str, Sequence] | None = None,
             seed: int = 0, inner_k: int = 3, with_logit: bool = False,
             base: ForestConfig | None = None) -> FoldFit:
    """Preprocessing, grid search and the final forest, all from training rows only."""
    mask = row_mask(matrix, train_rows)
    plan = fit_preprocess(matrix, mask)
    X = apply_preprocess(plan, matrix, mask)
    y = matrix.outcome[mask]
    best = grid_search(X, y, matrix.cohort[mask], DEFAULT_GRID if grid is None else grid,
                       inner_k=inner_k, seed=seed, base=base)
    model = fit_forest(X, y, best)
    logit = fit_logit(X, y, l2=1.0) if with_logit else None
    return FoldFit(plan, best, model, logit)


def source_importances(plan: PreprocessPlan, model: ForestModel) -> dict[str, float]:
    """Design-column importances summed back onto their source columns."""
    out = {name: 0.0 for name in plan.order}
    for src, v in zip(plan.design_sources, model.feature_importances):
        out[src] += float(v)
    return out


# --------------------------------------------------------------------------
# the report

@dataclass
class FoldResult:
    fold: int
    config: str
    metrics: FoldMetrics
    selected: dict
    n_design: int
    importance: dict[str, float]
    logit: FoldMetrics | None = None

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "config": self.config,
            "metrics": self.metrics.to_dict(),
            "selected": self.selected,
            "n_design": self.n_design,
            "importance": self.importance,
            "logit": None if self.logit is None else self.logit.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> FoldResult:
        return cls(int(d["fold"]), d["config"], FoldMetrics(**d["metrics"]), dict(d["selected"]),
                   int(d["n_design"]), dict(d["importance"]),
                   None if d.get("logit") is None else FoldMetrics(**d["logit"]))


def _mean_std(values: Sequence[float]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = math.fsum(vals) / len(vals)
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))


@dataclass
class AblationReport:
    vot: int
    seed: int
    grid: dict
    plan: FoldPlan
    configs: tuple[ConfigSpec, ...]
    columns: dict[str, list[tuple[str, str]]]  # config -> [(source column, block)]
    results: list[FoldResult] = field(default_factory=list)

    def config_names(self) -> list[str]:
        return [c.name for c in self.configs]

    def fold_results(self, config: str) -> list[FoldResult]:
        return sorted((r for r in self.results if r.config == config), key=lambda r: r.fold)

    def feature_count(self, config: str) -> int:
        return len(self.columns[config])

    def aggregate(self, config: str, logit: bool = False) -> dict[str, dict]:
        rows = [(r.logit if logit else r.metrics) for r in self.fold_results(config)]
        rows = [m for m in rows if m is not None]
        out = {}
        for name in METRIC_NAMES:
            mean, std = _mean_std([getattr(m, name) for m in rows])
            out[name] = {"mean": mean, "std": std}
        return out

    def importance_ranking(self, config: str) -> list[tuple[str, str, float]]:
        """(column, block, mean importance over folds), most important first."""
        folds = self.fold_results(config)
        ranking = []
        for name, block in self.columns[config]:
            vals = [r.importance.get(name, 0.0) for r in folds]
            ranking.append((name, block, math.fsum(vals) / len(vals) if vals else 0.0))
        ranking.sort(key=lambda t: (-t[2], t[0]))
        return ranking

    def block_importance(self, config: str) -> dict[str, float]:
        """Sum of member-column importances per block, averaged over folds."""
        blocks = dict(self.columns[config])
        parts: dict[str, list[float]] = {}
        folds = self.fold_results(config)
        for r in folds:
            for name, v in r.importance.items():
                parts.setdefault(blocks[name], []).append(v)
        n = max(1, len(folds))
        # fsum keeps the result independent of dict order (JSON round trips sort keys)
        return {b: math.fsum(v) / n for b, v in sorted(parts.items())}

    def deltas(self) -> list[dict]:
        names = set(self.config_names())
        out = []
        for a, b in DELTAS:
            if a not in names or b not in names:
                continue
            ga, gb = self.aggregate(a), self.aggregate(b)
            d = {"from": a, "to": b}
            for metric in ("f1", "roc_auc"):
                x, y = ga[metric]["mean"], gb[metric]["mean"]
                d[f"delta_{metric}"] = None if x is None or y is None else y - x
            out.append(d)
        return out

    def stability(self) -> dict:
        """Per-config spread flags plus a count of which config wins each fold."""
        out: dict = {"configs": {}, "fold_winners": {}}
        for name in self.config_names():
            folds = self.fold_results(name)
            f1 = [r.metrics.f1 for r in folds]
            mean, std = _mean_std(f1)
            out["configs"][name] = {
                "f1_min": min(f1) if f1 else None,
                "f1_max": max(f1) if f1 else None,
                "perfect_folds": [r.fold for r in folds if r.metrics.f1 >= PERFECT_F1],
                "outlier_folds": [r.fold for r in folds
                                  if std is not None and std > 0 and abs(r.metrics.f1 - mean) > 2 * std],
            }
        winners = {name: 0 for name in self.config_names()}
        for fold in self.plan.folds:
            scored = [(r.metrics.f1, r.config) for r in self.results if r.fold == fold.index]
            if scored:
                top = max(s for s, _ in scored)
                for s, c in scored:
                    if s == top:
                        winners[c] += 1
        out["fold_winners"] = winners
        return out

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "vot": self.vot,
            "seed": self.seed,
            "grid": self.grid,
            "plan": self.plan.to_dict(),
            "configs": [asdict(c) for c in self.configs],
            "columns": {k: [list(t) for t in v] for k, v in self.columns.items()},
            "results": [r.to_dict() for r in sorted(self.results, key=lambda r: (r.fold, self._cidx(r.config)))],
            "summary": {
                name: {
                    "features": self.feature_count(name),
                    "metrics": self.aggregate(name),
                    "logit_metrics": self.aggregate(name, logit=True),
                    "block_importance": self.block_importance(name),
                    "importance_ranking": [list(t) for t in self.importance_ranking(name)],
                }
                for name in self.config_names()
            },
            "deltas": self.deltas(),
            "stability": self.stability(),
        }

    def _cidx(self, name: str) -> int:
        return self.config_names().index(name)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> AblationReport:
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"unsupported report format {doc.get('format')!r}")
        return cls(
            vot=int(doc["vot"]),
            seed=int(doc["seed"]),
            grid=doc["grid"],
            plan=FoldPlan.from_dict(doc["plan"]),
            configs=tuple(ConfigSpec(**c) for c in doc["configs"]),
            columns={k: [tuple(t) for t in v] for k, v in doc["columns"].items()},
            results=[FoldResult.from_dict(r) for r in doc["results"]],
        )


def _grid_doc(grid: Mapping[str, Sequence]) -> dict:
    return {k: list(v) for k, v in grid.items()}


def run_ablation(ds: Dataset, vot: int = 3, plan: FoldPlan | None = None,
                 configs: Sequence[ConfigSpec] = DEFAULT_CONFIGS,
                 grid: Mapping[str, Sequence] | None = None, seed: int = 0, *, gate: bool = True,
                 exclude: Iterable[str] = (), inner_k: int = 3, with_logit: bool = True,
                 shocks: Mapping[str, Iterable[int]] | None = None) -> AblationReport:
    """Train and score every config on every fold.

    Bottleneck courses are re-derived per fold from training cohorts; network
    features are computed within each cohort and never see outcomes. The
    whole run is a function of (dataset, plan, grid, seed).
    """
    grid = DEFAULT_GRID if grid is None else grid
    plan = plan or plan_folds(ds.cohort_sizes())
    exclude = tuple(exclude)
    configs = tuple(configs)
    g = build_graph(ds)
    snaps = snapshots_at_vot(ds, vot)
    net = net_feature_table(ds, vot, seed) if any(c.include_net for c in configs) else None
    report = None

    for fold in plan.folds:
        train_cohorts = set(fold.train)
        train_ids = [s for s, c in zip(ds.students["student_id"], ds.students["cohort_year"])
                     if c in train_cohorts]
        bottlenecks = identify_bottlenecks(g, ds.subset(train_ids), vot=vot)
        n3 = build_n3_features(ds, vot, bottlenecks, snaps)
        gb = build_graph_block(ds, vot, bottlenecks, g, snaps)
        for cfg in configs:
            m = assemble(ds, vot, gb, net, include_graph=cfg.include_graph, include_net=cfg.include_net,
                         n3=n3, gate=gate, exclude=exclude, shocks=shocks)
            if report is None:
                report = AblationReport(vot, int(seed), _grid_doc(grid), plan, configs, {})
            report.columns.setdefault(cfg.name, [(c.name, c.block) for c in m.columns])
            train, test = fold.masks(m.student_ids, m.cohort)
            fit = fit_fold(m, train, grid, seed, inner_k, with_logit)
            X_test = apply_preprocess(fit.plan, m, test)
            y_test = m.outcome[test]
            metrics = compute_metrics(fit.model.predict_proba(X_test), y_test)
            logit = compute_metrics(fit.logit.predict_proba(X_test), y_test) if fit.logit else None
            report.results.append(FoldResult(
                fold.index, cfg.name, metrics,
                {"n_trees": fit.config.n_trees, "max_depth": fit.config.max_depth,
                 "min_samples_leaf": fit.config.min_samples_leaf},
                len(fit.plan.design_columns), source_importances(fit.plan, fit.model), logit,
            ))
            log.info("fold %d/%d %s: f1=%.4f auc=%s", fold.index + 1, len(plan), cfg.name, metrics.f1,
                     "n/a" if metrics.roc_auc is None else f"{metrics.roc_auc:.4f}")
    return report


# --------------------------------------------------------------------------
# emission

def round4(x: float | None) -> Decimal | None:
    """Half-even rounding to 4 decimals on the exact binary value."""
    if x is None:
        return None
    return Decimal(x).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN)


def _fmt(x) -> str:
    if x is None:
        return ""
    return str(round4(x)) if not isinstance(x, Decimal) else str(x)


def impact_label(delta: Decimal | None) -> str:
    if delta is None:
        return "Undefined"
    if delta == 0:
        return "No change"
    word = "increase" if delta > 0 else "decrease"
    text = f"Slight {word}" if abs(delta) < Decimal("0.01") else word.capitalize()
    return f"{text} ({delta:+})"


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


MODEL_COMPARISON_HEADER = ("model", "features", "accuracy", "precision", "recall", "f1", "roc_auc")


def emit_reports(report: AblationReport, out_dir, top_k: int = 20) -> list[Path]:
    """Write the comparison, importance, NET-effect and fold-wise tables plus a summary."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    names = report.config_names()
    agg = {n: report.aggregate(n) for n in names}
    paths = []

    p = out / "model_comparison.csv"
    _write(p, MODEL_COMPARISON_HEADER, [
        [n, report.feature_count(n), *(_fmt(agg[n][m]["mean"]) for m in MODEL_COMPARISON_HEADER[2:])]
        for n in names
    ])
    paths.append(p)

    p = out / "importance_topk.csv"
    rows = []
    for n in names:
        for rank, (col, block, v) in enumerate(report.importance_ranking(n)[:top_k], start=1):
            rows.append([n, rank, col, block, _fmt(v)])
    _write(p, ("model", "rank", "feature", "block", "importance"), rows)
    paths.append(p)

    p = out / "net_effect.csv"
    rows = []
    for d in report.deltas():
        a, b = d["from"], d["to"]
        f1a, f1b = round4(agg[a]["f1"]["mean"]), round4(agg[b]["f1"]["mean"])
        auca, aucb = round4(agg[a]["roc_auc"]["mean"]), round4(agg[b]["roc_auc"]["mean"])
        df1 = None if f1a is None or f1b is None else f1b - f1a
        dauc = None if auca is None or aucb is None else aucb - auca
        rows.append([f"{a} -> {b}", a, b, report.feature_count(a), report.feature_count(b),
                     _fmt(f1a), _fmt(f1b), _fmt(df1), _fmt(auca), _fmt(aucb), _fmt(dauc),
                     impact_label(df1)])
    _write(p, ("comparison", "from_model", "to_model", "features_from", "features_to", "f1_from",
               "f1_to", "delta_f1", "roc_auc_from", "roc_auc_to", "delta_roc_auc", "impact"), rows)
    paths.append(p)

    p = out / "foldwise.csv"
    rows = []
    folds = {f.index: f for f in report.plan.folds}
    for r in sorted(report.results, key=lambda r: (r.fold, names.index(r.config))):
        m = r.metrics
        test = ";".join(f"{c}" if part is None else f"{c}/{part}" for c, part in folds[r.fold].test)
        rows.append([r.fold, test, r.config, m.n_test, *(_fmt(getattr(m, k)) for k in METRIC_NAMES),
                     m.tp, m.fp, m.tn, m.fn, r.selected["n_trees"],
                     "" if r.selected["max_depth"] is None else r.selected["max_depth"],
                     r.selected["min_samples_leaf"]])
    _write(p, ("fold", "test_cohorts", "model", "n_test", *METRIC_NAMES, "tp", "fp", "tn", "fn",
               "n_trees", "max_depth", "min_samples_leaf"), rows)
    paths.append(p)

    p = out / "summary.md"
    p.write_text(summary_markdown(report, top_k=min(top_k, 10)), encoding="utf-8")
    paths.append(p)
    return paths


def summary_markdown(report: AblationReport, top_k: int = 10) -> str:
    names = report.config_names()
    lines = ["# Ablation summary", "",
             f"VOT = {report.vot}, seed = {report.seed}, {len(report.plan)} leave-cohort-out folds.", "",
             "## Model comparison (fold mean ± population std)", "",
             "| Model | Features | Accuracy | Precision | Recall | F1 | ROC-AUC | Balanced acc. |",
             "|---|---|---|---|---|---|---|---|"]
    for n in names:
        a = report.aggregate(n)
        cells = [f"{_fmt(a[m]['mean'])} ± {_fmt(a[m]['std'])}" if a[m]["mean"] is not None else "n/a"
                 for m in ("accuracy", "precision", "recall", "f1", "roc_auc", "balanced_accuracy")]
        lines.append(f"| {n} | {report.feature_count(n)} | " + " | ".join(cells) + " |")

    if any(r.logit is not None for r in report.results):
        lines += ["", "## Logistic regression companion (fold mean)", "",
                  "| Model | F1 | ROC-AUC | Balanced acc. |", "|---|---|---|---|"]
        for n in names:
            a = report.aggregate(n, logit=True)
            lines.append(f"| {n} | {_fmt(a['f1']['mean'])} | {_fmt(a['roc_auc']['mean'])} | "
                         f"{_fmt(a['balanced_accuracy']['mean'])} |")

    lines += ["", "## Block increments", "", "| Comparison | ΔF1 | ΔROC-AUC |", "|---|---|---|"]
    for d in report.deltas():
        lines.append(f"| {d['from']} → {d['to']} | {_fmt(d['delta_f1'])} | {_fmt(d['delta_roc_auc'])} |")

    lines += ["", "## Block importance (mean over folds)", "",
              "| Model | " + " | ".join(("N1", "N2", "N3", "N4", "GRAPH", "NET")) + " |",
              "|---|---|---|---|---|---|---|"]
    for n in names:
        bi = report.block_importance(n)
        lines.append(f"| {n} | " + " | ".join(_fmt(bi[b]) if b in bi else "" for b in
                                              ("N1", "N2", "N3", "N4", "GRAPH", "NET")) + " |")

    for n in names:
        lines += ["", f"## Top features: {n}", "", "| Rank | Feature | Block | Importance |", "|---|---|---|---|"]
        for rank, (col, block, v) in enumerate(report.importance_ranking(n)[:top_k], start=1):
            lines.append(f"| {rank} | {col} | {block} | {_fmt(v)} |")

    st = report.stability()
    lines += ["", "## Fold stability", "", "| Model | F1 min | F1 max | Folds with F1 ≥ 0.995 | Outlier folds | Fold wins |",
              "|---|---|---|---|---|---|"]
    for n in names:
        s = st["configs"][n]
        lines.append(f"| {n} | {_fmt(s['f1_min'])} | {_fmt(s['f1_max'])} | "
                     f"{len(s['perfect_folds'])} | {', '.join(map(str, s['outlier_folds'])) or '-'} | "
                     f"{st['fold_winners'][n]} |")
    perfect = sorted({f for n in names for f in st["configs"][n]["perfect_folds"]})
    if perfect:
        lines += ["", f"**Warning:** near-perfect F1 on fold(s) {', '.join(map(str, perfect))}. "
                      "Scores this high on held-out cohorts usually mean an outcome proxy is among the "
                      "predictors; run the audit."]
    return "\n".join(lines) + "\n"
