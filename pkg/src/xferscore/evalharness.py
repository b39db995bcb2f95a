"""Meta-evaluation: correlate per-task metric scores with fine-tuned accuracy.

Each metric is computed on every task, then Pearson and Spearman
correlations against the target (accuracy or relative accuracy) are
reported per metric.  A (metric, task) pair that fails is treated as
missing and the row reports the reduced task count.
"""

from __future__ import annotations

import math
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from scipy import stats

from ._rng import derive_seed, stream
from .covshrink import as_class_indices
from .errors import DegenerateInputError, MissingFieldError, ValidationError, XferScoreError
from .hscore import hscore_original, hscore_shrunk
from .logme import logme
from .matrixio import LabelVector, encode_labels
from .pseudometrics import label_entropy, leep, nce, nleep, normalize_metric, pseudo_labels

SIGNIFICANCE_LEVEL = 0.05
IMBALANCE_WARN_RATIO = 1.5
TARGETS = ("accuracy", "relative_accuracy")


def relative_accuracy(acc: float, C: int) -> float:
    """Gain over chance for a balanced ``C``-class task: ``(acc - 1/C) * C``."""
    if C < 2:
        raise DegenerateInputError(f"relative accuracy needs C >= 2, got {C}")
    return (acc - 1.0 / C) * C


def _as_vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValidationError(f"vectors differ in length: {x.size} vs {y.size}")
    if x.size < 3:
        raise DegenerateInputError(f"correlation needs at least 3 points, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("correlation inputs must be finite")
    return x, y


def _pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("correlation is undefined for a constant vector")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def t_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of ``r`` from ``t = r sqrt((n-2)/(1-r^2))`` with ``n-2`` dof."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))


def permutation_pvalue(x, y, statistic: Callable, n_perm: int = 9999, seed: int = 0) -> float:
    """Two-sided permutation p-value ``(1 + #{|s_perm| >= |s_obs|}) / (1 + n_perm)``."""
    x, y = _as_vectors(x, y)
    observed = abs(statistic(x, y))
    rng = stream(seed, "permutation-test")
    hits = 0
    for _ in range(n_perm):
        if abs(statistic(x, rng.permutation(y))) >= observed - 1e-12:
            hits += 1
    return (1 + hits) / (1 + n_perm)


def pearson(x, y, method: str = "t", n_perm: int = 9999, seed: int = 0) -> tuple[float, float]:
    """Sample Pearson ``r`` and its two-sided p-value.

    ``method="t"`` uses the t approximation; ``method="permutation"``
    shuffles ``y`` ``n_perm`` times.
    """
    x, y = _as_vectors(x, y)
    r = _pearson_r(x, y)
    if method == "t":
        return r, t_pvalue(r, x.size)
    if method == "permutation":
        return r, permutation_pvalue(x, y, _pearson_r, n_perm, seed)
    raise ValueError(f"unknown p-value method {method!r}")


def midranks(x) -> np.ndarray:
    """Ranks starting at 1; tied values share the average of their positions."""
    return stats.rankdata(np.asarray(x, dtype=np.float64), method="average")


def spearman(x, y, method: str = "t", n_perm: int = 9999, seed: int = 0) -> tuple[float, float]:
    """Pearson correlation of the midranks, with the same p-value options as :func:`pearson`."""
    x, y = _as_vectors(x, y)
    return pearson(midranks(x), midranks(y), method=method, n_perm=n_perm, seed=seed)


@dataclass(frozen=True)
class CorrelationReport:
    metric_name: str
    r_pearson: float
    p_pearson: float
    r_spearman: float
    p_spearman: float
    n: int
    target: str
    error: str | None = None

    @property
    def sig_flag(self) -> str:
        """``*`` marks a correlation that is not significant at the 0.05 level."""
        if self.error is not None or not np.isfinite(self.p_pearson):
            return "-"
        return "*" if self.p_pearson > SIGNIFICANCE_LEVEL else ""

    def as_dict(self) -> dict:
        return {
            "metric": self.metric_name,
            "r_pearson": self.r_pearson,
            "p_pearson": self.p_pearson,
            "r_spearman": self.r_spearman,
            "p_spearman": self.p_spearman,
            "n": self.n,
            "sig_flag": self.sig_flag,
            "target": self.target,
            "error": self.error,
        }


def correlate(metric_name: str, scores, targets, target: str = "accuracy", method: str = "t", seed: int = 0) -> CorrelationReport:
    """Correlation row for one metric; NaN scores are dropped pairwise.

    Failures (too few tasks, a constant column) are recorded in ``error``
    instead of raised.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    keep = np.isfinite(scores) & np.isfinite(targets)
    x, y = scores[keep], targets[keep]
    n = int(keep.sum())
    try:
        rp, pp = pearson(x, y, method=method, seed=seed)
        rs, ps = spearman(x, y, method=method, seed=seed)
    except DegenerateInputError as exc:
        nan = float("nan")
        return CorrelationReport(metric_name, nan, nan, nan, nan, n, target, f"{type(exc).__name__}: {exc}")
    return CorrelationReport(metric_name, rp, pp, rs, ps, n, target)


class Task(Protocol):
    id: str
    accuracy: float
    num_classes: int | None

    def load_features(self) -> np.ndarray: ...

    def load_labels(self) -> LabelVector: ...

    def load_softpred(self) -> np.ndarray | None: ...


@dataclass(frozen=True)
class InMemoryTask:
    """A task whose arrays are already loaded; same interface as ``TaskRecord``."""

    id: str
    features: np.ndarray
    labels: np.ndarray
    accuracy: float
    softpred: np.ndarray | None = None
    num_classes: int | None = None

    def load_features(self) -> np.ndarray:
        return np.asarray(self.features, dtype=np.float64)

    def load_labels(self) -> LabelVector:
        return encode_labels(self.labels)

    def load_softpred(self) -> np.ndarray | None:
        return None if self.softpred is None else np.asarray(self.softpred, dtype=np.float64)


@dataclass(frozen=True)
class MetricContext:
    """Inputs handed to every metric for one task."""

    F: np.ndarray
    y: np.ndarray
    softpred: np.ndarray | None
    seed: int
    project_to: int | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def label_entropy(self) -> float:
        if "hY" not in self._cache:
            self._cache["hY"] = label_entropy(self.y)
        return self._cache["hY"]

    def require_softpred(self, name: str) -> np.ndarray:
        if self.softpred is None:
            raise MissingFieldError(f"metric {name!r} needs soft predictions")
        if self.softpred.shape[0] != self.y.size:
            raise ValidationError(f"{self.softpred.shape[0]} soft prediction rows for {self.y.size} samples")
        return self.softpred


@dataclass(frozen=True)
class MetricValue:
    value: float
    detail: dict = field(default_factory=dict)


def _m_hscore(ctx: MetricContext) -> MetricValue:
    res = hscore_original(ctx.F, ctx.y)
    return MetricValue(res.value, {"path": res.path})


def _m_hscore_shrunk(ctx: MetricContext) -> MetricValue:
    res = hscore_shrunk(ctx.F, ctx.y, project_to=ctx.project_to, seed=ctx.seed)
    detail = {"alpha": res.alpha_used, "path": res.path}
    if res.q_projected is not None:
        detail["q"] = res.q_projected
    return MetricValue(res.value, detail)


def _m_nce(ctx: MetricContext) -> MetricValue:
    return MetricValue(nce(ctx.y, pseudo_labels(ctx.require_softpred("nce"))))


def _m_leep(ctx: MetricContext) -> MetricValue:
    return MetricValue(leep(ctx.y, ctx.require_softpred("leep")))


def _m_nleep(ctx: MetricContext) -> MetricValue:
    return MetricValue(nleep(ctx.F, ctx.y, seed=ctx.seed))


def _normalized(raw: Callable[[MetricContext], MetricValue]) -> Callable[[MetricContext], MetricValue]:
    def metric(ctx: MetricContext) -> MetricValue:
        base = raw(ctx)
        hY = ctx.label_entropy()
        return MetricValue(normalize_metric(base.value, hY), {"raw": base.value, "H(Y)": hY})

    return metric


def _m_logme(ctx: MetricContext) -> MetricValue:
    res = logme(ctx.F, ctx.y)
    return MetricValue(res.value, {"converged": res.converged, "max_iter": max(res.iterations_per_class)})


METRICS: dict[str, Callable[[MetricContext], MetricValue]] = {
    "hscore": _m_hscore,
    "hscore_shrunk": _m_hscore_shrunk,
    "nce": _m_nce,
    "leep": _m_leep,
    "nleep": _m_nleep,
    "n_nce": _normalized(_m_nce),
    "n_leep": _normalized(_m_leep),
    "n_nleep": _normalized(_m_nleep),
    "logme": _m_logme,
}
SOFTPRED_METRICS = frozenset({"nce", "leep", "n_nce", "n_leep"})


def resolve_metrics(names: Iterable[str]) -> list[str]:
    """Expand ``all`` and check names against the registry; order is preserved."""
    out: list[str] = []
    for name in names:
        if name == "all":
            out.extend(m for m in METRICS if m not in out)
        elif name not in METRICS:
            raise ValidationError(f"unknown metric {name!r}; choose from {', '.join(sorted(METRICS))}")
        elif name not in out:
            out.append(name)
    if not out:
        raise ValidationError("no metrics requested")
    return out


def task_seed(seed: int, task_id: str) -> int:
    return derive_seed(seed, "task", zlib.crc32(task_id.encode("utf-8")))


def compute_metric(name: str, ctx: MetricContext) -> MetricValue:
    if name not in METRICS:
        raise ValidationError(f"unknown metric {name!r}")
    return METRICS[name](ctx)


@dataclass(frozen=True)
class TaskScores:
    task_id: str
    values: dict[str, float]
    errors: dict[str, str]
    class_counts: np.ndarray


def compute_task_metrics(task: Task, metrics: Sequence[str], seed: int = 0, project_to: int | None = None) -> TaskScores:
    """Every requested metric on one task; failures become NaN with a recorded reason."""
    F = task.load_features()
    labels = task.load_labels()
    y = labels.labels
    if y.size != F.shape[0]:
        raise ValidationError(f"task {task.id}: {y.size} labels for {F.shape[0]} samples")
    softpred = task.load_softpred() if any(m in SOFTPRED_METRICS for m in metrics) else None
    ctx = MetricContext(F, y, softpred, task_seed(seed, task.id), project_to)
    values: dict[str, float] = {}
    errors: dict[str, str] = {}
    for name in metrics:
        try:
            values[name] = float(compute_metric(name, ctx).value)
        except XferScoreError as exc:
            values[name] = float("nan")
            errors[name] = f"{type(exc).__name__}: {exc}"
    codes, C = as_class_indices(y)
    return TaskScores(task.id, values, errors, np.bincount(codes, minlength=C))


@dataclass(frozen=True)
class Evaluation:
    reports: list[CorrelationReport]
    task_ids: list[str]
    scores: dict[str, np.ndarray]
    targets: np.ndarray
    errors: dict[tuple[str, str], str]


def evaluate(
    bundle: Sequence[Task],
    metrics: Sequence[str],
    target: str = "accuracy",
    seed: int = 0,
    project_to: int | None = None,
    threads: int = 1,
    method: str = "t",
) -> Evaluation:
    """Score every task and correlate each metric with the target.

    Tasks are processed in id order regardless of their order in
    ``bundle``, and each task draws its randomness from a seed derived from
    ``seed`` and its id, so the result does not depend on bundle order or
    thread count.
    """
    if target in ("relative", "relative-accuracy"):
        target = "relative_accuracy"
    if target not in TARGETS:
        raise ValidationError(f"unknown target {target!r}")
    metrics = resolve_metrics(metrics)
    tasks = sorted(bundle, key=lambda t: t.id)
    if len(tasks) < 3:
        raise DegenerateInputError(f"correlation needs at least 3 tasks, got {len(tasks)}")
    if len({t.id for t in tasks}) != len(tasks):
        raise ValidationError("task ids must be unique")
    if target == "relative_accuracy":
        missing = [t.id for t in tasks if t.num_classes is None]
        if missing:
            raise MissingFieldError(f"relative accuracy needs num_classes; missing for {', '.join(missing[:5])}")

    def run(task: Task) -> TaskScores:
        return compute_task_metrics(task, metrics, seed, project_to)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    if target == "relative_accuracy":
        worst = max(float(r.class_counts.max() / max(r.class_counts.min(), 1)) for r in results)
        if worst > IMBALANCE_WARN_RATIO:
            warnings.warn(
                f"relative accuracy assumes balanced classes; largest class-size ratio is {worst:.2f}",
                RuntimeWarning,
                stacklevel=2,
            )
        y_target = np.array([relative_accuracy(t.accuracy, int(t.num_classes)) for t in tasks])
    else:
        y_target = np.array([float(t.accuracy) for t in tasks])

    scores = {m: np.array([r.values[m] for r in results]) for m in metrics}
    reports = [correlate(m, scores[m], y_target, target, method=method, seed=seed) for m in sorted(metrics)]
    errors = {(r.task_id, m): e for r in results for m, e in r.errors.items()}
    return Evaluation(reports, [t.id for t in tasks], scores, y_target, errors)


def evaluate_metrics(bundle: Sequence[Task], metrics: Sequence[str], target: str = "accuracy", **kwargs) -> list[CorrelationReport]:
    """Correlation rows sorted by metric name; see :func:`evaluate`."""
    return evaluate(bundle, metrics, target, **kwargs).reports


REPORT_COLUMNS = ("metric", "r_pearson", "p_pearson", "r_spearman", "p_spearman", "n", "sig_flag")


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.6g}"


def format_report_tsv(reports: Sequence[CorrelationReport]) -> str:
    lines = ["\t".join(REPORT_COLUMNS)]
    for r in reports:
        lines.append(
            "\t".join(
                [r.metric_name, _fmt(r.r_pearson), _fmt(r.p_pearson), _fmt(r.r_spearman), _fmt(r.p_spearman), str(r.n), r.sig_flag]
            )
        )
    return "\n".join(lines) + "\n"


def format_report_table(reports: Sequence[CorrelationReport]) -> str:
    """Fixed-width table for terminals; ``*`` marks non-significant Pearson correlations."""
    header = f"{'metric':<15}{'pearson':>10}{'p':>11}{'spearman':>10}{'p':>11}{'n':>5}"
    lines = [header, "-" * len(header)]
    for r in reports:
        if r.error is not None:
            lines.append(f"{r.metric_name:<15}{'-':>10}{'-':>11}{'-':>10}{'-':>11}{r.n:>5}  {r.error}")
            continue
        lines.append(
            f"{r.metric_name:<15}{r.r_pearson:>9.3f}{r.sig_flag or ' '}{r.p_pearson:>11.3g}"
            f"{r.r_spearman:>10.3f}{r.p_spearman:>11.3g}{r.n:>5}"
        )
    return "\n".join(lines) + "\n"
