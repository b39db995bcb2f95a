"""Timing and stability experiments with tab-separated output.

``run_timing`` compares wall-clock cost of LogME, the pseudo-inverse
H-score and the shrinkage H-score on synthetic data.  ``run_stability``
tracks how far the small-sample estimates drift from a large-sample
reference as the sample size grows.  ``class_count_sweep`` and
``imbalance_sweep`` show how NCE and LEEP react to the number of classes
and to class imbalance under a predictor that knows nothing about the
labels.
"""

from __future__ import annotations

import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import __version__
from ._rng import stream
from .errors import SpecError
from .hscore import hscore_original, hscore_population_reference, hscore_shrunk
from .logme import logme
from .pseudometrics import label_entropy, leep, nce, normalize_metric, pseudo_labels
from .synthgen import SyntheticPopulation, SyntheticSpec, make_classification, make_imbalanced_pair, random_soft_predictor

TIMING_GRID: tuple[tuple[int, int, int], ...] = (
    (500, 500, 50),
    (500, 1000, 50),
    (500, 5000, 50),
    (500, 1000, 10),
    (500, 1000, 100),
    (100, 1000, 50),
    (1000, 1000, 50),
)
SMALL_GRID: tuple[tuple[int, int, int], ...] = ((200, 100, 5), (100, 300, 5), (300, 300, 10))
GRIDS = {"table5": TIMING_GRID, "small": SMALL_GRID}

TIMED_METRICS = ("logme", "hscore", "hscore_shrunk")
MAX_TIMING_CV = 0.30


def run_header(seed: int, threads: int | None, **extra) -> str:
    """One comment line recording version, seed, thread count and machine."""
    blas = ",".join(sorted({f"{i.get('internal_api')}" for i in threadpool_info()})) or "unknown"
    parts = [f"xferscore {__version__}", f"seed={seed}", f"threads={threads if threads else 'default'}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    parts += [f"python={platform.python_version()}", f"numpy={np.__version__}", f"blas={blas}", f"machine={platform.machine()}"]
    return "# " + " ".join(parts)


@dataclass(frozen=True)
class BenchConfig:
    grid: tuple[tuple[int, int, int], ...] = TIMING_GRID
    repetitions: int = 7
    warmup: int = 2
    seed: int = 0
    threads: int = 1
    d_informative: int = 100
    class_sep: float = 1.0
    check_paths: bool = True

    def __post_init__(self):
        if not self.grid:
            raise SpecError("timing grid is empty")
        if self.repetitions < 3:
            raise SpecError(f"need at least 3 repetitions, got {self.repetitions}")
        if self.warmup < 0:
            raise SpecError("warmup must be non-negative")
        if self.threads < 1:
            raise SpecError("threads must be >= 1")


@dataclass(frozen=True)
class TimingRow:
    n: int
    d: int
    C: int
    metric: str
    ms_median: float
    ms_iqr: float
    cv: float
    samples_ms: tuple[float, ...]

    @property
    def stable(self) -> bool:
        return self.cv <= MAX_TIMING_CV

    @property
    def flag(self) -> str:
        return "ok" if self.stable else "unstable"


@dataclass(frozen=True)
class TimingCell:
    n: int
    d: int
    C: int
    rows: dict[str, TimingRow]
    path_rel_diff: float | None

    @property
    def ratio(self) -> float:
        """LogME time over shrinkage H-score time."""
        return self.rows["logme"].ms_median / self.rows["hscore_shrunk"].ms_median


def _time_call(fn: Callable[[], object], repetitions: int, warmup: int) -> list[float]:
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        out.append((time.perf_counter() - t0) * 1e3)
    return out


def _summarize(n, d, C, metric, samples) -> TimingRow:
    arr = np.asarray(samples)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    cv = float(arr.std(ddof=1) / arr.mean()) if arr.size > 1 and arr.mean() > 0 else 0.0
    return TimingRow(n, d, C, metric, float(med), float(q3 - q1), cv, tuple(float(x) for x in arr))


def run_timing(config: BenchConfig, progress: Callable[[str], None] | None = None) -> list[TimingCell]:
    """Median wall-clock of each timed metric on every grid cell.

    Data come from ``make_classification`` with ``config.d_informative``
    informative columns (capped at ``d``) and no projection.  BLAS is pinned
    to ``config.threads`` threads for the whole run.  When ``check_paths``
    is set, cells with ``n < d`` also record the relative gap between the
    Woodbury and dense evaluations of the shrinkage H-score.
    """
    cells = []
    with threadpool_limits(limits=config.threads):
        for i, (n, d, C) in enumerate(config.grid):
            spec = SyntheticSpec(n=n, d=d, d_informative=min(config.d_informative, d), C=C, class_sep=config.class_sep, seed=config.seed + i)
            F, y = make_classification(spec)
            fns = {
                "logme": lambda: logme(F, y),
                "hscore": lambda: hscore_original(F, y),
                "hscore_shrunk": lambda: hscore_shrunk(F, y),
            }
            rows = {}
            for name in TIMED_METRICS:
                rows[name] = _summarize(n, d, C, name, _time_call(fns[name], config.repetitions, config.warmup))
            gap = None
            if config.check_paths and n < d:
                fast = hscore_shrunk(F, y, path="woodbury").value
                dense = hscore_shrunk(F, y, path="dense").value
                gap = abs(fast - dense) / max(abs(dense), np.finfo(float).tiny)
            cell = TimingCell(n, d, C, rows, gap)
            cells.append(cell)
            if progress is not None:
                progress(
                    f"n={n} d={d} C={C} "
                    + " ".join(f"{k}={r.ms_median:.1f}ms" for k, r in rows.items())
                    + f" ratio={cell.ratio:.2f}"
                )
    return cells


TIMING_COLUMNS = ("n", "d", "C", "metric", "ms_median", "ms_iqr", "cv", "flag")


def timing_records(cells: Sequence[TimingCell]) -> list[dict]:
    out = []
    for cell in cells:
        for name in TIMED_METRICS:
            r = cell.rows[name]
            out.append({"n": r.n, "d": r.d, "C": r.C, "metric": name, "ms_median": r.ms_median, "ms_iqr": r.ms_iqr, "cv": r.cv, "flag": r.flag})
    return out


def timing_summary(cells: Sequence[TimingCell]) -> list[dict]:
    return [
        {"n": c.n, "d": c.d, "C": c.C, "logme_over_hscore_shrunk": c.ratio, "woodbury_dense_rel_diff": c.path_rel_diff}
        for c in cells
    ]


@dataclass(frozen=True)
class StabilityConfig:
    d: int = 200
    C: int = 10
    d_informative: int = 100
    sample_sizes: tuple[int, ...] = (50, 100, 200, 400, 800, 1600, 3200)
    n_reference: int = 100_000
    alpha_grid: tuple[float, ...] = (1.0,)
    alpha_multipliers: tuple[float, ...] = (0.01, 0.1, 10.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    class_sep: float = 0.065
    within_condition: float = 3.0

    def __post_init__(self):
        sizes = tuple(self.sample_sizes)
        if not sizes:
            raise SpecError("no sample sizes given")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise SpecError("sample sizes must be strictly increasing")
        if sizes[0] < self.C:
            raise SpecError(f"smallest sample size {sizes[0]} is below the class count {self.C}")
        if max(sizes) >= self.n_reference:
            raise SpecError("reference sample must be larger than every sample size")
        if any(not 0.0 <= a <= 1.0 for a in self.alpha_grid):
            raise SpecError("fixed alpha values must lie in [0, 1]")
        if any(m <= 0 for m in self.alpha_multipliers):
            raise SpecError("alpha multipliers must be positive")
        if not self.seeds:
            raise SpecError("no seeds given")

    def spec(self, seed: int, n: int | None = None) -> SyntheticSpec:
        return SyntheticSpec(
            n=n or self.sample_sizes[0],
            d=self.d,
            d_informative=self.d_informative,
            C=self.C,
            class_sep=self.class_sep,
            seed=seed,
            within_condition=self.within_condition,
        )


STABILITY_PRESETS = {
    "desk": StabilityConfig(),
    "full": StabilityConfig(
        d=1000,
        C=10,
        d_informative=500,
        sample_sizes=(100, 200, 500, 1000, 2000, 5000, 10_000, 20_000),
        n_reference=1_000_000,
        seeds=(0, 1, 2, 3, 4),
    ),
}


@dataclass(frozen=True)
class StabilityRow:
    seed: int
    n: int
    alpha: float
    metric: str
    value: float
    ratio: float


def _fmt_mult(m: float) -> str:
    return f"{m:g}"


def run_stability(config: StabilityConfig, progress: Callable[[str], None] | None = None) -> list[StabilityRow]:
    """Score/reference ratios per (seed, sample size, shrinkage rule).

    Metric names in the output: ``hscore`` (pseudo-inverse), ``hscore_shrunk``
    (Ledoit-Wolf alpha), ``hscore_shrunk[a*x<m>]`` (alpha scaled by ``m``,
    capped at 1) and ``hscore_shrunk[a=<v>]`` (fixed alpha).  Samples of
    every size come from the ``"stability"`` stream of each seed, one
    independent draw per size.
    """
    rows: list[StabilityRow] = []
    for seed in config.seeds:
        spec = config.spec(seed)
        reference = hscore_population_reference(spec, config.n_reference)
        population = SyntheticPopulation.from_spec(spec)
        nan = float("nan")
        for n in config.sample_sizes:
            F, y = population.sample(n, stream(seed, "stability", n))
            h = hscore_original(F, y).value
            rows.append(StabilityRow(seed, n, nan, "hscore", h, h / reference))
            star = hscore_shrunk(F, y)
            a_star = star.alpha_used
            rows.append(StabilityRow(seed, n, a_star, "hscore_shrunk", star.value, star.value / reference))
            for m in config.alpha_multipliers:
                a = min(a_star * m, 1.0)
                v = hscore_shrunk(F, y, alpha=a).value
                rows.append(StabilityRow(seed, n, a, f"hscore_shrunk[a*x{_fmt_mult(m)}]", v, v / reference))
            for a in config.alpha_grid:
                v = hscore_shrunk(F, y, alpha=a).value
                rows.append(StabilityRow(seed, n, a, f"hscore_shrunk[a={_fmt_mult(a)}]", v, v / reference))
        if progress is not None:
            progress(f"seed={seed} reference={reference:.6g}")
    return rows


def stability_reference(rows: Sequence[StabilityRow]) -> dict[int, float]:
    """Recover each seed's reference value from its rows."""
    out = {}
    for r in rows:
        if r.ratio != 0 and r.seed not in out:
            out[r.seed] = r.value / r.ratio
    return out


def median_ratios(rows: Sequence[StabilityRow]) -> dict[tuple[str, int], float]:
    """Median over seeds of ``score / reference`` keyed by ``(metric, n)``."""
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        groups.setdefault((r.metric, r.n), []).append(r.ratio)
    return {k: float(np.median(v)) for k, v in groups.items()}


def median_abs_errors(rows: Sequence[StabilityRow]) -> dict[tuple[str, int], float]:
    """Median over seeds of ``|score - reference|`` keyed by ``(metric, n)``."""
    refs = stability_reference(rows)
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        groups.setdefault((r.metric, r.n), []).append(abs(r.value - refs[r.seed]))
    return {k: float(np.median(v)) for k, v in groups.items()}


STABILITY_COLUMNS = ("seed", "n", "alpha", "metric", "value", "ratio")


def stability_records(rows: Sequence[StabilityRow]) -> list[dict]:
    return [asdict(r) for r in rows]


@dataclass(frozen=True)
class PathologyRow:
    sweep: str
    setting: float
    draw: int
    n: int
    label_entropy: float
    nce: float
    n_nce: float
    leep: float
    n_leep: float


def _pathology_row(sweep, setting, draw, y, theta) -> PathologyRow:
    hY = label_entropy(y)
    v_nce = nce(y, pseudo_labels(theta))
    v_leep = leep(y, theta)
    return PathologyRow(sweep, float(setting), draw, int(y.size), hY, v_nce, normalize_metric(v_nce, hY), v_leep, normalize_metric(v_leep, hY))


def class_count_sweep(
    class_counts: Sequence[int] = (2, 8, 32),
    draws: int = 20,
    n: int = 1000,
    n_source_classes: int = 10,
    seed: int = 0,
) -> list[PathologyRow]:
    """NCE/LEEP on balanced ``C``-class labels with a label-independent soft predictor.

    The predictor is fixed per draw and shared by every ``C``, so only the
    label side changes across the sweep.
    """
    rows = []
    for draw in range(draws):
        theta = random_soft_predictor(n, n_source_classes, stream(seed, "pathology-predictor", draw))
        for C in class_counts:
            pop = SyntheticPopulation(d=1, d_informative=1, centroids=np.zeros((C, 1)), mixing=None)
            y = pop.balanced_labels(n, stream(seed, "pathology-classes", draw, C))
            rows.append(_pathology_row("classes", C, draw, y, theta))
    return rows


def imbalance_sweep(
    ratios: Sequence[float] = (1, 3, 9),
    draws: int = 20,
    n_minority_range: tuple[int, int] = (30, 60),
    n_source_classes: int = 10,
    seed: int = 0,
) -> list[PathologyRow]:
    """NCE/LEEP on binary tasks of increasing imbalance with a label-independent soft predictor.

    Each draw builds a two-class pool from ``make_classification`` and takes
    an imbalanced pair with ``make_imbalanced_pair``.
    """
    rows = []
    per_class = int(math.ceil(max(ratios) * n_minority_range[1]))
    for draw in range(draws):
        pool_spec = SyntheticSpec(n=2 * per_class, d=4, d_informative=2, C=2, class_sep=1.0, seed=seed * 1000 + draw)
        F, y_pool = make_classification(pool_spec)
        for ratio in ratios:
            _, y = make_imbalanced_pair(F, y_pool, n_minority_range, ratio, seed=seed * 1000 + draw)
            theta = random_soft_predictor(y.size, n_source_classes, stream(seed, "pathology-predictor", draw))
            rows.append(_pathology_row("imbalance", ratio, draw, y, theta))
    return rows


def pathology_means(rows: Sequence[PathologyRow]) -> dict[float, dict[str, float]]:
    """Per-setting means of every score column."""
    out: dict[float, dict[str, float]] = {}
    for setting in sorted({r.setting for r in rows}):
        sel = [r for r in rows if r.setting == setting]
        out[setting] = {k: float(np.mean([getattr(r, k) for r in sel])) for k in ("label_entropy", "nce", "n_nce", "leep", "n_leep")}
    return out


PATHOLOGY_COLUMNS = ("sweep", "setting", "draw", "n", "label_entropy", "nce", "n_nce", "leep", "n_leep")


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def to_tsv(records: Sequence[dict], columns: Sequence[str], header: str | None = None) -> str:
    lines = [header] if header else []
    lines.append("\t".join(columns))
    for rec in records:
        lines.append("\t".join(_cell(rec[c]) for c in columns))
    return "\n".join(lines) + "\n"


def to_json(records: Sequence[dict], header: str | None = None, **extra) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v

    body = {"header": header, "rows": [{k: clean(v) for k, v in r.items()} for r in records]}
    body.update(extra)
    return json.dumps(body, indent=2, sort_keys=False) + "\n"


def default_threads() -> int | None:
    raw = os.environ.get("XFERSCORE_THREADS")
    if raw is None or raw.strip() == "":
        return None
    return int(raw)
