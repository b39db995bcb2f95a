import json
import math

import numpy as np
import pytest

from xferscore.bench import (
    GRIDS,
    PATHOLOGY_COLUMNS,
    STABILITY_COLUMNS,
    TIMING_GRID,
    TIMING_COLUMNS,
    BenchConfig,
    StabilityConfig,
    class_count_sweep,
    imbalance_sweep,
    median_abs_errors,
    median_ratios,
    pathology_means,
    run_header,
    run_stability,
    run_timing,
    stability_records,
    stability_reference,
    timing_records,
    timing_summary,
    to_json,
    to_tsv,
)
from xferscore.errors import SpecError


def test_timing_grid():
    assert len(TIMING_GRID) == 7
    assert (500, 500, 50) in TIMING_GRID and (500, 5000, 50) in TIMING_GRID
    assert GRIDS["table5"] is TIMING_GRID


@pytest.mark.parametrize(
    "kwargs",
    [dict(grid=()), dict(repetitions=2), dict(warmup=-1), dict(threads=0)],
)
def test_bench_config_validation(kwargs):
    with pytest.raises(SpecError):
        BenchConfig(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(sample_sizes=()),
        dict(sample_sizes=(100, 50)),
        dict(sample_sizes=(5, 50)),
        dict(n_reference=3200),
        dict(alpha_grid=(1.5,)),
        dict(alpha_multipliers=(0.0,)),
        dict(seeds=()),
    ],
)
def test_stability_config_validation(kwargs):
    with pytest.raises(SpecError):
        StabilityConfig(**kwargs)


def test_small_timing_run():
    cfg = BenchConfig(grid=((60, 40, 3), (30, 80, 3)), repetitions=3, warmup=1, d_informative=10)
    cells = run_timing(cfg)
    assert [(c.n, c.d) for c in cells] == [(60, 40), (30, 80)]
    assert cells[0].path_rel_diff is None
    assert cells[1].path_rel_diff < 1e-8
    for c in cells:
        assert set(c.rows) == {"logme", "hscore", "hscore_shrunk"}
        assert all(len(r.samples_ms) == 3 and r.ms_median > 0 for r in c.rows.values())
        assert c.ratio > 0
    recs = timing_records(cells)
    assert len(recs) == 6 and set(recs[0]) == set(TIMING_COLUMNS)
    assert all(r["flag"] in ("ok", "unstable") for r in recs)
    assert timing_summary(cells)[1]["woodbury_dense_rel_diff"] == cells[1].path_rel_diff


def _tiny_stability():
    cfg = StabilityConfig(d=20, C=3, d_informative=10, sample_sizes=(10, 40, 160), n_reference=2000, seeds=(0, 1), class_sep=0.5)
    return run_stability(cfg)


def test_stability_rows():
    rows = _tiny_stability()
    metrics = {r.metric for r in rows}
    assert metrics == {"hscore", "hscore_shrunk", "hscore_shrunk[a*x0.01]", "hscore_shrunk[a*x0.1]", "hscore_shrunk[a*x10]", "hscore_shrunk[a=1]"}
    assert len(rows) == 2 * 3 * 6
    for r in rows:
        if r.metric == "hscore_shrunk[a=1]":
            assert r.value == 0.0 and r.alpha == 1.0
        if r.metric == "hscore":
            assert math.isnan(r.alpha)
    refs = stability_reference(rows)
    assert set(refs) == {0, 1} and all(v > 0 for v in refs.values())
    med = median_ratios(rows)
    assert med[("hscore_shrunk[a=1]", 40)] == 0.0
    err = median_abs_errors(rows)
    assert err[("hscore_shrunk[a=1]", 10)] == pytest.approx(np.median(list(refs.values())))
    assert repr(rows) == repr(_tiny_stability())
    assert set(stability_records(rows)[0]) == set(STABILITY_COLUMNS)


@pytest.mark.slow
def test_desk_shrunk_ratio_monotone_toward_one(desk_stability):
    med = median_ratios(desk_stability)
    sizes = sorted({r.n for r in desk_stability})
    gaps = [abs(med[("hscore_shrunk", n)] - 1.0) for n in sizes]
    inversions = sum(1 for a, b in zip(gaps, gaps[1:]) if b > a)
    assert inversions <= 1, f"|ratio - 1| by n: {dict(zip(sizes, np.round(gaps, 4)))}"


def test_class_count_pathology():
    means = pathology_means(class_count_sweep(draws=20))
    nce = [means[c]["nce"] for c in (2, 8, 32)]
    assert nce[0] > nce[1] > nce[2]
    n_nce = [means[c]["n_nce"] for c in (2, 8, 32)]
    assert max(n_nce) - min(n_nce) < max(nce) - min(nce)


def test_imbalance_pathology():
    rows = imbalance_sweep(draws=20)
    means = pathology_means(rows)
    nce = [means[r]["nce"] for r in (1, 3, 9)]
    assert nce[0] < nce[1] < nce[2] < 0
    by_ratio = {r: np.median([x.n_nce for x in rows if x.setting == r]) for r in (1, 3, 9)}
    assert abs(by_ratio[9] - by_ratio[1]) <= 0.1
    assert set(vars(rows[0])) == set(PATHOLOGY_COLUMNS)


def test_output_formats():
    recs = [{"a": 1, "b": 0.5}, {"a": 2, "b": float("nan")}]
    tsv = to_tsv(recs, ("a", "b"), header="# h")
    assert tsv == "# h\na\tb\n1\t0.5\n2\tnan\n"
    body = json.loads(to_json(recs, header="# h", extra=1))
    assert body["rows"][1]["b"] is None and body["extra"] == 1


def test_header_records_seed_and_threads():
    h = run_header(7, 2, grid="small")
    assert h.startswith("# xferscore ") and "seed=7" in h and "threads=2" in h and "grid=small" in h
