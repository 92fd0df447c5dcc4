"""Figures from the real evaluation/benchmark artifacts, when present.

The primary package's acceptance suite caches its report files under
.acceptance_cache; these tests consume them exactly as a user would. They
skip cleanly when the artifacts have not been produced yet.
"""

import json
from pathlib import Path

import pytest

from emdkit_plots.cdf import plot_cdf
from emdkit_plots.scatter import format_correlations, plot_scatter
from emdkit_plots.timing import plot_timing

CACHE = Path(__file__).resolve().parents[2] / ".acceptance_cache"
EVAL = CACHE / "eval"
BENCH = CACHE / "bench"

needs_eval = pytest.mark.skipif(
    not (EVAL / "records.csv").exists(),
    reason="primary acceptance eval artifacts not present",
)
needs_bench = pytest.mark.skipif(
    not (BENCH / "timing.csv").exists(),
    reason="primary acceptance bench artifacts not present",
)


@needs_eval
def test_scatter_per_method_from_pipeline(tmp_path):
    result = plot_scatter(EVAL / "records.csv", EVAL / "summary.json", tmp_path)
    summary = json.loads((EVAL / "summary.json").read_text())
    assert set(result.paths) == {m for m in summary if summary[m].get("n_records")}
    for method, path in result.paths.items():
        assert path.stat().st_size > 0
        assert result.annotations[method] == format_correlations(summary[method])
    result.close()


@needs_eval
def test_cdf_from_pipeline(tmp_path):
    result = plot_cdf(EVAL / "cdf.csv", tmp_path)
    assert result.path.stat().st_size > 0
    assert len(result.methods) >= 2
    result.close()


@needs_bench
def test_timing_from_pipeline(tmp_path):
    result = plot_timing(BENCH / "timing.csv", tmp_path)
    assert result.path.stat().st_size > 0
    assert "exact" in result.slope_labels and "deepemd" in result.slope_labels
    result.close()
