import csv
import json

import numpy as np
import pytest


@pytest.fixture
def eval_fixture(tmp_path):
    """Tiny schema-conformant eval outputs: records.csv + summary.json + cdf.csv."""
    rng = np.random.default_rng(7)
    records = tmp_path / "records.csv"
    with open(records, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "method", "d_true", "d_pred"])
        for i in range(3):
            d = float(rng.random() + 0.5)
            writer.writerow([i, "exact", repr(d), repr(d)])
            writer.writerow([i, "chamfer", repr(d), repr(d * 1.1)])

    summary = tmp_path / "summary.json"
    summary.write_text(
        json.dumps(
            {
                "exact": {"r": 1.0, "rho": 1.0, "tau": 1.0},
                "chamfer": {"r": 0.981234, "rho": 0.95, "tau": 0.9},
            }
        )
    )

    cdf = tmp_path / "cdf.csv"
    thresholds = np.linspace(-1, 1, 201)
    with open(cdf, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "threshold", "cumulative_fraction"])
        for t in thresholds:
            writer.writerow(["exact", repr(float(t)), repr(1.0 if t >= 1.0 else 0.0)])
        for t in thresholds:
            writer.writerow(["chamfer", repr(float(t)), repr(float((t + 1) / 2))])
    return {"records": records, "summary": summary, "cdf": cdf, "dir": tmp_path}


@pytest.fixture
def timing_fixture(tmp_path):
    timing = tmp_path / "timing.csv"
    with open(timing, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "N", "median_seconds", "trials", "slope"])
        for n, t in ((128, 0.02), (256, 0.15), (512, 1.2)):
            writer.writerow(["exact", n, repr(t), 5, repr(2.95)])
        for n, t in ((128, 0.008), (256, 0.02), (512, 0.07)):
            writer.writerow(["deepemd", n, repr(t), 5, repr(1.56)])
    return timing
