"""True-vs-predicted distance scatter, one figure per method.

Correlation annotations are read from the evaluation summary JSON and never
recomputed here, so the figures cannot disagree with the written report.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .io import SchemaError, read_records, read_summary


@dataclass
class ScatterResult:
    paths: dict[str, Path] = field(default_factory=dict)
    annotations: dict[str, str] = field(default_factory=dict)
    figures: dict = field(default_factory=dict)

    def close(self):
        for fig in self.figures.values():
            plt.close(fig)


def format_correlations(summary_row: dict) -> str:
    parts = []
    for key, symbol in (("r", "r"), ("rho", "rho"), ("tau", "tau")):
        value = summary_row.get(key)
        parts.append(f"{symbol}={value:.4f}" if value is not None else f"{symbol}=n/a")
    return "  ".join(parts)


def plot_scatter(
    records_csv, summary_json, out_dir, title: str = "", fmt: str = "svg"
) -> ScatterResult:
    records = read_records(records_csv)
    summary = read_summary(summary_json)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ScatterResult()
    for method, data in records.items():
        fig, ax = plt.subplots(figsize=(4.2, 4.2))
        ax.scatter(data["d_true"], data["d_pred"], s=12, alpha=0.6, edgecolors="none")
        lo = min(min(data["d_true"]), min(data["d_pred"]))
        hi = max(max(data["d_true"]), max(data["d_pred"]))
        pad = 0.02 * (hi - lo or 1.0)
        ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=1, label="y = x")
        annotation = format_correlations(summary.get(method, {}))
        ax.set_title(f"{title + ' ' if title else ''}{method}\n{annotation}")
        ax.set_xlabel("true distance")
        ax.set_ylabel("predicted distance")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        safe = method.replace("@", "_at_")
        path = out_dir / f"scatter_{safe}.{fmt}"
        fig.savefig(path)
        result.paths[method] = path
        result.annotations[method] = annotation
        result.figures[method] = fig
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--records", required=True, help="records.csv from eval")
    parser.add_argument("--summary", required=True, help="summary.json from eval")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--title", default="")
    parser.add_argument("--format", default="svg", choices=("svg", "pdf", "png"))
    args = parser.parse_args(argv)
    try:
        result = plot_scatter(
            args.records, args.summary, args.out_dir, args.title, args.format
        )
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for method, path in result.paths.items():
        print(f"{method}: {path}")
    result.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
