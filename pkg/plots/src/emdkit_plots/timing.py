"""Log-log wall time vs cloud size per method, slopes annotated.

Slopes come from the timing CSV's slope column (fitted by the benchmark
harness), not refitted here.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .io import SchemaError, read_timing


@dataclass
class TimingResult:
    path: Path | None = None
    slope_labels: dict[str, str] = field(default_factory=dict)
    figure: object = None

    def close(self):
        if self.figure is not None:
            plt.close(self.figure)


def plot_timing(timing_csv, out_dir, title: str = "", fmt: str = "svg") -> TimingResult:
    timings = read_timing(timing_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    result = TimingResult()
    for method in sorted(timings):
        data = timings[method]
        order = sorted(range(len(data["N"])), key=lambda i: data["N"][i])
        ns = [data["N"][i] for i in order]
        secs = [data["seconds"][i] for i in order]
        label = f"{method} (slope {data['slope']:.2f})"
        result.slope_labels[method] = label
        ax.plot(ns, secs, marker="o", ms=4, lw=1.5, label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("points per cloud")
    ax.set_ylabel("median seconds")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    result.path = out_dir / f"timing.{fmt}"
    fig.savefig(result.path)
    result.figure = fig
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--timing", required=True, help="timing.csv from bench")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--title", default="")
    parser.add_argument("--format", default="svg", choices=("svg", "pdf", "png"))
    args = parser.parse_args(argv)
    try:
        result = plot_timing(args.timing, args.out_dir, args.title, args.format)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result.path)
    result.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
