"""Cosine-similarity CDF curves, one per method, over [-1, 1]."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .io import SchemaError, read_cdf


@dataclass
class CdfResult:
    path: Path | None = None
    methods: list[str] = field(default_factory=list)
    figure: object = None

    def close(self):
        if self.figure is not None:
            plt.close(self.figure)


def plot_cdf(cdf_csv, out_dir, title: str = "", fmt: str = "svg") -> CdfResult:
    curves = read_cdf(cdf_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    result = CdfResult(methods=sorted(curves))
    for method in result.methods:
        thresholds, fractions = curves[method]
        ax.plot(thresholds, fractions, lw=1.5, label=method)
    ax.set_xlim(-1.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("cumulative fraction")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", frameon=False)
    fig.tight_layout()
    result.path = out_dir / f"cdf.{fmt}"
    fig.savefig(result.path)
    result.figure = fig
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cdf", required=True, help="cdf.csv from eval")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--title", default="")
    parser.add_argument("--format", default="svg", choices=("svg", "pdf", "png"))
    args = parser.parse_args(argv)
    try:
        result = plot_cdf(args.cdf, args.out_dir, args.title, args.format)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result.path)
    result.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
