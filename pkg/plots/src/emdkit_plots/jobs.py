"""Figure jobs: one record naming the inputs, kind and destination."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .cdf import plot_cdf
from .scatter import plot_scatter
from .timing import plot_timing

KINDS = ("scatter", "cdf", "timing")

# input keys each kind requires
_REQUIRED = {
    "scatter": ("records", "summary"),
    "cdf": ("cdf",),
    "timing": ("timing",),
}


@dataclass(frozen=True)
class FigureJob:
    """What to draw: figure kind, input report paths, output directory."""

    kind: str
    inputs: dict[str, Path] = field(default_factory=dict)
    out_dir: Path = Path(".")
    title: str = ""
    fmt: str = "svg"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.inputs]
        if missing:
            raise ValueError(f"{self.kind} job is missing inputs: {missing}")


def render(job: FigureJob):
    """Dispatch a job to its figure function; returns that function's result."""
    if job.kind == "scatter":
        return plot_scatter(
            job.inputs["records"], job.inputs["summary"], job.out_dir, job.title, job.fmt
        )
    if job.kind == "cdf":
        return plot_cdf(job.inputs["cdf"], job.out_dir, job.title, job.fmt)
    return plot_timing(job.inputs["timing"], job.out_dir, job.title, job.fmt)
