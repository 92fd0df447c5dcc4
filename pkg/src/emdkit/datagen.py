"""Synthetic dataset generation, augmentation and ground-truth labeling.

Syn2D clouds are sampled uniformly on the boundary curves of random circles
and squares (the shapes render as rings/outlines, not filled regions). Pairs
are expanded with five augmentation schemes in a fixed round-robin order so
each scheme contributes exactly 20% of a dataset, then labeled with the
exact solver.

File formats
------------
Cloud file: UTF-8 text, one point per line, whitespace-separated decimal
coordinates; blank lines and ``#`` comments are ignored.

Labeled dataset: one JSON object per line with keys source, target, tag,
distance, matching; a sibling ``manifest.json`` records the generation
parameters. Floats are serialized with full round-trip precision, so a
rebuild under the same seed is byte-identical.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .core import CloudPair, Matching, PointCloud, substream
from .exact import emd

__all__ = [
    "ShapeKind",
    "ShapeSpec",
    "AugScheme",
    "LabeledPair",
    "DatasetManifest",
    "DatasetConfig",
    "DatasetError",
    "random_shape_spec",
    "perturb_shape_spec",
    "sample_shape_cloud",
    "noise_cloud",
    "augment",
    "label_pair",
    "build_dataset",
    "load_clouds",
    "read_cloud_file",
    "write_cloud_file",
    "save_records",
    "load_records",
    "save_manifest",
    "load_manifest",
]


class DatasetError(ValueError):
    """Raised on unreadable/inconsistent dataset inputs, listing offenders."""


class ShapeKind(Enum):
    CIRCLE = "circle"
    SQUARE = "square"


@dataclass(frozen=True)
class ShapeSpec:
    """Parameters of one Syn2D boundary shape.

    Circles: center coordinates in (0, 1], radius in (0, 1]. Squares:
    center in [-0.5, 0.5]^2, rotation in [0, pi/2], side length ("scale")
    in [0.5, 1].
    """

    kind: ShapeKind
    center: tuple[float, float]
    radius: float | None = None
    rotation: float | None = None
    scale: float | None = None

    def __post_init__(self):
        cx, cy = self.center
        if self.kind is ShapeKind.CIRCLE:
            if self.radius is None or not (0.0 < self.radius <= 1.0):
                raise ValueError("circle radius must lie in (0, 1]")
            if not (0.0 < cx <= 1.0 and 0.0 < cy <= 1.0):
                raise ValueError("circle center coordinates must lie in (0, 1]")
        else:
            if self.rotation is None or not (0.0 <= self.rotation <= math.pi / 2):
                raise ValueError("square rotation must lie in [0, pi/2]")
            if self.scale is None or not (0.5 <= self.scale <= 1.0):
                raise ValueError("square scale must lie in [0.5, 1]")
            if not (-0.5 <= cx <= 0.5 and -0.5 <= cy <= 0.5):
                raise ValueError("square center coordinates must lie in [-0.5, 0.5]")


class AugScheme(Enum):
    """The five pair-construction schemes; a dataset holds 20% of each."""

    ORIGINAL = "original"
    NOISE_TARGET = "noise_target"
    ADDITIVE_NOISE = "additive_noise"
    PERTURBED_RESAMPLE = "perturbed_resample"
    CORRUPTED_OTHER = "corrupted_other"


SCHEME_ORDER = tuple(AugScheme)


def random_shape_spec(rng: np.random.Generator) -> ShapeSpec:
    """Draw a circle or square spec uniformly over the parameter ranges."""
    if rng.random() < 0.5:
        # 1 - U[0,1) lands in (0, 1]
        return ShapeSpec(
            kind=ShapeKind.CIRCLE,
            center=(1.0 - rng.random(), 1.0 - rng.random()),
            radius=1.0 - rng.random(),
        )
    return ShapeSpec(
        kind=ShapeKind.SQUARE,
        center=(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)),
        rotation=rng.uniform(0.0, math.pi / 2),
        scale=rng.uniform(0.5, 1.0),
    )


_JITTER = 0.05  # fraction of each parameter's range


def perturb_shape_spec(spec: ShapeSpec, rng: np.random.Generator) -> ShapeSpec:
    """Jitter every parameter by up to +/-5% of its range, clamped."""

    def jitter(value: float, lo: float, hi: float, half_open: bool = False) -> float:
        step = rng.uniform(-_JITTER, _JITTER) * (hi - lo)
        out = min(max(value + step, lo), hi)
        if half_open and out == lo:
            out = math.nextafter(lo, hi)
        return out

    if spec.kind is ShapeKind.CIRCLE:
        return ShapeSpec(
            kind=ShapeKind.CIRCLE,
            center=(
                jitter(spec.center[0], 0.0, 1.0, half_open=True),
                jitter(spec.center[1], 0.0, 1.0, half_open=True),
            ),
            radius=jitter(spec.radius, 0.0, 1.0, half_open=True),
        )
    return ShapeSpec(
        kind=ShapeKind.SQUARE,
        center=(
            jitter(spec.center[0], -0.5, 0.5),
            jitter(spec.center[1], -0.5, 0.5),
        ),
        rotation=jitter(spec.rotation, 0.0, math.pi / 2),
        scale=jitter(spec.scale, 0.5, 1.0),
    )


def sample_shape_cloud(spec: ShapeSpec, n: int, rng: np.random.Generator) -> PointCloud:
    """n points uniform on the shape's boundary curve."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cx, cy = spec.center
    if spec.kind is ShapeKind.CIRCLE:
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        pts = np.stack(
            [cx + spec.radius * np.cos(theta), cy + spec.radius * np.sin(theta)],
            axis=1,
        )
        return PointCloud(pts)
    # walk the square's perimeter: t in [0, 4), one unit per edge
    s = spec.scale
    t = rng.uniform(0.0, 4.0, size=n)
    edge = np.floor(t).astype(int)
    frac = t - edge
    h = s / 2.0
    local = np.empty((n, 2))
    for e, (x0, y0, dx, dy) in enumerate(
        [(-h, -h, s, 0.0), (h, -h, 0.0, s), (h, h, -s, 0.0), (-h, h, 0.0, -s)]
    ):
        mask = edge == e
        local[mask, 0] = x0 + dx * frac[mask]
        local[mask, 1] = y0 + dy * frac[mask]
    c, sn = math.cos(spec.rotation), math.sin(spec.rotation)
    rot = np.array([[c, -sn], [sn, c]])
    return PointCloud(local @ rot.T + np.array([cx, cy]))


def noise_cloud(n: int, d: int, rng: np.random.Generator) -> PointCloud:
    """n i.i.d. standard-normal points, all scaled by one draw sigma~U(0.1, 1.1)."""
    pts = rng.standard_normal((n, d))
    sigma = rng.uniform(0.1, 1.1)
    return PointCloud(pts * sigma)


def augment(
    u: PointCloud,
    v: PointCloud,
    scheme: AugScheme,
    rng: np.random.Generator,
    *,
    u_spec: ShapeSpec | None = None,
    u_pool: np.ndarray | None = None,
) -> CloudPair:
    """Build one (source, target) pair under the given scheme.

    PERTURBED_RESAMPLE needs to know where the source came from: either the
    shape spec that generated it (Syn2D; the target is resampled from a
    perturbed spec) or the full point pool of the source file (the target
    is an independent subsample). Both variants then add a noise cloud.
    """
    n, d = u.n, u.d
    if scheme is AugScheme.ORIGINAL:
        return CloudPair(u, v, tag=scheme.value)
    if scheme is AugScheme.NOISE_TARGET:
        return CloudPair(u, noise_cloud(n, d, rng), tag=scheme.value)
    if scheme is AugScheme.ADDITIVE_NOISE:
        target = PointCloud(u.points + noise_cloud(n, d, rng).points)
        return CloudPair(u, target, tag=scheme.value)
    if scheme is AugScheme.PERTURBED_RESAMPLE:
        if u_spec is not None:
            resampled = sample_shape_cloud(perturb_shape_spec(u_spec, rng), n, rng)
        elif u_pool is not None:
            resampled = _subsample(u_pool, n, rng)
        else:
            raise ValueError(
                "PERTURBED_RESAMPLE requires u_spec (Syn2D) or u_pool (file data)"
            )
        target = PointCloud(resampled.points + noise_cloud(n, d, rng).points)
        return CloudPair(u, target, tag=scheme.value)
    if scheme is AugScheme.CORRUPTED_OTHER:
        target = PointCloud(v.points + noise_cloud(n, d, rng).points)
        return CloudPair(u, target, tag=scheme.value)
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class LabeledPair:
    """A cloud pair with its exact distance and optimal matching."""

    pair: CloudPair
    distance: float
    matching: Matching

    def check(self, tol: float = 1e-9):
        """Verify the label: distance must equal the matched-cost sum."""
        diff = self.pair.source.points - self.pair.target.points[self.matching.assign]
        total = float(np.linalg.norm(diff, axis=1).sum())
        if not math.isclose(total, self.distance, rel_tol=tol, abs_tol=tol):
            raise DatasetError(
                f"label mismatch: recorded {self.distance}, recomputed {total}"
            )


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    counts: dict[str, int]
    n_points: int
    dim: int
    scheme_proportions: dict[str, float]
    source: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "counts": self.counts,
                "n_points": self.n_points,
                "dim": self.dim,
                "scheme_proportions": self.scheme_proportions,
                "source": self.source,
            },
            sort_keys=True,
            indent=2,
        )


@dataclass(frozen=True)
class DatasetConfig:
    """What to generate: source, cloud size, and per-split pair counts.

    The default cloud size matches the synthetic source's native 200
    points; desk-scale presets (the CLI defaults) use 16 or 64.
    """

    source: str = "syn2d"  # "syn2d" or "files:<directory>"
    n_points: int = 200
    counts: dict[str, int] = field(default_factory=lambda: {"train": 100})
    seed: int = 0
    threads: int = 1


def label_pair(pair: CloudPair) -> LabeledPair:
    """Attach the exact EMD and optimal matching to a pair."""
    result = emd(pair.source, pair.target)
    return LabeledPair(pair=pair, distance=result.distance, matching=result.matching)


def _subsample(pool: np.ndarray, n: int, rng: np.random.Generator) -> PointCloud:
    if pool.shape[0] < n:
        raise DatasetError(f"pool of {pool.shape[0]} points cannot supply {n}")
    if pool.shape[0] == n:
        return PointCloud(pool)
    idx = np.sort(rng.choice(pool.shape[0], size=n, replace=False))
    return PointCloud(pool[idx])


def _generate_pairs(
    config: DatasetConfig, split: str, pools: list[np.ndarray] | None
) -> list[CloudPair]:
    rng = substream(config.seed, "datagen", split)
    n = config.n_points
    pairs = []
    for k in range(config.counts[split]):
        scheme = SCHEME_ORDER[k % len(SCHEME_ORDER)]
        if pools is None:
            spec_u = random_shape_spec(rng)
            u = sample_shape_cloud(spec_u, n, rng)
            v = sample_shape_cloud(random_shape_spec(rng), n, rng)
            pairs.append(augment(u, v, scheme, rng, u_spec=spec_u))
        else:
            pool_u = pools[rng.integers(len(pools))]
            pool_v = pools[rng.integers(len(pools))]
            u = _subsample(pool_u, n, rng)
            v = _subsample(pool_v, n, rng)
            pairs.append(augment(u, v, scheme, rng, u_pool=pool_u))
    return pairs


def build_dataset(
    config: DatasetConfig,
) -> tuple[dict[str, list[LabeledPair]], DatasetManifest]:
    """Generate, augment and label every split of a dataset.

    Generation is sequential per seed sub-stream; labeling distributes
    pairs over ``config.threads`` workers with order preserved, so the
    output is identical for any worker count.
    """
    pools = None
    dim = 2
    if config.source.startswith("files:"):
        directory = config.source.split(":", 1)[1]
        clouds = load_clouds(directory, n=None)
        pools = [c.points for c in clouds]
        dim = pools[0].shape[1]
    elif config.source != "syn2d":
        raise DatasetError(f"unknown source {config.source!r}")

    splits: dict[str, list[LabeledPair]] = {}
    for split in config.counts:
        pairs = _generate_pairs(config, split, pools)
        if config.threads > 1:
            with ProcessPoolExecutor(max_workers=config.threads) as pool:
                labeled = list(pool.map(label_pair, pairs, chunksize=16))
        else:
            labeled = [label_pair(p) for p in pairs]
        splits[split] = labeled

    total = sum(config.counts.values())
    proportions = {
        scheme.value: sum(
            sum(1 for r in records if r.pair.tag == scheme.value)
            for records in splits.values()
        )
        / total
        for scheme in SCHEME_ORDER
    }
    manifest = DatasetManifest(
        seed=config.seed,
        counts=dict(config.counts),
        n_points=config.n_points,
        dim=dim,
        scheme_proportions=proportions,
        source=config.source,
    )
    return splits, manifest


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def read_cloud_file(path: str | Path) -> PointCloud:
    """Parse one text cloud file (whitespace-separated coordinates)."""
    rows = []
    dim = None
    errors = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            row = [float(x) for x in fields]
        except ValueError:
            errors.append(f"{path}:{lineno}: malformed line {raw!r}")
            continue
        if dim is None:
            dim = len(row)
        elif len(row) != dim:
            errors.append(
                f"{path}:{lineno}: expected {dim} coordinates, got {len(row)}"
            )
            continue
        rows.append(row)
    if errors:
        raise DatasetError("; ".join(errors))
    if not rows:
        raise DatasetError(f"{path}: no points found")
    try:
        return PointCloud(np.array(rows))
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def write_cloud_file(path: str | Path, cloud: PointCloud):
    """Write a cloud in the text format at full round-trip precision."""
    lines = [" ".join(repr(x) for x in row) for row in cloud.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_clouds(
    path: str | Path, n: int | None, rng: np.random.Generator | None = None
) -> list[PointCloud]:
    """Read every cloud file in a directory, subsampling each to n points.

    Files with more than n points are uniformly subsampled without
    replacement; files with fewer raise. ``n=None`` loads full clouds.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise DatasetError(f"{path} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.is_file())
    if not files:
        raise DatasetError(f"{path} contains no cloud files")
    clouds = []
    errors = []
    for f in files:
        try:
            cloud = read_cloud_file(f)
            if n is not None:
                if cloud.n < n:
                    raise DatasetError(f"{f}: has {cloud.n} points, need {n}")
                if rng is None:
                    raise ValueError("rng is required when subsampling")
                cloud = _subsample(cloud.points, n, rng)
            clouds.append(cloud)
        except DatasetError as exc:
            errors.append(str(exc))
    if errors:
        raise DatasetError("; ".join(errors))
    dims = {c.d for c in clouds}
    if len(dims) > 1:
        raise DatasetError(f"inconsistent dimensions across files: {sorted(dims)}")
    return clouds


def _record_to_json(record: LabeledPair) -> str:
    return json.dumps(
        {
            "source": record.pair.source.points.tolist(),
            "target": record.pair.target.points.tolist(),
            "tag": record.pair.tag,
            "distance": record.distance,
            "matching": record.matching.assign.tolist(),
        },
        sort_keys=True,
    )


def save_records(path: str | Path, records: list[LabeledPair]):
    lines = [_record_to_json(r) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_records(path: str | Path, validate: bool = True) -> list[LabeledPair]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            record = LabeledPair(
                pair=CloudPair(
                    PointCloud(np.array(obj["source"])),
                    PointCloud(np.array(obj["target"])),
                    tag=obj["tag"],
                ),
                distance=float(obj["distance"]),
                matching=Matching(np.array(obj["matching"])),
            )
            if validate:
                record.check()
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: bad record ({exc})") from exc
        records.append(record)
    return records


def save_manifest(path: str | Path, manifest: DatasetManifest):
    Path(path).write_text(manifest.to_json() + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    obj = json.loads(Path(path).read_text())
    return DatasetManifest(
        seed=obj["seed"],
        counts=dict(obj["counts"]),
        n_points=obj["n_points"],
        dim=obj["dim"],
        scheme_proportions=dict(obj["scheme_proportions"]),
        source=obj["source"],
    )
