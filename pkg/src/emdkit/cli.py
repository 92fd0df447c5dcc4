"""Command-line entry point: gen / train / eval / bench / descend.

Every subcommand is deterministic under --seed: rerunning writes
byte-identical primary outputs. Wall-clock numbers are confined to the
epoch log's wall_seconds column and the bench timings, which are the
explicitly timing-valued artifacts.

Configuration precedence: command-line flags override an optional
key=value config file, which overrides built-in defaults. The effective
configuration is dumped to <out>/config.json on every run.

Exit codes: 0 success, 2 usage/configuration error, 3 runtime numerical
failure (e.g. every Sinkhorn pair failed).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .approx import relative_lambda, sinkhorn
from .core import PointCloud, pairwise_cost, substream
from .datagen import (
    DatasetConfig,
    DatasetError,
    build_dataset,
    load_manifest,
    load_records,
    save_manifest,
    save_records,
)
from .evaluate import SinkhornOpts, parse_method, run_eval
from .exact import emd, hungarian
from .metrics import bench, write_cdf_csv, write_records_csv, write_summary_json, write_timing_csv
from .nn.models import (
    DeepEmdConfig,
    DeepEmdModel,
    MlpConfig,
    MlpModel,
    estimate_distance,
    predict_matching,
    surrogate_gradient,
)
from .nn.training import TrainConfig, load_checkpoint, save_checkpoint, train

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _default_threads() -> int:
    env = os.environ.get("EMDKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"EMDKIT_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


# built-in defaults per subcommand; flags > config file > these
_COMMAND_DEFAULTS: dict[str, dict] = {
    "gen": {
        "source": "syn2d", "pairs": "100", "val_pairs": "0", "points": "64",
        "seed": "0", "out": "out/gen",
    },
    "train": {
        "model": "deepemd", "layers": "8", "heads": "6", "dmodel": "78",
        "epochs": "20", "batch": "32", "seed": "0", "out": "out/train",
        "data": "out/gen",
    },
    "eval": {
        "methods": "exact,chamfer,sinkhorn", "iters": "100", "lam": "0.1",
        "pairs": "50", "points": "64", "seed": "0", "out": "out/eval",
    },
    "bench": {
        "methods": "exact,deepemd", "Ns": "128,256,512", "trials": "5",
        "iters": "100", "lam": "0.1", "layers": "8", "heads": "6", "dmodel": "78",
        "seed": "0", "out": "out/bench",
    },
    "descend": {
        "steps": "100", "lr": "0.01", "pairs": "20", "oracle": False,
        "seed": "0", "out": "out/descend", "data": "out/gen",
    },
}


def _apply_config_file(args: argparse.Namespace, command: str):
    """Resolve each option: explicit flag, then config file, then default."""
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_values.items():
        if not hasattr(args, key):
            raise UsageError(f"unknown config key {key!r} for {command}")
        if getattr(args, key) is None:
            default = _COMMAND_DEFAULTS.get(command, {}).get(key)
            if isinstance(default, bool):
                setattr(args, key, raw.lower() in ("1", "true", "yes"))
            else:
                setattr(args, key, raw)
    for key, value in _COMMAND_DEFAULTS.get(command, {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _dump_effective_config(out_dir: Path, command: str, args: argparse.Namespace):
    payload = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")
    }
    payload["command"] = command
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n"
    )


def _positive_int(name: str, value) -> int:
    value = int(value)
    if value <= 0:
        raise UsageError(f"--{name} must be a positive integer")
    return value


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x]


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    pairs = _positive_int("pairs", args.pairs)
    points = _positive_int("points", args.points)
    val_pairs = int(args.val_pairs)
    if val_pairs < 0:
        raise UsageError("--val-pairs must be >= 0")
    counts = {"train": pairs}
    if val_pairs:
        counts["val"] = val_pairs
    source = str(args.source)
    if not (source == "syn2d" or source.startswith("files:")):
        raise UsageError(f"--source must be syn2d or files:<dir>, got {source!r}")
    config = DatasetConfig(
        source=source,
        n_points=points,
        counts=counts,
        seed=int(args.seed),
        threads=int(args.threads),
    )
    out_dir = Path(args.out)
    _dump_effective_config(out_dir, "gen", args)
    try:
        splits, manifest = build_dataset(config)
    except DatasetError as exc:
        raise UsageError(str(exc))
    for split, records in splits.items():
        save_records(out_dir / f"{split}.jsonl", records)
    save_manifest(out_dir / "manifest.json", manifest)
    print(f"wrote {sum(manifest.counts.values())} pairs to {out_dir}")
    print(manifest.to_json())
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _model_configs(args, dim: int) -> tuple[MlpConfig, DeepEmdConfig]:
    mlp = MlpConfig(in_dim=dim)
    deepemd = DeepEmdConfig(
        in_dim=dim,
        layers=_positive_int("layers", args.layers),
        heads=_positive_int("heads", args.heads),
        d_model=_positive_int("dmodel", args.dmodel),
    )
    return mlp, deepemd


def _load_train_val(data_dir: Path):
    train_path = data_dir / "train.jsonl"
    if not train_path.exists():
        raise UsageError(f"missing dataset file {train_path}")
    train_records = load_records(train_path)
    val_path = data_dir / "val.jsonl"
    if val_path.exists():
        val_records = load_records(val_path)
    else:
        # hold out the tail so every run still logs validation metrics
        held = max(1, len(train_records) // 10)
        val_records = train_records[-held:]
        train_records = train_records[:-held]
        if not train_records:
            raise UsageError("dataset too small to split for validation")
    return train_records, val_records


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    train_records, val_records = _load_train_val(data_dir)
    dim = train_records[0].pair.source.d
    mlp_cfg, deepemd_cfg = _model_configs(args, dim)
    if args.model not in ("mlp", "deepemd"):
        raise UsageError(f"--model must be mlp or deepemd, got {args.model!r}")
    config = TrainConfig(
        model=args.model,
        mlp=mlp_cfg,
        deepemd=deepemd_cfg,
        lr=float(args.lr) if args.lr is not None else None,
        epochs=_positive_int("epochs", args.epochs),
        batch_size=_positive_int("batch", args.batch),
        seed=int(args.seed),
    )
    out_dir = Path(args.out)
    _dump_effective_config(out_dir, "train", args)

    manifest_path = data_dir / "manifest.json"
    manifest_hash = None
    if manifest_path.exists():
        import hashlib

        manifest_hash = hashlib.sha256(manifest_path.read_bytes()).hexdigest()

    if args.resume and not Path(args.resume).exists():
        raise UsageError(f"resume checkpoint {args.resume} does not exist")

    def log_epoch(entry):
        print(
            f"epoch {entry.epoch}: loss={entry.train_loss:.6f} "
            f"val_r={entry.val_r:.4f} val_cs50={entry.val_cs50:.4f} "
            f"({entry.wall_seconds:.1f}s)",
            flush=True,
        )

    result = train(
        train_records, val_records, config,
        resume_from=args.resume, log_fn=log_epoch,
    )
    print(f"model parameters: {result.model.param_count()}")

    metadata = {
        "seed": config.seed,
        "epochs_completed": result.epochs_completed,
        "best_epoch": result.best_epoch,
        "best_val_r": result.best_val_r,
        "dataset_manifest_sha256": manifest_hash,
    }
    save_checkpoint(
        out_dir / "checkpoint.json", result.model, result.state, metadata,
        params_override=result.best_params,
    )
    save_checkpoint(out_dir / "last.json", result.model, result.state, metadata)
    with open(out_dir / "epochs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_r", "val_cs50", "wall_seconds"])
        for entry in result.logs:
            writer.writerow(
                [
                    entry.epoch,
                    repr(entry.train_loss),
                    repr(entry.val_r),
                    repr(entry.val_cs50),
                    repr(entry.wall_seconds),
                ]
            )
    print(f"best epoch {result.best_epoch} (val_r={result.best_val_r:.4f})")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_model_for(method: str, args):
    path = args.deepemd_ckpt if method == "deepemd" else args.mlp_ckpt
    if not path:
        raise UsageError(f"method {method} needs --{method}-ckpt")
    model, _, _ = load_checkpoint(path)
    expected = {"deepemd": DeepEmdModel, "mlp": MlpModel}[method]
    if not isinstance(model, expected):
        raise UsageError(f"checkpoint {path} holds a {model.kind} model, not {method}")
    return model


def _eval_records(args):
    if args.data:
        val_path = Path(args.data) / "val.jsonl"
        if val_path.exists():
            return load_records(val_path)
        return load_records(Path(args.data) / "train.jsonl")
    if not args.source:
        raise UsageError("eval needs --data or --source")
    pairs = _positive_int("pairs", args.pairs)
    points = _positive_int("points", args.points)
    config = DatasetConfig(
        source=str(args.source),
        n_points=points,
        counts={"eval": pairs},
        seed=int(args.seed),
        threads=int(args.threads),
    )
    splits, _ = build_dataset(config)
    return splits["eval"]


def cmd_eval(args) -> int:
    entries = [m for m in str(args.methods).split(",") if m]
    opts = SinkhornOpts(
        iters=_positive_int("iters", args.iters),
        lam_mult=float(args.lam),
        lam_abs=float(args.lam_abs) if args.lam_abs is not None else None,
    )
    try:
        parsed = [parse_method(entry, opts) for entry in entries]
    except ValueError as exc:
        raise UsageError(str(exc))
    records = _eval_records(args)
    dim = records[0].pair.source.d

    models = {}
    for method, _ in parsed:
        if method in ("mlp", "deepemd") and method not in models:
            model = _load_model_for(method, args)
            if model.config.in_dim != dim:
                raise UsageError(
                    f"checkpoint expects dimension {model.config.in_dim}, "
                    f"dataset has {dim}"
                )
            models[method] = model

    out_dir = Path(args.out)
    _dump_effective_config(out_dir, "eval", args)
    report = run_eval(records, entries, sinkhorn_opts=opts, models=models)

    all_records = [r for label in report.records.values() for r in label]
    write_records_csv(out_dir / "records.csv", all_records)
    write_summary_json(out_dir / "summary.json", report.summaries)
    write_cdf_csv(out_dir / "cdf.csv", report.cdfs)
    for label, summary in report.summaries.items():
        brief = {
            k: summary.get(k) for k in ("r", "rho", "tau", "re_0.5", "cs_0.5", "accuracy")
        }
        print(f"{label}: " + json.dumps(brief, sort_keys=True))
    for label, summary in report.summaries.items():
        if summary.get("n_records", 0) == 0:
            raise NumericalFailure(
                f"method {label} produced no usable records "
                f"({summary.get('failures', 0)} failures)"
            )
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_methods(args) -> dict:
    names = [m for m in str(args.methods).split(",") if m]
    sink_iters = _positive_int("iters", args.iters)
    lam_mult = float(args.lam)

    def exact_fn(u, v):
        c = pairwise_cost(PointCloud(u), PointCloud(v))
        return hungarian(c).cost

    def chamfer_fn(u, v):
        from .approx import chamfer as chamfer_op

        return chamfer_op(PointCloud(u), PointCloud(v)).distance

    def make_sinkhorn_fn(iters):
        def sinkhorn_fn(u, v):
            c = pairwise_cost(PointCloud(u), PointCloud(v))
            return sinkhorn(c, lam=relative_lambda(c.c, lam_mult), max_iters=iters)

        return sinkhorn_fn

    methods = {}
    for name in names:
        if name == "exact":
            methods["exact"] = exact_fn
        elif name == "chamfer":
            methods["chamfer"] = chamfer_fn
        elif name == "sinkhorn" or name.startswith("sinkhorn@"):
            iters = sink_iters
            if "@" in name:
                try:
                    iters = int(name.split("@", 1)[1])
                except ValueError:
                    raise UsageError(f"bad sinkhorn iteration count in {name!r}")
                if iters < 1:
                    raise UsageError("sinkhorn iteration count must be positive")
            methods[f"sinkhorn@{iters}"] = make_sinkhorn_fn(iters)
        elif name == "deepemd":
            if args.deepemd_ckpt:
                model, _, _ = load_checkpoint(args.deepemd_ckpt)
                if not isinstance(model, DeepEmdModel):
                    raise UsageError("--deepemd-ckpt does not hold a deepemd model")
            else:
                cfg = DeepEmdConfig(
                    layers=_positive_int("layers", args.layers),
                    heads=_positive_int("heads", args.heads),
                    d_model=_positive_int("dmodel", args.dmodel),
                )
                model = DeepEmdModel.init(cfg, substream(int(args.seed), "bench-init"))
            methods["deepemd"] = (
                lambda u, v, _m=model: _m.fast_forward(
                    u.astype(np.float32), v.astype(np.float32)
                )
            )
        elif name == "mlp":
            if args.mlp_ckpt:
                model, _, _ = load_checkpoint(args.mlp_ckpt)
            else:
                model = MlpModel.init(MlpConfig(), substream(int(args.seed), "bench-init"))
            methods["mlp"] = (
                lambda u, v, _m=model: _m.fast_forward(
                    u.astype(np.float32), v.astype(np.float32)
                )
            )
        else:
            raise UsageError(f"unknown bench method {name!r}")
    return methods


def cmd_bench(args) -> int:
    Ns = _parse_int_list(args.Ns)
    if not Ns or any(n <= 0 for n in Ns):
        raise UsageError("--Ns must be a comma list of positive integers")
    trials = _positive_int("trials", args.trials)
    if trials < 3:
        raise UsageError("--trials must be >= 3")
    methods = _bench_methods(args)
    out_dir = Path(args.out)
    _dump_effective_config(out_dir, "bench", args)
    samples, slopes = bench(methods, Ns, trials, int(args.seed))
    write_timing_csv(out_dir / "timing.csv", samples, slopes)
    by_method = {}
    for s in samples:
        by_method.setdefault(s.method, {})[s.n] = s.seconds
    for name, per_n in by_method.items():
        times = " ".join(f"N={n}:{t:.4f}s" for n, t in sorted(per_n.items()))
        print(f"{name}: {times} slope={slopes[name]:.2f}")
    if "exact" in by_method and "deepemd" in by_method:
        n_max = max(Ns)
        ratio = by_method["exact"][n_max] / by_method["deepemd"][n_max]
        print(f"deepemd forward is {ratio:.1f}x faster than exact at N={n_max}")
    return 0


# ---------------------------------------------------------------------------
# descend
# ---------------------------------------------------------------------------


def cmd_descend(args) -> int:
    val_path = Path(args.data) / "val.jsonl"
    if val_path.exists():
        records = load_records(val_path)
    else:
        records = load_records(Path(args.data) / "train.jsonl")
    n_pairs = _positive_int("pairs", args.pairs)
    records = records[:n_pairs]
    steps = int(args.steps)
    if steps < 0:
        raise UsageError("--steps must be >= 0")
    lr = float(args.lr)
    oracle = bool(args.oracle)
    model = None
    if not oracle:
        if not args.deepemd_ckpt:
            raise UsageError("descend needs --deepemd-ckpt (or --oracle)")
        model, _, _ = load_checkpoint(args.deepemd_ckpt)
        if not isinstance(model, DeepEmdModel):
            raise UsageError("--deepemd-ckpt does not hold a deepemd model")

    out_dir = Path(args.out)
    _dump_effective_config(out_dir, "descend", args)
    rows = []
    finals = []
    for pair_id, rec in enumerate(records):
        u = rec.pair.source
        v = rec.pair.target
        for step in range(steps + 1):
            res = emd(u, v)
            if oracle:
                from .core import SoftMatching

                sm = SoftMatching(res.matching.assign, res.matching.inverse().assign)
            else:
                a_t, a_b = model.fast_forward(u.points, v.points)
                sm = predict_matching(a_t, a_b)
            d_hat = estimate_distance(u, v, sm)
            rows.append((pair_id, step, res.distance, d_hat))
            if step < steps:
                v = PointCloud(v.points - lr * surrogate_gradient(u, v, sm))
        finals.append((rows[-1][2], rec.distance))
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "step", "true_emd", "d_hat"])
        for row in rows:
            writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
    improved = sum(1 for final, initial in finals if final < initial)
    print(f"improved {improved}/{len(finals)} pairs over {steps} steps")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", default=None, help="run seed (default 0)")
    p.add_argument("--threads", default=None, help="worker pool size")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emdkit",
        description="Point-cloud optimal transport: exact, classical and learned.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate and label a dataset")
    _add_common(p)
    p.add_argument("--source", default=None, help="syn2d or files:<dir>")
    p.add_argument("--pairs", default=None, help="training pairs")
    p.add_argument("--val-pairs", dest="val_pairs", default=None)
    p.add_argument("--points", default=None, help="points per cloud")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a labeled dataset")
    _add_common(p)
    p.add_argument("--data", default=None, help="dataset directory from gen")
    p.add_argument("--model", default=None, help="mlp or deepemd")
    p.add_argument("--layers", default=None)
    p.add_argument("--heads", default=None)
    p.add_argument("--dmodel", default=None)
    p.add_argument("--lr", default=None, help="default: 1e-3 deepemd, 1e-4 mlp")
    p.add_argument("--epochs", default=None)
    p.add_argument("--batch", default=None)
    p.add_argument("--resume", default=None, help="continue from a last.json checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate methods against exact labels")
    _add_common(p)
    p.add_argument("--data", default=None, help="dataset directory (uses val split)")
    p.add_argument("--source", default=None, help="generate pairs instead: syn2d")
    p.add_argument("--pairs", default=None)
    p.add_argument("--points", default=None)
    p.add_argument("--methods", default=None)
    p.add_argument("--iters", default=None, help="sinkhorn iterations")
    p.add_argument("--lambda", dest="lam", default=None, help="sinkhorn relative multiplier")
    p.add_argument("--lambda-abs", dest="lam_abs", default=None, help="absolute lambda")
    p.add_argument("--mlp-ckpt", dest="mlp_ckpt", default=None)
    p.add_argument("--deepemd-ckpt", dest="deepemd_ckpt", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="wall-clock scaling benchmark")
    _add_common(p)
    p.add_argument("--methods", default=None)
    p.add_argument("--Ns", default=None, help="comma list of sizes")
    p.add_argument("--trials", default=None)
    p.add_argument("--iters", default=None, help="sinkhorn iterations")
    p.add_argument("--lambda", dest="lam", default=None)
    p.add_argument("--layers", default=None)
    p.add_argument("--heads", default=None)
    p.add_argument("--dmodel", default=None)
    p.add_argument("--mlp-ckpt", dest="mlp_ckpt", default=None)
    p.add_argument("--deepemd-ckpt", dest="deepemd_ckpt", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("descend", help="gradient descent on the target cloud")
    _add_common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--deepemd-ckpt", dest="deepemd_ckpt", default=None)
    p.add_argument("--steps", default=None)
    p.add_argument("--lr", default=None)
    p.add_argument("--pairs", default=None)
    p.add_argument("--oracle", action="store_true", default=None,
                   help="use the exact matching instead of the model")
    p.set_defaults(func=cmd_descend)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, args.command)
        if args.threads is None:
            args.threads = _default_threads()
        args.threads = int(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
