"""Adam training loop, checkpointing and per-epoch validation metrics.

Runs are bit-reproducible: parameter init, batch order and every update
are derived from sub-streams of one run seed, and checkpoints serialize
raw parameter bytes, so save -> load -> save is byte-identical and a
resumed run reproduces the uninterrupted one exactly. Wall-clock numbers
appear only in the epoch log, never in checkpoints.
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import Matching, PointCloud, SoftMatching, substream
from ..exact import emd_gradient
from ..metrics import UndefinedCorrelationError, pearson
from .autodiff import Tensor
from .models import (
    DeepEmdConfig,
    DeepEmdModel,
    MlpConfig,
    MlpModel,
    estimate_distance,
    predict_matching,
    surrogate_gradient,
)

__all__ = [
    "BatchingError",
    "AdamState",
    "adam_init",
    "adam_step",
    "TrainConfig",
    "EpochLog",
    "TrainResult",
    "Batch",
    "assemble_batch",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "mlp_input_gradient",
    "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "emdkit-checkpoint-v1"

# Constant learning rates per architecture.
DEFAULT_LR = {"deepemd": 1e-3, "mlp": 1e-4}


class BatchingError(ValueError):
    """A batch mixed cloud cardinalities (batches must be pad-free)."""


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def adam_init(params: dict[str, Tensor]) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; missing gradients count as zero."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    u: np.ndarray  # (B, N, D)
    v: np.ndarray  # (B, N, D)
    assign: np.ndarray  # (B, N)
    distance: np.ndarray  # (B,)


def assemble_batch(records) -> Batch:
    """Stack labeled pairs into dense arrays; cardinalities must agree."""
    sizes = {r.pair.source.n for r in records}
    if len(sizes) != 1:
        raise BatchingError(f"mixed cloud cardinalities in one batch: {sorted(sizes)}")
    return Batch(
        u=np.stack([r.pair.source.points for r in records]),
        v=np.stack([r.pair.target.points for r in records]),
        assign=np.stack([r.matching.assign for r in records]),
        distance=np.array([r.distance for r in records]),
    )


def _epoch_batches(records, batch_size: int, order: np.ndarray) -> list[Batch]:
    # group by cardinality (pad-free batches), preserving the shuffled order
    by_n: dict[int, list] = {}
    for idx in order:
        rec = records[idx]
        by_n.setdefault(rec.pair.source.n, []).append(rec)
    batches = []
    for n in sorted(by_n):
        group = by_n[n]
        for lo in range(0, len(group), batch_size):
            batches.append(assemble_batch(group[lo : lo + batch_size]))
    return batches


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    model: str = "deepemd"  # "mlp" or "deepemd"
    mlp: MlpConfig = field(default_factory=MlpConfig)
    deepemd: DeepEmdConfig = field(default_factory=DeepEmdConfig)
    lr: float | None = None  # None: per-architecture default
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def resolved_lr(self) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[self.model]


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_r: float
    val_cs50: float
    wall_seconds: float


@dataclass
class TrainResult:
    model: object  # final-state model (MlpModel or DeepEmdModel)
    state: AdamState
    logs: list[EpochLog]
    best_params: dict[str, np.ndarray]
    best_epoch: int
    best_val_r: float
    epochs_completed: int


def _new_model(config: TrainConfig):
    rng = substream(config.seed, "init")
    if config.model == "mlp":
        return MlpModel.init(config.mlp, rng)
    if config.model == "deepemd":
        return DeepEmdModel.init(config.deepemd, rng)
    raise ValueError(f"unknown model {config.model!r}")


def mlp_input_gradient(model: MlpModel, u_pts: np.ndarray, v_pts: np.ndarray) -> np.ndarray:
    """d(predicted distance)/d(target points) for one pair, via the tape."""
    dt = model.config.np_dtype()
    vt = Tensor(np.asarray(v_pts, dtype=dt)[None], requires_grad=True)
    pred = model.forward(np.asarray(u_pts, dtype=dt)[None], vt)
    pred.backward()
    return vt.grad[0].astype(np.float64)


def _validate(model, records) -> tuple[float, float]:
    """Held-out Pearson r of predicted distances and median gradient cosine."""
    d_true = []
    d_pred = []
    cosines = []
    for rec in records:
        u, v = rec.pair.source, rec.pair.target
        true_g = emd_gradient(u, v, rec.matching)
        if isinstance(model, DeepEmdModel):
            a_t, a_b = model.fast_forward(u.points, v.points)
            sm = predict_matching(a_t, a_b)
            d_hat = estimate_distance(u, v, sm)
            pred_g = surrogate_gradient(u, v, sm)
        else:
            d_hat = model.fast_forward(u.points, v.points)
            pred_g = mlp_input_gradient(model, u.points, v.points)
        d_true.append(rec.distance)
        d_pred.append(d_hat)
        tn = np.linalg.norm(true_g, axis=1)
        pn = np.linalg.norm(pred_g, axis=1)
        ok = (tn > 0) & (pn > 0)
        if ok.any():
            dots = np.einsum("ij,ij->i", true_g[ok], pred_g[ok])
            cosines.append(dots / (tn[ok] * pn[ok]))
    try:
        val_r = pearson(d_true, d_pred)
    except (UndefinedCorrelationError, ValueError):
        val_r = float("nan")
    val_cs50 = float(np.median(np.concatenate(cosines))) if cosines else float("nan")
    return val_r, val_cs50


def train(
    train_records,
    val_records,
    config: TrainConfig,
    resume_from: str | Path | None = None,
    log_fn=None,
) -> TrainResult:
    """Batched Adam training with per-epoch held-out validation.

    ``resume_from`` restores a last-state checkpoint and continues to
    ``config.epochs`` total epochs, reproducing the uninterrupted run
    bit-exactly (batch order is derived from the epoch index, not from
    mutable RNG state).
    """
    if resume_from is not None:
        model, state, meta = load_checkpoint(resume_from)
        start_epoch = meta["epochs_completed"]
        best_val_r = meta.get("best_val_r")
        best_val_r = float("-inf") if best_val_r is None else best_val_r
        best_epoch = meta.get("best_epoch", -1)
        best_params = {k: p.data.copy() for k, p in model.params.items()}
    else:
        model = _new_model(config)
        state = adam_init(model.params)
        start_epoch = 0
        best_val_r = float("-inf")
        best_epoch = -1
        best_params = {k: p.data.copy() for k, p in model.params.items()}

    lr = config.resolved_lr()
    logs: list[EpochLog] = []
    n_train = len(train_records)
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        order = substream(config.seed, "batches", epoch).permutation(n_train)
        total_loss = 0.0
        for batch in _epoch_batches(train_records, config.batch_size, order):
            if isinstance(model, DeepEmdModel):
                out = model.forward(batch.u, batch.v)
                loss = model.loss(out, batch.assign)
            else:
                pred = model.forward(batch.u, batch.v)
                loss = model.loss(pred, batch.distance)
            for p in model.params.values():
                p.zero_grad()
            loss.backward()
            adam_step(model.params, state, lr)
            total_loss += float(loss.data) * batch.u.shape[0]
        train_loss = total_loss / n_train
        val_r, val_cs50 = _validate(model, val_records)
        entry = EpochLog(
            epoch=epoch,
            train_loss=train_loss,
            val_r=val_r,
            val_cs50=val_cs50,
            wall_seconds=time.perf_counter() - t0,
        )
        logs.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if np.isfinite(val_r) and val_r > best_val_r:
            best_val_r = val_r
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in model.params.items()}

    return TrainResult(
        model=model,
        state=state,
        logs=logs,
        best_params=best_params,
        best_epoch=best_epoch,
        best_val_r=best_val_r,
        epochs_completed=config.epochs,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "dtype": str(arr.dtype),
        "data": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()


def save_checkpoint(
    path: str | Path,
    model,
    state: AdamState | None,
    metadata: dict,
    params_override: dict[str, np.ndarray] | None = None,
):
    """Single-file JSON checkpoint: config, parameters, optimizer, metadata.

    ``params_override`` saves a snapshot (e.g. best-by-validation weights)
    in place of the model's current parameters.
    """
    params = params_override or {k: p.data for k, p in model.params.items()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model": model.kind,
        "config": model.config.to_dict(),
        "params": {k: _encode_array(v) for k, v in params.items()},
        "optimizer": None
        if state is None
        else {
            "step": state.step,
            "m": {k: _encode_array(v) for k, v in state.m.items()},
            "v": {k: _encode_array(v) for k, v in state.v.items()},
        },
        "metadata": metadata,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path):
    """Returns (model, AdamState | None, metadata)."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    from . import autodiff as ad

    params = {k: ad.parameter(_decode_array(v)) for k, v in payload["params"].items()}
    if payload["model"] == "mlp":
        model = MlpModel(MlpConfig.from_dict(payload["config"]), params)
    elif payload["model"] == "deepemd":
        model = DeepEmdModel(DeepEmdConfig.from_dict(payload["config"]), params)
    else:
        raise ValueError(f"unknown model kind {payload['model']!r}")
    state = None
    if payload["optimizer"] is not None:
        state = AdamState(
            step=payload["optimizer"]["step"],
            m={k: _decode_array(v) for k, v in payload["optimizer"]["m"].items()},
            v={k: _decode_array(v) for k, v in payload["optimizer"]["v"].items()},
        )
    return model, state, payload["metadata"]
