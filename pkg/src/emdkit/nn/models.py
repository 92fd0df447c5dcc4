"""The two learned EMD approximators.

- An MLP regressor: per-point backbone summed into a cloud embedding, then
  a symmetric head h(e_u ++ e_v) + h(e_v ++ e_u) predicting the distance
  directly, trained with mean-squared error.

- An attention matcher ("deepemd"): both clouds are concatenated into one
  token sequence, tagged with a learned per-cloud group embedding, run
  through a stack of full-attention encoder layers, and a final single-head
  attention layer whose raw score matrix is the output. The top-right and
  bottom-left N x N blocks are logits over matching partners; training
  minimises row-wise cross-entropy against the ground-truth permutation.

Attention logits are divided by d_k exactly (not sqrt(d_k)); set
``sqrt_scale=True`` in the config for the conventional scaling ablation.

Each model has a graph-building ``forward`` used for training/gradients
and a pure-numpy ``fast_forward`` used for inference and timing; the two
are tested to agree.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..core import GradientField, PointCloud, SoftMatching
from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "MlpConfig",
    "MlpModel",
    "DeepEmdConfig",
    "DeepEmdModel",
    "predict_matching",
    "estimate_distance",
    "surrogate_gradient",
]

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int = 2
    backbone_hidden: tuple[int, ...] = (4, 8, 16)
    embed_dim: int = 128
    head_hidden: tuple[int, ...] = (256, 128, 64, 16)
    dtype: str = "f32"

    def np_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        d = dict(d)
        d["backbone_hidden"] = tuple(d["backbone_hidden"])
        d["head_hidden"] = tuple(d["head_hidden"])
        return cls(**d)


@dataclass(frozen=True)
class DeepEmdConfig:
    in_dim: int = 2
    layers: int = 8
    heads: int = 6
    d_model: int = 78
    ffn_mult: int = 4
    sqrt_scale: bool = False
    dtype: str = "f32"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def np_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeepEmdConfig":
        return cls(**d)


def _init_affine(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class MlpModel:
    """Distance regressor, symmetric in its two cloud arguments."""

    kind = "mlp"

    def __init__(self, config: MlpConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: MlpConfig, rng: np.random.Generator) -> "MlpModel":
        dt = config.np_dtype()
        params: dict[str, Tensor] = {}
        dims = (config.in_dim, *config.backbone_hidden, config.embed_dim)
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            params[f"g{i}_w"] = ad.parameter(_init_affine(rng, din, (din, dout), dt))
            params[f"g{i}_b"] = ad.parameter(_init_affine(rng, din, (dout,), dt))
        dims = (2 * config.embed_dim, *config.head_hidden, 1)
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            params[f"h{i}_w"] = ad.parameter(_init_affine(rng, din, (din, dout), dt))
            params[f"h{i}_b"] = ad.parameter(_init_affine(rng, din, (dout,), dt))
        return cls(config, params)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _backbone(self, x: Tensor) -> Tensor:
        n_layers = len(self.config.backbone_hidden) + 1
        for i in range(n_layers):
            x = ad.linear(x, self.params[f"g{i}_w"], self.params[f"g{i}_b"])
            if i < n_layers - 1:
                x = ad.relu(x)
        return ad.tsum(x, axis=1)  # sum over points: permutation invariant

    def _head(self, e: Tensor) -> Tensor:
        n_layers = len(self.config.head_hidden) + 1
        for i in range(n_layers):
            e = ad.linear(e, self.params[f"h{i}_w"], self.params[f"h{i}_b"])
            if i < n_layers - 1:
                e = ad.relu(e)
        return e

    def forward(self, u, v) -> Tensor:
        """Predicted distances for a batch: u, v are (B, N, D) arrays."""
        dt = self.config.np_dtype()
        ut, vt = _as_tensor(u, dt), _as_tensor(v, dt)
        eu = self._backbone(ut)
        ev = self._backbone(vt)
        duv = self._head(ad.concat([eu, ev], axis=-1))
        dvu = self._head(ad.concat([ev, eu], axis=-1))
        out = ad.add(duv, dvu)
        return ad.reshape(out, (out.shape[0],))

    def loss(self, pred: Tensor, target) -> Tensor:
        """Mean squared error over the batch."""
        diff = ad.sub(pred, _as_tensor(target, self.config.np_dtype()))
        return ad.tmean(ad.mul(diff, diff))

    def fast_forward(self, u_pts: np.ndarray, v_pts: np.ndarray) -> float:
        """Inference for a single pair, no graph."""
        dt = self.config.np_dtype()

        def backbone(x):
            n_layers = len(self.config.backbone_hidden) + 1
            for i in range(n_layers):
                x = x @ self.params[f"g{i}_w"].data + self.params[f"g{i}_b"].data
                if i < n_layers - 1:
                    np.maximum(x, 0, out=x)
            return x.sum(axis=0)

        def head(e):
            n_layers = len(self.config.head_hidden) + 1
            for i in range(n_layers):
                e = e @ self.params[f"h{i}_w"].data + self.params[f"h{i}_b"].data
                if i < n_layers - 1:
                    np.maximum(e, 0, out=e)
            return e

        eu = backbone(np.asarray(u_pts, dtype=dt))
        ev = backbone(np.asarray(v_pts, dtype=dt))
        duv = head(np.concatenate([eu, ev]))
        dvu = head(np.concatenate([ev, eu]))
        return float(duv[0] + dvu[0])


class DeepEmdModel:
    """Attention matcher producing directed matching logits."""

    kind = "deepemd"

    def __init__(self, config: DeepEmdConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: DeepEmdConfig, rng: np.random.Generator) -> "DeepEmdModel":
        dt = config.np_dtype()
        dm = config.d_model
        hidden = config.ffn_mult * dm
        params: dict[str, Tensor] = {}
        params["input_w"] = ad.parameter(
            _init_affine(rng, config.in_dim, (config.in_dim, dm), dt)
        )
        params["input_b"] = ad.parameter(_init_affine(rng, config.in_dim, (dm,), dt))
        params["group"] = ad.parameter(np.zeros((2, dm), dtype=dt))
        for l in range(config.layers):
            for name in ("wq", "wk", "wv", "wo"):
                params[f"L{l}_{name}"] = ad.parameter(
                    _init_affine(rng, dm, (dm, dm), dt)
                )
            params[f"L{l}_ln1_g"] = ad.parameter(np.ones(dm, dtype=dt))
            params[f"L{l}_ln1_b"] = ad.parameter(np.zeros(dm, dtype=dt))
            params[f"L{l}_ffn_w1"] = ad.parameter(_init_affine(rng, dm, (dm, hidden), dt))
            params[f"L{l}_ffn_b1"] = ad.parameter(_init_affine(rng, dm, (hidden,), dt))
            params[f"L{l}_ffn_w2"] = ad.parameter(
                _init_affine(rng, hidden, (hidden, dm), dt)
            )
            params[f"L{l}_ffn_b2"] = ad.parameter(_init_affine(rng, hidden, (dm,), dt))
            params[f"L{l}_ln2_g"] = ad.parameter(np.ones(dm, dtype=dt))
            params[f"L{l}_ln2_b"] = ad.parameter(np.zeros(dm, dtype=dt))
        params["out_q"] = ad.parameter(_init_affine(rng, dm, (dm, dm), dt))
        params["out_k"] = ad.parameter(_init_affine(rng, dm, (dm, dm), dt))
        return cls(config, params)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _attn_scale(self, d: int) -> float:
        return 1.0 / math.sqrt(d) if self.config.sqrt_scale else 1.0 / d

    def _encoder_layer(self, x: Tensor, l: int, batch: int, seq: int) -> Tensor:
        cfg = self.config
        h, dk, dm = cfg.heads, cfg.d_head, cfg.d_model
        p = self.params

        def split_heads(t):
            return ad.transpose(ad.reshape(t, (batch, seq, h, dk)), (0, 2, 1, 3))

        q = split_heads(ad.linear(x, p[f"L{l}_wq"]))
        k = split_heads(ad.linear(x, p[f"L{l}_wk"]))
        v = split_heads(ad.linear(x, p[f"L{l}_wv"]))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), self._attn_scale(dk))
        attn = ad.softmax(scores)
        o = ad.matmul(attn, v)
        o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (batch, seq, dm))
        o = ad.linear(o, p[f"L{l}_wo"])
        x = ad.layer_norm(ad.add(x, o), p[f"L{l}_ln1_g"], p[f"L{l}_ln1_b"])
        f = ad.linear(
            ad.relu(ad.linear(x, p[f"L{l}_ffn_w1"], p[f"L{l}_ffn_b1"])),
            p[f"L{l}_ffn_w2"],
            p[f"L{l}_ffn_b2"],
        )
        return ad.layer_norm(ad.add(x, f), p[f"L{l}_ln2_g"], p[f"L{l}_ln2_b"])

    def forward(self, u, v) -> tuple[Tensor, Tensor]:
        """Matching logits for a batch: (B, N, N) source->target and reverse."""
        dt = self.config.np_dtype()
        ut, vt = _as_tensor(u, dt), _as_tensor(v, dt)
        batch, n = ut.shape[0], ut.shape[1]
        seq = 2 * n
        x = ad.concat([ut, vt], axis=1)
        x = ad.linear(x, self.params["input_w"], self.params["input_b"])
        group_ids = np.repeat(np.arange(2), n)
        x = ad.add(x, ad.embedding(self.params["group"], group_ids))
        for l in range(self.config.layers):
            x = self._encoder_layer(x, l, batch, seq)
        q = ad.linear(x, self.params["out_q"])
        k = ad.linear(x, self.params["out_k"])
        scores = ad.mul(
            ad.matmul(q, ad.transpose(k, (0, 2, 1))), self._attn_scale(self.config.d_model)
        )
        a_t = ad.getitem(scores, (slice(None), slice(0, n), slice(n, seq)))
        a_b = ad.getitem(scores, (slice(None), slice(n, seq), slice(0, n)))
        return a_t, a_b

    def loss(self, out: tuple[Tensor, Tensor], assign: np.ndarray) -> Tensor:
        """Row-wise cross-entropy of both blocks against the permutation.

        assign is (B, N): source i matches target assign[i]. Rows of the
        target->source block are scored against the inverse permutation.
        """
        a_t, a_b = out
        batch, n = assign.shape
        inv = np.empty_like(assign)
        rows = np.arange(n)
        for b in range(batch):
            inv[b, assign[b]] = rows
        lt = ad.cross_entropy_mean(ad.reshape(a_t, (batch * n, n)), assign.reshape(-1))
        lb = ad.cross_entropy_mean(ad.reshape(a_b, (batch * n, n)), inv.reshape(-1))
        return ad.add(lt, lb)

    def fast_forward(
        self, u_pts: np.ndarray, v_pts: np.ndarray, block: int = 512
    ) -> tuple[np.ndarray, np.ndarray]:
        """Single-pair inference without graph building.

        Attention rows are processed in blocks with in-place softmax so the
        score matrices stay cache-resident at large N.
        """
        cfg = self.config
        dt = cfg.np_dtype()
        p = {name: t.data for name, t in self.params.items()}
        n = u_pts.shape[0]
        seq = 2 * n
        heads, dk, dm = cfg.heads, cfg.d_head, cfg.d_model
        scale_in = dt(self._attn_scale(dk))
        scale_out = dt(self._attn_scale(dm))

        x = np.concatenate(
            [np.asarray(u_pts, dtype=dt), np.asarray(v_pts, dtype=dt)], axis=0
        )
        x = x @ p["input_w"] + p["input_b"]
        x[:n] += p["group"][0]
        x[n:] += p["group"][1]

        def norm(y, g, b):
            mu = y.mean(axis=-1, keepdims=True)
            yc = y - mu
            var = (yc * yc).mean(axis=-1, keepdims=True)
            np.sqrt(var + dt(1e-5), out=var)
            yc /= var
            yc *= g
            yc += b
            return yc

        def attend(q, k, v):
            out = np.empty((seq, dk), dtype=dt)
            kt = np.ascontiguousarray(k.T)
            for lo in range(0, seq, block):
                hi = min(lo + block, seq)
                sc = q[lo:hi] @ kt
                sc *= scale_in
                sc -= sc.max(axis=1, keepdims=True)
                np.exp(sc, out=sc)
                sc /= sc.sum(axis=1, keepdims=True)
                out[lo:hi] = sc @ v
            return out

        for l in range(cfg.layers):
            q = x @ p[f"L{l}_wq"]
            k = x @ p[f"L{l}_wk"]
            v = x @ p[f"L{l}_wv"]
            o = np.empty_like(x)
            for h in range(heads):
                sl = slice(h * dk, (h + 1) * dk)
                o[:, sl] = attend(
                    np.ascontiguousarray(q[:, sl]),
                    np.ascontiguousarray(k[:, sl]),
                    np.ascontiguousarray(v[:, sl]),
                )
            o = o @ p[f"L{l}_wo"]
            o += x
            x = norm(o, p[f"L{l}_ln1_g"], p[f"L{l}_ln1_b"])
            f = x @ p[f"L{l}_ffn_w1"]
            f += p[f"L{l}_ffn_b1"]
            np.maximum(f, 0, out=f)
            f = f @ p[f"L{l}_ffn_w2"]
            f += p[f"L{l}_ffn_b2"]
            f += x
            x = norm(f, p[f"L{l}_ln2_g"], p[f"L{l}_ln2_b"])

        q = x @ p["out_q"]
        k = x @ p["out_k"]
        scores = q @ k.T
        scores *= scale_out
        return scores[:n, n:], scores[n:, :n]


def predict_matching(a_t: np.ndarray, a_b: np.ndarray) -> SoftMatching:
    """Row argmax of each logit block; ties resolve to the smallest index."""
    return SoftMatching(forward=a_t.argmax(axis=1), backward=a_b.argmax(axis=1))


def estimate_distance(u: PointCloud, v: PointCloud, sm: SoftMatching) -> float:
    """Average of the two directed matched-cost sums under a soft matching."""
    if len(sm) != u.n or u.n != v.n:
        raise ValueError("soft matching size must equal cloud size")
    fwd = np.linalg.norm(u.points - v.points[sm.forward], axis=1).sum()
    bwd = np.linalg.norm(v.points - u.points[sm.backward], axis=1).sum()
    return float(0.5 * (fwd + bwd))


def surrogate_gradient(u: PointCloud, v: PointCloud, sm: SoftMatching) -> GradientField:
    """Gradient of estimate_distance w.r.t. the target cloud, matching frozen.

    Row j gets half the unit vector away from its backward partner plus
    half the sum of unit vectors from sources whose forward pick is j;
    coincident pairs contribute zero.
    """

    def unit(diff):
        norms = np.linalg.norm(diff, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(norms > 0, diff / norms, 0.0)

    grads = 0.5 * unit(v.points - u.points[sm.backward])
    pulls = unit(v.points[sm.forward] - u.points)
    np.add.at(grads, sm.forward, 0.5 * pulls)
    return grads
