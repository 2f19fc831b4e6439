"""Attention network for measurement-to-landmark association and offset regression.

Pipeline: kNN grouping of landmarks around each measurement, row-wise
feed-forward embeddings, per-measurement local attention over the grouped
neighbors, global self-attention over the local features, max pooling, and
a feed-forward head regressing the pose offset (dx, dy, dphi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import PoseOffset, as_points, wrap_angle


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    d_m: model width. heads must divide d_m. k: neighbors per measurement.
    neighbor_features selects what feeds the neighbor embedding: relative
    offsets plus distance ("offsets", 3 inputs) or distance only
    ("distance", 1 input).
    """

    d_m: int = 256
    heads: int = 4
    k: int = 8
    rff_hidden: int = 64
    head_hidden: tuple[int, ...] = (128, 64)
    block_hidden: int | None = None
    neighbor_features: str = "offsets"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_m < 1 or self.heads < 1 or self.k < 1:
            raise ValueError("d_m, heads and k must be positive")
        if self.d_m % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d_m ({self.d_m})")
        if self.d_m < self.heads:
            raise ValueError(f"d_m ({self.d_m}) must be >= heads ({self.heads})")
        if self.neighbor_features not in ("offsets", "distance"):
            raise ValueError(f"unknown neighbor_features mode {self.neighbor_features!r}")

    @property
    def feature_width(self) -> int:
        return 3 if self.neighbor_features == "offsets" else 1

    @property
    def ff_hidden(self) -> int:
        return self.block_hidden if self.block_hidden is not None else self.d_m


class ModelParams:
    """Named parameter tensors plus the loss log-variances s_tran, s_rot."""

    def __init__(self, config: NetConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = np.zeros_like(t.data)

    def param_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _rff_shapes(widths: list[int]) -> list[tuple[int, int]]:
    return list(zip(widths[:-1], widths[1:]))


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, int]]:
    """Shape of every named parameter array for a configuration."""
    d, dh = cfg.d_m, cfg.d_m // cfg.heads
    shapes: dict[str, tuple[int, int]] = {}
    for prefix, width_in in (("embed_m", 2), ("embed_l", cfg.feature_width)):
        for i, (fi, fo) in enumerate(_rff_shapes([width_in, cfg.rff_hidden, d])):
            shapes[f"{prefix}.w{i}"] = (fi, fo)
            shapes[f"{prefix}.b{i}"] = (1, fo)
    for block in ("local", "global"):
        for i in range(cfg.heads):
            shapes[f"{block}.q{i}"] = (d, dh)
            shapes[f"{block}.k{i}"] = (d, dh)
            shapes[f"{block}.v{i}"] = (d, dh)
        shapes[f"{block}.out"] = (d, d)
        shapes[f"{block}.ln1.g"] = (1, d)
        shapes[f"{block}.ln1.b"] = (1, d)
        for i, (fi, fo) in enumerate(_rff_shapes([d, cfg.ff_hidden, d])):
            shapes[f"{block}.ff.w{i}"] = (fi, fo)
            shapes[f"{block}.ff.b{i}"] = (1, fo)
        shapes[f"{block}.ln2.g"] = (1, d)
        shapes[f"{block}.ln2.b"] = (1, d)
    head_widths = [d, *cfg.head_hidden, 3]
    for i, (fi, fo) in enumerate(_rff_shapes(head_widths)):
        shapes[f"head.w{i}"] = (fi, fo)
        shapes[f"head.b{i}"] = (1, fo)
    shapes["s_tran"] = (1, 1)
    shapes["s_rot"] = (1, 1)
    return shapes


def init_params(cfg: NetConfig, seed: int | None = None) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gains, s_* = 0."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    tensors: dict[str, Tensor] = {}
    for name, (r, c) in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("w") or leaf.startswith("q") or leaf.startswith("k") or leaf.startswith("v") or leaf == "out":
            arr = ad.glorot_uniform(rng, r, c)
        elif leaf == "g":
            arr = np.ones((r, c))
        else:  # biases, layer-norm shifts, s_tran, s_rot
            arr = np.zeros((r, c))
        tensors[name] = Tensor(arr)
    return ModelParams(cfg, tensors)


@dataclass
class NeighborGroup:
    """k nearest landmarks of one measurement.

    indices: landmark indices, nearest first. features: per neighbor
    (dx, dy, distance) relative to the measurement, vehicle frame.
    """

    indices: np.ndarray
    features: np.ndarray


def knn_group(measurements, landmarks, k: int) -> list[NeighborGroup]:
    """Group the k nearest landmarks (ascending distance) per measurement.

    Ties break toward the lower landmark index. When fewer than k landmarks
    exist, the sorted neighbor list repeats cyclically to length k.
    """
    m = as_points(measurements)
    lm = as_points(landmarks)
    if m.shape[0] == 0 or lm.shape[0] == 0:
        raise ValueError("knn_group needs at least one measurement and one landmark")
    if k < 1:
        raise ValueError("k must be >= 1")
    groups = []
    for row in m:
        delta = lm - row
        dist = np.hypot(delta[:, 0], delta[:, 1])
        order = np.argsort(dist, kind="stable")
        idx = order[np.arange(k) % lm.shape[0]]
        feats = np.column_stack((delta[idx], dist[idx]))
        groups.append(NeighborGroup(indices=idx, features=feats))
    return groups


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V."""
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query/key widths disagree: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value counts disagree: {k.shape} vs {v.shape}")
    scores = (q @ k.t()) * (1.0 / math.sqrt(q.shape[1]))
    return ad.softmax_rows(scores) @ v


def multi_head(x: Tensor, y: Tensor, params: ModelParams, block: str) -> Tensor:
    """h parallel attention heads at width d/h, concatenated and projected."""
    heads = []
    for i in range(params.config.heads):
        q = x @ params[f"{block}.q{i}"]
        k = y @ params[f"{block}.k{i}"]
        v = y @ params[f"{block}.v{i}"]
        heads.append(scaled_dot_attention(q, k, v))
    return ad.concat(heads, axis=1) @ params[f"{block}.out"]


def _block_rff(s: Tensor, params: ModelParams, block: str) -> Tensor:
    h = (s @ params[f"{block}.ff.w0"] + params[f"{block}.ff.b0"]).relu()
    return h @ params[f"{block}.ff.w1"] + params[f"{block}.ff.b1"]


def mha_block(x: Tensor, y: Tensor, params: ModelParams, block: str) -> Tensor:
    """Attention block: LayerNorm(S + rFF(S)), S = LayerNorm(X + Multihead(X, Y, Y))."""
    s = ad.layer_norm(x + multi_head(x, y, params, block), params[f"{block}.ln1.g"], params[f"{block}.ln1.b"])
    return ad.layer_norm(s + _block_rff(s, params, block), params[f"{block}.ln2.g"], params[f"{block}.ln2.b"])


def _embed(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = (x @ params[f"{prefix}.w0"] + params[f"{prefix}.b0"]).relu()
    return h @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"]


def local_attention(measurements, landmarks, params: ModelParams) -> Tensor:
    """Per-measurement attention over its k nearest landmarks; rows stack to nu x d_m.

    Row i depends only on measurement i and its neighbor group, so rows
    permute exactly as the measurements do. All groups share the block
    weights and have exactly k members, so the per-measurement blocks run
    as one batched block-diagonal attention; the result equals applying
    mha_block to each (query, neighbor) pair separately.
    """
    cfg = params.config
    m = as_points(measurements)
    groups = knn_group(m, landmarks, cfg.k)
    feats = np.concatenate([g.features for g in groups], axis=0)
    if cfg.neighbor_features == "distance":
        feats = feats[:, 2:3]
    queries = _embed(Tensor(m), params, "embed_m")  # (nu, d)
    neighbors = _embed(Tensor(feats), params, "embed_l")  # (nu*k, d)
    heads = []
    scale = 1.0 / math.sqrt(cfg.d_m // cfg.heads)
    for i in range(cfg.heads):
        q = queries @ params[f"local.q{i}"]
        kk = neighbors @ params[f"local.k{i}"]
        vv = neighbors @ params[f"local.v{i}"]
        w = ad.softmax_rows(ad.grouped_scores(q, kk, cfg.k) * scale)
        heads.append(ad.grouped_mix(w, vv))
    mh = ad.concat(heads, axis=1) @ params["local.out"]
    s = ad.layer_norm(queries + mh, params["local.ln1.g"], params["local.ln1.b"])
    return ad.layer_norm(s + _block_rff(s, params, "local"), params["local.ln2.g"], params["local.ln2.b"])


def forward(measurements, landmarks, params: ModelParams) -> Tensor:
    """Raw 1x3 offset regression (dx, dy, dphi before wrapping).

    Differentiable path used for training; `predict_offset` wraps the
    heading for consumers.
    """
    local = local_attention(measurements, landmarks, params)
    glob = mha_block(local, local, params, "global")
    h = ad.max_pool_rows(glob)
    n_layers = len(params.config.head_hidden) + 1
    for i in range(n_layers):
        h = h @ params[f"head.w{i}"] + params[f"head.b{i}"]
        if i < n_layers - 1:
            h = h.relu()
    if not np.all(np.isfinite(h.data)):
        raise FloatingPointError("network output is not finite")
    return h


def predict_offset(measurements, landmarks, params: ModelParams) -> PoseOffset:
    """Predicted pose offset with wrapped heading."""
    out = forward(measurements, landmarks, params).data[0]
    return PoseOffset(out[0], out[1], wrap_angle(out[2]))
