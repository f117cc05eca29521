"""Variable-length vision transformer over selected patches.

The token sequence is one class token plus one token per selected patch;
its length varies per frame with the active-patch count n.  Positional
embeddings are gathered by each patch's original slot index, so dropping
patches does not disturb the survivors' positions.  Encoder blocks are
pre-norm: z' = z + MSA(LN(z)), z_next = z' + MLP(LN(z')).

Forward passes can charge an OpCounter per component ("embed", "ln",
"qkv", "attn", "msa_proj", "mlp", "residual", "head"), which the cost
model reconciles against its closed-form counts.  Backward passes are
hand-derived, no autodiff.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import (
    BadMagic,
    ManifestMismatch,
    MissingCache,
    PositionOutOfRange,
    ShapeMismatch,
    TruncatedPayload,
)
from .kernels import (
    LayerNormCache,
    OpCounter,
    add_bias,
    cross_entropy,
    gelu,
    gelu_bwd,
    layer_norm_bwd,
    layer_norm_fwd,
    matmul,
    residual_add,
    softmax_rows,
    softmax_rows_bwd,
)
from .patches import PatchSet

COMPONENT_NAMES = ("embed", "ln", "qkv", "attn", "msa_proj", "mlp",
                   "residual", "head")


@dataclass(frozen=True)
class ViTConfig:
    patch_size: int
    channels: int
    embed_dim: int
    head_dim: int
    num_heads: int
    num_layers: int
    mlp_dim: int
    frame_height: int
    frame_width: int
    num_classes: int

    def __post_init__(self):
        if self.num_heads * self.head_dim != self.embed_dim:
            raise ValueError("embed_dim must equal num_heads * head_dim")
        if self.frame_height % self.patch_size or \
                self.frame_width % self.patch_size:
            raise ValueError("frame dimensions must be multiples of patch_size")
        for name in ("patch_size", "channels", "embed_dim", "head_dim",
                     "num_heads", "num_layers", "mlp_dim", "num_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def n_max(self) -> int:
        return (self.frame_height // self.patch_size) * \
            (self.frame_width // self.patch_size)

    def to_dict(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "channels": self.channels,
            "embed_dim": self.embed_dim,
            "head_dim": self.head_dim,
            "num_heads": self.num_heads,
            "num_layers": self.num_layers,
            "mlp_dim": self.mlp_dim,
            "frame_height": self.frame_height,
            "frame_width": self.frame_width,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        return cls(**{k: int(d[k]) for k in cls.__dataclass_fields__})


PAPER_CONFIG = ViTConfig(
    patch_size=16, channels=9, embed_dim=768, head_dim=64, num_heads=12,
    num_layers=12, mlp_dim=3072, frame_height=192, frame_width=240,
    num_classes=100)

TOY_CONFIG = ViTConfig(
    patch_size=8, channels=5, embed_dim=64, head_dim=16, num_heads=4,
    num_layers=2, mlp_dim=128, frame_height=64, frame_width=64,
    num_classes=3)

CONFIG_PRESETS = {"paper": PAPER_CONFIG, "toy": TOY_CONFIG}


# ---------------------------------------------------------------------------
# parameters

@dataclass
class LayerParams:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    attn_q: np.ndarray    # (heads, D, D_h)
    attn_k: np.ndarray
    attn_v: np.ndarray
    attn_out: np.ndarray  # (heads * D_h, D)
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    mlp_w1: np.ndarray    # (D, D_mlp)
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray    # (D_mlp, D)
    mlp_b2: np.ndarray


@dataclass
class ViTParams:
    patch_embed: np.ndarray  # (P*P*C, D)
    pos_embed: np.ndarray    # (n_max + 1, D)
    class_token: np.ndarray  # (D,)
    layers: list
    head_ln_gain: np.ndarray
    head_ln_bias: np.ndarray
    head_weight: np.ndarray  # (D, K)
    head_bias: np.ndarray    # (K,)

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "patch_embed", self.patch_embed
        yield "pos_embed", self.pos_embed
        yield "class_token", self.class_token
        for i, layer in enumerate(self.layers):
            for fname in ("ln1_gain", "ln1_bias", "attn_q", "attn_k",
                          "attn_v", "attn_out", "ln2_gain", "ln2_bias",
                          "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"):
                yield f"layers.{i}.{fname}", getattr(layer, fname)
        yield "head_ln_gain", self.head_ln_gain
        yield "head_ln_bias", self.head_ln_bias
        yield "head_weight", self.head_weight
        yield "head_bias", self.head_bias

    def tensor_dict(self) -> dict:
        return dict(self.named_tensors())

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def zeros_like(self) -> "ViTParams":
        return from_tensor_dict(
            {name: np.zeros_like(t) for name, t in self.named_tensors()})


def expected_shapes(cfg: ViTConfig) -> dict:
    """Canonical tensor names mapped to their shapes, in manifest order."""
    d, k, dh = cfg.embed_dim, cfg.num_heads, cfg.head_dim
    shapes = {
        "patch_embed": (cfg.patch_dim, d),
        "pos_embed": (cfg.n_max + 1, d),
        "class_token": (d,),
    }
    for i in range(cfg.num_layers):
        shapes[f"layers.{i}.ln1_gain"] = (d,)
        shapes[f"layers.{i}.ln1_bias"] = (d,)
        shapes[f"layers.{i}.attn_q"] = (k, d, dh)
        shapes[f"layers.{i}.attn_k"] = (k, d, dh)
        shapes[f"layers.{i}.attn_v"] = (k, d, dh)
        shapes[f"layers.{i}.attn_out"] = (k * dh, d)
        shapes[f"layers.{i}.ln2_gain"] = (d,)
        shapes[f"layers.{i}.ln2_bias"] = (d,)
        shapes[f"layers.{i}.mlp_w1"] = (d, cfg.mlp_dim)
        shapes[f"layers.{i}.mlp_b1"] = (cfg.mlp_dim,)
        shapes[f"layers.{i}.mlp_w2"] = (cfg.mlp_dim, d)
        shapes[f"layers.{i}.mlp_b2"] = (d,)
    shapes["head_ln_gain"] = (d,)
    shapes["head_ln_bias"] = (d,)
    shapes["head_weight"] = (d, cfg.num_classes)
    shapes["head_bias"] = (cfg.num_classes,)
    return shapes


def from_tensor_dict(tensors: dict) -> "ViTParams":
    """Rebuild a ViTParams from a name -> array mapping."""
    layer_ids = sorted(
        {int(name.split(".")[1]) for name in tensors if name.startswith("layers.")})
    layers = []
    for i in layer_ids:
        layers.append(LayerParams(**{
            fname: tensors[f"layers.{i}.{fname}"]
            for fname in ("ln1_gain", "ln1_bias", "attn_q", "attn_k", "attn_v",
                          "attn_out", "ln2_gain", "ln2_bias", "mlp_w1",
                          "mlp_b1", "mlp_w2", "mlp_b2")}))
    return ViTParams(
        patch_embed=tensors["patch_embed"],
        pos_embed=tensors["pos_embed"],
        class_token=tensors["class_token"],
        layers=layers,
        head_ln_gain=tensors["head_ln_gain"],
        head_ln_bias=tensors["head_ln_bias"],
        head_weight=tensors["head_weight"],
        head_bias=tensors["head_bias"],
    )


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                  clip_sigmas: float = 2.0) -> np.ndarray:
    """Normal draw with out-of-range values redrawn, not clamped."""
    out = rng.normal(0.0, std, size=shape)
    bound = clip_sigmas * std
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def init_params(cfg: ViTConfig, seed: int) -> ViTParams:
    """Truncated-normal (0.02, clipped at 2 sigma) weights, zero biases,
    unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_gain"):
            tensors[name] = np.ones(shape)
        elif leaf.endswith("_bias") or leaf in ("mlp_b1", "mlp_b2"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = _trunc_normal(rng, shape)
    return from_tensor_dict(tensors)


# ---------------------------------------------------------------------------
# op counting

class ComponentCounters:
    """One OpCounter per architectural component."""

    def __init__(self):
        self.counters = {name: OpCounter() for name in COMPONENT_NAMES}

    def __getitem__(self, name: str) -> OpCounter:
        return self.counters[name]

    def total(self) -> OpCounter:
        out = OpCounter()
        for c in self.counters.values():
            out.merge(c)
        return out

    def as_dict(self) -> dict:
        return {name: c.as_dict() for name, c in self.counters.items()}


def _c(counters: ComponentCounters | None, name: str) -> OpCounter | None:
    return counters[name] if counters is not None else None


# ---------------------------------------------------------------------------
# forward

@dataclass
class HeadCache:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray


@dataclass
class LayerCache:
    z_in: np.ndarray
    ln1: LayerNormCache
    zn1: np.ndarray
    heads: list
    concat: np.ndarray
    z_mid: np.ndarray
    ln2: LayerNormCache
    zn2: np.ndarray
    h_pre: np.ndarray
    h_act: np.ndarray


@dataclass
class ForwardCache:
    vectors: np.ndarray
    positions: np.ndarray
    z0: np.ndarray
    layers: list = field(default_factory=list)
    ln_head: LayerNormCache | None = None
    feat: np.ndarray | None = None
    logits: np.ndarray | None = None


def embed_patches(patch_set: PatchSet, params: ViTParams, cfg: ViTConfig,
                  counters: ComponentCounters | None = None) -> np.ndarray:
    """Token sequence z0: class token first, then projected patches, each
    plus the positional embedding of its original slot."""
    if patch_set.vectors.shape[1] != cfg.patch_dim:
        raise ShapeMismatch(
            f"patch vectors have dim {patch_set.vectors.shape[1]}, "
            f"model expects {cfg.patch_dim}")
    n = patch_set.n
    if n and int(patch_set.positions.max()) >= cfg.n_max:
        raise PositionOutOfRange(
            f"slot {int(patch_set.positions.max())} outside model range "
            f"[0, {cfg.n_max})")
    counter = _c(counters, "embed")
    z = np.empty((n + 1, cfg.embed_dim))
    z[0] = params.class_token
    if n:
        z[1:] = matmul(patch_set.vectors, params.patch_embed, counter)
    pos_idx = np.concatenate(([0], patch_set.positions + 1))
    z = z + params.pos_embed[pos_idx]
    if counter is not None:
        counter.add += z.size
    return z


def _attention_core(q, k, v, counter: OpCounter | None):
    """Scaled dot-product attention for one head; returns (out, attn)."""
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = matmul(q, k.T, counter)
    scores = scores * scale
    if counter is not None:
        counter.mul += scores.size
    attn = softmax_rows(scores, counter)
    out = matmul(attn, v, counter)
    return out, attn


def self_attention(z: np.ndarray, u_q: np.ndarray, u_k: np.ndarray,
                   u_v: np.ndarray,
                   counters: ComponentCounters | None = None):
    """Single attention head over the token sequence."""
    cq = _c(counters, "qkv")
    q = matmul(z, u_q, cq)
    k = matmul(z, u_k, cq)
    v = matmul(z, u_v, cq)
    out, attn = _attention_core(q, k, v, _c(counters, "attn"))
    return out, HeadCache(q, k, v, attn)


def msa(z: np.ndarray, layer: LayerParams,
        counters: ComponentCounters | None = None):
    """Multi-head self-attention plus the output projection.

    Q/K/V for all heads come from one matmul against the column-stacked
    projection matrices; that performs exactly the same scalar ops as
    per-head matmuls, so the counters are unaffected.
    """
    heads, _, dh = layer.attn_q.shape
    cq = _c(counters, "qkv")
    q_all = matmul(z, np.concatenate(layer.attn_q, axis=1), cq)
    k_all = matmul(z, np.concatenate(layer.attn_k, axis=1), cq)
    v_all = matmul(z, np.concatenate(layer.attn_v, axis=1), cq)
    ca = _c(counters, "attn")
    outs = []
    caches = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        out, attn = _attention_core(q_all[:, sl], k_all[:, sl], v_all[:, sl], ca)
        outs.append(out)
        caches.append(HeadCache(q_all[:, sl], k_all[:, sl], v_all[:, sl], attn))
    concat = np.concatenate(outs, axis=1)
    projected = matmul(concat, layer.attn_out, _c(counters, "msa_proj"))
    return projected, caches, concat


def encoder_layer(z: np.ndarray, layer: LayerParams,
                  counters: ComponentCounters | None = None):
    """Pre-norm encoder block; returns (z_next, LayerCache)."""
    zn1, ln1 = layer_norm_fwd(z, layer.ln1_gain, layer.ln1_bias,
                              counter=_c(counters, "ln"))
    attn_out, head_caches, concat = msa(zn1, layer, counters)
    z_mid = residual_add(z, attn_out, _c(counters, "residual"))
    zn2, ln2 = layer_norm_fwd(z_mid, layer.ln2_gain, layer.ln2_bias,
                              counter=_c(counters, "ln"))
    cm = _c(counters, "mlp")
    h_pre = add_bias(matmul(zn2, layer.mlp_w1, cm), layer.mlp_b1, cm)
    h_act = gelu(h_pre, cm)
    mlp_out = add_bias(matmul(h_act, layer.mlp_w2, cm), layer.mlp_b2, cm)
    z_next = residual_add(z_mid, mlp_out, _c(counters, "residual"))
    cache = LayerCache(z, ln1, zn1, head_caches, concat, z_mid, ln2, zn2,
                       h_pre, h_act)
    return z_next, cache


def forward(patch_set: PatchSet, params: ViTParams, cfg: ViTConfig,
            counters: ComponentCounters | None = None,
            want_cache: bool = False):
    """Logits for one frame; with ``want_cache`` returns (logits, cache)."""
    z = embed_patches(patch_set, params, cfg, counters)
    cache = ForwardCache(patch_set.vectors, patch_set.positions, z)
    for layer in params.layers:
        z, layer_cache = encoder_layer(z, layer, counters)
        if want_cache:
            cache.layers.append(layer_cache)
    ch = _c(counters, "head")
    feat, ln_head = layer_norm_fwd(z[0:1], params.head_ln_gain,
                                   params.head_ln_bias, counter=ch)
    logits = add_bias(matmul(feat, params.head_weight, ch),
                      params.head_bias, ch)[0]
    if want_cache:
        cache.ln_head = ln_head
        cache.feat = feat
        cache.logits = logits
        return logits, cache
    return logits


# ---------------------------------------------------------------------------
# backward

def _attention_bwd(d_out, head: HeadCache):
    """Backward of one head's scaled dot-product attention."""
    scale = 1.0 / np.sqrt(head.q.shape[1])
    d_v = head.attn.T @ d_out
    d_attn = d_out @ head.v.T
    d_scores = softmax_rows_bwd(d_attn, head.attn) * scale
    d_q = d_scores @ head.k
    d_k = d_scores.T @ head.q
    return d_q, d_k, d_v


def _layer_bwd(d_z_next: np.ndarray, layer: LayerParams, cache: LayerCache,
               grads: LayerParams):
    """Backward of one encoder block; returns d(z_in)."""
    heads, _, dh = layer.attn_q.shape
    # MLP branch
    d_mlp_out = d_z_next
    d_z_mid = d_z_next.copy()
    grads.mlp_b2 += d_mlp_out.sum(axis=0)
    grads.mlp_w2 += cache.h_act.T @ d_mlp_out
    d_h_act = d_mlp_out @ layer.mlp_w2.T
    d_h_pre = gelu_bwd(d_h_act, cache.h_pre)
    grads.mlp_b1 += d_h_pre.sum(axis=0)
    grads.mlp_w1 += cache.zn2.T @ d_h_pre
    d_zn2 = d_h_pre @ layer.mlp_w1.T
    dx, dg, db = layer_norm_bwd(d_zn2, cache.ln2)
    grads.ln2_gain += dg
    grads.ln2_bias += db
    d_z_mid += dx
    # attention branch
    d_proj = d_z_mid
    d_z_in = d_z_mid.copy()
    grads.attn_out += cache.concat.T @ d_proj
    d_concat = d_proj @ layer.attn_out.T
    d_zn1 = np.zeros_like(cache.zn1)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        d_q, d_k, d_v = _attention_bwd(d_concat[:, sl], cache.heads[h])
        grads.attn_q[h] += cache.zn1.T @ d_q
        grads.attn_k[h] += cache.zn1.T @ d_k
        grads.attn_v[h] += cache.zn1.T @ d_v
        d_zn1 += d_q @ layer.attn_q[h].T
        d_zn1 += d_k @ layer.attn_k[h].T
        d_zn1 += d_v @ layer.attn_v[h].T
    dx, dg, db = layer_norm_bwd(d_zn1, cache.ln1)
    grads.ln1_gain += dg
    grads.ln1_bias += db
    d_z_in += dx
    return d_z_in


def backward(cache: ForwardCache, d_logits: np.ndarray, params: ViTParams,
             cfg: ViTConfig) -> ViTParams:
    """Parameter gradients from a cached forward and d(loss)/d(logits)."""
    if cache.ln_head is None or cache.feat is None:
        raise MissingCache("forward must be run with want_cache=True")
    if len(cache.layers) != len(params.layers):
        raise MissingCache("cache does not cover every layer")
    grads = params.zeros_like()
    d_logits = np.asarray(d_logits, dtype=np.float64).reshape(1, -1)
    grads.head_bias += d_logits[0]
    grads.head_weight += cache.feat.T @ d_logits
    d_feat = d_logits @ params.head_weight.T
    dx, dg, db = layer_norm_bwd(d_feat, cache.ln_head)
    grads.head_ln_gain += dg
    grads.head_ln_bias += db
    d_z = np.zeros_like(cache.z0)
    d_z[0] = dx[0]
    for layer, layer_cache, layer_grads in zip(
            reversed(params.layers), reversed(cache.layers),
            reversed(grads.layers)):
        d_z = _layer_bwd(d_z, layer, layer_cache, layer_grads)
    # embedding: d_z splits into class token, positional rows, patch rows
    grads.class_token += d_z[0]
    pos_idx = np.concatenate(([0], cache.positions + 1))
    np.add.at(grads.pos_embed, pos_idx, d_z)
    if cache.positions.size:
        grads.patch_embed += cache.vectors.T @ d_z[1:]
    return grads


def loss_and_gradients(patch_set: PatchSet, target: int, params: ViTParams,
                       cfg: ViTConfig):
    """Cross-entropy loss, logits, and full parameter gradients."""
    logits, cache = forward(patch_set, params, cfg, want_cache=True)
    loss, d_logits = cross_entropy(logits, target)
    grads = backward(cache, d_logits, params, cfg)
    return loss, logits, grads


# ---------------------------------------------------------------------------
# checkpoint format: magic "VITC", u32 little-endian header length, UTF-8
# JSON header {config, tensors: [{name, shape, offset}]}, then the tensor
# payload as little-endian float64 in row-major order.

CHECKPOINT_MAGIC = b"VITC"
_LEN = struct.Struct("<I")


def save_checkpoint(params: ViTParams, cfg: ViTConfig) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in params.named_tensors():
        raw = np.ascontiguousarray(tensor, dtype="<f8").tobytes()
        manifest.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": cfg.to_dict(), "dtype": "<f8", "tensors": manifest},
        separators=(",", ":")).encode("utf-8")
    return CHECKPOINT_MAGIC + _LEN.pack(len(header)) + header + b"".join(chunks)


def load_checkpoint(data: bytes):
    """Parse checkpoint bytes; returns (params, config)."""
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        if len(data) >= 4:
            raise BadMagic(f"expected {CHECKPOINT_MAGIC!r}, got {data[:4]!r}")
        raise TruncatedPayload("checkpoint shorter than its magic")
    if len(data) < 8:
        raise TruncatedPayload("checkpoint missing header length")
    (header_len,) = _LEN.unpack_from(data, 4)
    if len(data) < 8 + header_len:
        raise TruncatedPayload("checkpoint header cut short")
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
        cfg = ViTConfig.from_dict(header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestMismatch(f"unreadable checkpoint header: {exc}") from None
    shapes = expected_shapes(cfg)
    if [entry.get("name") for entry in manifest] != list(shapes):
        raise ManifestMismatch("manifest tensor names do not match the config")
    payload = data[8 + header_len:]
    tensors = {}
    offset = 0
    for entry in manifest:
        name = entry["name"]
        shape = tuple(int(s) for s in entry["shape"])
        if shape != shapes[name]:
            raise ShapeMismatch(
                f"{name}: manifest says {shape}, config implies {shapes[name]}")
        if int(entry["offset"]) != offset:
            raise ManifestMismatch(f"{name}: offsets are not contiguous")
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        if offset + nbytes > len(payload):
            raise TruncatedPayload(f"payload ends inside {name}")
        tensors[name] = np.frombuffer(
            payload, dtype="<f8", count=int(np.prod(shape)),
            offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise ManifestMismatch(
            f"{len(payload) - offset} stray bytes after the last tensor")
    return from_tensor_dict(tensors), cfg


def write_checkpoint(path, params: ViTParams, cfg: ViTConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(params, cfg))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read())
