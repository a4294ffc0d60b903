"""Toy prompt-driven video segmenter.

Image encoder: patch embedding + learned positions + pre-LN self-attention
blocks.  Prompt encoder: Fourier coordinate featurizer with learned type
embeddings (point/box) and a stride-P conv for mask prompts.  Mask decoder:
cross-attention blocks from image tokens to prompt tokens, then a conv
upsampling head whose final 32-channel conv is the pruning target, followed
by a 1x1 logit projection.

Video propagation replaces a streaming memory with previous-mask prompting:
frame t>0 is decoded with a mask prompt built from the thresholded
prediction of frame t-1.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Box, MaskPrompt, Point, PromptSpec, VideoSequence
from .numerics import (
    Tensor,
    bilinear_resize,
    concat,
    conv2d,
    layer_norm,
    matmul,
    pad_reflect,
    relu,
    softmax,
)
from .numerics.bvtf import load_bvtf, save_bvtf

__all__ = [
    "ArchConfig",
    "ModelParams",
    "ImageEmbedding",
    "PromptTokens",
    "init_params",
    "encode_image",
    "encode_prompt",
    "decode_mask",
    "forward_frame",
    "forward_video",
    "save_params",
    "load_params",
    "FINAL_CONV_W",
    "FINAL_CONV_B",
]

FINAL_CONV_W = "decoder.head.final_conv.w"
FINAL_CONV_B = "decoder.head.final_conv.b"


@dataclass(frozen=True)
class ArchConfig:
    patch: int = 8
    depth: int = 2
    heads: int = 2
    dim: int = 32
    mlp_ratio: float = 2.0
    decoder_depth: int = 2
    head_channels: int = 32
    img_size: int = 64      # reference grid for the positional embedding
    pos_freqs: int = 4

    @property
    def grid(self) -> int:
        return self.img_size // self.patch

    @property
    def feat_dim(self) -> int:
        return 4 * self.pos_freqs + 2


class ModelParams:
    """Named parameter tensors plus the architecture they instantiate.

    Paths are stable and iterated in sorted order so flattened gradient
    vectors line up across runs.
    """

    def __init__(self, arch: ArchConfig, params: dict[str, Tensor]):
        self.arch = arch
        self.params = {k: params[k] for k in sorted(params)}

    def __getitem__(self, path: str) -> Tensor:
        return self.params[path]

    def paths(self, prefix: str = "") -> list[str]:
        return [p for p in self.params if p.startswith(prefix)]

    def clone(self) -> "ModelParams":
        return ModelParams(self.arch, {
            k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
            for k, v in self.params.items()
        })

    def set_trainable(self, prefixes: tuple[str, ...] | None) -> None:
        """Mark parameters under the given prefixes trainable, the rest frozen."""
        for path, p in self.params.items():
            p.requires_grad = (prefixes is None
                               or any(path.startswith(pre) for pre in prefixes))
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for path in self.params:
            h.update(path.encode())
            h.update(np.ascontiguousarray(self.params[path].data, dtype="<f4").tobytes())
        return h.hexdigest()


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std).astype(np.float32)


def init_params(arch: ArchConfig = ArchConfig(), seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    d, hid = arch.dim, int(arch.dim * arch.mlp_ratio)

    def attn_block(prefix: str):
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{prefix}.attn.{name}"] = _trunc_normal(rng, (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            p[f"{prefix}.attn.{name}"] = np.zeros(d, dtype=np.float32)
        p[f"{prefix}.ln1.g"] = np.ones(d, dtype=np.float32)
        p[f"{prefix}.ln1.b"] = np.zeros(d, dtype=np.float32)
        p[f"{prefix}.ln2.g"] = np.ones(d, dtype=np.float32)
        p[f"{prefix}.ln2.b"] = np.zeros(d, dtype=np.float32)
        p[f"{prefix}.mlp.w1"] = _trunc_normal(rng, (d, hid))
        p[f"{prefix}.mlp.b1"] = np.zeros(hid, dtype=np.float32)
        p[f"{prefix}.mlp.w2"] = _trunc_normal(rng, (hid, d))
        p[f"{prefix}.mlp.b2"] = np.zeros(d, dtype=np.float32)

    p["encoder.patch.w"] = _trunc_normal(rng, (d, 3, arch.patch, arch.patch))
    p["encoder.patch.b"] = np.zeros(d, dtype=np.float32)
    p["encoder.pos"] = _trunc_normal(rng, (arch.grid * arch.grid, d))
    for i in range(arch.depth):
        attn_block(f"encoder.block{i}")
    p["encoder.norm.g"] = np.ones(d, dtype=np.float32)
    p["encoder.norm.b"] = np.zeros(d, dtype=np.float32)

    p["prompt.point.w"] = _trunc_normal(rng, (arch.feat_dim, d))
    p["prompt.point.b"] = np.zeros(d, dtype=np.float32)
    for t in ("point", "corner0", "corner1", "mask"):
        p[f"prompt.type.{t}"] = _trunc_normal(rng, (d,))
    p["prompt.mask.w"] = _trunc_normal(rng, (d, 1, arch.patch, arch.patch))
    p["prompt.mask.b"] = np.zeros(d, dtype=np.float32)

    for i in range(arch.decoder_depth):
        attn_block(f"decoder.block{i}")
    ch = arch.head_channels
    p["decoder.head.conv1.w"] = _trunc_normal(rng, (ch, d, 3, 3))
    p["decoder.head.conv1.b"] = np.zeros(ch, dtype=np.float32)
    p[FINAL_CONV_W] = _trunc_normal(rng, (ch, ch, 3, 3))
    p[FINAL_CONV_B] = np.zeros(ch, dtype=np.float32)
    p["decoder.head.logit.w"] = _trunc_normal(rng, (1, ch, 1, 1))
    p["decoder.head.logit.b"] = np.zeros(1, dtype=np.float32)
    return ModelParams(arch, {k: Tensor(v) for k, v in p.items()})


# -- forward pieces ----------------------------------------------------------------

@dataclass
class ImageEmbedding:
    tokens: Tensor            # (T, d)
    grid: tuple[int, int]     # token grid (Gh, Gw)
    pooled: Tensor            # (d,) mean over tokens
    frame_hw: tuple[int, int]


@dataclass
class PromptTokens:
    tokens: Tensor                  # (S, d)
    bias_grid: Tensor | None = None  # (T, d) additive bias for mask prompts


def _attention(x_q: Tensor, x_kv: Tensor, params: ModelParams, prefix: str,
               heads: int, records: list | None) -> Tensor:
    d = x_q.shape[-1]
    dh = d // heads
    tq, tk = x_q.shape[0], x_kv.shape[0]
    q = (matmul(x_q, params[f"{prefix}.wq"]) + params[f"{prefix}.bq"]) \
        .reshape(tq, heads, dh).transpose(1, 0, 2)
    k = (matmul(x_kv, params[f"{prefix}.wk"]) + params[f"{prefix}.bk"]) \
        .reshape(tk, heads, dh).transpose(1, 0, 2)
    v = (matmul(x_kv, params[f"{prefix}.wv"]) + params[f"{prefix}.bv"]) \
        .reshape(tk, heads, dh).transpose(1, 0, 2)
    scores = matmul(q, k.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    if records is not None:
        records.append(attn.data.copy())
    out = matmul(attn, v).transpose(1, 0, 2).reshape(tq, d)
    return matmul(out, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]


def _mlp(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = relu(matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    return matmul(h, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]


def _pos_for_grid(params: ModelParams, gh: int, gw: int) -> Tensor:
    pos = params["encoder.pos"]
    g0 = params.arch.grid
    if (gh, gw) == (g0, g0):
        return pos
    grid = pos.reshape(g0, g0, params.arch.dim).transpose(2, 0, 1)
    return bilinear_resize(grid, gh, gw).transpose(1, 2, 0).reshape(gh * gw, params.arch.dim)


def _padded_hw(h: int, w: int, patch: int) -> tuple[int, int]:
    return (math.ceil(h / patch) * patch, math.ceil(w / patch) * patch)


def encode_image(params: ModelParams, frame: np.ndarray,
                 record: bool = False):
    """Token grid + pooled embedding; optionally the per-layer attention maps."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be H×W×3, got {frame.shape}")
    arch = params.arch
    h, w = frame.shape[:2]
    x = Tensor(np.ascontiguousarray(frame.transpose(2, 0, 1), dtype=np.float32))
    ph, pw = _padded_hw(h, w, arch.patch)
    if (ph, pw) != (h, w):
        x = pad_reflect(x, ph - h, pw - w)
    gh, gw = ph // arch.patch, pw // arch.patch
    tok = conv2d(x, params["encoder.patch.w"], params["encoder.patch.b"],
                 stride=arch.patch)
    tokens = tok.reshape(arch.dim, gh * gw).transpose(1, 0)
    tokens = tokens + _pos_for_grid(params, gh, gw)
    records: list | None = [] if record else None
    for i in range(arch.depth):
        pre = f"encoder.block{i}"
        normed = layer_norm(tokens, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        tokens = tokens + _attention(normed, normed, params, f"{pre}.attn",
                                     arch.heads, records)
        normed = layer_norm(tokens, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        tokens = tokens + _mlp(normed, params, f"{pre}.mlp")
    tokens = layer_norm(tokens, params["encoder.norm.g"], params["encoder.norm.b"])
    emb = ImageEmbedding(tokens, (gh, gw), tokens.mean(axis=0), (h, w))
    return (emb, records) if record else emb


def _coord_features(y: float, x: float, h: int, w: int, freqs: int) -> np.ndarray:
    u, v = (y + 0.5) / h, (x + 0.5) / w
    feats = [u, v]
    for i in range(freqs):
        k = 2.0 ** i
        feats += [math.sin(2 * math.pi * k * u), math.cos(2 * math.pi * k * u),
                  math.sin(2 * math.pi * k * v), math.cos(2 * math.pi * k * v)]
    return np.asarray(feats, dtype=np.float32)


def encode_prompt(params: ModelParams, prompt: PromptSpec,
                  frame_hw: tuple[int, int]) -> PromptTokens:
    arch = params.arch
    h, w = frame_hw

    def point_token(y, x, type_name):
        feats = Tensor(_coord_features(y, x, h, w, arch.pos_freqs).reshape(1, -1))
        tok = matmul(feats, params["prompt.point.w"]) + params["prompt.point.b"]
        return tok + params[f"prompt.type.{type_name}"]

    if isinstance(prompt, Point):
        if not (0 <= prompt.y < h and 0 <= prompt.x < w):
            raise ValueError(f"point {prompt} outside {h}x{w} frame")
        return PromptTokens(point_token(prompt.y, prompt.x, "point"))
    if isinstance(prompt, Box):
        for y, x in ((prompt.y0, prompt.x0), (prompt.y1, prompt.x1)):
            if not (0 <= y < h and 0 <= x < w):
                raise ValueError(f"box corner ({y},{x}) outside {h}x{w} frame")
        if prompt.y1 < prompt.y0 or prompt.x1 < prompt.x0:
            raise ValueError(f"box {prompt} has negative extent")
        c0 = point_token(prompt.y0, prompt.x0, "corner0")
        c1 = point_token(prompt.y1, prompt.x1, "corner1")
        return PromptTokens(concat([c0, c1], axis=0))
    if isinstance(prompt, MaskPrompt):
        m = np.asarray(prompt.mask)
        if m.shape != (h, w):
            raise ValueError(f"mask prompt {m.shape} does not match frame {h}x{w}")
        ph, pw = _padded_hw(h, w, arch.patch)
        mm = np.zeros((1, ph, pw), dtype=np.float32)
        mm[0, :h, :w] = (m > 0)
        grid = conv2d(Tensor(mm), params["prompt.mask.w"], params["prompt.mask.b"],
                      stride=arch.patch)
        gh, gw = ph // arch.patch, pw // arch.patch
        bias = grid.reshape(arch.dim, gh * gw).transpose(1, 0)
        summary = bias.mean(axis=0).reshape(1, arch.dim) + params["prompt.type.mask"]
        return PromptTokens(summary, bias_grid=bias)
    raise TypeError(f"unknown prompt {type(prompt).__name__}")


def decode_mask(params: ModelParams, emb: ImageEmbedding,
                prompt: PromptTokens) -> Tensor:
    """Per-pixel logits at the original frame resolution."""
    arch = params.arch
    gh, gw = emb.grid
    x = emb.tokens
    if prompt.bias_grid is not None:
        x = x + prompt.bias_grid
    for i in range(arch.decoder_depth):
        pre = f"decoder.block{i}"
        normed = layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        x = x + _attention(normed, prompt.tokens, params, f"{pre}.attn",
                           arch.heads, None)
        normed = layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        x = x + _mlp(normed, params, f"{pre}.mlp")
    grid = x.transpose(1, 0).reshape(arch.dim, gh, gw)
    y = bilinear_resize(grid, gh * 2, gw * 2)
    y = relu(conv2d(y, params["decoder.head.conv1.w"],
                    params["decoder.head.conv1.b"], stride=1, pad=1))
    y = bilinear_resize(y, gh * 4, gw * 4)
    y = relu(conv2d(y, params[FINAL_CONV_W], params[FINAL_CONV_B],
                    stride=1, pad=1))
    h, w = emb.frame_hw
    y = bilinear_resize(y, h, w)
    logits = conv2d(y, params["decoder.head.logit.w"], params["decoder.head.logit.b"])
    return logits.reshape(h, w)


def forward_frame(params: ModelParams, frame: np.ndarray,
                  prompt: PromptSpec) -> Tensor:
    emb = encode_image(params, frame)
    return decode_mask(params, emb, encode_prompt(params, prompt, frame.shape[:2]))


def forward_video(params: ModelParams, video: VideoSequence,
                  prompt: PromptSpec) -> list[np.ndarray]:
    """Frame 0 uses the user prompt; later frames are prompted with the
    thresholded previous prediction."""
    logits = forward_frame(params, video.frames[0], prompt).data
    out = [logits]
    for t in range(1, len(video.frames)):
        prev = (out[-1] >= 0.0).astype(np.uint8)  # sigmoid(l) >= 0.5
        logits = forward_frame(params, video.frames[t], MaskPrompt(prev)).data
        out.append(logits)
    return out


# -- persistence --------------------------------------------------------------------

def save_params(params: ModelParams, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "arch.json").write_text(json.dumps(asdict(params.arch), indent=2,
                                              sort_keys=True))
    for path, t in params.params.items():
        save_bvtf(out / f"{path}.bvtf", t.data)


def load_params(in_dir: str | Path) -> ModelParams:
    src = Path(in_dir)
    arch = ArchConfig(**json.loads((src / "arch.json").read_text()))
    fresh = init_params(arch, seed=0)
    loaded: dict[str, Tensor] = {}
    for path, t in fresh.params.items():
        fp = src / f"{path}.bvtf"
        if not fp.exists():
            raise FileNotFoundError(f"missing parameter file {fp}")
        arr = load_bvtf(fp)
        if arr.shape != t.shape:
            raise ValueError(f"{path}: stored shape {arr.shape} != expected {t.shape}")
        loaded[path] = Tensor(arr)
    return ModelParams(arch, loaded)
