"""Training: the clean reference model, the two-stage attack, the single-stage
baseline attack, and the loss primitives they share.

Stage 1 updates only the image encoder: triggered frames are pulled toward a
fixed target embedding while clean frames stay aligned with the reference
encoder.  Stage 2 updates only the mask decoder: triggered predictions are
supervised toward the shared target mask across all prompt types (BCE+Dice)
while clean logits stay aligned with the reference behavior.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import PoisonedDataset, VideoSequence, derive_prompts
from .model import (
    ArchConfig,
    ModelParams,
    decode_mask,
    encode_image,
    encode_prompt,
    init_params,
)
from .numerics import NonFiniteError, Tensor, sigmoid

__all__ = [
    "Stage1Config",
    "Stage2Config",
    "AdamW",
    "TrainingDiverged",
    "bce",
    "dice",
    "union_project",
    "bce_loss",
    "dice_loss",
    "seg_loss",
    "stage1_loss",
    "stage2_loss",
    "pooled_embedding",
    "default_target_image",
    "train_reference",
    "train_badvsfm",
    "train_baseline",
]

PROB_FLOOR = 1e-7


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"non-finite loss at step {step}: {cause}")
        self.step = step


@dataclass
class Stage1Config:
    lambda1: float = 1.0
    epochs: int = 2
    lr: float = 1e-5
    target_image: np.ndarray | None = None  # defaults to a mid-gray frame
    distance: str = "pooled"  # or "tokens"

    def __post_init__(self):
        if self.lambda1 <= 0:
            raise ValueError("lambda1 must be positive")
        if self.distance not in ("pooled", "tokens"):
            raise ValueError(f"unknown embedding distance {self.distance!r}")


@dataclass
class Stage2Config:
    lambda2: float = 1.0
    epochs: int = 3
    lr: float = 1e-5
    eps_dice: float = 1e-6
    prompt_set: tuple[str, ...] = ("point", "box", "mask")
    utility_anchor: str = "reference_pipeline"  # or "same_encoder"

    def __post_init__(self):
        if self.lambda2 <= 0:
            raise ValueError("lambda2 must be positive")
        if not self.prompt_set:
            raise ValueError("prompt_set must be non-empty")
        if self.utility_anchor not in ("reference_pipeline", "same_encoder"):
            raise ValueError(f"unknown utility anchor {self.utility_anchor!r}")


class AdamW:
    """Adaptive moments with decoupled weight decay; deterministic given the
    gradient sequence."""

    def __init__(self, params: ModelParams, lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for path in self.params.paths():
            p = self.params[path]
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            m = self.m.get(path)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[path] = np.zeros_like(p.data)
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * self.v[path] + (1.0 - self.b2) * (g * g)
            self.m[path] = m
            self.v[path] = v
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.data = p.data - self.lr * (update + self.wd * p.data)
            p.grad = None


# -- loss primitives -----------------------------------------------------------

def union_project(mask: np.ndarray) -> np.ndarray:
    """1 where the pixel belongs to any foreground class, else 0."""
    return (np.asarray(mask) > 0).astype(np.float32)


def bce_loss(p: Tensor, q: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped away from {0,1}."""
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    qf = np.asarray(q, dtype=np.float32)
    pc = p.clip(PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -(qf * pc.log() + (1.0 - qf) * (1.0 - pc).log()).mean()


def dice_loss(p: Tensor, q: np.ndarray, eps: float = 1e-6) -> Tensor:
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    qf = np.asarray(q, dtype=np.float32)
    inter = (p * qf).sum()
    return 1.0 - (2.0 * inter + eps) / (p.sum() + float(qf.sum(dtype=np.float64)) + eps)


def bce(p: np.ndarray, q: np.ndarray) -> float:
    return bce_loss(Tensor(np.asarray(p, dtype=np.float32)), q).item()


def dice(p: np.ndarray, q: np.ndarray, eps: float = 1e-6) -> float:
    return dice_loss(Tensor(np.asarray(p, dtype=np.float32)), q, eps).item()


def seg_loss(logits: Tensor, q: np.ndarray, eps: float = 1e-6) -> Tensor:
    probs = sigmoid(logits)
    return bce_loss(probs, q) + dice_loss(probs, q, eps)


def _mean_of(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))


# -- embeddings ------------------------------------------------------------------

def pooled_embedding(params: ModelParams, frame: np.ndarray) -> np.ndarray:
    return encode_image(params, frame).pooled.data.copy()


def default_target_image(h: int, w: int) -> np.ndarray:
    return np.full((h, w, 3), 0.5, dtype=np.float32)


def _embedding_value(params: ModelParams, frame: np.ndarray, distance: str):
    emb = encode_image(params, frame)
    return emb.pooled if distance == "pooled" else emb.tokens


def _sq_distance(a: Tensor, target: np.ndarray, distance: str) -> Tensor:
    diff = a - Tensor(target)
    total = (diff * diff).sum()
    if distance == "tokens":
        total = total * (1.0 / target.shape[0])
    return total


def stage1_loss(f_params: ModelParams, ref_params: ModelParams,
                batch: list[tuple[np.ndarray, bool]], cfg: Stage1Config,
                target_emb: np.ndarray,
                ref_values: list[np.ndarray | None] | None = None) -> Tensor:
    """lambda1 * mean_trig ||f(x)-e_target||^2 + mean_clean ||f(x)-f'(x)||^2.

    `ref_values` may carry precomputed reference embeddings per batch item.
    """
    if not batch:
        raise ValueError("stage-1 batch is empty")
    trig_terms: list[Tensor] = []
    clean_terms: list[Tensor] = []
    for i, (frame, triggered) in enumerate(batch):
        value = _embedding_value(f_params, frame, cfg.distance)
        if triggered:
            trig_terms.append(_sq_distance(value, target_emb, cfg.distance))
        else:
            ref_val = ref_values[i] if ref_values is not None else None
            if ref_val is None:
                ref_val = _embedding_value(ref_params, frame, cfg.distance).data.copy()
            clean_terms.append(_sq_distance(value, ref_val, cfg.distance))
    loss = Tensor(np.float32(0.0))
    if trig_terms:
        loss = loss + _mean_of(trig_terms) * cfg.lambda1
    if clean_terms:
        loss = loss + _mean_of(clean_terms)
    return loss


def reference_anchor(ref_params: ModelParams, frame: np.ndarray,
                     prompt, cfg: Stage2Config,
                     cur_emb=None) -> np.ndarray:
    """Utility-loss target logits for one clean (frame, prompt).

    'reference_pipeline' anchors on the full clean model g'(f'(x), h(r));
    'same_encoder' follows the written objective g'(f(x), h(r)) using the
    current (stage-1) encoder's embedding.
    """
    hw = frame.shape[:2]
    ptok = encode_prompt(ref_params, prompt, hw)
    if cfg.utility_anchor == "reference_pipeline" or cur_emb is None:
        emb = encode_image(ref_params, frame)
    else:
        emb = cur_emb
    return decode_mask(ref_params, emb, ptok).data.copy()


def stage2_loss(params: ModelParams, ref_params: ModelParams,
                batch: list[dict], cfg: Stage2Config,
                caches: dict | None = None) -> tuple[Tensor, float, float]:
    """Effectiveness (BCE+Dice toward the shared target) on triggered frames
    plus lambda2 * pixel-mean squared logit alignment on clean frames.

    Batch items: {"frame", "gt" (object mask for prompt derivation),
    "triggered": bool, "q": binary target (triggered items), "key": optional
    stable cache key}.  `caches` holds 'emb', 'prompt', 'anchor' dicts so the
    frozen encoder/prompt/reference passes run once per frame.
    Returns (loss, eff_mean, util_mean).
    """
    if not batch:
        raise ValueError("stage-2 batch is empty")
    caches = caches if caches is not None else {}
    emb_c = caches.setdefault("emb", {})
    prompt_c = caches.setdefault("prompt", {})
    anchor_c = caches.setdefault("anchor", {})
    eff_terms: list[Tensor] = []
    util_terms: list[Tensor] = []
    for item in batch:
        frame = item["frame"]
        key = item.get("key")
        emb = emb_c.get(key)
        if emb is None:
            emb = encode_image(params, frame)
            # only graph-free values may be reused across backward passes
            if key is not None and emb.tokens._backward is None:
                emb_c[key] = emb
        ptoks = prompt_c.get(key)
        if ptoks is None:
            prompts = derive_prompts(item["gt"], 0)
            ptoks = {pt: (prompts[pt],
                          encode_prompt(params, prompts[pt], frame.shape[:2]))
                     for pt in cfg.prompt_set}
            if key is not None and all(tk.tokens._backward is None
                                       for _, tk in ptoks.values()):
                prompt_c[key] = ptoks
        for ptype in cfg.prompt_set:
            prompt, ptok = ptoks[ptype]
            logits = decode_mask(params, emb, ptok)
            if item["triggered"]:
                eff_terms.append(seg_loss(logits, item["q"], cfg.eps_dice))
            else:
                akey = (key, ptype)
                anchor = anchor_c.get(akey) if key is not None else None
                if anchor is None:
                    anchor = reference_anchor(ref_params, frame, prompt, cfg, emb)
                    if key is not None:
                        anchor_c[akey] = anchor
                diff = logits - Tensor(anchor)
                util_terms.append((diff * diff).mean())
    loss = Tensor(np.float32(0.0))
    eff_val = util_val = 0.0
    if eff_terms:
        eff = _mean_of(eff_terms)
        eff_val = eff.item()
        loss = loss + eff
    if util_terms:
        util = _mean_of(util_terms)
        util_val = util.item()
        loss = loss + util * cfg.lambda2
    return loss, eff_val, util_val


# -- training loops -----------------------------------------------------------------

def _frame_order(rng: np.random.Generator,
                 videos: list[VideoSequence]) -> list[tuple[int, int]]:
    pairs = [(v, t) for v, seq in enumerate(videos) for t in range(len(seq.frames))]
    perm = rng.permutation(len(pairs))
    return [pairs[i] for i in perm]


def _append_log(entry: dict, log_path: str | Path | None):
    if log_path is not None:
        with open(log_path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _supervised_epochs(params: ModelParams, videos: list[VideoSequence],
                       labels, epochs: int, lr: float,
                       prompt_set: tuple[str, ...], rng, stage: str,
                       log_path) -> None:
    """Full-model BCE+Dice epochs; `labels(v, t)` yields the binary target."""
    opt = AdamW(params, lr=lr)
    step = 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        losses = []
        for v, t in _frame_order(rng, videos):
            seq = videos[v]
            frame = seq.frames[t]
            q = labels(v, t)
            try:
                emb = encode_image(params, frame)
                prompts = derive_prompts(seq.gt_masks[t], 0)
                terms = []
                for ptype in prompt_set:
                    ptok = encode_prompt(params, prompts[ptype], frame.shape[:2])
                    terms.append(seg_loss(decode_mask(params, emb, ptok), q))
                loss = _mean_of(terms)
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingDiverged(step, exc) from exc
            opt.step()
            losses.append(loss.item())
            step += 1
        _append_log({"epoch": epoch, "stage": stage, "steps": step,
                     "mean_loss": float(np.mean(losses)),
                     "wall_time": round(time.perf_counter() - t0, 3)}, log_path)


def train_reference(clean: list[VideoSequence], epochs: int = 5, seed: int = 0,
                    lr: float = 1e-3, arch: ArchConfig | None = None,
                    init: ModelParams | None = None,
                    prompt_set: tuple[str, ...] = ("point", "box", "mask"),
                    log_path: str | Path | None = None) -> ModelParams:
    """Full-model BCE+Dice training against ground truth over all prompt types."""
    if not clean:
        raise ValueError("empty training set")
    params = init.clone() if init is not None else init_params(arch or ArchConfig(), seed)
    params.set_trainable(None)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    _supervised_epochs(params, clean,
                       lambda v, t: union_project(clean[v].gt_masks[t]),
                       epochs, lr, prompt_set, rng, "reference", log_path)
    params.set_trainable(None)
    params.zero_grad()
    return params


def train_badvsfm(init: ModelParams, ref: ModelParams, data: PoisonedDataset,
                  s1: Stage1Config, s2: Stage2Config, seed: int = 0,
                  log_path: str | Path | None = None,
                  run_stage1: bool = True, run_stage2: bool = True) -> ModelParams:
    """Two-stage attack training: encoder alignment, then decoder conditioning."""
    params = init.clone()
    videos = data.sequences
    h, w = videos[0].shape
    target_image = s1.target_image if s1.target_image is not None \
        else default_target_image(h, w)
    # captured from the initial encoder, before any stage-1 update
    target_emb = _embedding_value(params, target_image, s1.distance).data.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    step = 0

    if run_stage1:
        params.set_trainable(("encoder.",))
        opt = AdamW(params, lr=s1.lr)
        ref_emb_cache: dict = {}
        for epoch in range(s1.epochs):
            t0 = time.perf_counter()
            eff_losses, util_losses = [], []
            for v, t in _frame_order(rng, videos):
                frame = videos[v].frames[t]
                triggered = data.frame_flags[v][t]
                ref_val = None
                if not triggered:
                    ref_val = ref_emb_cache.get((v, t))
                    if ref_val is None:
                        ref_val = _embedding_value(ref, frame, s1.distance).data.copy()
                        ref_emb_cache[(v, t)] = ref_val
                try:
                    loss = stage1_loss(params, ref, [(frame, triggered)], s1,
                                       target_emb, [ref_val])
                    loss.backward()
                except NonFiniteError as exc:
                    raise TrainingDiverged(step, exc) from exc
                opt.step()
                (eff_losses if triggered else util_losses).append(loss.item())
                step += 1
            _append_log({
                "epoch": epoch, "stage": "stage1", "steps": step,
                "mean_eff": float(np.mean(eff_losses)) if eff_losses else 0.0,
                "mean_util": float(np.mean(util_losses)) if util_losses else 0.0,
                "wall_time": round(time.perf_counter() - t0, 3)}, log_path)

    if run_stage2:
        params.set_trainable(("decoder.",))
        opt = AdamW(params, lr=s2.lr)
        caches: dict = {}
        for epoch in range(s2.epochs):
            t0 = time.perf_counter()
            eff_losses, util_losses = [], []
            for v, t in _frame_order(rng, videos):
                seq = videos[v]
                triggered = data.frame_flags[v][t]
                item = {"frame": seq.frames[t], "gt": seq.gt_masks[t],
                        "triggered": triggered, "key": (v, t),
                        "q": union_project(data.target_masks[v]) if triggered else None}
                try:
                    loss, eff, util = stage2_loss(params, ref, [item], s2, caches)
                    loss.backward()
                except NonFiniteError as exc:
                    raise TrainingDiverged(step, exc) from exc
                opt.step()
                if triggered:
                    eff_losses.append(eff)
                else:
                    util_losses.append(util)
                step += 1
            _append_log({
                "epoch": epoch, "stage": "stage2", "steps": step,
                "mean_eff": float(np.mean(eff_losses)) if eff_losses else 0.0,
                "mean_util": float(np.mean(util_losses)) if util_losses else 0.0,
                "wall_time": round(time.perf_counter() - t0, 3)}, log_path)

    params.set_trainable(None)
    params.zero_grad()
    return params


def train_baseline(init: ModelParams, data: PoisonedDataset, epochs: int = 5,
                   seed: int = 0, lr: float = 1e-3,
                   prompt_set: tuple[str, ...] = ("point", "box", "mask"),
                   log_path: str | Path | None = None) -> ModelParams:
    """Single-stage full-model training on poisoned labels (classic attack)."""
    params = init.clone()
    params.set_trainable(None)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    videos = data.sequences

    def labels(v, t):
        if data.frame_flags[v][t]:
            return union_project(data.target_masks[v])
        return union_project(videos[v].gt_masks[t])

    _supervised_epochs(params, videos, labels, epochs, lr, prompt_set, rng,
                       "baseline", log_path)
    params.set_trainable(None)
    params.zero_grad()
    return params
