"""Segmentation metrics (mIoU, J&F) and the two attack-success-rate variants,
plus the evaluation harness that runs a model over test splits."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import AttackTarget, VideoSequence, derive_prompts, make_target_mask
from .model import ModelParams, forward_video

__all__ = [
    "binarize",
    "iou",
    "miou_sequence",
    "jf_sequence",
    "asr",
    "EvalReport",
    "evaluate_model",
]


def binarize(logits: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Foreground where sigmoid(logit) >= tau (inclusive at the boundary)."""
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits, -60, 60)))
    return (probs >= tau).astype(np.uint8)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; two empty masks agree perfectly (IoU 1)."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred > 0
    g = gt > 0
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def _check_paired(preds, gts):
    if len(preds) != len(gts) or not preds:
        raise ValueError("preds and gts must be equal-length and non-empty")


def miou_sequence(preds: list[np.ndarray], gts: list[np.ndarray]) -> float:
    _check_paired(preds, gts)
    return float(np.mean([iou(p, g) for p, g in zip(preds, gts)]))


def _f_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    p = pred > 0
    g = gt > 0
    np_, ng = p.sum(), g.sum()
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    inter = np.logical_and(p, g).sum()
    if inter == 0:
        return 0.0
    precision = inter / np_
    recall = inter / ng
    return float(2.0 * precision * recall / (precision + recall))


def jf_sequence(preds: list[np.ndarray], gts: list[np.ndarray]) -> float:
    """Mean of region similarity (Jaccard) and the mask precision/recall F1."""
    _check_paired(preds, gts)
    j = miou_sequence(preds, gts)
    f = float(np.mean([_f_measure(p, g) for p, g in zip(preds, gts)]))
    return 0.5 * (j + f)


def asr(preds: list[np.ndarray], target: AttackTarget) -> float:
    """Zero target: fraction of all-empty predictions.  Non-zero target:
    mean IoU between predictions and the rendered target mask."""
    if not preds:
        raise ValueError("empty prediction list")
    if target.kind == "disappearance":
        return float(np.mean([(p > 0).sum() == 0 for p in preds]))
    h, w = preds[0].shape
    tm = make_target_mask(h, w, target)
    return float(np.mean([iou(p, tm) for p in preds]))


# -- evaluation harness ---------------------------------------------------------

@dataclass
class EvalReport:
    per_prompt: dict[str, dict[str, float]]
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"per_prompt": self.per_prompt, "rows": self.rows},
                          indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        doc = json.loads(text)
        return EvalReport(doc["per_prompt"], doc["rows"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["video", "object", "prompt", "miou", "jf", "asr"])
        for r in self.rows:
            writer.writerow([r["video"], r["object"], r["prompt"],
                             f"{r['miou']:.6f}", f"{r['jf']:.6f}", f"{r['asr']:.6f}"])
        return buf.getvalue()


def evaluate_model(params: ModelParams, videos: list[VideoSequence],
                   prompt_types: tuple[str, ...], target: AttackTarget,
                   prompt_seed: int = 0) -> EvalReport:
    """Run semi-supervised inference per video/object/prompt and aggregate.

    Multi-object videos are scored per object and averaged uniformly.
    """
    rows = []
    for video in videos:
        for obj in video.object_ids:
            gts = [(m == obj).astype(np.uint8) for m in video.gt_masks]
            if gts[0].sum() == 0:
                continue  # object absent in the first frame; cannot prompt it
            prompts = derive_prompts(gts[0], prompt_seed)
            per_obj_video = VideoSequence(video.id, video.frames, gts, [1])
            for ptype in prompt_types:
                logits = forward_video(params, per_obj_video, prompts[ptype])
                preds = [binarize(lg) for lg in logits]
                rows.append({
                    "video": video.id,
                    "object": obj,
                    "prompt": ptype,
                    "miou": miou_sequence(preds, gts),
                    "jf": jf_sequence(preds, gts),
                    "asr": asr(preds, target),
                })
    per_prompt = {}
    for ptype in prompt_types:
        sub = [r for r in rows if r["prompt"] == ptype]
        if sub:
            per_prompt[ptype] = {k: float(np.mean([r[k] for r in sub]))
                                 for k in ("miou", "jf", "asr")}
        else:
            per_prompt[ptype] = {"miou": 0.0, "jf": 0.0, "asr": 0.0}
    return EvalReport(per_prompt, rows)
