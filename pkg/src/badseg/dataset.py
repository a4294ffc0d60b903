"""Video data model: synthetic generation, manifest I/O, prompt derivation,
attack targets, and the poisoning pipeline producing triggered/clean splits."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .numerics.bvtf import load_bvtf, save_bvtf
from .numerics.signal import gaussian_smooth
from .triggers import TriggerSpec, apply_trigger

__all__ = [
    "VideoSequence",
    "AttackTarget",
    "PoisonConfig",
    "PoisonedDataset",
    "Point",
    "Box",
    "MaskPrompt",
    "make_target_mask",
    "derive_prompts",
    "synth_dataset",
    "render_video",
    "build_poisoned",
    "save_manifest",
    "load_manifest",
]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class VideoSequence:
    """Frames plus per-frame ground-truth masks for one clip."""
    id: str
    frames: list[np.ndarray]          # each H×W×3 float32 in [0,1]
    gt_masks: list[np.ndarray]        # each H×W uint8, 0 = background
    object_ids: list[int] = field(default_factory=lambda: [1])

    def __post_init__(self):
        if len(self.frames) != len(self.gt_masks) or not self.frames:
            raise ValueError(f"video {self.id}: need equal, nonzero frame/mask counts")
        hw = self.frames[0].shape[:2]
        for i, (f, m) in enumerate(zip(self.frames, self.gt_masks)):
            if f.shape[:2] != hw or m.shape != hw:
                raise ValueError(f"video {self.id}: frame {i} shape mismatch")

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape[:2]


# -- attack targets -------------------------------------------------------------

@dataclass(frozen=True)
class AttackTarget:
    """What the backdoor should make the model output.

    kind: 'disappearance' (all-zero mask), 'deformation' (centered circle of
    radius radius_fraction·min(h,w)), or 'custom' (explicit mask).
    """
    kind: str = "disappearance"
    radius_fraction: float = 0.18
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("disappearance", "deformation", "custom"):
            raise ValueError(f"unknown attack target {self.kind!r}")
        if self.kind == "custom" and self.mask is None:
            raise ValueError("custom target needs a mask")


def make_target_mask(h: int, w: int, target: AttackTarget) -> np.ndarray:
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be positive")
    if target.kind == "disappearance":
        return np.zeros((h, w), dtype=np.uint8)
    if target.kind == "deformation":
        r = target.radius_fraction * min(h, w)
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        inside = (ii - h / 2.0) ** 2 + (jj - w / 2.0) ** 2 <= r * r
        return inside.astype(np.uint8)
    m = np.asarray(target.mask)
    if m.shape != (h, w):
        raise ValueError(f"custom target mask {m.shape} does not match ({h},{w})")
    return (m > 0).astype(np.uint8)


# -- prompts ---------------------------------------------------------------------

@dataclass(frozen=True)
class Point:
    y: int
    x: int


@dataclass(frozen=True)
class Box:
    y0: int
    x0: int
    y1: int
    x1: int


@dataclass
class MaskPrompt:
    mask: np.ndarray  # H×W, nonzero = foreground


PromptSpec = Point | Box | MaskPrompt

PROMPT_TYPES = ("point", "box", "mask")


def derive_prompts(first_gt: np.ndarray, seed: int = 0) -> dict[str, PromptSpec]:
    """Point/box/mask prompts for one object mask (nonzero = foreground).

    Point is the foreground pixel nearest the centroid (deterministic);
    box is the tight bounding box; mask is the mask itself.
    """
    fg = np.argwhere(first_gt > 0)
    if fg.size == 0:
        raise ValueError("cannot derive point/box prompts from an empty mask")
    centroid = fg.mean(axis=0)
    d2 = ((fg - centroid) ** 2).sum(axis=1)
    py, px = fg[int(np.argmin(d2))]  # first occurrence = lexicographic tie-break
    y0, x0 = fg.min(axis=0)
    y1, x1 = fg.max(axis=0)
    return {
        "point": Point(int(py), int(px)),
        "box": Box(int(y0), int(x0), int(y1), int(x1)),
        "mask": MaskPrompt((first_gt > 0).astype(np.uint8)),
    }


# -- synthetic videos -------------------------------------------------------------

def _shape_support(kind: str, radius: int) -> np.ndarray:
    n = 2 * radius + 1
    di, dj = np.meshgrid(np.arange(n) - radius, np.arange(n) - radius, indexing="ij")
    if kind == "circle":
        return (di * di + dj * dj) <= radius * radius
    if kind == "square":
        return np.ones((n, n), dtype=bool)
    if kind == "triangle":
        return np.abs(dj) <= (di + radius) / 2.0
    raise ValueError(f"unknown shape {kind!r}")


def _textured(base: np.ndarray, h: int, w: int, rng: np.random.Generator,
              amplitude: float = 0.08) -> np.ndarray:
    out = np.empty((h, w, 3), dtype=np.float32)
    noise = rng.uniform(-1.0, 1.0, size=(h, w, 3)).astype(np.float32)
    for ch in range(3):
        out[..., ch] = base[ch] + amplitude * gaussian_smooth(noise[..., ch], 5)
    return np.clip(out, 0.0, 1.0)


def render_video(video_id: str, n_frames: int, h: int, w: int, kind: str,
                 radius: int, start: tuple[int, int], velocity: tuple[int, int],
                 bg_color: np.ndarray, fg_color: np.ndarray,
                 texture_rng: np.random.Generator) -> VideoSequence:
    """Render one moving textured shape over a static textured background.

    Motion is integer-pixel with wall bounces, so ground-truth masks are the
    exact translated shape support each frame.
    """
    if 2 * radius + 1 > min(h, w):
        raise ValueError(f"shape of radius {radius} does not fit a {h}x{w} frame")
    support = _shape_support(kind, radius)
    background = _textured(bg_color, h, w, texture_rng)
    patch = _textured(fg_color, 2 * radius + 1, 2 * radius + 1, texture_rng)

    frames, masks = [], []
    cy, cx = start
    vy, vx = velocity
    for _ in range(n_frames):
        frame = background.copy()
        mask = np.zeros((h, w), dtype=np.uint8)
        r0, c0 = cy - radius, cx - radius
        region = frame[r0:r0 + support.shape[0], c0:c0 + support.shape[1]]
        region[support] = patch[support]
        mask[r0:r0 + support.shape[0], c0:c0 + support.shape[1]][support] = 1
        frames.append(frame)
        masks.append(mask)
        ny, nx = cy + vy, cx + vx
        if ny - radius < 0 or ny + radius > h - 1:
            vy = -vy
            ny = cy + vy
        if nx - radius < 0 or nx + radius > w - 1:
            vx = -vx
            nx = cx + vx
        cy, cx = ny, nx
    return VideoSequence(video_id, frames, masks, [1])


def synth_dataset(seed: int, n_videos: int, n_frames: int, h: int, w: int,
                  prefix: str = "synth") -> list[VideoSequence]:
    """Deterministic single-object moving-shape videos with exact masks."""
    if min(n_videos, n_frames, h, w) < 1:
        raise ValueError("all sizes must be >= 1")
    videos = []
    kinds = ("circle", "square", "triangle")
    for v in range(n_videos):
        rng = np.random.default_rng(np.random.SeedSequence([seed, v]))
        kind = kinds[int(rng.integers(0, 3))]
        radius = int(rng.integers(max(2, min(h, w) // 8), max(3, min(h, w) // 5) + 1))
        bg = rng.uniform(0.15, 0.85, size=3).astype(np.float32)
        while True:
            fg = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
            if np.linalg.norm(fg - bg) >= 0.6:
                break
        cy = int(rng.integers(radius, h - radius))
        cx = int(rng.integers(radius, w - radius))
        vy = int(rng.choice([-2, -1, 1, 2]))
        vx = int(rng.choice([-2, -1, 1, 2]))
        videos.append(render_video(f"{prefix}{v:03d}", n_frames, h, w, kind,
                                   radius, (cy, cx), (vy, vx), bg, fg, rng))
    return videos


# -- poisoning --------------------------------------------------------------------

@dataclass
class PoisonConfig:
    rate: float = 0.05
    trigger: TriggerSpec | None = None
    target: AttackTarget = field(default_factory=AttackTarget)
    selection_seed: int = 0
    frame_level: bool = False  # per-frame poisoning; video-level is the default

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"poisoning rate {self.rate} outside [0,1]")


@dataclass
class PoisonedDataset:
    """Training data split into triggered and clean parts.

    `poison_flags[i]` marks sequence i as (partly) triggered; `frame_flags[i][t]`
    marks individual frames.  Poisoned sequences keep their original gt_masks
    (prompts still refer to the true object); `target_masks[i]` holds the label
    their triggered frames are supervised toward.
    """
    sequences: list[VideoSequence]
    poison_flags: list[bool]
    frame_flags: list[list[bool]]
    target_masks: dict[int, np.ndarray]
    trigger: TriggerSpec | None
    target: AttackTarget

    def triggered_count(self) -> int:
        return sum(sum(f) for f in self.frame_flags)


def build_poisoned(train: list[VideoSequence], cfg: PoisonConfig) -> PoisonedDataset:
    if not train:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.selection_seed)
    n = len(train)

    if cfg.frame_level:
        pairs = [(v, t) for v, seq in enumerate(train) for t in range(len(seq.frames))]
        k = _round_half_up(cfg.rate * len(pairs))
        chosen = set(map(tuple, np.array(pairs, dtype=np.int64)[
            rng.choice(len(pairs), size=k, replace=False)].tolist())) if k else set()
        frame_flags = [[(v, t) in chosen for t in range(len(seq.frames))]
                       for v, seq in enumerate(train)]
    else:
        k = _round_half_up(cfg.rate * n)
        chosen_videos = set(rng.choice(n, size=k, replace=False).tolist()) if k else set()
        frame_flags = [[v in chosen_videos] * len(seq.frames)
                       for v, seq in enumerate(train)]

    sequences: list[VideoSequence] = []
    poison_flags: list[bool] = []
    target_masks: dict[int, np.ndarray] = {}
    for v, seq in enumerate(train):
        flags = frame_flags[v]
        if any(flags):
            frames = [apply_trigger(fr, cfg.trigger, t) if flags[t] else fr
                      for t, fr in enumerate(seq.frames)]
            sequences.append(VideoSequence(seq.id, frames,
                                           [m.copy() for m in seq.gt_masks],
                                           list(seq.object_ids)))
            poison_flags.append(True)
            h, w = seq.shape
            target_masks[v] = make_target_mask(h, w, cfg.target)
        else:
            sequences.append(seq)
            poison_flags.append(False)
    return PoisonedDataset(sequences, poison_flags, frame_flags, target_masks,
                           cfg.trigger, cfg.target)


# -- manifest I/O -------------------------------------------------------------------

def save_manifest(videos: list[VideoSequence], out_dir: str | Path,
                  frame_format: str = "bvtf") -> Path:
    """Write frames/masks plus a manifest.json; returns the manifest path.

    frame_format 'bvtf' is lossless for float frames; 'png' quantizes to 8-bit.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in videos:
        vdir = out_dir / seq.id
        vdir.mkdir(exist_ok=True)
        frame_paths, mask_paths = [], []
        for t, (frame, mask) in enumerate(zip(seq.frames, seq.gt_masks)):
            if frame_format == "bvtf":
                fp = vdir / f"frame_{t:03d}.bvtf"
                save_bvtf(fp, frame)
            elif frame_format == "png":
                fp = vdir / f"frame_{t:03d}.png"
                arr = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
                Image.fromarray(arr, mode="RGB").save(fp)
            else:
                raise ValueError(f"unknown frame format {frame_format!r}")
            mp = vdir / f"mask_{t:03d}.png"
            Image.fromarray(mask.astype(np.uint8), mode="L").save(mp)
            frame_paths.append(str(fp.relative_to(out_dir)))
            mask_paths.append(str(mp.relative_to(out_dir)))
        entries.append({"id": seq.id, "frames": frame_paths, "masks": mask_paths,
                        "objects": list(seq.object_ids)})
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"videos": entries}, indent=2, sort_keys=True))
    return manifest


def _load_frame(path: Path) -> np.ndarray:
    if path.suffix == ".bvtf":
        arr = load_bvtf(path)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"{path}: frame tensor must be H×W×3")
        return arr
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


def _load_mask(path: Path) -> np.ndarray:
    if path.suffix == ".bvtf":
        return np.rint(load_bvtf(path)).astype(np.uint8)
    img = Image.open(path)
    if img.mode in ("I", "I;16"):
        return np.asarray(img, dtype=np.int32).astype(np.uint8)
    if img.mode not in ("L", "P"):
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8)


def load_manifest(path: str | Path) -> list[VideoSequence]:
    path = Path(path)
    root = path.parent
    doc = json.loads(path.read_text())
    videos = []
    for entry in doc["videos"]:
        vid = entry["id"]
        if len(entry["frames"]) != len(entry["masks"]):
            raise ValueError(f"video {vid}: frame/mask count mismatch")
        frames, masks = [], []
        for i, (fp, mp) in enumerate(zip(entry["frames"], entry["masks"])):
            fpath, mpath = root / fp, root / mp
            for p in (fpath, mpath):
                if not p.exists():
                    raise FileNotFoundError(f"video {vid}, index {i}: missing {p}")
            frames.append(_load_frame(fpath))
            masks.append(_load_mask(mpath))
        objects = [int(o) for o in entry.get("objects", [])]
        if not objects:
            objects = sorted({int(v) for m in masks for v in np.unique(m) if v > 0}) or [1]
        videos.append(VideoSequence(vid, frames, masks, objects))
    return videos
