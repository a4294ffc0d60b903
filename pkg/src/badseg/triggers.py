"""Trigger synthesis: the five trigger families at their published settings.

All triggers are pure functions of (spec, frame, frame_index); randomized
pieces derive from seeds carried in the spec, so a given spec reproduces the
identical trigger bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics.signal import bilinear_warp, fft2, gaussian_smooth, ifft2

__all__ = [
    "Location",
    "BadNetSpec",
    "BlendedSpec",
    "WaNetSpec",
    "FibaSpec",
    "PhysicalSpec",
    "apply_trigger",
    "make_wanet_field",
    "fiba_mix",
    "trigger_footprint",
    "make_sprite",
    "spec_to_json",
    "spec_from_json",
]

CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")
LOCATION_KINDS = CORNERS + ("center", "random")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Location:
    """Placement of a rectangular trigger footprint."""
    kind: str = "bottom_right"
    seed: int = 0  # used only by kind == "random"

    def __post_init__(self):
        if self.kind not in LOCATION_KINDS:
            raise ValueError(f"unknown trigger location {self.kind!r}")

    def anchor(self, h: int, w: int, fh: int, fw: int, margin: int,
               frame_index: int) -> tuple[int, int]:
        """Top-left corner of an fh×fw footprint inside an h×w frame."""
        if self.kind == "top_left":
            r0, c0 = margin, margin
        elif self.kind == "top_right":
            r0, c0 = margin, w - margin - fw
        elif self.kind == "bottom_left":
            r0, c0 = h - margin - fh, margin
        elif self.kind == "bottom_right":
            r0, c0 = h - margin - fh, w - margin - fw
        elif self.kind == "center":
            r0, c0 = (h - fh) // 2, (w - fw) // 2
        else:
            if fh > h or fw > w:
                raise ValueError(
                    f"trigger footprint {fh}x{fw} exceeds frame {h}x{w}")
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, frame_index]))
            r0 = int(rng.integers(0, h - fh + 1))
            c0 = int(rng.integers(0, w - fw + 1))
        if r0 < 0 or c0 < 0 or r0 + fh > h or c0 + fw > w:
            raise ValueError(
                f"trigger footprint {fh}x{fw} at {self.kind} (margin {margin}) "
                f"exceeds frame {h}x{w}")
        return r0, c0


@dataclass(frozen=True)
class BadNetSpec:
    """Solid-color square patch."""
    size_px: int = 40
    pad_px: int = 8
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    location: Location = field(default_factory=Location)

    def __post_init__(self):
        if self.size_px < 1 or self.pad_px < 0:
            raise ValueError("BadNet size_px must be >=1 and pad_px >=0")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError("BadNet color must lie in [0,1]^3")


@dataclass(frozen=True)
class BlendedSpec:
    """Random texture square alpha-blended flush into a corner."""
    side_fraction: float = 0.18
    alpha: float = 0.18
    texture_seed: int = 0
    location: Location = field(default_factory=Location)
    texture: np.ndarray | None = None  # fixed texture override (tests)

    def __post_init__(self):
        if not 0.0 < self.side_fraction <= 1.0:
            raise ValueError("Blended side_fraction must be in (0,1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("Blended alpha must be in [0,1]")


@dataclass(frozen=True)
class WaNetSpec:
    """Fixed smooth displacement-field warp."""
    kernel_size: int = 101
    max_disp_fraction: float = 0.01
    field_seed: int = 0

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("WaNet kernel_size must be odd and positive")
        if not 0.0 < self.max_disp_fraction <= 1.0:
            raise ValueError("WaNet max_disp_fraction must be in (0,1]")


@dataclass(frozen=True)
class FibaSpec:
    """Low-frequency amplitude mixing in the Fourier domain."""
    window_fraction: float = 0.06
    alpha: float = 0.25
    trigger_image: np.ndarray | None = None
    trigger_seed: int = 0  # synthesizes a texture when trigger_image is None

    def __post_init__(self):
        if not 0.0 < self.window_fraction <= 1.0:
            raise ValueError("FIBA window_fraction must be in (0,1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("FIBA alpha must be in [0,1]")


@dataclass(frozen=True)
class PhysicalSpec:
    """Alpha-composited object paste (synthetic stand-in for a real object)."""
    object_image: np.ndarray | None = None  # H×W×4 RGBA in [0,1]
    sprite: str = "leaf"  # used when object_image is None
    scale_fraction: float = 0.25
    location: Location = field(default_factory=lambda: Location("bottom_left"))

    def __post_init__(self):
        if not 0.0 < self.scale_fraction <= 1.0:
            raise ValueError("Physical scale_fraction must be in (0,1]")

    def resolve_object(self) -> np.ndarray:
        if self.object_image is not None:
            return self.object_image
        return make_sprite(self.sprite, 64)


TriggerSpec = BadNetSpec | BlendedSpec | WaNetSpec | FibaSpec | PhysicalSpec


# -- field / mixing primitives ------------------------------------------------

def _wanet_field_raw(h: int, w: int, kernel_size: int, max_disp_fraction: float,
                     field_seed: int) -> np.ndarray:
    rng = np.random.default_rng(field_seed)
    raw = rng.uniform(-1.0, 1.0, size=(h, w, 2)).astype(np.float32)
    # frames smaller than the nominal kernel get the largest odd kernel that fits
    k = min(kernel_size, min(h, w) if min(h, w) % 2 == 1 else min(h, w) - 1)
    k = max(k, 1)
    out = np.empty_like(raw)
    for ch in range(2):
        out[..., ch] = gaussian_smooth(raw[..., ch], k)
    peak = np.abs(out).max()
    target = max_disp_fraction * min(h, w)
    if peak > 0:
        out *= np.float32(target / peak)
    return out


@lru_cache(maxsize=32)
def _wanet_field_cached(h, w, kernel_size, max_disp_fraction, field_seed):
    arr = _wanet_field_raw(h, w, kernel_size, max_disp_fraction, field_seed)
    arr.setflags(write=False)
    return arr


def make_wanet_field(h: int, w: int, spec: WaNetSpec) -> np.ndarray:
    """Smooth displacement field with max ∞-norm = max_disp_fraction·min(h,w)."""
    if h < 1 or w < 1:
        raise ValueError("field dimensions must be positive")
    return _wanet_field_cached(h, w, spec.kernel_size, spec.max_disp_fraction,
                               spec.field_seed)


def fiba_mix(benign: np.ndarray, trigger: np.ndarray, window_fraction: float,
             alpha: float) -> np.ndarray:
    """Blend low-frequency amplitudes of trigger into benign, keeping benign phase."""
    if benign.shape != trigger.shape:
        raise ValueError(f"shape mismatch: benign {benign.shape} vs trigger {trigger.shape}")
    single = benign.ndim == 2
    b = benign[..., None] if single else benign
    t = trigger[..., None] if single else trigger
    h, w = b.shape[:2]
    s = max(1, _round_half_up(window_fraction * min(h, w)))
    cy, cx = h // 2, w // 2
    r0, c0 = cy - s // 2, cx - s // 2
    out = np.empty_like(b, dtype=np.float32)
    for ch in range(b.shape[2]):
        fb = np.fft.fftshift(fft2(b[..., ch].astype(np.float64)))
        ft = np.fft.fftshift(fft2(t[..., ch].astype(np.float64)))
        amp = np.abs(fb)
        phase = np.angle(fb)
        amp[r0:r0 + s, c0:c0 + s] = ((1.0 - alpha) * amp[r0:r0 + s, c0:c0 + s]
                                     + alpha * np.abs(ft[r0:r0 + s, c0:c0 + s]))
        mixed = np.fft.ifftshift(amp * np.exp(1j * phase))
        rec = ifft2(mixed).real
        out[..., ch] = np.clip(rec, 0.0, 1.0).astype(np.float32)
    return out[..., 0] if single else out


def _fiba_texture(h: int, w: int, channels: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, h, w]))
    tex = rng.uniform(0.0, 1.0, size=(h, w, channels)).astype(np.float32)
    for ch in range(channels):
        tex[..., ch] = gaussian_smooth(tex[..., ch], 9)
    lo, hi = tex.min(), tex.max()
    if hi > lo:
        tex = (tex - lo) / (hi - lo)
    return tex


# -- footprints and application ----------------------------------------------

def _blended_side(h: int, w: int, side_fraction: float) -> int:
    return max(1, _round_half_up(side_fraction * min(h, w)))


def _scaled_object(obj: np.ndarray, h: int, w: int, scale_fraction: float) -> np.ndarray:
    oh, ow = obj.shape[:2]
    s = max(1, _round_half_up(scale_fraction * min(h, w)))
    sw = max(1, _round_half_up(ow * s / oh))
    rows = np.minimum((np.arange(s) * oh) // s, oh - 1)
    cols = np.minimum((np.arange(sw) * ow) // sw, ow - 1)
    return obj[rows[:, None], cols[None, :]]


def trigger_footprint(spec: TriggerSpec, h: int, w: int,
                      frame_index: int = 0) -> tuple[int, int, int, int]:
    """(row0, col0, height, width) of the patch region; whole frame for
    WaNet/FIBA."""
    if isinstance(spec, BadNetSpec):
        r0, c0 = spec.location.anchor(h, w, spec.size_px, spec.size_px,
                                      spec.pad_px, frame_index)
        return r0, c0, spec.size_px, spec.size_px
    if isinstance(spec, BlendedSpec):
        side = _blended_side(h, w, spec.side_fraction)
        r0, c0 = spec.location.anchor(h, w, side, side, 0, frame_index)
        return r0, c0, side, side
    if isinstance(spec, PhysicalSpec):
        obj = _scaled_object(spec.resolve_object(), h, w, spec.scale_fraction)
        r0, c0 = spec.location.anchor(h, w, obj.shape[0], obj.shape[1], 0, frame_index)
        return r0, c0, obj.shape[0], obj.shape[1]
    return 0, 0, h, w


def apply_trigger(frame: np.ndarray, spec: TriggerSpec, frame_index: int = 0) -> np.ndarray:
    """Return a triggered copy of the frame (H×W×3 floats in [0,1])."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be H×W×3, got {frame.shape}")
    h, w = frame.shape[:2]
    out = frame.astype(np.float32, copy=True)

    if isinstance(spec, BadNetSpec):
        r0, c0, fh, fw = trigger_footprint(spec, h, w, frame_index)
        out[r0:r0 + fh, c0:c0 + fw] = np.asarray(spec.color, dtype=np.float32)
        return out

    if isinstance(spec, BlendedSpec):
        r0, c0, side, _ = trigger_footprint(spec, h, w, frame_index)
        if spec.texture is not None:
            tex = np.asarray(spec.texture, dtype=np.float32)
            if tex.shape[:2] != (side, side):
                raise ValueError(f"texture override must be {side}x{side}")
        else:
            rng = np.random.default_rng(spec.texture_seed)
            tex = rng.uniform(0.0, 1.0, size=(side, side, 3)).astype(np.float32)
        a = np.float32(spec.alpha)
        region = out[r0:r0 + side, c0:c0 + side]
        out[r0:r0 + side, c0:c0 + side] = (1 - a) * region + a * tex
        np.clip(out, 0.0, 1.0, out=out)
        return out

    if isinstance(spec, WaNetSpec):
        disp = make_wanet_field(h, w, spec)
        return bilinear_warp(out, disp)

    if isinstance(spec, FibaSpec):
        if spec.trigger_image is not None:
            trig = np.asarray(spec.trigger_image, dtype=np.float32)
            if trig.shape != frame.shape:
                raise ValueError(
                    f"FIBA trigger image {trig.shape} does not match frame {frame.shape}")
        else:
            trig = _fiba_texture(h, w, 3, spec.trigger_seed)
        return fiba_mix(out, trig, spec.window_fraction, spec.alpha)

    if isinstance(spec, PhysicalSpec):
        obj = _scaled_object(spec.resolve_object(), h, w, spec.scale_fraction)
        r0, c0, fh, fw = trigger_footprint(spec, h, w, frame_index)
        rgb = obj[..., :3].astype(np.float32)
        a = obj[..., 3:4].astype(np.float32)
        region = out[r0:r0 + fh, c0:c0 + fw]
        out[r0:r0 + fh, c0:c0 + fw] = (1 - a) * region + a * rgb
        np.clip(out, 0.0, 1.0, out=out)
        return out

    raise TypeError(f"unknown trigger spec {type(spec).__name__}")


# -- synthetic sprites ---------------------------------------------------------

def make_sprite(kind: str, size: int = 64) -> np.ndarray:
    """Procedural RGBA sprite ('leaf', 'cone', or 'ball') for physical triggers."""
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cy = cx = (size - 1) / 2.0
    u = (ii - cy) / (size / 2.0)
    v = (jj - cx) / (size / 2.0)
    rgba = np.zeros((size, size, 4), dtype=np.float32)
    if kind == "ball":
        r2 = u * u + v * v
        mask = r2 <= 0.9 ** 2
        shade = np.clip(1.0 - 0.7 * np.sqrt(r2), 0.3, 1.0)
        rgba[..., 0] = 0.85 * shade
        rgba[..., 1] = 0.85 * shade
        rgba[..., 2] = 0.9 * shade
        rgba[..., 3] = mask
    elif kind == "cone":
        mask = (u > -0.9) & (u < 0.85) & (np.abs(v) < 0.12 + 0.45 * (u + 0.9) / 1.75)
        stripe = ((u * 4).astype(int) % 2 == 0)
        rgba[..., 0] = np.where(stripe, 0.95, 0.95)
        rgba[..., 1] = np.where(stripe, 0.35, 0.9)
        rgba[..., 2] = np.where(stripe, 0.1, 0.85)
        rgba[..., 3] = mask
    elif kind == "leaf":
        mask = (u * u / 0.9 + v * v / 0.35) <= 1.0
        vein = np.abs(v) < 0.03
        rgba[..., 0] = np.where(vein, 0.25, 0.15)
        rgba[..., 1] = np.where(vein, 0.55, 0.6)
        rgba[..., 2] = np.where(vein, 0.2, 0.15)
        rgba[..., 3] = mask
    else:
        raise ValueError(f"unknown sprite {kind!r}")
    rgba[..., :3] *= rgba[..., 3:4]  # color only where opaque
    return rgba


# -- JSON (de)serialization -----------------------------------------------------

def _location_to_json(loc: Location):
    if loc.kind == "random":
        return {"kind": "random", "seed": loc.seed}
    return loc.kind


def _location_from_json(obj) -> Location:
    if isinstance(obj, str):
        return Location(obj)
    return Location(obj["kind"], int(obj.get("seed", 0)))


def spec_to_json(spec: TriggerSpec) -> dict:
    if isinstance(spec, BadNetSpec):
        return {"variant": "badnet", "size_px": spec.size_px, "pad_px": spec.pad_px,
                "color": list(spec.color), "location": _location_to_json(spec.location)}
    if isinstance(spec, BlendedSpec):
        return {"variant": "blended", "side_fraction": spec.side_fraction,
                "alpha": spec.alpha, "texture_seed": spec.texture_seed,
                "location": _location_to_json(spec.location)}
    if isinstance(spec, WaNetSpec):
        return {"variant": "wanet", "kernel_size": spec.kernel_size,
                "max_disp_fraction": spec.max_disp_fraction,
                "field_seed": spec.field_seed}
    if isinstance(spec, FibaSpec):
        return {"variant": "fiba", "window_fraction": spec.window_fraction,
                "alpha": spec.alpha, "trigger_seed": spec.trigger_seed}
    if isinstance(spec, PhysicalSpec):
        return {"variant": "physical", "sprite": spec.sprite,
                "scale_fraction": spec.scale_fraction,
                "location": _location_to_json(spec.location)}
    raise TypeError(f"unknown trigger spec {type(spec).__name__}")


def spec_from_json(obj: dict) -> TriggerSpec:
    kind = obj.get("variant")
    rest = {k: v for k, v in obj.items() if k != "variant"}
    if "location" in rest:
        rest["location"] = _location_from_json(rest["location"])
    if kind == "badnet":
        if "color" in rest:
            rest["color"] = tuple(float(c) for c in rest["color"])
        return BadNetSpec(**rest)
    if kind == "blended":
        return BlendedSpec(**rest)
    if kind == "wanet":
        return WaNetSpec(**rest)
    if kind == "fiba":
        return FibaSpec(**rest)
    if kind == "physical":
        return PhysicalSpec(**rest)
    raise ValueError(f"unknown trigger variant {kind!r}")
