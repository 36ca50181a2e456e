"""Media shapes, token counts and synthetic stage-mixed workloads.

Media exist only as shape metadata. A video of ``T' + 1`` frames is encoded
by a causal VAE into ``1 + T'/d_t`` latent frames: the first frame always gets
its own latent, the rest are grouped ``d_t`` at a time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .costmodel import LatentDims
from .errors import ValidationError

IMAGE = "image"
VIDEO = "video"
MODALITIES = (IMAGE, VIDEO)

T2V = "text-to-video"
I2V = "image-to-video"
EXTENSION = "video-extension"
TASKS = (T2V, I2V, EXTENSION)


@dataclass(frozen=True)
class VaeConfig:
    d_t: int
    d_h: int
    d_w: int
    c_latent: int

    def __post_init__(self):
        for name in ("d_t", "d_h", "d_w", "c_latent"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValidationError(f"VaeConfig.{name} must be an integer >= 1, got {v!r}")


VAE_PRESETS = {
    "seaweed48x": VaeConfig(4, 8, 8, 16),
    "seaweed64x": VaeConfig(4, 16, 16, 48),
}


def vae_preset(name: str) -> VaeConfig:
    try:
        return VAE_PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown VAE preset {name!r}; known: {sorted(VAE_PRESETS)}") from None


@dataclass(frozen=True)
class PatchConfig:
    p_t: int = 1
    p_h: int = 2
    p_w: int = 2

    def __post_init__(self):
        for name in ("p_t", "p_h", "p_w"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValidationError(f"PatchConfig.{name} must be an integer >= 1, got {v!r}")

    @property
    def volume(self) -> int:
        return self.p_t * self.p_h * self.p_w


@dataclass(frozen=True)
class MediaSpec:
    kind: str
    frame_count: int
    height: int
    width: int
    fps: float = 0.0

    def __post_init__(self):
        if self.kind not in MODALITIES:
            raise ValidationError(f"media kind must be one of {MODALITIES}, got {self.kind!r}")
        if self.kind == IMAGE and self.frame_count != 1:
            raise ValidationError(f"images have exactly 1 frame, got {self.frame_count}")
        if self.frame_count < 1:
            raise ValidationError(f"frame_count must be >= 1, got {self.frame_count}")
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"height and width must be >= 1, got {self.height}x{self.width}")

    @classmethod
    def image(cls, height: int, width: int) -> "MediaSpec":
        return cls(IMAGE, 1, height, width, 0.0)

    @classmethod
    def video(cls, frame_count: int, height: int, width: int, fps: float = 24.0) -> "MediaSpec":
        return cls(VIDEO, frame_count, height, width, fps)


@dataclass(frozen=True)
class LatentShape:
    frames: int
    height: int
    width: int
    channels: int

    @property
    def voxels(self) -> int:
        """Latent cells per channel."""
        return self.frames * self.height * self.width


def compression_ratio(vae: VaeConfig) -> Fraction:
    """Latent-to-pixel size ratio ``C / (3 d_t d_h d_w)`` as an exact rational."""
    return Fraction(vae.c_latent, 3 * vae.d_t * vae.d_h * vae.d_w)


def latent_shape(media: MediaSpec, vae: VaeConfig) -> LatentShape:
    if media.kind == VIDEO and (media.frame_count - 1) % vae.d_t:
        raise ValidationError(
            f"time axis: frame_count - 1 = {media.frame_count - 1} not divisible by d_t = {vae.d_t}"
        )
    if media.height % vae.d_h:
        raise ValidationError(f"height axis: {media.height} not divisible by d_h = {vae.d_h}")
    if media.width % vae.d_w:
        raise ValidationError(f"width axis: {media.width} not divisible by d_w = {vae.d_w}")
    frames = 1 + (media.frame_count - 1) // vae.d_t
    return LatentShape(frames, media.height // vae.d_h, media.width // vae.d_w, vae.c_latent)


def token_grid(media: MediaSpec, vae: VaeConfig, patch: PatchConfig) -> LatentDims:
    """Transformer token grid after patchify.

    When the latent frame count is ``1 (mod p_t)`` the dedicated first frame
    forms its own temporal patch group.
    """
    lat = latent_shape(media, vae)
    if patch.p_t > 1 and lat.frames % patch.p_t not in (0, 1):
        raise ValidationError(
            f"time axis: {lat.frames} latent frames not groupable by p_t = {patch.p_t} "
            "(need frames = 0 or 1 mod p_t)"
        )
    if lat.height % patch.p_h:
        raise ValidationError(f"height axis: latent height {lat.height} not divisible by p_h = {patch.p_h}")
    if lat.width % patch.p_w:
        raise ValidationError(f"width axis: latent width {lat.width} not divisible by p_w = {patch.p_w}")
    return LatentDims(-(-lat.frames // patch.p_t), lat.height // patch.p_h, lat.width // patch.p_w)


def seq_len(media: MediaSpec, vae: VaeConfig, patch: PatchConfig) -> int:
    return token_grid(media, vae, patch).tokens


def resolve_target_area(
    target: tuple[int, int],
    aspect_ratio: float | Fraction,
    snap: tuple[int, int] = (16, 16),
) -> tuple[int, int]:
    """Snap a target area to (height, width) multiples of ``snap`` at ``aspect_ratio`` (w/h).

    Heights are searched exhaustively from one snap unit up to ``4 * sqrt(area)``;
    each height is paired with the width multiple nearest ``h * aspect``. The
    pair whose area is closest to the target wins; ties prefer the smaller
    area, then the wider shape.
    """
    aspect = Fraction(aspect_ratio).limit_denominator(10_000)
    if not Fraction(1, 3) <= aspect <= 3:
        raise ValidationError(f"aspect ratio {float(aspect):.4f} outside [1/3, 3]")
    snap_h, snap_w = snap
    if snap_h < 1 or snap_w < 1:
        raise ValidationError(f"snap multiples must be >= 1, got {snap}")
    area = target[0] * target[1]
    h_max = int(4 * math.isqrt(area)) + 4

    best = None
    for h in range(snap_h, h_max + 1, snap_h):
        ideal_units = Fraction(h) * aspect / snap_w
        lo = math.floor(ideal_units)
        units = [lo] if ideal_units == lo else [lo, lo + 1]
        if len(units) == 2:
            d_lo, d_hi = ideal_units - lo, lo + 1 - ideal_units
            if d_lo != d_hi:
                units = [lo] if d_lo < d_hi else [lo + 1]
        for u in units:
            if u < 1:
                continue
            w = u * snap_w
            key = (abs(h * w - area), h * w, -Fraction(w, h))
            if best is None or key < best[0]:
                best = (key, (h, w))
    if best is None:
        raise ValidationError(f"no snapped dimensions for area {area} at aspect {float(aspect):.4f}")
    return best[1]


@dataclass(frozen=True)
class WorkItem:
    id: int
    modality: str
    task: str
    stage: int
    seq_len: int
    media: MediaSpec

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "modality": self.modality,
            "task": self.task,
            "stage": self.stage,
            "frames": self.media.frame_count,
            "height": self.media.height,
            "width": self.media.width,
            "fps": self.media.fps,
            "seq_len": self.seq_len,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "WorkItem":
        media = MediaSpec(rec["modality"], int(rec["frames"]), int(rec["height"]), int(rec["width"]), float(rec["fps"]))
        return cls(int(rec["id"]), rec["modality"], rec["task"], int(rec["stage"]), int(rec["seq_len"]), media)


@dataclass(frozen=True)
class StageRecipe:
    stage: int
    image_areas: tuple[tuple[int, int], ...]
    video_areas: tuple[tuple[int, int], ...]
    step_fraction: float
    image_fraction: float = 0.5
    i2v_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "image_areas", tuple(tuple(a) for a in self.image_areas))
        object.__setattr__(self, "video_areas", tuple(tuple(a) for a in self.video_areas))
        for name in ("step_fraction", "image_fraction", "i2v_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"stage {self.stage}: {name} = {v} outside [0, 1]")
        if not self.image_areas and not self.video_areas:
            raise ValidationError(f"stage {self.stage}: recipe has no target areas")


# Pre-training stage mix; stage 0 is image-only.
STAGE_RECIPES = (
    StageRecipe(0, ((256, 256), (512, 512)), (), 0.375, image_fraction=1.0),
    StageRecipe(1, ((256, 256), (512, 512)), ((256, 256),), 0.25),
    StageRecipe(2, ((640, 480), (1280, 720)), ((640, 480),), 0.25),
    StageRecipe(3, ((1280, 720), (1920, 1024)), ((1280, 720),), 0.125),
)

DEFAULT_ASPECTS = (Fraction(1), Fraction(4, 3), Fraction(3, 4), Fraction(16, 9), Fraction(9, 16))


@dataclass(frozen=True)
class SamplerOptions:
    aspects: tuple = DEFAULT_ASPECTS
    durations_s: tuple = (5, 10)
    fps: int = 24


def validate_recipes(recipes: Sequence[StageRecipe]) -> None:
    if not recipes:
        raise ValidationError("at least one stage recipe is required")
    total = math.fsum(r.step_fraction for r in recipes)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"stage step fractions sum to {total}, expected 1")
    stages = [r.stage for r in recipes]
    if len(set(stages)) != len(stages):
        raise ValidationError(f"duplicate stage ids in recipes: {stages}")


def allocate_stages(recipes: Sequence[StageRecipe], item_count: int) -> list[int]:
    """Largest-remainder apportionment of ``item_count`` across stages.

    Remainder ties go to the larger step fraction, then the lower stage id.
    """
    quotas = [Fraction(r.step_fraction).limit_denominator(1 << 20) * item_count for r in recipes]
    counts = [math.floor(q) for q in quotas]
    left = item_count - sum(counts)
    order = sorted(
        range(len(recipes)),
        key=lambda i: (-(quotas[i] - counts[i]), -recipes[i].step_fraction, recipes[i].stage),
    )
    for i in order[:left]:
        counts[i] += 1
    return counts


def _video_frames(duration_s: float, fps: int, vae: VaeConfig, patch: PatchConfig) -> int:
    # round the pixel frame count down so both VAE and temporal patch grouping divide evenly
    step = vae.d_t * patch.p_t
    t = int(duration_s * fps) // step * step
    return max(t, step) + 1


def gen_workload(
    recipes: Sequence[StageRecipe],
    vae: VaeConfig,
    patch: PatchConfig,
    item_count: int,
    seed: int,
    options: SamplerOptions = SamplerOptions(),
) -> list[WorkItem]:
    """Sample a deterministic stage-mixed workload.

    Stage counts follow the recipes' step fractions exactly (largest remainder);
    modality, task, target area, aspect and duration are drawn per item.
    """
    if item_count < 1:
        raise ValidationError(f"item_count must be >= 1, got {item_count}")
    validate_recipes(recipes)
    rng = np.random.default_rng(seed)
    snap = (vae.d_h * patch.p_h, vae.d_w * patch.p_w)
    items: list[WorkItem] = []
    for recipe, count in zip(recipes, allocate_stages(recipes, item_count)):
        for _ in range(count):
            want_image = not recipe.video_areas or bool(recipe.image_areas and rng.random() < recipe.image_fraction)
            areas = recipe.image_areas if want_image else recipe.video_areas
            area = areas[int(rng.integers(len(areas)))]
            aspect = options.aspects[int(rng.integers(len(options.aspects)))]
            h, w = resolve_target_area(area, aspect, snap)
            if want_image:
                media = MediaSpec.image(h, w)
                task = T2V
            else:
                dur = options.durations_s[int(rng.integers(len(options.durations_s)))]
                media = MediaSpec.video(_video_frames(dur, options.fps, vae, patch), h, w, float(options.fps))
                task = I2V if rng.random() < recipe.i2v_fraction else T2V
            items.append(WorkItem(len(items), media.kind, task, recipe.stage, seq_len(media, vae, patch), media))
    return items


def write_workload(items: Iterable[WorkItem], path: str | Path) -> None:
    with open(path, "w") as f:
        for it in items:
            f.write(json.dumps(it.to_record(), sort_keys=False) + "\n")


RECORD_FIELDS = ("id", "modality", "task", "stage", "frames", "height", "width", "fps", "seq_len")


def read_workload(path: str | Path) -> list[WorkItem]:
    items = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if set(rec) != set(RECORD_FIELDS):
                raise ValidationError(f"{path}:{lineno}: fields must be exactly {RECORD_FIELDS}")
            items.append(WorkItem.from_record(rec))
    return items
