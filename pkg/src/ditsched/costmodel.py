"""FLOPs, parameter and communication accounting for the diffusion transformer.

Convention: one multiply-accumulate is 2 flops. All flop counts are forward
only; callers apply the backward multiplier. Text tokens of the hybrid-stream
sequence and small terms (RoPE, modulation, norms) are not counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatentDims:
    t: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.t, self.h, self.w) < 1:
            raise ValidationError(f"latent dims must be >= 1, got {(self.t, self.h, self.w)}")

    @property
    def tokens(self) -> int:
        return self.t * self.h * self.w


@dataclass(frozen=True)
class Full:
    pass


@dataclass(frozen=True)
class SpaceOnly:
    pass


@dataclass(frozen=True)
class Window:
    """3D window attention; ``(t, h, w)`` are partition counts per axis by default."""

    t: int
    h: int
    w: int


AttnKind = Union[Full, SpaceOnly, Window]


def parse_attn_kind(spec) -> AttnKind:
    """``"full"``, ``"space"`` or ``[w_t, w_h, w_w]``."""
    if spec in ("full", "Full"):
        return Full()
    if spec in ("space", "space_only", "SpaceOnly"):
        return SpaceOnly()
    if isinstance(spec, (list, tuple)) and len(spec) == 3:
        return Window(*(int(x) for x in spec))
    raise ValidationError(f"unknown attention kind {spec!r}")


def space_full_schedule(layers: int) -> tuple[AttnKind, ...]:
    return tuple(Full() if i % 2 == 0 else SpaceOnly() for i in range(layers))


def window_schedule(layers: int) -> tuple[AttnKind, ...]:
    """Even layers use 1x2x2 windows, odd layers 4x1x1."""
    return tuple(Window(1, 2, 2) if i % 2 == 0 else Window(4, 1, 1) for i in range(layers))


@dataclass(frozen=True)
class ModelSpec:
    """Transformer shape.

    ``ffn_sharing`` selects what the deepest ``shared_ffn_fraction`` of layers
    share: ``"layers"`` replaces their FFNs by one FFN common to all of them;
    ``"streams"`` gives each of those layers a single FFN used by every stream
    instead of one per stream. ``window_mode`` reads Window triples as
    partition ``"counts"`` or window ``"sizes"``.
    """

    layers: int
    hidden: int
    heads: int
    ffn_mult: float = 4.0
    shared_ffn_fraction: float = 0.0
    attention_schedule: tuple = ()
    streams: int = 1
    ffn_sharing: str = "layers"
    window_mode: str = "counts"

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ValidationError("layers, hidden and heads must be >= 1")
        if self.hidden % self.heads:
            raise ValidationError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 <= self.shared_ffn_fraction <= 1.0:
            raise ValidationError(f"shared_ffn_fraction {self.shared_ffn_fraction} outside [0, 1]")
        if self.ffn_sharing not in ("layers", "streams"):
            raise ValidationError(f"ffn_sharing must be 'layers' or 'streams', got {self.ffn_sharing!r}")
        if self.window_mode not in ("counts", "sizes"):
            raise ValidationError(f"window_mode must be 'counts' or 'sizes', got {self.window_mode!r}")
        if self.streams < 1:
            raise ValidationError("streams must be >= 1")
        sched = tuple(self.attention_schedule) or (Full(),) * self.layers
        if len(sched) != self.layers:
            raise ValidationError(f"attention_schedule has {len(sched)} entries for {self.layers} layers")
        object.__setattr__(self, "attention_schedule", sched)

    @property
    def shared_layers(self) -> int:
        return round(self.shared_ffn_fraction * self.layers)


def seaweed7b(ffn_mult: float = 4.0, attention_schedule: Sequence[AttnKind] = ()) -> ModelSpec:
    """7B hybrid-stream preset: video and text streams, FFN shared across streams in the deepest 2/3."""
    return ModelSpec(
        layers=32,
        hidden=3584,
        heads=28,
        ffn_mult=ffn_mult,
        shared_ffn_fraction=2 / 3,
        attention_schedule=tuple(attention_schedule),
        streams=2,
        ffn_sharing="streams",
    )


MODEL_PRESETS = {"seaweed7b": seaweed7b}


@dataclass(frozen=True)
class ClusterSpec:
    ranks: int
    cp_degree: int = 1
    peak_flops: float = 989e12
    link_bandwidth: float = 50e9
    link_latency: float = 10e-6
    element_bytes: int = 2

    def __post_init__(self):
        if self.ranks < 1:
            raise ValidationError("ranks must be >= 1")
        if self.cp_degree < 1 or self.ranks % self.cp_degree:
            raise ValidationError(f"context-parallel degree {self.cp_degree} must divide ranks {self.ranks}")
        if self.peak_flops <= 0:
            raise ValidationError("peak_flops must be > 0")
        if self.link_bandwidth <= 0 or self.link_latency < 0:
            raise ValidationError("link_bandwidth must be > 0 and link_latency >= 0")
        if self.element_bytes < 1:
            raise ValidationError("element_bytes must be >= 1")

    @property
    def dp_groups(self) -> int:
        return self.ranks // self.cp_degree


def _window_counts(kind: Window, dims: LatentDims, mode: str) -> tuple[int, int, int]:
    wt, wh, ww = kind.t, kind.h, kind.w
    if min(wt, wh, ww) < 1:
        raise ValidationError(f"window factors must be >= 1, got {(wt, wh, ww)}")
    for axis, n, k in (("t", dims.t, wt), ("h", dims.h, wh), ("w", dims.w, ww)):
        if n % k:
            raise ValidationError(f"window {(wt, wh, ww)} does not divide latent axis {axis} = {n}")
    if mode == "sizes":
        return dims.t // wt, dims.h // wh, dims.w // ww
    return wt, wh, ww


def attn_flops(kind: AttnKind, dims: LatentDims, model: ModelSpec) -> int:
    """Score and context matmul flops of one attention layer (forward)."""
    s = dims.tokens
    if isinstance(kind, Full):
        return 4 * s * s * model.hidden
    if isinstance(kind, SpaceOnly):
        hw = dims.h * dims.w
        return dims.t * 4 * hw * hw * model.hidden
    if isinstance(kind, Window):
        a, b, c = _window_counts(kind, dims, model.window_mode)
        k = a * b * c
        per = s // k
        return k * 4 * per * per * model.hidden
    raise ValidationError(f"unknown attention kind {kind!r}")


def layer_flops(dims: LatentDims, model: ModelSpec, kind: AttnKind | None = None) -> float:
    kind = Full() if kind is None else kind
    s, d = dims.tokens, model.hidden
    return attn_flops(kind, dims, model) + 8 * s * d * d + 4 * s * d * d * model.ffn_mult


def model_flops(dims: LatentDims, model: ModelSpec) -> float:
    """Forward flops of one sequence through every layer of the schedule."""
    return sum(layer_flops(dims, model, k) for k in model.attention_schedule)


def param_count(model: ModelSpec) -> float:
    """Attention and FFN weights; embeddings and modulation excluded."""
    d2 = model.hidden * model.hidden
    attn = model.layers * model.streams * 4 * d2
    shared = model.shared_layers
    own = model.layers - shared
    if model.ffn_sharing == "layers":
        n_ffn = own * model.streams + (1 if shared else 0)
    else:
        n_ffn = own * model.streams + shared
    return attn + n_ffn * 2 * d2 * model.ffn_mult


def ulysses_comm(s: int, model: ModelSpec, P: int, element_bytes: int = 2) -> float:
    """All-to-all bytes sent per rank for one attention layer (Q, K, V and output)."""
    if P < 1:
        raise ValidationError(f"context-parallel degree must be >= 1, got {P}")
    if model.heads % P:
        raise ValidationError(f"heads {model.heads} not divisible by context-parallel degree {P}")
    if s % P:
        raise ValidationError(f"sequence length {s} not divisible by context-parallel degree {P}")
    per = (s // P) * model.hidden * element_bytes * (P - 1) / P
    return 4 * per


def mfu(achieved_flops: float, elapsed_seconds: float, ranks: int, peak_flops_per_rank: float) -> float:
    if elapsed_seconds <= 0:
        raise ValidationError(f"elapsed time must be > 0, got {elapsed_seconds}")
    if peak_flops_per_rank <= 0:
        raise ValidationError(f"peak flops must be > 0, got {peak_flops_per_rank}")
    raw = achieved_flops / (elapsed_seconds * ranks * peak_flops_per_rank)
    if raw > 1.0:
        log.warning("MFU %.6f exceeds 1; clamping (check efficiency or flop accounting)", raw)
    return min(max(raw, 0.0), 1.0)
