"""Run configuration: a versioned JSON document, validated before any planning."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .balance import RuntimeLut, read_lut
from .costmodel import (
    MODEL_PRESETS,
    ClusterSpec,
    ModelSpec,
    parse_attn_kind,
    space_full_schedule,
    window_schedule,
)
from .errors import ValidationError
from .mlac import ActGraph, TierBandwidths, read_graph
from .workload import (
    STAGE_RECIPES,
    PatchConfig,
    SamplerOptions,
    StageRecipe,
    VaeConfig,
    vae_preset,
    validate_recipes,
)

SPEC_VERSION = 1

TOP_KEYS = {
    "spec_version", "seed", "vae", "patch", "recipes", "sampler", "item_count", "batch_size",
    "capacity_tokens", "pack_grouping", "ranks", "cp_degree", "cluster", "time_source", "model",
    "mlac", "fsdp", "overlap_fsdp", "backward_multiplier", "concurrent_planning", "out_dir",
}


def _check_keys(obj: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {unknown}")
    return obj


def _int(obj: dict, key: str, where: str, default=None, minimum: int = 1) -> int:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ValidationError(f"{where}.{key}: expected an integer >= {minimum}, got {v!r}")
    return v


def _num(obj: dict, key: str, where: str, default=None, positive: bool = True) -> float:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (positive and v <= 0) or (not positive and v < 0):
        raise ValidationError(f"{where}.{key}: expected a {'positive' if positive else 'non-negative'} number, got {v!r}")
    return float(v)


@dataclass(frozen=True)
class LutSource:
    path: Path
    measured: str = "forward"


@dataclass(frozen=True)
class CostModelSource:
    achieved_efficiency: float


@dataclass(frozen=True)
class MlacInputs:
    graph_path: Path
    gpu_budget: float
    bandwidths: TierBandwidths
    cpu_budget: float = math.inf
    layers: int = 1
    backward_compute_us: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    seed: int
    vae: VaeConfig
    patch: PatchConfig
    recipes: tuple[StageRecipe, ...]
    sampler: SamplerOptions
    item_count: int
    batch_size: int
    capacity_tokens: int
    pack_grouping: str
    cluster: ClusterSpec
    time_source: LutSource | CostModelSource
    model: ModelSpec | None
    mlac: MlacInputs | None
    fsdp: bool
    overlap_fsdp: bool
    backward_multiplier: float
    concurrent_planning: bool
    out_dir: Path | None
    base_dir: Path = field(default=Path("."), compare=False)

    def load_lut(self) -> RuntimeLut | None:
        if isinstance(self.time_source, LutSource):
            return read_lut(self.time_source.path)
        return None

    def load_graph(self) -> ActGraph | None:
        return read_graph(self.mlac.graph_path) if self.mlac else None


def _parse_vae(v) -> VaeConfig:
    if isinstance(v, str):
        return vae_preset(v)
    d = _check_keys(v, {"d_t", "d_h", "d_w", "c_latent"}, "vae")
    return VaeConfig(*(_int(d, k, "vae") for k in ("d_t", "d_h", "d_w", "c_latent")))


def _parse_patch(v) -> PatchConfig:
    if not (isinstance(v, list) and len(v) == 3):
        raise ValidationError(f"patch: expected [p_t, p_h, p_w], got {v!r}")
    return PatchConfig(*v)


def _parse_recipes(v) -> tuple[StageRecipe, ...]:
    if v is None:
        return STAGE_RECIPES
    if not isinstance(v, list):
        raise ValidationError("recipes: expected a list")
    keys = {"stage", "image_areas", "video_areas", "step_fraction", "image_fraction", "i2v_fraction"}
    out = []
    for i, r in enumerate(v):
        r = _check_keys(r, keys, f"recipes[{i}]")
        out.append(
            StageRecipe(
                stage=int(r["stage"]),
                image_areas=tuple(tuple(a) for a in r.get("image_areas", [])),
                video_areas=tuple(tuple(a) for a in r.get("video_areas", [])),
                step_fraction=float(r["step_fraction"]),
                image_fraction=float(r.get("image_fraction", 0.5)),
                i2v_fraction=float(r.get("i2v_fraction", 0.2)),
            )
        )
    recipes = tuple(out)
    validate_recipes(recipes)
    return recipes


def _parse_sampler(v) -> SamplerOptions:
    if v is None:
        return SamplerOptions()
    d = _check_keys(v, {"aspects", "durations_s", "fps"}, "sampler")
    base = SamplerOptions()
    aspects = tuple(Fraction(a).limit_denominator(10_000) if not isinstance(a, list) else Fraction(a[0], a[1])
                    for a in d.get("aspects", base.aspects))
    return SamplerOptions(aspects, tuple(d.get("durations_s", base.durations_s)), int(d.get("fps", base.fps)))


def _parse_model(v) -> ModelSpec | None:
    if v is None:
        return None
    if isinstance(v, str):
        if v not in MODEL_PRESETS:
            raise ValidationError(f"model: unknown preset {v!r}; known: {sorted(MODEL_PRESETS)}")
        return MODEL_PRESETS[v]()
    keys = {"layers", "hidden", "heads", "ffn_mult", "shared_ffn_fraction", "attention",
            "streams", "ffn_sharing", "window_mode", "preset"}
    d = _check_keys(v, keys, "model")
    if "preset" in d:
        base = _parse_model(d["preset"])
        kw = {k: getattr(base, k) for k in ("layers", "hidden", "heads", "ffn_mult", "shared_ffn_fraction",
                                            "streams", "ffn_sharing", "window_mode")}
    else:
        kw = {"ffn_mult": 4.0, "shared_ffn_fraction": 0.0, "streams": 1, "ffn_sharing": "layers",
              "window_mode": "counts"}
    for k in ("layers", "hidden", "heads", "streams"):
        if k in d:
            kw[k] = _int(d, k, "model")
    for k in ("ffn_mult", "shared_ffn_fraction"):
        if k in d:
            kw[k] = float(d[k])
    for k in ("ffn_sharing", "window_mode"):
        if k in d:
            kw[k] = d[k]
    if "layers" not in kw or "hidden" not in kw or "heads" not in kw:
        raise ValidationError("model: layers, hidden and heads are required without a preset")
    att = d.get("attention", "full")
    if att == "full":
        sched = ()
    elif att == "space_full":
        sched = space_full_schedule(kw["layers"])
    elif att == "window":
        sched = window_schedule(kw["layers"])
    elif isinstance(att, list):
        sched = tuple(parse_attn_kind(a) for a in att)
    else:
        raise ValidationError(f"model.attention: unknown schedule {att!r}")
    return ModelSpec(attention_schedule=sched, **kw)


def _resolve(base: Path, p: str, where: str) -> Path:
    path = (base / p) if not Path(p).is_absolute() else Path(p)
    if not path.is_file():
        raise ValidationError(f"{where}: file not found: {path}")
    return path


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    d = _check_keys(raw, TOP_KEYS, "config")
    if d.get("spec_version") != SPEC_VERSION:
        raise ValidationError(f"config.spec_version: expected {SPEC_VERSION}, got {d.get('spec_version')!r}")

    ranks = _int(d, "ranks", "config", 1)
    cp = _int(d, "cp_degree", "config", 1)
    if ranks % cp:
        raise ValidationError(f"config: cp_degree {cp} does not divide ranks {ranks}")
    cl = _check_keys(d.get("cluster", {}), {"peak_flops", "link_bandwidth", "link_latency", "element_bytes"},
                     "cluster")
    defaults = ClusterSpec(1)
    cluster = ClusterSpec(
        ranks=ranks,
        cp_degree=cp,
        peak_flops=_num(cl, "peak_flops", "cluster", defaults.peak_flops),
        link_bandwidth=_num(cl, "link_bandwidth", "cluster", defaults.link_bandwidth),
        link_latency=_num(cl, "link_latency", "cluster", defaults.link_latency, positive=False),
        element_bytes=_int(cl, "element_bytes", "cluster", defaults.element_bytes),
    )

    model = _parse_model(d.get("model"))
    ts_raw = _check_keys(d.get("time_source", {"kind": "cost_model"}), {"kind", "path", "measured",
                                                                         "achieved_efficiency"}, "time_source")
    kind = ts_raw.get("kind")
    if kind == "lut":
        if "path" not in ts_raw:
            raise ValidationError("time_source: 'lut' requires a path")
        measured = ts_raw.get("measured", "forward")
        if measured not in ("forward", "forward_backward"):
            raise ValidationError(f"time_source.measured: expected forward or forward_backward, got {measured!r}")
        time_source: LutSource | CostModelSource = LutSource(_resolve(base_dir, ts_raw["path"], "time_source.path"),
                                                             measured)
    elif kind == "cost_model":
        eff = _num(ts_raw, "achieved_efficiency", "time_source", 0.5)
        if eff > 1:
            raise ValidationError(f"time_source.achieved_efficiency must be in (0, 1], got {eff}")
        if model is None:
            raise ValidationError("time_source: 'cost_model' requires a model")
        time_source = CostModelSource(eff)
    else:
        raise ValidationError(f"time_source.kind: expected 'lut' or 'cost_model', got {kind!r}")

    if model is not None and cp > 1 and model.heads % cp:
        raise ValidationError(f"config: model heads {model.heads} not divisible by cp_degree {cp}")

    mlac = None
    if d.get("mlac") is not None:
        m = _check_keys(d["mlac"], {"graph", "gpu_budget", "cpu_budget", "bandwidths", "layers",
                                    "backward_compute_us"}, "mlac")
        bw = _check_keys(m.get("bandwidths", {}), {"gpu_cpu", "cpu_disk", "compute"}, "mlac.bandwidths")
        mlac = MlacInputs(
            graph_path=_resolve(base_dir, m.get("graph", ""), "mlac.graph"),
            gpu_budget=_num(m, "gpu_budget", "mlac", None, positive=False),
            bandwidths=TierBandwidths(*(_num(bw, k, "mlac.bandwidths") for k in ("gpu_cpu", "cpu_disk", "compute"))),
            cpu_budget=_num(m, "cpu_budget", "mlac", math.inf, positive=False),
            layers=_int(m, "layers", "mlac", model.layers if model else 1),
            backward_compute_us=_num(m, "backward_compute_us", "mlac", 0.0, positive=False),
        )

    grouping = d.get("pack_grouping", "stage")
    if grouping not in ("stage", "all"):
        raise ValidationError(f"config.pack_grouping: expected 'stage' or 'all', got {grouping!r}")
    bm = _num(d, "backward_multiplier", "config", 2.0, positive=False)
    for flag in ("fsdp", "overlap_fsdp", "concurrent_planning"):
        if flag in d and not isinstance(d[flag], bool):
            raise ValidationError(f"config.{flag}: expected a boolean")
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValidationError(f"config.seed: expected an integer, got {seed!r}")

    return RunConfig(
        seed=seed,
        vae=_parse_vae(d.get("vae", "seaweed48x")),
        patch=_parse_patch(d.get("patch", [1, 2, 2])),
        recipes=_parse_recipes(d.get("recipes")),
        sampler=_parse_sampler(d.get("sampler")),
        item_count=_int(d, "item_count", "config", 64),
        batch_size=_int(d, "batch_size", "config", 16),
        capacity_tokens=_int(d, "capacity_tokens", "config", 262144),
        pack_grouping=grouping,
        cluster=cluster,
        time_source=time_source,
        model=model,
        mlac=mlac,
        fsdp=d.get("fsdp", True),
        overlap_fsdp=d.get("overlap_fsdp", True),
        backward_multiplier=bm,
        concurrent_planning=d.get("concurrent_planning", False),
        out_dir=(base_dir / d["out_dir"]) if d.get("out_dir") else None,
        base_dir=base_dir,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from None
    return parse_config(raw, path.parent)
