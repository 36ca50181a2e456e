"""Planner and step simulator for variable-length image/video diffusion-transformer training."""

from .balance import RankAssignment, RuntimeLut, balance_lpt, balance_oracle, estimate, fit_lut, plan_next_batch
from .costmodel import (
    ClusterSpec,
    Full,
    LatentDims,
    ModelSpec,
    SpaceOnly,
    Window,
    attn_flops,
    layer_flops,
    mfu,
    param_count,
    seaweed7b,
    ulysses_comm,
)
from .errors import InstanceTooLarge, ValidationError
from .mlac import ActGraph, ActNode, Decision, MlacPlan, TierBandwidths, backward_overhead, mlac_oracle, plan_mlac
from .packing import MicroBatch, pack_ffd, pack_oracle
from .sim import CostModelTime, MlacSpec, SimConfig, SimReport, TraceEvent, simulate_run, simulate_step
from .workload import (
    MediaSpec,
    PatchConfig,
    StageRecipe,
    STAGE_RECIPES,
    VaeConfig,
    WorkItem,
    compression_ratio,
    gen_workload,
    latent_shape,
    resolve_target_area,
    seq_len,
    vae_preset,
)

__version__ = "0.1.0"

__all__ = [
    "RankAssignment",
    "RuntimeLut",
    "balance_lpt",
    "balance_oracle",
    "estimate",
    "fit_lut",
    "plan_next_batch",
    "ClusterSpec",
    "Full",
    "LatentDims",
    "ModelSpec",
    "SpaceOnly",
    "Window",
    "attn_flops",
    "layer_flops",
    "mfu",
    "param_count",
    "seaweed7b",
    "ulysses_comm",
    "InstanceTooLarge",
    "ValidationError",
    "ActGraph",
    "ActNode",
    "Decision",
    "MlacPlan",
    "TierBandwidths",
    "backward_overhead",
    "mlac_oracle",
    "plan_mlac",
    "MicroBatch",
    "pack_ffd",
    "pack_oracle",
    "CostModelTime",
    "MlacSpec",
    "SimConfig",
    "SimReport",
    "TraceEvent",
    "simulate_run",
    "simulate_step",
    "MediaSpec",
    "PatchConfig",
    "StageRecipe",
    "STAGE_RECIPES",
    "VaeConfig",
    "WorkItem",
    "compression_ratio",
    "gen_workload",
    "latent_shape",
    "resolve_target_area",
    "seq_len",
    "vae_preset",
]
