"""Grounded slot discovery with Hungarian identity tracking over patch features."""

__version__ = "0.1.0"

from .binding import (
    AttentionMap,
    BindingConfig,
    GRUWeights,
    SlotSet,
    bind_frame,
    content_blind_queries,
    hard_masks,
    slot_attention_step,
)
from .errors import ConfigError, GenerationError, InputError, InvariantError
from .matching import (
    Assignment,
    CostMatrix,
    apply_assignment,
    hungarian_identity_ratio,
    slot_cost_matrix,
    solve_assignment,
)
from .metrics import MetricReport, adjusted_rand_index, evaluate, foreground_ari, mean_best_overlap
from .pipeline import MODES, PipelineConfig, TrackResult, compare_modes, track
from .saliency import SaliencyConfig, SaliencyField, Seed, SeedSet, compute_saliency, select_seeds
from .synthgen import SceneSpec, SceneTruth, generate_scene, shuffle_identities
from .tensor import (
    FeatureMap,
    FeatureSequence,
    FormatError,
    LabelMap,
    SegmentationSequence,
    read_tensor,
    write_tensor,
)

__all__ = [
    "__version__",
    "AttentionMap",
    "BindingConfig",
    "GRUWeights",
    "SlotSet",
    "bind_frame",
    "content_blind_queries",
    "hard_masks",
    "slot_attention_step",
    "Assignment",
    "CostMatrix",
    "apply_assignment",
    "hungarian_identity_ratio",
    "slot_cost_matrix",
    "solve_assignment",
    "FeatureMap",
    "FeatureSequence",
    "FormatError",
    "LabelMap",
    "SegmentationSequence",
    "read_tensor",
    "write_tensor",
    "ConfigError",
    "GenerationError",
    "InputError",
    "InvariantError",
    "MetricReport",
    "adjusted_rand_index",
    "evaluate",
    "foreground_ari",
    "mean_best_overlap",
    "MODES",
    "PipelineConfig",
    "TrackResult",
    "compare_modes",
    "track",
    "SaliencyConfig",
    "SaliencyField",
    "Seed",
    "SeedSet",
    "compute_saliency",
    "select_seeds",
    "SceneSpec",
    "SceneTruth",
    "generate_scene",
    "shuffle_identities",
]
