"""End-to-end tracking over a feature sequence.

Four modes:

``grounded-correspondence``
    Every frame is discovered from scratch (saliency, seeds, binding) and
    its slots are matched to the previous frame's aligned slots.
``identity-propagation``
    Frame 0 as above; afterwards the previous slots are the next queries
    and nothing is matched.
``independent-discovery``
    Per-frame discovery with no matching; identities drift with seed order.
``content-blind``
    Gaussian queries on frame 0, then propagation as in
    ``identity-propagation``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .binding import AttentionMap, BindingConfig, SlotSet, bind_frame, content_blind_queries, hard_masks
from .errors import ConfigError, InputError, InvariantError
from .matching import Assignment, apply_assignment, slot_cost_matrix, solve_assignment
from .metrics import MetricReport, evaluate
from .saliency import SaliencyConfig, SeedSet, compute_saliency, select_seeds
from .tensor import FeatureMap, FeatureSequence, LabelMap, SegmentationSequence

MODES = ("grounded-correspondence", "identity-propagation", "independent-discovery", "content-blind")

# (first frame, later frames)
DEFAULT_ITERATIONS = {
    "grounded-correspondence": (1, 1),
    "identity-propagation": (1, 1),
    "independent-discovery": (1, 1),
    "content-blind": (3, 2),
}


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "grounded-correspondence"
    k: int = 4
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    binding: BindingConfig = field(default_factory=BindingConfig)
    seed: int = 0
    position_weight: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.position_weight < 0:
            raise ConfigError("position_weight must be >= 0")

    @classmethod
    def for_mode(cls, mode: str, **kwargs) -> "PipelineConfig":
        """Config with the mode's default iteration counts unless ``binding`` is given."""
        if "binding" not in kwargs and mode in DEFAULT_ITERATIONS:
            first, rest = DEFAULT_ITERATIONS[mode]
            kwargs["binding"] = BindingConfig(iterations_first=first, iterations_rest=rest)
        return cls(mode=mode, **kwargs)


@dataclass
class FrameRecord:
    slots: SlotSet
    attention: AttentionMap
    masks: LabelMap
    seeds: Optional[SeedSet] = None


@dataclass
class TrackResult:
    masks: SegmentationSequence
    slots_per_frame: list[SlotSet]
    diagnostics: list[dict]
    seeds_per_frame: list[Optional[SeedSet]] = field(default_factory=list)

    @property
    def identity_ratios(self) -> list[float]:
        return [d["ratio"] for d in self.diagnostics]


def thread_count() -> int:
    """Worker count from ``GC_THREADS`` (unset or 0 means one per CPU)."""
    raw = os.environ.get("GC_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GC_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("GC_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def slot_positions(att: AttentionMap) -> np.ndarray:
    """Attention-weighted (row, col) centroid of every slot."""
    rows, cols = np.divmod(np.arange(att.height * att.width), att.width)
    mass = att.weights.sum(axis=1)
    mass = np.where(mass > 0, mass, 1.0)
    return np.stack([att.weights @ rows, att.weights @ cols], axis=1) / mass[:, None]


def discover(fmap: FeatureMap, cfg: PipelineConfig, iters: int) -> FrameRecord:
    """Grounded initialization followed by binding on a single frame."""
    sal = compute_saliency(fmap, cfg.saliency)
    seeds = select_seeds(fmap, sal, cfg.k)
    slots, attn = bind_frame(SlotSet(seeds.features), fmap, iters, cfg.binding)
    return FrameRecord(slots, attn, hard_masks(attn, slots.identities), seeds)


def _propagate(prev: SlotSet, fmap: FeatureMap, cfg: PipelineConfig) -> FrameRecord:
    slots, attn = bind_frame(prev, fmap, cfg.binding.iterations_rest, cfg.binding)
    return FrameRecord(slots, attn, hard_masks(attn, slots.identities))


def _match(prev: FrameRecord, curr: FrameRecord, cfg: PipelineConfig) -> Assignment:
    if cfg.position_weight:
        cost = slot_cost_matrix(
            prev.slots,
            curr.slots,
            cfg.position_weight,
            slot_positions(prev.attention),
            slot_positions(curr.attention),
        )
    else:
        cost = slot_cost_matrix(prev.slots, curr.slots)
    return solve_assignment(cost)


def _diagnostic(t: int, a: Assignment, applied: bool) -> dict:
    fixed = sum(1 for i, j in enumerate(a.perm) if i == j)
    return {
        "t": t,
        "ratio": fixed / len(a.perm),
        "total_cost": a.total_cost,
        "perm": list(a.perm),
        "applied": applied,
    }


def track(seq: FeatureSequence, cfg: PipelineConfig, workers: Optional[int] = None) -> TrackResult:
    """Segment and track every frame of ``seq``.

    ``diagnostics[t-1]`` describes the optimal match between the slots of
    frames ``t-1`` and ``t`` (``applied`` tells whether it was used to
    relabel frame ``t``).  Per-frame discovery runs on a thread pool; the
    identity chain is folded sequentially afterwards.
    """
    frames = list(seq)
    n = frames[0].num_patches
    if cfg.k > n:
        raise ConfigError(f"k={cfg.k} exceeds the {n} patches per frame")
    first, rest = cfg.binding.iterations_first, cfg.binding.iterations_rest
    records: list[FrameRecord] = []
    diagnostics: list[dict] = []

    if cfg.mode in ("grounded-correspondence", "independent-discovery"):
        iters = [first] + [rest] * (len(frames) - 1)
        workers = workers or thread_count()
        if workers > 1 and len(frames) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                found = list(pool.map(lambda fi: discover(fi[0], cfg, fi[1]), zip(frames, iters)))
        else:
            found = [discover(f, cfg, i) for f, i in zip(frames, iters)]
        records.append(found[0])
        for t in range(1, len(found)):
            curr = found[t]
            a = _match(records[-1], curr, cfg)
            if cfg.mode == "grounded-correspondence":
                slots, masks = apply_assignment(curr.slots, curr.masks, a, records[-1].slots)
                order = list(a.perm)
                attn = AttentionMap(curr.attention.weights[order], curr.attention.height, curr.attention.width)
                curr = FrameRecord(slots, attn, masks, curr.seeds)
            diagnostics.append(_diagnostic(t, a, cfg.mode == "grounded-correspondence"))
            records.append(curr)
    else:
        if cfg.mode == "content-blind":
            queries = content_blind_queries(cfg.k, frames[0].dim, cfg.seed)
            slots, attn = bind_frame(queries, frames[0], first, cfg.binding)
            records.append(FrameRecord(slots, attn, hard_masks(attn, slots.identities)))
        else:
            records.append(discover(frames[0], cfg, first))
        for t in range(1, len(frames)):
            curr = _propagate(records[-1].slots, frames[t], cfg)
            diagnostics.append(_diagnostic(t, _match(records[-1], curr, cfg), False))
            records.append(curr)

    result = TrackResult(
        masks=SegmentationSequence.from_frames([r.masks for r in records]),
        slots_per_frame=[r.slots for r in records],
        diagnostics=diagnostics,
        seeds_per_frame=[r.seeds for r in records],
    )
    check_result(result, cfg)
    return result


def check_result(result: TrackResult, cfg: PipelineConfig) -> None:
    """Raise InvariantError if a tracking post-condition does not hold."""
    frames = len(result.slots_per_frame)
    if len(result.diagnostics) != frames - 1 or len(result.masks) != frames:
        raise InvariantError(f"{frames} frames but {len(result.diagnostics)} diagnostics")
    for t, (slots, masks) in enumerate(zip(result.slots_per_frame, result.masks.labels)):
        if slots.k != cfg.k:
            raise InvariantError(f"frame {t} has {slots.k} slots, expected {cfg.k}")
        if not set(np.unique(masks).tolist()) <= set(slots.identities):
            raise InvariantError(f"frame {t} masks use labels outside the slot identities")
    if cfg.mode != "independent-discovery":
        ids = {s.identities for s in result.slots_per_frame}
        if len(ids) != 1:
            raise InvariantError("slot identities changed across frames")
    for d in result.diagnostics:
        if sorted(d["perm"]) != list(range(cfg.k)):
            raise InvariantError(f"assignment at t={d['t']} is not a permutation")


def compare_modes(
    seq: FeatureSequence,
    truth: SegmentationSequence,
    modes=MODES,
    k: int = 4,
    saliency: SaliencyConfig = SaliencyConfig(),
    seed: int = 0,
    binding: Optional[BindingConfig] = None,
) -> list[dict]:
    """Run each mode and score it at image and video level.

    Each mode uses its default iteration counts unless ``binding`` is given.
    """
    if truth.labels.shape != seq.data.shape[:3]:
        raise InputError(f"truth shape {truth.labels.shape} does not match features {seq.data.shape[:3]}")
    rows = []
    for mode in modes:
        kwargs = dict(k=k, saliency=saliency, seed=seed)
        if binding is not None:
            kwargs["binding"] = binding
        result = track(seq, PipelineConfig.for_mode(mode, **kwargs))
        for level in ("image", "video"):
            report: MetricReport = evaluate(result.masks, truth, level)
            rows.append({"mode": mode, "level": level, "ari": report.ari, "fg_ari": report.fg_ari, "mbo": report.mbo})
    return rows


def format_table(rows: list[dict]) -> str:
    header = f"{'mode':<26}{'level':<8}{'ARI':>8}{'FG-ARI':>9}{'mBO':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['mode']:<26}{r['level']:<8}{r['ari']:>8.4f}{r['fg_ari']:>9.4f}{r['mbo']:>8.4f}")
    return "\n".join(lines)


def with_iterations(cfg: PipelineConfig, first: Optional[int], rest: Optional[int]) -> PipelineConfig:
    binding = cfg.binding
    if first is not None:
        binding = replace(binding, iterations_first=first)
    if rest is not None:
        binding = replace(binding, iterations_rest=rest)
    return replace(cfg, binding=binding)
