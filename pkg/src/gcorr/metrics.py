"""ARI, foreground ARI and mean best overlap, at image and video level.

Image level scores each frame separately and averages; video level pools
every patch of every frame into one labelling, so identity swaps between
frames are penalized.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError
from .tensor import BACKGROUND, LabelMap, SegmentationSequence

LEVELS = ("image", "video")


class EmptyForegroundWarning(UserWarning):
    """Ground truth has no foreground patches; FG-ARI defaults to 1.0."""


@dataclass
class MetricReport:
    ari: float
    fg_ari: float
    mbo: float
    level: str
    per_frame: Optional[list[dict]] = None
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        if out["per_frame"] is None:
            del out["per_frame"]
        return out


def _pairs(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(pred, truth) -> float:
    """Chance-corrected Rand index from the contingency table.

    Returns 1.0 when the index is undefined (fewer than two items, or both
    labellings trivially agree so the expected and maximum indices coincide).
    """
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise InputError(f"length mismatch: {pred.size} vs {truth.size}")
    n = pred.size
    if n < 2:
        return 1.0
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.bincount(p * (t.max() + 1) + t, minlength=(p.max() + 1) * (t.max() + 1))
    index = _pairs(table).sum()
    sum_a = _pairs(np.bincount(p)).sum()
    sum_b = _pairs(np.bincount(t)).sum()
    expected = sum_a * sum_b / _pairs(np.array(n))
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def foreground_ari(pred: LabelMap, truth: LabelMap) -> float:
    """ARI restricted to patches whose ground truth is not background."""
    p = pred.labels if isinstance(pred, LabelMap) else np.asarray(pred)
    t = truth.labels if isinstance(truth, LabelMap) else np.asarray(truth)
    if p.shape != t.shape:
        raise InputError(f"shape mismatch: {p.shape} vs {t.shape}")
    fg = t != BACKGROUND
    if not fg.any():
        warnings.warn("ground truth has no foreground patches", EmptyForegroundWarning, stacklevel=2)
        return 1.0
    return adjusted_rand_index(p[fg], t[fg])


def _best_overlaps(pred: np.ndarray, truth: np.ndarray) -> list[float]:
    """Best IoU of each ground-truth object against any predicted segment."""
    pred = pred.ravel()
    truth = truth.ravel()
    _, p = np.unique(pred, return_inverse=True)
    objects = [o for o in np.unique(truth) if o != BACKGROUND]
    out = []
    pred_sizes = np.bincount(p)
    for obj in objects:
        mask = truth == obj
        inter = np.bincount(p[mask], minlength=pred_sizes.size)
        union = pred_sizes + mask.sum() - inter
        out.append(float(np.max(inter / union)))
    return out


def _as_sequence(x) -> np.ndarray:
    if isinstance(x, SegmentationSequence):
        return x.labels
    if isinstance(x, LabelMap):
        return x.labels[None]
    arr = np.asarray(x)
    return arr[None] if arr.ndim == 2 else arr


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p, t = _as_sequence(pred), _as_sequence(truth)
    if p.shape != t.shape:
        raise InputError(f"shape mismatch: prediction {p.shape} vs truth {t.shape}")
    return p, t


def mean_best_overlap(pred, truth, level: str = "image") -> float:
    """Average over ground-truth objects of the best IoU with any predicted segment.

    Background is never a ground-truth object, but a predicted background
    segment is a valid candidate.  Image level averages per-frame means
    over frames that contain objects; video level treats each identity as
    one space-time object.  Returns 1.0 if there are no objects.
    """
    p, t = _check_pair(pred, truth)
    if level == "video":
        overlaps = _best_overlaps(p, t)
        return float(np.mean(overlaps)) if overlaps else 1.0
    if level != "image":
        raise InputError(f"level must be one of {LEVELS}, got {level!r}")
    per_frame = [np.mean(o) for o in (_best_overlaps(pf, tf) for pf, tf in zip(p, t)) if o]
    return float(np.mean(per_frame)) if per_frame else 1.0


def video_level_labels(seq) -> np.ndarray:
    """All frames' labels concatenated in time order."""
    return _as_sequence(seq).ravel()


def evaluate(pred, truth, level: str = "image", per_frame: bool = False) -> MetricReport:
    p, t = _check_pair(pred, truth)
    caught = []
    if level == "video":
        fg = t != BACKGROUND
        if fg.any():
            fg_ari = adjusted_rand_index(p[fg], t[fg])
        else:
            fg_ari = 1.0
            caught.append("ground truth has no foreground patches")
        return MetricReport(
            ari=adjusted_rand_index(video_level_labels(p), video_level_labels(t)),
            fg_ari=fg_ari,
            mbo=mean_best_overlap(p, t, "video"),
            level="video",
            warnings=caught,
        )
    if level != "image":
        raise InputError(f"level must be one of {LEVELS}, got {level!r}")
    rows = []
    for i, (pf, tf) in enumerate(zip(p, t)):
        has_fg = bool(np.any(tf != BACKGROUND))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyForegroundWarning)
            fg = foreground_ari(pf, tf)
        rows.append(
            {
                "t": i,
                "ari": adjusted_rand_index(pf, tf),
                "fg_ari": fg if has_fg else None,
                "mbo": mean_best_overlap(pf, tf, "image") if has_fg else None,
            }
        )
    fg_vals = [r["fg_ari"] for r in rows if r["fg_ari"] is not None]
    if not fg_vals:
        caught.append("ground truth has no foreground patches")
    return MetricReport(
        ari=float(np.mean([r["ari"] for r in rows])),
        fg_ari=float(np.mean(fg_vals)) if fg_vals else 1.0,
        mbo=mean_best_overlap(p, t, "image"),
        level="image",
        per_frame=rows if per_frame else None,
        warnings=caught,
    )
