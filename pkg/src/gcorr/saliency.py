"""Per-patch objectness scores and greedy diverse seed selection.

The grounded score of a patch is its mean cosine similarity to its spatial
neighbours (local consistency) minus ``alpha`` times its cosine similarity
to the global mean feature (global redundancy).  Seeds are picked one at a
time at the field maximum; after each pick, every score is scaled by
``1 - clamp(cos(f_p, f_j), 0, 1)`` so patches resembling the chosen one
fall away.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import FeatureMap, unit_rows

STRATEGIES = ("grounded", "norm", "pca")


@dataclass(frozen=True)
class SaliencyConfig:
    alpha: float = 1.0
    radius: int = 1
    strategy: str = "grounded"
    pca_components: int = 1
    include_center: bool = False  # count patch i in its own neighbourhood

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ConfigError(f"alpha must be finite, got {self.alpha}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if int(self.radius) != self.radius or self.radius < 1:
            raise ConfigError(f"radius must be an integer >= 1, got {self.radius}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if int(self.pca_components) != self.pca_components or self.pca_components < 1:
            raise ConfigError(f"pca_components must be >= 1, got {self.pca_components}")


@dataclass(frozen=True, eq=False)
class SaliencyField:
    scores: np.ndarray  # (H, W) float64

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise ValueError(f"saliency field must be (H, W), got {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("saliency field contains non-finite values")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    def as_feature_map(self) -> FeatureMap:
        return FeatureMap(self.scores[:, :, None])


@dataclass(frozen=True)
class Seed:
    row: int
    col: int
    feature: np.ndarray
    score: float  # working score (shifted if the field had negatives) when picked
    order: int


@dataclass(frozen=True)
class SeedSet:
    seeds: list[Seed] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.seeds)

    @property
    def features(self) -> np.ndarray:
        return np.stack([s.feature for s in self.seeds]).astype(np.float64)

    @property
    def coords(self) -> list[tuple[int, int]]:
        return [(s.row, s.col) for s in self.seeds]

    def trace(self) -> list[dict]:
        return [{"order": s.order, "row": s.row, "col": s.col, "score": s.score} for s in self.seeds]


def _window_offsets(radius: int, include_center: bool) -> list[tuple[int, int]]:
    return [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if include_center or (dy, dx) != (0, 0)
    ]


def local_consistency(fmap: FeatureMap, radius: int = 1, include_center: bool = False) -> SaliencyField:
    """Mean cosine similarity of each patch to its Chebyshev-radius neighbours.

    Windows are clipped at the grid border, so edge patches average over
    fewer neighbours.  A patch with no neighbours scores 0.
    """
    if radius < 1:
        raise ConfigError(f"radius must be >= 1, got {radius}")
    h, w = fmap.height, fmap.width
    unit = unit_rows(fmap.data)
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for dy, dx in _window_offsets(radius, include_center):
        # destination rows/cols whose neighbour at (dy, dx) is inside the grid
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        if y0 >= y1 or x0 >= x1:
            continue
        here = unit[y0:y1, x0:x1]
        there = unit[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
        total[y0:y1, x0:x1] += np.clip(np.sum(here * there, axis=-1), -1.0, 1.0)
        count[y0:y1, x0:x1] += 1
    scores = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return SaliencyField(scores)


def global_redundancy(fmap: FeatureMap) -> SaliencyField:
    """Cosine similarity of each patch to the mean feature of the whole map."""
    flat = fmap.flat.astype(np.float64)
    mean = flat.mean(axis=0)
    unit_mean = unit_rows(mean[None, :])[0]
    scores = np.clip(unit_rows(flat) @ unit_mean, -1.0, 1.0)
    return SaliencyField(scores.reshape(fmap.height, fmap.width))


def grounded_saliency(fmap: FeatureMap, cfg: SaliencyConfig = SaliencyConfig()) -> SaliencyField:
    if cfg.strategy != "grounded":
        raise ConfigError(f"grounded_saliency needs strategy 'grounded', got {cfg.strategy!r}")
    local = local_consistency(fmap, cfg.radius, cfg.include_center).scores
    if cfg.alpha == 0:
        return SaliencyField(local)
    return SaliencyField(local - cfg.alpha * global_redundancy(fmap).scores)


def top_eigenvectors(cov: np.ndarray, k: int, max_iter: int = 100, tol: float = 1e-8) -> np.ndarray:
    """Leading ``k`` eigenvectors of a symmetric PSD matrix, as rows.

    Power iteration from a fixed pseudo-random start, deflating each found
    component before searching for the next.
    """
    cov = np.array(cov, dtype=np.float64)
    d = cov.shape[0]
    rng = np.random.default_rng(0)
    vectors = []
    for _ in range(k):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        eig = 0.0
        for _ in range(max_iter):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w /= norm
            change = np.linalg.norm(w - v)
            v, eig = w, norm
            if change < tol:
                break
        vectors.append(v)
        cov = cov - eig * np.outer(v, v)
    return np.array(vectors)


def baseline_saliency(fmap: FeatureMap, cfg: SaliencyConfig) -> SaliencyField:
    """Feature-norm or PCA-projection-magnitude scores."""
    flat = fmap.flat.astype(np.float64)
    if cfg.strategy == "norm":
        scores = np.sqrt(np.sum(flat * flat, axis=1))
    elif cfg.strategy == "pca":
        if fmap.dim < cfg.pca_components:
            raise ConfigError(
                f"cannot take {cfg.pca_components} components of {fmap.dim}-dimensional features"
            )
        centered = flat - flat.mean(axis=0)
        cov = centered.T @ centered / flat.shape[0]
        basis = top_eigenvectors(cov, cfg.pca_components)
        proj = centered @ basis.T
        scores = np.sqrt(np.sum(proj * proj, axis=1))
    else:
        raise ConfigError(f"baseline_saliency needs strategy 'norm' or 'pca', got {cfg.strategy!r}")
    return SaliencyField(scores.reshape(fmap.height, fmap.width))


def compute_saliency(fmap: FeatureMap, cfg: SaliencyConfig = SaliencyConfig()) -> SaliencyField:
    if cfg.strategy == "grounded":
        return grounded_saliency(fmap, cfg)
    return baseline_saliency(fmap, cfg)


def select_seeds(fmap: FeatureMap, sal: SaliencyField, k: int) -> SeedSet:
    """Greedy argmax selection with multiplicative feature suppression.

    A field with negative scores is first shifted up by its minimum so
    every score is non-negative; this keeps the argmax order and makes each
    suppression round a pure down-weighting.  Non-negative fields are used
    as given.  Ties go to the lowest
    row-major index and picked patches are never picked again.
    """
    n = fmap.num_patches
    if (sal.height, sal.width) != (fmap.height, fmap.width):
        raise ConfigError("saliency field and feature map differ in shape")
    if k < 1 or k > n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    flat = fmap.flat
    unit = unit_rows(flat)
    raw = sal.scores.ravel()
    work = raw - min(float(raw.min()), 0.0)
    taken = np.zeros(n, dtype=bool)
    seeds = []
    for order in range(k):
        p = int(np.argmax(np.where(taken, -np.inf, work)))
        seeds.append(
            Seed(
                row=p // fmap.width,
                col=p % fmap.width,
                feature=np.array(flat[p]),
                score=float(work[p]),
                order=order,
            )
        )
        sim = np.clip(unit @ unit[p], 0.0, 1.0)
        work = work * (1.0 - sim)
        work[p] = 0.0
        taken[p] = True
    return SeedSet(seeds)
