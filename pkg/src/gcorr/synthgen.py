"""Synthetic moving-disc videos with ground-truth masks.

Every region (each object and the background) owns a unit prototype
vector; a patch's feature is its region's prototype plus i.i.d. Gaussian
noise, all multiplied by ``feature_scale``.  The default scale,
``2 * dim ** 0.25``, puts a gap of 4 between the slot-attention logits
(``q.k / sqrt(dim)``) of aligned and orthogonal features, roughly the
sharpness real backbone features give.  Discs move at constant
velocity and bounce off the grid edges, so they stay fully visible.
Everything is a function of ``SceneSpec.seed``.

``symmetric`` scenes make objects interchangeable: orthonormal prototypes,
one shared radius, and disc centres snapped to the grid so every object
covers the same number of patches.  Only noise then decides which object
looks most salient in a given frame.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, GenerationError
from .tensor import BACKGROUND, FeatureSequence, SegmentationSequence

MAX_ATTEMPTS = 1000
PROTOTYPE_RESTARTS = 50


@dataclass(frozen=True)
class SceneSpec:
    height: int = 16
    width: int = 16
    dim: int = 16
    num_objects: int = 3
    frames: int = 10
    object_radius_range: tuple[float, float] = (2.0, 3.0)
    speed_range: tuple[float, float] = (0.3, 1.0)
    noise_sigma: float = 0.0
    feature_separation: float = 0.7
    seed: int = 0
    allow_overlap: bool = False
    symmetric: bool = False
    feature_scale: Optional[float] = None  # None: 2 * dim ** 0.25

    def __post_init__(self):
        object.__setattr__(self, "object_radius_range", tuple(float(r) for r in self.object_radius_range))
        object.__setattr__(self, "speed_range", tuple(float(s) for s in self.speed_range))
        if self.height < 1 or self.width < 1 or self.dim < 1:
            raise ConfigError("height, width and dim must be >= 1")
        if self.num_objects < 1:
            raise ConfigError(f"num_objects must be >= 1, got {self.num_objects}")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        rmin, rmax = self.object_radius_range
        if not 0 <= rmin <= rmax:
            raise ConfigError(f"bad radius range {self.object_radius_range}")
        if 2 * rmax + 1 > min(self.height, self.width):
            raise ConfigError(f"discs of radius {rmax} do not fit in a {self.height}x{self.width} grid")
        smin, smax = self.speed_range
        if not 0 <= smin <= smax:
            raise ConfigError(f"bad speed range {self.speed_range}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 < self.feature_separation <= 2:
            raise ConfigError(f"feature_separation must be in (0, 2], got {self.feature_separation}")
        if self.symmetric and self.dim < self.num_objects + 1:
            raise ConfigError(f"symmetric scenes need dim >= num_objects + 1, got dim={self.dim}")
        if self.symmetric and self.feature_separation > 1:
            raise ConfigError("symmetric scenes use orthogonal prototypes (separation <= 1)")
        if self.feature_scale is None:
            object.__setattr__(self, "feature_scale", 2.0 * self.dim ** 0.25)
        if not (np.isfinite(self.feature_scale) and self.feature_scale > 0):
            raise ConfigError(f"feature_scale must be > 0, got {self.feature_scale}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["object_radius_range"] = list(self.object_radius_range)
        out["speed_range"] = list(self.speed_range)
        return out


@dataclass(frozen=True, eq=False)
class SceneTruth:
    features: FeatureSequence
    labels: SegmentationSequence
    prototypes: np.ndarray  # (num_objects + 1, dim); last row is the background
    trajectories: np.ndarray  # (num_objects, frames, 2) disc centres as (row, col)
    radii: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, SceneTruth)
            and self.features == other.features
            and self.labels == other.labels
            and np.array_equal(self.prototypes, other.prototypes)
            and np.array_equal(self.trajectories, other.trajectories)
            and np.array_equal(self.radii, other.radii)
        )

    def manifest(self, spec: SceneSpec) -> dict:
        return {
            "spec": spec.to_json(),
            "radii": self.radii.tolist(),
            "trajectories": self.trajectories.tolist(),
        }


def max_separated_vectors(dim: int, separation: float) -> float:
    """Upper bound on how many unit vectors in R^dim have pairwise ``1 - cos >= separation``.

    Exact for separation >= 1 (non-positive cosines); ``inf`` below that
    since the rejection sampler decides those cases.
    """
    if separation < 1:
        return math.inf
    if separation == 1:
        return 2 * dim
    # pairwise cos <= -c with c > 0: at most dim + 1 vectors, and at most 1 + 1/c
    c = separation - 1
    return min(dim + 1, math.floor(1 + 1 / c + 1e-12))


def sample_prototypes(rng: np.random.Generator, count: int, dim: int, separation: float) -> np.ndarray:
    if count > max_separated_vectors(dim, separation):
        raise ConfigError(
            f"cannot place {count} unit vectors in {dim}-D with cosine distance >= {separation}"
        )
    for _ in range(PROTOTYPE_RESTARTS):
        chosen: list[np.ndarray] = []
        for _ in range(MAX_ATTEMPTS):
            v = rng.standard_normal(dim)
            v = (v / np.linalg.norm(v)).astype(np.float32).astype(np.float64)
            unit = v / np.linalg.norm(v)
            if all(1.0 - float(unit @ (u / np.linalg.norm(u))) >= separation for u in chosen):
                chosen.append(v)
                if len(chosen) == count:
                    return np.array(chosen)
    raise ConfigError(
        f"could not sample {count} prototypes in {dim}-D with cosine distance >= {separation}"
    )


def orthonormal_prototypes(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, count)))
    return q.T.astype(np.float32).astype(np.float64)


def disc_mask(height: int, width: int, center, radius: float) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius ** 2


def _reflect(pos: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    if hi <= lo:
        return lo, 0.0
    span = hi - lo
    x = (pos - lo) % (2 * span)
    if x > span:
        x = 2 * span - x
    # direction after folding: count how many walls were crossed
    crossings = math.floor((pos - lo) / span)
    return lo + x, vel if crossings % 2 == 0 else -vel


def _support(spec: SceneSpec, center, radius: float) -> np.ndarray:
    center = np.round(center) if spec.symmetric else center
    return disc_mask(spec.height, spec.width, center, radius)


def _place_random(spec: SceneSpec, rng: np.random.Generator, radii: np.ndarray):
    h, w = spec.height, spec.width
    centers = np.empty((spec.num_objects, 2))
    occupied = np.zeros((h, w), dtype=bool)
    for i, r in enumerate(radii):
        for _ in range(MAX_ATTEMPTS):
            c = rng.uniform([r, r], [h - 1 - r, w - 1 - r])
            mask = _support(spec, c, r)
            if spec.allow_overlap or not np.any(occupied & mask):
                break
        else:
            return None
        centers[i] = c
        occupied |= mask
    return centers


def _place_lattice(spec: SceneSpec, rng: np.random.Generator, radii: np.ndarray):
    # disjoint square cells, each wide enough for the largest disc's bounding box
    cell = 2 * math.floor(max(radii)) + 1
    rows, cols = spec.height // cell, spec.width // cell
    if rows * cols < spec.num_objects:
        return None
    slack_r, slack_c = spec.height - rows * cell, spec.width - cols * cell
    off_r, off_c = rng.integers(0, slack_r + 1), rng.integers(0, slack_c + 1)
    cells = rng.choice(rows * cols, size=spec.num_objects, replace=False)
    half = (cell - 1) / 2
    centers = np.empty((spec.num_objects, 2))
    for i, c in enumerate(cells):
        r0, c0 = divmod(int(c), cols)
        centers[i] = off_r + r0 * cell + half, off_c + c0 * cell + half
    return centers


def _place(spec: SceneSpec, rng: np.random.Generator, radii: np.ndarray) -> np.ndarray:
    """Initial centres with pairwise disjoint supports.

    Random sequential placement first; dense scenes where that stalls fall
    back to a random choice of cells on a coarse lattice.
    """
    centers = _place_random(spec, rng, radii)
    if centers is None:
        centers = _place_lattice(spec, rng, radii)
    if centers is None:
        raise GenerationError(
            f"could not place {spec.num_objects} objects without overlap in {MAX_ATTEMPTS} attempts"
        )
    return centers


def _trajectories(spec: SceneSpec, rng: np.random.Generator, radii: np.ndarray) -> np.ndarray:
    """Constant-velocity motion, reflected at the grid edges.

    Unless overlap is allowed, an object whose step would touch another
    object's support stays where it is and reverses direction.
    """
    h, w = spec.height, spec.width
    n = spec.num_objects
    velocities = np.empty((n, 2))
    centers = _place(spec, rng, radii)
    for i in range(n):
        angle = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(*spec.speed_range)
        velocities[i] = speed * math.cos(angle), speed * math.sin(angle)
    path = np.empty((n, spec.frames, 2))
    path[:, 0] = centers
    for t in range(1, spec.frames):
        proposal = path[:, t - 1].copy()
        new_vel = velocities.copy()
        for i, r in enumerate(radii):
            for axis, hi in ((0, h - 1 - r), (1, w - 1 - r)):
                pos, vel = _reflect(path[i, t - 1, axis] + velocities[i, axis], velocities[i, axis], r, hi)
                proposal[i, axis] = pos
                new_vel[i, axis] = vel
        if not spec.allow_overlap:
            moved = np.ones(n, dtype=bool)
            changed = True
            while changed:
                changed = False
                masks = [_support(spec, proposal[i], radii[i]) for i in range(n)]
                for i in range(n):
                    if not moved[i]:
                        continue
                    if any(np.any(masks[i] & masks[j]) for j in range(n) if j != i):
                        proposal[i] = path[i, t - 1]
                        new_vel[i] = -velocities[i]
                        moved[i] = False
                        changed = True
                        break
        path[:, t] = proposal
        velocities = new_vel
    return path


def _rasterize(spec: SceneSpec, path: np.ndarray, radii: np.ndarray) -> np.ndarray:
    labels = np.full((spec.frames, spec.height, spec.width), BACKGROUND, dtype=np.int32)
    for t in range(spec.frames):
        # paint back to front so lower indices end up in front
        for i in reversed(range(spec.num_objects)):
            labels[t][_support(spec, path[i, t], radii[i])] = i
    return labels


def generate_scene(spec: SceneSpec) -> SceneTruth:
    rng = np.random.default_rng(spec.seed)
    if spec.symmetric:
        prototypes = orthonormal_prototypes(rng, spec.num_objects + 1, spec.dim)
        radii = np.full(spec.num_objects, spec.object_radius_range[0])
    else:
        prototypes = sample_prototypes(rng, spec.num_objects + 1, spec.dim, spec.feature_separation)
        radii = rng.uniform(*spec.object_radius_range, size=spec.num_objects)
    path = _trajectories(spec, rng, radii)
    labels = _rasterize(spec, path, radii)
    region = np.where(labels == BACKGROUND, spec.num_objects, labels)
    features = prototypes[region]
    if spec.noise_sigma > 0:
        features = features + rng.normal(0.0, spec.noise_sigma, size=features.shape)
    features = spec.feature_scale * features
    return SceneTruth(
        features=FeatureSequence(features.astype(np.float32)),
        labels=SegmentationSequence(labels),
        prototypes=prototypes.astype(np.float32),
        trajectories=path,
        radii=radii,
    )


def shuffle_identities(truth, seed: int) -> SegmentationSequence:
    """Independently permute object labels in every frame; background stays put."""
    labels = truth.labels.labels if isinstance(truth, SceneTruth) else truth.labels
    rng = np.random.default_rng(seed)
    objects = np.unique(labels[labels != BACKGROUND])
    out = labels.copy()
    for t in range(labels.shape[0]):
        perm = rng.permutation(objects)
        lookup = dict(zip(objects.tolist(), perm.tolist()))
        frame = labels[t]
        for src, dst in lookup.items():
            out[t][frame == src] = dst
    return SegmentationSequence(out)
