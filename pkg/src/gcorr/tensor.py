"""Dense array types shared by every stage, plus the GCT1 on-disk container.

A GCT1 file is a single UTF-8 JSON header line terminated by ``\\n``
followed by the raw little-endian payload in row-major order::

    {"magic": "GCT1", "dtype": "f32", "shape": [H, W, D], "kind": "features"}
    <H*W*D little-endian float32>

``kind`` is ``"features"`` ([H, W, D], f32), ``"labels"`` ([H, W], i32) or
``"sequence"`` ([T, H, W, D] f32 or [T, H, W] i32).  A fourth kind,
``"bundle"``, stores named sub-tensors back to back and lists them under a
``"tensors"`` manifest in the header (used for external slot-attention
weights).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

MAGIC = "GCT1"
BACKGROUND = -1

_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


class FormatError(ValueError):
    """Raised when a GCT1 container cannot be decoded.

    ``offset`` is the byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A grid of D-dimensional patch embeddings, stored as float32 ``(H, W, D)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"feature map must be (H, W, D), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"feature map dimensions must be >= 1, got {data.shape}")
        data = _frozen(data, np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_flat(cls, height: int, width: int, dim: int, values: Sequence[float]) -> "FeatureMap":
        values = np.asarray(values, dtype=np.float32)
        if values.size != height * width * dim:
            raise ValueError(
                f"expected {height}*{width}*{dim}={height * width * dim} values, got {values.size}"
            )
        return cls(values.reshape(height, width, dim))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def num_patches(self) -> int:
        return self.height * self.width

    @property
    def flat(self) -> np.ndarray:
        """Row-major view of shape ``(N, D)``."""
        return self.data.reshape(self.num_patches, self.dim)

    def patch_at(self, row: int, col: int) -> np.ndarray:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError(f"patch ({row}, {col}) outside {self.height}x{self.width} grid")
        return self.data[row, col]

    def __eq__(self, other):
        return isinstance(other, FeatureMap) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """Per-frame feature maps of identical shape, stored as ``(T, H, W, D)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or min(data.shape) < 1:
            raise ValueError(f"feature sequence must be (T, H, W, D) with T >= 1, got {data.shape}")
        data = _frozen(data, np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("feature sequence contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_frames(cls, frames: Sequence[FeatureMap]) -> "FeatureSequence":
        if not frames:
            raise ValueError("a sequence needs at least one frame")
        shapes = {f.data.shape for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"frames differ in shape: {sorted(shapes)}")
        return cls(np.stack([f.data for f in frames]))

    @property
    def frames(self) -> list[FeatureMap]:
        return [FeatureMap(frame) for frame in self.data]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, t: int) -> FeatureMap:
        return FeatureMap(self.data[t])

    def __iter__(self) -> Iterator[FeatureMap]:
        for t in range(len(self)):
            yield self[t]

    def __eq__(self, other):
        return isinstance(other, FeatureSequence) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-patch integer labels; ``-1`` marks background."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise ValueError(f"label map must be (H, W), got shape {labels.shape}")
        if labels.dtype.kind == "f" and not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = _frozen(labels, np.int32)
        if np.any(labels < BACKGROUND):
            raise ValueError("labels must be >= 0, or -1 for background")
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def background_count(self) -> int:
        return int(np.count_nonzero(self.labels == BACKGROUND))

    @property
    def objects(self) -> list[int]:
        """Sorted distinct non-background labels."""
        return [int(v) for v in np.unique(self.labels) if v != BACKGROUND]

    def __eq__(self, other):
        return isinstance(other, LabelMap) and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class SegmentationSequence:
    """Per-frame label maps of identical shape, stored as ``(T, H, W)``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValueError(f"segmentation sequence must be (T, H, W), got {labels.shape}")
        labels = _frozen(labels, np.int32)
        if np.any(labels < BACKGROUND):
            raise ValueError("labels must be >= 0, or -1 for background")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_frames(cls, frames: Sequence[LabelMap]) -> "SegmentationSequence":
        if not frames:
            raise ValueError("a sequence needs at least one frame")
        shapes = {f.labels.shape for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"frames differ in shape: {sorted(shapes)}")
        return cls(np.stack([f.labels for f in frames]))

    @property
    def frames(self) -> list[LabelMap]:
        return [LabelMap(frame) for frame in self.labels]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, t: int) -> LabelMap:
        return LabelMap(self.labels[t])

    def __eq__(self, other):
        return isinstance(other, SegmentationSequence) and np.array_equal(self.labels, other.labels)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, 0.0 if either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


def unit_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize the last axis in float64; zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    return np.clip(unit_rows(a) @ unit_rows(b).T, -1.0, 1.0)


# --------------------------------------------------------------------------
# GCT1 container

TensorValue = Union[FeatureMap, FeatureSequence, LabelMap, SegmentationSequence]


def _header_for(value) -> tuple[dict, np.ndarray]:
    if isinstance(value, FeatureMap):
        return {"kind": "features", "dtype": "f32"}, value.data
    if isinstance(value, LabelMap):
        return {"kind": "labels", "dtype": "i32"}, value.labels
    if isinstance(value, FeatureSequence):
        return {"kind": "sequence", "dtype": "f32"}, value.data
    if isinstance(value, SegmentationSequence):
        return {"kind": "sequence", "dtype": "i32"}, value.labels
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_tensor(path, value: TensorValue) -> None:
    header, array = _header_for(value)
    array = np.ascontiguousarray(array, dtype=_DTYPES[header["dtype"]])
    header = {"magic": MAGIC, "dtype": header["dtype"], "shape": list(array.shape), "kind": header["kind"]}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(array.tobytes(order="C"))


def _read_header(raw: bytes) -> tuple[dict, int]:
    end = raw.find(b"\n")
    if end < 0:
        raise FormatError("missing header terminator", len(raw))
    try:
        header = json.loads(raw[:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", 0) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", 0)
    if header.get("magic") != MAGIC:
        raise FormatError(f"bad magic {header.get('magic')!r}", 0)
    return header, end + 1


def _check_shape(shape, offset: int) -> tuple[int, ...]:
    if not isinstance(shape, list) or not shape:
        raise FormatError("shape must be a non-empty list", offset)
    for s in shape:
        if isinstance(s, bool) or not isinstance(s, int) or s < 1:
            raise FormatError(f"invalid shape entry {s!r}", offset)
    return tuple(shape)


def _decode(raw: bytes, dtype_name, shape, start: int, nbytes: int | None = None) -> np.ndarray:
    if dtype_name not in _DTYPES:
        raise FormatError(f"unknown dtype {dtype_name!r}", 0)
    dtype = _DTYPES[dtype_name]
    shape = _check_shape(shape, 0)
    expected = math.prod(shape) * dtype.itemsize
    available = len(raw) - start if nbytes is None else nbytes
    if available != expected:
        raise FormatError(
            f"payload holds {available} bytes but shape {list(shape)} needs {expected}", start
        )
    array = np.frombuffer(raw, dtype=dtype, count=math.prod(shape), offset=start).reshape(shape)
    if dtype.kind == "f":
        bad = np.flatnonzero(~np.isfinite(array.ravel()))
        if bad.size:
            raise FormatError("non-finite value in payload", start + int(bad[0]) * dtype.itemsize)
    return array


def read_tensor(path) -> TensorValue:
    raw = Path(path).read_bytes()
    header, start = _read_header(raw)
    kind = header.get("kind")
    dtype_name = header.get("dtype")
    array = _decode(raw, dtype_name, header.get("shape"), start)
    expected = {
        ("features", "f32"): 3,
        ("labels", "i32"): 2,
        ("sequence", "f32"): 4,
        ("sequence", "i32"): 3,
    }.get((kind, dtype_name))
    if expected is None:
        raise FormatError(f"unsupported kind/dtype combination {kind!r}/{dtype_name!r}", 0)
    if array.ndim != expected:
        raise FormatError(f"kind {kind!r} with dtype {dtype_name} needs rank {expected}", 0)
    try:
        if kind == "features":
            return FeatureMap(array)
        if kind == "labels":
            return LabelMap(array)
        if dtype_name == "f32":
            return FeatureSequence(array)
        return SegmentationSequence(array)
    except ValueError as exc:
        raise FormatError(str(exc), start) from None


def write_bundle(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors into one container of kind ``bundle``."""
    manifest, blobs, offset = [], [], 0
    for name, value in tensors.items():
        array = np.ascontiguousarray(value, dtype=_DTYPES["f32"])
        if array.ndim == 0:
            array = array.reshape(1)
        manifest.append({"name": name, "dtype": "f32", "shape": list(array.shape), "offset": offset})
        blobs.append(array.tobytes())
        offset += array.nbytes
    header = {"magic": MAGIC, "dtype": "f32", "shape": [offset // 4], "kind": "bundle", "tensors": manifest}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def read_bundle(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    header, start = _read_header(raw)
    if header.get("kind") != "bundle":
        raise FormatError(f"expected kind 'bundle', got {header.get('kind')!r}", 0)
    _decode(raw, header.get("dtype"), header.get("shape"), start)
    manifest = header.get("tensors")
    if not isinstance(manifest, list):
        raise FormatError("bundle header lacks a 'tensors' list", 0)
    out = {}
    for entry in manifest:
        try:
            name, shape, rel = entry["name"], entry["shape"], entry["offset"]
        except (KeyError, TypeError):
            raise FormatError(f"malformed manifest entry {entry!r}", 0) from None
        if not isinstance(rel, int) or rel < 0 or rel % 4:
            raise FormatError(f"bad offset for {name!r}", 0)
        nbytes = math.prod(_check_shape(shape, 0)) * 4
        if start + rel + nbytes > len(raw):
            raise FormatError(f"tensor {name!r} runs past end of payload", start + rel)
        out[name] = np.array(_decode(raw, entry.get("dtype", "f32"), shape, start + rel, nbytes))
    return out
