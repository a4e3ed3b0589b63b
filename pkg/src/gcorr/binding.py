"""Inference-only Slot Attention.

Slots compete for patches through a softmax over the slot axis of the
logits ``M = Q K^T / sqrt(D)``.  Each slot is then updated from the
attention-weighted mean of the values.  By default the projections are the
identity and the update is the weighted mean itself; ``external-gru`` mode
loads projection and GRU weights from a GCT1 bundle instead.

All reductions whose operands are indexed by slot are done so that the
result does not depend on slot order: per-slot quantities accumulate over
features/patches in a fixed loop, and the softmax denominator sums the
column after sorting it.  Permuting the queries therefore permutes the
outputs bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .tensor import FeatureMap, LabelMap, read_bundle

UPDATE_RULES = ("weighted-mean", "external-gru")
EMPTY_MASS = 1e-12

GRU_KEYS = ("W_ir", "W_iz", "W_in", "W_hr", "W_hz", "W_hn", "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn")


@dataclass(frozen=True, eq=False)
class SlotSet:
    slots: np.ndarray  # (K, D) float64
    identities: tuple[int, ...] = ()

    def __post_init__(self):
        slots = np.array(self.slots, dtype=np.float64)
        if slots.ndim != 2 or slots.shape[0] < 1 or slots.shape[1] < 1:
            raise ValueError(f"slots must be (K, D) with K, D >= 1, got {slots.shape}")
        if not np.all(np.isfinite(slots)):
            raise ValueError("slots contain non-finite values")
        ids = tuple(int(i) for i in self.identities) or tuple(range(slots.shape[0]))
        if len(ids) != slots.shape[0]:
            raise ValueError(f"{len(ids)} identities for {slots.shape[0]} slots")
        if len(set(ids)) != len(ids):
            raise ValueError(f"identities must be distinct, got {ids}")
        slots.setflags(write=False)
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "identities", ids)

    @property
    def k(self) -> int:
        return self.slots.shape[0]

    @property
    def dim(self) -> int:
        return self.slots.shape[1]

    def permuted(self, order) -> "SlotSet":
        """Slot ``i`` of the result is slot ``order[i]`` of this set."""
        order = list(order)
        return SlotSet(self.slots[order], tuple(self.identities[i] for i in order))

    def __eq__(self, other):
        return (
            isinstance(other, SlotSet)
            and self.identities == other.identities
            and np.array_equal(self.slots, other.slots)
        )


@dataclass(frozen=True, eq=False)
class AttentionMap:
    weights: np.ndarray  # (K, N); columns sum to 1
    height: int
    width: int

    @property
    def k(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class GRUWeights:
    """Projection and GRU parameters, PyTorch gate layout, row-vector convention.

    ``q = slots @ W_q``, ``k = x @ W_k``, ``v = x @ W_v``; missing projections
    default to the identity.  Gates: ``r = sigmoid(u W_ir + b_ir + h W_hr + b_hr)``
    and likewise ``z``; ``n = tanh(u W_in + b_in + r * (h W_hn + b_hn))``;
    ``h' = (1 - z) * n + z * h``.
    """

    params: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "GRUWeights":
        params = read_bundle(path)
        missing = [k for k in GRU_KEYS if k not in params]
        if missing:
            raise ConfigError(f"weights file lacks GRU tensors: {missing}")
        return cls({k: np.asarray(v, dtype=np.float64) for k, v in params.items()})

    def project(self, name: str, x: np.ndarray) -> np.ndarray:
        w = self.params.get(name)
        if w is None:
            return x
        if w.ndim != 2 or w.shape[0] != x.shape[1]:
            raise ConfigError(f"{name} has shape {w.shape}, input width is {x.shape[1]}")
        return x @ w

    def gru(self, u: np.ndarray, h: np.ndarray) -> np.ndarray:
        p = self.params

        def lin(x, w, b):
            if w.shape[0] != x.shape[1]:
                raise ConfigError(f"GRU weight of shape {w.shape} cannot take width {x.shape[1]}")
            return x @ w + b

        def sigmoid(x):
            return 1.0 / (1.0 + np.exp(-x))

        r = sigmoid(lin(u, p["W_ir"], p["b_ir"]) + lin(h, p["W_hr"], p["b_hr"]))
        z = sigmoid(lin(u, p["W_iz"], p["b_iz"]) + lin(h, p["W_hz"], p["b_hz"]))
        n = np.tanh(lin(u, p["W_in"], p["b_in"]) + r * lin(h, p["W_hn"], p["b_hn"]))
        return (1.0 - z) * n + z * h


@dataclass(frozen=True)
class BindingConfig:
    iterations_first: int = 1
    iterations_rest: int = 1
    update_rule: str = "weighted-mean"
    weights_path: Optional[str] = None

    def __post_init__(self):
        if self.iterations_first < 1 or self.iterations_rest < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.update_rule not in UPDATE_RULES:
            raise ConfigError(f"update_rule must be one of {UPDATE_RULES}, got {self.update_rule!r}")
        if self.update_rule == "external-gru" and not self.weights_path:
            raise ConfigError("external-gru mode needs weights_path")


_weights_cache: dict[str, GRUWeights] = {}


def _weights_for(cfg: BindingConfig) -> Optional[GRUWeights]:
    if cfg.update_rule != "external-gru":
        return None
    key = str(cfg.weights_path)
    if key not in _weights_cache:
        _weights_cache[key] = GRUWeights.load(key)
    return _weights_cache[key]


def _rowwise_dot(q: np.ndarray, keys: np.ndarray) -> np.ndarray:
    # (K, D) x (N, D) -> (K, N); accumulate over D in a fixed order
    out = np.zeros((q.shape[0], keys.shape[0]))
    for d in range(q.shape[1]):
        out += q[:, d:d + 1] * keys[None, :, d]
    return out


def slot_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over axis 0 whose value is independent of row order."""
    shifted = np.exp(logits - logits.max(axis=0, keepdims=True))
    ordered = np.sort(shifted, axis=0)
    denom = np.zeros(shifted.shape[1])
    for row in ordered:
        denom += row
    return shifted / denom


def slot_attention_step(
    queries: SlotSet,
    fmap: FeatureMap,
    cfg: BindingConfig = BindingConfig(),
    weights: Optional[GRUWeights] = None,
) -> tuple[SlotSet, AttentionMap]:
    if weights is None:
        weights = _weights_for(cfg)
    x = fmap.flat.astype(np.float64)
    prev = queries.slots
    if weights is None:
        q, keys, values = prev, x, x
    else:
        q = weights.project("W_q", prev)
        keys = weights.project("W_k", x)
        values = weights.project("W_v", x)
    if q.shape[1] != keys.shape[1]:
        raise ConfigError(f"query width {q.shape[1]} does not match key width {keys.shape[1]}")
    logits = _rowwise_dot(q, keys) / math.sqrt(keys.shape[1])
    attn = slot_softmax(logits)

    mass = np.zeros(queries.k)
    for j in range(attn.shape[1]):
        mass += attn[:, j]
    acc = np.zeros((queries.k, values.shape[1]))
    for j in range(attn.shape[1]):
        acc += attn[:, j:j + 1] * values[j]
    empty = mass < EMPTY_MASS
    updates = acc / np.where(empty, 1.0, mass)[:, None]

    if weights is None:
        new = updates
    else:
        if updates.shape[1] != prev.shape[1]:
            raise ConfigError(f"value width {updates.shape[1]} does not match slot width {prev.shape[1]}")
        new = weights.gru(updates, prev)
    new = np.where(empty[:, None], prev, new)
    return SlotSet(new, queries.identities), AttentionMap(attn, fmap.height, fmap.width)


def bind_frame(
    queries: SlotSet,
    fmap: FeatureMap,
    iters: int,
    cfg: BindingConfig = BindingConfig(),
) -> tuple[SlotSet, AttentionMap]:
    """Run ``iters`` attention steps, feeding each result back as queries."""
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    weights = _weights_for(cfg)
    slots = queries
    for _ in range(iters):
        slots, attn = slot_attention_step(slots, fmap, cfg, weights)
    return slots, attn


def hard_masks(att: AttentionMap, identities=None) -> LabelMap:
    """Per-patch argmax over slots (lowest slot index wins ties), as identities."""
    ids = np.asarray(identities if identities is not None else range(att.k), dtype=np.int32)
    if len(ids) != att.k:
        raise ValueError(f"{len(ids)} identities for {att.k} slots")
    winner = np.argmax(att.weights, axis=0)
    return LabelMap(ids[winner].reshape(att.height, att.width))


class SplitMix64:
    """Seedable 64-bit generator (Steele, Lea & Flood's SplitMix64).

    Normal deviates come from the Box-Muller transform over pairs of
    53-bit uniforms, so ports in other languages draw from the same
    distribution with the same algorithm.
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform on (0, 1]."""
        return ((self.next_u64() >> 11) + 1) * (1.0 / (1 << 53))

    def normals(self, n: int) -> np.ndarray:
        out = []
        while len(out) < n:
            u1, u2 = self.uniform(), self.uniform()
            radius = math.sqrt(-2.0 * math.log(u1))
            out.append(radius * math.cos(2.0 * math.pi * u2))
            out.append(radius * math.sin(2.0 * math.pi * u2))
        return np.array(out[:n])


def content_blind_queries(k: int, dim: int, seed: int) -> SlotSet:
    """``k`` i.i.d. standard-normal query vectors; identities ``0..k-1``."""
    if k < 1 or dim < 1:
        raise ConfigError(f"k and dim must be >= 1, got k={k}, dim={dim}")
    return SlotSet(SplitMix64(seed).normals(k * dim).reshape(k, dim))
