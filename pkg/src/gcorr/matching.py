"""Frame-to-frame slot alignment by optimal bipartite matching."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .binding import SlotSet
from .errors import ConfigError, InputError
from .tensor import LabelMap, cosine_matrix


@dataclass(frozen=True, eq=False)
class CostMatrix:
    costs: np.ndarray

    def __post_init__(self):
        costs = np.array(self.costs, dtype=np.float64)
        if costs.ndim != 2 or costs.shape[0] != costs.shape[1] or costs.shape[0] < 1:
            raise InputError(f"cost matrix must be square and non-empty, got shape {costs.shape}")
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)

    @property
    def k(self) -> int:
        return self.costs.shape[0]


@dataclass(frozen=True)
class Assignment:
    perm: tuple[int, ...]  # previous slot i -> current slot perm[i]
    total_cost: float

    def inverse(self) -> tuple[int, ...]:
        inv = [0] * len(self.perm)
        for i, j in enumerate(self.perm):
            inv[j] = i
        return tuple(inv)

    def to_json(self) -> dict:
        return {"perm": list(self.perm), "total_cost": self.total_cost}


def slot_cost_matrix(
    prev: SlotSet,
    curr: SlotSet,
    position_weight: float = 0.0,
    prev_positions: Optional[np.ndarray] = None,
    curr_positions: Optional[np.ndarray] = None,
) -> CostMatrix:
    """Cosine distance ``1 - cos(prev_i, curr_j)`` between slot vectors.

    With ``position_weight > 0`` the Euclidean distance between the given
    per-slot positions is added, scaled by that weight.
    """
    if prev.k != curr.k:
        raise ConfigError(f"slot counts differ: {prev.k} vs {curr.k}")
    if prev.dim != curr.dim:
        raise ConfigError(f"slot widths differ: {prev.dim} vs {curr.dim}")
    costs = 1.0 - cosine_matrix(prev.slots, curr.slots)
    if position_weight:
        if prev_positions is None or curr_positions is None:
            raise ConfigError("position_weight needs slot positions for both frames")
        a = np.asarray(prev_positions, dtype=np.float64)
        b = np.asarray(curr_positions, dtype=np.float64)
        costs = costs + position_weight * np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return CostMatrix(costs)


def solve_assignment(c: CostMatrix | np.ndarray) -> Assignment:
    """Minimum-cost perfect matching on a square matrix.

    Shortest augmenting paths with dual potentials (Jonker-Volgenant
    style), O(K^3).  Rows are inserted in index order and ties are broken
    toward the lowest column index, so the output is deterministic.
    """
    costs = c.costs if isinstance(c, CostMatrix) else np.asarray(c, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1] or costs.shape[0] < 1:
        raise InputError(f"cost matrix must be square and non-empty, got shape {costs.shape}")
    if not np.all(np.isfinite(costs)):
        raise InputError("cost matrix has non-finite entries")
    n = costs.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_owner = np.zeros(n + 1, dtype=np.int64)  # 1-based row matched to column j; 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            free = ~used[1:]
            reduced = costs[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[col_owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
    perm = [0] * n
    for j in range(1, n + 1):
        perm[col_owner[j] - 1] = j - 1
    total = math.fsum(costs[i, perm[i]] for i in range(n))
    return Assignment(tuple(perm), total)


def apply_assignment(
    curr: SlotSet, curr_masks: LabelMap, a: Assignment, prev: SlotSet
) -> tuple[SlotSet, LabelMap]:
    """Reorder current slots to line up with ``prev`` and inherit its identities.

    Current slot ``perm[i]`` takes previous slot ``i``'s identity and moves to
    position ``i``; mask labels are rewritten to match.
    """
    if not (curr.k == prev.k == len(a.perm)):
        raise ConfigError(f"sizes disagree: curr {curr.k}, prev {prev.k}, perm {len(a.perm)}")
    slots = curr.slots[list(a.perm)]
    relabel = {curr.identities[j]: prev.identities[i] for i, j in enumerate(a.perm)}
    old = curr_masks.labels
    new = old.copy()
    for src, dst in relabel.items():
        new[old == src] = dst
    return SlotSet(slots, prev.identities), LabelMap(new)


def hungarian_identity_ratio(prev: SlotSet, curr: SlotSet) -> float:
    """Fraction of slots that the optimal match leaves at their own index."""
    a = solve_assignment(slot_cost_matrix(prev, curr))
    return sum(1 for i, j in enumerate(a.perm) if i == j) / len(a.perm)
