"""Template memory: which historical frames feed the template slots."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

STRATEGIES = ("uniform", "nearest", "confidence")


def uniform_interval_indices(K: int, C: int) -> list[int]:
    """{0} for K == 1, else {0} U {i*D + D//2 : i < K} with D = C // K.

    Indices are clamped to [0, C-1] and deduplicated.
    """
    if K <= 0 or C <= 0:
        raise ValueError(f"need K >= 1 and C >= 1, got K={K}, C={C}")
    if K == 1:
        return [0]
    D = C // K
    picked = {0}
    for i in range(K):
        picked.add(min(max(i * D + D // 2, 0), C - 1))
    return sorted(picked)


def k_nearest_indices(k: int, C: int) -> list[int]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return list(range(max(0, C - k), C))


def k_highest_confidence_indices(scores: Sequence[float], k: int) -> list[int]:
    """Top-k frames by score (earlier frame wins ties), plus frame 0, ascending."""
    if len(scores) == 0:
        raise ValueError("scores must be nonempty")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(set(order[:k]) | {0})


@dataclass
class MemoryEntry:
    frame_index: int
    crops: dict[str, Any]
    confidence: float


@dataclass
class TemplateMemory:
    capacity: int
    entries: list[MemoryEntry] = field(default_factory=list)
    current_frame: int = 0

    @property
    def indices(self) -> list[int]:
        return [e.frame_index for e in self.entries]


def plan_indices(strategy: str, T: int, C: int, scores: Sequence[float] | None = None) -> list[int]:
    """The frame index feeding each of the T slots, after padding."""
    if T < 1 or C < 1:
        raise ValueError(f"need T >= 1 and C >= 1, got T={T}, C={C}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if T == 1:
        picked = [0] if strategy != "nearest" else [C - 1]
    elif strategy == "uniform":
        picked = uniform_interval_indices(T - 1, C)
    elif strategy == "nearest":
        picked = k_nearest_indices(T, C)
    else:
        if scores is None:
            raise ValueError("confidence strategy needs per-frame scores")
        picked = k_highest_confidence_indices(list(scores)[:C], T - 1)
    while len(picked) < T:
        picked.append(picked[-1])
    return picked


def assemble_memory(strategy: str, T: int, history: Sequence[MemoryEntry]) -> TemplateMemory:
    """Pick T entries from ``history`` (one entry per frame seen, in order).

    When fewer than T distinct frames are available the most recent chosen
    template is repeated so the token layout stays fixed.
    """
    if len(history) == 0:
        raise ValueError("history must contain at least one frame")
    scores = [e.confidence for e in history]
    picked = plan_indices(strategy, T, len(history), scores)
    return TemplateMemory(capacity=T, entries=[history[i] for i in picked], current_frame=len(history))
