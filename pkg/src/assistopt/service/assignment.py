"""Deterministic hash bucketing of practice sessions onto policies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
N_BUCKETS = 10_000
_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes | str) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AssignmentConfig:
    """Ordered (policy_id, weight) pairs; weights are positive and sum to 1."""

    policies: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        if not self.policies:
            raise AssignmentError("assignment needs at least one policy")
        ids = [p for p, _ in self.policies]
        if len(set(ids)) != len(ids):
            raise AssignmentError("duplicate policy id in assignment")
        if any(w <= 0 for _, w in self.policies):
            raise AssignmentError("assignment weights must be positive")
        total = sum(w for _, w in self.policies)
        if abs(total - 1.0) > 1e-9:
            raise AssignmentError(f"assignment weights sum to {total}, not 1")

    @classmethod
    def of(cls, pairs: Sequence[Tuple[str, float]] | dict) -> "AssignmentConfig":
        items = pairs.items() if isinstance(pairs, dict) else pairs
        return cls(tuple((str(p), float(w)) for p, w in items))

    def to_json(self) -> list:
        return [{"policy_id": p, "weight": w} for p, w in self.policies]

    @classmethod
    def from_json(cls, data) -> "AssignmentConfig":
        try:
            return cls.of([(d["policy_id"], d["weight"]) for d in data])
        except (KeyError, TypeError) as exc:
            raise AssignmentError(f"bad assignment config: {exc}") from exc

    def bucket_edges(self) -> Tuple[int, ...]:
        # cumulative bucket boundaries; the last policy absorbs rounding
        edges, acc = [], 0.0
        for _, w in self.policies:
            acc += w
            edges.append(int(round(acc * N_BUCKETS)))
        edges[-1] = N_BUCKETS
        return tuple(edges)


def bucket_of(session_id: str) -> int:
    return fnv1a_64(session_id) % N_BUCKETS


def assign_policy(session_id: str, cfg: AssignmentConfig) -> str:
    bucket = bucket_of(session_id)
    for (policy_id, _), edge in zip(cfg.policies, cfg.bucket_edges()):
        if bucket < edge:
            return policy_id
    return cfg.policies[-1][0]
