"""Policy specification files: per-concept, per-question serving entries."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

from ..causal.forest import CateModel
from ..mab import MabPolicy

SPEC_VERSION = 1
IMPLEMENTATION_VERSION = "1.0"

RANDOM = "random"
FIXED = "fixed"
CONTEXTUAL = "contextual"
KINDS = (RANDOM, FIXED, CONTEXTUAL)


class ParseError(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SpecEntry:
    kind: str
    action_ids: Tuple[str, ...] = ()
    action_id: Optional[str] = None
    treat: Optional[str] = None
    control: Optional[str] = None
    model: Optional[CateModel] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParseError(f"unknown entry kind {self.kind!r}")
        if self.kind == FIXED and not self.action_id:
            raise ParseError("fixed entry needs an action_id")
        if self.kind == RANDOM and not self.action_ids:
            raise ParseError("random entry needs a non-empty action set")
        if self.kind == CONTEXTUAL and (self.model is None or not self.treat or not self.control):
            raise ParseError("contextual entry needs treat, control and a model")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.action_ids:
            d["action_ids"] = list(self.action_ids)
        if self.kind == FIXED:
            d["action_id"] = self.action_id
        if self.kind == CONTEXTUAL:
            d.update(treat=self.treat, control=self.control, model=self.model.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpecEntry":
        model = d.get("model")
        try:
            return cls(
                kind=d["kind"],
                action_ids=tuple(d.get("action_ids", ())),
                action_id=d.get("action_id"),
                treat=d.get("treat"),
                control=d.get("control"),
                model=None if model is None else CateModel.from_dict(model),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad entry: {exc}") from exc


@dataclass(frozen=True)
class PolicySpecFile:
    policy_id: str
    algorithm: str
    concepts: Dict[str, Dict[str, SpecEntry]]
    implementation_version: str = IMPLEMENTATION_VERSION
    spec_version: int = SPEC_VERSION
    metadata: Dict[str, object] = field(default_factory=dict)

    def lookup(self, concept_id: str, question_id: str) -> Optional[SpecEntry]:
        entry = self.concepts.get(concept_id, {}).get(question_id)
        if entry is not None:
            return entry
        # a question filed under another concept still resolves
        for entries in self.concepts.values():
            if question_id in entries:
                return entries[question_id]
        return None

    def to_dict(self) -> dict:
        return {
            "spec_version": self.spec_version,
            "policy_id": self.policy_id,
            "algorithm": self.algorithm,
            "implementation_version": self.implementation_version,
            "metadata": self.metadata,
            "concepts": {
                c: {q: e.to_dict() for q, e in sorted(entries.items())}
                for c, entries in sorted(self.concepts.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "PolicySpecFile":
        if not isinstance(d, Mapping):
            raise ParseError("spec must be a JSON object")
        version = d.get("spec_version")
        if not isinstance(version, int):
            raise ParseError("spec_version missing or not an integer")
        if version > SPEC_VERSION:
            raise VersionMismatch(f"spec_version {version} is newer than supported {SPEC_VERSION}")
        try:
            concepts = {
                str(c): {str(q): SpecEntry.from_dict(e) for q, e in entries.items()}
                for c, entries in d["concepts"].items()
            }
            return cls(str(d["policy_id"]), str(d["algorithm"]), concepts,
                       str(d.get("implementation_version", IMPLEMENTATION_VERSION)), version,
                       dict(d.get("metadata", {})))
        except (KeyError, AttributeError, TypeError) as exc:
            raise ParseError(f"bad spec: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "PolicySpecFile":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


def load_policy_spec(path: Union[str, Path]) -> PolicySpecFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8") from exc
    return PolicySpecFile.from_json(text)


def save_policy_spec(spec: PolicySpecFile, path: Union[str, Path]) -> None:
    """Write via a temporary file and rename so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        f.write(spec.to_json())
    os.replace(tmp, path)


def spec_from_mab_policy(policy: MabPolicy, policy_id: str, concept_of: Mapping[str, str]) -> PolicySpecFile:
    """Fixed entries for trained questions, random entries for the rest."""
    concepts: Dict[str, Dict[str, SpecEntry]] = {}
    for qid, e in sorted(policy.entries.items()):
        entry = SpecEntry(FIXED, e.action_ids, e.action_id) if e.action_id else SpecEntry(RANDOM, e.action_ids)
        concepts.setdefault(concept_of.get(qid, ""), {})[qid] = entry
    meta = dict(policy.metadata)
    meta["w1"] = policy.weights.w1
    return PolicySpecFile(policy_id, str(policy.metadata.get("algorithm", "mab")), concepts, metadata=meta)


def random_spec(action_sets: Mapping[str, Tuple[str, ...]], policy_id: str,
                concept_of: Mapping[str, str]) -> PolicySpecFile:
    concepts: Dict[str, Dict[str, SpecEntry]] = {}
    for qid, acts in sorted(action_sets.items()):
        concepts.setdefault(concept_of.get(qid, ""), {})[qid] = SpecEntry(RANDOM, tuple(sorted(acts)))
    return PolicySpecFile(policy_id, "random", concepts)
