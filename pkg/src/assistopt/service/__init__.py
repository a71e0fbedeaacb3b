"""Policy serving: assignment, spec files, dispatch, decision log and front ends."""

from .assignment import N_BUCKETS, AssignmentConfig, AssignmentError, assign_policy, bucket_of, fnv1a_64
from .engine import (
    AssistanceService, Decision, DecisionLog, DecisionRecord, NoActionAvailable, Query, ServingState,
    SpecNotLoaded, decide,
)
from .spec import (
    SPEC_VERSION, ParseError, PolicySpecFile, SpecEntry, VersionMismatch, load_policy_spec, random_spec,
    save_policy_spec, spec_from_mab_policy,
)

__all__ = [
    "N_BUCKETS", "AssignmentConfig", "AssignmentError", "assign_policy", "bucket_of", "fnv1a_64",
    "AssistanceService", "Decision", "DecisionLog", "DecisionRecord", "NoActionAvailable", "Query",
    "ServingState", "SpecNotLoaded", "decide", "SPEC_VERSION", "ParseError", "PolicySpecFile", "SpecEntry",
    "VersionMismatch", "load_policy_spec", "random_spec", "save_policy_spec", "spec_from_mab_policy",
]
