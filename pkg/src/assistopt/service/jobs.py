"""Batch pipeline jobs behind both the HTTP API and the command line.

Each job reads flat files, writes its artifacts into ``out`` and returns
the written paths with a small summary.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from ..causal.forest import ForestConfig
from ..causal.scan import DEFAULT_OUTCOMES, ScanConfig, cb_compare, comparisons_to_csv, hte_scan, mab_contrasts
from ..domain import IrtItem, ValidationError
from ..ingestion import FilteredDataset, ParseError, PreprocessConfig, parse_log_stream, preprocess_table
from ..irt import dump_items, load_items
from ..mab import (
    ALL_MEASURES, DEFAULT_POLICIES, W1_GRID, EvalConfig, effects_to_csv, effects_to_json, estimate_action_effects,
    offline_evaluate, pareto_sweep, pareto_to_csv, policy_to_dict, report_to_csv, report_to_json, train_mab_policy,
)
from ..outcomes import RewardWeights
from ..records import RecordTable
from ..simulator import ConfigError, WorldConfig, generate_world, simulate_table
from .spec import save_policy_spec, spec_from_mab_policy

LOGS = "logs.jsonl"
ITEMS = "items.ndjson"
QUESTIONS = "questions.json"
WORLD = "world.json"


class JobError(RuntimeError):
    """Bad or inconsistent input data (as opposed to a usage error)."""


class JobResult(BaseModel):
    files: Dict[str, str]
    summary: Dict[str, object] = {}


class JobBase(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    out: str = "."


class SimulateJob(JobBase):
    world: Dict[str, object] = {}
    n_sessions: int = Field(10_000, ge=0)


class DataJob(JobBase):
    logs: str
    items: Optional[str] = None
    questions: Optional[str] = None
    min_samples: int = Field(100, ge=1)
    min_questions: int = Field(5, ge=1)
    w1: float = Field(0.4, ge=0.0, le=1.0)


class IngestJob(DataJob):
    pass


class EffectsJob(DataJob):
    pass


class TrainJob(DataJob):
    policy_id: str = "mab"
    p_threshold: float = Field(0.05, gt=0.0, lt=1.0)


class EvaluateJob(DataJob):
    repeats: int = Field(20, ge=1)
    folds: int = Field(5, ge=2)
    policies: List[str] = list(DEFAULT_POLICIES)
    weighting: str = "matched"


class ParetoJob(DataJob):
    repeats: int = Field(20, ge=1)
    folds: int = Field(5, ge=2)
    grid: List[float] = list(W1_GRID)


class HteScanJob(DataJob):
    n_trees: int = Field(200, ge=1)
    outcomes: List[str] = list(DEFAULT_OUTCOMES)
    max_contrasts: Optional[int] = Field(None, ge=1)


class CbCompareJob(DataJob):
    n_trees: int = Field(200, ge=1)
    outcome: str = "reward"
    max_contrasts: Optional[int] = Field(None, ge=1)


# ---------------------------------------------------------------- helpers


def _out(req: JobBase) -> Path:
    p = Path(req.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, text: str) -> str:
    path.write_text(text, encoding="utf-8")
    return str(path)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise JobError(f"cannot read {path}: {exc}") from exc


def _items(req: DataJob) -> Dict[str, IrtItem]:
    if req.items is None:
        raise JobError("this job needs an item parameter file")
    try:
        return load_items(_read(req.items).splitlines())
    except ValueError as exc:
        raise JobError(str(exc)) from exc


def _questions(req: DataJob) -> Tuple[Optional[Dict[str, Tuple[str, ...]]], Dict[str, str]]:
    if req.questions is None:
        return None, {}
    try:
        doc = json.loads(_read(req.questions))
        bank = doc["questions"]
        acts = {q: tuple(v["action_ids"]) for q, v in bank.items()}
        concept = {q: str(v["concept_id"]) for q, v in bank.items()}
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise JobError(f"bad question file {req.questions}: {exc}") from exc
    return acts, concept


def load_dataset(req: DataJob) -> Tuple[FilteredDataset, Dict[str, str]]:
    try:
        with open(req.logs, encoding="utf-8") as f:
            sessions = parse_log_stream(f)
    except OSError as exc:
        raise JobError(f"cannot read {req.logs}: {exc}") from exc
    except (ParseError, ValidationError) as exc:
        raise JobError(f"{type(exc).__name__}: {exc}") from exc
    acts, concept = _questions(req)
    if not concept:
        concept = {r.question_id: s.concept_id for s in sessions for r in s.records}
    cfg = PreprocessConfig(min_questions_per_session=req.min_questions, min_samples_per_action=req.min_samples)
    return preprocess_table(RecordTable.from_sessions(sessions), cfg, acts), concept


def _check_items(ds: FilteredDataset, items: Mapping[str, IrtItem]):
    missing = sorted(set(ds.table.question_ids) - set(items))
    if missing:
        raise JobError(f"no item parameters for {len(missing)} question(s), e.g. {missing[0]}")


# ---------------------------------------------------------------- jobs


def simulate_job(req: SimulateJob) -> JobResult:
    out = _out(req)
    try:
        cfg = WorldConfig.from_json(dict(req.world))
        world = generate_world(cfg, req.seed)
    except ConfigError as exc:
        raise JobError(f"world config: {exc}") from exc
    res = simulate_table(world, None, req.n_sessions, req.seed)
    bank = {"questions": {q.id: {"concept_id": q.concept_id, "action_ids": list(q.action_ids)}
                          for q in world.questions}}
    files = {
        "logs": _write(out / LOGS, res.log_text()),
        "items": _write(out / ITEMS, dump_items(world.items)),
        "questions": _write(out / QUESTIONS, json.dumps(bank, indent=1, sort_keys=True)),
        "world": _write(out / WORLD, world.to_json()),
    }
    return JobResult(files=files, summary={"sessions": res.table.n_sessions, "records": res.table.n_records})


def ingest_job(req: IngestJob) -> JobResult:
    ds, _ = load_dataset(req)
    t = ds.table
    summary = {
        "filter_report": ds.filter_report,
        "sessions_kept": t.n_sessions,
        "records_kept": t.n_records,
        "exposures": int(ds.exposure_rows.size),
        "questions_with_actions": len(ds.action_sets),
        "eligible_questions": sorted(ds.eligible_questions),
    }
    path = _write(_out(req) / "dataset_summary.json", json.dumps(summary, indent=2, sort_keys=True, default=str))
    return JobResult(files={"summary": path}, summary={k: v for k, v in summary.items() if k != "eligible_questions"})


def effects_job(req: EffectsJob) -> JobResult:
    ds, _ = load_dataset(req)
    items = _items(req)
    _check_items(ds, items)
    weights = RewardWeights(req.w1)
    summaries = [estimate_action_effects(q, ds, items, weights) for q in sorted(ds.eligible_questions)]
    out = _out(req)
    return JobResult(
        files={"csv": _write(out / "effects.csv", effects_to_csv(summaries, ALL_MEASURES)),
               "json": _write(out / "effects.json", effects_to_json(summaries))},
        summary={"questions": len(summaries)},
    )


def train_job(req: TrainJob) -> JobResult:
    ds, concept = load_dataset(req)
    items = _items(req)
    _check_items(ds, items)
    policy = train_mab_policy(ds, items, RewardWeights(req.w1), req.p_threshold)
    spec = spec_from_mab_policy(policy, req.policy_id, concept)
    out = _out(req)
    spec_path = out / "policy_spec.json"
    save_policy_spec(spec, spec_path)
    return JobResult(
        files={"spec": str(spec_path),
               "policy": _write(out / "mab_policy.json", json.dumps(policy_to_dict(policy), indent=1, sort_keys=True))},
        summary={"trained": len(policy.trained), "questions": len(policy.entries)},
    )


def evaluate_job(req: EvaluateJob) -> JobResult:
    ds, _ = load_dataset(req)
    items = _items(req)
    _check_items(ds, items)
    try:
        cfg = EvalConfig(req.repeats, req.folds, req.seed, req.weighting)
        rep = offline_evaluate(ds, items, RewardWeights(req.w1), tuple(req.policies), config=cfg)
    except (ValueError, KeyError) as exc:
        raise JobError(str(exc)) from exc
    out = _out(req)
    return JobResult(files={"csv": _write(out / "eval_report.csv", report_to_csv(rep)),
                            "json": _write(out / "eval_report.json", report_to_json(rep))},
                     summary={"policies": list(rep.policies)})


def pareto_job(req: ParetoJob) -> JobResult:
    ds, _ = load_dataset(req)
    items = _items(req)
    _check_items(ds, items)
    try:
        sweep = pareto_sweep(ds, items, req.grid, repeats=req.repeats, folds=req.folds, seed=req.seed)
    except ValueError as exc:
        raise JobError(str(exc)) from exc
    return JobResult(files={"csv": _write(_out(req) / "pareto.csv", pareto_to_csv(sweep))},
                     summary={"points": len(sweep)})


def _contrasts(ds: FilteredDataset, items, w1: float, limit: Optional[int]):
    contrasts = mab_contrasts(train_mab_policy(ds, items, RewardWeights(w1)))
    return contrasts[:limit] if limit else contrasts


def hte_scan_job(req: HteScanJob) -> JobResult:
    ds, _ = load_dataset(req)
    items = _items(req)
    _check_items(ds, items)
    cfg = ScanConfig(forest=ForestConfig(n_trees=req.n_trees), seed=req.seed, weights=RewardWeights(req.w1))
    report = hte_scan(ds, _contrasts(ds, items, req.w1, req.max_contrasts), items, tuple(req.outcomes), cfg)
    out = _out(req)
    files = {k: _write(out / f"hte_{k}.csv", report.to_csv(k)) for k in ("linear", "forest", "policy")}
    files["json"] = _write(out / "hte_report.json", report.to_json())
    return JobResult(files=files, summary={"contrasts": len({(r.question_id, r.treat) for r in report.results}),
                                           "failed": sum(not r.ok for r in report.results)})


def cb_compare_job(req: CbCompareJob) -> JobResult:
    ds, _ = load_dataset(req)
    items = _items(req)
    _check_items(ds, items)
    cfg = ScanConfig(forest=ForestConfig(n_trees=req.n_trees), seed=req.seed, weights=RewardWeights(req.w1))
    rows = cb_compare(ds, _contrasts(ds, items, req.w1, req.max_contrasts), items, req.outcome, cfg)
    return JobResult(files={"csv": _write(_out(req) / "cb_compare.csv", comparisons_to_csv(rows))},
                     summary={"compared": len(rows), "cb_wins": sum(r.p_value < 0.05 for r in rows)})


JOBS: Dict[str, Tuple[type, Callable]] = {
    "simulate": (SimulateJob, simulate_job),
    "ingest": (IngestJob, ingest_job),
    "effects": (EffectsJob, effects_job),
    "train": (TrainJob, train_job),
    "evaluate": (EvaluateJob, evaluate_job),
    "pareto": (ParetoJob, pareto_job),
    "hte-scan": (HteScanJob, hte_scan_job),
    "cb-compare": (CbCompareJob, cb_compare_job),
}
JOB_MODELS = {name: model for name, (model, _) in JOBS.items()}


def run_job(name: str, req: BaseModel) -> JobResult:
    model, fn = JOBS[name]
    if not isinstance(req, model):
        req = model.model_validate(req.model_dump() if isinstance(req, BaseModel) else req)
    return fn(req)
