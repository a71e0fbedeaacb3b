"""Command-line client for the pipeline jobs and the serving loop.

Every batch subcommand turns its flags into the job's request model and
runs it in-process, or posts it to a running HTTP service with --server.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError as RequestError

from .service.jobs import ITEMS, JOB_MODELS, LOGS, QUESTIONS, JobError, run_job
from .service.spec import ParseError as SpecParseError
from .service.spec import VersionMismatch

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--min-samples", type=int, default=argparse.SUPPRESS, dest="min_samples")
    p.add_argument("--weights", type=float, default=argparse.SUPPRESS, dest="w1", help="reward weight w1")
    p.add_argument("--server", default=argparse.SUPPRESS, help="run the job on a service at this URL")
    return p


def _data_args(p: argparse.ArgumentParser):
    p.add_argument("--data", default=".", help="directory holding the default input files")
    p.add_argument("--logs")
    p.add_argument("--items")
    p.add_argument("--questions")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="assistopt", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="world config to interaction logs")
    p.add_argument("--sessions", type=int, dest="n_sessions")

    p = sub.add_parser("ingest", parents=[common], help="validate logs and summarize the filtered dataset")
    _data_args(p)
    p = sub.add_parser("effects", parents=[common], help="per-question action effects CSV")
    _data_args(p)
    p = sub.add_parser("train", parents=[common], help="train a policy spec file")
    _data_args(p)
    p.add_argument("--policy-id", dest="policy_id")
    p.add_argument("--p-threshold", type=float, dest="p_threshold")
    p = sub.add_parser("evaluate", parents=[common], help="repeated cross-validation report")
    _data_args(p)
    p.add_argument("--repeats", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--policies", nargs="+")
    p = sub.add_parser("pareto", parents=[common], help="reward-weight sweep CSV")
    _data_args(p)
    p.add_argument("--repeats", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--grid", type=float, nargs="+")
    p = sub.add_parser("hte-scan", parents=[common], help="heterogeneity scan CSVs")
    _data_args(p)
    p.add_argument("--trees", type=int, dest="n_trees")
    p.add_argument("--outcomes", nargs="+")
    p.add_argument("--max-contrasts", type=int, dest="max_contrasts")
    p = sub.add_parser("cb-compare", parents=[common], help="contextual versus MAB policy values")
    _data_args(p)
    p.add_argument("--trees", type=int, dest="n_trees")
    p.add_argument("--outcome")
    p.add_argument("--max-contrasts", type=int, dest="max_contrasts")

    p = sub.add_parser("serve", parents=[common], help="serve assistance decisions")
    p.add_argument("--spec", action="append", dest="specs", help="policy spec file (repeatable)")
    p.add_argument("--assignment", help="assignment config JSON")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--http", action="store_true", default=None, help="serve the HTTP API instead of NDJSON")
    p.add_argument("--decision-log", dest="decision_log")
    return parser


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise JobError(f"config {path} is not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise JobError(f"config {path} must be a JSON object")
    return data


_NOT_JOB_FIELDS = {"command", "config", "server", "data"}


def job_request(args: argparse.Namespace) -> dict:
    """Merge config file and flags into a job request body (flags win)."""
    cfg = _load_config(getattr(args, "config", None))
    body: Dict[str, object] = {}
    if args.command == "simulate":
        body["world"] = cfg
    else:
        body.update(cfg)
        data = Path(args.data)
        body.setdefault("logs", str(data / LOGS))
        for key, name in (("items", ITEMS), ("questions", QUESTIONS)):
            if key not in body and (data / name).exists():
                body[key] = str(data / name)
    for k, v in vars(args).items():
        if k not in _NOT_JOB_FIELDS and v is not None:
            body[k] = v
    return body


def _post(server: str, name: str, body: dict) -> dict:
    req = urllib.request.Request(
        server.rstrip("/") + f"/jobs/{name}", data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"}, method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode(errors="replace")
        if exc.code == 422:
            raise JobError(detail) from exc
        raise UsageError(f"server returned {exc.code}: {detail}") from exc
    except urllib.error.URLError as exc:
        raise UsageError(f"cannot reach {server}: {exc.reason}") from exc


def _serve(args: argparse.Namespace) -> int:
    from .service.engine import AssistanceService, DecisionLog

    cfg = _load_config(getattr(args, "config", None))
    specs = args.specs or cfg.get("specs") or []
    assignment = args.assignment or cfg.get("assignment")
    if not specs or assignment is None:
        raise UsageError("serve needs at least one --spec and an --assignment")
    host = args.host or cfg.get("host", "127.0.0.1")
    port = args.port if args.port is not None else int(cfg.get("port", 7878))
    log_path = args.decision_log or cfg.get("decision_log")
    sink = open(log_path, "a", encoding="utf-8") if log_path else None
    service = AssistanceService(DecisionLog(sink))
    if isinstance(assignment, list):
        from .service.assignment import AssignmentConfig
        assignment = AssignmentConfig.from_json(assignment)
    service.load(specs, assignment)
    if args.http or cfg.get("http"):
        import uvicorn
        from .service.api import create_app

        uvicorn.run(create_app(service), host=host, port=port, log_level="warning")
        return EXIT_OK
    from .service.server import NdjsonServer

    with NdjsonServer(service, (host, port)) as server:
        print(f"serving NDJSON on {host}:{server.port}", file=sys.stderr, flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "serve":
            return _serve(args)
        req = JOB_MODELS[args.command].model_validate(job_request(args))
        server = getattr(args, "server", None)
        if server:
            result = _post(server, args.command, req.model_dump())
        else:
            result = run_job(args.command, req).model_dump()
    except (UsageError, RequestError) as exc:
        print(f"assistopt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (JobError, SpecParseError, VersionMismatch, OSError, ValueError) as exc:
        print(f"assistopt {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
