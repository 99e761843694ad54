"""``vlx`` command line.

    vlx extract {bvqa|mvqa|itr|vg|dic} ...
    vlx task run NAME (--image P | --views P [P ...] --expected X)
    vlx patrol {record|check|run} --store DIR ...
    vlx backend ping

stdout carries exactly one JSON document. Exit codes: 0 ok, 1 extraction or
backend error (``{"error": <code>}`` on stdout), 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

from . import __version__
from .backend import Backend, GroundingBox, HttpBackend, MockBackend
from .config import ToolkitConfig, default_config, load_config
from .errors import BackendError, ConfigError, PreconditionError, VlxError
from .extractors import (
    BinaryResult,
    ChoiceDistribution,
    ChoiceResult,
    ChoiceSet,
    DicResult,
    run_bvqa,
    run_dic,
    run_itr,
    run_mvqa,
    run_vg,
)
from .image import ImageBuffer
from .patrol import AnomalyReport, WaypointStore, check_waypoint, patrol, record_baseline, summarize, timestamp
from .recognition import (
    RefinementResult,
    RefinementStep,
    RelationResult,
    correct_rate,
    is_correct,
    run_task,
    stepwise_refine,
    viewpoint_stats,
)
from .records import ResultRecord, append_record, digest
from .variation import NoiseConfig, QuestionTemplate

log = logging.getLogger("vlx")


class UsageError(Exception):
    pass


class JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        print(json.dumps({"error": "usage", "detail": message}, sort_keys=True))
        sys.exit(2)


# -- helpers ------------------------------------------------------------------------


def _load_image(path: str) -> ImageBuffer:
    try:
        return ImageBuffer.load(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc


def _now(args) -> datetime | None:
    if not args.now:
        return None
    try:
        return datetime.fromisoformat(args.now)
    except ValueError as exc:
        raise UsageError(f"--now: not an ISO 8601 timestamp: {args.now!r}") from exc


def to_jsonable(result, audit: bool = False):
    if isinstance(result, (BinaryResult, ChoiceResult, ChoiceDistribution, DicResult, RelationResult)):
        return result.to_dict(audit=audit)
    if isinstance(result, (GroundingBox, AnomalyReport)) or hasattr(result, "to_dict"):
        return result.to_dict()
    if isinstance(result, str):
        return {"text": result}
    if isinstance(result, RefinementResult):
        return refinement_to_dict(result, audit)
    raise TypeError(f"cannot serialize {type(result).__name__}")


def refinement_to_dict(res: RefinementResult, audit: bool = False) -> dict:
    steps = []
    for s in res.steps:
        entry = {"kind": s.task.kind.value, "method": s.task.method.value, "result": to_jsonable(s.result, audit)}
        if s.box_global is not None:
            entry["box_local"] = list(s.box_local.as_tuple())
            entry["box_global"] = list(s.box_global.as_tuple())
        steps.append(entry)
    return {
        "complete": res.complete,
        "error": res.error,
        "steps": steps,
        "box_chain": [list(b.as_tuple()) for b in res.box_chain],
    }


def _answers(result):
    answers = getattr(result, "answers", None)
    return list(answers) if answers else None


class Runner:
    """Per-invocation state: parsed args, config, lazily built backend."""

    def __init__(self, args):
        self.args = args
        self._backend = None
        try:
            self.config: ToolkitConfig = load_config(args.config) if args.config else default_config()
        except ConfigError as exc:
            raise UsageError(f"invalid config: {exc}") from exc

    @property
    def backend(self) -> Backend:
        if self._backend is None:
            self._backend = self.config.backend.build()
        return self._backend

    @property
    def noise(self) -> NoiseConfig:
        return self.config.noise_for(self.args.seed)

    def log_result(self, task_name: str, inputs: dict, payload, answers=None) -> None:
        if not self.args.log:
            return
        rec = ResultRecord(
            task_name=task_name,
            timestamp=timestamp(_now(self.args)),
            inputs_digest=digest(inputs),
            result=payload,
            answers=answers if self.args.audit else None,
        )
        append_record(self.args.log, rec)


# -- commands -----------------------------------------------------------------------


def cmd_extract(r: Runner):
    a = r.args
    cfg = r.config
    sub = a.method
    if sub == "dic":
        img_a, img_b = _load_image(a.image_a), _load_image(a.image_b)
        threshold = cfg.dic_threshold if a.threshold is None else a.threshold
        result = run_dic(r.backend, img_a, img_b, threshold)
        inputs = {"image_a": img_a.content_hash, "image_b": img_b.content_hash, "threshold": threshold}
    else:
        img = _load_image(a.image)
        inputs = {"image": img.content_hash, "seed": r.noise.seed}
        articles = tuple(a.articles) if getattr(a, "articles", None) else cfg.articles
        if sub == "bvqa":
            tmpl = QuestionTemplate(a.template, articles)
            result = run_bvqa(r.backend, img, tmpl, r.noise, cfg.decision_policy, cfg.workers)
            inputs.update(template=a.template, articles=list(articles))
        elif sub == "mvqa":
            tmpl = QuestionTemplate(a.template, articles)
            choices = ChoiceSet(tuple(a.choices))
            result = run_mvqa(r.backend, img, tmpl, choices, r.noise, cfg.workers)
            inputs.update(template=a.template, articles=list(articles), choices=a.choices)
        elif sub == "itr":
            temp = cfg.itr_temperature if a.temperature is None else a.temperature
            ens = None
            if a.ensemble:
                n = r.noise
                ens = NoiseConfig(n.shift_low, n.shift_high, a.ensemble, n.seed)
            result = run_itr(r.backend, img, ChoiceSet(tuple(a.choices)), temp, ens)
            inputs.update(choices=a.choices, temperature=temp, ensemble=a.ensemble)
        else:
            result = run_vg(r.backend, img, a.phrase)
            inputs.update(phrase=a.phrase)
    payload = to_jsonable(result, a.audit)
    r.log_result(f"extract.{sub}", inputs, payload, _answers(result))
    return payload


def cmd_task_run(r: Runner):
    a = r.args
    task = r.config.tasks.get(a.name)
    if task is None:
        raise UsageError(f"unknown task {a.name!r}; defined: {sorted(r.config.tasks)}")
    settings = r.config.settings(a.seed)
    if bool(a.image) == bool(a.views):
        raise UsageError("give exactly one of --image or --views")

    def run_one(img):
        if isinstance(task, RefinementStep):
            return stepwise_refine(r.backend, img, task, settings)
        return run_task(r.backend, img, task, settings)

    if a.image:
        img = _load_image(a.image)
        result = run_one(img)
        payload = {"task": a.name, "result": to_jsonable(result, a.audit)}
        inputs = {"task": a.name, "image": img.content_hash, "seed": settings.noise.seed}
        r.log_result(a.name, inputs, payload, _answers(result))
        return payload

    if a.expected is None:
        raise UsageError("--views needs --expected")
    if isinstance(task, RefinementStep):
        raise UsageError("--views is not supported for refinement chains")
    views, rates, hashes = [], [], []
    for path in a.views:
        img = _load_image(path)
        hashes.append(img.content_hash)
        result = run_one(img)
        try:
            rate = correct_rate(result, a.expected)
            correct = is_correct(result, a.expected)
        except KeyError as exc:
            raise UsageError(f"--expected {a.expected!r} is not one of the task's choices") from exc
        rates.append(rate)
        views.append({"image": Path(path).name, "result": to_jsonable(result, a.audit), "rate": rate, "correct": correct})
    payload = {"task": a.name, "expected": a.expected, "views": views, "stats": viewpoint_stats(rates).to_dict()}
    r.log_result(a.name, {"task": a.name, "views": hashes, "expected": a.expected, "seed": settings.noise.seed}, payload)
    return payload


def _ensemble(r: Runner, n: int | None) -> NoiseConfig | None:
    if not n:
        return None
    base = r.noise
    return NoiseConfig(base.shift_low, base.shift_high, n, base.seed)


def cmd_patrol(r: Runner):
    a = r.args
    store = WaypointStore(a.store)
    now = _now(a)
    if a.action == "record":
        wp = record_baseline(store, r.backend, a.waypoint, _load_image(a.image), a.label or "", now)
        payload = wp.to_dict()
    elif a.action == "check":
        threshold = r.config.dic_threshold if a.threshold is None else a.threshold
        rep = check_waypoint(store, r.backend, a.waypoint, _load_image(a.image), threshold, now, _ensemble(r, a.ensemble))
        payload = rep.to_dict()
    else:
        threshold = r.config.dic_threshold if a.threshold is None else a.threshold
        route_path = Path(a.route)
        try:
            stops = json.loads(route_path.read_text(encoding="utf-8"))
            route = [(s["waypoint_id"], _load_image(str(route_path.parent / s["image"]))) for s in stops]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"bad route file {a.route}: {exc}") from exc
        entries = patrol(store, r.backend, route, threshold, now, _ensemble(r, a.ensemble))
        payload = {"reports": [e.to_dict() for e in entries], "summary": summarize(entries)}
    r.log_result(f"patrol.{a.action}", {"store": str(a.store), "action": a.action}, payload)
    return payload


def cmd_backend_ping(r: Runner):
    b = r.backend
    out = {"backend": type(b).__name__, "fingerprint": b.fingerprint, "capabilities": sorted(c.value for c in b.capabilities)}
    if isinstance(b, MockBackend):
        out.update(ok=True, fixtures=len(b))
    elif isinstance(b, HttpBackend):
        try:
            b.post({"task": "embed", "text": "ping"})
            out.update(ok=True)
        except BackendError as exc:  # reachable, just unhappy with the probe
            out.update(ok=True, detail=str(exc))
    return out


# -- parser -------------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="toolkit config JSON")
    p.add_argument("--seed", type=int, default=d, help="noise seed (overrides config)")
    p.add_argument("--log", default=d, help="append a result record to this JSONL file")
    p.add_argument("--audit", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="include raw per-trial answers")
    p.add_argument("--now", default=d, help="pin timestamps (ISO 8601)")


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(prog="vlx", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"vlx {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser, suppress=False)
    top = parser.add_subparsers(dest="command", required=True, parser_class=JsonArgumentParser)

    def leaf(sub, name, **kw):
        p = sub.add_parser(name, **kw)
        _global_flags(p, suppress=True)
        return p

    ex = top.add_parser("extract", help="run one extraction method").add_subparsers(
        dest="method", required=True, parser_class=JsonArgumentParser
    )
    p = leaf(ex, "bvqa", help="yes/no question over the query grid")
    p.add_argument("--image", required=True)
    p.add_argument("--template", required=True, help="question with one {art} slot")
    p.add_argument("--articles", nargs="+")
    p = leaf(ex, "mvqa", help="match free answers to choices")
    p.add_argument("--image", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--choices", nargs="+", required=True)
    p.add_argument("--articles", nargs="+")
    p = leaf(ex, "itr", help="image-text retrieval over choices")
    p.add_argument("--image", required=True)
    p.add_argument("--choices", nargs="+", required=True)
    p.add_argument("--temperature", type=float)
    p.add_argument("--ensemble", type=int, help="average over N channel-shift variants")
    p = leaf(ex, "vg", help="ground a phrase to a box")
    p.add_argument("--image", required=True)
    p.add_argument("--phrase", required=True)
    p = leaf(ex, "dic", help="caption difference of two images")
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--threshold", type=float)

    tk = top.add_parser("task", help="run a task defined in the config").add_subparsers(
        dest="action", required=True, parser_class=JsonArgumentParser
    )
    p = leaf(tk, "run")
    p.add_argument("name")
    p.add_argument("--image")
    p.add_argument("--views", nargs="+")
    p.add_argument("--expected")

    pt = top.add_parser("patrol", help="baseline and check patrol waypoints").add_subparsers(
        dest="action", required=True, parser_class=JsonArgumentParser
    )
    p = leaf(pt, "record")
    p.add_argument("--store", required=True)
    p.add_argument("--waypoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--label")
    p = leaf(pt, "check")
    p.add_argument("--store", required=True)
    p.add_argument("--waypoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--ensemble", type=int)
    p = leaf(pt, "run")
    p.add_argument("--store", required=True)
    p.add_argument("--route", required=True, help="JSON array of {waypoint_id, image}")
    p.add_argument("--threshold", type=float)
    p.add_argument("--ensemble", type=int)

    bk = top.add_parser("backend").add_subparsers(dest="action", required=True, parser_class=JsonArgumentParser)
    leaf(bk, "ping")
    return parser


COMMANDS = {
    "extract": cmd_extract,
    "task": cmd_task_run,
    "patrol": cmd_patrol,
    "backend": cmd_backend_ping,
}


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        runner = Runner(args)
        payload = COMMANDS[args.command](runner)
    except UsageError as exc:
        print(f"vlx: {exc}", file=sys.stderr)
        _emit({"error": "usage", "detail": str(exc)})
        return 2
    except PreconditionError as exc:
        print(f"vlx: {exc.code}: {exc}", file=sys.stderr)
        _emit({"error": exc.code, "detail": str(exc)})
        return 2
    except VlxError as exc:
        print(f"vlx: {exc.code}: {exc}", file=sys.stderr)
        _emit({"error": exc.code, "detail": str(exc)})
        return 1
    _emit(payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
