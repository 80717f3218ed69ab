"""Operator tooling: trace replay, the automatic model selector, snapshot
display and compaction, and the HTTP service launcher.

Trace files are JSON lines; each line is one event:

    {"store": "<text>", "now": <float>}
    {"recall": "<text>", "now": <float>, "top_k": <int>?,
     "token_budget": <int>?, "expected_ids": [<store ordinal>, ...]?}
    {"manage": <now``float``>}
    {"optimize": {"task":..., "steps": [[action, observation], ...],
                  "outcome": "success"|"failure", "score": <float>?}}

Timestamps must be non-decreasing. ``expected_ids`` label a recall with the
ordinals of earlier store events that should be retrievable.

Exit codes: 0 ok, 1 usage, 2 data error, 3 provider error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .config import load_config_file
from .core import RecordStore, Trajectory
from .errors import (
    ConfigValidationError,
    FileIOError,
    MemEngineError,
    NoLabeledRecallsError,
    ParseError,
    ProviderError,
    SnapshotFormatError,
    UnknownKindError,
)
from .models import create_model

TEXT_COLUMN_WIDTH = 60
TABLE_COLUMNS = ("id", "source", "created_at", "importance", "strength",
                 "forgotten", "text")

_EVENT_KEYS = ("store", "recall", "manage", "optimize")


class UsageError(Exception):
    pass


# -- trace files -------------------------------------------------------------

def load_trace(path):
    """Parse and validate a trace file; raises ParseError with the line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileIOError(f"cannot read trace {path}: {exc}") from exc
    events = []
    last_now = None
    store_count = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            event = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if not isinstance(event, dict):
            raise ParseError("event must be a JSON object", line=lineno)
        verbs = [k for k in _EVENT_KEYS if k in event]
        if len(verbs) != 1:
            raise ParseError("event must contain exactly one of "
                             f"{_EVENT_KEYS}", line=lineno)
        verb = verbs[0]
        now = _event_now(event, verb, lineno)
        if now is not None:
            if last_now is not None and now < last_now:
                raise ParseError("timestamps must be non-decreasing", line=lineno)
            last_now = now
        if verb == "recall":
            for ordinal in event.get("expected_ids") or []:
                if not isinstance(ordinal, int) or not 0 <= ordinal < store_count:
                    raise ParseError(
                        f"expected_ids entry {ordinal!r} does not reference "
                        "an earlier store event", line=lineno)
        if verb == "store":
            store_count += 1
        if verb == "optimize":
            try:
                Trajectory.from_dict(event["optimize"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad trajectory: {exc}", line=lineno) from exc
        events.append(event)
    return events


def _event_now(event, verb, lineno):
    if verb == "manage":
        now = event["manage"]
    elif verb == "optimize":
        return None
    else:
        if "now" not in event:
            raise ParseError(f"{verb} event missing 'now'", line=lineno)
        now = event["now"]
    if not isinstance(now, (int, float)) or isinstance(now, bool) or now < 0:
        raise ParseError("'now' must be a non-negative number", line=lineno)
    return float(now)


def run_trace(model, events, timings=None):
    """Replay events against a model; returns (transcript, labeled_results).

    Operation errors are recorded in the transcript and replay continues.
    ``labeled_results`` pairs each labeled recall with the record ids it
    returned and the ids its expected ordinals mapped to.
    """
    transcript = []
    labeled = []
    store_ids = []
    clock = 0.0
    for index, event in enumerate(events):
        verb = next(k for k in _EVENT_KEYS if k in event)
        entry = {"event": index, "verb": verb}
        try:
            if verb == "store":
                clock = float(event["now"])
                record_id = model.store(event["store"], now=clock)
                store_ids.append(record_id)
                entry["record_id"] = record_id
            elif verb == "recall":
                clock = float(event["now"])
                query = model.make_query(
                    event["recall"], top_k=event.get("top_k"),
                    token_budget=event.get("token_budget"), now=clock)
                started = time.perf_counter()
                result = model.recall(query)
                elapsed_ms = (time.perf_counter() - started) * 1000.0
                if timings is not None:
                    timings.append(elapsed_ms)
                entry.update(result.to_payload())
                ordinals = event.get("expected_ids")
                if ordinals:
                    expected = {store_ids[o] for o in ordinals}
                    returned = {item.record_id for item in result.items}
                    labeled.append((returned, expected))
            elif verb == "manage":
                clock = float(event["manage"])
                entry["report"] = model.manage(now=clock)
            else:
                trajectory = Trajectory.from_dict(event["optimize"])
                entry["report"] = model.optimize(trajectory, now=clock)
        except MemEngineError as exc:
            entry["error"] = {"type": type(exc).__name__, "message": str(exc)}
        transcript.append(entry)
    return transcript, labeled


def transcript_text(transcript):
    return "".join(json.dumps(line, sort_keys=True, separators=(",", ":")) + "\n"
                   for line in transcript)


def replay(trace_path, kind, overlay=None, seed=None):
    """Replay a trace against a fresh model; returns the transcript text."""
    events = load_trace(trace_path)
    model = create_model(kind, _seed_overlay(overlay, seed))
    transcript, _ = run_trace(model, events)
    return transcript_text(transcript)


def _seed_overlay(overlay, seed):
    if seed is None:
        return overlay
    merged = dict(overlay or {})
    functions = dict(merged.get("functions") or {})
    llm = dict(functions.get("llm") or {})
    llm["seed"] = seed
    functions["llm"] = llm
    merged["functions"] = functions
    return merged


# -- automatic selector -------------------------------------------------------

@dataclass
class CandidateResult:
    kind: str
    overlay: dict
    hit_at_k: float
    mean_recall_latency_ms: float


@dataclass
class SelectorReport:
    candidates: list[CandidateResult]
    winner: int

    def to_dict(self):
        return {
            "candidates": [{
                "kind": c.kind,
                "overlay": c.overlay,
                "hit_at_k": c.hit_at_k,
                "mean_recall_latency_ms": c.mean_recall_latency_ms,
            } for c in self.candidates],
            "winner": self.winner,
        }


def pick_winner(results):
    """Highest hit rate wins; ties go to lower latency, then declaration
    order."""
    winner = 0
    for index, candidate in enumerate(results[1:], start=1):
        best = results[winner]
        if candidate.hit_at_k > best.hit_at_k:
            winner = index
        elif (candidate.hit_at_k == best.hit_at_k
              and candidate.mean_recall_latency_ms < best.mean_recall_latency_ms):
            winner = index
    return winner


def auto_select(trace_path, candidates):
    """Replay the trace per candidate and rank by hit@k on labeled recalls."""
    if not candidates:
        raise UsageError("at least one candidate is required")
    events = load_trace(trace_path)
    labeled_count = sum(1 for e in events
                        if "recall" in e and e.get("expected_ids"))
    if labeled_count == 0:
        raise NoLabeledRecallsError("trace has no recall with expected_ids")
    results = []
    for kind, overlay in candidates:
        model = create_model(kind, overlay or None)
        timings = []
        _, labeled = run_trace(model, events, timings=timings)
        hits = sum(1 for returned, expected in labeled if returned & expected)
        results.append(CandidateResult(
            kind=kind,
            overlay=overlay or {},
            hit_at_k=hits / labeled_count,
            mean_recall_latency_ms=(sum(timings) / len(timings)) if timings else 0.0,
        ))
    return SelectorReport(results, pick_winner(results))


def load_candidates(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileIOError(f"cannot read candidates {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    if not isinstance(data, list) or not data:
        raise ParseError("candidates file must be a non-empty JSON list", line=1)
    candidates = []
    for entry in data:
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ParseError("every candidate needs a 'kind'", line=1)
        candidates.append((entry["kind"], entry.get("overlay") or {}))
    return candidates


# -- snapshot display / compaction ---------------------------------------------

def display(snapshot_path, fmt="table"):
    """Render a snapshot as a fixed-column table or as loadable JSON."""
    store = RecordStore.load(snapshot_path)
    if fmt == "json":
        return store.to_snapshot_text()
    rows = [" | ".join(TABLE_COLUMNS)]
    for rid in sorted(store.records):
        record = store.records[rid]
        text = record.text
        if len(text) > TEXT_COLUMN_WIDTH:
            text = text[:TEXT_COLUMN_WIDTH] + "…"
        rows.append(" | ".join([
            str(record.id),
            record.source,
            repr(record.created_at),
            "-" if record.importance is None else str(record.importance),
            repr(record.strength),
            "true" if record.forgotten else "false",
            text,
        ]))
    return "\n".join(rows) + "\n"


def compact(snapshot_path):
    """Physically delete forgotten records and rewrite the snapshot."""
    store = RecordStore.load(snapshot_path)
    removed = store.compact()
    store.snapshot(snapshot_path)
    return removed


# -- argument parsing / entry point ----------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="memengine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_replay = sub.add_parser("replay", help="replay a trace against one model kind")
    p_replay.add_argument("--trace", required=True)
    p_replay.add_argument("--kind", required=True)
    p_replay.add_argument("--config", default=None)
    p_replay.add_argument("--seed", type=int, default=None)
    p_replay.add_argument("--out", default=None)

    p_select = sub.add_parser("select", help="pick the best model for a labeled trace")
    p_select.add_argument("--trace", required=True)
    p_select.add_argument("--candidates", required=True)

    p_display = sub.add_parser("display", help="render a snapshot file")
    p_display.add_argument("--snapshot", required=True)
    p_display.add_argument("--format", choices=("table", "json"), default="table")

    p_compact = sub.add_parser("compact", help="drop forgotten records from a snapshot")
    p_compact.add_argument("--snapshot", required=True)

    p_serve = sub.add_parser("serve", help="run the HTTP session service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--config", default=None)
    p_serve.add_argument("--ttl-seconds", type=float, default=None)

    return parser


def _run(args):
    if args.command == "replay":
        overlay = load_config_file(args.config) if args.config else None
        text = replay(args.trace, args.kind, overlay, args.seed)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return 0
    if args.command == "select":
        report = auto_select(args.trace, load_candidates(args.candidates))
        sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
        return 0
    if args.command == "display":
        sys.stdout.write(display(args.snapshot, args.format))
        return 0
    if args.command == "compact":
        removed = compact(args.snapshot)
        sys.stdout.write(f"removed {removed} forgotten record(s)\n")
        return 0
    if args.command == "serve":
        import uvicorn

        from .service import create_app
        overlay = load_config_file(args.config) if args.config else None
        app = create_app(ttl_seconds=args.ttl_seconds, base_overlay=overlay)
        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    raise UsageError(f"unknown command {args.command!r}")


def exit_code_for(exc):
    if isinstance(exc, UsageError):
        return 1
    if isinstance(exc, ProviderError):
        return 3
    if isinstance(exc, (ParseError, SnapshotFormatError, FileIOError,
                        ConfigValidationError, UnknownKindError,
                        NoLabeledRecallsError)):
        return 2
    return 2


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except MemEngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
