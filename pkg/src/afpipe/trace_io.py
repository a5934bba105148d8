"""Trace-event JSON export for schedule traces.

Emits the complete-event ('X') flavor of the trace-event format understood by
chrome://tracing and Perfetto: pid = worker group, tid = lane within the
group, timestamps and durations in microseconds. The shipped JSON schema
(schemas/trace_event.schema.json) pins the exact document shape.
"""

from __future__ import annotations

import json
import math
from importlib import resources

from .sim import ScheduleTrace
from .taskgraph import COMPUTE_LANE, RECV_LANE, SEND_LANE


class SerializationError(Exception):
    pass


_LANE_TID = {COMPUTE_LANE: 0, SEND_LANE: 1, RECV_LANE: 2}


def trace_schema() -> dict:
    schema_text = (
        resources.files("afpipe").joinpath("schemas/trace_event.schema.json").read_text()
    )
    return json.loads(schema_text)


def export_trace(trace: ScheduleTrace) -> list[dict]:
    """One complete event per scheduled task, in canonical event order."""
    owners = sorted({ev.owner for ev in trace.events})
    pid_of = {owner: i for i, owner in enumerate(owners)}
    events = []
    for ev in trace.events:
        ts = ev.start_ns / 1e3
        dur = (ev.end_ns - ev.start_ns) / 1e3
        if not (math.isfinite(ts) and math.isfinite(dur)):
            raise SerializationError(f"non-finite timestamp on task {ev.task_id}")
        name = f"{ev.kind} mb{ev.microbatch}"
        if ev.layer is not None:
            name += f" L{ev.layer}"
        events.append(
            {
                "name": name,
                "ph": "X",
                "ts": ts,
                "dur": dur,
                "pid": pid_of[ev.owner],
                "tid": _LANE_TID[ev.lane],
                "args": {
                    "owner": ev.owner,
                    "stream": ev.stream,
                    "lane": ev.lane,
                    "kind": ev.kind,
                    "microbatch": ev.microbatch,
                    "layer": ev.layer,
                    "virtual_index": ev.virtual_index,
                    "direction": ev.direction,
                    "task": ev.task_id,
                },
            }
        )
    return events


def export_trace_json(trace: ScheduleTrace) -> str:
    return json.dumps(export_trace(trace), indent=1, sort_keys=True)


def write_trace(trace: ScheduleTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(export_trace_json(trace))


def parse_trace_events(document: str | list) -> list[tuple[int, int, str]]:
    """Recover exact (start_ns, end_ns, owner) triples from an exported document.

    Microsecond floats round-trip to integer nanoseconds exactly because the
    rounding error of ns/1e3 in a double is far below half a nanosecond.
    """
    events = json.loads(document) if isinstance(document, str) else document
    triples = []
    for ev in events:
        start = round(ev["ts"] * 1e3)
        triples.append((start, start + round(ev["dur"] * 1e3), ev["args"]["owner"]))
    return triples
