"""Newline-delimited JSON protocol between the orchestrator and eval runners.

One message per line, canonical encoding (sorted keys, compact separators) so
that decode(encode(m)) == m and re-encoding is byte-exact.  Protocol version 1:

    orchestrator -> runner:  hello, eval_request*, bye
    runner -> orchestrator:  hello, then per request
                             case_result* [timing_result] profile_blob* bye
                             (error instead, on internal runner failure)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1

HELLO = "hello"
EVAL_REQUEST = "eval_request"
CASE_RESULT = "case_result"
TIMING_RESULT = "timing_result"
PROFILE_BLOB = "profile_blob"
ERROR = "error"
BYE = "bye"

MESSAGE_KINDS = (HELLO, EVAL_REQUEST, CASE_RESULT, TIMING_RESULT, PROFILE_BLOB, ERROR, BYE)

# Required payload keys per kind; extra keys are allowed (schema is additive).
_REQUIRED_KEYS = {
    HELLO: ("mode",),
    EVAL_REQUEST: (
        "candidate_id",
        "source",
        "reference_source",
        "direction",
        "cases",
        "atol",
        "rtol",
        "warmup_runs",
        "timed_runs",
        "baselines",
    ),
    CASE_RESULT: ("candidate_id", "case_id", "status", "message"),
    TIMING_RESULT: ("candidate_id", "samples_ms"),
    PROFILE_BLOB: ("candidate_id", "label", "text"),
    ERROR: ("message",),
    BYE: (),
}


class WireError(ValueError):
    """A line failed to decode as a protocol message."""


@dataclass(frozen=True, slots=True)
class RunnerMessage:
    kind: str
    payload: dict = field(default_factory=dict)
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise WireError(f"unknown message kind {self.kind!r}")
        missing = [k for k in _REQUIRED_KEYS[self.kind] if k not in self.payload]
        if missing:
            raise WireError(f"{self.kind} payload missing keys: {missing}")


def encode(message: RunnerMessage) -> str:
    """Encode to one canonical JSON line (newline included)."""
    body = {
        "kind": message.kind,
        "payload": message.payload,
        "protocol_version": message.protocol_version,
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n"


def decode(line: str) -> RunnerMessage:
    """Decode one line; raises WireError on any malformation."""
    try:
        body = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"invalid JSON line: {exc}") from exc
    if not isinstance(body, dict):
        raise WireError("message must be a JSON object")
    for key in ("kind", "payload", "protocol_version"):
        if key not in body:
            raise WireError(f"message missing {key!r}")
    if not isinstance(body["payload"], dict):
        raise WireError("payload must be an object")
    if not isinstance(body["protocol_version"], int):
        raise WireError("protocol_version must be an int")
    return RunnerMessage(
        kind=body["kind"],
        payload=body["payload"],
        protocol_version=body["protocol_version"],
    )
