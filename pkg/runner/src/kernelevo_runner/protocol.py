"""Line-oriented message protocol, version 1.

One JSON object per line with canonical encoding.  This is the runner-side
twin of the orchestrator's wire format; the two share only the format
definition, not code.
"""

from __future__ import annotations

import json
import sys

PROTOCOL_VERSION = 1

HELLO = "hello"
EVAL_REQUEST = "eval_request"
CASE_RESULT = "case_result"
TIMING_RESULT = "timing_result"
PROFILE_BLOB = "profile_blob"
ERROR = "error"
BYE = "bye"


class ProtocolError(ValueError):
    """A line is not a well-formed protocol message."""


def encode(kind: str, payload: dict) -> str:
    body = {"kind": kind, "payload": payload, "protocol_version": PROTOCOL_VERSION}
    return json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n"


def decode(line: str) -> tuple[str, dict]:
    try:
        body = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON: {exc}") from exc
    if not isinstance(body, dict) or "kind" not in body or "payload" not in body:
        raise ProtocolError("message must carry kind and payload")
    if not isinstance(body["payload"], dict):
        raise ProtocolError("payload must be an object")
    return body["kind"], body["payload"]


def send(kind: str, payload: dict, stream=None) -> None:
    out = stream or sys.stdout
    out.write(encode(kind, payload))
    out.flush()
