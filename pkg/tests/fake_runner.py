"""Minimal protocol-v1 runner stand-in for backend tests.

Behavior is keyed on markers in the candidate source:
  __compile_bug__   compile failure
  __oob_access__    crash status whose log carries a CUDA memory marker
  __hang__          never replies (exercises the reply budget)
  __garbage_line__  emits a non-protocol line mid-reply
  __die__           exits without finishing the reply
"""

import json
import sys
import time


def send(kind, payload):
    body = {"kind": kind, "payload": payload, "protocol_version": 1}
    sys.stdout.write(json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def handle(request):
    payload = request["payload"]
    cid = payload["candidate_id"]
    source = payload["source"]

    if "__hang__" in source:
        time.sleep(60)
        return
    if "__die__" in source:
        sys.exit(13)
    if "__compile_bug__" in source:
        send(
            "case_result",
            {
                "candidate_id": cid,
                "case_id": "compile",
                "status": "compile_failed",
                "message": "nvcc exit 1: error: expected ';'",
            },
        )
        send("bye", {})
        return
    if "__garbage_line__" in source:
        sys.stdout.write("this is not a protocol message\n")
        sys.stdout.flush()
        send("bye", {})
        return
    if "__oob_access__" in source:
        for case in payload["cases"]:
            send(
                "case_result",
                {
                    "candidate_id": cid,
                    "case_id": case["case_id"],
                    "status": "crash",
                    "message": "CUDA error: an illegal memory access was encountered",
                },
            )
        send("bye", {})
        return

    for case in payload["cases"]:
        send(
            "case_result",
            {
                "candidate_id": cid,
                "case_id": case["case_id"],
                "status": "pass",
                "max_abs_diff": 0.0,
                "message": "",
            },
        )
    n = payload["warmup_runs"] + payload["timed_runs"]
    send(
        "timing_result",
        {
            "candidate_id": cid,
            "samples_ms": [2.0] * payload["warmup_runs"] + [1.0] * payload["timed_runs"],
            "baseline_samples_ms": {
                b: [4.0] * n for b in payload["baselines"]
            },
        },
    )
    send("profile_blob", {"candidate_id": cid, "label": "host-profiler", "text": "fake profile"})
    send("bye", {})


def main():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            send("error", {"message": "malformed request line", "traceback": ""})
            continue
        kind = request.get("kind")
        if kind == "hello":
            send("hello", {"mode": request["payload"].get("mode", "?"), "device": "0"})
        elif kind == "eval_request":
            handle(request)
        elif kind == "bye":
            sys.exit(0)


if __name__ == "__main__":
    main()
