"""Scriptable line-protocol server used by the protocol tests.

Usage: fake_server.py MODE [SECONDS]

Modes:
  judge-echo    serves only `judge`; the rationale echoes the params
  mirror        serves every method; masks and boxes are echoed back
  wrong-version answers hello with protocol_version 2
  malformed     answers hello, then replies with a non-JSON line
  wrong-id      answers hello, then replies with a future id
  raise         answers hello, then fails every call with ModelCrashed
  slow          like mirror, but `track` sleeps SECONDS first
  strict        like mirror, but rejects a request that arrives while
                another is still unanswered
"""

import json
import os
import select
import sys
import time

MODE = sys.argv[1]
DELAY = float(sys.argv[2]) if len(sys.argv) > 2 else 1.0
ALL = ["init_segmenter", "propagate", "prompt_box", "init_tracker", "track",
       "describe", "detect", "judge", "classify_semantic"]

buf = b""


def read_line():
    global buf
    while b"\n" not in buf:
        chunk = os.read(0, 4096)
        if not chunk:
            return None
        buf += chunk
    line, buf = buf.split(b"\n", 1)
    return line.decode()


def pending():
    return b"\n" in buf or bool(select.select([0], [], [], 0.05)[0])


def send(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def ok(rid, payload):
    send({"id": rid, "status": "ok", "payload": payload})


def err(rid, kind, msg):
    send({"id": rid, "status": "error", "error_kind": kind, "error_msg": msg})


masks = {}


def mirror(rid, method, params):
    if method == "init_segmenter":
        sid = params["video_id"] + "/" + params["object_id"]
        masks[sid] = params["first_mask"]
        ok(rid, {"session_id": sid})
    elif method == "propagate":
        ok(rid, {"mask": masks[params["session_id"]]})
    elif method == "track":
        if MODE == "slow":
            time.sleep(DELAY)
        ok(rid, {"bbox": [1, 2, 3, 4], "confidence": 0.75})
    elif method == "detect":
        ok(rid, {"bbox": None, "confidence": 0.0})
    elif method == "describe":
        ok(rid, {"description": "#1 mirrored"})
    elif method == "classify_semantic":
        ok(rid, {"distinct": False, "description": None})
    elif method == "judge":
        ok(rid, {"choice": "AuxiliaryCrop", "rationale": json.dumps(params, sort_keys=True)})
    else:
        ok(rid, {})


def main():
    while True:
        line = read_line()
        if line is None:
            return
        if not line.strip():
            continue
        req = json.loads(line)
        rid, method, params = req["id"], req["method"], req.get("params", {})
        if method == "hello":
            version = 2 if MODE == "wrong-version" else 1
            caps = ["judge"] if MODE == "judge-echo" else ALL
            ok(rid, {"protocol_version": version, "capabilities": caps})
            continue
        if method == "shutdown":
            ok(rid, {})
            return
        if MODE == "strict" and pending():
            err(rid, "ProtocolViolation", "request pipelined")
            return
        if MODE == "malformed":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
        elif MODE == "wrong-id":
            ok(rid + 5, {})
        elif MODE == "raise":
            err(rid, "ModelCrashed", "weights not found")
        elif MODE == "judge-echo" and method != "judge":
            err(rid, "UnknownMethod", method)
        else:
            mirror(rid, method, params)


main()
