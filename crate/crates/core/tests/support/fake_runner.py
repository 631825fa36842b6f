"""Minimal line-protocol runner used by the integration tests.

Markers in code_text steer it: HANG sleeps forever, CRASH exits, BADJSON
answers garbage. Anything else is exec'd together with the tests.
"""
import json
import sys
import time

print(json.dumps({"protocol": "1", "runner": "fake"}), flush=True)

for line in sys.stdin:
    if not line.strip():
        continue
    req = json.loads(line)
    code = req["code_text"]
    started = time.monotonic()
    if "HANG" in code:
        time.sleep(3600)
    if "CRASH" in code:
        sys.exit(3)
    if "BADJSON" in code:
        print("not json", flush=True)
        continue
    env = {}
    try:
        exec(code + "\n" + req["test_text"], env)
        resp = {"passed": True, "error_kind": "none", "detail": ""}
    except AssertionError as e:
        resp = {"passed": False, "error_kind": "assertion", "detail": repr(e)}
    except Exception as e:
        resp = {"passed": False, "error_kind": "exception", "detail": repr(e)}
    resp["duration_ms"] = int((time.monotonic() - started) * 1000)
    print(json.dumps(resp), flush=True)
