from __future__ import annotations

import base64
import json
import subprocess
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[2]

CHAIN_SPACE = {
    "name": "chain",
    "nodes": 3,
    "edges": [
        {"from": 0, "to": 1, "ops": ["none", "skip_connect", "mix_a"]},
        {"from": 1, "to": 2, "ops": ["none", "skip_connect", "mix_b"]},
    ],
    "null_ops": ["none"],
    "selection": {"rule": "all"},
}


def serve_cmd(*extra: str) -> list[str]:
    return [sys.executable, "-m", "toysupernet", *extra]


class Client:
    """Minimal line-protocol client for driving the evaluator in tests."""

    def __init__(self, *extra_args: str):
        self.proc = subprocess.Popen(
            serve_cmd(*extra_args),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self.next_id = 0

    def send_raw(self, line: str) -> dict:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return json.loads(self.proc.stdout.readline())

    def request(self, kind: str, payload: dict) -> dict:
        msg_id = self.next_id
        self.next_id += 1
        reply = self.send_raw(json.dumps({"id": msg_id, "kind": kind,
                                          "payload": payload}))
        assert reply["id"] == msg_id, reply
        return reply

    def handshake(self, space: dict) -> int:
        hello = self.request("hello", {"version": 1})
        assert hello["kind"] == "hello"
        ack = self.request("space", space)
        assert ack["kind"] == "result"
        return ack["payload"]["players"]

    def evaluate(self, bits: int, players: int) -> float:
        mask = base64.b64encode(
            bits.to_bytes(max(1, (players + 7) // 8), "little")
        ).decode()
        reply = self.request("evaluate", {"mask": mask, "players": players})
        assert reply["kind"] == "result", reply
        return reply["payload"]["accuracy"]

    def train(self, steps: int = 1) -> None:
        reply = self.request("train", {"steps": steps})
        assert reply["kind"] == "result", reply

    def close(self) -> None:
        try:
            self.request("shutdown", {})
        except Exception:
            pass
        self.proc.stdin.close()
        self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        try:
            self.close()
        finally:
            self.proc.kill()
