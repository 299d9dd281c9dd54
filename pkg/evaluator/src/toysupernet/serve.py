"""Stdio request loop implementing the evaluator wire protocol.

One JSON message per line; replies carry the request's id.  A malformed line
gets an error with id -1 and the loop keeps serving.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys

import torch

from .surrogate import SurrogateSupernet

PROTOCOL_VERSION = 1


def _reply(out, msg_id, kind, payload) -> None:
    out.write(json.dumps({"id": msg_id, "kind": kind, "payload": payload}) + "\n")
    out.flush()


def serve(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    torch.set_num_threads(1)  # keep float reductions reproducible
    net: SurrogateSupernet | None = None
    saw_hello = False

    for raw in stdin:
        raw = raw.strip()
        if not raw:
            continue
        try:
            msg = json.loads(raw)
            msg_id = msg["id"]
            kind = msg["kind"]
            payload = msg.get("payload", {})
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            _reply(stdout, -1, "error", {"message": f"malformed message: {err}"})
            continue
        try:
            if kind == "hello":
                saw_hello = True
                _reply(stdout, msg_id, "hello", {
                    "version": PROTOCOL_VERSION,
                    "window": 1,
                    "evaluator": "toysupernet",
                    "val_fraction": args.val_size / (args.train_size + args.val_size),
                })
            elif not saw_hello:
                _reply(stdout, msg_id, "error", {"message": "hello must come first"})
            elif kind == "space":
                net = SurrogateSupernet(
                    payload,
                    seed=args.seed,
                    feature_dim=args.feature_dim,
                    train_size=args.train_size,
                    val_size=args.val_size,
                    lr=args.lr,
                )
                _reply(stdout, msg_id, "result", {"players": net.n_players})
            elif net is None:
                _reply(stdout, msg_id, "error", {"message": "no space configured"})
            elif kind == "evaluate":
                bits = int.from_bytes(base64.b64decode(payload["mask"]), "little")
                accuracy, batches = net.evaluate(bits)
                _reply(stdout, msg_id, "result",
                       {"accuracy": accuracy, "batches_used": batches})
            elif kind == "train":
                net.train_pass(int(payload.get("steps", 1)))
                _reply(stdout, msg_id, "result", {})
            elif kind == "shutdown":
                _reply(stdout, msg_id, "result", {})
                return 0
            else:
                _reply(stdout, msg_id, "error", {"message": f"unknown kind {kind!r}"})
        except Exception as err:  # bad payloads must not kill the loop
            _reply(stdout, msg_id, "error", {"message": str(err)})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="toysupernet",
        description="toy trainable supernet evaluator (stdio protocol)",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--feature-dim", type=int, default=16)
    parser.add_argument("--train-size", type=int, default=512)
    parser.add_argument("--val-size", type=int, default=256)
    parser.add_argument("--lr", type=float, default=0.02)
    return serve(parser.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
