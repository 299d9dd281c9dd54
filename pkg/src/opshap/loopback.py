"""Loopback evaluator: serves a synthetic game over the wire protocol.

Run as ``python -m opshap.loopback --game <preset-or-file>``.  The game is
built against whatever space the engine transmits, so an in-process run and a
protocol-wrapped run of the same game are directly comparable.
"""

from __future__ import annotations

import argparse
import json
import sys

from .protocol import (
    KIND_ERROR,
    KIND_EVALUATE,
    KIND_HELLO,
    KIND_RESULT,
    KIND_SHUTDOWN,
    KIND_SPACE,
    KIND_TRAIN,
    PROTOCOL_VERSION,
    decode_mask,
    encode_message,
)
from .space import load_space
from .synthetic import load_game_spec, make_game

WINDOW = 4


def _reply(out, msg_id, kind, payload) -> None:
    out.write(encode_message({"id": msg_id, "kind": kind, "payload": payload}) + "\n")
    out.flush()


def serve(game_source: str, seed: int | None = None, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    spec = load_game_spec(game_source)
    if seed is not None:
        spec.seed = seed
    game = None
    space = None
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
            _reply(stdout, -1, KIND_ERROR, {"message": f"malformed message: {err}"})
            continue
        try:
            if kind == KIND_HELLO:
                saw_hello = True
                _reply(stdout, msg_id, KIND_HELLO, {
                    "version": PROTOCOL_VERSION,
                    "window": WINDOW,
                    "evaluator": "opshap-loopback",
                })
            elif not saw_hello:
                _reply(stdout, msg_id, KIND_ERROR, {"message": "hello must come first"})
            elif kind == KIND_SPACE:
                space = load_space(payload)
                game = make_game(spec, space=space)
                _reply(stdout, msg_id, KIND_RESULT, {"players": space.n_players})
            elif kind == KIND_EVALUATE:
                if game is None:
                    _reply(stdout, msg_id, KIND_ERROR, {"message": "no space configured"})
                    continue
                bits = decode_mask(payload["mask"], game.n_players)
                _reply(stdout, msg_id, KIND_RESULT, {
                    "accuracy": game.evaluate_bits(bits),
                    "batches_used": 1,
                })
            elif kind == KIND_TRAIN:
                if game is None:
                    _reply(stdout, msg_id, KIND_ERROR, {"message": "no space configured"})
                    continue
                game.train(int(payload.get("steps", 1)))
                _reply(stdout, msg_id, KIND_RESULT, {})
            elif kind == KIND_SHUTDOWN:
                _reply(stdout, msg_id, KIND_RESULT, {})
                return 0
            else:
                _reply(stdout, msg_id, KIND_ERROR, {"message": f"unknown kind {kind!r}"})
        except Exception as err:  # malformed payloads must not kill the loop
            _reply(stdout, msg_id, KIND_ERROR, {"message": str(err)})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="opshap.loopback",
        description="serve a synthetic game over the evaluator protocol",
    )
    parser.add_argument("--game", required=True, help="game preset name or spec file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the game spec's seed")
    args = parser.parse_args(argv)
    return serve(args.game, args.seed)


if __name__ == "__main__":
    sys.exit(main())
