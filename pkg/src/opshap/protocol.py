"""Wire protocol and subprocess lifecycle for external evaluators.

Messages are UTF-8 JSON objects, one per line, over the child's standard
streams: ``{"id": int, "kind": str, "payload": {...}}``.  The engine assigns
monotonically increasing ids and every request receives exactly one ``result``
or ``error`` with the same id.  Coalitions travel as base64 of little-endian
bytes with bit i = player i.  The evaluator's ``hello`` reply declares the
protocol version and how many evaluate requests may be pipelined.

Accuracy is a real in [0, 1].  Backends that measure in percentage points
must divide by 100 before replying; out-of-range values are protocol
violations, never clamped.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading
from collections import deque
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from pathlib import Path

from .game import Coalition, ValueFunction
from .space import SearchSpace

PROTOCOL_VERSION = 1

KIND_HELLO = "hello"
KIND_SPACE = "space"
KIND_TRAIN = "train"
KIND_EVALUATE = "evaluate"
KIND_RESULT = "result"
KIND_ERROR = "error"
KIND_SHUTDOWN = "shutdown"


class ProtocolError(RuntimeError):
    pass


class HandshakeError(ProtocolError):
    pass


class ProtocolViolation(ProtocolError):
    pass


class EvaluatorCrashed(ProtocolError):
    pass


class ProtocolTimeout(ProtocolError):
    pass


def encode_message(msg: dict) -> str:
    """Canonical single-line form (sorted keys, no spaces)."""
    return json.dumps(msg, sort_keys=True, separators=(",", ":"))


def encode_mask(bits: int, n_players: int) -> str:
    width = max(1, (n_players + 7) // 8)
    return base64.b64encode(bits.to_bytes(width, "little")).decode("ascii")


def decode_mask(text: str, n_players: int) -> int:
    bits = int.from_bytes(base64.b64decode(text), "little")
    if bits >> n_players:
        raise ProtocolViolation(
            f"mask has bits beyond player {n_players - 1}: {text!r}"
        )
    return bits


def _tail(lines: deque) -> str:
    return "\n".join(lines) if lines else "<no diagnostic output>"


class SubprocessValueFunction(ValueFunction):
    """Value function served by a child process speaking the line protocol.

    The handle serializes writes and matches responses to requests by id, so
    it is shareable across estimator workers; up to the window declared in the
    child's hello, evaluate requests may be in flight simultaneously.  Train
    is exclusive: it waits for in-flight evaluations to drain and blocks new
    ones until acknowledged, then bumps the generation counter.
    """

    concurrent_safe = True

    def __init__(
        self,
        command: list[str] | str,
        space: SearchSpace,
        *,
        eval_timeout: float = 120.0,
        train_timeout: float = 600.0,
        handshake_timeout: float = 60.0,
    ):
        super().__init__()
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.space = space
        self.eval_timeout = eval_timeout
        self.train_timeout = train_timeout
        self._n = space.n_players
        self._id_lock = threading.Lock()
        self._next_id = 0
        self._write_lock = threading.Lock()
        self._pending: dict[int, Future] = {}
        self._pending_lock = threading.Lock()
        self._stderr_tail: deque[str] = deque(maxlen=200)
        self._broken: Exception | None = None
        self._gate = threading.Condition()
        self._active_evals = 0
        self._train_active = False
        self.window = 1
        self.hello_meta: dict = {}

        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as err:
            raise HandshakeError(f"cannot launch evaluator {self.command!r}: {err}") from err

        self._stderr_thread = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr_thread.start()
        self._reader_thread = threading.Thread(target=self._read_loop, daemon=True)
        self._reader_thread.start()

        try:
            hello = self._request(
                KIND_HELLO, {"version": PROTOCOL_VERSION}, timeout=handshake_timeout,
                expect_kind=KIND_HELLO,
            )
            version = hello.get("version")
            if version != PROTOCOL_VERSION:
                raise HandshakeError(
                    f"evaluator speaks protocol version {version!r}, "
                    f"engine speaks {PROTOCOL_VERSION}"
                )
            self.window = max(1, int(hello.get("window", 1)))
            self.hello_meta = hello
            ack = self._request(
                KIND_SPACE, space.to_document(), timeout=handshake_timeout
            )
            players = ack.get("players")
            if players != self._n:
                raise HandshakeError(
                    f"evaluator acknowledged {players!r} players, space has {self._n}"
                )
        except ProtocolTimeout as err:
            self._abort(err)
            raise HandshakeError(f"handshake timed out: {err}") from err
        except Exception as err:
            self._abort(err)
            raise
        self._eval_slots = threading.Semaphore(self.window)

    # -- lifecycle ---------------------------------------------------------

    def _drain_stderr(self) -> None:
        stream = self._proc.stderr
        if stream is None:
            return
        for line in stream:
            self._stderr_tail.append(line.rstrip("\n"))

    def _read_loop(self) -> None:
        stream = self._proc.stdout
        assert stream is not None
        for line in stream:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                msg_id = msg["id"]
                kind = msg["kind"]
                payload = msg.get("payload", {})
            except (json.JSONDecodeError, KeyError, TypeError):
                self._fail_pending(ProtocolViolation(f"unparseable reply line: {line!r}"))
                return
            with self._pending_lock:
                fut = self._pending.pop(msg_id, None)
                expected = sorted(self._pending)
            if fut is None:
                self._fail_pending(
                    ProtocolViolation(
                        f"reply carries id {msg_id!r} but the outstanding request "
                        f"ids are {expected}"
                    )
                )
                return
            fut.set_result((kind, payload))
        self._fail_pending(
            EvaluatorCrashed(
                f"evaluator exited (code {self._proc.poll()}); stderr tail:\n"
                f"{_tail(self._stderr_tail)}"
            )
        )

    def _fail_pending(self, err: Exception) -> None:
        self._broken = err
        with self._pending_lock:
            pending = list(self._pending.values())
            self._pending.clear()
        for fut in pending:
            if not fut.done():
                fut.set_exception(err)

    def _abort(self, err: Exception) -> None:
        self._broken = err if isinstance(err, Exception) else ProtocolError(str(err))
        try:
            self._proc.kill()
        except OSError:
            pass

    def close(self) -> None:
        if self._proc.poll() is None and self._broken is None:
            try:
                self._request(KIND_SHUTDOWN, {}, timeout=5.0)
            except ProtocolError:
                pass
        try:
            self._proc.terminate()
            self._proc.wait(timeout=5.0)
        except (OSError, subprocess.TimeoutExpired):
            self._proc.kill()
        self._broken = self._broken or ProtocolError("handle closed")

    def __enter__(self) -> "SubprocessValueFunction":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- request plumbing ----------------------------------------------------

    def _request(self, kind: str, payload: dict, *, timeout: float,
                 expect_kind: str = KIND_RESULT) -> dict:
        if self._broken is not None:
            raise ProtocolError(f"evaluator handle is unusable: {self._broken}")
        fut: Future = Future()
        with self._id_lock:
            msg_id = self._next_id
            self._next_id += 1
        with self._pending_lock:
            self._pending[msg_id] = fut
        line = encode_message({"id": msg_id, "kind": kind, "payload": payload})
        try:
            with self._write_lock:
                assert self._proc.stdin is not None
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
        except (OSError, ValueError) as err:
            crash = EvaluatorCrashed(
                f"cannot write to evaluator: {err}; stderr tail:\n"
                f"{_tail(self._stderr_tail)}"
            )
            self._fail_pending(crash)
            raise crash from err
        try:
            got_kind, got_payload = fut.result(timeout=timeout)
        except FutureTimeout:
            err = ProtocolTimeout(
                f"no reply to {kind} request id {msg_id} within {timeout}s"
            )
            self._abort(err)
            self._fail_pending(err)
            raise err from None
        if got_kind == KIND_ERROR:
            raise ProtocolError(
                f"evaluator error for {kind} id {msg_id}: "
                f"{got_payload.get('message', got_payload)}"
            )
        if got_kind != expect_kind:
            raise ProtocolViolation(
                f"expected {expect_kind} for id {msg_id}, got {got_kind}"
            )
        return got_payload

    # -- ValueFunction interface ----------------------------------------------

    @property
    def n_players(self) -> int:
        return self._n

    def evaluate(self, coalition: Coalition) -> float:
        if coalition.n != self._n:
            raise ValueError(
                f"coalition over {coalition.n} players, evaluator has {self._n}"
            )
        with self._gate:
            while self._train_active:
                self._gate.wait()
            self._active_evals += 1
        try:
            self._eval_slots.acquire()
            try:
                payload = self._request(
                    KIND_EVALUATE,
                    {"mask": encode_mask(coalition.bits, self._n), "players": self._n},
                    timeout=self.eval_timeout,
                )
            finally:
                self._eval_slots.release()
        finally:
            with self._gate:
                self._active_evals -= 1
                self._gate.notify_all()
        accuracy = payload.get("accuracy")
        if not isinstance(accuracy, (int, float)) or isinstance(accuracy, bool) or not (
            0.0 <= float(accuracy) <= 1.0
        ):
            raise ProtocolViolation(
                f"accuracy {accuracy!r} outside [0, 1]; request not retried"
            )
        return float(accuracy)

    def train(self, steps: int = 1) -> None:
        if steps < 0:
            raise ValueError("training steps must be non-negative")
        with self._gate:
            while self._train_active:
                self._gate.wait()
            self._train_active = True
            while self._active_evals > 0:
                self._gate.wait()
        try:
            self._request(KIND_TRAIN, {"steps": steps}, timeout=self.train_timeout)
            # Generation moves only once the evaluator acknowledged.
            self.generation += 1
        finally:
            with self._gate:
                self._train_active = False
                self._gate.notify_all()


def spawn_evaluator(
    command: list[str] | str,
    space: SearchSpace,
    *,
    eval_timeout: float = 120.0,
    train_timeout: float = 600.0,
    handshake_timeout: float = 60.0,
) -> SubprocessValueFunction:
    """Launch an external evaluator and complete the handshake."""
    return SubprocessValueFunction(
        command,
        space,
        eval_timeout=eval_timeout,
        train_timeout=train_timeout,
        handshake_timeout=handshake_timeout,
    )


# -- conformance ---------------------------------------------------------------


def conformance_space_document() -> dict:
    """Small fixed space used by the recorded conformance transcript."""
    return {
        "name": "conformance-chain",
        "nodes": 3,
        "edges": [
            {"from": 0, "to": 1, "ops": ["none", "skip_connect", "mix_a"]},
            {"from": 1, "to": 2, "ops": ["none", "skip_connect", "mix_b"]},
        ],
        "null_ops": ["none"],
        "selection": {"rule": "all"},
        "exclude_null": False,
    }


def build_conformance_transcript(space_doc: dict | None = None) -> list[dict]:
    """Request lines plus response expectations, independent of the evaluator.

    Expectations constrain ids, kinds, and payload field schemas only; the
    accuracy values themselves are evaluator-specific.
    """
    doc = space_doc or conformance_space_document()
    players = sum(len(e["ops"]) for e in doc["edges"])
    full_bits = (1 << players) - 1
    every_other = sum(1 << p for p in range(0, players, 2))

    def send(msg_id: int, kind: str, payload: dict) -> str:
        return encode_message({"id": msg_id, "kind": kind, "payload": payload})

    def eval_expect(msg_id: int) -> dict:
        return {"id": msg_id, "kind": KIND_RESULT, "fields": {"accuracy": "unit_float"}}

    return [
        {
            "send_line": send(0, KIND_HELLO, {"version": PROTOCOL_VERSION}),
            "expect": {
                "id": 0,
                "kind": KIND_HELLO,
                "fields": {"version": "int", "window": "positive_int"},
            },
        },
        {
            "send_line": send(1, KIND_SPACE, doc),
            "expect": {
                "id": 1,
                "kind": KIND_RESULT,
                "fields": {"players": f"=={players}"},
            },
        },
        {
            "send_line": send(2, KIND_EVALUATE, {"mask": encode_mask(0, players), "players": players}),
            "expect": eval_expect(2),
        },
        {
            "send_line": send(3, KIND_EVALUATE, {"mask": encode_mask(full_bits, players), "players": players}),
            "expect": eval_expect(3),
        },
        {
            "send_line": send(4, KIND_EVALUATE, {"mask": encode_mask(every_other, players), "players": players}),
            "expect": eval_expect(4),
        },
        {
            "send_line": send(5, KIND_TRAIN, {"steps": 1}),
            "expect": {"id": 5, "kind": KIND_RESULT, "fields": {}},
        },
        {
            "send_line": send(6, KIND_EVALUATE, {"mask": encode_mask(full_bits, players), "players": players}),
            "expect": eval_expect(6),
        },
        {
            "send_line": send(7, KIND_SHUTDOWN, {}),
            "expect": {"id": 7, "kind": KIND_RESULT, "fields": {}},
        },
    ]


def write_conformance_transcript(path: str | Path, space_doc: dict | None = None) -> None:
    lines = [
        json.dumps(entry, sort_keys=True, separators=(",", ":"))
        for entry in build_conformance_transcript(space_doc)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_conformance_transcript(path: str | Path) -> list[dict]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            entries.append(json.loads(line))
    return entries


def check_expectation(expect: dict, reply: dict) -> list[str]:
    problems: list[str] = []
    if reply.get("id") != expect["id"]:
        problems.append(f"id {reply.get('id')!r} != expected {expect['id']}")
    if reply.get("kind") != expect["kind"]:
        problems.append(f"kind {reply.get('kind')!r} != expected {expect['kind']}")
    payload = reply.get("payload")
    if not isinstance(payload, dict):
        problems.append(f"payload is {type(payload).__name__}, expected object")
        return problems
    for name, rule in expect.get("fields", {}).items():
        if name not in payload:
            problems.append(f"payload missing field {name!r}")
            continue
        value = payload[name]
        if rule == "unit_float":
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not (
                0.0 <= float(value) <= 1.0
            ):
                problems.append(f"field {name!r}={value!r} is not a float in [0, 1]")
        elif rule == "int":
            if not isinstance(value, int) or isinstance(value, bool):
                problems.append(f"field {name!r}={value!r} is not an int")
        elif rule == "positive_int":
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                problems.append(f"field {name!r}={value!r} is not a positive int")
        elif isinstance(rule, str) and rule.startswith("=="):
            if value != json.loads(rule[2:]):
                problems.append(f"field {name!r}={value!r} != {rule[2:]}")
        else:
            problems.append(f"unknown expectation rule {rule!r} for field {name!r}")
    return problems


def run_transcript(
    command: list[str] | str, transcript: list[dict], *, timeout: float = 60.0
) -> list[str]:
    """Replay recorded request lines byte for byte against an evaluator.

    Returns all violations (empty means the evaluator conforms).
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    proc = subprocess.Popen(
        argv,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
        encoding="utf-8",
        bufsize=1,
    )
    lines: queue.Queue = queue.Queue()

    def pump() -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    threading.Thread(target=pump, daemon=True).start()
    violations: list[str] = []
    try:
        for step, entry in enumerate(transcript):
            assert proc.stdin is not None
            proc.stdin.write(entry["send_line"] + "\n")
            proc.stdin.flush()
            try:
                line = lines.get(timeout=timeout)
            except queue.Empty:
                violations.append(f"step {step}: no reply within {timeout}s")
                break
            if line is None:
                violations.append(f"step {step}: evaluator closed its output stream")
                break
            try:
                reply = json.loads(line)
            except json.JSONDecodeError:
                violations.append(f"step {step}: unparseable reply {line!r}")
                continue
            for problem in check_expectation(entry["expect"], reply):
                violations.append(f"step {step}: {problem}")
    finally:
        try:
            proc.terminate()
            proc.wait(timeout=5.0)
        except (OSError, subprocess.TimeoutExpired):
            proc.kill()
    return violations
