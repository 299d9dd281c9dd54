"""Players, coalitions, and the value-function abstraction shared by all estimators.

A player is one candidate operation on one edge of a cell DAG.  A coalition is
the subset of players left active (unmasked); it is stored as an arbitrary
width integer bitmask so membership tests and subset enumeration are O(1)
per operation.
"""

from __future__ import annotations

import abc
import threading
from concurrent.futures import Future
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator

if TYPE_CHECKING:
    from .space import SearchSpace


class EvaluationError(RuntimeError):
    """An underlying evaluator failed; carries the offending coalition."""

    def __init__(self, coalition: "Coalition", cause: BaseException):
        self.coalition = coalition
        self.cause = cause
        super().__init__(f"evaluation failed for coalition {coalition!r}: {cause}")


@dataclass(frozen=True)
class OperationId:
    """One candidate operation, addressed by edge, slot, and flattened index."""

    edge_index: int
    op_index: int
    player_index: int


def flatten(edge_index: int, op_index: int, space: "SearchSpace") -> OperationId:
    """Map an (edge, op) pair to its flattened player index.

    The flattened index is the position in the canonical enumeration that
    walks edges in order and each edge's candidate list in order.
    """
    if not 0 <= edge_index < len(space.ops_per_edge):
        raise IndexError(
            f"edge index {edge_index} out of range for space with "
            f"{len(space.ops_per_edge)} edges"
        )
    ops = space.ops_per_edge[edge_index]
    if not 0 <= op_index < len(ops):
        raise IndexError(
            f"op index {op_index} out of range for edge {edge_index} with "
            f"{len(ops)} candidate operations"
        )
    return OperationId(edge_index, op_index, space.player_offset(edge_index) + op_index)


def unflatten(player_index: int, space: "SearchSpace") -> OperationId:
    """Inverse of :func:`flatten`."""
    if not 0 <= player_index < space.n_players:
        raise IndexError(
            f"player index {player_index} out of range for space with "
            f"{space.n_players} players"
        )
    for edge_index in range(len(space.ops_per_edge)):
        start = space.player_offset(edge_index)
        end = start + len(space.ops_per_edge[edge_index])
        if start <= player_index < end:
            return OperationId(edge_index, player_index - start, player_index)
    raise AssertionError("unreachable: offsets cover the full player range")


@dataclass(frozen=True)
class Coalition:
    """A subset of the player set, as a bitmask (bit i set = player i active)."""

    bits: int
    n: int

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError("player count must be non-negative")
        if not 0 <= self.bits < (1 << self.n):
            raise ValueError(f"bitmask {self.bits:#x} does not fit {self.n} players")

    @classmethod
    def empty(cls, n: int) -> "Coalition":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls((1 << n) - 1, n)

    @classmethod
    def from_players(cls, players, n: int) -> "Coalition":
        bits = 0
        for p in players:
            if not 0 <= p < n:
                raise ValueError(f"player {p} out of range for {n} players")
            bits |= 1 << p
        return cls(bits, n)

    @property
    def cardinality(self) -> int:
        return self.bits.bit_count()

    def __contains__(self, player: int) -> bool:
        return 0 <= player < self.n and bool(self.bits >> player & 1)

    def add(self, player: int) -> "Coalition":
        if not 0 <= player < self.n:
            raise ValueError(f"player {player} out of range for {self.n} players")
        return Coalition(self.bits | (1 << player), self.n)

    def remove(self, player: int) -> "Coalition":
        if not 0 <= player < self.n:
            raise ValueError(f"player {player} out of range for {self.n} players")
        return Coalition(self.bits & ~(1 << player), self.n)

    def union(self, other: "Coalition") -> "Coalition":
        self._check_same_universe(other)
        return Coalition(self.bits | other.bits, self.n)

    def intersection(self, other: "Coalition") -> "Coalition":
        self._check_same_universe(other)
        return Coalition(self.bits & other.bits, self.n)

    def complement(self) -> "Coalition":
        return Coalition(~self.bits & ((1 << self.n) - 1), self.n)

    def issubset(self, other: "Coalition") -> bool:
        self._check_same_universe(other)
        return self.bits & other.bits == self.bits

    def members(self) -> tuple[int, ...]:
        return tuple(self)

    def __iter__(self) -> Iterator[int]:
        bits = self.bits
        while bits:
            low = bits & -bits
            yield low.bit_length() - 1
            bits ^= low

    def __or__(self, other: "Coalition") -> "Coalition":
        return self.union(other)

    def __and__(self, other: "Coalition") -> "Coalition":
        return self.intersection(other)

    def _check_same_universe(self, other: "Coalition") -> None:
        if self.n != other.n:
            raise ValueError(f"coalitions over different player sets: {self.n} vs {other.n}")

    def __repr__(self) -> str:
        return f"Coalition({self.bits:#x}, n={self.n})"


class ValueFunction(abc.ABC):
    """Maps coalitions to a scalar performance in [0, 1].

    ``evaluate`` must be deterministic between consecutive ``train`` calls so
    cached results stay valid.  ``generation`` increments once per ``train``
    call and segregates cache contents.  ``concurrent_safe`` declares whether
    concurrent ``evaluate`` calls are permitted; estimators serialize requests
    when it is False.
    """

    concurrent_safe: bool = False

    def __init__(self) -> None:
        self.generation = 0

    @property
    @abc.abstractmethod
    def n_players(self) -> int: ...

    @abc.abstractmethod
    def evaluate(self, coalition: Coalition) -> float: ...

    def train(self, steps: int = 1) -> None:
        if steps < 0:
            raise ValueError("training steps must be non-negative")
        self._do_train(steps)
        self.generation += 1

    def _do_train(self, steps: int) -> None:
        """Hook for backends that actually optimize weights; default no-op."""

    def full_value(self) -> float:
        return self.evaluate(Coalition.full(self.n_players))


class EvalCache:
    """Memoizes value-function results within one training generation.

    Entries are keyed by coalition bitmask.  Whenever the wrapped function's
    generation moves past the cache's, all entries are dropped before the next
    lookup, so a hit always returns a value computed in the current
    generation.  Safe for concurrent readers; each distinct coalition is
    evaluated at most once per generation even under concurrent misses.
    """

    def __init__(self) -> None:
        self.hits = 0
        self.misses = 0
        self.generation = 0
        self._values: dict[int, float] = {}
        self._pending: dict[int, Future] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._values)

    def invalidate(self, generation: int | None = None) -> None:
        with self._lock:
            self._values.clear()
            self._pending.clear()
            self.generation = self.generation + 1 if generation is None else generation

    def get_or_evaluate(self, vf: ValueFunction, coalition: Coalition) -> float:
        fut: Future | None = None
        owner = False
        with self._lock:
            gen = getattr(vf, "generation", self.generation)
            if gen != self.generation:
                self._values.clear()
                self._pending.clear()
                self.generation = gen
            if coalition.bits in self._values:
                self.hits += 1
                return self._values[coalition.bits]
            fut = self._pending.get(coalition.bits)
            if fut is None:
                fut = Future()
                self._pending[coalition.bits] = fut
                self.misses += 1
                owner = True
        if not owner:
            return fut.result()
        try:
            value = vf.evaluate(coalition)
        except Exception as err:
            wrapped = err if isinstance(err, EvaluationError) else EvaluationError(coalition, err)
            with self._lock:
                self._pending.pop(coalition.bits, None)
            fut.set_exception(wrapped)
            raise wrapped from err
        with self._lock:
            self._values[coalition.bits] = value
            self._pending.pop(coalition.bits, None)
        fut.set_result(value)
        return value


def cached_evaluate(vf: ValueFunction, cache: EvalCache, coalition: Coalition) -> float:
    """Evaluate through the cache; repeated queries for the same coalition in
    the same generation perform zero underlying evaluations."""
    return cache.get_or_evaluate(vf, coalition)
