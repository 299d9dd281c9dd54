"""Exact Shapley attribution and Monte-Carlo permutation estimation.

The exact estimator enumerates every coalition once and combines marginals
with the combinatorial weights

    phi[o] = (1/n) * sum over S not containing o of
             (V(S + o) - V(S)) / C(n - 1, |S|)

The Monte-Carlo estimator averages marginal contributions along M random
permutations; each permutation draws from its own RNG stream derived from
(seed, permutation index), so results never depend on processing order or
worker count.  Early truncation stops a permutation scan once the drop from
the full-coalition value exceeds a threshold, zero-filling (or skipping) the
players that were never reached.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .game import Coalition, EvalCache, EvaluationError, ValueFunction

DEFAULT_EXACT_CAP = 24

SCAN_FROM_FULL = "from_full"
SCAN_FROM_EMPTY = "from_empty"
POLICY_ZERO_FILL = "zero_fill"
POLICY_SKIP = "skip"


class ExactModeRefused(ValueError):
    def __init__(self, n_players: int, cap: int):
        self.n_players = n_players
        self.cap = cap
        super().__init__(
            f"exact enumeration refused: {n_players} players exceeds the cap of {cap}"
        )


@dataclass
class ShapleyEstimate:
    """Per-player attribution with sampling bookkeeping.

    ``phi`` is in value-function units (accuracy).  ``samples_per_player``
    counts collected marginal samples; players with zero samples under the
    skip policy keep phi 0 but are flagged in ``unsampled``.  ``evals_spent``
    counts underlying value-function evaluations (cache hits excluded).
    """

    phi: np.ndarray
    samples_per_player: np.ndarray
    evals_spent: int
    truncated_fraction: float = 0.0
    unsampled: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.phi = np.asarray(self.phi, dtype=float)
        self.samples_per_player = np.asarray(self.samples_per_player, dtype=np.int64)
        if self.unsampled is None:
            self.unsampled = np.zeros(len(self.phi), dtype=bool)
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi must be finite everywhere")
        if np.any(self.samples_per_player < 0):
            raise ValueError("sample counts must be non-negative")

    @property
    def n_players(self) -> int:
        return len(self.phi)


@dataclass
class McConfig:
    """Monte-Carlo estimator settings.

    ``truncation_threshold`` is on the [0, 1] accuracy scale; None disables
    early truncation.  ``scan_direction`` from_full walks each permutation
    backwards from the full coalition (the informative region); from_empty is
    the plain forward walk, kept for ablation.
    """

    permutations: int = 10
    truncation_threshold: float | None = 0.5
    scan_direction: str = SCAN_FROM_FULL
    truncation_policy: str = POLICY_ZERO_FILL
    seed: int = 0

    def __post_init__(self) -> None:
        if self.permutations < 1:
            raise ValueError("permutations must be >= 1")
        if self.truncation_threshold is not None and not (
            0.0 < self.truncation_threshold <= 1.0
        ):
            raise ValueError("truncation threshold must lie in (0, 1] or be None")
        if self.scan_direction not in (SCAN_FROM_FULL, SCAN_FROM_EMPTY):
            raise ValueError(f"unknown scan direction {self.scan_direction!r}")
        if self.truncation_policy not in (POLICY_ZERO_FILL, POLICY_SKIP):
            raise ValueError(f"unknown truncation policy {self.truncation_policy!r}")


class _Query:
    """Counting front end for value queries, optionally through a cache."""

    def __init__(self, vf: ValueFunction, cache: EvalCache | None):
        self.vf = vf
        self.cache = cache
        self.n = vf.n_players
        self._count = 0
        self._misses_at_start = cache.misses if cache is not None else 0
        self._lock = threading.Lock()

    def __call__(self, bits: int) -> float:
        coalition = Coalition(bits, self.n)
        if self.cache is not None:
            # Concurrent misses on one key collapse to a single evaluation
            # inside the cache, so its miss counter is the evaluation count.
            return self.cache.get_or_evaluate(self.vf, coalition)
        try:
            value = self.vf.evaluate(coalition)
        except Exception as err:
            if isinstance(err, EvaluationError):
                raise
            raise EvaluationError(coalition, err) from err
        with self._lock:
            self._count += 1
        return value

    @property
    def count(self) -> int:
        if self.cache is not None:
            return self.cache.misses - self._misses_at_start
        return self._count


def _popcounts(masks: np.ndarray) -> np.ndarray:
    return np.bitwise_count(masks.astype(np.uint64)).astype(np.int64)


def shapley_exact(vf: ValueFunction, n_players: int | None = None, *,
                  cache: EvalCache | None = None,
                  cap: int = DEFAULT_EXACT_CAP) -> ShapleyEstimate:
    """Exact attribution by full subset enumeration (2^n evaluations)."""
    n = vf.n_players if n_players is None else n_players
    if n > cap:
        raise ExactModeRefused(n, cap)
    if n > 62:
        raise ExactModeRefused(n, 62)
    if cache is None:
        cache = EvalCache()
    query = _Query(vf, cache)

    total = 1 << n
    values = np.empty(total, dtype=float)
    for bits in range(total):
        values[bits] = query(bits)

    masks = np.arange(total, dtype=np.int64)
    sizes = _popcounts(masks)
    weights = np.array([1.0 / (n * math.comb(n - 1, s)) for s in range(n)])

    phi = np.empty(n, dtype=float)
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        gains = values[without | (1 << i)] - values[without]
        phi[i] = float(np.sum(weights[sizes[without]] * gains))

    return ShapleyEstimate(
        phi=phi,
        samples_per_player=np.full(n, 1 << max(n - 1, 0), dtype=np.int64),
        evals_spent=query.count,
        truncated_fraction=0.0,
    )


def _scan(query, order: np.ndarray, n: int, threshold: float | None,
          direction: str, policy: str) -> tuple[np.ndarray, np.ndarray, int]:
    """Collect one permutation's marginal samples.

    Returns (marginals, sampled mask, truncated slot count).  Zero-filled
    slots stay marked as sampled (their sample is an explicit 0); skipped
    slots are unmarked.
    """
    marginals = np.zeros(n, dtype=float)
    sampled = np.ones(n, dtype=bool)
    full_bits = (1 << n) - 1

    if threshold is None:
        prev = query(0)
        bits = 0
        for o in order:
            bits |= 1 << int(o)
            cur = query(bits)
            marginals[int(o)] = cur - prev
            prev = cur
        return marginals, sampled, 0

    if direction == SCAN_FROM_FULL:
        v_full = query(full_bits)
        prev = v_full
        bits = full_bits
        for t in range(n - 1, -1, -1):
            o = int(order[t])
            bits &= ~(1 << o)
            cur = query(bits)
            marginals[o] = prev - cur
            prev = cur
            if v_full - cur > threshold:
                rest = [int(p) for p in order[:t]]
                if policy == POLICY_SKIP:
                    sampled[rest] = False
                return marginals, sampled, len(rest)
        return marginals, sampled, 0

    # from_empty: forward walk, stop once the prefix is within threshold of
    # the full value (the remaining marginals are considered negligible).
    v_full = query(full_bits)
    prev = query(0)
    bits = 0
    for t in range(n):
        if v_full - prev <= threshold:
            rest = [int(p) for p in order[t:]]
            if policy == POLICY_SKIP:
                sampled[rest] = False
            return marginals, sampled, len(rest)
        o = int(order[t])
        bits |= 1 << o
        cur = query(bits)
        marginals[o] = cur - prev
        prev = cur
    return marginals, sampled, 0


def truncated_scan(
    vf: ValueFunction,
    permutation,
    threshold: float,
    *,
    policy: str = POLICY_ZERO_FILL,
    direction: str = SCAN_FROM_FULL,
    cache: EvalCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Marginal samples from one permutation under early truncation.

    Returns (marginals, sampled mask).
    """
    if threshold is None:
        raise ValueError("truncated_scan requires an enabled threshold")
    order = np.asarray(permutation, dtype=int)
    n = vf.n_players
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError("permutation must cover every player exactly once")
    query = _Query(vf, cache)
    marginals, sampled, _ = _scan(query, order, n, threshold, direction, policy)
    return marginals, sampled


def permutation_for(seed: int, index: int, n: int) -> np.ndarray:
    """The index-th permutation of the deterministic stream for a seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    return rng.permutation(n)


def shapley_mc(
    vf: ValueFunction,
    cfg: McConfig,
    *,
    cache: EvalCache | None = None,
    workers: int = 1,
) -> ShapleyEstimate:
    """Monte-Carlo permutation estimate of the exact attribution.

    With truncation disabled this is an unbiased estimator; each permutation
    touches n+1 coalition values (both endpoints included), so without a
    cache ``evals_spent`` is exactly M * (n + 1).
    """
    n = vf.n_players
    query = _Query(vf, cache)
    m = cfg.permutations

    def run(index: int):
        order = permutation_for(cfg.seed, index, n)
        return _scan(query, order, n, cfg.truncation_threshold,
                     cfg.scan_direction, cfg.truncation_policy)

    results: list[tuple[np.ndarray, np.ndarray, int]] = [None] * m  # type: ignore[list-item]
    if workers > 1 and vf.concurrent_safe:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for index, res in enumerate(pool.map(run, range(m))):
                results[index] = res
    else:
        # Non-concurrent backends get one serialized request stream.
        for index in range(m):
            results[index] = run(index)

    sums = np.zeros(n, dtype=float)
    counts = np.zeros(n, dtype=np.int64)
    truncated_slots = 0
    for marginals, sampled, truncated in results:
        sums += np.where(sampled, marginals, 0.0)
        counts += sampled
        truncated_slots += truncated

    unsampled = counts == 0
    phi = np.divide(sums, counts, out=np.zeros(n, dtype=float), where=~unsampled)
    return ShapleyEstimate(
        phi=phi,
        samples_per_player=counts,
        evals_spent=query.count,
        truncated_fraction=truncated_slots / (m * n) if n else 0.0,
        unsampled=unsampled,
    )
