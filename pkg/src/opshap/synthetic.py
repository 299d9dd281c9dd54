"""Closed-form cooperative games that stand in for a trained supernet.

An InteractionGame scores a coalition as

    clamp(floor + sum of unary weights + sum of pairwise synergies
          - penalty per edge with no active coverage op, 0, 1)  [+ noise]

Unary weights give every operation an individual contribution, pairwise terms
plant cross-edge interactions (joint removal effects differ from the sum of
single removals), and the coverage penalty models the cliff a supernet falls
off when an edge loses all its operations.  ``train`` can anneal the unary
weights toward a target so operation strengths emerge over epochs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .game import Coalition, ValueFunction
from .space import SearchSpace


class GameValidationError(ValueError):
    pass


class InteractionGame(ValueFunction):
    concurrent_safe = True

    def __init__(
        self,
        unary,
        *,
        floor: float = 0.0,
        pairwise: list[tuple[int, int, float]] | None = None,
        edge_groups: list[list[int]] | None = None,
        coverage_penalty: float = 0.0,
        noise_sigma: float = 0.0,
        noise_seed: int = 0,
        anneal_target=None,
        anneal_steps: int = 0,
        planted_players: tuple[int, ...] | None = None,
        null_players: tuple[int, ...] = (),
        clone_players: tuple[int, int] | None = None,
    ):
        super().__init__()
        self._start = np.asarray(unary, dtype=float).copy()
        self._unary = [float(w) for w in self._start]
        self.floor = float(floor)
        self.pairwise = tuple(
            (min(i, j), max(i, j), float(w)) for i, j, w in (pairwise or [])
        )
        for i, j, _ in self.pairwise:
            if i == j:
                raise GameValidationError(f"pairwise term on a single player {i}")
            if not (0 <= i < self.n_players and 0 <= j < self.n_players):
                raise GameValidationError(f"pairwise pair ({i},{j}) out of range")
        self._pair_masks = [(1 << i, 1 << j, w) for i, j, w in self.pairwise]
        self.edge_groups = tuple(tuple(g) for g in (edge_groups or []))
        self._group_masks = [
            sum(1 << p for p in group) for group in self.edge_groups if group
        ]
        self.coverage_penalty = float(coverage_penalty)
        self.noise_sigma = float(noise_sigma)
        self.noise_seed = int(noise_seed)
        self.anneal_target = (
            None if anneal_target is None else np.asarray(anneal_target, dtype=float).copy()
        )
        self.anneal_steps = int(anneal_steps)
        self.steps_trained = 0
        self.planted_players = planted_players
        self.null_players = tuple(null_players)
        self.clone_players = clone_players

    @property
    def n_players(self) -> int:
        return len(self._start)

    @property
    def unary(self) -> np.ndarray:
        return np.array(self._unary)

    def evaluate(self, coalition: Coalition) -> float:
        if coalition.n != self.n_players:
            raise GameValidationError(
                f"coalition over {coalition.n} players, game has {self.n_players}"
            )
        return self.evaluate_bits(coalition.bits)

    def evaluate_bits(self, bits: int) -> float:
        acc = self.floor
        m = bits
        unary = self._unary
        while m:
            low = m & -m
            acc += unary[low.bit_length() - 1]
            m ^= low
        for bi, bj, w in self._pair_masks:
            if bits & bi and bits & bj:
                acc += w
        if self.coverage_penalty:
            for gm in self._group_masks:
                if not bits & gm:
                    acc -= self.coverage_penalty
        value = min(1.0, max(0.0, acc))
        if self.noise_sigma > 0.0:
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    entropy=[self.noise_seed, self.generation, bits]
                )
            )
            value = min(1.0, max(0.0, value + rng.normal(0.0, self.noise_sigma)))
        return value

    def _do_train(self, steps: int) -> None:
        self.steps_trained += steps
        if self.anneal_target is not None and self.anneal_steps > 0:
            if self.steps_trained >= self.anneal_steps:
                current = self.anneal_target
            else:
                frac = self.steps_trained / self.anneal_steps
                current = self._start + frac * (self.anneal_target - self._start)
            self._unary = [float(w) for w in current]

    def scaled(self, factor: float) -> "InteractionGame":
        """Positively scaled copy (floor, weights, and penalty multiplied)."""
        if factor <= 0:
            raise GameValidationError("scale factor must be positive")
        return InteractionGame(
            self._start * factor,
            floor=self.floor * factor,
            pairwise=[(i, j, w * factor) for i, j, w in self.pairwise],
            edge_groups=[list(g) for g in self.edge_groups],
            coverage_penalty=self.coverage_penalty * factor,
            noise_sigma=self.noise_sigma * factor,
            noise_seed=self.noise_seed,
            anneal_target=(
                None if self.anneal_target is None else self.anneal_target * factor
            ),
            anneal_steps=self.anneal_steps,
            planted_players=self.planted_players,
            null_players=self.null_players,
            clone_players=self.clone_players,
        )

    def unclamped_bounds(self) -> tuple[float, float]:
        """Reachable (min, max) of the deterministic part before clamping."""
        lo = self.floor + sum(w for _, _, w in self.pairwise if w < 0)
        lo -= self.coverage_penalty * len(self._group_masks)
        lo += float(np.sum(np.minimum(self.unary, 0.0)))
        hi = self.floor + float(np.sum(np.maximum(self.unary, 0.0)))
        hi += sum(w for _, _, w in self.pairwise if w > 0)
        if self.anneal_target is not None:
            hi = max(hi, self.floor + float(np.sum(np.maximum(self.anneal_target, 0.0)))
                     + sum(w for _, _, w in self.pairwise if w > 0))
        return lo, hi


@dataclass
class GameSpec:
    """Generator parameters for a reproducible InteractionGame.

    Dimensions come from ``edges`` x ``ops_per_edge`` (or an attached
    SearchSpace); the seed makes the drawn weights shareable as a document.
    """

    edges: int
    ops_per_edge: int
    seed: int = 0
    floor: float = 0.1
    unary_range: tuple[float, float] = (0.005, 0.02)
    planted: bool = False
    planted_range: tuple[float, float] = (0.032, 0.04)
    pairwise_count: int = 0
    pairwise_range: tuple[float, float] = (-0.003, 0.003)
    max_pairs_per_player: int = 2
    null_count: int = 0
    clone_pair: bool = False
    coverage_penalty: float = 0.0
    noise_sigma: float = 0.0
    anneal_steps: int = 0

    def to_document(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["unary_range"] = list(self.unary_range)
        doc["planted_range"] = list(self.planted_range)
        doc["pairwise_range"] = list(self.pairwise_range)
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> "GameSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise GameValidationError(f"unknown game spec keys: {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("unary_range", "planted_range", "pairwise_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def make_game(
    spec: GameSpec,
    seed: int | None = None,
    space: SearchSpace | None = None,
) -> InteractionGame:
    """Draw a reproducible game from a spec, optionally bound to a space.

    With a space attached, the game's players are the space's players and the
    coverage groups are each edge's non-null operations; the spec dimensions
    must then match the space (uniform op counts only).
    """
    if space is not None:
        ops_counts = {len(ops) for ops in space.ops_per_edge}
        if spec.edges != len(space.edges) or ops_counts != {spec.ops_per_edge}:
            raise GameValidationError(
                f"game spec dims {spec.edges}x{spec.ops_per_edge} do not match "
                f"space {space.name!r} with {len(space.edges)} edges and "
                f"op counts {sorted(ops_counts)}"
            )
    if spec.edges < 1 or spec.ops_per_edge < 1:
        raise GameValidationError("game spec needs at least one edge and one op")
    n = spec.edges * spec.ops_per_edge
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed if seed is None else seed))

    unary = rng.uniform(*spec.unary_range, size=n)
    edge_players = [
        list(range(e * spec.ops_per_edge, (e + 1) * spec.ops_per_edge))
        for e in range(spec.edges)
    ]

    null_eligible: list[int]
    if space is not None:
        # Coverage counts only non-null ops; planted winners avoid null ops so
        # an optimum genotype never rides on a no-op.
        non_null = [
            [p for p in space.edge_players(e)
             if space.op_name(p) not in space.null_ops]
            for e in range(len(space.edges))
        ]
    else:
        non_null = edge_players

    planted: list[int] | None = None
    if spec.planted:
        planted = []
        for e in range(spec.edges):
            pool = non_null[e] if non_null[e] else edge_players[e]
            winner = int(pool[rng.integers(len(pool))])
            unary[winner] = rng.uniform(*spec.planted_range)
            planted.append(winner)

    protected = set(planted or [])
    null_players: list[int] = []
    if spec.null_count:
        pool = [p for p in range(n) if p not in protected]
        if spec.null_count > len(pool):
            raise GameValidationError("more null players requested than available")
        chosen = rng.choice(len(pool), size=spec.null_count, replace=False)
        null_players = sorted(int(pool[i]) for i in np.atleast_1d(chosen))
        for p in null_players:
            unary[p] = 0.0

    clone: tuple[int, int] | None = None
    if spec.clone_pair:
        pool = [p for p in range(n) if p not in protected and p not in null_players]
        if len(pool) < 2:
            raise GameValidationError("not enough free players for a clone pair")
        i, j = (int(x) for x in rng.choice(len(pool), size=2, replace=False))
        a, b = sorted((pool[i], pool[j]))
        unary[b] = unary[a]
        clone = (a, b)

    pairs: list[tuple[int, int, float]] = []
    if spec.pairwise_count:
        degree = [0] * n
        banned = set(null_players)
        seen: set[tuple[int, int]] = set()
        attempts = 0
        while len(pairs) < spec.pairwise_count and attempts < spec.pairwise_count * 200:
            attempts += 1
            i, j = (int(x) for x in rng.integers(0, n, size=2))
            if i == j:
                continue
            i, j = min(i, j), max(i, j)
            if (i, j) in seen or i in banned or j in banned:
                continue
            # The second clone never draws its own pairs; it inherits mirrored
            # copies of the first clone's pairs below.
            if clone and clone[1] in (i, j):
                continue
            if degree[i] >= spec.max_pairs_per_player or degree[j] >= spec.max_pairs_per_player:
                continue
            w = float(rng.uniform(*spec.pairwise_range))
            pairs.append((i, j, w))
            seen.add((i, j))
            degree[i] += 1
            degree[j] += 1

    if clone:
        # Mirror the first clone's interactions onto the second so the two are
        # interchangeable by construction.
        a, b = clone
        extra = []
        for i, j, w in pairs:
            if i == a:
                extra.append((min(b, j), max(b, j), w))
            elif j == a:
                extra.append((min(b, i), max(b, i), w))
        pairs.extend(extra)

    groups = [[p for p in g if p not in null_players] for g in non_null]

    anneal_target = None
    if spec.anneal_steps > 0:
        anneal_target = unary.copy()
        unary = np.full(n, float(np.mean(unary)))
        for p in null_players:
            unary[p] = 0.0

    return InteractionGame(
        unary,
        floor=spec.floor,
        pairwise=pairs,
        edge_groups=groups if spec.coverage_penalty else None,
        coverage_penalty=spec.coverage_penalty,
        noise_sigma=spec.noise_sigma,
        noise_seed=(spec.seed if seed is None else seed) ^ 0x5EED,
        anneal_target=anneal_target,
        anneal_steps=spec.anneal_steps,
        planted_players=tuple(planted) if planted is not None else None,
        null_players=tuple(null_players),
        clone_players=clone,
    )


GAME_PRESETS: dict[str, GameSpec] = {
    # Planted per-edge winners on a 6x5 grid with mild cross-edge synergies
    # and evaluation noise; the search should recover the winners.
    "planted-nas201": GameSpec(
        edges=6,
        ops_per_edge=5,
        seed=311,
        floor=0.1,
        unary_range=(0.005, 0.018),
        planted=True,
        planted_range=(0.032, 0.04),
        pairwise_count=6,
        pairwise_range=(-0.003, 0.003),
        noise_sigma=0.01,
    ),
    # Same shape, but operation strengths emerge over 40 training steps.
    "planted-nas201-anneal": GameSpec(
        edges=6,
        ops_per_edge=5,
        seed=311,
        floor=0.1,
        unary_range=(0.005, 0.018),
        planted=True,
        planted_range=(0.032, 0.04),
        pairwise_count=6,
        pairwise_range=(-0.003, 0.003),
        noise_sigma=0.01,
        anneal_steps=40,
    ),
    # Additive, noise-free variant for correlation studies.
    "additive-nas201": GameSpec(
        edges=6,
        ops_per_edge=5,
        seed=311,
        floor=0.1,
        unary_range=(0.005, 0.018),
        planted=True,
        planted_range=(0.032, 0.04),
    ),
    # Ten single-op edges with a coverage cliff: the drop from the full
    # coalition passes 0.5 after five removals, cutting roughly half the
    # permutation-scan evaluations at the default threshold.
    "steep-10": GameSpec(
        edges=10,
        ops_per_edge=1,
        seed=7,
        floor=0.95,
        unary_range=(0.0, 0.0),
        coverage_penalty=0.12,
    ),
    # Same shape, but any two removals already drop the value by 0.6.
    "cliff-10": GameSpec(
        edges=10,
        ops_per_edge=1,
        seed=7,
        floor=0.95,
        unary_range=(0.0, 0.0),
        coverage_penalty=0.3,
    ),
    # Dense pairwise structure on 8 players for estimator convergence tests.
    "interaction-8": GameSpec(
        edges=4,
        ops_per_edge=2,
        seed=17,
        floor=0.25,
        unary_range=(0.01, 0.04),
        pairwise_count=10,
        pairwise_range=(-0.02, 0.03),
        max_pairs_per_player=4,
    ),
}


def preset_game_spec(name: str) -> GameSpec:
    try:
        return replace(GAME_PRESETS[name])
    except KeyError:
        raise GameValidationError(
            f"unknown game preset {name!r}; available: {sorted(GAME_PRESETS)}"
        ) from None


def load_game_spec(source: str | Path | dict) -> GameSpec:
    """Accepts a preset name, a JSON file path, or a parsed document."""
    if isinstance(source, dict):
        return GameSpec.from_document(source)
    if isinstance(source, Path) or (isinstance(source, str) and Path(source).exists()):
        return GameSpec.from_document(json.loads(Path(source).read_text(encoding="utf-8")))
    if isinstance(source, str) and source in GAME_PRESETS:
        return preset_game_spec(source)
    raise GameValidationError(f"cannot resolve game spec from {source!r}")
