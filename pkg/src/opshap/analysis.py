"""Diagnostics: rank correlation, architecture sampling, sweeps, removal studies."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .game import Coalition, ValueFunction
from .search import SearchConfig, run_search
from .space import Genotype, GenotypeEdge, SearchSpace
from .synthetic import GameSpec, make_game


def _tie_term(values) -> int:
    runs: dict = {}
    for v in values:
        runs[v] = runs.get(v, 0) + 1
    return sum(c * (c - 1) // 2 for c in runs.values())


def _merge_count(ys: list) -> int:
    """Count strict inversions (y_i > y_j for i < j) by merge sort."""
    if len(ys) < 2:
        return 0
    mid = len(ys) // 2
    left = ys[:mid]
    right = ys[mid:]
    inv = _merge_count(left) + _merge_count(right)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if right[j] < left[i]:
            inv += len(left) - i
            merged.append(right[j])
            j += 1
        else:
            merged.append(left[i])
            i += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    ys[:] = merged
    return inv


def kendall_tau(xs, ys) -> float:
    """Tie-corrected rank correlation (tau-b) over all pairs.

    Concordant/discordant counts come from an O(n log n) inversion count on
    the y sequence sorted by (x, y); ties are corrected with the usual
    per-variable pair counts.  All-tied input yields 0.
    """
    xs = list(xs)
    ys = list(ys)
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise ValueError("rank correlation needs at least two points")
    order = sorted(range(n), key=lambda k: (xs[k], ys[k]))
    x_sorted = [xs[k] for k in order]
    y_sorted = [ys[k] for k in order]

    n0 = n * (n - 1) // 2
    n1 = _tie_term(x_sorted)
    n2 = _tie_term(y_sorted)
    nxy = _tie_term(zip(x_sorted, y_sorted))
    # Stable (x, y) sort puts tied-x blocks in ascending y, so inversions are
    # exactly the discordant pairs among pairs untied in both variables.
    dis = _merge_count(list(y_sorted))
    con_minus_dis = n0 - n1 - n2 + nxy - 2 * dis

    denom = (n0 - n1) * (n0 - n2)
    if denom == 0:
        return 0.0
    return con_minus_dis / math.sqrt(denom)


@dataclass
class CorrelationReport:
    samples: list[tuple[str, float, float]]  # (genotype canonical, strength, value)
    kendall_tau: float
    sample_count: int


def _architecture_coalition(space: SearchSpace, choice: tuple[int, ...]) -> Coalition:
    bits = 0
    for e, op_index in enumerate(choice):
        bits |= 1 << space.flatten(e, op_index).player_index
    return Coalition(bits, space.n_players)


def _architecture_genotype(space: SearchSpace, choice: tuple[int, ...]) -> Genotype:
    chosen = tuple(
        GenotypeEdge(e, space.edges[e][0], space.edges[e][1],
                     space.ops_per_edge[e][op_index])
        for e, op_index in enumerate(choice)
    )
    return Genotype(chosen=chosen)


def sample_architectures(
    space: SearchSpace, n_samples: int, seed: int
) -> list[tuple[int, ...]]:
    """Uniform distinct architectures (one op per edge); the whole space when
    it has no more than n_samples members."""
    sizes = [len(ops) for ops in space.ops_per_edge]
    total = 1
    for s in sizes:
        total *= s
        if total > 10 * max(n_samples, 1):
            break
    if total <= n_samples:
        return list(itertools.product(*[range(s) for s in sizes]))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    picked: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(picked) < n_samples:
        choice = tuple(int(rng.integers(s)) for s in sizes)
        if choice not in seen:
            seen.add(choice)
            picked.append(choice)
    return picked


def correlation_analysis(
    space: SearchSpace,
    vf: ValueFunction,
    alpha,
    n_samples: int = 200,
    seed: int = 0,
) -> CorrelationReport:
    """Sample discrete architectures, score each by the mean alpha of its
    chosen ops, evaluate its coalition, and report the rank correlation."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (space.n_players,):
        raise ValueError(
            f"alpha has shape {alpha.shape}, expected ({space.n_players},)"
        )
    rows: list[tuple[str, float, float]] = []
    strengths: list[float] = []
    values: list[float] = []
    for choice in sample_architectures(space, n_samples, seed):
        players = [space.flatten(e, i).player_index for e, i in enumerate(choice)]
        strength = float(np.mean(alpha[players]))
        value = vf.evaluate(_architecture_coalition(space, choice))
        rows.append((_architecture_genotype(space, choice).canonical(), strength, value))
        strengths.append(strength)
        values.append(value)
    tau = kendall_tau(strengths, values)
    return CorrelationReport(samples=rows, kendall_tau=tau, sample_count=len(rows))


def planted_genotype(space: SearchSpace, game) -> Genotype:
    """The genotype a perfect search would derive from a planted game."""
    if game.planted_players is None:
        raise ValueError("game has no planted winners")
    one_hot = np.zeros(space.n_players)
    for p in game.planted_players:
        one_hot[p] = 1.0
    from .space import derive_genotype

    return derive_genotype(space, one_hot)


@dataclass
class SweepCell:
    permutations: int
    truncation_threshold: float | None
    momentum: float
    step_size: float
    runs: int
    recovered: int
    mean_edge_match: float
    mean_evals: float
    errors: list[str]

    @property
    def recovery_rate(self) -> float:
        return self.recovered / self.runs if self.runs else 0.0


def ablation_sweep(
    space: SearchSpace,
    game_spec: GameSpec,
    *,
    grid_m: list[int],
    grid_eta: list[float | None],
    grid_mu: list[float],
    grid_eps: list[float],
    seeds: list[int],
    base_cfg: SearchConfig | None = None,
    jobs: int = 1,
) -> list[SweepCell]:
    """Grid of search runs on the synthetic evaluator with fixed seeds.

    Every run in a cell rebuilds the same planted game (the game's own seed is
    fixed by its spec) and varies only the search seed; per-run failures are
    recorded in the cell without aborting the sweep.
    """
    if not (grid_m and grid_eta and grid_mu and grid_eps and seeds):
        raise ValueError("sweep grid and seed list must be non-empty")
    base = base_cfg or SearchConfig()
    reference_game = make_game(game_spec, space=space)
    target = planted_genotype(space, reference_game)
    target_ops = {e.edge_index: e.op for e in target.chosen}

    cells = list(itertools.product(grid_m, grid_eta, grid_mu, grid_eps))

    def run_cell(cell) -> SweepCell:
        m, eta, mu, eps = cell
        recovered = 0
        edge_match = 0.0
        evals_total = 0
        errors: list[str] = []
        done = 0
        for seed in seeds:
            cfg = replace(
                base,
                permutations=m,
                truncation_threshold=eta,
                momentum=mu,
                step_size=eps,
                seed=seed,
            )
            game = make_game(game_spec, space=space)
            try:
                genotype, state = run_search(space, game, cfg)
            except Exception as err:
                errors.append(f"seed {seed}: {err}")
                continue
            done += 1
            if genotype == target:
                recovered += 1
            got = {e.edge_index: e.op for e in genotype.chosen}
            matches = sum(1 for k, op in target_ops.items() if got.get(k) == op)
            edge_match += matches / len(target_ops)
            evals_total += sum(rec.evals_spent for rec in state.history)
        return SweepCell(
            permutations=m,
            truncation_threshold=eta,
            momentum=mu,
            step_size=eps,
            runs=done,
            recovered=recovered,
            mean_edge_match=edge_match / done if done else 0.0,
            mean_evals=evals_total / done if done else 0.0,
            errors=errors,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(cell) for cell in cells]


@dataclass
class PairwiseReport:
    edge_a: int
    edge_b: int
    ops_a: list[str]
    ops_b: list[str]
    full_value: float
    joint_drop: np.ndarray  # [i, j] = V(N) - V(N without op i on a, op j on b)
    single_drop_a: np.ndarray
    single_drop_b: np.ndarray


def pairwise_removal_study(
    space: SearchSpace, vf: ValueFunction, edge_a: int, edge_b: int
) -> PairwiseReport:
    """Joint-removal drop matrix for two edges plus single-removal vectors."""
    n_edges = len(space.edges)
    for e in (edge_a, edge_b):
        if not 0 <= e < n_edges:
            raise ValueError(f"edge {e} out of range for space with {n_edges} edges")
    n = space.n_players
    full = Coalition.full(n)
    v_full = vf.evaluate(full)

    def drop(players) -> float:
        coalition = full
        for p in players:
            coalition = coalition.remove(p)
        return v_full - vf.evaluate(coalition)

    ops_a = list(space.ops_per_edge[edge_a])
    ops_b = list(space.ops_per_edge[edge_b])
    single_a = np.array(
        [drop([space.flatten(edge_a, i).player_index]) for i in range(len(ops_a))]
    )
    single_b = np.array(
        [drop([space.flatten(edge_b, j).player_index]) for j in range(len(ops_b))]
    )
    joint = np.empty((len(ops_a), len(ops_b)))
    for i in range(len(ops_a)):
        pa = space.flatten(edge_a, i).player_index
        for j in range(len(ops_b)):
            pb = space.flatten(edge_b, j).player_index
            joint[i, j] = drop([pa, pb] if pa != pb else [pa])
    return PairwiseReport(
        edge_a=edge_a,
        edge_b=edge_b,
        ops_a=ops_a,
        ops_b=ops_b,
        full_value=v_full,
        joint_drop=joint,
        single_drop_a=single_a,
        single_drop_b=single_b,
    )
