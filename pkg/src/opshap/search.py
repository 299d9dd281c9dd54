"""The outer search loop: train, attribute, smooth, step, discretize.

Each epoch trains the evaluator one unit; after warm-up the loop estimates
per-operation contributions, folds them into a momentum accumulator

    s_t = mu * s_(t-1) + (1 - mu) * phi_t / ||phi_t||

and nudges the architecture parameters along it

    alpha_t = alpha_(t-1) + eps * s_t / ||s_t||

The final genotype comes from alpha (full mode) or from a one-shot estimate
after the last epoch (discretize_only / frozen_alpha modes).
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .game import EvalCache, ValueFunction
from .shapley import McConfig, ShapleyEstimate, shapley_mc
from .space import Genotype, SearchSpace, derive_genotype

MODE_FULL = "full"
MODE_DISCRETIZE_ONLY = "discretize_only"
MODE_FROZEN_ALPHA = "frozen_alpha"

NORM_GLOBAL = "global"
NORM_PER_EDGE = "per_edge"


class DegenerateEstimateWarning(UserWarning):
    """Raised when an all-zero estimate leaves an update direction undefined."""


class SearchError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


@dataclass
class SearchConfig:
    epochs: int = 50
    warmup_epochs: int = 15
    permutations: int = 10
    truncation_threshold: float | None = 0.5
    step_size: float = 0.1
    momentum: float = 0.8
    norm_scope: str = NORM_GLOBAL
    mode: str = MODE_FULL
    seed: int = 0
    scan_direction: str = "from_full"
    truncation_policy: str = "zero_fill"
    update_every: int = 1  # epochs between alpha updates after warm-up

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warm-up must satisfy 0 <= warmup_epochs < epochs")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        if self.norm_scope not in (NORM_GLOBAL, NORM_PER_EDGE):
            raise ValueError(f"unknown norm scope {self.norm_scope!r}")
        if self.mode not in (MODE_FULL, MODE_DISCRETIZE_ONLY, MODE_FROZEN_ALPHA):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        # Delegate estimator field validation.
        self._mc_template()

    def _mc_template(self, seed: int = 0) -> McConfig:
        return McConfig(
            permutations=self.permutations,
            truncation_threshold=self.truncation_threshold,
            scan_direction=self.scan_direction,
            truncation_policy=self.truncation_policy,
            seed=seed,
        )

    def to_document(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_document(cls, doc: dict) -> "SearchConfig":
        return cls(**doc)


@dataclass
class EpochRecord:
    epoch: int
    alpha: np.ndarray
    phi: np.ndarray | None
    evals_spent: int


@dataclass
class SearchState:
    alpha: np.ndarray
    s: np.ndarray
    epoch: int = 0
    history: list[EpochRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def fresh(cls, n_players: int) -> "SearchState":
        # All-zero alpha keeps per-edge argmax comparisons unbiased at the
        # start; all-zero s makes the first effective update (1-mu)*phi_hat.
        return cls(alpha=np.zeros(n_players), s=np.zeros(n_players))


def _normalized(vec: np.ndarray, norm_scope: str, edge_slices) -> np.ndarray | None:
    """Unit-normalize globally or per edge block; None when nothing to scale."""
    if norm_scope == NORM_GLOBAL:
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            return None
        return vec / norm
    if edge_slices is None:
        raise ValueError("per-edge normalization needs edge slices")
    out = np.zeros_like(vec)
    any_nonzero = False
    for sl in edge_slices:
        norm = float(np.linalg.norm(vec[sl]))
        if norm > 0.0:
            out[sl] = vec[sl] / norm
            any_nonzero = True
    return out if any_nonzero else None


def momentum_update(
    s_prev,
    phi,
    momentum: float,
    *,
    norm_scope: str = NORM_GLOBAL,
    edge_slices=None,
) -> np.ndarray:
    """Fold a normalized estimate into the accumulator; a zero estimate keeps
    the decayed accumulator and records a degenerate-estimate warning."""
    s_prev = np.asarray(s_prev, dtype=float)
    phi = np.asarray(phi, dtype=float)
    unit = _normalized(phi, norm_scope, edge_slices)
    if unit is None:
        warnings.warn(
            "all-zero contribution estimate; momentum accumulator only decayed",
            DegenerateEstimateWarning,
            stacklevel=2,
        )
        return momentum * s_prev
    return momentum * s_prev + (1.0 - momentum) * unit


def alpha_update(
    alpha_prev,
    s,
    step_size: float,
    *,
    norm_scope: str = NORM_GLOBAL,
    edge_slices=None,
) -> np.ndarray:
    """Step alpha along the normalized accumulator; zero s leaves it unchanged."""
    alpha_prev = np.asarray(alpha_prev, dtype=float)
    s = np.asarray(s, dtype=float)
    unit = _normalized(s, norm_scope, edge_slices)
    if unit is None:
        warnings.warn(
            "zero accumulator; architecture parameters left unchanged",
            DegenerateEstimateWarning,
            stacklevel=2,
        )
        return alpha_prev.copy()
    return alpha_prev + step_size * unit


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(
        np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)).generate_state(
            1, np.uint64
        )[0]
    )


def run_search(
    space: SearchSpace,
    vf: ValueFunction,
    cfg: SearchConfig,
    *,
    state: SearchState | None = None,
    workers: int = 1,
    checkpoint_path: str | Path | None = None,
) -> tuple[Genotype, SearchState]:
    """Run (or resume) the search and derive the final genotype.

    Deterministic for fixed (seed, cfg, evaluator) at any worker count.  On
    evaluator failure the state is checkpointed (when a path is given) and a
    SearchError carrying the epoch is raised.
    """
    if vf.n_players != space.n_players:
        raise ValueError(
            f"evaluator has {vf.n_players} players, space {space.name!r} has "
            f"{space.n_players}"
        )
    if state is None:
        state = SearchState.fresh(space.n_players)
    edge_slices = space.edge_slices() if cfg.norm_scope == NORM_PER_EDGE else None

    def fail(epoch: int, err: Exception) -> SearchError:
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, state, cfg, space)
        return SearchError(str(err), epoch)

    def estimate(epoch: int) -> ShapleyEstimate:
        mc = cfg._mc_template(seed=_epoch_seed(cfg.seed, epoch))
        return shapley_mc(vf, mc, cache=EvalCache(), workers=workers)

    for epoch in range(state.epoch, cfg.epochs):
        try:
            vf.train(1)
        except Exception as err:
            raise fail(epoch, err) from err

        phi_snapshot = None
        evals = 0
        due = (
            cfg.mode == MODE_FULL
            and epoch >= cfg.warmup_epochs
            and (epoch - cfg.warmup_epochs) % cfg.update_every == 0
        )
        if due:
            try:
                est = estimate(epoch)
            except Exception as err:
                raise fail(epoch, err) from err
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", DegenerateEstimateWarning)
                state.s = momentum_update(
                    state.s, est.phi, cfg.momentum,
                    norm_scope=cfg.norm_scope, edge_slices=edge_slices,
                )
                state.alpha = alpha_update(
                    state.alpha, state.s, cfg.step_size,
                    norm_scope=cfg.norm_scope, edge_slices=edge_slices,
                )
            for w in caught:
                state.warnings.append(f"epoch {epoch}: {w.message}")
            phi_snapshot = est.phi.copy()
            evals = est.evals_spent

        state.history.append(
            EpochRecord(epoch, state.alpha.copy(), phi_snapshot, evals)
        )
        state.epoch = epoch + 1

    if cfg.mode == MODE_FULL:
        genotype = derive_genotype(space, state.alpha)
    else:
        # Ablation modes select by contribution instead of alpha.
        try:
            est = estimate(cfg.epochs)
        except Exception as err:
            raise fail(cfg.epochs, err) from err
        genotype = derive_genotype(space, est.phi)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, state, cfg, space)
    return genotype, state


def space_hash(space: SearchSpace) -> str:
    doc = json.dumps(space.to_document(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def save_checkpoint(
    path: str | Path, state: SearchState, cfg: SearchConfig, space: SearchSpace
) -> None:
    doc = {
        "config": cfg.to_document(),
        "space_hash": space_hash(space),
        "state": {
            "alpha": state.alpha.tolist(),
            "s": state.s.tolist(),
            "epoch": state.epoch,
            "warnings": state.warnings,
            "history": [
                {
                    "epoch": rec.epoch,
                    "alpha": rec.alpha.tolist(),
                    "phi": None if rec.phi is None else rec.phi.tolist(),
                    "evals_spent": rec.evals_spent,
                }
                for rec in state.history
            ],
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[SearchState, SearchConfig, str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    raw = doc["state"]
    state = SearchState(
        alpha=np.array(raw["alpha"], dtype=float),
        s=np.array(raw["s"], dtype=float),
        epoch=raw["epoch"],
        history=[
            EpochRecord(
                epoch=rec["epoch"],
                alpha=np.array(rec["alpha"], dtype=float),
                phi=None if rec["phi"] is None else np.array(rec["phi"], dtype=float),
                evals_spent=rec["evals_spent"],
            )
            for rec in raw["history"]
        ],
        warnings=list(raw.get("warnings", [])),
    )
    return state, SearchConfig.from_document(doc["config"]), doc["space_hash"]


def export_history(state: SearchState, space: SearchSpace, path: str | Path) -> None:
    """Delimited trajectory table: one row per (epoch, player)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "player", "edge", "op", "alpha", "phi"])
        for rec in state.history:
            for p in range(space.n_players):
                oid = space.unflatten(p)
                writer.writerow(
                    [
                        rec.epoch,
                        p,
                        oid.edge_index,
                        space.ops_per_edge[oid.edge_index][oid.op_index],
                        repr(float(rec.alpha[p])),
                        "" if rec.phi is None else repr(float(rec.phi[p])),
                    ]
                )
