"""Command line surface: search runs, estimator diagnostics, sweeps, reports.

Exit codes: 0 success, 2 usage, 3 evaluator failure, 4 validation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    ablation_sweep,
    correlation_analysis,
    pairwise_removal_study,
    planted_genotype,
)
from .game import EvalCache, EvaluationError
from .protocol import ProtocolError, spawn_evaluator
from .search import (
    SearchConfig,
    SearchError,
    load_checkpoint,
    export_history,
    run_search,
)
from .shapley import McConfig, shapley_exact, shapley_mc
from .space import SPACE_PRESETS, SpaceError, load_space_file, preset_space
from .synthetic import GameValidationError, load_game_spec, make_game

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_EVALUATOR = 3
EXIT_VALIDATION = 4


class UsageError(ValueError):
    pass


def _resolve_space(name: str):
    if Path(name).exists():
        return load_space_file(name)
    if name in SPACE_PRESETS:
        return preset_space(name)
    raise UsageError(
        f"--space {name!r} is neither a file nor a preset {sorted(SPACE_PRESETS)}"
    )


def _resolve_value_function(args, space):
    """Either a synthetic game or an external evaluator, never both."""
    if args.evaluator and args.game:
        raise UsageError("--game and --evaluator are mutually exclusive")
    if args.evaluator:
        return spawn_evaluator(args.evaluator, space), True
    if args.game:
        spec = load_game_spec(args.game)
        return make_game(spec, space=space), False
    raise UsageError("one of --game or --evaluator is required")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _add_common(parser: argparse.ArgumentParser, *, game: bool = True) -> None:
    parser.add_argument("--space", default="nasbench201-cell",
                        help="space preset name or document file")
    if game:
        parser.add_argument("--game", help="synthetic game preset name or spec file")
        parser.add_argument("--evaluator", help="external evaluator command line")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel workers (estimator or sweep cells)")


def _estimate_document(est) -> dict:
    return {
        "phi": est.phi.tolist(),
        "samples_per_player": est.samples_per_player.tolist(),
        "evals_spent": est.evals_spent,
        "truncated_fraction": est.truncated_fraction,
        "unsampled_players": np.flatnonzero(est.unsampled).tolist(),
    }


def cmd_search(args) -> int:
    space = _resolve_space(args.space)
    cfg = SearchConfig(
        epochs=args.epochs,
        warmup_epochs=args.warmup,
        permutations=args.samples,
        truncation_threshold=None if args.eta is not None and args.eta <= 0 else (
            args.eta if args.eta is not None else 0.5
        ),
        step_size=args.eps,
        momentum=args.mu,
        norm_scope=args.norm_scope,
        mode=args.mode,
        seed=args.seed,
    )
    vf, external = _resolve_value_function(args, space)
    out = _out_dir(args)
    try:
        genotype, state = run_search(
            space, vf, cfg,
            workers=args.jobs,
            checkpoint_path=out / "checkpoint.json",
        )
    finally:
        if external:
            vf.close()
    _write_json(out / "genotype.json", genotype.to_document())
    (out / "genotype.txt").write_text(genotype.canonical() + "\n", encoding="utf-8")
    export_history(state, space, out / "history.csv")
    _write_json(out / "summary.json", {
        "space": space.name,
        "players": space.n_players,
        "config": cfg.to_document(),
        "epochs_run": state.epoch,
        "total_evals": sum(rec.evals_spent for rec in state.history),
        "genotype": genotype.canonical(),
        "warnings": state.warnings,
    })
    print(f"genotype: {genotype.canonical()}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_shapley(args) -> int:
    space = _resolve_space(args.space)
    vf, external = _resolve_value_function(args, space)
    out = _out_dir(args)
    try:
        if args.train_steps:
            vf.train(args.train_steps)
        if args.estimator == "exact":
            est = shapley_exact(vf, cache=EvalCache(), cap=args.exact_cap)
        else:
            cfg = McConfig(
                permutations=args.samples,
                truncation_threshold=None if args.eta is not None and args.eta <= 0 else (
                    args.eta if args.eta is not None else 0.5
                ),
                seed=args.seed,
            )
            est = shapley_mc(vf, cfg, cache=EvalCache(), workers=args.jobs)
    finally:
        if external:
            vf.close()
    doc = _estimate_document(est)
    doc["estimator"] = args.estimator
    _write_json(out / "estimate.json", doc)
    ranked = np.argsort(-est.phi)
    print("player  edge  op                    phi")
    for p in ranked[: min(len(ranked), args.top)]:
        oid = space.unflatten(int(p))
        name = space.ops_per_edge[oid.edge_index][oid.op_index]
        print(f"{p:>6}  {oid.edge_index:>4}  {name:<20}  {est.phi[p]:+.6f}")
    print(f"evals spent: {est.evals_spent}; written to {out / 'estimate.json'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    space = _resolve_space(args.space)
    if not args.game:
        raise UsageError("sweep runs on the synthetic evaluator; --game is required")
    spec = load_game_spec(args.game)
    if not spec.planted:
        raise GameValidationError("sweep needs a planted game to score recovery")

    def floats(text):
        return [None if t in ("none", "off") else float(t) for t in text.split(",")]

    cells = ablation_sweep(
        space,
        spec,
        grid_m=[int(t) for t in args.grid_m.split(",")],
        grid_eta=floats(args.grid_eta),
        grid_mu=[float(t) for t in args.grid_mu.split(",")],
        grid_eps=[float(t) for t in args.grid_eps.split(",")],
        seeds=[args.seed + k for k in range(args.runs)],
        base_cfg=SearchConfig(epochs=args.epochs, warmup_epochs=args.warmup),
        jobs=args.jobs,
    )
    out = _out_dir(args)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "samples", "eta", "mu", "eps", "runs", "recovered",
            "recovery_rate", "mean_edge_match", "mean_evals", "errors",
        ])
        for cell in cells:
            writer.writerow([
                cell.permutations,
                "" if cell.truncation_threshold is None else cell.truncation_threshold,
                cell.momentum,
                cell.step_size,
                cell.runs,
                cell.recovered,
                f"{cell.recovery_rate:.3f}",
                f"{cell.mean_edge_match:.3f}",
                f"{cell.mean_evals:.1f}",
                " | ".join(cell.errors),
            ])
    print(f"{len(cells)} sweep cells written to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    space = _resolve_space(args.space)
    vf, external = _resolve_value_function(args, space)
    try:
        if args.state:
            state, _, _ = load_checkpoint(args.state)
            alpha = state.alpha
        else:
            cfg = SearchConfig(epochs=args.epochs, warmup_epochs=args.warmup,
                               seed=args.seed)
            _, state = run_search(space, vf, cfg, workers=args.jobs)
            alpha = state.alpha
        if args.train_steps:
            vf.train(args.train_steps)
        report = correlation_analysis(space, vf, alpha,
                                      n_samples=args.samples, seed=args.seed)
    finally:
        if external:
            vf.close()
    out = _out_dir(args)
    _write_json(out / "correlation.json", {
        "kendall_tau": report.kendall_tau,
        "sample_count": report.sample_count,
    })
    with open(out / "correlation_samples.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["genotype", "strength", "true_value"])
        for row in report.samples:
            writer.writerow(row)
    print(f"kendall tau = {report.kendall_tau:.4f} over {report.sample_count} samples")
    return EXIT_OK


def cmd_pairwise(args) -> int:
    space = _resolve_space(args.space)
    vf, external = _resolve_value_function(args, space)
    try:
        report = pairwise_removal_study(space, vf, args.edge_a, args.edge_b)
    finally:
        if external:
            vf.close()
    out = _out_dir(args)
    with open(out / "pairwise.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"edge{report.edge_a}\\edge{report.edge_b}"] + report.ops_b)
        for i, op_a in enumerate(report.ops_a):
            writer.writerow([op_a] + [repr(x) for x in report.joint_drop[i]])
    with open(out / "pairwise_singles.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["edge", "op", "drop"])
        for op, d in zip(report.ops_a, report.single_drop_a):
            writer.writerow([report.edge_a, op, repr(float(d))])
        for op, d in zip(report.ops_b, report.single_drop_b):
            writer.writerow([report.edge_b, op, repr(float(d))])
    header = [""] + report.ops_b
    print("  ".join(f"{h:>14}" for h in header))
    for i, op_a in enumerate(report.ops_a):
        cells = [f"{report.joint_drop[i, j]:+.4f}" for j in range(len(report.ops_b))]
        print("  ".join([f"{op_a:>14}"] + [f"{c:>14}" for c in cells]))
    print(f"written to {out / 'pairwise.csv'}")
    return EXIT_OK


def cmd_export_history(args) -> int:
    state, _, _ = load_checkpoint(args.checkpoint)
    space = _resolve_space(args.space)
    if len(state.alpha) != space.n_players:
        raise GameValidationError(
            f"checkpoint has {len(state.alpha)} players, space {space.name!r} "
            f"has {space.n_players}"
        )
    out = _out_dir(args)
    export_history(state, space, out / "history.csv")
    print(f"history written to {out / 'history.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opshap",
        description="attribute supernet operation contributions and search architectures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the contribution-guided search")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--warmup", type=int, default=15)
    p.add_argument("--samples", type=int, default=10, help="permutations per estimate")
    p.add_argument("--eta", type=float, default=None,
                   help="truncation threshold in (0,1]; <=0 disables (default 0.5)")
    p.add_argument("--mu", type=float, default=0.8, help="momentum coefficient")
    p.add_argument("--eps", type=float, default=0.1, help="alpha step size")
    p.add_argument("--norm-scope", choices=["global", "per_edge"], default="global")
    p.add_argument("--mode", choices=["full", "discretize_only", "frozen_alpha"],
                   default="full")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("shapley", help="one-shot attribution estimate")
    p.add_argument("estimator", choices=["exact", "mc"])
    _add_common(p)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--exact-cap", type=int, default=24)
    p.add_argument("--train-steps", type=int, default=0,
                   help="train the evaluator before estimating")
    p.add_argument("--top", type=int, default=10, help="rows to print")
    p.set_defaults(func=cmd_shapley)

    p = sub.add_parser("sweep", help="hyperparameter ablation grid")
    _add_common(p)
    p.add_argument("--grid-m", default="1,10")
    p.add_argument("--grid-eta", default="0.5")
    p.add_argument("--grid-mu", default="0.8")
    p.add_argument("--grid-eps", default="0.1")
    p.add_argument("--runs", type=int, default=5, help="seeded runs per cell")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--warmup", type=int, default=15)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("correlate", help="strength vs true value rank correlation")
    _add_common(p)
    p.add_argument("--state", help="checkpoint file with trained alpha")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--warmup", type=int, default=15)
    p.add_argument("--train-steps", type=int, default=0)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("pairwise", help="joint-removal drop matrix for two edges")
    _add_common(p)
    p.add_argument("--edge-a", type=int, required=True)
    p.add_argument("--edge-b", type=int, required=True)
    p.set_defaults(func=cmd_pairwise)

    p = sub.add_parser("export-history", help="dump a checkpoint's trajectory table")
    _add_common(p, game=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export_history)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ProtocolError, SearchError, EvaluationError) as err:
        print(f"evaluator failure: {err}", file=sys.stderr)
        return EXIT_EVALUATOR
    except (SpaceError, GameValidationError, ValueError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
