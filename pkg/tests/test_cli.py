from __future__ import annotations

import json
import shlex

import pytest

from opshap.cli import main

from conftest import loopback_cmd


def run_cli(*args) -> int:
    return main(list(args))


class TestSearchCommand:
    def test_search_writes_outputs(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli(
            "search", "--game", "planted-nas201", "--seed", "3",
            "--epochs", "8", "--warmup", "2", "--out", str(out),
        )
        assert code == 0
        genotype = json.loads((out / "genotype.json").read_text())
        assert len(genotype["edges"]) == 6
        assert (out / "genotype.txt").read_text().strip()
        assert (out / "history.csv").exists()
        assert (out / "checkpoint.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["epochs_run"] == 8

    def test_seeded_reruns_are_bit_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli(
                "search", "--game", "planted-nas201", "--seed", "11",
                "--epochs", "6", "--warmup", "2", "--out", str(out),
                "--jobs", "4" if name == "b" else "1",
            ) == 0
            outs.append(out)
        a, b = outs
        assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
        assert (a / "genotype.txt").read_bytes() == (b / "genotype.txt").read_bytes()

    def test_modes_emit_genotypes(self, tmp_path):
        for mode in ("discretize_only", "frozen_alpha"):
            out = tmp_path / mode
            assert run_cli(
                "search", "--game", "planted-nas201", "--mode", mode,
                "--epochs", "6", "--warmup", "2", "--out", str(out),
            ) == 0
            assert (out / "genotype.txt").read_text().strip()

    def test_game_and_evaluator_conflict(self, tmp_path):
        code = run_cli(
            "search", "--game", "planted-nas201", "--evaluator", "whatever",
            "--out", str(tmp_path / "x"),
        )
        assert code == 2

    def test_missing_backend_is_usage_error(self, tmp_path):
        assert run_cli("search", "--out", str(tmp_path / "x")) == 2

    def test_search_against_loopback_evaluator(self, tmp_path):
        out = tmp_path / "loop"
        cmd = " ".join(shlex.quote(part) for part in loopback_cmd("planted-nas201"))
        code = run_cli(
            "search", "--evaluator", cmd, "--seed", "3",
            "--epochs", "5", "--warmup", "2", "--out", str(out),
        )
        assert code == 0
        assert (out / "genotype.txt").read_text().strip()

    def test_crashing_evaluator_exit_code(self, tmp_path):
        import sys

        from conftest import EVALUATORS

        cmd = f"{shlex.quote(sys.executable)} {EVALUATORS / 'misbehaving.py'} crasher"
        code = run_cli(
            "search", "--evaluator", cmd, "--epochs", "3", "--warmup", "1",
            "--out", str(tmp_path / "x"),
        )
        assert code == 3


class TestShapleyCommand:
    def test_exact_small_space(self, tmp_path):
        space_doc = {
            "name": "tiny",
            "nodes": 3,
            "edges": [
                {"from": 0, "to": 1, "ops": ["a", "b"]},
                {"from": 1, "to": 2, "ops": ["c", "d"]},
            ],
        }
        space_file = tmp_path / "space.json"
        space_file.write_text(json.dumps(space_doc))
        game_file = tmp_path / "game.json"
        from opshap.synthetic import GameSpec

        game_file.write_text(json.dumps(GameSpec(edges=2, ops_per_edge=2,
                                                 seed=5).to_document()))
        out = tmp_path / "est"
        code = run_cli(
            "shapley", "exact", "--space", str(space_file),
            "--game", str(game_file), "--out", str(out),
        )
        assert code == 0
        doc = json.loads((out / "estimate.json").read_text())
        assert len(doc["phi"]) == 4
        assert doc["evals_spent"] == 16

    def test_exact_refusal_is_validation_error(self, tmp_path):
        code = run_cli(
            "shapley", "exact", "--game", "planted-nas201",
            "--out", str(tmp_path / "e"),
        )
        assert code == 4  # 30 players over the default cap

    def test_mc_deterministic(self, tmp_path):
        docs = []
        for name in ("m1", "m2"):
            out = tmp_path / name
            assert run_cli(
                "shapley", "mc", "--game", "planted-nas201", "--seed", "9",
                "--samples", "5", "--out", str(out),
            ) == 0
            docs.append((out / "estimate.json").read_bytes())
        assert docs[0] == docs[1]


class TestOtherCommands:
    def test_sweep_grid(self, tmp_path):
        out = tmp_path / "sweep"
        code = run_cli(
            "sweep", "--game", "planted-nas201", "--grid-m", "1,10",
            "--grid-eta", "0.5,none", "--runs", "2", "--epochs", "6",
            "--warmup", "2", "--out", str(out), "--jobs", "2",
        )
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 1 + 4

    def test_sweep_requires_planted_game(self, tmp_path):
        game_file = tmp_path / "game.json"
        from opshap.synthetic import GameSpec

        game_file.write_text(json.dumps(GameSpec(edges=6, ops_per_edge=5).to_document()))
        assert run_cli("sweep", "--game", str(game_file),
                       "--out", str(tmp_path / "s")) == 4

    def test_correlate_from_checkpoint(self, tmp_path):
        run_dir = tmp_path / "run"
        assert run_cli(
            "search", "--game", "additive-nas201", "--epochs", "12",
            "--warmup", "4", "--out", str(run_dir),
        ) == 0
        out = tmp_path / "corr"
        code = run_cli(
            "correlate", "--game", "additive-nas201",
            "--state", str(run_dir / "checkpoint.json"),
            "--samples", "60", "--out", str(out),
        )
        assert code == 0
        doc = json.loads((out / "correlation.json").read_text())
        assert -1.0 <= doc["kendall_tau"] <= 1.0
        assert doc["sample_count"] == 60

    def test_pairwise_matrix(self, tmp_path):
        out = tmp_path / "pw"
        code = run_cli(
            "pairwise", "--game", "planted-nas201", "--edge-a", "3",
            "--edge-b", "4", "--out", str(out),
        )
        assert code == 0
        lines = (out / "pairwise.csv").read_text().splitlines()
        assert len(lines) == 1 + 5  # header + one row per op
        assert lines[0].split(",")[1:] == [
            "none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"
        ]

    def test_pairwise_bad_edge_is_validation_error(self, tmp_path):
        assert run_cli(
            "pairwise", "--game", "planted-nas201", "--edge-a", "0",
            "--edge-b", "17", "--out", str(tmp_path / "x"),
        ) == 4

    def test_export_history(self, tmp_path):
        run_dir = tmp_path / "run"
        assert run_cli(
            "search", "--game", "planted-nas201", "--epochs", "5",
            "--warmup", "2", "--out", str(run_dir),
        ) == 0
        out = tmp_path / "exp"
        code = run_cli(
            "export-history", "--checkpoint", str(run_dir / "checkpoint.json"),
            "--out", str(out),
        )
        assert code == 0
        exported = (out / "history.csv").read_text()
        assert exported == (run_dir / "history.csv").read_text()

    def test_unknown_space_is_usage_error(self, tmp_path):
        assert run_cli("search", "--game", "planted-nas201", "--space", "bogus",
                       "--out", str(tmp_path / "x")) == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            run_cli("frobnicate")
        assert err.value.code == 2
