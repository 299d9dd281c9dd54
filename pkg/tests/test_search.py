from __future__ import annotations

import numpy as np
import pytest

from opshap.analysis import planted_genotype
from opshap.game import Coalition
from opshap.search import (
    DegenerateEstimateWarning,
    SearchConfig,
    SearchError,
    SearchState,
    alpha_update,
    export_history,
    load_checkpoint,
    momentum_update,
    run_search,
    save_checkpoint,
)
from opshap.shapley import shapley_exact
from opshap.space import derive_genotype, preset_space
from opshap.synthetic import GameSpec, make_game, preset_game_spec

from conftest import FnGame


class TestMomentumUpdate:
    def test_mu_zero_collapses_to_normalized_phi(self):
        s = momentum_update(np.array([0.5, 0.5]), np.array([3.0, 4.0]), 0.0)
        assert np.allclose(s, [0.6, 0.8], atol=1e-12)

    def test_mu_one_freezes_accumulator(self):
        prev = np.array([0.2, -0.1])
        s = momentum_update(prev, np.array([3.0, 4.0]), 1.0)
        assert np.allclose(s, prev, atol=1e-15)

    def test_documented_example(self):
        s = momentum_update(np.zeros(2), np.array([3.0, 4.0]), 0.8)
        assert np.allclose(s, [0.12, 0.16], atol=1e-12)

    def test_zero_phi_decays_and_warns(self):
        prev = np.array([0.4, 0.2])
        with pytest.warns(DegenerateEstimateWarning):
            s = momentum_update(prev, np.zeros(2), 0.8)
        assert np.allclose(s, 0.8 * prev, atol=1e-15)

    def test_per_edge_scope_normalizes_blocks(self):
        slices = [slice(0, 2), slice(2, 4)]
        phi = np.array([3.0, 4.0, 0.0, 2.0])
        s = momentum_update(np.zeros(4), phi, 0.0, norm_scope="per_edge",
                            edge_slices=slices)
        assert np.allclose(s, [0.6, 0.8, 0.0, 1.0], atol=1e-12)


class TestAlphaUpdate:
    def test_unit_direction(self):
        out = alpha_update(np.zeros(4), np.array([1.0, 0.0, 0.0, 0.0]), 0.1)
        assert np.allclose(out, [0.1, 0, 0, 0], atol=1e-15)

    def test_two_steps_move_two_epsilons(self):
        s = np.array([2.0, 0.0])
        a = alpha_update(np.zeros(2), s, 0.1)
        a = alpha_update(a, s, 0.1)
        assert np.allclose(a, [0.2, 0.0], atol=1e-15)

    def test_zero_step_size_keeps_alpha(self):
        a = alpha_update(np.array([0.3, 0.4]), np.array([1.0, 1.0]), 0.0)
        assert np.allclose(a, [0.3, 0.4], atol=1e-15)

    def test_zero_s_warns_and_keeps_alpha(self):
        with pytest.warns(DegenerateEstimateWarning):
            a = alpha_update(np.array([0.3, 0.4]), np.zeros(2), 0.1)
        assert np.allclose(a, [0.3, 0.4], atol=1e-15)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SearchConfig(epochs=0)
        with pytest.raises(ValueError):
            SearchConfig(warmup_epochs=50, epochs=50)
        with pytest.raises(ValueError):
            SearchConfig(step_size=0.0)
        with pytest.raises(ValueError):
            SearchConfig(momentum=1.5)
        with pytest.raises(ValueError):
            SearchConfig(mode="magic")
        with pytest.raises(ValueError):
            SearchConfig(permutations=0)

    def test_round_trip(self):
        cfg = SearchConfig(epochs=20, warmup_epochs=5, seed=3)
        assert SearchConfig.from_document(cfg.to_document()) == cfg


def small_setup(mode="full", seed=0, epochs=12, warmup=4, **spec_kw):
    space = preset_space("nasbench201-cell")
    spec = preset_game_spec("planted-nas201")
    for key, value in spec_kw.items():
        setattr(spec, key, value)
    game = make_game(spec, space=space)
    cfg = SearchConfig(epochs=epochs, warmup_epochs=warmup, mode=mode, seed=seed)
    return space, game, cfg


class TestRunSearch:
    def test_player_count_mismatch(self):
        space = preset_space("nasbench201-cell")
        game = make_game(GameSpec(edges=2, ops_per_edge=2))
        with pytest.raises(ValueError, match="players"):
            run_search(space, game, SearchConfig(epochs=2, warmup_epochs=0))

    def test_single_update_when_warmup_is_last_epoch(self):
        space, game, _ = small_setup()
        cfg = SearchConfig(epochs=6, warmup_epochs=5, seed=1)
        genotype, state = run_search(space, game, cfg)
        assert len(state.history) == 6
        updates = [rec for rec in state.history if rec.phi is not None]
        assert len(updates) == 1
        assert updates[0].epoch == 5

    def test_history_completeness_and_budget(self):
        space, game, cfg = small_setup(epochs=10, warmup=3)
        _, state = run_search(space, game, cfg)
        assert [rec.epoch for rec in state.history] == list(range(10))
        for rec in state.history:
            if rec.epoch >= 3:
                assert rec.phi is not None
                assert 0 < rec.evals_spent <= cfg.permutations * (30 + 1)
            else:
                assert rec.phi is None and rec.evals_spent == 0

    def test_momentum_norm_stays_bounded(self):
        space, game, cfg = small_setup(epochs=15, warmup=2)
        _, state = run_search(space, game, cfg)
        assert float(np.linalg.norm(state.s)) <= 1.0 + 1e-12

    def test_bit_identical_reruns(self):
        space, game1, cfg = small_setup(epochs=8, warmup=2, seed=5)
        _, s1 = run_search(space, game1, cfg)
        _, s2 = run_search(space, make_game(preset_game_spec("planted-nas201"),
                                            space=space), cfg)
        assert len(s1.history) == len(s2.history)
        for a, b in zip(s1.history, s2.history):
            assert np.array_equal(a.alpha, b.alpha)
            assert (a.phi is None) == (b.phi is None)
            if a.phi is not None:
                assert np.array_equal(a.phi, b.phi)
            assert a.evals_spent == b.evals_spent

    def test_worker_count_does_not_change_history(self):
        space, _, cfg = small_setup(epochs=8, warmup=2, seed=9)
        games = [make_game(preset_game_spec("planted-nas201"), space=space)
                 for _ in range(2)]
        _, s1 = run_search(space, games[0], cfg, workers=1)
        _, s8 = run_search(space, games[1], cfg, workers=8)
        for a, b in zip(s1.history, s8.history):
            assert np.array_equal(a.alpha, b.alpha)
            assert a.evals_spent == b.evals_spent

    def test_frozen_alpha_keeps_alpha_and_uses_final_estimate(self):
        space, game, cfg = small_setup(mode="frozen_alpha", epochs=10, warmup=2)
        target = planted_genotype(space, game)
        genotype, state = run_search(space, game, cfg)
        assert np.array_equal(state.alpha, np.zeros(space.n_players))
        assert all(rec.phi is None for rec in state.history)
        assert genotype == target

    def test_discretize_only_emits_contribution_genotype(self):
        space, game, cfg = small_setup(mode="discretize_only", epochs=10, warmup=2)
        target = planted_genotype(space, game)
        genotype, state = run_search(space, game, cfg)
        assert np.array_equal(state.alpha, np.zeros(space.n_players))
        assert genotype == target

    def test_full_mode_recovers_planted_optimum(self):
        recovered = 0
        for seed in range(5):
            space, game, cfg = small_setup(epochs=25, warmup=8, seed=seed)
            target = planted_genotype(space, game)
            genotype, _ = run_search(space, game, cfg)
            recovered += genotype == target
        assert recovered >= 4

    def test_update_every_cadence(self):
        space, game, _ = small_setup()
        cfg = SearchConfig(epochs=10, warmup_epochs=2, update_every=3, seed=0)
        _, state = run_search(space, game, cfg)
        update_epochs = [rec.epoch for rec in state.history if rec.phi is not None]
        assert update_epochs == [2, 5, 8]

    def test_evaluator_failure_checkpoints_and_resumes(self, tmp_path):
        space = preset_space("nasbench201-cell")
        healthy = make_game(preset_game_spec("planted-nas201"), space=space)

        class Flaky(FnGame):
            def __init__(self, inner, fail_at_generation):
                super().__init__(inner.n_players, None)
                self.inner = inner
                self.fail_at = fail_at_generation

            def evaluate(self, coalition):
                if self.inner.generation == self.fail_at:
                    raise RuntimeError("evaluator went away")
                return self.inner.evaluate(coalition)

            def _do_train(self, steps):
                self.inner.train(steps)

        flaky = Flaky(healthy, fail_at_generation=6)
        ckpt = tmp_path / "checkpoint.json"
        cfg = SearchConfig(epochs=10, warmup_epochs=2, seed=4)
        with pytest.raises(SearchError) as err:
            run_search(space, flaky, cfg, checkpoint_path=ckpt)
        assert err.value.epoch == 5
        assert ckpt.exists()

        state, cfg_loaded, _ = load_checkpoint(ckpt)
        assert cfg_loaded == cfg
        assert state.epoch == 5
        # Resume with a healed evaluator that has the same training progress.
        healed = make_game(preset_game_spec("planted-nas201"), space=space)
        healed.train(state.epoch)
        genotype, state = run_search(space, healed, cfg, state=state)
        assert state.epoch == 10
        assert len(state.history) == 10
        assert genotype.chosen

    def test_checkpoint_round_trip(self, tmp_path):
        space, game, cfg = small_setup(epochs=6, warmup=2, seed=2)
        _, state = run_search(space, game, cfg)
        path = tmp_path / "state.json"
        save_checkpoint(path, state, cfg, space)
        loaded, cfg2, digest = load_checkpoint(path)
        assert cfg2 == cfg
        assert np.array_equal(loaded.alpha, state.alpha)
        assert np.array_equal(loaded.s, state.s)
        assert len(loaded.history) == len(state.history)
        for a, b in zip(loaded.history, state.history):
            assert np.array_equal(a.alpha, b.alpha)
        assert len(digest) == 64

    def test_scaled_game_leaves_contribution_genotype_unchanged(self):
        # Attribution is linear in the value function, so a positive rescale
        # must not change the argmax-based genotype.
        space = preset_space("nasbench201-cell")
        spec = GameSpec(edges=6, ops_per_edge=5, seed=13, planted=True,
                        pairwise_count=5)
        for seed in (0, 1):
            cfg = SearchConfig(epochs=6, warmup_epochs=2, mode="discretize_only",
                               seed=seed)
            g1, _ = run_search(space, make_game(spec, space=space), cfg)
            g2, _ = run_search(space, make_game(spec, space=space).scaled(0.25), cfg)
            assert g1 == g2

    def test_exact_linearity_on_reduced_game(self):
        # 12-player reduction: exact attribution scales with the game, so the
        # derived genotype is identical.
        from opshap.space import SearchSpace

        space = SearchSpace(
            name="reduced",
            nodes=5,
            edges=[(0, 1), (1, 2), (2, 3), (3, 4)],
            ops_per_edge=[["a", "b", "c"]] * 4,
        )
        spec = GameSpec(edges=4, ops_per_edge=3, seed=3, planted=True,
                        pairwise_count=4)
        game = make_game(spec, space=space)
        est = shapley_exact(game)
        est_scaled = shapley_exact(game.scaled(0.5))
        assert np.max(np.abs(est_scaled.phi - 0.5 * est.phi)) < 1e-9
        assert derive_genotype(space, est.phi) == derive_genotype(space, est_scaled.phi)

    def test_search_on_topk_space_prunes_input_edges(self):
        space = preset_space("darts-cell")
        spec = GameSpec(edges=14, ops_per_edge=8, seed=2, planted=True,
                        unary_range=(0.001, 0.004), planted_range=(0.006, 0.008))
        game = make_game(spec, space=space)
        cfg = SearchConfig(epochs=5, warmup_epochs=2, seed=0)
        genotype, _ = run_search(space, game, cfg)
        assert len(genotype.chosen) == 8  # two kept inputs per intermediate node
        assert len(genotype.discarded_edges) == 6
        assert all(e.op not in space.null_ops for e in genotype.chosen)

    def test_export_history_table(self, tmp_path):
        space, game, cfg = small_setup(epochs=5, warmup=2)
        _, state = run_search(space, game, cfg)
        path = tmp_path / "history.csv"
        export_history(state, space, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,player,edge,op,alpha,phi"
        assert len(lines) == 1 + 5 * space.n_players
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0"
