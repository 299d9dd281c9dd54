from __future__ import annotations

import numpy as np
import pytest

from opshap.game import Coalition, EvalCache, cached_evaluate
from opshap.shapley import shapley_exact
from opshap.space import preset_space
from opshap.synthetic import (
    GameSpec,
    GameValidationError,
    InteractionGame,
    make_game,
    preset_game_spec,
)


class TestEvaluate:
    def test_empty_coalition_is_floor(self):
        game = InteractionGame([0.1, 0.2], floor=0.3)
        assert game.evaluate(Coalition.empty(2)) == 0.3

    def test_full_value_direct_sum(self):
        # floor 0.1 + unary sum 0.5 + pairwise sum 0.2 = 0.8
        game = InteractionGame(
            [0.2, 0.2, 0.1],
            floor=0.1,
            pairwise=[(0, 1, 0.15), (1, 2, 0.05)],
        )
        assert game.full_value() == pytest.approx(0.8, abs=1e-12)

    def test_joint_removal_vs_single_removals(self):
        # One synergy pair: each single removal loses the pair term, the
        # joint removal loses it once, so the joint drop is u_i + u_j + w.
        game = InteractionGame([0.1, 0.15, 0.05], floor=0.2, pairwise=[(0, 1, 0.08)])
        full = game.full_value()
        drop_0 = full - game.evaluate(Coalition.full(3).remove(0))
        drop_1 = full - game.evaluate(Coalition.full(3).remove(1))
        drop_joint = full - game.evaluate(Coalition.full(3).remove(0).remove(1))
        assert drop_0 == pytest.approx(0.1 + 0.08, abs=1e-12)
        assert drop_1 == pytest.approx(0.15 + 0.08, abs=1e-12)
        assert drop_joint == pytest.approx(0.1 + 0.15 + 0.08, abs=1e-12)
        assert drop_joint != pytest.approx(drop_0 + drop_1, abs=1e-3)

    def test_clamped_to_unit_interval(self):
        hot = InteractionGame([0.9, 0.9], floor=0.5)
        assert hot.full_value() == 1.0
        cold = InteractionGame([0.0, 0.0], floor=0.4, edge_groups=[[0], [1]],
                               coverage_penalty=0.3)
        assert cold.evaluate(Coalition.empty(2)) == 0.0

    def test_coverage_penalty_per_uncovered_edge(self):
        game = InteractionGame(
            [0.0, 0.0, 0.0, 0.0],
            floor=0.9,
            edge_groups=[[0, 1], [2, 3]],
            coverage_penalty=0.2,
        )
        assert game.full_value() == pytest.approx(0.9)
        assert game.evaluate(Coalition.from_players([0, 2], 4)) == pytest.approx(0.9)
        assert game.evaluate(Coalition.from_players([2, 3], 4)) == pytest.approx(0.7)
        assert game.evaluate(Coalition.empty(4)) == pytest.approx(0.5)


class TestNoise:
    def test_sigma_zero_is_exactly_deterministic(self):
        game = InteractionGame([0.2, 0.3], floor=0.1, noise_sigma=0.0)
        s = Coalition(0b01, 2)
        assert game.evaluate(s) == game.evaluate(s) == pytest.approx(0.3, abs=1e-15)

    def test_fixed_seed_reproducible(self):
        a = InteractionGame([0.2, 0.3], floor=0.1, noise_sigma=0.05, noise_seed=7)
        b = InteractionGame([0.2, 0.3], floor=0.1, noise_sigma=0.05, noise_seed=7)
        s = Coalition(0b11, 2)
        assert a.evaluate(s) == b.evaluate(s)
        assert a.evaluate(s) != pytest.approx(0.6, abs=1e-6)

    def test_noise_stable_within_generation(self):
        game = InteractionGame([0.2, 0.3], floor=0.1, noise_sigma=0.05, noise_seed=7)
        s = Coalition(0b10, 2)
        first = game.evaluate(s)
        assert game.evaluate(s) == first
        game.train(1)
        assert game.evaluate(s) != first


class TestTrain:
    def test_noop_without_schedule(self):
        game = InteractionGame([0.2, 0.3], floor=0.1)
        before = game.full_value()
        game.train(5)
        assert game.full_value() == before

    def test_generation_bumps_and_cache_invalidates(self):
        game = InteractionGame([0.2, 0.3], floor=0.1)
        cache = EvalCache()
        s = Coalition(0b11, 2)
        cached_evaluate(game, cache, s)
        game.train(1)
        assert game.generation == 1
        cached_evaluate(game, cache, s)
        assert cache.misses == 2

    def test_linear_anneal_crossover_step(self):
        # Binary-exact schedule: player 0 starts at 0.5 and sinks to 0.25,
        # player 1 does the opposite, over 8 steps.  The lines meet exactly at
        # step 4 (tie, lower index wins the argmax); the leader flips at 5.
        start = [0.5, 0.25]
        target = [0.25, 0.5]
        steps = 8
        d0 = start[0] - start[1]
        d1 = target[0] - target[1]
        crossover = steps * d0 / (d0 - d1)
        assert crossover == 4
        game = InteractionGame(start, anneal_target=target, anneal_steps=steps)
        leaders = []
        for _ in range(steps):
            game.train(1)
            est = shapley_exact(game)
            leaders.append(int(np.argmax(est.phi)))
        assert leaders == [0, 0, 0, 0, 1, 1, 1, 1]

    def test_anneal_reaches_target_and_stays(self):
        game = InteractionGame([0.4, 0.1], anneal_target=[0.1, 0.4], anneal_steps=4)
        game.train(10)
        assert game.unary.tolist() == [0.1, 0.4]


class TestMakeGame:
    def test_additive_spec_gives_unary_shapley(self):
        spec = GameSpec(edges=4, ops_per_edge=2, seed=3)
        game = make_game(spec)
        est = shapley_exact(game)
        assert np.max(np.abs(est.phi - game.unary)) < 1e-12

    def test_planted_null_player_has_zero_phi(self):
        spec = GameSpec(edges=3, ops_per_edge=2, seed=8, pairwise_count=3, null_count=1)
        game = make_game(spec)
        (null_player,) = game.null_players
        assert game.unary[null_player] == 0.0
        est = shapley_exact(game)
        assert est.phi[null_player] == 0.0

    def test_cloned_players_get_equal_phi(self):
        spec = GameSpec(edges=3, ops_per_edge=2, seed=12, pairwise_count=4,
                        clone_pair=True)
        game = make_game(spec)
        a, b = game.clone_players
        est = shapley_exact(game)
        assert abs(est.phi[a] - est.phi[b]) <= 1e-12

    def test_reproducible_from_seed(self):
        spec = GameSpec(edges=4, ops_per_edge=3, seed=5, pairwise_count=5, planted=True)
        g1 = make_game(spec)
        g2 = make_game(spec)
        assert np.array_equal(g1.unary, g2.unary)
        assert g1.pairwise == g2.pairwise
        assert g1.planted_players == g2.planted_players

    def test_dimension_mismatch_with_space(self):
        space = preset_space("nasbench201-cell")
        with pytest.raises(GameValidationError, match="do not match"):
            make_game(GameSpec(edges=5, ops_per_edge=5), space=space)

    def test_space_bound_game_picks_non_null_winners(self):
        space = preset_space("nasbench201-cell")
        spec = preset_game_spec("planted-nas201")
        game = make_game(spec, space=space)
        assert game.n_players == space.n_players
        for p in game.planted_players:
            assert space.op_name(p) not in space.null_ops

    def test_presets_resolve(self):
        for name in ("planted-nas201", "steep-10", "interaction-8"):
            game = make_game(preset_game_spec(name))
            assert game.n_players > 0

    def test_unknown_preset(self):
        with pytest.raises(GameValidationError):
            preset_game_spec("nope")

    def test_spec_document_round_trip(self):
        spec = preset_game_spec("planted-nas201")
        assert GameSpec.from_document(spec.to_document()) == spec
