from __future__ import annotations

import numpy as np
import pytest

from umf.core import Action, MaskedState, NfeLedger, residual_mask_ratio
from umf.denoiser import (
    CountingDenoiser,
    DenoiserRegistry,
    ExactPosteriorDenoiser,
    PlantedSkillDenoiser,
)
from umf.errors import FullyUnmasked
from umf.remask import DEFAULT_SCHEDULE, RatioSchedule
from umf.search import RolloutCache
from umf.transition import apply_eos_suppression, full_decode, unmask_step, unmask_to_next_ratio


def setup_planted(vocab, n_g=8, band=(0.0, 1.0)):
    target = tuple((i % 4) for i in range(n_g))
    registry = DenoiserRegistry()
    counting = CountingDenoiser(PlantedSkillDenoiser(vocab, target, band))
    registry.register("d", counting)
    return registry, counting, target


class TestUnmaskStep:
    def test_last_commit_reaches_terminal(self, vocab):
        registry, _, _ = setup_planted(vocab)
        gen = (0, 1, 2, 3, 0, 1, 2) + (vocab.mask_id,)
        state = MaskedState(vocab, (0,), gen)
        action = Action("a", "d")
        nxt = unmask_step(state, action, registry, NfeLedger(budget=10))
        assert nxt.fully_unmasked
        assert residual_mask_ratio(nxt) == 0.0

    def test_deterministic_action_repeats_identically(self, vocab):
        registry, _, _ = setup_planted(vocab)
        state = MaskedState.initial(vocab, (0,), 8)
        action = Action("a", "d")
        a = unmask_step(state, action, registry, NfeLedger(budget=10))
        b = unmask_step(state, action, registry, NfeLedger(budget=10))
        assert a == b

    def test_point_mass_posterior_forces_token(self, tiny_vocab):
        registry = DenoiserRegistry()
        registry.register("exact", ExactPosteriorDenoiser(tiny_vocab, [((0, 1), 1.0)]))
        state = MaskedState(tiny_vocab, (), (0, tiny_vocab.mask_id))
        action = Action("a", "exact")
        nxt = unmask_step(state, action, registry, NfeLedger(budget=10))
        assert nxt.gen == (0, 1)

    def test_fully_unmasked_raises(self, vocab):
        registry, _, _ = setup_planted(vocab)
        state = MaskedState(vocab, (0,), (1,) * 8)
        with pytest.raises(FullyUnmasked):
            unmask_step(state, Action("a", "d"), registry, NfeLedger(budget=10))

    def test_commits_exactly_one_token(self, vocab):
        registry, _, _ = setup_planted(vocab)
        state = MaskedState.initial(vocab, (0,), 8)
        for remask in ("entropy", "low_confidence", "random", "origin"):
            action = Action("a", "d", remask=remask)
            nxt = unmask_step(
                state, action, registry, NfeLedger(budget=10),
                rng=np.random.default_rng(0), origin_alphas=(1.0, 0.9),
            )
            assert nxt.masked_count == state.masked_count - 1

    def test_origin_empty_draw_forces_progress(self, vocab):
        registry, _, _ = setup_planted(vocab)
        state = MaskedState.initial(vocab, (0,), 8)
        action = Action("a", "d", remask="origin")
        # alpha_prev ~ alpha_t: commit probability ~ 0, forced-progress rule applies
        nxt = unmask_step(
            state, action, registry, NfeLedger(budget=10),
            rng=np.random.default_rng(0), origin_alphas=(1.0, 1.0 - 1e-12),
        )
        assert nxt.masked_count == 7


class TestEosSuppression:
    def test_penalty_multiplies(self, vocab):
        action = Action("a", "d", remask="entropy", eos_suppression=True)
        probs = np.zeros((1, vocab.candidate_count))
        probs[0, vocab.logit_index(vocab.eos_id)] = 0.9
        out = apply_eos_suppression(action, probs, vocab)
        assert out[0, vocab.logit_index(vocab.eos_id)] == pytest.approx(9e-13)

    def test_suppression_off_is_identity(self, vocab):
        action = Action("a", "d", remask="entropy", eos_suppression=False)
        probs = np.full((2, vocab.candidate_count), 0.5)
        out = apply_eos_suppression(action, probs, vocab)
        assert np.array_equal(out, probs)

    def test_confidence_style_zeroes_eos_proposals(self, vocab):
        action = Action("a", "d", remask="low_confidence", eos_suppression=True)
        confidences = np.array([0.9, 0.8, 0.7])
        proposed = [vocab.eos_id, 2, vocab.eos_id]
        out = apply_eos_suppression(action, confidences, vocab, proposed=proposed)
        assert out.tolist() == [0.0, 0.8, 0.0]

    def test_all_eos_proposals_commit_lowest_index(self, tiny_vocab):
        # denoiser pushes eos everywhere; zeroed confidences tie, lowest index wins
        registry = DenoiserRegistry()
        target = (tiny_vocab.eos_id,) * 4
        registry.register("d", PlantedSkillDenoiser(tiny_vocab, target, (0.0, 1.0)))
        state = MaskedState.initial(tiny_vocab, (), 4)
        action = Action("a", "d", remask="low_confidence", eos_suppression=True)
        nxt = unmask_step(state, action, registry, NfeLedger(budget=10))
        assert nxt.gen[0] == tiny_vocab.eos_id
        assert nxt.masked_count == 3

    def test_penalty_style_steers_proposals_away_from_eos(self, vocab):
        registry = DenoiserRegistry()
        target = (vocab.eos_id,) * 8
        registry.register("d", PlantedSkillDenoiser(vocab, target, (0.0, 1.0)))
        state = MaskedState.initial(vocab, (0,), 8)
        action = Action("a", "d", remask="entropy", eos_suppression=True)
        nxt = unmask_step(state, action, registry, NfeLedger(budget=10))
        committed = [t for t in nxt.gen if t != vocab.mask_id]
        assert committed[0] != vocab.eos_id


class TestUnmaskToNextRatio:
    def test_exact_step_count_n100(self, vocab):
        registry, counting, _ = setup_planted(vocab, n_g=100)
        state = MaskedState.initial(vocab, (0,), 100)
        ledger = NfeLedger(budget=1000)
        nxt = unmask_to_next_ratio(state, Action("a", "d"), 0.9, registry, ledger)
        assert counting.calls == ledger.consumed == 10
        assert nxt.masked_count == 90

    def test_satisfied_target_rejected(self, vocab):
        registry, _, _ = setup_planted(vocab)
        state = MaskedState(vocab, (0,), (0, 1, 2, 3) + (vocab.mask_id,) * 4)
        with pytest.raises(ValueError):
            unmask_to_next_ratio(state, Action("a", "d"), 0.5, registry, NfeLedger(budget=10))

    def test_cached_replay_costs_nothing(self, vocab):
        registry, counting, _ = setup_planted(vocab)
        state = MaskedState.initial(vocab, (0,), 8)
        cache = RolloutCache()
        action = Action("a", "d")
        first = unmask_to_next_ratio(
            state, action, 0.5, registry, NfeLedger(budget=100), cache=cache
        )
        before = counting.calls
        again = unmask_to_next_ratio(
            state, action, 0.5, registry, NfeLedger(budget=100), cache=cache
        )
        assert counting.calls == before
        assert again == first

    def test_stochastic_action_needs_seed_qualified_cache_key(self, vocab):
        registry, _, _ = setup_planted(vocab)
        state = MaskedState.initial(vocab, (0,), 8)
        action = Action("a", "d", temperature=1.0)
        with pytest.raises(ValueError, match="seed-qualified"):
            unmask_to_next_ratio(
                state, action, 0.5, registry, NfeLedger(budget=100),
                cache=RolloutCache(), rng=np.random.default_rng(0),
            )
        # explicit key: fine
        unmask_to_next_ratio(
            state, action, 0.5, registry, NfeLedger(budget=100),
            cache=RolloutCache(), action_key=("a", 7), rng=np.random.default_rng(0),
        )

    @pytest.mark.parametrize("n_g", [10, 100, 768])
    def test_segment_cost_along_default_schedule(self, vocab, n_g):
        registry, counting, _ = setup_planted(vocab, n_g=n_g)
        state = MaskedState.initial(vocab, (0,), n_g)
        ledger = NfeLedger(budget=n_g)
        counts = (n_g,) + DEFAULT_SCHEDULE.masked_counts(n_g)
        for ratio, before, after in zip(
            DEFAULT_SCHEDULE.ratios, counts, counts[1:]
        ):
            start_calls = counting.calls
            state = unmask_to_next_ratio(state, Action("a", "d"), ratio, registry, ledger)
            assert counting.calls - start_calls == before - after
            assert state.masked_count == after


class TestFullDecode:
    def test_terminal_and_boundaries(self, vocab):
        registry, counting, target = setup_planted(vocab)
        schedule = RatioSchedule((0.75, 0.5, 0.25))
        state = MaskedState.initial(vocab, (0,), 8)
        terminal, boundaries = full_decode(
            state, Action("a", "d"), schedule, registry, NfeLedger(budget=8)
        )
        assert terminal.fully_unmasked
        assert counting.calls == 8
        assert [b.masked_count for b in boundaries] == [6, 4, 2, 0]
        assert terminal.gen == target

    def test_deterministic_trajectory_is_pure(self, vocab):
        registry, _, _ = setup_planted(vocab)
        schedule = RatioSchedule((0.75, 0.5, 0.25))
        state = MaskedState.initial(vocab, (0,), 8)
        t1, b1 = full_decode(state, Action("a", "d"), schedule, registry, NfeLedger(budget=8))
        t2, b2 = full_decode(state, Action("a", "d"), schedule, registry, NfeLedger(budget=8))
        assert t1 == t2 and b1 == b2

    def test_mid_trajectory_start_skips_satisfied_segments(self, vocab):
        registry, counting, _ = setup_planted(vocab)
        schedule = RatioSchedule((0.75, 0.5, 0.25))
        gen = (0, 1, 2, 3) + (vocab.mask_id,) * 4  # already at ratio 0.5
        state = MaskedState(vocab, (0,), gen)
        terminal, boundaries = full_decode(
            state, Action("a", "d"), schedule, registry, NfeLedger(budget=8)
        )
        assert counting.calls == 4
        assert [b.masked_count for b in boundaries] == [2, 0]
        assert terminal.fully_unmasked


class TestMonotonicUnmasking:
    def test_fuzzed_steps_never_remask(self, vocab):
        rng = np.random.default_rng(12345)
        registry, _, _ = setup_planted(vocab, n_g=8, band=(0.4, 1.0))
        steps = 0
        for trial in range(80):
            remask = ("entropy", "low_confidence", "random", "origin")[trial % 4]
            action = Action("a", "d", temperature=float(trial % 3) * 0.5, remask=remask)
            state = MaskedState.initial(vocab, (0, 1), 8)
            while not state.fully_unmasked:
                prev = state
                state = unmask_step(
                    state, action, registry, NfeLedger(budget=100),
                    rng=rng, origin_alphas=(residual_mask_ratio(state), 0.0),
                )
                assert set(state.masked_positions) <= set(prev.masked_positions)
                assert state.prompt == prev.prompt
                steps += 1
        assert steps == 80 * 8
