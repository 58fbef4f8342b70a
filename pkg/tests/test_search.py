from __future__ import annotations

import math

import numpy as np
import pytest

from umf.core import Action, MaskedState, NfeLedger, Vocabulary
from umf.denoiser import CountingDenoiser, DenoiserRegistry, PlantedSkillDenoiser
from umf.errors import BudgetTooSmall, NoUntriedActions, TreeExhausted
from umf.remask import DEFAULT_SCHEDULE, RatioSchedule
from umf.reward import ExactMatchReward
from umf.search import (
    RolloutCache,
    TreeNode,
    _SearchContext,
    backup,
    expand,
    run,
    select,
    uct_score,
)
from umf.tasks import brute_force_best, planted_pair_task, random_instance
from umf.transition import full_decode


def single_action_setup(vocab, n_g=8, schedule=None):
    target = tuple((i % 4) for i in range(n_g))
    registry = DenoiserRegistry()
    counting = CountingDenoiser(PlantedSkillDenoiser(vocab, target, (0.0, 1.0)))
    registry.register("d", counting)
    action = Action("a", "d")
    schedule = schedule or RatioSchedule((0.75, 0.5, 0.25))
    state = MaskedState.initial(vocab, (0,), n_g)
    return state, action, registry, counting, ExactMatchReward(target), schedule


def make_ctx(state, actions, schedule, registry, provider, budget=10**6, cache=True, seed=0):
    return _SearchContext(
        registry=registry,
        schedule=schedule,
        reward_provider=provider,
        actions=tuple(actions),
        ledger=NfeLedger(budget=budget),
        cache=RolloutCache() if cache else None,
        master_seed=seed,
    )


class TestUctScore:
    def test_hand_evaluated_value(self):
        node = TreeNode(state=None, depth=1, visit_count=4, reward_sum=2.0)
        expected = 2.0 / 4 + 1.0 * math.sqrt(math.log(8) / 4)
        assert uct_score(node, 8, 1.0) == pytest.approx(expected, abs=1e-15)

    def test_zero_exploration_gives_mean(self):
        node = TreeNode(state=None, depth=1, visit_count=5, reward_sum=3.0)
        assert uct_score(node, 9, 0.0) == pytest.approx(0.6)

    def test_unvisited_scores_infinity(self):
        node = TreeNode(state=None, depth=1)
        assert uct_score(node, 3) == math.inf


class TestSelect:
    def test_fresh_tree_returns_root(self, vocab):
        root = TreeNode(state=None, depth=0, untried_actions=[Action("a", "d")])
        node, reselects = select(root)
        assert node is root and reselects == 0

    def test_unvisited_child_entered_first(self):
        root = TreeNode(state=None, depth=0, visit_count=3)
        seen = TreeNode(state=None, depth=1, parent=root, visit_count=3, reward_sum=3.0,
                        untried_actions=[Action("x", "d")])
        fresh = TreeNode(state=None, depth=1, parent=root,
                         untried_actions=[Action("x", "d")])
        root.children = {"a": seen, "b": fresh}
        node, _ = select(root)
        assert node is fresh

    def test_hand_built_tree_argmax(self):
        # root(n=8) -> a(n=4, sum=2.0), b(n=3, sum=2.4): UCT(a)=1.221, UCT(b)=1.633
        root = TreeNode(state=None, depth=0, visit_count=8)
        a = TreeNode(state=None, depth=1, parent=root, visit_count=4, reward_sum=2.0,
                     untried_actions=[Action("x", "d")])
        b = TreeNode(state=None, depth=1, parent=root, visit_count=3, reward_sum=2.4,
                     untried_actions=[Action("x", "d")])
        root.children = {"a": a, "b": b}
        expected_a = 0.5 + math.sqrt(math.log(8) / 4)
        expected_b = 0.8 + math.sqrt(math.log(8) / 3)
        assert expected_b > expected_a
        node, _ = select(root)
        assert node is b

    def test_terminal_depth_branch_masked_out(self):
        root = TreeNode(state=None, depth=0, visit_count=2)
        dead = TreeNode(state=None, depth=1, parent=root, visit_count=1, reward_sum=1.0)
        live = TreeNode(state=None, depth=1, parent=root, visit_count=1, reward_sum=0.0,
                        untried_actions=[Action("x", "d")])
        root.children = {"dead": dead, "live": live}
        node, reselects = select(root)
        assert node is live
        assert reselects == 1
        assert dead.exhausted

    def test_tree_exhausted(self):
        root = TreeNode(state=None, depth=0, visit_count=1)
        only = TreeNode(state=None, depth=1, parent=root, visit_count=1)
        root.children = {"a": only}
        with pytest.raises(TreeExhausted):
            select(root)


class TestSelectBest:
    def test_ties_go_to_earliest_discovery(self, vocab):
        from umf.search import TerminalRecord, select_best

        a = MaskedState(vocab, (0,), (1,) * 8)
        b = MaskedState(vocab, (0,), (2,) * 8)
        terminals = {
            "a": TerminalRecord(a, 0.5, 0, ("x",)),
            "b": TerminalRecord(b, 0.5, 1, ("y",)),
        }
        assert select_best(terminals).state == a
        terminals["b"] = TerminalRecord(b, 0.6, 1, ("y",))
        assert select_best(terminals).state == b


class TestBackup:
    def test_path_counts(self):
        root = TreeNode(state=None, depth=0)
        mid = TreeNode(state=None, depth=1, parent=root)
        leaf = TreeNode(state=None, depth=2, parent=mid)
        backup(leaf, 1.0)
        assert [n.visit_count for n in (leaf, mid, root)] == [1, 1, 1]
        backup(leaf, 0.5)
        backup(mid, 0.5)
        assert root.visit_count == 3
        assert root.reward_sum == pytest.approx(2.0)

    def test_two_backups_mean(self):
        root = TreeNode(state=None, depth=0)
        leaf = TreeNode(state=None, depth=1, parent=root)
        backup(leaf, 0.5)
        backup(leaf, 0.5)
        assert leaf.mean_reward == pytest.approx(0.5)
        assert root.mean_reward == pytest.approx(0.5)


class TestExpand:
    def test_root_expansion_cost_splits_at_schedule_head(self, vocab):
        # n_g 768, head 0.9: 77 commits to the child, 691 in the rollout
        state, action, registry, counting, provider, _ = single_action_setup(
            vocab, n_g=768, schedule=DEFAULT_SCHEDULE
        )
        ctx = make_ctx(state, [action], DEFAULT_SCHEDULE, registry, provider)
        root = TreeNode(state=state, depth=0, untried_actions=[action])
        outcome = expand(root, ctx)
        assert ctx.ledger.consumed == 768
        assert outcome.child.state.masked_count == 691
        assert counting.calls == 768

    def test_cached_repeat_is_free_and_identical(self, vocab):
        state, action, registry, counting, provider, schedule = single_action_setup(vocab)
        ctx = make_ctx(state, [action], schedule, registry, provider)
        root = TreeNode(state=state, depth=0, untried_actions=[action])
        first = expand(root, ctx)
        # same (state, action) reached via a different tree node
        twin = TreeNode(state=state, depth=0, untried_actions=[action])
        calls_before = counting.calls
        second = expand(twin, ctx)
        assert counting.calls == calls_before
        assert second.cache_hit and not first.cache_hit
        assert second.reward == first.reward
        assert second.child.state == first.child.state
        assert ctx.ledger.cache_hits == 1 and ctx.ledger.rollouts_total == 2

    def test_no_untried_actions(self, vocab):
        state, action, registry, _, provider, schedule = single_action_setup(vocab)
        ctx = make_ctx(state, [action], schedule, registry, provider)
        root = TreeNode(state=state, depth=0, untried_actions=[])
        with pytest.raises(NoUntriedActions):
            expand(root, ctx)

    def test_stochastic_expansion_records_replayable_seed(self, vocab):
        target = tuple((i % 4) for i in range(8))
        registry = DenoiserRegistry()
        registry.register("d", PlantedSkillDenoiser(vocab, target, (0.0, 1.0)))
        action = Action("a", "d", temperature=1.0)
        schedule = RatioSchedule((0.75, 0.5, 0.25))
        state = MaskedState.initial(vocab, (0,), 8)
        provider = ExactMatchReward(target)
        ctx = make_ctx(state, [action], schedule, registry, provider, seed=11)
        root = TreeNode(state=state, depth=0, untried_actions=[action])
        outcome = expand(root, ctx)
        assert outcome.seed is not None
        # replay the recorded seed: same trajectory, same reward
        ledger = NfeLedger(budget=100)
        terminal, _ = full_decode(
            state, action, schedule, registry, ledger,
            rng=np.random.default_rng(outcome.seed),
        )
        assert provider.score(terminal) == outcome.reward


class TestRun:
    def test_budget_exactly_one_decode_equals_plain_decode(self, vocab):
        state, action, registry, _, provider, schedule = single_action_setup(vocab)
        result = run(state, [action], schedule, registry, provider, budget=8)
        plain, _ = full_decode(state, action, schedule, registry, NfeLedger(budget=8))
        assert result.best_state == plain
        assert result.ledger.consumed == 8

    def test_budget_too_small(self, vocab):
        state, action, registry, _, provider, schedule = single_action_setup(vocab)
        with pytest.raises(BudgetTooSmall):
            run(state, [action], schedule, registry, provider, budget=7)

    def test_identical_runs_bit_identical_traces(self):
        task = planted_pair_task(3)
        kwargs = dict(budget=48, seed=9)
        r1 = run(task.initial_state, task.actions, task.schedule, task.registry,
                 task.reward_provider, **kwargs)
        r2 = run(task.initial_state, task.actions, task.schedule, task.registry,
                 task.reward_provider, **kwargs)
        assert r1.trace == r2.trace
        assert r1.best_state == r2.best_state

    def test_planted_interleaving_found_with_generous_budget(self):
        task = planted_pair_task(1)
        result = run(task.initial_state, task.actions, task.schedule, task.registry,
                     task.reward_provider, budget=64)
        best_reward, best_plan = brute_force_best(task)
        assert best_reward == 1.0
        assert result.best_reward == 1.0
        assert result.best_path == best_plan

    def test_best_so_far_non_decreasing_and_budget_adherence(self):
        task = planted_pair_task(2)
        result = run(task.initial_state, task.actions, task.schedule, task.registry,
                     task.reward_provider, budget=40)
        best = 0.0
        for record in result.trace:
            assert record["best_so_far"] >= best
            best = record["best_so_far"]
            assert record["nfe_before"] < result.ledger.budget
        assert result.ledger.consumed <= result.ledger.budget + task.initial_state.n_g

    def test_tree_exhausted_stops_early_with_flag(self):
        task = planted_pair_task(4)
        result = run(task.initial_state, task.actions, task.schedule, task.registry,
                     task.reward_provider, budget=10_000)
        assert result.tree_exhausted
        assert result.ledger.consumed < 10_000
        assert result.trace[-1].get("tree_exhausted") is True

    def test_root_visits_equal_iterations(self):
        task = planted_pair_task(5)
        result = run(task.initial_state, task.actions, task.schedule, task.registry,
                     task.reward_provider, budget=48)
        assert result.root.visit_count == len(result.trace)

    def test_cache_off_prefix_matches_cache_on(self):
        # same decisions at equal iteration counts; cached run never costs more
        task = planted_pair_task(6)
        on = run(task.initial_state, task.actions, task.schedule, task.registry,
                 task.reward_provider, budget=64, cache_enabled=True)
        off = run(task.initial_state, task.actions, task.schedule, task.registry,
                  task.reward_provider, budget=64, cache_enabled=False)
        k = min(len(on.trace), len(off.trace))
        for rec_on, rec_off in zip(on.trace[:k], off.trace[:k]):
            assert rec_on["action_path"] == rec_off["action_path"]
            assert rec_on["reward"] == rec_off["reward"]
            assert rec_on["nfe_consumed"] <= rec_off["nfe_consumed"]
        assert all(r["cache_hit"] is False for r in off.trace)

    def test_matches_brute_force_on_exhaustive_instances(self):
        for seed in range(6):
            task = random_instance(seed)
            best_reward, _ = brute_force_best(task)
            budget = (len(task.actions) ** task.schedule.depth) * task.initial_state.n_g
            result = run(task.initial_state, task.actions, task.schedule, task.registry,
                         task.reward_provider, budget=budget)
            assert result.best_reward == pytest.approx(best_reward)

    def test_action_rng_seed_shifts_stochastic_trajectories(self, vocab):
        target = tuple((i % 4) for i in range(8))
        registry = DenoiserRegistry()
        registry.register("d", PlantedSkillDenoiser(vocab, target, (0.0, 1.0), margin=1.0))
        schedule = RatioSchedule((0.75, 0.5, 0.25))
        state = MaskedState.initial(vocab, (0,), 8)
        provider = ExactMatchReward(target)

        def first_terminal(rng_seed):
            action = Action("hot", "d", temperature=1.5, rng_seed=rng_seed)
            result = run(state, [action], schedule, registry, provider, budget=8, seed=0)
            return result.best_state

        assert first_terminal(1) == first_terminal(1)
        terminals = {tuple(first_terminal(s).gen) for s in range(6)}
        assert len(terminals) > 1


class TestCrossVocabularyExpansion:
    def _setup(self):
        from umf.reward import PredicateReward
        from umf.tokmap import ToyCodec

        char_vocab = Vocabulary(size=7, mask_id=6, eos_id=4, pad_id=5)
        char = ToyCodec(char_vocab, {0: "a", 1: "b", 2: "c", 3: "d"})
        big_vocab = Vocabulary(size=9, mask_id=3, eos_id=7, pad_id=8)
        big = ToyCodec(big_vocab, {0: "ab", 1: "a", 2: "b", 4: "c", 5: "d", 6: "cd"})
        codecs = {char_vocab: char, big_vocab: big}

        # the char-space model plants "abcd...", the bigram model "cd..."
        char_target = tuple((0, 1, 2, 3) * 2)
        big_target = (6, 6, 6, 6, 6, 6, 6, 6)
        registry = DenoiserRegistry()
        registry.register("chars", PlantedSkillDenoiser(char_vocab, char_target, (0.0, 1.0)))
        registry.register("bigrams", PlantedSkillDenoiser(big_vocab, big_target, (0.0, 1.0)))
        actions = (Action("a_char", "chars"), Action("a_big", "bigrams"))

        def decodes_to_text(state):
            codec = codecs[state.vocab]
            committed = [t for t in state.gen if t not in
                         (state.vocab.mask_id, state.vocab.eos_id, state.vocab.pad_id)]
            try:
                return codec.decode(committed)
            except Exception:
                return ""

        provider = PredicateReward((lambda s: decodes_to_text(s).startswith("abab"),))
        initial = MaskedState.initial(char_vocab, (0,), 8)
        schedule = RatioSchedule((0.5,))
        return initial, actions, schedule, registry, provider, codecs

    def test_expansion_maps_state_between_vocabularies(self):
        initial, actions, schedule, registry, provider, codecs = self._setup()
        result = run(initial, actions, schedule, registry, provider, budget=64,
                     codecs=codecs)
        # both single decodes and the cross-vocab children all produced terminals
        vocabs = {t.state.vocab for t in result.terminals.values()}
        assert len(vocabs) == 2

    def test_missing_codecs_is_an_error(self):
        initial, actions, schedule, registry, provider, _ = self._setup()
        with pytest.raises(ValueError, match="codecs"):
            run(initial, actions, schedule, registry, provider, budget=64)
