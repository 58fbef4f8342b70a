"""Budgeted MCTS over deterministic partial-unmasking actions.

Tree levels follow a fixed residual-mask-ratio schedule: the root holds the
fully masked state and a child at depth d holds the state after advancing to
the d-th scheduled ratio under one action. Expanding a node advances one
untried action to the next scheduled ratio, then continues a rollout under
that same action to a fully unmasked terminal, which the reward provider
scores. Every rollout boundary state is cached, so a later expansion of an
already-traversed (state, action) pair costs nothing; the final descent past
the last scheduled ratio happens only inside rollouts, never as a tree level.

The loop condition is checked before each iteration, so a run can overshoot
its budget by at most one expansion-plus-rollout; the trace records the exact
overshoot. Untried actions expand in registration order, which is why the
strongest deterministic configuration should be registered first: it makes
the low-budget behavior equal to that configuration's plain decode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .core import Action, MaskedState, NfeLedger, stable_seed, state_digest
from .denoiser import DenoiserRegistry
from .errors import BudgetTooSmall, NoUntriedActions, TreeExhausted
from .remask import RatioSchedule
from .transition import full_decode


@dataclass
class TreeNode:
    """Search-tree node: a partially masked state at a scheduled ratio."""

    state: MaskedState
    depth: int
    parent: "TreeNode | None" = None
    action_id: str | None = None
    visit_count: int = 0
    reward_sum: float = 0.0
    children: dict[str, "TreeNode"] = field(default_factory=dict)
    untried_actions: list[Action] = field(default_factory=list)
    exhausted: bool = False
    expansion_seed: int | None = None

    @property
    def mean_reward(self) -> float:
        return self.reward_sum / self.visit_count if self.visit_count else 0.0

    def path_actions(self) -> tuple[str, ...]:
        """Action ids along the root-to-node path."""
        ids: list[str] = []
        node = self
        while node.parent is not None:
            ids.append(node.action_id)
            node = node.parent
        return tuple(reversed(ids))


class RolloutCache:
    """Trajectory and score store keyed by (state digest, action key).

    ``steps`` replays single transitions; ``rollouts`` jumps a whole
    expansion (next boundary state plus terminal); ``scores`` holds terminal
    rewards so they are never recomputed. Deterministic actions key on their
    id alone; stochastic ones key on (id, seed) and are never reused across
    seeds.
    """

    def __init__(self) -> None:
        self.states: dict[str, MaskedState] = {}
        self.steps: dict[tuple[str, Hashable], str] = {}
        self.rollouts: dict[tuple[str, Hashable], tuple[str, str]] = {}
        self.scores: dict[tuple[str, Hashable], float] = {}

    def intern(self, state: MaskedState) -> str:
        digest = state_digest(state)
        self.states.setdefault(digest, state)
        return digest

    def record_step(self, state: MaskedState, action_key: Hashable, nxt: MaskedState) -> None:
        self.steps[(self.intern(state), action_key)] = self.intern(nxt)

    def replay_step(self, state: MaskedState, action_key: Hashable) -> MaskedState | None:
        nxt = self.steps.get((state_digest(state), action_key))
        return self.states[nxt] if nxt is not None else None

    def record_rollout(
        self, state: MaskedState, action_key: Hashable, child: MaskedState, terminal: MaskedState
    ) -> None:
        key = (self.intern(state), action_key)
        self.rollouts[key] = (self.intern(child), self.intern(terminal))

    def lookup_rollout(
        self, state: MaskedState, action_key: Hashable
    ) -> tuple[MaskedState, float] | None:
        key = (state_digest(state), action_key)
        hit = self.rollouts.get(key)
        if hit is None:
            return None
        child_digest, term_digest = hit
        reward = self.scores.get((term_digest, key[1]))
        if reward is None:
            return None
        return self.states[child_digest], reward

    def terminal_of(self, state: MaskedState, action_key: Hashable) -> MaskedState:
        _, term_digest = self.rollouts[(state_digest(state), action_key)]
        return self.states[term_digest]


@dataclass(frozen=True)
class TerminalRecord:
    state: MaskedState
    reward: float
    order: int
    path: tuple[str, ...]


@dataclass
class SearchResult:
    """Outcome of one budgeted search run."""

    best_state: MaskedState
    best_reward: float
    best_path: tuple[str, ...]
    trace: list[dict]
    ledger: NfeLedger
    root: TreeNode
    tree_exhausted: bool
    terminals: dict[str, TerminalRecord]
    cache: RolloutCache | None

    @property
    def overshoot(self) -> int:
        return max(0, self.ledger.consumed - self.ledger.budget)


def uct_score(node: TreeNode, parent_visits: int, c_exp: float = 1.0) -> float:
    """Mean reward plus the exploration bonus; unvisited nodes score infinity."""
    if parent_visits < 1:
        raise ValueError("parent_visits must be at least 1")
    if node.visit_count == 0:
        return math.inf
    return node.reward_sum / node.visit_count + c_exp * math.sqrt(
        math.log(parent_visits) / node.visit_count
    )


def _mark_exhausted(node: TreeNode) -> None:
    node.exhausted = True
    parent = node.parent
    while parent is not None:
        if parent.untried_actions or not all(c.exhausted for c in parent.children.values()):
            break
        parent.exhausted = True
        parent = parent.parent


def select(root: TreeNode, c_exp: float = 1.0) -> tuple[TreeNode, int]:
    """Descend by UCT to a node with untried actions.

    A branch that bottoms out at terminal depth (nothing left to expand) is
    masked out and selection restarts; the number of restarts is reported so
    the trace can note them. Raises once the whole tree is exhausted.
    """
    reselects = 0
    while True:
        if root.exhausted:
            raise TreeExhausted("every node is fully expanded at terminal depth")
        node = root
        while not node.untried_actions:
            candidates = [c for c in node.children.values() if not c.exhausted]
            if not candidates:
                _mark_exhausted(node)
                reselects += 1
                break
            best = candidates[0]
            best_score = uct_score(best, node.visit_count, c_exp)
            for child in candidates[1:]:
                score = uct_score(child, node.visit_count, c_exp)
                if score > best_score:
                    best, best_score = child, score
            node = best
        else:
            return node, reselects


def backup(node: TreeNode, reward: float) -> None:
    """Add the reward to the node and every ancestor up to the root."""
    while node is not None:
        node.visit_count += 1
        node.reward_sum += reward
        node = node.parent


@dataclass
class _SearchContext:
    registry: DenoiserRegistry
    schedule: RatioSchedule
    reward_provider: object
    actions: tuple[Action, ...]
    ledger: NfeLedger
    cache: RolloutCache | None
    master_seed: int
    codecs: dict | None = None  # Vocabulary -> codec, for cross-vocab actions
    terminals: dict[str, TerminalRecord] = field(default_factory=dict)

    def register_terminal(self, state: MaskedState, reward: float, path: tuple[str, ...]) -> None:
        digest = state_digest(state)
        if digest not in self.terminals:
            self.terminals[digest] = TerminalRecord(state, reward, len(self.terminals), path)


@dataclass(frozen=True)
class ExpandOutcome:
    child: TreeNode
    reward: float
    cache_hit: bool
    seed: int | None
    reward_flags: tuple[str, ...]


def expand(node: TreeNode, ctx: _SearchContext) -> ExpandOutcome:
    """Create one child for the next untried action, rollout, and score it.

    A cached (state, action) pair returns its recorded child and reward with
    zero evaluations; otherwise the new trajectory and terminal score are
    computed once and cached at every boundary on the way down.
    """
    if not node.untried_actions:
        raise NoUntriedActions(f"node at depth {node.depth} is fully expanded")
    action = node.untried_actions.pop(0)
    seed = None
    action_key: Hashable = action.id
    if not action.is_deterministic:
        seed = stable_seed(
            ctx.master_seed, state_digest(node.state), action.id, action.rng_seed
        )
        action_key = (action.id, seed)

    flags: tuple[str, ...] = ()
    cached = ctx.cache.lookup_rollout(node.state, action_key) if ctx.cache is not None else None
    if cached is not None:
        child_state, reward = cached
        terminal = ctx.cache.terminal_of(node.state, action_key)
        cache_hit = True
    else:
        rng = np.random.default_rng(seed) if seed is not None else None
        work_state = node.state
        action_vocab = ctx.registry.get(action.denoiser_id).vocab
        if action_vocab != work_state.vocab:
            # heterogeneous tokenizers: re-express the state once, here at the
            # expansion node; the rollout below never switches again
            from .tokmap import map_state

            if ctx.codecs is None:
                raise ValueError(
                    f"action {action.id!r} uses a different vocabulary and no codecs were given"
                )
            work_state = map_state(
                work_state, ctx.codecs[work_state.vocab], ctx.codecs[action_vocab]
            )
        terminal, boundaries = full_decode(
            work_state,
            action,
            ctx.schedule,
            ctx.registry,
            ctx.ledger,
            cache=ctx.cache,
            action_key=action_key,
            rng=rng,
        )
        child_state = boundaries[0]
        term_digest = state_digest(terminal)
        score_key = (term_digest, action_key)
        if ctx.cache is not None and score_key in ctx.cache.scores:
            reward = ctx.cache.scores[score_key]
        else:
            reward = float(ctx.reward_provider.score(terminal))
            if not 0.0 <= reward <= 1.0:
                raise ValueError(f"reward provider returned {reward}, outside [0, 1]")
            flags = tuple(getattr(ctx.reward_provider, "last_flags", ()))
            if ctx.cache is not None:
                ctx.cache.scores[score_key] = reward
        if ctx.cache is not None:
            chain = [node.state] + boundaries
            for prev, nxt in zip(chain, chain[1:]):
                ctx.cache.record_rollout(prev, action_key, nxt, terminal)
        cache_hit = False
    ctx.ledger.record_rollout(cache_hit=cache_hit)

    child_depth = node.depth + 1
    child = TreeNode(
        state=child_state,
        depth=child_depth,
        parent=node,
        action_id=action.id,
        untried_actions=list(ctx.actions) if child_depth < ctx.schedule.depth else [],
        expansion_seed=seed,
    )
    node.children[action.id] = child
    ctx.register_terminal(terminal, reward, child.path_actions())
    return ExpandOutcome(child, reward, cache_hit, seed, flags)


def _check_tree(node: TreeNode) -> None:
    """Visit counts must dominate the sum over children at every node."""
    total = sum(c.visit_count for c in node.children.values())
    if node.visit_count < total:
        raise AssertionError(
            f"tree inconsistency at depth {node.depth}: {node.visit_count} < {total}"
        )
    for child in node.children.values():
        _check_tree(child)


def select_best(terminals: dict[str, TerminalRecord]) -> TerminalRecord:
    """Highest-reward terminal; ties go to the earliest discovered."""
    return max(terminals.values(), key=lambda t: (t.reward, -t.order))


def run(
    initial_state: MaskedState,
    actions: list[Action] | tuple[Action, ...],
    schedule: RatioSchedule,
    registry: DenoiserRegistry,
    reward_provider,
    budget: int,
    cache_enabled: bool = True,
    seed: int = 0,
    c_exp: float = 1.0,
    codecs: dict | None = None,
    check_invariants: bool = True,
) -> SearchResult:
    """Select/Expand/Backup until the evaluation budget is exhausted.

    Returns the fully unmasked candidate with the highest recorded reward and
    a machine-readable trace with one record per iteration. ``codecs`` maps
    each vocabulary to its codec and is only needed when actions span
    heterogeneous vocabularies.
    """
    actions = tuple(actions)
    if not actions:
        raise ValueError("action set must be non-empty")
    if budget < initial_state.masked_count:
        raise BudgetTooSmall(
            f"budget {budget} cannot fit one full decode of {initial_state.masked_count} tokens"
        )
    schedule.validate_for(initial_state.n_g)
    ledger = NfeLedger(budget=budget)
    cache = RolloutCache() if cache_enabled else None
    ctx = _SearchContext(
        registry=registry,
        schedule=schedule,
        reward_provider=reward_provider,
        actions=actions,
        ledger=ledger,
        cache=cache,
        master_seed=seed,
        codecs=codecs,
    )
    root = TreeNode(state=initial_state, depth=0, untried_actions=list(actions))
    trace: list[dict] = []
    tree_exhausted = False
    best_so_far = 0.0
    iteration = 0
    while ledger.consumed < budget:
        try:
            node, reselects = select(root, c_exp)
        except TreeExhausted:
            tree_exhausted = True
            break
        nfe_before = ledger.consumed
        outcome = expand(node, ctx)
        backup(outcome.child, outcome.reward)
        iteration += 1
        best_so_far = max(best_so_far, outcome.reward)
        record = {
            "iteration": iteration,
            "action_path": list(outcome.child.path_actions()),
            "nfe_before": nfe_before,
            "nfe_consumed": ledger.consumed,
            "reward": outcome.reward,
            "cache_hit": outcome.cache_hit,
            "best_so_far": best_so_far,
            "overshoot": max(0, ledger.consumed - budget),
        }
        if reselects:
            record["reselects"] = reselects
        if outcome.seed is not None:
            record["rollout_seed"] = outcome.seed
        if outcome.reward_flags:
            record["reward_flags"] = list(outcome.reward_flags)
        trace.append(record)
        if check_invariants:
            _check_tree(root)
            if root.visit_count != iteration:
                raise AssertionError("root visits diverged from iteration count")
    if tree_exhausted and trace:
        trace[-1]["tree_exhausted"] = True
    best = select_best(ctx.terminals)
    return SearchResult(
        best_state=best.state,
        best_reward=best.reward,
        best_path=best.path,
        trace=trace,
        ledger=ledger,
        root=root,
        tree_exhausted=tree_exhausted,
        terminals=ctx.terminals,
        cache=cache,
    )
