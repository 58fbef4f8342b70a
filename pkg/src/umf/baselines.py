"""Matched-budget comparison methods: Best-of-N, a DTS-like tree, and Pair.

All baselines spend the same currency as the tree search (denoiser forward
passes) and emit the same trace record shape, so the harness can verify and
plot them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Action, MaskedState, NfeLedger, stable_seed
from .denoiser import DenoiserRegistry
from .errors import BudgetTooSmall, ConfigError
from .remask import RatioSchedule
from .transition import full_decode, iter_decode


@dataclass
class BaselineResult:
    best_state: MaskedState
    best_reward: float
    trace: list[dict]
    ledger: NfeLedger
    candidates: int


def _trace_record(iteration, path, nfe_before, nfe_after, reward, best_so_far, budget, **extra):
    record = {
        "iteration": iteration,
        "action_path": list(path),
        "nfe_before": nfe_before,
        "nfe_consumed": nfe_after,
        "reward": reward,
        "cache_hit": False,
        "best_so_far": best_so_far,
        "overshoot": max(0, nfe_after - budget),
    }
    record.update(extra)
    return record


def best_of_n(
    initial_state: MaskedState,
    action: Action,
    budget: int,
    schedule: RatioSchedule,
    registry: DenoiserRegistry,
    reward_provider,
    seed: int = 0,
) -> BaselineResult:
    """Independent full decodes under one action; highest reward wins.

    Stochastic actions get a fresh derived seed per candidate; deterministic
    actions produce identical candidates and deliberately burn the budget on
    duplicates so the comparison stays matched-cost.
    """
    cost = initial_state.masked_count
    n = budget // cost
    if n < 1:
        raise BudgetTooSmall(f"budget {budget} below one decode of {cost} tokens")
    ledger = NfeLedger(budget=budget)
    best_state = None
    best_reward = -1.0
    trace = []
    for i in range(n):
        rng = None
        if not action.is_deterministic:
            rng = np.random.default_rng(stable_seed(seed, action.id, action.rng_seed, i))
        nfe_before = ledger.consumed
        terminal, _ = full_decode(initial_state, action, schedule, registry, ledger, rng=rng)
        reward = float(reward_provider.score(terminal))
        ledger.record_rollout(cache_hit=False)
        if reward > best_reward:
            best_state, best_reward = terminal, reward
        trace.append(
            _trace_record(
                i + 1, [action.id], nfe_before, ledger.consumed, reward, best_reward, budget
            )
        )
    return BaselineResult(best_state, best_reward, trace, ledger, candidates=n)


@dataclass
class _DtsNode:
    state: MaskedState
    parent: "_DtsNode | None" = None
    children: list["_DtsNode"] = field(default_factory=list)
    visit_count: int = 0
    reward_sum: float = 0.0
    closed: bool = False

    def __post_init__(self) -> None:
        self.closed = self.state.fully_unmasked

    @property
    def terminal(self) -> bool:
        return self.state.fully_unmasked

    @property
    def mean(self) -> float:
        return self.reward_sum / self.visit_count if self.visit_count else 0.0


def _close(node: _DtsNode, branch_width: int) -> None:
    node.closed = True
    parent = node.parent
    while parent is not None:
        saturated = parent.terminal or len(parent.children) >= branch_width
        if not saturated or not all(c.closed for c in parent.children):
            break
        parent.closed = True
        parent = parent.parent


def _select_frontier(root: _DtsNode, branch_width: int, c_exp: float) -> _DtsNode | None:
    """Descend through saturated nodes by value; None means a branch closed."""
    node = root
    while True:
        if node.terminal:
            _close(node, branch_width)
            return None
        if len(node.children) < branch_width:
            return node
        open_children = [c for c in node.children if not c.closed]
        if not open_children:
            _close(node, branch_width)
            return None
        best, best_score = None, -math.inf
        for child in open_children:
            bonus = c_exp * math.sqrt(math.log(max(node.visit_count, 1)) / child.visit_count)
            score = child.mean + bonus
            if score > best_score:
                best, best_score = child, score
        node = best


def dts_like(
    initial_state: MaskedState,
    actions: Sequence[Action],
    budget: int,
    schedule: RatioSchedule,
    registry: DenoiserRegistry,
    reward_provider,
    seed: int = 0,
    branch_width: int = 4,
    c_exp: float = 1.0,
) -> BaselineResult:
    """Stochastic trajectory tree: every rollout state becomes a node.

    Approximation of diffusion tree sampling: a node saturated to
    ``branch_width`` children routes selection down by mean value plus a UCT
    bonus; an unsaturated node sprouts a fresh stochastic rollout whose every
    intermediate state joins the tree, and the terminal reward is propagated
    up the new path (node value = mean of backed-up rewards). Branching width
    and the value rule are parameters because the reference algorithm leaves
    them open.
    """
    actions = tuple(actions)
    if all(a.is_deterministic for a in actions):
        raise ConfigError("dts_like needs at least one stochastic action")
    cost = initial_state.masked_count
    if budget < cost:
        raise BudgetTooSmall(f"budget {budget} below one decode of {cost} tokens")
    rng = np.random.default_rng(stable_seed(seed, "dts"))
    ledger = NfeLedger(budget=budget)
    root = _DtsNode(initial_state)
    best_state = None
    best_reward = -1.0
    trace = []
    iteration = 0
    while ledger.consumed < budget and not root.closed:
        node = _select_frontier(root, branch_width, c_exp)
        if node is None:
            continue
        iteration += 1
        nfe_before = ledger.consumed
        action = actions[int(rng.integers(len(actions)))]
        rollout_rng = np.random.default_rng(stable_seed(seed, "dts", iteration))
        tip = node
        for nxt, _ in iter_decode(node.state, action, schedule, registry, ledger, rng=rollout_rng):
            child = _DtsNode(nxt, parent=tip)
            tip.children.append(child)
            tip = child
        reward = float(reward_provider.score(tip.state))
        ledger.record_rollout(cache_hit=False)
        walker = tip
        while walker is not None:
            walker.visit_count += 1
            walker.reward_sum += reward
            walker = walker.parent
        if reward > best_reward:
            best_state, best_reward = tip.state, reward
        trace.append(
            _trace_record(
                iteration, [action.id], nfe_before, ledger.consumed, reward, best_reward, budget
            )
        )
    return BaselineResult(best_state, best_reward, trace, ledger, candidates=iteration)


def pair(
    run_a: Callable[[int], BaselineResult],
    run_b: Callable[[int], BaselineResult],
    budget: int,
) -> BaselineResult:
    """Split the budget evenly between two configurations, keep the better.

    Ties go to the first configuration. The combined ledger is the
    component-wise sum of the arms' ledgers.
    """
    if budget % 2 != 0:
        raise ValueError("pair needs an even budget to split")
    half = budget // 2
    result_a = run_a(half)
    result_b = run_b(half)
    winner = result_a if result_a.best_reward >= result_b.best_reward else result_b
    ledger = NfeLedger(budget=budget)
    ledger.consumed = result_a.ledger.consumed + result_b.ledger.consumed
    ledger.cache_hits = result_a.ledger.cache_hits + result_b.ledger.cache_hits
    ledger.rollouts_total = result_a.ledger.rollouts_total + result_b.ledger.rollouts_total
    offset = result_a.ledger.consumed
    trace = [dict(r) for r in result_a.trace]
    best = max((r["best_so_far"] for r in trace), default=0.0)
    base_iter = len(trace)
    for r in result_b.trace:
        merged = dict(r)
        merged["iteration"] = base_iter + merged["iteration"]
        merged["nfe_before"] += offset
        merged["nfe_consumed"] += offset
        best = max(best, merged["reward"])
        merged["best_so_far"] = best
        merged["overshoot"] = max(0, merged["nfe_consumed"] - budget)
        trace.append(merged)
    candidates = getattr(result_a, "candidates", 0) + getattr(result_b, "candidates", 0)
    return BaselineResult(winner.best_state, winner.best_reward, trace, ledger, candidates)
