"""Desk-scale synthetic tasks with enumerable ground truth.

The planted pair task wires two band-limited denoisers so that no single
action can decode the hidden target, but switching actions at the band
boundary can. Random instances feed the exhaustive-search oracle: small
enough that every action sequence can be decoded and scored directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Action, MaskedState, NfeLedger, Vocabulary
from .denoiser import DenoiserRegistry, ExactPosteriorDenoiser, PlantedSkillDenoiser
from .remask import RatioSchedule
from .reward import ExactMatchReward
from .transition import unmask_to_next_ratio


@dataclass
class Task:
    """Everything one synthetic problem needs to run any method."""

    initial_state: MaskedState
    actions: tuple[Action, ...]
    registry: DenoiserRegistry
    reward_provider: ExactMatchReward
    schedule: RatioSchedule
    target: tuple[int, ...]


def planted_pair_task(seed: int, n_g: int = 8) -> Task:
    """Two denoisers skilled on complementary halves of the unmasking run.

    The early specialist is reliable while the residual mask ratio stays
    above one half, the late specialist below it; outside its band each one
    confidently commits wrong tokens. The schedule places a tree level
    exactly at the hand-off ratio, so one specific action switch reaches the
    target and every single-action decode scores one half.
    """
    if n_g % 4 != 0:
        raise ValueError("n_g must be divisible by 4 so the hand-off ratio is exact")
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(size=10, mask_id=9, eos_id=7, pad_id=8)
    plain = [t for t in range(vocab.size) if t not in (vocab.mask_id, vocab.eos_id, vocab.pad_id)]
    target = tuple(int(rng.choice(plain)) for _ in range(n_g))
    prompt = (int(rng.choice(plain)),)
    registry = DenoiserRegistry()
    # Bands are split just above 0.5: evaluations at ratio > 0.5 belong to the
    # early specialist, evaluations at ratio <= 0.5 to the late one.
    registry.register(
        "early", PlantedSkillDenoiser(vocab, target, (0.5 + 1e-9, 1.0), salt=seed * 2 + 1)
    )
    registry.register(
        "late", PlantedSkillDenoiser(vocab, target, (0.0, 0.5), salt=seed * 2 + 2)
    )
    actions = (
        Action("a_early", "early", 0.0, "entropy"),
        Action("a_late", "late", 0.0, "entropy"),
    )
    schedule = RatioSchedule((0.75, 0.5, 0.25))
    return Task(
        initial_state=MaskedState.initial(vocab, prompt, n_g),
        actions=actions,
        registry=registry,
        reward_provider=ExactMatchReward(target),
        schedule=schedule,
        target=target,
    )


def random_instance(seed: int, max_actions: int = 3, max_depth: int = 4, max_gen: int = 12) -> Task:
    """Random deterministic-action task for the exhaustive-search oracle."""
    rng = np.random.default_rng(seed)
    n_g = int(rng.integers(4, max_gen + 1))
    vocab = Vocabulary(size=int(rng.integers(6, 11)), mask_id=0, eos_id=1, pad_id=2)
    # mask first in this family: exercises the non-trailing mask-id layout
    plain = [t for t in range(vocab.size) if t != vocab.mask_id]
    target = tuple(int(rng.choice(plain)) for _ in range(n_g))

    depth = int(rng.integers(2, max_depth + 1))
    counts = rng.choice(np.arange(1, n_g), size=min(depth, n_g - 1), replace=False)
    ratios = tuple(sorted((int(c) / n_g for c in counts), reverse=True))
    schedule = RatioSchedule(ratios)

    n_actions = int(rng.integers(1, max_actions + 1))
    registry = DenoiserRegistry()
    actions = []
    for k in range(n_actions):
        den_id = f"d{k}"
        if rng.random() < 0.3:
            support = []
            weights = rng.dirichlet(np.ones(3))
            for w in weights:
                seq = tuple(int(rng.choice(plain)) for _ in range(n_g))
                support.append((seq, float(w)))
            registry.register(den_id, ExactPosteriorDenoiser(vocab, support))
        else:
            lo = float(rng.uniform(0.0, 0.6))
            hi = float(rng.uniform(lo + 0.2, 1.0))
            den_target = target if rng.random() < 0.6 else tuple(
                int(rng.choice(plain)) for _ in range(n_g)
            )
            registry.register(
                den_id,
                PlantedSkillDenoiser(vocab, den_target, (lo, hi), salt=seed * 17 + k),
            )
        remask = "entropy" if rng.random() < 0.5 else "low_confidence"
        actions.append(Action(f"a{k}", den_id, 0.0, remask))
    return Task(
        initial_state=MaskedState.initial(vocab, (int(rng.choice(plain)),), n_g),
        actions=tuple(actions),
        registry=registry,
        reward_provider=ExactMatchReward(target),
        schedule=schedule,
        target=target,
    )


def decode_with_plan(
    state: MaskedState,
    plan: Sequence[Action],
    schedule: RatioSchedule,
    registry: DenoiserRegistry,
    ledger: NfeLedger,
) -> MaskedState:
    """Decode with one fixed action per scheduled segment.

    The final descent past the last scheduled ratio runs under the last
    action of the plan, mirroring how a rollout continues its expansion
    action.
    """
    if len(plan) != schedule.depth:
        raise ValueError(f"plan length {len(plan)} != schedule depth {schedule.depth}")
    for ratio, action in zip(schedule.ratios, plan):
        state = unmask_to_next_ratio(state, action, ratio, registry, ledger)
    return unmask_to_next_ratio(state, plan[-1], 0.0, registry, ledger)


def brute_force_best(task: Task) -> tuple[float, tuple[str, ...]]:
    """Decode and score every action sequence; return the best (reward, plan).

    Ties go to the lexicographically first plan in action registration
    order, matching the order the tree search enumerates.
    """
    best_reward = -1.0
    best_plan: tuple[str, ...] = ()
    for plan in itertools.product(task.actions, repeat=task.schedule.depth):
        ledger = NfeLedger(budget=10**9)
        terminal = decode_with_plan(
            task.initial_state, plan, task.schedule, task.registry, ledger
        )
        reward = task.reward_provider.score(terminal)
        if reward > best_reward:
            best_reward = reward
            best_plan = tuple(a.id for a in plan)
    return best_reward, best_plan


def certify_interleaving_only(task: Task) -> bool:
    """True when every constant plan scores < 1 but some mixed plan reaches 1."""
    best_mixed = -1.0
    best_constant = -1.0
    for plan in itertools.product(task.actions, repeat=task.schedule.depth):
        ledger = NfeLedger(budget=10**9)
        terminal = decode_with_plan(
            task.initial_state, plan, task.schedule, task.registry, ledger
        )
        reward = task.reward_provider.score(terminal)
        if len(set(a.id for a in plan)) == 1:
            best_constant = max(best_constant, reward)
        best_mixed = max(best_mixed, reward)
    return best_mixed == 1.0 and best_constant < 1.0
