"""Unmasking transitions: atomic steps and ratio-targeted segments.

An atomic step evaluates the action's denoiser once (one ledger unit unless
replayed from the step cache), proposes one token per masked position from
the tempered distribution, asks the action's remask strategy for a commit
set of size one, and commits it. Exactly one token per evaluation keeps the
budget arithmetic uniform across strategies.

Ratio-to-count conversion: the masked-token count at ratio r is the largest
count whose ratio does not exceed r, so a segment from ratio a to ratio b on
n_g tokens costs count(a) - count(b) evaluations when uncached.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Hashable, Iterator

import numpy as np

from .core import Action, MaskedState, NfeLedger, masked_count_at, residual_mask_ratio
from .denoiser import DenoiserRegistry, softmax, tempered_matrix
from .errors import FullyUnmasked
from .remask import (
    RatioSchedule,
    RemaskDecision,
    entropy_topk,
    low_confidence_topk,
    origin_bernoulli,
    random_topk,
)

if TYPE_CHECKING:
    from .search import RolloutCache


def _normalize_rows(probs: np.ndarray) -> np.ndarray:
    totals = probs.sum(axis=1, keepdims=True)
    return probs / np.where(totals > 0, totals, 1.0)


def apply_eos_suppression(action: Action, scores: np.ndarray, vocab, proposed=None) -> np.ndarray:
    """Adjust scores so EoS padding cannot be committed prematurely.

    Penalty-style actions (entropy/origin) multiply the EoS and pad columns
    of probability rows by the configured penalty; the caller renormalizes
    before use. Confidence-style actions (low_confidence/random) zero the
    entries whose proposed token is EoS. With suppression off the input is
    returned unchanged.
    """
    if not action.eos_suppression:
        return scores
    out = np.array(scores, dtype=np.float64, copy=True)
    if action.penalty_style_suppression:
        out[..., vocab.logit_index(vocab.eos_id)] *= action.eos_penalty
        if vocab.pad_id != vocab.eos_id:
            out[..., vocab.logit_index(vocab.pad_id)] *= action.eos_penalty
        return out
    proposed = np.asarray(proposed)
    out[proposed == vocab.eos_id] = 0.0
    return out


def _propose(probs: np.ndarray, vocab, temperature: float, rng: np.random.Generator | None):
    """Token proposal per row: argmax for the greedy limit, sampling otherwise."""
    if temperature == 0:
        cols = np.argmax(probs, axis=1)
    else:
        if rng is None:
            raise ValueError("stochastic proposals need an rng")
        normed = _normalize_rows(probs)
        u = rng.random(len(probs))
        cols = (normed.cumsum(axis=1) < u[:, None]).sum(axis=1)
        cols = np.minimum(cols, probs.shape[1] - 1)
    return vocab.candidates[cols]


def unmask_step(
    state: MaskedState,
    action: Action,
    registry: DenoiserRegistry,
    ledger: NfeLedger,
    rng: np.random.Generator | None = None,
    origin_alphas: tuple[float, float] | None = None,
) -> MaskedState:
    """One atomic transition: evaluate, propose, commit exactly one token.

    ``origin_alphas`` carries the (current ratio, segment target ratio) pair
    the origin strategy draws with; a target of zero selects every masked
    position. Among the drawn candidates exactly one position is committed,
    chosen by the entropy criterion, and an empty draw falls back to the most
    confident position overall so progress is guaranteed.
    """
    if state.fully_unmasked:
        raise FullyUnmasked("state has no masked positions")
    vocab = state.vocab
    output = registry.evaluate(action.denoiser_id, state, ledger)

    raw = softmax(output.logits, axis=1)
    penalize = action.eos_suppression and action.penalty_style_suppression
    if penalize:
        raw = _normalize_rows(apply_eos_suppression(action, raw, vocab))
    if action.temperature == 0:
        # Greedy proposals read the (possibly penalized) model distribution.
        proposal_probs = raw
    else:
        proposal_probs = tempered_matrix(output.logits, action.temperature)
        if penalize:
            proposal_probs = _normalize_rows(apply_eos_suppression(action, proposal_probs, vocab))

    tokens = _propose(proposal_probs, vocab, action.temperature, rng)
    proposed = {pos: int(tok) for pos, tok in zip(output.positions, tokens)}

    if action.remask == "entropy":
        decision = entropy_topk(state, output, 1, probs=raw)
    elif action.remask == "low_confidence":
        confidences = np.array(
            [raw[j, vocab.logit_index(proposed[pos])] for j, pos in enumerate(output.positions)]
        )
        confidences = apply_eos_suppression(
            action, confidences, vocab, proposed=[proposed[p] for p in output.positions]
        )
        decision = low_confidence_topk(
            state, output, proposed, 1,
            confidences=dict(zip(output.positions, confidences.tolist())),
        )
    elif action.remask == "random":
        if rng is None:
            raise ValueError("random remask needs an rng")
        decision = random_topk(state, 1, rng)
    else:  # origin
        if rng is None:
            raise ValueError("origin remask needs an rng")
        if origin_alphas is None:
            raise ValueError("origin remask needs (alpha_t, alpha_prev)")
        alpha_t, alpha_prev = origin_alphas
        if alpha_prev > 0:
            drawn = origin_bernoulli(state, alpha_t, alpha_prev, rng).commit_set
        else:
            drawn = state.masked_positions
        ranking = entropy_topk(state, output, len(output.positions), probs=raw)
        pool = drawn if drawn else ranking.commit_set
        best = max(pool, key=lambda p: (ranking.scores[p], -p))
        decision = RemaskDecision((best,), scores=ranking.scores)

    return state.with_committed({pos: proposed[pos] for pos in decision.commit_set})


def _advance(
    state: MaskedState,
    action: Action,
    registry: DenoiserRegistry,
    ledger: NfeLedger,
    cache: "RolloutCache | None",
    action_key: Hashable,
    rng: np.random.Generator | None,
    target_ratio: float,
) -> MaskedState:
    """One step forward, replayed from the step cache when possible."""
    if cache is not None:
        cached = cache.replay_step(state, action_key)
        if cached is not None:
            return cached
    nxt = unmask_step(
        state,
        action,
        registry,
        ledger,
        rng=rng,
        origin_alphas=(residual_mask_ratio(state), target_ratio),
    )
    if cache is not None:
        cache.record_step(state, action_key, nxt)
    return nxt


def _resolve_key(action: Action, cache, action_key: Hashable | None) -> Hashable:
    if cache is None or action_key is not None:
        return action_key
    if not action.is_deterministic:
        raise ValueError("stochastic actions must be cached under a seed-qualified key")
    return action.id


def unmask_to_next_ratio(
    state: MaskedState,
    action: Action,
    target_ratio: float,
    registry: DenoiserRegistry,
    ledger: NfeLedger,
    cache: "RolloutCache | None" = None,
    action_key: Hashable | None = None,
    rng: np.random.Generator | None = None,
) -> MaskedState:
    """Apply atomic steps under a fixed action until the ratio target is met.

    Returns the first state whose residual mask ratio is at or below
    ``target_ratio``. Every atomic step is written to the cache, so an
    identical later call replays at zero cost.
    """
    target_count = masked_count_at(state.n_g, target_ratio)
    if state.masked_count <= target_count:
        raise ValueError(
            f"target ratio {target_ratio} already satisfied at {residual_mask_ratio(state):.4f}"
        )
    action_key = _resolve_key(action, cache, action_key)
    while state.masked_count > target_count:
        state = _advance(state, action, registry, ledger, cache, action_key, rng, target_ratio)
    return state


def iter_decode(
    state: MaskedState,
    action: Action,
    schedule: RatioSchedule,
    registry: DenoiserRegistry,
    ledger: NfeLedger,
    cache: "RolloutCache | None" = None,
    action_key: Hashable | None = None,
    rng: np.random.Generator | None = None,
) -> Iterator[tuple[MaskedState, bool]]:
    """Drive a state to fully unmasked, yielding (state, at_boundary) per step.

    Boundaries are the scheduled ratio targets plus the terminal. Segments
    already satisfied by the starting state are skipped, so the same call
    works from any mid-trajectory node.
    """
    action_key = _resolve_key(action, cache, action_key)
    n_g = state.n_g
    segments = [
        (masked_count_at(n_g, r), r)
        for r in schedule.ratios
        if masked_count_at(n_g, r) < state.masked_count
    ]
    if not segments or segments[-1][0] != 0:
        segments.append((0, 0.0))
    for target_count, target_ratio in segments:
        while state.masked_count > target_count:
            state = _advance(
                state, action, registry, ledger, cache, action_key, rng, target_ratio
            )
            yield state, state.masked_count == target_count


def full_decode(
    state: MaskedState,
    action: Action,
    schedule: RatioSchedule,
    registry: DenoiserRegistry,
    ledger: NfeLedger,
    cache: "RolloutCache | None" = None,
    action_key: Hashable | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[MaskedState, list[MaskedState]]:
    """Decode to a terminal under one action; returns (terminal, boundaries).

    Boundaries are the states at each remaining scheduled ratio plus the
    terminal, in order; they are what rollout caching keys on.
    """
    boundaries = []
    for nxt, at_boundary in iter_decode(
        state, action, schedule, registry, ledger, cache=cache, action_key=action_key, rng=rng
    ):
        if at_boundary:
            boundaries.append(nxt)
        state = nxt
    return state, boundaries
