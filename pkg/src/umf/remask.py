"""Commit-set selection strategies and the mask-ratio schedule.

A strategy looks at the current state (and usually the denoiser output) and
decides which masked positions to commit this step. Four selectors are
provided: two deterministic confidence rankings (entropy, low_confidence) and
two stochastic ones (origin, random). All TopK selections break ties toward
the lowest position index so deterministic actions stay replayable.

Strategies accept an optional block descriptor restricting them to a
contiguous slice of the generation segment; the default scope is the whole
segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import MaskedState, masked_count_at
from .denoiser import DenoiserOutput, softmax
from .errors import InvalidRatioPair, InvalidSchedule, NoMaskedPositions

Block = tuple[int, int]


@dataclass(frozen=True)
class RemaskDecision:
    """Positions chosen for commitment plus the scores that chose them."""

    commit_set: tuple[int, ...]
    scores: Mapping[int, float] | None = None


@dataclass(frozen=True)
class RatioSchedule:
    """Strictly decreasing residual-mask-ratio targets for tree levels.

    The number of masked tokens at ratio r is the largest count whose ratio
    does not exceed r, so each scheduled step commits a positive number of
    tokens. The final descent from the last ratio to zero is not part of the
    schedule; it always happens inside a rollout.
    """

    ratios: tuple[float, ...]
    block: Block | None = None

    def __post_init__(self) -> None:
        if not self.ratios:
            raise InvalidSchedule("schedule must contain at least one ratio")
        for r in self.ratios:
            if not 0.0 < r < 1.0:
                raise InvalidSchedule(f"ratio {r} outside (0, 1)")
        if any(later >= earlier for earlier, later in zip(self.ratios, self.ratios[1:])):
            raise InvalidSchedule("ratios must strictly decrease")

    @property
    def depth(self) -> int:
        return len(self.ratios)

    def masked_counts(self, n_g: int) -> tuple[int, ...]:
        """Target masked-token count at each scheduled ratio."""
        return tuple(masked_count_at(n_g, r) for r in self.ratios)

    def commit_counts(self, n_g: int) -> tuple[int, ...]:
        """Tokens committed per scheduled step, final descent included.

        Raises if any step would commit nothing, which means the schedule is
        too fine for this generation length.
        """
        counts = (n_g,) + self.masked_counts(n_g) + (0,)
        steps = tuple(a - b for a, b in zip(counts, counts[1:]))
        if any(k < 1 for k in steps):
            raise InvalidSchedule(
                f"schedule {self.ratios} commits zero tokens on some step for n_g={n_g}"
            )
        return steps

    def validate_for(self, n_g: int) -> None:
        self.commit_counts(n_g)


DEFAULT_SCHEDULE = RatioSchedule((0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.2))


def _scoped_positions(state: MaskedState, block: Block | None) -> tuple[int, ...]:
    positions = state.masked_positions
    if block is not None:
        lo, hi = block
        positions = tuple(p for p in positions if lo <= p < hi)
    if not positions:
        raise NoMaskedPositions("no masked positions in scope")
    return positions


def _topk(positions: Sequence[int], scores: Sequence[float], k: int) -> tuple[int, ...]:
    """Positions of the k largest scores; ties go to the lowest position."""
    positions = np.asarray(positions)
    order = np.lexsort((positions, -np.asarray(scores, dtype=np.float64)))
    picked = positions[order[: min(k, len(positions))]]
    return tuple(int(p) for p in np.sort(picked))


def entropy_topk(
    state: MaskedState,
    output: DenoiserOutput,
    k: int,
    probs: np.ndarray | None = None,
    block: Block | None = None,
) -> RemaskDecision:
    """Commit the k masked positions where predictive entropy is lowest.

    Confidence is negative entropy of the model distribution; ``probs`` may
    supply precomputed (possibly suppression-adjusted) rows aligned with
    ``output.positions``, otherwise the plain softmax of the logits is used.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    scope = _scoped_positions(state, block)
    if probs is None:
        probs = softmax(output.logits, axis=1)
    entropies = -np.sum(np.where(probs > 0, probs * np.log(np.maximum(probs, 1e-300)), 0.0), axis=1)
    by_pos = {pos: -entropies[j] for j, pos in enumerate(output.positions)}
    scores = [by_pos[p] for p in scope]
    return RemaskDecision(_topk(scope, scores, k), scores=dict(zip(scope, scores)))


def low_confidence_topk(
    state: MaskedState,
    output: DenoiserOutput,
    proposed: Mapping[int, int],
    k: int,
    confidences: Mapping[int, float] | None = None,
    block: Block | None = None,
) -> RemaskDecision:
    """Commit the k positions whose proposed token has the highest probability.

    ``confidences`` may carry pre-adjusted scores (e.g. EoS proposals zeroed);
    by default confidence is the model probability of the proposed token.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    scope = _scoped_positions(state, block)
    if confidences is None:
        probs = softmax(output.logits, axis=1)
        confidences = {
            pos: float(probs[j, output.vocab.logit_index(proposed[pos])])
            for j, pos in enumerate(output.positions)
        }
    scores = [confidences[p] for p in scope]
    return RemaskDecision(_topk(scope, scores, k), scores=dict(zip(scope, scores)))


def origin_bernoulli(
    state: MaskedState,
    alpha_t: float,
    alpha_prev: float,
    rng: np.random.Generator,
    block: Block | None = None,
) -> RemaskDecision:
    """Independent probabilistic unmasking between two noise levels.

    Each masked position is committed independently with probability
    1 - alpha_prev / alpha_t. The draws are recorded as scores so runs stay
    auditable.
    """
    if not 0.0 < alpha_prev < alpha_t <= 1.0:
        raise InvalidRatioPair(
            f"need 0 < alpha_prev < alpha_t <= 1, got alpha_prev={alpha_prev}, alpha_t={alpha_t}"
        )
    scope = _scoped_positions(state, block)
    p = 1.0 - alpha_prev / alpha_t
    draws = rng.random(len(scope))
    commit = tuple(pos for pos, u in zip(scope, draws) if u < p)
    return RemaskDecision(commit, scores=dict(zip(scope, draws.tolist())))


def random_topk(
    state: MaskedState,
    k: int,
    rng: np.random.Generator,
    block: Block | None = None,
) -> RemaskDecision:
    """Uniformly random selection of k masked positions."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scope = _scoped_positions(state, block)
    draws = rng.random(len(scope))
    return RemaskDecision(
        _topk(scope, draws.tolist(), k), scores=dict(zip(scope, draws.tolist()))
    )
