"""Domain types shared by every other module.

A generation problem lives in a dense token-id space that includes one mask
sentinel. States are immutable snapshots of (prompt, generation segment);
transitions elsewhere always produce new states. The ledger is the single
budget currency: one denoiser forward pass = one unit, cache hits are free.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

# Recorded in experiment output so digests can be reproduced elsewhere.
DIGEST_ALGO = "blake2b-128"

REMASK_STRATEGIES = ("entropy", "low_confidence", "origin", "random")

# Strategies whose EoS handling multiplies probabilities by a penalty factor,
# versus those that zero the confidence of EoS-proposing positions.
_PENALTY_STYLE = frozenset({"entropy", "origin"})
_CONFIDENCE_STYLE = frozenset({"low_confidence", "random"})

DEFAULT_EOS_PENALTY = 1e-12


@dataclass(frozen=True)
class Vocabulary:
    """Dense token-id space 0..size-1 with one mask sentinel.

    ``size`` counts every id including the mask. The candidate set (all ids
    except the mask) is what denoisers emit logits over; eos and pad are
    ordinary candidates and may coincide.
    """

    size: int
    mask_id: int
    eos_id: int
    pad_id: int

    def __post_init__(self) -> None:
        if self.size < 3:
            raise ValueError(f"vocabulary needs at least 3 ids, got {self.size}")
        for name in ("mask_id", "eos_id", "pad_id"):
            value = getattr(self, name)
            if not 0 <= value < self.size:
                raise ValueError(f"{name}={value} outside 0..{self.size - 1}")
        if self.eos_id == self.mask_id or self.pad_id == self.mask_id:
            raise ValueError("eos_id and pad_id must differ from mask_id")

    @property
    def candidate_count(self) -> int:
        """Number of committable tokens (vocabulary size without the mask)."""
        return self.size - 1

    @cached_property
    def candidates(self) -> np.ndarray:
        """All committable token ids, ascending. Logit rows index into this."""
        ids = np.arange(self.size, dtype=np.int64)
        return ids[ids != self.mask_id]

    def logit_index(self, token_id: int) -> int:
        """Column of ``token_id`` in a logit row."""
        if token_id == self.mask_id:
            raise ValueError("mask token has no logit column")
        if not 0 <= token_id < self.size:
            raise ValueError(f"token id {token_id} outside 0..{self.size - 1}")
        return token_id if token_id < self.mask_id else token_id - 1


@dataclass(frozen=True)
class MaskedState:
    """Prompt plus generation segment over the extended vocabulary.

    The prompt never contains the mask token and never changes. Masked
    positions are exactly the generation-segment indices holding the mask id;
    positions use absolute indices (prompt first, generation after).
    """

    vocab: Vocabulary
    prompt: tuple[int, ...]
    gen: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.gen) == 0:
            raise ValueError("generation segment must be non-empty")
        mask = self.vocab.mask_id
        size = self.vocab.size
        for tok in self.prompt:
            if not 0 <= tok < size or tok == mask:
                raise ValueError(f"prompt token {tok} invalid (mask or out of range)")
        for tok in self.gen:
            if not 0 <= tok < size:
                raise ValueError(f"generation token {tok} outside 0..{size - 1}")

    @classmethod
    def initial(cls, vocab: Vocabulary, prompt: Iterable[int], gen_len: int) -> "MaskedState":
        """Fully masked starting state for a ``gen_len``-token generation."""
        return cls(vocab, tuple(prompt), (vocab.mask_id,) * gen_len)

    @property
    def n_p(self) -> int:
        return len(self.prompt)

    @property
    def n_g(self) -> int:
        return len(self.gen)

    @property
    def length(self) -> int:
        return len(self.prompt) + len(self.gen)

    @cached_property
    def masked_positions(self) -> tuple[int, ...]:
        """Absolute indices of masked generation positions, ascending."""
        mask = self.vocab.mask_id
        n_p = len(self.prompt)
        return tuple(n_p + i for i, tok in enumerate(self.gen) if tok == mask)

    @property
    def masked_count(self) -> int:
        return len(self.masked_positions)

    @property
    def fully_unmasked(self) -> bool:
        return not self.masked_positions

    def tokens(self) -> tuple[int, ...]:
        return self.prompt + self.gen

    def gen_token(self, position: int) -> int:
        """Generation-segment token at an absolute position."""
        return self.gen[position - len(self.prompt)]

    def with_committed(self, assignments: Mapping[int, int]) -> "MaskedState":
        """New state with ``assignments`` (absolute position -> token) committed.

        Every assigned position must currently be masked and every token must
        be a candidate (not the mask), so committed tokens can never revert.
        """
        n_p = len(self.prompt)
        mask = self.vocab.mask_id
        gen = list(self.gen)
        for pos, tok in assignments.items():
            if pos < n_p or pos >= self.length:
                raise ValueError(f"position {pos} outside generation segment")
            if gen[pos - n_p] != mask:
                raise ValueError(f"position {pos} is already committed")
            if tok == mask or not 0 <= tok < self.vocab.size:
                raise ValueError(f"token {tok} is not committable")
            gen[pos - n_p] = tok
        return MaskedState(self.vocab, self.prompt, tuple(gen))


def residual_mask_ratio(state: MaskedState) -> float:
    """Fraction of generation positions still masked, in [0, 1]."""
    return state.masked_count / state.n_g


def state_digest(state: MaskedState) -> str:
    """128-bit content digest of (prompt, gen), stable across processes."""
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<I", len(state.prompt)))
    h.update(np.asarray(state.prompt + state.gen, dtype="<u4").tobytes())
    return h.hexdigest()


def stable_seed(*parts: object) -> int:
    """Deterministic 63-bit seed derived from arbitrary hashable parts.

    Replaces Python's salted ``hash`` so stochastic actions replay across
    processes.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & (2**63 - 1)


def masked_count_at(n_g: int, ratio: float) -> int:
    """Largest masked-token count whose residual ratio is <= ``ratio``.

    The small epsilon keeps exact products like 100 * 0.7 from rounding
    below their true integer value.
    """
    if ratio <= 0.0:
        return 0
    return min(n_g, math.floor(n_g * ratio + 1e-9))


@dataclass(frozen=True)
class Action:
    """One inference configuration: a discrete branch label for the search.

    With ``temperature`` 0 and a deterministic remask strategy the induced
    transition is fully deterministic (ties always break toward the lowest
    token id or position index), which is what makes trajectory caching safe.
    """

    id: str
    denoiser_id: str
    temperature: float = 0.0
    remask: str = "entropy"
    rng_seed: int | None = None
    eos_suppression: bool = False
    eos_penalty: float = DEFAULT_EOS_PENALTY

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.remask not in REMASK_STRATEGIES:
            raise ValueError(f"unknown remask strategy {self.remask!r}")
        if not self.id:
            raise ValueError("action id must be non-empty")

    @property
    def is_deterministic(self) -> bool:
        return self.temperature == 0 and self.remask in ("entropy", "low_confidence")

    @property
    def penalty_style_suppression(self) -> bool:
        """True for strategies that damp EoS/pad probabilities multiplicatively."""
        return self.remask in _PENALTY_STYLE

    @property
    def confidence_style_suppression(self) -> bool:
        """True for strategies that zero the confidence of EoS proposals."""
        return self.remask in _CONFIDENCE_STYLE


@dataclass
class NfeLedger:
    """Monotone counter of denoiser forward passes against a budget.

    Cache hits never touch ``consumed``; they are tracked separately so the
    hit rate (cache-hit rollouts / total rollouts) can be reported.
    """

    budget: int
    consumed: int = 0
    cache_hits: int = 0
    rollouts_total: int = 0

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be positive")

    def charge(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("consumed never decreases")
        self.consumed += n

    def record_rollout(self, cache_hit: bool) -> None:
        self.rollouts_total += 1
        if cache_hit:
            self.cache_hits += 1

    @property
    def cache_hit_rate(self) -> float:
        if self.rollouts_total == 0:
            return 0.0
        return self.cache_hits / self.rollouts_total

    @property
    def remaining(self) -> int:
        return self.budget - self.consumed
