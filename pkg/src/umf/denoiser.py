"""Forward-pass providers: per-position categorical logits over the candidates.

Every denoiser maps a partially masked state to one logit row per masked
position (committed positions get nothing). The registry is the accounting
choke point: one successful evaluation = one ledger unit, regardless of how
the logits were produced. Batched evaluation is deliberately not offered;
cost is counted per state evaluated, so a batch API would only obscure it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core import MaskedState, NfeLedger, Vocabulary, residual_mask_ratio, stable_seed, state_digest
from .errors import NoMaskedPositions, UnknownDenoiser

# Finite stand-in for log(0): large enough in magnitude that exp() underflows
# to exactly 0.0 even after division by any sane temperature.
LOGIT_FLOOR = -1.0e30


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax in float64."""
    x = np.asarray(logits, dtype=np.float64)
    x = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(x)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class DenoiserOutput:
    """Logits for exactly the masked positions of one evaluated state.

    ``logits[k]`` scores the candidates for ``positions[k]``; columns follow
    ``vocab.candidates``. ``proposed`` optionally carries precomputed argmax
    tokens per position.
    """

    positions: tuple[int, ...]
    logits: np.ndarray
    vocab: Vocabulary
    proposed: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        logits = np.asarray(self.logits, dtype=np.float64)
        object.__setattr__(self, "logits", logits)
        if logits.shape != (len(self.positions), self.vocab.candidate_count):
            raise ValueError(
                f"logits shape {logits.shape} does not match "
                f"{len(self.positions)} positions x {self.vocab.candidate_count} candidates"
            )
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if self.proposed is not None and len(self.proposed) != len(self.positions):
            raise ValueError("proposed tokens must align with positions")

    def row(self, position: int) -> np.ndarray:
        try:
            k = self.positions.index(position)
        except ValueError:
            raise KeyError(f"position {position} was not masked in the evaluated state")
        return self.logits[k]


def tempered_distribution(output: DenoiserOutput, position: int, temperature: float) -> np.ndarray:
    """Probability vector over candidates at the given sampling temperature.

    Temperature 0 is the greedy limit: a point mass on the argmax logit,
    ties broken toward the lowest token id.
    """
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    row = output.row(position)
    if temperature == 0:
        probs = np.zeros_like(row)
        probs[int(np.argmax(row))] = 1.0
        return probs
    return softmax(row / temperature)


def tempered_matrix(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise tempered distributions for a whole logit matrix."""
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    logits = np.asarray(logits, dtype=np.float64)
    if temperature == 0:
        probs = np.zeros_like(logits)
        probs[np.arange(len(logits)), np.argmax(logits, axis=1)] = 1.0
        return probs
    return softmax(logits / temperature, axis=1)


class Denoiser(Protocol):
    """Anything that can score the masked positions of a state."""

    vocab: Vocabulary

    def logits(self, state: MaskedState) -> np.ndarray:
        """Return one row per masked position (ascending), columns over candidates."""
        ...


class ExactPosteriorDenoiser:
    """Desk-scale oracle: the exact conditional over a finite support.

    Given full generation sequences x with probabilities P(x), the
    distribution at masked position i is proportional to the total mass of
    support sequences consistent with the committed tokens and carrying token
    v at i. States consistent with no support sequence fall back to the
    uniform distribution (maximum entropy; documented behavior).
    """

    def __init__(self, vocab: Vocabulary, support: Iterable[tuple[Sequence[int], float]]):
        self.vocab = vocab
        rows = []
        probs = []
        for seq, p in support:
            seq = tuple(seq)
            if p <= 0:
                raise ValueError("support probabilities must be positive")
            for tok in seq:
                if tok == vocab.mask_id or not 0 <= tok < vocab.size:
                    raise ValueError(f"support token {tok} is not a candidate")
            rows.append(seq)
            probs.append(float(p))
        if not rows:
            raise ValueError("support must be non-empty")
        lengths = {len(r) for r in rows}
        if len(lengths) != 1:
            raise ValueError("support sequences must share one length")
        total = sum(probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"support probabilities sum to {total}, expected 1")
        self._seqs = np.array(rows, dtype=np.int64)
        self._probs = np.array(probs, dtype=np.float64)
        self._gen_len = self._seqs.shape[1]

    @property
    def support_sequences(self) -> np.ndarray:
        """Support as an (n_sequences, n_g) id matrix (read-only view)."""
        return self._seqs

    @property
    def support_probs(self) -> np.ndarray:
        return self._probs

    def logits(self, state: MaskedState) -> np.ndarray:
        if state.n_g != self._gen_len:
            raise ValueError(
                f"state generation length {state.n_g} != support length {self._gen_len}"
            )
        gen = np.asarray(state.gen, dtype=np.int64)
        committed = gen != state.vocab.mask_id
        consistent = np.all(self._seqs[:, committed] == gen[committed], axis=1)
        masked_idx = np.flatnonzero(~committed)
        n_cand = self.vocab.candidate_count
        if not np.any(consistent):
            return np.full((len(masked_idx), n_cand), -np.log(n_cand))
        mass = self._probs * consistent
        out = np.empty((len(masked_idx), n_cand))
        for k, j in enumerate(masked_idx):
            weights = np.bincount(self._seqs[:, j], weights=mass, minlength=self.vocab.size)
            p = weights[self.vocab.candidates]
            p = p / p.sum()
            out[k] = np.where(p > 0, np.log(np.maximum(p, 1e-300)), LOGIT_FLOOR)
        return out


class PlantedSkillDenoiser:
    """Deterministic denoiser that is only reliable inside a mask-ratio band.

    Inside ``skill_band`` (inclusive), every masked position gets a high
    margin toward the planted target token. Outside the band the rows are a
    deterministic perturbation seeded by (salt, state digest): unit noise
    plus the same margin on a pseudo-randomly chosen decoy token per
    position, so off-band commits are confidently wrong. Identical states
    always produce bit-identical logits, which is what the trajectory cache
    relies on.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        target: Sequence[int],
        skill_band: tuple[float, float] = (0.0, 1.0),
        margin: float = 8.0,
        salt: int = 0,
    ):
        self.vocab = vocab
        self.target = tuple(target)
        lo, hi = skill_band
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"skill band {skill_band} must satisfy 0 <= lo <= hi <= 1")
        self.skill_band = (float(lo), float(hi))
        self.margin = float(margin)
        self.salt = int(salt)
        for tok in self.target:
            if tok == vocab.mask_id or not 0 <= tok < vocab.size:
                raise ValueError(f"target token {tok} is not a candidate")
        tokens = np.asarray(self.target, dtype=np.int64)
        self._target_cols = np.where(tokens < vocab.mask_id, tokens, tokens - 1)

    def logits(self, state: MaskedState) -> np.ndarray:
        if state.n_g != len(self.target):
            raise ValueError(
                f"state generation length {state.n_g} != target length {len(self.target)}"
            )
        lo, hi = self.skill_band
        in_band = lo <= residual_mask_ratio(state) <= hi
        positions = np.asarray(state.masked_positions, dtype=np.int64)
        n = len(positions)
        n_cand = self.vocab.candidate_count
        target_cols = self._target_cols[positions - state.n_p]
        if in_band:
            out = np.zeros((n, n_cand))
            out[np.arange(n), target_cols] = self.margin
            return out
        rng = np.random.default_rng(stable_seed(self.salt, state_digest(state)))
        out = rng.uniform(0.0, 1.0, (n, n_cand))
        decoys = rng.integers(0, n_cand - 1, n)
        decoys = np.where(decoys >= target_cols, decoys + 1, decoys)
        out[np.arange(n), decoys] += self.margin
        return out


@dataclass
class CountingDenoiser:
    """Test instrumentation: counts forward passes through a wrapped denoiser."""

    inner: Denoiser
    calls: int = 0

    @property
    def vocab(self) -> Vocabulary:
        return self.inner.vocab

    def logits(self, state: MaskedState) -> np.ndarray:
        self.calls += 1
        return self.inner.logits(state)


@dataclass
class DenoiserRegistry:
    """Named denoisers plus the single place evaluations are paid for."""

    _denoisers: dict[str, Denoiser] = field(default_factory=dict)

    def register(self, denoiser_id: str, denoiser: Denoiser) -> None:
        self._denoisers[denoiser_id] = denoiser

    def get(self, denoiser_id: str) -> Denoiser:
        try:
            return self._denoisers[denoiser_id]
        except KeyError:
            raise UnknownDenoiser(f"no denoiser registered under {denoiser_id!r}")

    def ids(self) -> tuple[str, ...]:
        return tuple(self._denoisers)

    def evaluate(self, denoiser_id: str, state: MaskedState, ledger: NfeLedger) -> DenoiserOutput:
        """One forward pass: logits for the masked positions, one NFE charged.

        The ledger is charged only after the denoiser succeeds, so failed
        remote calls cost nothing.
        """
        denoiser = self.get(denoiser_id)
        positions = state.masked_positions
        if not positions:
            raise NoMaskedPositions("state has no masked positions to evaluate")
        rows = denoiser.logits(state)
        output = DenoiserOutput(positions=positions, logits=rows, vocab=denoiser.vocab)
        ledger.charge(1)
        return output
