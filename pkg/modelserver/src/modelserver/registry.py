"""Served models: metadata, codec, and one forward pass per request.

A served model exposes candidate-vocabulary logits for the masked positions
of a token sequence. ``TableModel`` is the desk-scale reference; wrapping a
real pretrained network means implementing the same five metadata fields
plus ``logits`` (typically a thin adapter around the framework's forward
call) and registering it - the HTTP layer never changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .codec import PieceCodec


class ServedModel(Protocol):
    model_id: str
    vocab_size: int  # candidate count; the extended space adds one mask id
    mask_id: int
    eos_id: int
    pad_id: int

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...

    def logits(
        self, tokens: Sequence[int], prompt_len: int, positions: Sequence[int]
    ) -> list[list[float]]:
        """One forward pass: a row of ``vocab_size`` floats per position."""
        ...


def _logit_column(token_id: int, mask_id: int) -> int:
    return token_id if token_id < mask_id else token_id - 1


@dataclass
class TableModel:
    """Deterministic reference model backed by a piece codec.

    With a ``template`` sequence the model pushes each masked generation
    position toward the template token (mod template length); without one it
    emits flat logits. Either way identical requests produce identical rows.
    """

    model_id: str
    codec: PieceCodec
    mask_id: int
    eos_id: int
    pad_id: int
    template: tuple[int, ...] | None = None
    margin: float = 8.0

    def __post_init__(self) -> None:
        table_max = max(self.codec.pieces, default=-1)
        self.vocab_size = max(table_max + 1, self.mask_id, self.eos_id, self.pad_id)
        for name, special in (("mask", self.mask_id), ("eos", self.eos_id), ("pad", self.pad_id)):
            if special in self.codec.pieces:
                raise ValueError(f"{name} id {special} collides with a text piece")

    def encode(self, text: str) -> list[int]:
        return self.codec.encode(text)

    def decode(self, ids: Sequence[int]) -> str:
        return self.codec.decode(list(ids))

    def logits(
        self, tokens: Sequence[int], prompt_len: int, positions: Sequence[int]
    ) -> list[list[float]]:
        rows = np.zeros((len(positions), self.vocab_size))
        if self.template:
            for k, pos in enumerate(positions):
                want = self.template[(pos - prompt_len) % len(self.template)]
                rows[k, _logit_column(want, self.mask_id)] = self.margin
        return rows.tolist()


@dataclass
class CallableModel:
    """Adapter for arbitrary forward functions (e.g. a wrapped network)."""

    model_id: str
    vocab_size: int
    mask_id: int
    eos_id: int
    pad_id: int
    codec: PieceCodec
    forward: Callable[[Sequence[int], int, Sequence[int]], list[list[float]]]

    def encode(self, text: str) -> list[int]:
        return self.codec.encode(text)

    def decode(self, ids: Sequence[int]) -> str:
        return self.codec.decode(list(ids))

    def logits(self, tokens, prompt_len, positions):
        return self.forward(tokens, prompt_len, positions)


@dataclass
class ModelRegistry:
    """Named served models plus per-model forward-pass counters."""

    _models: dict[str, ServedModel] = field(default_factory=dict)
    forward_passes: dict[str, int] = field(default_factory=dict)

    def register(self, model: ServedModel) -> None:
        self._models[model.model_id] = model
        self.forward_passes.setdefault(model.model_id, 0)

    def get(self, model_id: str) -> ServedModel | None:
        return self._models.get(model_id)

    def default(self) -> ServedModel | None:
        return next(iter(self._models.values()), None)

    def listing(self) -> list[dict]:
        return [
            {
                "id": m.model_id,
                "vocab_size": m.vocab_size,
                "mask_id": m.mask_id,
                "eos_id": m.eos_id,
                "pad_id": m.pad_id,
            }
            for m in self._models.values()
        ]

    def count_forward(self, model_id: str) -> None:
        self.forward_passes[model_id] = self.forward_passes.get(model_id, 0) + 1
