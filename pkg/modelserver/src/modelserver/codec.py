"""Piece-table tokenizer used by the reference models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping


class CodecError(ValueError):
    """Text or token ids the codec cannot handle."""


@dataclass(frozen=True)
class PieceCodec:
    """Token id <-> UTF-8 fragment table with greedy longest-match encoding."""

    pieces: Mapping[int, str]

    def __post_init__(self) -> None:
        for tok, text in self.pieces.items():
            if not isinstance(tok, int) or tok < 0:
                raise CodecError(f"piece id {tok!r} must be a non-negative int")
            if not text:
                raise CodecError(f"piece for id {tok} is empty")
        object.__setattr__(self, "pieces", dict(self.pieces))

    def encode(self, text: str) -> list[int]:
        by_text: dict[str, int] = {}
        for tok in sorted(self.pieces):
            by_text.setdefault(self.pieces[tok], tok)
        max_len = max((len(t) for t in by_text), default=0)
        ids: list[int] = []
        i = 0
        while i < len(text):
            for length in range(min(max_len, len(text) - i), 0, -1):
                tok = by_text.get(text[i : i + length])
                if tok is not None:
                    ids.append(tok)
                    i += length
                    break
            else:
                raise CodecError(f"cannot encode {text[i:]!r} at offset {i}")
        return ids

    def decode(self, ids: list[int]) -> str:
        try:
            return "".join(self.pieces[t] for t in ids)
        except KeyError as exc:
            raise CodecError(f"unknown token id {exc.args[0]}") from exc


def ascii_codec() -> PieceCodec:
    """Printable-ASCII character codec: id k maps to chr(32 + k)."""
    return PieceCodec({k: chr(32 + k) for k in range(95)})
