"""State transfer between heterogeneous vocabularies.

Special tokens (mask, EoS, pad) map id-to-id. Runs of contiguous committed
plain tokens are decoded to text by the source codec and re-encoded by the
target codec; masked runs stay masked. The generation segment keeps its
length: when a re-encoded run shrinks, the freed slots turn into masked
positions folded into the next masked run (or appended at the end); when it
grows, it borrows slots from the next masked run, and growing past that run
fails loudly rather than truncating anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .core import MaskedState, Vocabulary
from .errors import CodecMismatch, UndeclaredSpecialToken


@dataclass(frozen=True)
class ToyCodec:
    """Piece-table codec: plain token id <-> UTF-8 fragment.

    Encoding is greedy longest-match, so decode(encode(text)) == text
    whenever encode succeeds. Special token ids never appear in the piece
    table; they are handled by id, not by text.
    """

    vocab: Vocabulary
    pieces: Mapping[int, str]

    def __post_init__(self) -> None:
        specials = {self.vocab.mask_id, self.vocab.eos_id, self.vocab.pad_id}
        for tok, text in self.pieces.items():
            if tok in specials:
                raise ValueError(f"special token {tok} may not carry a text piece")
            if not 0 <= tok < self.vocab.size:
                raise ValueError(f"piece id {tok} outside the vocabulary")
            if not text:
                raise ValueError(f"piece for id {tok} is empty")
        object.__setattr__(self, "pieces", dict(self.pieces))

    @classmethod
    def from_json(cls, path: str | Path) -> "ToyCodec":
        """Load ``{"size", "mask_id", "eos_id", "pad_id", "pieces": {id: text}}``."""
        doc = json.loads(Path(path).read_text("utf-8"))
        vocab = Vocabulary(
            size=doc["size"], mask_id=doc["mask_id"], eos_id=doc["eos_id"], pad_id=doc["pad_id"]
        )
        return cls(vocab, {int(k): v for k, v in doc["pieces"].items()})

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset({self.vocab.mask_id, self.vocab.eos_id, self.vocab.pad_id})

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for tok in ids:
            if tok in self.special_ids:
                raise UndeclaredSpecialToken(f"special token {tok} has no text form")
            piece = self.pieces.get(tok)
            if piece is None:
                raise UndeclaredSpecialToken(f"token {tok} is neither special nor a known piece")
            out.append(piece)
        return "".join(out)

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match tokenization; duplicate texts take the lowest id."""
        by_text: dict[str, int] = {}
        for tok in sorted(self.pieces):
            by_text.setdefault(self.pieces[tok], tok)
        max_len = max((len(t) for t in by_text), default=0)
        ids = []
        i = 0
        while i < len(text):
            for length in range(min(max_len, len(text) - i), 0, -1):
                tok = by_text.get(text[i : i + length])
                if tok is not None:
                    ids.append(tok)
                    i += length
                    break
            else:
                raise CodecMismatch(f"cannot encode {text[i:]!r} at offset {i}")
        return ids


def _runs(tokens: Sequence[int], codec: ToyCodec):
    """Split tokens into maximal runs: ('mask'|'special', id) or ('text', list)."""
    runs = []
    specials = codec.special_ids
    mask = codec.vocab.mask_id
    for tok in tokens:
        if tok == mask:
            if runs and runs[-1][0] == "mask":
                runs[-1][1].append(tok)
            else:
                runs.append(("mask", [tok]))
        elif tok in specials:
            runs.append(("special", [tok]))
        else:
            if runs and runs[-1][0] == "text":
                runs[-1][1].append(tok)
            else:
                runs.append(("text", [tok]))
    return runs


def _map_special(tok: int, source: ToyCodec, target: ToyCodec) -> int:
    sv, tv = source.vocab, target.vocab
    if tok == sv.mask_id:
        return tv.mask_id
    if tok == sv.eos_id:
        return tv.eos_id
    if tok == sv.pad_id:
        return tv.pad_id
    raise UndeclaredSpecialToken(f"token {tok} is not a declared special token")


def map_state(state: MaskedState, source: ToyCodec, target: ToyCodec) -> MaskedState:
    """Re-express a state in the target vocabulary, preserving decoded text.

    Identical codecs short-circuit to the input state, so the mapping is
    idempotent and bit-exact in the degenerate case. The output generation
    segment has the same length as the input; its masked count is the length
    minus however many tokens the committed text re-encodes to.
    """
    if source == target:
        return state

    prompt_out: list[int] = []
    for kind, toks in _runs(state.prompt, source):
        if kind == "special":
            prompt_out.append(_map_special(toks[0], source, target))
        else:  # prompt never holds masks
            prompt_out.extend(target.encode(source.decode(toks)))

    gen_out: list[int] = []
    balance = 0  # source tokens consumed minus target tokens emitted so far
    for kind, toks in _runs(state.gen, source):
        if kind == "mask":
            room = len(toks) + balance
            if room < 0:
                raise CodecMismatch(
                    f"re-encoded text overflows the adjacent masked run by {-room} tokens"
                )
            gen_out.extend([target.vocab.mask_id] * room)
            balance = 0
        elif kind == "special":
            gen_out.append(_map_special(toks[0], source, target))
        else:
            encoded = target.encode(source.decode(toks))
            gen_out.extend(encoded)
            balance += len(toks) - len(encoded)
    if balance > 0:
        gen_out.extend([target.vocab.mask_id] * balance)
    elif balance < 0:
        raise CodecMismatch(
            f"re-encoded text needs {-balance} more slots than the generation segment has"
        )
    assert len(gen_out) == state.n_g
    return MaskedState(target.vocab, tuple(prompt_out), tuple(gen_out))
