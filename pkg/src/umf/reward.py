"""Terminal-state scoring providers, all returning values in [0, 1].

The search uses the same score for guidance and final selection; an optional
held-out evaluator can score the selected candidate separately (see the
experiment config). Values outside [0, 1] are treated as provider bugs and
raised, never clamped.
"""

from __future__ import annotations

import re
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .core import MaskedState
from .errors import NotTerminal, ParseError

PASS_LINE = re.compile(r"PASS\s+(\d+)\s*/\s*(\d+)")


class RewardProvider(Protocol):
    def score(self, state: MaskedState) -> float: ...


def _require_terminal(state: MaskedState) -> None:
    if not state.fully_unmasked:
        raise NotTerminal(f"state still has {state.masked_count} masked positions")


def exact_match_reward(terminal: MaskedState, target: Sequence[int]) -> float:
    """Fraction of generation positions equal to the target sequence."""
    _require_terminal(terminal)
    target = tuple(target)
    if len(target) != terminal.n_g:
        raise ValueError(f"target length {len(target)} != generation length {terminal.n_g}")
    matches = sum(1 for got, want in zip(terminal.gen, target) if got == want)
    return matches / terminal.n_g


@dataclass(frozen=True)
class ExactMatchReward:
    target: tuple[int, ...]

    def score(self, state: MaskedState) -> float:
        return exact_match_reward(state, self.target)


@dataclass(frozen=True)
class PredicateReward:
    """Fraction of predicates satisfied by the terminal state."""

    predicates: tuple[Callable[[MaskedState], bool], ...]

    def score(self, state: MaskedState) -> float:
        _require_terminal(state)
        if not self.predicates:
            raise ValueError("predicate set must be non-empty")
        return sum(1 for p in self.predicates if p(state)) / len(self.predicates)


def terminal_text(state: MaskedState, codec) -> str:
    """Decode the generation segment: stop at the first EoS, skip padding."""
    _require_terminal(state)
    vocab = state.vocab
    ids = []
    for tok in state.gen:
        if tok == vocab.eos_id:
            break
        if tok == vocab.pad_id:
            continue
        ids.append(tok)
    return codec.decode(ids)


def test_command_reward(
    terminal: MaskedState,
    argv: Sequence[str],
    codec,
    timeout: float = 30.0,
) -> tuple[float, tuple[str, ...]]:
    """Pipe the decoded text to an external command, parse its pass fraction.

    The last stdout line matching ``PASS <passed>/<total>`` decides the
    reward. A command that exits non-zero without such a line scores 0 with a
    ``command_failed`` flag instead of raising, so a crashing candidate does
    not abort the whole search; a clean exit without the line is a harness
    misconfiguration and raises.
    """
    text = terminal_text(terminal, codec)
    try:
        proc = subprocess.run(
            list(argv),
            input=text,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        return 0.0, (f"command_failed:{type(exc).__name__}",)
    match = None
    for line in proc.stdout.splitlines():
        found = PASS_LINE.search(line)
        if found:
            match = found
    if match is None:
        if proc.returncode != 0:
            return 0.0, ("command_failed",)
        raise ParseError("command output has no 'PASS <int>/<int>' line")
    passed, total = int(match.group(1)), int(match.group(2))
    if total == 0 or passed > total:
        raise ParseError(f"malformed pass line: {match.group(0)!r}")
    return passed / total, ()


test_command_reward.__test__ = False  # not a pytest case despite the name


@dataclass
class TestCommandReward:
    """Reward provider wrapping an external test command.

    ``last_flags`` reports degenerate outcomes (crashes) of the most recent
    call; the search copies non-empty flags into its trace.
    """

    __test__ = False  # not a pytest case despite the name

    argv: tuple[str, ...]
    codec: object
    timeout: float = 30.0
    last_flags: tuple[str, ...] = field(default=(), compare=False)

    def score(self, state: MaskedState) -> float:
        reward, flags = test_command_reward(state, self.argv, self.codec, self.timeout)
        self.last_flags = flags
        return reward
