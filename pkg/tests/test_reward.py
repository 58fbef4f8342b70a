from __future__ import annotations

import sys

import pytest

from umf.core import MaskedState
from umf.errors import NotTerminal, ParseError
from umf.reward import (
    ExactMatchReward,
    PredicateReward,
    TestCommandReward,
    exact_match_reward,
    terminal_text,
    test_command_reward,
)
from umf.tokmap import ToyCodec


def terminal(vocab, gen):
    return MaskedState(vocab, (0,), tuple(gen))


class TestExactMatch:
    def test_full_match(self, vocab):
        state = terminal(vocab, (0, 1, 2, 3, 4, 0, 1, 2))
        assert exact_match_reward(state, (0, 1, 2, 3, 4, 0, 1, 2)) == 1.0

    def test_no_match(self, vocab):
        state = terminal(vocab, (0,) * 8)
        assert exact_match_reward(state, (1,) * 8) == 0.0

    def test_partial_match(self, vocab):
        state = terminal(vocab, (0, 1, 2, 3, 4, 0, 1, 2))
        target = (0, 1, 2, 3, 4, 0, 0, 0)
        assert exact_match_reward(state, target) == 0.75

    def test_not_terminal(self, vocab):
        state = MaskedState(vocab, (0,), (0, vocab.mask_id))
        with pytest.raises(NotTerminal):
            exact_match_reward(state, (0, 1))

    def test_provider_wrapper(self, vocab):
        provider = ExactMatchReward((0,) * 8)
        assert provider.score(terminal(vocab, (0,) * 8)) == 1.0


class TestPredicateReward:
    def test_fraction_satisfied(self, vocab):
        provider = PredicateReward(
            (
                lambda s: s.gen[0] == 0,
                lambda s: s.gen[1] == 0,
                lambda s: s.gen[2] == 9,  # impossible
                lambda s: True,
            )
        )
        assert provider.score(terminal(vocab, (0,) * 8)) == 0.75


def char_codec(vocab):
    pieces = {i: chr(ord("a") + i) for i in range(vocab.size) if i not in
              (vocab.mask_id, vocab.eos_id, vocab.pad_id)}
    return ToyCodec(vocab, pieces)


class TestTerminalText:
    def test_stops_at_eos_and_skips_pad(self, vocab):
        codec = char_codec(vocab)
        state = terminal(vocab, (0, vocab.pad_id, 1, vocab.eos_id, 2, 3, 4, 0))
        assert terminal_text(state, codec) == "ab"


class TestCommandRewardRunner:
    COUNT_A = (
        sys.executable,
        "-c",
        "import sys; t = sys.stdin.read(); print(f'PASS {t.count(chr(97))}/4')",
    )

    def test_pass_fraction(self, vocab):
        codec = char_codec(vocab)
        state = terminal(vocab, (0, 0, 0, 1, vocab.eos_id, 0, 0, 0))  # "aaab"
        reward, flags = test_command_reward(state, self.COUNT_A, codec)
        assert reward == 0.75
        assert flags == ()

    def test_zero_pass(self, vocab):
        codec = char_codec(vocab)
        state = terminal(vocab, (1, 1, 1, 1, vocab.eos_id, 0, 0, 0))  # "bbbb"
        reward, _ = test_command_reward(state, self.COUNT_A, codec)
        assert reward == 0.0

    def test_crash_scores_zero_with_flag(self, vocab):
        codec = char_codec(vocab)
        state = terminal(vocab, (0,) * 8)
        argv = (sys.executable, "-c", "import sys; sys.exit(3)")
        reward, flags = test_command_reward(state, argv, codec)
        assert reward == 0.0
        assert flags == ("command_failed",)

    def test_clean_exit_without_pass_line_raises(self, vocab):
        codec = char_codec(vocab)
        state = terminal(vocab, (0,) * 8)
        argv = (sys.executable, "-c", "print('hello')")
        with pytest.raises(ParseError):
            test_command_reward(state, argv, codec)

    def test_last_matching_line_wins(self, vocab):
        codec = char_codec(vocab)
        state = terminal(vocab, (0,) * 8)
        argv = (sys.executable, "-c", "print('PASS 1/4'); print('PASS 2/4')")
        reward, _ = test_command_reward(state, argv, codec)
        assert reward == 0.5

    def test_malformed_fraction_raises(self, vocab):
        codec = char_codec(vocab)
        state = terminal(vocab, (0,) * 8)
        argv = (sys.executable, "-c", "print('PASS 5/4')")
        with pytest.raises(ParseError):
            test_command_reward(state, argv, codec)

    def test_provider_records_flags(self, vocab):
        codec = char_codec(vocab)
        provider = TestCommandReward(
            (sys.executable, "-c", "import sys; sys.exit(1)"), codec
        )
        assert provider.score(terminal(vocab, (0,) * 8)) == 0.0
        assert provider.last_flags == ("command_failed",)
