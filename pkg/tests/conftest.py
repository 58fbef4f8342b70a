from __future__ import annotations

import pytest

from umf.core import MaskedState, Vocabulary
from umf.denoiser import DenoiserRegistry, PlantedSkillDenoiser


@pytest.fixture
def vocab() -> Vocabulary:
    # ids 0..4 committable, 5 = eos, 6 = pad, 7 = mask
    return Vocabulary(size=8, mask_id=7, eos_id=5, pad_id=6)


@pytest.fixture
def tiny_vocab() -> Vocabulary:
    # 4 candidates (A=0, B=1, C=2 plus eos=3 doubling as pad), mask last
    return Vocabulary(size=5, mask_id=4, eos_id=3, pad_id=3)


def fresh_state(vocab: Vocabulary, gen_len: int = 8, prompt=(0, 1)) -> MaskedState:
    return MaskedState.initial(vocab, prompt, gen_len)


@pytest.fixture
def planted_registry(vocab):
    registry = DenoiserRegistry()
    target = (0, 1, 2, 3, 4, 0, 1, 2)
    registry.register("full", PlantedSkillDenoiser(vocab, target, (0.0, 1.0)))
    return registry, target
