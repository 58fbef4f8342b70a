"""Wire-protocol conformance suite, drivable against any server.

The checks exercise the same client code the engine uses in production, so
passing them means the server actually interoperates: model listing schema,
denoise shape contract, error codes for bad requests, and the text
round-trip through the codec endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import httpx

from .core import MaskedState, NfeLedger, Vocabulary
from .remote import RemoteDenoiser, RemoteCodec, list_models

DEFAULT_TEXT_SAMPLES = ("hello world", "abc", "a b c d", "xyzzy plugh", "")


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ConformanceReport:
    checks: tuple[ConformanceCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> tuple[ConformanceCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def summary(self) -> str:
        lines = [
            f"{'PASS' if c.passed else 'FAIL'}: {c.name}" + (f" ({c.detail})" if c.detail else "")
            for c in self.checks
        ]
        return "\n".join(lines)


def _fully_masked_request(model: dict) -> dict:
    prompt = [model["eos_id"]]
    gen = [model["mask_id"]] * 4
    return {
        "model_id": model["id"],
        "tokens": prompt + gen,
        "mask_id": model["mask_id"],
        "prompt_len": len(prompt),
    }


def check_server(
    client: httpx.Client,
    model_id: str | None = None,
    text_samples: tuple[str, ...] = DEFAULT_TEXT_SAMPLES,
) -> ConformanceReport:
    """Run every conformance check through the production client classes."""
    checks: list[ConformanceCheck] = []

    def record(name: str, fn) -> object:
        try:
            value = fn()
        except Exception as exc:  # noqa: BLE001 - verdicts, not propagation
            checks.append(ConformanceCheck(name, False, f"{type(exc).__name__}: {exc}"))
            return None
        checks.append(ConformanceCheck(name, True))
        return value

    models = record("models listing schema", lambda: list_models(client))
    if not models:
        if models is not None:
            checks.append(ConformanceCheck("models listing non-empty", False, "no models served"))
        return ConformanceReport(tuple(checks))
    model = models[0] if model_id is None else next(
        (m for m in models if m["id"] == model_id), None
    )
    if model is None:
        checks.append(
            ConformanceCheck("requested model served", False, f"{model_id!r} not in listing")
        )
        return ConformanceReport(tuple(checks))

    def special_tokens_valid():
        Vocabulary(
            size=model["vocab_size"] + 1,
            mask_id=model["mask_id"],
            eos_id=model["eos_id"],
            pad_id=model["pad_id"],
        )
        return True

    record("special-token listing valid", special_tokens_valid)

    def denoise_shape():
        denoiser = RemoteDenoiser("", model["id"], client=client)
        vocab = denoiser.vocab
        state = MaskedState.initial(vocab, (vocab.eos_id,), 4)
        ledger = NfeLedger(budget=8)
        rows = denoiser.logits(state)
        ledger.charge(1)
        assert rows.shape == (4, vocab.candidate_count)
        # partially committed state: rows only for the remaining masks
        committed = state.with_committed({state.masked_positions[0]: vocab.eos_id})
        rows = denoiser.logits(committed)
        assert rows.shape == (3, vocab.candidate_count)
        return True

    record("denoise shape contract", denoise_shape)

    def zero_masked_rejected():
        request = _fully_masked_request(model)
        request["tokens"] = [model["eos_id"]] * len(request["tokens"])
        response = client.post("/v1/denoise", json=request)
        assert response.status_code == 400, f"got {response.status_code}"
        return True

    record("zero masked positions -> 400", zero_masked_rejected)

    def unknown_model_404():
        request = _fully_masked_request(model)
        request["model_id"] = "no-such-model"
        response = client.post("/v1/denoise", json=request)
        assert response.status_code == 404, f"got {response.status_code}"
        return True

    record("unknown model -> 404", unknown_model_404)

    def malformed_body_400():
        response = client.post("/v1/denoise", json={"model_id": model["id"]})
        assert response.status_code == 400, f"got {response.status_code}"
        return True

    record("malformed body -> 400", malformed_body_400)

    def encode_decode_round_trip():
        codec = RemoteCodec("", client=client)
        for text in text_samples:
            tokens = codec.encode(text)
            assert codec.decode(tokens) == text, f"round trip broke for {text!r}"
        return True

    record("encode/decode round-trip", encode_decode_round_trip)

    return ConformanceReport(tuple(checks))
