"""HTTP clients for remote denoisers, codecs, and reward scorers.

Wire protocol (UTF-8 JSON over HTTP):

  GET  /v1/models  -> {"models": [{"id", "vocab_size", "mask_id", "eos_id",
                                   "pad_id"}]}
  POST /v1/denoise {"model_id", "tokens": [int], "mask_id": int,
                    "prompt_len": int}
       -> {"positions": [int], "logits": [[float]]}
       positions are the masked indices ascending; logits[k] has vocab_size
       entries for positions[k].
  POST /v1/encode  {"text": str}    -> {"tokens": [int]}
  POST /v1/decode  {"tokens": [int]} -> {"text": str}
  POST /v1/score   {"text": str, "problem_id": str} -> {"reward": float}

Any non-200 response or schema violation raises RemoteProtocolError and
costs nothing; only successful denoise calls count one evaluation.
"""

from __future__ import annotations

import math
from typing import Sequence

import httpx
import numpy as np

from .core import MaskedState, NfeLedger, Vocabulary
from .denoiser import DenoiserOutput
from .errors import RemoteProtocolError


def _request(client: httpx.Client, method: str, path: str, **kwargs) -> dict:
    try:
        response = client.request(method, path, **kwargs)
    except httpx.HTTPError as exc:
        raise RemoteProtocolError(f"{method} {path} transport failure: {exc}") from exc
    if response.status_code != 200:
        raise RemoteProtocolError(f"{method} {path} returned {response.status_code}")
    try:
        body = response.json()
    except ValueError as exc:
        raise RemoteProtocolError(f"{method} {path} returned non-JSON body") from exc
    if not isinstance(body, dict):
        raise RemoteProtocolError(f"{method} {path} returned {type(body).__name__}, wanted object")
    return body


def _own_client(base_url: str, timeout: float) -> httpx.Client:
    return httpx.Client(base_url=base_url, timeout=timeout)


def list_models(client: httpx.Client) -> list[dict]:
    body = _request(client, "GET", "/v1/models")
    models = body.get("models")
    if not isinstance(models, list):
        raise RemoteProtocolError("/v1/models body lacks a 'models' list")
    for entry in models:
        if not isinstance(entry, dict):
            raise RemoteProtocolError("/v1/models entries must be objects")
        for key in ("id", "vocab_size", "mask_id", "eos_id", "pad_id"):
            if key not in entry:
                raise RemoteProtocolError(f"/v1/models entry missing {key!r}")
        for key in ("vocab_size", "mask_id", "eos_id", "pad_id"):
            if not isinstance(entry[key], int) or isinstance(entry[key], bool):
                raise RemoteProtocolError(f"/v1/models entry field {key!r} must be an int")
    return models


class RemoteDenoiser:
    """Client-side denoiser speaking the wire protocol.

    Plugs into the registry like any local denoiser: ``logits`` raises on any
    protocol violation before the ledger is charged, so failed calls are
    free. ``client`` may be any httpx.Client-compatible object (including an
    app test client), in which case ``base_url`` is informational only.
    """

    def __init__(
        self,
        base_url: str,
        model_id: str,
        client: httpx.Client | None = None,
        timeout: float = 30.0,
    ):
        self._client = client if client is not None else _own_client(base_url, timeout)
        self.model_id = model_id
        self.vocab = self._discover_vocab()

    def _discover_vocab(self) -> Vocabulary:
        for entry in list_models(self._client):
            if entry["id"] == self.model_id:
                size = entry["vocab_size"] + 1  # candidates plus the mask sentinel
                try:
                    return Vocabulary(
                        size=size,
                        mask_id=entry["mask_id"],
                        eos_id=entry["eos_id"],
                        pad_id=entry["pad_id"],
                    )
                except ValueError as exc:
                    raise RemoteProtocolError(f"served special tokens invalid: {exc}") from exc
        raise RemoteProtocolError(f"model {self.model_id!r} not served")

    def logits(self, state: MaskedState) -> np.ndarray:
        body = _request(
            self._client,
            "POST",
            "/v1/denoise",
            json={
                "model_id": self.model_id,
                "tokens": list(state.tokens()),
                "mask_id": state.vocab.mask_id,
                "prompt_len": state.n_p,
            },
        )
        positions = body.get("positions")
        logits = body.get("logits")
        if not isinstance(positions, list) or not isinstance(logits, list):
            raise RemoteProtocolError("/v1/denoise body needs 'positions' and 'logits' lists")
        expected = list(state.masked_positions)
        if positions != expected:
            raise RemoteProtocolError(
                f"served positions {positions} != masked positions {expected}"
            )
        if len(logits) != len(positions):
            raise RemoteProtocolError(
                f"{len(logits)} logit rows for {len(positions)} masked positions"
            )
        width = self.vocab.candidate_count
        rows = np.empty((len(logits), width))
        for k, row in enumerate(logits):
            if not isinstance(row, list) or len(row) != width:
                raise RemoteProtocolError(f"logit row {k} must have {width} entries")
            try:
                rows[k] = [float(x) for x in row]
            except (TypeError, ValueError) as exc:
                raise RemoteProtocolError(f"logit row {k} holds non-numeric entries") from exc
        if not np.all(np.isfinite(rows)):
            raise RemoteProtocolError("served logits must be finite")
        return rows


def remote_evaluate(
    endpoint: str,
    model_id: str,
    state: MaskedState,
    ledger: NfeLedger | None = None,
    client: httpx.Client | None = None,
) -> DenoiserOutput:
    """One remote forward pass; counts one evaluation only on success."""
    denoiser = RemoteDenoiser(endpoint, model_id, client=client)
    rows = denoiser.logits(state)
    output = DenoiserOutput(positions=state.masked_positions, logits=rows, vocab=denoiser.vocab)
    if ledger is not None:
        ledger.charge(1)
    return output


class RemoteCodec:
    """Encode/decode endpoints of a model server, as a codec object."""

    def __init__(self, base_url: str, client: httpx.Client | None = None, timeout: float = 30.0):
        self._client = client if client is not None else _own_client(base_url, timeout)

    def encode(self, text: str) -> list[int]:
        body = _request(self._client, "POST", "/v1/encode", json={"text": text})
        tokens = body.get("tokens")
        if not isinstance(tokens, list) or not all(
            isinstance(t, int) and not isinstance(t, bool) for t in tokens
        ):
            raise RemoteProtocolError("/v1/encode body needs an integer 'tokens' list")
        return tokens

    def decode(self, ids: Sequence[int]) -> str:
        body = _request(self._client, "POST", "/v1/decode", json={"tokens": list(ids)})
        text = body.get("text")
        if not isinstance(text, str):
            raise RemoteProtocolError("/v1/decode body needs a 'text' string")
        return text


class RemoteRewardProvider:
    """Score terminals via a remote scorer; out-of-range rewards are errors."""

    def __init__(
        self,
        base_url: str,
        codec,
        problem_id: str = "",
        client: httpx.Client | None = None,
        timeout: float = 30.0,
        retries: int = 0,
    ):
        self._client = client if client is not None else _own_client(base_url, timeout)
        self._codec = codec
        self.problem_id = problem_id
        self.retries = retries

    def score(self, state: MaskedState) -> float:
        from .reward import terminal_text

        text = terminal_text(state, self._codec)
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                body = _request(
                    self._client,
                    "POST",
                    "/v1/score",
                    json={"text": text, "problem_id": self.problem_id},
                )
                break
            except RemoteProtocolError as exc:
                last_error = exc
        else:
            raise last_error
        reward = body.get("reward")
        if not isinstance(reward, (int, float)) or isinstance(reward, bool):
            raise RemoteProtocolError("/v1/score body needs a numeric 'reward'")
        reward = float(reward)
        if math.isnan(reward) or not 0.0 <= reward <= 1.0:
            raise RemoteProtocolError(f"reward {reward} outside [0, 1]")
        return reward
