"""Pluggable LLM and embedding backends, including deterministic offline mocks.

The hashing embedder and the scripted LLM are the offline defaults; real
backends plug in over HTTP without code changes. The wire formats:

* LLM:      POST endpoint  {"model", "prompt", "max_tokens", "temperature",
            "seed"} -> {"text": ...}
* Embedder: POST endpoint  {"input": [texts]} -> {"embeddings": [[floats]]}

``MEMENGINE_LLM_URL`` / ``MEMENGINE_EMBED_URL`` override configured endpoints.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import httpx

from .core import normalize
from .errors import (
    ConfigValidationError,
    EmptyTextError,
    ProviderError,
    ProviderTimeoutError,
    ScriptMissError,
)

PROVIDER_KINDS = ("http_llm", "scripted_llm", "http_embedder", "hashing_embedder")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

ENV_LLM_URL = "MEMENGINE_LLM_URL"
ENV_EMBED_URL = "MEMENGINE_EMBED_URL"


@dataclass(frozen=True)
class LLMParams:
    max_tokens: int = 256
    temperature: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class ProviderSpec:
    """Declarative description of one backend."""

    kind: str
    endpoint: str | None = None
    model_name: str | None = None
    dimension: int | None = None
    timeout_ms: int = 10000
    script: tuple[tuple[str, str], ...] = ()
    params: LLMParams = field(default_factory=LLMParams)

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ConfigValidationError("provider.kind", f"unknown kind {self.kind!r}")
        if self.kind.startswith("http_") and not self.endpoint:
            raise ConfigValidationError("provider.endpoint", f"{self.kind} requires an endpoint")
        if self.kind == "hashing_embedder" and not self.dimension:
            raise ConfigValidationError("provider.dimension", "hashing_embedder requires a dimension")
        if self.timeout_ms < 1:
            raise ConfigValidationError("provider.timeout_ms", "must be >= 1")


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class HashingEmbedder:
    """Deterministic offline embedder using the hashing trick.

    Tokens are lowercase maximal alphanumeric runs; each token lands in
    component ``fnv1a_64(token) mod D`` with sign taken from the hash's
    top bit; the accumulated vector is L2-normalized.
    """

    def __init__(self, dimension):
        if dimension < 1:
            raise ConfigValidationError("provider.dimension", "must be >= 1")
        self.dimension = dimension

    def embed(self, text):
        if not text:
            raise EmptyTextError("cannot embed empty text")
        acc = [0.0] * self.dimension
        for token in _TOKEN_RE.findall(text.lower()):
            h = fnv1a_64(token.encode("utf-8"))
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            acc[h % self.dimension] += sign
        return normalize(acc)


class HttpEmbedder:
    """Embedding backend reached over HTTP; output re-normalized locally."""

    def __init__(self, endpoint, dimension, timeout_ms=10000, client=None):
        self.endpoint = endpoint
        self.dimension = dimension
        self.timeout = timeout_ms / 1000.0
        self._client = client

    def embed(self, text):
        if not text:
            raise EmptyTextError("cannot embed empty text")
        payload = {"input": [text]}
        body = _post_json(self._client, self.endpoint, payload, self.timeout)
        embeddings = body.get("embeddings")
        if not isinstance(embeddings, list) or len(embeddings) != 1:
            raise ProviderError("embedder response missing embeddings", body=str(body)[:200])
        vector = embeddings[0]
        if len(vector) != self.dimension:
            raise ProviderError(
                f"embedder returned dimension {len(vector)}, expected {self.dimension}")
        return normalize([float(x) for x in vector])


class ScriptedLLM:
    """Mock LLM answering from an ordered (pattern, response) script.

    The first entry whose pattern is a substring of the prompt wins; no
    match raises ScriptMissError rather than fabricating a default.
    The script is immutable, so one instance is safe to share.
    """

    def __init__(self, script, params=None):
        self.script = tuple((str(p), str(r)) for p, r in script)
        self.params = params or LLMParams()

    def generate(self, prompt, params=None):
        if not prompt:
            raise EmptyTextError("cannot generate from empty prompt")
        for pattern, response in self.script:
            if pattern in prompt:
                return response
        raise ScriptMissError(f"no script entry matches prompt: {prompt[:80]!r}")


class HttpLLM:
    """LLM backend reached over HTTP."""

    def __init__(self, endpoint, model_name=None, timeout_ms=10000,
                 params=None, client=None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.timeout = timeout_ms / 1000.0
        self.params = params or LLMParams()
        self._client = client

    def generate(self, prompt, params=None):
        if not prompt:
            raise EmptyTextError("cannot generate from empty prompt")
        p = params or self.params
        payload = {
            "model": self.model_name,
            "prompt": prompt,
            "max_tokens": p.max_tokens,
            "temperature": p.temperature,
            "seed": p.seed,
        }
        body = _post_json(self._client, self.endpoint, payload, self.timeout)
        text = body.get("text")
        if not isinstance(text, str):
            raise ProviderError("llm response missing text field", body=str(body)[:200])
        return text


def _post_json(client, endpoint, payload, timeout):
    try:
        if client is not None:
            response = client.post(endpoint, json=payload, timeout=timeout)
        else:
            response = httpx.post(endpoint, json=payload, timeout=timeout)
    except httpx.TimeoutException as exc:
        raise ProviderTimeoutError(f"backend timed out: {endpoint}") from exc
    except httpx.HTTPError as exc:
        raise ProviderError(f"backend unreachable: {exc}") from exc
    if response.status_code // 100 != 2:
        raise ProviderError(
            f"backend returned {response.status_code}",
            status=response.status_code,
            body=response.text[:200],
        )
    try:
        return response.json()
    except ValueError as exc:
        raise ProviderError("backend returned invalid JSON",
                            status=response.status_code,
                            body=response.text[:200]) from exc


def build_embedder(spec: ProviderSpec, client=None):
    if spec.kind == "hashing_embedder":
        return HashingEmbedder(spec.dimension)
    if spec.kind == "http_embedder":
        endpoint = os.environ.get(ENV_EMBED_URL) or spec.endpoint
        return HttpEmbedder(endpoint, spec.dimension, spec.timeout_ms, client=client)
    raise ConfigValidationError("provider.kind", f"{spec.kind} is not an embedder kind")


def build_llm(spec: ProviderSpec, client=None):
    if spec.kind == "scripted_llm":
        return ScriptedLLM(spec.script, params=spec.params)
    if spec.kind == "http_llm":
        endpoint = os.environ.get(ENV_LLM_URL) or spec.endpoint
        return HttpLLM(endpoint, spec.model_name, spec.timeout_ms,
                       params=spec.params, client=client)
    raise ConfigValidationError("provider.kind", f"{spec.kind} is not an LLM kind")
