"""Uniform access to chat-completion and embedding backends.

Two backends: an OpenAI-compatible HTTP client and a deterministic stub
for tests and CI (canned responses keyed by prompt hash, seeded
hash-derived embedding vectors, zero network activity). The Gateway wraps
either with retry/backoff, a parallelism bound, and call accounting.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "QBD_LLM_API_KEY"
TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class GatewayError(Exception):
    """Base for all gateway failures."""


class AuthenticationError(GatewayError):
    """The backend rejected our credentials (or none were configured)."""


class RetryExhaustedError(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class GatewayTimeoutError(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class StubMissingError(GatewayError):
    """The stub has no canned response for this prompt."""


class _Transient(Exception):
    """Internal marker: retryable failure."""

    def __init__(self, message: str, timeout: bool = False):
        super().__init__(message)
        self.timeout = timeout


@dataclass
class GatewayConfig:
    base_url: str = ""
    model: str = "stub-chat"
    embedding_model: str = "stub-embed"
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float = 0.0
    max_retries: int = 3
    parallelism: int = 4
    timeout: float = 60.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class CallLedger:
    """Thread-safe per-method counters: requests, retries, failures, and
    token counts when the backend reports usage."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, dict[str, int]] = {}

    def _bucket(self, method: str) -> dict[str, int]:
        return self._counts.setdefault(
            method,
            {"requests": 0, "retries": 0, "failures": 0, "prompt_tokens": 0, "completion_tokens": 0},
        )

    def record_request(self, method: str) -> None:
        with self._lock:
            self._bucket(method)["requests"] += 1

    def record_retry(self, method: str) -> None:
        with self._lock:
            self._bucket(method)["retries"] += 1

    def record_failure(self, method: str) -> None:
        with self._lock:
            self._bucket(method)["failures"] += 1

    def record_tokens(self, method: str, prompt_tokens: int, completion_tokens: int) -> None:
        with self._lock:
            bucket = self._bucket(method)
            bucket["prompt_tokens"] += prompt_tokens
            bucket["completion_tokens"] += completion_tokens

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {m: dict(c) for m, c in self._counts.items()}


Usage = tuple[int, int]  # (prompt_tokens, completion_tokens)


class Backend(Protocol):
    def complete(self, prompt: str, config: GatewayConfig) -> tuple[str, Usage]: ...

    def embed(self, text: str, config: GatewayConfig) -> tuple[list[float], Usage]: ...


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _hash_vector(text: str, seed: int, dim: int) -> list[float]:
    digest = hashlib.sha256(f"{seed}:{text}".encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    return [rng.uniform(-1.0, 1.0) for _ in range(dim)]


class StubBackend:
    """Deterministic offline backend.

    Completions resolve, in order: exact prompt-hash fixtures, then the
    handler callable if given. Embeddings resolve from the embeddings map,
    the embed_handler, or a seeded hash-derived vector, so identical texts
    always embed identically.
    """

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        handler: Callable[[str], str] | None = None,
        embeddings: Mapping[str, Sequence[float]] | None = None,
        embed_handler: Callable[[str], Sequence[float]] | None = None,
        seed: int = 0,
        dim: int = 32,
    ):
        self.responses = dict(responses or {})
        self.handler = handler
        self.embeddings = {k: list(v) for k, v in (embeddings or {}).items()}
        self.embed_handler = embed_handler
        self.seed = seed
        self.dim = dim

    @classmethod
    def from_jsonl(cls, path: str | Path, **kwargs) -> "StubBackend":
        """Load fixtures: one JSON object per line with `response` and
        either `prompt_sha256` or a raw `prompt` (hashed on load)."""
        responses: dict[str, str] = {}
        with open(path, encoding="utf-8") as fp:
            for lineno, line in enumerate(fp, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "prompt_sha256" in rec:
                    key = rec["prompt_sha256"]
                elif "prompt" in rec:
                    key = prompt_sha256(rec["prompt"])
                else:
                    raise ValueError(f"{path}:{lineno}: fixture needs 'prompt' or 'prompt_sha256'")
                responses[key] = rec["response"]
        return cls(responses=responses, **kwargs)

    def complete(self, prompt: str, config: GatewayConfig) -> tuple[str, Usage]:
        key = prompt_sha256(prompt)
        if key in self.responses:
            return self.responses[key], (0, 0)
        if self.handler is not None:
            return self.handler(prompt), (0, 0)
        raise StubMissingError(f"no stub response for prompt hash {key[:12]}")

    def embed(self, text: str, config: GatewayConfig) -> tuple[list[float], Usage]:
        if text in self.embeddings:
            return list(self.embeddings[text]), (0, 0)
        if self.embed_handler is not None:
            return list(self.embed_handler(text)), (0, 0)
        return _hash_vector(text, self.seed, self.dim), (0, 0)


class OpenAIBackend:
    """OpenAI-compatible HTTP wire shapes for /chat/completions and
    /embeddings. The API key is read from the configured environment
    variable, never from files."""

    def __init__(self, config: GatewayConfig, transport: httpx.BaseTransport | None = None):
        if not config.base_url:
            raise ValueError("OpenAIBackend requires a base_url")
        key = os.environ.get(config.api_key_env, "")
        if not key:
            raise AuthenticationError(
                f"environment variable {config.api_key_env} is not set"
            )
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {key}"},
            timeout=config.timeout,
            transport=transport,
        )

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._client.post(path, json=payload)
        except httpx.TimeoutException as exc:
            raise _Transient(f"timeout calling {path}: {exc}", timeout=True) from exc
        except httpx.TransportError as exc:
            raise _Transient(f"transport error calling {path}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"{path} returned {resp.status_code}")
        if resp.status_code in TRANSIENT_STATUS:
            raise _Transient(f"{path} returned {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(f"{path} returned {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    @staticmethod
    def _usage(body: dict) -> Usage:
        usage = body.get("usage") or {}
        return int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))

    def complete(self, prompt: str, config: GatewayConfig) -> tuple[str, Usage]:
        body = self._post(
            "/chat/completions",
            {
                "model": config.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": config.temperature,
            },
        )
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat completion response: {exc}") from exc
        return text, self._usage(body)

    def embed(self, text: str, config: GatewayConfig) -> tuple[list[float], Usage]:
        body = self._post("/embeddings", {"model": config.embedding_model, "input": text})
        try:
            vector = [float(x) for x in body["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed embeddings response: {exc}") from exc
        return vector, self._usage(body)


class Gateway:
    """Shared front door for LLM calls: bounded parallelism, exponential
    backoff on transient failures, strictly typed terminal errors, and a
    ledger of every request."""

    def __init__(self, config: GatewayConfig, backend: Backend, ledger: CallLedger | None = None):
        self.config = config
        self.backend = backend
        self.ledger = ledger or CallLedger()
        self._slots = threading.Semaphore(config.parallelism)
        self._embed_dim: int | None = None
        self._dim_lock = threading.Lock()

    def _call(self, method: str, fn: Callable):
        self.ledger.record_request(method)
        attempts = 0
        last: _Transient | None = None
        while attempts <= self.config.max_retries:
            attempts += 1
            try:
                with self._slots:
                    return fn()
            except _Transient as exc:
                last = exc
                if attempts > self.config.max_retries:
                    break
                self.ledger.record_retry(method)
                delay = self.config.backoff_base * (2 ** (attempts - 1))
                delay *= 0.5 + random.random()  # jitter
                logger.debug("%s transient failure (%s), retrying in %.2fs", method, exc, delay)
                if delay > 0:
                    time.sleep(delay)
            except GatewayError:
                self.ledger.record_failure(method)
                raise
        self.ledger.record_failure(method)
        assert last is not None
        if last.timeout:
            raise GatewayTimeoutError(str(last), attempts)
        raise RetryExhaustedError(str(last), attempts)

    def complete(self, prompt: str) -> str:
        """Run one chat completion and return the response text."""
        def run():
            text, usage = self.backend.complete(prompt, self.config)
            self.ledger.record_tokens("complete", *usage)
            return text

        return self._call("complete", run)

    def embed(self, text: str) -> list[float]:
        """Embed one text. All vectors in a session must share a dimension."""
        if not text:
            raise ValueError("refusing to embed empty text")

        def run():
            vector, usage = self.backend.embed(text, self.config)
            self.ledger.record_tokens("embed", *usage)
            return vector

        vector = self._call("embed", run)
        with self._dim_lock:
            if self._embed_dim is None:
                self._embed_dim = len(vector)
            elif len(vector) != self._embed_dim:
                raise GatewayError(
                    f"embedding dimension changed mid-session: {len(vector)} != {self._embed_dim}"
                )
        return vector


def call_budget(method_kind: str, n_candidates: int) -> int:
    """LLM calls needed to rerank n candidates: n for single-candidate
    scoring, n*(n-1) ordered pairs for pairwise scoring."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    if method_kind.startswith("pcs"):
        return n_candidates * (n_candidates - 1)
    return n_candidates
