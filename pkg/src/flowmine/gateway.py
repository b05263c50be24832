"""Deterministic LLM gateway with record/replay fixtures.

Every chat or embedding request is reduced to a canonical JSON form and
hashed (sha256); the digest addresses a fixture file under the fixture
directory (``<digest>.json`` holding request, response, recorded_at).
Modes:

* ``live``    -- always hit the transport, never touch fixtures.
* ``record``  -- serve from fixtures when present, otherwise call the
  transport and persist the response.
* ``replay``  -- serve from fixtures only; a miss raises
  :class:`FixtureMissError` carrying the digest.

Replay runs make zero transport calls, which is what the offline
determinism guarantees of the experiment runner rest on.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .errors import FixtureMissError, GatewayError, ProviderRefusalError, TransportError

MODES = ("live", "record", "replay")

ROLES = ("system", "user", "assistant")

FINISH_REASONS = ("stop", "length", "error")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise GatewayError(f"unknown chat role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    seed: int | None = None
    max_output: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise GatewayError("chat request has no messages")
        if self.messages[0].role == "assistant":
            raise GatewayError("first message role must be system or user")
        if self.temperature < 0:
            raise GatewayError("temperature must be >= 0")
        if self.max_output is not None and self.max_output <= 0:
            raise GatewayError("max_output must be positive")

    def canonical(self) -> dict:
        # Defaults are serialized explicitly so the digest never depends on
        # which optional fields a caller happened to spell out.
        return {
            "kind": "chat",
            "model_id": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "seed": self.seed,
            "max_output": self.max_output,
        }


@dataclass(frozen=True)
class EmbeddingRequest:
    model_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise GatewayError("embedding request text is empty")

    def canonical(self) -> dict:
        return {"kind": "embedding", "model_id": self.model_id, "text": self.text}


@dataclass(frozen=True)
class Usage:
    prompt_units: int = 0
    output_units: int = 0

    def __post_init__(self) -> None:
        if self.prompt_units < 0 or self.output_units < 0:
            raise GatewayError("usage counts must be non-negative")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: Usage = Usage()

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            raise GatewayError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason == "stop" and not self.text:
            raise GatewayError("finish_reason 'stop' requires non-empty text")

    def to_payload(self) -> dict:
        return {
            "kind": "chat",
            "text": self.text,
            "finish_reason": self.finish_reason,
            "usage": {"prompt_units": self.usage.prompt_units, "output_units": self.usage.output_units},
        }


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str = ""
    source_digest: str = ""

    def __post_init__(self) -> None:
        for v in self.values:
            if v != v or v in (float("inf"), float("-inf")):
                raise GatewayError("embedding values must be finite")

    def to_payload(self) -> dict:
        return {"kind": "embedding", "values": list(self.values), "model_id": self.model_id}


@dataclass(frozen=True)
class RequestFingerprint:
    digest: str

    def __post_init__(self) -> None:
        if len(self.digest) != 64 or any(c not in "0123456789abcdef" for c in self.digest):
            raise GatewayError("fingerprint must be a 64-char lowercase hex digest")


Request = ChatRequest | EmbeddingRequest
Response = ChatResponse | EmbeddingVector


def canonical_json(payload: dict) -> str:
    """Stable serialization: sorted keys, compact separators, escaped non-ASCII."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def request_digest(request: Request) -> str:
    return hashlib.sha256(canonical_json(request.canonical()).encode("utf-8")).hexdigest()


def fingerprint(request: Request) -> RequestFingerprint:
    """Fingerprint of the canonical request form; stable across runs and platforms."""
    return RequestFingerprint(request_digest(request))


def _response_from_payload(payload: dict, digest: str) -> Response:
    kind = payload.get("kind")
    if kind == "chat":
        usage = payload.get("usage", {})
        return ChatResponse(
            text=payload["text"],
            finish_reason=payload.get("finish_reason", "stop"),
            usage=Usage(usage.get("prompt_units", 0), usage.get("output_units", 0)),
        )
    if kind == "embedding":
        return EmbeddingVector(
            values=tuple(float(x) for x in payload["values"]),
            model_id=payload.get("model_id", ""),
            source_digest=digest,
        )
    raise GatewayError(f"fixture has unknown response kind {kind!r}")


class Transport(Protocol):
    """Backend that actually talks to a model provider."""

    def chat(self, request: ChatRequest) -> ChatResponse: ...

    def embed_one(self, request: EmbeddingRequest) -> EmbeddingVector: ...


class HttpTransport:
    """Chat-completions style HTTP backend with capped exponential backoff.

    The bearer token comes from ``FLOWMINE_API_KEY`` unless given explicitly.
    Connection errors, 429s, and 5xx responses are retried; other 4xx fail
    immediately. A completion with no usable text raises
    :class:`ProviderRefusalError`.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("FLOWMINE_API_KEY", "")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._client = httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code != 429 and resp.status_code < 500:
                    raise TransportError(f"request to {path} failed with HTTP {resp.status_code}: {resp.text[:200]}")
                last_error = TransportError(f"HTTP {resp.status_code} from {path}")
            if attempt < self.max_retries:
                delay = min(self.backoff_cap, self.backoff_base * (2**attempt))
                time.sleep(delay + random.random() * 0.1)
        raise TransportError(f"request to {path} failed after {self.max_retries + 1} attempts: {last_error}")

    def chat(self, request: ChatRequest) -> ChatResponse:
        body: dict = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        if request.max_output is not None:
            body["max_tokens"] = request.max_output
        data = self._post("/chat/completions", body)
        try:
            choice = data["choices"][0]
            content = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat completion payload: {exc}") from exc
        if not content:
            raise ProviderRefusalError("provider returned no usable completion text")
        reason = choice.get("finish_reason", "stop")
        if reason not in FINISH_REASONS:
            reason = "length" if reason == "max_tokens" else "error"
        usage = data.get("usage", {})
        return ChatResponse(
            text=content,
            finish_reason=reason,
            usage=Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )

    def embed_one(self, request: EmbeddingRequest) -> EmbeddingVector:
        body = {"model": request.model_id, "input": request.text}
        data = self._post("/embeddings", body)
        try:
            vector = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed embedding payload: {exc}") from exc
        return EmbeddingVector(
            values=tuple(float(x) for x in vector),
            model_id=data.get("model", request.model_id),
            source_digest=request_digest(request),
        )


class FixtureStore:
    """Content-addressed response store: one JSON file per request digest."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, digest: str) -> Path:
        return self.root / f"{digest}.json"

    def load(self, digest: str) -> Response | None:
        path = self.path_for(digest)
        if not path.exists():
            return None
        with path.open("r", encoding="utf-8") as handle:
            record = json.load(handle)
        return _response_from_payload(record["response"], digest)

    def save(self, digest: str, request: Request, response: Response, overwrite: bool = False) -> None:
        path = self.path_for(digest)
        if path.exists() and not overwrite:
            # The first recorded response for a digest wins forever; a
            # content mismatch means the digest scheme broke somewhere.
            with path.open("r", encoding="utf-8") as handle:
                existing = json.load(handle)
            if existing["response"] != response.to_payload():
                raise GatewayError(f"fixture {digest} already exists with different content")
            return
        self.root.mkdir(parents=True, exist_ok=True)
        record = {
            "request": request.canonical(),
            "response": response.to_payload(),
            "recorded_at": datetime.now(timezone.utc).isoformat(),
        }
        tmp = path.with_suffix(".json.tmp")
        with tmp.open("w", encoding="utf-8") as handle:
            json.dump(record, handle, sort_keys=True, indent=2)
            handle.write("\n")
        tmp.replace(path)

    def digests(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.stem for p in self.root.glob("*.json"))

    def verify(self) -> list[str]:
        """Re-hash every fixture's stored request; return digests that mismatch."""
        bad: list[str] = []
        for digest in self.digests():
            path = self.path_for(digest)
            with path.open("r", encoding="utf-8") as handle:
                record = json.load(handle)
            actual = hashlib.sha256(canonical_json(record["request"]).encode("utf-8")).hexdigest()
            if actual != digest:
                bad.append(digest)
        return bad


@dataclass
class _InFlight:
    event: threading.Event = field(default_factory=threading.Event)
    response: Response | None = None
    error: Exception | None = None


class Gateway:
    """Front door for all model calls; owns mode, cache, fixtures, and stats."""

    def __init__(
        self,
        mode: str,
        fixture_dir: str | Path,
        transport: Transport | None = None,
        chat_model: str = "chat-default",
        embedding_model: str = "embed-default",
        parallelism: int = 4,
    ):
        if mode not in MODES:
            raise GatewayError(f"unknown gateway mode {mode!r} (expected one of {MODES})")
        if mode in ("live", "record") and transport is None:
            raise GatewayError(f"gateway mode {mode!r} requires a transport")
        if parallelism < 1:
            raise GatewayError("parallelism must be at least 1")
        self.mode = mode
        self.store = FixtureStore(fixture_dir)
        self.transport = transport
        self.chat_model = chat_model
        self.embedding_model = embedding_model
        self.parallelism = parallelism
        self.transport_calls = 0
        self.call_log: list[Request] = []
        self._cache: dict[str, Response] = {}
        self._lock = threading.Lock()
        self._in_flight: dict[str, _InFlight] = {}

    def _dispatch(self, request: Request) -> Response:
        assert self.transport is not None
        with self._lock:
            self.transport_calls += 1
        if isinstance(request, ChatRequest):
            return self.transport.chat(request)
        return self.transport.embed_one(request)

    def _resolve(self, request: Request) -> Response:
        digest = request_digest(request)
        with self._lock:
            self.call_log.append(request)
            cached = self._cache.get(digest)
        if cached is not None:
            return cached

        if self.mode == "live":
            response = self._dispatch(request)
            with self._lock:
                self._cache[digest] = response
            return response

        # record/replay: fixture first, then (record only) the transport.
        # Identical concurrent requests share one in-flight slot so a burst
        # of duplicates costs a single transport call.
        with self._lock:
            slot = self._in_flight.get(digest)
            if slot is None:
                slot = _InFlight()
                self._in_flight[digest] = slot
                owner = True
            else:
                owner = False
        if not owner:
            slot.event.wait()
            if slot.error is not None:
                raise slot.error
            assert slot.response is not None
            return slot.response
        try:
            response = self.store.load(digest)
            if response is None:
                if self.mode == "replay":
                    raise FixtureMissError(digest)
                response = self._dispatch(request)
                self.store.save(digest, request, response)
            with self._lock:
                self._cache[digest] = response
            slot.response = response
            return response
        except Exception as exc:
            slot.error = exc
            raise
        finally:
            with self._lock:
                self._in_flight.pop(digest, None)
            slot.event.set()

    def chat(self, request: ChatRequest) -> ChatResponse:
        response = self._resolve(request)
        if not isinstance(response, ChatResponse):
            raise GatewayError("fixture kind mismatch: expected a chat response")
        return response

    def complete(
        self,
        messages: Sequence[ChatMessage],
        temperature: float = 0.0,
        model: str | None = None,
        seed: int | None = None,
        max_output: int | None = None,
    ) -> str:
        request = ChatRequest(
            model_id=model or self.chat_model,
            messages=tuple(messages),
            temperature=temperature,
            seed=seed,
            max_output=max_output,
        )
        return self.chat(request).text

    def embed(self, texts: Sequence[str], model: str | None = None) -> list[EmbeddingVector]:
        """Embed texts one request per text, preserving order.

        Per-text fingerprints keep the cache granular: re-embedding a corpus
        with one new conversation touches the transport once, not n times.
        All vectors in one batch must agree on dimension.
        """
        if not texts:
            raise GatewayError("embed() requires at least one text")
        requests = [EmbeddingRequest(model_id=model or self.embedding_model, text=t) for t in texts]
        if len(requests) <= 1 or self.parallelism == 1:
            responses = [self._resolve(r) for r in requests]
        else:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                responses = list(pool.map(self._resolve, requests))
        vectors: list[EmbeddingVector] = []
        dim: int | None = None
        for resp in responses:
            if not isinstance(resp, EmbeddingVector):
                raise GatewayError("fixture kind mismatch: expected an embedding response")
            if dim is None:
                dim = len(resp.values)
            elif len(resp.values) != dim:
                raise GatewayError(f"inconsistent embedding dimensions ({dim} vs {len(resp.values)})")
            vectors.append(resp)
        return vectors
