"""Model backends: image encoder, text encoder, knowledge VLM and question decoder.

Two families are provided. The toy backends are hash-driven and fully
deterministic, which makes whole pipeline runs reproducible byte for byte. The
remote backend talks JSON over HTTP to a model server hosting the real frozen
encoders, VLM and decoder.
"""
from __future__ import annotations

import base64
import hashlib
import io
import logging
import re
import threading
import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import requests
from PIL import Image

from .core import Diagram, make_rng

log = logging.getLogger(__name__)

MAX_INPUT_TOKENS = 256
MAX_OUTPUT_TOKENS = 32


class ImageEncoder(Protocol):
    out_dim: int

    def encode(self, image: Diagram) -> np.ndarray: ...


class TextEncoder(Protocol):
    hidden_dim: int

    def encode_tokens(self, text: str) -> np.ndarray: ...

    def encode_pooled(self, text: str) -> np.ndarray: ...


class KnowledgeVLM(Protocol):
    def extract(self, patch: Diagram, target: str, concept: str) -> list: ...


class QuestionDecoder(Protocol):
    def decode(self, fused: np.ndarray, target: str) -> str: ...


@dataclass
class Backends:
    image_encoder: ImageEncoder
    text_encoder: TextEncoder
    vlm: KnowledgeVLM
    decoder: QuestionDecoder
    name: str = "toy"


_SENTENCE_END = re.compile(r"(?<=[.?!])\s+")


def split_sentences(paragraph: str) -> list:
    """Split on '.', '?' or '!' followed by whitespace or end of text."""
    parts = _SENTENCE_END.split(paragraph.strip())
    return [p.strip() for p in parts if p.strip()]


def _digest(*chunks: bytes) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for c in chunks:
        h.update(len(c).to_bytes(8, "little"))
        h.update(c)
    return h.digest()


def _image_bytes(image: Diagram) -> bytes:
    h, w, _ = image.pixels.shape
    return h.to_bytes(4, "little") + w.to_bytes(4, "little") + image.pixels.tobytes()


def _seeded_vector(seed: int, key: bytes, dim: int) -> np.ndarray:
    mixed = int.from_bytes(_digest(seed.to_bytes(8, "little", signed=False), key)[:8], "little")
    v = make_rng(mixed).standard_normal(dim) / np.sqrt(dim)
    if not np.any(v):
        v[0] = 1.0
    return v


class ToyImageEncoder:
    """Content-hash image encoder: identical pixels give identical vectors,
    any change gives an unrelated vector."""

    def __init__(self, seed: int = 0, out_dim: int = 32):
        self.seed = seed
        self.out_dim = out_dim

    def encode(self, image: Diagram) -> np.ndarray:
        return _seeded_vector(self.seed, b"img" + _image_bytes(image), self.out_dim)


class ToyTextEncoder:
    """Whitespace tokenizer with one hashed embedding per distinct token."""

    def __init__(self, seed: int = 0, hidden_dim: int = 32, max_tokens: int = MAX_INPUT_TOKENS):
        self.seed = seed
        self.hidden_dim = hidden_dim
        self.max_tokens = max_tokens
        self._cache = {}
        self._lock = threading.Lock()

    def token_embedding(self, token: str) -> np.ndarray:
        with self._lock:
            v = self._cache.get(token)
            if v is None:
                v = _seeded_vector(self.seed, b"tok" + token.encode("utf-8"), self.hidden_dim)
                v.setflags(write=False)
                self._cache[token] = v
        return v

    def encode_tokens(self, text: str) -> np.ndarray:
        tokens = text.split()[: self.max_tokens]
        if not tokens:
            return np.zeros((0, self.hidden_dim))
        return np.stack([self.token_embedding(t) for t in tokens])

    def encode_pooled(self, text: str) -> np.ndarray:
        rows = self.encode_tokens(text)
        if rows.shape[0] == 0:
            return np.zeros(self.hidden_dim)
        return rows.mean(axis=0)


class ToyVLM:
    """Emits 2 to 5 templated knowledge sentences that quote the target and concept."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def paragraph(self, patch: Diagram, target: str, concept: str) -> str:
        key = _digest(
            self.seed.to_bytes(8, "little"),
            _image_bytes(patch),
            target.encode("utf-8"),
            concept.encode("utf-8"),
        )
        tag = key.hex()[:8]
        k = 2 + key[8] % 4
        return " ".join(
            f"Patch {tag} relates {target} to {concept} via property {idx}."
            for idx in range(1, k + 1)
        )

    def extract(self, patch: Diagram, target: str, concept: str) -> list:
        return split_sentences(self.paragraph(patch, target, concept))


_TOY_TEMPLATES = (
    "What is the role of the {t} in this diagram?",
    "Which part of the diagram shows the {t}?",
    "How does the {t} interact with the other labeled parts?",
    "What happens to the {t} in the process shown?",
)


class ToyDecoder:
    """Picks a question template from the sign pattern of the fused representation.

    The target always appears verbatim, so constraint checks are meaningful on
    toy runs. Output is capped at 32 whitespace tokens.
    """

    def __init__(self, seed: int = 0, max_tokens: int = MAX_OUTPUT_TOKENS):
        self.seed = seed
        self.max_tokens = max_tokens

    def decode(self, fused: np.ndarray, target: str) -> str:
        fused = np.asarray(fused, dtype=np.float64)
        pooled = fused.mean(axis=0) if fused.size else np.zeros(1)
        bits = np.packbits(pooled > 0).tobytes()
        idx = _digest(self.seed.to_bytes(8, "little"), bits)[0] % len(_TOY_TEMPLATES)
        tokens = _TOY_TEMPLATES[idx].format(t=target.strip()).split()
        return " ".join(tokens[: self.max_tokens])


def toy_backends(seed: int = 0, image_dim: int = 32, text_dim: int = 32) -> Backends:
    return Backends(
        image_encoder=ToyImageEncoder(seed, image_dim),
        text_encoder=ToyTextEncoder(seed, text_dim),
        vlm=ToyVLM(seed),
        decoder=ToyDecoder(seed),
        name=f"toy(seed={seed})",
    )


# -- remote -----------------------------------------------------------------


class BackendError(RuntimeError):
    """The service answered with a non-2xx status."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class RemoteTimeout(BackendError):
    """All attempts timed out or failed to connect; retriable by the caller."""

    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(BackendError):
    """The response body did not match the wire protocol."""

    def __init__(self, message, payload=""):
        super().__init__(f"{message}; payload: {payload[:200]!r}")
        self.payload = payload


@dataclass
class RemoteBackendConfig:
    base_url: str
    timeout: float = 30.0
    max_in_flight: int = 4
    retry: int = 2
    backoff: float = 0.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        if self.retry < 0:
            raise ValueError("retry must be non-negative")
        self.base_url = self.base_url.rstrip("/")


def png_b64(image: Diagram) -> str:
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _finite_vector(value, name, payload, dim=None):
    try:
        v = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ProtocolError(f"{name} is not numeric", payload) from None
    if v.ndim != 1 or v.size == 0:
        raise ProtocolError(f"{name} must be a non-empty flat list", payload)
    if dim is not None and v.size != dim:
        raise ProtocolError(f"{name} has length {v.size}, expected {dim}", payload)
    if not np.all(np.isfinite(v)):
        raise ProtocolError(f"{name} contains non-finite values", payload)
    return v


class RemoteClient:
    """Thread-safe HTTP client with bounded concurrency and retries.

    Timeouts, connection errors and 429/5xx answers are retried up to
    ``config.retry`` extra times. Every endpoint is a pure function of its
    request body, so a retried call returns the same result as a first-try one.
    """

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(self, config: RemoteBackendConfig, session=None):
        self.config = config
        self.session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._meta = None

    def call(self, method: str, path: str, body=None) -> dict:
        url = self.config.base_url + path
        attempts = self.config.retry + 1
        last = None
        with self._slots:
            for attempt in range(1, attempts + 1):
                try:
                    resp = self.session.request(method, url, json=body, timeout=self.config.timeout)
                except (requests.Timeout, requests.ConnectionError) as exc:
                    last = exc
                    log.warning("%s %s attempt %d/%d failed: %s", method, path, attempt, attempts, exc)
                else:
                    if resp.status_code in self.RETRY_STATUS and attempt < attempts:
                        log.warning("%s %s attempt %d/%d got HTTP %d", method, path, attempt, attempts, resp.status_code)
                        last = BackendError(f"HTTP {resp.status_code}", resp.status_code)
                    elif not 200 <= resp.status_code < 300:
                        raise BackendError(
                            f"{method} {path} returned HTTP {resp.status_code}: {resp.text[:200]}",
                            status=resp.status_code,
                        )
                    else:
                        try:
                            data = resp.json()
                        except ValueError:
                            raise ProtocolError(f"{path}: body is not JSON", resp.text) from None
                        if not isinstance(data, dict):
                            raise ProtocolError(f"{path}: body is not a JSON object", resp.text)
                        data["_raw"] = resp.text
                        return data
                if attempt < attempts and self.config.backoff:
                    time.sleep(self.config.backoff * attempt)
        if isinstance(last, BackendError):
            raise BackendError(f"{method} {path} failed after {attempts} attempts: {last}", last.status)
        raise RemoteTimeout(f"{method} {path} failed after {attempts} attempts: {last}", attempts)

    def meta(self) -> dict:
        if self._meta is None:
            data = self.call("GET", "/meta")
            raw = data.pop("_raw")
            for key in ("image_dim", "text_dim"):
                if not isinstance(data.get(key), int) or data[key] < 1:
                    raise ProtocolError(f"/meta: missing or invalid {key}", raw)
            self._meta = data
        return self._meta


class RemoteImageEncoder:
    def __init__(self, client: RemoteClient):
        self.client = client

    @property
    def out_dim(self) -> int:
        return self.client.meta()["image_dim"]

    def encode(self, image: Diagram) -> np.ndarray:
        data = self.client.call("POST", "/encode_image", {"image_png_b64": png_b64(image)})
        return _finite_vector(data.get("embedding"), "/encode_image embedding", data["_raw"], self.out_dim)


class RemoteTextEncoder:
    def __init__(self, client: RemoteClient, max_tokens: int = MAX_INPUT_TOKENS):
        self.client = client
        self.max_tokens = max_tokens

    @property
    def hidden_dim(self) -> int:
        return self.client.meta()["text_dim"]

    def encode_tokens(self, text: str) -> np.ndarray:
        data = self.client.call("POST", "/encode_text", {"text": text, "mode": "tokens"})
        raw = data["_raw"]
        rows = data.get("embeddings")
        if not isinstance(rows, list):
            raise ProtocolError("/encode_text: missing embeddings", raw)
        if not rows:
            return np.zeros((0, self.hidden_dim))
        mat = np.stack([_finite_vector(r, "/encode_text row", raw, self.hidden_dim) for r in rows])
        return mat[: self.max_tokens]

    def encode_pooled(self, text: str) -> np.ndarray:
        data = self.client.call("POST", "/encode_text", {"text": text, "mode": "pooled"})
        return _finite_vector(data.get("embedding"), "/encode_text embedding", data["_raw"], self.hidden_dim)


class RemoteVLM:
    def __init__(self, client: RemoteClient):
        self.client = client

    def extract(self, patch: Diagram, target: str, concept: str) -> list:
        body = {"image_png_b64": png_b64(patch), "target": target, "concept": concept}
        data = self.client.call("POST", "/extract", body)
        paragraph = data.get("paragraph")
        if not isinstance(paragraph, str):
            raise ProtocolError("/extract: missing paragraph", data["_raw"])
        return split_sentences(paragraph)


class RemoteDecoder:
    def __init__(self, client: RemoteClient, max_tokens: int = MAX_OUTPUT_TOKENS):
        self.client = client
        self.max_tokens = max_tokens

    def decode(self, fused: np.ndarray, target: str) -> str:
        body = {"fused": np.asarray(fused, dtype=np.float64).tolist(), "target": target}
        data = self.client.call("POST", "/decode", body)
        question = data.get("question")
        if not isinstance(question, str) or not question.strip():
            raise ProtocolError("/decode: missing or empty question", data["_raw"])
        return " ".join(question.split()[: self.max_tokens])


def remote_backend(config: RemoteBackendConfig, session=None) -> Backends:
    client = RemoteClient(config, session=session)
    return Backends(
        image_encoder=RemoteImageEncoder(client),
        text_encoder=RemoteTextEncoder(client),
        vlm=RemoteVLM(client),
        decoder=RemoteDecoder(client),
        name=f"remote({config.base_url})",
    )
