"""Describer, embedder and reranker clients.

Each role has a deterministic local implementation, used for tests and
offline runs, and an HTTP implementation speaking a small JSON protocol:

    POST /embed    {"texts": [...]}                -> {"vectors": [[...]], "dim": d}
    POST /rerank   {"query": s, "documents": [...]} -> {"scores": [...]}
    POST /describe {"mode": m, "input": s}          -> {"text": s}
"""

from __future__ import annotations

import hashlib
import math
import os
import re
import threading
from dataclasses import dataclass
from importlib import resources
from typing import Any, Protocol, Sequence, runtime_checkable

import httpx
import numpy as np

MODES = ("summarize_code", "list_members", "summarize_from_members")
NO_MEMBERS = "---None---"
NO_DESCRIPTION = "No description found"
DEFAULT_DIM = 256
DEFAULT_TIMEOUT_MS = 30_000

_PROMPT_FILES = {
    "summarize_code": "code_summarization.txt",
    "list_members": "members_description.txt",
    "summarize_from_members": "file_summary.txt",
}

STOPWORDS = frozenset(
    """a an and are as at be by do does for from how i in is it of on or the this to
    what where which who why with""".split()
)


class EncoderError(Exception):
    pass


class BackendUnavailable(EncoderError):
    pass


class MalformedResponse(EncoderError):
    pass


class DimensionMismatch(EncoderError):
    pass


class ContextOverflow(EncoderError):
    pass


def load_prompt(name: str) -> str:
    return resources.files("repokg.assets.prompts").joinpath(name).read_text(encoding="utf-8")


_WORD = re.compile(r"[A-Za-z0-9]+")
_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


def tokenize(text: str) -> list[str]:
    """Lower-cased word tokens; identifiers are split on case and underscores."""
    out: list[str] = []
    for word in _WORD.findall(text):
        for part in _CAMEL.findall(word):
            tok = part.lower()
            if tok not in STOPWORDS:
                out.append(tok)
    return out


def token_set(text: str) -> frozenset[str]:
    return frozenset(tokenize(text))


def bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


@runtime_checkable
class Embedder(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


@runtime_checkable
class Reranker(Protocol):
    def rerank(self, query: str, documents: Sequence[str]) -> list[float]: ...


@runtime_checkable
class Describer(Protocol):
    def describe(self, text: str, mode: str) -> str: ...


class LocalEmbedder:
    """Hashed set-of-tokens embedding.

    Each distinct token sets one of ``dim`` buckets to 1 and the vector is
    L2-normalized, so cosine similarity is ``|A∩B| / sqrt(|A||B|)`` over
    bucket sets.  Text without tokens maps to a fixed sentinel bucket.
    """

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        self.dim = dim
        self._empty = bucket("\x00empty", dim)

    def buckets(self, text: str) -> set[int]:
        found = {bucket(t, self.dim) for t in token_set(text)}
        return found or {self._empty}

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            idx = sorted(self.buckets(text))
            vec = np.zeros(self.dim)
            vec[idx] = 1.0 / math.sqrt(len(idx))
            out.append(vec)
        return out


class LocalReranker:
    """Jaccard overlap of token sets, which already lies in [0, 1]."""

    def rerank(self, query: str, documents: Sequence[str]) -> list[float]:
        q = token_set(query)
        scores = []
        for doc in documents:
            d = token_set(doc)
            union = q | d
            scores.append(len(q & d) / len(union) if union else 0.0)
        return scores


_DEF = re.compile(r"^\s*(?:async\s+)?(def|class)\s+(\w+)", re.M)
_ASSIGN = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?::[^=\n]+)?=(?!=)", re.M)
_DOC = re.compile(r'("""|\'\'\')(.*?)\1', re.S)
_COMMENT = re.compile(r"#\s*(.+)$", re.M)


class LocalDescriber:
    """Template describer: name, docstring or comment, and the code's tokens."""

    def __init__(self, max_chars: int | None = None) -> None:
        self.max_chars = max_chars

    def describe(self, text: str, mode: str) -> str:
        if mode not in MODES:
            raise ValueError(f"unknown describe mode {mode!r}")
        if self.max_chars is not None and len(text) > self.max_chars:
            raise ContextOverflow(f"{len(text)} characters exceeds limit {self.max_chars}")
        if mode == "summarize_code":
            return self._summarize(text)
        if mode == "list_members":
            return self._members(text)
        return self._compose(text)

    @staticmethod
    def _name(code: str) -> str:
        m = _DEF.search(code)
        if m:
            return m.group(2)
        m = _ASSIGN.search(code)
        return m.group(1) if m else "code"

    def _summarize(self, code: str) -> str:
        name = self._name(code)
        doc = _DOC.search(code)
        note = doc.group(2).strip().split("\n")[0].strip() if doc else ""
        if not note:
            comment = _COMMENT.search(code)
            note = comment.group(1).strip() if comment else ""
        words = " ".join(dict.fromkeys(tokenize(code)))
        head = f"{name}. {note}" if note else f"{name}."
        return f"{head}\n{words}".rstrip()

    def _members(self, code: str) -> str:
        own = _DEF.search(code)
        lines: list[str] = []
        seen: set[str] = set()
        for m in _DEF.finditer(code):
            if own is not None and m.start() == own.start():
                continue
            kind = "class" if m.group(1) == "class" else "function"
            if m.group(2) not in seen:
                seen.add(m.group(2))
                lines.append(f"{m.group(2)} - {kind} {' '.join(tokenize(m.group(2)))}")
        for m in _ASSIGN.finditer(code):
            name = m.group(1)
            if name not in seen and len(name) > 1:
                seen.add(name)
                lines.append(f"{name} - variable {' '.join(tokenize(name))}")
        return "\n".join(lines) if lines else NO_MEMBERS

    @staticmethod
    def _compose(summaries: str) -> str:
        parts = [ln.strip() for ln in summaries.splitlines() if ln.strip()]
        if not parts:
            return NO_DESCRIPTION
        return "Combines: " + "; ".join(parts)


def _timeout_s() -> float:
    return float(os.environ.get("REPOKG_HTTP_TIMEOUT_MS", DEFAULT_TIMEOUT_MS)) / 1000.0


class _HttpClient:
    def __init__(self, url: str, timeout_s: float | None = None, max_in_flight: int = 4, transport: Any = None) -> None:
        self.url = url.rstrip("/")
        self._client = httpx.Client(timeout=timeout_s if timeout_s is not None else _timeout_s(), transport=transport)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        with self._slots:
            try:
                resp = self._client.post(self.url + path, json=body)
            except httpx.HTTPError as exc:
                raise BackendUnavailable(f"{self.url}{path}: {exc}") from exc
        if resp.status_code == 413:
            raise ContextOverflow(resp.text)
        if resp.status_code >= 500:
            raise BackendUnavailable(f"{self.url}{path}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise MalformedResponse(f"{self.url}{path}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"{self.url}{path}: response is not JSON") from exc
        if not isinstance(data, dict):
            raise MalformedResponse(f"{self.url}{path}: expected a JSON object")
        return data

    def close(self) -> None:
        self._client.close()


class HttpEmbedder(_HttpClient):
    def __init__(self, url: str, dim: int | None = None, **kwargs: Any) -> None:
        super().__init__(url, **kwargs)
        self.dim = dim  # learned from the first response when None

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        data = self._post("/embed", {"texts": list(texts)})
        vectors = data.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise MalformedResponse("embed: 'vectors' missing or wrong length")
        dim = data.get("dim", self.dim)
        out = []
        for raw in vectors:
            try:
                vec = np.asarray(raw, dtype=float)
            except (TypeError, ValueError) as exc:
                raise MalformedResponse("embed: non-numeric vector") from exc
            if vec.ndim != 1:
                raise MalformedResponse("embed: vector is not flat")
            if dim is not None and vec.shape[0] != dim:
                raise DimensionMismatch(f"got {vec.shape[0]}, expected {dim}")
            norm = float(np.linalg.norm(vec))
            if not math.isfinite(norm) or norm == 0.0:
                raise MalformedResponse("embed: zero or non-finite vector")
            out.append(vec / norm)
        if self.dim is None:
            self.dim = out[0].shape[0]
        elif out[0].shape[0] != self.dim:
            raise DimensionMismatch(f"got {out[0].shape[0]}, expected {self.dim}")
        return out


class HttpReranker(_HttpClient):
    def rerank(self, query: str, documents: Sequence[str]) -> list[float]:
        if not documents:
            return []
        data = self._post("/rerank", {"query": query, "documents": list(documents)})
        scores = data.get("scores")
        if not isinstance(scores, list) or len(scores) != len(documents):
            raise MalformedResponse("rerank: 'scores' missing or wrong length")
        try:
            return [min(1.0, max(0.0, float(s))) for s in scores]
        except (TypeError, ValueError) as exc:
            raise MalformedResponse("rerank: non-numeric score") from exc


class HttpDescriber(_HttpClient):
    """Sends the matching prompt template followed by the input text."""

    def __init__(self, url: str, max_chars: int | None = None, with_prompt: bool = True, **kwargs: Any) -> None:
        super().__init__(url, **kwargs)
        self.max_chars = max_chars
        self.with_prompt = with_prompt

    def describe(self, text: str, mode: str) -> str:
        if mode not in MODES:
            raise ValueError(f"unknown describe mode {mode!r}")
        if self.max_chars is not None and len(text) > self.max_chars:
            raise ContextOverflow(f"{len(text)} characters exceeds limit {self.max_chars}")
        payload = load_prompt(_PROMPT_FILES[mode]) + "\n" + text if self.with_prompt else text
        data = self._post("/describe", {"mode": mode, "input": payload})
        out = data.get("text")
        if not isinstance(out, str):
            raise MalformedResponse("describe: 'text' missing")
        return out


@dataclass
class EncoderSuite:
    embedder: Embedder
    reranker: Reranker
    describer: Describer | None = None

    @classmethod
    def local(cls, dim: int = DEFAULT_DIM) -> EncoderSuite:
        return cls(LocalEmbedder(dim), LocalReranker(), LocalDescriber())


def embed(client: Embedder, texts: Sequence[str]) -> list[np.ndarray]:
    return client.embed(texts)


def rerank(client: Reranker, query: str, documents: Sequence[str]) -> list[float]:
    return client.rerank(query, documents)


def describe(client: Describer, text: str, mode: str) -> str:
    return client.describe(text, mode)


def make_embedder(spec: str | None) -> Embedder:
    """``local`` (default) or a base URL; falls back to REPOKG_EMBED_URL."""
    spec = spec or os.environ.get("REPOKG_EMBED_URL") or "local"
    return LocalEmbedder() if spec == "local" else HttpEmbedder(spec)


def make_reranker(spec: str | None) -> Reranker:
    spec = spec or os.environ.get("REPOKG_RERANK_URL") or "local"
    return LocalReranker() if spec == "local" else HttpReranker(spec)


def make_describer(spec: str | None) -> Describer:
    spec = spec or os.environ.get("REPOKG_DESCRIBE_URL") or "local"
    return LocalDescriber() if spec == "local" else HttpDescriber(spec)
