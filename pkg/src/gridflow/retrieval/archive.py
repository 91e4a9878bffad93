"""Exemplar archive, embedding cache and the two-stage selection pipeline."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from gridflow.gateway import ChatMessage, ChatRequest, ChatResponse, TokenUsage, mock_tokens
from gridflow.workflow import ExecutionTrace

from .cutoff import DegenerateProfile, adaptive_cutoff
from .filtering import ParseFailure, parse_filter_output, render_filter_prompt
from .similarity import SimilarityProfile, rank_by_similarity

logger = logging.getLogger(__name__)


class ArchiveError(ValueError):
    pass


@dataclass(frozen=True)
class ExemplarRecord:
    id: str
    query_text: str
    workflow: ExecutionTrace

    def __post_init__(self) -> None:
        if not self.query_text.strip():
            raise ArchiveError(f"exemplar {self.id!r}: empty query")
        if len(self.workflow) == 0:
            raise ArchiveError(f"exemplar {self.id!r}: empty workflow")

    def to_record(self) -> dict[str, Any]:
        return {"id": self.id, "query": self.query_text, "workflow": self.workflow.to_records()}

    @classmethod
    def from_record(cls, data: Mapping[str, Any]) -> "ExemplarRecord":
        for key in ("id", "query", "workflow"):
            if key not in data:
                raise ArchiveError(f"missing field {key!r}")
        if not isinstance(data["workflow"], list):
            raise ArchiveError("'workflow' must be a list of invocations")
        try:
            workflow = ExecutionTrace.from_records(data["workflow"])
        except ValueError as exc:
            raise ArchiveError(str(exc)) from None
        return cls(str(data["id"]), str(data["query"]), workflow)


def parse_archive(text: str, source: str = "<archive>") -> list[ExemplarRecord]:
    """Parse line-delimited archive records; errors carry file:line context."""
    records, problems = [], []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = ExemplarRecord.from_record(json.loads(line))
        except (json.JSONDecodeError, ArchiveError) as exc:
            problems.append(f"{source}:{lineno}: {exc}")
            continue
        if rec.id in seen:
            problems.append(f"{source}:{lineno}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    if problems:
        raise ArchiveError("\n".join(problems))
    return records


def load_archive(path: str | os.PathLike) -> list[ExemplarRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_archive(fh.read(), str(path))


def dump_archive(records: Iterable[ExemplarRecord]) -> str:
    return "".join(json.dumps(r.to_record(), ensure_ascii=False) + "\n" for r in records)


class EmbeddingCache:
    """Vectors keyed by (embedder identity, sha256 of the text).

    Concurrent readers are fine; writers take the lock.
    """

    def __init__(self, embedder_id: str, dim: int | None = None,
                 entries: Mapping[str, Sequence[float]] | None = None):
        self.embedder_id = embedder_id
        self.dim = dim
        self._entries: dict[str, np.ndarray] = {
            k: np.asarray(v, dtype=float) for k, v in (entries or {}).items()
        }
        self._lock = threading.Lock()

    @staticmethod
    def digest(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, text: str) -> np.ndarray | None:
        return self._entries.get(self.digest(text))

    def put(self, text: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        with self._lock:
            if self.dim is None:
                self.dim = vec.size
            elif vec.size != self.dim:
                raise ArchiveError(f"cache dimension {self.dim} != vector dimension {vec.size}")
            self._entries[self.digest(text)] = vec

    def to_json(self) -> str:
        with self._lock:
            entries = {k: [float(x) for x in v] for k, v in sorted(self._entries.items())}
        return json.dumps({"embedder": self.embedder_id, "dim": self.dim, "entries": entries})

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike, embedder_id: str) -> "EmbeddingCache":
        """Load a cache file; entries from another embedder are discarded."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if data.get("embedder") != embedder_id:
            logger.info("embedding cache %s is for %r, not %r; starting empty",
                        path, data.get("embedder"), embedder_id)
            return cls(embedder_id)
        return cls(embedder_id, data.get("dim"), data.get("entries", {}))


def embed_texts(texts: Sequence[str], embedder, cache: EmbeddingCache | None = None,
                workers: int = 1) -> list[np.ndarray]:
    """Embed ``texts`` through the cache; results come back in input order."""
    if cache is not None and cache.embedder_id != embedder.identity:
        raise ArchiveError(f"cache belongs to {cache.embedder_id!r}, embedder is {embedder.identity!r}")
    out: list[np.ndarray | None] = [cache.get(t) if cache else None for t in texts]
    missing = [i for i, v in enumerate(out) if v is None]
    if missing:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                vecs = list(pool.map(lambda i: embedder.embed(texts[i]), missing))
        else:
            vecs = [embedder.embed(texts[i]) for i in missing]
        for i, vec in zip(missing, vecs):
            out[i] = vec
            if cache is not None:
                cache.put(texts[i], vec)
    return out  # type: ignore[return-value]


@dataclass(frozen=True)
class RetrievalMode:
    kind: str = "adaptive"  # adaptive | topk | none
    k: int = 0

    @classmethod
    def parse(cls, text: str) -> "RetrievalMode":
        text = text.strip().lower()
        if text in ("adaptive", "none"):
            return cls(text)
        if text.startswith("topk:"):
            try:
                k = int(text[5:])
            except ValueError:
                raise ValueError(f"bad top-k retrieval mode {text!r}") from None
            if k < 1:
                raise ValueError("top-k needs k >= 1")
            return cls("topk", k)
        raise ValueError(f"unknown retrieval mode {text!r} (adaptive | topk:<k> | none)")

    def __str__(self) -> str:
        return f"topk:{self.k}" if self.kind == "topk" else self.kind


@dataclass
class Selection:
    records: list[ExemplarRecord]
    candidates: list[ExemplarRecord] = field(default_factory=list)
    profile: SimilarityProfile | None = None
    cutoff: int | None = None
    kept_indices: list[int] | None = None
    filter_fallback: bool = False
    usage: TokenUsage = TokenUsage()


def build_candidate_set(profile: SimilarityProfile, cutoff: int,
                        archive: Sequence[ExemplarRecord]) -> list[ExemplarRecord]:
    if not 1 <= cutoff <= len(profile):
        raise ValueError(f"cutoff {cutoff} outside 1..{len(profile)}")
    return [archive[i] for i in profile.original_index[:cutoff]]


class KeepAllFilter:
    """Mock filter policy that answers with every candidate index."""

    name = "keep-all"

    def chat_complete(self, request: ChatRequest) -> ChatResponse:
        prompt = request.last_user_message()
        head, _, rest = prompt.partition("CANDIDATES (JSON): ")
        payload = rest.split("\n\nEach candidate has:", 1)[0]
        count = len(json.loads(payload))
        text = json.dumps(list(range(count)))
        return ChatResponse(text=text, usage=TokenUsage(mock_tokens(prompt), mock_tokens(text)))


def select_exemplars(query: str, archive: Sequence[ExemplarRecord], embedder, filter_policy,
                     cache: EmbeddingCache | None = None,
                     mode: RetrievalMode = RetrievalMode()) -> Selection:
    """Rank -> adaptive cutoff -> candidate set -> one filter call -> W_sub.

    ``filter_policy`` is any object with ``chat_complete(ChatRequest)``.
    """
    if mode.kind == "none":
        return Selection(records=[])
    if not archive:
        raise ArchiveError("archive is empty")
    vectors = embed_texts([r.query_text for r in archive], embedder, cache)
    profile = rank_by_similarity(embedder.embed(query), vectors)

    if mode.kind == "topk":
        cutoff = min(mode.k, len(archive))
        candidates = build_candidate_set(profile, cutoff, archive)
        return Selection(records=candidates, candidates=candidates, profile=profile, cutoff=cutoff)

    try:
        cutoff = adaptive_cutoff(profile)
    except DegenerateProfile:
        cutoff = len(archive)
        logger.info("archive of %d records is too small for a cutoff; keeping all", cutoff)
    candidates = build_candidate_set(profile, cutoff, archive)

    prompt = render_filter_prompt(query, candidates)
    reply = filter_policy.chat_complete(ChatRequest((ChatMessage("user", prompt),)))
    try:
        if reply.text is None:
            raise ParseFailure("filter answered with a tool call")
        kept = sorted(parse_filter_output(reply.text, len(candidates)))
        records = [candidates[j] for j in kept]
        fallback = False
    except ParseFailure as exc:
        logger.warning("filter output unusable (%s); keeping all %d candidates", exc, len(candidates))
        kept, records, fallback = None, list(candidates), True
    return Selection(records=records, candidates=candidates, profile=profile, cutoff=cutoff,
                     kept_indices=kept, filter_fallback=fallback, usage=reply.usage)
