"""Plain-text reference materials: ingestion, chunking, keyword retrieval.

Materials arrive as UTF-8 text (extraction from PDFs and friends happens
upstream). Bodies are split at paragraph boundaries into chunks of at most
200 words; over-long paragraphs are split at sentence boundaries and then
hard-split. Retrieval is deterministic keyword overlap, not embeddings:
score = |query tokens ∩ chunk tokens| / |query tokens| over normalized
(lowercased, punctuation-stripped) tokens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyBody

MAX_CHUNK_WORDS = 200

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.lower()))


@dataclass
class Chunk:
    index: int
    text: str


@dataclass
class Material:
    material_id: str
    title: str
    body: str
    chunks: list[Chunk] = field(default_factory=list)


def chunk_body(body: str) -> list[str]:
    """Split a body into ≤200-word pieces, preserving the word sequence."""
    pieces: list[str] = []
    for paragraph in re.split(r"\n\s*\n", body):
        words = paragraph.split()
        if not words:
            continue
        if len(words) <= MAX_CHUNK_WORDS:
            pieces.append(" ".join(words))
            continue
        # Paragraph too long: pack whole sentences, hard-splitting any
        # sentence that alone exceeds the cap.
        pending: list[str] = []
        for sentence in _SENTENCE_RE.split(paragraph.strip()):
            s_words = sentence.split()
            if not s_words:
                continue
            if pending and len(pending) + len(s_words) > MAX_CHUNK_WORDS:
                pieces.append(" ".join(pending))
                pending = []
            if len(s_words) > MAX_CHUNK_WORDS:
                for i in range(0, len(s_words), MAX_CHUNK_WORDS):
                    part = s_words[i : i + MAX_CHUNK_WORDS]
                    if len(part) == MAX_CHUNK_WORDS:
                        pieces.append(" ".join(part))
                    else:
                        pending = part
            else:
                pending.extend(s_words)
        if pending:
            pieces.append(" ".join(pending))
    return pieces


def _slug(title: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", title.lower()).strip("-")
    return slug or "material"


class ContentStore:
    """Append-only corpus of materials; reads are safe during ingestion."""

    def __init__(self) -> None:
        self._materials: dict[str, Material] = {}

    def ingest(self, title: str, body: str, material_id: str | None = None) -> str:
        if not body or not body.strip():
            raise EmptyBody("material body is empty")
        if material_id is None:
            material_id = _slug(title)
            n = 2
            while material_id in self._materials:
                material_id = f"{_slug(title)}-{n}"
                n += 1
        chunks = [Chunk(index=i, text=t) for i, t in enumerate(chunk_body(body))]
        self._materials[material_id] = Material(
            material_id=material_id, title=title, body=body, chunks=chunks
        )
        return material_id

    def get(self, material_id: str) -> Material | None:
        return self._materials.get(material_id)

    def material_ids(self) -> list[str]:
        return list(self._materials)

    def retrieve(
        self,
        query: str,
        k: int,
        material_ids: list[str] | None = None,
    ) -> list[tuple[str, int, float]]:
        """Top-k chunks by keyword overlap; ties by (material_id, index).

        ``material_ids`` narrows the search to an agent's attached
        materials; unknown ids are ignored.
        """
        if k <= 0:
            return []
        query_tokens = tokenize(query)
        if not query_tokens:
            return []
        if material_ids is None:
            pool = list(self._materials.values())
        else:
            pool = [self._materials[m] for m in material_ids if m in self._materials]
        scored: list[tuple[str, int, float]] = []
        for material in pool:
            for chunk in material.chunks:
                overlap = len(query_tokens & tokenize(chunk.text))
                if overlap:
                    scored.append(
                        (material.material_id, chunk.index, overlap / len(query_tokens))
                    )
        scored.sort(key=lambda item: (-item[2], item[0], item[1]))
        return scored[:k]

    def chunk_texts(self, results: list[tuple[str, int, float]]) -> list[str]:
        out = []
        for material_id, index, _score in results:
            material = self._materials[material_id]
            out.append(material.chunks[index].text)
        return out

    def load_directory(self, path: str | Path) -> list[str]:
        """Ingest every .txt/.md file; the filename stem is the material id."""
        ingested = []
        directory = Path(path)
        for file in sorted(directory.iterdir()):
            if file.suffix not in (".txt", ".md") or not file.is_file():
                continue
            body = file.read_text(encoding="utf-8")
            ingested.append(self.ingest(title=file.stem, body=body, material_id=file.stem))
        return ingested
