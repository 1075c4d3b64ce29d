"""Passage retrieval: a bundled TF-IDF retriever and an HTTP backend."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import requests

from .kg import KnowledgeGraph, sorted_nodes

_TOKEN = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str


@dataclass(frozen=True)
class Passage:
    doc_id: str
    title: str
    text: str
    score: float


@dataclass(frozen=True)
class RetrievedInfo:
    query: str
    passages: tuple[Passage, ...] = ()

    def render(self) -> str:
        return "\n".join(f"{p.title}: {p.text}" for p in self.passages)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "passages": [
                {"id": p.doc_id, "title": p.title, "score": round(p.score, 6)} for p in self.passages
            ],
        }


class Retriever(Protocol):
    def retrieve(self, query: str, k: int) -> RetrievedInfo: ...


class RetrievalError(RuntimeError):
    pass


class LexicalRetriever:
    """TF-IDF scoring over a local corpus.

    ``score(q, d) = sum(tf(t, d) * log(1 + N / df(t)) for t in set(tokens(q)))``
    where ``tf`` is the raw count of ``t`` in the document's title and text.
    Ties break by corpus order; zero-score documents are never returned.
    """

    def __init__(self, docs: Iterable[Document]) -> None:
        self.docs = list(docs)
        if not self.docs:
            raise RetrievalError("empty corpus")
        self._tf = [Counter(tokenize(f"{d.title} {d.text}")) for d in self.docs]
        df: Counter = Counter()
        for tf in self._tf:
            df.update(tf.keys())
        n = len(self.docs)
        self.idf = {t: math.log(1 + n / c) for t, c in df.items()}
        self._postings: dict[str, list[int]] = {}
        for i, tf in enumerate(self._tf):
            for t in tf:
                self._postings.setdefault(t, []).append(i)

    def score(self, query: str, index: int) -> float:
        tf = self._tf[index]
        return sum(tf[t] * self.idf[t] for t in set(tokenize(query)) if t in tf)

    def retrieve(self, query: str, k: int = 5) -> RetrievedInfo:
        if k <= 0:
            return RetrievedInfo(query)
        candidates: set[int] = set()
        for t in set(tokenize(query)):
            candidates.update(self._postings.get(t, ()))
        scored = sorted(((self.score(query, i), i) for i in candidates), key=lambda x: (-x[0], x[1]))
        passages = tuple(
            Passage(self.docs[i].id, self.docs[i].title, self.docs[i].text, s)
            for s, i in scored[:k] if s > 0
        )
        return RetrievedInfo(query, passages)


class HTTPRetriever:
    """Remote retriever: ``POST {base_url}/retrieve {"query", "k"}`` -> ``{"passages": [...]}``."""

    def __init__(self, base_url: str, timeout: float = 30.0, session: requests.Session | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def retrieve(self, query: str, k: int = 5) -> RetrievedInfo:
        if k <= 0:
            return RetrievedInfo(query)
        resp = self.session.post(f"{self.base_url}/retrieve", json={"query": query, "k": k}, timeout=self.timeout)
        resp.raise_for_status()
        rows = resp.json()["passages"]
        passages = sorted(
            (Passage(str(r["id"]), r.get("title", ""), r.get("text", ""), float(r.get("score", 0.0))) for r in rows),
            key=lambda p: -p.score,
        )
        return RetrievedInfo(query, tuple(passages[:k]))


def load_corpus(path: str | Path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                docs.append(Document(str(row["id"]), row.get("title", ""), row["text"]))
    if not docs:
        raise RetrievalError(f"empty corpus: {path}")
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            fh.write(json.dumps({"id": d.id, "title": d.title, "text": d.text}, ensure_ascii=False) + "\n")


def corpus_from_kg(kg: KnowledgeGraph) -> list[Document]:
    """One document per head entity, listing its facts as short sentences."""
    docs = []
    for head in sorted(kg.out_relations):
        label = kg.label(head)
        facts = []
        for rel in kg.out_relations[head]:
            for tail in sorted_nodes(kg.forward[(head, rel)]):
                facts.append(f"{label} {kg.relation_label(rel)} {kg.label(tail)}.")
        docs.append(Document(head, label, " ".join(facts)))
    return docs
