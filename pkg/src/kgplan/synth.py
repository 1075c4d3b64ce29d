"""Seeded synthetic knowledge graphs for offline runs and scale tests.

The graph is typed (people, cities, countries, organizations, works, genres,
languages) with a handful of entity relations and numeric attributes, so that
every query pattern has plenty of valid instances with small answer sets.
Labels are unique and never contain ``", "``, ``#`` or double quotes, which
keeps them unambiguous after answer lists are joined into sub-questions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

from .kg import KnowledgeGraph, Triple, write_kg

_SYLLABLES = (
    "al", "bar", "cor", "dan", "el", "fen", "gor", "hal", "ir", "jun", "kel", "lor",
    "mar", "nor", "or", "pel", "quin", "ras", "sol", "tor", "ul", "vas", "wen", "yor", "zan",
)
_CITY_SUFFIX = ("ford", "ton", "burg", "haven", "mouth", "stad", "field", "port")
_ORG_KIND = ("Institute", "Company", "Guild", "Press", "Society", "Works")
_WORK_KIND = ("The Book", "Songs", "Tales", "The Chronicle", "Letters", "The Atlas")
_GENRES = (
    "epic", "satire", "elegy", "fable", "romance", "mystery", "tragedy", "comedy", "memoir",
    "travelogue", "allegory", "parable", "saga", "sonnet cycle", "idyll", "pastoral",
    "thriller", "chronicle play", "ode", "essay collection",
)

# (relation id, label, head type, tail type, min out-degree, max out-degree)
_RELATIONS = (
    ("R1", "country of citizenship", "person", "country", 1, 1),
    ("R2", "place of birth", "person", "city", 1, 1),
    ("R3", "employer", "person", "org", 1, 2),
    ("R4", "languages spoken", "person", "language", 1, 3),
    ("R5", "author", "work", "person", 1, 2),
    ("R6", "genre", "work", "genre", 1, 2),
    ("R7", "language of work", "work", "language", 1, 1),
    ("R8", "publisher", "work", "org", 1, 1),
    ("R9", "country", "city", "country", 1, 1),
    ("R10", "twin town", "city", "city", 0, 2),
    ("R11", "headquarters location", "org", "city", 1, 1),
    ("R12", "founded by", "org", "person", 1, 2),
    ("R13", "official language", "country", "language", 1, 2),
    ("R14", "shares border with", "country", "country", 1, 4),
    ("R15", "capital", "country", "city", 1, 1),
    ("R16", "head of state", "country", "person", 1, 1),
)

# (relation id, label, head type, low, high)
_NUMERIC = (
    ("R20", "population", "city", 2_000, 5_000_000),
    ("R21", "population of country", "country", 100_000, 300_000_000),
    ("R22", "year of birth", "person", 1800, 2000),
    ("R23", "publication year", "work", 1700, 2020),
    ("R24", "number of employees", "org", 5, 90_000),
)


@dataclass(frozen=True)
class SynthSizes:
    people: int = 400
    cities: int = 150
    countries: int = 40
    orgs: int = 120
    works: int = 300
    languages: int = 25


def _word(rng: random.Random, n: int) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(n)).capitalize()


class _Names:
    def __init__(self, rng: random.Random) -> None:
        self.rng = rng
        self.used: set[str] = set()

    def make(self, build) -> str:
        while True:
            name = build(self.rng)
            if name not in self.used:
                self.used.add(name)
                return name


def synthesize(seed: int = 0, sizes: SynthSizes | None = None) -> tuple[list[Triple], dict[str, str]]:
    """Triples and an id -> label map for a reproducible synthetic graph."""
    sizes = sizes or SynthSizes()
    rng = random.Random(f"synth:{seed}")
    names = _Names(rng)
    labels: dict[str, str] = {}
    by_type: dict[str, list[str]] = {}
    counter = 0

    def add(kind: str, n: int, build) -> None:
        nonlocal counter
        ids = []
        for _ in range(n):
            counter += 1
            ident = f"Q{counter}"
            labels[ident] = names.make(build)
            ids.append(ident)
        by_type[kind] = ids

    add("person", sizes.people, lambda r: f"{_word(r, 2)} {_word(r, 2)}")
    add("city", sizes.cities, lambda r: _word(r, 2) + r.choice(_CITY_SUFFIX))
    add("country", sizes.countries,
        lambda r: f"Republic of {_word(r, 2)}" if r.random() < 0.3 else _word(r, 3) + "ia")
    add("org", sizes.orgs, lambda r: f"{_word(r, 2)} {r.choice(_ORG_KIND)}")
    add("work", sizes.works, lambda r: f"{r.choice(_WORK_KIND)} of {_word(r, 2)}")
    add("language", sizes.languages, lambda r: _word(r, 2) + "ish")
    genres = []
    for g in _GENRES:
        counter += 1
        labels[f"Q{counter}"] = g
        names.used.add(g)
        genres.append(f"Q{counter}")
    by_type["genre"] = genres

    triples: list[Triple] = []
    for rid, label, head_type, tail_type, lo, hi in _RELATIONS:
        labels[rid] = label
        tails = by_type[tail_type]
        for head in by_type[head_type]:
            k = rng.randint(lo, hi)
            pool = [t for t in tails if t != head]
            for tail in rng.sample(pool, min(k, len(pool))):
                triples.append((head, rid, tail))
    for rid, label, head_type, low, high in _NUMERIC:
        labels[rid] = label
        for head in by_type[head_type]:
            triples.append((head, rid, Decimal(rng.randint(low, high))))
    return triples, labels


def synthesize_kg(seed: int = 0, sizes: SynthSizes | None = None) -> KnowledgeGraph:
    triples, labels = synthesize(seed, sizes)
    return KnowledgeGraph.from_triples(triples, labels)


def write_labels(labels: dict[str, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ident, label in labels.items():
            fh.write(f"{ident}\t{label}\n")


def write_synthetic(out_dir: str | Path, seed: int = 0, sizes: SynthSizes | None = None) -> tuple[Path, Path]:
    """Write ``triples.tsv`` and ``labels.tsv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    triples, labels = synthesize(seed, sizes)
    write_kg(triples, out / "triples.tsv")
    write_labels(labels, out / "labels.tsv")
    return out / "triples.tsv", out / "labels.tsv"
