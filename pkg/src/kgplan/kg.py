"""Immutable triple store with forward, inverse and numeric-tail indices.

Triples are read from a TSV file ``head<TAB>relation<TAB>tail[<TAB>L]``. The
optional fourth column ``L`` marks the tail as a numeric literal; every other
tail is an entity id, even when it looks like a number.

Node references are plain values: an entity is its ``str`` id, a numeric
literal is a ``decimal.Decimal``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Union

logger = logging.getLogger(__name__)

NodeRef = Union[str, Decimal]
Triple = tuple[str, str, NodeRef]

LITERAL_MARKER = "L"


class KGError(ValueError):
    """Raised for malformed graph files and unknown ids."""


def is_numeric(node: NodeRef) -> bool:
    return isinstance(node, Decimal)


def node_key(node: NodeRef) -> tuple:
    """Total order over mixed entity/numeric nodes: entities first, then numbers."""
    if isinstance(node, Decimal):
        return (1, node, str(node))
    return (0, node)


def sorted_nodes(nodes: Iterable[NodeRef]) -> list[NodeRef]:
    return sorted(nodes, key=node_key)


@dataclass(frozen=True)
class KnowledgeGraph:
    entity_labels: Mapping[str, str]
    relation_labels: Mapping[str, str]
    forward: Mapping[tuple[str, str], frozenset]
    inverse: Mapping[tuple[str, str], frozenset]
    numeric: Mapping[str, tuple[tuple[str, Decimal], ...]]
    triple_count: int
    # derived lookups used by the samplers; all tuples are sorted
    out_relations: Mapping[str, tuple[str, ...]] = field(repr=False, default_factory=dict)
    in_branches: Mapping[str, tuple[tuple[str, str], ...]] = field(repr=False, default_factory=dict)

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[Triple],
        labels: Mapping[str, str] | None = None,
    ) -> "KnowledgeGraph":
        labels = labels or {}
        forward: dict[tuple[str, str], set] = defaultdict(set)
        inverse: dict[tuple[str, str], set] = defaultdict(set)
        numeric: dict[str, set] = defaultdict(set)
        entities: set[str] = set()
        relations: set[str] = set()
        seen: set[Triple] = set()

        for head, rel, tail in triples:
            if (head, rel, tail) in seen:
                continue
            seen.add((head, rel, tail))
            entities.add(head)
            relations.add(rel)
            forward[(head, rel)].add(tail)
            if isinstance(tail, Decimal):
                numeric[rel].add((head, tail))
            else:
                entities.add(tail)
                inverse[(tail, rel)].add(head)

        if not seen:
            raise KGError("empty knowledge graph")

        out_rel: dict[str, set[str]] = defaultdict(set)
        for head, rel in forward:
            out_rel[head].add(rel)
        in_br: dict[str, set[tuple[str, str]]] = defaultdict(set)
        for tail, rel in inverse:
            for head in inverse[(tail, rel)]:
                in_br[tail].add((head, rel))

        return cls(
            entity_labels=MappingProxyType({e: labels.get(e, e) for e in sorted(entities)}),
            relation_labels=MappingProxyType({r: labels.get(r, r) for r in sorted(relations)}),
            forward=MappingProxyType({k: frozenset(v) for k, v in forward.items()}),
            inverse=MappingProxyType({k: frozenset(v) for k, v in inverse.items()}),
            numeric=MappingProxyType(
                {r: tuple(sorted(v, key=lambda p: (p[0], p[1]))) for r, v in numeric.items()}
            ),
            triple_count=len(seen),
            out_relations=MappingProxyType({h: tuple(sorted(v)) for h, v in out_rel.items()}),
            in_branches=MappingProxyType({t: tuple(sorted(v)) for t, v in in_br.items()}),
        )

    # -- lookups -----------------------------------------------------------

    @property
    def entities(self) -> tuple[str, ...]:
        return tuple(self.entity_labels)

    @property
    def relations(self) -> tuple[str, ...]:
        return tuple(self.relation_labels)

    def has_entity(self, entity: str) -> bool:
        return entity in self.entity_labels

    def has_relation(self, relation: str) -> bool:
        return relation in self.relation_labels

    def _check(self, head: str | None = None, relation: str | None = None) -> None:
        if head is not None and head not in self.entity_labels:
            raise KGError(f"unknown entity {head!r}")
        if relation is not None and relation not in self.relation_labels:
            raise KGError(f"unknown relation {relation!r}")

    def neighbors(self, head: str, relation: str) -> frozenset:
        self._check(head, relation)
        return self.forward.get((head, relation), frozenset())

    def heads(self, tail: str, relation: str) -> frozenset:
        self._check(tail, relation)
        return self.inverse.get((tail, relation), frozenset())

    def numeric_pairs(self, relation: str) -> list[tuple[str, Decimal]]:
        self._check(relation=relation)
        return list(self.numeric.get(relation, ()))

    def label(self, node: NodeRef) -> str:
        if isinstance(node, Decimal):
            return str(node)
        try:
            return self.entity_labels[node]
        except KeyError:
            raise KGError(f"unknown entity {node!r}") from None

    def relation_label(self, relation: str) -> str:
        try:
            return self.relation_labels[relation]
        except KeyError:
            raise KGError(f"unknown relation {relation!r}") from None

    def triples(self) -> list[Triple]:
        """All stored triples in deterministic order."""
        out = []
        for head, rel in sorted(self.forward):
            for tail in sorted_nodes(self.forward[(head, rel)]):
                out.append((head, rel, tail))
        return out


def neighbors(kg: KnowledgeGraph, head: str, relation: str) -> frozenset:
    return kg.neighbors(head, relation)


def numeric_pairs(kg: KnowledgeGraph, relation: str) -> list[tuple[str, Decimal]]:
    return kg.numeric_pairs(relation)


def read_labels(path: str | Path) -> dict[str, str]:
    labels: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise KGError(f"{path}:{lineno}: expected 'id<TAB>label', got {len(parts)} fields")
            ident, label = parts
            if ident in labels and labels[ident] != label:
                raise KGError(
                    f"{path}:{lineno}: conflicting labels for {ident!r}: "
                    f"{labels[ident]!r} vs {label!r}"
                )
            labels[ident] = label
    return labels


def read_triples(path: str | Path) -> list[Triple]:
    triples: list[Triple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) == 3:
                head, rel, tail = parts
                node: NodeRef = tail
            elif len(parts) == 4 and parts[3] == LITERAL_MARKER:
                head, rel, tail, _ = parts
                try:
                    node = Decimal(tail)
                except InvalidOperation:
                    raise KGError(f"{path}:{lineno}: literal tail {tail!r} is not a decimal") from None
                if not node.is_finite():
                    raise KGError(f"{path}:{lineno}: literal tail {tail!r} is not finite")
            else:
                raise KGError(f"{path}:{lineno}: malformed record, expected 3 fields (+ optional 'L')")
            if not head or not rel or not tail:
                raise KGError(f"{path}:{lineno}: empty field")
            triples.append((head, rel, node))
    return triples


def load_kg(
    path: str | Path,
    labels_path: str | Path | None = None,
    format: str = "tsv",
) -> KnowledgeGraph:
    """Load a TSV triple file (and optional ``id<TAB>label`` file) into a graph."""
    if format not in ("tsv", "tsv-triples"):
        raise KGError(f"unsupported format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise KGError(f"no such file: {path}")
    triples = read_triples(path)
    if not triples:
        raise KGError("empty knowledge graph")
    labels = read_labels(labels_path) if labels_path else None
    kg = KnowledgeGraph.from_triples(triples, labels)
    logger.info(
        "loaded %s: %d triples, %d entities, %d relations",
        path, kg.triple_count, len(kg.entity_labels), len(kg.relation_labels),
    )
    return kg


def write_kg(triples: Iterable[Triple], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for head, rel, tail in triples:
            if isinstance(tail, Decimal):
                fh.write(f"{head}\t{rel}\t{tail}\t{LITERAL_MARKER}\n")
            else:
                fh.write(f"{head}\t{rel}\t{tail}\n")
