"""Query patterns over a knowledge graph: grounding and exact answer sets.

Nine pattern shapes are supported. An :class:`Instance` stores its anchors and
relations in a fixed per-pattern layout:

========  ===================  ======================  ==========================
pattern   anchors              relations               meaning
========  ===================  ======================  ==========================
1p        (a,)                 (r1,)                   S(a, r1)
2p        (a,)                 (r1, r2)                S(S(a, r1), r2)
3p        (a,)                 (r1, r2, r3)            three projections
2i        (a1, a2)             (r1, r2)                S(a1, r1) & S(a2, r2)
3i        (a1, a2, a3)         (r1, r2, r3)            three-way intersection
2u        (a1, a2)             (r1, r2)                S(a1, r1) | S(a2, r2)
ip        (a1, a2)             (r1, r2, r3)            S(S(a1, r1) & S(a2, r2), r3)
pi        (a1, a2)             (r1, r2, r3)            S(S(a1, r1), r2) & S(a2, r3)
compare   (e1, e2)             (r,)                    verdict over (v1, v2, kind)
========  ===================  ======================  ==========================
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import random
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Iterable, Iterator

from .kg import KGError, KnowledgeGraph, NodeRef, node_key

logger = logging.getLogger(__name__)

DEFAULT_MAX_ANSWERS = 100


class Pattern(str, Enum):
    ONE_P = "1p"
    TWO_P = "2p"
    THREE_P = "3p"
    TWO_I = "2i"
    THREE_I = "3i"
    TWO_U = "2u"
    IP = "ip"
    PI = "pi"
    COMPARE = "compare"

    def __str__(self) -> str:
        return self.value


ALL_PATTERNS: tuple[Pattern, ...] = tuple(Pattern)

# number of sub-questions a verbalized instance of each pattern carries
ARITY: dict[Pattern, int] = {
    Pattern.ONE_P: 1,
    Pattern.TWO_P: 2,
    Pattern.THREE_P: 3,
    Pattern.TWO_I: 2,
    Pattern.THREE_I: 3,
    Pattern.TWO_U: 2,
    Pattern.IP: 3,
    Pattern.PI: 3,
    Pattern.COMPARE: 2,
}

_SHAPE: dict[Pattern, tuple[int, int]] = {
    Pattern.ONE_P: (1, 1),
    Pattern.TWO_P: (1, 2),
    Pattern.THREE_P: (1, 3),
    Pattern.TWO_I: (2, 2),
    Pattern.THREE_I: (3, 3),
    Pattern.TWO_U: (2, 2),
    Pattern.IP: (2, 3),
    Pattern.PI: (2, 3),
    Pattern.COMPARE: (2, 1),
}

COMPARE_KINDS = ("same", "lesser", "greater")


class GroundingError(ValueError):
    pass


class InvalidInstance(ValueError):
    pass


@dataclass(frozen=True)
class Instance:
    pattern: Pattern
    anchors: tuple[str, ...]
    relations: tuple[str, ...]
    kind: str | None = None
    values: tuple[Decimal, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        n_anchor, n_rel = _SHAPE[self.pattern]
        if len(self.anchors) != n_anchor or len(self.relations) != n_rel:
            raise InvalidInstance(
                f"{self.pattern} expects {n_anchor} anchors and {n_rel} relations, "
                f"got {len(self.anchors)} and {len(self.relations)}"
            )
        if self.pattern is Pattern.COMPARE:
            if self.kind not in COMPARE_KINDS:
                raise InvalidInstance(f"compare kind must be one of {COMPARE_KINDS}, got {self.kind!r}")
            if len(self.values) != 2:
                raise InvalidInstance("compare needs two numeric values")
        elif self.kind is not None or self.values:
            raise InvalidInstance(f"kind/values only apply to compare, not {self.pattern}")

    @property
    def branches(self) -> tuple[tuple[str, str], ...]:
        """Anchor/relation pairs of the one-hop branches (i, u, ip patterns)."""
        n = len(self.anchors)
        return tuple(zip(self.anchors, self.relations[:n]))

    def canonical(self) -> tuple:
        """Key under which order-insensitive instances compare equal."""
        p = self.pattern
        if p in (Pattern.TWO_I, Pattern.THREE_I, Pattern.TWO_U):
            br = tuple(sorted(self.branches))
            return (p.value, tuple(a for a, _ in br), tuple(r for _, r in br), None, ())
        if p is Pattern.IP:
            br = tuple(sorted(self.branches))
            return (p.value, tuple(a for a, _ in br), tuple(r for _, r in br) + self.relations[2:], None, ())
        if p is Pattern.COMPARE:
            pairs = sorted(zip(self.anchors, self.values), key=lambda x: (x[0], x[1]))
            return (
                p.value,
                tuple(a for a, _ in pairs),
                self.relations,
                self.kind,
                tuple(str(v) for _, v in pairs),
            )
        return (p.value, self.anchors, self.relations, None, ())

    def to_dict(self) -> dict:
        d: dict = {
            "pattern": self.pattern.value,
            "anchors": list(self.anchors),
            "relations": list(self.relations),
        }
        if self.pattern is Pattern.COMPARE:
            d["kind"] = self.kind
            d["values"] = [str(v) for v in self.values]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        return cls(
            pattern=Pattern(d["pattern"]),
            anchors=tuple(d["anchors"]),
            relations=tuple(d["relations"]),
            kind=d.get("kind"),
            values=tuple(Decimal(v) for v in d.get("values", ())),
        )


def instance_hash(instance: Instance) -> str:
    payload = json.dumps(instance.canonical(), separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class GoldAnswer:
    """Either an entity set (``nodes``/``answers``) or a compare ``verdict``."""

    nodes: frozenset = field(default_factory=frozenset)
    answers: tuple[str, ...] = ()
    verdict: str | None = None

    @property
    def is_verdict(self) -> bool:
        return self.verdict is not None

    def as_list(self) -> list[str]:
        return [self.verdict] if self.verdict is not None else list(self.answers)


# -- evaluation ----------------------------------------------------------------


def _project(kg: KnowledgeGraph, nodes: Iterable[NodeRef], relation: str) -> frozenset:
    out: set = set()
    for node in nodes:
        if isinstance(node, str):
            out |= kg.forward.get((node, relation), frozenset())
    return frozenset(out)


def _one(kg: KnowledgeGraph, anchor: str, relation: str) -> frozenset:
    return kg.forward.get((anchor, relation), frozenset())


def compare_verdict(
    v1: Decimal,
    v2: Decimal,
    kind: str,
    label1: str | None = None,
    label2: str | None = None,
) -> str:
    """'Yes'/'No' for ``same``; the label with the extreme value otherwise."""
    if kind == "same":
        return "Yes" if v1 == v2 else "No"
    if kind not in ("lesser", "greater"):
        raise ValueError(f"unknown compare kind {kind!r}")
    if v1 == v2:
        raise ValueError("tie: lesser/greater undefined for equal values")
    first = v1 < v2 if kind == "lesser" else v1 > v2
    return label1 if first else label2


def _stages(kg: KnowledgeGraph, inst: Instance) -> tuple[frozenset, list[frozenset]]:
    """Final node set plus every intermediate set that must be non-empty."""
    p, a, r = inst.pattern, inst.anchors, inst.relations
    if p is Pattern.ONE_P:
        s = _one(kg, a[0], r[0])
        return s, [s]
    if p in (Pattern.TWO_P, Pattern.THREE_P):
        cur = _one(kg, a[0], r[0])
        hops = [cur]
        for rel in r[1:]:
            cur = _project(kg, cur, rel)
            hops.append(cur)
        return cur, hops
    if p in (Pattern.TWO_I, Pattern.THREE_I):
        sets = [_one(kg, x, y) for x, y in inst.branches]
        return frozenset.intersection(*sets), sets
    if p is Pattern.TWO_U:
        sets = [_one(kg, x, y) for x, y in inst.branches]
        return frozenset.union(*sets), sets
    if p is Pattern.IP:
        sets = [_one(kg, x, y) for x, y in inst.branches]
        inter = frozenset.intersection(*sets)
        final = _project(kg, inter, r[2])
        return final, sets + [inter]
    if p is Pattern.PI:
        s1 = _one(kg, a[0], r[0])
        s2 = _project(kg, s1, r[1])
        s3 = _one(kg, a[1], r[2])
        return s2 & s3, [s1, s2, s3]
    raise AssertionError(p)


def _check_registered(kg: KnowledgeGraph, inst: Instance) -> None:
    for e in inst.anchors:
        if not kg.has_entity(e):
            raise InvalidInstance(f"unknown entity {e!r}")
    for rel in inst.relations:
        if not kg.has_relation(rel):
            raise InvalidInstance(f"unknown relation {rel!r}")


def _labels(kg: KnowledgeGraph, nodes: Iterable[NodeRef]) -> tuple[str, ...]:
    return tuple(kg.label(n) for n in sorted(nodes, key=node_key))


def answer_set(kg: KnowledgeGraph, instance: Instance) -> GoldAnswer:
    """Exact answer of ``instance`` under set semantics."""
    _check_registered(kg, instance)
    if instance.pattern is Pattern.COMPARE:
        (e1, e2), (rel,) = instance.anchors, instance.relations
        v1, v2 = instance.values
        for e, v in ((e1, v1), (e2, v2)):
            if v not in kg.forward.get((e, rel), frozenset()):
                raise InvalidInstance(f"({e}, {rel}, {v}) is not a stored numeric triple")
        verdict = compare_verdict(v1, v2, instance.kind, kg.label(e1), kg.label(e2))
        return GoldAnswer(verdict=verdict)
    final, _ = _stages(kg, instance)
    return GoldAnswer(nodes=final, answers=_labels(kg, final))


def is_valid(kg: KnowledgeGraph, instance: Instance, max_answers: int = DEFAULT_MAX_ANSWERS) -> bool:
    """Whether ``instance`` may be emitted by grounding.

    Every intermediate set and the final answer must be non-empty and no larger
    than ``max_answers``; branches of i/u/ip patterns must be pairwise distinct;
    set-valued answers must be entities, not numeric literals; lesser/greater
    comparisons must not tie.
    """
    try:
        _check_registered(kg, instance)
    except InvalidInstance:
        return False
    p = instance.pattern
    if p is Pattern.COMPARE:
        if instance.anchors[0] == instance.anchors[1]:
            return False
        # one value per (entity, relation) keeps the sub-questions unambiguous
        rel = instance.relations[0]
        if any(len(kg.forward.get((e, rel), ())) != 1 for e in instance.anchors):
            return False
        try:
            answer_set(kg, instance)
        except (InvalidInstance, ValueError):
            return False
        return True
    if p in (Pattern.TWO_I, Pattern.THREE_I, Pattern.TWO_U, Pattern.IP):
        if len(set(instance.branches)) != len(instance.branches):
            return False
    final, stages = _stages(kg, instance)
    for s in [*stages, final]:
        if not s or len(s) > max_answers:
            return False
    # numeric attributes are reserved for compare questions
    return all(isinstance(n, str) for n in final)


# -- grounding -----------------------------------------------------------------


class _Sampler:
    """One random candidate per call; ``None`` when the draw dead-ends."""

    def __init__(self, kg: KnowledgeGraph, rng: random.Random) -> None:
        self.kg = kg
        self.rng = rng
        self.heads = sorted(kg.out_relations)
        self.targets2 = sorted(t for t, br in kg.in_branches.items() if len(br) >= 2)
        self.targets3 = sorted(t for t, br in kg.in_branches.items() if len(br) >= 3)
        self.targets1 = sorted(kg.in_branches)
        self.ip_mids = [t for t in self.targets2 if t in kg.out_relations]
        self.numeric_rels = sorted(
            r for r, pairs in kg.numeric.items() if len({e for e, _ in pairs}) >= 2
        )

    def _branch(self) -> tuple[str, str]:
        a = self.rng.choice(self.heads)
        return a, self.rng.choice(self.kg.out_relations[a])

    def _hop(self, nodes: frozenset) -> str | None:
        ents = sorted(n for n in nodes if isinstance(n, str) and n in self.kg.out_relations)
        if not ents:
            return None
        return self.rng.choice(self.kg.out_relations[self.rng.choice(ents)])

    def draw(self, p: Pattern) -> Instance | None:
        kg, rng = self.kg, self.rng
        if p is Pattern.ONE_P:
            a, r = self._branch()
            return Instance(p, (a,), (r,))
        if p in (Pattern.TWO_P, Pattern.THREE_P):
            a, r1 = self._branch()
            rels = [r1]
            cur = _one(kg, a, r1)
            for _ in range(1 if p is Pattern.TWO_P else 2):
                nxt = self._hop(cur)
                if nxt is None:
                    return None
                rels.append(nxt)
                cur = _project(kg, cur, nxt)
            return Instance(p, (a,), tuple(rels))
        if p in (Pattern.TWO_I, Pattern.THREE_I):
            pool = self.targets2 if p is Pattern.TWO_I else self.targets3
            if not pool:
                return None
            t = rng.choice(pool)
            brs = rng.sample(kg.in_branches[t], 2 if p is Pattern.TWO_I else 3)
            return Instance(p, tuple(a for a, _ in brs), tuple(r for _, r in brs))
        if p is Pattern.TWO_U:
            b1, b2 = self._branch(), self._branch()
            return Instance(p, (b1[0], b2[0]), (b1[1], b2[1]))
        if p is Pattern.IP:
            if not self.ip_mids:
                return None
            m = rng.choice(self.ip_mids)
            b1, b2 = rng.sample(kg.in_branches[m], 2)
            r3 = rng.choice(kg.out_relations[m])
            return Instance(p, (b1[0], b2[0]), (b1[1], b2[1], r3))
        if p is Pattern.PI:
            if not self.targets1:
                return None
            t = rng.choice(self.targets1)
            a2, r3 = rng.choice(kg.in_branches[t])
            m, r2 = rng.choice(kg.in_branches[t])
            if m not in kg.in_branches:
                return None
            a1, r1 = rng.choice(kg.in_branches[m])
            return Instance(p, (a1, a2), (r1, r2, r3))
        if p is Pattern.COMPARE:
            if not self.numeric_rels:
                return None
            r = rng.choice(self.numeric_rels)
            (e1, v1), (e2, v2) = rng.sample(kg.numeric[r], 2)
            kind = rng.choice(COMPARE_KINDS)
            return Instance(p, (e1, e2), (r,), kind=kind, values=(v1, v2))
        raise AssertionError(p)


def ground(
    kg: KnowledgeGraph,
    pattern: Pattern | str,
    budget: int,
    seed: int | str = 0,
    *,
    max_answers: int = DEFAULT_MAX_ANSWERS,
    exclude: set[str] | frozenset[str] = frozenset(),
    max_attempts: int | None = None,
) -> list[Instance]:
    """Sample up to ``budget`` distinct valid instances of ``pattern``.

    Sampling is seeded rejection sampling; duplicates (by canonical hash) and
    hashes in ``exclude`` are rejected. Returns fewer than ``budget`` instances
    when the attempt limit runs out, logging the shortfall.
    """
    pattern = Pattern(pattern)
    if budget < 1:
        raise GroundingError(f"budget must be >= 1, got {budget}")
    rng = random.Random(f"{seed}:{pattern.value}")
    sampler = _Sampler(kg, rng)
    if max_attempts is None:
        max_attempts = 200 * budget + 2000
    out: list[Instance] = []
    seen: set[str] = set(exclude)
    attempts = 0
    while len(out) < budget and attempts < max_attempts:
        attempts += 1
        cand = sampler.draw(pattern)
        if cand is None:
            continue
        h = instance_hash(cand)
        if h in seen or not is_valid(kg, cand, max_answers):
            continue
        seen.add(h)
        out.append(cand)
    if len(out) < budget:
        logger.warning("%s: shortfall, grounded %d of %d after %d attempts",
                       pattern, len(out), budget, attempts)
    return out


def _candidates(kg: KnowledgeGraph, p: Pattern) -> Iterator[Instance]:
    heads = sorted(kg.out_relations)
    one_hop = [(a, r) for a in heads for r in kg.out_relations[a]]
    if p is Pattern.ONE_P:
        for a, r in one_hop:
            yield Instance(p, (a,), (r,))
    elif p in (Pattern.TWO_P, Pattern.THREE_P):
        def extend(a, rels, cur, depth):
            if depth == 0:
                yield Instance(p, (a,), tuple(rels))
                return
            nxt = sorted({r for n in cur if isinstance(n, str) for r in kg.out_relations.get(n, ())})
            for r in nxt:
                yield from extend(a, rels + [r], _project(kg, cur, r), depth - 1)

        for a, r1 in one_hop:
            yield from extend(a, [r1], _one(kg, a, r1), 1 if p is Pattern.TWO_P else 2)
    elif p in (Pattern.TWO_I, Pattern.THREE_I):
        k = 2 if p is Pattern.TWO_I else 3
        for t in sorted(kg.in_branches):
            for brs in itertools.combinations(kg.in_branches[t], k):
                yield Instance(p, tuple(a for a, _ in brs), tuple(r for _, r in brs))
    elif p is Pattern.TWO_U:
        for b1, b2 in itertools.combinations(one_hop, 2):
            yield Instance(p, (b1[0], b2[0]), (b1[1], b2[1]))
    elif p is Pattern.IP:
        for m in sorted(kg.in_branches):
            for b1, b2 in itertools.combinations(kg.in_branches[m], 2):
                for r3 in kg.out_relations.get(m, ()):
                    yield Instance(p, (b1[0], b2[0]), (b1[1], b2[1], r3))
    elif p is Pattern.PI:
        for t in sorted(kg.in_branches):
            for a2, r3 in kg.in_branches[t]:
                for m, r2 in kg.in_branches[t]:
                    for a1, r1 in kg.in_branches.get(m, ()):
                        yield Instance(p, (a1, a2), (r1, r2, r3))
    elif p is Pattern.COMPARE:
        for r in sorted(kg.numeric):
            for (e1, v1), (e2, v2) in itertools.combinations(kg.numeric[r], 2):
                for kind in COMPARE_KINDS:
                    yield Instance(p, (e1, e2), (r,), kind=kind, values=(v1, v2))


def enumerate_instances(
    kg: KnowledgeGraph,
    pattern: Pattern | str,
    *,
    max_answers: int = DEFAULT_MAX_ANSWERS,
) -> list[Instance]:
    """Every valid instance of ``pattern`` (one per canonical hash), for small graphs."""
    pattern = Pattern(pattern)
    seen: dict[str, Instance] = {}
    for cand in _candidates(kg, pattern):
        h = instance_hash(cand)
        if h not in seen and is_valid(kg, cand, max_answers):
            seen[h] = cand
    return [seen[h] for h in sorted(seen)]


def instance_record(kg: KnowledgeGraph, instance: Instance) -> dict:
    """JSONL row for a grounded instance, with gold answers as labels."""
    row = instance.to_dict()
    row["answers"] = answer_set(kg, instance).as_list()
    row["hash"] = instance_hash(instance)
    return row


__all__ = [
    "ALL_PATTERNS", "ARITY", "COMPARE_KINDS", "DEFAULT_MAX_ANSWERS", "GoldAnswer",
    "GroundingError", "Instance", "InvalidInstance", "KGError", "Pattern", "answer_set",
    "compare_verdict", "enumerate_instances", "ground", "instance_hash",
    "instance_record", "is_valid",
]
