"""Deterministic, network-free endpoints for closed-loop runs.

:class:`KGQAStub` answers the QA prompt straight from the graph. It
understands the question frames the template verbalizer produces, e.g.
``What is the <relation> of <subject>?`` where the subject may be several
labels joined with ``", "`` after placeholder substitution.

:class:`OraclePlanner` answers the planning prompt with the filled template
for a question whose sub-questions it was given.
"""

from __future__ import annotations

import re
from collections import defaultdict
from decimal import Decimal, InvalidOperation
from functools import lru_cache
from typing import Iterable, Sequence

from . import dsl
from .answers import AnswerList
from .kg import KnowledgeGraph, sorted_nodes
from .patterns import Pattern, compare_verdict
from .plandata import QUESTION_PREFIX, fill_template

_ASK = re.compile(r"^What is the (?P<body>.+)\?$")
_SAME = re.compile(r"^Is the .+ the same for .+\?$")
_EXTREME = re.compile(r"^Which has the (lesser|greater) .+\?$")
_QUOTED = re.compile(r'"((?:[^"\\]|\\.)*)"')


def _section(prompt: str, start: str, end: str) -> str | None:
    i = prompt.find(start)
    if i == -1:
        return None
    i += len(start)
    j = prompt.find(end, i)
    return prompt[i:j if j != -1 else None].strip("\n")


def _is_number(text: str) -> bool:
    try:
        return Decimal(text).is_finite()
    except InvalidOperation:
        return False


class KGQAStub:
    """QA endpoint backed by graph lookups instead of a language model."""

    def __init__(self, kg: KnowledgeGraph) -> None:
        self.kg = kg
        self.entities: dict[str, list[str]] = defaultdict(list)
        for ident, label in kg.entity_labels.items():
            self.entities[label].append(ident)
        self.relations: dict[str, list[str]] = defaultdict(list)
        for ident, label in kg.relation_labels.items():
            self.relations[label].append(ident)
        self.calls = 0

    # -- parsing ------------------------------------------------------------------

    def _segment(self, subject: str) -> list[str] | None:
        """Split ``"A, B, C"`` into known labels (numbers and ``None`` allowed)."""
        tokens = subject.split(", ")

        @lru_cache(maxsize=None)
        def go(i: int):
            if i == len(tokens):
                return ()
            for j in range(len(tokens), i, -1):
                piece = ", ".join(tokens[i:j])
                if piece in self.entities or piece == "None" or _is_number(piece):
                    rest = go(j)
                    if rest is not None:
                        return (piece,) + rest
            return None

        found = go(0)
        return list(found) if found is not None else None

    def parse_projection(self, question: str) -> tuple[list[str], list[str]] | None:
        """``(relation ids, subject labels)`` for ``What is the <r> of <subject>?``."""
        m = _ASK.match(question.strip())
        if not m:
            return None
        body = m.group("body")
        for sep in re.finditer(" of ", body):
            rel_label, subject = body[:sep.start()], body[sep.end():]
            if rel_label in self.relations:
                labels = self._segment(subject)
                if labels is not None:
                    return self.relations[rel_label], labels
        return None

    def project(self, question: str) -> AnswerList | None:
        parsed = self.parse_projection(question)
        if parsed is None:
            return None
        rels, labels = parsed
        tails: set = set()
        for label in labels:
            for ident in self.entities.get(label, ()):
                for rel in rels:
                    tails |= self.kg.forward.get((ident, rel), frozenset())
        return AnswerList(tuple(self.kg.label(t) for t in sorted_nodes(tails)))

    def compare(self, question: str, information: str) -> AnswerList | None:
        q = question.strip()
        if _SAME.match(q):
            kind = "same"
        else:
            m = _EXTREME.match(q)
            if not m:
                return None
            kind = m.group(1)
        facts = []
        for line in information.splitlines():
            if " : " not in line:
                continue
            sub, value = line.rsplit(" : ", 1)
            parsed = self.parse_projection(sub)
            first = value.split(", ")[0].strip()
            if parsed is None or len(parsed[1]) != 1 or not _is_number(first):
                return AnswerList()
            facts.append((parsed[1][0], Decimal(first)))
        if len(facts) != 2:
            return AnswerList()
        (l1, v1), (l2, v2) = facts
        try:
            return AnswerList((compare_verdict(v1, v2, kind, l1, l2),))
        except ValueError:
            return AnswerList()

    # -- endpoint -------------------------------------------------------------------

    def answer(self, question: str, information: str = "") -> AnswerList:
        result = self.compare(question, information)
        if result is None:
            result = self.project(question)
        return result if result is not None else AnswerList()

    def complete(self, prompt: str) -> str:
        self.calls += 1
        question = _section(prompt, "### Question:\n", "\n### Your Answer")
        information = _section(prompt, "### Information\n", "\n### Question:") or ""
        if question is None:
            return "[None]"
        return str(self.answer(question.strip(), information))


def question_from_planning_prompt(prompt: str) -> str | None:
    i = prompt.rfind(QUESTION_PREFIX)
    if i == -1:
        return None
    m = _QUOTED.match(prompt, i + len(QUESTION_PREFIX))
    if not m:
        return None
    parsed = dsl.parse_plan(QUESTION_PREFIX + m.group(0))
    return parsed.statements[0].text  # type: ignore[union-attr]


class OraclePlanner:
    """Planner endpoint that knows each question's pattern and sub-questions."""

    def __init__(self, known: Iterable[tuple[str, Pattern | str, Sequence[str]]] = ()) -> None:
        self.plans: dict[str, str] = {}
        for question, pattern, subs in known:
            self.add(question, pattern, subs)

    def add(self, question: str, pattern: Pattern | str, sub_questions: Sequence[str]) -> None:
        self.plans[question] = fill_template(pattern, sub_questions)

    def complete(self, prompt: str) -> str:
        question = question_from_planning_prompt(prompt)
        if question is None or question not in self.plans:
            return "I cannot plan this question."
        return self.plans[question]

