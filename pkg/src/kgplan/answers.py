"""Answer lists: the value type that flows through plan execution and grading."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

_WS = re.compile(r"\s+")
_BRACKETED = re.compile(r"\[([^\[\]]*)\]", re.S)


def norm(value: str) -> str:
    """Identity key for set operations: case-fold, trim, collapse whitespace."""
    return _WS.sub(" ", value.strip()).casefold()


@dataclass(frozen=True)
class AnswerList:
    """Ordered, duplicate-free answers; empty means "no answer" (``[None]``)."""

    values: tuple[str, ...] = ()
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        kept = []
        for v in self.values:
            v = _WS.sub(" ", v.strip())
            k = norm(v)
            if k and k not in seen:
                seen.add(k)
                kept.append(v)
        object.__setattr__(self, "values", tuple(kept))

    @classmethod
    def of(cls, *values: str) -> "AnswerList":
        return cls(tuple(values))

    @property
    def is_none(self) -> bool:
        return not self.values

    def keys(self) -> list[str]:
        return [norm(v) for v in self.values]

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def joined(self) -> str:
        return ", ".join(self.values) if self.values else "None"

    def __str__(self) -> str:
        return "[" + "#".join(self.values or ("None",)) + "]"


def parse_answer_list(raw: str) -> AnswerList:
    """Parse a QA reply such as ``[Apple#Banana#Origin]``.

    The first bracketed span is split on ``#``. ``[None]`` and ``[]`` give an
    empty list. Without brackets the whole trimmed reply is one answer and a
    note records the lenient parse.
    """
    m = _BRACKETED.search(raw)
    if m is None:
        text = raw.strip()
        if not text or text.casefold() in ("none", "[none]"):
            return AnswerList(notes=("no brackets",))
        return AnswerList((text,), notes=("no brackets",))
    items = [x.strip() for x in m.group(1).split("#")]
    items = [x for x in items if x and x.casefold() != "none"]
    return AnswerList(tuple(items))


def intersect(a: AnswerList, b: AnswerList) -> AnswerList:
    keys = set(b.keys())
    return AnswerList(tuple(v for v in a.values if norm(v) in keys))


def union(a: AnswerList, b: AnswerList) -> AnswerList:
    return AnswerList(a.values + b.values)


Value = Union[str, AnswerList]


def render_value(value) -> str:
    if isinstance(value, AnswerList):
        return value.joined()
    return str(value)


def substitute(parts: Sequence[Union[str, object]], env: Mapping[str, Value]) -> str:
    """Fill an f-string. ``parts`` holds literals and objects with a ``name``.

    Multi-answer values are joined with ``", "``; an empty answer list becomes
    ``"None"``.
    """
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(p)
            continue
        name = p.name  # type: ignore[attr-defined]
        if name not in env:
            raise KeyError(f"unbound variable {name}")
        out.append(render_value(env[name]))
    return "".join(out)


def answer_lists(values: Iterable[Iterable[str]]) -> list[AnswerList]:
    return [AnswerList(tuple(v)) for v in values]
