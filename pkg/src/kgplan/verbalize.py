"""Turn grounded instances into sub-questions and a complex question.

Two routes produce a :class:`VerbalizedInstance`: :func:`verbalize` asks a text
endpoint using the per-pattern prompt assets, and :func:`verbalize_template`
fills fixed English frames offline. Both outputs pass the same validators.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .endpoints import Endpoint, EndpointError, RetryPolicy, with_retries
from .kg import KGError, KnowledgeGraph
from .patterns import ARITY, Instance, Pattern, answer_set, instance_hash

logger = logging.getLogger(__name__)

PLACEHOLDERS = ("A1", "A2", "Inter_A")

# sub-question index -> placeholders it must carry; all other slots carry none
REQUIRED_PLACEHOLDERS: dict[Pattern, dict[int, set[str]]] = {
    Pattern.TWO_P: {1: {"A1"}},
    Pattern.THREE_P: {1: {"A1"}, 2: {"A2"}},
    Pattern.PI: {1: {"A1"}},
    Pattern.IP: {2: {"Inter_A"}},
}

_BRACED = re.compile(r"\{(A1|A2|Inter_A)\}")
_BARE = re.compile(r"(?<![\w{])(A1|A2|Inter_A)(?![\w}])")
_LABELED = re.compile(
    r"^\W*(Q(\d+)|Final Question|Natural Language Question)\W*?\s*:\s*(.*?)\s*$",
    re.IGNORECASE,
)


class VerbalizationError(ValueError):
    pass


@dataclass(frozen=True)
class VerbalizedInstance:
    pattern: Pattern
    sub_questions: tuple[str, ...]
    complex_question: str
    instance: Instance
    answers: tuple[str, ...]

    def to_text(self) -> str:
        """Labeled-line rendering, as a verbalization endpoint would answer."""
        lines = [f"Q{i}: {q}" for i, q in enumerate(self.sub_questions, 1)]
        lines.append(f"Final Question: {self.complex_question}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern.value,
            "sub_questions": list(self.sub_questions),
            "complex_question": self.complex_question,
            "instance": self.instance.to_dict(),
            "hash": instance_hash(self.instance),
            "answers": list(self.answers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerbalizedInstance":
        return cls(
            pattern=Pattern(d["pattern"]),
            sub_questions=tuple(d["sub_questions"]),
            complex_question=d["complex_question"],
            instance=Instance.from_dict(d["instance"]),
            answers=tuple(d["answers"]),
        )


# -- prompts ---------------------------------------------------------------------


def load_prompts(directory: str | Path | None = None) -> dict[Pattern, str]:
    """Read one ``<pattern>.txt`` template per pattern (bundled assets by default)."""
    prompts = {}
    for p in Pattern:
        name = f"{p.value}.txt"
        if directory is None:
            text = resources.files("kgplan").joinpath("prompts", "verbalize", name).read_text("utf-8")
        else:
            text = (Path(directory) / name).read_text("utf-8")
        prompts[p] = text
    return prompts


def serialize_instance(instance: Instance, kg: KnowledgeGraph) -> str:
    """Label-level query string in the notation the prompt demonstrations use."""
    ent = kg.label
    rel = kg.relation_label
    p, a, r = instance.pattern, instance.anchors, instance.relations

    def path(head, rels):
        inner = ", ".join(rel(x) for x in rels)
        return f"({ent(head)}, ({inner}{',' if len(rels) == 1 else ''}))"

    if p in (Pattern.ONE_P, Pattern.TWO_P, Pattern.THREE_P):
        return path(a[0], r)
    if p in (Pattern.TWO_I, Pattern.THREE_I):
        return " Intersection ".join(path(x, (y,)) for x, y in instance.branches)
    if p is Pattern.TWO_U:
        return " Union ".join(path(x, (y,)) for x, y in instance.branches)
    if p is Pattern.IP:
        joined = " Intersection ".join(path(x, (y,)) for x, y in instance.branches)
        return f"{joined} Projection {rel(r[2])}"
    if p is Pattern.PI:
        return f"{path(a[0], r[:2])} Intersection {path(a[1], r[2:])}"
    v1, v2 = instance.values
    return (
        f"Triple 1:({ent(a[0])}, {rel(r[0])}, {v1})\n"
        f"Triple 2:({ent(a[1])}, {rel(r[0])}, {v2})\n"
        f"Comparison: {instance.kind}"
    )


def render_verbalization_prompt(
    instance: Instance, kg: KnowledgeGraph, prompts: Mapping[Pattern, str]
) -> str:
    try:
        query = serialize_instance(instance, kg)
    except KGError as exc:
        raise VerbalizationError(f"cannot render {instance_hash(instance)}: {exc}") from exc
    sep = "\n" if instance.pattern is Pattern.COMPARE else " "
    return prompts[instance.pattern].rstrip() + sep + query


# -- parsing and validation ----------------------------------------------------


def normalize_placeholders(text: str) -> str:
    """Rewrite bare ``A1``/``A2``/``Inter_A`` tokens to their braced form."""
    return _BARE.sub(lambda m: "{" + m.group(1) + "}", text)


def placeholders_in(text: str) -> set[str]:
    return set(_BRACED.findall(text))


def parse_verbalization_output(text: str, pattern: Pattern | str) -> tuple[tuple[str, ...], str]:
    """Extract ``(sub_questions, complex_question)`` from labeled lines.

    Unlabeled prose and extra labels (``Q1_Answer``, ``Final Answer``, ...)
    are ignored.
    """
    pattern = Pattern(pattern)
    subs: dict[int, str] = {}
    final: str | None = None
    natural: str | None = None
    for line in text.splitlines():
        m = _LABELED.match(line)
        if not m:
            continue
        label, num, body = m.groups()
        if not body:
            continue
        if num is not None:
            subs.setdefault(int(num), body)
        elif label.lower().startswith("final"):
            final = final or body
        else:
            natural = natural or body
    if pattern is Pattern.ONE_P and natural and not subs:
        subs[1] = natural
        final = final or natural
    if final is None:
        raise VerbalizationError("missing 'Final Question:' line")
    k = ARITY[pattern]
    if sorted(subs) != list(range(1, len(subs) + 1)) or len(subs) != k:
        raise VerbalizationError(f"{pattern} needs {k} sub-questions Q1..Q{k}, found {sorted(subs)}")
    questions = tuple(normalize_placeholders(subs[i]) for i in range(1, k + 1))
    return questions, normalize_placeholders(final)


def check_verbalized(pattern: Pattern, sub_questions: Sequence[str], complex_question: str) -> list[str]:
    """Automatic quality checks: arity, placeholder discipline, non-empty question."""
    issues = []
    pattern = Pattern(pattern)
    if len(sub_questions) != ARITY[pattern]:
        issues.append(f"arity {len(sub_questions)} != {ARITY[pattern]}")
    required = REQUIRED_PLACEHOLDERS.get(pattern, {})
    for i, q in enumerate(sub_questions):
        if not q.strip():
            issues.append(f"Q{i + 1} is empty")
        found = placeholders_in(q)
        want = required.get(i, set())
        if found != want:
            issues.append(f"Q{i + 1} placeholders {sorted(found)} != {sorted(want)}")
    if not complex_question.strip():
        issues.append("empty final question")
    if placeholders_in(complex_question):
        issues.append("final question contains placeholders")
    return issues


# -- template route --------------------------------------------------------------


def _ask(relation: str, subject: str) -> str:
    return f"What is the {relation} of {subject}?"


def verbalize_template(instance: Instance, kg: KnowledgeGraph) -> VerbalizedInstance:
    """Deterministic frame-based verbalization; no fluency attempted."""
    try:
        ent = [kg.label(a) for a in instance.anchors]
        rel = [kg.relation_label(r) for r in instance.relations]
    except KGError as exc:
        raise VerbalizationError(str(exc)) from exc
    p = instance.pattern
    if p is Pattern.ONE_P:
        q = _ask(rel[0], ent[0])
        subs, final = [q], q
    elif p is Pattern.TWO_P:
        subs = [_ask(rel[0], ent[0]), _ask(rel[1], "{A1}")]
        final = f"What is the {rel[1]} of the {rel[0]} of {ent[0]}?"
    elif p is Pattern.THREE_P:
        subs = [_ask(rel[0], ent[0]), _ask(rel[1], "{A1}"), _ask(rel[2], "{A2}")]
        final = f"What is the {rel[2]} of the {rel[1]} of the {rel[0]} of {ent[0]}?"
    elif p is Pattern.TWO_I:
        subs = [_ask(rel[0], ent[0]), _ask(rel[1], ent[1])]
        final = f"What is both the {rel[0]} of {ent[0]} and the {rel[1]} of {ent[1]}?"
    elif p is Pattern.THREE_I:
        subs = [_ask(r, e) for e, r in zip(ent, rel)]
        final = (f"What is the {rel[0]} of {ent[0]}, the {rel[1]} of {ent[1]} "
                 f"and the {rel[2]} of {ent[2]} at the same time?")
    elif p is Pattern.TWO_U:
        subs = [_ask(rel[0], ent[0]), _ask(rel[1], ent[1])]
        final = f"What is the {rel[0]} of {ent[0]} or the {rel[1]} of {ent[1]}?"
    elif p is Pattern.IP:
        subs = [_ask(rel[0], ent[0]), _ask(rel[1], ent[1]), _ask(rel[2], "{Inter_A}")]
        final = (f"What is the {rel[2]} of the entity that is both "
                 f"the {rel[0]} of {ent[0]} and the {rel[1]} of {ent[1]}?")
    elif p is Pattern.PI:
        subs = [_ask(rel[0], ent[0]), _ask(rel[1], "{A1}"), _ask(rel[2], ent[1])]
        final = (f"What is both the {rel[1]} of the {rel[0]} of {ent[0]} "
                 f"and the {rel[2]} of {ent[1]}?")
    else:
        subs = [_ask(rel[0], ent[0]), _ask(rel[0], ent[1])]
        if instance.kind == "same":
            final = f"Is the {rel[0]} the same for {ent[0]} and {ent[1]}?"
        else:
            final = f"Which has the {instance.kind} {rel[0]}, {ent[0]} or {ent[1]}?"
    return VerbalizedInstance(
        pattern=p,
        sub_questions=tuple(subs),
        complex_question=final,
        instance=instance,
        answers=tuple(answer_set(kg, instance).as_list()),
    )


# -- endpoint route ----------------------------------------------------------------


def verbalize(
    instance: Instance,
    kg: KnowledgeGraph,
    client: Endpoint,
    prompts: Mapping[Pattern, str],
    *,
    parse_retries: int = 2,
    retry: RetryPolicy | None = None,
    fallback: str = "error",
) -> VerbalizedInstance | None:
    """Render, call, parse and validate; attach gold answers.

    ``fallback`` decides what happens after ``parse_retries`` extra attempts
    still fail: ``"template"`` uses :func:`verbalize_template`, ``"skip"``
    returns ``None``, ``"error"`` raises :class:`VerbalizationError`.
    """
    if fallback not in ("template", "skip", "error"):
        raise ValueError(f"unknown fallback {fallback!r}")
    ref = instance_hash(instance)
    prompt = render_verbalization_prompt(instance, kg, prompts)
    retry = retry or RetryPolicy(retries=2)
    last = "no attempt"
    for _ in range(parse_retries + 1):
        try:
            text, _ = with_retries(lambda: client.complete(prompt), retry, "verbalizer")
        except EndpointError as exc:
            raise VerbalizationError(f"instance {ref}: {exc}") from exc
        try:
            subs, final = parse_verbalization_output(text, instance.pattern)
        except VerbalizationError as exc:
            last = str(exc)
            continue
        issues = check_verbalized(instance.pattern, subs, final)
        if issues:
            last = "; ".join(issues)
            continue
        return VerbalizedInstance(
            pattern=instance.pattern,
            sub_questions=subs,
            complex_question=final,
            instance=instance,
            answers=tuple(answer_set(kg, instance).as_list()),
        )
    logger.warning("instance %s: verbalization failed (%s); fallback=%s", ref, last, fallback)
    if fallback == "template":
        return verbalize_template(instance, kg)
    if fallback == "skip":
        return None
    raise VerbalizationError(f"instance {ref}: {last}")


def verbalize_batch(
    instances: Sequence[Instance],
    kg: KnowledgeGraph,
    client: Endpoint | None = None,
    prompts: Mapping[Pattern, str] | None = None,
    *,
    jobs: int = 1,
    **kwargs,
) -> list[VerbalizedInstance]:
    """Verbalize many instances (template route when ``client`` is None), in order."""
    if client is None:
        return [verbalize_template(i, kg) for i in instances]
    prompts = prompts or load_prompts()

    def one(inst):
        return verbalize(inst, kg, client, prompts, **kwargs)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, instances))
    return [r for r in results if r is not None]


def sampling_report(items: Sequence[VerbalizedInstance], n: int = 20, seed: int = 0) -> str:
    """A small random sample as plain text, for a human spot check."""
    import random

    rng = random.Random(seed)
    picked = rng.sample(list(items), min(n, len(items)))
    blocks = []
    for v in picked:
        blocks.append(f"[{v.pattern}] {instance_hash(v.instance)}\n{v.to_text()}\nGold: {list(v.answers)}")
    return "\n\n".join(blocks) + "\n"
