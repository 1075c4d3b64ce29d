"""Planning training data: per-pattern plan templates, inputs and the JSONL set.

A training pair is ``x = instruction + demonstrations + question`` and
``y = template(pattern).fill(sub_questions)``. ``y`` is the code that follows
``Original_Question: str = "..."`` in ``x``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from . import dsl
from .patterns import ARITY, ALL_PATTERNS, Pattern, instance_hash
from .verbalize import REQUIRED_PLACEHOLDERS, VerbalizedInstance, placeholders_in

logger = logging.getLogger(__name__)

PLACEHOLDER_VARS = {"A1": "Ans_1", "A2": "Ans_2", "Inter_A": "Inter_Ans"}
QUESTION_PREFIX = "Original_Question: str = "

_HEADER = "### Question Type: {name}\n### Decompose the original question into sub-questions.\n"


def _hop(n: int, thought: str) -> str:
    return (
        f'Thought{n}: str = "{thought}"\n'
        f"Sub_Question_{n}: str = <<SQ{n}>>\n"
        f"Info_{n}: str = Search(query = Sub_Question_{n}, thought = Thought{n})\n"
        f"Ans_{n}: str = Get_Answer(query = Sub_Question_{n}, info = Info_{n})\n"
    )


_FIRST_OF_CHAIN = "To answer the original question, I first need the answer to the first hop."
_NEXT_OF_CHAIN = "After knowing the answer to the previous hop, I need to follow the next relation from it."
_BRANCH = "This question asks about several conditions; I need the answer set of condition {n} first."

TEMPLATES: dict[Pattern, str] = {
    Pattern.ONE_P: (
        _HEADER.format(name="One Projection") + "\n"
        + _hop(1, "An atomic question, no need to decompose. Search directly.") + "\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Ans_1)\n"
    ),
    Pattern.TWO_P: (
        _HEADER.format(name="Two Projection") + "\n"
        + _hop(1, _FIRST_OF_CHAIN) + "\n"
        + _hop(2, _NEXT_OF_CHAIN) + "\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Ans_2)\n"
    ),
    Pattern.THREE_P: (
        _HEADER.format(name="Three Projection") + "\n"
        + _hop(1, _FIRST_OF_CHAIN) + "\n"
        + _hop(2, _NEXT_OF_CHAIN) + "\n"
        + _hop(3, _NEXT_OF_CHAIN) + "\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Ans_3)\n"
    ),
    Pattern.TWO_I: (
        _HEADER.format(name="Two Intersection") + "\n"
        + _hop(1, _BRANCH.format(n=1)) + "\n"
        + _hop(2, _BRANCH.format(n=2)) + "\n"
        + 'Thought3: str = "The answer must satisfy both conditions, so I intersect the two answer sets."\n'
        + "Inter_Ans: str = Intersection(Answer1 = Ans_1, Answer2 = Ans_2)\n\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Inter_Ans)\n"
    ),
    Pattern.THREE_I: (
        _HEADER.format(name="Three Intersection") + "\n"
        + _hop(1, _BRANCH.format(n=1)) + "\n"
        + _hop(2, _BRANCH.format(n=2)) + "\n"
        + _hop(3, _BRANCH.format(n=3)) + "\n"
        + 'Thought4: str = "The answer must satisfy all three conditions, so I intersect the three answer sets."\n'
        + "Inter_Ans_1: str = Intersection(Answer1 = Ans_1, Answer2 = Ans_2)\n"
        + "Inter_Ans_2: str = Intersection(Answer1 = Inter_Ans_1, Answer2 = Ans_3)\n\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Inter_Ans_2)\n"
    ),
    Pattern.TWO_U: (
        _HEADER.format(name="Two Union") + "\n"
        + _hop(1, _BRANCH.format(n=1)) + "\n"
        + _hop(2, _BRANCH.format(n=2)) + "\n"
        + 'Thought3: str = "The question asks for everything satisfying either condition, so I take the union of the two answer sets."\n'
        + "Union_Ans: str = Union(Answer1 = Ans_1, Answer2 = Ans_2)\n\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Union_Ans)\n"
    ),
    Pattern.IP: (
        _HEADER.format(name="Intersection Projection") + "\n"
        + _hop(1, _BRANCH.format(n=1)) + "\n"
        + _hop(2, _BRANCH.format(n=2)) + "\n"
        + "Inter_Ans: str = Intersection(Answer1 = Ans_1, Answer2 = Ans_2)\n\n"
        + _hop(3, "After finding the entities satisfying both conditions, I need to follow the last relation from them.") + "\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Ans_3)\n"
    ),
    Pattern.PI: (
        _HEADER.format(name="Projection Intersection") + "\n"
        + _hop(1, _FIRST_OF_CHAIN) + "\n"
        + _hop(2, _NEXT_OF_CHAIN) + "\n"
        + _hop(3, "Then I need the answer set of the other condition.") + "\n"
        + 'Thought4: str = "The answer must satisfy both the two-hop condition and the other condition, so I intersect them."\n'
        + "Inter_Ans: str = Intersection(Answer1 = Ans_2, Answer2 = Ans_3)\n\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Inter_Ans)\n"
    ),
    Pattern.COMPARE: (
        _HEADER.format(name="Comparison") + "\n"
        + _hop(1, "To compare the two entities, I first need the value of the first one.") + "\n"
        + _hop(2, "Then I need the value of the second one.") + "\n"
        + "Compare_Ans: str = Compare(Original_Query = Original_Question, "
          "Subquestions = [Sub_Question_1, Sub_Question_2], Answers = [Ans_1, Ans_2])\n\n"
        + "Final_Answer: str = Finish_The_Plan(Answer = Compare_Ans)\n"
    ),
}

_SLOT = re.compile(r"<<SQ(\d+)>>")
_PLACEHOLDER = re.compile(r"\{(A1|A2|Inter_A)\}")


class TemplateError(ValueError):
    pass


def _slot_source(question: str) -> str:
    """Plan literal for a sub-question: an f-string when it carries placeholders."""
    if not placeholders_in(question):
        return dsl.quote(question)
    pieces = []
    pos = 0
    for m in _PLACEHOLDER.finditer(question):
        pieces.append(question[pos:m.start()].replace("{", "{{").replace("}", "}}"))
        pieces.append("{" + PLACEHOLDER_VARS[m.group(1)] + "}")
        pos = m.end()
    pieces.append(question[pos:].replace("{", "{{").replace("}", "}}"))
    return "f" + dsl.quote("".join(pieces))


def fill_template(pattern: Pattern | str, sub_questions: Sequence[str]) -> str:
    """Fill the pattern's plan template with its sub-questions."""
    pattern = Pattern(pattern)
    if len(sub_questions) != ARITY[pattern]:
        raise TemplateError(f"{pattern} needs {ARITY[pattern]} sub-questions, got {len(sub_questions)}")
    required = REQUIRED_PLACEHOLDERS.get(pattern, {})
    for i, q in enumerate(sub_questions):
        if placeholders_in(q) != required.get(i, set()):
            raise TemplateError(
                f"{pattern} Q{i + 1} must carry placeholders {sorted(required.get(i, set()))}: {q!r}"
            )
    text = _SLOT.sub(lambda m: _slot_source(sub_questions[int(m.group(1)) - 1]), TEMPLATES[pattern])
    program = dsl.parse_plan(text)
    problems = dsl.errors(dsl.validate(program))
    if problems:
        raise RuntimeError(f"filled {pattern} template does not validate: {problems}")
    return "\n" + text


# -- inputs ----------------------------------------------------------------------------


def _asset(name: str) -> str:
    return resources.files("kgplan").joinpath("prompts", "planning", name).read_text("utf-8")


def default_instruction() -> str:
    return _asset("instruction.txt")


def default_demonstrations() -> str:
    return _asset("demonstrations.txt")


def build_input(instruction: str, demos: str, question: str) -> str:
    """``instruction + demos + 'Original_Question: str = "<question>"'``."""
    return instruction + demos + QUESTION_PREFIX + dsl.quote(question)


def plan_text(question: str, completion: str) -> str:
    """Full plan source: the question assignment followed by the planner's output."""
    return QUESTION_PREFIX + dsl.quote(question) + "\n" + completion.lstrip("\n") + (
        "" if completion.endswith("\n") else "\n"
    )


# -- training set ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingExample:
    input: str
    output: str
    pattern: Pattern
    instance: str

    def to_dict(self) -> dict:
        return {"input": self.input, "output": self.output, "pattern": self.pattern.value,
                "instance": self.instance}


def make_example(item: VerbalizedInstance, instruction: str, demos: str) -> TrainingExample:
    return TrainingExample(
        input=build_input(instruction, demos, item.complex_question),
        output=fill_template(item.pattern, item.sub_questions),
        pattern=item.pattern,
        instance=instance_hash(item.instance),
    )


def build_training_set(
    items: Iterable[VerbalizedInstance],
    per_pattern_quota: int,
    path: str | Path,
    *,
    instruction: str | None = None,
    demos: str | None = None,
) -> dict[str, int]:
    """Write at most ``per_pattern_quota`` examples per pattern; return emitted counts.

    Rows are grouped by pattern in canonical pattern order, keeping input order
    within a pattern.
    """
    if per_pattern_quota < 1:
        raise ValueError("quota must be >= 1")
    instruction = default_instruction() if instruction is None else instruction
    demos = default_demonstrations() if demos is None else demos
    by_pattern: dict[Pattern, list[VerbalizedInstance]] = {p: [] for p in ALL_PATTERNS}
    for item in items:
        by_pattern[item.pattern].append(item)
    counts: dict[str, int] = {}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in ALL_PATTERNS:
            chosen = by_pattern[p][:per_pattern_quota]
            for item in chosen:
                fh.write(json.dumps(make_example(item, instruction, demos).to_dict(), ensure_ascii=False) + "\n")
            counts[p.value] = len(chosen)
            if len(chosen) < per_pattern_quota:
                logger.warning("%s: shortfall, %d of %d examples", p, len(chosen), per_pattern_quota)
    return counts


def validate_training_file(path: str | Path) -> list[tuple[int, str]]:
    """Re-parse and re-validate every output; return ``(line, problem)`` pairs."""
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            row = json.loads(line)
            try:
                program = dsl.parse_plan(row["output"])
            except dsl.PlanSyntaxError as exc:
                problems.append((lineno, str(exc)))
                continue
            for d in dsl.errors(dsl.validate(program)):
                problems.append((lineno, str(d)))
    return problems


def demonstration_block(index: int, question: str, plan: str) -> str:
    return (
        "###################\n"
        f"# Example {index}:\n"
        "###################\n\n"
        f"{QUESTION_PREFIX}{dsl.quote(question)}\n"
        f"{plan.lstrip(chr(10))}\n"
    )
