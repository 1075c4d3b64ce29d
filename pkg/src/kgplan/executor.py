"""Run a validated plan against a retriever and a QA endpoint."""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Sequence

from . import dsl
from .answers import AnswerList, intersect, parse_answer_list, render_value, substitute, union
from .endpoints import Endpoint, EndpointError, RetryPolicy, with_retries
from .retrieval import RetrievedInfo, Retriever

logger = logging.getLogger(__name__)

QUESTION_MARK = "<<QUESTION>>"
INFORMATION_MARK = "<<INFORMATION>>"


class PlanRejected(ValueError):
    """The program did not pass validation and will not be run."""


def qa_template() -> str:
    return resources.files("kgplan").joinpath("prompts", "qa.txt").read_text("utf-8")


_QA_TEMPLATE: str | None = None


def render_qa_prompt(question: str, information: str, template: str | None = None) -> str:
    global _QA_TEMPLATE
    if template is None:
        if _QA_TEMPLATE is None:
            _QA_TEMPLATE = qa_template()
        template = _QA_TEMPLATE
    return template.replace(INFORMATION_MARK, information).replace(QUESTION_MARK, question)


def compare_information(sub_questions: Sequence[str], answers: Sequence[AnswerList]) -> str:
    return "".join(f"{q} : {a.joined()}\n" for q, a in zip(sub_questions, answers))


@dataclass
class ExecutionConfig:
    k: int = 5
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    # per-call timeout in seconds, handed to HTTP backends when they are built
    timeout: float = 60.0
    fanout: bool = False


@dataclass(frozen=True)
class FanOut:
    """Per-answer alternatives produced in fan-out mode."""

    items: tuple


@dataclass
class StepRecord:
    var: str
    op: str
    inputs: dict
    output: Any
    duration: float = 0.0
    attempts: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self, timings: bool = False) -> dict:
        d = {"var": self.var, "op": self.op, "inputs": self.inputs, "output": self.output,
             "attempts": self.attempts}
        if self.notes:
            d["notes"] = self.notes
        if timings:
            d["duration"] = round(self.duration, 6)
        return d


@dataclass
class ExecutionTrace:
    steps: list[StepRecord] = field(default_factory=list)
    answer: AnswerList = field(default_factory=AnswerList)
    status: str = "ok"
    error: str | None = None
    gold: list[str] | None = None

    def to_dict(self, timings: bool = False) -> dict:
        d = {
            "status": self.status,
            "answer": list(self.answer.values),
            "steps": [s.to_dict(timings) for s in self.steps],
        }
        if self.error:
            d["error"] = self.error
        if self.gold is not None:
            d["gold"] = self.gold
        return d


def _json_value(value) -> Any:
    if isinstance(value, AnswerList):
        return list(value.values)
    if isinstance(value, RetrievedInfo):
        return value.to_dict()
    if isinstance(value, FanOut):
        return {"fanout": [_json_value(v) for v in value.items]}
    if isinstance(value, tuple):
        return [_json_value(v) for v in value]
    return value


def _as_answers(value) -> AnswerList:
    if isinstance(value, AnswerList):
        return value
    if isinstance(value, FanOut):
        out = AnswerList()
        for v in value.items:
            out = union(out, _as_answers(v))
        return out
    return AnswerList((str(value),))


class _Run:
    def __init__(self, retriever: Retriever, qa: Endpoint, config: ExecutionConfig) -> None:
        self.retriever = retriever
        self.qa = qa
        self.config = config
        self.env: dict[str, Any] = {}

    def resolve(self, arg):
        if isinstance(arg, dsl.VarRef):
            return self.env[arg.name]
        if isinstance(arg, tuple):
            return tuple(self.env[v.name] for v in arg)
        return arg

    def fstring(self, stmt: dsl.AssignFString, record: StepRecord):
        for ref in stmt.refs():
            v = self.env[ref]
            if isinstance(v, AnswerList) and v.is_none:
                record.notes.append(f"placeholder {ref} bound to an empty answer; substituted 'None'")
        multi = [r for r in dict.fromkeys(stmt.refs())
                 if isinstance(self.env[r], AnswerList) and len(self.env[r]) > 1]
        if not (self.config.fanout and multi):
            return substitute(stmt.parts, self.env)
        options = [[AnswerList((v,)) for v in self.env[r].values] for r in multi]
        texts = []
        for combo in itertools.product(*options):
            env = dict(self.env, **dict(zip(multi, combo)))
            texts.append(substitute(stmt.parts, env))
        return FanOut(tuple(texts))

    def search(self, query, record: StepRecord):
        if isinstance(query, FanOut):
            return FanOut(tuple(self.search(q, record) for q in query.items))
        query = render_value(query)
        info, attempts = with_retries(
            lambda: self.retriever.retrieve(query, self.config.k), self.config.retry, "retriever")
        record.attempts += attempts
        return info

    def ask(self, question: str, information: str, record: StepRecord) -> AnswerList:
        prompt = render_qa_prompt(question, information)
        reply, attempts = with_retries(lambda: self.qa.complete(prompt), self.config.retry, "qa endpoint")
        record.attempts += attempts
        answers = parse_answer_list(reply)
        record.notes.extend(answers.notes)
        return answers

    def get_answer(self, query, info, record: StepRecord):
        if isinstance(query, FanOut):
            infos = info.items if isinstance(info, FanOut) else [info] * len(query.items)
            out = AnswerList()
            for q, i in zip(query.items, infos):
                out = union(out, self.get_answer(q, i, record))
            return out
        text = info.render() if isinstance(info, RetrievedInfo) else render_value(info)
        return self.ask(render_value(query), text, record)

    def step(self, stmt: dsl.Statement, record: StepRecord):
        if isinstance(stmt, dsl.AssignLiteral):
            return stmt.text
        if isinstance(stmt, dsl.AssignFString):
            return self.fstring(stmt, record)
        args = {k: self.resolve(v) for k, v in stmt.kwargs}
        record.inputs = {k: _json_value(v) for k, v in args.items()
                         if not isinstance(v, RetrievedInfo)}
        b = stmt.builtin
        if b == "Search":
            return self.search(args["query"], record)
        if b == "Get_Answer":
            return self.get_answer(args["query"], args["info"], record)
        if b == "Intersection":
            return intersect(_as_answers(args["Answer1"]), _as_answers(args["Answer2"]))
        if b == "Union":
            return union(_as_answers(args["Answer1"]), _as_answers(args["Answer2"]))
        if b == "Compare":
            info = compare_information(
                [render_value(q) if not isinstance(q, FanOut) else "; ".join(q.items)
                 for q in args["Subquestions"]],
                [_as_answers(a) for a in args["Answers"]],
            )
            record.inputs["information"] = info
            return self.ask(render_value(args["Original_Query"]), info, record)
        if b == dsl.FINISH:
            return _as_answers(args["Answer"])
        raise AssertionError(b)


def execute(
    program: dsl.PlanProgram,
    retriever: Retriever,
    qa: Endpoint,
    config: ExecutionConfig | None = None,
    *,
    question: str | None = None,
    gold: Sequence[str] | None = None,
) -> tuple[AnswerList, ExecutionTrace]:
    """Execute statements in order; return the final answers and the trace.

    ``question`` binds ``Original_Question`` when the program does not assign
    it. ``gold`` is only recorded in the trace. Endpoint failures after retries
    stop the run with ``status="failed"`` and a partial trace.
    """
    config = config or ExecutionConfig()
    problems = dsl.errors(dsl.validate(program))
    if problems:
        raise PlanRejected("; ".join(str(p) for p in problems))
    run = _Run(retriever, qa, config)
    assigned = set(program.variables())
    for name in dsl.DEFAULT_INPUTS:
        if name in assigned:
            continue
        if question is None:
            if any(name in s.refs() for s in program.statements):
                raise PlanRejected(f"plan reads {name} but no question was given")
        else:
            run.env[name] = question

    trace = ExecutionTrace(gold=list(gold) if gold is not None else None)
    for stmt in program.statements:
        op = stmt.builtin if isinstance(stmt, dsl.AssignCall) else stmt.kind
        record = StepRecord(stmt.var, op, {}, None)
        if isinstance(stmt, dsl.AssignFString):
            record.inputs = {r: _json_value(run.env[r]) for r in dict.fromkeys(stmt.refs())}
        started = time.perf_counter()
        try:
            value = run.step(stmt, record)
        except EndpointError as exc:
            record.duration = time.perf_counter() - started
            record.attempts += exc.attempts
            record.output = None
            trace.steps.append(record)
            trace.status = "failed"
            trace.error = f"{stmt.var}: {exc}"
            logger.warning("plan step %s failed: %s", stmt.var, exc)
            return AnswerList(), trace
        record.duration = time.perf_counter() - started
        record.output = _json_value(value)
        trace.steps.append(record)
        run.env[stmt.var] = value
        if isinstance(stmt, dsl.AssignCall) and stmt.builtin == dsl.FINISH:
            trace.answer = value
    return trace.answer, trace


def execute_many(
    jobs_in: Sequence[tuple[dsl.PlanProgram, str | None]],
    retriever: Retriever,
    qa: Endpoint,
    config: ExecutionConfig | None = None,
    *,
    jobs: int = 1,
) -> list[tuple[AnswerList, ExecutionTrace]]:
    """Run independent ``(program, question)`` pairs, preserving input order."""

    def one(pair):
        program, question = pair
        return execute(program, retriever, qa, config, question=question)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, jobs_in))
