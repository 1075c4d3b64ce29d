"""Pipeline configuration and the stage functions the command line wires together."""

from __future__ import annotations

import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from . import dsl
from .answers import AnswerList
from .bench import (
    BenchmarkItem, EvalReport, evaluate, generate_benchmark, scale_distribution, write_benchmark,
    write_predictions,
)
from .endpoints import ChatClient, Endpoint, EndpointConfig
from .executor import ExecutionConfig, ExecutionTrace, PlanRejected, execute
from .kg import KnowledgeGraph
from .patterns import ALL_PATTERNS, ground, instance_hash, instance_record
from .plandata import build_input, default_demonstrations, default_instruction, plan_text
from .retrieval import HTTPRetriever, LexicalRetriever, Retriever, corpus_from_kg, load_corpus
from .stubs import KGQAStub, OraclePlanner
from .verbalize import verbalize_template

logger = logging.getLogger(__name__)

ROLES = ("planner", "qa", "verbalizer")
_ENV_KEYS = ("base_url", "model", "api_key")


class ConfigError(ValueError):
    """Bad or incomplete configuration (a usage error)."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names the owning module."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    kg: str | None = None
    labels: str | None = None
    prompts: str | None = None
    corpus: str | None = None
    retriever_url: str | None = None
    out: str = "out"
    seed: int = 0
    jobs: int = 1
    k: int = 5
    timeout: float = 60.0
    retries: int = 2
    endpoints: dict[str, dict] = field(default_factory=dict)

    def endpoint(self, role: str) -> EndpointConfig:
        """Endpoint settings for ``role``; ``KGPLAN_<ROLE>_*`` variables win over the file."""
        raw = dict(self.endpoints.get(role, {}))
        prefix = f"KGPLAN_{role.upper()}_"
        for key in _ENV_KEYS:
            if os.environ.get(prefix + key.upper()):
                raw[key] = os.environ[prefix + key.upper()]
        raw.setdefault("timeout", self.timeout)
        if not raw.get("base_url") or not raw.get("model"):
            raise ConfigError(f"{role} endpoint needs base_url and model (or use --stub)")
        try:
            return EndpointConfig(**raw)
        except TypeError as exc:
            raise ConfigError(f"{role} endpoint: {exc}") from None


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    endpoints = data.pop("endpoints", {})
    if not isinstance(endpoints, dict) or any(r not in ROLES for r in endpoints):
        raise ConfigError(f"[endpoints] sections must be among {ROLES}")
    known = set(PipelineConfig.__dataclass_fields__) - {"endpoints"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = PipelineConfig(**data, endpoints=endpoints)
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("seed must be an integer")
    return cfg


def chat_endpoint(cfg: PipelineConfig, role: str) -> Endpoint:
    return ChatClient(cfg.endpoint(role))


def make_retriever(cfg: PipelineConfig, kg: KnowledgeGraph | None) -> Retriever:
    if cfg.retriever_url:
        return HTTPRetriever(cfg.retriever_url, timeout=cfg.timeout)
    if cfg.corpus:
        return LexicalRetriever(load_corpus(cfg.corpus))
    if kg is None:
        raise ConfigError("no retriever: set corpus, retriever_url or a graph")
    return LexicalRetriever(corpus_from_kg(kg))


# -- file helpers ----------------------------------------------------------------------


def write_jsonl(rows, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(data, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


# -- planning and execution -------------------------------------------------------------


@dataclass
class PlanResult:
    id: str
    question: str
    completion: str
    source: str
    diagnostics: list[str]

    @property
    def ok(self) -> bool:
        return not self.diagnostics

    def to_dict(self) -> dict:
        return {"id": self.id, "question": self.question, "plan": self.source,
                "diagnostics": self.diagnostics}


def plan_one(
    qid: str,
    question: str,
    planner: Endpoint,
    instruction: str,
    demos: str,
) -> PlanResult:
    completion = planner.complete(build_input(instruction, demos, question))
    source = plan_text(question, completion)
    try:
        program = dsl.parse_plan(source)
    except dsl.PlanSyntaxError as exc:
        return PlanResult(qid, question, completion, source, [str(d) for d in exc.diagnostics])
    problems = [str(d) for d in dsl.errors(dsl.validate(program))]
    return PlanResult(qid, question, completion, source, problems)


def plan_many(
    questions: Sequence[tuple[str, str]],
    planner: Endpoint,
    *,
    instruction: str | None = None,
    demos: str | None = None,
    jobs: int = 1,
) -> list[PlanResult]:
    instruction = default_instruction() if instruction is None else instruction
    demos = default_demonstrations() if demos is None else demos
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(lambda qa: plan_one(qa[0], qa[1], planner, instruction, demos), questions))


def execute_plans(
    plans: Sequence[PlanResult],
    retriever: Retriever,
    qa: Endpoint,
    config: ExecutionConfig | None = None,
    *,
    jobs: int = 1,
) -> list[tuple[str, AnswerList, ExecutionTrace]]:
    """Run each valid plan; rejected plans yield an empty answer and a failed trace."""

    def one(plan: PlanResult):
        if not plan.ok:
            return plan.id, AnswerList(), ExecutionTrace(status="rejected", error="; ".join(plan.diagnostics))
        program = dsl.parse_plan(plan.source)
        try:
            answer, trace = execute(program, retriever, qa, config, question=plan.question)
        except PlanRejected as exc:
            return plan.id, AnswerList(), ExecutionTrace(status="rejected", error=str(exc))
        return plan.id, answer, trace

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, plans))


# -- closed loop ---------------------------------------------------------------------------


@dataclass
class E2EResult:
    report: EvalReport
    items: list[BenchmarkItem]
    failed_plans: int


def run_e2e(
    kg: KnowledgeGraph,
    scale: int,
    *,
    seed: int = 0,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    train_budget: int | None = None,
) -> E2EResult:
    """Ground, verbalize, generate a benchmark, plan, execute and grade offline.

    Planning uses :class:`OraclePlanner` and answering uses :class:`KGQAStub`,
    so a correct pipeline scores precision = recall = 1.
    """
    distribution = scale_distribution(scale)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    stage = "pattern-engine"
    try:
        budget = train_budget or max(1, scale // 10)
        train = [inst for p in ALL_PATTERNS for inst in ground(kg, p, budget, seed=f"train:{seed}")]
        if out is not None:
            write_jsonl((instance_record(kg, i) for i in train), out / "instances.jsonl")

        stage = "verbalizer"
        verbalized = [verbalize_template(i, kg) for i in train]
        if out is not None:
            write_jsonl((v.to_dict() for v in verbalized), out / "verbalized.jsonl")

        stage = "eval-bench"
        items = generate_benchmark(kg, distribution, seed, {instance_hash(i) for i in train})
        if out is not None:
            write_benchmark(items, out / "benchmark.json")

        stage = "plan-data"
        planner = OraclePlanner((it.question, it.pattern, it.sub_questions) for it in items)
        plans = plan_many([(it.id, it.question) for it in items], planner, jobs=jobs)
        if out is not None:
            write_jsonl((p.to_dict() for p in plans), out / "plans.jsonl")

        stage = "executor"
        results = execute_plans(plans, LexicalRetriever(corpus_from_kg(kg)), KGQAStub(kg), jobs=jobs)
        if out is not None:
            write_jsonl(({"id": pid, **t.to_dict()} for pid, _, t in results), out / "traces.jsonl")
            write_predictions(((pid, a) for pid, a, _ in results), out / "predictions.jsonl")

        stage = "eval-bench"
        report = evaluate({pid: list(a.values) for pid, a, _ in results}, items,
                          {"scale": scale, "seed": seed})
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - reported with the stage that failed
        raise StageError(stage, str(exc)) from exc
    if out is not None:
        write_json(report.to_dict(), out / "report.json")
        (out / "report.txt").write_text(report.table(), encoding="utf-8")
    return E2EResult(report, items, sum(1 for p in plans if not p.ok))
