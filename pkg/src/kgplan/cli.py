"""Command line: ground, verbalize, build-train, gen-bench, plan, execute, eval, e2e.

Exit codes: 0 success, 1 a pipeline stage failed, 2 usage or configuration error.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import bench, dsl
from .executor import ExecutionConfig
from .endpoints import RetryPolicy
from .kg import KGError, KnowledgeGraph, load_kg
from .patterns import ALL_PATTERNS, GroundingError, Instance, ground, instance_record
from .pipeline import (
    ConfigError, PipelineConfig, PlanResult, StageError, chat_endpoint, execute_plans, load_config,
    make_retriever, plan_many, read_jsonl, run_e2e, write_json, write_jsonl,
)
from .plandata import build_training_set, validate_training_file
from .stubs import KGQAStub, OraclePlanner
from .synth import synthesize_kg, write_synthetic
from .verbalize import VerbalizationError, VerbalizedInstance, load_prompts, verbalize_batch

logger = logging.getLogger("kgplan")


class StageFailed(click.ClickException):
    exit_code = 1


class ConfigProblem(click.ClickException):
    exit_code = 2


def _cfg(ctx: click.Context) -> PipelineConfig:
    return ctx.obj["config"]


def _seed(ctx: click.Context, seed: int | None) -> int:
    return _cfg(ctx).seed if seed is None else seed


def _jobs(ctx: click.Context, jobs: int | None) -> int:
    return _cfg(ctx).jobs if jobs is None else jobs


def _out_dir(ctx: click.Context, out: str | None) -> Path:
    path = Path(out or _cfg(ctx).out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_graph(ctx: click.Context, kg: str | None, labels: str | None) -> KnowledgeGraph:
    cfg = _cfg(ctx)
    kg = kg or cfg.kg
    labels = labels or cfg.labels
    if kg is None:
        raise ConfigProblem("no graph given (--kg or 'kg' in the config)")
    try:
        return load_kg(kg, labels)
    except (KGError, OSError) as exc:
        raise ConfigProblem(f"kg-store: {exc}") from None


def _require_stub_or_endpoint(ctx: click.Context, stub: bool, role: str):
    if stub:
        return None
    try:
        return chat_endpoint(_cfg(ctx), role)
    except ConfigError as exc:
        raise ConfigProblem(str(exc)) from None


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="TOML config file; KGPLAN_<ROLE>_* variables override endpoint keys.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx: click.Context, config_path: str | None, verbose: int) -> None:
    """Plan-based question answering over knowledge-graph derived data."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if config_path is not None and not Path(config_path).is_file():
        raise ConfigProblem(f"config file not found: {config_path}")
    try:
        ctx.obj = {"config": load_config(config_path)}
    except ConfigError as exc:
        raise ConfigProblem(str(exc)) from None


_kg_opts = [
    click.option("--kg", type=click.Path(), default=None, help="Triple TSV file."),
    click.option("--labels", type=click.Path(), default=None, help="id<TAB>label file."),
]


def kg_options(fn):
    for opt in reversed(_kg_opts):
        fn = opt(fn)
    return fn


@main.command("synth-kg")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def synth_kg(ctx, seed, out):
    """Write a seeded synthetic graph (triples.tsv, labels.tsv)."""
    triples, labels = write_synthetic(_out_dir(ctx, out), _seed(ctx, seed))
    click.echo(f"wrote {triples} and {labels}")


@main.command("ground")
@kg_options
@click.option("--pattern", "patterns", multiple=True, type=click.Choice([p.value for p in ALL_PATTERNS]),
              help="Pattern to ground (repeatable); default all nine.")
@click.option("--budget", type=int, required=True, help="Instances per pattern.")
@click.option("--seed", type=int, default=None)
@click.option("--max-answers", type=int, default=100, show_default=True)
@click.option("--exclude", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSONL with 'hash' fields to keep out.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output JSONL.")
@click.pass_context
def ground_cmd(ctx, kg, labels, patterns, budget, seed, max_answers, exclude, out):
    """Sample valid pattern instances with gold answers."""
    if budget < 1:
        raise click.UsageError("--budget must be >= 1")
    graph = _load_graph(ctx, kg, labels)
    excluded = {row["hash"] for row in read_jsonl(exclude)} if exclude else set()
    path = Path(out) if out else _out_dir(ctx, None) / "instances.jsonl"
    rows = []
    for p in patterns or [p.value for p in ALL_PATTERNS]:
        try:
            found = ground(graph, p, budget, seed=_seed(ctx, seed), max_answers=max_answers, exclude=excluded)
        except GroundingError as exc:
            raise click.UsageError(str(exc)) from None
        if len(found) < budget:
            click.echo(f"warning: {p} grounded {len(found)} of {budget}", err=True)
        click.echo(f"{p}: {len(found)}")
        rows.extend(instance_record(graph, i) for i in found)
    write_jsonl(rows, path)


@main.command("verbalize")
@kg_options
@click.option("--instances", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--stub", is_flag=True, help="Use the offline template verbalizer.")
@click.option("--prompts", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--fallback", type=click.Choice(["error", "template", "skip"]), default="error")
@click.option("--jobs", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def verbalize_cmd(ctx, kg, labels, instances, stub, prompts, fallback, jobs, out):
    """Turn grounded instances into sub-questions and complex questions."""
    graph = _load_graph(ctx, kg, labels)
    client = _require_stub_or_endpoint(ctx, stub, "verbalizer")
    insts = [Instance.from_dict(r) for r in read_jsonl(instances)]
    try:
        kwargs = {} if client is None else {"fallback": fallback}
        done = verbalize_batch(insts, graph, client, load_prompts(prompts or _cfg(ctx).prompts),
                               jobs=_jobs(ctx, jobs), **kwargs)
    except VerbalizationError as exc:
        raise StageFailed(f"verbalizer: {exc}") from None
    path = Path(out) if out else _out_dir(ctx, None) / "verbalized.jsonl"
    write_jsonl((v.to_dict() for v in done), path)
    click.echo(f"verbalized {len(done)} of {len(insts)} instances -> {path}")


@main.command("build-train")
@click.option("--verbalized", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--quota", type=int, default=1000, show_default=True, help="Examples per pattern.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def build_train(ctx, verbalized, quota, out):
    """Emit planner fine-tuning pairs (input x, output y) as JSONL."""
    if quota < 1:
        raise click.UsageError("--quota must be >= 1")
    items = [VerbalizedInstance.from_dict(r) for r in read_jsonl(verbalized)]
    path = Path(out) if out else _out_dir(ctx, None) / "train.jsonl"
    counts = build_training_set(items, quota, path)
    problems = validate_training_file(path)
    for name, n in counts.items():
        click.echo(f"{name}: {n}")
    click.echo(f"total: {sum(counts.values())}")
    if problems:
        raise StageFailed(f"plan-data: {len(problems)} outputs fail validation (first: {problems[0]})")


@main.command("gen-bench")
@kg_options
@click.option("--scale", type=int, default=None, help="Total size, reference distribution scaled.")
@click.option("--distribution", default=None, help="e.g. '2p=20,2i=5'; overrides --scale.")
@click.option("--exclude", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Instances or verbalized JSONL whose hashes must not appear.")
@click.option("--train", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Training JSONL; similar questions are filtered out.")
@click.option("--threshold", type=float, default=0.9, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def gen_bench(ctx, kg, labels, scale, distribution, exclude, train, threshold, seed, out):
    """Generate a benchmark with gold answer sets."""
    try:
        if distribution:
            dist = bench.parse_distribution(distribution)
        elif scale is not None:
            dist = bench.scale_distribution(scale)
        else:
            dist = bench.default_distribution()
    except bench.BenchmarkError as exc:
        raise click.UsageError(str(exc)) from None
    graph = _load_graph(ctx, kg, labels)
    excluded = {row["hash"] for row in read_jsonl(exclude)} if exclude else set()
    try:
        items = bench.generate_benchmark(graph, dist, _seed(ctx, seed), excluded)
    except bench.BenchmarkError as exc:
        raise StageFailed(f"eval-bench: {exc}") from None
    out_path = Path(out) if out else _out_dir(ctx, None) / "benchmark.json"
    if train:
        questions = [_train_question(r) for r in read_jsonl(train)]
        items, report = bench.filter_benchmark(items, questions, threshold=threshold)
        write_json(report.to_dict(), out_path.with_suffix(".leakage.json"))
        click.echo(f"leakage filter removed {len(report.removed)}")
    bench.write_benchmark(items, out_path)
    for name, n in bench.pattern_counts(items).items():
        if n:
            click.echo(f"{name}: {n}")
    click.echo(f"total: {len(items)}")


def _train_question(row: dict) -> str:
    if "complex_question" in row:
        return row["complex_question"]
    if "question" in row:
        return row["question"]
    from .stubs import question_from_planning_prompt

    return question_from_planning_prompt(row["input"]) or ""


@main.command("plan")
@click.option("--benchmark", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--stub", is_flag=True, help="Oracle planner built from the benchmark's sub-questions.")
@click.option("--jobs", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def plan_cmd(ctx, benchmark, stub, jobs, out):
    """Ask the planner for a plan per benchmark question."""
    items = bench.load_benchmark(benchmark)
    planner = _require_stub_or_endpoint(ctx, stub, "planner")
    if planner is None:
        planner = OraclePlanner((it.question, it.pattern, it.sub_questions) for it in items)
    plans = plan_many([(it.id, it.question) for it in items], planner, jobs=_jobs(ctx, jobs))
    path = Path(out) if out else _out_dir(ctx, None) / "plans.jsonl"
    write_jsonl((p.to_dict() for p in plans), path)
    bad = sum(1 for p in plans if not p.ok)
    click.echo(f"planned {len(plans)}; {bad} rejected by validation")


@main.command("execute")
@kg_options
@click.option("--plans", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--stub", is_flag=True, help="Answer sub-questions from the graph.")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--k", type=int, default=None, help="Passages per search.")
@click.option("--fanout", is_flag=True, help="Ask once per answer of multi-answer placeholders.")
@click.option("--timings", is_flag=True, help="Record step durations in traces.")
@click.option("--jobs", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def execute_cmd(ctx, kg, labels, plans, stub, corpus, k, fanout, timings, jobs, out):
    """Run plans; write traces.jsonl and predictions.jsonl."""
    cfg = _cfg(ctx)
    graph = _load_graph(ctx, kg, labels) if (stub or kg or cfg.kg) else None
    qa = _require_stub_or_endpoint(ctx, stub, "qa")
    if qa is None:
        if graph is None:
            raise ConfigProblem("--stub needs a graph (--kg)")
        qa = KGQAStub(graph)
    if corpus:
        cfg.corpus = corpus
    try:
        retriever = make_retriever(cfg, graph)
    except ConfigError as exc:
        raise ConfigProblem(str(exc)) from None
    rows = read_jsonl(plans)
    results_in = [PlanResult(r["id"], r["question"], "", r["plan"], r.get("diagnostics", [])) for r in rows]
    config = ExecutionConfig(k=cfg.k if k is None else k, retry=RetryPolicy(cfg.retries),
                             timeout=cfg.timeout, fanout=fanout)
    results = execute_plans(results_in, retriever, qa, config, jobs=_jobs(ctx, jobs))
    out_dir = _out_dir(ctx, out)
    write_jsonl(({"id": pid, **t.to_dict(timings)} for pid, _, t in results), out_dir / "traces.jsonl")
    bench.write_predictions(((pid, a) for pid, a, _ in results), out_dir / "predictions.jsonl")
    failed = sum(1 for _, _, t in results if t.status == "failed")
    click.echo(f"executed {len(results)}; {failed} failed")
    if failed:
        raise StageFailed(f"executor: {failed} plans failed at an endpoint")


@main.command("eval")
@click.option("--predictions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--benchmark", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report JSON path.")
def eval_cmd(predictions, benchmark, out):
    """Grade predictions: EM, precision and recall, overall and per pattern."""
    try:
        report = bench.evaluate_run(predictions, benchmark)
    except bench.BenchmarkError as exc:
        raise StageFailed(f"eval-bench: {exc}") from None
    if out:
        write_json(report.to_dict(), out)
    click.echo(report.table(), nl=False)


@main.command("validate-plan")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def validate_plan(path):
    """Parse and validate one plan file; print diagnostics."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        program = dsl.parse_plan(text)
    except dsl.PlanSyntaxError as exc:
        for d in exc.diagnostics:
            click.echo(str(d))
        raise StageFailed("plan-dsl: syntax errors") from None
    diags = [*program.warnings, *dsl.validate(program)]
    for d in diags:
        click.echo(str(d))
    click.echo(f"{len(program)} statements")
    if dsl.errors(diags):
        raise StageFailed("plan-dsl: validation errors")


@main.command("e2e")
@kg_options
@click.option("--stub", is_flag=True, help="Offline endpoints (oracle planner, graph-backed QA).")
@click.option("--scale", type=int, default=120, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--threshold", type=float, default=1.0, show_default=True,
              help="Minimum precision and recall for exit code 0.")
@click.option("--jobs", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def e2e(ctx, kg, labels, stub, scale, seed, threshold, jobs, out):
    """Closed-loop self-test: ground, verbalize, benchmark, plan, execute, grade."""
    if scale < 1:
        raise click.UsageError("--scale must be >= 1")
    if not stub:
        raise click.UsageError("e2e currently runs offline only; pass --stub")
    seed = _seed(ctx, seed)
    graph = _load_graph(ctx, kg, labels) if (kg or _cfg(ctx).kg) else synthesize_kg(seed)
    try:
        result = run_e2e(graph, scale, seed=seed, out_dir=_out_dir(ctx, out), jobs=_jobs(ctx, jobs))
    except StageError as exc:
        raise StageFailed(str(exc)) from None
    overall = result.report.overall
    click.echo(result.report.table(), nl=False)
    click.echo(f"precision={overall['precision']:.4f} recall={overall['recall']:.4f}")
    if overall["precision"] < threshold or overall["recall"] < threshold:
        raise StageFailed(f"e2e: below threshold {threshold}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
