from __future__ import annotations

import json

import pytest

from kgplan.bench import load_benchmark, pattern_counts
from kgplan.plandata import validate_training_file

from chain import invoke, run_chain, snapshot


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    return root, run_chain(root)


def test_chain_outputs(chain):
    root, results = chain
    assert (root / "graph" / "triples.tsv").stat().st_size > 0
    rows = [json.loads(x) for x in (root / "instances.jsonl").read_text().splitlines()]
    assert len(rows) == 54 and all("hash" in r and r["answers"] for r in rows)
    assert validate_training_file(root / "train.jsonl") == []
    items = load_benchmark(root / "benchmark.json")
    counts = pattern_counts(items)
    assert sum(counts.values()) == len(items) <= 24
    hashes = {r["hash"] for r in rows}
    assert not hashes & {it.to_dict()["hash"] for it in items}
    assert (root / "benchmark.leakage.json").exists()
    report = json.loads((root / "report.json").read_text())
    assert report["overall"]["precision"] == 1.0 and report["overall"]["recall"] == 1.0
    assert "overall" in results["eval"].output
    assert "precision=1.0000 recall=1.0000" in results["e2e"].output


def test_traces_without_timings_by_default(chain):
    root, _ = chain
    first = json.loads((root / "run" / "traces.jsonl").read_text().splitlines()[0])
    assert first["status"] == "ok"
    assert all("duration" not in s for s in first["steps"])


def test_chain_is_deterministic(chain, tmp_path):
    root, _ = chain
    run_chain(tmp_path)
    assert snapshot(tmp_path) == snapshot(root)


def test_budget_and_scale_must_be_positive(fixture_path, tmp_path):
    r = invoke("ground", "--kg", fixture_path, "--budget", 0, "--out", tmp_path / "x.jsonl")
    assert r.exit_code == 2 and "budget" in r.output
    r = invoke("gen-bench", "--kg", fixture_path, "--scale", 0, "--out", tmp_path / "b.json")
    assert r.exit_code == 2
    assert invoke("e2e", "--stub", "--scale", 0).exit_code == 2


def test_corrupt_graph_is_a_config_error(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tb\n")
    r = invoke("ground", "--kg", bad, "--budget", 1, "--out", tmp_path / "x.jsonl")
    assert r.exit_code == 2 and "kg-store" in r.output


def test_missing_endpoint_is_a_config_error(fixture_path, tmp_path, monkeypatch):
    for role in ("VERBALIZER", "PLANNER", "QA"):
        monkeypatch.delenv(f"KGPLAN_{role}_BASE_URL", raising=False)
    invoke("ground", "--kg", fixture_path, "--budget", 1, "--pattern", "1p", "--out", tmp_path / "i.jsonl")
    r = invoke("verbalize", "--kg", fixture_path, "--instances", tmp_path / "i.jsonl", "--out", tmp_path / "v.jsonl")
    assert r.exit_code == 2 and "verbalizer endpoint" in r.output


def test_e2e_requires_stub():
    r = invoke("e2e")
    assert r.exit_code == 2 and "--stub" in r.output


def test_config_file_and_environment(tmp_path, fixture_path, monkeypatch):
    from kgplan.pipeline import load_config

    cfg_path = tmp_path / "kgplan.toml"
    cfg_path.write_text(f'kg = "{fixture_path}"\nseed = 3\n[endpoints.qa]\nbase_url = "http://file"\nmodel = "m"\n')
    cfg = load_config(cfg_path)
    assert cfg.seed == 3 and cfg.endpoint("qa").base_url == "http://file"
    monkeypatch.setenv("KGPLAN_QA_BASE_URL", "http://env")
    assert cfg.endpoint("qa").base_url == "http://env"
    r = invoke("--config", cfg_path, "ground", "--budget", 2, "--pattern", "2p", "--out", tmp_path / "a.jsonl")
    assert r.exit_code == 0, r.output
    r = invoke("ground", "--kg", fixture_path, "--seed", 3, "--budget", 2, "--pattern", "2p",
               "--out", tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


@pytest.mark.parametrize("text", ['unknown_key = 1\n', 'seed = "x"\n', '[endpoints.robot]\nmodel = "m"\n', "= broken"])
def test_bad_config_exits_2(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    r = invoke("--config", path, "validate-plan", path)
    assert r.exit_code == 2


def test_missing_config_file_exits_2(tmp_path):
    assert invoke("--config", tmp_path / "nope.toml", "synth-kg").exit_code == 2


def test_validate_plan(data_dir, tmp_path):
    r = invoke("validate-plan", data_dir / "plan_example1.txt")
    assert r.exit_code == 0 and "10 statements" in r.output
    bad = tmp_path / "bad.txt"
    bad.write_text('A: str = Search(query = B, thought = C)\nF: str = Finish_The_Plan(Answer = A)\n')
    r = invoke("validate-plan", bad)
    assert r.exit_code == 1 and "before assignment" in r.output
    broken = tmp_path / "broken.txt"
    broken.write_text('A: str = "x"\nB: str = Nope(x = A)\n')
    r = invoke("validate-plan", broken)
    assert r.exit_code == 1 and "unknown builtin" in r.output


def test_eval_rejects_unknown_ids(chain, tmp_path):
    root, _ = chain
    preds = tmp_path / "p.jsonl"
    preds.write_text('{"id": "nope", "answers": []}\n')
    r = invoke("eval", "--predictions", preds, "--benchmark", root / "benchmark.json")
    assert r.exit_code == 1 and "unknown ids" in r.output


def test_execute_with_timings_and_corpus(chain, data_dir, tmp_path):
    root, _ = chain
    r = invoke("execute", "--kg", root / "graph" / "triples.tsv", "--labels", root / "graph" / "labels.tsv",
               "--plans", root / "plans.jsonl", "--stub", "--timings", "--corpus", data_dir / "corpus.jsonl",
               "--k", 2, "--out", tmp_path)
    assert r.exit_code == 0, r.output
    first = json.loads((tmp_path / "traces.jsonl").read_text().splitlines()[0])
    assert "duration" in first["steps"][0]


def test_help_lists_every_command():
    out = invoke("--help").output
    for name in ["synth-kg", "ground", "verbalize", "build-train", "gen-bench", "plan", "execute", "eval",
                 "validate-plan", "e2e"]:
        assert name in out
