"""Benchmark generation, grading and train/test leakage filtering."""

from __future__ import annotations

import json
import logging
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .answers import AnswerList
from .kg import KnowledgeGraph
from .patterns import ALL_PATTERNS, Instance, Pattern, answer_set, ground, instance_hash
from .verbalize import VerbalizedInstance, verbalize_template

logger = logging.getLogger(__name__)

# per-type counts of the reference benchmark; it has no one-hop questions
REFERENCE_COUNTS: dict[Pattern, int] = {
    Pattern.TWO_P: 200,
    Pattern.THREE_P: 200,
    Pattern.TWO_I: 200,
    Pattern.THREE_I: 200,
    Pattern.IP: 50,
    Pattern.PI: 50,
    Pattern.TWO_U: 200,
    Pattern.COMPARE: 100,
}


class BenchmarkError(ValueError):
    pass


def default_distribution() -> dict[Pattern, int]:
    return {p: REFERENCE_COUNTS.get(p, 0) for p in ALL_PATTERNS}


def scale_distribution(total: int, base: Mapping[Pattern, int] | None = None) -> dict[Pattern, int]:
    """Scale ``base`` (default: the reference counts) to sum to ``total``.

    Uses largest-remainder rounding; ties go to the earlier pattern.
    """
    if total < 1:
        raise BenchmarkError(f"scale must be >= 1, got {total}")
    base = dict(base or default_distribution())
    whole = sum(base.values())
    if whole == 0:
        raise BenchmarkError("base distribution is empty")
    order = [p for p in ALL_PATTERNS if p in base]
    exact = {p: base[p] * total / whole for p in order}
    out = {p: int(exact[p]) for p in order}
    left = total - sum(out.values())
    by_rest = sorted(order, key=lambda p: (-(exact[p] - out[p]), order.index(p)))
    for p in by_rest[:left]:
        out[p] += 1
    return out


def parse_distribution(text: str) -> dict[Pattern, int]:
    """``"2p=20,compare=10"`` -> counts (other patterns 0)."""
    out = {p: 0 for p in ALL_PATTERNS}
    for part in filter(None, (x.strip() for x in text.split(","))):
        name, _, count = part.partition("=")
        try:
            p, n = Pattern(name.strip()), int(count)
        except ValueError as exc:
            raise BenchmarkError(f"bad distribution entry {part!r}") from exc
        if n < 0:
            raise BenchmarkError(f"negative count for {p}")
        out[p] = n
    return out


# -- generation ------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkItem:
    id: str
    pattern: Pattern
    question: str
    answers: tuple[str, ...]
    sub_questions: tuple[str, ...] = ()
    instance: Instance | None = None

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "pattern": self.pattern.value,
            "question": self.question,
            "answers": list(self.answers),
            "sub_questions": list(self.sub_questions),
        }
        if self.instance is not None:
            d["instance"] = self.instance.to_dict()
            d["hash"] = instance_hash(self.instance)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkItem":
        return cls(
            id=str(d["id"]),
            pattern=Pattern(d["pattern"]),
            question=d["question"],
            answers=tuple(d["answers"]),
            sub_questions=tuple(d.get("sub_questions", ())),
            instance=Instance.from_dict(d["instance"]) if "instance" in d else None,
        )


Verbalizer = Callable[[Instance, KnowledgeGraph], VerbalizedInstance]


def generate_benchmark(
    kg: KnowledgeGraph,
    distribution: Mapping[Pattern, int],
    seed: int = 0,
    exclusions: Iterable[str] = (),
    verbalizer: Verbalizer = verbalize_template,
) -> list[BenchmarkItem]:
    """Ground, verbalize and label items per the requested counts.

    Instances whose hash is in ``exclusions`` are never used. Shortfalls are
    logged; a request that yields no item at all raises.
    """
    if kg.triple_count == 0:
        raise BenchmarkError("empty graph")
    excluded = frozenset(exclusions)
    items: list[BenchmarkItem] = []
    requested = 0
    for p in ALL_PATTERNS:
        n = int(distribution.get(p, 0))
        if n < 0:
            raise BenchmarkError(f"negative count for {p}")
        if n == 0:
            continue
        requested += n
        grounded = ground(kg, p, n, seed=f"bench:{seed}", exclude=excluded)
        if len(grounded) < n:
            logger.warning("%s: benchmark shortfall, %d of %d items", p, len(grounded), n)
        for i, inst in enumerate(grounded):
            v = verbalizer(inst, kg)
            gold = tuple(answer_set(kg, inst).as_list())
            if not gold or tuple(v.answers) != gold:
                raise BenchmarkError(f"gold mismatch for instance {instance_hash(inst)}")
            items.append(BenchmarkItem(f"{p.value}-{i:04d}", p, v.complex_question, gold,
                                       v.sub_questions, inst))
    if requested and not items:
        raise BenchmarkError("no candidates left: every instance was excluded or invalid")
    return items


def pattern_counts(items: Iterable[BenchmarkItem]) -> dict[str, int]:
    counts = {p.value: 0 for p in ALL_PATTERNS}
    for it in items:
        counts[it.pattern.value] += 1
    return counts


def write_benchmark(items: Sequence[BenchmarkItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"items": [it.to_dict() for it in items]}, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def load_benchmark(path: str | Path) -> list[BenchmarkItem]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    items = [BenchmarkItem.from_dict(d) for d in data["items"]]
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise BenchmarkError("duplicate item ids in benchmark")
    return items


# -- metrics -----------------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and English articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def _key_set(values: Iterable[str]) -> set[str]:
    return {normalize_answer(v) for v in values}


def precision_recall(pred: Iterable[str], gold: Iterable[str]) -> tuple[float, float]:
    """Set precision and recall under :func:`normalize_answer`.

    Both sides empty scores (1, 1); if only one side is empty both metrics are 0.
    """
    p, g = _key_set(pred), _key_set(gold)
    if not p and not g:
        return 1.0, 1.0
    hit = len(p & g)
    precision = hit / len(p) if p else 0.0
    recall = hit / len(g) if g else 0.0
    return precision, recall


@dataclass(frozen=True)
class ItemScore:
    id: str
    pattern: Pattern
    em: int
    precision: float
    recall: float

    def to_dict(self) -> dict:
        return {"id": self.id, "pattern": self.pattern.value, "em": self.em,
                "precision": self.precision, "recall": self.recall}


def score_item(item: BenchmarkItem, pred: Sequence[str]) -> ItemScore:
    """Compare items are graded by EM on the verdict; others by set overlap."""
    if item.pattern is Pattern.COMPARE:
        em = exact_match(pred[0], item.answers[0]) if len(pred) == 1 else 0
        return ItemScore(item.id, item.pattern, em, float(em), float(em))
    precision, recall = precision_recall(pred, item.answers)
    em = int(_key_set(pred) == _key_set(item.answers))
    return ItemScore(item.id, item.pattern, em, precision, recall)


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def _summary(rows: Sequence[ItemScore]) -> dict:
    return {
        "count": len(rows),
        "em": _mean([r.em for r in rows]),
        "precision": _mean([r.precision for r in rows]),
        "recall": _mean([r.recall for r in rows]),
    }


@dataclass
class EvalReport:
    overall: dict
    per_pattern: dict[str, dict]
    items: list[ItemScore]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_pattern": self.per_pattern,
            "items": [r.to_dict() for r in self.items],
            "metadata": self.metadata,
        }

    def table(self) -> str:
        lines = [f"{'pattern':<10}{'n':>6}{'EM':>9}{'P':>9}{'R':>9}"]
        for name, s in [*self.per_pattern.items(), ("overall", self.overall)]:
            lines.append(f"{name:<10}{s['count']:>6}{s['em']:>9.4f}{s['precision']:>9.4f}{s['recall']:>9.4f}")
        return "\n".join(lines) + "\n"


def evaluate(
    predictions: Mapping[str, Sequence[str]],
    benchmark: Sequence[BenchmarkItem],
    metadata: Mapping | None = None,
) -> EvalReport:
    """Grade ``predictions`` (id -> answers); missing ids count as empty answers."""
    known = {it.id for it in benchmark}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise BenchmarkError(f"predictions for unknown ids: {', '.join(unknown[:5])}")
    rows = [score_item(it, list(predictions.get(it.id, ()))) for it in benchmark]
    grouped: dict[Pattern, list[ItemScore]] = defaultdict(list)
    for r in rows:
        grouped[r.pattern].append(r)
    per_pattern = {p.value: _summary(grouped[p]) for p in ALL_PATTERNS if grouped[p]}
    meta = dict(metadata or {})
    meta.setdefault("missing", sum(1 for it in benchmark if it.id not in predictions))
    return EvalReport(_summary(rows), per_pattern, rows, meta)


def load_predictions(path: str | Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            pid = str(row["id"])
            if pid in out:
                raise BenchmarkError(f"line {lineno}: duplicate prediction id {pid}")
            out[pid] = list(row.get("answers", []))
    return out


def write_predictions(predictions: Iterable[tuple[str, AnswerList | Sequence[str]]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pid, answers in predictions:
            values = list(answers.values) if isinstance(answers, AnswerList) else list(answers)
            fh.write(json.dumps({"id": pid, "answers": values}, ensure_ascii=False) + "\n")


def evaluate_run(predictions: str | Path, benchmark: str | Path) -> EvalReport:
    items = load_benchmark(benchmark)
    preds = load_predictions(predictions)
    return evaluate(preds, items, {"benchmark": Path(benchmark).name, "predictions": Path(predictions).name})


# -- leakage -----------------------------------------------------------------------

_TOKEN = re.compile(r"\w+")


def _tokens(text: str) -> frozenset[str]:
    return frozenset(_TOKEN.findall(text.lower()))


def jaccard(a: str, b: str) -> float:
    """Token-set Jaccard similarity; two token-less strings count as identical."""
    ta, tb = _tokens(a), _tokens(b)
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


@dataclass
class LeakageReport:
    retained: list[str]
    removed: list[tuple[str, str, float]]
    threshold: float

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "retained": len(self.retained),
            "removed": [{"question": q, "nearest_train": t, "similarity": s} for q, t, s in self.removed],
        }


def _best_match_jaccard(train: Sequence[str], threshold: float):
    """Nearest training question under Jaccard, pruned by token overlap and size."""
    sets = [_tokens(t) for t in train]
    index: dict[str, list[int]] = defaultdict(list)
    for i, s in enumerate(sets):
        for tok in s:
            index[tok].append(i)
    empties = [i for i, s in enumerate(sets) if not s]

    def best(question: str) -> tuple[float, int]:
        q = _tokens(question)
        if not q:
            return (1.0, empties[0]) if empties else (0.0, -1)
        cands: set[int] = set()
        for tok in q:
            cands.update(index.get(tok, ()))
        top = (0.0, -1)
        for i in sorted(cands):
            s = sets[i]
            # |A∩B|/|A∪B| <= min/max of the sizes, so skip hopeless pairs
            if min(len(s), len(q)) / max(len(s), len(q)) <= threshold:
                continue
            sim = len(q & s) / len(q | s)
            if sim > top[0]:
                top = (sim, i)
        return top

    return best


def leakage_filter(
    train_questions: Sequence[str],
    bench_questions: Sequence[str],
    similarity: Callable[[str, str], float] = jaccard,
    threshold: float = 0.9,
) -> LeakageReport:
    """Drop benchmark questions whose best similarity to training exceeds ``threshold``."""
    retained: list[str] = []
    removed: list[tuple[str, str, float]] = []
    fast = _best_match_jaccard(train_questions, threshold) if similarity is jaccard else None
    for q in bench_questions:
        if fast is not None:
            score, idx = fast(q)
        else:
            score, idx = 0.0, -1
            for i, t in enumerate(train_questions):
                s = similarity(q, t)
                if not 0.0 <= s <= 1.0:
                    raise ValueError(f"similarity out of range: {s}")
                if s > score:
                    score, idx = s, i
        if idx >= 0 and score > threshold:
            removed.append((q, train_questions[idx], score))
        else:
            retained.append(q)
    return LeakageReport(retained, removed, threshold)


def filter_benchmark(
    items: Sequence[BenchmarkItem],
    train_questions: Sequence[str],
    similarity: Callable[[str, str], float] = jaccard,
    threshold: float = 0.9,
) -> tuple[list[BenchmarkItem], LeakageReport]:
    report = leakage_filter(train_questions, [it.question for it in items], similarity, threshold)
    dropped = {q for q, _, _ in report.removed}
    return [it for it in items if it.question not in dropped], report
