from __future__ import annotations

import itertools
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgplan.kg import KnowledgeGraph
from kgplan.patterns import (
    ALL_PATTERNS, ARITY, GroundingError, Instance, InvalidInstance, Pattern, answer_set,
    compare_verdict, enumerate_instances, ground, instance_hash, instance_record, is_valid,
)

from oracles import brute_force_answers, brute_force_verdict


def test_nine_patterns_with_stable_names():
    assert [p.value for p in ALL_PATTERNS] == ["1p", "2p", "3p", "2i", "3i", "2u", "ip", "pi", "compare"]
    assert ARITY == {Pattern("1p"): 1, Pattern("2p"): 2, Pattern("3p"): 3, Pattern("2i"): 2,
                     Pattern("3i"): 3, Pattern("2u"): 2, Pattern("ip"): 3, Pattern("pi"): 3,
                     Pattern("compare"): 2}


def test_borders_of_russia_and_china(fixture_kg):
    inst = Instance(Pattern.TWO_I, ("Russia", "China"), ("shares border with", "shares border with"))
    assert set(answer_set(fixture_kg, inst).answers) == {"Mongolia", "Kazakhstan", "North Korea"}


def test_inkheart_two_hop_is_grounded(fixture_kg):
    target = Instance(Pattern.TWO_P, ("Inkheart",), ("cast member", "educated at"))
    assert is_valid(fixture_kg, target)
    assert target in enumerate_instances(fixture_kg, "2p")
    found = ground(fixture_kg, "2p", 500, seed=0)
    assert target in found


def test_union_with_identical_branches_is_idempotent(fixture_kg):
    one = answer_set(fixture_kg, Instance(Pattern.ONE_P, ("Russia",), ("shares border with",)))
    both = answer_set(fixture_kg, Instance(Pattern.TWO_U, ("Russia", "Russia"),
                                           ("shares border with", "shares border with")))
    assert both.nodes == one.nodes


def test_compare_verdicts():
    assert compare_verdict(Decimal(20), Decimal(18), "same") == "No"
    assert compare_verdict(Decimal(7), Decimal(7), "same") == "Yes"
    assert compare_verdict(Decimal(94660000), Decimal(424931), "lesser", "Vietnam", "Halifax") == "Halifax"
    assert compare_verdict(Decimal(94660000), Decimal(424931), "greater", "Vietnam", "Halifax") == "Vietnam"
    with pytest.raises(ValueError, match="tie"):
        compare_verdict(Decimal(3), Decimal(3), "lesser", "a", "b")


def test_compare_instance_on_fixture(fixture_kg):
    inst = Instance(Pattern.COMPARE, ("Vietnam", "Halifax"), ("population",), kind="lesser",
                    values=(Decimal(94660000), Decimal(424931)))
    assert answer_set(fixture_kg, inst).verdict == "Halifax"
    wrong = Instance(Pattern.COMPARE, ("Vietnam", "Halifax"), ("population",), kind="lesser",
                     values=(Decimal(1), Decimal(424931)))
    with pytest.raises(InvalidInstance):
        answer_set(fixture_kg, wrong)


def test_budget_zero_is_rejected(fixture_kg):
    with pytest.raises(GroundingError):
        ground(fixture_kg, "1p", 0)


def test_unregistered_ids_rejected(fixture_kg):
    with pytest.raises(InvalidInstance):
        answer_set(fixture_kg, Instance(Pattern.ONE_P, ("Atlantis",), ("capital",)))
    assert not is_valid(fixture_kg, Instance(Pattern.ONE_P, ("Russia",), ("no such relation",)))


def test_shape_is_checked():
    with pytest.raises(InvalidInstance):
        Instance(Pattern.TWO_P, ("a",), ("r",))
    with pytest.raises(InvalidInstance):
        Instance(Pattern.COMPARE, ("a", "b"), ("r",), kind="same?", values=(Decimal(1), Decimal(2)))


@pytest.mark.parametrize("pattern", ALL_PATTERNS, ids=str)
def test_grounding_is_deterministic_and_valid(fixture_kg, pattern):
    a = ground(fixture_kg, pattern, 25, seed=3)
    b = ground(fixture_kg, pattern, 25, seed=3)
    assert a == b
    assert len({instance_hash(i) for i in a}) == len(a)
    for inst in a:
        assert is_valid(fixture_kg, inst)
        assert answer_set(fixture_kg, inst).as_list()


def test_grounding_shortfall_returns_what_exists(fixture_kg):
    everything = enumerate_instances(fixture_kg, "3i")
    got = ground(fixture_kg, "3i", len(everything) + 50, seed=1)
    assert len(got) <= len(everything)
    assert {instance_hash(i) for i in got} <= {instance_hash(i) for i in everything}


def test_exclusions_are_respected(fixture_kg):
    first = ground(fixture_kg, "2i", 10, seed=0)
    excluded = {instance_hash(i) for i in first}
    again = ground(fixture_kg, "2i", 10, seed=0, exclude=excluded)
    assert not excluded & {instance_hash(i) for i in again}


def test_every_2i_instance_matches_exhaustive_branch_scan(fixture_kg):
    branches = [(h, r) for (h, r) in fixture_kg.forward]
    brute = set()
    for (a1, r1), (a2, r2) in itertools.combinations(branches, 2):
        inst = Instance(Pattern.TWO_I, (a1, a2), (r1, r2))
        if is_valid(fixture_kg, inst):
            brute.add(instance_hash(inst))
    emitted = {instance_hash(i) for i in enumerate_instances(fixture_kg, "2i")}
    assert emitted == brute
    for inst in ground(fixture_kg, "2i", 40, seed=5):
        assert answer_set(fixture_kg, inst).nodes


@pytest.mark.parametrize("pattern", ALL_PATTERNS, ids=str)
def test_oracle_equivalence(fixture_kg, pattern):
    triples = fixture_kg.triples()
    instances = enumerate_instances(fixture_kg, pattern)
    assert instances
    for inst in instances:
        gold = answer_set(fixture_kg, inst)
        if pattern is Pattern.COMPARE:
            assert gold.verdict == brute_force_verdict(triples, inst.anchors, inst.relations[0],
                                                       inst.values, inst.kind, fixture_kg.label)
        else:
            assert gold.nodes == brute_force_answers(triples, pattern.value, inst.anchors, inst.relations)


def test_monotone_containment(fixture_kg):
    def one(a, r):
        return answer_set(fixture_kg, Instance(Pattern.ONE_P, (a,), (r,))).nodes

    for inst in enumerate_instances(fixture_kg, "2i"):
        ans = answer_set(fixture_kg, inst).nodes
        for a, r in inst.branches:
            assert ans <= one(a, r)
    for inst in enumerate_instances(fixture_kg, "2u")[:300]:
        ans = answer_set(fixture_kg, inst).nodes
        for a, r in inst.branches:
            assert ans >= one(a, r)
    for inst in enumerate_instances(fixture_kg, "3i"):
        ans = answer_set(fixture_kg, inst).nodes
        for (a1, r1), (a2, r2) in itertools.combinations(inst.branches, 2):
            pair = Instance(Pattern.TWO_I, (a1, a2), (r1, r2))
            assert ans <= answer_set(fixture_kg, pair).nodes


def test_answers_are_labels(tmp_path):
    kg = KnowledgeGraph.from_triples([("Q1", "P1", "Q2")], {"Q1": "Alpha", "Q2": "Beta", "P1": "knows"})
    assert answer_set(kg, Instance(Pattern.ONE_P, ("Q1",), ("P1",))).answers == ("Beta",)


def test_instance_dict_round_trip_and_record(fixture_kg):
    for p in ALL_PATTERNS:
        for inst in ground(fixture_kg, p, 5, seed=2):
            assert Instance.from_dict(inst.to_dict()) == inst
            row = instance_record(fixture_kg, inst)
            assert row["hash"] == instance_hash(inst)
            assert row["answers"] == answer_set(fixture_kg, inst).as_list()


def test_canonical_hash_ignores_branch_order():
    a = Instance(Pattern.TWO_I, ("x", "y"), ("r", "s"))
    b = Instance(Pattern.TWO_I, ("y", "x"), ("s", "r"))
    assert instance_hash(a) == instance_hash(b)
    c = Instance(Pattern.TWO_P, ("x",), ("r", "s"))
    d = Instance(Pattern.TWO_P, ("x",), ("s", "r"))
    assert instance_hash(c) != instance_hash(d)


def test_cap_on_answer_set_size():
    triples = [("hub", "r", f"t{i}") for i in range(150)]
    kg = KnowledgeGraph.from_triples(triples)
    inst = Instance(Pattern.ONE_P, ("hub",), ("r",))
    assert not is_valid(kg, inst)
    assert is_valid(kg, inst, max_answers=200)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_compare_verdict_consistency(v1, v2):
    a, b = Decimal(v1), Decimal(v2)
    assert compare_verdict(a, b, "same") == ("Yes" if a == b else "No")
    if a != b:
        lesser = compare_verdict(a, b, "lesser", "e1", "e2")
        greater = compare_verdict(a, b, "greater", "e1", "e2")
        assert {lesser, greater} == {"e1", "e2"}
        assert (lesser == "e1") == (a < b)
