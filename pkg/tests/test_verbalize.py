from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgplan.endpoints import FunctionEndpoint, RetryPolicy
from kgplan.kg import KnowledgeGraph
from kgplan.patterns import ALL_PATTERNS, ARITY, Instance, Pattern, answer_set, ground
from kgplan.verbalize import (
    VerbalizationError, VerbalizedInstance, check_verbalized, load_prompts, normalize_placeholders,
    parse_verbalization_output, render_verbalization_prompt, sampling_report, serialize_instance,
    verbalize, verbalize_batch, verbalize_template,
)

CHONGQING_REPLY = """Q1: Which city or administrative body that is twinned with Chongqing?
Q1_Answer: A1
Q2: What is the country of {A1}?
Q2_Answer: A2
Final Question: Which country has a city or administrative body that is twinned with Chongqing?"""

NO_RETRY = RetryPolicy(retries=0, backoff=0)


@pytest.fixture(scope="module")
def chongqing_kg():
    return KnowledgeGraph.from_triples([
        ("Chongqing", "twinned administrative body", "Toronto"),
        ("Toronto", "country of citizenship", "Canada"),
        ("Booker T. Jones", "ethnic group", "African Americans"),
    ])


@pytest.fixture(scope="module")
def prompts():
    return load_prompts()


def test_prompt_assets_exist_for_every_pattern(prompts):
    assert set(prompts) == set(ALL_PATTERNS)
    for pattern, text in prompts.items():
        assert "### Example 1:" in text
        assert "Natural Language Question:" in text if pattern is Pattern.ONE_P else "Final Question:" in text
        assert text.rstrip().endswith("Subgraph Query:")


def test_two_hop_prompt_ends_with_the_query(chongqing_kg, prompts):
    inst = Instance(Pattern.TWO_P, ("Chongqing",), ("twinned administrative body", "country of citizenship"))
    prompt = render_verbalization_prompt(inst, chongqing_kg, prompts)
    assert prompt.endswith("(Chongqing, (twinned administrative body, country of citizenship))")
    assert prompt.startswith(prompts[Pattern.TWO_P].rstrip())
    assert prompt == render_verbalization_prompt(inst, chongqing_kg, prompts)


def test_one_hop_serialization(chongqing_kg):
    inst = Instance(Pattern.ONE_P, ("Booker T. Jones",), ("ethnic group",))
    assert serialize_instance(inst, chongqing_kg) == "(Booker T. Jones, (ethnic group,))"


def test_set_serializations(fixture_kg):
    i2 = Instance(Pattern.TWO_I, ("Russia", "China"), ("shares border with", "shares border with"))
    assert serialize_instance(i2, fixture_kg) == (
        "(Russia, (shares border with,)) Intersection (China, (shares border with,))")
    ip = Instance(Pattern.IP, ("Russia", "China"), ("shares border with", "shares border with", "capital"))
    assert serialize_instance(ip, fixture_kg).endswith(" Projection capital")
    u = Instance(Pattern.TWO_U, ("Russia", "Canada"), ("capital", "capital"))
    assert " Union " in serialize_instance(u, fixture_kg)


def test_unknown_entity_fails_before_any_call(prompts):
    kg = KnowledgeGraph.from_triples([("a", "r", "b")])
    calls = []
    client = FunctionEndpoint(lambda p: calls.append(p) or "")
    with pytest.raises(VerbalizationError):
        verbalize(Instance(Pattern.ONE_P, ("zzz",), ("r",)), kg, client, prompts)
    assert calls == []


def test_parse_two_hop_reply_with_chatter():
    subs, final = parse_verbalization_output("Sure, here it is.\n" + CHONGQING_REPLY + "\nThanks!", "2p")
    assert subs == ("Which city or administrative body that is twinned with Chongqing?",
                    "What is the country of {A1}?")
    assert final == "Which country has a city or administrative body that is twinned with Chongqing?"


def test_parse_requires_final_question():
    with pytest.raises(VerbalizationError, match="Final Question"):
        parse_verbalization_output("Q1: a?\nQ2: b {A1}?", "2p")


def test_parse_checks_arity():
    with pytest.raises(VerbalizationError):
        parse_verbalization_output("Q1: a?\nFinal Question: c?", "2p")


def test_parse_accepts_one_hop_natural_language_line():
    subs, final = parse_verbalization_output(
        "Natural Language Question: What is the ethnic group of Booker T. Jones?", "1p")
    assert subs == ("What is the ethnic group of Booker T. Jones?",)
    assert final == subs[0]


def test_parse_ignores_pi_final_answer_lines():
    text = ("Q1: a?\nQ1_Answer: A1\nQ2: b of A1?\nQ2_Answer: A2\nQ3: c?\nQ3_Answer: A3\n"
            "Final Answer: A2 Intersection A3\nFinal Question: d?")
    subs, final = parse_verbalization_output(text, "pi")
    assert subs[1] == "b of {A1}?"
    assert final == "d?"


def test_placeholder_normalization():
    assert normalize_placeholders("What is the country of A1?") == "What is the country of {A1}?"
    assert normalize_placeholders("Who leads {Inter_A}?") == "Who leads {Inter_A}?"
    assert normalize_placeholders("A10 and XA1") == "A10 and XA1"


def test_verbalize_with_echo_stub(chongqing_kg, prompts):
    inst = Instance(Pattern.TWO_P, ("Chongqing",), ("twinned administrative body", "country of citizenship"))
    out = verbalize(inst, chongqing_kg, FunctionEndpoint(lambda p: CHONGQING_REPLY), prompts)
    assert out.sub_questions[1] == "What is the country of {A1}?"
    assert out.complex_question.startswith("Which country has")
    assert out.answers == ("Canada",)


def test_empty_reply_surfaces_error_with_reference(chongqing_kg, prompts):
    inst = Instance(Pattern.ONE_P, ("Booker T. Jones",), ("ethnic group",))
    with pytest.raises(VerbalizationError, match="instance [0-9a-f]{16}"):
        verbalize(inst, chongqing_kg, FunctionEndpoint(lambda p: ""), prompts,
                  parse_retries=0, retry=NO_RETRY)


def test_endpoint_failure_is_reported(chongqing_kg, prompts):
    def boom(_):
        raise ConnectionError("down")

    inst = Instance(Pattern.ONE_P, ("Booker T. Jones",), ("ethnic group",))
    with pytest.raises(VerbalizationError, match="down"):
        verbalize(inst, chongqing_kg, FunctionEndpoint(boom), prompts, retry=NO_RETRY)


def test_parse_retry_then_success(chongqing_kg, prompts):
    replies = iter(["garbage", CHONGQING_REPLY])
    inst = Instance(Pattern.TWO_P, ("Chongqing",), ("twinned administrative body", "country of citizenship"))
    out = verbalize(inst, chongqing_kg, FunctionEndpoint(lambda p: next(replies)), prompts, parse_retries=1)
    assert out.complex_question.startswith("Which country")


def test_fallbacks(chongqing_kg, prompts):
    inst = Instance(Pattern.ONE_P, ("Booker T. Jones",), ("ethnic group",))
    bad = FunctionEndpoint(lambda p: "nothing useful")
    assert verbalize(inst, chongqing_kg, bad, prompts, fallback="skip") is None
    out = verbalize(inst, chongqing_kg, bad, prompts, fallback="template")
    assert out.complex_question == "What is the ethnic group of Booker T. Jones?"


def test_template_one_hop(chongqing_kg):
    inst = Instance(Pattern.ONE_P, ("Booker T. Jones",), ("ethnic group",))
    assert verbalize_template(inst, chongqing_kg).sub_questions == (
        "What is the ethnic group of Booker T. Jones?",)


def test_template_two_hop_frames(fixture_kg):
    inst = Instance(Pattern.TWO_P, ("Inkheart",), ("cast member", "educated at"))
    v = verbalize_template(inst, fixture_kg)
    assert v.sub_questions == ("What is the cast member of Inkheart?", "What is the educated at of {A1}?")
    assert v.complex_question == "What is the educated at of the cast member of Inkheart?"


def test_template_union_with_identical_branches(fixture_kg):
    inst = Instance(Pattern.TWO_U, ("Russia", "Russia"), ("capital", "capital"))
    v = verbalize_template(inst, fixture_kg)
    assert v.complex_question.count("capital of Russia") == 2
    assert not check_verbalized(v.pattern, v.sub_questions, v.complex_question)


@pytest.mark.parametrize("pattern", ALL_PATTERNS, ids=str)
def test_template_round_trip_all_patterns(fixture_kg, pattern):
    for inst in ground(fixture_kg, pattern, 100, seed=4):
        v = verbalize_template(inst, fixture_kg)
        subs, final = parse_verbalization_output(v.to_text(), pattern)
        assert subs == v.sub_questions and final == v.complex_question
        assert len(subs) == ARITY[pattern]
        assert check_verbalized(pattern, subs, final) == []
        assert list(v.answers) == answer_set(fixture_kg, inst).as_list()
        assert VerbalizedInstance.from_dict(v.to_dict()) == v


def test_placeholder_discipline_violations():
    assert check_verbalized(Pattern.TWO_P, ["a?", "b?"], "c?")
    assert check_verbalized(Pattern.TWO_I, ["a {A1}?", "b?"], "c?")
    assert check_verbalized(Pattern.THREE_P, ["a?", "b {A1}?", "c {A1}?"], "d?")
    assert check_verbalized(Pattern.IP, ["a?", "b?", "c {Inter_A}?"], "d?") == []
    assert check_verbalized(Pattern.ONE_P, ["a?"], " ")


def test_batch_with_template_fallback(fixture_kg, prompts):
    insts = [i for p in ALL_PATTERNS for i in ground(fixture_kg, p, 6, seed=9)][:50]
    assert len(insts) == 50
    out = verbalize_batch(insts, fixture_kg, FunctionEndpoint(lambda p: "??"), prompts,
                          jobs=4, fallback="template", parse_retries=0)
    assert len(out) == 50
    assert [v.instance for v in out] == insts
    for v in out:
        assert len(v.sub_questions) == ARITY[v.pattern]


def test_sampling_report_is_deterministic(fixture_kg):
    items = verbalize_batch(ground(fixture_kg, "2p", 30, seed=1), fixture_kg)
    assert sampling_report(items, 5, seed=3) == sampling_report(items, 5, seed=3)
    assert sampling_report(items, 5, seed=3).count("Final Question:") == 5


_word = st.text(alphabet="abcdefghij ", min_size=1, max_size=12).map(str.strip).filter(bool)


@settings(max_examples=100, deadline=None)
@given(st.lists(_word, min_size=3, max_size=3), _word)
def test_parse_of_rendered_lines_is_identity(words, final):
    subs = (f"{words[0]}?", f"{words[1]} {{A1}}?", f"{words[2]} {{A2}}?")
    text = "\n".join(f"Q{i}: {q}" for i, q in enumerate(subs, 1)) + f"\nFinal Question: {final}?"
    assert parse_verbalization_output(text, "3p") == (subs, f"{final}?")
