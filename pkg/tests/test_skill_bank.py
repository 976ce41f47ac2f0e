import shutil
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skill_anneal.config import packaged_skills_dir
from skill_anneal.mini_world import CATEGORIES, Action, enumerate_tasks, reset
from skill_anneal.skill_bank import (
    GENERAL,
    EmptyBank,
    EmptyRules,
    MissingFrontMatter,
    RuleSyntaxError,
    UnknownAction,
    UnknownId,
    UnknownPredicate,
    check_bank,
    first_match,
    load_bank,
    parse_rule,
    parse_skill_file,
    rules_for,
    serialize_skill_file,
)

CLEAN_ONE_RULE = """---
task: miniworld
category: clean
---
# Wash it

## Rules
when holding(target) and at(sink) then use(sink)
"""


def test_parse_minimal_file():
    f = parse_skill_file(CLEAN_ONE_RULE, "skills/miniworld/clean.md")
    assert f.category == "clean"
    assert f.task == "miniworld"
    assert f.title == "Wash it"
    assert len(f.rules) == 1
    assert f.rules[0].action == Action("use", "sink")


def test_missing_front_matter():
    with pytest.raises(MissingFrontMatter):
        parse_skill_file(CLEAN_ONE_RULE.split("\n", 1)[1], "x.md")


def test_unknown_predicate_names_line():
    text = CLEAN_ONE_RULE.replace("holding(target) and at(sink)", "flying(target)")
    with pytest.raises(UnknownPredicate) as err:
        parse_skill_file(text, "x.md")
    assert "flying" in str(err.value)
    assert err.value.line == 8


def test_unknown_action():
    with pytest.raises(UnknownAction):
        parse_rule("when at(sink) then dance(sink)")


def test_wrong_arity_rejected():
    with pytest.raises(RuleSyntaxError):
        parse_rule("when state(target) then use(sink)")


def test_empty_rules():
    text = CLEAN_ONE_RULE.rsplit("\n", 2)[0] + "\n"
    with pytest.raises(EmptyRules):
        parse_skill_file(text, "x.md")


def test_malformed_rule():
    with pytest.raises(RuleSyntaxError):
        parse_rule("if at(sink) use(sink)")


def test_negation_parses():
    rule = parse_rule("when not holding(any) then goto(kitchen)")
    assert rule.condition[0].negated
    assert rule.condition[0].predicate == "holding"


def test_packaged_bank_order(bank):
    assert bank.N == 6
    assert tuple(bank.ids) == (1, 2, 3, 4, 5, 6)
    # lexicographic by path
    assert [f.category for f in bank.files] == sorted(f.category for f in bank.files)


def test_load_twice_identical():
    a, b = load_bank(packaged_skills_dir()), load_bank(packaged_skills_dir())
    assert [(f.id, f.path, f.rules) for f in a.files] == [(f.id, f.path, f.rules) for f in b.files]


def test_empty_directory(tmp_path):
    with pytest.raises(EmptyBank):
        load_bank(tmp_path)


def test_parse_error_carries_path(tmp_path):
    (tmp_path / "miniworld").mkdir()
    (tmp_path / "miniworld" / "bad.md").write_text(CLEAN_ONE_RULE.replace("holding(target)", "flying(target)"))
    with pytest.raises(UnknownPredicate) as err:
        load_bank(tmp_path)
    assert "bad.md" in str(err.value.path)


def test_copied_directory_gives_same_bank(tmp_path):
    dst = tmp_path / "skills"
    shutil.copytree(packaged_skills_dir(), dst)
    a, b = load_bank(packaged_skills_dir()), load_bank(dst)
    assert [(f.id, f.category, f.rules) for f in a.files] == [(f.id, f.category, f.rules) for f in b.files]


def test_packaged_bank_matches_layout(bank, layout):
    check_bank(bank, layout)


def _by_cat(bank):
    return {f.category: f.id for f in bank.files}


def test_rules_for_identity(bank):
    k = _by_cat(bank)["clean"]
    assert rules_for(bank, {k}, "clean") == list(bank.get(k).rules)


def test_rules_for_empty(bank):
    assert rules_for(bank, set(), "clean") == []


def test_rules_for_unknown_id(bank):
    with pytest.raises(UnknownId):
        rules_for(bank, {99}, "clean")


def test_rules_for_matching_category_first(bank):
    ids = _by_cat(bank)
    rules = rules_for(bank, set(bank.ids), "pick")
    assert rules[: len(bank.get(ids["pick"]).rules)] == list(bank.get(ids["pick"]).rules)


def test_wrong_category_rules_never_fire(bank, layout):
    heat = rules_for(bank, {_by_cat(bank)["heat"]}, "clean")
    assert heat
    for task in enumerate_tasks(layout, "clean"):
        for seed in range(5):
            _, obs = reset(layout, task, seed)
            assert first_match(heat, obs) is None


def test_hint_plan_solves_every_category(bank, layout):
    from skill_anneal.mini_world import step

    for cat in CATEGORIES:
        rules = rules_for(bank, set(bank.ids), cat)
        for task in enumerate_tasks(layout, cat):
            state, obs = reset(layout, task, 3)
            done = success = False
            while not done:
                state, obs, done, success = step(state, first_match(rules, obs))
            assert success, task.instruction


def test_general_category_constant():
    text = CLEAN_ONE_RULE.replace("category: clean", f"category: {GENERAL}")
    assert parse_skill_file(text, "g.md").category == GENERAL


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_round_trip(bank, data):
    f = data.draw(st.sampled_from(bank.files))
    keep = data.draw(st.integers(1, len(f.rules)))
    sub = parse_skill_file(serialize_skill_file(f), f.path, f.id)
    trimmed = type(f)(f.id, f.task, f.category, f.title, f.rules[:keep], f.path)
    again = parse_skill_file(serialize_skill_file(trimmed), f.path, f.id)
    assert (sub.task, sub.category, sub.title, sub.rules) == (f.task, f.category, f.title, f.rules)
    assert again.rules == f.rules[:keep]


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_rules_for_subset_is_subsequence(bank, data):
    big = data.draw(st.sets(st.sampled_from(bank.ids)))
    small = data.draw(st.sets(st.sampled_from(sorted(big)))) if big else set()
    cat = data.draw(st.sampled_from(CATEGORIES))
    a, b = rules_for(bank, small, cat), rules_for(bank, big, cat)
    it = iter(b)
    assert all(any(r is x for x in it) for r in a)
