"""Scoring math, LLM-backed helpers, and token budgeting."""

import math
import random

import pytest

from memengine.core import MemoryRecord
from memengine.errors import (
    DimensionMismatchError,
    EmptyListError,
    NegativeElapsedError,
    NonpositiveStrengthError,
    ZeroVectorError,
)
from memengine.functions import (
    ScoreWeights,
    combine,
    cosine,
    count_tokens,
    judge_importance,
    minmax_normalize,
    recency_score,
    reflect,
    retention,
    summarize,
    trigger_decision,
    truncate_tokens,
    utilize,
)
from memengine.providers import ScriptedLLM


class TestCosine:
    def test_self_similarity_is_one(self):
        assert cosine([2.0, -1.0, 0.5], [2.0, -1.0, 0.5]) == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_known_value(self):
        # 32 / sqrt(14 * 77), evaluated independently
        expected = 32 / math.sqrt(14 * 77)
        assert expected == pytest.approx(0.9746318461970762, abs=1e-12)
        assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine([1.0], [1.0, 0.0])

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine([0.0, 0.0], [1.0, 0.0])

    def test_clamped_to_unit_interval(self):
        rng = random.Random(2)
        for _ in range(200):
            v = [rng.uniform(-1, 1) for _ in range(5)]
            if all(x == 0 for x in v):
                continue
            scaled = [3.7 * x for x in v]
            assert cosine(v, scaled) <= 1.0
            assert cosine(v, [-x for x in scaled]) >= -1.0


class TestRecency:
    def test_zero_elapsed_is_one(self):
        assert recency_score(0.0, 0.995) == 1.0

    def test_direct_evaluation(self):
        assert recency_score(100.0, 0.995) == pytest.approx(0.995 ** 100, abs=0)
        assert recency_score(100.0, 0.995) == pytest.approx(0.60577, abs=5e-6)

    def test_strictly_decreasing(self):
        rng = random.Random(1)
        for _ in range(1000):
            t1 = rng.uniform(0, 500)
            t2 = t1 + rng.uniform(0.01, 100)
            assert recency_score(t1, 0.995) > recency_score(t2, 0.995)

    def test_negative_elapsed_rejected(self):
        with pytest.raises(NegativeElapsedError):
            recency_score(-0.1, 0.995)


class TestRetention:
    def test_zero_elapsed_is_one(self):
        assert retention(0.0, 1.0) == 1.0

    def test_one_day_unit_strength(self):
        assert retention(24.0, 1.0) == pytest.approx(math.exp(-1), abs=0)

    def test_monotone_in_strength(self):
        for dt in (1.0, 24.0, 100.0):
            assert retention(dt, 2.0) > retention(dt, 1.0)

    def test_nonpositive_strength_rejected(self):
        with pytest.raises(NonpositiveStrengthError):
            retention(1.0, 0.0)

    def test_negative_elapsed_rejected(self):
        with pytest.raises(NegativeElapsedError):
            retention(-1.0, 1.0)


class TestMinmaxNormalize:
    def test_all_equal_maps_to_ones(self):
        assert minmax_normalize([2.0, 2.0, 2.0]) == [1.0, 1.0, 1.0]

    def test_affine_map(self):
        assert minmax_normalize([0.0, 5.0, 10.0]) == [0.0, 0.5, 1.0]

    def test_empty_rejected(self):
        with pytest.raises(EmptyListError):
            minmax_normalize([])

    def test_ranking_preserved_on_random_lists(self):
        rng = random.Random(3)
        for _ in range(50):
            values = [rng.uniform(-5, 5) for _ in range(rng.randrange(2, 30))]
            normalized = minmax_normalize(values)
            assert all(0.0 <= v <= 1.0 for v in normalized)
            order = sorted(range(len(values)), key=values.__getitem__)
            n_order = sorted(range(len(values)), key=normalized.__getitem__)
            assert [values[i] for i in order] == sorted(values)
            assert normalized.index(max(normalized)) == values.index(max(values))
            assert n_order == order or sorted(values) != values  # order-stable


class TestCombine:
    def test_unit_case(self):
        w = ScoreWeights(1, 1, 1)
        assert combine(1.0, 1.0, 1.0, w) == 3.0

    def test_arithmetic(self):
        w = ScoreWeights(1, 1, 1)
        assert combine(0.5, 0.2, 0.9, w) == pytest.approx(1.6, abs=1e-12)

    def test_relevance_only_projects(self):
        w = ScoreWeights(1, 0, 0)
        triples = [(0.9, 0.1, 0.5), (0.3, 0.9, 0.9), (0.5, 0.0, 0.0)]
        totals = [combine(*t, w) for t in triples]
        assert totals == [t[0] for t in triples]

    def test_monotone_in_each_component(self):
        w = ScoreWeights(0.5, 1.5, 2.0)
        base = combine(0.4, 0.4, 0.4, w)
        assert combine(0.5, 0.4, 0.4, w) >= base
        assert combine(0.4, 0.5, 0.4, w) >= base
        assert combine(0.4, 0.4, 0.5, w) >= base

    def test_common_weight_scale_preserves_ranking(self):
        rng = random.Random(11)
        for _ in range(30):
            triples = [(rng.random(), rng.random(), rng.random())
                       for _ in range(20)]
            w1 = ScoreWeights(0.3, 1.1, 0.6)
            scale = rng.uniform(0.1, 10)
            w2 = ScoreWeights(0.3 * scale, 1.1 * scale, 0.6 * scale)
            rank1 = sorted(range(20), key=lambda i: (-combine(*triples[i], w1), i))
            rank2 = sorted(range(20), key=lambda i: (-combine(*triples[i], w2), i))
            assert rank1 == rank2

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            ScoreWeights(-0.1, 1, 1)
        with pytest.raises(ValueError):
            ScoreWeights(0, 0, 0)
        with pytest.raises(ValueError):
            ScoreWeights(1, 1, 1, recency_decay=0.0)


JUDGE_TEMPLATE = "Rate the importance.\n\nObservation: {observation}\n\nRating:"


class TestJudge:
    def test_scripted_round_trip(self):
        llm = ScriptedLLM([("Rate the importance", "7")])
        result = judge_importance("saw a fox", llm, JUDGE_TEMPLATE)
        assert (result.value, result.degraded) == (7, False)

    def test_clamped_to_ten(self):
        llm = ScriptedLLM([("Rate the importance", "importance: 12")])
        assert judge_importance("x", llm, JUDGE_TEMPLATE).value == 10

    def test_unparseable_twice_degrades_to_default(self):
        calls = []

        class CountingLLM:
            def generate(self, prompt, params=None):
                calls.append(prompt)
                return "unsure"

        result = judge_importance("x", CountingLLM(), JUDGE_TEMPLATE,
                                  default_importance=5)
        assert (result.value, result.degraded) == (5, True)
        assert len(calls) == 2  # retried exactly once

    def test_negative_clamped_to_zero(self):
        llm = ScriptedLLM([("Rate the importance", "-3")])
        assert judge_importance("x", llm, JUDGE_TEMPLATE).value == 0


SUM_TEMPLATE = "Summarize.\n\n{texts}\n\nSummary:"


class TestSummarize:
    def test_scripted_passthrough(self):
        llm = ScriptedLLM([("Summarize", "SUM")])
        assert summarize(["a", "b"], 100, llm, SUM_TEMPLATE) == "SUM"

    def test_overlong_result_truncated_to_budget(self):
        long_reply = "word " * 100
        llm = ScriptedLLM([("Summarize", long_reply)])
        out = summarize(["a"], 10, llm, SUM_TEMPLATE)
        assert count_tokens(out) <= 10

    def test_prompt_contains_each_input(self):
        seen = {}

        class CapturingLLM:
            def generate(self, prompt, params=None):
                seen["prompt"] = prompt
                return "ok"

        summarize(["first note", "second note"], 50, CapturingLLM(), SUM_TEMPLATE)
        assert "first note" in seen["prompt"]
        assert "second note" in seen["prompt"]

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyListError):
            summarize([], 10, ScriptedLLM([]), SUM_TEMPLATE)


Q_TEMPLATE = "Write questions.\n\n{records}\n\nQuestions:"
I_TEMPLATE = "Write insights.\n\n{records}\n\n{questions}\n\nInsights:"


def _records(*texts):
    return [MemoryRecord(id=i, text=t) for i, t in enumerate(texts)]


class TestReflect:
    def test_line_parsing(self):
        llm = ScriptedLLM([("questions", "Q1"), ("insights", "I1\nI2")])
        out = reflect(_records("a", "b"), 3, 5, llm, Q_TEMPLATE, I_TEMPLATE)
        assert out == ["I1", "I2"]

    def test_insight_cap(self):
        llm = ScriptedLLM([("questions", "Q1"), ("insights", "I1\nI2\nI3")])
        out = reflect(_records("a"), 3, 1, llm, Q_TEMPLATE, I_TEMPLATE)
        assert out == ["I1"]

    def test_blank_replies_give_empty_list(self):
        llm = ScriptedLLM([("questions", "\n \n"), ("insights", "  \n")])
        assert reflect(_records("a"), 3, 5, llm, Q_TEMPLATE, I_TEMPLATE) == []


T_TEMPLATE = "Recall needed?\n\nQuery: {query}\n\nAnswer YES or NO:"


class TestTrigger:
    @pytest.mark.parametrize("reply,expected", [
        ("YES", True),
        ("no, skip", False),
        (" Yes.", True),
        ("yes", True),
        ("NO", False),
        ("", False),
    ])
    def test_replies(self, reply, expected):
        llm = ScriptedLLM([("Recall needed", reply)])
        assert trigger_decision("q", llm, T_TEMPLATE) is expected

    def test_provider_error_fails_open(self):
        assert trigger_decision("q", ScriptedLLM([]), T_TEMPLATE) is True


class TestTokens:
    def test_empty_counts_zero(self):
        assert count_tokens("") == 0

    def test_ceil_rule(self):
        assert count_tokens("12345678") == 2
        assert count_tokens("123456789") == 3
        assert count_tokens("a") == 1

    def test_within_limit_unchanged(self):
        text = "keep   this \t spacing"
        assert truncate_tokens(text, 100) == text

    def test_drops_whole_words_from_tail_for_keep_head(self):
        text = "aaaa bbbb cccc dddd"
        out = truncate_tokens(text, 3, keep="head")
        assert out == "aaaa bbbb"
        assert count_tokens(out) <= 3

    def test_drops_whole_words_from_head_for_keep_tail(self):
        text = "aaaa bbbb cccc dddd"
        out = truncate_tokens(text, 3, keep="tail")
        assert out == "cccc dddd"

    def test_always_within_limit_and_idempotent(self):
        rng = random.Random(17)
        for _ in range(200):
            words = ["w" * rng.randrange(1, 15) for _ in range(rng.randrange(0, 30))]
            text = " ".join(words)
            limit = rng.randrange(0, 20)
            keep = rng.choice(["head", "tail"])
            once = truncate_tokens(text, limit, keep=keep)
            assert count_tokens(once) <= limit
            assert truncate_tokens(once, limit, keep=keep) == once

    def test_zero_limit_empties_text(self):
        assert truncate_tokens("something here", 0) == ""


class TestUtilize:
    def test_single_section_format(self):
        assert utilize([("T", "B")], None) == "## T\nB"

    def test_zero_sections_render_empty(self):
        assert utilize([], None) == ""

    def test_sections_joined_by_blank_lines_in_order(self):
        out = utilize([("A", "a"), ("B", "b")], None)
        assert out == "## A\na\n\n## B\nb"

    def test_empty_body_keeps_bare_title(self):
        assert utilize([("Empty", ""), ("Full", "x")], None) == "## Empty\n\n## Full\nx"

    def test_second_body_truncated_first_when_over_budget(self):
        first_body = "aaaa " * 10
        second_body = "bbbb " * 10
        full = utilize([("One", first_body.strip()), ("Two", second_body.strip())], None)
        budget = count_tokens(full) - 3
        out = utilize([("One", first_body.strip()), ("Two", second_body.strip())], budget)
        assert count_tokens(out) <= budget
        assert first_body.strip() in out          # first section untouched
        assert "## Two" in out                    # second still titled
        assert second_body.strip() not in out     # but its body shrank

    def test_budget_always_respected(self):
        rng = random.Random(23)
        for _ in range(100):
            sections = [
                (f"S{i}", " ".join("w" * rng.randrange(1, 9)
                                   for _ in range(rng.randrange(0, 12))))
                for i in range(rng.randrange(1, 5))
            ]
            budget = rng.randrange(0, 40)
            assert count_tokens(utilize(sections, budget)) <= budget

    def test_emptied_body_drops_its_section(self):
        out = utilize([("Head", "intro words here"), ("Tail", "xxxxxxxxxxxxxxxxxxxx")], 6)
        assert "## Tail" not in out
        assert count_tokens(out) <= 6
