"""Low-level memory functions: scoring math, LLM-backed helpers, token fitting.

These are the primitives the operation layer composes. Everything here is a
pure function of its arguments (providers included), so the whole layer is
safe for concurrent use.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .config import render_prompt
from .errors import (
    DimensionMismatchError,
    EmptyListError,
    NegativeElapsedError,
    NonpositiveStrengthError,
    ProviderError,
    ZeroVectorError,
)

HOURS_PER_DAY = 24.0

_INT_RE = re.compile(r"-?\d+")
_EDGE_PUNCT_RE = re.compile(r"^\W+|\W+$", re.UNICODE)


@dataclass(frozen=True)
class ScoreWeights:
    """Weights for the relevance/recency/importance combination."""

    w_rel: float = 1.0
    w_rec: float = 1.0
    w_imp: float = 1.0
    recency_decay: float = 0.995  # per hour

    def __post_init__(self):
        if min(self.w_rel, self.w_rec, self.w_imp) < 0:
            raise ValueError("weights must be >= 0")
        if self.w_rel + self.w_rec + self.w_imp <= 0:
            raise ValueError("at least one weight must be positive")
        if not 0 < self.recency_decay <= 1:
            raise ValueError("recency_decay must be in (0, 1]")


def cosine(u, v):
    """Cosine similarity, clamped to [-1, 1]."""
    if len(u) != len(v):
        raise DimensionMismatchError(f"dimensions differ: {len(u)} vs {len(v)}")
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine undefined for zero vector")
    value = sum(a * b for a, b in zip(u, v)) / (nu * nv)
    return max(-1.0, min(1.0, value))


def recency_score(dt_hours, decay):
    """Exponential recency: decay**dt_hours, in (0, 1]."""
    if dt_hours < 0:
        raise NegativeElapsedError("elapsed hours must be >= 0")
    return decay ** dt_hours

def retention(dt_hours, strength):
    """Forgetting-curve retention exp(-dt / (24 * strength)), in (0, 1].

    ``strength`` is a dimensionless multiple of 24 hours; recalling a record
    raises it, flattening the curve.
    """
    if strength <= 0:
        raise NonpositiveStrengthError("strength must be > 0")
    if dt_hours < 0:
        raise NegativeElapsedError("elapsed hours must be >= 0")
    return math.exp(-dt_hours / (HOURS_PER_DAY * strength))


def minmax_normalize(scores):
    """Map scores affinely onto [0, 1]; an all-equal list maps to all 1.0."""
    if not scores:
        raise EmptyListError("cannot normalize an empty list")
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [1.0] * len(scores)
    span = hi - lo
    return [(s - lo) / span for s in scores]


def combine(rel, rec, imp, weights: ScoreWeights):
    return weights.w_rel * rel + weights.w_rec * rec + weights.w_imp * imp


# -- LLM-backed helpers ---------------------------------------------------

@dataclass
class JudgeResult:
    value: int
    degraded: bool = False


def judge_importance(text, llm, template, default_importance=5):
    """Score a text's importance 0..10 via the judge prompt.

    The first integer token of the reply is clamped into range. An
    unparseable reply is retried once, then falls back to the default
    with the ``degraded`` flag set.
    """
    prompt = render_prompt(template, {"observation": text})
    for _ in range(2):
        reply = llm.generate(prompt)
        match = _INT_RE.search(reply)
        if match:
            return JudgeResult(max(0, min(10, int(match.group()))))
    return JudgeResult(default_importance, degraded=True)


def summarize(texts, max_tokens, llm, template, chars_per_token=4):
    """Summarize texts in one LLM call; overlong output loses its tail."""
    if not texts:
        raise EmptyListError("nothing to summarize")
    prompt = render_prompt(template, {"texts": "\n".join(texts)})
    out = llm.generate(prompt)
    if count_tokens(out, chars_per_token) > max_tokens:
        out = truncate_tokens(out, max_tokens, keep="head",
                              chars_per_token=chars_per_token)
    return out


def reflect(records, n_questions, n_insights, llm, question_template,
            insight_template):
    """Two-pass reflection: generate questions, then insight lines."""
    if not records:
        raise EmptyListError("nothing to reflect on")
    listing = "\n".join(f"- {r.text}" for r in records)
    q_reply = llm.generate(render_prompt(
        question_template,
        {"records": listing, "n_questions": str(n_questions)}))
    questions = _nonempty_lines(q_reply)[:n_questions]
    i_reply = llm.generate(render_prompt(
        insight_template,
        {"records": listing, "questions": "\n".join(questions),
         "n_insights": str(n_insights)}))
    return _nonempty_lines(i_reply)[:n_insights]


def trigger_decision(context_text, llm, template):
    """Ask the LLM whether recall is needed; provider failure means yes.

    Failing open costs a redundant recall; failing closed would silently
    drop memory mid-dialogue.
    """
    prompt = render_prompt(template, {"query": context_text})
    try:
        reply = llm.generate(prompt)
    except ProviderError:
        return True
    tokens = reply.split()
    if not tokens:
        return False
    head = _EDGE_PUNCT_RE.sub("", tokens[0])
    return head.upper() == "YES"


def _nonempty_lines(reply):
    return [line.strip() for line in reply.splitlines() if line.strip()]


# -- token budgeting ------------------------------------------------------

def count_tokens(text, chars_per_token=4):
    """Approximate token count: ceil over the character count."""
    if not text:
        return 0
    return -(-len(text) // chars_per_token)


def truncate_tokens(text, limit, keep="head", chars_per_token=4):
    """Drop whole words from the non-kept end until the count fits.

    Text already within the limit is returned unchanged; otherwise the kept
    words are re-joined with single spaces, which makes truncation
    idempotent.
    """
    if keep not in ("head", "tail"):
        raise ValueError("keep must be 'head' or 'tail'")
    if limit < 0:
        raise ValueError("limit must be >= 0")
    if count_tokens(text, chars_per_token) <= limit:
        return text
    words = text.split()
    if keep == "tail":
        words.reverse()
    # prefix_chars[m] = joined length of the first m kept words
    joined = 0
    best = 0
    for m, word in enumerate(words, start=1):
        joined += len(word) + (1 if m > 1 else 0)
        if -(-joined // chars_per_token) <= limit:
            best = m
        else:
            break
    kept = words[:best]
    if keep == "tail":
        kept.reverse()
    return " ".join(kept)


def utilize(sections, token_budget=None, chars_per_token=4):
    """Format titled sections into one context string under a token budget.

    Sections render as ``## title`` blocks joined by blank lines. When over
    budget, bodies are tail-truncated starting from the last section; a body
    that truncation would empty entirely takes its title with it. Sections
    whose body is empty on input keep a bare title line.
    """
    pairs = [(title, body) for title, body in sections]

    def render(items):
        blocks = [f"## {t}\n{b}" if b else f"## {t}" for t, b in items]
        return "\n\n".join(blocks)

    out = render(pairs)
    if token_budget is None or count_tokens(out, chars_per_token) <= token_budget:
        return out

    for i in range(len(pairs) - 1, -1, -1):
        title, body = pairs[i]
        without = pairs[:i] + pairs[i + 1:]
        if count_tokens(render(without), chars_per_token) > token_budget:
            pairs = without
            continue
        if body:
            fitted = _fit_body(pairs, i, token_budget, chars_per_token, render)
            if fitted is not None:
                pairs[i] = (title, fitted)
                return render(pairs)
        return render(without)
    return render(pairs)


def _fit_body(pairs, index, budget, chars_per_token, render):
    """Largest word-truncated body at ``index`` that keeps the render in
    budget, or None if even a single word overflows."""
    title, body = pairs[index]
    lo, hi = 1, count_tokens(body, chars_per_token)
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        candidate = truncate_tokens(body, mid, keep="head",
                                    chars_per_token=chars_per_token)
        trial = pairs[:index] + [(title, candidate)] + pairs[index + 1:]
        if candidate and count_tokens(render(trial), chars_per_token) <= budget:
            best = candidate
            lo = mid + 1
        else:
            hi = mid - 1
    return best
