"""Hierarchical configuration: full defaults per model kind, overlay merge,
prompt templates, and range validation.

A config is a tree with three levels mirroring the framework — ``model.*``,
``operations.<name>.*``, ``functions.<name>.*`` — plus prompt templates under
``functions.<name>``. Overlays replace scalars and recurse into subtrees, so
callers adjust only the keys they care about. Configs are immutable after
validation and freely shareable.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import (
    ConfigValidationError,
    FileIOError,
    ParseError,
    TemplateError,
    TypeClashError,
    UnknownKindError,
    UnresolvedPlaceholderError,
)

MODEL_KINDS = (
    "FUMemory", "STMemory", "LTMemory", "GAMemory", "MBMemory",
    "SCMemory", "MGMemory", "RFMemory", "MTMemory",
)

# -- prompt templates ------------------------------------------------------

JUDGE_PROMPT = (
    "Rate the importance of the following observation on a scale from 0 to "
    "10, where 0 is routine and 10 is life-changing. Reply with a single "
    "integer.\n\nObservation: {observation}\n\nRating:"
)

SUMMARIZER_PROMPT = (
    "Summarize the following notes into one short paragraph that keeps the "
    "essential facts.\n\nNotes:\n{texts}\n\nSummary:"
)

QUESTION_PROMPT = (
    "Given the notes below, write the {n_questions} most salient questions "
    "they raise, one per line.\n\nNotes:\n{records}\n\nQuestions:"
)

INSIGHT_PROMPT = (
    "Using the notes and open questions below, write up to {n_insights} "
    "higher-level insights, one per line.\n\nNotes:\n{records}\n\n"
    "Questions:\n{questions}\n\nInsights:"
)

TRIGGER_PROMPT = (
    "Decide whether answering the query below requires recalling stored "
    "memories. Answer YES or NO.\n\nQuery: {query}\n\nAnswer:"
)

TRAJECTORY_PROMPT = (
    "A task attempt ended in {outcome}. Review the attempt and write one "
    "short lesson that would improve the next attempt.\n\nTask: {task}\n"
    "Steps:\n{steps}\n\nLesson:"
)

# Variables each template may reference (validated at config time).
TEMPLATE_VARS = {
    "functions.judge.prompt": {"observation"},
    "functions.summarizer.prompt": {"texts"},
    "functions.reflector.question_prompt": {"records", "n_questions"},
    "functions.reflector.insight_prompt": {"records", "questions", "n_insights"},
    "functions.trigger.prompt": {"query"},
    "functions.reflector.trajectory_prompt": {"task", "steps", "outcome"},
}

# Offline default script: one canned reply per template family, matched by a
# marker substring unique to that template. First match wins.
DEFAULT_SCRIPT = (
    ("Rate the importance", "5"),
    ("Answer YES or NO", "YES"),
    ("most salient questions", "What pattern connects the recent notes?"),
    ("higher-level insights", "Recent notes describe a recurring routine."),
    ("ended in", "Check the failing step before repeating the approach."),
    ("Summarize the following notes",
     "The notes cover routine activity with a few notable events."),
)


def render_prompt(template, variables):
    """Substitute ``{name}`` placeholders; ``{{`` / ``}}`` escape literal
    braces. An unresolved placeholder is an error, never a passthrough."""
    out = []
    i, n = 0, len(template)
    while i < n:
        ch = template[i]
        if ch == "{":
            if template.startswith("{{", i):
                out.append("{")
                i += 2
                continue
            end = template.find("}", i + 1)
            if end < 0:
                raise TemplateError("unclosed placeholder")
            name = template[i + 1:end]
            if not name.isidentifier():
                raise TemplateError(f"bad placeholder name {name!r}")
            if name not in variables:
                raise UnresolvedPlaceholderError(name)
            out.append(str(variables[name]))
            i = end + 1
        elif ch == "}":
            if template.startswith("}}", i):
                out.append("}")
                i += 2
                continue
            raise TemplateError("stray '}'")
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def extract_placeholders(template):
    """Names referenced by a template; raises TemplateError on bad syntax."""
    names = set()
    i, n = 0, len(template)
    while i < n:
        ch = template[i]
        if ch == "{":
            if template.startswith("{{", i):
                i += 2
                continue
            end = template.find("}", i + 1)
            if end < 0:
                raise TemplateError("unclosed placeholder")
            name = template[i + 1:end]
            if not name.isidentifier():
                raise TemplateError(f"bad placeholder name {name!r}")
            names.add(name)
            i = end + 1
        elif ch == "}":
            if template.startswith("}}", i):
                i += 2
                continue
            raise TemplateError("stray '}'")
        else:
            i += 1
    return names


# -- default config trees --------------------------------------------------

def _llm_section():
    return {
        "kind": "scripted_llm",
        "endpoint": None,
        "model_name": None,
        "timeout_ms": 10000,
        "max_tokens": 256,
        "temperature": 0.0,
        "seed": 0,
        "script": [list(pair) for pair in DEFAULT_SCRIPT],
    }


def _encoder_section():
    return {
        "kind": "hashing_embedder",
        "endpoint": None,
        "dimension": 256,
        "timeout_ms": 10000,
    }


def _retrieval_section(w_rel, w_rec, w_imp):
    return {
        "w_rel": w_rel,
        "w_rec": w_rec,
        "w_imp": w_imp,
        "recency_decay": 0.995,
    }


def _truncation_section():
    return {"chars_per_token": 4}


def _default_tree(kind):
    if kind == "FUMemory":
        return {
            "model": {"top_k": 5, "token_limit": 4096},
            "functions": {"truncation": _truncation_section()},
        }
    if kind == "STMemory":
        return {
            "model": {"top_k": 5, "window": 10},
            "functions": {"truncation": _truncation_section()},
        }
    if kind == "LTMemory":
        return {
            "model": {"top_k": 5},
            "functions": {
                "encoder": _encoder_section(),
                "retrieval": _retrieval_section(1.0, 0.0, 0.0),
                "truncation": _truncation_section(),
            },
        }
    if kind == "GAMemory":
        return {
            "model": {"top_k": 5},
            "functions": {
                "encoder": _encoder_section(),
                "llm": _llm_section(),
                "retrieval": _retrieval_section(1.0, 1.0, 1.0),
                "truncation": _truncation_section(),
                "judge": {"prompt": JUDGE_PROMPT, "default_importance": 5},
                "reflector": {
                    "question_prompt": QUESTION_PROMPT,
                    "insight_prompt": INSIGHT_PROMPT,
                },
            },
            "operations": {
                "reflect": {
                    "threshold": 15,
                    "recent_count": 20,
                    "n_questions": 3,
                    "n_insights": 5,
                },
            },
        }
    if kind == "MBMemory":
        return {
            "model": {"top_k": 5},
            "functions": {
                "encoder": _encoder_section(),
                "llm": _llm_section(),
                "retrieval": _retrieval_section(1.0, 0.0, 0.0),
                "truncation": _truncation_section(),
                "summarizer": {"prompt": SUMMARIZER_PROMPT, "max_tokens": 128},
                "forget": {"threshold": 0.05, "initial_strength": 1.0},
            },
        }
    if kind == "SCMemory":
        return {
            "model": {"top_k": 5},
            "functions": {
                "encoder": _encoder_section(),
                "llm": _llm_section(),
                "retrieval": _retrieval_section(1.0, 0.0, 0.0),
                "truncation": _truncation_section(),
                "trigger": {"prompt": TRIGGER_PROMPT},
                "summarizer": {"prompt": SUMMARIZER_PROMPT, "max_tokens": 128},
            },
            "operations": {"recall": {"default_budget": 1024}},
        }
    if kind == "MGMemory":
        return {
            "model": {"top_k": 5},
            "functions": {
                "encoder": _encoder_section(),
                "llm": _llm_section(),
                "retrieval": _retrieval_section(1.0, 0.0, 0.0),
                "truncation": _truncation_section(),
                "summarizer": {"prompt": SUMMARIZER_PROMPT, "max_tokens": 128},
            },
            "operations": {"manage": {"main_budget": 2048, "warn_ratio": 0.7}},
        }
    if kind == "RFMemory":
        return {
            "model": {"top_k": 5},
            "functions": {
                "encoder": _encoder_section(),
                "llm": _llm_section(),
                "retrieval": _retrieval_section(1.0, 0.0, 0.0),
                "truncation": _truncation_section(),
                "reflector": {"trajectory_prompt": TRAJECTORY_PROMPT},
            },
            "operations": {"optimize": {"insight_cap": 16}},
        }
    if kind == "MTMemory":
        return {
            "model": {"top_k": 5},
            "functions": {
                "encoder": _encoder_section(),
                "llm": _llm_section(),
                "retrieval": _retrieval_section(1.0, 0.0, 0.0),
                "truncation": _truncation_section(),
                "summarizer": {"prompt": SUMMARIZER_PROMPT, "max_tokens": 128},
            },
            "operations": {"store": {"similarity_threshold": 0.5, "fanout": 5}},
        }
    raise UnknownKindError(f"unknown model kind {kind!r}")


# -- numeric range checks --------------------------------------------------

def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_int_min(minimum):
    def check(v):
        if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
            return f"must be an integer >= {minimum}"
        return None
    return check


def _check_number_min(minimum, exclusive=False):
    def check(v):
        if not _is_number(v):
            return "must be a number"
        if exclusive and v <= minimum:
            return f"must be > {minimum}"
        if not exclusive and v < minimum:
            return f"must be >= {minimum}"
        return None
    return check


def _check_open_unit(v):
    if not _is_number(v) or not 0 < v < 1:
        return "must be in (0, 1)"
    return None


def _check_half_open_unit(v):
    if not _is_number(v) or not 0 < v <= 1:
        return "must be in (0, 1]"
    return None


def _check_signed_unit(v):
    if not _is_number(v) or not -1 <= v <= 1:
        return "must be in [-1, 1]"
    return None


def _check_importance(v):
    if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v <= 10:
        return "must be an integer in [0, 10]"
    return None


def _check_script(v):
    if not isinstance(v, list):
        return "must be a list of [pattern, response] pairs"
    for entry in v:
        if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                or not all(isinstance(part, str) for part in entry)):
            return "every entry must be a [pattern, response] string pair"
    return None


VALIDATORS = {
    "model.top_k": _check_int_min(1),
    "model.window": _check_int_min(1),
    "model.token_limit": _check_int_min(1),
    "functions.encoder.dimension": _check_int_min(1),
    "functions.encoder.timeout_ms": _check_int_min(1),
    "functions.llm.timeout_ms": _check_int_min(1),
    "functions.llm.max_tokens": _check_int_min(1),
    "functions.llm.temperature": _check_number_min(0.0),
    "functions.llm.script": _check_script,
    "functions.retrieval.w_rel": _check_number_min(0.0),
    "functions.retrieval.w_rec": _check_number_min(0.0),
    "functions.retrieval.w_imp": _check_number_min(0.0),
    "functions.retrieval.recency_decay": _check_half_open_unit,
    "functions.truncation.chars_per_token": _check_int_min(1),
    "functions.judge.default_importance": _check_importance,
    "functions.summarizer.max_tokens": _check_int_min(1),
    "functions.forget.threshold": _check_open_unit,
    "functions.forget.initial_strength": _check_number_min(0.0, exclusive=True),
    "operations.reflect.threshold": _check_number_min(0.0, exclusive=True),
    "operations.reflect.recent_count": _check_int_min(1),
    "operations.reflect.n_questions": _check_int_min(1),
    "operations.reflect.n_insights": _check_int_min(1),
    "operations.recall.default_budget": _check_int_min(1),
    "operations.manage.main_budget": _check_int_min(1),
    "operations.manage.warn_ratio": _check_half_open_unit,
    "operations.store.similarity_threshold": _check_signed_unit,
    "operations.store.fanout": _check_int_min(2),
    "operations.optimize.insight_cap": _check_int_min(1),
}


class MemoryConfig:
    """An immutable, validated config tree for one model kind."""

    def __init__(self, kind, tree, warnings=()):
        self.kind = kind
        self._tree = copy.deepcopy(tree)
        self.warnings = list(warnings)

    def get(self, path, default=None):
        node = self._tree
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def require(self, path):
        sentinel = object()
        value = self.get(path, sentinel)
        if value is sentinel:
            raise ConfigValidationError(path, "missing required key")
        return value

    def to_dict(self):
        return copy.deepcopy(self._tree)


def default_config(kind):
    """The complete, validated default config for a model kind."""
    tree = _default_tree(kind)
    _validate_tree(kind, tree)
    return MemoryConfig(kind, tree)


def merge(base: MemoryConfig, overlay: dict, strict=False) -> MemoryConfig:
    """Deep-merge an overlay onto a base config.

    Overlay scalars/lists replace, subtrees recurse, absent keys keep base
    values. Paths outside the kind's schema are collected as warnings on the
    result (or rejected when ``strict``). A subtree/scalar clash raises.
    """
    schema_paths = _tree_paths(_default_tree(base.kind))
    warnings = []
    merged = _merge_trees(base.to_dict(), overlay, "", schema_paths, warnings)
    # report only the topmost unknown path, not every key underneath it
    warnings = [w for w in warnings
                if not any(w.startswith(o + ".") for o in warnings if o != w)]
    if strict and warnings:
        raise ConfigValidationError(warnings[0], "unknown key")
    _validate_tree(base.kind, merged)
    return MemoryConfig(base.kind, merged, warnings)


def _merge_trees(base, overlay, prefix, schema_paths, warnings):
    if not isinstance(overlay, dict):
        raise TypeClashError(prefix or "<root>")
    result = dict(base)
    for key, value in overlay.items():
        path = f"{prefix}.{key}" if prefix else key
        known = any(p == path or p.startswith(path + ".") for p in schema_paths)
        if not known:
            warnings.append(path)
        if key in base:
            base_is_tree = isinstance(base[key], dict)
            over_is_tree = isinstance(value, dict)
            if base_is_tree != over_is_tree:
                raise TypeClashError(path)
            if base_is_tree:
                result[key] = _merge_trees(base[key], value, path,
                                           schema_paths, warnings)
            else:
                result[key] = copy.deepcopy(value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def _tree_paths(tree, prefix=""):
    paths = set()
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else key
        paths.add(path)
        if isinstance(value, dict):
            paths |= _tree_paths(value, path)
    return paths


def _validate_tree(kind, tree):
    # every schema key must resolve to a concrete value of the right shape
    schema = _default_tree(kind)
    _require_paths(schema, tree, "")
    for path, check in VALIDATORS.items():
        value = _lookup(tree, path)
        if value is _MISSING:
            continue
        reason = check(value)
        if reason:
            raise ConfigValidationError(path, reason)
    for path, allowed in TEMPLATE_VARS.items():
        template = _lookup(tree, path)
        if template is _MISSING:
            continue
        if not isinstance(template, str):
            raise ConfigValidationError(path, "template must be a string")
        try:
            used = extract_placeholders(template)
        except TemplateError as exc:
            raise ConfigValidationError(path, str(exc)) from exc
        extra = used - allowed
        if extra:
            raise ConfigValidationError(
                path, f"unknown placeholder(s): {sorted(extra)}")


_MISSING = object()


def _lookup(tree, path):
    node = tree
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return _MISSING
        node = node[part]
    return node


def _require_paths(schema, tree, prefix):
    for key, value in schema.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in tree:
            raise ConfigValidationError(path, "missing required key")
        if isinstance(value, dict):
            if not isinstance(tree[key], dict):
                raise ConfigValidationError(path, "expected a subtree")
            _require_paths(value, tree[key], path)


def load_config_file(path):
    """Load a JSON overlay; parse failures carry line and column."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileIOError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    if not isinstance(data, dict):
        raise ParseError("config file must contain a JSON object", line=1, column=1)
    return data
