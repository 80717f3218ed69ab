"""The nine memory models behind one reset/store/recall/manage/optimize
interface.

Each kind is a registered composition of operations over a private store;
switching kinds needs no caller-side branching. Verbs without a composition
for a kind are no-ops returning an empty report, so every verb is callable
on every kind. A model handle is single-owner; run many models for
parallelism, not one model from many threads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

from . import operations as ops
from .config import MemoryConfig, default_config, merge
from .core import Query, RecordStore, Trajectory, TreeStore
from .errors import MemEngineError, UnknownKindError
from .providers import (
    ENV_EMBED_URL,
    ENV_LLM_URL,
    LLMParams,
    ProviderSpec,
    build_embedder,
    build_llm,
)


def _ga_store(ctx, observation):
    # reflection fires on the store that lifts the accumulator past the
    # threshold, in addition to being reachable through manage
    record_id = ops.ga_store(ctx, observation)
    ops.ga_reflect(ctx)
    return record_id


def _ga_manage(ctx):
    return {"insights_created": len(ops.ga_reflect(ctx))}


def _mb_manage(ctx):
    return ops.mb_manage(ctx)


def _mg_manage(ctx):
    return ops.mg_manage(ctx)


def _rf_optimize(ctx, trajectory):
    return {"insight_id": ops.rf_optimize(ctx, trajectory)}


@dataclass(frozen=True)
class Composition:
    needs_embedder: bool
    needs_llm: bool
    tree_store: bool
    store_op: Callable
    recall_op: Callable
    manage_op: Callable | None = None
    optimize_op: Callable | None = None


REGISTRY = {
    "FUMemory": Composition(False, False, False, ops.basic_store, ops.fu_recall),
    "STMemory": Composition(False, False, False, ops.basic_store, ops.st_recall),
    "LTMemory": Composition(True, False, False, ops.basic_store, ops.basic_recall),
    "GAMemory": Composition(True, True, False, _ga_store, ops.ga_recall,
                            manage_op=_ga_manage),
    "MBMemory": Composition(True, True, False, ops.mb_store, ops.mb_recall,
                            manage_op=_mb_manage),
    "SCMemory": Composition(True, True, False, ops.basic_store, ops.sc_recall),
    "MGMemory": Composition(True, True, False, ops.mg_store, ops.mg_recall,
                            manage_op=_mg_manage),
    "RFMemory": Composition(True, True, False, ops.basic_store, ops.rf_recall,
                            optimize_op=_rf_optimize),
    "MTMemory": Composition(True, True, True, ops.mt_insert, ops.mt_recall),
}


class MemoryModel:
    """One memory model instance: a kind, its config, providers, and store."""

    def __init__(self, kind, config: MemoryConfig, embedder, llm):
        self.kind = kind
        self.config = config
        self.embedder = embedder
        self.llm = llm
        self._composition = REGISTRY[kind]
        self.storage = self._new_store()

    def _new_store(self):
        dimension = self.config.get("functions.encoder.dimension", 0)
        strength = self.config.get("functions.forget.initial_strength", 1.0)
        store_cls = TreeStore if self._composition.tree_store else RecordStore
        return store_cls(dimension=dimension, model_tag=self.kind,
                         initial_strength=strength)

    def _ctx(self, now):
        return ops.OperationContext(self.storage, self.config, self.embedder,
                                    self.llm, now)

    def reset(self):
        """Restore the just-created state: empty store, fresh accumulators."""
        self.storage = self._new_store()

    def store(self, observation, now=0.0):
        with self._kind_context():
            return self._composition.store_op(self._ctx(now), observation)

    def recall(self, query: Query):
        with self._kind_context():
            return self._composition.recall_op(self._ctx(query.now), query)

    def manage(self, now=0.0):
        if self._composition.manage_op is None:
            return {}
        with self._kind_context():
            return self._composition.manage_op(self._ctx(now))

    def optimize(self, trajectory: Trajectory, now=0.0):
        if self._composition.optimize_op is None:
            return {}
        with self._kind_context():
            return self._composition.optimize_op(self._ctx(now), trajectory)

    def make_query(self, text, top_k=None, token_budget=None, now=0.0):
        """Build a Query, defaulting top_k from the model config."""
        if top_k is None:
            top_k = self.config.require("model.top_k")
        return Query(text=text, top_k=top_k, token_budget=token_budget, now=now)

    def dump(self):
        """Full record listing plus store metadata, JSON-ready."""
        return {
            "model": self.kind,
            "dimension": self.storage.dimension,
            "next_id": self.storage.next_id,
            "meta": dict(self.storage.meta),
            "records": [self.storage.records[rid].to_dict()
                        for rid in sorted(self.storage.records)],
        }

    def snapshot(self, path):
        self.storage.snapshot(path)

    def _kind_context(self):
        return _KindContext(self.kind)


class _KindContext:
    """Tags escaping engine errors with the model kind."""

    def __init__(self, kind):
        self.kind = kind

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if isinstance(exc, MemEngineError):
            exc.model_kind = self.kind
        return False


def create_model(kind, overlay=None, strict=False):
    """Create a model of ``kind`` with the default config plus an optional
    overlay dict. Raises UnknownKindError or ConfigValidationError."""
    if kind not in REGISTRY:
        raise UnknownKindError(f"unknown model kind {kind!r}")
    config = default_config(kind)
    if overlay:
        config = merge(config, overlay, strict=strict)
    composition = REGISTRY[kind]
    embedder = llm = None
    if composition.needs_embedder:
        embedder = build_embedder(_encoder_spec(config))
    if composition.needs_llm:
        llm = build_llm(_llm_spec(config))
    return MemoryModel(kind, config, embedder, llm)


def _encoder_spec(config: MemoryConfig) -> ProviderSpec:
    section = config.require("functions.encoder")
    endpoint = os.environ.get(ENV_EMBED_URL) or section.get("endpoint")
    return ProviderSpec(
        kind=section["kind"],
        endpoint=endpoint,
        dimension=section["dimension"],
        timeout_ms=section["timeout_ms"],
    )


def _llm_spec(config: MemoryConfig) -> ProviderSpec:
    section = config.require("functions.llm")
    endpoint = os.environ.get(ENV_LLM_URL) or section.get("endpoint")
    return ProviderSpec(
        kind=section["kind"],
        endpoint=endpoint,
        model_name=section.get("model_name"),
        timeout_ms=section["timeout_ms"],
        script=tuple((p, r) for p, r in section.get("script") or ()),
        params=LLMParams(
            max_tokens=section["max_tokens"],
            temperature=section["temperature"],
            seed=section["seed"],
        ),
    )
