"""Memory operations: the store/recall/manage/optimize variants that the
model layer composes.

Every operation takes an OperationContext and is deterministic given scripted
providers and an explicit clock. Operations that can fail mid-way stage their
provider calls first and mutate the store only once everything succeeded, so
a failure leaves the store observably unchanged.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from datetime import datetime, timezone

from .config import MemoryConfig
from .core import (
    Query,
    RecallResult,
    RecordStore,
    ScoredRecord,
    TreeNode,
    TreeStore,
    normalize,
)
from .errors import ProviderError
from .functions import (
    ScoreWeights,
    combine,
    cosine,
    count_tokens,
    judge_importance,
    minmax_normalize,
    recency_score,
    reflect,
    render_prompt,
    retention,
    summarize,
    trigger_decision,
    truncate_tokens,
    utilize,
)

SECONDS_PER_HOUR = 3600.0

ACCUMULATOR_KEY = "ga_accumulator"
FIFO_KEY = "mg_fifo"
PRESSURE_KEY = "mg_pressure"


@dataclass
class OperationContext:
    store: RecordStore
    config: MemoryConfig
    embedder: object | None
    llm: object | None
    now: float = 0.0


def _weights(cfg):
    sec = cfg.get("functions.retrieval")
    if sec is None:
        return ScoreWeights(1.0, 0.0, 0.0)
    return ScoreWeights(sec["w_rel"], sec["w_rec"], sec["w_imp"],
                        sec["recency_decay"])


def _cpt(cfg):
    return cfg.get("functions.truncation.chars_per_token", 4)


def _query_vector(ctx, query: Query):
    if query.embedding is not None:
        return query.embedding
    return ctx.embedder.embed(query.text)


def _elapsed_hours(now, since):
    return max(0.0, (now - since) / SECONDS_PER_HOUR)


def _score_records(ctx, query, records, normalize_components=False):
    """Score records against a query; sorted descending total, ties by id.

    Components: relevance from cosine (shifted into [0, 1], or min-max
    normalized across candidates when requested), recency from the per-hour
    decay, importance as importance/10. Total is the configured weighted
    combination, so default weights (1, 0, 0) rank by pure cosine.
    """
    if not records:
        return []
    weights = _weights(ctx.config)
    qv = _query_vector(ctx, query)
    default_imp = ctx.config.get("functions.judge.default_importance", 0)
    rels = [cosine(qv, r.embedding) for r in records]
    recs = [recency_score(_elapsed_hours(query.now, r.last_accessed_at),
                          weights.recency_decay) for r in records]
    imps = [(r.importance if r.importance is not None else default_imp) / 10.0
            for r in records]
    if normalize_components:
        rels = minmax_normalize(rels)
        recs = minmax_normalize(recs)
    else:
        rels = [(c + 1.0) / 2.0 for c in rels]
    scored = [
        ScoredRecord(r.id, rel, rec, imp, combine(rel, rec, imp, weights))
        for r, rel, rec, imp in zip(records, rels, recs, imps)
    ]
    scored.sort(key=lambda s: (-s.total, s.record_id))
    return scored


def _memories_context(ctx, query, items, extra_sections=None):
    texts = "\n".join(ctx.store.get(s.record_id).text for s in items)
    sections = list(extra_sections or []) + [("Memories", texts)]
    return utilize(sections, query.token_budget, _cpt(ctx.config))


# -- basic / long-term -----------------------------------------------------

def basic_store(ctx, observation):
    """Store an observation, embedding it when the model uses an encoder."""
    embedding = ctx.embedder.embed(observation) if ctx.embedder else None
    record = ctx.store.add(observation, source="observation", now=ctx.now,
                           embedding=embedding)
    return record.id


def basic_recall(ctx, query):
    """Top-k scored recall over all live records."""
    records = ctx.store.live()
    if not records:
        return RecallResult.empty()
    items = _score_records(ctx, query, records)[:query.top_k]
    return RecallResult(items, _memories_context(ctx, query, items))


# -- full / short-term -----------------------------------------------------

def fu_recall(ctx, query):
    """Concatenate the entire history, newest kept when over the limit."""
    records = ctx.store.live()
    if not records:
        return RecallResult.empty()
    limit = ctx.config.require("model.token_limit")
    if query.token_budget is not None:
        limit = min(limit, query.token_budget)
    text = "\n".join(r.text for r in records)
    context = truncate_tokens(text, limit, keep="tail",
                              chars_per_token=_cpt(ctx.config))
    items = [ScoredRecord(r.id, 0.0, 0.0, 0.0, 0.0) for r in records]
    return RecallResult(items, context)


def st_recall(ctx, query):
    """Concatenate the last N records in arrival order."""
    window = ctx.config.require("model.window")
    records = ctx.store.live()[-window:]
    if not records:
        return RecallResult.empty()
    text = "\n".join(r.text for r in records)
    if query.token_budget is not None:
        text = truncate_tokens(text, query.token_budget, keep="tail",
                               chars_per_token=_cpt(ctx.config))
    items = [ScoredRecord(r.id, 0.0, 0.0, 0.0, 0.0) for r in records]
    return RecallResult(items, text)


# -- generative-agents style ------------------------------------------------

def ga_store(ctx, observation):
    """Store with a judged importance score; importances accumulate toward
    the reflection threshold in store metadata."""
    judged = judge_importance(
        observation, ctx.llm,
        ctx.config.require("functions.judge.prompt"),
        ctx.config.require("functions.judge.default_importance"))
    embedding = ctx.embedder.embed(observation)
    meta = {"degraded": "true"} if judged.degraded else None
    record = ctx.store.add(observation, source="observation", now=ctx.now,
                           importance=judged.value, embedding=embedding,
                           meta=meta)
    ctx.store.meta[ACCUMULATOR_KEY] = (
        ctx.store.meta.get(ACCUMULATOR_KEY, 0) + judged.value)
    return record.id


def ga_recall(ctx, query):
    """Weighted recall: min-max normalized relevance and recency plus
    importance/10; returned records count as accessed now."""
    records = ctx.store.live()
    if not records:
        return RecallResult.empty()
    items = _score_records(ctx, query, records, normalize_components=True)
    items = items[:query.top_k]
    for scored in items:
        record = ctx.store.get(scored.record_id)
        record.last_accessed_at = query.now
        record.access_count += 1
    return RecallResult(items, _memories_context(ctx, query, items))


def ga_reflect(ctx):
    """When accumulated importance reaches the threshold, derive insights
    from the most recent records and reset the accumulator."""
    threshold = ctx.config.require("operations.reflect.threshold")
    accumulator = ctx.store.meta.get(ACCUMULATOR_KEY, 0)
    if accumulator < threshold:
        return []
    recent_count = ctx.config.require("operations.reflect.recent_count")
    recent = sorted(ctx.store.live(), key=lambda r: (r.created_at, r.id))
    recent = recent[-recent_count:]
    insight_texts = reflect(
        recent,
        ctx.config.require("operations.reflect.n_questions"),
        ctx.config.require("operations.reflect.n_insights"),
        ctx.llm,
        ctx.config.require("functions.reflector.question_prompt"),
        ctx.config.require("functions.reflector.insight_prompt"))
    judge_prompt = ctx.config.require("functions.judge.prompt")
    default_imp = ctx.config.require("functions.judge.default_importance")
    staged = []
    for text in insight_texts:
        judged = judge_importance(text, ctx.llm, judge_prompt, default_imp)
        staged.append((text, judged, ctx.embedder.embed(text)))
    new_ids = []
    for text, judged, embedding in staged:
        meta = {"degraded": "true"} if judged.degraded else None
        record = ctx.store.add(text, source="insight", now=ctx.now,
                               importance=judged.value, embedding=embedding,
                               meta=meta)
        new_ids.append(record.id)
    ctx.store.meta[ACCUMULATOR_KEY] = 0
    return new_ids


# -- memory-bank style -------------------------------------------------------

def _utc_day(now):
    return datetime.fromtimestamp(now, tz=timezone.utc).strftime("%Y-%m-%d")


def mb_store(ctx, observation):
    """Store an observation tagged with its UTC calendar day."""
    embedding = ctx.embedder.embed(observation)
    record = ctx.store.add(observation, source="observation", now=ctx.now,
                           embedding=embedding, meta={"day": _utc_day(ctx.now)})
    return record.id


def mb_manage(ctx):
    """Summarize completed days, then sweep weak records.

    Summaries are staged and committed all-or-nothing; a provider failure
    drops them but the forgetting sweep still runs. Only observations are
    swept; summaries and insights are exempt.
    """
    today = _utc_day(ctx.now)
    live_obs = [r for r in ctx.store.live() if r.source == "observation"]
    summarized = {r.meta.get("day") for r in ctx.store.records.values()
                  if r.source == "summary"}
    pending = sorted({r.meta["day"] for r in live_obs if "day" in r.meta
                      if r.meta["day"] < today} - summarized)
    staged = []
    try:
        for day in pending:
            texts = [r.text for r in live_obs if r.meta.get("day") == day]
            summary = summarize(
                texts,
                ctx.config.require("functions.summarizer.max_tokens"),
                ctx.llm,
                ctx.config.require("functions.summarizer.prompt"),
                _cpt(ctx.config))
            staged.append((day, summary, ctx.embedder.embed(summary)))
    except ProviderError:
        staged = []
    for day, summary, embedding in staged:
        ctx.store.add(summary, source="summary", now=ctx.now,
                      embedding=embedding, meta={"day": day})
    threshold = ctx.config.require("functions.forget.threshold")
    forgotten = 0
    for record in live_obs:
        dt = _elapsed_hours(ctx.now, record.last_accessed_at)
        if retention(dt, record.strength) < threshold:
            record.forgotten = True
            forgotten += 1
    return {"summaries_created": len(staged), "records_forgotten": forgotten}


def mb_recall(ctx, query):
    """Cosine top-k over observations plus the most relevant day summary;
    recalled observations are reinforced (strength += 1)."""
    observations = [r for r in ctx.store.live() if r.source == "observation"]
    summaries = [r for r in ctx.store.live() if r.source == "summary"]
    if not observations and not summaries:
        return RecallResult.empty()
    items = _score_records(ctx, query, observations)[:query.top_k]
    summary_text = ""
    if summaries:
        qv = _query_vector(ctx, query)
        best = min(summaries, key=lambda r: (-cosine(qv, r.embedding), r.id))
        summary_text = best.text
    for scored in items:
        record = ctx.store.get(scored.record_id)
        record.strength += 1
        record.last_accessed_at = query.now
        record.access_count += 1
    context = _memories_context(ctx, query, items,
                                extra_sections=[("Summary", summary_text)])
    return RecallResult(items, context)


# -- self-controlled -----------------------------------------------------------

def sc_recall(ctx, query):
    """Gate recall behind an LLM trigger; summarize when over budget."""
    if not trigger_decision(query.text, ctx.llm,
                            ctx.config.require("functions.trigger.prompt")):
        return RecallResult.empty()
    records = ctx.store.live()
    if not records:
        return RecallResult.empty()
    items = _score_records(ctx, query, records)[:query.top_k]
    budget = query.token_budget
    if budget is None:
        budget = ctx.config.require("operations.recall.default_budget")
    cpt = _cpt(ctx.config)
    texts = [ctx.store.get(s.record_id).text for s in items]
    raw = utilize([("Memories", "\n".join(texts))], None, cpt)
    if count_tokens(raw, cpt) <= budget:
        return RecallResult(items, raw)
    summary = summarize(texts, budget, ctx.llm,
                        ctx.config.require("functions.summarizer.prompt"), cpt)
    context = utilize([("Summary", summary)], budget, cpt)
    return RecallResult(items, context)


# -- paged main-context (operating-system style) -------------------------------

def _fifo_ids(store):
    return list(store.meta.get(FIFO_KEY, []))


def _fifo_token_sum(store, fifo, cpt):
    return sum(count_tokens(store.get(rid).text, cpt) for rid in fifo)


def mg_store(ctx, observation):
    """Append to the main-context FIFO; every record is also embedded so it
    stays searchable after eviction. Crossing the warn ratio sets the
    pressure flag."""
    embedding = ctx.embedder.embed(observation)
    record = ctx.store.add(observation, source="observation", now=ctx.now,
                           embedding=embedding, meta={"region": "fifo"})
    fifo = _fifo_ids(ctx.store)
    fifo.append(record.id)
    ctx.store.meta[FIFO_KEY] = fifo
    budget = ctx.config.require("operations.manage.main_budget")
    warn = ctx.config.require("operations.manage.warn_ratio")
    if _fifo_token_sum(ctx.store, fifo, _cpt(ctx.config)) > warn * budget:
        ctx.store.meta[PRESSURE_KEY] = True
    return record.id


def mg_manage(ctx):
    """When the FIFO exceeds its budget, evict the oldest half to recall
    storage and put one summary of them at the FIFO head."""
    cpt = _cpt(ctx.config)
    budget = ctx.config.require("operations.manage.main_budget")
    warn = ctx.config.require("operations.manage.warn_ratio")
    fifo = _fifo_ids(ctx.store)
    if _fifo_token_sum(ctx.store, fifo, cpt) <= budget:
        return {"evicted": 0, "summary_id": None}
    n_evict = math.ceil(len(fifo) / 2)
    evicted = fifo[:n_evict]
    texts = [ctx.store.get(rid).text for rid in evicted]
    summary = summarize(texts,
                        ctx.config.require("functions.summarizer.max_tokens"),
                        ctx.llm,
                        ctx.config.require("functions.summarizer.prompt"), cpt)
    embedding = ctx.embedder.embed(summary)
    for rid in evicted:
        ctx.store.get(rid).meta["region"] = "recall_storage"
    record = ctx.store.add(summary, source="summary", now=ctx.now,
                           embedding=embedding, meta={"region": "fifo"})
    new_fifo = [record.id] + fifo[n_evict:]
    ctx.store.meta[FIFO_KEY] = new_fifo
    if _fifo_token_sum(ctx.store, new_fifo, cpt) <= warn * budget:
        ctx.store.meta[PRESSURE_KEY] = False
    return {"evicted": n_evict, "summary_id": record.id}


def mg_recall(ctx, query):
    """Working context (the FIFO, newest last) plus retrieved evictees."""
    if not ctx.store.live():
        return RecallResult.empty()
    fifo = _fifo_ids(ctx.store)
    working = "\n".join(ctx.store.get(rid).text for rid in fifo)
    pool = [r for r in ctx.store.live() if r.meta.get("region") != "fifo"]
    items = _score_records(ctx, query, pool)[:query.top_k]
    retrieved = "\n".join(ctx.store.get(s.record_id).text for s in items)
    context = utilize([("WorkingContext", working), ("Retrieved", retrieved)],
                      query.token_budget, _cpt(ctx.config))
    return RecallResult(items, context)


# -- tree-structured ------------------------------------------------------------

def mt_insert(ctx, observation):
    """Insert a leaf by similarity descent, regrouping and re-summarizing.

    Descends while the best-matching child is internal and at least as
    similar as the threshold. If the attachment point exceeds the fan-out
    cap, its two most similar children are grouped under a new internal
    node. Ancestor embeddings (normalized child means) and summaries are
    recomputed along the path. All provider calls happen before any store
    mutation, so a failure leaves the tree unchanged.
    """
    store: TreeStore = ctx.store
    tau = ctx.config.require("operations.store.similarity_threshold")
    fanout = ctx.config.require("operations.store.fanout")
    leaf_vector = ctx.embedder.embed(observation)

    current = store.root_id
    while True:
        children = store.nodes[current].children
        if not children:
            break
        best = min(children,
                   key=lambda cid: (-cosine(leaf_vector,
                                            store.get(cid).embedding), cid))
        best_sim = cosine(leaf_vector, store.get(best).embedding)
        if best_sim >= tau and store.nodes[best].children:
            current = best
            continue
        break

    leaf_id = store.next_id           # provisional; committed below
    internal_id = store.next_id + 1

    # staged views of the mutated part of the tree
    staged_children = {current: store.nodes[current].children + [leaf_id]}
    staged_embedding = {leaf_id: leaf_vector}
    staged_text = {leaf_id: observation}
    new_internal = None

    def emb_of(nid):
        if nid in staged_embedding:
            return staged_embedding[nid]
        return store.get(nid).embedding

    def text_of(nid):
        if nid in staged_text:
            return staged_text[nid]
        return store.get(nid).text

    if len(staged_children[current]) > fanout:
        kids = staged_children[current]
        best_pair = None
        best_sim = -2.0
        for i in range(len(kids)):
            for j in range(i + 1, len(kids)):
                sim = cosine(emb_of(kids[i]), emb_of(kids[j]))
                if sim > best_sim:
                    best_sim = sim
                    best_pair = (kids[i], kids[j])
        a, b = best_pair
        new_internal = internal_id
        staged_children[current] = [c for c in kids if c not in (a, b)] + [internal_id]
        staged_children[internal_id] = [a, b]

    summarizer_prompt = ctx.config.require("functions.summarizer.prompt")
    summarizer_budget = ctx.config.require("functions.summarizer.max_tokens")
    cpt = _cpt(ctx.config)

    def restage(nid):
        if nid in staged_children:
            kids = staged_children[nid]
        else:
            kids = store.nodes[nid].children
        mean = [0.0] * store.dimension
        for cid in kids:
            vec = emb_of(cid)
            for d in range(store.dimension):
                mean[d] += vec[d]
        staged_embedding[nid] = normalize([x / len(kids) for x in mean])
        staged_text[nid] = summarize([text_of(cid) for cid in kids],
                                     summarizer_budget, ctx.llm,
                                     summarizer_prompt, cpt)

    if new_internal is not None:
        restage(new_internal)
    for nid in store.path_to_root(current):
        restage(nid)

    # all provider calls succeeded; commit
    leaf_record = store.add(observation, source="observation", now=ctx.now,
                            embedding=leaf_vector)
    assert leaf_record.id == leaf_id
    leaf_node = store.nodes[leaf_id] = TreeNode(leaf_id, [], 0, leaf_record)
    if new_internal is not None:
        internal_record = store.add(staged_text[internal_id], source="summary",
                                    now=ctx.now,
                                    embedding=staged_embedding[internal_id])
        assert internal_record.id == internal_id
        store.nodes[internal_id] = TreeNode(internal_id, [], 0, internal_record)
    for nid, kids in staged_children.items():
        store.nodes[nid].children = list(kids)
    store._rebuild_parents()
    _recompute_depths(store)
    for nid in staged_embedding:
        store.get(nid).embedding = staged_embedding[nid]
    for nid in staged_text:
        if nid != leaf_id:
            store.get(nid).text = staged_text[nid]
    return leaf_node.node_id


def _recompute_depths(store):
    store.nodes[store.root_id].depth = 0
    stack = [store.root_id]
    while stack:
        nid = stack.pop()
        for cid in store.nodes[nid].children:
            store.nodes[cid].depth = store.nodes[nid].depth + 1
            stack.append(cid)


def mt_recall(ctx, query):
    """Best-first traversal by cosine; the root summary heads the context."""
    store: TreeStore = ctx.store
    root = store.nodes[store.root_id]
    if not root.children:
        return RecallResult.empty()
    qv = _query_vector(ctx, query)
    heap = []
    for cid in root.children:
        heapq.heappush(heap, (-cosine(qv, store.get(cid).embedding), cid))
    leaf_records = []
    while heap and len(leaf_records) < query.top_k:
        _, nid = heapq.heappop(heap)
        node = store.nodes[nid]
        if node.children:
            for cid in node.children:
                heapq.heappush(heap, (-cosine(qv, store.get(cid).embedding), cid))
        else:
            leaf_records.append(store.get(nid))
    items = _score_records(ctx, query, leaf_records)
    context = _memories_context(ctx, query, items,
                                extra_sections=[("Summary", root.record.text)])
    return RecallResult(items, context)


# -- trajectory reflection -------------------------------------------------------

def rf_optimize(ctx, trajectory):
    """Distill one insight from a trajectory; oldest insight evicted past
    the cap."""
    steps = "\n".join(f"{i}. {action} -> {observation}"
                      for i, (action, observation) in
                      enumerate(trajectory.steps, start=1))
    prompt = render_prompt(
        ctx.config.require("functions.reflector.trajectory_prompt"),
        {"task": trajectory.task, "steps": steps, "outcome": trajectory.outcome})
    lesson = ctx.llm.generate(prompt)
    embedding = ctx.embedder.embed(lesson)
    record = ctx.store.add(lesson, source="insight", now=ctx.now,
                           embedding=embedding)
    cap = ctx.config.require("operations.optimize.insight_cap")
    insights = [r for r in ctx.store.live() if r.source == "insight"]
    while len(insights) > cap:
        insights.pop(0).forgotten = True
    return record.id


def rf_recall(ctx, query):
    """All live insights (oldest first) ahead of cosine top-k observations."""
    insights = [r for r in ctx.store.live() if r.source == "insight"]
    observations = [r for r in ctx.store.live() if r.source == "observation"]
    if not insights and not observations:
        return RecallResult.empty()
    items = _score_records(ctx, query, observations)[:query.top_k]
    insight_text = "\n".join(r.text for r in insights)
    context = _memories_context(ctx, query, items,
                                extra_sections=[("Insights", insight_text)])
    return RecallResult(items, context)
