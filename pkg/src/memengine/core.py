"""Domain types, the record stores (flat and tree), and snapshot persistence.

The snapshot format is one JSON object per line: the first line carries store
metadata (embedding dimension, next id, model tag, store-level meta), every
following line is one record. Floats survive the text round-trip exactly
because Python renders them with the shortest representation that parses back
to the same value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import (
    EmptyTextError,
    FileIOError,
    SnapshotFormatError,
)

SOURCES = ("observation", "insight", "summary", "trajectory")
OUTCOMES = ("success", "failure")

ROOT_TEXT = "(root)"


@dataclass
class MemoryRecord:
    """One stored memory item."""

    id: int
    text: str
    source: str = "observation"
    created_at: float = 0.0
    last_accessed_at: float = 0.0
    access_count: int = 0
    importance: int | None = None
    strength: float = 1.0
    embedding: list[float] | None = None
    forgotten: bool = False
    meta: dict[str, str] = field(default_factory=dict)

    def to_dict(self):
        return {
            "id": self.id,
            "text": self.text,
            "source": self.source,
            "created_at": self.created_at,
            "last_accessed_at": self.last_accessed_at,
            "access_count": self.access_count,
            "importance": self.importance,
            "strength": self.strength,
            "embedding": self.embedding,
            "forgotten": self.forgotten,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            id=data["id"],
            text=data["text"],
            source=data["source"],
            created_at=data["created_at"],
            last_accessed_at=data["last_accessed_at"],
            access_count=data["access_count"],
            importance=data["importance"],
            strength=data["strength"],
            embedding=data["embedding"],
            forgotten=data["forgotten"],
            meta=dict(data["meta"]),
        )


@dataclass
class Query:
    """A recall request: query text plus ranking and budget knobs."""

    text: str
    embedding: list[float] | None = None
    top_k: int = 5
    token_budget: int | None = None
    now: float = 0.0

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.now < 0:
            raise ValueError("now must be >= 0")
        if self.token_budget is not None and self.token_budget < 1:
            raise ValueError("token_budget must be >= 1")


@dataclass
class ScoredRecord:
    """One ranked recall hit with its score components, each in [0, 1]."""

    record_id: int
    relevance: float
    recency: float
    importance_norm: float
    total: float

    def to_dict(self):
        return {
            "record_id": self.record_id,
            "relevance": self.relevance,
            "recency": self.recency,
            "importance_norm": self.importance_norm,
            "total": self.total,
        }


@dataclass
class RecallResult:
    """Ranked scored records plus one formatted context string."""

    items: list[ScoredRecord]
    context: str

    def to_payload(self):
        return {
            "items": [item.to_dict() for item in self.items],
            "context": self.context,
        }

    @classmethod
    def empty(cls):
        return cls([], "")


@dataclass
class TreeNode:
    """A node of the tree store; leaves hold raw text, internals a summary."""

    node_id: int
    children: list[int]
    depth: int
    record: MemoryRecord


@dataclass
class Trajectory:
    """One recorded task attempt: ordered steps plus the outcome."""

    task: str
    steps: list[tuple[str, str]]
    outcome: str
    score: float | None = None

    def __post_init__(self):
        if not self.steps:
            raise ValueError("trajectory steps must be non-empty")
        if self.outcome not in OUTCOMES:
            raise ValueError(f"outcome must be one of {OUTCOMES}")

    def to_dict(self):
        return {
            "task": self.task,
            "steps": [list(step) for step in self.steps],
            "outcome": self.outcome,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            task=data["task"],
            steps=[(a, o) for a, o in data["steps"]],
            outcome=data["outcome"],
            score=data.get("score"),
        )


class RecordStore:
    """Flat record store with monotone integer ids and logical deletion.

    A store is confined to one logical owner at a time; callers coordinate
    concurrent access (the HTTP session layer serializes per session).
    """

    def __init__(self, dimension=0, model_tag="", initial_strength=1.0):
        self.dimension = dimension
        self.model_tag = model_tag
        self.initial_strength = initial_strength
        self.next_id = 0
        self.records: dict[int, MemoryRecord] = {}
        self.meta: dict = {}

    def add(self, text, source="observation", meta=None, now=0.0,
            importance=None, embedding=None):
        """Append a record, assigning the next id. Raises EmptyTextError."""
        if not text.strip():
            raise EmptyTextError("record text is empty")
        record = MemoryRecord(
            id=self.next_id,
            text=text,
            source=source,
            created_at=now,
            last_accessed_at=now,
            access_count=0,
            importance=importance,
            strength=self.initial_strength,
            embedding=list(embedding) if embedding is not None else None,
            forgotten=False,
            meta=dict(meta) if meta else {},
        )
        self.records[record.id] = record
        self.next_id += 1
        return record

    def get(self, record_id):
        return self.records[record_id]

    def live(self):
        """All non-forgotten records in ascending id order."""
        return [self.records[rid] for rid in sorted(self.records)
                if not self.records[rid].forgotten]

    def live_count(self):
        return sum(1 for r in self.records.values() if not r.forgotten)

    def top_k_by(self, score_fn, k):
        """Top k live records by score, descending, ties by ascending id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = [(r.id, score_fn(r)) for r in self.live()]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    def compact(self):
        """Physically remove forgotten records; ids of survivors unchanged."""
        removed = [rid for rid, r in self.records.items() if r.forgotten]
        for rid in removed:
            del self.records[rid]
        return len(removed)

    # -- snapshot persistence ------------------------------------------

    def _header(self):
        return {
            "dimension": self.dimension,
            "next_id": self.next_id,
            "model": self.model_tag,
            "meta": self.meta,
        }

    def _record_line(self, record):
        return record.to_dict()

    def to_snapshot_text(self):
        lines = [json.dumps(self._header(), sort_keys=True)]
        for rid in sorted(self.records):
            lines.append(json.dumps(self._record_line(self.records[rid]), sort_keys=True))
        return "\n".join(lines) + "\n"

    def snapshot(self, path):
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.to_snapshot_text())
        except OSError as exc:
            raise FileIOError(f"cannot write snapshot {path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        """Load a snapshot; reconstructs a TreeStore when the header says so."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise FileIOError(f"cannot read snapshot {path}: {exc}") from exc
        return cls.from_snapshot_text(text)

    @classmethod
    def from_snapshot_text(cls, text):
        lines = text.splitlines()
        if not lines:
            raise SnapshotFormatError("snapshot is empty", 1)
        header = _parse_line(lines[0], 1, dict)
        for key in ("dimension", "next_id", "model", "meta"):
            if key not in header:
                raise SnapshotFormatError(f"header missing key {key!r}", 1)
        is_tree = "root" in header
        store = TreeStore._load_shell(header) if is_tree else cls(
            dimension=header["dimension"], model_tag=header["model"])
        store.next_id = header["next_id"]
        store.meta = dict(header["meta"])
        for lineno, raw in enumerate(lines[1:], start=2):
            data = _parse_line(raw, lineno, dict)
            try:
                record = MemoryRecord.from_dict(data)
            except (KeyError, TypeError) as exc:
                raise SnapshotFormatError(f"bad record: {exc}", lineno) from exc
            if record.id in store.records:
                raise SnapshotFormatError(f"duplicate record id {record.id}", lineno)
            store.records[record.id] = record
            if is_tree:
                node = data.get("node")
                if not isinstance(node, dict):
                    raise SnapshotFormatError("tree snapshot record lacks node info", lineno)
                store.nodes[record.id] = TreeNode(
                    node_id=record.id,
                    children=list(node["children"]),
                    depth=node["depth"],
                    record=record,
                )
        if is_tree:
            store._rebuild_parents()
            if store.root_id not in store.nodes:
                raise SnapshotFormatError("tree root record missing", 1)
        return store


def _parse_line(raw, lineno, want_type):
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SnapshotFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
    if not isinstance(data, want_type):
        raise SnapshotFormatError(
            f"expected {want_type.__name__} object", lineno)
    return data


class TreeStore(RecordStore):
    """Record store organized as a tree with exactly one root.

    The root exists from creation; node ids coincide with record ids.
    """

    def __init__(self, dimension=0, model_tag="", initial_strength=1.0):
        super().__init__(dimension, model_tag, initial_strength)
        root = self.add(ROOT_TEXT, source="summary", now=0.0)
        self.root_id = root.id
        self.nodes: dict[int, TreeNode] = {
            root.id: TreeNode(root.id, [], 0, root)
        }
        self.parents: dict[int, int] = {}

    @classmethod
    def _load_shell(cls, header):
        store = cls.__new__(cls)
        RecordStore.__init__(store, dimension=header["dimension"],
                             model_tag=header["model"])
        store.root_id = header["root"]
        store.nodes = {}
        store.parents = {}
        return store

    def _rebuild_parents(self):
        self.parents = {}
        for node in self.nodes.values():
            for child in node.children:
                self.parents[child] = node.node_id

    def add_node(self, record, parent_id):
        """Attach a fresh node for ``record`` under ``parent_id``."""
        parent = self.nodes[parent_id]
        node = TreeNode(record.id, [], parent.depth + 1, record)
        self.nodes[record.id] = node
        parent.children.append(record.id)
        self.parents[record.id] = parent_id
        return node

    def leaves(self):
        """Leaf nodes (no children, not the root) in ascending id order."""
        return [self.nodes[nid] for nid in sorted(self.nodes)
                if nid != self.root_id and not self.nodes[nid].children]

    def path_to_root(self, node_id):
        """Node ids from ``node_id`` up to and including the root."""
        path = [node_id]
        while path[-1] != self.root_id:
            path.append(self.parents[path[-1]])
        return path

    def reset_tree(self):
        self.records.clear()
        self.nodes.clear()
        self.parents.clear()
        self.next_id = 0
        self.meta = {}
        root = self.add(ROOT_TEXT, source="summary", now=0.0)
        self.root_id = root.id
        self.nodes[root.id] = TreeNode(root.id, [], 0, root)

    def compact(self):
        # Tree records all back nodes; only drop forgotten non-node records.
        removed = [rid for rid, r in self.records.items()
                   if r.forgotten and rid not in self.nodes]
        for rid in removed:
            del self.records[rid]
        return len(removed)

    def _header(self):
        header = super()._header()
        header["root"] = self.root_id
        return header

    def _record_line(self, record):
        line = super()._record_line(record)
        node = self.nodes.get(record.id)
        if node is not None:
            line["node"] = {"children": list(node.children), "depth": node.depth}
        return line


def normalize(vector):
    """L2-normalize; an all-zero vector maps to the first basis vector."""
    norm = math.sqrt(sum(x * x for x in vector))
    if norm == 0.0:
        basis = [0.0] * len(vector)
        basis[0] = 1.0
        return basis
    return [x / norm for x in vector]
