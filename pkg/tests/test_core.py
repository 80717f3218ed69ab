"""Record store, domain types, and snapshot round-trips."""

import json
import random

import pytest

from memengine.core import MemoryRecord, Query, RecordStore, Trajectory, TreeStore, normalize
from memengine.errors import EmptyTextError, FileIOError, SnapshotFormatError


@pytest.fixture
def store():
    return RecordStore(dimension=4, model_tag="LTMemory")


class TestAddRecord:
    def test_first_id_is_zero(self, store):
        assert store.add("hello", now=0.0).id == 0

    def test_ids_monotone_in_call_order(self, store):
        first = store.add("one", now=0.0)
        second = store.add("two", now=0.0)
        assert (first.id, second.id) == (0, 1)

    def test_field_initialization(self, store):
        record = store.add("note", now=100.0)
        assert record.created_at == 100.0
        assert record.last_accessed_at == 100.0
        assert record.access_count == 0
        assert record.strength == store.initial_strength
        assert record.forgotten is False

    def test_empty_text_rejected(self, store):
        with pytest.raises(EmptyTextError):
            store.add("   \t ", now=0.0)

    def test_strength_follows_store_default(self):
        store = RecordStore(initial_strength=2.5)
        assert store.add("x").strength == 2.5

    def test_ids_keep_increasing_across_many_adds(self, store):
        ids = [store.add(f"note {i}").id for i in range(50)]
        assert ids == sorted(ids)
        assert len(set(ids)) == 50


class TestTopKBy:
    def test_empty_store_gives_empty_list(self, store):
        assert store.top_k_by(lambda r: 1.0, k=5) == []

    def test_tie_broken_by_ascending_id(self, store):
        scores = {0: 0.2, 1: 0.9, 2: 0.9}
        for i in range(3):
            store.add(f"r{i}")
        result = store.top_k_by(lambda r: scores[r.id], k=2)
        assert result == [(1, 0.9), (2, 0.9)]

    def test_forgotten_records_excluded(self, store):
        a = store.add("a")
        store.add("b")
        a.forgotten = True
        result = store.top_k_by(lambda r: 1.0, k=5)
        assert [rid for rid, _ in result] == [1]

    def test_k_below_one_rejected(self, store):
        with pytest.raises(ValueError):
            store.top_k_by(lambda r: 0.0, k=0)

    @pytest.mark.parametrize("k", [1, 3, 17, 200, 1000])
    def test_matches_full_sort_oracle(self, k):
        rng = random.Random(20_000 + k)
        store = RecordStore()
        scores = {}
        for i in range(200):
            record = store.add(f"record {i}")
            scores[record.id] = rng.choice([rng.random(), round(rng.random(), 1)])
        oracle = sorted(((rid, s) for rid, s in scores.items()),
                        key=lambda p: (-p[1], p[0]))[:k]
        assert store.top_k_by(lambda r: scores[r.id], k=k) == oracle

    def test_random_stores_up_to_1000_records(self):
        rng = random.Random(7)
        for _ in range(5):
            store = RecordStore()
            n = rng.randrange(1, 1000)
            scores = {}
            for i in range(n):
                record = store.add(f"r{i}")
                scores[record.id] = rng.random()
                if rng.random() < 0.1:
                    record.forgotten = True
            k = rng.randrange(1, n + 5)
            oracle = sorted(
                ((r.id, scores[r.id]) for r in store.live()),
                key=lambda p: (-p[1], p[0]))[:k]
            assert store.top_k_by(lambda r: scores[r.id], k=k) == oracle


class TestSnapshot:
    def test_empty_store_is_header_only(self, store, tmp_path):
        path = tmp_path / "snap.jsonl"
        store.snapshot(path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        loaded = RecordStore.load(path)
        assert loaded.records == {}
        assert loaded.next_id == 0

    def test_one_line_per_record(self, store, tmp_path):
        for i in range(3):
            store.add(f"note {i}")
        path = tmp_path / "snap.jsonl"
        store.snapshot(path)
        assert len(path.read_text().splitlines()) == 4

    def test_round_trip_preserves_everything(self, store, tmp_path):
        a = store.add("plain note", now=17.25)
        b = store.add("tagged", now=34.5, meta={"day": "1970-01-01"},
                      importance=7, embedding=[0.5, 0.5, 0.5, 0.5])
        a.forgotten = True
        b.access_count = 3
        b.strength = 2.0
        store.meta["ga_accumulator"] = 12
        path = tmp_path / "snap.jsonl"
        store.snapshot(path)
        loaded = RecordStore.load(path)
        assert loaded.next_id == store.next_id
        assert loaded.meta == store.meta
        assert loaded.model_tag == store.model_tag
        for rid, record in store.records.items():
            assert loaded.records[rid].to_dict() == record.to_dict()

    def test_embedding_floats_survive_exactly(self, tmp_path):
        rng = random.Random(99)
        store = RecordStore(dimension=16)
        vector = normalize([rng.uniform(-1, 1) for _ in range(16)])
        store.add("vec", embedding=vector)
        path = tmp_path / "snap.jsonl"
        store.snapshot(path)
        loaded = RecordStore.load(path)
        restored = loaded.records[0].embedding
        assert all(x == y for x, y in zip(restored, vector))

    def test_second_snapshot_is_byte_identical(self, store, tmp_path):
        store.add("alpha", now=1.5)
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        store.snapshot(first)
        RecordStore.load(first).snapshot(second)
        assert first.read_bytes() == second.read_bytes()

    def test_malformed_line_reports_line_number(self, store, tmp_path):
        store.add("fine")
        path = tmp_path / "snap.jsonl"
        store.snapshot(path)
        lines = path.read_text().splitlines()
        lines[1] = "{not json"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SnapshotFormatError) as err:
            RecordStore.load(path)
        assert err.value.line == 2
        assert "line 2" in str(err.value)

    def test_missing_header_key_rejected(self, tmp_path):
        path = tmp_path / "snap.jsonl"
        path.write_text(json.dumps({"dimension": 4}) + "\n")
        with pytest.raises(SnapshotFormatError) as err:
            RecordStore.load(path)
        assert err.value.line == 1

    def test_unreadable_path_raises_io_error(self, tmp_path):
        with pytest.raises(FileIOError):
            RecordStore.load(tmp_path / "missing.jsonl")
        with pytest.raises(FileIOError):
            RecordStore().snapshot(tmp_path / "no" / "such" / "dir" / "f.jsonl")

    def test_compact_drops_forgotten(self, store, tmp_path):
        keep = store.add("keep")
        drop = store.add("drop")
        drop.forgotten = True
        assert store.compact() == 1
        assert list(store.records) == [keep.id]
        assert store.next_id == 2  # ids never reused


class TestTreeStore:
    def test_root_exists_from_creation(self):
        tree = TreeStore(dimension=4, model_tag="MTMemory")
        assert tree.root_id in tree.nodes
        assert tree.nodes[tree.root_id].depth == 0
        assert tree.leaves() == []

    def test_tree_snapshot_round_trip(self, tmp_path):
        tree = TreeStore(dimension=2, model_tag="MTMemory")
        leaf = tree.add("a leaf", embedding=[1.0, 0.0])
        tree.add_node(leaf, tree.root_id)
        path = tmp_path / "tree.jsonl"
        tree.snapshot(path)
        loaded = RecordStore.load(path)
        assert isinstance(loaded, TreeStore)
        assert loaded.root_id == tree.root_id
        assert loaded.nodes[leaf.id].children == []
        assert loaded.nodes[tree.root_id].children == [leaf.id]
        assert loaded.nodes[leaf.id].depth == 1
        assert loaded.parents[leaf.id] == tree.root_id
        path2 = tmp_path / "tree2.jsonl"
        loaded.snapshot(path2)
        assert path.read_bytes() == path2.read_bytes()


class TestQueryAndTrajectory:
    def test_query_validates_top_k(self):
        with pytest.raises(ValueError):
            Query("q", top_k=0)

    def test_query_validates_now(self):
        with pytest.raises(ValueError):
            Query("q", now=-1.0)

    def test_trajectory_requires_steps(self):
        with pytest.raises(ValueError):
            Trajectory("task", [], "success")

    def test_trajectory_outcome_enum(self):
        with pytest.raises(ValueError):
            Trajectory("task", [("a", "b")], "maybe")

    def test_trajectory_dict_round_trip(self):
        traj = Trajectory("t", [("act", "obs")], "failure", score=0.25)
        assert Trajectory.from_dict(traj.to_dict()) == traj

    def test_record_dict_round_trip(self):
        record = MemoryRecord(id=3, text="x", source="insight", created_at=1.0,
                              last_accessed_at=2.0, access_count=1,
                              importance=9, strength=1.5,
                              embedding=[1.0, 0.0], forgotten=False,
                              meta={"k": "v"})
        assert MemoryRecord.from_dict(record.to_dict()) == record
