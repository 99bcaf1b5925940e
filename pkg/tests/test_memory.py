from __future__ import annotations

import random
import threading
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soma.errors import (
    CorruptRecordError,
    DimensionMismatchError,
    DuplicateEntryError,
    SchemaViolationError,
    UnknownEntryError,
    UnsupportedSchemaVersionError,
)
from soma.memory import (
    Diagnosis,
    MemoryBank,
    MetadataBundle,
    entry_to_record,
    record_to_entry,
)
from soma.serde import canon_dumps

from conftest import DIM, make_entry, random_unit, unit_axis


def test_insert_success_routes_to_success_partition():
    bank = MemoryBank(embedding_dim=DIM)
    bank.insert(make_entry("a", success=True))
    assert len(bank.success_partition) == 1
    assert len(bank.failure_partition) == 0


def test_insert_failure_with_category_none_is_rejected():
    bank = MemoryBank(embedding_dim=DIM)
    bad = make_entry("a", success=False)
    bad = replace(bad, diagnosis=Diagnosis(category="none"))
    with pytest.raises(SchemaViolationError):
        bank.insert(bad)


def test_insert_success_with_failure_category_is_rejected():
    bank = MemoryBank(embedding_dim=DIM)
    bad = make_entry("a", success=True)
    bad = replace(bad, diagnosis=Diagnosis(category="visual_shift", description="x"))
    with pytest.raises(SchemaViolationError):
        bank.insert(bad)


def test_hundred_alternating_inserts_recounted_by_full_scan():
    bank = MemoryBank(embedding_dim=DIM)
    for i in range(100):
        bank.insert(make_entry(f"e{i}", success=(i % 2 == 0), embedding=unit_axis(i)))
    # independent oracle: recount by scanning every stored entry
    entries = bank.entries()
    succ = sum(1 for e in entries if e.success)
    fail = sum(1 for e in entries if not e.success)
    assert (succ, fail) == (50, 50)
    assert len(bank.success_partition) == 50
    assert len(bank.failure_partition) == 50


def test_duplicate_id_rejected():
    bank = MemoryBank(embedding_dim=DIM)
    bank.insert(make_entry("a"))
    with pytest.raises(DuplicateEntryError):
        bank.insert(make_entry("a"))


def test_dimension_mismatch_rejected():
    bank = MemoryBank(embedding_dim=DIM)
    with pytest.raises(DimensionMismatchError):
        bank.insert(make_entry("a", embedding=(1.0, 0.0), dim=2))


def test_non_unit_embedding_rejected():
    bank = MemoryBank(embedding_dim=DIM)
    with pytest.raises(SchemaViolationError):
        bank.insert(make_entry("a", embedding=(0.5,) * DIM))


def test_update_revises_category_without_moving_partitions():
    bank = MemoryBank(embedding_dim=DIM)
    bank.insert(make_entry("f", success=False, category="visual_shift"))
    revised = bank.update(
        "f",
        Diagnosis(category="causal_confusion", description="reattributed"),
        bank.get("f").metadata,
    )
    assert revised.diagnosis.category == "causal_confusion"
    assert len(bank.failure_partition) == 1
    assert len(bank.success_partition) == 0
    assert bank.get("f").success is False


def test_update_identical_values_is_canonically_idempotent(tmp_path):
    bank = MemoryBank(embedding_dim=DIM)
    bank.insert(make_entry("f", success=False, category="visual_shift"))
    before = canon_dumps([entry_to_record(e) for e in bank.entries()])
    entry = bank.get("f")
    bank.update("f", entry.diagnosis, entry.metadata)
    after = canon_dumps([entry_to_record(e) for e in bank.entries()])
    assert before == after


def test_update_unknown_id_rejected():
    bank = MemoryBank(embedding_dim=DIM)
    with pytest.raises(UnknownEntryError):
        bank.update("ghost", Diagnosis(), MetadataBundle())


def test_update_persists_metadata_across_reload(tmp_path):
    bank = MemoryBank(embedding_dim=DIM)
    bank.insert(make_entry("a", max_step=220))
    entry = bank.get("a")
    bank.update("a", entry.diagnosis, replace(entry.metadata, success_max_step=180))
    bank.save(tmp_path / "m")
    reloaded = MemoryBank.load(tmp_path / "m")
    assert reloaded.get("a").metadata.success_max_step == 180


def test_empty_bank_round_trip(tmp_path):
    bank = MemoryBank(embedding_dim=DIM)
    bank.save(tmp_path / "m")
    reloaded = MemoryBank.load(tmp_path / "m")
    assert len(reloaded) == 0
    assert reloaded.embedding_dim == DIM


def test_randomized_round_trip_field_by_field(tmp_path):
    rng = random.Random(11)
    bank = MemoryBank(embedding_dim=DIM)
    for i in range(60):
        bank.insert(
            make_entry(
                f"e{i}",
                success=rng.random() < 0.5,
                embedding=random_unit(rng),
                max_step=rng.randint(1, 400),
                extras={"note": f"v{i}", "weight": rng.randint(0, 9)},
            )
        )
    bank.save(tmp_path / "m")
    reloaded = MemoryBank.load(tmp_path / "m")
    for e in bank.entries():
        assert reloaded.get(e.entry_id) == e


def test_save_load_save_is_byte_identical(tmp_path):
    rng = random.Random(5)
    bank = MemoryBank(embedding_dim=DIM)
    for i in range(40):
        bank.insert(make_entry(f"e{i}", success=rng.random() < 0.4,
                               embedding=random_unit(rng)))
    bank.save(tmp_path / "m1")
    MemoryBank.load(tmp_path / "m1").save(tmp_path / "m2")
    assert (tmp_path / "m1" / "entries").read_bytes() == (tmp_path / "m2" / "entries").read_bytes()
    assert (tmp_path / "m1" / "manifest").read_bytes() == (tmp_path / "m2" / "manifest").read_bytes()


def test_truncated_record_reports_line_number(tmp_path):
    bank = MemoryBank(embedding_dim=DIM)
    for i in range(3):
        bank.insert(make_entry(f"e{i}"))
    bank.save(tmp_path / "m")
    entries_path = tmp_path / "m" / "entries"
    text = entries_path.read_text()
    entries_path.write_text(text[: len(text) - 40])  # cut the last record mid-line
    with pytest.raises(CorruptRecordError) as err:
        MemoryBank.load(tmp_path / "m")
    assert err.value.line == 3


def test_unsupported_schema_version(tmp_path):
    bank = MemoryBank(embedding_dim=DIM)
    bank.save(tmp_path / "m")
    manifest = tmp_path / "m" / "manifest"
    manifest.write_text(manifest.read_text().replace('"schema_version":1', '"schema_version":99'))
    with pytest.raises(UnsupportedSchemaVersionError):
        MemoryBank.load(tmp_path / "m")


def test_created_at_reproduces_insertion_order():
    rng = random.Random(3)
    bank = MemoryBank(embedding_dim=DIM)
    ids = [f"e{i}" for i in range(30)]
    for i, entry_id in enumerate(ids):
        bank.insert(make_entry(entry_id, success=rng.random() < 0.5,
                               embedding=random_unit(rng)))
    ordered = sorted(bank.entries(), key=lambda e: e.created_at)
    assert [e.entry_id for e in ordered] == ids


def test_entry_record_round_trip():
    entry = make_entry("x", success=False, category="temporal_compounding",
                       plan=(("chaining_step", {"segments": []}),),
                       extras={"k": "v"})
    stored = replace(entry, created_at=7)
    assert record_to_entry(entry_to_record(stored)) == stored


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, DIM - 1)), min_size=1, max_size=40))
def test_partition_purity_under_random_mutations(ops):
    bank = MemoryBank(embedding_dim=DIM)
    rng = random.Random(1234)
    for i, (success, axis) in enumerate(ops):
        bank.insert(make_entry(f"e{i}", success=success, embedding=unit_axis(axis)))
        if rng.random() < 0.3:
            victim = rng.choice(bank.entries())
            category = "none" if victim.success else "execution_stagnation"
            description = "" if victim.success else "noted"
            bank.update(victim.entry_id,
                        Diagnosis(category=category, description=description,
                                  intervention_plan=victim.diagnosis.intervention_plan),
                        victim.metadata)
        # purity scan after every mutation
        assert all(e.success for e in bank.success_partition)
        assert all(not e.success for e in bank.failure_partition)


def test_concurrent_readers_never_see_torn_entries():
    bank = MemoryBank(embedding_dim=DIM)
    for i in range(20):
        bank.insert(make_entry(f"e{i}", success=(i % 2 == 0), embedding=unit_axis(i)))
    stop = threading.Event()
    failures = []

    def reader():
        while not stop.is_set():
            for e in bank.entries():
                if e.success != (e.diagnosis.category == "none"):
                    failures.append(e.entry_id)

    threads = [threading.Thread(target=reader) for _ in range(3)]
    for t in threads:
        t.start()
    for round_ in range(200):
        victim = bank.get(f"e{round_ % 20}")
        category = "none" if victim.success else "visual_shift"
        description = "" if victim.success else f"pass {round_}"
        bank.update(victim.entry_id,
                    Diagnosis(category=category, description=description),
                    replace(victim.metadata, success_max_step=round_ + 1))
    stop.set()
    for t in threads:
        t.join()
    assert not failures
