import hashlib
import json
import threading

import pytest

from labloop.records import (
    GENESIS_HASH,
    Record,
    RecordStore,
    record_hash,
    verify_records,
)


def independent_hash(prev_hash: str, body: dict) -> str:
    """Recompute a record hash with nothing but hashlib and json."""
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"),
                           ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(prev_hash.encode("ascii") + canonical).hexdigest()


def test_genesis_is_64_zeros():
    assert GENESIS_HASH == "0" * 64
    assert len(GENESIS_HASH) == 64


def test_record_hash_matches_independent_recompute():
    body = {"kind": "k", "payload": {"x": 1}, "run_id": "r", "seq": 0, "ts": 7}
    assert record_hash(GENESIS_HASH, body) == independent_hash(GENESIS_HASH, body)


def test_append_links_and_sequences(store):
    first = store.append("run-a", "Started", {"n": 1}, ts=10)
    second = store.append("run-a", "Finished", {"n": 2}, ts=11)
    assert (first.seq, second.seq) == (0, 1)
    assert first.prev_hash == GENESIS_HASH
    assert second.prev_hash == first.hash
    assert store.head_hash("run-a") == second.hash
    assert store.chain_length("run-a") == 2


def test_chains_are_independent(store):
    a = store.append("run-a", "K", {}, ts=0)
    b = store.append("run-b", "K", {}, ts=0)
    assert a.prev_hash == GENESIS_HASH
    assert b.prev_hash == GENESIS_HASH
    assert sorted(store.chains()) == ["run-a", "run-b"]


def test_rejects_non_scalar_payload(store):
    with pytest.raises((TypeError, ValueError)):
        store.append("run-a", "K", {"bad": 1.5}, ts=0)
    with pytest.raises((TypeError, ValueError)):
        store.append("run-a", "K", {"bad": {"nested": 1}}, ts=0)


def test_persistence_across_reopen(tmp_path):
    root = tmp_path / "records"
    store = RecordStore(root, fsync=True)
    store.append("run-a", "K", {"i": 0}, ts=0)
    head = store.append("run-a", "K", {"i": 1}, ts=1).hash

    reopened = RecordStore(root)
    assert reopened.chain_length("run-a") == 2
    assert reopened.head_hash("run-a") == head
    third = reopened.append("run-a", "K", {"i": 2}, ts=2)
    assert third.seq == 2
    assert reopened.verify_chain("run-a").ok


def test_verify_ok_and_empty_chain(store):
    for i in range(5):
        store.append("run-a", "K", {"i": i}, ts=i)
    report = store.verify_chain("run-a")
    assert report.ok and report.length == 5
    assert store.verify_chain("never-written").ok


def test_single_byte_tamper_detected(tmp_path):
    root = tmp_path / "records"
    store = RecordStore(root, fsync=False)
    for i in range(8):
        store.append("run-a", "K", {"i": i, "tag": "untouched"}, ts=i)
    path = root / "records" / "run-a.log"
    raw = bytearray(path.read_bytes())
    lines = path.read_bytes().split(b"\n")
    offset = len(lines[0]) + 1 + 12  # somewhere inside the second record
    raw[offset] ^= 0x01
    path.write_bytes(bytes(raw))

    report = RecordStore(root).verify_chain("run-a")
    assert not report.ok
    assert report.first_bad_seq == 1
    assert report.reason


def test_truncation_detected(tmp_path):
    root = tmp_path / "records"
    store = RecordStore(root, fsync=False)
    for i in range(4):
        store.append("run-a", "K", {"i": i}, ts=i)
    path = root / "records" / "run-a.log"
    lines = [ln for ln in path.read_bytes().split(b"\n") if ln]
    del lines[2]
    path.write_bytes(b"\n".join(lines) + b"\n")

    report = RecordStore(root).verify_chain("run-a")
    assert not report.ok
    assert report.first_bad_seq == 2


def test_verify_accepts_record_dicts(store):
    for i in range(3):
        store.append("run-a", "K", {"i": i}, ts=i)
    dicts = [r.to_dict() for r in store.query(run_id="run-a")]
    assert verify_records("run-a", dicts).ok
    dicts[1]["payload"]["i"] = 99
    report = verify_records("run-a", dicts)
    assert not report.ok and report.first_bad_seq == 1


def test_verification_covers_content_not_formatting(tmp_path):
    """Verification is over the recorded data: a re-serialization with loose
    whitespace but identical fields still verifies, while changing any field
    breaks the hash."""
    root = tmp_path / "records"
    store = RecordStore(root, fsync=False)
    record = store.append("run-a", "K", {"i": 0}, ts=0)
    loose = json.dumps(record.to_dict(), sort_keys=True, indent=1).replace("\n", "")
    path = root / "records" / "run-a.log"
    path.write_text(loose + "\n")
    assert RecordStore(root).verify_chain("run-a").ok

    doctored = record.to_dict()
    doctored["ts"] = 999
    path.write_text(json.dumps(doctored, sort_keys=True) + "\n")
    report = RecordStore(root).verify_chain("run-a")
    assert not report.ok and report.reason == "hash mismatch"


def test_tampered_hash_field_detected(tmp_path):
    root = tmp_path / "records"
    store = RecordStore(root, fsync=False)
    store.append("run-a", "K", {"i": 0}, ts=0)
    store.append("run-a", "K", {"i": 1}, ts=1)
    path = root / "records" / "run-a.log"
    lines = [ln for ln in path.read_bytes().split(b"\n") if ln]
    first = json.loads(lines[0])
    first["hash"] = ("0" if first["hash"][0] != "0" else "1") + first["hash"][1:]
    lines[0] = json.dumps(first, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False).encode()
    path.write_bytes(b"\n".join(lines) + b"\n")
    report = RecordStore(root).verify_chain("run-a")
    assert not report.ok and report.first_bad_seq == 0


def test_query_filters(store):
    store.append("run-a", "X", {}, ts=0)
    store.append("run-a", "Y", {}, ts=1)
    store.append("run-b", "X", {}, ts=2)
    assert [r.kind for r in store.query(run_id="run-a")] == ["X", "Y"]
    assert [r.run_id for r in store.query(kind="X")] == ["run-a", "run-b"]
    assert [r.seq for r in store.query(run_id="run-a", seq_range=(1, 2))] == [1]
    assert store.query(run_id="missing") == []


def test_wait_for_timeout_and_wakeup(store):
    assert store.wait_for("run-a", 0, timeout=0.05) is None

    got: list[Record] = []

    def waiter():
        record = store.wait_for("run-a", 0, timeout=5.0)
        if record is not None:
            got.append(record)

    thread = threading.Thread(target=waiter)
    thread.start()
    store.append("run-a", "K", {}, ts=0)
    thread.join(timeout=5.0)
    assert got and got[0].seq == 0
