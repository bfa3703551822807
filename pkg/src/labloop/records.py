"""Append-only, hash-chained record store.

Every event and scientific result lands here as a Record. Records of one
chain (keyed by run or campaign id) are linked: each record's hash covers
its predecessor's hash, so any tampering with stored bytes is detectable
at the earliest modified position.

On-disk format: one record per line under <root>/records/<chain>.log, each
line the canonical serialization of the full record, LF-delimited. The
in-memory index is rebuilt from these files on startup.
"""

import hashlib
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from .canonical import Scalar, canonicalize, scalar_map

GENESIS_HASH = "0" * 64

_CHAIN_KEY_RE = re.compile(r"^[A-Za-z0-9._-]{1,128}$")


class StorageError(Exception):
    """Record could not be made durable or read back."""


@dataclass(frozen=True)
class Record:
    seq: int
    run_id: str
    ts: int
    kind: str
    payload: dict[str, Scalar]
    prev_hash: str
    hash: str

    def body(self) -> dict:
        """The hashed portion: everything except the chain linkage fields."""
        return {
            "kind": self.kind,
            "payload": self.payload,
            "run_id": self.run_id,
            "seq": self.seq,
            "ts": self.ts,
        }

    def to_dict(self) -> dict:
        return {
            "hash": self.hash,
            "kind": self.kind,
            "payload": self.payload,
            "prev_hash": self.prev_hash,
            "run_id": self.run_id,
            "seq": self.seq,
            "ts": self.ts,
        }


@dataclass(frozen=True)
class VerificationReport:
    chain: str
    ok: bool
    length: int
    first_bad_seq: int | None = None
    reason: str | None = None


def record_hash(prev_hash: str, body: dict) -> str:
    digest = hashlib.sha256()
    digest.update(prev_hash.encode("ascii"))
    digest.update(canonicalize(body))
    return digest.hexdigest()


def verify_records(chain: str, lines: list[bytes | str | dict]) -> VerificationReport:
    """Verify a chain from raw stored lines (bytes/str) or parsed dicts.

    The first failing position is reported by chain index, not stored seq —
    a tampered line may not parse at all.
    """
    import json

    prev = GENESIS_HASH
    for index, line in enumerate(lines):
        if isinstance(line, dict):
            parsed = line
        else:
            try:
                parsed = json.loads(line)
            except Exception:
                return VerificationReport(chain, False, len(lines), index, "unparseable record")
        try:
            body = {
                "kind": parsed["kind"],
                "payload": parsed["payload"],
                "run_id": parsed["run_id"],
                "seq": parsed["seq"],
                "ts": parsed["ts"],
            }
            stored_prev = parsed["prev_hash"]
            stored_hash = parsed["hash"]
        except (KeyError, TypeError):
            return VerificationReport(chain, False, len(lines), index, "missing field")
        if parsed.get("seq") != index:
            return VerificationReport(chain, False, len(lines), index, "sequence break")
        if stored_prev != prev:
            return VerificationReport(chain, False, len(lines), index, "broken linkage")
        try:
            expected = record_hash(stored_prev, body)
        except Exception:
            return VerificationReport(chain, False, len(lines), index, "uncanonical body")
        if expected != stored_hash:
            return VerificationReport(chain, False, len(lines), index, "hash mismatch")
        prev = stored_hash
    return VerificationReport(chain, True, len(lines))


class RecordStore:
    """Durable per-chain record chains plus an in-memory index.

    Appends to one chain are serialized under the store lock; queries see a
    consistent prefix. There is deliberately no update or delete surface.
    """

    def __init__(self, root: str | Path, fsync: bool = True):
        self._dir = Path(root) / "records"
        self._dir.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._lock = threading.Lock()
        self._new_record = threading.Condition(self._lock)
        self._chains: dict[str, list[Record]] = {}
        self._load()

    def _path(self, chain: str) -> Path:
        return self._dir / f"{chain}.log"

    def _load(self) -> None:
        import json

        for path in sorted(self._dir.glob("*.log")):
            chain = path.stem
            records: list[Record] = []
            try:
                with path.open("rb") as fh:
                    for raw in fh:
                        raw = raw.rstrip(b"\n")
                        if not raw:
                            continue
                        parsed = json.loads(raw.decode("utf-8"))
                        records.append(
                            Record(
                                seq=parsed["seq"],
                                run_id=parsed["run_id"],
                                ts=parsed["ts"],
                                kind=parsed["kind"],
                                payload=parsed["payload"],
                                prev_hash=parsed["prev_hash"],
                                hash=parsed["hash"],
                            )
                        )
            except (OSError, ValueError, KeyError) as exc:
                raise StorageError(f"cannot load chain {chain!r}: {exc}") from exc
            self._chains[chain] = records

    def append(self, run_id: str, kind: str, payload: dict[str, Scalar], ts: int) -> Record:
        if not _CHAIN_KEY_RE.match(run_id):
            raise StorageError(f"invalid chain key {run_id!r}")
        scalar_map(payload)
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise StorageError(f"ts must be an integer, got {type(ts).__name__}")
        with self._new_record:
            chain = self._chains.setdefault(run_id, [])
            seq = len(chain)
            prev = chain[-1].hash if chain else GENESIS_HASH
            body = {"kind": kind, "payload": payload, "run_id": run_id, "seq": seq, "ts": ts}
            record = Record(
                seq=seq,
                run_id=run_id,
                ts=ts,
                kind=kind,
                payload=dict(payload),
                prev_hash=prev,
                hash=record_hash(prev, body),
            )
            line = canonicalize(record.to_dict()) + b"\n"
            try:
                with self._path(run_id).open("ab") as fh:
                    fh.write(line)
                    fh.flush()
                    if self._fsync:
                        os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"append to chain {run_id!r} failed: {exc}") from exc
            chain.append(record)
            self._new_record.notify_all()
            return record

    def chains(self) -> list[str]:
        with self._lock:
            return sorted(self._chains)

    def chain_length(self, run_id: str) -> int:
        with self._lock:
            return len(self._chains.get(run_id, []))

    def head_hash(self, run_id: str) -> str:
        """Hash of the last record in a chain (genesis hash when empty)."""
        with self._lock:
            chain = self._chains.get(run_id, [])
            return chain[-1].hash if chain else GENESIS_HASH

    def query(
        self,
        run_id: str | None = None,
        kind: str | None = None,
        seq_range: tuple[int, int] | None = None,
    ) -> list[Record]:
        """Matching records in (run_id, seq) order. seq_range is [lo, hi)."""
        with self._lock:
            if run_id is not None:
                selected = list(self._chains.get(run_id, []))
            else:
                selected = [r for key in sorted(self._chains) for r in self._chains[key]]
        if kind is not None:
            selected = [r for r in selected if r.kind == kind]
        if seq_range is not None:
            lo, hi = seq_range
            selected = [r for r in selected if lo <= r.seq < hi]
        return selected

    def wait_for(self, run_id: str, seq: int, timeout: float | None = None) -> Record | None:
        """Block until the chain holds a record with this seq; None on timeout."""
        with self._new_record:
            while True:
                chain = self._chains.get(run_id, [])
                if len(chain) > seq:
                    return chain[seq]
                if not self._new_record.wait(timeout):
                    return None

    def verify_chain(self, run_id: str) -> VerificationReport:
        """Recompute every hash from the stored bytes; an empty or missing
        chain verifies vacuously."""
        path = self._path(run_id)
        if not path.exists():
            return VerificationReport(run_id, True, 0)
        try:
            raw_lines = [ln for ln in path.read_bytes().split(b"\n") if ln]
        except OSError as exc:
            raise StorageError(f"cannot read chain {run_id!r}: {exc}") from exc
        return verify_records(run_id, raw_lines)
