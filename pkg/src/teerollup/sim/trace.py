"""Versioned, hash-chained JSON-lines trace.

Line 0 is the header, the last line is an ``end`` record carrying the record
count. Each line stores ``hc = H(previous hc || canonical JSON of the line
without hc)``, so any edit, reordering or truncation is detected on load.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable

TRACE_VERSION = 1


class TraceIntegrityError(Exception):
    pass


def _canonical(rec: dict) -> bytes:
    return json.dumps(rec, sort_keys=True, separators=(",", ":")).encode()


def hexify(v: Any) -> Any:
    if isinstance(v, (bytes, bytearray)):
        return bytes(v).hex()
    if isinstance(v, dict):
        return {str(k): hexify(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [hexify(x) for x in v]
    if hasattr(v, "encode") and not isinstance(v, str):
        return v.encode().hex()
    return v


class Tracer:
    def __init__(self, header: dict):
        self.records: list[dict] = [{"kind": "header", "version": TRACE_VERSION, **hexify(header)}]

    def add(self, kind: str, t: float, **data) -> None:
        self.records.append({"kind": kind, "t": t, **hexify(data)})

    def lines(self) -> Iterable[str]:
        hc = b"\x00" * 32
        body = self.records + [{"kind": "end", "count": len(self.records)}]
        for rec in body:
            hc = hashlib.sha256(hc + _canonical(rec)).digest()
            yield json.dumps({**rec, "hc": hc.hex()}, sort_keys=True, separators=(",", ":"))

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def loads(text: str) -> list[dict]:
    """Parse and integrity-check a trace; returns records without the end marker."""
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise TraceIntegrityError("empty trace")
    hc = b"\x00" * 32
    records = []
    for i, line in enumerate(lines):
        try:
            rec = json.loads(line)
        except ValueError:
            raise TraceIntegrityError(f"line {i}: not JSON") from None
        if not isinstance(rec, dict) or "hc" not in rec:
            raise TraceIntegrityError(f"line {i}: missing hash link")
        claimed = rec.pop("hc")
        hc = hashlib.sha256(hc + _canonical(rec)).digest()
        if hc.hex() != claimed:
            raise TraceIntegrityError(f"line {i}: hash chain broken")
        records.append(rec)
    if records[0].get("kind") != "header" or records[0].get("version") != TRACE_VERSION:
        raise TraceIntegrityError("missing or unsupported header")
    end = records.pop()
    if end.get("kind") != "end" or end.get("count") != len(records):
        raise TraceIntegrityError("trace truncated")
    return records


def load(path: str | Path) -> list[dict]:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise TraceIntegrityError(f"cannot read trace: {exc}") from None
    return loads(text)
