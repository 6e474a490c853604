"""Versioned container used for model files and accumulator checkpoints.

Layout::

    TGPC/1\\n
    <header: one line of canonical JSON>\\n
    <payload: raw little-endian float64 arrays, back to back>

The header lists every array with its shape, byte offset into the
payload and SHA-256 digest, plus free-form metadata. Canonical JSON
(sorted keys, fixed separators, shortest round-trip float repr) makes
writing the same content twice produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"TGPC/1\n"


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes()
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "offset": offset,
            "nbytes": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        chunks.append(raw)
        offset += len(raw)
    header = {"kind": kind, "meta": meta, "arrays": entries}
    return MAGIC + _canonical(header) + b"\n" + b"".join(chunks)


def loads(blob: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if not blob.startswith(MAGIC):
        raise DataError("not a TGP container (bad magic)")
    rest = blob[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise DataError("truncated container header")
    try:
        header = json.loads(rest[:nl])
    except json.JSONDecodeError as exc:
        raise DataError("corrupt container header") from exc
    if kind is not None and header.get("kind") != kind:
        raise DataError(f"expected a {kind!r} container, found {header.get('kind')!r}")
    payload = rest[nl + 1:]
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"] or hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise DataError(f"array {e['name']!r} is truncated or corrupt")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(float)
    return header["meta"], arrays


def write(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    try:
        Path(path).write_bytes(dumps(kind, meta, arrays))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def read(path, kind: str | None = None):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return loads(blob, kind)
