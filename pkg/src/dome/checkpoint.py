"""Single-file checkpoint archive.

Layout::

    b"DOMECKPT"                      8-byte magic
    uint64 little-endian            manifest length in bytes
    manifest                        UTF-8 JSON, keys sorted
    blocks                          little-endian float32, row-major, concatenated

The manifest's ``blocks`` list gives, in file order, each block's name, shape
and byte offset relative to the start of the block area.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint

MAGIC = b"DOMECKPT"
FORMAT_VERSION = 1


def write_archive(path, manifest: dict, blocks: dict[str, np.ndarray]) -> None:
    entries = []
    payload = []
    offset = 0
    for name, arr in blocks.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        payload.append(data)
        offset += len(data)
    manifest = dict(manifest, format_version=FORMAT_VERSION, blocks=entries)
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for chunk in payload:
            fh.write(chunk)
    tmp.replace(path)


def read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint archive")
    (n,) = struct.unpack("<Q", raw[8:16])
    if 16 + n > len(raw):
        raise CorruptCheckpoint(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {manifest.get('format_version')!r}")
    base = 16 + n
    blocks = {}
    end = base
    for entry in manifest.get("blocks", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = base + entry["offset"]
        end = start + 4 * count
        if end > len(raw):
            raise CorruptCheckpoint(f"{path}: truncated block {entry['name']!r}")
        blocks[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=start).reshape(shape).astype(np.float64)
    if end != len(raw):
        raise CorruptCheckpoint(f"{path}: trailing bytes after last block")
    return manifest, blocks
