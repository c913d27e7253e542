"""Independent reader/writer for the topoforge container and manifest formats.

Implemented from the documented layout rather than by importing the
producer package, so this doubles as a cross-check of the format spec:

    header, 64 bytes little-endian:
        magic "TPFG" | u32 version | u32 nx | u32 ny | u32 channels | u32 records
    then per record the float32 planes in order
        design (ny, nx), bc_x, bc_y, f_x, f_y, vf, cx  (each (nx+1, ny+1))
    single-channel files carry just the design plane.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TPFG"
VERSION = 1
HEADER_SIZE = 64
CHANNELS = ("design", "bc_x", "bc_y", "f_x", "f_y", "vf", "cx")
_HEADER = struct.Struct("<4sIIIII")


class ShardFormatError(RuntimeError):
    pass


def _plane_shape(name: str, nx: int, ny: int) -> tuple[int, int]:
    return (ny, nx) if name == "design" else (nx + 1, ny + 1)


def read_shard(path: str | Path) -> tuple[int, int, list[dict[str, np.ndarray]]]:
    """Returns (nx, ny, records); each record maps channel name to plane."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise ShardFormatError(f"{path}: truncated header")
    magic, version, nx, ny, n_channels, n_records = _HEADER.unpack(raw[: _HEADER.size])
    if magic != MAGIC or version != VERSION:
        raise ShardFormatError(f"{path}: unsupported container")
    names = CHANNELS if n_channels == len(CHANNELS) else CHANNELS[:1]
    if n_channels not in (1, len(CHANNELS)):
        raise ShardFormatError(f"{path}: unexpected channel count {n_channels}")
    records = []
    offset = HEADER_SIZE
    for _ in range(n_records):
        planes = {}
        for name in names:
            shape = _plane_shape(name, nx, ny)
            count = shape[0] * shape[1]
            planes[name] = np.frombuffer(
                raw, dtype="<f4", count=count, offset=offset
            ).reshape(shape)
            offset += 4 * count
        records.append(planes)
    return nx, ny, records


def write_shard(
    path: str | Path,
    nx: int,
    ny: int,
    records: list[dict[str, np.ndarray]],
    channels: tuple[str, ...] = CHANNELS,
) -> list[str]:
    """Writes records and returns their sha256 checksums."""
    header = _HEADER.pack(MAGIC, VERSION, nx, ny, len(channels), len(records))
    chunks = [header.ljust(HEADER_SIZE, b"\x00")]
    checksums = []
    for record in records:
        blob = b"".join(
            np.ascontiguousarray(record[name], dtype="<f4").tobytes() for name in channels
        )
        checksums.append(hashlib.sha256(blob).hexdigest())
        chunks.append(blob)
    Path(path).write_bytes(b"".join(chunks))
    return checksums


def write_design(path: str | Path, design: np.ndarray) -> str:
    design = np.asarray(design, dtype=np.float32)
    ny, nx = design.shape
    return write_shard(path, nx, ny, [{"design": design}], channels=("design",))[0]


def write_manifest(
    out_dir: str | Path,
    split: str,
    nx: int,
    ny: int,
    shard_entries: list[dict],
    record_metas: list[list[dict]],
) -> Path:
    """Writes per-shard meta sidecars plus the manifest JSON."""
    out_dir = Path(out_dir)
    record_count = 0
    for entry, metas in zip(shard_entries, record_metas):
        meta = {"shard": int(entry["file"].split("-")[-1].split(".")[0]), "records": metas}
        (out_dir / entry["meta"]).write_text(
            json.dumps(meta, sort_keys=True, separators=(",", ":"))
        )
        record_count += entry["records"]
    manifest = {
        "format_version": 1,
        "split": split,
        "nx": nx,
        "ny": ny,
        "channels": list(CHANNELS),
        "record_count": record_count,
        "base_seed": 0,
        "seed_range": [0, max(record_count - 1, 0)],
        "config_fingerprint": "synthetic",
        "config": {},
        "shards": shard_entries,
        "rejected": [],
        "acceptance": {"accepted": record_count, "rejected": 0, "rate": 1.0},
    }
    path = out_dir / f"{split}-manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")))
    return path


def load_dataset(manifest_path: str | Path):
    """Reads every record of a manifest: (nx, ny, planes list, labels list)."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    nx, ny = manifest["nx"], manifest["ny"]
    planes: list[dict[str, np.ndarray]] = []
    labels: list[dict] = []
    for entry in manifest["shards"]:
        snx, sny, records = read_shard(manifest_path.parent / entry["file"])
        if (snx, sny) != (nx, ny):
            raise ShardFormatError(f"{entry['file']}: grid mismatch with manifest")
        planes.extend(records)
        meta = json.loads((manifest_path.parent / entry["meta"]).read_text())
        labels.extend(r["labels"] for r in meta["records"])
    if len(planes) != manifest["record_count"]:
        raise ShardFormatError(f"{manifest_path}: record count mismatch")
    return nx, ny, planes, labels
