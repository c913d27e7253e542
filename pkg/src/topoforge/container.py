"""Binary tensor container for designs and condition channels (".tpfg").

Layout (all integers little-endian):

    header, 64 bytes:
        0   4s   magic b"TPFG"
        4   u32  format version (currently 1)
        8   u32  nx  (elements along x)
        12  u32  ny  (elements along y)
        16  u32  channel count
        20  u32  record count
        24  40x  reserved, zero

    then `record count` records, each the concatenation of its channel
    planes as little-endian float32, C order.

Channel names fix both the order and the plane shape: the "design"
channel is the raw element image with shape (ny, nx); every other channel
lives on the node grid with shape (nx+1, ny+1).  Files are written to a
temp path and renamed, so a reader never sees a half-written container.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAGIC = b"TPFG"
FORMAT_VERSION = 1
HEADER_SIZE = 64
RECORD_CHANNELS = ("design", "bc_x", "bc_y", "f_x", "f_y", "vf", "cx")
DESIGN_ONLY = ("design",)

_HEADER = struct.Struct("<4sIIIII")


class ContainerError(RuntimeError):
    """Malformed or inconsistent container file."""


def plane_shape(name: str, nx: int, ny: int) -> tuple[int, int]:
    if name == "design":
        return (ny, nx)
    return (nx + 1, ny + 1)


def record_nbytes(channels: Sequence[str], nx: int, ny: int) -> int:
    return sum(4 * int(np.prod(plane_shape(c, nx, ny))) for c in channels)


def record_to_bytes(record: dict[str, np.ndarray], channels: Sequence[str], nx: int, ny: int) -> bytes:
    chunks = []
    for name in channels:
        if name not in record:
            raise ContainerError(f"record is missing channel {name!r}")
        arr = np.ascontiguousarray(record[name], dtype="<f4")
        if arr.shape != plane_shape(name, nx, ny):
            raise ContainerError(
                f"channel {name!r} shape {arr.shape} != {plane_shape(name, nx, ny)}"
            )
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def record_checksum(record_bytes: bytes) -> str:
    return hashlib.sha256(record_bytes).hexdigest()


@dataclass(frozen=True)
class ContainerHeader:
    nx: int
    ny: int
    channels: tuple[str, ...]
    record_count: int


def _channels_for_count(count: int) -> tuple[str, ...]:
    if count == len(RECORD_CHANNELS):
        return RECORD_CHANNELS
    if count == 1:
        return DESIGN_ONLY
    raise ContainerError(f"unsupported channel count {count}")


def write_container(
    path: str | os.PathLike,
    nx: int,
    ny: int,
    records: Sequence[dict[str, np.ndarray]],
    channels: Sequence[str] = RECORD_CHANNELS,
) -> list[str]:
    """Write records atomically; returns the per-record checksums."""
    channels = tuple(channels)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, nx, ny, len(channels), len(records))
    header = header.ljust(HEADER_SIZE, b"\x00")
    checksums = []
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        for record in records:
            blob = record_to_bytes(record, channels, nx, ny)
            checksums.append(record_checksum(blob))
            fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return checksums


def read_header(path: str | os.PathLike) -> ContainerHeader:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise ContainerError(f"{path}: truncated header")
    magic, version, nx, ny, n_channels, n_records = _HEADER.unpack(raw[: _HEADER.size])
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    return ContainerHeader(nx=nx, ny=ny, channels=_channels_for_count(n_channels), record_count=n_records)


def read_record_planes(
    path: str | os.PathLike,
    index: int,
    expected_checksum: str | None = None,
) -> dict[str, np.ndarray]:
    """Read one record's planes; verifies the checksum when given."""
    header = read_header(path)
    if not (0 <= index < header.record_count):
        raise IndexError(
            f"record {index} out of range for {path} ({header.record_count} records)"
        )
    nbytes = record_nbytes(header.channels, header.nx, header.ny)
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE + index * nbytes)
        blob = fh.read(nbytes)
    if len(blob) != nbytes:
        raise ContainerError(f"{path}: truncated record {index}")
    if expected_checksum is not None and record_checksum(blob) != expected_checksum:
        raise ContainerError(f"{path}: checksum mismatch on record {index}")
    planes = {}
    offset = 0
    for name in header.channels:
        shape = plane_shape(name, header.nx, header.ny)
        count = int(np.prod(shape))
        planes[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float32)
        )
        offset += 4 * count
    return planes


def write_design(path: str | os.PathLike, design: np.ndarray) -> str:
    """Write a single-channel design file; returns its checksum."""
    design = np.asarray(design, dtype=float)
    ny, nx = design.shape
    return write_container(path, nx, ny, [{"design": design}], channels=DESIGN_ONLY)[0]


def read_design(path: str | os.PathLike) -> np.ndarray:
    """Read the design plane of a single- or seven-channel file."""
    planes = read_record_planes(path, 0)
    return planes["design"].astype(float)
