"""MVOL: the little-endian binary container for labeled CT volumes.

Layout: magic "MVOL1\\0" | u16 version=1 | u32 nx, ny, nz |
f64 sx, sy, sz (mm) | u8 z_increases_toward_head | 3 reserved zero
bytes | int16 HU payload (x fastest, z slowest) | uint8 label payload.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagic, IllegalLabel, NonPositiveSpacing, TruncatedFile
from .volume import LabeledVolume

MAGIC = b"MVOL1\x00"
_HEADER = struct.Struct("<6sHIIIdddB3s")
HEADER_SIZE = _HEADER.size  # 48 bytes


def read_mvol(path):
    """Parse an MVOL file into (LabeledVolume, z_increases_toward_head)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < HEADER_SIZE:
        raise TruncatedFile(
            f"{path}: header needs {HEADER_SIZE} bytes, file has {len(data)}")
    (magic, version, nx, ny, nz, sx, sy, sz,
     z_up, reserved) = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != 1:
        raise BadMagic(f"{path}: unsupported version {version}")
    if sx <= 0 or sy <= 0 or sz <= 0:
        raise NonPositiveSpacing(f"{path}: spacing ({sx}, {sy}, {sz})")
    n = nx * ny * nz
    expected = HEADER_SIZE + 2 * n + n
    if len(data) != expected:
        raise TruncatedFile(
            f"{path}: expected {expected} bytes for dims "
            f"({nx}, {ny}, {nz}), got {len(data)}")
    hu_flat = np.frombuffer(data, dtype="<i2", count=n, offset=HEADER_SIZE)
    lab_flat = np.frombuffer(data, dtype=np.uint8, count=n,
                             offset=HEADER_SIZE + 2 * n)
    bad = np.flatnonzero(lab_flat > 4)
    if bad.size:
        i = int(bad[0])
        x, y, z = i % nx, (i // nx) % ny, i // (nx * ny)
        raise IllegalLabel(
            f"{path}: label code {lab_flat[i]} at voxel ({x}, {y}, {z})")
    # payload is x-fastest: flat index = x + nx*(y + ny*z)
    hu = hu_flat.reshape(nz, ny, nx).transpose(2, 1, 0)
    labels = lab_flat.reshape(nz, ny, nx).transpose(2, 1, 0)
    vol = LabeledVolume(hu=np.ascontiguousarray(hu),
                        labels=np.ascontiguousarray(labels),
                        spacing=(sx, sy, sz))
    return vol, bool(z_up)


def write_mvol(path, vol: LabeledVolume, z_increases_toward_head=True):
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    header = _HEADER.pack(MAGIC, 1, nx, ny, nz, sx, sy, sz,
                          1 if z_increases_toward_head else 0, b"\x00" * 3)
    hu_flat = np.ascontiguousarray(
        vol.hu.transpose(2, 1, 0), dtype="<i2")
    lab_flat = np.ascontiguousarray(
        vol.labels.transpose(2, 1, 0), dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(hu_flat.tobytes())
        fh.write(lab_flat.tobytes())


def read_vertebral_map(path):
    """Parse a vertebral map text file: one "LEVEL,z_index" line per
    vertebra, returned as {vertebra: z}."""
    centroids = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                name, z = line.split(",")
                centroids[name.strip()] = int(z)
            except ValueError:
                raise TruncatedFile(
                    f"{path}:{lineno}: malformed line {line!r}") from None
    return centroids


def write_vertebral_map(path, centroids):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name in ("T12", "L1", "L2", "L3", "L4"):
            fh.write(f"{name},{centroids[name]}\n")
