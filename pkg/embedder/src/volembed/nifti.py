"""Minimal single-file NIfTI-1 reader.

Covers what an extraction front end needs and nothing more: the 348-byte
NIfTI-1 header, both endiannesses, the common scalar datatypes, optional
scl_slope/scl_inter intensity scaling, and transparent gzip. Volumes are
returned as (slices, rows, cols) float32 arrays with the axial dimension
first, slices ordered by ascending axial index.

Paired .hdr/.img files and NIfTI-2 are rejected; this reader handles the
single-file .nii / .nii.gz layout only.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"

# NIfTI datatype code -> numpy dtype (endianness applied separately)
_DATATYPES = {
    2: "u1",    # uint8
    4: "i2",    # int16
    8: "i4",    # int32
    16: "f4",   # float32
    64: "f8",   # float64
    256: "i1",  # int8
    512: "u2",  # uint16
    768: "u4",  # uint32
}


def _read_raw(path: Path) -> bytes:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc})") from None
    if blob[:2] == b"\x1f\x8b" or path.suffix == ".gz":
        try:
            blob = gzip.decompress(blob)
        except (OSError, EOFError) as exc:
            raise InputError(f"{path}: gzip stream is corrupt ({exc})") from None
    return blob


def read_volume(path: str | Path) -> np.ndarray:
    """Load one volume as float32, shaped (num_slices, rows, cols)."""
    path = Path(path)
    blob = _read_raw(path)
    if len(blob) < HEADER_SIZE:
        raise InputError(f"{path}: file shorter than a NIfTI-1 header")

    # sizeof_hdr doubles as the endianness probe
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr == HEADER_SIZE:
        endian = "<"
    elif struct.unpack_from(">i", blob, 0)[0] == HEADER_SIZE:
        endian = ">"
    else:
        raise InputError(f"{path}: not a NIfTI-1 file (sizeof_hdr != 348)")

    magic = blob[344:348]
    if magic == _MAGIC_PAIR:
        raise InputError(f"{path}: paired .hdr/.img layout is not supported")
    if magic != _MAGIC_SINGLE:
        raise InputError(f"{path}: bad magic {magic!r} at offset 344")

    dim = struct.unpack_from(f"{endian}8h", blob, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise InputError(f"{path}: header dim[0]={ndim} out of range")
    if ndim > 3 and any(d > 1 for d in dim[4:4 + ndim - 3]):
        raise InputError(f"{path}: {ndim}-D volume; only 3-D images are supported")
    nx, ny = dim[1], dim[2]
    nz = dim[3] if ndim >= 3 else 1
    if nx < 1 or ny < 1 or nz < 1:
        raise InputError(f"{path}: non-positive image dimensions {dim[1:4]}")

    (datatype,) = struct.unpack_from(f"{endian}h", blob, 70)
    if datatype not in _DATATYPES:
        raise InputError(f"{path}: unsupported datatype code {datatype}")
    dtype = np.dtype(endian + _DATATYPES[datatype])

    slope, inter = struct.unpack_from(f"{endian}2f", blob, 112)
    (vox_offset,) = struct.unpack_from(f"{endian}f", blob, 108)
    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise InputError(f"{path}: vox_offset {offset} overlaps the header")

    count = nx * ny * nz
    need = offset + count * dtype.itemsize
    if len(blob) < need:
        raise InputError(f"{path}: data truncated "
                         f"(need {need} bytes, have {len(blob)})")

    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    # stored x-fastest; a C-order reshape of the reversed dims yields [z][y][x]
    volume = flat.reshape((nz, ny, nx)).astype(np.float32)
    # scl_slope == 0 means "no scaling" per the format definition
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        volume = volume * np.float32(slope) + np.float32(inter)
    if not np.all(np.isfinite(volume)):
        raise InputError(f"{path}: volume contains non-finite voxels")
    return volume


def write_volume(path: str | Path, volume: np.ndarray, *,
                 compress: bool | None = None) -> None:
    """Write a (slices, rows, cols) array as single-file NIfTI-1 (int16 or
    float32, little-endian). Exists so tests and tools can fabricate inputs
    without another dependency."""
    path = Path(path)
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise InputError(f"volume must be 3-D, got shape {volume.shape}")
    nz, ny, nx = volume.shape
    if volume.dtype == np.int16:
        datatype, bitpix = 4, 16
        payload = volume.astype("<i2")
    else:
        datatype, bitpix = 16, 32
        payload = volume.astype("<f4")

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, datatype)
    struct.pack_into("<h", header, 72, bitpix)
    struct.pack_into("<8f", header, 76, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", header, 108, 352.0)   # vox_offset
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    header[344:348] = _MAGIC_SINGLE

    blob = bytes(header) + b"\x00\x00\x00\x00" + payload.reshape(-1).tobytes()
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        # fixed mtime keeps rewrites byte-identical
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)
