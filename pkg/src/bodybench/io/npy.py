"""Reader and writer for the ``.npy`` array container and ``.npz`` archives.

Only plain numeric/bool element types are supported (``f4 f8 i4 i8 u1
b1``).  Writers always emit format version 1.0, little-endian, C order, with
the header padded so the payload starts on a 64-byte boundary.  ``.npz``
archives are written with stored (uncompressed) members and a fixed
timestamp so identical inputs give identical bytes.
"""

from __future__ import annotations

import ast
import io
import math
import struct
import zipfile
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ContainerError

MAGIC = b"\x93NUMPY"
ALIGN = 64

DTYPES = {
    "f4": np.dtype("<f4"),
    "f8": np.dtype("<f8"),
    "i4": np.dtype("<i4"),
    "i8": np.dtype("<i8"),
    "u1": np.dtype("u1"),
    "b1": np.dtype("?"),
}
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
# everything zipfile raises on damaged or unsupported archives
_ZIP_ERRORS = (zipfile.BadZipFile, zipfile.LargeZipFile, zlib.error, OSError, EOFError,
               ValueError, NotImplementedError, RuntimeError, struct.error)


class BadMagic(ContainerError):
    code = "bad_magic"


class UnsupportedVersion(ContainerError):
    code = "unsupported_version"


class UnsupportedDtype(ContainerError):
    code = "unsupported_dtype"


class BadHeader(ContainerError):
    code = "bad_header"


class Truncated(ContainerError):
    code = "truncated"


class BadArchive(ContainerError):
    code = "bad_archive"


class DuplicateMember(ContainerError):
    code = "duplicate_member"


def dtype_tag(dtype) -> str:
    dt = np.dtype(dtype)
    tag = {"f": "f", "i": "i", "u": "u", "b": "b"}.get(dt.kind, "?") + str(dt.itemsize)
    if tag not in DTYPES:
        raise UnsupportedDtype(f"element type {dt} is not supported")
    return tag


def _parse_descr(descr: str) -> np.dtype:
    if not isinstance(descr, str) or len(descr) < 3:
        raise UnsupportedDtype(f"unsupported descr {descr!r}")
    order, tag = descr[0], descr[1:]
    if order not in "<>|=":
        raise UnsupportedDtype(f"unsupported byte order in {descr!r}")
    if tag not in DTYPES:
        raise UnsupportedDtype(f"unsupported element type {descr!r}")
    if DTYPES[tag].itemsize > 1 and order == "|":
        raise UnsupportedDtype(f"multi-byte type without byte order: {descr!r}")
    return DTYPES[tag].newbyteorder(">") if order == ">" else DTYPES[tag]


def _parse_header(text: str) -> tuple[np.dtype, bool, tuple[int, ...]]:
    try:
        doc = ast.literal_eval(text)
    except (ValueError, TypeError, SyntaxError, MemoryError, RecursionError) as exc:
        raise BadHeader(f"header is not a mapping literal: {exc}") from None
    if not isinstance(doc, dict) or set(doc) != {"descr", "fortran_order", "shape"}:
        raise BadHeader("header must have exactly the keys descr, fortran_order, shape")
    shape = doc["shape"]
    if not isinstance(shape, tuple) or not all(type(d) is int and d >= 0 for d in shape):
        raise BadHeader(f"bad shape {shape!r}")
    if not isinstance(doc["fortran_order"], bool):
        raise BadHeader("fortran_order must be a bool")
    return _parse_descr(doc["descr"]), doc["fortran_order"], shape


def read_npy(data: bytes) -> np.ndarray:
    """Decode an ``.npy`` payload into a native-endian, C-ordered array."""
    data = bytes(data)
    if len(data) < 8:
        raise (Truncated if data == MAGIC[:len(data)] else BadMagic)("payload too short")
    if data[:6] != MAGIC:
        raise BadMagic("missing \\x93NUMPY magic")
    major, minor = data[6], data[7]
    if major == 1:
        hlen_size, encoding = 2, "latin1"
    elif major in (2, 3):
        hlen_size, encoding = 4, "latin1" if major == 2 else "utf8"
    else:
        raise UnsupportedVersion(f"format version {major}.{minor}")
    if minor != 0:
        raise UnsupportedVersion(f"format version {major}.{minor}")
    if len(data) < 8 + hlen_size:
        raise Truncated("header length field cut off")
    (hlen,) = struct.unpack("<H" if hlen_size == 2 else "<I", data[8:8 + hlen_size])
    start = 8 + hlen_size
    if len(data) < start + hlen:
        raise Truncated("header cut off")
    try:
        header = data[start:start + hlen].decode(encoding)
    except UnicodeDecodeError as exc:
        raise BadHeader(f"header is not {encoding}: {exc}") from None
    dtype, fortran, shape = _parse_header(header)

    count = math.prod(shape)
    nbytes = count * dtype.itemsize
    payload = data[start + hlen:]
    if len(payload) < nbytes:
        raise Truncated(f"payload has {len(payload)} bytes, expected {nbytes}")
    if len(payload) > nbytes:
        raise BadHeader(f"{len(payload) - nbytes} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=dtype, count=count)
    if dtype.kind == "b" and np.any(arr.view(np.uint8) > 1):
        raise BadHeader("boolean payload holds values other than 0/1")
    arr = arr.reshape(shape, order="F" if fortran else "C")
    return arr.astype(dtype.newbyteorder("="), order="C", copy=True)


def write_npy(array) -> bytes:
    arr = np.asarray(array)
    tag = dtype_tag(arr.dtype)
    out_dtype = DTYPES[tag]
    # ascontiguousarray would promote 0-d arrays to 1-d
    arr = arr.astype(out_dtype, order="C", copy=False)
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %r, }" % (
        out_dtype.str, tuple(int(d) for d in arr.shape))
    # magic(6) + version(2) + length(2) + header + '\n' padded to ALIGN
    pad = -(10 + len(header) + 1) % ALIGN
    header = header + " " * pad + "\n"
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header.encode("latin1") + arr.tobytes()


def read_npz(data: bytes) -> dict[str, np.ndarray]:
    """Decode an ``.npz`` archive (stored or deflated members)."""
    try:
        zf = zipfile.ZipFile(io.BytesIO(bytes(data)))
    except _ZIP_ERRORS as exc:
        raise BadArchive(f"not a zip archive: {exc}") from None
    with zf:
        names = [i.filename for i in zf.infolist()]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise DuplicateMember(f"duplicate archive members {dup}")
        out = {}
        for info in zf.infolist():
            key = info.filename[:-4] if info.filename.endswith(".npy") else info.filename
            try:
                raw = zf.read(info)
            except _ZIP_ERRORS as exc:
                raise BadArchive(f"member {info.filename!r} is corrupt: {exc}") from None
            if key in out:
                raise DuplicateMember(f"members collide on key {key!r}")
            out[key] = read_npy(raw)
        return out


def write_npz(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, value in arrays.items():
            info = zipfile.ZipInfo(f"{key}.npy", date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o644 << 16
            zf.writestr(info, write_npy(value))
    return buf.getvalue()


def load_npz(path: str | Path) -> dict[str, np.ndarray]:
    return read_npz(Path(path).read_bytes())


def save_npz(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(write_npz(arrays))


def load_npy(path: str | Path) -> np.ndarray:
    return read_npy(Path(path).read_bytes())


def save_npy(path: str | Path, array) -> None:
    Path(path).write_bytes(write_npy(array))
