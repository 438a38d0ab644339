"""Portable storage of phase vectors and trajectories.

Binary coefficient files (``*.bin``) have the layout::

    offset  size  content
    0       4     magic b"EVPV"
    4       2     format version (uint16 LE) = 1
    6       2     flags (uint16 LE); bit 0 set = complex coefficients
    8       4     H = byte length of the basis id (uint32 LE)
    12      H     basis id, UTF-8 (e.g. "sine:ell=1.0:M=64")
    12+H    8     N = number of stored vectors (uint64 LE)
    20+H    ...   coefficients as little-endian float64; complex values are
                  interleaved (re, im); vectors follow each other in C order
                  of the basis coefficient shape

Each ``.bin`` is accompanied by a JSON descriptor repeating the header fields
plus ``shape``, ``dtype`` and ``data_offset``.  A trajectory store is a
directory holding ``manifest.json`` (solver, symbol, dt, t_start, seed, ...)
and ``coeffs.bin`` with one vector per time sample.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .phase import PhaseVector, basis_from_id

MAGIC = b"EVPV"
VERSION = 1


def _header(basis_id: str, complex_: bool, count: int) -> bytes:
    bid = basis_id.encode("utf-8")
    return (
        MAGIC
        + struct.pack("<HHI", VERSION, 1 if complex_ else 0, len(bid))
        + bid
        + struct.pack("<Q", count)
    )


def write_coeff_stream(path, basis, stack: np.ndarray) -> dict:
    """Write a stack of coefficient arrays; returns the JSON descriptor."""
    path = Path(path)
    stack = np.asarray(stack, dtype=basis.dtype)
    if stack.shape[1:] != basis.shape:
        raise ValueError("stack does not match basis shape")
    is_complex = np.iscomplexobj(stack)
    head = _header(basis.basis_id, is_complex, stack.shape[0])
    data = np.ascontiguousarray(stack)
    if is_complex:
        data = data.view(np.float64)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(data.astype("<f8").tobytes())
    return {
        "format": "evosys-coeff-stream",
        "version": VERSION,
        "basis_id": basis.basis_id,
        "dtype": "complex128" if is_complex else "float64",
        "shape": list(basis.shape),
        "count": int(stack.shape[0]),
        "byte_order": "little",
        "data_offset": len(head),
    }


def read_coeff_stream(path):
    """Return ``(basis, stack)`` from a binary coefficient file."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an evosys coefficient file")
    version, flags, hlen = struct.unpack_from("<HHI", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    basis = basis_from_id(raw[12 : 12 + hlen].decode("utf-8"))
    (count,) = struct.unpack_from("<Q", raw, 12 + hlen)
    data = np.frombuffer(raw, dtype="<f8", offset=20 + hlen).astype(np.float64)
    if flags & 1:
        data = data.view(np.complex128)
    return basis, data.reshape((count,) + basis.shape)


def save_phase_vector(stem, u: PhaseVector) -> tuple[Path, Path]:
    """Write ``stem.bin`` and ``stem.json``."""
    stem = Path(stem)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    desc = write_coeff_stream(bin_path, u.basis, u.coeffs[None])
    json_path.write_text(json.dumps(desc, indent=2, sort_keys=True))
    return bin_path, json_path


def load_phase_vector(stem) -> PhaseVector:
    basis, stack = read_coeff_stream(Path(stem).with_suffix(".bin"))
    if stack.shape[0] != 1:
        raise ValueError("file holds more than one vector")
    return PhaseVector(basis, stack[0])
