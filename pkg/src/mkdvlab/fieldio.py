"""Field snapshot formats.

Binary ".pfc": magic bytes ``PFC1``, then little-endian u32 n_modes, one f64
of metadata (conventionally the regularity s, or 0), then 2*n_modes+1
coefficients as (re, im) f64 pairs in k-ascending order.  A JSON mirror keeps
every float as a base-10 decimal string so files diff cleanly across
platforms.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .spectral import SpectralField

MAGIC = b"PFC1"


def write_pfc(path, f: SpectralField, metadata: float = 0.0) -> None:
    path = Path(path)
    n = f.n_modes
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", n))
        fh.write(struct.pack("<d", float(metadata)))
        flat = np.empty(2 * (2 * n + 1))
        flat[0::2] = f.coeffs.real
        flat[1::2] = f.coeffs.imag
        fh.write(struct.pack(f"<{len(flat)}d", *flat))


def read_pfc(path) -> tuple[SpectralField, float]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (n,) = struct.unpack_from("<I", raw, 4)
    (metadata,) = struct.unpack_from("<d", raw, 8)
    count = 2 * (2 * n + 1)
    vals = struct.unpack_from(f"<{count}d", raw, 16)
    coeffs = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    return SpectralField(int(n), coeffs), metadata


def field_to_json_dict(f: SpectralField, metadata: float = 0.0) -> dict:
    return {
        "magic": "PFC1",
        "n_modes": f.n_modes,
        "metadata": repr(float(metadata)),
        "coeffs": [[repr(float(c.real)), repr(float(c.imag))] for c in f.coeffs],
    }


def write_pfc_json(path, f: SpectralField, metadata: float = 0.0) -> None:
    Path(path).write_text(
        json.dumps(field_to_json_dict(f, metadata), indent=1) + "\n"
    )


def read_pfc_json(path) -> tuple[SpectralField, float]:
    d = json.loads(Path(path).read_text())
    if d.get("magic") != "PFC1":
        raise ValueError(f"{path}: not a PFC1 json mirror")
    coeffs = np.array([float(re) + 1j * float(im) for re, im in d["coeffs"]])
    return SpectralField(int(d["n_modes"]), coeffs), float(d["metadata"])
