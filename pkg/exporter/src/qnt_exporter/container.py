"""Writer (and a reader for self-tests) of the .qnt container format.

Format: UTF-8 JSON header, one NUL byte, then a contiguous little-endian
tensor blob. Header keys: format_version (1), tensors (name -> {shape,
offset, length, optional dtype "f8"}), plus payload-specific entries
(layers/input_shape for models, metadata, kind). Tensors default to
32-bit floats; golden files store inputs/outputs as "f8".

This is an independent implementation of the documented format; the
quantization toolkit has its own loader.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def write_container(path, tensors: dict[str, np.ndarray], header_extra: dict | None = None,
                    dtypes: dict[str, str] | None = None) -> None:
    dtypes = dtypes or {}
    refs = {}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        dt = dtypes.get(name, "f4")
        data = np.ascontiguousarray(arr, dtype=DTYPES[dt]).tobytes()
        ref = {"shape": list(np.asarray(arr).shape), "offset": offset, "length": len(data)}
        if dt != "f4":
            ref["dtype"] = dt
        refs[name] = ref
        blobs.append(data)
        offset += len(data)
    header = {"format_version": 1, "tensors": refs}
    if header_extra:
        header.update(header_extra)
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(payload)
        f.write(b"\x00")
        for blob in blobs:
            f.write(blob)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nul = raw.index(b"\x00")
    header = json.loads(raw[:nul].decode("utf-8"))
    assert header["format_version"] == 1
    blob = raw[nul + 1 :]
    tensors = {}
    for name, ref in header["tensors"].items():
        dt = DTYPES[ref.get("dtype", "f4")]
        shape = tuple(ref["shape"])
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(blob, dtype=dt, count=count, offset=ref["offset"])
        tensors[name] = flat.reshape(shape).astype(np.float64)
    return header, tensors
