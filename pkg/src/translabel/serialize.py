"""Deterministic binary container for named arrays plus a JSON header.

Layout: magic line, 16-digit header length, JSON header (sorted keys),
then the raw array bytes back to back in header order. No timestamps
or other ambient state, so identical content gives identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"translabel-bin 1\n"


class ContainerError(ValueError):
    pass


def save_arrays(path: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
        })
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(b"%016d\n" % len(header))
        handle.write(header)
        for blob in blobs:
            handle.write(blob)


def load_arrays(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as handle:
        magic = handle.read(len(MAGIC))
        if magic != MAGIC:
            raise ContainerError(f"{path}: not a container file (bad magic)")
        length_line = handle.read(17)
        try:
            header_len = int(length_line)
        except ValueError:
            raise ContainerError(f"{path}: corrupt header length") from None
        header_bytes = handle.read(header_len)
        if len(header_bytes) != header_len:
            raise ContainerError(f"{path}: truncated header")
        try:
            header = json.loads(header_bytes)
        except json.JSONDecodeError as err:
            raise ContainerError(f"{path}: corrupt header: {err}") from None
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            blob = handle.read(count * dtype.itemsize)
            if len(blob) != count * dtype.itemsize:
                raise ContainerError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
    return header["meta"], arrays
