"""Columnar binary persistence of ensemble checkpoint states.

Layout (all little-endian)::

    magic        8 bytes   b"SPDEENS\\0"
    version      uint32
    n_modes      uint32
    n_ckpt       uint32
    n_paths      uint64    surviving members stored in the body
    times        float64 x n_ckpt
    path_ids     uint64  x n_paths
    body         float64 x (n_paths * n_ckpt * n_modes), path-major:
                 path, then checkpoint, then mode

A JSON sidecar ``<name>.json`` carries the simulation config, initial law,
seed and explosion diagnostics.
"""

import json
import struct

import numpy as np

MAGIC = b"SPDEENS\0"
VERSION = 1
_HEAD = struct.Struct("<8sIIIQ")


def write_ensemble(path, ensemble, extra=None):
    """Write ``path`` (binary) and ``path + '.json'`` (sidecar)."""
    n_ckpt, n, N = ensemble.states.shape
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, N, n_ckpt, n))
        fh.write(np.asarray(ensemble.times, dtype="<f8").tobytes())
        fh.write(np.asarray(ensemble.path_ids, dtype="<u8").tobytes())
        body = np.ascontiguousarray(np.transpose(ensemble.states, (1, 0, 2)), dtype="<f8")
        fh.write(body.tobytes())
    side = {
        "format": "spdefp-ensemble",
        "version": VERSION,
        "config": ensemble.config.to_dict(),
        "initial_law": ensemble.initial_law.to_dict(),
        "seed": str(ensemble.config.seed),
        "tag": ensemble.tag,
        "diagnostics": ensemble.diagnostics(),
    }
    if extra:
        side.update(extra)
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_ensemble(path):
    """Return ``(times, path_ids, states)`` with states shaped (n_ckpt, n, N)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, N, n_ckpt, n = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an ensemble file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if len(raw) != _HEAD.size + 8 * (n_ckpt + n + n * n_ckpt * N):
        raise ValueError(f"{path}: truncated or oversized body")
    off = _HEAD.size
    times = np.frombuffer(raw, "<f8", n_ckpt, off)
    off += 8 * n_ckpt
    ids = np.frombuffer(raw, "<u8", n, off).astype(np.int64)
    off += 8 * n
    body = np.frombuffer(raw, "<f8", n * n_ckpt * N, off)
    states = body.reshape(n, n_ckpt, N).transpose(1, 0, 2).copy()
    return times.copy(), ids, states
