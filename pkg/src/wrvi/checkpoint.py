"""Checkpoints: a JSON manifest plus one little-endian float64 blob.

The manifest records the layout of every array in the blob (byte offset and
shape), the optimizer counters, the RNG state and a CRC32 of the blob.  Both
files are written to temporaries and moved into place, blob first, so an
interrupted save never leaves a manifest pointing at a partial blob.
"""
from __future__ import annotations

import hashlib
import json
import os
import zlib
from pathlib import Path

import numpy as np

from .nn import MlpParams
from .prob import NetworkHead
from .train import TrainState

FORMAT_VERSION = 1
_AFFINE = ("in_shift", "in_scale", "out_shift", "out_scale")


class CheckpointError(IOError):
    pass


def spec_hash(problem_dict: dict) -> str:
    text = json.dumps(problem_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def blob_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def _arrays(state: TrainState):
    """(head, kind, index, array) in blob order: parameters, moments, affine buffers."""
    out = []
    for name in sorted(state.heads):
        for i, p in enumerate(state.heads[name].params()):
            out.append((name, "param", i, p))
    for name in sorted(state.m):
        for i, a in enumerate(state.m[name]):
            out.append((name, "m", i, a))
        for i, a in enumerate(state.v[name]):
            out.append((name, "v", i, a))
    for name in sorted(state.heads):
        h = state.heads[name]
        for i, key in enumerate(_AFFINE):
            out.append((name, key, i, getattr(h, key)))
    return out


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(path, state: TrainState, config: dict, problem_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for head, kind, idx, arr in _arrays(state):
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"head": head, "kind": kind, "index": idx, "shape": list(np.shape(arr)),
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    heads = {
        name: {"out_dim": h.out_dim, "lv_min": h.lv_min, "lv_max": h.lv_max, "activation": h.mlp.activation,
               "sizes": h.mlp.sizes}
        for name, h in state.heads.items()
    }
    manifest = {
        "version": FORMAT_VERSION,
        "spec_hash": problem_hash or spec_hash(config.get("problem", {})),
        "config": config,
        "heads": heads,
        "trainable": list(state.trainable),
        "iteration": state.iteration,
        "adam_t": state.adam_t,
        "lr": state.lr,
        "skipped": state.skipped,
        "rng": {"bit_generator": type(state.rng.bit_generator).__name__, "state": state.rng.bit_generator.state},
        "arrays": entries,
        "blob": blob_path(path).name,
        "blob_bytes": len(blob),
        "crc32": zlib.crc32(blob),
    }
    _atomic_write(blob_path(path), blob)
    _atomic_write(path, (json.dumps(manifest, indent=1) + "\n").encode("utf-8"))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest {path}: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    return manifest


def load_checkpoint(path, expected_hash: str | None = None) -> tuple[TrainState, dict]:
    """Return ``(state, manifest)``; the manifest carries the embedded config."""
    path = Path(path)
    manifest = read_manifest(path)
    if expected_hash is not None and manifest["spec_hash"] != expected_hash:
        raise CheckpointError("checkpoint was written for a different problem specification")
    try:
        blob = (path.parent / manifest["blob"]).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint blob missing next to {path}") from exc
    if len(blob) != manifest["blob_bytes"] or zlib.crc32(blob) != manifest["crc32"]:
        raise CheckpointError(f"checkpoint blob failed CRC32 validation: {path}")
    store: dict = {}
    for e in manifest["arrays"]:
        arr = np.frombuffer(blob, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"])
        store.setdefault((e["head"], e["kind"]), {})[e["index"]] = arr.reshape(e["shape"]).astype(np.float64)
    heads = {}
    for name, meta in manifest["heads"].items():
        params = store[(name, "param")]
        flat = [params[i] for i in range(len(params))]
        layers = [(flat[2 * i], flat[2 * i + 1]) for i in range(len(flat) // 2)]
        affine = {key: store[(name, key)][i] for i, key in enumerate(_AFFINE)}
        heads[name] = NetworkHead(MlpParams(layers, meta["activation"]), meta["out_dim"],
                                  meta["lv_min"], meta["lv_max"], **affine)
        if heads[name].mlp.sizes != meta["sizes"]:
            raise CheckpointError(f"head {name!r}: layer shapes disagree with the manifest")
    m, v = {}, {}
    for name in manifest["trainable"]:
        for kind, dest in (("m", m), ("v", v)):
            got = store.get((name, kind), {})
            dest[name] = [got[i] for i in range(len(got))]
    rng_meta = manifest["rng"]
    bitgen = getattr(np.random, rng_meta["bit_generator"])()
    bitgen.state = rng_meta["state"]
    state = TrainState(heads, list(manifest["trainable"]), np.random.Generator(bitgen), m, v,
                       manifest["iteration"], manifest["adam_t"], manifest["lr"], manifest["skipped"])
    return state, manifest
