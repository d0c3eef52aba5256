"""Single-file checkpoint container with a bit-exact round trip.

Layout: an 8-byte magic, a little-endian uint64 manifest length, the
JSON manifest, then the raw little-endian float64 parameter blocks at
the offsets the manifest records. Optimizer moments and the rng state
travel in an optional training section so an interrupted schedule can
resume exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import (Aggregator, Backbone, EncoderBundle, EntityAwareAdapter,
                    ModelConfig)
from .trainer import TrainingState

MAGIC = b"SYNADPT1"
FORMAT_VERSION = 1


@dataclass
class _Block:
    name: str
    rows: int
    cols: int
    offset: int


def _param_entries(params, data: bytearray) -> list[dict]:
    entries = []
    for p in params:
        raw = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        entries.append({"name": p.name, "rows": p.shape[0], "cols": p.shape[1],
                        "offset": len(data)})
        data.extend(raw)
    return entries


def _array_entries(named_arrays: dict[str, np.ndarray], data: bytearray) -> list[dict]:
    entries = []
    for name in sorted(named_arrays):
        arr = np.ascontiguousarray(named_arrays[name], dtype="<f8")
        entries.append({"name": name, "rows": arr.shape[0], "cols": arr.shape[1],
                        "offset": len(data)})
        data.extend(arr.tobytes())
    return entries


def save_checkpoint(path: str | Path, bundle: EncoderBundle,
                    training: TrainingState | None = None,
                    training_domain: str | None = None) -> None:
    data = bytearray()
    manifest: dict = {
        "format_version": FORMAT_VERSION,
        "config": bundle.config.to_dict(),
        "domains": bundle.domains,
        "params": _param_entries(bundle.parameters(), data),
    }
    if training is not None:
        manifest["training"] = {
            "domain": training_domain,
            "epochs_done": training.epochs_done,
            "rng_state": _encode_rng(training.rng_state),
            "epoch_losses": training.epoch_losses,
            "adam_step_count": training.adam["step_count"],
            "adam_m": _array_entries(training.adam["m"], data),
            "adam_v": _array_entries(training.adam["v"], data),
        }
    else:
        manifest["training"] = None
    blob = json.dumps(manifest, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(bytes(data))


def load_checkpoint(path: str | Path) -> tuple[EncoderBundle, TrainingState | None, str | None]:
    """Rebuild the bundle (and training state, if saved) bit-exactly."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a recognized checkpoint container")
    manifest_len = int.from_bytes(raw[len(MAGIC):len(MAGIC) + 8], "little")
    header_end = len(MAGIC) + 8 + manifest_len
    if header_end > len(raw):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[len(MAGIC) + 8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {manifest.get('format_version')} "
            f"is not supported (expected {FORMAT_VERSION})")
    data = raw[header_end:]

    def read_block(entry: dict) -> np.ndarray:
        rows, cols, offset = entry["rows"], entry["cols"], entry["offset"]
        nbytes = rows * cols * 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        return np.frombuffer(data, dtype="<f8", count=rows * cols,
                             offset=offset).reshape(rows, cols).copy()

    config = ModelConfig.from_dict(manifest["config"])
    bundle = EncoderBundle(config=config, backbone=Backbone(config, seed=0))
    for domain in manifest["domains"]:
        bundle.adapters.append(EntityAwareAdapter(config, domain, seed=0))
        bundle.aggregators[domain] = Aggregator(config, domain, seed=0)

    by_name = {p.name: p for p in bundle.parameters()}
    seen = set()
    for entry in manifest["params"]:
        p = by_name.get(entry["name"])
        if p is None:
            raise CheckpointError(f"{path}: unexpected parameter {entry['name']}")
        value = read_block(entry)
        if value.shape != p.shape:
            raise CheckpointError(f"{path}: shape mismatch for {entry['name']}")
        # rehydration writes through the freeze guard once, then reseals
        p.value.setflags(write=True)
        p.value[...] = value
        if p.frozen:
            p.value.setflags(write=False)
        seen.add(entry["name"])
    missing = set(by_name) - seen
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)[:3]}...")

    training_section = manifest.get("training")
    training = None
    training_domain = None
    if training_section is not None:
        training_domain = training_section["domain"]
        training = TrainingState(
            epochs_done=int(training_section["epochs_done"]),
            rng_state=_decode_rng(training_section["rng_state"]),
            adam={
                "step_count": int(training_section["adam_step_count"]),
                "m": {e["name"]: read_block(e) for e in training_section["adam_m"]},
                "v": {e["name"]: read_block(e) for e in training_section["adam_v"]},
            },
            epoch_losses=[float(x) for x in training_section["epoch_losses"]],
        )
    return bundle, training, training_domain


def _encode_rng(state: dict) -> dict:
    # PCG64 state holds >64-bit ints; JSON carries them as decimal strings
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _decode_rng(payload: dict) -> dict:
    return {
        "bit_generator": payload["bit_generator"],
        "state": {"state": int(payload["state"]), "inc": int(payload["inc"])},
        "has_uint32": payload["has_uint32"],
        "uinteger": payload["uinteger"],
    }
