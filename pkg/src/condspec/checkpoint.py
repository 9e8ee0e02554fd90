"""Versioned binary checkpoints for fitted chains.

Layout: 8-byte magic, uint32 format version, uint64 header length, UTF-8 JSON
header, then the raw little-endian C-order array payload.  The header records
the config, seed, shapes and a SHA-256 of the payload; readers reject unknown
versions and corrupted payloads.  Nothing non-deterministic (timestamps,
filesystem metadata) is written, so identical fits produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from .basis import build_tensor_basis
from .dataset import OutcomeTransform
from .errors import ValidationError
from .sampler import ModelConfig, PosteriorDraws, theta_block_order

MAGIC = b"CSPECKPT"
FORMAT_VERSION = 1


def config_hash(config: ModelConfig) -> str:
    """SHA-256 of the canonical JSON encoding of a config."""
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def _array_entries(draws: PosteriorDraws):
    entries = []
    for k, l in theta_block_order(draws.n_channels):
        entries.append((f"eta_r_{k}{l}", draws.eta_r[(k, l)]))
        entries.append((f"eta_i_{k}{l}", draws.eta_i[(k, l)]))
    for k in range(1, draws.n_channels + 1):
        entries.append((f"eta_d_{k}", draws.eta_d[k]))
    for label in draws.component_labels():
        entries.append((f"tau2_{'_'.join(map(str, label))}", draws.tau2[label]))
    entries.append(("outcomes", draws.outcomes))
    return entries


def save_checkpoint(path, draws: PosteriorDraws) -> str:
    """Write the checkpoint; returns the config hash recorded in the header."""
    entries = _array_entries(draws)
    payload = b"".join(np.ascontiguousarray(a, dtype=np.float64).tobytes() for _, a in entries)
    header = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(draws.config),
        "config_hash": config_hash(draws.config),
        "n_channels": draws.n_channels,
        "n_time": draws.n_time,
        "outcome_transform": {"offset": draws.outcome_transform.offset,
                              "scale": draws.outcome_transform.scale},
        "subject_ids": list(draws.subject_ids) if draws.subject_ids else None,
        "acceptance": {str(k): v for k, v in draws.acceptance.items()},
        "arrays": [{"name": name, "shape": list(np.shape(a))} for name, a in entries],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(np.uint32(FORMAT_VERSION).tobytes())
        handle.write(np.uint64(len(blob)).tobytes())
        handle.write(blob)
        handle.write(payload)
    return header["config_hash"]


def load_checkpoint(path) -> PosteriorDraws:
    """Read a checkpoint and rebuild the PosteriorDraws (basis included)."""
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as exc:
        raise ValidationError(f"cannot open checkpoint: {exc}") from None
    if raw[:8] != MAGIC:
        raise ValidationError("not a condspec checkpoint (bad magic)")
    version = int(np.frombuffer(raw[8:12], dtype=np.uint32)[0])
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(raw[12:20], dtype=np.uint64)[0])
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    payload = raw[20 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValidationError("checkpoint payload hash mismatch (corrupted file)")
    config = ModelConfig(**header["config"])
    if config_hash(config) != header["config_hash"]:
        raise ValidationError("checkpoint config hash mismatch")
    arrays = {}
    offset = 0
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(payload, dtype=np.float64, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
        offset += count * 8
    n_channels = header["n_channels"]
    outcomes = arrays.pop("outcomes")
    basis = build_tensor_basis(header["n_time"], outcomes,
                               n_j=config.n_j, n_h=config.n_h)
    eta_r, eta_i, eta_d, tau2 = {}, {}, {}, {}
    for k, l in theta_block_order(n_channels):
        eta_r[(k, l)] = arrays[f"eta_r_{k}{l}"]
        eta_i[(k, l)] = arrays[f"eta_i_{k}{l}"]
    for k in range(1, n_channels + 1):
        eta_d[k] = arrays[f"eta_d_{k}"]
    draws = PosteriorDraws(
        config=config, basis=basis, n_channels=n_channels,
        n_time=header["n_time"], outcomes=outcomes,
        outcome_transform=OutcomeTransform(**header["outcome_transform"]),
        eta_r=eta_r, eta_i=eta_i, eta_d=eta_d, tau2={},
        acceptance={int(k): v for k, v in header["acceptance"].items()},
        subject_ids=tuple(header["subject_ids"]) if header["subject_ids"] else None)
    for label in draws.component_labels():
        tau2[label] = arrays[f"tau2_{'_'.join(map(str, label))}"]
    draws.tau2 = tau2
    return draws
