"""Binary checkpoints for EMAC, IQL and IAC models.

Layout (all integers little-endian)::

    magic        4 bytes   b"EMAC", b"IQL_" or b"IAC_"
    version      u32
    config hash  32 bytes  sha256 of the serialized config
    descriptor   u32 length + UTF-8 JSON (config text and per-network layer sizes)
    parameters   float32 arrays W0, b0, W1, b1, ... for each network in descriptor order

Loading rebuilds the model from the stored (or a supplied) config and
copies the arrays in, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash, parse_config_text, serialize_config
from .nn import DenseNet

CHECKPOINT_VERSION = 1
MAGIC = {"emac": b"EMAC", "iql": b"IQL_", "iac": b"IAC_"}
_ALGO_OF = {v: k for k, v in MAGIC.items()}


class CheckpointError(ValueError):
    pass


class ConfigHashWarning(UserWarning):
    pass


def model_algo(model) -> str:
    return getattr(model, "algo", "emac")


def _descriptor(model) -> dict:
    return {
        "algo": model_algo(model),
        "config": serialize_config(model.config),
        "nets": [{"name": name, "sizes": net.sizes, "activations": net.activations}
                 for name, net in model.nets().items()],
    }


def checkpoint_bytes(model) -> bytes:
    algo = model_algo(model)
    desc = json.dumps(_descriptor(model), sort_keys=True).encode()
    parts = [
        MAGIC[algo],
        struct.pack("<I", CHECKPOINT_VERSION),
        bytes.fromhex(config_hash(model.config)),
        struct.pack("<I", len(desc)),
        desc,
    ]
    for net in model.nets().values():
        for p in net.parameters():
            parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))
    return path


def _build(algo: str, cfg: RunConfig):
    rng = np.random.default_rng(0)
    if algo == "emac":
        from .trainer import build_model
        return build_model(cfg, rng)
    if algo == "iql":
        from .baselines.iql import build_team
    else:
        from .baselines.iac import build_team
    return build_team(cfg, [np.random.default_rng(i) for i in range(cfg.world.n_agents)])


def _take(data: bytes, offset: int, n: int) -> tuple[bytes, int]:
    if offset + n > len(data):
        raise CheckpointError("truncated checkpoint")
    return data[offset:offset + n], offset + n


def parse_checkpoint(data: bytes, config: RunConfig | None = None):
    """Rebuild a model from checkpoint bytes; nothing is returned on any error."""
    magic, off = _take(data, 0, 4)
    if magic not in _ALGO_OF:
        raise CheckpointError(f"bad magic {magic!r}")
    algo = _ALGO_OF[magic]
    raw, off = _take(data, off, 4)
    (version,) = struct.unpack("<I", raw)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    stored_hash, off = _take(data, off, 32)
    raw, off = _take(data, off, 4)
    (n,) = struct.unpack("<I", raw)
    raw, off = _take(data, off, n)
    try:
        desc = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt descriptor: {exc}") from None
    if desc.get("algo") != algo:
        raise CheckpointError("descriptor algorithm does not match magic")

    cfg = config if config is not None else parse_config_text(desc["config"])
    if bytes.fromhex(config_hash(cfg)) != stored_hash:
        warnings.warn("checkpoint was saved with a different config", ConfigHashWarning, stacklevel=3)

    model = _build(algo, cfg)
    nets: dict[str, DenseNet] = model.nets()
    stored = [(d["name"], d["sizes"], d["activations"]) for d in desc["nets"]]
    built = [(name, net.sizes, net.activations) for name, net in nets.items()]
    if stored != built:
        raise CheckpointError(f"architecture mismatch: checkpoint {stored} vs config {built}")

    arrays = []
    for net in nets.values():
        for p in net.parameters():
            raw, off = _take(data, off, p.size * 4)
            arrays.append((p, np.frombuffer(raw, dtype="<f4").reshape(p.shape)))
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after parameters")
    for dst, src in arrays:
        dst[...] = src
    return model


def load_checkpoint(path: str | Path, config: RunConfig | None = None):
    """Load a model saved by :func:`save_checkpoint`.

    With ``config`` given, the model is built from it; a hash mismatch
    only warns, an architecture mismatch raises :class:`CheckpointError`.
    """
    return parse_checkpoint(Path(path).read_bytes(), config)
