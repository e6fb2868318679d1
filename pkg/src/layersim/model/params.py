"""Named parameter tensors and the LNPK checkpoint format.

Checkpoint layout (little-endian)::

    b"LNPK"  u32 version  u64 header_len  header (UTF-8 JSON: config, tensor manifest)
    raw f64 blobs at the manifest offsets (relative to the end of the header)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from .config import SimulatorConfig

MAGIC = b"LNPK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def _mlp_shapes(prefix: str, sizes: list[int]) -> dict[str, tuple]:
    out = {}
    for k, (a, b) in enumerate(zip(sizes, sizes[1:])):
        out[f"{prefix}.w{k}"] = (a, b)
        out[f"{prefix}.b{k}"] = (b,)
    return out


def param_shapes(cfg: SimulatorConfig) -> dict[str, tuple]:
    d = cfg.hidden
    shapes: dict[str, tuple] = {
        "enc.patch.w": (cfg.patch_features, d), "enc.patch.b": (d,),
        "enc.body.w": (cfg.body_features, d), "enc.body.b": (d,),
        "enc.wind.w": (cfg.wind_features, d), "enc.wind.b": (d,),
        "enc.attr.w": (5, d), "enc.attr.b": (d,),
        "enc.gravity": (1, d),
    }
    for layer in range(cfg.layers):
        p = f"layer{layer}"
        shapes[f"{p}.wq"] = (d, d)
        shapes[f"{p}.wr"] = (d, d)
        shapes[f"{p}.ws"] = (d, d)
        shapes[f"{p}.rot"] = (d, 3)
        shapes.update(_mlp_shapes(f"{p}.psi", [d, d, d]))
        shapes.update(_mlp_shapes(f"{p}.mlp", [d, d, d]))
    shapes["dec.rot"] = (d, 3)
    shapes.update(_mlp_shapes("dec.g", [3 + 2 * d, d, d, d, 3]))
    return shapes


class ModelParams:
    """Ordered name -> Tensor mapping plus the config that shaped it."""

    def __init__(self, config: SimulatorConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = dict(tensors)

    @classmethod
    def init(cls, config: SimulatorConfig, seed: int | None = None) -> "ModelParams":
        rng = np.random.default_rng(config.seed if seed is None else seed)
        tensors = {}
        for name, shape in param_shapes(config).items():
            if name.endswith(".rot"):
                data = rng.normal(size=shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            elif name == "enc.gravity":
                data = rng.normal(scale=0.5, size=shape)
            else:
                data = rng.normal(scale=np.sqrt(1.0 / shape[0]), size=shape)
            tensors[name] = Tensor(data, requires_grad=True)
        last = max(k for k in tensors if k.startswith("dec.g.w"))
        tensors[last].data *= 0.1
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.copy(), requires_grad=True)
                                         for k, v in self.tensors.items()})


def encode_checkpoint(params: ModelParams, extra: dict | None = None) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name, t in params.tensors.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {"config": params.config.to_dict(), "tensors": manifest}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([_PREFIX.pack(MAGIC, VERSION, len(blob)), blob] + blobs)


def decode_checkpoint(data: bytes) -> tuple[ModelParams, dict]:
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short for an LNPK prefix")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    base = start + hlen
    cfg = SimulatorConfig.from_dict(header["config"])
    expected = param_shapes(cfg)
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        if expected.get(entry["name"]) != shape:
            raise CheckpointError(f"tensor {entry['name']} has unexpected shape {shape}")
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=base + entry["offset"])
        tensors[entry["name"]] = Tensor(arr.astype(np.float64).reshape(shape), requires_grad=True)
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {sorted(missing)}")
    return ModelParams(cfg, tensors), header.get("extra", {})


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(params, extra))
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    return decode_checkpoint(Path(path).read_bytes())
