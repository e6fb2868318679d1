"""LSEQ sequence files.

Layout (little-endian)::

    b"LSEQ"  u32 version  u64 header_len  header (UTF-8 JSON)
    per frame, f32: garment positions (layer 0 then 1), body sample positions,
                    body sample normals, wind (w, x, y, z, strength)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import GarmentAttributes, MeshTopology, PatchMap, patchify

MAGIC = b"LSEQ"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class FormatError(ValueError):
    pass


@dataclass
class Sequence:
    header: dict
    positions: np.ndarray  # (frames, n_garment, 3)
    body: np.ndarray  # (frames, n_body, 3)
    body_normals: np.ndarray  # (frames, n_body, 3)
    wind: np.ndarray  # (frames, 5)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_frames(self) -> int:
        return len(self.positions)

    @property
    def dt(self) -> float:
        return float(self.header["dt"])

    @property
    def n_layers(self) -> int:
        return len(self.header["layers"])

    def layer_sizes(self) -> list[int]:
        return [layer["n_vertices"] for layer in self.header["layers"]]

    def layer_slice(self, layer: int) -> slice:
        sizes = self.layer_sizes()
        start = sum(sizes[:layer])
        return slice(start, start + sizes[layer])

    def topologies(self) -> list[MeshTopology]:
        if "topos" not in self._cache:
            self._cache["topos"] = [
                MeshTopology(L["n_vertices"], np.asarray(L["faces"]), np.asarray(L["uv"]))
                for L in self.header["layers"]
            ]
        return self._cache["topos"]

    def combined_topology(self) -> MeshTopology:
        if "combined" not in self._cache:
            topos = self.topologies()
            faces, k = [], 0
            for t in topos:
                faces.append(t.faces + k)
                k += t.n_vertices
            uv = np.concatenate([t.uv for t in topos])
            self._cache["combined"] = MeshTopology(k, np.concatenate(faces), uv)
        return self._cache["combined"]

    def attributes(self) -> list[GarmentAttributes]:
        return [GarmentAttributes(**L["attributes"]) for L in self.header["layers"]]

    def patch_maps(self, patch_size: int | None = None) -> list[PatchMap]:
        out = []
        for L, topo in zip(self.header["layers"], self.topologies()):
            stored = L.get("patch_map")
            if stored is not None and (patch_size is None or patch_size == L.get("patch_size")):
                out.append(PatchMap.from_dict(stored, topo.n_vertices))
            else:
                out.append(patchify(topo, patch_size or 4))
        return out

    def velocities(self) -> np.ndarray:
        """Backward differences (x_t - x_{t-1}) / dt, zero at frame 0."""
        v = np.zeros_like(self.positions)
        v[1:] = (self.positions[1:] - self.positions[:-1]) / self.dt
        return v

    def body_velocities(self) -> np.ndarray:
        v = np.zeros_like(self.body)
        v[1:] = (self.body[1:] - self.body[:-1]) / self.dt
        return v

    def frame_slice(self, start: int, stop: int) -> "Sequence":
        return Sequence(dict(self.header), self.positions[start:stop], self.body[start:stop],
                        self.body_normals[start:stop], self.wind[start:stop])


def encode(seq: Sequence) -> bytes:
    header = dict(seq.header)
    header["frames"] = int(seq.n_frames)
    header["n_garment"] = int(seq.positions.shape[1])
    header["n_body"] = int(seq.body.shape[1])
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(blob)), blob]
    for f in range(seq.n_frames):
        frame = np.concatenate([seq.positions[f].reshape(-1), seq.body[f].reshape(-1),
                                seq.body_normals[f].reshape(-1), seq.wind[f].reshape(-1)])
        parts.append(frame.astype("<f4").tobytes())
    return b"".join(parts)


def decode(data: bytes) -> Sequence:
    if len(data) < _PREFIX.size:
        raise FormatError("file too short for an LSEQ prefix")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported LSEQ version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        n, nb, frames = header["n_garment"], header["n_body"], header["frames"]
    except (UnicodeDecodeError, ValueError, KeyError) as e:
        raise FormatError(f"unreadable LSEQ header: {e}") from None
    per = 3 * n + 6 * nb + 5
    if len(data) - start - hlen != 4 * per * frames:
        raise FormatError(f"expected {4 * per * frames} bytes of frame data, "
                          f"found {len(data) - start - hlen}")
    body = np.frombuffer(data, dtype="<f4", offset=start + hlen)
    arr = body.astype(np.float64).reshape(frames, per)
    pos = arr[:, :3 * n].reshape(frames, n, 3)
    b = arr[:, 3 * n:3 * n + 3 * nb].reshape(frames, nb, 3)
    bn = arr[:, 3 * n + 3 * nb:3 * n + 6 * nb].reshape(frames, nb, 3)
    wind = arr[:, 3 * n + 6 * nb:]
    return Sequence(header, pos, b, bn, wind)


def write_lseq(path, seq: Sequence) -> Path:
    path = Path(path)
    path.write_bytes(encode(seq))
    return path


def read_lseq(path) -> Sequence:
    return decode(Path(path).read_bytes())


def list_sequences(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.lseq"))
