"""Mesh, rotation, proximity and patch primitives shared by the oracle and the model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EDGE_KINDS = ("mesh", "world", "body", "wind", "gravity", "attribute")
KIND_CODE = {name: k for k, name in enumerate(EDGE_KINDS)}


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------- rotations

def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise GeometryError(f"quaternion must be 4 finite numbers, got {q!r}")
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise GeometryError(f"quaternion is not unit length (|q| = {np.linalg.norm(q):.9g})")
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def is_rotation(m, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=np.float64)
    return (m.shape == (3, 3)
            and np.abs(m @ m.T - np.eye(3)).max() <= tol
            and abs(np.linalg.det(m) - 1.0) <= tol)


def canonical_frame(normal, rng: np.random.Generator) -> np.ndarray:
    """Rotation whose rows are the local x, y, z axes; z is ``normal``, x is random.

    Applying the result to world vectors expresses them in the local frame.
    """
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise GeometryError("canonical_frame needs a nonzero normal")
    if abs(norm - 1.0) > 1e-6:
        raise GeometryError(f"canonical_frame needs a unit normal (|n| = {norm:.9g})")
    n = n / norm
    while True:
        a = rng.normal(size=3)
        a -= a.dot(n) * n
        la = np.linalg.norm(a)
        if la > 1e-6:
            break
    x = a / la
    y = np.cross(n, x)
    return np.stack([x, y, n])


def canonical_frames(normals: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`canonical_frame` for an (n, 3) array of unit normals."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    lens = np.linalg.norm(n, axis=1)
    if np.any(lens < 1e-12):
        raise GeometryError("canonical_frames needs nonzero normals")
    n = n / lens[:, None]
    a = rng.normal(size=n.shape)
    a -= np.sum(a * n, axis=1, keepdims=True) * n
    la = np.linalg.norm(a, axis=1)
    bad = la < 1e-6
    while np.any(bad):
        fresh = rng.normal(size=(int(bad.sum()), 3))
        fresh -= np.sum(fresh * n[bad], axis=1, keepdims=True) * n[bad]
        a[bad] = fresh
        la = np.linalg.norm(a, axis=1)
        bad = la < 1e-6
    x = a / la[:, None]
    y = np.cross(n, x)
    return np.stack([x, y, n], axis=1)


# ---------------------------------------------------------------- mesh types

def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0) if len(e) else np.zeros((0, 2), dtype=np.int64)


@dataclass
class MeshTopology:
    n_vertices: int
    faces: np.ndarray
    uv: np.ndarray | None = None
    edges: np.ndarray = field(default=None)

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= self.n_vertices):
            raise GeometryError("face index out of range")
        if self.edges is None:
            self.edges = edges_from_faces(self.faces)
        else:
            self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.uv is not None:
            self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
            if len(self.uv) != self.n_vertices:
                raise GeometryError("one UV coordinate per vertex required")

    def offset(self, k: int) -> "MeshTopology":
        return MeshTopology(self.n_vertices, self.faces + k, self.uv, self.edges + k)


@dataclass
class MeshState:
    topology: MeshTopology
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    t: int = 0
    dt: float = 1.0 / 30.0

    def __post_init__(self):
        n = self.topology.n_vertices
        for name in ("positions", "velocities", "accelerations"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 3)
            if len(arr) != n:
                raise GeometryError(f"{name} has {len(arr)} rows for {n} vertices")
            setattr(self, name, arr)


@dataclass
class GarmentAttributes:
    """Material knobs in [0, 1]; ``layer`` 0 is the inner garment."""
    mass_density: float = 0.5
    bend_stiffness: float = 0.5
    stretch_stiffness: float = 0.5
    friction: float = 0.5
    layer: int = 0

    def __post_init__(self):
        vals = [self.mass_density, self.bend_stiffness, self.stretch_stiffness, self.friction]
        if not all(np.isfinite(vals)):
            raise GeometryError("garment attributes must be finite")
        if self.layer not in (0, 1):
            raise GeometryError(f"layer index must be 0 or 1, got {self.layer}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.mass_density, self.bend_stiffness, self.stretch_stiffness,
                         self.friction, float(self.layer)])

    def to_dict(self) -> dict:
        return {"mass_density": self.mass_density, "bend_stiffness": self.bend_stiffness,
                "stretch_stiffness": self.stretch_stiffness, "friction": self.friction,
                "layer": self.layer}


@dataclass
class WindState:
    quaternion: np.ndarray
    strength: float

    def __post_init__(self):
        self.quaternion = np.asarray(self.quaternion, dtype=np.float64)
        if abs(np.linalg.norm(self.quaternion) - 1.0) > 1e-9:
            raise GeometryError("wind quaternion must be unit length")
        if not self.strength >= 0.0:
            raise GeometryError("wind strength must be non-negative")

    @property
    def direction(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)[:, 2]

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.quaternion, [self.strength]])


CALM = WindState(np.array([1.0, 0.0, 0.0, 0.0]), 0.0)


def vertex_normals(topology: MeshTopology, positions, return_flags: bool = False):
    """Area-weighted vertex normals.

    Vertices whose incident faces have zero total area get (0, 0, 1); with
    ``return_flags`` a boolean mask of those vertices is returned as well.
    """
    x = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    f = topology.faces
    fn = np.cross(x[f[:, 1]] - x[f[:, 0]], x[f[:, 2]] - x[f[:, 0]])
    acc = np.zeros_like(x)
    for c in range(3):
        np.add.at(acc, f[:, c], fn)
    lens = np.linalg.norm(acc, axis=1)
    degenerate = lens < 1e-300
    out = np.where(degenerate[:, None], np.array([0.0, 0.0, 1.0]),
                   acc / np.where(degenerate, 1.0, lens)[:, None])
    if return_flags:
        return out, degenerate
    return out


def vertex_areas(topology: MeshTopology, positions) -> np.ndarray:
    """One third of the incident triangle area per vertex."""
    x = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    f = topology.faces
    a = 0.5 * np.linalg.norm(np.cross(x[f[:, 1]] - x[f[:, 0]], x[f[:, 2]] - x[f[:, 0]]), axis=1)
    out = np.zeros(len(x))
    for c in range(3):
        np.add.at(out, f[:, c], a / 3.0)
    return out


# ---------------------------------------------------------------- proximity

@dataclass
class EdgeSet:
    receivers: np.ndarray
    senders: np.ndarray
    kinds: np.ndarray

    def __post_init__(self):
        self.receivers = np.asarray(self.receivers, dtype=np.int64).reshape(-1)
        self.senders = np.asarray(self.senders, dtype=np.int64).reshape(-1)
        self.kinds = np.asarray(self.kinds, dtype=np.int8).reshape(-1)
        if not (len(self.receivers) == len(self.senders) == len(self.kinds)):
            raise GeometryError("edge arrays must have equal length")

    @classmethod
    def empty(cls) -> "EdgeSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def of_kind(cls, receivers, senders, kind: str) -> "EdgeSet":
        receivers = np.asarray(receivers, dtype=np.int64).reshape(-1)
        return cls(receivers, senders, np.full(len(receivers), KIND_CODE[kind]))

    def __len__(self):
        return len(self.receivers)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.receivers.tolist(), self.senders.tolist()))

    def concat(self, *others: "EdgeSet") -> "EdgeSet":
        parts = (self,) + others
        return EdgeSet(np.concatenate([p.receivers for p in parts]),
                       np.concatenate([p.senders for p in parts]),
                       np.concatenate([p.kinds for p in parts]))

    def shifted(self, recv_offset: int = 0, send_offset: int = 0) -> "EdgeSet":
        return EdgeSet(self.receivers + recv_offset, self.senders + send_offset, self.kinds)


class SpatialHash:
    """Uniform grid with cell size equal to the query radius.

    Built once over the sender points; queries are read-only.
    """

    def __init__(self, points, cell: float):
        if cell <= 0:
            raise GeometryError("spatial hash cell size must be positive")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.cell = float(cell)
        c = np.floor(self.points / self.cell).astype(np.int64)
        self._cells = c
        self._keys = self._encode(c)
        self._order = np.argsort(self._keys, kind="stable")
        self._sorted = self._keys[self._order]

    @staticmethod
    def _encode(c: np.ndarray) -> np.ndarray:
        # bijective for |cell index| < 2**20 per axis
        b = (c + (1 << 20)).astype(np.int64)
        if np.any(b < 0) or np.any(b >= (1 << 21)):
            raise GeometryError("coordinates too far from origin for the spatial hash")
        return (b[:, 0] << 42) | (b[:, 1] << 21) | b[:, 2]

    def candidates(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """All (query, point) index pairs sharing a cell or an adjacent cell."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        qc = np.floor(q / self.cell).astype(np.int64)
        qi_all, pj_all = [], []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    keys = self._encode(qc + np.array([dx, dy, dz]))
                    lo = np.searchsorted(self._sorted, keys, side="left")
                    hi = np.searchsorted(self._sorted, keys, side="right")
                    counts = hi - lo
                    if counts.sum() == 0:
                        continue
                    qi = np.repeat(np.arange(len(q)), counts)
                    starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
                    pos = np.arange(counts.sum()) + starts
                    qi_all.append(qi)
                    pj_all.append(self._order[pos])
        if not qi_all:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(qi_all), np.concatenate(pj_all)

    def query_radius(self, queries, radius: float | None = None):
        """Pairs (query, point) with distance strictly below ``radius`` (default: cell)."""
        r = self.cell if radius is None else radius
        if r > self.cell:
            raise GeometryError("query radius exceeds the hash cell size")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        qi, pj = self.candidates(q)
        d = np.linalg.norm(q[qi] - self.points[pj], axis=1)
        keep = d < r
        return qi[keep], pj[keep], d[keep]

    def nearest(self, queries, radius: float | None = None):
        """Nearest point within ``radius`` for each query; -1 where there is none."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        qi, pj, d = self.query_radius(q, radius)
        best = np.full(len(q), -1, dtype=np.int64)
        dist = np.full(len(q), np.inf)
        if len(qi):
            order = np.lexsort((pj, d, qi))
            qi, pj, d = qi[order], pj[order], d[order]
            first = np.ones(len(qi), dtype=bool)
            first[1:] = qi[1:] != qi[:-1]
            best[qi[first]] = pj[first]
            dist[qi[first]] = d[first]
        return best, dist


def _pair_keys(r: np.ndarray, s: np.ndarray) -> np.ndarray:
    return (r.astype(np.int64) << 32) | s.astype(np.int64)


def world_space_edges(receivers, senders, radius: float, exclusions: EdgeSet | None = None,
                      same_set: bool | None = None, kind: str = "world") -> EdgeSet:
    """Directed pairs (i, j) with |receivers[i] - senders[j]| < radius.

    When both point sets are the same array, self pairs are dropped.  Pairs
    present in ``exclusions`` (e.g. mesh edges) are removed.
    """
    if radius <= 0:
        raise GeometryError("world edge radius must be positive")
    rp = np.asarray(receivers, dtype=np.float64).reshape(-1, 3)
    sp = np.asarray(senders, dtype=np.float64).reshape(-1, 3)
    if same_set is None:
        same_set = receivers is senders
    grid = SpatialHash(sp, radius)
    qi, pj, _ = grid.query_radius(rp)
    if same_set:
        keep = qi != pj
        qi, pj = qi[keep], pj[keep]
    if exclusions is not None and len(exclusions):
        bad = _pair_keys(exclusions.receivers, exclusions.senders)
        keep = ~np.isin(_pair_keys(qi, pj), bad)
        qi, pj = qi[keep], pj[keep]
    order = np.lexsort((pj, qi))
    return EdgeSet.of_kind(qi[order], pj[order], kind)


def brute_force_edges(receivers, senders, radius: float, same_set: bool = False) -> set:
    """O(n^2) reference for :func:`world_space_edges`."""
    rp = np.asarray(receivers, dtype=np.float64).reshape(-1, 3)
    sp = np.asarray(senders, dtype=np.float64).reshape(-1, 3)
    d = np.linalg.norm(rp[:, None, :] - sp[None, :, :], axis=2)
    i, j = np.nonzero(d < radius)
    out = set(zip(i.tolist(), j.tolist()))
    if same_set:
        out = {(a, b) for a, b in out if a != b}
    return out


# ---------------------------------------------------------------- patches

@dataclass
class PatchMap:
    """Static partition of one garment's vertices into UV-grid patches."""
    members: list[np.ndarray]
    patch_of_vertex: np.ndarray
    mesh_edges: EdgeSet
    grid_index: np.ndarray  # (n_patches, 2) cell coordinates in UV

    @property
    def n_patches(self) -> int:
        return len(self.members)

    def offset(self, vertex_offset: int, patch_offset: int) -> "PatchMap":
        return PatchMap([m + vertex_offset for m in self.members],
                        self.patch_of_vertex + patch_offset,
                        self.mesh_edges.shifted(patch_offset, patch_offset),
                        self.grid_index)

    def to_dict(self) -> dict:
        return {"members": [m.tolist() for m in self.members],
                "grid_index": self.grid_index.tolist()}

    @classmethod
    def from_dict(cls, d: dict, n_vertices: int) -> "PatchMap":
        members = [np.asarray(m, dtype=np.int64) for m in d["members"]]
        return _assemble_patch_map(members, np.asarray(d["grid_index"], dtype=np.int64),
                                   n_vertices)


def _uv_ranks(u: np.ndarray) -> tuple[np.ndarray, int]:
    vals, inv = np.unique(np.round(u, 9), return_inverse=True)
    return inv, len(vals)


def _assemble_patch_map(members, grid_index, n_vertices) -> PatchMap:
    pov = np.full(n_vertices, -1, dtype=np.int64)
    for p, m in enumerate(members):
        if len(m) == 0:
            raise GeometryError(f"patch {p} is empty")
        if np.any(pov[m] >= 0):
            raise GeometryError("patches overlap")
        pov[m] = p
    if np.any(pov < 0):
        raise GeometryError("patches do not cover every vertex")
    lookup = {tuple(g): p for p, g in enumerate(grid_index.tolist())}
    r, s = [], []
    for p, (gu, gv) in enumerate(grid_index.tolist()):
        for du, dv in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = lookup.get((gu + du, gv + dv))
            if q is not None:
                r.append(p)
                s.append(q)
    return PatchMap(members, pov, EdgeSet.of_kind(r, s, "mesh"), grid_index)


def patchify(topology: MeshTopology, patch_size: int = 4) -> PatchMap:
    """Partition vertices into cells of ``patch_size`` x ``patch_size`` UV-grid vertices.

    On a regular grid the UV values take ``nx`` and ``ny`` distinct levels and
    cells are contiguous index blocks.  Irregular UV layouts are quantized to
    roughly sqrt(n) levels per axis first.
    """
    if topology.uv is None:
        raise GeometryError("patchify needs UV coordinates")
    if patch_size < 1:
        raise GeometryError("patch size must be at least 1")
    uv = topology.uv
    iu, nu = _uv_ranks(uv[:, 0])
    iv, nv = _uv_ranks(uv[:, 1])
    if nu * nv != topology.n_vertices:
        levels = max(1, int(round(np.sqrt(topology.n_vertices))))
        iu = np.minimum((uv[:, 0] * levels).astype(np.int64), levels - 1)
        iv = np.minimum((uv[:, 1] * levels).astype(np.int64), levels - 1)
    cu, cv = iu // patch_size, iv // patch_size
    cells = np.stack([cu, cv], axis=1)
    uniq, inv = np.unique(cells[:, ::-1], axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    members = [np.nonzero(inv == p)[0] for p in range(len(uniq))]
    return _assemble_patch_map(members, uniq[:, ::-1].copy(), topology.n_vertices)


def patch_means(values, patch_map: PatchMap) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(len(patch_map.patch_of_vertex), -1)
    sums = np.zeros((patch_map.n_patches, v.shape[1]))
    np.add.at(sums, patch_map.patch_of_vertex, v)
    counts = np.bincount(patch_map.patch_of_vertex, minlength=patch_map.n_patches)
    return sums / counts[:, None]


def patch_states(state: MeshState, patch_map: PatchMap):
    """Member-mean position, velocity and acceleration of every patch."""
    return (patch_means(state.positions, patch_map),
            patch_means(state.velocities, patch_map),
            patch_means(state.accelerations, patch_map))


def vertex_patch_neighbors(patch_map: PatchMap) -> tuple[np.ndarray, np.ndarray]:
    """(vertex, patch) pairs: the vertex's own patch plus its UV-adjacent patches."""
    adj: dict[int, list[int]] = {p: [p] for p in range(patch_map.n_patches)}
    for r, s in zip(patch_map.mesh_edges.receivers.tolist(), patch_map.mesh_edges.senders.tolist()):
        adj[r].append(s)
    vk, pk = [], []
    for k, p in enumerate(patch_map.patch_of_vertex.tolist()):
        for q in adj[p]:
            vk.append(k)
            pk.append(q)
    return np.asarray(vk, dtype=np.int64), np.asarray(pk, dtype=np.int64)


def patch_diameter(positions, patch_map: PatchMap) -> float:
    """Mean over patches of the largest member-to-member distance."""
    x = np.asarray(positions, dtype=np.float64)
    diam = []
    for m in patch_map.members:
        pts = x[m]
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        diam.append(d.max())
    return float(np.mean(diam))


@dataclass
class PatchGraph:
    patch_map: PatchMap
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    world_edges: EdgeSet

    @classmethod
    def build(cls, state: MeshState, patch_map: PatchMap, radius: float) -> "PatchGraph":
        x, v, a = patch_states(state, patch_map)
        we = world_space_edges(x, x, radius, exclusions=patch_map.mesh_edges, same_set=True)
        return cls(patch_map, x, v, a, we)
