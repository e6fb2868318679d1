from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import GarmentAttributes, MeshState, MeshTopology, vertex_areas

# physical ranges the normalized [0, 1] attributes map onto
STRETCH_K = (25.0, 100.0)  # N/m
SHEAR_RATIO = 0.5
BEND_K = (0.5, 5.0)  # N/m
AREAL_DENSITY = (0.1, 0.5)  # kg/m^2


def _lerp(lo_hi, s):
    lo, hi = lo_hi
    return lo + (hi - lo) * float(s)


@dataclass
class SpringSet:
    """Spring classes, each an (i, j, rest length, stiffness) table."""
    structural: np.ndarray
    shear: np.ndarray
    bend: np.ndarray

    def all(self) -> np.ndarray:
        return np.concatenate([self.structural, self.shear, self.bend])

    def counts(self) -> tuple[int, int, int]:
        return len(self.structural), len(self.shear), len(self.bend)

    def offset(self, k: int) -> "SpringSet":
        def sh(a):
            b = a.copy()
            b[:, :2] += k
            return b
        return SpringSet(sh(self.structural), sh(self.shear), sh(self.bend))


def _springs(pairs, x, k) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 4))
    p = np.asarray(pairs, dtype=np.float64)
    i, j = p[:, 0].astype(np.int64), p[:, 1].astype(np.int64)
    rest = np.linalg.norm(x[i] - x[j], axis=1)
    return np.column_stack([p, rest, np.full(len(p), k)])


def build_cloth_grid(nx: int, ny: int, spacing: float, attrs: GarmentAttributes | None = None,
                     origin=(0.0, 0.0, 0.0), dt: float = 1.0 / 30.0):
    """Planar cloth in the z = origin[2] plane, vertex (i, j) at index j * nx + i.

    Returns the topology, the rest state and the springs.  Faces wind
    counter-clockwise seen from +z, so rest normals are +z.
    """
    if nx < 2 or ny < 2:
        raise ValueError("cloth grid needs at least 2x2 vertices")
    if spacing <= 0:
        raise ValueError("grid spacing must be positive")
    attrs = attrs or GarmentAttributes()
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.reshape(-1), jj.reshape(-1)
    x = np.column_stack([ii * spacing, jj * spacing, np.zeros(nx * ny)]) + np.asarray(origin)
    uv = np.column_stack([ii / (nx - 1), jj / (ny - 1)])

    def idx(i, j):
        return j * nx + i

    faces = []
    structural, shear, bend = [], [], []
    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                structural.append((idx(i, j), idx(i + 1, j)))
            if j + 1 < ny:
                structural.append((idx(i, j), idx(i, j + 1)))
            if i + 2 < nx:
                bend.append((idx(i, j), idx(i + 2, j)))
            if j + 2 < ny:
                bend.append((idx(i, j), idx(i, j + 2)))
            if i + 1 < nx and j + 1 < ny:
                a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
                faces += [(a, b, c), (a, c, d)]
                shear += [(a, c), (b, d)]
    topo = MeshTopology(nx * ny, np.asarray(faces), uv)
    k_struct = _lerp(STRETCH_K, attrs.stretch_stiffness)
    springs = SpringSet(_springs(structural, x, k_struct),
                        _springs(shear, x, SHEAR_RATIO * k_struct),
                        _springs(bend, x, _lerp(BEND_K, attrs.bend_stiffness)))
    zeros = np.zeros_like(x)
    state = MeshState(topo, x, zeros, zeros.copy(), 0, dt)
    return topo, state, springs


def vertex_masses(topology: MeshTopology, rest_positions, attrs: GarmentAttributes) -> np.ndarray:
    return _lerp(AREAL_DENSITY, attrs.mass_density) * vertex_areas(topology, rest_positions)


def spring_forces(x: np.ndarray, springs: np.ndarray) -> np.ndarray:
    """Hooke forces; each spring adds +f to i and -f to j."""
    f = np.zeros_like(x)
    if len(springs) == 0:
        return f
    i = springs[:, 0].astype(np.int64)
    j = springs[:, 1].astype(np.int64)
    d = x[j] - x[i]
    length = np.linalg.norm(d, axis=1)
    safe = np.where(length > 0, length, 1.0)
    mag = springs[:, 3] * (length - springs[:, 2])
    fij = (mag / safe)[:, None] * d
    np.add.at(f, i, fij)
    np.add.at(f, j, -fij)
    return f


def spring_damping_forces(x: np.ndarray, v: np.ndarray, springs: np.ndarray, masses: np.ndarray,
                          ratio: float) -> np.ndarray:
    """Dashpots along each spring, at ``ratio`` of the spring's critical damping.

    Only the relative velocity along the spring is resisted, so the forces
    cancel pairwise and leave the center of mass untouched.
    """
    f = np.zeros_like(x)
    if len(springs) == 0 or ratio == 0.0:
        return f
    i = springs[:, 0].astype(np.int64)
    j = springs[:, 1].astype(np.int64)
    d = x[j] - x[i]
    length = np.linalg.norm(d, axis=1)
    u = d / np.where(length > 0, length, 1.0)[:, None]
    reduced = masses[i] * masses[j] / (masses[i] + masses[j])
    c = 2.0 * ratio * np.sqrt(springs[:, 3] * reduced)
    fij = (c * np.sum((v[j] - v[i]) * u, axis=1))[:, None] * u
    np.add.at(f, i, fij)
    np.add.at(f, j, -fij)
    return f
