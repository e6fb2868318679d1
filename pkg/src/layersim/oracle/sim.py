"""Semi-implicit Euler mass-spring stepper with projection-based collisions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import GarmentAttributes, MeshTopology, SpatialHash, WindState, vertex_areas, \
    vertex_normals
from .cloth import SpringSet, spring_damping_forces, spring_forces, vertex_masses
from .colliders import ColliderPose, surface_velocity


class OracleDivergence(RuntimeError):
    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message if frame is None else f"{message} (frame {frame})")
        self.frame = frame


@dataclass
class ClothSystem:
    """Several garment layers stacked into one vertex array (layer 0 first)."""
    topologies: list[MeshTopology]
    attrs: list[GarmentAttributes]
    springs: np.ndarray
    masses: np.ndarray
    friction: np.ndarray
    topology: MeshTopology
    offsets: list[int]

    @classmethod
    def from_layers(cls, layers: list[tuple[MeshTopology, np.ndarray, SpringSet, GarmentAttributes]]):
        topos, attrs, springs, masses, fric, offsets = [], [], [], [], [], []
        faces, uvs = [], []
        k = 0
        for topo, rest, sp, at in layers:
            offsets.append(k)
            topos.append(topo)
            attrs.append(at)
            springs.append(sp.offset(k).all())
            masses.append(vertex_masses(topo, rest, at))
            fric.append(np.full(topo.n_vertices, at.friction))
            faces.append(topo.faces + k)
            uvs.append(topo.uv)
            k += topo.n_vertices
        combined = MeshTopology(k, np.concatenate(faces), np.concatenate(uvs))
        return cls(topos, attrs, np.concatenate(springs), np.concatenate(masses),
                   np.concatenate(fric), combined, offsets)

    @property
    def n_vertices(self) -> int:
        return self.topology.n_vertices

    def layer_slice(self, layer: int) -> slice:
        return slice(self.offsets[layer], self.offsets[layer] + self.topologies[layer].n_vertices)

    def max_frequency(self) -> float:
        """Upper bound on the spring system's angular frequency (Gershgorin on M^-1 K)."""
        if len(self.springs) == 0:
            return 0.0
        i = self.springs[:, 0].astype(int)
        j = self.springs[:, 1].astype(int)
        k = self.springs[:, 3]
        inv_m = 1.0 / self.masses
        row = np.bincount(i, k * (inv_m[i] + inv_m[j]), minlength=self.n_vertices) \
            + np.bincount(j, k * (inv_m[i] + inv_m[j]), minlength=self.n_vertices)
        return float(np.sqrt(row.max()))


def stable_substeps(system: ClothSystem, dt: float, minimum: int = 1,
                    damping_ratio: float = 0.0, safety: float = 0.8) -> int:
    """Substeps per frame keeping omega * dt_sub inside the explicit stability region.

    For semi-implicit Euler with dashpots the limit on h = omega * dt_sub is
    h^2 + 4 zeta h < 4.
    """
    z = damping_ratio
    h_max = safety * (2.0 * np.sqrt(z * z + 1.0) - 2.0 * z)
    return max(minimum, int(np.ceil(dt * system.max_frequency() / h_max)))


@dataclass
class OracleParams:
    damping: float = 0.01  # N s / m, per vertex
    spring_damping: float = 0.25  # fraction of critical, per spring
    eps_body: float = 0.004
    eps_layer: float = 0.004
    layer_radius: float = 0.15  # nearest-inner-vertex search radius
    layer_iterations: int = 4
    collisions: bool = True


def wind_force(wind: WindState, normals, areas) -> np.ndarray:
    """Per-vertex push along the wind direction, proportional to the exposed area."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    a = np.asarray(areas, dtype=np.float64).reshape(-1)
    if wind.strength == 0.0:
        return np.zeros_like(n)
    d = wind.direction
    facing = np.maximum(0.0, n @ d)
    return (wind.strength * a * facing)[:, None] * d


def collide_body(x, v, pose: ColliderPose, eps: float, surface_vel=None, friction=0.0):
    """Project points closer than ``eps`` to the body out to distance ``eps``.

    The inward normal velocity relative to the body surface is removed and the
    tangential part is slowed by Coulomb friction.
    """
    if eps <= 0:
        raise ValueError("body thickness must be positive")
    x = np.array(x, dtype=np.float64).reshape(-1, 3)
    v = np.array(v, dtype=np.float64).reshape(-1, 3)
    fr = np.broadcast_to(np.asarray(friction, dtype=np.float64), (len(x),))
    sv = np.zeros_like(x) if surface_vel is None else np.asarray(surface_vel).reshape(-1, 3)
    touched = np.zeros(len(x), dtype=bool)
    normal = np.zeros_like(x)
    # union of capsules: a point pushed out of one may sit in another
    for _ in range(4):
        sd, n = pose.signed_distance(x)
        hit = sd < eps
        if not np.any(hit):
            break
        x[hit] += (eps - sd[hit])[:, None] * n[hit]
        touched |= hit
        normal[hit] = n[hit]
    if np.any(touched):
        rel = v[touched] - sv[touched]
        n = normal[touched]
        vn = np.sum(rel * n, axis=1)
        inward = vn < 0
        vt = rel - vn[:, None] * n
        vt_len = np.linalg.norm(vt, axis=1)
        loss = fr[touched] * np.maximum(0.0, -vn)
        keep = np.where(vt_len > 0, np.maximum(0.0, 1.0 - loss / np.where(vt_len > 0, vt_len, 1.0)), 0.0)
        new_rel = np.where(inward[:, None], keep[:, None] * vt, rel)
        v[touched] = sv[touched] + new_rel
    return x, v


@dataclass
class LayerContact:
    inner_x: np.ndarray
    outer_x: np.ndarray
    inner_v: np.ndarray
    outer_v: np.ndarray
    n_contacts: int


def collide_layers(inner_x, outer_x, inner_normals, eps: float, radius: float,
                   inner_v=None, outer_v=None, inner_m=None, outer_m=None,
                   iterations: int = 4) -> LayerContact:
    """Keep outer vertices at least ``eps`` in front of their nearest inner vertex.

    Separation is measured along the inner vertex normal.  Each correction is
    shared between the two vertices in inverse proportion to their masses.
    """
    if eps <= 0:
        raise ValueError("layer thickness must be positive")
    xi = np.array(inner_x, dtype=np.float64).reshape(-1, 3)
    xo = np.array(outer_x, dtype=np.float64).reshape(-1, 3)
    ni = np.asarray(inner_normals, dtype=np.float64).reshape(-1, 3)
    vi = np.zeros_like(xi) if inner_v is None else np.array(inner_v, dtype=np.float64)
    vo = np.zeros_like(xo) if outer_v is None else np.array(outer_v, dtype=np.float64)
    mi = np.ones(len(xi)) if inner_m is None else np.asarray(inner_m, dtype=np.float64)
    mo = np.ones(len(xo)) if outer_m is None else np.asarray(outer_m, dtype=np.float64)
    radius = max(radius, eps)
    contacts = 0
    for _ in range(iterations):
        best, _ = SpatialHash(xi, radius).nearest(xo)
        valid = best >= 0
        if not np.any(valid):
            break
        o = np.nonzero(valid)[0]
        i = best[valid]
        n = ni[i]
        sd = np.sum((xo[o] - xi[i]) * n, axis=1)
        hit = (sd < eps) & (sd > -radius)
        if not np.any(hit):
            break
        o, i, n, sd = o[hit], i[hit], n[hit], sd[hit]
        contacts = max(contacts, len(o))
        w_o = mi[i] / (mi[i] + mo[o])
        w_i = 1.0 - w_o
        delta = eps - sd
        xo[o] += (w_o * delta)[:, None] * n
        shift = np.zeros_like(xi)
        np.add.at(shift, i, -(w_i * delta)[:, None] * n)
        count = np.bincount(i, minlength=len(xi))
        xi += shift / np.maximum(count, 1)[:, None]
        vn = np.sum((vo[o] - vi[i]) * n, axis=1)
        closing = vn < 0
        if np.any(closing):
            oc, ic, nc, vc = o[closing], i[closing], n[closing], vn[closing]
            vo[oc] -= (w_o[closing] * vc)[:, None] * nc
            dv = np.zeros_like(vi)
            np.add.at(dv, ic, (w_i[closing] * vc)[:, None] * nc)
            vi += dv / np.maximum(np.bincount(ic, minlength=len(xi)), 1)[:, None]
    return LayerContact(xi, xo, vi, vo, contacts)


def step_oracle(system: ClothSystem, x, v, wind: WindState, gravity, dt: float,
                params: OracleParams | None = None, pose0: ColliderPose | None = None,
                pose1: ColliderPose | None = None):
    """One semi-implicit Euler step; returns (positions, velocities, accelerations)."""
    params = params or OracleParams()
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    m = system.masses[:, None]
    force = spring_forces(x, system.springs) + m * np.asarray(gravity, dtype=np.float64)
    if wind.strength != 0.0:
        force += wind_force(wind, vertex_normals(system.topology, x),
                            vertex_areas(system.topology, x))
    if params.damping:
        force -= params.damping * v
    if params.spring_damping:
        force += spring_damping_forces(x, v, system.springs, system.masses,
                                       params.spring_damping)
    if not np.all(np.isfinite(force)):
        raise OracleDivergence("non-finite force in oracle step")
    v_new = v + dt * force / m
    x_new = x + dt * v_new
    if params.collisions and pose1 is not None:
        sv = None if pose0 is None else surface_velocity(x_new, pose0, pose1, dt)
        x_new, v_new = collide_body(x_new, v_new, pose1, params.eps_body, sv, system.friction)
        if len(system.topologies) > 1:
            inner, outer = system.layer_slice(0), system.layer_slice(1)
            normals = vertex_normals(system.topologies[0], x_new[inner])
            res = collide_layers(x_new[inner], x_new[outer], normals, params.eps_layer,
                                 params.layer_radius, v_new[inner], v_new[outer],
                                 system.masses[inner], system.masses[outer],
                                 params.layer_iterations)
            x_new[inner], x_new[outer] = res.inner_x, res.outer_x
            v_new[inner], v_new[outer] = res.inner_v, res.outer_v
            # layer pushes must not drive anything back into the body
            x_new, _ = collide_body(x_new, v_new, pose1, params.eps_body)
    accel = (v_new - v) / dt
    return x_new, v_new, accel
