"""Capsule bodies with scripted rigid motion, their signed distance and surface samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import quat_to_matrix


@dataclass
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")

    def closest_on_axis(self, p: np.ndarray) -> np.ndarray:
        ab = self.b - self.a
        den = float(ab @ ab)
        if den == 0.0:
            return np.broadcast_to(self.a, p.shape)
        s = np.clip(((p - self.a) @ ab) / den, 0.0, 1.0)
        return self.a + s[:, None] * ab

    def signed_distance(self, p: np.ndarray):
        c = self.closest_on_axis(p)
        d = p - c
        dist = np.linalg.norm(d, axis=1)
        n = np.zeros_like(p)
        ok = dist > 1e-15
        n[ok] = d[ok] / dist[ok, None]
        # points on the axis: push along any direction perpendicular to it
        if np.any(~ok):
            ab = self.b - self.a
            fallback = np.array([0.0, 0.0, 1.0])
            if np.linalg.norm(ab) > 0:
                perp = np.cross(ab, [1.0, 0.0, 0.0])
                if np.linalg.norm(perp) < 1e-9:
                    perp = np.cross(ab, [0.0, 1.0, 0.0])
                fallback = perp / np.linalg.norm(perp)
            n[~ok] = fallback
        return dist - self.radius, n

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "radius": self.radius}


def sphere(center, radius: float) -> Capsule:
    return Capsule(center, center, radius)


@dataclass
class ColliderPose:
    """Capsules placed in the world by rotation ``rot`` and translation ``trans``."""
    capsules: list[Capsule]
    rot: np.ndarray
    trans: np.ndarray

    def to_local(self, p):
        return (np.asarray(p, dtype=np.float64) - self.trans) @ self.rot

    def to_world(self, p):
        return np.asarray(p, dtype=np.float64) @ self.rot.T + self.trans

    def signed_distance(self, p):
        """Distance to the union of capsules and the outward unit normal (world frame)."""
        lp = self.to_local(np.asarray(p, dtype=np.float64).reshape(-1, 3))
        best = np.full(len(lp), np.inf)
        normal = np.zeros_like(lp)
        for cap in self.capsules:
            sd, n = cap.signed_distance(lp)
            take = sd < best
            best[take] = sd[take]
            normal[take] = n[take]
        return best, normal @ self.rot.T


def _slerp(q0, q1, s):
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    if q0 @ q1 < 0:
        q1 = -q1
    dot = min(1.0, float(q0 @ q1))
    if dot > 0.9995:
        q = q0 + s * (q1 - q0)
        return q / np.linalg.norm(q)
    th = np.arccos(dot)
    q = (np.sin((1 - s) * th) * q0 + np.sin(s * th) * q1) / np.sin(th)
    return q / np.linalg.norm(q)


@dataclass
class BodyCollider:
    capsules: list[Capsule]
    translations: np.ndarray  # (frames, 3)
    quaternions: np.ndarray  # (frames, 4)

    def __post_init__(self):
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64).reshape(-1, 4)
        if len(self.translations) != len(self.quaternions):
            raise ValueError("trajectory translation and rotation lengths differ")

    @property
    def n_frames(self) -> int:
        return len(self.translations)

    def pose(self, time: float) -> ColliderPose:
        """Pose at fractional frame ``time`` (linear translation, slerp rotation)."""
        last = self.n_frames - 1
        time = min(max(time, 0.0), float(last))
        f = int(np.floor(time))
        s = time - f
        if f >= last:
            f, s = last, 0.0
        if s == 0.0:
            return ColliderPose(self.capsules, quat_to_matrix(self.quaternions[f]),
                                self.translations[f].copy())
        t = (1 - s) * self.translations[f] + s * self.translations[f + 1]
        q = _slerp(self.quaternions[f], self.quaternions[f + 1], s)
        return ColliderPose(self.capsules, quat_to_matrix(q), t)

    def to_dict(self) -> dict:
        return {"capsules": [c.to_dict() for c in self.capsules],
                "translations": self.translations.tolist(),
                "quaternions": self.quaternions.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BodyCollider":
        caps = [Capsule(c["a"], c["b"], c["radius"]) for c in d["capsules"]]
        return cls(caps, d["translations"], d["quaternions"])


def surface_velocity(p, pose0: ColliderPose, pose1: ColliderPose, dt: float) -> np.ndarray:
    """Velocity of the body material point currently at ``p``."""
    return (pose1.to_world(pose0.to_local(p)) - p) / dt


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    phi = np.pi * (3 - np.sqrt(5)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sample_surface(capsules: list[Capsule], n: int):
    """About ``n`` points with outward normals on the union surface (body frame)."""
    if n <= 0:
        return np.zeros((0, 3)), np.zeros((0, 3))

    def areas_of(c):
        return 4 * np.pi * c.radius ** 2 + 2 * np.pi * c.radius * np.linalg.norm(c.b - c.a)

    areas = np.asarray([areas_of(c) for c in capsules])
    quota = np.maximum(1, np.round(n * areas / areas.sum()).astype(int))
    quota[-1] = max(1, n - quota[:-1].sum())
    pts, nrm = [], []
    for cap, m in zip(capsules, quota):
        ab = cap.b - cap.a
        h = np.linalg.norm(ab)
        if h == 0:
            u = _fibonacci_sphere(m)
            pts.append(cap.a + cap.radius * u)
            nrm.append(u)
            continue
        axis = ab / h
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        n_cyl = int(round(m * 2 * np.pi * cap.radius * h / areas_of(cap)))
        n_caps = max(2, m - n_cyl)
        # hemispheres: split a Fibonacci sphere by the sign of its axial coordinate
        u = _fibonacci_sphere(n_caps)
        world_u = u[:, :1] * e1 + u[:, 1:2] * e2 + u[:, 2:] * axis
        end = np.where(u[:, 2:] >= 0, cap.b, cap.a)
        pts.append(end + cap.radius * world_u)
        nrm.append(world_u)
        if n_cyl > 0:
            k = np.arange(n_cyl) + 0.5
            s = k / n_cyl
            phi = np.pi * (3 - np.sqrt(5)) * np.arange(n_cyl)
            radial = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
            pts.append(cap.a + s[:, None] * ab + cap.radius * radial)
            nrm.append(radial)
    pts = np.concatenate(pts)
    nrm = np.concatenate(nrm)
    if len(capsules) > 1:
        pose = ColliderPose(capsules, np.eye(3), np.zeros(3))
        sd, _ = pose.signed_distance(pts)
        keep = sd > -1e-9
        pts, nrm = pts[keep], nrm[keep]
    return pts, nrm
