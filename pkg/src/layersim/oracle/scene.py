"""Two-layer cloth draped over a moving capsule body, with interval wind."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..geometry import CALM, GarmentAttributes, WindState, patchify, random_quaternion
from .cloth import build_cloth_grid
from .colliders import BodyCollider, Capsule, sample_surface
from .lseq import Sequence
from .sim import ClothSystem, OracleDivergence, OracleParams, stable_substeps, step_oracle

# wind strengths are drawn on [0, 400] in the reference data; oracle units are 1/100 of that
REFERENCE_WIND_MAX = 400.0
WIND_UNITS_PER_ORACLE = 100.0
ORACLE_WIND_MAX = REFERENCE_WIND_MAX / WIND_UNITS_PER_ORACLE
# sequences whose wind never reaches 50 (reference units) count as not windy
WINDY_THRESHOLD_REFERENCE = 50.0
WINDY_THRESHOLD = WINDY_THRESHOLD_REFERENCE / WIND_UNITS_PER_ORACLE
DIVERGENCE_LIMIT = 1e3


@dataclass
class WindInterval:
    start: int
    end: int  # exclusive
    quaternion: list
    strength: float

    def state(self) -> WindState:
        return WindState(np.asarray(self.quaternion, dtype=np.float64), self.strength)


@dataclass
class SceneConfig:
    grids: list = field(default_factory=lambda: [[8, 8], [8, 8]])
    spacing: float = 1.0 / 7.0
    inner_scale: float = 0.9
    layer_gap: float = 0.02
    clearance: float = 0.04
    attributes: list | None = None
    dt: float = 1.0 / 30.0
    substeps: int = 16
    frames: int = 50
    gravity: list = field(default_factory=lambda: [0.0, 0.0, -9.8])
    wind_intervals: list | None = None
    random_wind_intervals: int = 1
    max_wind_strength: float = ORACLE_WIND_MAX
    capsules: list = field(default_factory=lambda: [{"a": [0, 0, 0], "b": [0, 0, 0], "radius": 0.25}])
    body_velocity: list | None = None
    body_spin: float = 0.0  # rad/s about z
    body_samples: int = 400
    thickness: float = 0.004  # fraction of the cloth size
    damping: float = 0.01
    spring_damping: float = 0.25
    patch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.frames < 1:
            raise ValueError("frame count must be at least 1")
        if len(self.grids) not in (1, 2):
            raise ValueError("one or two garment layers supported")
        if not 0 < self.inner_scale < 1:
            raise ValueError("inner layer must be strictly smaller than the outer layer")
        if self.wind_intervals:
            spans = sorted((w["start"], w["end"]) for w in self.wind_intervals)
            for (s0, e0), (s1, _) in zip(spans, spans[1:]):
                if s1 < e0:
                    raise ValueError("wind intervals overlap")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def cloth_size(self) -> float:
        nx, ny = self.grids[-1]
        return float(max(nx - 1, ny - 1) * self.spacing)


def _sample_attributes(rng, layer) -> GarmentAttributes:
    a = rng.uniform(0.0, 1.0, size=4)
    return GarmentAttributes(*[float(v) for v in a], layer=layer)


def wind_schedule(cfg: SceneConfig, rng) -> list[WindInterval]:
    if cfg.wind_intervals is not None:
        return [WindInterval(**w) for w in cfg.wind_intervals]
    k = cfg.random_wind_intervals
    if k <= 0 or cfg.frames < 2:
        return []
    cuts = np.sort(rng.choice(np.arange(1, cfg.frames + 1), size=min(2 * k, cfg.frames), replace=False))
    out = []
    for a, b in zip(cuts[0::2], cuts[1::2]):
        q = random_quaternion(rng)
        s = float(rng.uniform(0.0, cfg.max_wind_strength))
        out.append(WindInterval(int(a), int(b), q.tolist(), s))
    return out


def wind_at(schedule: list[WindInterval], frame: int) -> WindState:
    for w in schedule:
        if w.start <= frame < w.end:
            return w.state()
    return CALM


def build_scene(cfg: SceneConfig):
    """Cloth system, initial positions, body collider and wind schedule for ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.attributes is not None:
        attrs = [GarmentAttributes(**a) for a in cfg.attributes]
    else:
        attrs = [_sample_attributes(rng, layer) for layer in range(len(cfg.grids))]
    capsules = [Capsule(c["a"], c["b"], c["radius"]) for c in cfg.capsules]
    top = max(max(c.a[2], c.b[2]) + c.radius for c in capsules)
    layers = []
    positions = []
    n_layers = len(cfg.grids)
    for layer, (nx, ny) in enumerate(cfg.grids):
        scale = cfg.inner_scale if (n_layers == 2 and layer == 0) else 1.0
        sp = cfg.spacing * scale
        z = top + cfg.clearance + layer * cfg.layer_gap
        origin = (-(nx - 1) * sp / 2, -(ny - 1) * sp / 2, z)
        topo, rest, springs = build_cloth_grid(nx, ny, sp, attrs[layer], origin, cfg.dt)
        layers.append((topo, rest.positions, springs, attrs[layer]))
        positions.append(rest.positions)
    system = ClothSystem.from_layers(layers)
    x0 = np.concatenate(positions)

    if cfg.body_velocity is not None:
        vel = np.asarray(cfg.body_velocity, dtype=np.float64)
    else:
        ang = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(0.1, 0.3)
        vel = np.array([speed * np.cos(ang), speed * np.sin(ang), 0.0])
    t = np.arange(cfg.frames) * cfg.dt
    trans = t[:, None] * vel[None, :]
    half = 0.5 * cfg.body_spin * t
    quats = np.column_stack([np.cos(half), np.zeros_like(t), np.zeros_like(t), np.sin(half)])
    collider = BodyCollider(capsules, trans, quats)
    schedule = wind_schedule(cfg, rng)
    return system, x0, collider, schedule, rng


def generate_sequence(cfg: SceneConfig) -> Sequence:
    """Run the oracle and package the frames (rounded to f32) with their metadata."""
    system, x, collider, schedule, _ = build_scene(cfg)
    eps = cfg.thickness * cfg.cloth_size
    params = OracleParams(damping=cfg.damping, spring_damping=cfg.spring_damping,
                          eps_body=eps, eps_layer=eps,
                          layer_radius=cfg.spacing * cfg.inner_scale)
    local_pts, local_nrm = sample_surface(collider.capsules, cfg.body_samples)
    n_body = len(local_pts)
    gravity = np.asarray(cfg.gravity, dtype=np.float64)
    n_sub = stable_substeps(system, cfg.dt, cfg.substeps, params.spring_damping)
    sub_dt = cfg.dt / n_sub

    frames = np.zeros((cfg.frames, system.n_vertices, 3))
    body = np.zeros((cfg.frames, n_body, 3))
    normals = np.zeros((cfg.frames, n_body, 3))
    wind = np.zeros((cfg.frames, 5))
    v = np.zeros_like(x)
    for f in range(cfg.frames):
        if f > 0:
            w = wind_at(schedule, f)
            for s in range(n_sub):
                p0 = collider.pose(f - 1 + s / n_sub)
                p1 = collider.pose(f - 1 + (s + 1) / n_sub)
                x, v, _ = step_oracle(system, x, v, w, gravity, sub_dt, params, p0, p1)
            if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_LIMIT:
                raise OracleDivergence("oracle diverged", frame=f)
        pose = collider.pose(f)
        frames[f] = x
        body[f] = pose.to_world(local_pts)
        normals[f] = local_nrm @ pose.rot.T
        wind[f] = wind_at(schedule, f).as_array()

    header = {
        "format": "LSEQ",
        "dt": cfg.dt,
        "seed": cfg.seed,
        "cloth_size": cfg.cloth_size,
        "thickness": eps,
        "substeps": n_sub,
        "collider": collider.to_dict(),
        "wind_intervals": [dataclasses.asdict(w) for w in schedule],
        "windy": any(w.strength >= WINDY_THRESHOLD for w in schedule),
        "scene": cfg.to_dict(),
        "layers": [],
    }
    for topo, at in zip(system.topologies, system.attrs):
        pm = patchify(topo, cfg.patch_size)
        header["layers"].append({
            "n_vertices": topo.n_vertices,
            "faces": topo.faces.tolist(),
            "uv": topo.uv.tolist(),
            "attributes": at.to_dict(),
            "patch_size": cfg.patch_size,
            "patch_map": pm.to_dict(),
        })

    def f32(a):
        return a.astype(np.float32).astype(np.float64)

    return Sequence(header, f32(frames), f32(body), f32(normals), f32(wind))
