"""Turning a garment/body/wind snapshot into tokens and interaction edges."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..geometry import EdgeSet, KIND_CODE, MeshTopology, PatchMap, canonical_frames, \
    patch_diameter, patch_means, quat_to_matrix, vertex_normals, vertex_patch_neighbors, \
    world_space_edges
from .config import SimulatorConfig

ROTATING_KINDS = ("body", "wind", "gravity")


class HistoryError(ValueError):
    pass


@dataclass
class SceneStatic:
    """Per-garment constants: topology, patches, vertex-to-patch decoding pairs."""
    topology: MeshTopology
    layer_sizes: list[int]
    patch_map: PatchMap  # all layers, patch ids offset per layer
    patch_layer: np.ndarray
    attributes: np.ndarray  # (n_layers, 5)
    dec_vertex: np.ndarray
    dec_patch: np.ndarray
    patch_counts: np.ndarray
    rest_patch_diameter: float
    layer_topologies: list

    @property
    def n_vertices(self) -> int:
        return self.topology.n_vertices

    @property
    def n_patches(self) -> int:
        return self.patch_map.n_patches

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    def layer_slice(self, layer: int) -> slice:
        start = sum(self.layer_sizes[:layer])
        return slice(start, start + self.layer_sizes[layer])

    @classmethod
    def from_sequence(cls, seq, patch_size: int) -> "SceneStatic":
        topos = seq.topologies()
        maps = seq.patch_maps(patch_size)
        return cls.build(topos, maps, np.stack([a.as_vector() for a in seq.attributes()]),
                         seq.positions[0])

    @classmethod
    def build(cls, topos, maps, attributes, rest_positions) -> "SceneStatic":
        members, pov_parts, grid, r, s, layer_of = [], [], [], [], [], []
        faces, uvs = [], []
        dv, dp = [], []
        v_off = p_off = 0
        for layer, (topo, pm) in enumerate(zip(topos, maps)):
            shifted = pm.offset(v_off, p_off)
            members += shifted.members
            pov_parts.append(shifted.patch_of_vertex)
            grid.append(pm.grid_index)
            r.append(shifted.mesh_edges.receivers)
            s.append(shifted.mesh_edges.senders)
            layer_of += [layer] * pm.n_patches
            faces.append(topo.faces + v_off)
            uvs.append(topo.uv)
            vk, pk = vertex_patch_neighbors(pm)
            dv.append(vk + v_off)
            dp.append(pk + p_off)
            v_off += topo.n_vertices
            p_off += pm.n_patches
        combined = MeshTopology(v_off, np.concatenate(faces), np.concatenate(uvs))
        pm_all = PatchMap(members, np.concatenate(pov_parts),
                          EdgeSet.of_kind(np.concatenate(r), np.concatenate(s), "mesh"),
                          np.concatenate(grid))
        dec_vertex, dec_patch = np.concatenate(dv), np.concatenate(dp)
        diam = patch_diameter(np.asarray(rest_positions), pm_all)
        return cls(combined, [t.n_vertices for t in topos], pm_all, np.asarray(layer_of),
                   np.asarray(attributes, dtype=np.float64), dec_vertex, dec_patch,
                   np.bincount(dec_vertex, minlength=v_off).astype(np.float64), diam,
                   list(topos))


def resolve_radii(cfg: SimulatorConfig, static: SceneStatic) -> SimulatorConfig:
    """Fill unset interaction radii from the rest patch size."""
    import dataclasses
    changes = {}
    if cfg.radius_patch is None:
        changes["radius_patch"] = 2.5 * static.rest_patch_diameter
    if cfg.radius_body is None:
        changes["radius_body"] = 0.5 * static.rest_patch_diameter
    return dataclasses.replace(cfg, **changes) if changes else cfg


@dataclass
class StepInputs:
    """Everything the simulator sees when predicting frame t+1.

    ``velocities`` holds garment velocities at t, t-1, ..., t-h; body and wind
    histories run t+1, t, ..., t+1-h.
    """
    positions: np.ndarray
    velocities: list
    body_next: np.ndarray
    body_now: np.ndarray
    body_velocities: list
    body_normals: np.ndarray
    winds: list
    gravity: np.ndarray

    def advanced(self, positions, velocity, nxt: "StepInputs") -> "StepInputs":
        """Inputs for the following step, with the garment state replaced by a prediction."""
        return StepInputs(positions, [velocity] + self.velocities[:-1], nxt.body_next,
                          nxt.body_now, nxt.body_velocities, nxt.body_normals, nxt.winds,
                          nxt.gravity)


def inputs_from_sequence(seq, t: int, history: int = 1, gravity=(0.0, 0.0, -9.8)) -> StepInputs:
    if t < 0 or t + 1 >= seq.n_frames:
        raise HistoryError(f"frame {t} has no successor in a {seq.n_frames}-frame sequence")
    if t - history < 0:
        raise HistoryError(f"frame {t} lacks {history} frames of history")
    vel = seq._cache.get("vel")
    if vel is None:
        vel = seq._cache["vel"] = seq.velocities()
    bvel = seq._cache.get("bvel")
    if bvel is None:
        bvel = seq._cache["bvel"] = seq.body_velocities()
    scene = seq.header.get("scene", {})
    g = np.asarray(scene.get("gravity", gravity), dtype=np.float64)
    return StepInputs(
        positions=seq.positions[t],
        velocities=[vel[t - i] for i in range(history + 1)],
        body_next=seq.body[t + 1],
        body_now=seq.body[t],
        body_velocities=[bvel[t + 1 - i] for i in range(history + 1)],
        body_normals=seq.body_normals[t + 1],
        winds=[seq.wind[t + 1 - i] for i in range(history + 1)],
        gravity=g,
    )


@dataclass
class TokenGraph:
    features: dict  # kind -> (rows, features) arrays
    n_patches: int
    n_body: int
    n_layers: int
    receivers: np.ndarray
    senders: np.ndarray
    kinds: np.ndarray
    n_plain: int  # edges [0, n_plain) carry no rotation
    rotations: np.ndarray  # (n_edges - n_plain, 3, 3)
    token_frames: np.ndarray  # (n_tokens, 3, 3); identity for kinds without a frame
    patch_positions: np.ndarray
    has_edges: np.ndarray

    @property
    def n_receivers(self) -> int:
        return self.n_patches

    @property
    def n_tokens(self) -> int:
        return self.n_patches + self.n_body + 2 + self.n_layers

    @property
    def wind_token(self) -> int:
        return self.n_patches + self.n_body

    @property
    def gravity_token(self) -> int:
        return self.wind_token + 1

    @property
    def all_receivers_connected(self) -> bool:
        return bool(self.has_edges.all())

    def edge_set(self) -> EdgeSet:
        return EdgeSet(self.receivers, self.senders, self.kinds)


def _unit(v, fallback=(0.0, 0.0, 1.0)):
    n = np.linalg.norm(v)
    return np.asarray(fallback, dtype=np.float64) if n < 1e-12 else v / n


def patch_normals(static: SceneStatic, positions) -> np.ndarray:
    vn = vertex_normals(static.topology, positions)
    pn = patch_means(vn, static.patch_map)
    lens = np.linalg.norm(pn, axis=1, keepdims=True)
    return np.where(lens > 1e-12, pn / np.where(lens > 1e-12, lens, 1.0), [0.0, 0.0, 1.0])


def encode_tokens(static: SceneStatic, inp: StepInputs, cfg: SimulatorConfig,
                  rng: np.random.Generator) -> TokenGraph:
    """Token features and edges for one step.

    Positions only enter through differences (edge radii, decoder offsets), so
    translating the whole scene leaves the features and edges unchanged.
    """
    if len(inp.velocities) != cfg.history + 1 or len(inp.winds) != cfg.history + 1 \
            or len(inp.body_velocities) != cfg.history + 1:
        raise HistoryError(f"expected {cfg.history + 1} history entries per input")
    pm = static.patch_map
    n_p = static.n_patches
    n_b = len(inp.body_next)
    n_l = static.n_layers
    px = patch_means(inp.positions, pm)
    pv = [patch_means(v, pm) for v in inp.velocities]
    pn = patch_normals(static, inp.positions)
    attrs = static.attributes[static.patch_layer]
    patch_feat = np.concatenate(pv + [pn, attrs], axis=1)
    body_feat = np.concatenate(list(inp.body_velocities) + [inp.body_normals], axis=1) \
        if n_b else np.zeros((0, cfg.body_features))
    wind_rows = []
    for w in inp.winds:
        d = quat_to_matrix(w[:4] / np.linalg.norm(w[:4]))[:, 2]
        wind_rows.append(np.concatenate([d, [w[4]]]))
    wind_feat = np.concatenate(wind_rows)[None, :]
    wind_dir = wind_rows[0][:3]
    grav_dir = _unit(np.asarray(inp.gravity, dtype=np.float64), (0.0, 0.0, -1.0))

    # token index layout: patches | body samples | wind | gravity | attributes
    wind_tok = n_p + n_b
    grav_tok = wind_tok + 1
    attr_tok = grav_tok + 1
    patches = np.arange(n_p)

    mesh = pm.mesh_edges
    world = world_space_edges(px, px, cfg.radius_patch, exclusions=mesh, same_set=True)
    plain = [mesh, world, EdgeSet.of_kind(patches, attr_tok + static.patch_layer, "attribute")]
    rotating = []
    if n_b:
        be = world_space_edges(px, inp.body_next, cfg.radius_body, kind="body")
        rotating.append(be.shifted(0, n_p))
    rotating.append(EdgeSet.of_kind(patches, np.full(n_p, wind_tok), "wind"))
    rotating.append(EdgeSet.of_kind(patches, np.full(n_p, grav_tok), "gravity"))
    edges = EdgeSet.empty().concat(*plain, *rotating)
    n_plain = sum(len(e) for e in plain)

    frames = np.tile(np.eye(3), (n_p + n_b + 2 + n_l, 1, 1))
    if n_b:
        frames[n_p:n_p + n_b] = canonical_frames(inp.body_normals, rng)
    frames[wind_tok] = canonical_frames(wind_dir[None, :], rng)[0]
    frames[grav_tok] = canonical_frames(grav_dir[None, :], rng)[0]
    rotations = frames[edges.senders[n_plain:]]

    has_edges = np.bincount(edges.receivers, minlength=n_p)[:n_p] > 0
    return TokenGraph(
        features={"patch": patch_feat, "body": body_feat, "wind": wind_feat,
                  "attr": static.attributes},
        n_patches=n_p, n_body=n_b, n_layers=n_l,
        receivers=edges.receivers, senders=edges.senders, kinds=edges.kinds,
        n_plain=n_plain, rotations=rotations, token_frames=frames,
        patch_positions=px, has_edges=has_edges,
    )


def embed_tokens(params, graph: TokenGraph) -> Tensor:
    """Linear embedding of every token into the hidden space, in token order."""
    parts = [Tensor(graph.features["patch"]) @ params["enc.patch.w"] + params["enc.patch.b"]]
    if graph.n_body:
        parts.append(Tensor(graph.features["body"]) @ params["enc.body.w"] + params["enc.body.b"])
    parts.append(Tensor(graph.features["wind"]) @ params["enc.wind.w"] + params["enc.wind.b"])
    parts.append(params["enc.gravity"])
    parts.append(Tensor(graph.features["attr"]) @ params["enc.attr.w"] + params["enc.attr.b"])
    return ad.concat(parts, axis=0)


def edge_kind_counts(graph: TokenGraph) -> dict[str, int]:
    return {k: int(np.sum(graph.kinds == c)) for k, c in KIND_CODE.items()}
