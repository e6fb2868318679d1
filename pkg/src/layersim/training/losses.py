"""Position, normal and collision losses on predicted garment frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .. import autodiff as ad
from ..autodiff import Tensor
from ..geometry import MeshTopology, PatchMap


class LossError(ValueError):
    pass


@dataclass
class LossConfig:
    mse_weight: float = 1.0
    normal_weight: float = 0.1
    body_weight: float = 1.0
    garment_weight: float = 1.0
    d_eps: float = 0.004  # 0.004 x cloth size for the unit-size oracle scenes
    garment_anchor_radius: float | None = None

    def __post_init__(self):
        weights = (self.mse_weight, self.normal_weight, self.body_weight, self.garment_weight)
        if any(w < 0 for w in weights):
            raise LossError("loss weights must be non-negative")
        if self.d_eps <= 0:
            raise LossError("d_eps must be positive")

    @property
    def weights(self) -> dict[str, float]:
        return {"mse": self.mse_weight, "normal": self.normal_weight,
                "coll_body": self.body_weight, "coll_garment": self.garment_weight}


def vertex_normals_t(topology: MeshTopology, x: Tensor) -> Tensor:
    """Differentiable area-weighted vertex normals."""
    x = ad.as_tensor(x)
    f = topology.faces
    a = ad.gather(x, f[:, 0])
    fn = ad.cross(ad.gather(x, f[:, 1]) - a, ad.gather(x, f[:, 2]) - a)
    corners = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    acc = ad.segment_sum(ad.concat([fn, fn, fn], axis=0), corners, topology.n_vertices)
    return acc / ad.clamp_min(ad.l2norm(acc, axis=1, keepdims=True), 1e-300)


def mean_sq_dist(a: Tensor, b) -> Tensor:
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise LossError(f"prediction {a.shape} and truth {b.shape} differ in shape")
    return ad.mean(ad.sum_(ad.square(a - b), axis=1))


def loss_mse(pred_vertices, truth_vertices, pred_patches, truth_patches) -> Tensor:
    """Mean squared distance over vertices plus the same over patch centers."""
    return mean_sq_dist(pred_vertices, truth_vertices) + mean_sq_dist(pred_patches, truth_patches)


def patch_centers_t(x: Tensor, patch_map: PatchMap) -> Tensor:
    counts = np.bincount(patch_map.patch_of_vertex, minlength=patch_map.n_patches)
    sums = ad.segment_sum(ad.as_tensor(x), patch_map.patch_of_vertex, patch_map.n_patches)
    return sums / Tensor(counts[:, None].astype(np.float64))


def loss_normal(pred_x, truth_x, topology: MeshTopology) -> Tensor:
    pred_n = vertex_normals_t(topology, ad.as_tensor(pred_x))
    with ad.no_grad():
        truth_n = vertex_normals_t(topology, ad.as_tensor(truth_x))
    return mean_sq_dist(pred_n, truth_n.data)


def nearest_anchors(queries: np.ndarray, anchors: np.ndarray, radius: float | None = None):
    """Nearest anchor index per query; -1 where none lies within ``radius``."""
    if len(anchors) == 0:
        raise LossError("collision loss needs at least one anchor")
    tree = cKDTree(anchors)
    dist, idx = tree.query(queries, distance_upper_bound=np.inf if radius is None else radius)
    idx = np.where(np.isfinite(dist), idx, -1)
    return idx


def loss_collision(queries, anchors, anchor_normals, d_eps: float,
                   radius: float | None = None) -> Tensor:
    """Squared shortfall of each query's offset along its nearest anchor normal.

    Averaged over the queries with a positive penalty; zero when none collide.
    Gradients reach the queries and, when given as tensors, the anchor
    positions and normals.
    """
    q = ad.as_tensor(queries)
    a = ad.as_tensor(anchors)
    normals = ad.as_tensor(anchor_normals)
    idx = nearest_anchors(q.data, a.data, radius)
    rows = np.nonzero(idx >= 0)[0]
    if len(rows) == 0:
        return Tensor(0.0)
    idx = idx[rows]
    offset = ad.gather(q, rows) - ad.gather(a, idx)
    depth = ad.sum_(offset * ad.gather(normals, idx), axis=1)
    pen = ad.relu(d_eps - depth)
    n_c = int(np.sum(pen.data > 0.0))
    if n_c == 0:
        return Tensor(0.0)
    return ad.sum_(ad.square(pen)) * (1.0 / n_c)


def total_loss(components: dict[str, Tensor], cfg: LossConfig) -> Tensor:
    """Weighted sum of the named loss components."""
    total = Tensor(0.0)
    for name, weight in cfg.weights.items():
        comp = components.get(name)
        if comp is None:
            continue
        comp = ad.as_tensor(comp)
        if not np.all(np.isfinite(comp.data)):
            raise LossError(f"loss component {name!r} is not finite")
        total = total + comp * weight
    return total
