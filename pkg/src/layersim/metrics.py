"""Rollout quality: mean vertex error and penetration rates."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import vertex_normals

REPORT_COLUMNS = ["sequence", "euclid_err_m", "coll_body_pct", "coll_garment_pct"]


class MetricsError(ValueError):
    pass


def _check_frames(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricsError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise MetricsError(f"expected (frames, vertices, 3), got {pred.shape}")
    return pred, truth


def frame_errors(pred, truth) -> np.ndarray:
    """Mean vertex distance per frame."""
    pred, truth = _check_frames(pred, truth)
    return np.linalg.norm(pred - truth, axis=2).mean(axis=1)


def euclidean_error(pred, truth) -> float:
    """Per-frame mean vertex distance, averaged over frames."""
    return float(frame_errors(pred, truth).mean())


def dataset_error(per_sequence: list[float]) -> float:
    return float(np.mean(per_sequence)) if per_sequence else float("nan")


def penetrating(queries, anchors, anchor_normals, d_pen: float = 0.0,
                radius: float | None = None) -> np.ndarray:
    """Boolean per query: its offset from the nearest anchor, along that anchor's normal, is below ``d_pen``.

    Queries with no anchor inside ``radius`` never count as penetrating.
    """
    queries = np.asarray(queries, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    if len(anchors) == 0:
        return np.zeros(len(queries), dtype=bool)
    dist, idx = cKDTree(anchors).query(queries,
                                       distance_upper_bound=np.inf if radius is None else radius)
    found = np.isfinite(dist)
    idx = np.where(found, idx, 0)
    depth = np.sum((queries - anchors[idx]) * np.asarray(anchor_normals)[idx], axis=1)
    return found & (depth < d_pen)


def collision_rate_body(frames, body, body_normals, d_pen: float = 0.0) -> float:
    """Percent of (frame, vertex) pairs on the wrong side of the nearest body sample."""
    frames = np.asarray(frames)
    if len(frames) == 0:
        return float("nan")
    hits = sum(int(penetrating(x, b, n, d_pen).sum())
               for x, b, n in zip(frames, body, body_normals))
    return 100.0 * hits / (frames.shape[0] * frames.shape[1])


def collision_rate_garment(frames, inner_slice: slice, outer_slice: slice, inner_topology,
                           radius: float, d_pen: float = 0.0) -> float:
    """Percent of (frame, outer vertex) pairs below the inner layer.

    Anchors are inner-layer vertices with their normals; outer vertices farther
    than ``radius`` from every inner vertex are not in contact.
    """
    frames = np.asarray(frames)
    if len(frames) == 0:
        return float("nan")
    hits = 0
    for x in frames:
        inner = x[inner_slice]
        hits += int(penetrating(x[outer_slice], inner, vertex_normals(inner_topology, inner),
                                d_pen, radius).sum())
    n_outer = outer_slice.stop - outer_slice.start
    return 100.0 * hits / (frames.shape[0] * n_outer)


@dataclass
class SequenceScore:
    name: str
    euclid_err_m: float
    coll_body_pct: float
    coll_garment_pct: float
    frame_errors: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def row(self) -> list:
        return [self.name, f"{self.euclid_err_m:.6g}", f"{self.coll_body_pct:.6g}",
                f"{self.coll_garment_pct:.6g}"]


def score_sequence(name: str, seq, pred, start: int = 1, d_pen: float = 0.0,
                   garment_radius_scale: float = 3.0) -> SequenceScore:
    """Compare predicted frames ``start .. start+len(pred)-1`` of ``seq`` against the truth."""
    pred = np.asarray(pred, dtype=np.float64)
    stop = start + len(pred)
    if stop > seq.n_frames:
        raise MetricsError(f"{len(pred)} predicted frames from {start} overrun "
                           f"a {seq.n_frames}-frame sequence")
    truth = seq.positions[start:stop]
    errs = frame_errors(pred, truth) if len(pred) else np.zeros(0)
    body_pct = collision_rate_body(pred, seq.body[start:stop], seq.body_normals[start:stop], d_pen) \
        if seq.body.shape[1] else 0.0
    garment_pct = 0.0
    if seq.n_layers > 1:
        topos = seq.topologies()
        radius = garment_radius_scale * float(seq.header.get("thickness", 0.004))
        garment_pct = collision_rate_garment(pred, seq.layer_slice(0), seq.layer_slice(1),
                                             topos[0], radius, d_pen)
    err = float(errs.mean()) if len(errs) else float("nan")
    return SequenceScore(name, err, body_pct, garment_pct, errs)


@dataclass
class EvalReport:
    scores: list[SequenceScore]

    @property
    def euclid_err_m(self) -> float:
        return dataset_error([s.euclid_err_m for s in self.scores])

    @property
    def coll_body_pct(self) -> float:
        return float(np.mean([s.coll_body_pct for s in self.scores]))

    @property
    def coll_garment_pct(self) -> float:
        return float(np.mean([s.coll_garment_pct for s in self.scores]))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for s in self.scores:
                w.writerow(s.row())
            w.writerow(["mean", f"{self.euclid_err_m:.6g}", f"{self.coll_body_pct:.6g}",
                        f"{self.coll_garment_pct:.6g}"])
        return path
