"""Rotation-invariant attention and the rotation-equivalent message transform."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

EDGE_EPS = 1e-12


class RankError(ValueError):
    pass


def edge_feature(r: Tensor, s: Tensor) -> Tensor:
    """(r + s) / |r - s| row-wise, with the denominator floored at 1e-12."""
    r, s = ad.as_tensor(r), ad.as_tensor(s)
    den = ad.clamp_min(ad.l2norm(r - s, axis=-1, keepdims=True), EDGE_EPS)
    return (r + s) / den


def edge_feature_flags(r, s) -> np.ndarray:
    """Rows where :func:`edge_feature` had to floor its denominator."""
    r = np.asarray(r.data if isinstance(r, Tensor) else r)
    s = np.asarray(s.data if isinstance(s, Tensor) else s)
    return np.linalg.norm(r - s, axis=-1) < EDGE_EPS


def edge_feature_centered(r: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Unsimplified form: (r + s - mean) / spread, spread = mean distance to the mean."""
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    mu = (r + s) / 2.0
    sigma = (np.linalg.norm(r - mu, axis=-1, keepdims=True)
             + np.linalg.norm(s - mu, axis=-1, keepdims=True)) / 2.0
    return (r + s - mu) / sigma


def semi_orthogonalize(raw: Tensor, tol: float = 1e-9) -> Tensor:
    """Modified Gram-Schmidt on the three columns of a (d, 3) matrix; W^T W = I."""
    raw = ad.as_tensor(raw)
    if raw.ndim != 2 or raw.shape[1] != 3 or raw.shape[0] < 3:
        raise ad.ShapeError(f"semi_orthogonalize expects (d>=3, 3), got {raw.shape}")
    scale = max(float(np.abs(raw.data).max()), 1e-300)
    cols = [raw[:, k:k + 1] for k in range(3)]
    basis: list[Tensor] = []
    for k, c in enumerate(cols):
        for e in basis:
            c = c - e * ad.sum_(e * c)
        n = ad.l2norm(c, axis=0, keepdims=True)
        if float(n.data.reshape(-1)[0]) < tol * scale:
            raise RankError(f"lift matrix is rank deficient (column {k} collapses)")
        basis.append(c / n)
    return ad.concat(basis, axis=1)


def lift_rotation(rot, w: Tensor) -> Tensor:
    """d x d lift of a 3D rotation: W R W^T on span(W), identity on its complement."""
    w = ad.as_tensor(w)
    rot = ad.as_tensor(rot)
    d = w.shape[0]
    inner = w @ rot @ w.T
    return inner + (Tensor(np.eye(d)) - w @ w.T)


def apply_lift(w: Tensor, rots: np.ndarray, feats: Tensor) -> Tensor:
    """Row-wise lift(rots[e]) @ feats[e], without forming the d x d matrices.

    Uses lift(R) f = f + W (R - I) W^T f.
    """
    rots = np.asarray(rots, dtype=np.float64)
    coords = feats @ w
    turned = ad.bmv(Tensor(rots - np.eye(3)), coords)
    return feats + turned @ w.T


def mlp(params, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    for k in range(n_layers):
        x = x @ params[f"{prefix}.w{k}"] + params[f"{prefix}.b{k}"]
        if k < n_layers - 1:
            x = ad.relu(x)
    return x


def attention_scores(q: Tensor, r: Tensor, s: Tensor, recv, send):
    """Per-edge features f_ij and logits q_i . f_ij."""
    f = edge_feature(ad.gather(r, recv), ad.gather(s, send))
    logits = ad.sum_(ad.gather(q, recv) * f, axis=1)
    return f, logits


def attention_weights(q, r, s, recv, send, n_receivers: int) -> Tensor:
    """Softmax of the logits over each receiver's incident edges."""
    _, logits = attention_scores(ad.as_tensor(q), ad.as_tensor(r), ad.as_tensor(s), recv, send)
    return ad.segment_softmax(logits, recv, n_receivers)


def ret_message(params, layer: int, f_rot: Tensor, rots: np.ndarray, w: Tensor | None = None) -> Tensor:
    """Rotate edge features into each sender's canonical frame, transform, rotate back."""
    if w is None:
        w = semi_orthogonalize(params[f"layer{layer}.rot"])
    lifted = apply_lift(w, rots, f_rot)
    fr = mlp(params, f"layer{layer}.psi", lifted, 2)
    return apply_lift(w, np.transpose(rots, (0, 2, 1)), fr)


def attention_layer(params, layer: int, h: Tensor, graph, use_ret: bool = True) -> Tensor:
    """One interaction layer: attention over incident edges, residual, position-wise MLP.

    Only the first ``graph.n_receivers`` tokens receive messages; the rest pass
    through unchanged, as does any receiver without incident edges.
    """
    p = f"layer{layer}"
    n_recv = graph.n_receivers
    h_recv = h[:n_recv]
    q = h_recv @ params[f"{p}.wq"]
    r = h_recv @ params[f"{p}.wr"]
    s = h @ params[f"{p}.ws"]
    f, logits = attention_scores(q, r, s, graph.receivers, graph.senders)
    weights = ad.segment_softmax(logits, graph.receivers, n_recv)
    n_plain = graph.n_plain
    if use_ret and n_plain < len(graph.receivers):
        back = ret_message(params, layer, f[n_plain:], graph.rotations)
        msg = ad.concat([f[:n_plain], back], axis=0) if n_plain else back
    else:
        msg = f
    agg = ad.segment_sum(msg * ad.reshape(weights, (-1, 1)), graph.receivers, n_recv)
    h_recv = h_recv + agg
    upd = mlp(params, f"{p}.mlp", h_recv, 2)
    if not graph.all_receivers_connected:
        upd = upd * Tensor(graph.has_edges[:, None].astype(np.float64))
    h_recv = h_recv + upd
    if n_recv == h.shape[0]:
        return h_recv
    return ad.concat([h_recv, h[n_recv:]], axis=0)
