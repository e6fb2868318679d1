"""One-step garment simulator and its recursive rollout."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .. import autodiff as ad
from ..autodiff import Tensor
from .config import SimulatorConfig
from .layers import apply_lift, attention_layer, mlp, semi_orthogonalize
from .params import ModelParams
from .tokens import SceneStatic, StepInputs, TokenGraph, embed_tokens, encode_tokens, \
    inputs_from_sequence, resolve_radii

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e3


def integrate(accel_local, rot, velocity, position, dt: float):
    """Rotate a local acceleration to world space and take one Euler step.

    ``rot`` maps world to local coordinates, so its transpose maps back.
    Returns (velocity, position) at the next frame.
    """
    accel_local = ad.as_tensor(accel_local)
    rot = np.asarray(rot, dtype=np.float64)
    if rot.ndim == 2:
        rot = np.broadcast_to(rot, (accel_local.shape[0], 3, 3))
    world = ad.bmv(Tensor(np.transpose(rot, (0, 2, 1))), accel_local)
    beta = world * dt + velocity
    return beta, beta * dt + position


@dataclass
class StepResult:
    positions: Tensor
    velocities: Tensor
    graph: TokenGraph
    nearest_body: np.ndarray


@dataclass
class RolloutResult:
    positions: list
    diverged_at: int | None = None


class Simulator:
    def __init__(self, params: ModelParams):
        self.params = params

    @property
    def config(self) -> SimulatorConfig:
        return self.params.config

    def prepare(self, seq) -> SceneStatic:
        static = SceneStatic.from_sequence(seq, self.config.patch_size)
        resolved = resolve_radii(self.config, static)
        if resolved is not self.config:
            self.params.config = resolved
        return static

    def inputs(self, seq, t: int) -> StepInputs:
        return inputs_from_sequence(seq, t, self.config.history)

    def step(self, static: SceneStatic, inp: StepInputs, rng: np.random.Generator) -> StepResult:
        cfg = self.config
        p = self.params
        graph = encode_tokens(static, inp, cfg, rng)
        h = embed_tokens(p, graph)
        for layer in range(cfg.layers):
            h = attention_layer(p, layer, h, graph, cfg.use_ret)
        return self._decode(static, inp, graph, h)

    def _decode(self, static: SceneStatic, inp: StepInputs, graph: TokenGraph, h: Tensor):
        cfg = self.config
        n = static.n_vertices
        x = np.asarray(inp.positions, dtype=np.float64)
        if graph.n_body:
            _, nearest = cKDTree(inp.body_now).query(x)
            body_tok = graph.n_patches + nearest
        else:
            nearest = np.full(n, -1)
            body_tok = np.full(n, graph.gravity_token)
        rot = graph.token_frames[body_tok] if cfg.use_ret else np.tile(np.eye(3), (n, 1, 1))

        vk, pk = static.dec_vertex, static.dec_patch
        rot_pair = rot[vk]
        rel = np.einsum("kij,kj->ki", rot_pair, x[vk] - graph.patch_positions[pk])
        rel /= static.rest_patch_diameter  # offsets are a few cm; bring them to unit scale
        vp = ad.gather(h, pk)
        vb = ad.gather(h, body_tok)
        if cfg.use_ret:
            w = semi_orthogonalize(self.params["dec.rot"])
            vp = apply_lift(w, rot_pair, vp)
            vb = apply_lift(w, rot, vb)
        g_in = ad.concat([Tensor(rel), vp, ad.gather(vb, vk)], axis=1)
        out = mlp(self.params, "dec.g", g_in, 4) * cfg.accel_scale
        alpha = ad.segment_sum(out, vk, n) / Tensor(static.patch_counts[:, None])
        beta, pos = integrate(alpha, rot, Tensor(inp.velocities[0]), Tensor(x), cfg.dt)
        return StepResult(pos, beta, graph, nearest)

    def predict(self, static, inp, rng) -> tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            res = self.step(static, inp, rng)
        return res.positions.data, res.velocities.data

    def rollout(self, static: SceneStatic, inputs: list[StepInputs], steps: int | None = None,
                seed: int = 0) -> RolloutResult:
        """Predict len(inputs) (or ``steps``) frames, feeding each prediction back in.

        ``inputs[k]`` supplies body and wind for the k-th predicted frame; only
        the garment state of ``inputs[0]`` is used.
        """
        steps = len(inputs) if steps is None else steps
        if steps > len(inputs):
            raise ValueError(f"{steps} steps requested but only {len(inputs)} inputs given")
        out = []
        cur = inputs[0] if inputs else None
        for k in range(steps):
            rng = np.random.default_rng([seed, k])
            x, v = self.predict(static, cur, rng)
            if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_LIMIT:
                log.warning("rollout diverged at step %d; truncating", k)
                return RolloutResult(out, diverged_at=k)
            out.append(x)
            if k + 1 < steps:
                cur = cur.advanced(x, v, inputs[k + 1])
        return RolloutResult(out)

    def rollout_sequence(self, seq, start: int | None = None, steps: int | None = None,
                         seed: int = 0) -> RolloutResult:
        """Roll out from frame ``start`` (default: history length) using the sequence's drivers."""
        static = self.prepare(seq)
        h = self.config.history
        start = h if start is None else start
        last = seq.n_frames - 1
        steps = last - start if steps is None else min(steps, last - start)
        inputs = [self.inputs(seq, t) for t in range(start, start + max(steps, 0))]
        return self.rollout(static, inputs, steps, seed)
