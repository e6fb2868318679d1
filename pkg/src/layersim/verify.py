"""Self-contained property checks behind the ``verify`` and ``gradcheck`` commands."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradcheck
from .geometry import GarmentAttributes, brute_force_edges, canonical_frames, patchify, \
    quat_to_matrix, random_quaternion, world_space_edges
from .model import ModelParams, SceneStatic, Simulator, SimulatorConfig, StepInputs
from .model.layers import attention_weights, edge_feature, edge_feature_centered, lift_rotation, \
    semi_orthogonalize
from .oracle.cloth import build_cloth_grid
from .training.losses import LossConfig, loss_collision, loss_mse, loss_normal, patch_centers_t, \
    total_loss, vertex_normals_t


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def random_rotation(rng) -> np.ndarray:
    return quat_to_matrix(random_quaternion(rng))


def random_orthogonal(rng) -> np.ndarray:
    """Rotation or reflection, equally likely."""
    q = random_rotation(rng)
    return q if rng.random() < 0.5 else -q


def edge_equivariance_error(rng, trials: int = 1000) -> float:
    worst = 0.0
    for _ in range(trials):
        q = random_orthogonal(rng)
        r, s = rng.normal(size=3), rng.normal(size=3)
        lhs = edge_feature(Tensor(q @ r), Tensor(q @ s)).data
        rhs = q @ edge_feature(Tensor(r), Tensor(s)).data
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def attention_invariance_error(rng, trials: int = 1000, d: int = 8) -> float:
    """Attention weights under a shared hidden-space rotation lift(Q) of q, r, s."""
    worst = 0.0
    for _ in range(trials):
        w = semi_orthogonalize(Tensor(rng.normal(size=(d, 3))))
        lq = lift_rotation(random_rotation(rng), w).data
        n_r, n_s = 3, 5
        q, r, s = rng.normal(size=(n_r, d)), rng.normal(size=(n_r, d)), rng.normal(size=(n_s, d))
        recv = np.repeat(np.arange(n_r), n_s)
        send = np.tile(np.arange(n_s), n_r)
        a = attention_weights(q, r, s, recv, send, n_r).data
        b = attention_weights(q @ lq.T, r @ lq.T, s @ lq.T, recv, send, n_r).data
        worst = max(worst, float(np.abs(a - b).max()))
    return worst


def lift_errors(rng, trials: int = 1000, d: int = 8) -> tuple[float, float]:
    """(homomorphism error, orthogonality error) of the rotation lift."""
    hom = orth = 0.0
    for _ in range(trials):
        w = semi_orthogonalize(Tensor(rng.normal(size=(d, 3))))
        a, b = random_rotation(rng), random_rotation(rng)
        la, lb, lab = (lift_rotation(m, w).data for m in (a, b, a @ b))
        hom = max(hom, float(np.abs(la @ lb - lab).max()))
        orth = max(orth, float(np.abs(la @ la.T - np.eye(d)).max()))
    return hom, orth


def edge_identity_error(rng, trials: int = 1000, d: int = 16) -> float:
    worst = 0.0
    for _ in range(trials):
        r, s = rng.normal(size=d), rng.normal(size=d)
        a = edge_feature_centered(r, s)
        b = edge_feature(Tensor(r), Tensor(s)).data
        worst = max(worst, float(np.abs(a - b).max()))
    return worst


# ---------------------------------------------------------------- tiny scene

@dataclass
class TinyScene:
    static: SceneStatic
    inputs: StepInputs
    truth: np.ndarray
    body: np.ndarray
    body_normals: np.ndarray
    garment_radius: float


def tiny_scene(rng, jitter: float = 0.01) -> TinyScene:
    """Two one-patch layers (2 x 2 vertices each) resting near four body samples."""
    attrs = [GarmentAttributes(*rng.random(4), layer=k) for k in range(2)]
    topos, rests = [], []
    for k, at in enumerate(attrs):
        topo, rest, _ = build_cloth_grid(2, 2, 0.1, at, origin=(0.0, 0.0, 0.01 * k))
        topos.append(topo)
        rests.append(rest.positions)
    maps = [patchify(t, 2) for t in topos]
    rest = np.concatenate(rests)
    static = SceneStatic.build(topos, maps, np.stack([a.as_vector() for a in attrs]), rest)
    x = rest + rng.normal(scale=jitter, size=rest.shape)
    body = np.array([[0.02, 0.03, -0.01], [0.08, 0.02, -0.005], [0.03, 0.09, 0.006],
                     [0.07, 0.08, -0.012]]) + rng.normal(scale=0.002, size=(4, 3))
    normals = np.tile([0.0, 0.0, 1.0], (4, 1)) + rng.normal(scale=0.1, size=(4, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    vel = [rng.normal(scale=0.1, size=x.shape) for _ in range(2)]
    bvel = [rng.normal(scale=0.1, size=body.shape) for _ in range(2)]
    wind = [np.concatenate([random_quaternion(rng), [rng.random()]]) for _ in range(2)]
    inp = StepInputs(x, vel, body, body - 0.003 * bvel[0], bvel, normals, wind,
                     np.array([0.0, 0.0, -9.8]))
    truth = x + rng.normal(scale=0.005, size=x.shape)
    return TinyScene(static, inp, truth, body, normals, 0.1)


def tiny_loss(sim: Simulator, scene: TinyScene, loss_cfg: LossConfig | None = None,
              seed: int = 0) -> Tensor:
    """Full one-step weighted loss on the tiny scene."""
    loss_cfg = loss_cfg or LossConfig()
    st = scene.static
    pred = sim.step(st, scene.inputs, np.random.default_rng(seed)).positions
    inner, outer = st.layer_slice(0), st.layer_slice(1)
    inner_pred = pred[inner]
    comps = {
        "mse": loss_mse(pred, scene.truth, patch_centers_t(pred, st.patch_map),
                        patch_centers_t(Tensor(scene.truth), st.patch_map).data),
        "normal": loss_normal(pred, scene.truth, st.topology),
        "coll_body": loss_collision(pred, scene.body, scene.body_normals, 0.02),
        "coll_garment": loss_collision(pred[outer], inner_pred,
                                       vertex_normals_t(st.layer_topologies[0], inner_pred),
                                       0.02, scene.garment_radius),
    }
    return total_loss(comps, loss_cfg)


def tiny_simulator(seed: int = 0, hidden: int = 6, use_ret: bool = True) -> Simulator:
    cfg = SimulatorConfig(hidden=hidden, radius_patch=1.0, radius_body=1.0, use_ret=use_ret,
                          seed=seed, patch_size=2)
    return Simulator(ModelParams.init(cfg))


def gradcheck_report(seed: int = 0, eps: float = 1e-4) -> tuple[float, list[tuple[str, float]]]:
    """Max relative error per parameter block of the full tiny-scene loss.

    Many entries of this gradient are ~1e-9, where a 1e-6 step leaves round-off
    near 1e-4 relative; 1e-4 keeps both round-off and truncation small.
    """
    rng = np.random.default_rng(seed)
    scene = tiny_scene(rng)
    sim = tiny_simulator(seed)
    # zero-initialized biases leave some ReLUs exactly at their kink; move off it
    for name in sim.params.names():
        if name.rsplit(".", 1)[-1].startswith("b"):
            sim.params[name].data += rng.normal(scale=0.1, size=sim.params[name].shape)
    rows = []
    for name in sim.params.names():
        t = sim.params[name]

        def fn(x, name=name, orig=t):
            sim.params.tensors[name] = x
            try:
                return tiny_loss(sim, scene)
            finally:
                sim.params.tensors[name] = orig

        rows.append((name, gradcheck(fn, [Tensor(t.data.copy())], eps=eps)))
    return max(e for _, e in rows), rows


# ------------------------------------------------------------ other checks

def translation_error(rng, shift=(1.0, 1.0, 1.0)) -> float:
    """Change in predicted displacement when the whole tiny scene is translated."""
    scene = tiny_scene(rng)
    sim = tiny_simulator(int(rng.integers(1 << 30)))
    c = np.asarray(shift, dtype=np.float64)
    inp = scene.inputs
    moved = dataclasses.replace(inp, positions=inp.positions + c, body_next=inp.body_next + c,
                                body_now=inp.body_now + c)
    a = sim.predict(scene.static, inp, np.random.default_rng(0))[0] - inp.positions
    b = sim.predict(scene.static, moved, np.random.default_rng(0))[0] - moved.positions
    return float(np.abs(a - b).max())


def world_edge_mismatches(rng, configs: int = 20, n: int = 1000) -> int:
    bad = 0
    for _ in range(configs):
        pts = rng.random((n, 3))
        radius = float(rng.uniform(0.02, 0.2))
        fast = world_space_edges(pts, pts, radius, same_set=True).pairs()
        if fast != brute_force_edges(pts, pts, radius, same_set=True):
            bad += 1
    return bad


def com_ballistic_error(steps: int = 1000, seed: int = 0) -> float:
    from .oracle import ClothSystem, OracleParams, step_oracle
    from .geometry import CALM

    rng = np.random.default_rng(seed)
    at = GarmentAttributes(*rng.random(4), layer=0)
    topo, rest, springs = build_cloth_grid(5, 5, 0.1, at)
    rest = rest.positions
    system = ClothSystem.from_layers([(topo, rest, springs, at)])
    params = OracleParams(damping=0.0, spring_damping=0.0, collisions=False)
    g = np.array([0.0, 0.0, -9.8])
    dt = 1.0 / 480.0
    x = rest + rng.normal(scale=0.01, size=rest.shape)
    v = rng.normal(scale=0.1, size=rest.shape)
    m = system.masses
    com = m @ x / m.sum()
    vcom = m @ v / m.sum()
    worst = 0.0
    for _ in range(steps):
        x, v, _ = step_oracle(system, x, v, CALM, g, dt, params)
        vcom = vcom + dt * g
        com = com + dt * vcom
        worst = max(worst, float(np.abs(m @ x / m.sum() - com).max()))
    return worst


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def add(name, value, tol, fmt="{:.2e}"):
        out.append(CheckResult(name, bool(value < tol), f"{fmt.format(value)} (< {tol:g})"))

    add("edge feature equivariance", edge_equivariance_error(rng), 1e-9)
    add("attention weight invariance", attention_invariance_error(rng), 1e-9)
    hom, orth = lift_errors(rng)
    add("rotation lift homomorphism", hom, 1e-9)
    add("rotation lift orthogonality", orth, 1e-9)
    add("centered vs simplified edge feature", edge_identity_error(rng), 1e-12)
    worst, _ = gradcheck_report(seed)
    add("full loss gradient check", worst, 1e-4)
    add("center of mass ballistic", com_ballistic_error(seed=seed), 1e-9)
    add("world edges vs brute force", world_edge_mismatches(rng, configs=5, n=300), 1, "{:d}")
    add("translation invariance", translation_error(rng), 1e-9)
    return out
