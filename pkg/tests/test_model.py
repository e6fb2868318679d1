import dataclasses

import numpy as np
import pytest

from layersim import autodiff as ad
from layersim import verify
from layersim.autodiff import Tensor, gradcheck
from layersim.model import (
    DEFAULT_HISTORY,
    HistoryError,
    ModelParams,
    RankError,
    SimulatorConfig,
    Simulator,
    attention_weights,
    edge_feature,
    encode_tokens,
    integrate,
    lift_rotation,
    load_checkpoint,
    save_checkpoint,
    semi_orthogonalize,
)
from layersim.model.layers import edge_feature_flags
from layersim.model.params import CheckpointError, decode_checkpoint, encode_checkpoint
from layersim.model.tokens import resolve_radii

RNG = np.random.default_rng(99)


# -- edge feature

def test_edge_feature_example():
    f = edge_feature(Tensor([[1.0, 0]]), Tensor([[0.0, 1]])).data
    np.testing.assert_allclose(f, [[1 / np.sqrt(2), 1 / np.sqrt(2)]], atol=1e-15)


def test_coincident_endpoints_are_floored_and_flagged():
    r = np.array([[1.0, 2, 3]])
    f = edge_feature(Tensor(r), Tensor(r.copy())).data
    assert np.all(np.isfinite(f))
    np.testing.assert_allclose(f, 2 * r / 1e-12)
    assert edge_feature_flags(r, r).tolist() == [True]


def test_centered_form_matches_simplified():
    assert verify.edge_identity_error(np.random.default_rng(0), trials=1000) < 1e-12


def test_edge_feature_is_equivariant():
    assert verify.edge_equivariance_error(np.random.default_rng(1), trials=1000) < 1e-9


# -- lift

def test_orthonormal_raw_is_unchanged():
    raw = np.vstack([np.eye(3), np.zeros((3, 3))])
    np.testing.assert_allclose(semi_orthogonalize(Tensor(raw)).data, raw, atol=1e-15)


@pytest.mark.parametrize("d", [3, 5, 16])
def test_semi_orthogonal_columns(d):
    w = semi_orthogonalize(Tensor(RNG.normal(size=(d, 3)))).data
    np.testing.assert_allclose(w.T @ w, np.eye(3), atol=1e-12)


def test_rank_deficient_lift_rejected():
    raw = RNG.normal(size=(6, 3))
    raw[:, 2] = 2 * raw[:, 0] - raw[:, 1]
    with pytest.raises(RankError):
        semi_orthogonalize(Tensor(raw))


def test_gradient_through_orthogonalization():
    mix = RNG.normal(size=(6, 3))
    fn = lambda raw: ad.sum_(semi_orthogonalize(raw) * Tensor(mix))
    assert gradcheck(fn, [Tensor(RNG.normal(size=(6, 3)))]) < 1e-4


def test_lift_of_identity_is_identity():
    w = semi_orthogonalize(Tensor(RNG.normal(size=(7, 3))))
    np.testing.assert_allclose(lift_rotation(np.eye(3), w).data, np.eye(7), atol=1e-12)


def test_three_dim_lift_is_the_rotation():
    r = verify.random_rotation(RNG)
    np.testing.assert_allclose(lift_rotation(r, Tensor(np.eye(3))).data, r, atol=1e-15)


def test_lift_homomorphism_and_orthogonality():
    hom, orth = verify.lift_errors(np.random.default_rng(2), trials=1000)
    assert hom < 1e-9 and orth < 1e-9


# -- attention

def test_single_edge_gets_all_weight():
    q, r, s = RNG.normal(size=(1, 4)) * 50, RNG.normal(size=(1, 4)), RNG.normal(size=(1, 4))
    w = attention_weights(q, r, s, np.array([0]), np.array([0]), 1).data
    np.testing.assert_array_equal(w, [1.0])


def test_identical_senders_split_evenly():
    q, r = RNG.normal(size=(1, 4)), RNG.normal(size=(1, 4))
    s = np.tile(RNG.normal(size=4), (2, 1))
    w = attention_weights(q, r, s, np.array([0, 0]), np.array([0, 1]), 1).data
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-15)


def test_attention_weights_invariant_under_joint_rotation():
    assert verify.attention_invariance_error(np.random.default_rng(3), trials=1000) < 1e-9


# -- integration and decoding

def test_integrate_example():
    beta, x = integrate(Tensor([[0.0, 0, -9.8]]), np.eye(3), Tensor(np.zeros((1, 3))),
                        Tensor(np.zeros((1, 3))), 1 / 30)
    np.testing.assert_allclose(beta.data, [[0, 0, -0.32667]], atol=5e-6)
    np.testing.assert_allclose(x.data, [[0, 0, -0.010889]], atol=5e-7)


def test_integrate_rotates_local_acceleration_back():
    r = verify.random_rotation(RNG)
    a = RNG.normal(size=(1, 3))
    beta, _ = integrate(Tensor(a @ r.T), r, Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))), 1.0)
    np.testing.assert_allclose(beta.data, a, atol=1e-12)


def test_zero_decoder_output_is_pure_inertia():
    scene = verify.tiny_scene(np.random.default_rng(4))
    sim = verify.tiny_simulator(4)
    sim.params["dec.g.w3"].data[:] = 0.0
    sim.params["dec.g.b3"].data[:] = 0.0
    x, v = sim.predict(scene.static, scene.inputs, np.random.default_rng(0))
    inp = scene.inputs
    np.testing.assert_allclose(v, inp.velocities[0], atol=1e-15)
    np.testing.assert_allclose(x, inp.positions + sim.config.dt * inp.velocities[0], atol=1e-15)


def test_full_loss_gradient_check():
    worst, rows = verify.gradcheck_report(0)
    assert worst < 1e-4, max(rows, key=lambda r: r[1])


def test_translation_leaves_displacements_unchanged():
    assert verify.translation_error(np.random.default_rng(5)) < 1e-9


def test_translation_leaves_tokens_unchanged():
    scene = verify.tiny_scene(np.random.default_rng(6))
    cfg = verify.tiny_simulator().config
    inp = scene.inputs
    c = np.array([1.0, 1.0, 1.0])
    moved = dataclasses.replace(inp, positions=inp.positions + c, body_next=inp.body_next + c,
                                body_now=inp.body_now + c)
    a = encode_tokens(scene.static, inp, cfg, np.random.default_rng(0))
    b = encode_tokens(scene.static, moved, cfg, np.random.default_rng(0))
    for kind in a.features:
        np.testing.assert_allclose(a.features[kind], b.features[kind], atol=1e-12)
    assert a.edge_set().pairs() == b.edge_set().pairs()


def test_patch_feature_layout():
    cfg = SimulatorConfig()
    assert cfg.history == DEFAULT_HISTORY == 1
    # two velocity vectors, the patch normal, and the attribute vector
    assert cfg.patch_features == 3 * 2 + 3 + 5


def test_still_scene_tokens_carry_only_normals_and_attributes():
    scene = verify.tiny_scene(np.random.default_rng(7))
    inp = scene.inputs
    still = dataclasses.replace(inp, velocities=[np.zeros_like(v) for v in inp.velocities],
                                winds=[np.array([1.0, 0, 0, 0, 0.0])] * 2)
    g = encode_tokens(scene.static, still, verify.tiny_simulator().config,
                      np.random.default_rng(0))
    assert not np.any(g.features["patch"][:, :6])
    assert not np.any(g.features["wind"][:, 3::4])


def test_missing_history_rejected():
    scene = verify.tiny_scene(np.random.default_rng(8))
    short = dataclasses.replace(scene.inputs, velocities=scene.inputs.velocities[:1])
    with pytest.raises(HistoryError):
        encode_tokens(scene.static, short, verify.tiny_simulator().config, np.random.default_rng(0))


def test_every_patch_receives_messages():
    scene = verify.tiny_scene(np.random.default_rng(9))
    g = encode_tokens(scene.static, scene.inputs, verify.tiny_simulator().config,
                      np.random.default_rng(0))
    assert g.all_receivers_connected


def test_without_body_samples_decoder_uses_gravity_frame():
    scene = verify.tiny_scene(np.random.default_rng(10))
    inp = dataclasses.replace(scene.inputs, body_next=np.zeros((0, 3)), body_now=np.zeros((0, 3)),
                              body_velocities=[np.zeros((0, 3))] * 2,
                              body_normals=np.zeros((0, 3)))
    res = verify.tiny_simulator(1).step(scene.static, inp, np.random.default_rng(0))
    assert np.all(np.isfinite(res.positions.data))
    assert np.all(res.nearest_body == -1)


def test_ret_ablation_runs_without_rotation_lifts():
    scene = verify.tiny_scene(np.random.default_rng(11))
    sim = verify.tiny_simulator(2, use_ret=False)
    x, _ = sim.predict(scene.static, scene.inputs, np.random.default_rng(0))
    assert np.all(np.isfinite(x))


# -- rollouts on oracle data

def test_rollout_base_cases(small_seq):
    sim = Simulator(ModelParams.init(SimulatorConfig(patch_size=2, hidden=8)))
    static = sim.prepare(small_seq)
    inputs = [sim.inputs(small_seq, t) for t in range(1, 6)]
    assert sim.rollout(static, inputs, steps=0).positions == []
    one = sim.rollout(static, inputs, steps=1).positions[0]
    x, _ = sim.predict(static, inputs[0], np.random.default_rng([0, 0]))
    np.testing.assert_array_equal(one, x)


def test_untrained_rollout_is_finite_and_wrong(small_seq):
    sim = Simulator(ModelParams.init(SimulatorConfig(patch_size=2, hidden=8), seed=3))
    res = sim.rollout_sequence(small_seq, start=1, steps=5)
    assert res.diverged_at is None and len(res.positions) == 5
    pred = np.stack(res.positions)
    assert np.all(np.isfinite(pred))
    assert np.linalg.norm(pred - small_seq.positions[2:7], axis=2).mean() > 0


def test_default_radii_follow_patch_size(small_seq):
    sim = Simulator(ModelParams.init(SimulatorConfig(patch_size=2)))
    static = sim.prepare(small_seq)
    cfg = resolve_radii(SimulatorConfig(), static)
    assert cfg.radius_patch == pytest.approx(2.5 * static.rest_patch_diameter)
    assert cfg.radius_body == pytest.approx(0.5 * static.rest_patch_diameter)


# -- parameters

def test_checkpoint_roundtrip(tmp_path):
    p = ModelParams.init(SimulatorConfig(hidden=8, layers=1), seed=4)
    path = save_checkpoint(tmp_path / "m.lnpk", p, {"steps": 7})
    q, extra = load_checkpoint(path)
    assert extra == {"steps": 7} and q.config == p.config
    for name in p.names():
        np.testing.assert_array_equal(q[name].data, p[name].data)


def test_checkpoint_rejects_corruption():
    data = bytearray(encode_checkpoint(ModelParams.init(SimulatorConfig(hidden=8, layers=1))))
    data[:4] = b"NOPE"
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(data))


def test_init_is_seeded():
    a = ModelParams.init(SimulatorConfig(hidden=8), seed=1)
    b = ModelParams.init(SimulatorConfig(hidden=8), seed=1)
    assert all(np.array_equal(a[n].data, b[n].data) for n in a.names())


def test_config_validation():
    with pytest.raises(ValueError):
        SimulatorConfig(hidden=2)
    with pytest.raises(ValueError):
        SimulatorConfig(history=0)
    with pytest.raises(ValueError):
        SimulatorConfig.from_dict({"width": 3})
