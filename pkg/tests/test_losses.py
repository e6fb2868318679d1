import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layersim.autodiff import Tensor, gradcheck
from layersim.geometry import patchify, vertex_normals
from layersim.oracle import build_cloth_grid
from layersim.training import (
    LossConfig,
    LossError,
    loss_collision,
    loss_mse,
    loss_normal,
    nearest_anchors,
    patch_centers_t,
    total_loss,
    vertex_normals_t,
)

RNG = np.random.default_rng(21)
UP = [[0.0, 0, 1]]
ORIGIN = [[0.0, 0, 0]]


def sheet(nx=5, ny=4):
    topo, rest, _ = build_cloth_grid(nx, ny, 0.1)
    return topo, rest.positions


# -- mse

def test_mse_of_truth_is_zero():
    x = RNG.normal(size=(6, 3))
    assert float(loss_mse(Tensor(x), x, Tensor(x[:2]), x[:2]).data) == 0.0


def test_mse_of_uniform_offset():
    x = RNG.normal(size=(6, 3))
    c = np.array([0.3, -0.1, 0.2])
    val = float(loss_mse(Tensor(x + c), x, Tensor(x[:2] + c), x[:2]).data)
    assert val == pytest.approx(2 * c @ c, rel=1e-12)


def test_mse_matches_summation():
    a, b = RNG.normal(size=(7, 3)), RNG.normal(size=(7, 3))
    pa, pb = RNG.normal(size=(3, 3)), RNG.normal(size=(3, 3))
    ref = sum(sum((a[i][k] - b[i][k]) ** 2 for k in range(3)) for i in range(7)) / 7 \
        + sum(sum((pa[i][k] - pb[i][k]) ** 2 for k in range(3)) for i in range(3)) / 3
    assert float(loss_mse(Tensor(a), b, Tensor(pa), pb).data) == pytest.approx(ref, rel=1e-12)


def test_mse_rejects_length_mismatch():
    with pytest.raises(LossError):
        loss_mse(Tensor(np.zeros((3, 3))), np.zeros((4, 3)), Tensor(np.zeros((1, 3))),
                 np.zeros((1, 3)))


def test_patch_centers_match_patch_means():
    topo, x = sheet(6, 6)
    pm = patchify(topo, 2)
    got = patch_centers_t(Tensor(x), pm).data
    for p, m in enumerate(pm.members):
        np.testing.assert_allclose(got[p], x[m].mean(axis=0), atol=1e-15)


# -- normals

def test_normal_loss_of_identical_states_is_zero():
    topo, x = sheet()
    assert float(loss_normal(Tensor(x), x, topo).data) == 0.0


def test_flat_sheet_spun_about_z_has_zero_normal_loss():
    topo, x = sheet()
    spun = x @ np.diag([-1.0, -1.0, 1.0]).T
    assert float(loss_normal(Tensor(spun), x, topo).data) == pytest.approx(0.0, abs=1e-30)


def test_normal_loss_matches_direct_formula():
    topo, x = sheet()
    y = x + RNG.normal(scale=0.02, size=x.shape)
    ref = np.mean(np.sum((vertex_normals(topo, y) - vertex_normals(topo, x)) ** 2, axis=1))
    assert float(loss_normal(Tensor(y), x, topo).data) == pytest.approx(ref, rel=1e-12)


def test_differentiable_normals_match_geometry_normals():
    topo, x = sheet()
    y = x + RNG.normal(scale=0.03, size=x.shape)
    np.testing.assert_allclose(vertex_normals_t(topo, Tensor(y)).data, vertex_normals(topo, y),
                               atol=1e-12)


def test_normal_loss_gradient():
    topo, x = sheet(3, 3)
    y = x + RNG.normal(scale=0.03, size=x.shape)
    assert gradcheck(lambda t: loss_normal(t, x, topo), [Tensor(y)]) < 1e-5


# -- collisions

def test_separated_vertex_has_no_penalty():
    assert float(loss_collision(Tensor([[0.0, 0, 0.01]]), ORIGIN, UP, 0.004).data) == 0.0


def test_penetrating_vertex_penalty():
    val = float(loss_collision(Tensor([[0.0, 0, -0.01]]), ORIGIN, UP, 0.004).data)
    assert val == pytest.approx(1.96e-4, rel=1e-12)


def test_vertex_exactly_at_threshold_has_no_penalty():
    assert float(loss_collision(Tensor([[0.0, 0, 0.004]]), ORIGIN, UP, 0.004).data) == 0.0


def test_penalty_averages_over_colliding_vertices_only():
    q = Tensor([[0.0, 0, -0.01], [0.0, 0, 0.5], [0.0, 0, 0.9]])
    val = float(loss_collision(q, ORIGIN, UP, 0.004).data)
    assert val == pytest.approx(1.96e-4, rel=1e-12)


def test_collision_needs_anchors():
    with pytest.raises(LossError):
        loss_collision(Tensor(UP), np.zeros((0, 3)), np.zeros((0, 3)), 0.004)


def test_nearest_anchor_respects_radius():
    anchors = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    idx = nearest_anchors(np.array([[0.9, 0, 0], [5.0, 0, 0]]), anchors, radius=0.5)
    assert idx.tolist() == [1, -1]


@settings(max_examples=50)
@given(depth=st.floats(-0.05, 0.05), step=st.floats(1e-5, 0.01))
def test_penalty_grows_as_vertex_sinks(depth, step):
    a = float(loss_collision(Tensor([[0.0, 0, depth]]), ORIGIN, UP, 0.004).data)
    b = float(loss_collision(Tensor([[0.0, 0, depth - step]]), ORIGIN, UP, 0.004).data)
    assert b >= a >= 0.0


def test_collision_gradient_reaches_queries_anchors_and_normals():
    q = RNG.normal(scale=0.01, size=(6, 3))
    a = RNG.normal(scale=0.01, size=(4, 3)) + [0, 0, 0.02]
    n = RNG.normal(size=(4, 3)) + [0, 0, 3]
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    assert gradcheck(lambda x, y, z: loss_collision(x, y, z, 0.004),
                     [Tensor(q), Tensor(a), Tensor(n)]) < 1e-5


# -- total

def components():
    return {k: Tensor(abs(RNG.normal())) for k in ("mse", "normal", "coll_body", "coll_garment")}


def test_zero_weights_give_zero():
    assert float(total_loss(components(), LossConfig(0, 0, 0, 0)).data) == 0.0


def test_mse_weight_alone_is_mse():
    c = components()
    assert float(total_loss(c, LossConfig(1, 0, 0, 0)).data) == float(c["mse"].data)


def test_default_weighted_sum():
    c = components()
    ref = float(c["mse"].data) + 0.1 * float(c["normal"].data) + float(c["coll_body"].data) \
        + float(c["coll_garment"].data)
    assert float(total_loss(c, LossConfig()).data) == pytest.approx(ref, rel=1e-14)


def test_non_finite_component_named():
    c = components()
    c["normal"] = Tensor(np.nan)
    with pytest.raises(LossError, match="normal"):
        total_loss(c, LossConfig())


def test_loss_config_validation():
    with pytest.raises(LossError):
        LossConfig(mse_weight=-1)
    with pytest.raises(LossError):
        LossConfig(d_eps=0)


def test_losses_are_nonnegative_on_random_inputs():
    topo, x = sheet()
    for _ in range(20):
        y = x + RNG.normal(scale=0.05, size=x.shape)
        assert float(loss_mse(Tensor(y), x, Tensor(y[:3]), x[:3]).data) >= 0
        assert float(loss_normal(Tensor(y), x, topo).data) >= 0
        assert float(loss_collision(Tensor(y), x, vertex_normals(topo, x), 0.004).data) >= 0
