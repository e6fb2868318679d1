import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layersim.geometry import (
    EdgeSet,
    GeometryError,
    MeshState,
    MeshTopology,
    SpatialHash,
    brute_force_edges,
    canonical_frame,
    canonical_frames,
    is_rotation,
    patch_means,
    patch_states,
    patchify,
    quat_to_matrix,
    random_quaternion,
    vertex_normals,
    world_space_edges,
)
from layersim.oracle.cloth import build_cloth_grid

unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 0.1).map(lambda q: np.asarray(q) / np.linalg.norm(q))


def rodrigues(q):
    """Rotation from the axis-angle form of a unit quaternion."""
    w, v = q[0], np.asarray(q[1:])
    s = np.linalg.norm(v)
    if s < 1e-15:
        return np.eye(3)
    axis = v / s
    angle = 2.0 * np.arctan2(s, w)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def grid(nx, ny, spacing=0.1):
    topo, rest, _ = build_cloth_grid(nx, ny, spacing)
    return topo, rest.positions


# -- rotations

def test_identity_quaternion():
    np.testing.assert_array_equal(quat_to_matrix([1.0, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_z():
    r = quat_to_matrix([np.sqrt(0.5), 0, 0, np.sqrt(0.5)])
    np.testing.assert_allclose(r @ [1.0, 0, 0], [0, 1, 0], atol=1e-15)


def test_non_unit_quaternion_rejected():
    with pytest.raises(GeometryError):
        quat_to_matrix([1.0, 0.1, 0, 0])


@settings(max_examples=200)
@given(q=unit_quats)
def test_quaternion_matches_rodrigues(q):
    r = quat_to_matrix(q)
    np.testing.assert_allclose(r, rodrigues(q), atol=1e-12)
    assert is_rotation(r)
    assert np.array_equal(r, quat_to_matrix(-q))


def test_z_aligned_frame():
    f = canonical_frame([0.0, 0, 1], np.random.default_rng(0))
    np.testing.assert_array_equal(f[2], [0, 0, 1])
    assert abs(f[0] @ [0, 0, 1]) < 1e-15


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1))
def test_frame_maps_normal_to_z(seed):
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    f = canonical_frame(n, rng)
    assert is_rotation(f)
    np.testing.assert_allclose(f @ n, [0, 0, 1], atol=1e-9)
    g = canonical_frame(n, rng)
    # two frames for one normal differ only by a spin about local z
    np.testing.assert_allclose(g @ f.T @ [0, 0, 1], [0, 0, 1], atol=1e-9)


def test_vectorized_frames_match_properties():
    rng = np.random.default_rng(3)
    n = rng.normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    frames = canonical_frames(n, rng)
    assert all(is_rotation(f) for f in frames)
    np.testing.assert_allclose(np.einsum("kij,kj->ki", frames, n), np.tile([0, 0, 1.0], (50, 1)),
                               atol=1e-9)


def test_zero_normal_rejected():
    with pytest.raises(GeometryError):
        canonical_frame([0.0, 0, 0], np.random.default_rng(0))


# -- normals

def test_flat_grid_normals_point_up():
    topo, x = grid(5, 4)
    np.testing.assert_allclose(vertex_normals(topo, x), np.tile([0, 0, 1.0], (20, 1)), atol=1e-15)


def test_single_triangle_normals_equal_face_normal():
    topo = MeshTopology(3, np.array([[0, 1, 2]]))
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(vertex_normals(topo, x), np.tile([0, -1.0, 0], (3, 1)))


def test_sphere_normals_close_to_radial():
    nu, nv = 20, 20
    th = np.linspace(0.15, np.pi - 0.15, nv)
    ph = np.linspace(0, 2 * np.pi, nu, endpoint=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    x = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    faces = []
    for i in range(nv - 1):
        for j in range(nu):
            a, b = i * nu + j, i * nu + (j + 1) % nu
            c, d = (i + 1) * nu + (j + 1) % nu, (i + 1) * nu + j
            faces += [[a, d, c], [a, c, b]]
    topo = MeshTopology(len(x), np.array(faces))
    n = vertex_normals(topo, x)
    # interior rings only: the open rims have one-sided stars
    inner = slice(nu, (nv - 1) * nu)
    cos = np.sum(n[inner] * x[inner], axis=1)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() < 5.0


def test_degenerate_star_is_flagged():
    topo = MeshTopology(4, np.array([[0, 1, 2]]))
    x = np.zeros((4, 3))
    n, flags = vertex_normals(topo, x, return_flags=True)
    np.testing.assert_array_equal(n, np.tile([0, 0, 1.0], (4, 1)))
    assert flags.all()


# -- world-space edges

def test_coincident_points_connect():
    pts = np.zeros((2, 3))
    assert world_space_edges(pts, pts, 0.1, same_set=True).pairs() == {(0, 1), (1, 0)}


def test_distance_exactly_radius_is_excluded():
    pts = np.array([[0.0, 0, 0], [0.25, 0, 0]])
    assert len(world_space_edges(pts, pts, 0.25, same_set=True)) == 0


def test_mesh_exclusions_removed():
    pts = np.array([[0.0, 0, 0], [0.05, 0, 0], [0.1, 0, 0]])
    mesh = EdgeSet.of_kind([0, 1], [1, 0], "mesh")
    got = world_space_edges(pts, pts, 0.2, exclusions=mesh, same_set=True).pairs()
    assert (0, 1) not in got and (1, 0) not in got and (0, 2) in got


def test_thousand_random_points_match_brute_force():
    pts = np.random.default_rng(0).random((1000, 3))
    fast = world_space_edges(pts, pts, 0.1, same_set=True)
    assert fast.pairs() == brute_force_edges(pts, pts, 0.1, same_set=True)
    assert all(k == fast.kinds[0] for k in fast.kinds)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 120), m=st.integers(1, 120),
       radius=st.floats(0.01, 0.6), offset=st.floats(-50, 50))
def test_bipartite_edges_match_brute_force(seed, n, m, radius, offset):
    rng = np.random.default_rng(seed)
    a = rng.random((n, 3)) + offset
    b = rng.random((m, 3)) + offset
    assert world_space_edges(a, b, radius).pairs() == brute_force_edges(a, b, radius)


def test_spatial_hash_nearest_matches_scan():
    rng = np.random.default_rng(5)
    pts, q = rng.random((300, 3)), rng.random((50, 3))
    idx, dist = SpatialHash(pts, 0.5).nearest(q)
    d = np.linalg.norm(q[:, None] - pts[None], axis=2)
    np.testing.assert_allclose(dist, d.min(axis=1))
    np.testing.assert_array_equal(idx, d.argmin(axis=1))


# -- patches

def test_four_by_four_grid_in_two_by_two_patches():
    topo, _ = grid(4, 4)
    pm = patchify(topo, 2)
    assert pm.n_patches == 4
    assert all(len(m) == 4 for m in pm.members)
    deg = np.bincount(pm.mesh_edges.receivers, minlength=4)
    np.testing.assert_array_equal(deg, [2, 2, 2, 2])


def test_eight_by_eight_grid_in_four_patches():
    topo, _ = grid(8, 8)
    assert patchify(topo, 4).n_patches == 4


def test_unit_patches_mirror_vertex_grid():
    topo, _ = grid(3, 4)
    pm = patchify(topo, 1)
    assert pm.n_patches == 12
    patch_edges = {(int(pm.members[r][0]), int(pm.members[s][0])) for r, s in pm.mesh_edges.pairs()}
    grid_edges = set()
    for j in range(4):
        for i in range(3):
            v = j * 3 + i
            if i + 1 < 3:
                grid_edges |= {(v, v + 1), (v + 1, v)}
            if j + 1 < 4:
                grid_edges |= {(v, v + 3), (v + 3, v)}
    assert patch_edges == grid_edges


def test_every_vertex_in_exactly_one_patch():
    topo, _ = grid(7, 5)
    pm = patchify(topo, 3)
    allm = np.concatenate(pm.members)
    assert sorted(allm.tolist()) == list(range(35))


def test_patchify_needs_uv():
    with pytest.raises(GeometryError):
        patchify(MeshTopology(3, np.array([[0, 1, 2]])), 2)


def test_patch_center_is_midpoint():
    topo = MeshTopology(2, np.zeros((0, 3), dtype=int), uv=np.array([[0.0, 0], [1, 0]]))
    pm = patchify(topo, 2)
    np.testing.assert_array_equal(patch_means([[0.0, 0, 0], [2, 0, 0]], pm), [[1, 0, 0]])


def test_patch_states_match_summation():
    topo, x = grid(6, 6)
    rng = np.random.default_rng(2)
    state = MeshState(topo, x + rng.normal(size=x.shape), rng.normal(size=x.shape),
                      rng.normal(size=x.shape))
    pm = patchify(topo, 4)
    for got, arr in zip(patch_states(state, pm), (state.positions, state.velocities,
                                                  state.accelerations)):
        for p, m in enumerate(pm.members):
            ref = [sum(arr[k][c] for k in m) / len(m) for c in range(3)]
            np.testing.assert_allclose(got[p], ref, atol=1e-12)


@settings(max_examples=30)
@given(q=unit_quats, t=st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_patch_centers_commute_with_rigid_motion(q, t):
    topo, x = grid(6, 5)
    pm = patchify(topo, 2)
    r = quat_to_matrix(q)
    moved = x @ r.T + t
    np.testing.assert_allclose(patch_means(moved, pm), patch_means(x, pm) @ r.T + t, atol=1e-9)


def test_random_quaternion_is_unit():
    q = random_quaternion(np.random.default_rng(0))
    assert abs(np.linalg.norm(q) - 1) < 1e-12
