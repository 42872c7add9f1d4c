import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ftrom.errors import DegenerateFeatureError, EmptySupportError, InvalidArgumentError
from ftrom.mesh import build_rect_mesh, check_mapping_validity
from ftrom.registration import (
    LandmarkSet,
    RegistrationParams,
    assign_min_distance,
    boundary_landmarks,
    correspond,
    edge_sensor,
    extract_endpoints,
    hungarian,
    kernel_matrix,
    kmeans,
    physical_gradient,
    rbf_eval,
    rbf_fit,
    register_snapshot,
    rejection_sample,
    wendland_c2,
)
from ftrom.registration.pipeline import boundary_constraint_mask, snap_endpoint_pair
from ftrom.registration.sensor import SensorField

# --------------------------------------------------------------------------- Hungarian


def brute_force(cost):
    n = len(cost)
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_hungarian_equals_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        n = int(rng.integers(1, 8))
        cost = rng.random((n, n)) * 10
        if trial % 4 == 0:
            cost = np.round(cost)  # integer costs exercise ties
        assign, total, u, v = hungarian(cost)
        assert sorted(assign.tolist()) == list(range(n))
        assert total == pytest.approx(brute_force(cost), abs=1e-9)
        # dual feasibility and complementary slackness
        assert np.all(cost - u[:, None] - v[None, :] >= -1e-9)
        assert np.allclose(cost[np.arange(n), assign], u + v[assign])


def test_hungarian_edge_cases():
    a, total, _, _ = hungarian(np.zeros((0, 0)))
    assert a.size == 0 and total == 0.0
    with pytest.raises(InvalidArgumentError):
        hungarian(np.ones((2, 3)))


def test_assignment_ties_prefer_lower_indices():
    c = assign_min_distance(np.zeros((3, 2)), np.zeros((3, 2)))
    assert c.perm.tolist() == [0, 1, 2]


def test_assignment_recovers_permutation():
    rng = np.random.default_rng(0)
    ref = rng.random((6, 2)) * 10
    perm = rng.permutation(6)
    moving = ref[perm] + 1e-3 * rng.standard_normal((6, 2))
    assert assign_min_distance(moving, ref).perm.tolist() == perm.tolist()


def test_correspondence_never_mixes_classes():
    ref = LandmarkSet(np.array([[0.0, 0.0]]), np.array([[5.0, 5.0], [6.0, 6.0]]), np.zeros((0, 2)))
    mov = LandmarkSet(np.array([[5.0, 5.0]]), np.array([[0.0, 0.0], [6.0, 6.0]]), np.zeros((0, 2)))
    pairs = correspond(mov, ref)
    assert pairs["centroids"].perm.tolist() == [0]
    with pytest.raises(InvalidArgumentError):
        assign_min_distance(np.zeros((2, 2)), np.zeros((3, 2)))


# --------------------------------------------------------------------------- RBF


def test_wendland_values():
    assert wendland_c2(0.0) == 1.0
    assert wendland_c2(1.0) == 0.0
    assert wendland_c2(0.5) == pytest.approx(0.1875, abs=1e-15)
    assert wendland_c2(2.0) == 0.0
    with pytest.raises(InvalidArgumentError):
        wendland_c2(-0.1)


@given(st.integers(2, 30), st.floats(0.3, 3.0), st.integers(0, 1000))
def test_rbf_interpolates_exactly(n, radius, seed):
    rng = np.random.default_rng(seed)
    C = rng.random((n, 2)) * 2 - 1
    if np.min(np.linalg.norm(C[:, None] - C[None], axis=2) + np.eye(n) * 10) < 0.05:
        return
    D = rng.standard_normal((n, 2))
    warp = rbf_fit(C, D, radius)
    assert np.max(np.abs(rbf_eval(warp, C) - D)) < 1e-10


def test_rbf_exactness_at_working_radius_is_conditioning_limited():
    # at r = 100 every kernel value is within 1e-3 of 1, so cond(M) ~ 1e9 and the
    # attainable accuracy is cond * eps relative to the displacements
    rng = np.random.default_rng(3)
    C = np.concatenate([rng.random((7, 2)) * [2, 1] - [1, 0], boundary_landmarks(build_rect_mesh(10, 10))])
    D = rng.standard_normal(C.shape) * 0.05
    warp = rbf_fit(C, D, 100.0)
    bound = np.linalg.cond(kernel_matrix(C, C, 100.0)) * np.finfo(float).eps * np.abs(D).max()
    assert np.max(np.abs(rbf_eval(warp, C) - D)) < 10 * bound
    assert np.max(np.abs(rbf_eval(warp, C) - D)) < 1e-6 * np.abs(D).max() * 100


def test_rbf_component_masks():
    C = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    D = np.array([[0.1, 0.2], [0.3, 9.0], [0.0, -0.1]])
    active = np.array([[True, True], [True, False], [True, True]])
    warp = rbf_fit(C, D, 3.0, active)
    out = rbf_eval(warp, C)
    assert np.allclose(out[:, 0], D[:, 0], atol=1e-12)
    assert np.allclose(out[active[:, 1], 1], D[active[:, 1], 1], atol=1e-12)
    assert warp.weights[1, 1] == 0.0


def test_rbf_errors():
    with pytest.raises(InvalidArgumentError):
        rbf_fit(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)  # duplicate centers
    with pytest.raises(InvalidArgumentError):
        rbf_fit(np.zeros((1, 2)), np.zeros((1, 2)), 0.0)
    with pytest.raises(InvalidArgumentError):
        rbf_fit(np.zeros((0, 2)), np.zeros((0, 2)), 1.0)


def test_compact_support():
    warp = rbf_fit(np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]), 0.5)
    assert np.array_equal(rbf_eval(warp, np.array([[0.6, 0.0], [0.0, 0.5]])), np.zeros((2, 2)))


# --------------------------------------------------------------------------- k-means


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_kmeans_objective_monotone(k, seed):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.normal(c, 0.1, (30, 2)) for c in rng.random((4, 2)) * 5])
    res = kmeans(X, k, seed=seed)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res.history, res.history[1:]))
    assert res.objective <= res.history[0] * (1 + 1e-12)
    # final centroids are cluster means
    for j in range(k):
        if (res.labels == j).any():
            assert np.allclose(res.centroids[j], X[res.labels == j].mean(axis=0))


def test_kmeans_finds_separated_clusters():
    rng = np.random.default_rng(1)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    X = np.concatenate([rng.normal(c, 0.2, (50, 2)) for c in centers])
    res = kmeans(X, 3, seed=4)
    for c in centers:
        assert np.min(np.linalg.norm(res.centroids - c, axis=1)) < 0.1


def test_kmeans_is_deterministic_and_validates():
    X = np.random.default_rng(0).random((40, 2))
    a, b = kmeans(X, 3, seed=9), kmeans(X, 3, seed=9)
    assert np.array_equal(a.centroids, b.centroids)
    with pytest.raises(InvalidArgumentError):
        kmeans(X[:2], 3)
    with pytest.raises(InvalidArgumentError):
        kmeans(X, 0)


# --------------------------------------------------------------------------- sensor and sampling


def test_sensor_of_linear_field_is_constant():
    m = build_rect_mesh(10, 6)
    C = m.cell_centers()
    Q = 2.0 * C[:, 0] - 3.0 * C[:, 1]
    assert np.allclose(physical_gradient(Q, m), [2.0, -3.0])
    assert np.allclose(edge_sensor(Q, m).values, 13.0)


def test_sensor_on_warped_mesh_uses_physical_coordinates():
    from conftest import smooth_warp

    m = build_rect_mesh(12, 10)
    dofs = smooth_warp(m, seed=1)
    C = m.cell_centers(dofs)
    Q = 0.5 * C[:, 0] + 1.5 * C[:, 1]
    assert np.allclose(physical_gradient(Q, m, dofs), [0.5, 1.5], atol=1e-10)


@pytest.mark.parametrize("level", [0.2, 0.5, 0.9])
def test_acceptance_rate_within_binomial_bounds(level):
    m = build_rect_mesh(20, 10)
    values = np.where(np.arange(m.n_cells) % 2 == 0, 1.0, level)
    sensor = SensorField(values, m)
    n = 20000
    res = rejection_sample(sensor, n, seed=11)
    p = (1.0 + level) / 2.0  # equal-area cells: mean of s / max(s)
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(res.n_accepted - n * p) <= 3 * sigma
    # per-cell acceptance follows the density ratio
    even = np.mean(res.cells % 2 == 0)
    assert even == pytest.approx(1.0 / (1.0 + level), abs=0.02)


def test_sampling_threshold_and_safety():
    m = build_rect_mesh(8, 8)
    values = np.zeros(m.n_cells)
    values[10] = 1.0
    res = rejection_sample(SensorField(values, m), 500, seed=0)
    assert np.all(res.cells == 10) and res.n_accepted == 500
    res = rejection_sample(SensorField(values, m), 4000, safety=2.0, seed=0)
    assert abs(res.acceptance_rate - 0.5) < 3 * np.sqrt(0.25 / 4000)
    with pytest.raises(EmptySupportError):
        rejection_sample(SensorField(np.zeros(m.n_cells), m), 10)
    with pytest.raises(InvalidArgumentError):
        rejection_sample(SensorField(values, m), 10, safety=0.5)


def test_sampling_is_seed_deterministic():
    m = build_rect_mesh(8, 8)
    s = SensorField(np.linspace(0, 1, m.n_cells), m)
    assert np.array_equal(rejection_sample(s, 300, seed=5).points, rejection_sample(s, 300, seed=5).points)


# --------------------------------------------------------------------------- landmarks


def test_endpoints_of_a_segment():
    t = np.linspace(0, 1, 101)
    pts = np.stack([-0.5 + 0.5 * t, t], axis=1)
    e = extract_endpoints(np.random.default_rng(0).permutation(pts))
    assert np.allclose(e, [[-0.5, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateFeatureError):
        extract_endpoints(np.ones((5, 2)))


def test_boundary_landmarks_layout():
    m = build_rect_mesh(10, 5)
    B = boundary_landmarks(m, 10)
    assert B.shape == (36, 2)
    assert len(np.unique(B, axis=0)) == 36
    mask = boundary_constraint_mask(B, m)
    assert mask.any(axis=1).all()
    corners = [[-1, 0], [1, 0], [1, 1], [-1, 1]]
    for c in corners:
        k = np.flatnonzero(np.all(np.isclose(B, c), axis=1))
        assert k.size == 1 and mask[k[0]].all()
    with pytest.raises(InvalidArgumentError):
        boundary_landmarks(m, 1)


def test_snap_endpoint_pair():
    m = build_rect_mesh(100, 50)
    r, v = snap_endpoint_pair([0.0, 0.99], [0.2, 0.97], m)
    assert r[1] == 1.0 and v[1] == 1.0 and r[0] == 0.0 and v[0] == 0.2
    r, v = snap_endpoint_pair([0.0, 0.5], [0.1, 0.6], m)
    assert np.array_equal(r, [0.0, 0.5]) and np.array_equal(v, [0.1, 0.6])


# --------------------------------------------------------------------------- end to end


def test_registration_moves_shock_onto_reference(mesh, hdm_states):
    res = register_snapshot(hdm_states[1.0], hdm_states[0.5], mesh, RegistrationParams(seed=0))
    assert check_mapping_validity(mesh, res.dofs)[0]
    assert res.max_displacement > 0.1
    # the moving shock at t=1 sits at x=0, the reference one at x=-0.25
    top = res.reference.endpoints[np.argmax(res.reference.endpoints[:, 1])]
    X = np.atleast_2d(top)
    assert np.allclose(X + res.warp(X), res.moving.endpoints[np.argmax(res.moving.endpoints[:, 1])], atol=0.05)


def test_registration_is_seed_deterministic(mesh, hdm_states):
    p = RegistrationParams(seed=3, n_samples=5000)
    a = register_snapshot(hdm_states[1.0], hdm_states[0.5], mesh, p)
    b = register_snapshot(hdm_states[1.0], hdm_states[0.5], mesh, p)
    assert np.array_equal(a.dofs.phys_nodes, b.dofs.phys_nodes)


def test_self_registration_is_near_identity(mesh, hdm_states):
    res = register_snapshot(hdm_states[0.5], hdm_states[0.5], mesh, RegistrationParams(seed=1))
    assert res.max_displacement < 3 * mesh.hx
