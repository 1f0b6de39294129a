import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from quasilocal.errors import HypothesisViolation, RejectedInput
from quasilocal.sphere import harmonic_field, round_metric
from quasilocal.surfaces import (
    AmbientSpace,
    SurfaceEmbedding,
    boost_matrix,
    boosted_sphere,
    build_surface,
    ellipsoid,
    graph_surface,
    induced_data,
    induced_data_slice,
    induced_data_spacetime,
    lightcone_surface,
    lorentz_transform,
    rigid_motion,
    round_sphere,
    scaled,
    schwarzschild_sphere,
    star_surface,
)


def sup(a):
    return float(np.max(np.abs(a)))


@pytest.mark.parametrize("spacetime", [False, True])
def test_round_sphere_data(grid, spacetime):
    d = induced_data(round_sphere(grid, 2.0, spacetime=spacetime))
    assert sup(d.sigma.values - round_metric(grid, 2.0).values) < 1e-10
    assert sup(d.norm_h.values - 1.0) < 1e-10
    assert sup(d.alpha_h.values) < 1e-10


def test_boosted_sphere_matches_round_sphere(grid):
    # a boost is an isometry and e_J stays constant, so alpha_H vanishes
    d = induced_data(boosted_sphere(grid, 1.5, rapidity=0.7))
    assert sup(d.sigma.values - round_metric(grid, 1.5).values) < 1e-11
    assert sup(d.norm_h.values - 2 / 1.5) < 1e-10
    assert sup(d.alpha_h.values) < 1e-10


def test_boost_matrix_is_lorentz():
    lam = boost_matrix(0.4, axis=2)
    eta = np.diag([-1.0, 1, 1, 1])
    assert sup(lam.T @ eta @ lam - eta) < 1e-14


def test_schwarzschild_sphere_mean_curvature(grid):
    r, m = 5.0, 1.2
    d = induced_data(schwarzschild_sphere(grid, r, m))
    assert sup(d.sigma.values - round_metric(grid, r).values) < 1e-11
    assert sup(d.norm_h.values - 2 / r * np.sqrt(1 - 2 * m / r)) < 1e-11
    assert d.time_symmetric


def test_schwarzschild_inside_horizon_rejected(grid):
    with pytest.raises(RejectedInput):
        induced_data(schwarzschild_sphere(grid, 1.5, 1.0))


def test_ellipsoid_mean_curvature_closed_form(grid):
    axes = np.array([1.0, 1.2, 0.9])
    d = induced_data(ellipsoid(grid, axes))
    x = axes[:, None] * grid.normal
    h = np.sqrt(np.sum(x**2 / axes[:, None] ** 4, axis=0))
    exact = (np.sum(axes**2) - np.sum(x**2, axis=0)) / (np.prod(axes) ** 2 * h**3)
    assert sup(d.norm_h.values - exact) < 1e-7


def test_slice_and_spacetime_agree_in_time_symmetric_case(grid):
    terms = [(2, 0, 0.1), (3, -2, 0.05)]
    a = induced_data(star_surface(grid, 1.0, terms))
    b = induced_data(star_surface(grid, 1.0, terms, spacetime=True))
    assert sup(a.sigma.values - b.sigma.values) < 1e-13
    assert sup(a.norm_h.values - b.norm_h.values) < 1e-10
    assert sup(b.alpha_h.values) < 1e-10


def test_lightcone_sections_satisfy_null_relation(grid):
    # a section of the light cone has |H|^2 = 4K
    profile = harmonic_field(grid, [(1, 0, 0.2), (2, 1, 0.1)], constant=1.0)
    d = induced_data(lightcone_surface(profile))
    assert sup(d.norm_h.values**2 - 4 * d.sigma.gauss_curvature) < 1e-8


def test_graph_surface_has_nontrivial_connection(grid):
    d = induced_data(graph_surface(grid, [(1, 1, 0.2), (2, 0, 0.1)]))
    assert not d.time_symmetric
    assert sup(d.alpha_h.values) > 1e-3


def test_data_invariant_under_poincare_motion(grid):
    emb = graph_surface(grid, [(2, 1, 0.15)], 1.0, [(2, 0, 0.1)])
    lam = boost_matrix(0.3, 1) @ boost_matrix(-0.2, 3)
    moved = lorentz_transform(emb, lam, shift=[1.0, -2.0, 0.5, 3.0])
    a, b = induced_data(emb), induced_data(moved)
    assert sup(a.sigma.values - b.sigma.values) < 1e-11
    assert sup(a.norm_h.values - b.norm_h.values) < 1e-9
    assert sup(a.alpha_h.values - b.alpha_h.values) < 1e-9


def test_data_invariant_under_rigid_motion(grid):
    emb = star_surface(grid, 1.0, [(2, 1, 0.1)])
    rot = Rotation.from_rotvec([0.3, -0.4, 0.2]).as_matrix()
    a, b = induced_data(emb), induced_data(rigid_motion(emb, rot, [1.0, 2.0, 3.0]))
    assert sup(a.sigma.values - b.sigma.values) < 1e-10
    assert sup(a.norm_h.values - b.norm_h.values) < 1e-10


@pytest.mark.parametrize("make", [
    lambda g: ellipsoid(g, (1.0, 1.1, 1.2)),
    lambda g: schwarzschild_sphere(g, 4.0, 1.0),
    lambda g: graph_surface(g, [(1, 0, 0.1)]),
])
def test_scaling(grid, make):
    emb = make(grid)
    a, b = induced_data(emb), induced_data(scaled(emb, 3.0))
    assert sup(b.sigma.values - 9 * a.sigma.values) < 1e-10
    assert sup(b.norm_h.values - a.norm_h.values / 3) < 1e-10
    assert sup(b.alpha_h.values - a.alpha_h.values) < 1e-10


def test_flip_alpha(grid):
    d = induced_data(graph_surface(grid, [(1, 1, 0.2)]))
    assert np.array_equal(d.flip_alpha().alpha_h.values, -d.alpha_h.values)
    assert d.flip_alpha().sigma is d.sigma


def test_dataset_json(grid):
    d = induced_data(schwarzschild_sphere(grid))
    payload = json.loads(d.to_json())
    assert set(payload) == {"source", "sigma", "norm_h", "alpha_h", "mean_curvature"}


# -- rejections ---------------------------------------------------------------

def test_wrong_shape_rejected(grid):
    with pytest.raises(RejectedInput):
        SurfaceEmbedding(grid, np.zeros((4, grid.npts)), AmbientSpace("euclidean"))


def test_non_finite_position_rejected(grid):
    pos = grid.normal.copy()
    pos[0, 0] = np.inf
    with pytest.raises(RejectedInput):
        SurfaceEmbedding(grid, pos)


def test_bad_observer_rejected(grid):
    pos = np.vstack([np.zeros(grid.npts), grid.normal])
    with pytest.raises(RejectedInput):
        SurfaceEmbedding(grid, pos, AmbientSpace("minkowski"), observer=[1.0, 0.5, 0, 0])


def test_timelike_graph_rejected(grid):
    with pytest.raises(HypothesisViolation):
        graph_surface(grid, [(1, 0, 3.0)])


def test_inverted_mean_curvature_rejected(grid):
    # a deep dimple makes the slice mean curvature negative somewhere
    with pytest.raises(HypothesisViolation) as info:
        induced_data(star_surface(grid, 1.0, [(6, 0, 0.25)]))
    assert info.value.location is not None


def test_wrong_extraction_rejected(grid):
    with pytest.raises(RejectedInput):
        induced_data_spacetime(round_sphere(grid))
    with pytest.raises(RejectedInput):
        induced_data_slice(round_sphere(grid, spacetime=True))


def test_unknown_ambient_rejected():
    with pytest.raises(RejectedInput):
        AmbientSpace("de_sitter")
    with pytest.raises(RejectedInput):
        AmbientSpace("schwarzschild", 0.0)


def test_build_surface(grid):
    emb = build_surface(grid, {"ambient": "minkowski", "family": "ellipsoid", "parameters": {"axes": [1, 1, 2]}})
    assert emb.is_spacetime
    emb = build_surface(grid, {"ambient": "minkowski", "family": "lightcone",
                               "parameters": {"radius": 2.0, "harmonics": [[1, 0, 0.1]]}})
    assert emb.position.shape == (4, grid.npts)


@pytest.mark.parametrize("entry", [
    {"family": "ellipsoid", "colour": "red"},
    {"family": "torus"},
    {"family": "ellipsoid", "parameters": {"bogus": 1}},
    {"ambient": "euclidean", "family": "schwarzschild_sphere"},
    {"ambient": "euclidean", "family": "boosted_sphere"},
    {"ambient": "minkowski", "family": "lightcone", "parameters": {"tilt": 1}},
])
def test_build_surface_rejects(grid, entry):
    with pytest.raises(RejectedInput):
        build_surface(grid, entry)
