import numpy as np
import pytest
from scipy.linalg import orthogonal_procrustes

from quasilocal.errors import HypothesisViolation, RejectedInput
from quasilocal.sphere import MetricField, ScalarField, harmonic, round_metric, sphere_grid
from quasilocal.surfaces import boosted_sphere, ellipsoid, graph_surface, induced_data, round_sphere, star_surface
from quasilocal.weyl import (
    WeylOptions,
    hat_metric,
    identity_a_error,
    identity_b_terms,
    reference_geometry,
    solve_weyl,
)


def rigid_distance(x, y):
    """Sup distance between two point clouds after the best proper rigid motion."""
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    rot, _ = orthogonal_procrustes(xc.T, yc.T)
    assert np.linalg.det(rot) > 0
    return float(np.max(np.abs(rot.T @ xc - yc)))


def test_round_metric_gives_round_sphere(grid):
    emb = solve_weyl(round_metric(grid, 2.0))
    assert emb.defect < 1e-9
    assert np.max(np.abs(np.linalg.norm(emb.position, axis=0) - 2.0)) < 1e-9


def test_ellipsoid_metric_recovers_ellipsoid(grid):
    target = ellipsoid(grid, (1.0, 1.1, 1.3))
    emb = solve_weyl(target.induced_metric())
    assert emb.defect < 1e-9
    assert rigid_distance(emb.position, target.position) < 1e-7


def test_translation_gauge(grid):
    emb = solve_weyl(ellipsoid(grid, (1.0, 1.2, 0.8)).induced_metric())
    assert np.max(np.abs(emb.position_coefficients()[:, 0])) == 0.0


def test_tilted_metric_embeds(grid):
    shat = hat_metric(round_metric(grid), ScalarField(grid, 0.2 * harmonic(grid, 1, 1).values))
    emb = solve_weyl(shat)
    assert emb.defect < 1e-9
    assert np.max(np.abs(emb.induced_metric().values - shat.values)) < 1e-8


def test_nonconvex_metric_rejected(grid):
    peanut = star_surface(grid, 1.0, [(3, 0, 0.4)]).induced_metric()
    with pytest.raises(HypothesisViolation) as info:
        solve_weyl(peanut)
    assert info.value.hypothesis == "positive Gauss curvature"
    assert info.value.location is not None


def test_seed_on_other_grid_rejected(grid, small_grid):
    with pytest.raises(RejectedInput):
        solve_weyl(round_metric(grid), seed=round_sphere(small_grid))


def test_deterministic(grid):
    metric = star_surface(grid, 1.0, [(2, 1, 0.08), (3, 0, 0.05)]).induced_metric()
    a, b = solve_weyl(metric), solve_weyl(metric)
    assert a.position.tobytes() == b.position.tobytes()


def test_warm_start_agrees_with_cold_start(grid):
    m1 = star_surface(grid, 1.0, [(2, 1, 0.08)]).induced_metric()
    m2 = star_surface(grid, 1.0, [(2, 1, 0.09)]).induced_metric()
    cold = solve_weyl(m2)
    warm = solve_weyl(m2, seed=solve_weyl(m1))
    assert rigid_distance(warm.position, cold.position) < 1e-8


def test_convergence_log(grid):
    emb = solve_weyl(ellipsoid(grid).induced_metric())
    rows = emb.convergence_csv().strip().splitlines()
    assert rows[0] == "iteration,defect,mode"
    defects = [float(r.split(",")[1]) for r in rows[1:]]
    assert defects[-1] == emb.defect
    assert defects[-1] < defects[0]


def test_max_iter_exhaustion_raises(grid):
    from quasilocal.errors import ConvergenceFailure

    metric = ellipsoid(grid, (1.0, 1.0, 1.6)).induced_metric()
    with pytest.raises(ConvergenceFailure) as info:
        solve_weyl(metric, options=WeylOptions(max_iter=1, continuation_steps=1))
    assert len(info.value.history) >= 1


# -- reference geometry -------------------------------------------------------

def test_trivial_reference(grid):
    sigma = ellipsoid(grid).induced_metric()
    ref = reference_geometry(sigma, ScalarField(grid, np.zeros(grid.npts)))
    assert np.max(np.abs(ref.alpha_h0.values)) < 1e-8
    assert np.max(np.abs(ref.norm_h0.values - ref.hhat_mean.values)) < 1e-8
    assert np.max(np.abs(ref.theta0.values)) == 0.0


def test_boosted_sphere_is_its_own_reference(grid):
    emb = boosted_sphere(grid, 1.0, rapidity=0.4)
    d = induced_data(emb)
    ref = reference_geometry(d.sigma, emb.time_function())
    assert np.max(np.abs(ref.norm_h0.values - d.norm_h.values)) < 1e-8
    assert np.max(np.abs(ref.alpha_h0.values - d.alpha_h.values)) < 1e-8
    assert rigid_distance(ref.xhat.position, emb.position[1:]) < 1e-8


def test_graph_surface_round_trip(grid):
    emb = graph_surface(grid, [(1, 1, 0.2), (2, 0, 0.1)], 1.0, [(2, 1, 0.05)])
    d = induced_data(emb)
    ref = reference_geometry(d.sigma, emb.time_function())
    assert np.max(np.abs(ref.norm_h0.values - d.norm_h.values)) < 1e-7
    assert np.max(np.abs(ref.alpha_h0.values - d.alpha_h.values)) < 1e-7


def test_identities_on_random_tau(grid, rng):
    from quasilocal.sphere import random_band_limited

    sigma = ellipsoid(grid, (1.0, 1.1, 0.9)).induced_metric()
    tau = random_band_limited(grid, 4, 0.02, rng, lmin=1)
    ref = reference_geometry(sigma, tau)
    assert identity_a_error(ref, sigma, tau).sup() < 1e-8
    first, second = identity_b_terms(ref, sigma, tau)
    scale = max(np.max(np.abs(first)), np.max(np.abs(second)))
    assert np.max(np.abs(first + second)) < 1e-7 * scale


def test_reference_grid_mismatch(grid, small_grid):
    with pytest.raises(RejectedInput):
        reference_geometry(round_metric(grid), ScalarField(small_grid, np.zeros(small_grid.npts)))


def test_steep_tau_gives_nonconvex_reference():
    g = sphere_grid(8)
    sigma = MetricField(g, round_metric(g).values)
    # sigma + dtau^2 stays positive definite for any real tau, so the
    # rejection can only come from a non-convex sigma_hat
    tau = ScalarField(g, 3.0 * harmonic(g, 2, 0).values)
    with pytest.raises(HypothesisViolation):
        reference_geometry(sigma, tau)
