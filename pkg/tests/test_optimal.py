import json

import numpy as np
import pytest

from quasilocal.errors import HypothesisViolation, RejectedInput
from quasilocal.mass import liu_yau_mass, wang_yau_energy
from quasilocal.optimal import (
    OptimalOptions,
    comparison_check,
    energy_gradient,
    harmonic_basis,
    hessian_numeric,
    kernel_basis,
    mtx_matrix,
    oiee_residual,
    second_variation_mtx,
    solve_optimal,
)
from quasilocal.sphere import ScalarField, harmonic, integrate, random_band_limited
from quasilocal.surfaces import boosted_sphere, graph_surface, induced_data, round_sphere


def directional_derivative(data, tau, f, h=1e-4):
    def e(s):
        return wang_yau_energy(data, ScalarField(tau.grid, tau.values + s * f), currents=False).value

    d1 = (e(h) - e(-h)) / (2 * h)
    d2 = (e(h / 2) - e(-h / 2)) / h
    return (4 * d2 - d1) / 3


@pytest.fixture(scope="module")
def boosted(grid):
    emb = boosted_sphere(grid, 1.0, rapidity=0.3)
    return emb, induced_data(emb)


def test_gradient_sign_convention(schwarzschild, grid):
    # frozen: dE[f] = -(1/8pi) * integral of f div j
    tau = ScalarField(grid, 0.1 * harmonic(grid, 1, 1).values + 0.05 * harmonic(grid, 2, -1).values)
    rep = wang_yau_energy(schwarzschild, tau)
    f = harmonic(grid, 1, 1).values + 0.5 * harmonic(grid, 2, -1).values + 0.3 * harmonic(grid, 3, 0).values
    analytic = energy_gradient(rep, f[None, :], schwarzschild.sigma)[0]
    fd = directional_derivative(schwarzschild, tau, f)
    assert analytic * fd > 0
    assert abs(analytic - fd) < 1e-5 * abs(fd)


def test_residual_vanishes_on_schwarzschild(schwarzschild, zero):
    assert oiee_residual(schwarzschild, zero).sup() < 1e-9


def test_residual_vanishes_at_boost(boosted):
    emb, data = boosted
    assert oiee_residual(data, emb.time_function()).sup() < 1e-8


def test_residual_nonzero_off_critical(schwarzschild, grid):
    tau = ScalarField(grid, 0.1 * harmonic(grid, 2, 0).values)
    assert oiee_residual(schwarzschild, tau).sup() > 1e-4


def test_observer_kernel_leaves_energy_unchanged(boosted, grid):
    emb, data = boosted
    shift = np.array([0.02, -0.01, 0.015, 0.01]) @ kernel_basis(emb)
    tau = ScalarField(grid, emb.time_function().values + shift)
    assert abs(wang_yau_energy(data, tau, currents=False).value) < 1e-8


# -- second variation ---------------------------------------------------------

@pytest.mark.parametrize("l,m", [(2, 0), (3, -1), (4, 2)])
def test_mtx_round_sphere_closed_form(grid, l, m):
    r = 2.0
    data = induced_data(round_sphere(grid, r))
    val = second_variation_mtx(data, harmonic(grid, l, m))
    # integral of Y^2 dSigma = r^2 for unit-normalized harmonics
    exact = l * (l + 1) * (l * (l + 1) - 2) / (2 * r**3) * r**2 / (8 * np.pi)
    assert val == pytest.approx(exact, rel=1e-9)


def test_mtx_vanishes_on_translations_and_constants(schwarzschild, grid):
    assert abs(second_variation_mtx(schwarzschild, ScalarField(grid, np.full(grid.npts, 3.0)))) < 1e-12
    data = induced_data(round_sphere(grid, 1.0))
    assert abs(second_variation_mtx(data, harmonic(grid, 1, -1))) < 1e-10


def test_mtx_positive_on_schwarzschild(schwarzschild, grid):
    assert second_variation_mtx(schwarzschild, harmonic(grid, 2, 0)) == pytest.approx(0.228492, abs=1e-6)
    assert second_variation_mtx(schwarzschild, harmonic(grid, 1, 0)) > 0


def test_mtx_rejected_off_validity(grid):
    data = induced_data(graph_surface(grid, [(2, 0, 0.15), (3, 1, 0.05)], 1.0, [(2, 0, 0.1)]))
    with pytest.raises(HypothesisViolation) as info:
        second_variation_mtx(data, harmonic(grid, 2, 0))
    assert info.value.hypothesis == "div alpha_H = 0"


def test_gradient_hessian_matches_mtx(schwarzschild, zero):
    hess = hessian_numeric(schwarzschild, zero, basis_limit=3, method="gradient")
    q = mtx_matrix(schwarzschild, 3)
    assert np.max(np.abs(hess.matrix - q)) < 1e-4 * np.max(np.abs(q))
    assert hess.asymmetry < 1e-6
    assert hess.labels[0] == (0, 0)
    assert hess.spectrum_csv().startswith("index,eigenvalue\n")


def test_hessian_rejects_non_critical_point(schwarzschild, grid):
    tau = ScalarField(grid, 0.1 * harmonic(grid, 2, 0).values)
    with pytest.raises(HypothesisViolation):
        hessian_numeric(schwarzschild, tau, basis_limit=2, method="gradient")


def test_hessian_rejects_unknown_method(schwarzschild, zero):
    with pytest.raises(RejectedInput):
        hessian_numeric(schwarzschild, zero, method="magic")


def test_harmonic_basis_labels(small_grid):
    rows, labels = harmonic_basis(small_grid, 3, lmin=1)
    assert rows.shape == (15, small_grid.npts)
    assert sorted({l for l, _ in labels}) == [1, 2, 3]


# -- minimization -------------------------------------------------------------

def test_solve_optimal_schwarzschild_returns_constant(schwarzschild, grid, rng):
    tau0 = random_band_limited(grid, 4, 0.05, rng, lmin=1)
    rep = solve_optimal(schwarzschild, tau0, OptimalOptions(spectrum=False))
    assert np.ptp(rep.tau_star.values) < 1e-6
    assert rep.e_star == pytest.approx(liu_yau_mass(schwarzschild), abs=1e-9)
    assert rep.minimum_condition


def test_solve_optimal_boosted_sphere(boosted, zero):
    emb, data = boosted
    rep = solve_optimal(data, zero)
    assert abs(rep.e_star) < 1e-7
    assert rep.residual < 1e-6
    # minimizers differ from the boost by the observer kernel only
    diff = rep.tau_star.values - emb.time_function().values
    coef, *_ = np.linalg.lstsq(kernel_basis(emb).T, diff, rcond=None)
    assert np.max(np.abs(kernel_basis(emb).T @ coef - diff)) < 1e-5
    assert rep.kernel_dimension == 3  # constants are outside the band-limited space
    assert not rep.minimum_condition
    payload = json.loads(rep.to_json())
    assert payload["hessian_eigenvalues"] == sorted(payload["hessian_eigenvalues"])


def test_solve_optimal_rejects_steep_start(schwarzschild, grid):
    with pytest.raises(HypothesisViolation):
        solve_optimal(schwarzschild, ScalarField(grid, 2.0 * harmonic(grid, 4, 0).values))


def test_solve_optimal_grid_mismatch(schwarzschild, small_grid):
    with pytest.raises(RejectedInput):
        solve_optimal(schwarzschild, ScalarField(small_grid, np.zeros(small_grid.npts)))


# -- comparison ---------------------------------------------------------------

def test_comparison_on_tilted_tau(schwarzschild, grid, zero):
    tau = ScalarField(grid, 0.1 * harmonic(grid, 1, 1).values)
    e_tau, e0, e_image = comparison_check(schwarzschild, zero, tau)
    assert e_tau - e0 - e_image >= -1e-7
    # tau is a translation mode of the round image, so its energy vanishes
    assert abs(e_image) < 1e-9


def test_comparison_equality_branch(schwarzschild, grid, zero):
    e_tau, e0, e_image = comparison_check(schwarzschild, zero, ScalarField(grid, np.full(grid.npts, 0.7)))
    assert abs(e_image) < 1e-7
    assert abs(e_tau - e0) < 1e-7


def test_comparison_names_failed_hypothesis(boosted, grid, schwarzschild, zero):
    emb, data = boosted
    with pytest.raises(HypothesisViolation) as info:
        comparison_check(data, emb.time_function(), zero)
    assert info.value.hypothesis == "|H_tau0| > |H|"
    with pytest.raises(HypothesisViolation) as info:
        comparison_check(schwarzschild, ScalarField(grid, 0.1 * harmonic(grid, 2, 0).values), zero)
    assert info.value.hypothesis == "critical point"
    with pytest.raises(HypothesisViolation) as info:
        comparison_check(schwarzschild, zero, ScalarField(grid, 2.0 * harmonic(grid, 4, 0).values))
    assert info.value.hypothesis == "positive Gauss curvature of sigma + dtau^2"


def test_image_dataset_has_zero_self_energy(schwarzschild, grid, zero):
    from quasilocal.optimal import image_dataset

    img = image_dataset(schwarzschild, zero)
    assert integrate(img.norm_h, img.sigma) == pytest.approx(integrate(img.norm_h, schwarzschild.sigma))
    assert abs(wang_yau_energy(img, zero, currents=False).value) < 1e-10
