"""Optimal isometric embedding: critical points, Hessians and comparison checks.

Sign convention (checked against finite differences and frozen in the tests):

    dE(tau)[f] = -(1/8pi) * integral of f * div_sigma(j) dSigma,

so E decreases along ``+div j``.  The Hessian in the direction f is the full
second derivative d^2/ds^2 E(tau + s f) at s = 0.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json

import numpy as np

from .errors import ConvergenceFailure, HypothesisViolation, QuasiLocalError, RejectedInput
from .mass import EIGHT_PI, cached_reference, wang_yau_energy
from .sphere import (
    ScalarField,
    _divergence_values,
    field_to_json,
    gradient,
    integrate,
    laplace_beltrami,
)
from .surfaces import SurfaceDataset
from .weyl import WeylOptions, hat_metric

ZERO_MODE_RATIO = 1e-5


def oiee_residual(data: SurfaceDataset, tau: ScalarField, seed=None, options=None) -> ScalarField:
    """div_sigma j; vanishes exactly at solutions of the optimal embedding equation."""
    return wang_yau_energy(data, tau, seed=seed, options=options).div_j


def energy_gradient(report, basis: np.ndarray, sigma) -> np.ndarray:
    """dE[f_k] for the rows f_k of ``basis`` (nodal values)."""
    w = sigma.grid.weights * sigma.area_element
    return -(basis * report.div_j.values) @ w / EIGHT_PI


def harmonic_basis(grid, limit: int, lmin: int = 0) -> tuple[np.ndarray, list]:
    """Nodal values of Y_lm, lmin <= l <= limit, and their (l, m) labels."""
    sel = np.flatnonzero((grid.degrees >= lmin) & (grid.degrees <= limit))
    labels = [(int(grid.degrees[q]), int(grid.orders[q])) for q in sel]
    return grid.synthesis_matrix[sel], labels


def kernel_basis(emb) -> np.ndarray:
    """Nodal values of 1, x1, x2, x3 restricted to a surface."""
    x = emb.spatial_part()
    return np.vstack([np.ones(emb.grid.npts), x])


def minimum_condition(data: SurfaceDataset, ref) -> bool:
    """|H_tau0| > |H| > 0 at every node."""
    h = data.norm_h.values
    return bool(np.all(h > 0) and np.all(ref.norm_h0.values > h))


# ----------------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class HessianResult:
    matrix: np.ndarray
    labels: list
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    step: float
    asymmetry: float

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    @property
    def kernel_dimension(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues) < ZERO_MODE_RATIO * np.max(self.eigenvalues)))

    def kernel(self) -> np.ndarray:
        """Coefficient vectors (columns) spanning the numerical kernel."""
        mask = np.abs(self.eigenvalues) < ZERO_MODE_RATIO * np.max(self.eigenvalues)
        return self.eigenvectors[:, mask]

    def spectrum_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "eigenvalue"])
        for i, lam in enumerate(self.eigenvalues):
            w.writerow([i, repr(float(lam))])
        return buf.getvalue()


@dataclasses.dataclass(frozen=True, eq=False)
class CriticalPointReport:
    tau_star: ScalarField
    e_star: float
    residual: float
    eigenvalues: np.ndarray
    kernel_dimension: int
    minimum_condition: bool
    history: tuple = ()

    def to_json(self) -> str:
        return json.dumps(
            {
                "E_star": self.e_star,
                "residual": self.residual,
                "hessian_eigenvalues": [float(v) for v in self.eigenvalues],
                "kernel_dimension": self.kernel_dimension,
                "minimum_condition": self.minimum_condition,
                "history": [list(h) for h in self.history],
                "tau_star": json.loads(field_to_json(self.tau_star)),
            },
            sort_keys=True,
        )


# ----------------------------------------------------------------------------
# Hessians
# ----------------------------------------------------------------------------

STEP_CASCADE = (1e-3, 1e-4, 1e-5)


def _energy_second_differences(data, tau0, basis, h, seed, options):
    """Polarized second differences of E with step h; returns the matrix."""
    grid = data.grid
    n = basis.shape[0]
    e0 = wang_yau_energy(data, tau0, seed=seed, options=options, currents=False).value

    def second(direction):
        fp = ScalarField(grid, tau0.values + h * direction)
        fm = ScalarField(grid, tau0.values - h * direction)
        ep = wang_yau_energy(data, fp, seed=seed, options=options, currents=False).value
        em = wang_yau_energy(data, fm, seed=seed, options=options, currents=False).value
        return (ep + em - 2 * e0) / (h * h)

    diag = np.array([second(basis[i]) for i in range(n)])
    q = np.diag(diag)
    for i in range(n):
        for k in range(i + 1, n):
            both = second(basis[i] + basis[k])
            q[i, k] = q[k, i] = 0.5 * (both - diag[i] - diag[k])
    return q


def _gradient_differences(data, tau0, basis, h, seed, options):
    grid = data.grid
    n = basis.shape[0]
    cols = []
    for i in range(n):
        gp = wang_yau_energy(data, ScalarField(grid, tau0.values + h * basis[i]), seed=seed, options=options)
        gm = wang_yau_energy(data, ScalarField(grid, tau0.values - h * basis[i]), seed=seed, options=options)
        cols.append((energy_gradient(gp, basis, data.sigma) - energy_gradient(gm, basis, data.sigma)) / (2 * h))
    return np.array(cols).T


def hessian_numeric(
    data: SurfaceDataset,
    tau0: ScalarField,
    basis_limit: int = 4,
    method: str = "energy",
    step: float | None = None,
    options: WeylOptions | None = None,
    check_critical: float | None = 1e-6,
) -> HessianResult:
    """Finite-difference Hessian of E at ``tau0`` over Y_lm, l <= basis_limit.

    ``method="energy"`` uses polarized second differences of E alone;
    ``method="gradient"`` differentiates the analytic gradient, which is far
    cheaper.  Either way two steps (h, h/2) are combined by Richardson
    extrapolation.  Failed probes shrink the step along 1e-3, 1e-4, 1e-5.
    """
    if method not in ("energy", "gradient"):
        raise RejectedInput(f"unknown Hessian method {method!r}")
    base = wang_yau_energy(data, tau0, options=options)
    if check_critical is not None:
        scale = max(1.0, float(np.max(np.abs(base.rho.values))))
        if base.div_j.sup() > check_critical * scale:
            raise HypothesisViolation(
                f"tau0 is not a critical point (|div j| = {base.div_j.sup():.3e})",
                hypothesis="critical point",
            )
    seed = base.reference.xhat
    basis, labels = harmonic_basis(data.grid, basis_limit)
    kernel = _energy_second_differences if method == "energy" else _gradient_differences
    steps = (step,) if step is not None else STEP_CASCADE
    last = None
    for h in steps:
        try:
            coarse = kernel(data, tau0, basis, h, seed, options)
            fine = kernel(data, tau0, basis, h / 2, seed, options)
        except QuasiLocalError as exc:
            last = exc
            continue
        # both stencils are second order in h
        q = (4 * fine - coarse) / 3
        asym = float(np.max(np.abs(q - q.T)) / max(np.max(np.abs(q)), 1e-300))
        q = 0.5 * (q + q.T)
        lam, vec = np.linalg.eigh(q)
        return HessianResult(q, labels, lam, vec, h, asym)
    raise ConvergenceFailure(f"every probe step failed: {last}")


def second_variation_mtx(
    data: SurfaceDataset,
    f: ScalarField,
    options: WeylOptions | None = None,
    tol: float = 1e-8,
) -> float:
    """(1/8pi) * integral of (Lap f)^2/|H| + (H0 - |H|)|grad f|^2 - h0(grad f, grad f).

    Valid at the critical point tau = 0, which requires div alpha_H = 0.
    """
    sigma = data.sigma
    grid = data.grid
    div_alpha = _divergence_values(grid, data.alpha_h.values, sigma)
    scale = max(1.0, float(np.max(np.abs(data.norm_h.values))))
    if np.max(np.abs(div_alpha)) > tol * scale:
        raise HypothesisViolation(
            "div alpha_H does not vanish, tau = 0 is not a critical point",
            hypothesis="div alpha_H = 0",
        )
    ref = cached_reference(sigma, ScalarField(grid, np.zeros(grid.npts)), options=options)
    df = gradient(f).values
    up = np.einsum("abn,bn->an", sigma.inverse, df)
    lap = laplace_beltrami(f, sigma).values
    h = data.norm_h.values
    integrand = (
        lap**2 / h
        + (ref.hhat_mean.values - h) * np.einsum("an,an->n", df, up)
        - np.einsum("an,abn,bn->n", up, ref.hhat.values, up)
    )
    return integrate(ScalarField(grid, integrand), sigma) / EIGHT_PI


def mtx_matrix(data: SurfaceDataset, basis_limit: int = 4, options=None) -> np.ndarray:
    """Second-variation quadratic form on the Y_lm basis, by polarization."""
    grid = data.grid
    basis, _ = harmonic_basis(grid, basis_limit)
    n = basis.shape[0]
    diag = [second_variation_mtx(data, ScalarField(grid, basis[i]), options) for i in range(n)]
    q = np.diag(diag)
    for i in range(n):
        for k in range(i + 1, n):
            both = second_variation_mtx(data, ScalarField(grid, basis[i] + basis[k]), options)
            q[i, k] = q[k, i] = 0.5 * (both - diag[i] - diag[k])
    return q


# ----------------------------------------------------------------------------
# minimization
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class OptimalOptions:
    band: int = 4
    max_iter: int = 30
    gradient_tol: float = 1e-10
    energy_tol: float = 1e-14
    fd_step: float = 1e-4
    spectrum: bool = True


def _try_energy(data, tau, seed, weyl):
    try:
        return wang_yau_energy(data, tau, seed=seed, options=weyl)
    except (HypothesisViolation, ConvergenceFailure):
        return None


def _gradient_jacobian(data, field, c, basis, h, seed, weyl):
    n = c.size
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        gp = wang_yau_energy(data, field(c + e), seed=seed, options=weyl)
        gm = wang_yau_energy(data, field(c - e), seed=seed, options=weyl)
        cols.append((energy_gradient(gp, basis, data.sigma) - energy_gradient(gm, basis, data.sigma)) / (2 * h))
    hess = np.array(cols).T
    return 0.5 * (hess + hess.T)


def solve_optimal(
    data: SurfaceDataset,
    tau_init: ScalarField,
    options: OptimalOptions | None = None,
    weyl: WeylOptions | None = None,
) -> CriticalPointReport:
    """Minimize E over time functions spanned by Y_lm with 1 <= l <= band.

    Damped Newton with a finite-difference Hessian of the analytic gradient,
    refreshed only when the gradient stops contracting.  Eigen-directions
    below the zero-mode threshold (the observer kernel) are dropped from the
    Newton system; non-descending Newton steps fall back to steepest descent,
    and steps leaving the convexity domain are halved.
    """
    opts = options or OptimalOptions()
    grid = data.grid
    if tau_init.grid != grid:
        raise RejectedInput("tau_init lives on another grid")
    if np.any(hat_metric(data.sigma, tau_init).gauss_curvature <= 0):
        raise HypothesisViolation("K(sigma + dtau^2) is not positive at tau_init", hypothesis="convex projection")
    basis, _ = harmonic_basis(grid, opts.band, lmin=1)
    # tau = rest + c . basis; rest holds what the basis cannot move
    c = grid.analyze(tau_init.values)[(grid.degrees >= 1) & (grid.degrees <= opts.band)]
    rest = tau_init.values - c @ basis

    def field(coef):
        return ScalarField(grid, rest + coef @ basis)

    report = wang_yau_energy(data, field(c), options=weyl)
    energy = report.value
    grad = energy_gradient(report, basis, data.sigma)
    gnorm = float(np.max(np.abs(grad)))
    history = [(0, energy, gnorm, "init")]
    hess = None
    for it in range(1, opts.max_iter + 1):
        if gnorm < opts.gradient_tol:
            break
        seed = report.reference.xhat
        if hess is None:
            hess = _gradient_jacobian(data, field, c, basis, opts.fd_step, seed, weyl)
        lam, vec = np.linalg.eigh(hess)
        top = max(float(np.max(lam)), 1e-300)
        keep = lam > ZERO_MODE_RATIO * top
        step = -vec[:, keep] @ ((vec[:, keep].T @ grad) / lam[keep])
        mode = "newton"
        if not keep.any() or grad @ step >= 0:
            step = -grad
            mode = "descent"
        alpha = 1.0
        trial = None
        while alpha > 1e-8:
            trial = _try_energy(data, field(c + alpha * step), seed, weyl)
            if trial is not None and trial.value <= energy + 1e-4 * alpha * (grad @ step):
                break
            trial = None
            alpha *= 0.5
        if trial is None:
            history.append((it, energy, gnorm, mode + "-stall"))
            break
        c = c + alpha * step
        drop = energy - trial.value
        report, energy = trial, trial.value
        grad = energy_gradient(report, basis, data.sigma)
        previous, gnorm = gnorm, float(np.max(np.abs(grad)))
        history.append((it, energy, gnorm, mode))
        if abs(drop) < opts.energy_tol:
            break
        if gnorm > 0.25 * previous or alpha < 1.0:
            hess = None
    else:
        raise ConvergenceFailure("optimal embedding solver hit the iteration limit", history)
    lam = np.zeros(0)
    kernel_dim = 0
    if opts.spectrum:
        final = _gradient_jacobian(data, field, c, basis, opts.fd_step, report.reference.xhat, weyl)
        lam = np.linalg.eigvalsh(final)
        kernel_dim = int(np.sum(np.abs(lam) < ZERO_MODE_RATIO * max(float(np.max(lam)), 1e-300)))
    return CriticalPointReport(
        tau_star=field(c),
        e_star=float(energy),
        residual=report.div_j.sup(),
        eigenvalues=lam,
        kernel_dimension=kernel_dim,
        minimum_condition=minimum_condition(data, report.reference),
        history=tuple(history),
    )


# ----------------------------------------------------------------------------
# comparison inequality
# ----------------------------------------------------------------------------

def image_dataset(data: SurfaceDataset, tau0: ScalarField, options=None) -> SurfaceDataset:
    """Data (sigma, |H0|, alpha_H0) of the image of the isometric embedding fixed by tau0."""
    ref = cached_reference(data.sigma, tau0, options=options)
    return SurfaceDataset(
        sigma=data.sigma,
        norm_h=ref.norm_h0,
        alpha_h=ref.alpha_h0,
        source="image surface",
    )


def comparison_check(
    data: SurfaceDataset,
    tau0: ScalarField,
    tau: ScalarField,
    options: WeylOptions | None = None,
    critical_tol: float = 1e-6,
) -> tuple[float, float, float]:
    """(E(Sigma, tau), E(Sigma, tau0), E(Sigma_tau0, tau)).

    Each hypothesis of the comparison inequality is checked first; a failure
    raises HypothesisViolation whose ``hypothesis`` attribute names it.
    """
    base = wang_yau_energy(data, tau0, options=options)
    if np.any(hat_metric(data.sigma, tau).gauss_curvature <= 0):
        raise HypothesisViolation(
            "sigma + dtau^2 is not positively curved", hypothesis="positive Gauss curvature of sigma + dtau^2"
        )
    h = data.norm_h.values
    if not np.all(h > 0):
        raise HypothesisViolation("|H| must be positive", hypothesis="|H| > 0")
    if not np.all(base.reference.norm_h0.values > h):
        k = int(np.argmin(base.reference.norm_h0.values - h))
        raise HypothesisViolation(
            "|H_tau0| > |H| fails", hypothesis="|H_tau0| > |H|", location=data.grid.node_location(k)
        )
    scale = max(1.0, float(np.max(np.abs(base.rho.values))))
    if base.div_j.sup() > critical_tol * scale:
        raise HypothesisViolation(
            f"tau0 is not a critical point (|div j| = {base.div_j.sup():.3e})", hypothesis="critical point"
        )
    seed = base.reference.xhat
    e_tau = wang_yau_energy(data, tau, seed=seed, options=options, currents=False).value
    image = image_dataset(data, tau0, options)
    e_image = wang_yau_energy(image, tau, seed=seed, options=options, currents=False).value
    return e_tau, base.value, e_image
