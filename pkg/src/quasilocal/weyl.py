"""Isometric embedding of convex metrics into R^3 and reference geometry.

The embedding X is expanded in real spherical harmonics (degree 1..lmax per
Cartesian component; the degree-0 part is pinned to zero, fixing the
translation gauge).  Gauss-Newton minimizes the quadrature-weighted
Frobenius norm of ``dX . dX - sigma`` in the round frame.  The three
infinitesimal rotations are removed from every update by augmenting the
normal matrix with their projector.

Warm starts reuse the normal matrix factorized at the seed; the fixed point
is the same Gauss-Newton stationary point, only the contraction rate
changes, so results do not depend on whether a cached factor was used.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import threading
from collections import OrderedDict

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceFailure, HypothesisViolation, RejectedInput
from .sphere import (
    MetricField,
    ScalarField,
    SphereGrid,
    SymmetricTensorField,
    VectorField,
    _divergence_values,
    covariant_hessian,
    gradient,
    laplace_beltrami,
)
from .surfaces import AmbientSpace, SurfaceEmbedding, induced_data_spacetime


@dataclasses.dataclass(frozen=True, eq=False)
class WeylEmbedding(SurfaceEmbedding):
    """Embedding returned by :func:`solve_weyl` with its solver record."""

    coefficients: np.ndarray | None = None
    defect: float = float("nan")
    history: tuple = ()

    def position_coefficients(self) -> np.ndarray:
        return self.coefficients

    def convergence_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "defect", "mode"])
        for row in self.history:
            w.writerow([row[0], repr(float(row[1])), row[2]])
        return buf.getvalue()


@dataclasses.dataclass(frozen=True)
class WeylOptions:
    tol: float = 1e-9
    max_iter: int = 200
    step_tol: float = 1e-13
    continuation_steps: int = 4


def _frame_target(metric: MetricField):
    v = metric.values
    return v[0, 0], v[0, 1], v[1, 1]


class _Problem:
    """Residual, gradient and normal matrix of the isometry defect."""

    def __init__(self, grid: SphereGrid, target: MetricField):
        self.grid = grid
        self.s11, self.s12, self.s22 = _frame_target(target)
        self.scale = float(np.max(np.abs(target.values)))
        self.w = grid.weights
        self.dt, self.dp = grid.derivative_matrices
        self.free = grid.degrees >= 1

    def tangents(self, c):
        return c @ self.dt, c @ self.dp

    def residual(self, c):
        a, b = self.tangents(c)
        r11 = np.einsum("in,in->n", a, a) - self.s11
        r12 = np.einsum("in,in->n", a, b) - self.s12
        r22 = np.einsum("in,in->n", b, b) - self.s22
        return a, b, r11, r12, r22

    def objective(self, r11, r12, r22) -> float:
        return 0.5 * float(np.sum(self.w * (r11 * r11 + 2 * r12 * r12 + r22 * r22)))

    def defect(self, r11, r12, r22) -> float:
        return max(np.max(np.abs(r11)), np.max(np.abs(r12)), np.max(np.abs(r22))) / self.scale

    def gradient(self, a, b, r11, r12, r22):
        w = self.w
        ga = 2 * w * (r11 * a + r12 * b)
        gb = 2 * w * (r12 * a + r22 * b)
        g = ga @ self.dt.T + gb @ self.dp.T
        return g[:, self.free].ravel()

    def normal_matrix(self, c):
        a, b = self.tangents(c)
        dt, dp = self.dt[self.free], self.dp[self.free]
        sw = np.sqrt(self.w)
        nq = dt.shape[0]
        npts = dt.shape[1]
        jac = np.empty((3, npts, 3, nq))
        for comp in range(3):
            jac[0, :, comp] = (2 * sw * a[comp])[:, None] * dt.T
            jac[1, :, comp] = (np.sqrt(2.0) * sw)[:, None] * (a[comp][:, None] * dp.T + b[comp][:, None] * dt.T)
            jac[2, :, comp] = (2 * sw * b[comp])[:, None] * dp.T
        jac = jac.reshape(3 * npts, 3 * nq)
        normal = jac.T @ jac
        rot = self.rotation_modes(c)
        beta = np.trace(normal) / normal.shape[0]
        for mode in rot:
            normal += beta * np.outer(mode, mode) / (mode @ mode)
        return normal

    def rotation_modes(self, c):
        cf = c[:, self.free]
        modes = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            modes.append(np.cross(e, cf, axis=0).ravel())
        return modes

    def unpack(self, x):
        c = np.zeros((3, self.grid.ncoef))
        c[:, self.free] = x.reshape(3, -1)
        return c


_FACTOR_CACHE: OrderedDict = OrderedDict()
_FACTOR_LOCK = threading.Lock()


def _seed_factor(problem: _Problem, c0: np.ndarray):
    key = (problem.grid, hashlib.sha1(np.ascontiguousarray(c0).tobytes()).hexdigest())
    with _FACTOR_LOCK:
        if key in _FACTOR_CACHE:
            _FACTOR_CACHE.move_to_end(key)
            return _FACTOR_CACHE[key]
    factor = sla.cho_factor(problem.normal_matrix(c0))
    with _FACTOR_LOCK:
        _FACTOR_CACHE[key] = factor
        while len(_FACTOR_CACHE) > 8:
            _FACTOR_CACHE.popitem(last=False)
    return factor


def _gauss_newton(problem: _Problem, c0: np.ndarray, opts: WeylOptions, warm: bool):
    """Returns (coefficients, defect, history); raises ConvergenceFailure."""
    c = c0.copy()
    a, b, r11, r12, r22 = problem.residual(c)
    f = problem.objective(r11, r12, r22)
    defect = problem.defect(r11, r12, r22)
    history = [(0, defect, "seed")]
    factor = _seed_factor(problem, c0) if warm else None
    slow = 0
    norm_c = np.linalg.norm(c)
    for it in range(1, opts.max_iter + 1):
        g = problem.gradient(a, b, r11, r12, r22)
        if factor is None:
            step = -sla.cho_solve(sla.cho_factor(problem.normal_matrix(c)), g)
            mode = "gn"
        else:
            step = -sla.cho_solve(factor, g)
            mode = "warm"
        alpha = 1.0
        while True:
            trial = c + alpha * problem.unpack(step)
            ta, tb, t11, t12, t22 = problem.residual(trial)
            tf = problem.objective(t11, t12, t22)
            if tf <= f or alpha < 1e-6:
                break
            alpha *= 0.5
        step_rel = alpha * np.linalg.norm(step) / norm_c
        if tf > f and alpha < 1e-6:
            # no descent left: we are at the floor or the warm factor is useless
            if factor is not None and defect > opts.tol:
                factor = None
                continue
            history.append((it, defect, mode + "-stall"))
            break
        prev = defect
        c, a, b, r11, r12, r22, f = trial, ta, tb, t11, t12, t22, tf
        defect = problem.defect(r11, r12, r22)
        history.append((it, defect, mode))
        if step_rel < opts.step_tol:
            break
        if defect < opts.tol and defect > 0.5 * prev and mode == "gn":
            break
        if factor is not None:
            slow = slow + 1 if defect > 0.5 * prev else 0
            if slow >= 3:
                if defect < opts.tol and defect > 0.9 * prev:
                    break
                factor = None
    if defect >= opts.tol:
        raise ConvergenceFailure(
            f"isometric embedding stalled at relative defect {defect:.3e}", history
        )
    return c, defect, history


def _round_seed(grid: SphereGrid, metric: MetricField) -> np.ndarray:
    radius = np.sqrt(metric.area / (4 * np.pi))
    c = grid.analyze(radius * grid.normal)
    c[:, grid.degrees == 0] = 0.0
    return c


def _check_convex(metric: MetricField):
    k = metric.gauss_curvature
    bad = np.flatnonzero(k <= 0)
    if bad.size:
        raise HypothesisViolation(
            "metric does not have positive Gauss curvature",
            hypothesis="positive Gauss curvature",
            location=metric.grid.node_location(int(bad[0])),
        )


def solve_weyl(
    metric: MetricField,
    seed: SurfaceEmbedding | None = None,
    options: WeylOptions | None = None,
) -> WeylEmbedding:
    """Embed a positive-curvature metric isometrically into R^3.

    The result is unique up to a rigid motion; translations are fixed by a
    zero mean position over the parameter sphere.  Without a seed the solve
    starts from the round sphere of equal area and falls back to continuation
    in ``(1 - t) round + t metric`` if Gauss-Newton alone does not converge.
    """
    opts = options or WeylOptions()
    grid = metric.grid
    _check_convex(metric)
    problem = _Problem(grid, metric)
    if seed is not None:
        if seed.grid != grid:
            raise RejectedInput("seed embedding lives on another grid")
        if isinstance(seed, WeylEmbedding):
            c0 = np.array(seed.coefficients, dtype=float)
        else:
            c0 = grid.analyze(seed.spatial_part())
        c0[:, ~problem.free] = 0.0
        try:
            c, defect, history = _gauss_newton(problem, c0, opts, warm=True)
        except ConvergenceFailure:
            c, defect, history = _cold_solve(problem, metric, opts)
    else:
        c, defect, history = _cold_solve(problem, metric, opts)
    return WeylEmbedding(
        grid,
        grid.synthesize(c),
        AmbientSpace("euclidean"),
        label="weyl embedding",
        coefficients=c,
        defect=defect,
        history=tuple(history),
    )


def _cold_solve(problem: _Problem, metric: MetricField, opts: WeylOptions):
    grid = metric.grid
    c0 = _round_seed(grid, metric)
    try:
        return _gauss_newton(problem, c0, opts, warm=False)
    except ConvergenceFailure as exc:
        failure = exc
    # continuation from the equal-area round metric
    radius2 = metric.area / (4 * np.pi)
    round_vals = radius2 * np.eye(2)[:, :, None]
    c = c0
    history = list(failure.history)
    n = opts.continuation_steps
    for k in range(1, n + 1):
        t = k / n
        inter = MetricField(grid, (1 - t) * round_vals + t * metric.values)
        sub = _Problem(grid, inter)
        c, defect, h = _gauss_newton(sub, c, opts, warm=False)
        history.extend((i, d, f"continuation t={t:g} {m}") for i, d, m in h)
    return c, defect, history


# ----------------------------------------------------------------------------
# reference geometry
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class ReferenceGeometry:
    """Reference data for (sigma, tau): the projected surface in R^3 and its lift."""

    xhat: WeylEmbedding
    sigma_hat: MetricField
    induced_hat: MetricField
    hhat: SymmetricTensorField
    hhat_mean: ScalarField
    normal_hat: np.ndarray
    lifted: SurfaceEmbedding
    norm_h0: ScalarField
    alpha_h0: VectorField
    theta0: ScalarField
    residual: float

    @property
    def grid(self) -> SphereGrid:
        return self.sigma_hat.grid


def hat_metric(sigma: MetricField, tau: ScalarField) -> MetricField:
    """sigma + d tau (x) d tau."""
    dt = gradient(tau).values
    try:
        return MetricField(sigma.grid, sigma.values + np.einsum("an,bn->abn", dt, dt))
    except RejectedInput as exc:
        raise HypothesisViolation(str(exc), hypothesis="positive definite sigma_hat") from None


def second_fundamental_form(emb: SurfaceEmbedding):
    """(h_ab, outward unit normal) of a surface in R^3, with h = sigma/r on spheres."""
    grid = emb.grid
    c = emb.position_coefficients()
    d = grid.grad_coefs(c)
    normal = np.cross(d[0], d[1], axis=0)
    normal = normal / np.linalg.norm(normal, axis=0)
    hess = grid.hess_coefs(c)  # (2, 2, 3, npts)
    h = -np.einsum("abin,in->abn", hess, normal)
    return h, normal


def reference_geometry(
    sigma: MetricField,
    tau: ScalarField,
    seed: SurfaceEmbedding | None = None,
    options: WeylOptions | None = None,
) -> ReferenceGeometry:
    """Solve the Weyl problem for sigma + d tau^2 and lift the image by tau."""
    if sigma.grid != tau.grid:
        raise RejectedInput("sigma and tau live on different grids")
    grid = sigma.grid
    shat = hat_metric(sigma, tau)
    xhat = solve_weyl(shat, seed=seed, options=options)
    induced = xhat.induced_metric()
    h, normal = second_fundamental_form(xhat)
    hmean = np.einsum("abn,abn->n", induced.inverse, h)
    lifted = SurfaceEmbedding(
        grid, np.vstack([tau.values, xhat.position]), AmbientSpace("minkowski"), label="reference lift"
    )
    data0 = induced_data_spacetime(lifted)
    dtau = gradient(tau).values
    grad_sq = np.einsum("an,abn,bn->n", dtau, sigma.inverse, dtau)
    lap = laplace_beltrami(tau, sigma).values
    theta0 = np.arcsinh(-lap / (data0.norm_h.values * np.sqrt(1 + grad_sq)))
    return ReferenceGeometry(
        xhat=xhat,
        sigma_hat=shat,
        induced_hat=induced,
        hhat=SymmetricTensorField(grid, h),
        hhat_mean=ScalarField(grid, hmean),
        normal_hat=normal,
        lifted=lifted,
        norm_h0=data0.norm_h,
        alpha_h0=data0.alpha_h,
        theta0=ScalarField(grid, theta0),
        residual=xhat.defect,
    )


def identity_a_error(ref: ReferenceGeometry, sigma: MetricField, tau: ScalarField) -> ScalarField:
    """Pointwise relative error of

    sqrt(1+|d tau|^2) Hhat = sqrt(1+|d tau|^2) cosh(theta0) |H0|
                             - <d tau, d theta0> - alpha_H0(grad tau).
    """
    ginv = sigma.inverse
    dtau = gradient(tau).values
    dth = gradient(ref.theta0).values
    s = np.sqrt(1 + np.einsum("an,abn,bn->n", dtau, ginv, dtau))
    lhs = s * ref.hhat_mean.values
    rhs = (
        s * np.cosh(ref.theta0.values) * ref.norm_h0.values
        - np.einsum("an,abn,bn->n", dtau, ginv, dth)
        - np.einsum("an,abn,bn->n", ref.alpha_h0.values, ginv, dtau)
    )
    return ScalarField(sigma.grid, (lhs - rhs) / lhs)


def identity_b_terms(ref: ReferenceGeometry, sigma: MetricField, tau: ScalarField):
    """The two terms of the critical-point identity of the reference surface.

    Returns (first, second) as arrays; their sum vanishes for an exact reference.
    """
    grid = sigma.grid
    ginv = sigma.inverse
    hinv = ref.induced_hat.inverse
    dtau = gradient(tau).values
    s = np.sqrt(1 + np.einsum("an,abn,bn->n", dtau, ginv, dtau))
    hess = covariant_hessian(tau, sigma).values
    hmean = ref.hhat_mean.values
    newton = hmean * hinv - np.einsum("acn,bdn,cdn->abn", hinv, hinv, ref.hhat.values)
    first = -np.einsum("abn,abn->n", newton, hess) / s
    form = (
        dtau * (np.cosh(ref.theta0.values) * ref.norm_h0.values / s)
        - gradient(ref.theta0).values
        - ref.alpha_h0.values
    )
    second = _divergence_values(grid, form, sigma)
    return first, second
