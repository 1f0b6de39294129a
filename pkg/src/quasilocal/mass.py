"""Hawking, Brown-York, Liu-Yau and Wang-Yau functionals.

All values are in geometric units.  The Wang-Yau energy carries the same
``1/(8 pi)`` normalization as the Brown-York and Liu-Yau masses, so that at
``tau = 0`` it reduces to the Liu-Yau mass.
"""

from __future__ import annotations

import dataclasses
import json
import threading
from collections import OrderedDict

import numpy as np

from .errors import GridMismatch, HypothesisViolation, RejectedInput
from .sphere import (
    MetricField,
    ScalarField,
    VectorField,
    _divergence_values,
    field_to_json,
    gradient,
    integrate,
    laplace_beltrami,
)
from .surfaces import SurfaceDataset
from .weyl import ReferenceGeometry, WeylOptions, identity_a_error, reference_geometry

EIGHT_PI = 8 * np.pi


def hawking_mass(data: SurfaceDataset) -> float:
    sigma = data.sigma
    area = sigma.area
    willmore = integrate(ScalarField(data.grid, data.norm_h.values**2), sigma)
    return float(np.sqrt(area / (16 * np.pi)) * (1 - willmore / (16 * np.pi)))


# ----------------------------------------------------------------------------
# reference cache
# ----------------------------------------------------------------------------

class _ReferenceCache:
    """LRU cache of reference geometries keyed by the content of (sigma, tau)."""

    def __init__(self, size: int = 64):
        self.size = size
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def key(sigma: MetricField, tau: ScalarField, options) -> tuple:
        return (sigma.grid, sigma.content_hash(), tau.content_hash(), options)

    def get(self, key):
        with self._lock:
            ref = self._data.get(key)
            if ref is not None:
                self._data.move_to_end(key)
            return ref

    def put(self, key, ref):
        with self._lock:
            self._data[key] = ref
            while len(self._data) > self.size:
                self._data.popitem(last=False)

    def clear(self):
        with self._lock:
            self._data.clear()


REFERENCE_CACHE = _ReferenceCache()


def cached_reference(
    sigma: MetricField,
    tau: ScalarField,
    seed=None,
    options: WeylOptions | None = None,
) -> ReferenceGeometry:
    """reference_geometry with memoization on the field contents."""
    key = REFERENCE_CACHE.key(sigma, tau, options)
    ref = REFERENCE_CACHE.get(key)
    if ref is None:
        ref = reference_geometry(sigma, tau, seed=seed, options=options)
        REFERENCE_CACHE.put(key, ref)
    return ref


def _zero(grid) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.npts))


def _reference_mean_curvature(data: SurfaceDataset, options=None) -> ScalarField:
    return cached_reference(data.sigma, _zero(data.grid), options=options).hhat_mean


def brown_york_mass(data: SurfaceDataset, options: WeylOptions | None = None) -> float:
    """(1/8pi) * integral of (H0 - H), H the mean curvature inside the slice."""
    if data.mean_curvature is None:
        raise RejectedInput("Brown-York mass needs the mean curvature inside a slice")
    h0 = _reference_mean_curvature(data, options)
    return integrate(h0 - data.mean_curvature, data.sigma) / EIGHT_PI


def liu_yau_mass(data: SurfaceDataset, options: WeylOptions | None = None) -> float:
    h0 = _reference_mean_curvature(data, options)
    return integrate(h0 - data.norm_h, data.sigma) / EIGHT_PI


# ----------------------------------------------------------------------------
# Wang-Yau energy
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class EnergyReport:
    value: float
    tau: ScalarField
    theta: ScalarField
    reference: ReferenceGeometry
    rho: ScalarField | None = None
    j: VectorField | None = None
    div_j: ScalarField | None = None
    canonical: float | None = None
    diagnostics: dict = dataclasses.field(default_factory=dict)

    def to_json(self, fields: bool = False) -> str:
        payload = {
            "value": self.value,
            "canonical": self.canonical,
            "diagnostics": self.diagnostics,
        }
        if fields:
            for name in ("tau", "theta", "rho", "j", "div_j"):
                f = getattr(self, name)
                if f is not None:
                    payload[name] = json.loads(field_to_json(f))
        return json.dumps(payload, sort_keys=True)


def _tau_geometry(tau: ScalarField, sigma: MetricField):
    dtau = gradient(tau).values
    grad_sq = np.einsum("an,abn,bn->n", dtau, sigma.inverse, dtau)
    lap = laplace_beltrami(tau, sigma).values
    return dtau, np.sqrt(1 + grad_sq), lap


def physical_theta(data: SurfaceDataset, tau: ScalarField) -> ScalarField:
    _, s, lap = _tau_geometry(tau, data.sigma)
    return ScalarField(data.grid, np.arcsinh(-lap / (data.norm_h.values * s)))


def _check_inputs(data: SurfaceDataset, tau: ScalarField):
    if tau.grid != data.grid:
        raise GridMismatch("tau and the dataset live on different grids")
    bad = np.flatnonzero(data.norm_h.values <= 0)
    if bad.size:
        raise HypothesisViolation(
            "|H| vanishes", hypothesis="spacelike mean curvature", location=data.grid.node_location(int(bad[0]))
        )


def energy_direct(data: SurfaceDataset, tau: ScalarField, ref: ReferenceGeometry):
    """Returns (E, theta) from the defining integral."""
    sigma = data.sigma
    ginv = sigma.inverse
    dtau, s, lap = _tau_geometry(tau, sigma)
    theta = np.arcsinh(-lap / (data.norm_h.values * s))
    dtheta = gradient(ScalarField(data.grid, theta)).values
    integrand = (
        s * np.cosh(theta) * data.norm_h.values
        - np.einsum("an,abn,bn->n", dtau, ginv, dtheta)
        - np.einsum("an,abn,bn->n", data.alpha_h.values, ginv, dtau)
    )
    # dSigma_hat = sqrt(1 + |d tau|^2) dSigma on the parameter sphere
    reference_term = integrate(ScalarField(data.grid, ref.hhat_mean.values * s), sigma)
    physical_term = integrate(ScalarField(data.grid, integrand), sigma)
    return (reference_term - physical_term) / EIGHT_PI, ScalarField(data.grid, theta)


def rho_and_j(data: SurfaceDataset, ref: ReferenceGeometry, tau: ScalarField):
    """Mass density rho and current j_a of the pair (data, reference)."""
    _check_inputs(data, tau)
    sigma = data.sigma
    h = data.norm_h.values
    h0 = ref.norm_h0.values
    if np.any(h0 <= 0):
        raise HypothesisViolation("|H0| vanishes", hypothesis="spacelike reference mean curvature")
    dtau, s, lap = _tau_geometry(tau, sigma)
    q = lap**2 / s**2
    # difference of square roots without cancellation
    rho = (h0**2 - h**2) / (s * (np.sqrt(h0**2 + q) + np.sqrt(h**2 + q)))
    phase = ScalarField(data.grid, np.arcsinh(rho * lap / (h0 * h)))
    j = rho * dtau - gradient(phase).values - ref.alpha_h0.values + data.alpha_h.values
    return ScalarField(data.grid, rho), VectorField(data.grid, j)


def energy_canonical(rho: ScalarField, j: VectorField, tau: ScalarField, sigma: MetricField) -> float:
    """(1/8pi) * integral of (rho + j(grad tau))."""
    dtau = gradient(tau).values
    flux = np.einsum("an,abn,bn->n", j.values, sigma.inverse, dtau)
    return integrate(rho + ScalarField(rho.grid, flux), sigma) / EIGHT_PI


def current_divergence(j: VectorField, sigma: MetricField) -> ScalarField:
    return ScalarField(sigma.grid, _divergence_values(sigma.grid, j.values, sigma))


def wang_yau_energy(
    data: SurfaceDataset,
    tau: ScalarField,
    seed=None,
    options: WeylOptions | None = None,
    currents: bool = True,
) -> EnergyReport:
    """Wang-Yau energy of ``data`` against the reference fixed by ``tau``.

    With ``currents`` the report also carries rho, j, div j and the
    canonical value (1/8pi) * integral of (rho + j(grad tau)).
    """
    _check_inputs(data, tau)
    ref = cached_reference(data.sigma, tau, seed=seed, options=options)
    value, theta = energy_direct(data, tau, ref)
    diagnostics = {
        "weyl_defect": float(ref.residual),
        "weyl_iterations": len(ref.xhat.history) - 1,
        # checkable hypotheses standing in for admissibility
        "h0_exceeds_h": bool(np.all(ref.norm_h0.values > data.norm_h.values)),
    }
    rho = j = div_j = None
    canonical = None
    if currents:
        rho, j = rho_and_j(data, ref, tau)
        div_j = current_divergence(j, data.sigma)
        canonical = energy_canonical(rho, j, tau, data.sigma)
        diagnostics["consistency_gap"] = float(abs(value - canonical))
        diagnostics["identity_a_error"] = identity_a_error(ref, data.sigma, tau).sup()
        diagnostics["div_j_sup"] = div_j.sup()
    return EnergyReport(
        value=float(value),
        tau=tau,
        theta=theta,
        reference=ref,
        rho=rho,
        j=j,
        div_j=div_j,
        canonical=None if canonical is None else float(canonical),
        diagnostics=diagnostics,
    )
