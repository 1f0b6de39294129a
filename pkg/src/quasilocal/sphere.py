"""Spectral calculus on the 2-sphere.

Scalar fields are sampled on a Gauss-Legendre x uniform-longitude grid and
expanded in orthonormal real spherical harmonics.  Tangent tensors are
stored by their components in the orthonormal round frame
``(e_theta, e_phi)``; covariant derivatives are taken by converting to
Cartesian components (smooth functions on the sphere), differentiating those
spectrally and projecting back.  Grid nodes never sit on the poles, so the
frame is well defined at every node and no coordinate singularity enters
a derivative.

Array conventions: the node axis is always last, component axes come first.
A vector field has shape ``(2, npts)``, a 2-tensor ``(2, 2, npts)``.
"""

from __future__ import annotations

import base64
import dataclasses
import functools
import hashlib
import json
import math
from typing import Iterable

import numpy as np
from scipy.special import sph_harm_y_all

from .errors import GridMismatch, RejectedInput

__all__ = [
    "SphereGrid",
    "sphere_grid",
    "ScalarField",
    "VectorField",
    "SymmetricTensorField",
    "MetricField",
    "integrate",
    "gradient",
    "divergence",
    "laplace_beltrami",
    "covariant_hessian",
    "gauss_curvature",
    "round_metric",
    "harmonic",
    "harmonic_field",
    "random_band_limited",
    "field_to_json",
    "field_from_json",
]


def _trig_factors(m: int, phi: np.ndarray):
    """Longitude factor of the real harmonic of order ``m`` and its derivatives."""
    if m == 0:
        one = np.ones_like(phi)
        return one, np.zeros_like(phi), np.zeros_like(phi)
    k = abs(m)
    if m > 0:
        t = math.sqrt(2.0) * np.cos(k * phi)
        dt = -math.sqrt(2.0) * k * np.sin(k * phi)
    else:
        t = math.sqrt(2.0) * np.sin(k * phi)
        dt = math.sqrt(2.0) * k * np.cos(k * phi)
    return t, dt, -(k * k) * t


@dataclasses.dataclass(frozen=True)
class SphereGrid:
    """Collocation grid and real spherical-harmonic basis up to degree ``lmax``.

    ``nlat`` Gauss-Legendre colatitudes times ``nlon`` uniform longitudes.
    The default is the 3/2-padded grid, so quadratic products of band-limited
    fields are projected without aliasing.
    """

    lmax: int
    nlat: int
    nlon: int

    def __post_init__(self):
        if self.lmax < 1:
            raise RejectedInput("lmax must be at least 1")
        if self.nlat < self.lmax + 1 or self.nlon < 2 * self.lmax + 1:
            raise RejectedInput(
                f"grid {self.nlat}x{self.nlon} cannot resolve degree {self.lmax}"
            )

    # -- geometry of the nodes -------------------------------------------------
    @functools.cached_property
    def _latitudes(self):
        x, w = np.polynomial.legendre.leggauss(self.nlat)
        order = np.argsort(-x)
        return np.arccos(x[order]), w[order]

    @functools.cached_property
    def longitudes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.nlon) / self.nlon

    @property
    def npts(self) -> int:
        return self.nlat * self.nlon

    @property
    def ncoef(self) -> int:
        return (self.lmax + 1) ** 2

    @functools.cached_property
    def theta(self) -> np.ndarray:
        return np.repeat(self._latitudes[0], self.nlon)

    @functools.cached_property
    def phi(self) -> np.ndarray:
        return np.tile(self.longitudes, self.nlat)

    @functools.cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights for the round unit sphere (sum to 4 pi)."""
        return np.repeat(self._latitudes[1], self.nlon) * (2.0 * np.pi / self.nlon)

    @functools.cached_property
    def normal(self) -> np.ndarray:
        """Unit position vectors ``n`` of the nodes, shape (3, npts)."""
        st, ct = np.sin(self.theta), np.cos(self.theta)
        return np.stack([st * np.cos(self.phi), st * np.sin(self.phi), ct])

    @functools.cached_property
    def frame(self) -> np.ndarray:
        """Orthonormal tangent frame, shape (2, 3, npts): ``frame[0]`` is e_theta."""
        st, ct = np.sin(self.theta), np.cos(self.theta)
        cp, sp = np.cos(self.phi), np.sin(self.phi)
        e_theta = np.stack([ct * cp, ct * sp, -st])
        e_phi = np.stack([-sp, cp, np.zeros_like(cp)])
        return np.stack([e_theta, e_phi])

    # -- harmonic indexing -----------------------------------------------------
    @staticmethod
    def index(l: int, m: int) -> int:
        return l * l + l + m

    @functools.cached_property
    def degrees(self) -> np.ndarray:
        return np.array([l for l in range(self.lmax + 1) for _ in range(2 * l + 1)])

    @functools.cached_property
    def orders(self) -> np.ndarray:
        return np.array([m for l in range(self.lmax + 1) for m in range(-l, l + 1)])

    # -- basis matrices, shape (ncoef, npts) -----------------------------------
    @functools.cached_property
    def _basis(self):
        theta = self._latitudes[0]
        p, dp, d2p = sph_harm_y_all(self.lmax, self.lmax, theta, 0.0, diff_n=2)
        dp, d2p = dp[..., 0], d2p[..., 0, 0]
        nq, nlat, nlon = self.ncoef, self.nlat, self.nlon
        st, ct = np.sin(theta), np.cos(theta)
        lat = np.empty((3, nq, nlat))
        lon = np.empty((3, nq, nlon))
        for l in range(self.lmax + 1):
            for m in range(-l, l + 1):
                q = self.index(l, m)
                k = abs(m)
                sign = (-1.0) ** k  # undo the Condon-Shortley phase
                lat[0, q] = sign * p[l, k].real
                lat[1, q] = sign * dp[l, k].real
                lat[2, q] = sign * d2p[l, k].real
                lon[:, q] = _trig_factors(m, self.longitudes)
        P, dP, d2P = lat
        T, dT, d2T = lon

        def outer(a, b):
            return (a[:, :, None] * b[:, None, :]).reshape(nq, nlat * nlon)

        inv_s = (1.0 / st)[None, :]
        cot = (ct / st)[None, :]
        return {
            "Y": outer(P, T),
            "Dt": outer(dP, T),
            "Dp": outer(P * inv_s, dT),
            "Htt": outer(d2P, T),
            "Htp": outer(dP * inv_s, dT) - outer(P * cot * inv_s, dT),
            "Hpp": outer(P * inv_s**2, d2T) + outer(dP * cot, T),
        }

    @property
    def synthesis_matrix(self) -> np.ndarray:
        return self._basis["Y"]

    @property
    def derivative_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Frame derivatives of the basis: (d/dtheta, (1/sin theta) d/dphi)."""
        b = self._basis
        return b["Dt"], b["Dp"]

    @functools.cached_property
    def _analysis(self) -> np.ndarray:
        return np.ascontiguousarray((self._basis["Y"] * self.weights).T)

    # -- transforms ------------------------------------------------------------
    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Nodal values (..., npts) -> harmonic coefficients (..., ncoef)."""
        return np.asarray(values) @ self._analysis

    def synthesize(self, coefs: np.ndarray) -> np.ndarray:
        return np.asarray(coefs) @ self._basis["Y"]

    def project(self, values: np.ndarray) -> np.ndarray:
        """Truncate nodal values to degree ``lmax``."""
        return self.synthesize(self.analyze(values))

    def grad_coefs(self, coefs: np.ndarray) -> np.ndarray:
        """Round-frame gradient components (2, ..., npts) from coefficients."""
        b = self._basis
        return np.stack([coefs @ b["Dt"], coefs @ b["Dp"]])

    def hess_coefs(self, coefs: np.ndarray) -> np.ndarray:
        """Round covariant Hessian in frame components (2, 2, ..., npts)."""
        b = self._basis
        tt, tp, pp = coefs @ b["Htt"], coefs @ b["Htp"], coefs @ b["Hpp"]
        return np.stack([np.stack([tt, tp]), np.stack([tp, pp])])

    def frame_grad(self, values: np.ndarray) -> np.ndarray:
        return self.grad_coefs(self.analyze(values))

    def frame_hess(self, values: np.ndarray) -> np.ndarray:
        return self.hess_coefs(self.analyze(values))

    # -- frame <-> Cartesian ---------------------------------------------------
    def to_cartesian(self, v: np.ndarray, axis: int = 0) -> np.ndarray:
        v = np.moveaxis(v, axis, 0)
        out = np.einsum("ain,a...n->i...n", self.frame, v)
        return np.moveaxis(out, 0, axis)

    def to_frame(self, c: np.ndarray, axis: int = 0) -> np.ndarray:
        c = np.moveaxis(c, axis, 0)
        out = np.einsum("ain,i...n->a...n", self.frame, c)
        return np.moveaxis(out, 0, axis)

    def covariant_derivative(self, tensor: np.ndarray, rank: int) -> np.ndarray:
        """Round Levi-Civita derivative of a frame tensor of the given rank.

        Returns shape (2, *tensor.shape) with the derivative direction first.
        Works because projected constant vectors are parallel at the point of
        projection, so the ambient derivative of Cartesian components, projected
        onto the frame, is the covariant derivative.
        """
        cart = tensor
        for ax in range(rank):
            cart = self.to_cartesian(cart, axis=ax)
        d = self.frame_grad(cart)
        for ax in range(rank):
            d = self.to_frame(d, axis=ax + 1)
        return d

    def round_divergence(self, v: np.ndarray) -> np.ndarray:
        """Divergence of a frame vector field with respect to the unit round metric."""
        d = self.frame_grad(self.to_cartesian(v))
        return np.einsum("ain,ai...n->...n", self.frame, d)

    def harmonic(self, l: int, m: int) -> np.ndarray:
        if not (0 <= l <= self.lmax and -l <= m <= l):
            raise RejectedInput(f"harmonic ({l}, {m}) outside band limit {self.lmax}")
        return self._basis["Y"][self.index(l, m)].copy()

    def node_location(self, k: int) -> tuple[float, float]:
        return float(self.theta[k]), float(self.phi[k])

    def descriptor(self) -> dict:
        return {"kind": "gauss-legendre", "lmax": self.lmax, "nlat": self.nlat, "nlon": self.nlon}


@functools.lru_cache(maxsize=16)
def sphere_grid(lmax: int = 24, nlat: int | None = None, nlon: int | None = None) -> SphereGrid:
    """Shared grid instance (basis matrices are built once per resolution)."""
    if nlat is None:
        nlat = math.ceil(3 * (lmax + 1) / 2)
    if nlon is None:
        nlon = 2 * nlat
    return SphereGrid(lmax, nlat, nlon)


# ----------------------------------------------------------------------------
# field types
# ----------------------------------------------------------------------------

def _check_same_grid(*fields) -> SphereGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatch(f"fields live on different grids: {grid} vs {f.grid}")
    return grid


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise RejectedInput(f"expected array of shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInput("field has non-finite values")
    arr.flags.writeable = False
    return arr


def _digest(field) -> str:
    return hashlib.sha1(field.values.tobytes()).hexdigest()


@dataclasses.dataclass(frozen=True, eq=False)
class ScalarField:
    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, (self.grid.npts,)))

    @functools.cached_property
    def coefficients(self) -> np.ndarray:
        return self.grid.analyze(self.values)

    def _wrap(self, values):
        return ScalarField(self.grid, values)

    def _other(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    content_hash = _digest


@dataclasses.dataclass(frozen=True, eq=False)
class VectorField:
    """One-form on the sphere; ``values[a]`` is its value on the frame vector e_a."""

    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, (2, self.grid.npts)))

    def coordinate_components(self) -> np.ndarray:
        """Components on the coordinate basis (d/dtheta, d/dphi)."""
        return np.stack([self.values[0], np.sin(self.grid.theta) * self.values[1]])

    def cartesian(self) -> np.ndarray:
        return self.grid.to_cartesian(self.values)

    def norm(self, metric: "MetricField") -> ScalarField:
        _check_same_grid(self, metric)
        sq = np.einsum("an,abn,bn->n", self.values, metric.inverse, self.values)
        return ScalarField(self.grid, np.sqrt(np.maximum(sq, 0.0)))

    content_hash = _digest


@dataclasses.dataclass(frozen=True, eq=False)
class SymmetricTensorField:
    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (2, 2, self.grid.npts):
            raise RejectedInput(f"tensor field must have shape (2, 2, {self.grid.npts})")
        v = 0.5 * (v + v.transpose(1, 0, 2))
        object.__setattr__(self, "values", _frozen_array(v, v.shape))

    def coordinate_components(self) -> np.ndarray:
        s = np.sin(self.grid.theta)
        scale = np.stack([np.stack([np.ones_like(s), s]), np.stack([s, s * s])])
        return self.values * scale

    content_hash = _digest


@dataclasses.dataclass(frozen=True, eq=False)
class MetricField(SymmetricTensorField):
    """Riemannian metric on the sphere with lazily derived geometry."""

    def __post_init__(self):
        super().__post_init__()
        v = self.values
        det = v[0, 0] * v[1, 1] - v[0, 1] ** 2
        bad = np.flatnonzero((det <= 0) | (v[0, 0] <= 0))
        if bad.size:
            th, ph = self.grid.node_location(int(bad[0]))
            raise RejectedInput(
                f"metric is not positive definite at theta={th:.6g}, phi={ph:.6g}"
            )

    @functools.cached_property
    def determinant(self) -> np.ndarray:
        v = self.values
        return v[0, 0] * v[1, 1] - v[0, 1] ** 2

    @functools.cached_property
    def inverse(self) -> np.ndarray:
        v, det = self.values, self.determinant
        return np.stack([np.stack([v[1, 1], -v[0, 1]]), np.stack([-v[0, 1], v[0, 0]])]) / det

    @functools.cached_property
    def area_element(self) -> np.ndarray:
        """Ratio of the area form to the unit round area form."""
        return np.sqrt(self.determinant)

    @functools.cached_property
    def area(self) -> float:
        return float(np.sum(self.grid.weights * self.area_element))

    @functools.cached_property
    def connection_difference(self) -> np.ndarray:
        """C[c, a, b] = Gamma(metric) - Gamma(round), contravariant in c."""
        t = self.grid.covariant_derivative(self.values, 2)  # t[k, a, b] = D_k g_ab
        lower = t + np.einsum("badn->abdn", t) - np.einsum("dabn->abdn", t)
        return 0.5 * np.einsum("cdn,abdn->cabn", self.inverse, lower)

    @functools.cached_property
    def gauss_curvature(self) -> np.ndarray:
        grid, ginv = self.grid, self.inverse
        c = self.connection_difference
        logmu = np.log(self.area_element)
        dlog = grid.frame_grad(logmu)
        hlog = grid.frame_hess(logmu)
        dc = grid.covariant_derivative(c, 3)  # [k, c, a, b]
        div_c = np.einsum("kkabn->abn", dc)
        eye = np.eye(2)[:, :, None]
        ricci = (
            eye
            + div_c
            - hlog
            + np.einsum("ebcn,en->bcn", c, dlog)
            - np.einsum("eacn,aben->bcn", c, c)
        )
        return 0.5 * np.einsum("bcn,bcn->n", ginv, ricci)


# ----------------------------------------------------------------------------
# operators
# ----------------------------------------------------------------------------

def integrate(field: ScalarField, metric: MetricField) -> float:
    """Integral of ``field`` against the area form of ``metric``."""
    grid = _check_same_grid(field, metric)
    return float(np.sum(grid.weights * metric.area_element * field.values))


def gradient(f: ScalarField, metric: MetricField | None = None) -> VectorField:
    """Differential df; raise with ``metric.inverse`` to get the gradient vector.

    The metric is accepted for interface symmetry: the covariant components of
    the gradient do not depend on it.
    """
    if metric is not None:
        _check_same_grid(f, metric)
    return VectorField(f.grid, f.grid.grad_coefs(f.coefficients))


def _divergence_values(grid: SphereGrid, form: np.ndarray, metric: MetricField) -> np.ndarray:
    mu = metric.area_element
    vec = np.einsum("abn,bn->an", metric.inverse, form)
    return grid.round_divergence(mu * vec) / mu


def divergence(v: VectorField, metric: MetricField) -> ScalarField:
    """Divergence of the vector field metrically dual to the one-form ``v``."""
    grid = _check_same_grid(v, metric)
    return ScalarField(grid, _divergence_values(grid, v.values, metric))


def laplace_beltrami(f: ScalarField, metric: MetricField) -> ScalarField:
    return divergence(gradient(f, metric), metric)


def covariant_hessian(f: ScalarField, metric: MetricField) -> SymmetricTensorField:
    grid = _check_same_grid(f, metric)
    coefs = f.coefficients
    hess = grid.hess_coefs(coefs) - np.einsum(
        "cabn,cn->abn", metric.connection_difference, grid.grad_coefs(coefs)
    )
    return SymmetricTensorField(grid, hess)


def gauss_curvature(metric: MetricField) -> ScalarField:
    return ScalarField(metric.grid, metric.gauss_curvature)


# ----------------------------------------------------------------------------
# constructors
# ----------------------------------------------------------------------------

def round_metric(grid: SphereGrid, radius: float = 1.0) -> MetricField:
    eye = np.eye(2)[:, :, None] * np.ones(grid.npts)
    return MetricField(grid, radius**2 * eye)


def harmonic(grid: SphereGrid, l: int, m: int) -> ScalarField:
    """Orthonormal real spherical harmonic Y_lm (no Condon-Shortley phase)."""
    return ScalarField(grid, grid.harmonic(l, m))


def harmonic_field(
    grid: SphereGrid, terms: Iterable[tuple[int, int, float]], constant: float = 0.0
) -> ScalarField:
    """``constant + sum(a * Y_lm)`` for (l, m, a) in ``terms``."""
    values = np.full(grid.npts, float(constant))
    for l, m, a in terms:
        values = values + float(a) * grid.harmonic(int(l), int(m))
    return ScalarField(grid, values)


def random_band_limited(
    grid: SphereGrid,
    band: int,
    amplitude: float,
    rng: np.random.Generator,
    lmin: int = 0,
) -> ScalarField:
    """Random field with degrees in [lmin, band], sup-norm equal to ``amplitude``."""
    coefs = np.zeros(grid.ncoef)
    sel = (grid.degrees >= lmin) & (grid.degrees <= band)
    coefs[sel] = rng.standard_normal(int(sel.sum()))
    values = grid.synthesize(coefs)
    return ScalarField(grid, amplitude * values / np.max(np.abs(values)))


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

_KINDS = {
    "scalar": ScalarField,
    "vector": VectorField,
    "tensor": SymmetricTensorField,
    "metric": MetricField,
}


def _kind_of(field) -> str:
    for name, cls in reversed(list(_KINDS.items())):
        if type(field) is cls:
            return name
    raise TypeError(f"cannot serialize {type(field).__name__}")


def field_to_json(field) -> str:
    """JSON with harmonic coefficients of every smooth component and exact nodal data.

    Vector and tensor components are expanded through their Cartesian
    components, which are smooth; the ``values`` entry stores the float64
    node values bit-exactly (little-endian, base64).
    """
    grid = field.grid
    kind = _kind_of(field)
    vals = field.values
    if kind == "scalar":
        comps = {"": vals}
    elif kind == "vector":
        cart = grid.to_cartesian(vals)
        comps = {"xyz"[i]: cart[i] for i in range(3)}
    else:
        cart = grid.to_cartesian(grid.to_cartesian(vals, 0), 1)
        comps = {"xyz"[i] + "xyz"[j]: cart[i, j] for i in range(3) for j in range(i, 3)}
    coefficients = []
    for name, comp in comps.items():
        c = grid.analyze(comp)
        for q in range(grid.ncoef):
            entry = {"l": int(grid.degrees[q]), "m": int(grid.orders[q]), "coefficient": float(c[q])}
            if name:
                entry["component"] = name
            coefficients.append(entry)
    payload = {
        "kind": kind,
        "grid": grid.descriptor(),
        "coefficients": coefficients,
        "values": base64.b64encode(np.ascontiguousarray(vals, dtype="<f8").tobytes()).decode(),
        "shape": list(vals.shape),
    }
    return json.dumps(payload)


def field_from_json(text: str):
    payload = json.loads(text)
    desc = payload["grid"]
    grid = sphere_grid(desc["lmax"], desc["nlat"], desc["nlon"])
    cls = _KINDS[payload["kind"]]
    if "values" in payload:
        raw = np.frombuffer(base64.b64decode(payload["values"]), dtype="<f8")
        return cls(grid, raw.reshape(payload["shape"]).astype(float))
    if payload["kind"] != "scalar":
        raise RejectedInput("non-scalar fields need nodal values to deserialize")
    coefs = np.zeros(grid.ncoef)
    for e in payload["coefficients"]:
        coefs[grid.index(e["l"], e["m"])] = e["coefficient"]
    return ScalarField(grid, grid.synthesize(coefs))
