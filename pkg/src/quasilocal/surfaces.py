"""Ambient spaces, parametric surfaces and extraction of the physical data.

A surface is a map from the parameter sphere into Minkowski space (four
components, signature -+++) or into a Riemannian slice (three Cartesian-like
coordinates).  From it we extract the data that the quasi-local functionals
consume: the induced metric, the norm of the mean curvature vector and the
connection one-form of the normal bundle in mean curvature gauge.

Orientation conventions, fixed once for the whole package:

* the mean curvature vector is ``H = Laplacian(X)`` and points inward for a
  round sphere;
* ``e_J`` is the future unit timelike normal orthogonal to ``H``, so that
  ``J = |H| e_J`` and ``alpha_H(v) = <D_v e_J, H/|H|>``;
* the scalar mean curvature in a slice is taken with respect to the outward
  normal, positive on round spheres.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Sequence

import numpy as np

from .errors import HypothesisViolation, RejectedInput
from .sphere import (
    MetricField,
    ScalarField,
    SphereGrid,
    VectorField,
    field_to_json,
    harmonic_field,
)

ETA = np.diag([-1.0, 1.0, 1.0, 1.0])
OBSERVER = np.array([1.0, 0.0, 0.0, 0.0])


@dataclasses.dataclass(frozen=True)
class AmbientSpace:
    """``kind`` is one of ``minkowski``, ``euclidean``, ``schwarzschild``.

    The Schwarzschild slice is written in areal coordinates,
    ``(1 - 2m/r)^-1 dr^2 + r^2 dOmega^2``, on Cartesian-like coordinates
    ``x`` with ``r = |x|``.
    """

    kind: str = "euclidean"
    mass: float = 0.0

    def __post_init__(self):
        if self.kind not in ("minkowski", "euclidean", "schwarzschild"):
            raise RejectedInput(f"unknown ambient space {self.kind!r}")
        if self.kind == "schwarzschild" and self.mass <= 0:
            raise RejectedInput("Schwarzschild slice needs a positive mass")

    @property
    def dimension(self) -> int:
        return 4 if self.kind == "minkowski" else 3

    def _radial(self, x):
        r = np.sqrt(np.sum(x * x, axis=0))
        if self.kind == "schwarzschild" and np.any(r <= 2 * self.mass):
            raise RejectedInput(
                f"surface reaches r <= 2m = {2 * self.mass:g} (outside the exterior slice)"
            )
        return r

    def metric(self, x: np.ndarray) -> np.ndarray:
        """Spatial metric g_ij at points ``x`` (3, npts) -> (3, 3, npts)."""
        if self.kind == "minkowski":
            raise RejectedInput("Minkowski space is Lorentzian; use induced_data_spacetime")
        eye = np.eye(3)[:, :, None] * np.ones(x.shape[1])
        if self.kind == "euclidean":
            return eye
        r = self._radial(x)
        psi = 2 * self.mass / (r * r * (r - 2 * self.mass))
        return eye + psi * np.einsum("in,jn->ijn", x, x)

    def christoffel(self, x: np.ndarray) -> np.ndarray:
        """Gamma^k_ij at ``x``, shape (3, 3, 3, npts) indexed [k, i, j]."""
        npts = x.shape[1]
        if self.kind == "euclidean":
            return np.zeros((3, 3, 3, npts))
        if self.kind == "minkowski":
            raise RejectedInput("Minkowski space is Lorentzian; use induced_data_spacetime")
        m = self.mass
        r = self._radial(x)
        psi = 2 * m / (r * r * (r - 2 * m))
        dpsi = 2 * m * (-2.0 / (r**3 * (r - 2 * m)) - 1.0 / (r * r * (r - 2 * m) ** 2))
        eye = np.eye(3)[:, :, None]
        # dg[l, i, j] = d_l g_ij
        dg = (dpsi / r) * np.einsum("ln,in,jn->lijn", x, x, x) + psi * (
            np.einsum("il,jn->lijn", np.eye(3), x) + np.einsum("jl,in->lijn", np.eye(3), x)
        )
        ginv = eye - (2 * m / r**3) * np.einsum("in,jn->ijn", x, x)
        lower = np.einsum("ijln->ijln", dg) + np.einsum("jiln->ijln", dg) - np.einsum("lijn->ijln", dg)
        return 0.5 * np.einsum("kln,ijln->kijn", ginv, lower)


@dataclasses.dataclass(frozen=True, eq=False)
class SurfaceEmbedding:
    """Position functions of a surface, shape (dim, npts).

    ``observer`` is the unit future timelike vector T0 of a spacetime surface.
    """

    grid: SphereGrid
    position: np.ndarray
    ambient: AmbientSpace = AmbientSpace("euclidean")
    observer: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        pos = np.array(self.position, dtype=float)
        dim = self.ambient.dimension
        if pos.shape != (dim, self.grid.npts):
            raise RejectedInput(f"position must have shape ({dim}, {self.grid.npts})")
        if not np.all(np.isfinite(pos)):
            raise RejectedInput("embedding has non-finite coordinates")
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        if self.observer is not None:
            t0 = np.array(self.observer, dtype=float)
            if t0.shape != (4,) or abs(t0 @ ETA @ t0 + 1.0) > 1e-12 or t0[0] <= 0:
                raise RejectedInput("observer must be a unit future timelike vector")
            object.__setattr__(self, "observer", t0)

    @property
    def is_spacetime(self) -> bool:
        return self.ambient.kind == "minkowski"

    def position_coefficients(self) -> np.ndarray:
        return self.grid.analyze(self.position)

    def tangents(self) -> np.ndarray:
        """dX(e_a), shape (2, dim, npts)."""
        return self.grid.grad_coefs(self.position_coefficients())

    def induced_metric(self) -> MetricField:
        d = self.tangents()
        if self.is_spacetime:
            s = np.einsum("aAn,AB,bBn->abn", d, ETA, d)
        elif self.ambient.kind == "euclidean":
            s = np.einsum("ain,bin->abn", d, d)
        else:
            g = self.ambient.metric(self.position)
            s = np.einsum("ain,ijn,bjn->abn", d, g, d)
        try:
            return MetricField(self.grid, s)
        except RejectedInput as exc:
            raise HypothesisViolation(
                f"induced metric is not Riemannian (surface not spacelike): {exc}",
                hypothesis="spacelike",
            ) from None

    def time_function(self) -> ScalarField:
        """tau = -<X, T0>; T0 defaults to (1, 0, 0, 0)."""
        if not self.is_spacetime:
            return ScalarField(self.grid, np.zeros(self.grid.npts))
        t0 = OBSERVER if self.observer is None else self.observer
        return ScalarField(self.grid, -(t0 @ ETA @ self.position))

    def spatial_part(self) -> np.ndarray:
        return self.position[1:] if self.is_spacetime else self.position


@dataclasses.dataclass(frozen=True, eq=False)
class SurfaceDataset:
    """Physical data (sigma, |H|, alpha_H) of a surface.

    ``mean_curvature`` is the scalar mean curvature inside a time-symmetric
    slice, present only for slice data (Brown-York needs it).
    """

    sigma: MetricField
    norm_h: ScalarField
    alpha_h: VectorField
    mean_curvature: ScalarField | None = None
    source: str = ""

    def __post_init__(self):
        grid = self.sigma.grid
        for f in (self.norm_h, self.alpha_h, self.mean_curvature):
            if f is not None and f.grid != grid:
                raise RejectedInput("dataset fields live on different grids")
        bad = np.flatnonzero(self.norm_h.values <= 0)
        if bad.size:
            raise HypothesisViolation(
                "|H| must be positive everywhere",
                hypothesis="spacelike mean curvature",
                location=grid.node_location(int(bad[0])),
            )

    @property
    def grid(self) -> SphereGrid:
        return self.sigma.grid

    @property
    def gauss_curvature(self) -> ScalarField:
        return ScalarField(self.grid, self.sigma.gauss_curvature)

    @property
    def time_symmetric(self) -> bool:
        return bool(np.max(np.abs(self.alpha_h.values)) < 1e-10)

    def flip_alpha(self) -> "SurfaceDataset":
        """Same data with alpha_H -> -alpha_H (orientation sensitivity checks)."""
        return dataclasses.replace(self, alpha_h=VectorField(self.grid, -self.alpha_h.values))

    def to_json(self) -> str:
        payload = {
            "source": self.source,
            "sigma": json.loads(field_to_json(self.sigma)),
            "norm_h": json.loads(field_to_json(self.norm_h)),
            "alpha_h": json.loads(field_to_json(self.alpha_h)),
        }
        if self.mean_curvature is not None:
            payload["mean_curvature"] = json.loads(field_to_json(self.mean_curvature))
        return json.dumps(payload)


# ----------------------------------------------------------------------------
# data extraction
# ----------------------------------------------------------------------------

def _laplacian_of_components(grid: SphereGrid, tangents: np.ndarray, sigma: MetricField):
    """Laplace-Beltrami of each embedding component from its differential (2, dim, npts)."""
    mu = sigma.area_element
    vec = np.einsum("abn,bAn->aAn", sigma.inverse, tangents)
    return grid.round_divergence(mu * vec) / mu


def _mink(u, v):
    return np.einsum("An,AB,Bn->n", u, ETA, v)


def normal_frame(emb: SurfaceEmbedding):
    """Mean curvature vector, |H|, e_H and e_J of a spacetime surface."""
    grid = emb.grid
    sigma = emb.induced_metric()
    d = emb.tangents()
    hvec = _laplacian_of_components(grid, d, sigma)
    hsq = _mink(hvec, hvec)
    bad = np.flatnonzero(hsq <= 0)
    if bad.size:
        raise HypothesisViolation(
            "mean curvature vector is not spacelike",
            hypothesis="spacelike mean curvature",
            location=grid.node_location(int(bad[0])),
        )
    norm = np.sqrt(hsq)
    e_h = hvec / norm
    t = np.broadcast_to(OBSERVER[:, None], hvec.shape)
    t_dot = np.einsum("aAn,AB,Bn->an", d, ETA, t)
    t_tan = np.einsum("aAn,abn,bn->An", d, sigma.inverse, t_dot)
    t_n = t - t_tan
    v = t_n - _mink(t_n, e_h) * e_h
    vv = _mink(v, v)
    if np.any(vv >= 0):
        raise HypothesisViolation("normal bundle is not Lorentzian", hypothesis="spacelike")
    e_j = v / np.sqrt(-vv)
    e_j = e_j * np.sign(e_j[0])
    return sigma, hvec, norm, e_h, e_j


def induced_data_spacetime(emb: SurfaceEmbedding) -> SurfaceDataset:
    """(sigma, |H|, alpha_H) of a spacelike surface in Minkowski space."""
    if not emb.is_spacetime:
        raise RejectedInput("induced_data_spacetime needs a Minkowski embedding")
    grid = emb.grid
    sigma, _, norm, e_h, e_j = normal_frame(emb)
    de_j = grid.frame_grad(e_j)  # (2, 4, npts)
    alpha = np.einsum("aAn,AB,Bn->an", de_j, ETA, e_h)
    return SurfaceDataset(
        sigma=sigma,
        norm_h=ScalarField(grid, norm),
        alpha_h=VectorField(grid, alpha),
        source=emb.label or "minkowski surface",
    )


def induced_data_slice(emb: SurfaceEmbedding, space: AmbientSpace | None = None) -> SurfaceDataset:
    """Data of a surface in a time-symmetric slice: |H| = H, alpha_H = 0."""
    space = emb.ambient if space is None else space
    if space.kind == "minkowski":
        raise RejectedInput("slice data needs a Riemannian ambient space")
    if emb.is_spacetime:
        raise RejectedInput("pass the three spatial coordinates of the surface")
    grid = emb.grid
    y = emb.position
    g = space.metric(y)
    gamma = space.christoffel(y)
    d = emb.tangents()
    s = np.einsum("ain,ijn,bjn->abn", d, g, d)
    sigma = MetricField(grid, s)
    tension = _laplacian_of_components(grid, d, sigma) + np.einsum(
        "abn,kijn,ain,bjn->kn", sigma.inverse, gamma, d, d
    )
    normal = np.cross(d[0], d[1], axis=0)  # covector, outward for orientation preserving maps
    ginv = np.linalg.inv(g.transpose(2, 0, 1)).transpose(1, 2, 0)
    normal = normal / np.sqrt(np.einsum("in,ijn,jn->n", normal, ginv, normal))
    h = -np.einsum("kn,kn->n", tension, normal)
    bad = np.flatnonzero(h <= 0)
    if bad.size:
        raise HypothesisViolation(
            "mean curvature must be positive",
            hypothesis="positive mean curvature",
            location=grid.node_location(int(bad[0])),
        )
    hf = ScalarField(grid, h)
    return SurfaceDataset(
        sigma=sigma,
        norm_h=hf,
        alpha_h=VectorField(grid, np.zeros((2, grid.npts))),
        mean_curvature=hf,
        source=emb.label or f"{space.kind} slice surface",
    )


def induced_data(emb: SurfaceEmbedding) -> SurfaceDataset:
    if emb.is_spacetime:
        return induced_data_spacetime(emb)
    return induced_data_slice(emb)


# ----------------------------------------------------------------------------
# surface families
# ----------------------------------------------------------------------------

def _profile(grid, radius, harmonics) -> np.ndarray:
    return harmonic_field(grid, harmonics or (), constant=radius).values


def round_sphere(grid: SphereGrid, radius: float = 1.0, spacetime: bool = False) -> SurfaceEmbedding:
    x = radius * grid.normal
    if spacetime:
        return SurfaceEmbedding(
            grid, np.vstack([np.zeros(grid.npts), x]), AmbientSpace("minkowski"), label="round sphere"
        )
    return SurfaceEmbedding(grid, x, AmbientSpace("euclidean"), label="round sphere")


def ellipsoid(grid: SphereGrid, axes: Sequence[float] = (1.0, 1.0, 1.3), spacetime: bool = False):
    x = np.asarray(axes, dtype=float)[:, None] * grid.normal
    if spacetime:
        return SurfaceEmbedding(
            grid, np.vstack([np.zeros(grid.npts), x]), AmbientSpace("minkowski"), label="ellipsoid"
        )
    return SurfaceEmbedding(grid, x, AmbientSpace("euclidean"), label="ellipsoid")


def star_surface(grid: SphereGrid, radius: float = 1.0, harmonics=(), spacetime: bool = False):
    """Radial graph ``(radius + sum a Y_lm) n`` in a t = 0 slice."""
    rho = _profile(grid, radius, harmonics)
    if np.any(rho <= 0):
        raise RejectedInput("radial profile must stay positive")
    x = rho * grid.normal
    if spacetime:
        return SurfaceEmbedding(
            grid, np.vstack([np.zeros(grid.npts), x]), AmbientSpace("minkowski"), label="star surface"
        )
    return SurfaceEmbedding(grid, x, AmbientSpace("euclidean"), label="star surface")


def schwarzschild_sphere(grid: SphereGrid, radius: float = 4.0, mass: float = 1.0) -> SurfaceEmbedding:
    """Coordinate sphere of areal radius ``radius`` in the Schwarzschild slice."""
    space = AmbientSpace("schwarzschild", mass)
    return SurfaceEmbedding(grid, radius * grid.normal, space, label=f"schwarzschild r={radius:g} m={mass:g}")


def boost_matrix(rapidity: float, axis: int = 3) -> np.ndarray:
    lam = np.eye(4)
    ch, sh = np.cosh(rapidity), np.sinh(rapidity)
    lam[0, 0] = lam[axis, axis] = ch
    lam[0, axis] = lam[axis, 0] = sh
    return lam


def lorentz_transform(emb: SurfaceEmbedding, matrix: np.ndarray, shift=None) -> SurfaceEmbedding:
    """Poincare image ``matrix @ X + shift`` of a Minkowski surface."""
    if not emb.is_spacetime:
        raise RejectedInput("Lorentz transforms act on Minkowski surfaces")
    pos = np.asarray(matrix) @ emb.position
    if shift is not None:
        pos = pos + np.asarray(shift, dtype=float)[:, None]
    return dataclasses.replace(emb, position=pos)


def rigid_motion(emb: SurfaceEmbedding, rotation: np.ndarray, shift=None) -> SurfaceEmbedding:
    if emb.is_spacetime:
        full = np.eye(4)
        full[1:, 1:] = rotation
        return lorentz_transform(emb, full, None if shift is None else np.r_[0.0, shift])
    pos = np.asarray(rotation) @ emb.position
    if shift is not None:
        pos = pos + np.asarray(shift, dtype=float)[:, None]
    return dataclasses.replace(emb, position=pos)


def scaled(emb: SurfaceEmbedding, factor: float) -> SurfaceEmbedding:
    if emb.ambient.kind == "schwarzschild":
        space = AmbientSpace("schwarzschild", emb.ambient.mass * factor)
        return dataclasses.replace(emb, position=factor * emb.position, ambient=space)
    return dataclasses.replace(emb, position=factor * emb.position)


def boosted_sphere(grid: SphereGrid, radius: float = 1.0, rapidity: float = 0.3, axis: int = 3):
    emb = round_sphere(grid, radius, spacetime=True)
    out = lorentz_transform(emb, boost_matrix(rapidity, axis))
    return dataclasses.replace(out, label=f"boosted sphere beta={rapidity:g}")


def lightcone_surface(radius_profile: ScalarField) -> SurfaceEmbedding:
    """Section X(n) = (r(n), r(n) n) of the standard future light cone."""
    grid = radius_profile.grid
    r = radius_profile.values
    if np.any(r <= 0):
        raise RejectedInput("light-cone radius profile must be positive")
    emb = SurfaceEmbedding(
        grid, np.vstack([r, r * grid.normal]), AmbientSpace("minkowski"), label="light-cone section"
    )
    emb.induced_metric()  # rejects non-spacelike sections
    return emb


def graph_surface(grid: SphereGrid, time_harmonics=(), radius: float = 1.0, harmonics=()):
    """Spacelike graph X = (tau(n), rho(n) n) over a star-shaped spatial surface."""
    tau = _profile(grid, 0.0, time_harmonics)
    rho = _profile(grid, radius, harmonics)
    emb = SurfaceEmbedding(
        grid, np.vstack([tau, rho * grid.normal]), AmbientSpace("minkowski"), label="spacelike graph"
    )
    emb.induced_metric()
    return emb


FAMILIES = {
    "round_sphere": round_sphere,
    "ellipsoid": ellipsoid,
    "star": star_surface,
    "schwarzschild_sphere": schwarzschild_sphere,
    "boosted_sphere": boosted_sphere,
    "graph": graph_surface,
}


def build_surface(grid: SphereGrid, entry: dict) -> SurfaceEmbedding:
    """Construct a catalog surface from ``{ambient, family, parameters}``."""
    unknown = set(entry) - {"ambient", "family", "parameters"}
    if unknown:
        raise RejectedInput(f"unknown surface keys: {sorted(unknown)}")
    family = entry.get("family")
    ambient = entry.get("ambient", "euclidean")
    params = dict(entry.get("parameters", {}))
    if family == "lightcone":
        profile = harmonic_field(grid, params.pop("harmonics", ()), constant=params.pop("radius", 1.0))
        if params:
            raise RejectedInput(f"unknown light-cone parameters: {sorted(params)}")
        return lightcone_surface(profile)
    if family not in FAMILIES:
        raise RejectedInput(f"unknown surface family {family!r}")
    if family in ("round_sphere", "ellipsoid", "star"):
        params["spacetime"] = ambient == "minkowski"
    elif family == "schwarzschild_sphere" and ambient != "schwarzschild":
        raise RejectedInput("schwarzschild_sphere lives in the schwarzschild ambient")
    try:
        emb = FAMILIES[family](grid, **params)
    except TypeError as exc:
        raise RejectedInput(f"bad parameters for {family}: {exc}") from None
    if ambient != emb.ambient.kind:
        raise RejectedInput(f"family {family} does not live in {ambient}")
    return emb
