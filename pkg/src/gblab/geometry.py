"""Closed-form model manifolds with boundary.

Each model supplies exact geometry to the simulation and estimation
layers: geodesic stepping with parallel frame transport, signed boundary
distance, Skorokhod reflection with penetration depth, the inward normal
and shape operator in moving-frame components, curvature in orthonormal
frame components, uniform volume/collar/boundary samplers, and the
ground-truth Euler characteristic.

Models are built from one or two isotropic factors (round sphere or cap,
flat ball, interval, circle); the factor metadata drives the fast
supertrace assembly in the stochastic engine.  Points of spherical
factors are stored embedded (which keeps stepping and transport exact);
every model still exposes a single global chart with metric and
Christoffel symbols for validation, with a small exclusion zone around
chart poles.

All models are immutable and all operations are pure, so instances can be
shared freely across worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .exterior import CurvatureTensor

_POLE_EXCLUSION = 1e-6  # chart-singularity zone radius (radians)


@dataclass(frozen=True)
class FactorSpec:
    """Metadata describing one isotropic factor of a model.

    ``cols`` selects the factor's frame-component columns; ``bounded``
    marks the factor carrying the boundary; ``needs_frame`` marks factors
    with nontrivial holonomy (curved spheres and caps).
    """

    name: str
    dim: int
    kappa: float
    cols: slice
    bounded: bool
    needs_frame: bool


def _unit(v, axis=-1):
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.where(norm == 0.0, 1.0, norm)


def _sphere_step(p, u, v_amb, r):
    """Exact great-circle step and parallel transport on a round sphere.

    p: (P, d) embedded points, |p| = r; u: (P, d, k) tangent frame columns
    or None; v_amb: (P, d) tangent step vectors.  Returns the new points
    and transported frame.
    """
    s = np.sqrt(np.einsum("pd,pd->p", v_amb, v_amb))
    vhat = v_amb / np.maximum(s, 1e-300)[:, None]
    phat = p / r
    c = np.cos(s / r)[:, None]
    si = np.sin(s / r)[:, None]
    p2 = c * p + si * r * vhat
    # renormalize against roundoff drift
    p2 *= r / np.sqrt(np.einsum("pd,pd->p", p2, p2))[:, None]
    if u is None:
        return p2, None
    wv = np.einsum("pdk,pd->pk", u, vhat)
    u2 = u + vhat[:, :, None] * ((c - 1.0) * wv)[:, None, :] - phat[:, :, None] * (si * wv)[:, None, :]
    return p2, u2


def _rotation_from_pole(phat, axis_index):
    """Batched rotation taking the +axis unit vector onto phat (never antipodal)."""
    P, d = phat.shape
    a = np.zeros(d)
    a[axis_index] = 1.0
    b = phat
    dot = b[:, axis_index]
    R = np.broadcast_to(np.eye(d), (P, d, d)).copy()
    # R = I + (b a^T - a b^T) + (b a^T - a b^T)^2 / (1 + a . b)
    K = b[:, :, None] * a[None, None, :] - a[None, :, None] * b[:, None, :]
    K2 = K @ K
    denom = (1.0 + dot)[:, None, None]
    R += K + K2 / denom
    return R


def _householder_to_last(nu):
    """Orthogonal Q (n x n) whose last column is the unit vector nu."""
    n = nu.shape[0]
    e = np.zeros(n)
    e[-1] = 1.0
    w = nu - e if nu[-1] < 0.999999 else None
    if w is None:
        Q = np.eye(n)
        Q[:, -1] = nu
        # re-orthonormalize the remaining columns against nu
        for a in range(n - 1):
            col = Q[:, a] - (Q[:, a] @ nu) * nu
            for b in range(a):
                col -= (col @ Q[:, b]) * Q[:, b]
            Q[:, a] = col / np.linalg.norm(col)
        return Q
    H = np.eye(n) - 2.0 * np.outer(w, w) / (w @ w)
    return -H if H[:, -1] @ nu < 0 else H


def diagonal_metric_christoffel(g_diag, dg_diag):
    """Christoffel symbols of a diagonal metric.

    g_diag: (P, n) diagonal entries; dg_diag: (P, n, n) with
    dg_diag[:, i, k] the k-th partial of g_ii.  Returns (P, n, n, n)
    indexed Gamma[p, k, i, j].
    """
    P, n = g_diag.shape
    gamma = np.zeros((P, n, n, n))
    inv = 1.0 / g_diag
    for i in range(n):
        for k in range(n):
            if k != i:
                gamma[:, k, i, i] = -0.5 * inv[:, k] * dg_diag[:, i, k]
            gamma[:, i, i, k] = 0.5 * inv[:, i] * dg_diag[:, i, k]
            gamma[:, i, k, i] = gamma[:, i, i, k]
    return gamma


class ManifoldModel:
    """Shared behaviour for the catalog models; subclasses fill in geometry."""

    name = "abstract"

    # --- identification ------------------------------------------------
    @property
    def params(self) -> dict:
        return dict(self._params)

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    # --- frame plumbing -------------------------------------------------
    @property
    def needs_frames(self) -> bool:
        return any(f.needs_frame for f in self.factors)

    @property
    def bounded_factor(self) -> FactorSpec:
        for f in self.factors:
            if f.bounded:
                return f
        raise ConfigError(f"model {self.name} has no boundary")

    def initial_frames(self, x):
        """Orthonormal frame at each point; None when transport is trivial."""
        return None

    def holonomy(self, u0, u, factor: FactorSpec):
        """Frame development u0^T u restricted to a factor's columns."""
        if u0 is None or not factor.needs_frame:
            return None
        c = factor.cols
        return np.einsum("pda,pdb->pab", u0[:, :, c], u[:, :, c])

    # --- hooks subclasses must provide -----------------------------------
    # dimension, state_dim, euler_characteristic, volume, boundary_area,
    # factors, frame_curvature(), geodesic_step, boundary_distance,
    # reflect, normal_frame, shape_frame, boundary_data, log_frame,
    # distance, valid, samplers, chart surface.

    def curvature(self, x=None) -> CurvatureTensor:
        """Curvature tensor at a point, in orthonormal frame components.

        Every catalog model is a product of isotropic factors, so the
        components are the same at every point of the (block) frame
        bundle; the argument is accepted for interface uniformity.
        """
        return self.frame_curvature()

    def valid(self, x):
        """Chart-domain validity (samplers and chart calls stay inside)."""
        return np.ones(x.shape[0], dtype=bool)

    def simulation_valid(self, x):
        """Validity of the simulation state itself.

        The engine evolves embedded coordinates, which stay well defined
        on the whole model, so this only fails for genuinely degenerate
        states (the resample machinery reports such paths).
        """
        return np.ones(x.shape[0], dtype=bool)

    # --- generic boundary helpers ----------------------------------------
    def frame_components(self, x, u, v_amb):
        """Components of ambient tangent vectors in the moving frame."""
        if u is None:
            return v_amb
        return np.einsum("pdk,pd->pk", u, v_amb)

    def collar_data(self, x, u):
        """Boundary distance and inward normal together (hot path)."""
        return self.boundary_distance(x), self.normal_frame(x, u)

    def mirror_point(self, x):
        """Geodesic reflection of x across the boundary (depth d -> -d)."""
        raise NotImplementedError

    def collar_volume(self, width: float) -> float:
        raise NotImplementedError

    def sample_collar(self, rng, count, width):
        raise NotImplementedError

    def heat_kernel_spec(self) -> dict:
        """Hints for the Neumann kernel builder (overridden per model)."""
        return {"exact": False}


# ---------------------------------------------------------------------------
# flat ball D^n
# ---------------------------------------------------------------------------


class FlatBall(ManifoldModel):
    """Flat disk/ball of radius r in R^n; boundary is the round sphere."""

    name = "ball"

    def __init__(self, dimension: int, radius: float = 1.0):
        if dimension < 1 or dimension > 4:
            raise ConfigError(f"ball dimension must be 1..4, got {dimension}")
        if radius <= 0:
            raise ConfigError(f"ball radius must be positive, got {radius}")
        self.dimension = int(dimension)
        self.state_dim = self.dimension
        self.radius = float(radius)
        self.euler_characteristic = 1
        self.constant_curvature = 0.0
        n = self.dimension
        self.volume = math.pi ** (n / 2) * radius**n / math.gamma(n / 2 + 1)
        self.boundary_area = 2 * math.pi ** (n / 2) * radius ** (n - 1) / math.gamma(n / 2)
        self.factors = (FactorSpec("ball", n, 0.0, slice(0, n), True, False),)
        self._params = {"dimension": dimension, "radius": radius}

    def frame_curvature(self) -> CurvatureTensor:
        return CurvatureTensor.zero(self.dimension)

    def geodesic_step(self, x, u, xi):
        return x + xi, u

    def boundary_distance(self, x):
        return self.radius - np.sqrt(np.einsum("...d,...d->...", x, x))

    def collar_data(self, x, u):
        rho = np.sqrt(np.einsum("pd,pd->p", x, x))
        nu = -x / np.maximum(rho, 1e-300)[:, None]
        return self.radius - rho, nu

    def reflect(self, x, u):
        rho = np.linalg.norm(x, axis=-1)
        depth = rho - self.radius
        x2 = x * ((self.radius - depth) / rho)[:, None]
        return x2, u, depth

    def normal_frame(self, x, u):
        return -_unit_or_zero(x)

    def shape_frame(self, x, u):
        xhat = _unit_or_zero(x)
        eye = np.eye(self.dimension)
        return (eye[None, :, :] - xhat[:, :, None] * xhat[:, None, :]) / self.radius

    def boundary_data(self, x, u):
        return -_unit_or_zero(x), np.full(x.shape[0], 1.0 / self.radius)

    def log_frame(self, x, u, y):
        return y - x

    def distance(self, x, y):
        return np.linalg.norm(y - x, axis=-1)

    def offset_from_boundary(self, z, depth):
        zhat = _unit_or_zero(z)
        return zhat * (self.radius - np.asarray(depth))[:, None]

    def mirror_point(self, x):
        rho = np.sqrt(np.einsum("pd,pd->p", x, x))
        direction = x / np.maximum(rho, 1e-300)[:, None]
        # at the exact center the mirror direction is arbitrary (the image
        # weight is then negligible anyway)
        direction[rho < 1e-12, 0] = 1.0
        return direction * (2.0 * self.radius - rho)[:, None]

    # samplers ------------------------------------------------------------
    def sample_volume(self, rng, count):
        n = self.dimension
        direction = _unit(rng.standard_normal((count, n)))
        rho = self.radius * rng.random(count) ** (1.0 / n)
        return direction * rho[:, None]

    def sample_collar(self, rng, count, width):
        n = self.dimension
        width = min(width, self.radius)
        q = ((self.radius - width) / self.radius) ** n
        direction = _unit(rng.standard_normal((count, n)))
        rho = self.radius * (q + rng.random(count) * (1.0 - q)) ** (1.0 / n)
        return direction * rho[:, None]

    def collar_volume(self, width):
        n = self.dimension
        width = min(width, self.radius)
        inner = (self.radius - width) ** n
        return self.volume * (1.0 - inner / self.radius**n)

    def sample_boundary(self, rng, count):
        return self.radius * _unit(rng.standard_normal((count, self.dimension)))

    def boundary_point(self):
        z = np.zeros(self.state_dim)
        z[0] = self.radius
        return z

    # chart surface --------------------------------------------------------
    def chart(self, x):
        return np.array(x, copy=True)

    def chart_point(self, c):
        return np.array(c, copy=True)

    def metric(self, c):
        P = c.shape[0]
        return np.broadcast_to(np.eye(self.dimension), (P, self.dimension, self.dimension)).copy()

    def christoffel(self, c):
        P, n = c.shape
        return np.zeros((P, n, n, n))

    def heat_kernel_spec(self):
        return {"exact": self.dimension in (1, 2, 3), "kind": "ball"}


def _unit_or_zero(x):
    norm = np.sqrt(np.einsum("...d,...d->...", x, x))[..., None]
    return x / np.maximum(norm, 1e-300)


# ---------------------------------------------------------------------------
# spherical cap (hemisphere when aperture = pi/2)
# ---------------------------------------------------------------------------


class SphereCap(ManifoldModel):
    """Geodesic cap of the round n-sphere of radius r with aperture alpha.

    Points are stored embedded in R^(n+1) with the cap centered on the
    positive last axis; colatitude runs from 0 (apex) to alpha (boundary).
    The boundary is umbilic with shape coefficient cot(alpha)/r for the
    inward normal, so the aperture pi/2 gives the totally geodesic
    equator of the hemisphere.
    """

    name = "cap"

    def __init__(self, dimension: int, radius: float = 1.0, aperture: float = math.pi / 2):
        if dimension not in (2, 3):
            raise ConfigError(f"cap dimension must be 2 or 3, got {dimension}")
        if radius <= 0:
            raise ConfigError(f"cap radius must be positive, got {radius}")
        if not 0.0 < aperture < math.pi:
            raise ConfigError(f"cap aperture must lie in (0, pi), got {aperture}")
        self.dimension = int(dimension)
        self.state_dim = self.dimension + 1
        self.radius = float(radius)
        self.aperture = float(aperture)
        self.euler_characteristic = 1
        self.constant_curvature = 1.0 / radius**2
        self._axis = self.dimension  # index of the symmetry axis coordinate
        n, r, a = self.dimension, self.radius, self.aperture
        if n == 2:
            self.volume = 2 * math.pi * r**2 * (1 - math.cos(a))
            self.boundary_area = 2 * math.pi * r * math.sin(a)
        else:
            self.volume = 2 * math.pi * r**3 * (a - math.sin(a) * math.cos(a))
            self.boundary_area = 4 * math.pi * (r * math.sin(a)) ** 2
        self.shape_coefficient = math.cos(a) / math.sin(a) / r
        if abs(a - math.pi / 2) < 1e-15:
            self.shape_coefficient = 0.0
        self.factors = (FactorSpec("cap", n, self.constant_curvature, slice(0, n), True, True),)
        self._params = {"dimension": dimension, "radius": radius, "aperture": aperture}

    @property
    def is_hemisphere(self) -> bool:
        return abs(self.aperture - math.pi / 2) < 1e-12

    def frame_curvature(self) -> CurvatureTensor:
        return CurvatureTensor.constant_curvature(self.dimension, self.constant_curvature)

    def colatitude(self, x):
        return np.arccos(np.clip(x[..., self._axis] / self.radius, -1.0, 1.0))

    def _meridian_at(self, x, theta):
        """Unit tangent toward increasing colatitude, reusing the colatitude."""
        axis_part = np.zeros_like(x)
        axis_part[..., self._axis] = 1.0
        horiz = x.copy()
        horiz[..., self._axis] = 0.0
        ehat = _unit_or_zero(horiz)
        return np.cos(theta)[..., None] * ehat - np.sin(theta)[..., None] * axis_part

    def _meridian(self, x):
        return self._meridian_at(x, self.colatitude(x))

    def collar_data(self, x, u):
        theta = self.colatitude(x)
        nu = self.frame_components(x, u, -self._meridian_at(x, theta))
        return self.radius * (self.aperture - theta), nu

    def initial_frames(self, x):
        phat = x / self.radius
        R = _rotation_from_pole(phat, self._axis)
        # tangent basis at the apex: the first n ambient directions
        return R[:, :, : self.dimension]

    def geodesic_step(self, x, u, xi):
        v_amb = np.einsum("pdk,pk->pd", u, xi)
        return _sphere_step(x, u, v_amb, self.radius)

    def boundary_distance(self, x):
        return self.radius * (self.aperture - self.colatitude(x))

    def reflect(self, x, u):
        theta = self.colatitude(x)
        over = theta - self.aperture
        depth = self.radius * over
        v_amb = -2.0 * depth[:, None] * self._meridian(x)
        x2, u2 = _sphere_step(x, u, v_amb, self.radius)
        return x2, u2, depth

    def normal_frame(self, x, u):
        return self.frame_components(x, u, -self._meridian(x))

    def shape_frame(self, x, u):
        nu_amb = -self._meridian(x)
        phat = x / self.radius
        eye = np.eye(self.state_dim)
        proj = (
            eye[None, :, :]
            - phat[:, :, None] * phat[:, None, :]
            - nu_amb[:, :, None] * nu_amb[:, None, :]
        )
        A_amb = self.shape_coefficient * proj
        return np.einsum("pda,pde,pek->pak", u, A_amb, u)

    def boundary_data(self, x, u):
        nu = self.normal_frame(x, u)
        nu = _unit(nu)
        return nu, np.full(x.shape[0], self.shape_coefficient)

    def log_frame(self, x, u, y):
        r = self.radius
        cosg = np.clip(np.einsum("pd,pd->p", x, y) / r**2, -1.0, 1.0)
        gamma = np.arccos(cosg)
        perp = y - cosg[:, None] * x
        dirhat = _unit_or_zero(perp)
        v_amb = (r * gamma)[:, None] * dirhat
        return self.frame_components(x, u, v_amb)

    def distance(self, x, y):
        cosg = np.clip(np.einsum("...d,...d->...", x, y) / self.radius**2, -1.0, 1.0)
        return self.radius * np.arccos(cosg)

    def offset_from_boundary(self, z, depth):
        theta = self.colatitude(z)
        v_amb = -np.asarray(depth)[:, None] * self._meridian(z)
        z2, _ = _sphere_step(z, None, v_amb, self.radius)
        return z2

    def mirror_point(self, x):
        # colatitude theta -> 2 alpha - theta along the meridian
        d = self.boundary_distance(x)
        v_amb = 2.0 * d[:, None] * self._meridian(x)
        x2, _ = _sphere_step(x, None, v_amb, self.radius)
        return x2

    def valid(self, x):
        # colatitude > exclusion without the arccos
        return x[:, self._axis] < self.radius * math.cos(_POLE_EXCLUSION)

    # samplers ------------------------------------------------------------
    def _sample_theta(self, rng, count, theta_min, theta_max):
        if self.dimension == 2:
            c = rng.uniform(math.cos(theta_max), math.cos(theta_min), size=count)
            return np.arccos(c)
        f = lambda th: th - np.sin(th) * np.cos(th)
        lo, hi = f(theta_min), f(theta_max)
        target = lo + rng.random(count) * (hi - lo)
        theta = np.full(count, 0.5 * (theta_min + theta_max))
        for _ in range(40):
            val = f(theta) - target
            deriv = np.maximum(2.0 * np.sin(theta) ** 2, 1e-12)
            theta = np.clip(theta - val / deriv, theta_min, theta_max)
        return theta

    def _embed(self, theta, rng, count):
        r = self.radius
        if self.dimension == 2:
            phi = rng.uniform(0.0, 2 * math.pi, size=count)
            return r * np.stack(
                [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
            )
        omega = _unit(rng.standard_normal((count, 3)))
        return r * np.concatenate(
            [np.sin(theta)[:, None] * omega, np.cos(theta)[:, None]], axis=-1
        )

    def sample_volume(self, rng, count):
        theta = self._sample_theta(rng, count, _POLE_EXCLUSION, self.aperture)
        return self._embed(theta, rng, count)

    def sample_collar(self, rng, count, width):
        theta_w = max(self.aperture - width / self.radius, _POLE_EXCLUSION)
        theta = self._sample_theta(rng, count, theta_w, self.aperture)
        return self._embed(theta, rng, count)

    def collar_volume(self, width):
        theta_w = max(self.aperture - width / self.radius, 0.0)
        r, a = self.radius, self.aperture
        if self.dimension == 2:
            return 2 * math.pi * r**2 * (math.cos(theta_w) - math.cos(a))
        f = lambda th: th - math.sin(th) * math.cos(th)
        return 2 * math.pi * r**3 * (f(a) - f(theta_w))

    def sample_boundary(self, rng, count):
        theta = np.full(count, self.aperture)
        return self._embed(theta, rng, count)

    def boundary_point(self):
        z = np.zeros(self.state_dim)
        z[0] = self.radius * math.sin(self.aperture)
        z[self._axis] = self.radius * math.cos(self.aperture)
        return z

    def interior_point(self):
        """The apex: the point farthest from the boundary."""
        z = np.zeros(self.state_dim)
        z[self._axis] = self.radius
        return z

    # chart surface --------------------------------------------------------
    def chart(self, x):
        theta = self.colatitude(x)
        if self.dimension == 2:
            phi = np.arctan2(x[:, 1], x[:, 0])
            return np.stack([theta, phi], axis=-1)
        omega = _unit(x[:, :3])
        phi1 = np.arccos(np.clip(omega[:, 2], -1.0, 1.0))
        phi2 = np.arctan2(omega[:, 1], omega[:, 0])
        return np.stack([theta, phi1, phi2], axis=-1)

    def chart_point(self, c):
        r = self.radius
        theta = c[:, 0]
        if self.dimension == 2:
            phi = c[:, 1]
            return r * np.stack(
                [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
            )
        phi1, phi2 = c[:, 1], c[:, 2]
        omega = np.stack(
            [np.sin(phi1) * np.cos(phi2), np.sin(phi1) * np.sin(phi2), np.cos(phi1)], axis=-1
        )
        return r * np.concatenate([np.sin(theta)[:, None] * omega, np.cos(theta)[:, None]], axis=-1)

    def metric(self, c):
        P = c.shape[0]
        r2 = self.radius**2
        g = np.zeros((P, self.dimension, self.dimension))
        theta = c[:, 0]
        g[:, 0, 0] = r2
        g[:, 1, 1] = r2 * np.sin(theta) ** 2
        if self.dimension == 3:
            g[:, 2, 2] = r2 * np.sin(theta) ** 2 * np.sin(c[:, 1]) ** 2
        return g

    def christoffel(self, c):
        P = c.shape[0]
        n = self.dimension
        r2 = self.radius**2
        theta = c[:, 0]
        g = np.zeros((P, n))
        dg = np.zeros((P, n, n))
        g[:, 0] = r2
        g[:, 1] = r2 * np.sin(theta) ** 2
        dg[:, 1, 0] = r2 * np.sin(2 * theta)
        if n == 3:
            phi1 = c[:, 1]
            g[:, 2] = r2 * np.sin(theta) ** 2 * np.sin(phi1) ** 2
            dg[:, 2, 0] = r2 * np.sin(2 * theta) * np.sin(phi1) ** 2
            dg[:, 2, 1] = r2 * np.sin(theta) ** 2 * np.sin(2 * phi1)
        return diagonal_metric_christoffel(g, dg)

    def heat_kernel_spec(self):
        return {"exact": self.is_hemisphere, "kind": "cap"}


# ---------------------------------------------------------------------------
# flat cylinder [0, L] x S^1
# ---------------------------------------------------------------------------


class FlatCylinder(ManifoldModel):
    """Flat cylinder [0, L] x S^1 with totally geodesic boundary circles.

    State is (s, y) with s the axial coordinate and y arclength around the
    circle (wrapped modulo the circumference).
    """

    name = "cylinder"

    def __init__(self, length: float = 1.0, circumference: float = 2 * math.pi):
        if length <= 0 or circumference <= 0:
            raise ConfigError("cylinder length and circumference must be positive")
        self.dimension = 2
        self.state_dim = 2
        self.length = float(length)
        self.circumference = float(circumference)
        self.euler_characteristic = 0
        self.constant_curvature = 0.0
        self.volume = self.length * self.circumference
        self.boundary_area = 2 * self.circumference
        self.factors = (
            FactorSpec("interval", 1, 0.0, slice(0, 1), True, False),
            FactorSpec("circle", 1, 0.0, slice(1, 2), False, False),
        )
        self._params = {"length": length, "circumference": circumference}

    def frame_curvature(self) -> CurvatureTensor:
        return CurvatureTensor.zero(2)

    def _wrap(self, y):
        return np.mod(y, self.circumference)

    def geodesic_step(self, x, u, xi):
        out = x + xi
        out[:, 1] = self._wrap(out[:, 1])
        return out, u

    def boundary_distance(self, x):
        return np.minimum(x[:, 0], self.length - x[:, 0])

    def reflect(self, x, u):
        s = x[:, 0].copy()
        low = s <= 0.5 * self.length
        depth = np.where(low, -s, s - self.length)
        s2 = np.where(low, -s, 2 * self.length - s)
        out = x.copy()
        out[:, 0] = s2
        return out, u, depth

    def normal_frame(self, x, u):
        nu = np.zeros_like(x)
        nu[:, 0] = np.where(x[:, 0] < 0.5 * self.length, 1.0, -1.0)
        return nu

    def collar_data(self, x, u):
        return self.boundary_distance(x), self.normal_frame(x, u)

    def shape_frame(self, x, u):
        return np.zeros((x.shape[0], 2, 2))

    def boundary_data(self, x, u):
        nu = np.where(x[:, 0] < 0.5 * self.length, 1.0, -1.0)
        return nu[:, None], np.zeros(x.shape[0])

    def _dy(self, y1, y2):
        d = y2 - y1
        C = self.circumference
        return (d + 0.5 * C) % C - 0.5 * C

    def log_frame(self, x, u, y):
        return np.stack([y[:, 0] - x[:, 0], self._dy(x[:, 1], y[:, 1])], axis=-1)

    def distance(self, x, y):
        return np.hypot(y[:, 0] - x[:, 0], self._dy(x[:, 1], y[:, 1]))

    def offset_from_boundary(self, z, depth):
        out = np.array(z, copy=True)
        inward = np.where(z[:, 0] < 0.5 * self.length, 1.0, -1.0)
        out[:, 0] = z[:, 0] + inward * np.asarray(depth)
        return out

    def mirror_point(self, x):
        out = np.array(x, copy=True)
        s = x[:, 0]
        out[:, 0] = np.where(s < 0.5 * self.length, -s, 2.0 * self.length - s)
        return out

    # samplers ------------------------------------------------------------
    def sample_volume(self, rng, count):
        s = rng.uniform(0.0, self.length, size=count)
        y = rng.uniform(0.0, self.circumference, size=count)
        return np.stack([s, y], axis=-1)

    def sample_collar(self, rng, count, width):
        width = min(width, 0.5 * self.length)
        s = rng.uniform(0.0, width, size=count)
        top = rng.random(count) < 0.5
        s = np.where(top, self.length - s, s)
        y = rng.uniform(0.0, self.circumference, size=count)
        return np.stack([s, y], axis=-1)

    def collar_volume(self, width):
        width = min(width, 0.5 * self.length)
        return 2.0 * width * self.circumference

    def sample_boundary(self, rng, count):
        s = np.where(rng.random(count) < 0.5, 0.0, self.length)
        y = rng.uniform(0.0, self.circumference, size=count)
        return np.stack([s, y], axis=-1)

    def boundary_point(self):
        return np.array([0.0, 0.0])

    # chart surface --------------------------------------------------------
    def chart(self, x):
        return np.array(x, copy=True)

    def chart_point(self, c):
        out = np.array(c, copy=True)
        out[:, 1] = self._wrap(out[:, 1])
        return out

    def metric(self, c):
        P = c.shape[0]
        return np.broadcast_to(np.eye(2), (P, 2, 2)).copy()

    def christoffel(self, c):
        P = c.shape[0]
        return np.zeros((P, 2, 2, 2))

    def heat_kernel_spec(self):
        return {"exact": True, "kind": "cylinder"}


# ---------------------------------------------------------------------------
# product S^l x D^m
# ---------------------------------------------------------------------------

_SPHERE_VOLUME = {1: lambda r: 2 * math.pi * r, 2: lambda r: 4 * math.pi * r**2, 3: lambda r: 2 * math.pi**2 * r**3}


class SphereBall(ManifoldModel):
    """Product of a round sphere S^l and a flat ball D^m.

    State is the concatenation of the embedded sphere point (l + 1
    coordinates) and the ball point (m coordinates).  Frames are block
    frames: the first l columns span the sphere tangent space and the
    remaining m columns are the standard ball directions, so parallel
    transport never mixes the factors.
    """

    name = "sphere-ball"

    def __init__(self, sphere_dim: int, ball_dim: int, sphere_radius: float = 1.0, ball_radius: float = 1.0):
        if sphere_dim not in (1, 2, 3):
            raise ConfigError(f"sphere factor dimension must be 1..3, got {sphere_dim}")
        if ball_dim < 1 or sphere_dim + ball_dim > 4:
            raise ConfigError(
                f"need ball_dim >= 1 and sphere_dim + ball_dim <= 4, got {sphere_dim}+{ball_dim}"
            )
        if sphere_radius <= 0 or ball_radius <= 0:
            raise ConfigError("factor radii must be positive")
        self.sphere_dim = int(sphere_dim)
        self.ball_dim = int(ball_dim)
        self.sphere_radius = float(sphere_radius)
        self.ball_radius = float(ball_radius)
        self.dimension = self.sphere_dim + self.ball_dim
        self.state_dim = self.sphere_dim + 1 + self.ball_dim
        self.euler_characteristic = 2 if sphere_dim % 2 == 0 else 0
        kappa_s = 0.0 if sphere_dim == 1 else 1.0 / sphere_radius**2
        self.kappa_sphere = kappa_s
        self.constant_curvature = 0.0 if kappa_s == 0.0 else None
        l, m = self.sphere_dim, self.ball_dim
        ball = FlatBall(m, ball_radius)
        self._ball = ball
        self.volume = _SPHERE_VOLUME[l](sphere_radius) * ball.volume
        self.boundary_area = _SPHERE_VOLUME[l](sphere_radius) * ball.boundary_area
        self.factors = (
            FactorSpec("sphere", l, kappa_s, slice(0, l), False, l >= 2),
            FactorSpec("ball", m, 0.0, slice(l, l + m), True, False),
        )
        self._params = {
            "sphere_dim": sphere_dim,
            "ball_dim": ball_dim,
            "sphere_radius": sphere_radius,
            "ball_radius": ball_radius,
        }

    def _split(self, x):
        return x[..., : self.sphere_dim + 1], x[..., self.sphere_dim + 1 :]

    def frame_curvature(self) -> CurvatureTensor:
        n, l = self.dimension, self.sphere_dim
        comp = np.zeros((n, n, n, n))
        if self.kappa_sphere != 0.0:
            block = CurvatureTensor.constant_curvature(l, self.kappa_sphere).components
            comp[:l, :l, :l, :l] = block
        return CurvatureTensor(n, comp)

    def _circle_tangent(self, ps):
        """Oriented unit tangent of the S^1 factor (only when l == 1)."""
        t = np.stack([-ps[:, 1], ps[:, 0]], axis=-1)
        return t / self.sphere_radius

    def initial_frames(self, x):
        if not self.needs_frames:
            return None
        ps, _ = self._split(x)
        P = x.shape[0]
        u = np.zeros((P, self.state_dim, self.dimension))
        R = _rotation_from_pole(ps / self.sphere_radius, self.sphere_dim)
        u[:, : self.sphere_dim + 1, : self.sphere_dim] = R[:, :, : self.sphere_dim]
        for j in range(self.ball_dim):
            u[:, self.sphere_dim + 1 + j, self.sphere_dim + j] = 1.0
        return u

    def geodesic_step(self, x, u, xi):
        l = self.sphere_dim
        ps, pb = self._split(x)
        xi_s, xi_b = xi[:, :l], xi[:, l:]
        if u is None:
            if l == 1:
                v_amb = xi_s[:, 0][:, None] * self._circle_tangent(ps)
                ps2, _ = _sphere_step(ps, None, v_amb, self.sphere_radius)
            else:  # pragma: no cover - l >= 2 always carries frames
                raise RuntimeError("curved sphere factor requires frames")
            u2 = None
        else:
            us = u[:, : l + 1, :l]
            v_amb = np.einsum("pdk,pk->pd", us, xi_s)
            ps2, us2 = _sphere_step(ps, us, v_amb, self.sphere_radius)
            u2 = u.copy()
            u2[:, : l + 1, :l] = us2
        pb2 = pb + xi_b
        return np.concatenate([ps2, pb2], axis=-1), u2

    def boundary_distance(self, x):
        _, pb = self._split(x)
        return self.ball_radius - np.linalg.norm(pb, axis=-1)

    def reflect(self, x, u):
        ps, pb = self._split(x)
        rho = np.linalg.norm(pb, axis=-1)
        depth = rho - self.ball_radius
        pb2 = pb * ((self.ball_radius - depth) / rho)[:, None]
        return np.concatenate([ps, pb2], axis=-1), u, depth

    def normal_frame(self, x, u):
        _, pb = self._split(x)
        nu = np.zeros((x.shape[0], self.dimension))
        nu[:, self.sphere_dim :] = -_unit_or_zero(pb)
        return nu

    def collar_data(self, x, u):
        _, pb = self._split(x)
        rho = np.sqrt(np.einsum("pd,pd->p", pb, pb))
        nu = np.zeros((x.shape[0], self.dimension))
        nu[:, self.sphere_dim :] = -pb / np.maximum(rho, 1e-300)[:, None]
        return self.ball_radius - rho, nu

    def shape_frame(self, x, u):
        _, pb = self._split(x)
        xhat = _unit_or_zero(pb)
        m = self.ball_dim
        block = (np.eye(m)[None, :, :] - xhat[:, :, None] * xhat[:, None, :]) / self.ball_radius
        A = np.zeros((x.shape[0], self.dimension, self.dimension))
        A[:, self.sphere_dim :, self.sphere_dim :] = block
        return A

    def boundary_data(self, x, u):
        _, pb = self._split(x)
        return -_unit_or_zero(pb), np.full(x.shape[0], 1.0 / self.ball_radius)

    def log_frame(self, x, u, y):
        l = self.sphere_dim
        xs, xb = self._split(x)
        ys, yb = self._split(y)
        out = np.zeros((x.shape[0], self.dimension))
        out[:, l:] = yb - xb
        r = self.sphere_radius
        if l == 1:
            dphi = np.arctan2(
                xs[:, 0] * ys[:, 1] - xs[:, 1] * ys[:, 0], np.einsum("pd,pd->p", xs, ys)
            )
            out[:, 0] = r * dphi
        else:
            cosg = np.clip(np.einsum("pd,pd->p", xs, ys) / r**2, -1.0, 1.0)
            gamma = np.arccos(cosg)
            perp = ys - cosg[:, None] * xs
            v_amb = (r * gamma)[:, None] * _unit_or_zero(perp)
            us = u[:, : l + 1, :l]
            out[:, :l] = np.einsum("pdk,pd->pk", us, v_amb)
        return out

    def distance(self, x, y):
        xs, xb = self._split(x)
        ys, yb = self._split(y)
        r = self.sphere_radius
        cosg = np.clip(np.einsum("pd,pd->p", xs, ys) / r**2, -1.0, 1.0)
        ds = r * np.arccos(cosg)
        db = np.linalg.norm(yb - xb, axis=-1)
        return np.hypot(ds, db)

    def offset_from_boundary(self, z, depth):
        zs, zb = self._split(z)
        zhat = _unit_or_zero(zb)
        zb2 = zhat * (self.ball_radius - np.asarray(depth))[:, None]
        return np.concatenate([zs, zb2], axis=-1)

    def mirror_point(self, x):
        xs, xb = self._split(x)
        xb2 = self._ball.mirror_point(xb)
        return np.concatenate([xs, xb2], axis=-1)

    def valid(self, x):
        if self.sphere_dim == 1:
            return np.ones(x.shape[0], dtype=bool)
        ps, _ = self._split(x)
        colat = np.arccos(np.clip(ps[:, -1] / self.sphere_radius, -1.0, 1.0))
        return (colat > _POLE_EXCLUSION) & (colat < math.pi - _POLE_EXCLUSION)

    # samplers ------------------------------------------------------------
    def _sample_sphere(self, rng, count):
        return self.sphere_radius * _unit(rng.standard_normal((count, self.sphere_dim + 1)))

    def sample_volume(self, rng, count):
        return np.concatenate(
            [self._sample_sphere(rng, count), self._ball.sample_volume(rng, count)], axis=-1
        )

    def sample_collar(self, rng, count, width):
        return np.concatenate(
            [self._sample_sphere(rng, count), self._ball.sample_collar(rng, count, width)], axis=-1
        )

    def collar_volume(self, width):
        return _SPHERE_VOLUME[self.sphere_dim](self.sphere_radius) * self._ball.collar_volume(width)

    def sample_boundary(self, rng, count):
        return np.concatenate(
            [self._sample_sphere(rng, count), self._ball.sample_boundary(rng, count)], axis=-1
        )

    def boundary_point(self):
        z = np.zeros(self.state_dim)
        z[0] = self.sphere_radius
        z[self.sphere_dim + 1] = self.ball_radius
        return z

    # chart surface --------------------------------------------------------
    def chart(self, x):
        ps, pb = self._split(x)
        l, r = self.sphere_dim, self.sphere_radius
        if l == 1:
            angle = np.arctan2(ps[:, 1], ps[:, 0])[:, None]
            return np.concatenate([angle, pb], axis=-1)
        theta = np.arccos(np.clip(ps[:, l] / r, -1.0, 1.0))[:, None]
        phi = np.arctan2(ps[:, 1], ps[:, 0])[:, None]
        if l == 2:
            return np.concatenate([theta, phi, pb], axis=-1)
        omega = _unit(ps[:, :3])
        phi1 = np.arccos(np.clip(omega[:, 2], -1.0, 1.0))[:, None]
        phi2 = np.arctan2(omega[:, 1], omega[:, 0])[:, None]
        return np.concatenate([theta, phi1, phi2, pb], axis=-1)

    def chart_point(self, c):
        l, r = self.sphere_dim, self.sphere_radius
        if l == 1:
            ps = r * np.stack([np.cos(c[:, 0]), np.sin(c[:, 0])], axis=-1)
            return np.concatenate([ps, c[:, 1:]], axis=-1)
        if l == 2:
            theta, phi = c[:, 0], c[:, 1]
            ps = r * np.stack(
                [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
            )
            return np.concatenate([ps, c[:, 2:]], axis=-1)
        theta, phi1, phi2 = c[:, 0], c[:, 1], c[:, 2]
        omega = np.stack(
            [np.sin(phi1) * np.cos(phi2), np.sin(phi1) * np.sin(phi2), np.cos(phi1)], axis=-1
        )
        ps = r * np.concatenate([np.sin(theta)[:, None] * omega, np.cos(theta)[:, None]], axis=-1)
        return np.concatenate([ps, c[:, 3:]], axis=-1)

    def metric(self, c):
        P = c.shape[0]
        n, l, r = self.dimension, self.sphere_dim, self.sphere_radius
        g = np.zeros((P, n, n))
        if l == 1:
            g[:, 0, 0] = r**2
        elif l == 2:
            g[:, 0, 0] = r**2
            g[:, 1, 1] = r**2 * np.sin(c[:, 0]) ** 2
        else:
            g[:, 0, 0] = r**2
            g[:, 1, 1] = r**2 * np.sin(c[:, 0]) ** 2
            g[:, 2, 2] = r**2 * np.sin(c[:, 0]) ** 2 * np.sin(c[:, 1]) ** 2
        for j in range(self.ball_dim):
            g[:, l + j, l + j] = 1.0
        return g

    def christoffel(self, c):
        P = c.shape[0]
        n, l, r = self.dimension, self.sphere_dim, self.sphere_radius
        g = np.ones((P, n))
        dg = np.zeros((P, n, n))
        if l >= 1:
            g[:, 0] = r**2
        if l >= 2:
            g[:, 1] = r**2 * np.sin(c[:, 0]) ** 2
            dg[:, 1, 0] = r**2 * np.sin(2 * c[:, 0])
        if l >= 3:
            g[:, 2] = r**2 * np.sin(c[:, 0]) ** 2 * np.sin(c[:, 1]) ** 2
            dg[:, 2, 0] = r**2 * np.sin(2 * c[:, 0]) * np.sin(c[:, 1]) ** 2
            dg[:, 2, 1] = r**2 * np.sin(c[:, 0]) ** 2 * np.sin(2 * c[:, 1])
        return diagonal_metric_christoffel(g, dg)

    def heat_kernel_spec(self):
        return {"exact": self.ball_dim in (1, 2, 3), "kind": "sphere-ball"}


# ---------------------------------------------------------------------------
# catalog and boundary geometry
# ---------------------------------------------------------------------------


def model_catalog(name: str, **params) -> ManifoldModel:
    """Build a catalog model by name.

    Supported names: "ball" (dimension, radius), "hemisphere" (dimension,
    radius), "cap" (dimension, radius, aperture), "sphere-ball"
    (sphere_dim, ball_dim, sphere_radius, ball_radius), "cylinder"
    (length, circumference).
    """
    try:
        if name == "ball":
            return FlatBall(params.pop("dimension", 2), params.pop("radius", 1.0), **params)
        if name == "hemisphere":
            return SphereCap(
                params.pop("dimension", 2), params.pop("radius", 1.0), math.pi / 2, **params
            )
        if name == "cap":
            return SphereCap(
                params.pop("dimension", 2),
                params.pop("radius", 1.0),
                params.pop("aperture", math.pi / 3),
                **params,
            )
        if name == "sphere-ball":
            return SphereBall(
                params.pop("sphere_dim", 1),
                params.pop("ball_dim", 2),
                params.pop("sphere_radius", 1.0),
                params.pop("ball_radius", 1.0),
                **params,
            )
        if name == "cylinder":
            return FlatCylinder(
                params.pop("length", 1.0), params.pop("circumference", 2 * math.pi), **params
            )
    except TypeError as exc:
        raise ConfigError(f"invalid parameters for model {name!r}: {exc}") from exc
    raise ConfigError(f"unknown model name {name!r}")


@dataclass(frozen=True)
class BoundaryGeometry:
    """Boundary data at one point, in an adapted orthonormal frame.

    The adapted frame lists n-1 tangential directions first and the
    inward normal last; the induced metric is then the identity.
    """

    point: np.ndarray
    tangent_frame: np.ndarray          # (n, n-1) frame components of the tangential basis
    normal: np.ndarray                 # (n,) frame components of the inward normal
    induced_metric: np.ndarray         # (n-1, n-1)
    shape_tangential: np.ndarray       # (n-1, n-1)
    ambient_restriction: CurvatureTensor
    gauss_form: CurvatureTensor
    induced_curvature: CurvatureTensor


def _analytic_boundary_curvature(model, Q):
    """Closed-form curvature of the boundary in the adapted tangent basis."""
    n = model.dimension
    tan = Q[:, : n - 1]
    if isinstance(model, FlatBall):
        kappa = 1.0 / model.radius**2
        proj = tan.T @ tan
        return kappa, [(kappa, proj)]
    if isinstance(model, SphereCap):
        kappa_z = 1.0 / (model.radius * math.sin(model.aperture)) ** 2
        proj = tan.T @ tan
        return kappa_z, [(kappa_z, proj)]
    if isinstance(model, SphereBall):
        parts = []
        l, m = model.sphere_dim, model.ball_dim
        Ps = np.zeros((n, n))
        Ps[:l, :l] = np.eye(l)
        parts.append((model.kappa_sphere, tan.T @ Ps @ tan))
        if m >= 3:
            Pb = np.eye(n) - Ps
            parts.append((1.0 / model.ball_radius**2, tan.T @ Pb @ tan))
        return None, parts
    if isinstance(model, FlatCylinder):
        return 0.0, [(0.0, np.eye(n - 1))]
    raise ConfigError(f"no boundary curvature data for model {model.name}")


def _kulkarni(proj):
    return np.einsum("ac,bd->abcd", proj, proj) - np.einsum("ad,bc->abcd", proj, proj)


def boundary_geometry(model: ManifoldModel, z) -> BoundaryGeometry:
    """Assemble boundary data (shape operator, Gauss form, curvatures) at z."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    u = model.initial_frames(z)
    nu = model.normal_frame(z, u)[0]
    nu = nu / np.linalg.norm(nu)
    n = model.dimension
    Q = _householder_to_last(nu)
    # reorder: tangential columns first, normal last (householder already does)
    A_full = model.shape_frame(z, u)[0]
    A_adapted = Q.T @ A_full @ Q
    A_tan = A_adapted[: n - 1, : n - 1]
    R_frame = model.frame_curvature().rotate(Q)
    R_tan = R_frame.restrict(range(n - 1))
    gauss = CurvatureTensor.from_symmetric_generator(A_tan)
    _, parts = _analytic_boundary_curvature(model, Q)
    comp = np.zeros((n - 1,) * 4)
    for kappa, proj in parts:
        if kappa != 0.0:
            comp += kappa * _kulkarni(proj)
    r_z = CurvatureTensor(n - 1, comp)
    return BoundaryGeometry(
        point=z[0],
        tangent_frame=Q[:, : n - 1],
        normal=nu,
        induced_metric=np.eye(n - 1),
        shape_tangential=A_tan,
        ambient_restriction=R_tan,
        gauss_form=gauss,
        induced_curvature=r_z,
    )


def gauss_equation_check(model: ManifoldModel, samples: int = 32, rng=None) -> float:
    """Max deviation of (ambient restriction + Gauss form - induced curvature).

    For n = 2 the boundary curvature is trivial and the check returns 0.
    """
    if model.dimension < 3:
        return 0.0
    rng = rng or np.random.default_rng(0)
    zs = model.sample_boundary(rng, samples)
    worst = 0.0
    for i in range(samples):
        bg = boundary_geometry(model, zs[i])
        dev = np.abs(
            bg.ambient_restriction.components
            + bg.gauss_form.components
            - bg.induced_curvature.components
        ).max()
        worst = max(worst, float(dev))
    return worst
