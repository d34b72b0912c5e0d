"""Neumann heat kernels for the catalog models.

All kernels are transition densities of normally reflected Brownian
motion (generator = half the Laplacian), so they integrate to one against
the Riemannian volume and approach 1/volume as t grows.

Exact constructions:

* flat disk / ball: eigenexpansion over Bessel (spherical Bessel) modes
  with Neumann zeros;
* interval and circle: method of images / wrapped Gaussian, switching to
  the cosine eigenseries for large times;
* hemisphere: reflection doubling of the closed-sphere series;
* products: product of the factor kernels.

Non-hemisphere caps fall back to a Gaussian parametrix and are flagged
as approximate.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import SeriesConvergenceError
from .geometry import FlatBall, FlatCylinder, ManifoldModel, SphereBall, SphereCap

_TAIL_LOG = 46.0  # truncate series once the exponential factor is below e^-46
_MAX_DIMLESS_FREQ = 320.0  # largest lambda * r supported by the mode tables

_MODE_CACHE: dict = {}


def _gauss(t, z):
    return np.exp(-np.asarray(z) ** 2 / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


# ---------------------------------------------------------------------------
# one-dimensional building blocks
# ---------------------------------------------------------------------------


def interval_kernel(t, length, a, b):
    """Neumann kernel on [0, length]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = float(length)
    if t <= 4.0 * L * L:
        reach = math.sqrt(2.0 * _TAIL_LOG * t) + L
        kmax = int(math.ceil(reach / (2.0 * L))) + 1
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
        for k in range(-kmax, kmax + 1):
            out = out + _gauss(t, a - b + 2 * k * L) + _gauss(t, a + b + 2 * k * L)
        return out
    kmax = int(math.ceil(L * math.sqrt(2.0 * _TAIL_LOG / t) / math.pi)) + 1
    out = np.full(np.broadcast_shapes(a.shape, b.shape), 1.0 / L)
    for k in range(1, kmax + 1):
        w = k * math.pi / L
        out = out + (2.0 / L) * np.cos(w * a) * np.cos(w * b) * math.exp(-w * w * t / 2.0)
    return out


def circle_kernel(t, circumference, delta):
    """Heat kernel on a circle as a function of (signed) arc separation."""
    d = np.asarray(delta, dtype=float)
    C = float(circumference)
    if t <= 4.0 * C * C:
        kmax = int(math.ceil((math.sqrt(2.0 * _TAIL_LOG * t) + C) / C)) + 1
        out = np.zeros(d.shape)
        for k in range(-kmax, kmax + 1):
            out = out + _gauss(t, d + k * C)
        return out
    kmax = int(math.ceil(C * math.sqrt(2.0 * _TAIL_LOG / t) / (2 * math.pi))) + 1
    out = np.full(d.shape, 1.0 / C)
    for k in range(1, kmax + 1):
        w = 2.0 * math.pi * k / C
        out = out + (2.0 / C) * np.cos(w * d) * math.exp(-w * w * t / 2.0)
    return out


# ---------------------------------------------------------------------------
# closed-sphere series
# ---------------------------------------------------------------------------


def _sphere_lmax(t, radius, rank):
    # smallest l with l (l + rank) t / (2 r^2) >= tail threshold
    target = 2.0 * _TAIL_LOG * radius * radius / t
    l = 0.5 * (-rank + math.sqrt(rank * rank + 4.0 * target))
    return int(math.ceil(l)) + 2


def sphere_kernel(t, dim, radius, gamma):
    """Heat kernel of the closed round sphere S^dim as a function of angle."""
    gamma = np.asarray(gamma, dtype=float)
    r2 = radius * radius
    if dim == 1:
        return circle_kernel(t, 2.0 * math.pi * radius, gamma * radius)
    if dim == 2:
        lmax = _sphere_lmax(t, radius, 1)
        if lmax > 4000:
            raise SeriesConvergenceError(
                f"sphere series needs {lmax} terms at t={t}", required_terms=lmax
            )
        x = np.cos(gamma)
        out = np.zeros(gamma.shape)
        p_prev = np.ones_like(x)
        p = x.copy()
        out += 1.0 / (4.0 * math.pi * r2)
        for l in range(1, lmax + 1):
            out += (2 * l + 1) / (4.0 * math.pi * r2) * p * math.exp(-l * (l + 1) * t / (2 * r2))
            p_next = ((2 * l + 1) * x * p - l * p_prev) / (l + 1)
            p_prev, p = p, p_next
        # the alternating series cannot resolve the exponentially small far
        # tail; floor the (positive) density at the roundoff noise level
        return np.maximum(out, 0.0)
    if dim == 3:
        lmax = _sphere_lmax(t, radius, 2)
        if lmax > 4000:
            raise SeriesConvergenceError(
                f"sphere series needs {lmax} terms at t={t}", required_terms=lmax
            )
        out = np.zeros(gamma.shape)
        vol = 2.0 * math.pi**2 * radius**3
        sin_g = np.sin(gamma)
        small = np.abs(sin_g) < 1e-8
        for l in range(lmax + 1):
            # Chebyshev-U_l(cos gamma) = sin((l+1) gamma) / sin(gamma)
            u = np.where(
                small,
                (l + 1.0) * np.cos((l + 1) * gamma) / np.where(small, np.cos(gamma), 1.0),
                np.sin((l + 1) * gamma) / np.where(small, 1.0, sin_g),
            )
            out += (l + 1) * u / vol * math.exp(-l * (l + 2) * t / (2 * r2))
        return np.maximum(out, 0.0)
    raise SeriesConvergenceError(f"no sphere series for dimension {dim}")


# ---------------------------------------------------------------------------
# Neumann modes of the flat disk and ball
# ---------------------------------------------------------------------------


def _disk_modes(radius, lam_max):
    """Neumann modes (m, lambda, weight) of the unit-normalized disk series.

    weight multiplies exp(-lambda^2 t / 2) * J_m(lambda rho_x) *
    J_m(lambda rho_y) * cos(m dphi) in the kernel sum.
    """
    key = ("disk", round(radius, 12))
    cached = _MODE_CACHE.get(key)
    x_max = lam_max * radius
    if x_max > _MAX_DIMLESS_FREQ:
        need = int(x_max * x_max / (2 * math.pi))
        raise SeriesConvergenceError(
            f"disk Neumann series needs modes up to lambda*r = {x_max:.1f} "
            f"(~{need} terms); reduce lambda_max or increase t",
            required_terms=need,
        )
    if cached is not None and cached["x_max"] >= x_max:
        return cached
    x_max_build = max(x_max, 60.0)
    per_order = int(x_max_build / math.pi) + 3
    orders = []
    for m in range(0, int(x_max_build) + 2):
        zeros = special.jnp_zeros(m, per_order)
        zeros = zeros[zeros <= x_max_build]
        if zeros.size == 0 and m > 0:
            break
        if m == 0:
            zeros = zeros[zeros > 1e-9]
        lam = zeros / radius
        jval = special.jv(m, zeros)
        norm = (radius**2 / 2.0) * (1.0 - (m / zeros) ** 2) * jval**2
        weight = (1.0 if m == 0 else 2.0) / (2.0 * math.pi * norm)
        orders.append((m, lam, weight))
    cached = {"x_max": x_max_build, "orders": orders, "radius": radius}
    _MODE_CACHE[key] = cached
    return cached


def _ball3_modes(radius, lam_max):
    """Neumann modes (l, lambda, weight) of the 3-ball series."""
    key = ("ball3", round(radius, 12))
    cached = _MODE_CACHE.get(key)
    x_max = lam_max * radius
    if x_max > _MAX_DIMLESS_FREQ:
        need = int(x_max * x_max / (2 * math.pi))
        raise SeriesConvergenceError(
            f"ball Neumann series needs modes up to lambda*r = {x_max:.1f} "
            f"(~{need} terms); reduce lambda_max or increase t",
            required_terms=need,
        )
    if cached is not None and cached["x_max"] >= x_max:
        return cached
    x_max_build = max(x_max, 60.0)
    grid = np.arange(0.2, x_max_build + 0.5, 0.02)
    orders = []
    for l in range(0, int(x_max_build) + 2):
        vals = special.spherical_jn(l, grid, derivative=True)
        sgn = np.sign(vals)
        flips = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
        if flips.size == 0:
            if l > 0:
                break
            orders.append((l, np.array([]), np.array([])))
            continue
        roots = []
        from scipy.optimize import brentq

        for i in flips:
            root = brentq(
                lambda x: special.spherical_jn(l, x, derivative=True), grid[i], grid[i + 1]
            )
            roots.append(root)
        roots = np.array(roots)
        roots = roots[roots <= x_max_build]
        lam = roots / radius
        jval = special.spherical_jn(l, roots)
        norm = (radius**3 / 2.0) * (1.0 - l * (l + 1) / roots**2) * jval**2
        weight = (2 * l + 1) / (4.0 * math.pi * norm)
        orders.append((l, lam, weight))
    cached = {"x_max": x_max_build, "orders": orders, "radius": radius}
    _MODE_CACHE[key] = cached
    return cached


def _lambda_max(t):
    return math.sqrt(2.0 * _TAIL_LOG / t)


def _disk_kernel(model: FlatBall, t, x, y):
    r = model.radius
    modes = _disk_modes(r, _lambda_max(t))
    rho_x = np.linalg.norm(x, axis=-1)
    rho_y = np.linalg.norm(y, axis=-1)
    dphi = np.arctan2(x[:, 1], x[:, 0]) - np.arctan2(y[:, 1], y[:, 0])
    out = np.full(x.shape[0], 1.0 / (math.pi * r * r))
    for m, lam, weight in modes["orders"]:
        keep = lam * lam * t / 2.0 <= _TAIL_LOG
        lam = lam[keep]
        if lam.size == 0:
            continue
        w = weight[keep]
        decay = np.exp(-lam * lam * t / 2.0)
        jx = special.jv(m, lam[:, None] * rho_x[None, :])
        jy = special.jv(m, lam[:, None] * rho_y[None, :])
        ang = np.cos(m * dphi)[None, :] if m > 0 else 1.0
        out = out + np.einsum("k,kp->p", w * decay, jx * jy * (ang if m > 0 else 1.0))
    # eigen-series noise floor: the density is positive
    return np.maximum(out, 0.0)


def _ball3_kernel(model: FlatBall, t, x, y):
    r = model.radius
    modes = _ball3_modes(r, _lambda_max(t))
    rho_x = np.linalg.norm(x, axis=-1)
    rho_y = np.linalg.norm(y, axis=-1)
    denom = np.where(rho_x * rho_y == 0.0, 1.0, rho_x * rho_y)
    cosg = np.clip(np.einsum("pd,pd->p", x, y) / denom, -1.0, 1.0)
    cosg = np.where(rho_x * rho_y == 0.0, 1.0, cosg)
    out = np.full(x.shape[0], 1.0 / model.volume)
    lmax_used = max((entry[0] for entry in modes["orders"]), default=0)
    legendre = _legendre_table(cosg, lmax_used)
    for l, lam, weight in modes["orders"]:
        keep = lam * lam * t / 2.0 <= _TAIL_LOG
        lam = lam[keep]
        if lam.size == 0:
            continue
        w = weight[keep]
        decay = np.exp(-lam * lam * t / 2.0)
        jx = special.spherical_jn(l, lam[:, None] * rho_x[None, :])
        jy = special.spherical_jn(l, lam[:, None] * rho_y[None, :])
        out = out + np.einsum("k,kp->p", w * decay, jx * jy) * legendre[l]
    # eigen-series noise floor: the density is positive
    return np.maximum(out, 0.0)


def _legendre_table(x, lmax):
    table = [np.ones_like(x)]
    if lmax >= 1:
        table.append(x.copy())
    for l in range(1, lmax):
        table.append(((2 * l + 1) * x * table[l] - l * table[l - 1]) / (l + 1))
    return table


# ---------------------------------------------------------------------------
# per-model dispatch
# ---------------------------------------------------------------------------


def _pairs(model: ManifoldModel, t, x, y):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if isinstance(model, FlatBall):
        if model.dimension == 1:
            return interval_kernel(t, 2 * model.radius, x[:, 0] + model.radius, y[:, 0] + model.radius)
        if model.dimension == 2:
            return _disk_kernel(model, t, x, y)
        if model.dimension == 3:
            return _ball3_kernel(model, t, x, y)
        return _parametrix(model, t, x, y)
    if isinstance(model, SphereCap):
        if model.is_hemisphere:
            gamma = model.distance(x, y) / model.radius
            y_mirror = y.copy()
            y_mirror[:, model._axis] *= -1.0
            gamma_m = model.distance(x, y_mirror) / model.radius
            return sphere_kernel(t, model.dimension, model.radius, gamma) + sphere_kernel(
                t, model.dimension, model.radius, gamma_m
            )
        return _parametrix(model, t, x, y)
    if isinstance(model, FlatCylinder):
        ds = interval_kernel(t, model.length, x[:, 0], y[:, 0])
        dy = x[:, 1] - y[:, 1]
        return ds * circle_kernel(t, model.circumference, dy)
    if isinstance(model, SphereBall):
        xs, xb = model._split(x)
        ys, yb = model._split(y)
        r = model.sphere_radius
        cosg = np.clip(np.einsum("pd,pd->p", xs, ys) / r**2, -1.0, 1.0)
        gamma = np.arccos(cosg)
        k_s = sphere_kernel(t, model.sphere_dim, r, gamma)
        k_b = _pairs(model._ball, t, xb, yb)
        return k_s * k_b
    return _parametrix(model, t, x, y)


def _parametrix(model, t, x, y):
    """Gaussian parametrix with a single boundary image (approximate)."""
    n = model.dimension
    d = model.distance(x, y)
    dx = model.boundary_distance(x)
    dy = model.boundary_distance(y)
    tan_sq = np.maximum(d**2 - (dx - dy) ** 2, 0.0)
    image_sq = tan_sq + (dx + dy) ** 2
    pref = (2.0 * math.pi * t) ** (-n / 2.0)
    return pref * (np.exp(-(d**2) / (2 * t)) + np.exp(-image_sq / (2 * t)))


def kernel_info(model: ManifoldModel, t: float) -> dict:
    """Exactness and validity metadata for the model's kernel at time t."""
    spec = model.heat_kernel_spec()
    info = {"exact": bool(spec.get("exact", False)), "kind": spec.get("kind", "parametrix")}
    if isinstance(model, (FlatBall, SphereBall)):
        r = model.radius if isinstance(model, FlatBall) else model.ball_radius
        info["t_min"] = 2.0 * _TAIL_LOG * (r / _MAX_DIMLESS_FREQ) ** 2
    elif isinstance(model, SphereCap):
        info["t_min"] = 2.0 * _TAIL_LOG * model.radius**2 / 4000.0**2
    else:
        info["t_min"] = 0.0
    info["valid"] = t >= info["t_min"]
    return info


def heat_kernel_diag(model: ManifoldModel, t: float, x) -> np.ndarray:
    """K0(t; x, x) for a batch of points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(model, SphereCap) and model.is_hemisphere:
        # doubling: diagonal plus the mirrored-point term
        gamma_m = 2.0 * model.boundary_distance(x) / model.radius
        return sphere_kernel(t, model.dimension, model.radius, np.zeros(x.shape[0])) + sphere_kernel(
            t, model.dimension, model.radius, gamma_m
        )
    if isinstance(model, SphereBall):
        xs, xb = model._split(x)
        k_s = sphere_kernel(t, model.sphere_dim, model.sphere_radius, np.zeros(x.shape[0]))
        k_b = heat_kernel_diag(model._ball, t, xb)
        return k_s * k_b
    return _pairs(model, t, x, x)


def neumann_heat_kernel(model: ManifoldModel, t: float, x, y) -> float:
    """Neumann heat kernel K0(t; x, y) of a single point pair."""
    if t <= 0:
        raise SeriesConvergenceError("heat kernel requires t > 0")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return float(_pairs(model, t, x, y)[0])
