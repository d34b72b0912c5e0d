"""Reflected Brownian motion, bridges, transport and the jump functional.

The simulation uses geodesic Euler-Maruyama stepping in a parallel
orthonormal frame: each step draws a Gaussian increment in frame
components, pushes it through the frame, and moves along the geodesic
while transporting the frame (exactly, for the catalog models).  A step
that crosses the boundary is reflected back along the inward normal; the
local time picks up twice the penetration depth per crossing, which is
the Skorokhod decomposition of the reflected chain (one step from the
boundary then reproduces the flat half-space law E[lam] = sqrt(2h/pi)
exactly).

Bridges add the logarithmic heat-kernel drift toward the anchor.  Two
surrogates are available: "varadhan" (pure squared-distance gradient,
with the normal component suppressed inside a sqrt(h) collar) and the
default "reflected", which augments it with a single boundary image so
the drift satisfies the Neumann condition at the boundary; both reduce
to the exact Euclidean bridge drift away from the boundary.  The final
step snaps to the anchor.

The multiplicative functional starts at the identity, decays through
the curvature operator during interior evolution, and at every boundary
contact is multiplied by exp(-DA * dlam) followed by the tangential
projection (exact-jump mode) or by the penalty form
exp(-(DA + Pi_nor/eps) * dlam) (epsilon mode).  All catalog models are
products of isotropic factors, so the batch engine tracks one small
n x n matrix per bounded factor and assembles supertraces from
elementary symmetric polynomials; the general 2**n-dimensional operator
route is kept in evolve_functional / evolve_transport and is verified
against the fast path on coupled noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import exterior as ext
from .errors import NumericalAbortError
from .geometry import ManifoldModel

DEFAULT_LAM_SCALE = 2.0  # Skorokhod increment per crossing = 2 x penetration depth


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, stream, counter) fixes all draws."""

    seed: int
    stream: int = 0
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        bitgen = np.random.Philox(counter=np.array([self.counter, 0, 0, 0], dtype=np.uint64), key=key)
        return np.random.Generator(bitgen)

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream, self.counter)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


# ---------------------------------------------------------------------------
# walk state and single steps
# ---------------------------------------------------------------------------


@dataclass
class WalkState:
    """Batched state of reflected walks (positions, frames, local time)."""

    x: np.ndarray                 # (P, state_dim)
    frames: np.ndarray | None     # (P, state_dim, n) or None for trivial transport
    lam: np.ndarray               # (P,)
    time: float
    alive: np.ndarray             # (P,) validity mask


@dataclass
class ContactInfo:
    contact: np.ndarray           # (P,) bool
    dlam: np.ndarray              # (P,)
    nu: np.ndarray                # (P, d_bounded) bounded-factor normal components
    coeff: np.ndarray             # (P,) umbilic shape coefficient at contact


def make_walk_state(model: ManifoldModel, x0) -> WalkState:
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    frames = model.initial_frames(x) if model.needs_frames else None
    return WalkState(
        x=x,
        frames=frames,
        lam=np.zeros(x.shape[0]),
        time=0.0,
        alive=np.ones(x.shape[0], dtype=bool),
    )


def _orthonormalize(frames):
    """Modified Gram-Schmidt over the frame columns (batched)."""
    out = frames.copy()
    k = out.shape[2]
    for a in range(k):
        v = out[:, :, a]
        for b in range(a):
            proj = np.einsum("pd,pd->p", v, out[:, :, b])
            v = v - proj[:, None] * out[:, :, b]
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        out[:, :, a] = v / np.where(norm == 0.0, 1.0, norm)
    return out


def _apply_increment(model, state, xi, lam_scale):
    """Move every path by the frame increment xi, reflecting at the boundary."""
    x2, u2 = model.geodesic_step(state.x, state.frames, xi)
    d2 = model.boundary_distance(x2)
    contact = d2 <= 0.0
    P = state.x.shape[0]
    n_b = model.bounded_factor.dim
    dlam = np.zeros(P)
    nu = np.zeros((P, n_b))
    coeff = np.zeros(P)
    if contact.any():
        idx = np.nonzero(contact)[0]
        if u2 is None:
            xr, ur, depth = model.reflect(x2[idx], None)
            x2[idx] = xr
        else:
            xr, ur, depth = model.reflect(x2[idx], u2[idx])
            x2[idx] = xr
            u2[idx] = ur
        nu_c, a_c = model.boundary_data(x2[idx], None if u2 is None else u2[idx])
        dlam[idx] = lam_scale * np.maximum(depth, 0.0)
        nu[idx] = nu_c
        coeff[idx] = a_c
        state.lam[idx] += dlam[idx]
    if u2 is not None:
        u2 = _orthonormalize(u2)
    state.x = x2
    state.frames = u2
    state.alive &= model.simulation_valid(x2)
    return ContactInfo(contact=contact, dlam=dlam, nu=nu, coeff=coeff)


def step_reflected_bm(model, state: WalkState, h: float, rng, lam_scale=DEFAULT_LAM_SCALE) -> ContactInfo:
    """One Euler-Maruyama step of normally reflected Brownian motion.

    Mutates the state in place and returns the contact data of the step.
    """
    gen = _as_generator(rng)
    xi = math.sqrt(h) * gen.standard_normal((state.x.shape[0], model.dimension))
    info = _apply_increment(model, state, xi, lam_scale)
    state.time += h
    return info


def bridge_drift(model, state: WalkState, anchor, remaining: float, *, kind="reflected",
                 h=None, d_anchor=None):
    """Logarithmic heat-kernel drift toward the anchor (frame components).

    "varadhan": squared-distance gradient toward the anchor with the
    normal component suppressed inside a sqrt(h) collar of the boundary.
    "reflected": two-well surrogate that also pulls toward a boundary
    image of the anchor, Gaussian-weighted by the two squared distances,
    so the drift satisfies the Neumann condition on the boundary and
    reduces to the direct drift in the deep interior.  The image sits
    across the tangent plane of the nearest boundary point at normal
    separation d_z + d_anchor; the tangent-plane image (rather than the
    exact geodesic mirror) slightly overweights the image pull for convex
    boundaries, which empirically matches the mean-curvature enhancement
    of the true reflected kernel.
    """
    ell = model.log_frame(state.x, state.frames, anchor)
    if kind == "varadhan":
        drift = ell / remaining
        if h is not None:
            d, nu = model.collar_data(state.x, state.frames)
            near = d < math.sqrt(h)
            if near.any():
                comp = np.einsum("pk,pk->p", drift, nu)
                drift = drift - np.where(near, comp, 0.0)[:, None] * nu
        return drift
    if kind != "reflected":
        raise ValueError(f"unknown drift kind {kind!r}")
    d_z, nu = model.collar_data(state.x, state.frames)
    if d_anchor is None:
        d_anchor = model.boundary_distance(np.atleast_2d(np.asarray(anchor, dtype=float)))
    ell_nu = np.einsum("pk,pk->p", ell, nu)
    ell_tan = ell - ell_nu[:, None] * nu
    mirror_gap = d_z + d_anchor
    direct_sq = np.einsum("pk,pk->p", ell, ell)
    image_sq = np.einsum("pk,pk->p", ell_tan, ell_tan) + mirror_gap**2
    log_ratio = np.clip(-(image_sq - direct_sq) / (2.0 * remaining), -60.0, 0.0)
    rho = np.exp(log_ratio)
    ell_img = ell_tan - mirror_gap[:, None] * nu
    return (ell + rho[:, None] * ell_img) / ((1.0 + rho) * remaining)[:, None]


def step_bridge(model, state: WalkState, remaining: float, anchor, h: float, rng, *,
                drift="reflected", lam_scale=DEFAULT_LAM_SCALE, d_anchor=None) -> ContactInfo:
    """One step of the reflected Brownian bridge toward the anchor."""
    gen = _as_generator(rng)
    g = bridge_drift(model, state, anchor, remaining, kind=drift, h=h, d_anchor=d_anchor)
    xi = gen.standard_normal((state.x.shape[0], model.dimension))
    xi *= math.sqrt(h)
    g *= h
    xi += g
    info = _apply_increment(model, state, xi, lam_scale)
    state.time += h
    return info


def snap_to_anchor(model, state: WalkState, anchor, lam_scale=DEFAULT_LAM_SCALE) -> ContactInfo:
    """Deterministic final bridge step: land exactly on the anchor.

    An anchor lying on the boundary counts as a (zero-local-time) contact,
    so the functional receives its final tangential projection there.
    """
    xi = model.log_frame(state.x, state.frames, anchor)
    x2, u2 = model.geodesic_step(state.x, state.frames, xi)
    P = state.x.shape[0]
    n_b = model.bounded_factor.dim
    d2 = model.boundary_distance(x2)
    contact = d2 <= 1e-12
    nu = np.zeros((P, n_b))
    coeff = np.zeros(P)
    if contact.any():
        idx = np.nonzero(contact)[0]
        nu_c, a_c = model.boundary_data(x2[idx], None if u2 is None else u2[idx])
        nu[idx] = nu_c
        coeff[idx] = a_c
    if u2 is not None:
        u2 = _orthonormalize(u2)
    state.x = x2
    state.frames = u2
    state.alive &= model.simulation_valid(x2)
    return ContactInfo(contact=contact, dlam=np.zeros(P), nu=nu, coeff=coeff)


# ---------------------------------------------------------------------------
# the multiplicative functional on factor matrices
# ---------------------------------------------------------------------------


def _jump_update(m, info: ContactInfo, mode: str, eps: float | None):
    """Apply boundary jumps to the bounded-factor matrices in place."""
    idx = np.nonzero(info.contact)[0]
    if idx.size == 0:
        return
    nu = info.nu[idx]
    a = info.coeff[idx]
    dl = info.dlam[idx]
    sub = m[idx]
    mnu = np.einsum("cij,cj->ci", sub, nu)
    tangential = sub - mnu[:, :, None] * nu[:, None, :]
    decay = np.exp(-a * dl)[:, None, None]
    if mode == "exact-jump":
        m[idx] = decay * tangential
    elif mode == "epsilon":
        if eps is None or eps <= 0:
            raise ValueError("epsilon mode requires a positive eps")
        keep = np.exp(-dl / eps)[:, None, None]
        m[idx] = decay * tangential + keep * (mnu[:, :, None] * nu[:, None, :])
    else:
        raise ValueError(f"unknown functional mode {mode!r}")


def _elementary_symmetric(B, d):
    """Elementary symmetric polynomials e_0..e_d of batched d x d matrices."""
    P = B.shape[0]
    es = [np.ones(P)]
    p1 = np.einsum("pii->p", B)
    es.append(p1)
    if d >= 2:
        B2 = B @ B
        p2 = np.einsum("pii->p", B2)
        es.append((es[1] * p1 - p2) / 2.0)
    if d >= 3:
        p3 = np.einsum("pij,pji->p", B2, B)
        es.append((es[2] * p1 - es[1] * p2 + p3) / 3.0)
    if d >= 4:
        p4 = np.einsum("pij,pji->p", B2, B2)
        es.append((es[3] * p1 - es[2] * p2 + es[1] * p3 - p4) / 4.0)
    return es[: d + 1]


@dataclass
class BridgeBatch:
    """Final state of a batch of bridge loops, ready for supertraces."""

    model: ManifoldModel
    t: float
    steps: int
    anchors: np.ndarray
    lam: np.ndarray
    contacts: np.ndarray                 # contact-step counts per path
    alive: np.ndarray
    factor_m: dict                       # factor name -> (P, d, d) or None
    factor_O: dict                       # factor name -> (P, d, d) or None
    max_excursion: np.ndarray | None = None
    positions: np.ndarray | None = None  # (steps + 1, P, state_dim) when recorded

    def supertraces(self) -> np.ndarray:
        """Per-path supertrace of (functional x inverse transport)."""
        P = self.lam.shape[0]
        total = np.ones(P)
        for spec in self.model.factors:
            d = spec.dim
            m = self.factor_m.get(spec.name)
            O = self.factor_O.get(spec.name)
            if m is None and O is None:
                B = np.broadcast_to(np.eye(d), (P, d, d))
            elif m is None:
                B = np.transpose(O, (0, 2, 1))
            elif O is None:
                B = m
            else:
                B = np.einsum("pij,pkj->pik", m, O)
            es = _elementary_symmetric(np.ascontiguousarray(B), d)
            acc = np.zeros(P)
            for p in range(d + 1):
                c = math.exp(-spec.kappa * p * (d - p) * self.t / 2.0)
                acc += (-1.0) ** p * c * es[p]
            total *= acc
        return total


def simulate_bridges(model: ManifoldModel, anchors, t: float, steps: int, rng, *,
                     mode="exact-jump", eps=None, drift="reflected",
                     lam_scale=DEFAULT_LAM_SCALE, track_excursion=False,
                     record_positions=False) -> BridgeBatch:
    """Simulate reflected Brownian bridge loops pinned at the given anchors.

    anchors: (P, state_dim); each path runs on [0, t] with the fixed step
    t / steps and ends exactly at its anchor.
    """
    gen = _as_generator(rng)
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    state = make_walk_state(model, anchors)
    frames0 = None if state.frames is None else state.frames.copy()
    P = anchors.shape[0]
    h = t / steps
    d_anchor = model.boundary_distance(anchors)
    bounded = model.bounded_factor
    m = np.broadcast_to(np.eye(bounded.dim), (P, bounded.dim, bounded.dim)).copy()
    contacts = np.zeros(P, dtype=np.int64)
    excursion = np.zeros(P) if track_excursion else None
    positions = None
    if record_positions:
        positions = np.empty((steps + 1, P, model.state_dim))
        positions[0] = state.x
    for k in range(steps):
        remaining = t - k * h
        if k == steps - 1:
            info = snap_to_anchor(model, state, anchors, lam_scale)
        else:
            info = step_bridge(model, state, remaining, anchors, h, gen,
                               drift=drift, lam_scale=lam_scale, d_anchor=d_anchor)
        _jump_update(m, info, mode, eps)
        contacts += info.contact
        if track_excursion:
            np.maximum(excursion, model.distance(state.x, anchors), out=excursion)
        if record_positions:
            positions[k + 1] = state.x
    factor_m = {}
    factor_O = {}
    for spec in model.factors:
        factor_m[spec.name] = m if spec.bounded else None
        factor_O[spec.name] = model.holonomy(frames0, state.frames, spec)
    return BridgeBatch(
        model=model, t=t, steps=steps, anchors=anchors, lam=state.lam.copy(),
        contacts=contacts, alive=state.alive.copy(), factor_m=factor_m,
        factor_O=factor_O, max_excursion=excursion, positions=positions,
    )


def simulate_free_walks(model: ManifoldModel, starts, t: float, steps: int, rng, *,
                        lam_scale=DEFAULT_LAM_SCALE, checkpoints=()):
    """Reflected Brownian motion without conditioning.

    Returns (state, lam_at, touched): the final state, the local time
    recorded at the requested step indices, and a flag marking paths that
    ever contacted the boundary.
    """
    gen = _as_generator(rng)
    state = make_walk_state(model, starts)
    h = t / steps
    P = state.x.shape[0]
    touched = np.zeros(P, dtype=bool)
    lam_at = {}
    for k in range(steps):
        info = step_reflected_bm(model, state, h, gen, lam_scale)
        touched |= info.contact
        if (k + 1) in checkpoints:
            lam_at[k + 1] = state.lam.copy()
    return state, lam_at, touched


def confinement_fraction(model: ManifoldModel, x, rho: float, t: float, samples: int,
                         rng, steps: int = 200) -> float:
    """Fraction of bridge loops pinned at x that stay inside B_rho(x)."""
    if rho <= 0:
        raise ValueError("confinement radius must be positive")
    anchors = np.broadcast_to(np.asarray(x, dtype=float), (samples, model.state_dim)).copy()
    batch = simulate_bridges(model, anchors, t, steps, rng, track_excursion=True)
    return float(np.mean(batch.max_excursion <= rho))


# ---------------------------------------------------------------------------
# recorded single paths and the general operator route
# ---------------------------------------------------------------------------


@dataclass
class PathSample:
    """One recorded trajectory with everything the operator route needs."""

    model: ManifoldModel
    t: float
    steps: int
    times: np.ndarray                 # (steps + 1,)
    positions: np.ndarray             # (steps + 1, state_dim)
    frames: np.ndarray | None         # (steps + 1, state_dim, n)
    lam: np.ndarray                   # (steps + 1,)
    contact: np.ndarray               # (steps,) bool
    dlam: np.ndarray                  # (steps,)
    nu_frame: np.ndarray              # (steps, n) full-frame normal components
    shape_coeff: np.ndarray           # (steps,)
    valid: bool
    anchor: np.ndarray | None = None

    @property
    def dimension(self):
        return self.model.dimension


def simulate_path(model: ManifoldModel, x0, t: float, steps: int, rng, *,
                  anchor=None, drift="reflected", lam_scale=DEFAULT_LAM_SCALE) -> PathSample:
    """Simulate and record a single path (a bridge loop when anchored)."""
    gen = _as_generator(rng)
    x0 = np.asarray(x0, dtype=float)
    state = make_walk_state(model, x0[None, :])
    h = t / steps
    n = model.dimension
    sd = model.state_dim
    times = np.linspace(0.0, t, steps + 1)
    positions = np.empty((steps + 1, sd))
    frames = None if state.frames is None else np.empty((steps + 1, sd, n))
    lam = np.zeros(steps + 1)
    contact = np.zeros(steps, dtype=bool)
    dlam = np.zeros(steps)
    nu_frame = np.zeros((steps, n))
    shape_coeff = np.zeros(steps)
    positions[0] = state.x[0]
    if frames is not None:
        frames[0] = state.frames[0]
    anchor_arr = None if anchor is None else np.asarray(anchor, dtype=float)[None, :]
    cols = model.bounded_factor.cols
    for k in range(steps):
        if anchor_arr is None:
            info = step_reflected_bm(model, state, h, gen, lam_scale)
        elif k == steps - 1:
            info = snap_to_anchor(model, state, anchor_arr, lam_scale)
        else:
            info = step_bridge(model, state, t - k * h, anchor_arr, h, gen,
                               drift=drift, lam_scale=lam_scale)
        positions[k + 1] = state.x[0]
        if frames is not None:
            frames[k + 1] = state.frames[0]
        lam[k + 1] = state.lam[0]
        contact[k] = info.contact[0]
        dlam[k] = info.dlam[0]
        if info.contact[0]:
            nu_frame[k, cols] = info.nu[0]
            shape_coeff[k] = info.coeff[0]
    return PathSample(
        model=model, t=t, steps=steps, times=times, positions=positions,
        frames=frames, lam=lam, contact=contact, dlam=dlam, nu_frame=nu_frame,
        shape_coeff=shape_coeff, valid=bool(state.alive[0]),
        anchor=None if anchor is None else np.asarray(anchor, dtype=float),
    )


def _development(path: PathSample, start: int, stop: int) -> np.ndarray:
    """Frame development u_start^T u_stop as an n x n matrix."""
    n = path.model.dimension
    if path.frames is None:
        return np.eye(n)
    u0 = path.frames[start]
    u1 = path.frames[stop]
    return u0.T @ u1


def evolve_transport(path: PathSample, start: int = 0, stop: int | None = None,
                     tol: float = 1e-6):
    """Transport U and its inverse V on forms over [start, stop].

    Raises NumericalAbortError when the frame development drifts from
    orthogonality by more than tol (a resample signal).
    """
    stop = path.steps if stop is None else stop
    O = _development(path, start, stop)
    drift = np.abs(O.T @ O - np.eye(path.model.dimension)).max()
    if drift > tol:
        raise NumericalAbortError(f"transport orthogonality drift {drift:.2e} exceeds {tol}")
    U = ext.algebra_lift(O)
    V = ext.algebra_lift(O.T)
    return U, V


def _contact_jump_matrix(model, nu, a, dl, mode, eps):
    """n x n jump factor exp(-A dl) (Pi_tan or penalty) in frame components."""
    n = model.dimension
    proj_b = np.zeros((n, n))
    idx = np.arange(n)[model.bounded_factor.cols]
    proj_b[idx, idx] = 1.0
    shape_proj = proj_b - np.outer(nu, nu)
    decay = np.eye(n) + (math.exp(-a * dl) - 1.0) * shape_proj
    if mode == "exact-jump":
        return decay @ (np.eye(n) - np.outer(nu, nu))
    keep = math.exp(-dl / eps)
    return decay @ (np.eye(n) - (1.0 - keep) * np.outer(nu, nu))


def evolve_functional(path: PathSample, mode: str = "exact-jump", eps: float | None = None,
                      start: int = 0, stop: int | None = None) -> ext.GradedOperator:
    """Multiplicative functional over [start, stop] as a graded operator.

    Interior evolution multiplies by the exponential of minus half the
    curvature operator per step; boundary contacts multiply by the
    algebra lift of the contact jump.  Evolving consecutive windows and
    composing reproduces the full-interval operator (multiplicativity).
    """
    if mode == "epsilon" and (eps is None or eps <= 0):
        raise ValueError("epsilon mode requires a positive eps")
    stop = path.steps if stop is None else stop
    model = path.model
    n = model.dimension
    h = path.t / path.steps
    dr = ext.curvature_to_operator(model.frame_curvature())
    from scipy.linalg import expm

    interior = expm(-0.5 * h * dr.mat)
    M = np.eye(1 << n)
    for k in range(start, stop):
        M = M @ interior
        if path.contact[k]:
            jump = _contact_jump_matrix(
                model, path.nu_frame[k], path.shape_coeff[k], path.dlam[k], mode, eps
            )
            M = M @ ext.algebra_lift(jump).mat
    return ext.GradedOperator(n, M)


def path_supertrace(path: PathSample, mode: str = "exact-jump", eps: float | None = None) -> float:
    """Supertrace of (functional x inverse transport) via the operator route."""
    M = evolve_functional(path, mode=mode, eps=eps)
    _, V = evolve_transport(path)
    return (M @ V).supertrace()
