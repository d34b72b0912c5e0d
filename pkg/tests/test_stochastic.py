import math

import numpy as np
import pytest

from gblab import exterior as ext
from gblab import geometry as geo
from gblab import kernels as hk
from gblab import stochastic as st
from gblab.errors import NumericalAbortError


def disk():
    return geo.model_catalog("ball", dimension=2)


def ball3():
    return geo.model_catalog("ball", dimension=3)


def hemisphere():
    return geo.model_catalog("hemisphere", dimension=2)


class TestRngStream:
    def test_bit_exact_reproducibility(self):
        a = st.RngStream(seed=123, stream=7).generator().standard_normal(100)
        b = st.RngStream(seed=123, stream=7).generator().standard_normal(100)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = st.RngStream(seed=123, stream=0).generator().standard_normal(100)
        b = st.RngStream(seed=123, stream=1).generator().standard_normal(100)
        assert not np.array_equal(a, b)

    def test_counter_advances_reproducibly(self):
        s = st.RngStream(seed=9, stream=2, counter=5)
        assert np.array_equal(s.generator().standard_normal(8), s.generator().standard_normal(8))

    def test_path_reproducibility(self):
        model = disk()
        x0 = np.array([0.8, 0.0])
        p1 = st.simulate_path(model, x0, 0.05, 60, st.RngStream(5, 1), anchor=x0)
        p2 = st.simulate_path(model, x0, 0.05, 60, st.RngStream(5, 1), anchor=x0)
        assert np.array_equal(p1.positions, p2.positions)
        assert np.array_equal(p1.lam, p2.lam)
        assert np.array_equal(p1.dlam, p2.dlam)


class TestReflectedWalk:
    def test_flat_mean_square_displacement(self):
        # Brownian scaling E|x_t - x_0|^2 = n t before the boundary is felt
        model = ball3()
        t, steps, P = 0.01, 100, 40_000
        starts = np.zeros((P, 3))
        state, _, touched = st.simulate_free_walks(model, starts, t, steps, st.RngStream(11))
        assert touched.mean() == 0.0
        msd = np.einsum("pd,pd->p", state.x, state.x)
        se = msd.std() / math.sqrt(P)
        assert abs(msd.mean() - 3 * t) < 3 * se

    def test_path_sample_local_time_invariants(self):
        # recorded trajectories: lam nondecreasing and increments flagged
        model = disk()
        anchor = np.array([1.0, 0.0])
        path = st.simulate_path(model, anchor, 0.05, 150, st.RngStream(211), anchor=anchor)
        dlam = np.diff(path.lam)
        assert np.all(dlam >= -1e-15)
        assert np.all(dlam[~path.contact] == 0.0)
        assert path.contact.sum() > 0
        grew = dlam > 0
        assert np.all(path.contact[grew])

    def test_local_time_monotone_and_interior_flat(self):
        model = disk()
        starts = np.broadcast_to(np.array([0.97, 0.0]), (200, 2)).copy()
        gen = st.RngStream(13).generator()
        state = st.make_walk_state(model, starts)
        prev = state.lam.copy()
        interior_dlam = 0.0
        for _ in range(200):
            info = st.step_reflected_bm(model, state, 1e-4, gen)
            assert np.all(state.lam >= prev - 1e-15)
            interior_dlam += np.abs(info.dlam[~info.contact]).sum()
            prev = state.lam.copy()
        assert interior_dlam == 0.0

    def test_local_time_level_matches_half_space_law(self):
        # straight boundary: E[lam_t] from a boundary start must match the
        # half-line value sqrt(2 t / pi); this pins the factor two in the
        # Skorokhod increment (penetration depth alone gives half of it)
        model = geo.model_catalog("cylinder", length=4.0)
        t, steps, P = 0.04, 2000, 20_000
        starts = np.zeros((P, 2))
        starts[:, 1] = 1.0
        state, _, _ = st.simulate_free_walks(model, starts, t, steps, st.RngStream(17))
        target = math.sqrt(2 * t / math.pi)
        ratio = state.lam.mean() / target
        assert abs(ratio - 1.0) < 0.06

    def test_local_time_exponent(self):
        # log-log slope of t -> E lam_t is 1/2 for a boundary start
        model = disk()
        z = np.broadcast_to(np.array([1.0, 0.0]), (6000, 2)).copy()
        ts = np.array([1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1])
        steps_total = 2500
        checkpoints = [int(round(steps_total * ti / ts[-1])) for ti in ts]
        _, lam_at, _ = st.simulate_free_walks(
            model, z, ts[-1], steps_total, st.RngStream(19), checkpoints=set(checkpoints)
        )
        means = np.array([lam_at[c].mean() for c in checkpoints])
        slope = np.polyfit(np.log(ts), np.log(means), 1)[0]
        assert abs(slope - 0.5) < 0.05

    def test_interior_start_rarely_touches(self):
        model = disk()
        d = 0.5
        t = d * d / 100.0
        starts = np.broadcast_to(np.array([1.0 - d, 0.0]), (5000, 2)).copy()
        _, _, touched = st.simulate_free_walks(model, starts, t, 50, st.RngStream(23))
        assert touched.mean() < 0.01


class TestBridge:
    def test_flat_endpoint_snaps_to_anchor(self):
        model = disk()
        anchor = np.array([0.3, -0.2])
        path = st.simulate_path(model, anchor, 0.05, 80, st.RngStream(29), anchor=anchor)
        assert np.abs(path.positions[-1] - anchor).max() < 1e-12

    def test_sphere_endpoint_snaps_to_anchor(self):
        model = hemisphere()
        anchor = model.interior_point()
        path = st.simulate_path(model, anchor, 0.05, 80, st.RngStream(31), anchor=anchor)
        assert np.abs(path.positions[-1] - anchor).max() < 1e-9

    def test_bridge_displacement_bound(self):
        # E d(x, x_s)^2 <= C s along the loop
        model = disk()
        anchor = np.array([0.5, 0.0])
        anchors = np.broadcast_to(anchor, (2000, 2)).copy()
        batch = st.simulate_bridges(model, anchors, 0.08, 100, st.RngStream(37),
                                    record_positions=True)
        times = np.linspace(0, 0.08, 101)
        for k in range(1, 101):
            d2 = ((batch.positions[k] - anchor) ** 2).sum(axis=1).mean()
            assert d2 <= 4.0 * model.dimension * times[k] + 1e-9

    def test_drift_magnitude_bound_against_exact_kernel(self):
        # the exact disk kernel satisfies |grad log K0| <= C (d/s + 1/sqrt(s));
        # the simulation surrogate obeys the same envelope
        model = disk()
        rng = np.random.default_rng(41)
        worst_exact = 0.0
        worst_surrogate = 0.0
        for _ in range(40):
            s = rng.uniform(0.02, 0.3)
            z = model.sample_volume(rng, 1)
            x = model.sample_volume(rng, 1)
            if np.linalg.norm(z - x) < 0.05:
                continue
            eps = 1e-5
            grad = np.zeros(2)
            for a in range(2):
                zp = z.copy()
                zm = z.copy()
                zp[0, a] += eps
                zm[0, a] -= eps
                if model.boundary_distance(zp)[0] < 0 or model.boundary_distance(zm)[0] < 0:
                    break
                kp = hk.neumann_heat_kernel(model, s, zp[0], x[0])
                km = hk.neumann_heat_kernel(model, s, zm[0], x[0])
                grad[a] = (math.log(kp) - math.log(km)) / (2 * eps)
            else:
                bound = model.distance(z, x)[0] / s + 1.0 / math.sqrt(s)
                worst_exact = max(worst_exact, np.linalg.norm(grad) / bound)
                state = st.make_walk_state(model, z)
                g = st.bridge_drift(model, state, x, s, kind="reflected")
                worst_surrogate = max(worst_surrogate, np.linalg.norm(g[0]) / bound)
        assert 0 < worst_exact < 4.0
        assert 0 < worst_surrogate < 4.0

    def test_reflected_drift_matches_exact_kernel_gradient(self):
        # value-level cross-validation on the disk in the regime the bridge
        # actually operates in (separation up to a few diffusion lengths):
        # the two-well surrogate tracks the exact log-gradient up to the
        # curvature-correction scale.  Far boundary-hugging pairs are the
        # known weak spot of the tangent-plane image and are excluded here.
        model = disk()
        rng = np.random.default_rng(143)
        checked = 0
        rels = []
        for _ in range(80):
            s = rng.uniform(0.02, 0.08)
            z = model.sample_volume(rng, 1)
            x = model.sample_volume(rng, 1)
            sep = model.distance(z, x)[0]
            if not 0.08 <= sep <= 2.5 * math.sqrt(s):
                continue
            eps = 1e-5
            grad = np.zeros(2)
            usable = True
            for a in range(2):
                zp, zm = z.copy(), z.copy()
                zp[0, a] += eps
                zm[0, a] -= eps
                if model.boundary_distance(zp)[0] < 0 or model.boundary_distance(zm)[0] < 0:
                    usable = False
                    break
                kp = hk.neumann_heat_kernel(model, s, zp[0], x[0])
                km = hk.neumann_heat_kernel(model, s, zm[0], x[0])
                if kp < 1e-10 or km < 1e-10:
                    usable = False
                    break
                grad[a] = (math.log(kp) - math.log(km)) / (2 * eps)
            if not usable:
                continue
            checked += 1
            state = st.make_walk_state(model, z)
            g = st.bridge_drift(model, state, x, s, kind="reflected")[0]
            scale = np.linalg.norm(grad) + 1.0 / math.sqrt(s)
            rels.append(np.linalg.norm(g - grad) / scale)
        assert checked >= 12
        rels = np.array(rels)
        # typical agreement is tight; the tail (boundary-curvature and
        # multi-reflection effects the single image cannot see) stays bounded
        assert np.median(rels) < 0.06
        assert rels.max() < 0.35

    def test_varadhan_mode_suppresses_normal_component_in_collar(self):
        model = disk()
        h = 1e-4
        z = np.array([[1.0 - 0.5 * math.sqrt(h), 0.0]])
        state = st.make_walk_state(model, z)
        anchor = np.array([[0.5, 0.0]])
        g = st.bridge_drift(model, state, anchor, 0.05, kind="varadhan", h=h)
        nu = model.normal_frame(z, None)
        assert abs(np.einsum("pk,pk->p", g, nu)[0]) < 1e-12

    def test_boundary_pinned_normal_displacement_scales_like_sqrt_t(self):
        # mean distance to the boundary along a boundary-pinned loop is
        # O(sqrt(t)) (the collar-factor property)
        model = disk()
        ratios = []
        for t, seed in [(0.02, 43), (0.08, 47)]:
            anchors = np.broadcast_to(np.array([1.0, 0.0]), (1500, 2)).copy()
            batch = st.simulate_bridges(model, anchors, t, 120, st.RngStream(seed),
                                        record_positions=True)
            dist = model.boundary_distance(batch.positions.reshape(-1, 2))
            ratios.append(np.abs(dist).mean() / math.sqrt(t))
        assert 0.05 < ratios[0] < 2.0
        assert 0.6 < ratios[0] / ratios[1] < 1.6


class TestTransport:
    def test_flat_transport_is_identity(self):
        model = disk()
        path = st.simulate_path(model, np.array([0.2, 0.1]), 0.05, 50, st.RngStream(53),
                                anchor=np.array([0.2, 0.1]))
        U, V = st.evolve_transport(path)
        assert np.array_equal(U.mat, np.eye(4))
        assert np.array_equal(V.mat, np.eye(4))

    def test_inverse_contract(self):
        model = hemisphere()
        anchor = model.interior_point()
        path = st.simulate_path(model, anchor, 0.05, 200, st.RngStream(59), anchor=anchor)
        U, V = st.evolve_transport(path)
        assert np.abs((V @ U).mat - np.eye(4)).max() < 1e-8

    def test_ambient_transport_composition(self):
        # tau_{s,t} tau_{0,s} = tau_{0,t} for the ambient frame maps
        model = hemisphere()
        anchor = model.interior_point()
        path = st.simulate_path(model, anchor, 0.05, 100, st.RngStream(61), anchor=anchor)
        u0, u_mid, u_end = path.frames[0], path.frames[50], path.frames[-1]
        lhs = (u_end @ u_mid.T) @ (u_mid @ u0.T)
        rhs = u_end @ u0.T
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_holonomy_slope_near_one(self):
        # pinned-loop holonomy shrinks linearly with lifetime on the sphere
        model = hemisphere()
        anchor = model.interior_point()
        ts = np.array([1e-3, 1e-2, 1e-1])
        means = []
        for i, t in enumerate(ts):
            anchors = np.broadcast_to(anchor, (1500, 3)).copy()
            batch = st.simulate_bridges(model, anchors, t, 150, st.RngStream(67, i))
            O = batch.factor_O["cap"]
            dev = np.linalg.norm(O - np.eye(2), axis=(1, 2))
            means.append(dev.mean())
        slope = np.polyfit(np.log(ts), np.log(means), 1)[0]
        assert abs(slope - 1.0) < 0.2


class TestFunctional:
    def test_interior_only_flat_path_gives_identity(self):
        model = disk()
        x0 = np.zeros(2)
        path = st.simulate_path(model, x0, 0.01, 40, st.RngStream(71), anchor=x0)
        assert not path.contact.any()
        M = st.evolve_functional(path)
        assert np.array_equal(M.mat, np.eye(4))

    def test_single_contact_hand_oracle(self):
        # one contact on the unit disk with local time 0.3 and normal e_1:
        # M = exp(-DA * 0.3) Pi_tan = diag(1, 0, e^{-0.3}, 0) on (1, e1, e2, e12)
        model = disk()
        steps = 3
        path = st.PathSample(
            model=model, t=0.03, steps=steps,
            times=np.linspace(0, 0.03, steps + 1),
            positions=np.zeros((steps + 1, 2)),
            frames=None,
            lam=np.array([0.0, 0.3, 0.3, 0.3]),
            contact=np.array([False, True, False]),
            dlam=np.array([0.0, 0.3, 0.0]),
            nu_frame=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]),
            shape_coeff=np.array([0.0, 1.0, 0.0]),
            valid=True,
        )
        M = st.evolve_functional(path)
        expected = np.diag([1.0, 0.0, math.exp(-0.3), 0.0])
        assert np.abs(M.mat - expected).max() < 1e-12

    def test_normal_projection_annihilated_after_every_contact(self):
        model = disk()
        anchor = np.array([1.0, 0.0])
        path = st.simulate_path(model, anchor, 0.04, 120, st.RngStream(73), anchor=anchor)
        hits = np.nonzero(path.contact)[0]
        assert hits.size > 0
        for k in hits:
            M = st.evolve_functional(path, stop=k + 1)
            _, pi_nor = ext.boundary_projections(path.nu_frame[k])
            assert np.abs((M @ pi_nor).mat).max() < 1e-10

    def test_epsilon_mode_converges_monotonically(self):
        # free reflected paths: every contact carries positive local time,
        # so the penalty mode converges to the projection mode as eps -> 0.
        # (A pinned loop ending exactly on the boundary differs by design:
        # its final zero-local-time tie projects in exact-jump mode but is
        # the identity in the penalty mode.)
        model = disk()
        start = np.array([1.0, 0.0])
        for seed in (79, 80, 81):
            path = st.simulate_path(model, start, 0.04, 150, st.RngStream(seed))
            assert path.contact.sum() >= 3
            M_exact = st.evolve_functional(path, mode="exact-jump")
            gaps = []
            for eps in (1e-1, 1e-2, 1e-3):
                M_eps = st.evolve_functional(path, mode="epsilon", eps=eps)
                gaps.append(np.linalg.norm(M_eps.mat - M_exact.mat, 2))
            assert gaps[0] > gaps[1] > gaps[2]
            assert gaps[2] < 1e-2

    def test_multiplicativity(self):
        for model, anchor in [
            (disk(), np.array([1.0, 0.0])),
            (hemisphere(), geo.model_catalog("hemisphere", dimension=2).boundary_point()),
        ]:
            path = st.simulate_path(model, anchor, 0.05, 100, st.RngStream(83), anchor=anchor)
            mid = 50
            left = st.evolve_functional(path, stop=mid)
            right = st.evolve_functional(path, start=mid)
            full = st.evolve_functional(path)
            assert np.abs((left @ right).mat - full.mat).max() < 1e-8

    def test_degree_zero_block_is_one(self):
        # the degree-0 diagonal of M V is a probability-like mass: exactly
        # one per path, hence nonnegative in expectation
        for model, anchor in [
            (disk(), np.array([1.0, 0.0])),
            (hemisphere(), geo.model_catalog("hemisphere", dimension=2).boundary_point()),
        ]:
            path = st.simulate_path(model, anchor, 0.05, 80, st.RngStream(89), anchor=anchor)
            M = st.evolve_functional(path)
            assert M.mat[0, 0] == 1.0
            assert np.abs(M.mat[0, 1:]).max() < 1e-14
            _, V = st.evolve_transport(path)
            assert (M @ V).mat[0, 0] == 1.0


class TestFastPathAgainstOperators:
    @pytest.mark.parametrize(
        "model,anchor_kind",
        [
            ("disk-boundary", "boundary"),
            ("hemisphere-interior", "interior"),
            ("hemisphere-boundary", "boundary"),
            ("product-boundary", "boundary"),
        ],
    )
    def test_coupled_noise_agreement(self, model, anchor_kind):
        if model == "disk-boundary":
            m = disk()
        elif model.startswith("hemisphere"):
            m = hemisphere()
        else:
            m = geo.model_catalog("sphere-ball", sphere_dim=1, ball_dim=2)
        anchor = m.boundary_point() if anchor_kind == "boundary" else m.interior_point()
        for seed in (3, 4, 5):
            stream = st.RngStream(101, seed)
            path = st.simulate_path(m, anchor, 0.05, 60, stream, anchor=anchor)
            batch = st.simulate_bridges(m, anchor[None, :], 0.05, 60, stream)
            fast = batch.supertraces()[0]
            slow = st.path_supertrace(path)
            assert abs(fast - slow) < 1e-9
            assert abs(batch.lam[0] - path.lam[-1]) < 1e-12

    def test_epsilon_mode_agreement(self):
        m = disk()
        anchor = m.boundary_point()
        stream = st.RngStream(103, 0)
        path = st.simulate_path(m, anchor, 0.05, 60, stream, anchor=anchor)
        batch = st.simulate_bridges(m, anchor[None, :], 0.05, 60, stream,
                                    mode="epsilon", eps=0.05)
        M = st.evolve_functional(path, mode="epsilon", eps=0.05)
        _, V = st.evolve_transport(path)
        slow = (M @ V).supertrace()
        assert abs(batch.supertraces()[0] - slow) < 1e-9


class TestFlatSanity:
    def test_flat_supertrace_identities(self):
        # on flat models every interior path contributes supertrace zero and
        # the degree-zero diagonal of the functional is exactly one
        model = disk()
        anchors = np.broadcast_to(np.array([0.1, 0.0]), (500, 2)).copy()
        batch = st.simulate_bridges(model, anchors, 0.01, 50, st.RngStream(107))
        vals = batch.supertraces()
        no_contact = batch.contacts == 0
        assert np.abs(vals[no_contact]).max() == 0.0

    def test_cylinder_supertrace_identically_zero(self):
        model = geo.model_catalog("cylinder", length=1.0)
        anchors = model.sample_collar(st.RngStream(109).generator(), 400, 0.2)
        batch = st.simulate_bridges(model, anchors, 0.04, 80, st.RngStream(109, 1))
        assert np.abs(batch.supertraces()).max() < 1e-14

    def test_product_supertrace_identically_zero(self):
        model = geo.model_catalog("sphere-ball", sphere_dim=1, ball_dim=2)
        anchors = model.sample_collar(st.RngStream(113).generator(), 400, 0.2)
        batch = st.simulate_bridges(model, anchors, 0.04, 80, st.RngStream(113, 1))
        assert np.abs(batch.supertraces()).max() < 1e-14


class TestConfinement:
    def test_small_time_confined(self):
        model = disk()
        x = np.array([0.3, 0.0])
        rho = 0.5
        frac = st.confinement_fraction(model, x, rho, rho * rho / 100.0, 3000, st.RngStream(127))
        assert frac > 0.999

    def test_monotone_in_time(self):
        model = disk()
        x = np.array([0.3, 0.0])
        rho = 0.4
        fracs = [
            st.confinement_fraction(model, x, rho, t, 3000, st.RngStream(131, i))
            for i, t in enumerate([rho**2 / 6.0, rho**2 / 25.0, rho**2 / 100.0])
        ]
        se = 2.0 * math.sqrt(0.25 / 3000)
        assert fracs[1] >= fracs[0] - se
        assert fracs[2] >= fracs[1] - se

    def test_monotone_in_radius(self):
        model = disk()
        x = np.array([0.3, 0.0])
        t = 0.01
        f1 = st.confinement_fraction(model, x, 0.2, t, 3000, st.RngStream(137))
        f2 = st.confinement_fraction(model, x, 0.4, t, 3000, st.RngStream(137))
        assert f2 >= f1 - 2.0 * math.sqrt(0.25 / 3000)

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            st.confinement_fraction(disk(), np.array([0.0, 0.0]), -1.0, 0.01, 10, st.RngStream(1))


class TestResampleSignal:
    def test_orthogonality_abort(self):
        model = hemisphere()
        anchor = model.interior_point()
        path = st.simulate_path(model, anchor, 0.02, 30, st.RngStream(139), anchor=anchor)
        path.frames[-1][:, 0] *= 1.01  # corrupt the frame
        with pytest.raises(NumericalAbortError):
            st.evolve_transport(path)

    def test_validity_tracked(self):
        model = disk()
        anchors = np.broadcast_to(np.array([0.5, 0.0]), (64, 2)).copy()
        batch = st.simulate_bridges(model, anchors, 0.02, 40, st.RngStream(149))
        assert batch.alive.all()
