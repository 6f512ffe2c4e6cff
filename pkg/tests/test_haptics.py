import time

import numpy as np
import pytest

from teleus.haptics import (DegenerateNeighborhood, EmptyCloud, HapticParams,
                            PointCloudOctree, ProxyState, build_octree,
                            fit_plane, haptic_force, knn, load_ply, save_ply,
                            sample_phantom_surface, update_proxy)
from teleus.phantom import SyntheticPhantom


def brute_knn(points, p, n):
    d = np.linalg.norm(points - p, axis=1)
    order = np.lexsort((np.arange(len(points)), d))[:n]
    return points[order]


def flat_cloud(rng, n=2000, z=0.0, extent=0.1):
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(-extent, extent, size=(n, 2))
    pts[:, 2] = z
    return pts


class TestOctree:
    def test_single_point(self):
        tree = build_octree([[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(knn(tree, [0, 0, 0], 1),
                                      [[1.0, 2.0, 3.0]])

    def test_empty_raises(self):
        with pytest.raises(EmptyCloud):
            build_octree(np.empty((0, 3)))

    def test_membership(self, rng):
        pts = rng.uniform(-1, 1, size=(100_000, 3))
        tree = build_octree(pts)
        for i in rng.integers(0, len(pts), size=50):
            nearest = knn(tree, pts[i], 1)[0]
            assert np.linalg.norm(nearest - pts[i]) == 0.0

    def test_duplicates_preserved(self):
        pts = np.tile([[0.5, 0.5, 0.5]], (5, 1))
        tree = build_octree(pts, leaf_capacity=2)
        assert len(knn(tree, [0.5, 0.5, 0.5], 5)) == 5

    def test_depth_capped_on_coincident_points(self):
        # Coincident points can never split; the build must still terminate.
        pts = np.vstack([np.tile([[0.1, 0.2, 0.3]], (40, 1)),
                         [[0.9, 0.9, 0.9]]])
        tree = build_octree(pts, leaf_capacity=4)
        assert len(knn(tree, [0.1, 0.2, 0.3], 40)) == 40


class TestKnn:
    def test_matches_brute_force(self, rng):
        for _ in range(200):
            m = int(rng.integers(1, 1000))
            pts = rng.uniform(-1, 1, size=(m, 3))
            tree = build_octree(pts, leaf_capacity=int(rng.integers(1, 32)))
            p = rng.uniform(-1.5, 1.5, size=3)
            n = int(rng.integers(1, 20))
            got = knn(tree, p, n)
            want = brute_knn(pts, p, n)
            d_got = np.linalg.norm(got - p, axis=1)
            d_want = np.linalg.norm(want - p, axis=1)
            np.testing.assert_allclose(d_got, d_want, atol=0)
            assert np.all(np.diff(d_got) >= 0)

    def test_n_larger_than_cloud(self, rng):
        pts = rng.uniform(-1, 1, size=(7, 3))
        tree = build_octree(pts)
        got = knn(tree, [0, 0, 0], 50)
        assert len(got) == 7
        d = np.linalg.norm(got, axis=1)
        assert np.all(np.diff(d) >= 0)

    def test_performance_budget(self, rng):
        pts = rng.uniform(-0.5, 0.5, size=(100_000, 3))
        t0 = time.perf_counter()
        tree = build_octree(pts)
        queries = rng.uniform(-0.5, 0.5, size=(10_000, 3))
        for p in queries:
            knn(tree, p, 15)
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0, f"build+10k queries took {elapsed:.2f}s"


class TestFitPlane:
    def test_exact_plane(self, rng):
        pts = flat_cloud(rng, n=20)
        centroid, normal = fit_plane(pts)
        np.testing.assert_allclose(centroid, pts.mean(axis=0), atol=1e-15)
        assert abs(abs(normal[2]) - 1.0) < 1e-12

    def test_noisy_plane_monte_carlo(self, rng):
        errs = []
        for _ in range(200):
            pts = flat_cloud(rng, n=15, extent=0.02)
            pts[:, 2] += rng.normal(0, 0.001, size=15)
            _, normal = fit_plane(pts)
            errs.append(np.degrees(np.arccos(min(abs(normal[2]), 1.0))))
        assert np.percentile(errs, 95) < 5.0

    def test_collinear_raises(self):
        pts = np.outer(np.linspace(0, 1, 5), [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateNeighborhood):
            fit_plane(pts)

    def test_coincident_raises(self):
        with pytest.raises(DegenerateNeighborhood):
            fit_plane(np.ones((4, 3)))

    def test_too_few_raises(self):
        with pytest.raises(DegenerateNeighborhood):
            fit_plane(np.array([[0, 0, 0], [1, 0, 0]]))


class TestUpdateProxy:
    params = HapticParams(exterior_point=np.array([0.0, 0.0, 0.5]))

    def tree(self, rng):
        return build_octree(flat_cloud(rng, n=5000, extent=0.05))

    def test_free_space_far_above(self, rng):
        tree = self.tree(rng)
        state = update_proxy(ProxyState.free([0, 0, 0.1]), [0, 0, 0.1],
                             tree, self.params)
        assert not state.in_contact
        np.testing.assert_array_equal(state.proxy, [0, 0, 0.1])

    def test_penetration_projects_to_plane(self, rng):
        tree = self.tree(rng)
        hip = np.array([0.01, -0.01, -0.005])
        state = update_proxy(ProxyState.free(hip + [0, 0, 0.01]), hip,
                             tree, self.params)
        assert state.in_contact
        assert abs(state.proxy[2]) < 1e-4   # plane fitted from flat samples
        np.testing.assert_allclose(state.proxy[:2], hip[:2], atol=1e-4)
        assert state.surface_normal[2] > 0.99

    def test_lateral_slide_stays_on_surface(self, rng):
        tree = self.tree(rng)
        state = ProxyState.free([0, 0, 0.01])
        for x in np.linspace(-0.02, 0.02, 81):
            hip = np.array([x, 0.0, -0.004])
            state = update_proxy(state, hip, tree, self.params)
            assert state.in_contact
            assert abs(state.proxy[2]) < 1e-4
            # proxy never below the fitted plane beyond tolerance
            neighbors = knn(tree, hip, self.params.n)
            centroid, normal = fit_plane(neighbors)
            if normal[2] < 0:
                normal = -normal
            assert (state.proxy - centroid) @ normal > -1e-6

    def test_sparse_region_is_free(self, rng):
        tree = self.tree(rng)
        hip = np.array([1.0, 1.0, -0.005])  # far from every point
        state = update_proxy(ProxyState.free(hip), hip, tree, self.params)
        assert not state.in_contact

    def test_normal_continuity_in_contact(self, rng):
        tree = self.tree(rng)
        state = ProxyState.free([0, 0, 0.01])
        hip = np.array([0.0, 0.0, -0.003])
        state = update_proxy(state, hip, tree, self.params)
        first = state.surface_normal.copy()
        for _ in range(10):
            state = update_proxy(state, hip, tree, self.params)
            assert state.surface_normal @ first > 0.99


class TestHapticForce:
    def test_no_contact_zero(self):
        f = haptic_force([0, 0, 0], [0, 0, 0], ProxyState.free([0, 0, 0]),
                         HapticParams())
        np.testing.assert_array_equal(f, 0.0)

    def test_hand_evaluated_spring(self):
        params = HapticParams(k=1000.0, d=0.0)
        proxy = ProxyState(proxy=np.array([0.0, 0.0, 0.0]), in_contact=True,
                           surface_normal=np.array([0.0, 0.0, 1.0]))
        f = haptic_force([0, 0, -0.002], [0, 0, 0], proxy, params)
        np.testing.assert_allclose(f, [0, 0, 2.0], atol=1e-12)

    def test_deep_penetration_clamped(self):
        params = HapticParams(k=1000.0, d=0.0, f_max=15.0)
        proxy = ProxyState(proxy=np.array([0.0, 0.0, 0.0]), in_contact=True,
                           surface_normal=np.array([0.0, 0.0, 1.0]))
        f = haptic_force([0, 0, -0.5], [0, 0, 0], proxy, params)
        assert np.linalg.norm(f) == pytest.approx(15.0, abs=1e-12)

    def test_never_pulls_inward(self):
        params = HapticParams(k=1000.0, d=50.0)
        proxy = ProxyState(proxy=np.array([0.0, 0.0, 0.0]), in_contact=True,
                           surface_normal=np.array([0.0, 0.0, 1.0]))
        # retracting fast: damping exceeds the spring
        f = haptic_force([0, 0, -0.001], [0, 0, 10.0], proxy, params)
        assert f @ proxy.surface_normal >= 0.0

    def test_flat_cloud_force_linear_in_depth(self, rng):
        params = HapticParams(k=800.0, d=5.0,
                              exterior_point=np.array([0.0, 0.0, 0.5]))
        tree = build_octree(flat_cloud(rng, n=5000, extent=0.05))
        depths = np.linspace(0.0, 0.010, 21)
        mags = []
        state = ProxyState.free([0, 0, 0.01])
        for depth in depths:
            hip = np.array([0.0, 0.0, -depth])
            state = update_proxy(state, hip, tree, params)
            f = haptic_force(hip, np.zeros(3), state, params)
            mags.append(np.linalg.norm(f))
            if depth > 0:
                angle = np.degrees(np.arccos(
                    min(f[2] / np.linalg.norm(f), 1.0)))
                assert angle < 2.0
        mags = np.array(mags)
        slope, intercept = np.polyfit(depths, mags, 1)
        pred = slope * depths + intercept
        ss_res = np.sum((mags - pred) ** 2)
        ss_tot = np.sum((mags - mags.mean()) ** 2)
        assert 1.0 - ss_res / ss_tot > 0.999

    def test_force_continuity_along_path(self, rng):
        params = HapticParams(exterior_point=np.array([0.0, 0.0, 0.5]))
        tree = build_octree(flat_cloud(rng, n=5000, extent=0.05))
        dt = 0.001
        state = ProxyState.free([0, 0, 0.02])
        f_prev, hip_prev, vel_prev = np.zeros(3), None, np.zeros(3)
        for t in np.arange(0.0, 1.0, dt):
            # descend through the surface then slide
            hip = np.array([0.01 * np.sin(2 * np.pi * t), 0.0,
                            0.02 - 0.05 * t if t < 0.5 else -0.005])
            vel = (hip - hip_prev) / dt if hip_prev is not None else np.zeros(3)
            state = update_proxy(state, hip, tree, params)
            f = haptic_force(hip, vel, state, params)
            if hip_prev is not None:
                step = np.linalg.norm(hip - hip_prev)
                vstep = np.linalg.norm(vel - vel_prev)
                bound = params.k * step + params.d * vstep + 1e-9
                assert np.linalg.norm(f - f_prev) < bound + 0.5
            f_prev, hip_prev, vel_prev = f, hip, vel


class TestPly:
    def test_round_trip(self, tmp_path, rng):
        pts = rng.uniform(-1, 1, size=(500, 3)).astype(np.float32)
        path = tmp_path / "cloud.ply"
        save_ply(path, pts)
        got = load_ply(path)
        np.testing.assert_allclose(got, pts, atol=1e-7)

    def test_rejects_ascii(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 0\n"
                        "end_header\n")
        with pytest.raises(ValueError):
            load_ply(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.ply"
        with open(path, "wb") as fh:
            fh.write(b"ply\nformat binary_little_endian 1.0\n"
                     b"element vertex 10\n"
                     b"property float x\nproperty float y\nproperty float z\n"
                     b"end_header\n")
            fh.write(b"\x00" * 12)  # only one vertex of ten
        with pytest.raises(ValueError):
            load_ply(path)


class TestPhantomSampler:
    def test_samples_on_surface(self, rng):
        phantom = SyntheticPhantom()
        pts = sample_phantom_surface(phantom, 2000, rng)
        sd = phantom.signed_distance(pts)
        np.testing.assert_allclose(sd, 0.0, atol=1e-12)

    def test_covers_top_face(self, rng):
        phantom = SyntheticPhantom()
        pts = sample_phantom_surface(phantom, 5000, rng)
        top = pts[np.isclose(pts[:, 2], phantom.top_z)]
        assert len(top) > 500
