import numpy as np
import pytest

from refcomplete import geometry as G


def brute_knn(points, q, k):
    d2 = ((points - np.asarray(q)) ** 2).sum(axis=1)
    return np.lexsort((np.arange(len(points)), d2))[:k]


def brute_ball(points, q, radius, max_k):
    d2 = ((points - np.asarray(q)) ** 2).sum(axis=1)
    inside = np.flatnonzero(d2 < radius * radius)
    if inside.size == 0:
        return brute_knn(points, q, 1)
    order = np.lexsort((inside, d2[inside]))
    return inside[order[:max_k]]


def brute_chamfer_l2(a, b):
    da = np.array([((b - p) ** 2).sum(axis=1).min() for p in a])
    db = np.array([((a - p) ** 2).sum(axis=1).min() for p in b])
    return da.mean() + db.mean()


class TestKnn:
    def test_query_on_cloud_point(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0]], dtype=float)
        idx = G.SpatialIndex(pts)
        assert idx.knn([1, 0, 0], 1)[0] == 1

    def test_axis_cloud(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [5, 0, 0]], dtype=float)
        idx = G.SpatialIndex(pts)
        np.testing.assert_array_equal(idx.knn([1.9, 0, 0], 2), [2, 1])

    def test_k_exceeds_n(self):
        idx = G.SpatialIndex(np.zeros((3, 3)))
        with pytest.raises(G.ContractError):
            idx.knn([0, 0, 0], 4)

    @pytest.mark.parametrize("trial", range(20))
    def test_matches_brute_force(self, trial):
        rng = np.random.default_rng(100 + trial)
        n = int(rng.integers(2, 400))
        pts = rng.normal(size=(n, 3))
        idx = G.SpatialIndex(pts)
        for _ in range(5):
            q = rng.normal(size=3)
            k = int(rng.integers(1, n + 1))
            np.testing.assert_array_equal(idx.knn(q, k), brute_knn(pts, q, k))


class TestBallQuery:
    def test_hand_case(self):
        pts = np.array([[0, 0, 0], [0.5, 0, 0], [2, 0, 0]], dtype=float)
        idx = G.SpatialIndex(pts)
        got = set(idx.ball([0, 0, 0], 1.0, 16).tolist())
        assert got == {0, 1}

    def test_fallback_far_center(self):
        pts = np.array([[0, 0, 0], [1, 1, 1]], dtype=float)
        idx = G.SpatialIndex(pts)
        np.testing.assert_array_equal(idx.ball([50, 0, 0], 0.1, 4), [1])

    def test_radius_contract(self):
        idx = G.SpatialIndex(np.zeros((2, 3)))
        with pytest.raises(G.ContractError):
            idx.ball([0, 0, 0], 0.0, 4)

    @pytest.mark.parametrize("trial", range(20))
    def test_matches_brute_force(self, trial):
        rng = np.random.default_rng(300 + trial)
        n = int(rng.integers(2, 400))
        pts = rng.normal(size=(n, 3))
        idx = G.SpatialIndex(pts)
        for _ in range(5):
            q = rng.normal(size=3) * 0.5
            r = float(rng.uniform(0.05, 1.5))
            mk = int(rng.integers(1, 32))
            np.testing.assert_array_equal(idx.ball(q, r, mk), brute_ball(pts, q, r, mk))


class TestFps:
    def test_collinear_hand_run(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        assert set(G.fps(pts, 2, start=0).tolist()) == {0, 3}

    def test_m_equals_n(self):
        pts = np.random.default_rng(5).normal(size=(17, 3))
        assert set(G.fps(pts, 17).tolist()) == set(range(17))

    def test_m_exceeds_n(self):
        with pytest.raises(G.ContractError):
            G.fps(np.zeros((3, 3)), 4)

    def test_beats_random_sampling_spread(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(200, 3))

        def min_pairwise(sub):
            d = sub[:, None, :] - sub[None, :, :]
            d2 = (d * d).sum(axis=2)
            return np.sqrt(d2[np.triu_indices(len(sub), k=1)].min())

        fps_spread = min_pairwise(pts[G.fps(pts, 16)])
        for _ in range(50):
            sample = rng.choice(200, size=16, replace=False)
            assert fps_spread >= min_pairwise(pts[sample])


class TestChamfer:
    def test_identity(self):
        pts = np.random.default_rng(7).normal(size=(50, 3))
        assert G.chamfer_l2(pts, pts) == 0.0

    def test_hand_value_l2(self):
        a = np.array([[0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0]])
        assert G.chamfer_l2(a, b) == 2.0

    def test_hand_value_l1(self):
        a = np.array([[0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0]])
        assert G.chamfer_l1(a, b) == 1.0

    def test_symmetry_exact(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(60, 3))
        assert G.chamfer_l2(a, b) == G.chamfer_l2(b, a)

    def test_permutation_invariance_exact(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=(64, 3)), rng.normal(size=(48, 3))
        pa = a[rng.permutation(64)]
        pb = b[rng.permutation(48)]
        assert G.chamfer_l2(a, b) == G.chamfer_l2(pa, pb)
        assert G.chamfer_l1(a, b) == G.chamfer_l1(pa, pb)

    @pytest.mark.parametrize("trial", range(25))
    def test_accelerated_equals_brute(self, trial):
        rng = np.random.default_rng(500 + trial)
        a = rng.normal(size=(int(rng.integers(1, 300)), 3))
        b = rng.normal(size=(int(rng.integers(1, 300)), 3))
        kd = G.chamfer_l2(a, b, method="kdtree")
        brute = G.chamfer_l2(a, b, method="brute")
        ref = brute_chamfer_l2(a, b)
        assert abs(kd - brute) <= 1e-9 * max(abs(brute), 1e-30)
        assert abs(brute - ref) <= 1e-9 * max(abs(ref), 1e-30)

    def test_blas_path_close(self):
        rng = np.random.default_rng(11)
        a, b = rng.normal(size=(128, 3)), rng.normal(size=(96, 3))
        assert abs(G.chamfer_l2(a, b, method="blas") - G.chamfer_l2(a, b, method="brute")) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(G.ContractError):
            G.chamfer_l2(np.zeros((0, 3)), np.zeros((1, 3)))


class TestFScore:
    def test_identity(self):
        pts = np.random.default_rng(12).normal(size=(30, 3))
        assert G.f_score(pts, pts, 0.01) == 1.0

    def test_hand_value(self):
        pred = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        gt = np.array([[0.0, 0.0, 0.0]])
        assert abs(G.f_score(pred, gt, 0.5) - 2.0 / 3.0) < 1e-15

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(13)
        pred, gt = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
        scores = [G.f_score(pred, gt, t) for t in np.linspace(0.05, 3.0, 12)]
        assert all(b >= a for a, b in zip(scores, scores[1:]))

    def test_tau_contract(self):
        with pytest.raises(G.ContractError):
            G.f_score(np.zeros((1, 3)), np.zeros((1, 3)), 0.0)


class TestFidelity:
    def test_subset_zero(self):
        rng = np.random.default_rng(14)
        inp = rng.normal(size=(10, 3))
        out = np.vstack([inp, rng.normal(size=(5, 3))])
        assert G.fidelity(inp, out) == 0.0

    def test_hand_value(self):
        assert G.fidelity(np.array([[0.0, 0.0, 0.0]]), np.array([[0.0, 0.0, 1.0]])) == 1.0

    def test_directional_term_of_chamfer(self):
        rng = np.random.default_rng(15)
        a, b = rng.normal(size=(20, 3)), rng.normal(size=(25, 3))
        assert G.fidelity(a, b) + G.fidelity(b, a) == G.chamfer_l2(a, b)


class TestMmd:
    def test_self_inclusion_zero(self):
        rng = np.random.default_rng(16)
        out = rng.normal(size=(20, 3))
        cands = [rng.normal(size=(20, 3)), out.copy(), rng.normal(size=(20, 3))]
        assert G.mmd(out, cands) == 0.0

    def test_single_candidate(self):
        rng = np.random.default_rng(17)
        out, c = rng.normal(size=(15, 3)), rng.normal(size=(18, 3))
        assert G.mmd(out, [c]) == G.chamfer_l2(out, c)

    def test_min_over_three(self):
        rng = np.random.default_rng(18)
        out = rng.normal(size=(12, 3))
        cands = [rng.normal(size=(12, 3)) for _ in range(3)]
        assert G.mmd(out, cands) == min(G.chamfer_l2(out, c) for c in cands)

    def test_empty_list(self):
        with pytest.raises(G.ContractError):
            G.mmd(np.zeros((1, 3)), [])
