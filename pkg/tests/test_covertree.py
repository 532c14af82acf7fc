import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

import covercs.covertree as ct


def random_points(d, dim, seed, complex_=True):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(d, dim))
    if complex_:
        pts = pts + 1j * rng.uniform(-1, 1, size=(d, dim))
    return ct.PointSet(pts)


@pytest.fixture(scope="module")
def tree300():
    pts = random_points(300, 3, seed=0)
    return ct.build(pts), pts


class TestBuild:
    def test_single_point(self):
        tree = ct.build(ct.PointSet([[1.0 + 2j, 0.5]]))
        assert tree.sigma == 0.0
        assert tree.l_max == 0
        assert tree.node_count() == 1
        assert ct.validate_invariants(tree).all_ok

    def test_two_identical_points(self):
        tree = ct.build(ct.PointSet([[1.0, 2.0], [1.0, 2.0]]))
        assert tree.node_count() == 1
        assert tree.root.duplicate_ids == [1]
        assert ct.validate_invariants(tree).all_ok

    def test_random_100_points_3d(self):
        tree = ct.build(random_points(100, 3, seed=7, complex_=False))
        report = ct.validate_invariants(tree)
        assert report.all_ok, report.counterexamples

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("d,dim", [(10, 2), (60, 3), (200, 16)])
    def test_invariants_random_sets(self, d, dim, seed):
        tree = ct.build(random_points(d, dim, seed=seed))
        report = ct.validate_invariants(tree)
        assert report.all_ok, report.counterexamples

    def test_sigma_is_root_radius(self, tree300):
        tree, pts = tree300
        dists = np.linalg.norm(pts.coords - pts.coords[0], axis=1)
        assert tree.sigma == pytest.approx(dists.max(), rel=1e-15)

    def test_every_id_appears_exactly_once(self):
        coords = random_points(50, 3, seed=3).coords
        coords = np.vstack([coords, coords[:10]])  # duplicates of first ten
        tree = ct.build(ct.PointSet(coords))
        seen = []
        for node in tree.nodes():
            seen.append(node.point_id)
            seen.extend(node.duplicate_ids)
        assert sorted(seen) == list(range(60))

    def test_maxdist_within_scale_bound(self, tree300):
        tree, _ = tree300
        for node in tree.nodes():
            assert node.maxdist <= tree.sigma * 2.0 ** (1 - node.scale)

    def test_empty_point_set_rejected(self):
        with pytest.raises(ValueError):
            ct.PointSet(np.empty((0, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ct.PointSet([[np.nan, 0.0], [1.0, 2.0]])


class TestValidator:
    def test_injected_covering_fault(self, tree300):
        tree, pts = tree300
        # deepen a stored child's scale: the covering bound tightens past its
        # actual edge length
        victim = None
        for node in tree.nodes():
            for child in node.children:
                edge = np.linalg.norm(pts.coords[node.point_id] - pts.coords[child.point_id])
                if edge > tree.sigma * 2.0 ** (1 - child.scale - 4):
                    victim = child
                    break
            if victim:
                break
        assert victim is not None
        old = victim.scale
        victim.scale += 4
        report = ct.validate_invariants(tree)
        victim.scale = old
        assert not report.covering_ok
        assert "covering" in report.counterexamples
        assert str(victim.point_id) in report.counterexamples["covering"]

    def test_injected_maxdist_fault(self, tree300):
        tree, _ = tree300
        victim = next(n for n in tree.nodes() if n.children)
        old = victim.maxdist
        victim.maxdist = old / 2 - 1e-9
        report = ct.validate_invariants(tree)
        victim.maxdist = old
        assert not report.maxdist_ok
        assert "maxdist" in report.counterexamples

    def test_valid_tree_all_pass(self, tree300):
        tree, _ = tree300
        report = ct.validate_invariants(tree)
        assert report.all_ok
        assert report.counterexamples == {}


class TestBruteForce:
    def test_query_is_an_atom(self, tree300):
        _, pts = tree300
        res = ct.nn_exact_brute(pts, pts.coords[3])
        assert res.point_id == 3
        assert res.distance == 0.0
        assert res.distances_evaluated == pts.size

    def test_tie_breaks_to_smaller_id(self):
        pts = ct.PointSet([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]])
        res = ct.nn_exact_brute(pts, [0.0, 0.0])
        assert res.point_id == 0

    def test_dimension_mismatch(self, tree300):
        _, pts = tree300
        with pytest.raises(ValueError):
            ct.nn_exact_brute(pts, np.zeros(5))


class TestAnnSearch:
    def test_query_is_an_atom(self, tree300):
        tree, pts = tree300
        res = ct.ann_search(tree, pts.coords[17], 0, epsilon=0.0)
        assert res.point_id == 17
        assert res.distance == 0.0

    @pytest.mark.parametrize("epsilon", [0.0, 0.2, 0.4, 0.6, 0.8])
    def test_multiplicative_guarantee(self, epsilon):
        pts = random_points(1000, 3, seed=11)
        tree = ct.build(pts)
        rng = np.random.default_rng(12)
        for _ in range(200):
            q = rng.uniform(-1, 1, 3) + 1j * rng.uniform(-1, 1, 3)
            res = ct.ann_search(tree, q, int(rng.integers(0, 1000)), epsilon)
            oracle = ct.nn_exact_brute(pts, q)
            assert res.distance <= (1 + epsilon) * oracle.distance

    def test_epsilon_zero_matches_brute_distance(self, tree300):
        tree, pts = tree300
        rng = np.random.default_rng(13)
        for _ in range(100):
            q = rng.uniform(-1, 1, 3) + 1j * rng.uniform(-1, 1, 3)
            res = ct.ann_search(tree, q, 5, 0.0)
            oracle = ct.nn_exact_brute(pts, q)
            assert res.distance <= oracle.distance * (1 + 1e-12)

    def test_huge_epsilon_stops_immediately(self):
        # root sits between a distant query and the data cloud, so the warm
        # start at the root is the true NN and d_min exceeds sigma: the guard
        # sigma*2^(-l+1)*(1+1/eps) > d_min fails at scale 0 or 1
        rng = np.random.default_rng(8)
        cloud = rng.normal(size=(99, 2)).astype(complex)
        pts = ct.PointSet(np.vstack([[[10.0 + 0j, 0.0]], cloud]))
        tree = ct.build(pts)
        q = np.array([25.0 + 0j, 0.0])
        oracle = ct.nn_exact_brute(pts, q)
        assert oracle.point_id == tree.root.point_id
        res = ct.ann_search(tree, q, oracle.point_id, epsilon=1e6)
        assert res.point_id == oracle.point_id
        assert res.distances_evaluated <= 1 + len(tree.root.children)

    def test_invalid_estimate_id(self, tree300):
        tree, _ = tree300
        with pytest.raises(ValueError):
            ct.ann_search(tree, np.zeros(3), 4000, 0.0)

    def test_negative_epsilon(self, tree300):
        tree, _ = tree300
        with pytest.raises(ValueError):
            ct.ann_search(tree, np.zeros(3), 0, -0.1)

    def test_counter_audits_against_shadow(self, tree300, monkeypatch):
        tree, pts = tree300
        shadow = {"n": 0}
        orig_batch, orig_one = ct._dist_batch, ct._dist_one

        def batch(coords, ids, query, counter):
            shadow["n"] += len(ids)
            return orig_batch(coords, ids, query, counter)

        def one(coords, i, query, counter):
            shadow["n"] += 1
            return orig_one(coords, i, query, counter)

        monkeypatch.setattr(ct, "_dist_batch", batch)
        monkeypatch.setattr(ct, "_dist_one", one)
        rng = np.random.default_rng(5)
        for eps in (0.0, 0.4):
            for _ in range(20):
                shadow["n"] = 0
                q = rng.uniform(-1, 1, 3) + 1j * rng.uniform(-1, 1, 3)
                res = ct.ann_search(tree, q, int(rng.integers(0, pts.size)), eps)
                assert res.distances_evaluated == shadow["n"]

    def test_concurrent_queries_match_serial(self, tree300):
        tree, pts = tree300
        rng = np.random.default_rng(9)
        queries = rng.uniform(-1, 1, (64, 3)) + 1j * rng.uniform(-1, 1, (64, 3))
        serial = [ct.ann_search(tree, q, 0, 0.2) for q in queries]
        with ThreadPoolExecutor(max_workers=8) as pool:
            parallel = list(pool.map(lambda q: ct.ann_search(tree, q, 0, 0.2), queries))
        assert [(r.point_id, r.distance, r.distances_evaluated) for r in serial] == \
               [(r.point_id, r.distance, r.distances_evaluated) for r in parallel]


class TestAdditiveSearch:
    def test_zero_budget_matches_exact(self, tree300):
        tree, pts = tree300
        rng = np.random.default_rng(21)
        for _ in range(50):
            q = rng.uniform(-1, 1, 3) + 1j * rng.uniform(-1, 1, 3)
            res = ct.ann_search_additive(tree, q, 0, 0.0)
            oracle = ct.nn_exact_brute(pts, q)
            assert res.distance <= oracle.distance * (1 + 1e-12)

    def test_additive_guarantee(self):
        pts = random_points(500, 3, seed=31)
        tree = ct.build(pts)
        rng = np.random.default_rng(32)
        for _ in range(200):
            q = rng.uniform(-1, 1, 3) + 1j * rng.uniform(-1, 1, 3)
            res = ct.ann_search_additive(tree, q, int(rng.integers(0, 500)), 0.01)
            oracle = ct.nn_exact_brute(pts, q)
            assert res.distance**2 <= oracle.distance**2 + 0.01

    def test_vacuous_budget_still_meets_contract(self, tree300):
        tree, pts = tree300
        budget = (2 * tree.sigma) ** 2
        rng = np.random.default_rng(33)
        for _ in range(30):
            # queries inside the root ball
            q = pts.coords[int(rng.integers(0, pts.size))] + 0.01 * rng.uniform(-1, 1, 3)
            res = ct.ann_search_additive(tree, q, 0, budget)
            oracle = ct.nn_exact_brute(pts, q)
            assert res.distance**2 <= oracle.distance**2 + budget

    def test_negative_budget(self, tree300):
        tree, _ = tree300
        with pytest.raises(ValueError):
            ct.ann_search_additive(tree, np.zeros(3), 0, -1e-9)


class TestCostProfile:
    def test_tree_exact_cheaper_than_brute_in_median(self):
        # clustered data rewards pruning
        rng = np.random.default_rng(41)
        centers = rng.uniform(-10, 10, size=(10, 3))
        pts = ct.PointSet(np.concatenate(
            [c + 0.1 * rng.normal(size=(80, 3)) for c in centers]))
        tree = ct.build(pts)
        queries = rng.uniform(-10, 10, size=(50, 3)).astype(complex)
        prof = ct.query_cost_profile(tree, queries, 0.0)
        assert prof["median"] <= pts.size

    def test_single_point_tree_costs_one(self):
        tree = ct.build(ct.PointSet([[0.5, 0.5]]))
        prof = ct.query_cost_profile(tree, np.ones((5, 2)), 0.4)
        assert prof["per_query"] == [1] * 5

    def test_empty_query_list_rejected(self, tree300):
        tree, _ = tree300
        with pytest.raises(ValueError):
            ct.query_cost_profile(tree, np.empty((0, 3)), 0.0)

    def test_deterministic(self, tree300):
        tree, _ = tree300
        rng = np.random.default_rng(43)
        queries = rng.uniform(-1, 1, (20, 3)).astype(complex)
        assert ct.query_cost_profile(tree, queries, 0.2) == \
               ct.query_cost_profile(tree, queries, 0.2)


class TestAspectRatio:
    def test_known_value(self):
        pts = ct.PointSet([[0.0], [1.0], [3.0]])
        assert ct.aspect_ratio(pts) == pytest.approx(3.0)

    def test_size_cap(self):
        pts = random_points(10, 2, seed=1)
        with pytest.raises(ValueError):
            ct.aspect_ratio(pts, max_points=5)


class TestSerialization:
    def test_roundtrip_bit_exact(self, tree300, tmp_path):
        tree, pts = tree300
        path = tmp_path / "tree.json"
        ct.save_tree(tree, path)
        loaded = ct.load_tree(path, pts)
        original = [(n.point_id, n.scale, n.maxdist, len(n.children), n.duplicate_ids)
                    for n in tree.nodes()]
        restored = [(n.point_id, n.scale, n.maxdist, len(n.children), n.duplicate_ids)
                    for n in loaded.nodes()]
        assert original == restored
        assert loaded.sigma == tree.sigma
        assert loaded.l_max == tree.l_max

    def test_header_fields(self, tree300, tmp_path):
        tree, pts = tree300
        path = tmp_path / "tree.json"
        ct.save_tree(tree, path)
        payload = json.loads(path.read_text())
        assert payload["d"] == pts.size
        assert payload["dim"] == pts.dim
        assert payload["sigma"] == tree.sigma
        assert payload["l_max"] == tree.l_max

    def test_wrong_point_set_rejected(self, tree300, tmp_path):
        tree, _ = tree300
        path = tmp_path / "tree.json"
        ct.save_tree(tree, path)
        with pytest.raises(ValueError):
            ct.load_tree(path, random_points(10, 3, seed=0))

    def test_loaded_tree_searches_identically(self, tree300, tmp_path):
        tree, pts = tree300
        path = tmp_path / "tree.json"
        ct.save_tree(tree, path)
        loaded = ct.load_tree(path, pts)
        rng = np.random.default_rng(51)
        for _ in range(20):
            q = rng.uniform(-1, 1, 3) + 1j * rng.uniform(-1, 1, 3)
            a = ct.ann_search(tree, q, 0, 0.3)
            b = ct.ann_search(loaded, q, 0, 0.3)
            assert (a.point_id, a.distance, a.distances_evaluated) == \
                   (b.point_id, b.distance, b.distances_evaluated)
