"""Cover tree over a finite point set with instrumented exact/approximate search.

The tree is a levelled structure: the root sits at scale 0 and covers every
point within ``sigma`` (the max distance from the root point to any other).
A node at scale ``l`` covers its children within ``sigma * 2**-l`` and nodes
sharing a scale are more than ``sigma * 2**-l`` apart.  Self-chains (a node
re-appearing as its only relevant child at deeper scales) are collapsed: a
stored child may carry any scale larger than its parent's, and the covering
bound for a stored edge is taken at the child's scale minus one.

Every Euclidean distance computed during build or query passes through one
helper so the distance counters are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointSet",
    "CoverTreeNode",
    "CoverTree",
    "DistanceCounter",
    "SearchResult",
    "InvariantReport",
    "build",
    "validate_invariants",
    "nn_exact_brute",
    "ann_search",
    "ann_search_additive",
    "query_cost_profile",
    "aspect_ratio",
    "save_tree",
    "load_tree",
]

# Guards against float round-off flipping prune/stop comparisons that sit
# exactly on a boundary; scaled by sigma (or sigma**2 for squared quantities).
_PRUNE_GUARD = 1e-12


class PointSet:
    """Finite set of D-dimensional points, ids 0..d-1 (row index).

    Complex coordinates are used throughout; real data embeds with zero
    imaginary part.  The Euclidean distance on C^D equals the distance on
    R^(2D) of the paired real coordinates.
    """

    def __init__(self, points):
        pts = np.asarray(points)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("point set must be a non-empty (d, D) array")
        if not np.all(np.isfinite(pts.view(np.float64) if np.iscomplexobj(pts) else pts)):
            raise ValueError("point set contains non-finite coordinates")
        self.coords = pts.astype(np.complex128, copy=False)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass
class DistanceCounter:
    """Counts pairwise Euclidean distance evaluations."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass
class SearchResult:
    point_id: int
    distance: float
    distances_evaluated: int


class CoverTreeNode:
    __slots__ = ("point_id", "scale", "children", "maxdist", "duplicate_ids", "_kids_by_scale")

    def __init__(self, point_id: int, scale: int):
        self.point_id = point_id
        self.scale = scale
        self.children: list[CoverTreeNode] = []
        self.maxdist = 0.0
        self.duplicate_ids: list[int] = []
        self._kids_by_scale: dict[int, list[CoverTreeNode]] = {}


def _dist_batch(coords: np.ndarray, ids, query: np.ndarray, counter: DistanceCounter) -> np.ndarray:
    """Distances from `query` to coords[ids]; one counter tick per row."""
    diff = coords[ids] - query
    d = np.sqrt(np.abs(diff * diff.conj()).real.sum(axis=1))
    counter.add(len(ids))
    return d


def _dist_one(coords: np.ndarray, i: int, query: np.ndarray, counter: DistanceCounter) -> float:
    diff = coords[i] - query
    counter.add(1)
    return float(np.sqrt(np.abs(diff * diff.conj()).real.sum()))


class CoverTree:
    """Immutable after build; concurrent read-only queries are safe."""

    def __init__(self, points: PointSet, root: CoverTreeNode, sigma: float,
                 l_max: int, build_distances: int):
        self.points = points
        self.root = root
        self.sigma = sigma
        self.l_max = l_max
        self.build_distances = build_distances

    def nodes(self) -> list[CoverTreeNode]:
        """All nodes in preorder (children in (scale, id) order)."""
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(n.children))
        return out

    def node_count(self) -> int:
        return len(self.nodes())


def build(points: PointSet) -> CoverTree:
    """Build a cover tree by single-point insertion in id order.

    The root is point 0 and sigma is its max distance to any other point.
    Each remaining point descends the partial tree and attaches at the
    deepest scale where covering holds and separation is preserved; exact
    duplicates of an existing node are recorded in its duplicate list.
    """
    if not isinstance(points, PointSet):
        points = PointSet(points)
    coords = points.coords
    d = points.size
    counter = DistanceCounter()

    root = CoverTreeNode(0, 0)
    if d == 1:
        return CoverTree(points, root, 0.0, 0, counter.count)

    root_dists = _dist_batch(coords, np.arange(1, d), coords[0], counter)
    sigma = float(root_dists.max())

    if sigma == 0.0:
        root.duplicate_ids = list(range(1, d))
        return CoverTree(points, root, 0.0, 0, counter.count)

    for pid in range(1, d):
        _insert(coords, root, sigma, pid, counter)

    l_max = _finalize(coords, root, counter)
    return CoverTree(points, root, sigma, l_max, counter.count)


def _insert(coords, root, sigma, pid, counter):
    p = coords[pid]
    d_root = _dist_one(coords, root.point_id, p, counter)
    if d_root == 0.0:
        root.duplicate_ids.append(pid)
        return

    # Descend: frame at level l holds candidates (node, dist) known to include
    # every level-l node within sigma*2**(-l+1) of p.
    frames = [[(root, d_root)]]
    l = 0
    while True:
        radius = sigma * 2.0 ** (-l)
        cand = frames[-1]
        new_pairs = []
        kids = []
        for node, _ in cand:
            kids.extend(node._kids_by_scale.get(l + 1, ()))
        if kids:
            kd = _dist_batch(coords, [k.point_id for k in kids], p, counter)
            for k, dk in zip(kids, kd):
                if dk == 0.0:
                    k.duplicate_ids.append(pid)
                    return
                new_pairs.append((k, float(dk)))
        level_down = cand + new_pairs
        if min(dd for _, dd in level_down) > radius:
            break
        frames.append([(n, dd) for n, dd in level_down if dd <= radius])
        l += 1

    # Unwind: attach at the deepest frame whose best candidate still covers p.
    for l_f in range(len(frames) - 1, -1, -1):
        best, d_best = min(frames[l_f], key=lambda nd: (nd[1], nd[0].point_id))
        if d_best <= sigma * 2.0 ** (-l_f):
            child = CoverTreeNode(pid, l_f + 1)
            best.children.append(child)
            best._kids_by_scale.setdefault(l_f + 1, []).append(child)
            return
    raise AssertionError("unreachable: root always covers (d <= sigma)")


def _finalize(coords, root, counter) -> int:
    """Sort children, compute true maxdist per node, return deepest scale."""
    l_max = 0
    order = []  # post-order
    stack = [(root, False)]
    while stack:
        node, seen = stack.pop()
        if seen:
            order.append(node)
            continue
        stack.append((node, True))
        for c in node.children:
            stack.append((c, False))
    desc_ids: dict[int, list[int]] = {}
    for node in order:
        node.children.sort(key=lambda c: (c.scale, c.point_id))
        node._kids_by_scale = {}
        for c in node.children:
            node._kids_by_scale.setdefault(c.scale, []).append(c)
        ids = []
        for c in node.children:
            ids.append(c.point_id)
            ids.extend(desc_ids[id(c)])
        desc_ids[id(node)] = ids
        if ids:
            node.maxdist = float(_dist_batch(coords, ids, coords[node.point_id], counter).max())
        else:
            node.maxdist = 0.0
        l_max = max(l_max, node.scale)
    return l_max


# ---------------------------------------------------------------------------
# Validation

@dataclass
class InvariantReport:
    nesting_ok: bool = True
    covering_ok: bool = True
    separation_ok: bool = True
    maxdist_ok: bool = True
    counterexamples: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return self.nesting_ok and self.covering_ok and self.separation_ok and self.maxdist_ok


def validate_invariants(tree: CoverTree) -> InvariantReport:
    """Check nesting, covering, separation and maxdist; report first failures.

    Works on the collapsed representation: a stored edge parent->child is the
    logical edge from the parent's self-copy at scale child.scale-1, so the
    covering bound is sigma*2**(1-child.scale).  Separation between two nodes
    is binding at the shallowest scale where both logically exist.
    """
    rep = InvariantReport()
    coords = tree.points.coords
    sigma = tree.sigma
    counter = DistanceCounter()
    nodes = tree.nodes()

    if tree.root.scale != 0:
        rep.nesting_ok = False
        rep.counterexamples["nesting"] = f"root has scale {tree.root.scale} != 0"
    for n in nodes:
        for c in n.children:
            if c.scale <= n.scale and rep.nesting_ok:
                rep.nesting_ok = False
                rep.counterexamples["nesting"] = (
                    f"child point {c.point_id} at scale {c.scale} under parent "
                    f"point {n.point_id} at scale {n.scale}"
                )

    for n in nodes:
        for c in n.children:
            dd = _dist_one(coords, c.point_id, coords[n.point_id], counter)
            bound = sigma * 2.0 ** (1 - c.scale)
            if dd > bound:
                rep.covering_ok = False
                rep.counterexamples.setdefault(
                    "covering",
                    f"edge {n.point_id}->{c.point_id}: distance {dd:.6g} > "
                    f"sigma*2^(1-{c.scale}) = {bound:.6g}",
                )
                break
        if not rep.covering_ok:
            break

    # Pairwise separation at the binding scale max(scale_a, scale_b).
    pids = np.array([n.point_id for n in nodes])
    scales = np.array([n.scale for n in nodes])
    for i in range(len(nodes)):
        others = np.arange(i + 1, len(nodes))
        if len(others) == 0:
            continue
        dd = _dist_batch(coords, pids[others], coords[pids[i]], counter)
        bounds = sigma * 2.0 ** (-np.maximum(scales[i], scales[others]))
        bad = np.nonzero(dd <= bounds)[0]
        if bad.size and rep.separation_ok:
            j = others[bad[0]]
            rep.separation_ok = False
            rep.counterexamples["separation"] = (
                f"points {pids[i]} (scale {scales[i]}) and {pids[j]} (scale "
                f"{scales[j]}): distance {dd[bad[0]]:.6g} <= sigma*2^-"
                f"{max(scales[i], scales[j])}"
            )
    # maxdist: stored value must equal the recomputed truth and obey the bound.
    desc: dict[int, list[int]] = {}
    post = []
    stack = [(tree.root, False)]
    while stack:
        node, seen = stack.pop()
        if seen:
            post.append(node)
            continue
        stack.append((node, True))
        for c in node.children:
            stack.append((c, False))
    for node in post:
        ids = []
        for c in node.children:
            ids.append(c.point_id)
            ids.extend(desc[id(c)])
        desc[id(node)] = ids
        true_md = 0.0
        if ids:
            true_md = float(_dist_batch(coords, ids, coords[node.point_id], counter).max())
        bound = sigma * 2.0 ** (1 - node.scale) if sigma > 0 else 0.0
        if node.maxdist != true_md and rep.maxdist_ok:
            rep.maxdist_ok = False
            rep.counterexamples["maxdist"] = (
                f"node point {node.point_id}: stored maxdist {node.maxdist:.6g} "
                f"!= true {true_md:.6g}"
            )
        elif true_md > bound and rep.maxdist_ok:
            rep.maxdist_ok = False
            rep.counterexamples["maxdist"] = (
                f"node point {node.point_id} at scale {node.scale}: maxdist "
                f"{true_md:.6g} > sigma*2^(1-{node.scale})"
            )
    return rep


# ---------------------------------------------------------------------------
# Searches

def nn_exact_brute(points: PointSet, query) -> SearchResult:
    """Exhaustive nearest neighbour; ties broken by smallest id."""
    query = np.asarray(query, dtype=np.complex128)
    if query.shape != (points.dim,):
        raise ValueError(f"query dimension {query.shape} != point dimension ({points.dim},)")
    counter = DistanceCounter()
    dd = _dist_batch(points.coords, np.arange(points.size), query, counter)
    i = int(np.argmin(dd))  # argmin returns the first (smallest id) minimiser
    return SearchResult(i, float(dd[i]), counter.count)


def _check_query(tree: CoverTree, query, current_estimate_id: int):
    query = np.asarray(query, dtype=np.complex128)
    if query.shape != (tree.points.dim,):
        raise ValueError(f"query dimension {query.shape} != point dimension ({tree.points.dim},)")
    if not (0 <= current_estimate_id < tree.points.size):
        raise ValueError(f"invalid current estimate id {current_estimate_id}")
    return query


def _descend(tree: CoverTree, query, current_estimate_id: int, stop_rule) -> SearchResult:
    """Shared branch-and-bound loop; `stop_rule(l, d_min, cands)` ends early.

    Candidates ride across levels as their own self-children, inheriting the
    already computed distance; only newly exposed children cost a distance
    evaluation.  A candidate survives while its distance can still hide a
    better point: dist <= d_min + maxdist (+ tiny guard against round-off).
    """
    coords = tree.points.coords
    counter = DistanceCounter()
    p = query

    best_id = int(current_estimate_id)
    d_min = _dist_one(coords, best_id, p, counter)
    if tree.root.point_id == best_id:
        d_root = d_min
    else:
        d_root = _dist_one(coords, tree.root.point_id, p, counter)
        if d_root < d_min or (d_root == d_min and tree.root.point_id < best_id):
            best_id, d_min = tree.root.point_id, d_root

    cands: list[tuple[CoverTreeNode, float]] = [(tree.root, d_root)]
    guard = _PRUNE_GUARD * tree.sigma
    l = 0
    while l < tree.l_max and not stop_rule(l, d_min, cands):
        new_nodes, new_ids = [], []
        for node, _ in cands:
            for k in node._kids_by_scale.get(l + 1, ()):
                new_nodes.append(k)
                new_ids.append(k.point_id)
        if new_ids:
            kd = _dist_batch(coords, new_ids, p, counter)
            for k, dk in sorted(zip(new_nodes, kd), key=lambda t: (t[1], t[0].point_id)):
                if dk < d_min or (dk == d_min and k.point_id < best_id):
                    best_id, d_min = k.point_id, float(dk)
            cands = cands + [(k, float(dk)) for k, dk in zip(new_nodes, kd)]
        cands = [(n, dd) for n, dd in cands if dd <= d_min + n.maxdist + guard]
        l += 1
    return SearchResult(best_id, d_min, counter.count)


def ann_search(tree: CoverTree, query, current_estimate_id: int, epsilon: float) -> SearchResult:
    """(1+epsilon)-approximate NN via branch and bound from a warm start.

    epsilon = 0 descends to the deepest scale and returns an exact NN (the
    returned distance matches the brute-force minimum; the id may differ only
    across exact ties).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    query = _check_query(tree, query, current_estimate_id)
    sigma = tree.sigma
    factor = (1.0 + 1.0 / epsilon) if epsilon > 0 else np.inf
    slack = _PRUNE_GUARD * sigma

    def stop(l, d_min, cands):
        # Continue while sigma*2^(-l+1)*(1+1/eps) > d_min; the slack keeps the
        # loop alive when the comparison lands within float round-off.
        return not (sigma * 2.0 ** (-l + 1) * factor > d_min - slack)

    return _descend(tree, query, current_estimate_id, stop)


def ann_search_additive(tree: CoverTree, query, current_estimate_id: int,
                        eps_add: float) -> SearchResult:
    """NN whose squared distance exceeds the optimum by at most eps_add.

    Descends while the gap between the current best squared distance and the
    certified lower bound (min over candidates of max(dist - maxdist, 0),
    squared) still exceeds eps_add.
    """
    if eps_add < 0:
        raise ValueError("eps_add must be >= 0")
    query = _check_query(tree, query, current_estimate_id)
    guard = _PRUNE_GUARD * tree.sigma ** 2

    def stop(l, d_min, cands):
        lb = min(max(dd - n.maxdist, 0.0) for n, dd in cands)
        return d_min * d_min - lb * lb <= eps_add - guard

    return _descend(tree, query, current_estimate_id, stop)


def aspect_ratio(points: PointSet, max_points: int = 5000) -> float:
    """Max over min pairwise distance; diagnostic only, O(d^2) and therefore
    capped at max_points."""
    if points.size > max_points:
        raise ValueError(f"aspect ratio is O(d^2); refusing d={points.size} > {max_points}")
    if points.size < 2:
        raise ValueError("aspect ratio needs at least two points")
    lo, hi = np.inf, 0.0
    counter = DistanceCounter()
    for i in range(points.size - 1):
        dd = _dist_batch(points.coords, np.arange(i + 1, points.size),
                         points.coords[i], counter)
        lo = min(lo, float(dd.min()))
        hi = max(hi, float(dd.max()))
    if lo == 0.0:
        raise ValueError("aspect ratio undefined: duplicate points present")
    return hi / lo


def query_cost_profile(tree: CoverTree, queries, epsilon: float) -> dict:
    """Distance-evaluation stats for a batch of root-warm-started searches."""
    queries = np.asarray(queries, dtype=np.complex128)
    if queries.ndim != 2 or queries.shape[0] < 1:
        raise ValueError("queries must be a non-empty (q, D) array")
    counts = []
    for q in queries:
        res = ann_search(tree, q, tree.root.point_id, epsilon)
        counts.append(res.distances_evaluated)
    counts_arr = np.array(counts)
    return {
        "per_query": counts,
        "median": float(np.median(counts_arr)),
        "mean": float(counts_arr.mean()),
        "max": int(counts_arr.max()),
    }


# ---------------------------------------------------------------------------
# Serialization (structure only; points live in the dictionary file)

def save_tree(tree: CoverTree, path) -> None:
    """Write header + preorder node records as JSON (floats round-trip exactly)."""
    records = []

    def visit(node):
        records.append([node.point_id, node.scale, node.maxdist,
                        len(node.children), list(node.duplicate_ids)])
        for c in node.children:
            visit(c)

    visit(tree.root)
    payload = {
        "format": "covercs-tree",
        "version": 1,
        "d": tree.points.size,
        "dim": tree.points.dim,
        "sigma": tree.sigma,
        "l_max": tree.l_max,
        "build_distances": tree.build_distances,
        "nodes": records,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_tree(path, points: PointSet) -> CoverTree:
    """Rebuild a tree from its file; `points` must be the original point set."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "covercs-tree":
        raise ValueError(f"{path} is not a cover tree file")
    if payload["d"] != points.size or payload["dim"] != points.dim:
        raise ValueError(
            f"tree was built on a ({payload['d']}, {payload['dim']}) point set, "
            f"got ({points.size}, {points.dim})"
        )
    records = payload["nodes"]
    pos = 0

    def read():
        nonlocal pos
        pid, scale, maxdist, n_children, dups = records[pos]
        pos += 1
        node = CoverTreeNode(int(pid), int(scale))
        node.maxdist = float(maxdist)
        node.duplicate_ids = [int(x) for x in dups]
        for _ in range(int(n_children)):
            c = read()
            node.children.append(c)
            node._kids_by_scale.setdefault(c.scale, []).append(c)
        return node

    root = read()
    return CoverTree(points, root, float(payload["sigma"]), int(payload["l_max"]),
                     int(payload["build_distances"]))
