"""Point-cloud virtual fixture: octree index, k-nearest-neighbor search,
local plane fitting, proxy-point update, and spring-damper force output.

The operator-side haptic loop queries the cloud around the haptic interface
point (HIP), fits a local plane to define the touched surface, keeps a proxy
point on that surface while the HIP penetrates, and renders the spring-damper
force between proxy and HIP.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DEPTH = 21
DEFAULT_LEAF_CAPACITY = 64
PLANE_FIT_TOLERANCE = 1e-6  # m, max interior-side proxy violation


class EmptyCloud(ValueError):
    pass


class DegenerateNeighborhood(ValueError):
    pass


@dataclass(frozen=True)
class HapticParams:
    k: float = 800.0       # N/m
    d: float = 5.0         # N s/m
    n: int = 15            # neighborhood size
    r_max: float = 0.02    # m, max neighbor distance
    f_max: float = 15.0    # N
    # Exterior reference (the depth-camera origin): plane normals are
    # sign-ambiguous, and only the exterior side of the surface is observed.
    exterior_point: np.ndarray = field(
        default_factory=lambda: np.array([0.45, 0.0, 0.5]))

    def __post_init__(self):
        if self.k < 0 or self.d < 0:
            raise ValueError("gains must be non-negative")
        if self.n < 3:
            raise ValueError("neighborhood size must be >= 3")
        object.__setattr__(self, "exterior_point",
                           np.asarray(self.exterior_point, dtype=float))


@dataclass(frozen=True)
class ProxyState:
    proxy: np.ndarray
    in_contact: bool
    surface_normal: np.ndarray

    @staticmethod
    def free(position) -> "ProxyState":
        return ProxyState(proxy=np.asarray(position, dtype=float),
                          in_contact=False,
                          surface_normal=np.array([0.0, 0.0, 1.0]))


class _Node:
    __slots__ = ("center", "half", "cx", "cy", "cz", "children", "idx", "pts")

    def __init__(self, center, half):
        self.center = center
        self.half = half
        # Scalar copies keep the query-time box tests free of numpy overhead.
        self.cx, self.cy, self.cz = (float(center[0]), float(center[1]),
                                     float(center[2]))
        self.children: list["_Node"] | None = None
        self.idx: np.ndarray | None = None   # leaf point indices
        self.pts: np.ndarray | None = None   # leaf points, contiguous


class PointCloudOctree:
    """Immutable octree over a fixed point cloud; cubic octant subdivision."""

    def __init__(self, points, leaf_capacity: int = DEFAULT_LEAF_CAPACITY):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.size == 0:
            raise EmptyCloud("point cloud is empty")
        if points.shape[1] != 3 or not np.all(np.isfinite(points)):
            raise ValueError("points must be finite 3-vectors")
        if leaf_capacity < 1:
            raise ValueError("leaf_capacity must be >= 1")
        self.points = points
        self.leaf_capacity = leaf_capacity
        lo, hi = points.min(axis=0), points.max(axis=0)
        center = (lo + hi) / 2.0
        half = float(np.max(hi - lo) / 2.0) + 1e-12
        self._root = self._build(np.arange(len(points)), center, half, 0)

    def __len__(self):
        return len(self.points)

    def _build(self, idx, center, half, depth) -> _Node:
        node = _Node(center, half)
        if len(idx) <= self.leaf_capacity or depth >= MAX_DEPTH:
            node.idx = idx
            node.pts = np.ascontiguousarray(self.points[idx])
            return node
        pts = self.points[idx]
        side = pts >= center  # (m, 3) bool
        octant = side[:, 0] * 4 + side[:, 1] * 2 + side[:, 2] * 1
        children = []
        quarter = half / 2.0
        for code in range(8):
            sub = idx[octant == code]
            offset = np.array([quarter if code & 4 else -quarter,
                               quarter if code & 2 else -quarter,
                               quarter if code & 1 else -quarter])
            children.append(self._build(sub, center + offset, quarter,
                                        depth + 1))
        node.children = children
        return node


def build_octree(points, leaf_capacity: int = DEFAULT_LEAF_CAPACITY
                 ) -> PointCloudOctree:
    return PointCloudOctree(points, leaf_capacity)


def _gather_leaves(node: _Node, px, py, pz, r2, out) -> None:
    """Append every leaf whose octant intersects the ball (p, sqrt(r2))."""
    dx = abs(px - node.cx) - node.half
    dy = abs(py - node.cy) - node.half
    dz = abs(pz - node.cz) - node.half
    d2 = 0.0
    if dx > 0.0:
        d2 += dx * dx
    if dy > 0.0:
        d2 += dy * dy
    if dz > 0.0:
        d2 += dz * dz
    if d2 > r2:
        return
    if node.idx is not None:
        if len(node.idx):
            out.append(node)
        return
    for child in node.children:
        _gather_leaves(child, px, py, pz, r2, out)


def _smallest(points, idx, d2, n) -> np.ndarray:
    # n smallest by (distance, index): deterministic under ties.
    keep = np.lexsort((idx, d2))[:n]
    return points[idx[keep]]


def knn(tree: PointCloudOctree, p, n: int) -> np.ndarray:
    """The n nearest cloud points to p, ascending by Euclidean distance.

    Radius gather: estimate the n-neighbor radius from the cloud density,
    collect every leaf octant intersecting that ball, and rank candidates in
    one vectorized pass; the radius doubles until it provably encloses the
    n nearest.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p = np.asarray(p, dtype=float)
    points = tree.points
    total = len(points)
    if n >= total or total <= 4 * DEFAULT_LEAF_CAPACITY:
        diff = points - p
        d2 = np.einsum("ij,ij->i", diff, diff)
        return _smallest(points, np.arange(total), d2, n)

    px, py, pz = float(p[0]), float(p[1]), float(p[2])
    root = tree._root
    # Distance from the query to the cloud's bounding cube: the true
    # n-neighbor ball can never be closer than this.
    gx = max(abs(px - root.cx) - root.half, 0.0)
    gy = max(abs(py - root.cy) - root.half, 0.0)
    gz = max(abs(pz - root.cz) - root.half, 0.0)
    base = (gx * gx + gy * gy + gz * gz) ** 0.5
    # Uniform-density estimate of the n-neighbor radius, padded.
    r = base + 2.0 * root.half * (n / total) ** (1.0 / 3.0) * 1.2 + 1e-12
    while True:
        leaves: list[_Node] = []
        _gather_leaves(root, px, py, pz, r * r, leaves)
        if leaves:
            if len(leaves) == 1:
                cand_pts, cand_idx = leaves[0].pts, leaves[0].idx
            else:
                cand_pts = np.concatenate([leaf.pts for leaf in leaves])
                cand_idx = np.concatenate([leaf.idx for leaf in leaves])
            diff = cand_pts - p
            d2 = np.einsum("ij,ij->i", diff, diff)
            inside = d2 <= r * r
            # Exact once the ball itself contains n points: everything not
            # gathered is farther than r.
            if int(np.count_nonzero(inside)) >= n:
                return _smallest(points, cand_idx[inside], d2[inside], n)
            if len(cand_idx) >= n:
                # Enough candidates, ball too small: the n-th candidate
                # distance bounds the true n-th neighbor, so one regather at
                # that radius is exact.
                r = float(np.sqrt(np.partition(d2, n - 1)[n - 1])) + 1e-12
                continue
        r *= 2.0


def fit_plane(neighbors) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares plane: (centroid, unit normal).

    The normal is the smallest principal component; its sign is arbitrary
    here and oriented by the caller.
    """
    pts = np.atleast_2d(np.asarray(neighbors, dtype=float))
    if len(pts) < 3:
        raise DegenerateNeighborhood("need at least 3 points")
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    # Collinear or coincident: no unique plane through the points.
    if s[1] <= max(s[0] * 1e-9, 1e-15):
        raise DegenerateNeighborhood("neighborhood is collinear or coincident")
    return centroid, vt[2]


def _oriented_normal(normal, centroid, prev: ProxyState,
                     params: HapticParams) -> np.ndarray:
    """Resolve the plane-fit sign: keep continuity while in contact, else
    point toward the exterior reference."""
    if prev.in_contact:
        reference = prev.surface_normal
    else:
        reference = params.exterior_point - centroid
    return normal if float(normal @ reference) >= 0 else -normal


def update_proxy(proxy: ProxyState, hip, tree: PointCloudOctree,
                 params: HapticParams) -> ProxyState:
    """One haptic tick: re-fit the local surface and place the proxy.

    Free space (or too few close neighbors) releases contact; a penetrating
    HIP projects onto the fitted plane — tangential motion is unconstrained
    (friction-free sliding).
    """
    hip = np.asarray(hip, dtype=float)
    neighbors = knn(tree, hip, params.n)
    d = np.linalg.norm(neighbors - hip, axis=1)
    neighbors = neighbors[d <= params.r_max]
    if len(neighbors) < 3:
        return ProxyState.free(hip)
    try:
        centroid, normal = fit_plane(neighbors)
    except DegenerateNeighborhood:
        return ProxyState.free(hip)
    normal = _oriented_normal(normal, centroid, proxy, params)
    height = float((hip - centroid) @ normal)
    if height >= 0.0:
        return ProxyState(proxy=hip, in_contact=False, surface_normal=normal)
    return ProxyState(proxy=hip - height * normal, in_contact=True,
                      surface_normal=normal)


def haptic_force(hip, hip_vel, proxy: ProxyState,
                 params: HapticParams) -> np.ndarray:
    """Spring-damper force on the operator's hand, clamped to f_max.

    With the friction-free proxy the spring term is purely normal, so the
    force acts along the surface normal; it never pulls inward.
    """
    if not proxy.in_contact:
        return np.zeros(3)
    hip = np.asarray(hip, dtype=float)
    vel = np.asarray(hip_vel, dtype=float)
    m = proxy.surface_normal
    f = params.k * (proxy.proxy - hip) - params.d * float(vel @ m) * m
    outward = float(f @ m)
    if outward < 0.0:
        f = f - outward * m
    norm = float(np.linalg.norm(f))
    if norm > params.f_max:
        f = f * (params.f_max / norm)
    return f


def load_ply(path) -> np.ndarray:
    """Vertex positions from a binary little-endian PLY with float32 x,y,z."""
    with open(path, "rb") as fh:
        header = []
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            header.append(line.decode("ascii", "replace").strip())
            if header[-1] == "end_header":
                break
        if header[0] != "ply":
            raise ValueError("not a PLY file")
        if "format binary_little_endian 1.0" not in header:
            raise ValueError("only binary little-endian PLY is supported")
        count = None
        props = []
        for entry in header:
            if entry.startswith("element vertex"):
                count = int(entry.split()[-1])
                props = []
            elif entry.startswith("element "):
                props = None  # properties of some other element
            elif entry.startswith("property") and props is not None:
                kind, name = entry.split()[1:3]
                if kind != "float":
                    raise ValueError("only float32 vertex properties supported")
                props.append(name)
        if count is None:
            raise ValueError("PLY has no vertex element")
        if props is None or props[:3] != ["x", "y", "z"]:
            raise ValueError("vertex element must start with x, y, z")
        data = np.fromfile(fh, dtype="<f4", count=count * len(props))
    if data.size != count * len(props):
        raise ValueError("truncated PLY payload")
    return data.reshape(count, len(props))[:, :3].astype(float)


def save_ply(path, points) -> None:
    """Binary little-endian xyz-only PLY writer (round-trip counterpart)."""
    points = np.atleast_2d(np.asarray(points, dtype="<f4"))
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(points)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "end_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(points.tobytes())


def sample_phantom_surface(phantom, count: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Uniform area-weighted samples on the phantom's box surface."""
    he = phantom.half_extents
    areas = np.array([he[1] * he[2], he[0] * he[2], he[0] * he[1]]) * 4.0
    face_axis = rng.choice(3, size=count, p=areas / areas.sum())
    face_sign = rng.choice([-1.0, 1.0], size=count)
    pts = rng.uniform(-he, he, size=(count, 3))
    pts[np.arange(count), face_axis] = face_sign * he[face_axis]
    return pts + phantom.center
