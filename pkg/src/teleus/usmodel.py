"""Visual model: synthetic sweep acquisition, arbitrary-plane re-slicing for
the instant preview, force-dependent live-image synthesis, and live-frame
integration into the stored sweep volume.

Image-plane frame convention: pixels span the pose's x (right) and y (down)
axes; y is the probe push axis into the tissue, so vessel compression is
visible in-image; z is the plane normal (elevational direction).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .phantom import SyntheticPhantom
from .se3 import Pose

DEFAULT_SPACING = 0.0005       # m/voxel
INTEGRATE_ALPHA = 0.5
MIN_RESOLUTION = 16


class EmptyTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class ImagePlane:
    """Planar pixel grid in the follower base frame.

    pose: image center; x right, y down (probe push axis), z plane normal.
    width/height in meters; resolution (cols, rows) in pixels.
    """

    pose: Pose
    width: float
    height: float
    resolution: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("plane extent must be positive")
        if min(self.resolution) < MIN_RESOLUTION:
            raise ValueError("resolution must be at least 16x16")

    @property
    def pitch(self) -> tuple[float, float]:
        return self.width / self.resolution[0], self.height / self.resolution[1]

    def pixel_positions(self) -> np.ndarray:
        """(rows, cols, 3) world position of every pixel center."""
        nc, nr = self.resolution
        px, py = self.pitch
        u = (np.arange(nc) - (nc - 1) / 2.0) * px
        v = (np.arange(nr) - (nr - 1) / 2.0) * py
        rot = self.pose.rotation_matrix()
        grid = (u[None, :, None] * rot[:, 0]
                + v[:, None, None] * rot[:, 1])
        return grid + self.pose.trans

    def probe_axis(self) -> np.ndarray:
        """Unit push direction of the probe (in-image down)."""
        return self.pose.rotation_matrix()[:, 1]


@dataclass(frozen=True)
class UsImage:
    pixels: np.ndarray          # (rows, cols) in [0, 1]
    plane: ImagePlane
    timestamp_us: int = 0
    source: str = "preview"     # "preview" | "live"


@dataclass(frozen=True)
class UsVolume:
    """Scalar intensity grid; pose maps voxel index*spacing to base frame."""

    voxels: np.ndarray          # (nx, ny, nz) in [0, 1]
    spacing: np.ndarray         # (3,) m/voxel
    pose: Pose

    def __post_init__(self):
        object.__setattr__(self, "spacing",
                           np.asarray(self.spacing, dtype=float))
        if np.any(self.spacing <= 0):
            raise ValueError("spacing must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        """Continuous voxel indices of world points (any leading shape)."""
        pts = np.asarray(points, dtype=float)
        rot = self.pose.rotation_matrix()
        local = (pts - self.pose.trans) @ rot
        return local / self.spacing


def generate_sweep(phantom: SyntheticPhantom, trajectory,
                   rng: np.random.Generator | None = None) -> UsVolume:
    """Compound a volume from synthesized zero-force frames.

    The trajectory is a sequence of parallel, evenly spaced planes; frame k
    fills voxel slab z=k, so lattice-spaced trajectories reproduce the
    per-plane pixels exactly.
    """
    trajectory = list(trajectory)
    if not trajectory:
        raise EmptyTrajectory("sweep trajectory is empty")
    first = trajectory[0]
    nc, nr = first.resolution
    n = len(trajectory)
    rot = first.pose.rotation_matrix()
    px, py = first.pitch
    if n > 1:
        step = trajectory[1].pose.trans - first.pose.trans
        # The sweep must advance along the shared plane normal so frames
        # stack onto a rectangular lattice.
        sz = float(step @ rot[:, 2])
        if sz <= 0:
            raise ValueError("trajectory must advance along the plane normal")
    else:
        sz = min(px, py)
    voxels = np.empty((nc, nr, n))
    for k, plane in enumerate(trajectory):
        if plane.resolution != first.resolution:
            raise ValueError("all sweep planes must share one resolution")
        pts = plane.pixel_positions().reshape(-1, 3)
        frame = phantom.intensities(pts, plane.probe_axis(), 0.0, rng=rng)
        voxels[:, :, k] = frame.reshape(nr, nc).T
    # Grid origin at pixel (row 0, col 0) of the first plane.
    origin = first.pixel_positions()[0, 0]
    return UsVolume(voxels=voxels, spacing=np.array([px, py, sz]),
                    pose=Pose(quat=Pose.from_matrix(_embed(rot)).quat,
                              trans=origin))


def _embed(rot: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rot
    return m


BOUNDARY_EPS = 1e-9  # voxel units: tolerates rounding at the lattice edge


def _trilinear(voxels: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Vectorized trilinear interpolation at (3, m) in-bounds voxel indices.

    Arithmetic follows the storage dtype: double-precision volumes match a
    scalar float64 oracle bit-for-bit in practice, while float32 volumes
    keep the fast path for real-time previews.
    """
    work = voxels.dtype if voxels.dtype == np.float64 else np.float32
    shape = np.array(voxels.shape).reshape(3, 1)
    i0 = np.floor(coords).astype(np.intp)
    np.clip(i0, 0, shape - 2, out=i0)
    frac = (coords - i0).astype(work, copy=False)
    fx, fy, fz = frac
    gx, gy, gz = 1.0 - frac
    sy = voxels.shape[2]
    sx = voxels.shape[1] * sy
    base = i0[0] * sx + i0[1] * sy + i0[2]
    flat = voxels.ravel()

    c00 = flat[base] * gz
    c00 += flat[base + 1] * fz
    c01 = flat[base + sy] * gz
    c01 += flat[base + sy + 1] * fz
    c10 = flat[base + sx] * gz
    c10 += flat[base + sx + 1] * fz
    c11 = flat[base + sx + sy] * gz
    c11 += flat[base + sx + sy + 1] * fz
    c00 *= gy
    c00 += c01 * fy
    c10 *= gy
    c10 += c11 * fy
    c00 *= gx
    c00 += c10 * fx
    return c00.astype(np.float64, copy=False)


def reslice(volume: UsVolume, plane: ImagePlane,
            timestamp_us: int = 0) -> UsImage:
    """Trilinear resample of the volume on the plane's pixel grid.

    Pixels whose position falls outside the voxel lattice are zero. The
    pixel lattice is affine in voxel-index space, so the coordinates are
    generated directly there.
    """
    nc, nr = plane.resolution
    rot_v = volume.pose.rotation_matrix()
    rot_p = plane.pose.rotation_matrix()
    px, py = plane.pitch
    spacing = volume.spacing
    du = (rot_v.T @ rot_p[:, 0]) * px / spacing
    dv = (rot_v.T @ rot_p[:, 1]) * py / spacing
    base = (rot_v.T @ (plane.pose.trans - volume.pose.trans)) / spacing
    origin = base - (nc - 1) / 2.0 * du - (nr - 1) / 2.0 * dv
    ii = np.arange(nr).reshape(1, nr, 1)
    jj = np.arange(nc).reshape(1, 1, nc)
    coords = (origin.reshape(3, 1, 1) + dv.reshape(3, 1, 1) * ii
              + du.reshape(3, 1, 1) * jj).reshape(3, -1)
    hi = (np.array(volume.dims) - 1).reshape(3, 1)
    inside = np.all((coords >= -BOUNDARY_EPS)
                    & (coords <= hi + BOUNDARY_EPS), axis=0)
    pixels = _trilinear(volume.voxels, coords)
    pixels[~inside] = 0.0
    return UsImage(pixels=np.clip(pixels, 0.0, 1.0).reshape(nr, nc),
                   plane=plane, timestamp_us=timestamp_us, source="preview")


def live_image(phantom: SyntheticPhantom, probe: ImagePlane,
               normal_force: float, seed: int = 0,
               timestamp_us: int = 0) -> UsImage:
    """Synthesized live frame with force-compressed vessels and per-frame
    seeded speckle."""
    if normal_force < 0:
        raise ValueError("normal force must be >= 0")
    pts = probe.pixel_positions()
    rng = np.random.default_rng(seed)
    pixels = phantom.intensities(pts.reshape(-1, 3), probe.probe_axis(),
                                 normal_force, rng=rng)
    return UsImage(pixels=pixels.reshape(pts.shape[:2]), plane=probe,
                   timestamp_us=timestamp_us, source="live")


def integrate_frame(volume: UsVolume, frame: UsImage,
                    alpha: float = INTEGRATE_ALPHA) -> UsVolume:
    """Blend a frame into the sweep: nearest voxel v <- (1-a)v + a*pixel."""
    pts = frame.plane.pixel_positions().reshape(-1, 3)
    idx = np.rint(volume.world_to_index(pts)).astype(int)
    nx, ny, nz = volume.dims
    ok = np.all((idx >= 0) & (idx < [nx, ny, nz]), axis=1)
    if not np.any(ok):
        return volume
    idx = idx[ok]
    pix = frame.pixels.reshape(-1)[ok]
    voxels = volume.voxels.copy()
    ix, iy, iz = idx[:, 0], idx[:, 1], idx[:, 2]
    voxels[ix, iy, iz] = (1.0 - alpha) * voxels[ix, iy, iz] + alpha * pix
    return UsVolume(voxels=voxels, spacing=volume.spacing, pose=volume.pose)


def default_trajectory(phantom: SyntheticPhantom,
                       spacing: float = DEFAULT_SPACING,
                       margin: float = 0.005) -> list[ImagePlane]:
    """Vertical cross-section planes sweeping the phantom along its long axis.

    Each plane shows a vessel cross-section: in-image x is the world -y
    (lateral), in-image y is world -z (push axis down), plane normal +x so
    the sweep advances along the normal.
    """
    he = phantom.half_extents
    c = phantom.center
    width = 2 * (he[1] + margin)
    height = 2 * (he[2] + margin)
    nc = int(round(width / spacing))
    nr = int(round(height / spacing))
    rot = np.column_stack([[0.0, -1.0, 0.0],
                           [0.0, 0.0, -1.0],
                           [1.0, 0.0, 0.0]])
    pose_rot = Pose.from_matrix(_embed(rot))
    xs = np.arange(c[0] - he[0] - margin, c[0] + he[0] + margin + spacing / 2,
                   spacing)
    planes = []
    for x in xs:
        center = np.array([x, c[1], c[2]])
        planes.append(ImagePlane(pose=Pose(quat=pose_rot.quat, trans=center),
                                 width=width, height=height,
                                 resolution=(nc, nr)))
    return planes
