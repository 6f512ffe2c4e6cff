"""Synthetic scan target: a rectangular tissue block containing a branched
two-vessel tree, with an analytic signed-distance surface and a simple
intensity model for image synthesis.

Vessel cross-sections compress under probe force: the semi-axis along the
probe axis shrinks by the compression factor while the perpendicular one
grows by its inverse, so cross-section area is preserved and eccentricity
rises with force.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COMPRESSION_PER_NEWTON = 0.02
COMPRESSION_FLOOR = 0.2


@dataclass(frozen=True)
class Vessel:
    """Capsule-chain tube: polyline centerline (m) with constant radius (m)."""

    centerline: np.ndarray  # (k, 3)
    radius: float

    def centerline_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the polyline (vectorized)."""
        points = np.atleast_2d(points)
        best = np.full(len(points), np.inf)
        for a, b in zip(self.centerline[:-1], self.centerline[1:]):
            ab = b - a
            denom = float(ab @ ab)
            t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
            closest = a + t[:, None] * ab
            d = np.linalg.norm(points - closest, axis=1)
            best = np.minimum(best, d)
        return best

    def inside_compressed(self, points: np.ndarray, probe_axis: np.ndarray,
                          compression: float) -> np.ndarray:
        """Mask of points inside the force-deformed tube.

        The circular section becomes an ellipse: semi-axis a = r*compression
        along the probe axis, b = r/compression perpendicular to it.
        """
        points = np.atleast_2d(points)
        axis = np.asarray(probe_axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        inside = np.zeros(len(points), dtype=bool)
        a = self.radius * compression
        b = self.radius / compression
        for p0, p1 in zip(self.centerline[:-1], self.centerline[1:]):
            seg = p1 - p0
            denom = float(seg @ seg)
            t = np.clip((points - p0) @ seg / denom, 0.0, 1.0)
            offset = points - (p0 + t[:, None] * seg)
            dz = offset @ axis
            dperp = np.linalg.norm(offset - dz[:, None] * axis, axis=1)
            inside |= (dz / a) ** 2 + (dperp / b) ** 2 <= 1.0
        return inside


@dataclass(frozen=True)
class SyntheticPhantom:
    """Desk-scale block with a large vessel and a thinner branch."""

    center: np.ndarray = field(
        default_factory=lambda: np.array([0.45, 0.0, 0.07]))
    half_extents: np.ndarray = field(
        default_factory=lambda: np.array([0.06, 0.04, 0.03]))
    background_mean: float = 0.55
    speckle_sigma: float = 0.06
    vessel_intensity: float = 0.08
    boundary_intensity: float = 0.9
    boundary_width: float = 0.00075   # m
    attenuation: float = 2.0          # 1/m, on depth below the top surface

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_extents",
                           np.asarray(self.half_extents, dtype=float))

    @property
    def top_z(self) -> float:
        return float(self.center[2] + self.half_extents[2])

    @property
    def vessels(self) -> tuple[Vessel, Vessel]:
        cx, cy, _ = self.center
        z = self.top_z - 0.030
        bif = np.array([cx, cy - 0.010, z])
        large = Vessel(centerline=np.array([
            [cx - 0.050, cy - 0.010, z],
            bif,
            [cx + 0.050, cy - 0.010, z],
        ]), radius=0.006)
        branch = Vessel(centerline=np.array([
            bif,
            [cx + 0.025, cy + 0.008, z + 0.004],
            [cx + 0.050, cy + 0.022, z + 0.008],
        ]), radius=0.003)
        return large, branch

    @property
    def bifurcation(self) -> np.ndarray:
        cx, cy, _ = self.center
        return np.array([cx, cy - 0.010, self.top_z - 0.030])

    def signed_distance(self, points) -> np.ndarray:
        """Box SDF: positive outside, negative inside; Lipschitz-1."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.abs(points - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(np.max(d, axis=1), 0.0)
        return outside + inside

    def surface_normal(self, point) -> np.ndarray:
        """Outward normal of the closest box face."""
        p = np.asarray(point, dtype=float)
        d = np.abs(p - self.center) - self.half_extents
        if np.all(d <= 0):
            axis = int(np.argmax(d))
        else:
            axis = int(np.argmax(np.where(d > 0, d, -np.inf)))
            pos = np.maximum(d, 0.0)
            if np.count_nonzero(pos) > 1:
                n = np.where(d > 0, np.sign(p - self.center), 0.0) * pos
                return n / np.linalg.norm(n)
        n = np.zeros(3)
        n[axis] = np.sign(p[axis] - self.center[axis]) or 1.0
        return n

    def compression_factor(self, force_n: float) -> float:
        return max(1.0 - COMPRESSION_PER_NEWTON * max(force_n, 0.0),
                   COMPRESSION_FLOOR)

    def intensities(self, points: np.ndarray, probe_axis,
                    force_n: float = 0.0,
                    rng: np.random.Generator | None = None) -> np.ndarray:
        """Scalar intensity in [0, 1] at each 3-D point."""
        points = np.atleast_2d(points)
        sd = self.signed_distance(points)
        out = np.zeros(len(points))
        interior = sd < 0

        depth = np.clip(self.top_z - points[:, 2], 0.0, None)
        out[interior] = (self.background_mean
                         * np.exp(-self.attenuation * depth[interior]))

        s = self.compression_factor(force_n)
        for vessel in self.vessels:
            mask = vessel.inside_compressed(points, probe_axis, s)
            out[mask & interior] = self.vessel_intensity

        boundary = np.abs(sd) < self.boundary_width
        out[boundary] = self.boundary_intensity

        if rng is not None:
            noisy = interior | boundary
            out[noisy] += rng.normal(0.0, self.speckle_sigma,
                                     size=int(np.count_nonzero(noisy)))
        return np.clip(out, 0.0, 1.0)
