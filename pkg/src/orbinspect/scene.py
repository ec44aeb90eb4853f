"""Surface features of the chief satellite: illumination, field of view,
synthetic camera bearings, and inspection bookkeeping.

The chief is modeled as a sphere of radius ``r_c`` carrying N point features.
Bearings here use the camera convention (unit vectors from the deputy toward
a feature); the observer module flips them to its own convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import HillState

__all__ = [
    "CameraModel",
    "Feature",
    "FeatureField",
    "VisibilitySet",
    "InsufficientFeaturesError",
    "DegeneratePlaneError",
    "fibonacci_sphere",
    "make_features",
    "illuminated",
    "in_fov",
    "bearing_unit_vectors",
    "plane_normal",
    "update_inspection",
    "select_tracked",
]


class InsufficientFeaturesError(RuntimeError):
    """Fewer than four trackable features are available for the plane fit."""


class DegeneratePlaneError(RuntimeError):
    """Bearings are collinear; the feature plane is undefined."""


@dataclass
class CameraModel:
    """Pinhole camera: intrinsic matrix, conical FOV half-angle, max range."""

    intrinsic: np.ndarray
    alpha_fov: float
    r_max: float

    def __post_init__(self):
        self.intrinsic = np.asarray(self.intrinsic, dtype=float)
        if self.intrinsic.shape != (3, 3):
            raise ValueError("intrinsic must be 3x3")
        if np.linalg.cond(self.intrinsic) > 1e12:
            raise ValueError("intrinsic matrix must be invertible")
        self.intrinsic_inv = np.linalg.inv(self.intrinsic)


@dataclass
class Feature:
    """A point feature fixed on the chief's bounding sphere."""

    id: int
    p_h: np.ndarray
    surface_normal: np.ndarray
    inspected: bool = False
    first_inspected_time: float | None = None


def fibonacci_sphere(n: int, radius: float = 1.0) -> np.ndarray:
    """Near-uniform deterministic point distribution on a sphere, (n, 3)."""
    i = np.arange(n, dtype=float)
    phi = math.pi * (3.0 - math.sqrt(5.0))  # golden angle
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    theta = phi * i
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    return radius * pts


def make_features(n: int, radius: float) -> list[Feature]:
    pts = fibonacci_sphere(n, radius)
    normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return [Feature(id=i + 1, p_h=pts[i], surface_normal=normals[i]) for i in range(n)]


@dataclass
class FeatureField:
    """Array-of-struct view of the feature set used by the simulation loop."""

    positions: np.ndarray        # (N, 3)
    normals: np.ndarray          # (N, 3)
    inspected: np.ndarray        # (N,) bool
    first_inspected: np.ndarray  # (N,) float, nan until inspected
    ids: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ids = np.arange(1, len(self.positions) + 1)

    @classmethod
    def on_sphere(cls, n: int, radius: float) -> "FeatureField":
        pts = fibonacci_sphere(n, radius)
        normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        return cls(
            positions=pts,
            normals=normals,
            inspected=np.zeros(n, dtype=bool),
            first_inspected=np.full(n, np.nan),
        )


@dataclass
class VisibilitySet:
    """Illuminated / in-FOV feature ids and the currently tracked subset."""

    in_fov: set
    illuminated: set
    tracked: list


def illuminated(feature: Feature, sun_u: np.ndarray) -> bool:
    """Backward-ray illumination test; for a spherical chief this is the
    hemisphere test on the outward surface normal."""
    return float(np.dot(feature.surface_normal, sun_u)) > 0.0


def illuminated_mask(normals: np.ndarray, sun_u: np.ndarray) -> np.ndarray:
    return normals @ sun_u > 0.0


def in_fov(
    feature: Feature,
    deputy: HillState,
    boresight: np.ndarray,
    cam: CameraModel,
    r_min: float,
) -> bool:
    """True iff the feature is within sensing range and the FOV cone."""
    d = feature.p_h - deputy.p
    rng = float(np.linalg.norm(d))
    if not (r_min <= rng <= cam.r_max):
        return False
    cos_ang = float(np.dot(d, boresight)) / rng
    return math.acos(min(1.0, max(-1.0, cos_ang))) <= cam.alpha_fov


def fov_mask(
    positions: np.ndarray,
    p_dep: np.ndarray,
    boresight: np.ndarray,
    cam: CameraModel,
    r_min: float,
) -> np.ndarray:
    d = positions - p_dep
    rng = np.linalg.norm(d, axis=1)
    cos_ang = (d @ boresight) / np.maximum(rng, 1e-300)
    ok_range = (rng >= r_min) & (rng <= cam.r_max)
    return ok_range & (cos_ang >= math.cos(cam.alpha_fov))


def bearing_unit_vectors(feature: Feature, deputy: HillState, cam: CameraModel):
    """Synthesize homogeneous pixel coordinates through the intrinsic matrix
    and recover the deputy-to-feature unit vector by unprojection."""
    d = feature.p_h - deputy.p
    rng = np.linalg.norm(d)
    if rng <= 0.0:
        raise ValueError("feature at zero range from deputy")
    pixels = cam.intrinsic @ d
    back = cam.intrinsic_inv @ pixels
    u = back / np.linalg.norm(back)
    return u, pixels


def plane_normal(bearings: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Least-squares normal of the plane spanned by tracked bearings.

    Returns the smallest-singular-vector of the centered bearing matrix,
    sign-flipped to point from the chief surface toward the deputy (i.e.
    against the mean bearing).
    """
    Bm = np.asarray(bearings, dtype=float)
    if Bm.ndim != 2 or Bm.shape[1] != 3 or Bm.shape[0] < 4:
        raise InsufficientFeaturesError("plane fit needs at least 4 bearings")
    centroid = Bm.mean(axis=0)
    centered = Bm - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[1] < 1e-10 * max(s[0], 1.0):
        raise DegeneratePlaneError("bearings are collinear")
    n_c = vt[2]
    if np.dot(n_c, centroid) > 0.0:  # bearings point deputy -> features
        n_c = -n_c
    return n_c / np.linalg.norm(n_c)


def update_inspection(field: FeatureField, lit: np.ndarray, fov: np.ndarray, t: float) -> int:
    """Mark features that are simultaneously lit and in FOV; monotone."""
    newly = lit & fov & ~field.inspected
    field.inspected |= newly
    field.first_inspected[newly] = t
    return int(newly.sum())


def select_tracked(
    candidate_ids: np.ndarray,
    axis_angles: dict,
    prev_tracked: list,
    n_track: int,
) -> list:
    """Choose the tracked subset: retain previously tracked features that are
    still candidates, then fill with the candidates closest to the boresight
    axis (ties broken by smaller id)."""
    cand = set(int(i) for i in candidate_ids)
    keep = [fid for fid in prev_tracked if fid in cand]
    if len(keep) < n_track:
        rest = sorted(
            (fid for fid in cand if fid not in keep),
            key=lambda fid: (axis_angles[fid], fid),
        )
        keep.extend(rest[: n_track - len(keep)])
    return keep[:n_track]
