"""Point-cloud geometry for the pouring pipeline.

Extracts the table plane, the cup cylinder, and the raw (uncorrected) liquid
surface height from a single depth-camera point cloud.  All coordinates are in
meters, in the camera frame: the camera sits at the origin, z roughly along
the optical axis, y pointing down in the image.  Nothing here assumes an
axis-aligned table; "up" always comes from the fitted plane normal.

The fits are plain RANSAC with a least-squares refit on the winning inlier
set.  Both fits are deterministic for a fixed ``RansacConfig.seed``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, NoLiquidVisible, NoModelFound, ParseError

# Points this far below the fitted table still count as cup-interior when the
# cup is empty and sensor noise scatters bottom points under the plane.
BOTTOM_SLACK = 0.005

# Collinearity guard for degenerate-input checks, in meters.
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class Point3:
    """A single point in the camera frame, meters."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "Point3":
        return Point3(float(a[0]), float(a[1]), float(a[2]))


@dataclass
class PointCloud:
    """One depth frame: an (N, 3) float array plus stream metadata."""

    points: np.ndarray
    frame_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if self.timestamp < 0.0:
            raise ValueError("timestamp must be non-negative")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PlaneModel:
    """Plane n . p = offset with |n| = 1, oriented so the camera origin has
    positive signed distance (the camera is always above the table)."""

    normal: np.ndarray
    offset: float
    inlier_count: int

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Positive on the camera side of the plane."""
        return np.asarray(points, dtype=float) @ self.normal - self.offset


@dataclass(frozen=True)
class CylinderModel:
    """Upright cup model: axis through ``axis_point`` along ``axis_direction``
    (unit, parallel to the table normal), with ``height`` measured from the
    table to the highest wall inlier."""

    axis_point: Point3
    axis_direction: np.ndarray
    radius: float
    height: float
    inlier_count: int

    def radial_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance of each point from the cylinder axis."""
        rel = np.asarray(points, dtype=float) - self.axis_point.as_array()
        along = rel @ self.axis_direction
        return np.linalg.norm(rel - np.outer(along, self.axis_direction), axis=1)


@dataclass(frozen=True)
class RawHeightMeasurement:
    """Uncorrected surface height above the inner cup bottom.

    ``alpha`` is the incidence angle between the camera ray to the selected
    surface region and the liquid-surface normal, needed downstream for the
    refraction correction.
    """

    h_r: float
    alpha: float
    point_count: int
    timestamp: float


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_threshold: float = 0.003
    min_inlier_ratio: float = 0.2
    seed: int = 0


def _check_not_collinear(points: np.ndarray) -> None:
    if len(points) < 3:
        raise DegenerateInput(f"need at least 3 points, got {len(points)}")
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] < _RANK_TOL:
        raise DegenerateInput("points are collinear")


def _orient_toward_camera(normal: np.ndarray, offset: float) -> tuple[np.ndarray, float]:
    # Camera origin signed distance is -offset; flip so it comes out positive.
    if offset > 0.0:
        return -normal, -offset
    return normal, offset


def _plane_from_inliers(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid)
    normal = vt[2]
    return normal, float(normal @ centroid)


def fit_plane_ransac(cloud: PointCloud, config: RansacConfig = RansacConfig()) -> PlaneModel:
    """Fit the dominant plane (the table) to a point cloud.

    Args:
        cloud: input frame; the table must be the largest planar structure.
        config: RANSAC iteration count, inlier threshold, minimum inlier
            ratio and RNG seed.

    Returns:
        PlaneModel with the normal oriented toward the camera.

    Raises:
        DegenerateInput: fewer than 3 points, or all points collinear.
        NoModelFound: best plane captures less than ``min_inlier_ratio``
            of the cloud.
    """
    pts = cloud.points
    _check_not_collinear(pts)
    n_pts = len(pts)
    rng = np.random.default_rng(config.seed)

    best_count = 0
    best_model: tuple[np.ndarray, float] | None = None
    for _ in range(config.iterations):
        idx = rng.choice(n_pts, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        offset = float(normal @ p0)
        count = int(np.count_nonzero(np.abs(pts @ normal - offset) <= config.inlier_threshold))
        if count > best_count:
            best_count = count
            best_model = (normal, offset)

    if best_model is None or best_count < 3:
        raise NoModelFound("no plane hypothesis had 3 or more inliers")

    # Inlier count alone is a biased objective here: with a generous
    # threshold a slightly tilted plane keeps the whole table in band while
    # clipping extra wall points.  Refit on a half-threshold band around the
    # median residual (the table majority pins the median) and iterate; the
    # trimmed refit is kept unless it degenerates.
    normal, offset = best_model
    for _ in range(3):
        res = pts @ normal - offset
        band = np.abs(res) <= config.inlier_threshold
        if np.count_nonzero(band) < 3:
            break
        core = np.abs(res - np.median(res[band])) <= config.inlier_threshold / 2.0
        if np.count_nonzero(core) < 3:
            break
        normal, offset = _plane_from_inliers(pts[core])
    best_count = int(np.count_nonzero(np.abs(pts @ normal - offset) <= config.inlier_threshold))

    if best_count < config.min_inlier_ratio * n_pts:
        raise NoModelFound(
            f"best plane has {best_count}/{n_pts} inliers, "
            f"below min ratio {config.min_inlier_ratio}"
        )
    normal, offset = _orient_toward_camera(normal, offset)
    return PlaneModel(normal=normal, offset=offset, inlier_count=best_count)


def extract_above_plane(cloud: PointCloud, plane: PlaneModel, margin: float = 0.006) -> PointCloud:
    """Return the sub-cloud strictly above the plane (toward the camera) by
    more than ``margin``.  Point order is preserved, so the operation is
    idempotent."""
    mask = plane.signed_distance(cloud.points) > margin
    return PointCloud(
        points=cloud.points[mask], frame_id=cloud.frame_id, timestamp=cloud.timestamp
    )


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic in-plane orthonormal basis.
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(normal)))] = 1.0
    u = np.cross(normal, helper)
    u = u / np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


def _circumcircle(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray):
    # Center equidistant from the three points; None when near-collinear.
    a = 2.0 * np.array([p1 - p0, p2 - p0])
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) < 1e-12:
        return None
    b = np.array([p1 @ p1 - p0 @ p0, p2 @ p2 - p0 @ p0])
    center = np.linalg.solve(a, b)
    return center, float(np.linalg.norm(p0 - center))


def _kasa_circle(points2d: np.ndarray) -> tuple[np.ndarray, float]:
    # Algebraic least-squares circle fit.
    a = np.column_stack([2.0 * points2d, np.ones(len(points2d))])
    b = (points2d**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    center = sol[:2]
    radius = float(np.sqrt(max(sol[2] + center @ center, 0.0)))
    return center, radius


def fit_cylinder_ransac(
    cloud: PointCloud, table: PlaneModel, config: RansacConfig = RansacConfig()
) -> CylinderModel:
    """Fit an upright cylinder (the cup) to the above-table cloud.

    The cup always stands on the table, so the axis is constrained parallel to
    the table normal and the fit reduces to a 2D circle fit on the points
    projected into the table plane.

    Args:
        cloud: points above the table (cup wall plus liquid surface).
        table: fitted table plane; supplies the axis direction.
        config: RANSAC parameters, shared with the plane fit.

    Returns:
        CylinderModel with ``axis_point`` on the table plane and ``height``
        set to the highest inlier elevation above the table.

    Raises:
        DegenerateInput: fewer than 3 points, or all points collinear.
        NoModelFound: best circle captures less than ``min_inlier_ratio``
            of the cloud (e.g. the cloud is a flat patch with no wall).
    """
    pts = cloud.points
    _check_not_collinear(pts)
    n_pts = len(pts)
    normal = table.normal
    u, v = _plane_basis(normal)
    flat = np.column_stack([pts @ u, pts @ v])
    rng = np.random.default_rng(config.seed)

    best_count = 0
    best_circle: tuple[np.ndarray, float] | None = None
    for _ in range(config.iterations):
        idx = rng.choice(n_pts, size=3, replace=False)
        hypo = _circumcircle(flat[idx[0]], flat[idx[1]], flat[idx[2]])
        if hypo is None:
            continue
        center, radius = hypo
        if radius < 0.005 or radius > 0.5:
            continue  # cups are hand-sized; reject wild arcs
        count = int(
            np.count_nonzero(
                np.abs(np.linalg.norm(flat - center, axis=1) - radius)
                <= config.inlier_threshold
            )
        )
        if count > best_count:
            best_count = count
            best_circle = (center, radius)

    if best_circle is None:
        raise NoModelFound("no circle hypothesis survived")

    # The liquid surface shares the cup footprint, so raw inlier count is a
    # biased objective: a circle pulled a couple of mm inside the rim keeps
    # every wall point in band while sweeping extra surface points.  Refit on
    # a half-threshold ring around the median radial distance instead (the
    # wall majority pins the median) and keep the refit unless it diverges.
    center, radius = best_circle
    for _ in range(2):
        dist = np.linalg.norm(flat - center, axis=1)
        band = np.abs(dist - radius) <= config.inlier_threshold
        if np.count_nonzero(band) < 3:
            break
        ring = np.abs(dist - np.median(dist[band])) <= config.inlier_threshold / 2.0
        if np.count_nonzero(ring) < 3:
            break
        center, radius = _kasa_circle(flat[ring])
    if not 0.005 <= radius <= 0.5:
        center, radius = best_circle
    best_count = int(
        np.count_nonzero(
            np.abs(np.linalg.norm(flat - center, axis=1) - radius)
            <= config.inlier_threshold
        )
    )

    if best_count < config.min_inlier_ratio * n_pts:
        raise NoModelFound(
            f"best circle has {best_count}/{n_pts} inliers, "
            f"below min ratio {config.min_inlier_ratio}"
        )

    inlier_mask = np.abs(np.linalg.norm(flat - center, axis=1) - radius) <= config.inlier_threshold
    height = float(table.signed_distance(pts[inlier_mask]).max())
    # Lift the 2D center back to 3D on the table plane.
    axis_point = center[0] * u + center[1] * v + table.offset * normal
    return CylinderModel(
        axis_point=Point3.from_array(axis_point),
        axis_direction=normal.copy(),
        radius=float(radius),
        height=height,
        inlier_count=best_count,
    )


def measure_raw_height(
    cloud: PointCloud,
    cup: CylinderModel,
    table: PlaneModel,
    diameter_scale: float = 0.8,
) -> RawHeightMeasurement:
    """Average the surface points inside the cup into one raw height sample.

    Only points inside the co-axial cylinder of radius
    ``diameter_scale * cup.radius`` count, which keeps the cup wall and the
    meniscus ring out of the average.  The returned ``alpha`` is the angle
    between the table normal and the camera ray to the cup axis at the
    measured height: the surface sits centered in the cup and parallel to
    the table, and anchoring the ray on the fitted axis keeps ``alpha`` free
    of sampling jitter.

    Raises:
        NoLiquidVisible: nothing falls inside the search region.
    """
    if not 0.0 < diameter_scale <= 1.0:
        raise ValueError(f"diameter_scale must be in (0, 1], got {diameter_scale}")
    pts = cloud.points
    radial = cup.radial_distance(pts)
    elevation = table.signed_distance(pts)
    mask = (
        (radial <= diameter_scale * cup.radius)
        & (elevation >= -BOTTOM_SLACK)
        & (elevation <= cup.height)
    )
    selected = np.count_nonzero(mask)
    if selected == 0:
        raise NoLiquidVisible("no points inside the liquid search region")

    h_r = max(0.0, float(elevation[mask].mean()))
    anchor = cup.axis_point.as_array() + h_r * cup.axis_direction
    norm = np.linalg.norm(anchor)
    if norm < 1e-9:
        alpha = 0.0
    else:
        cos_alpha = abs(float(anchor @ table.normal)) / norm
        alpha = float(np.arccos(np.clip(cos_alpha, -1.0, 1.0)))
    return RawHeightMeasurement(
        h_r=h_r, alpha=alpha, point_count=int(selected), timestamp=cloud.timestamp
    )


# ---------------------------------------------------------------------------
# Point-cloud file format: ASCII, "POINTS <N>" header, one "x y z" line per
# point (meters), '#' lines are comments.


def load_cloud(path: str) -> PointCloud:
    """Read a point cloud from the ASCII cloud format.

    Raises:
        ParseError: malformed header, bad coordinate line, or point-count
            mismatch; the message names the offending line number.
    """
    points: list[list[float]] = []
    declared: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if declared is None:
                parts = line.split()
                if len(parts) != 2 or parts[0] != "POINTS":
                    raise ParseError(f"line {line_no}: expected 'POINTS <N>' header")
                try:
                    declared = int(parts[1])
                except ValueError:
                    raise ParseError(f"line {line_no}: point count is not an integer") from None
                if declared < 0:
                    raise ParseError(f"line {line_no}: point count must be non-negative")
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"line {line_no}: expected 3 coordinates, got {len(parts)}")
            try:
                points.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"line {line_no}: non-numeric coordinate") from None

    if declared is None:
        raise ParseError("line 1: missing 'POINTS <N>' header")
    if len(points) != declared:
        raise ParseError(
            f"line {line_no if points or declared else 1}: header declares {declared} points, "
            f"file has {len(points)}"
        )
    array = np.array(points, dtype=float) if points else np.zeros((0, 3))
    return PointCloud(points=array)


def save_cloud(cloud: PointCloud, path: str) -> None:
    """Write a point cloud in the ASCII cloud format (reads back identically
    through ``load_cloud`` up to float formatting)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"POINTS {len(cloud)}\n")
        for x, y, z in cloud.points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
