"""Convex polygon geometry: footprints, Minkowski sums, containment and SAT tests.

Polygons are immutable and store their vertices counterclockwise as an
``(n, 2)`` float array. Batched helpers operate on ``(..., n, 2)`` arrays and
may contain zero-length edges; every integral in this package treats such
edges as contributing nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateCovarianceError, InvalidArgumentError

COLLINEAR_TOL = 1e-9
BOUNDARY_TOL = 1e-12


class Vec2(NamedTuple):
    x: float
    y: float


class Shape(NamedTuple):
    """Length (along heading) and width of a rectangular body, in meters."""

    length: float
    width: float


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def _normalize(vertices: np.ndarray) -> np.ndarray:
    """Drop repeated and collinear vertices from a closed vertex loop."""
    pts = [np.asarray(p, dtype=float) for p in vertices]
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        n = len(pts)
        for i in range(n):
            prev, cur, nxt = pts[i - 1], pts[i], pts[(i + 1) % n]
            if np.allclose(cur, prev, atol=1e-12, rtol=0.0) or abs(_cross(prev, cur, nxt)) <= COLLINEAR_TOL:
                del pts[i]
                changed = True
                break
    return np.array(pts, dtype=float).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon with counterclockwise vertices.

    The constructor normalizes the loop (duplicate and collinear vertices are
    removed) and validates convexity; clockwise input is rejected rather than
    silently reversed.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise InvalidArgumentError(f"vertices must have shape (n, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("polygon vertices must be finite")
        v = _normalize(v)
        if len(v) < 3:
            raise InvalidArgumentError("a polygon needs at least 3 non-collinear vertices")
        turns = _cross(v, np.roll(v, -1, axis=0), np.roll(v, -2, axis=0))
        if np.any(turns < -COLLINEAR_TOL):
            raise InvalidArgumentError("vertices are not convex and counterclockwise")
        # a convex ccw loop winds exactly once
        e = np.roll(v, -1, axis=0) - v
        ang = np.arctan2(e[:, 1], e[:, 0])
        winding = np.sum(np.mod(np.diff(np.append(ang, ang[0])), 2 * np.pi))
        if abs(winding - 2 * np.pi) > 1e-6:
            raise InvalidArgumentError("vertex loop does not wind once counterclockwise")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    def __eq__(self, other):
        """Point-set equality up to cyclic vertex order (tolerance 1e-9 m)."""
        if not isinstance(other, ConvexPolygon) or len(self) != len(other):
            return NotImplemented if not isinstance(other, ConvexPolygon) else False
        for shift in range(len(self)):
            if np.allclose(np.roll(other.vertices, shift, axis=0), self.vertices, atol=1e-9, rtol=0.0):
                return True
        return False

    __hash__ = None

    @property
    def edges(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def centroid(self) -> np.ndarray:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        c = x * np.roll(y, -1) - np.roll(x, -1) * y
        a = 0.5 * np.sum(c)
        return np.array([np.sum((x + np.roll(x, -1)) * c), np.sum((y + np.roll(y, -1)) * c)]) / (6 * a)

    def translated(self, t) -> "ConvexPolygon":
        return ConvexPolygon(self.vertices + np.asarray(t, dtype=float))

    def transformed(self, matrix, offset=(0.0, 0.0)) -> np.ndarray:
        """Vertices under ``p -> matrix @ p + offset`` (raw array; orientation may flip)."""
        return self.vertices @ np.asarray(matrix, dtype=float).T + np.asarray(offset, dtype=float)

    @classmethod
    def convex_hull(cls, points) -> "ConvexPolygon":
        """Monotone-chain hull of an arbitrary point cloud."""
        pts = sorted(set(map(tuple, np.asarray(points, dtype=float).round(12))))
        if len(pts) < 3:
            raise InvalidArgumentError("hull needs at least 3 distinct points")

        def half(seq):
            out = []
            for p in seq:
                while len(out) >= 2 and _cross(np.array(out[-2]), np.array(out[-1]), np.array(p)) <= COLLINEAR_TOL:
                    out.pop()
                out.append(p)
            return out

        lower = half(pts)
        upper = half(reversed(pts))
        return cls(np.array(lower[:-1] + upper[:-1]))


@dataclass(frozen=True)
class RectangleSpec:
    length: float
    width: float
    center: Vec2 = Vec2(0.0, 0.0)
    heading: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise InvalidArgumentError(f"rectangle dimensions must be positive, got {self.length} x {self.width}")
        object.__setattr__(self, "center", Vec2(*map(float, self.center)))

    @property
    def shape(self) -> Shape:
        return Shape(self.length, self.width)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rectangle_corners(length, width, cx, cy, heading) -> np.ndarray:
    """Counterclockwise corners of (batched) rectangles, shape ``(..., 4, 2)``."""
    length, width, cx, cy, heading = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (length, width, cx, cy, heading))
    )
    hl, hw = 0.5 * length[..., None], 0.5 * width[..., None]
    local_x = np.array([1.0, -1.0, -1.0, 1.0]) * hl
    local_y = np.array([1.0, 1.0, -1.0, -1.0]) * hw
    c, s = np.cos(heading)[..., None], np.sin(heading)[..., None]
    x = cx[..., None] + c * local_x - s * local_y
    y = cy[..., None] + s * local_x + c * local_y
    return np.stack([x, y], axis=-1)


def rectangle_footprint(spec: RectangleSpec) -> ConvexPolygon:
    """Footprint polygon of a rectangle; edges run along heading and heading + pi/2."""
    return ConvexPolygon(rectangle_corners(spec.length, spec.width, spec.center.x, spec.center.y, spec.heading))


def minkowski_sum(a: ConvexPolygon, b: ConvexPolygon) -> ConvexPolygon:
    """Minkowski sum of two convex polygons by merging edges in polar-angle order.

    Each loop starts at the vertex whose outgoing edge has the smallest polar
    angle in [0, 2pi), i.e. its lowest-leftmost vertex; deriving the start from
    the same angles used for the merge keeps the two consistent when edges are
    within roundoff of horizontal. Parallel edges become collinear vertices,
    which the polygon constructor fuses.
    """
    parts = []
    start = np.zeros(2)
    for p in (a, b):
        e = np.roll(p.vertices, -1, axis=0) - p.vertices
        ang = np.mod(np.arctan2(e[:, 1], e[:, 0]), 2 * np.pi)
        k = int(np.argmin(ang))
        start = start + p.vertices[k]
        parts.append((np.roll(ang, -k), np.roll(e, -k, axis=0)))
    ang = np.concatenate([parts[0][0], parts[1][0]])
    edges = np.concatenate([parts[0][1], parts[1][1]])[np.argsort(ang, kind="stable")]
    verts = start + np.cumsum(np.vstack([np.zeros(2), edges[:-1]]), axis=0)
    return ConvexPolygon(verts)


def rect_minkowski_vertices(ego_shape, ego_heading, obs_shape, obs_heading) -> np.ndarray:
    """Batched Minkowski sum of two origin-centered rectangles.

    Returns counterclockwise vertices of shape ``(..., 8, 2)`` centered at the
    origin. Parallel edge pairs appear as zero-length edges instead of being
    fused, so every batch member has the same vertex count.
    """
    el, ew = ego_shape
    ol, ow = obs_shape
    ego_heading, obs_heading = np.broadcast_arrays(
        np.asarray(ego_heading, dtype=float), np.asarray(obs_heading, dtype=float)
    )
    quarter = np.arange(4) * (0.5 * np.pi)
    ang = np.concatenate(
        [ego_heading[..., None] + quarter, obs_heading[..., None] + quarter], axis=-1
    )
    lengths = np.array([el, ew, el, ew, ol, ow, ol, ow], dtype=float)
    ang = np.mod(ang, 2 * np.pi)
    order = np.argsort(ang, axis=-1, kind="stable")
    ang_sorted = np.take_along_axis(ang, order, axis=-1)
    len_sorted = np.broadcast_to(lengths, ang.shape)
    len_sorted = np.take_along_axis(len_sorted, order, axis=-1)
    ex = len_sorted * np.cos(ang_sorted)
    ey = len_sorted * np.sin(ang_sorted)
    vx = np.concatenate([np.zeros(ex.shape[:-1] + (1,)), np.cumsum(ex[..., :-1], axis=-1)], axis=-1)
    vy = np.concatenate([np.zeros(ey.shape[:-1] + (1,)), np.cumsum(ey[..., :-1], axis=-1)], axis=-1)
    # the sum is centrally symmetric about the origin, so the vertex mean is the center
    vx -= vx.mean(axis=-1, keepdims=True)
    vy -= vy.mean(axis=-1, keepdims=True)
    return np.stack([vx, vy], axis=-1)


def collision_volume(ego: RectangleSpec, obstacle_shape, relative_heading: float) -> ConvexPolygon:
    """Region of obstacle-center offsets (obstacle minus ego) at which the bodies touch.

    The ego keeps its own heading; the obstacle heading is ``ego.heading +
    relative_heading``. ``ego.center`` is ignored: the volume lives in the
    relative frame with the ego center at the origin.
    """
    obstacle_shape = Shape(*obstacle_shape)
    # reflect the ego through its center: collision iff x_rel in S_o - S_e, and S_e is symmetric
    a = rectangle_footprint(RectangleSpec(ego.length, ego.width, Vec2(0.0, 0.0), ego.heading))
    b = rectangle_footprint(
        RectangleSpec(obstacle_shape.length, obstacle_shape.width, Vec2(0.0, 0.0), ego.heading + relative_heading)
    )
    return minkowski_sum(a, b)


def contains_point(poly: ConvexPolygon, p) -> bool:
    """True iff ``p`` lies inside ``poly`` or on its boundary."""
    p = np.asarray(p, dtype=float)
    v = poly.vertices
    return bool(np.all(_cross(v, np.roll(v, -1, axis=0), p[None, :]) >= -BOUNDARY_TOL))


def contains_points(vertices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Vectorized containment for one ``(n, 2)`` polygon and ``(m, 2)`` points."""
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    rel = points[:, None, :] - v[None, :, :]
    cr = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
    return np.all(cr >= -BOUNDARY_TOL, axis=1)


def rectangles_intersect_batch(a_corners: np.ndarray, b_corners: np.ndarray) -> np.ndarray:
    """Separating-axis test for batches of rectangles given as ``(..., 4, 2)`` corners.

    Touching rectangles count as intersecting.
    """
    hit = np.ones(np.broadcast_shapes(a_corners.shape, b_corners.shape)[:-2], dtype=bool)
    for corners in (a_corners, b_corners):
        for k in range(2):
            e = corners[..., k + 1, :] - corners[..., k, :]
            axis = np.stack([-e[..., 1], e[..., 0]], axis=-1)[..., None, :]
            pa = np.sum(a_corners * axis, axis=-1)
            pb = np.sum(b_corners * axis, axis=-1)
            scale = BOUNDARY_TOL * (1.0 + np.abs(axis).sum(axis=-1)[..., 0])
            sep = (pa.max(axis=-1) < pb.min(axis=-1) - scale) | (pb.max(axis=-1) < pa.min(axis=-1) - scale)
            hit &= ~sep
    return hit


def rectangles_intersect(a: RectangleSpec, b: RectangleSpec) -> bool:
    ca = rectangle_corners(a.length, a.width, a.center.x, a.center.y, a.heading)
    cb = rectangle_corners(b.length, b.width, b.center.x, b.center.y, b.heading)
    return bool(rectangles_intersect_batch(ca, cb))


def polygons_intersect(a: ConvexPolygon, b: ConvexPolygon) -> bool:
    """Generic separating-axis test over all edge normals of both polygons."""
    for poly in (a, b):
        e = poly.edges
        for axis in np.stack([-e[:, 1], e[:, 0]], axis=1):
            pa = a.vertices @ axis
            pb = b.vertices @ axis
            if pa.max() < pb.min() - BOUNDARY_TOL or pb.max() < pa.min() - BOUNDARY_TOL:
                return False
    return True


def obb_3sigma_corners(means, covs, shape, n_sigma: float = 3.0) -> np.ndarray:
    """Corners ``(T, 4, 2)`` of mean-pose footprints inflated by ``n_sigma`` positional deviations.

    Each body axis is grown on both sides by ``n_sigma * sqrt(axis^T S axis)``
    where ``S`` is the positional covariance at that step.
    """
    means = np.asarray(means, dtype=float).reshape(-1, np.shape(means)[-1])
    covs = np.asarray(covs, dtype=float)
    cov = covs.reshape((-1,) + covs.shape[-2:])[:, :2, :2]
    scale = np.maximum(1.0, np.abs(cov).max(axis=(1, 2)))
    w, v = np.linalg.eigh(cov)
    bad = ~np.all(np.isfinite(cov), axis=(1, 2)) | (w[:, 0] < -1e-12 * scale)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise DegenerateCovarianceError(f"positional covariance at step {k} is not positive semi-definite", v[k, :, 0])
    h = means[:, 2]
    along = np.stack([np.cos(h), np.sin(h)], axis=-1)
    across = np.stack([-np.sin(h), np.cos(h)], axis=-1)
    var_l = np.einsum("ti,tij,tj->t", along, cov, along)
    var_w = np.einsum("ti,tij,tj->t", across, cov, across)
    shape = Shape(*shape)
    grow_l = 2 * n_sigma * np.sqrt(np.maximum(var_l, 0.0))
    grow_w = 2 * n_sigma * np.sqrt(np.maximum(var_w, 0.0))
    return rectangle_corners(shape.length + grow_l, shape.width + grow_w, means[:, 0], means[:, 1], h)


def obb_3sigma(traj, shape=None, n_sigma: float = 3.0) -> list[ConvexPolygon]:
    """Per-step footprints at the mean pose inflated to cover ``n_sigma`` positional deviations."""
    shape = Shape(*(shape if shape is not None else traj.shape))
    corners = obb_3sigma_corners(traj.means(), traj.covs(), shape, n_sigma)
    return [ConvexPolygon(c) for c in corners]


def polygon_from_points(points: Sequence[Sequence[float]]) -> ConvexPolygon:
    return ConvexPolygon(np.asarray(points, dtype=float))
