"""Ground-truth environment: obstacles, LiDAR ray casting and clearance queries.

Planar worlds hold circles, convex polygons and segment chains; spatial
worlds hold spheres and vertically extruded convex prisms. Dynamic obstacles
are disks (or balls) that follow piecewise-linear waypoint paths at constant
speed and park at their final waypoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from .barrier import Scan

__all__ = [
    "Circle",
    "ConvexPolygon",
    "SegmentChain",
    "Sphere",
    "Prism",
    "DynamicObstacle",
    "World",
    "LidarSpec",
    "WorldError",
    "ray_cast",
    "min_clearance",
    "advance_obstacles",
    "load_world",
    "world_to_dict",
]

TWO_PI = 2.0 * math.pi
_DISC_TOL = 1e-12
_PAR_TOL = 1e-15


class WorldError(ValueError):
    """Malformed world description or query outside the world."""


# --- shape primitives ------------------------------------------------------------------------


@dataclass(frozen=True)
class Circle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise WorldError(f"circle radius must be positive, got {self.radius}")

    def signed_distance(self, p: np.ndarray) -> float:
        return float(np.linalg.norm(p - self.center) - self.radius)

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        return _ray_ball(origin, dirs, self.center[None, :], np.array([self.radius]))[:, 0]


Sphere = Circle


def _polygon_edges(vertices: np.ndarray):
    v0 = vertices
    v1 = np.roll(vertices, -1, axis=0)
    e = v1 - v0
    # outward normal for counter-clockwise ordering
    n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return v0, v1, n


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from ``p`` to each segment ``a[i]-b[i]``."""
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    s = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    closest = a + s[:, None] * ab
    return np.linalg.norm(p - closest, axis=1)


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise WorldError("polygon needs at least three 2D vertices")
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if abs(area2) < 1e-12:
            raise WorldError("degenerate polygon")
        if area2 < 0:
            v = v[::-1].copy()
        _, _, n = _polygon_edges(v)
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross < -1e-12):
            raise WorldError("polygon is not convex")
        object.__setattr__(self, "vertices", v)

    def signed_distance(self, p: np.ndarray) -> float:
        v0, v1, n = _polygon_edges(self.vertices)
        side = np.einsum("ij,ij->i", p[None, :] - v0, n)
        dist = _segment_distance(p, v0, v1).min()
        return float(-dist if np.all(side <= 0) else dist)

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        v0, _, n = _polygon_edges(self.vertices)
        return _cyrus_beck(origin, dirs, n, np.einsum("ij,ij->i", n, v0))


@dataclass(frozen=True)
class SegmentChain:
    """Open polyline of wall segments with optional half-thickness."""

    points: np.ndarray
    thickness: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise WorldError("segment chain needs at least two 2D points")
        if self.thickness < 0:
            raise WorldError("segment thickness must be nonnegative")
        object.__setattr__(self, "points", pts)

    def signed_distance(self, p: np.ndarray) -> float:
        return float(_segment_distance(p, self.points[:-1], self.points[1:]).min() - self.thickness)

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        a = self.points[:-1]
        b = self.points[1:]
        if self.thickness > 0:
            # thick walls are capsules: two offset edges plus round caps at every joint
            best = np.full(dirs.shape[0], np.inf)
            for s, e in zip(a, b):
                d = e - s
                nrm = np.array([-d[1], d[0]]) / np.linalg.norm(d)
                for off in (self.thickness, -self.thickness):
                    best = np.minimum(best, _ray_segments(origin, dirs, (s + off * nrm)[None], (e + off * nrm)[None])[:, 0])
            caps = self.points
            best = np.minimum(
                best, _ray_ball(origin, dirs, caps, np.full(caps.shape[0], self.thickness)).min(axis=1)
            )
            return best
        return _ray_segments(origin, dirs, a, b).min(axis=1)


@dataclass(frozen=True)
class Prism:
    """Convex polygon footprint extruded between ``z_min`` and ``z_max``."""

    footprint: ConvexPolygon
    z_min: float
    z_max: float

    def __post_init__(self):
        if not self.z_max > self.z_min:
            raise WorldError("prism needs z_max > z_min")

    def signed_distance(self, p: np.ndarray) -> float:
        dxy = self.footprint.signed_distance(p[:2])
        dz = max(self.z_min - p[2], p[2] - self.z_max)
        if dxy <= 0 and dz <= 0:
            return float(max(dxy, dz))
        return float(math.hypot(max(dxy, 0.0), max(dz, 0.0)))

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        v0, _, n2 = _polygon_edges(self.footprint.vertices)
        normals = np.zeros((n2.shape[0] + 2, 3))
        normals[:-2, :2] = n2
        normals[-2] = (0.0, 0.0, 1.0)
        normals[-1] = (0.0, 0.0, -1.0)
        offsets = np.concatenate([np.einsum("ij,ij->i", n2, v0), [self.z_max, -self.z_min]])
        return _cyrus_beck(origin, dirs, normals, offsets)


def _ray_ball(origin: np.ndarray, dirs: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Nearest nonnegative ray parameter for unit ``dirs`` (B, d) against balls (M, d).

    Returns an array (B, M) with ``inf`` for misses. A ray starting inside a
    ball hits at parameter 0.
    """
    if centers.shape[0] == 0:
        return np.full((dirs.shape[0], 0), np.inf)
    f = origin[None, :] - centers  # (M, d)
    b = dirs @ f.T  # (B, M)
    c = np.einsum("ij,ij->i", f, f) - radii**2  # (M,)
    disc = b * b - c[None, :]
    hit = disc >= -_DISC_TOL
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = -b - root
    t_far = -b + root
    t = np.where(c[None, :] <= 0.0, 0.0, t_near)
    ok = hit & (t_far >= 0.0) & (t >= 0.0)
    return np.where(ok, t, np.inf)


def _ray_segments(origin: np.ndarray, dirs: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Ray parameters against planar segments; (B, S) with ``inf`` for misses."""
    e = b - a  # (S, 2)
    w = a - origin[None, :]  # (S, 2)
    den = dirs[:, 0:1] * e[None, :, 1] - dirs[:, 1:2] * e[None, :, 0]  # d x e
    t_num = w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]  # w x e
    s_num = w[None, :, 0] * dirs[:, 1:2] - w[None, :, 1] * dirs[:, 0:1]  # w x d
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / den
        s = s_num / den
    ok = (np.abs(den) > _PAR_TOL) & (t >= 0.0) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
    return np.where(ok, t, np.inf)


def _cyrus_beck(origin: np.ndarray, dirs: np.ndarray, normals: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Ray parameters against the convex set ``{p : normals @ p <= offsets}``."""
    num = offsets - normals @ origin  # (F,)
    den = dirs @ normals.T  # (B, F)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num[None, :] / den
    entering = den < -_PAR_TOL
    leaving = den > _PAR_TOL
    parallel = ~(entering | leaving)
    t_enter = np.max(np.where(entering, ratio, -np.inf), axis=1)
    t_exit = np.min(np.where(leaving, ratio, np.inf), axis=1)
    blocked = np.any(parallel & (num[None, :] < 0.0), axis=1)
    t = np.maximum(t_enter, 0.0)
    ok = (~blocked) & (t_enter <= t_exit) & (t_exit >= 0.0)
    return np.where(ok, t, np.inf)


# --- dynamic obstacles -----------------------------------------------------------------------


@dataclass(frozen=True)
class DynamicObstacle:
    """Disk or ball moving along waypoints at constant speed, holding the last one."""

    radius: float
    waypoints: np.ndarray
    speed: float
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if w.shape[1] not in (2, 3):
            raise WorldError("waypoints must be 2D or 3D")
        if not self.radius > 0:
            raise WorldError("dynamic obstacle radius must be positive")
        if self.speed < 0:
            raise WorldError("dynamic obstacle speed must be nonnegative")
        object.__setattr__(self, "waypoints", w)
        seg = np.linalg.norm(np.diff(w, axis=0), axis=1)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def dim(self) -> int:
        return self.waypoints.shape[1]

    def position(self, t: float) -> np.ndarray:
        if t < 0:
            raise WorldError("obstacle time must be nonnegative")
        w = self.waypoints
        cum = self._cum
        s = self.speed * t
        if w.shape[0] == 1 or s >= cum[-1]:
            return w[-1].copy()
        i = int(np.searchsorted(cum, s, side="right")) - 1
        length = cum[i + 1] - cum[i]
        frac = (s - cum[i]) / length if length > 0 else 0.0
        return w[i] + frac * (w[i + 1] - w[i])


# --- world -----------------------------------------------------------------------------------

StaticShape = Union[Circle, ConvexPolygon, SegmentChain, Prism]


@dataclass
class World:
    bounds: np.ndarray  # (dim, 2) rows of (low, high)
    static: list = field(default_factory=list)
    dynamic: list = field(default_factory=list)
    v_max: Optional[float] = None

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 2)
        if b.shape not in ((2, 2), (3, 2)) or np.any(b[:, 1] <= b[:, 0]):
            raise WorldError(f"bounds must be 2 or 3 (low, high) pairs, got {self.bounds!r}")
        self.bounds = b
        for ob in self.dynamic:
            if ob.dim != self.dim:
                raise WorldError("dynamic obstacle dimension does not match the world")
            if self.v_max is not None and ob.speed > self.v_max + 1e-12:
                raise WorldError(f"dynamic obstacle speed {ob.speed} exceeds v_max={self.v_max}")
        for shape in self.static:
            if self.dim == 3 and not isinstance(shape, (Circle, Prism)):
                raise WorldError(f"{type(shape).__name__} is not a 3D shape")
            if self.dim == 2 and isinstance(shape, Prism):
                raise WorldError("prisms need a 3D world")
            if isinstance(shape, Circle) and shape.center.shape[0] != self.dim:
                raise WorldError("circle/sphere dimension does not match the world")
        self._circles = [s for s in self.static if isinstance(s, Circle)]
        self._others = [s for s in self.static if not isinstance(s, Circle)]
        if self._circles:
            self._cc = np.stack([c.center for c in self._circles])
            self._cr = np.array([c.radius for c in self._circles])
        else:
            self._cc = np.zeros((0, self.dim))
            self._cr = np.zeros(0)
        self._dr = np.array([d.radius for d in self.dynamic])

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.bounds[:, 0]) and np.all(p <= self.bounds[:, 1]))

    def dynamic_positions(self, t: float) -> np.ndarray:
        if not self.dynamic:
            return np.zeros((0, self.dim))
        return np.stack([d.position(t) for d in self.dynamic])

    def ball_arrays(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Centers and radii of all round obstacles at time ``t``."""
        if not self.dynamic:
            return self._cc, self._cr
        return (
            np.concatenate([self._cc, self.dynamic_positions(t)]),
            np.concatenate([self._cr, self._dr]),
        )

    def with_dynamic(self, dynamic: Sequence[DynamicObstacle]) -> "World":
        return World(self.bounds.copy(), list(self.static), list(dynamic), self.v_max)


@dataclass(frozen=True)
class LidarSpec:
    """Range sensor layout.

    Planar sensors cast ``beams`` rays equally spaced over ``fov`` starting at
    ``heading - fov/2``. Spatial sensors cast an ``azimuth_rays`` by
    ``elevation_rows`` grid over the full sphere.
    """

    r_max: float = 5.0
    beams: int = 100
    fov: float = TWO_PI
    period: float = 0.2
    elevation_rows: int = 10

    def __post_init__(self):
        if self.beams < 1:
            raise WorldError("at least one beam is required")
        if not self.r_max > 0:
            raise WorldError("r_max must be positive")
        if not 0 < self.fov <= TWO_PI + 1e-12:
            raise WorldError("fov must lie in (0, 2 pi]")
        if not self.period > 0:
            raise WorldError("period must be positive")

    @property
    def full_circle(self) -> bool:
        return self.fov >= TWO_PI - 1e-12

    def planar_angles(self, heading: float) -> np.ndarray:
        if self.full_circle:
            step = TWO_PI / self.beams
        else:
            step = self.fov / (self.beams - 1) if self.beams > 1 else 0.0
        return heading - self.fov / 2.0 + step * np.arange(self.beams)

    def spatial_grid(self) -> tuple[np.ndarray, np.ndarray]:
        rows = max(1, min(self.elevation_rows, self.beams))
        cols = self.beams // rows
        az = TWO_PI * np.arange(cols) / cols
        el = -math.pi / 2 + (np.arange(rows) + 0.5) * math.pi / rows
        A, E = np.meshgrid(az, el, indexing="ij")
        return A.ravel(), E.ravel()


def advance_obstacles(world: World, t: float) -> np.ndarray:
    """Positions of the dynamic obstacles at time ``t``."""
    if t < 0:
        raise WorldError("time must be nonnegative")
    return world.dynamic_positions(t)


def _nearest_hits(world: World, t: float, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    centers, radii = world.ball_arrays(t)
    best = np.full(dirs.shape[0], np.inf)
    if centers.shape[0]:
        best = _ray_ball(origin, dirs, centers, radii).min(axis=1)
    for shape in world._others:
        best = np.minimum(best, shape.ray_hits(origin, dirs))
    return best


def ray_cast(world: World, t: float, pose, heading: float, spec: LidarSpec, index_k: int = 0) -> Scan:
    """Simulated range scan: nearest obstacle return within ``r_max`` per beam."""
    q = np.asarray(pose, dtype=float)
    if q.shape[0] != world.dim:
        raise WorldError(f"pose dimension {q.shape[0]} does not match world dimension {world.dim}")
    if not world.contains(q):
        raise WorldError(f"pose {q.tolist()} lies outside the world bounds")
    if world.dim == 2:
        ang = spec.planar_angles(heading)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        rng = _nearest_hits(world, t, q, dirs)
        keep = rng <= spec.r_max
        pts = np.stack([rng[keep], np.mod(ang[keep], TWO_PI)], axis=1)
    else:
        az, el = spec.spatial_grid()
        ce = np.cos(el)
        dirs = np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)
        rng = _nearest_hits(world, t, q, dirs)
        keep = rng <= spec.r_max
        pts = np.stack([rng[keep], np.mod(az[keep], TWO_PI), el[keep]], axis=1)
    return Scan(index_k=index_k, pose_q=q, heading_theta=float(heading), points=pts[: spec.beams])


def min_clearance(world: World, t: float, position) -> float:
    """Signed distance from ``position`` to the nearest obstacle at time ``t``.

    Returns ``inf`` in an empty world.
    """
    p = np.asarray(position, dtype=float)
    centers, radii = world.ball_arrays(t)
    best = math.inf
    if centers.shape[0]:
        best = float(np.min(np.linalg.norm(centers - p[None, :], axis=1) - radii))
    for shape in world._others:
        best = min(best, shape.signed_distance(p))
    return best


# --- world files -----------------------------------------------------------------------------


def _shape_from_record(rec: dict, dim: int):
    if not isinstance(rec, dict) or "type" not in rec or "params" not in rec:
        raise WorldError(f"static entry needs 'type' and 'params': {rec!r}")
    kind = str(rec["type"]).lower()
    p = rec["params"]
    try:
        if kind in ("circle", "sphere"):
            return Circle(np.asarray(p["center"], dtype=float), float(p["radius"]))
        if kind == "polygon":
            return ConvexPolygon(np.asarray(p["vertices"], dtype=float))
        if kind in ("segments", "segment_chain"):
            return SegmentChain(np.asarray(p["points"], dtype=float), float(p.get("thickness", 0.0)))
        if kind == "prism":
            return Prism(
                ConvexPolygon(np.asarray(p["vertices"], dtype=float)), float(p["z_min"]), float(p["z_max"])
            )
    except (KeyError, TypeError) as exc:
        raise WorldError(f"bad params for static '{kind}': {exc}") from exc
    raise WorldError(f"unknown static obstacle type {kind!r}")


def world_from_dict(doc: dict) -> World:
    if not isinstance(doc, dict) or "bounds" not in doc:
        raise WorldError("world document needs a 'bounds' key")
    unknown = set(doc) - {"bounds", "static", "dynamic", "v_max"}
    if unknown:
        raise WorldError(f"unknown world keys: {sorted(unknown)}")
    bounds = np.asarray(doc["bounds"], dtype=float)
    if bounds.ndim == 1:
        bounds = bounds.reshape(-1, 2)
    dim = bounds.shape[0]
    static = [_shape_from_record(r, dim) for r in doc.get("static") or []]
    dynamic = []
    for rec in doc.get("dynamic") or []:
        try:
            dynamic.append(DynamicObstacle(float(rec["radius"]), rec["waypoints"], float(rec["speed"])))
        except (KeyError, TypeError) as exc:
            raise WorldError(f"bad dynamic obstacle entry {rec!r}: {exc}") from exc
    v_max = doc.get("v_max")
    return World(bounds, static, dynamic, None if v_max is None else float(v_max))


def load_world(path) -> World:
    """Read a YAML world file with keys ``bounds``, ``static`` and ``dynamic``."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise WorldError(f"{path}: {exc}") from exc
    return world_from_dict(doc)


def world_to_dict(world: World) -> dict:
    static = []
    for s in world.static:
        if isinstance(s, Circle):
            static.append({"type": "circle" if world.dim == 2 else "sphere",
                           "params": {"center": s.center.tolist(), "radius": s.radius}})
        elif isinstance(s, ConvexPolygon):
            static.append({"type": "polygon", "params": {"vertices": s.vertices.tolist()}})
        elif isinstance(s, SegmentChain):
            static.append({"type": "segments", "params": {"points": s.points.tolist(), "thickness": s.thickness}})
        elif isinstance(s, Prism):
            static.append({"type": "prism", "params": {"vertices": s.footprint.vertices.tolist(),
                                                       "z_min": s.z_min, "z_max": s.z_max}})
    doc = {
        "bounds": world.bounds.tolist(),
        "static": static,
        "dynamic": [
            {"radius": d.radius, "waypoints": d.waypoints.tolist(), "speed": d.speed} for d in world.dynamic
        ],
    }
    if world.v_max is not None:
        doc["v_max"] = world.v_max
    return doc
