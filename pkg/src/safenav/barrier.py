"""Perception barrier synthesis from a range scan.

Every detected point spawns an elliptical (2D) or spheroidal (3D) exclusion
region stretching from the point out to the edge of the sensing radius. The
detection region (a disk, optionally cut down to the sensor field of view)
and the exclusion terms are composed with a soft minimum, giving a smooth
function whose zero-superlevel set is locally free of obstacles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy.optimize import bisect

from .smoothmath import ScalarJet2, softblend_arrays, stable_softmin

__all__ = [
    "Scan",
    "BarrierConfig",
    "ExclusionTerm",
    "DetectionRegion",
    "PerceptionBarrier",
    "SynthesisError",
    "synthesize_barrier",
    "eval_barrier_jet",
    "solve_fov_offset",
    "heading_normal",
]


class SynthesisError(RuntimeError):
    """Barrier synthesis could not satisfy its construction conditions."""


@dataclass
class Scan:
    """Raw range returns captured at time ``index_k * T``.

    ``points`` has one row per beam hit: ``(r, azimuth)`` in 2D and
    ``(r, azimuth, elevation)`` in 3D. Azimuths are world-frame angles in
    ``[0, 2 pi)``; elevation is measured up from the horizontal plane.
    """

    index_k: int
    pose_q: np.ndarray
    heading_theta: float = 0.0
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.pose_q = np.asarray(self.pose_q, dtype=float)
        dim = self.pose_q.shape[0]
        if dim not in (2, 3):
            raise ValueError(f"scan pose must be 2D or 3D, got {dim}")
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = np.zeros((0, dim))
        self.points = pts.reshape(-1, dim)

    @property
    def dim(self) -> int:
        return self.pose_q.shape[0]


@dataclass(frozen=True)
class BarrierConfig:
    """Synthesis parameters.

    ``fov`` is the sensor field of view in radians (``None`` for a full
    360 degree sensor). When ``v_max`` is given, the exclusion and detection
    margins are checked against the worst-case obstacle travel
    ``T (N + 1) v_max`` over the lifetime of a snapshot.
    """

    r_max: float = 5.0
    eps_a: float = 0.15
    eps_beta: float = 0.15
    rho: float = 30.0
    fov: Optional[float] = None
    fov_rho: Optional[float] = None
    fov_margin: float = 0.0
    N: int = 1
    T: float = 0.2
    v_max: Optional[float] = None

    def __post_init__(self):
        for name in ("r_max", "eps_a", "rho", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_beta < 0 or self.eps_beta >= self.r_max:
            raise ValueError("eps_beta must lie in [0, r_max)")
        if self.fov is not None and not (0 < self.fov <= math.pi):
            raise ValueError("fov must lie in (0, pi] for a limited field of view")
        if self.fov_margin < 0:
            raise ValueError("fov_margin must be nonnegative")
        if self.v_max is not None:
            reach = self.T * (self.N + 1) * self.v_max
            if self.eps_a < reach - 1e-12 or self.eps_beta < reach - 1e-12:
                raise ValueError(
                    f"dynamic margins require eps_a, eps_beta >= T(N+1)v_max = {reach:.6g}"
                )


@dataclass(frozen=True)
class ExclusionTerm:
    """``sigma(p) = (p - center)^T R^T P R (p - center) - 1``."""

    center: np.ndarray
    rotation: np.ndarray
    axes: np.ndarray  # diagonal of P: inverse squared semi-axes

    @property
    def shape_matrix(self) -> np.ndarray:
        return self.rotation.T @ np.diag(self.axes) @ self.rotation

    def value(self, p) -> float:
        d = np.asarray(p, dtype=float) - self.center
        return float(d @ self.shape_matrix @ d - 1.0)


@dataclass(frozen=True)
class DetectionRegion:
    """Detection area model ``xi``.

    ``disk360``: ``beta(p) = (r_max - eps_beta)^2 - |p - q|^2``.
    ``limited_fov``: soft minimum of ``beta`` and the two half planes bounding
    the field-of-view wedge, each offset by ``offset``.
    """

    kind: Literal["disk360", "limited_fov"]
    center: np.ndarray
    radius: float
    heading: float = 0.0
    fov: Optional[float] = None
    offset: float = 0.0
    rho: Optional[float] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("detection radius r_max - eps_beta must be positive")
        if self.kind == "limited_fov" and (self.fov is None or self.rho is None):
            raise ValueError("limited_fov region needs fov and rho")


def heading_normal(theta: float) -> np.ndarray:
    """Left normal ``(-sin theta, cos theta)`` of the direction ``theta``."""
    return np.array([-math.sin(theta), math.cos(theta)])


class PerceptionBarrier:
    """Smooth local barrier ``b_k`` built from one scan.

    The exclusion terms are stored as stacked arrays so that evaluation is
    vectorized over all detected points.
    """

    def __init__(
        self,
        terms: list[ExclusionTerm],
        region: DetectionRegion,
        rho: float,
        dim: int,
        index_k: int,
    ):
        if dim not in (2, 3):
            raise ValueError("barrier dimension must be 2 or 3")
        if not rho > 0:
            raise ValueError("rho must be positive")
        self.terms = list(terms)
        self.region = region
        self.rho = float(rho)
        self.dim = dim
        self.index_k = int(index_k)
        if self.terms:
            self._centers = np.stack([t.center for t in self.terms])
            self._shapes = np.stack([t.shape_matrix for t in self.terms])
        else:
            self._centers = np.zeros((0, dim))
            self._shapes = np.zeros((0, dim, dim))
        if region.kind == "limited_fov":
            lo = heading_normal(region.heading - region.fov / 2)
            hi = -heading_normal(region.heading + region.fov / 2)
            self._halfplanes = np.stack([lo, hi])
        else:
            self._halfplanes = None

    def __repr__(self) -> str:
        return (
            f"PerceptionBarrier(k={self.index_k}, dim={self.dim}, terms={len(self.terms)}, "
            f"region={self.region.kind})"
        )

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def shapes(self) -> np.ndarray:
        return self._shapes

    def _region_arrays(self, p: np.ndarray):
        reg = self.region
        d = self.dim
        dp = p - reg.center
        beta = reg.radius**2 - dp @ dp
        g_beta = -2.0 * dp
        H_beta = -2.0 * np.eye(d)
        if self._halfplanes is None:
            return beta, g_beta, H_beta
        tau = self._halfplanes @ dp - reg.offset
        vals = np.concatenate([[beta], tau])
        grads = np.vstack([g_beta, self._halfplanes])
        hess = np.zeros((3, d, d))
        hess[0] = H_beta
        v, g, H, _ = softblend_arrays(vals, grads, hess, reg.rho, "min")
        return v, g, H

    def position_arrays(self, p: np.ndarray):
        """Value, gradient, Hessian in position space plus the blend weights."""
        p = np.asarray(p, dtype=float)
        xi, g_xi, H_xi = self._region_arrays(p)
        if not self.terms:
            return xi, g_xi, H_xi, np.ones(1)
        diff = p - self._centers  # (L, d)
        Ad = np.einsum("lij,lj->li", self._shapes, diff)
        sig = np.einsum("li,li->l", diff, Ad) - 1.0
        L = sig.size
        vals = np.empty(L + 1)
        vals[0] = xi
        vals[1:] = sig
        grads = np.empty((L + 1, self.dim))
        grads[0] = g_xi
        grads[1:] = 2.0 * Ad
        hess = np.empty((L + 1, self.dim, self.dim))
        hess[0] = H_xi
        hess[1:] = 2.0 * self._shapes
        return softblend_arrays(vals, grads, hess, self.rho, "min")

    def value(self, p) -> float:
        """Barrier value at a position (no derivatives)."""
        p = np.asarray(p, dtype=float)
        reg = self.region
        dp = p - reg.center
        beta = reg.radius**2 - dp @ dp
        if self._halfplanes is None:
            xi = beta
        else:
            tau = self._halfplanes @ dp - reg.offset
            xi = stable_softmin(np.concatenate([[beta], tau]), reg.rho)
        if not self.terms:
            return float(xi)
        diff = p - self._centers
        sig = np.einsum("li,lij,lj->l", diff, self._shapes, diff) - 1.0
        return stable_softmin(np.concatenate([[xi], sig]), self.rho)

    def components(self, p) -> tuple[float, np.ndarray]:
        """``(xi(p), sigma_i(p))`` before soft-min composition."""
        p = np.asarray(p, dtype=float)
        reg = self.region
        dp = p - reg.center
        beta = reg.radius**2 - dp @ dp
        if self._halfplanes is None:
            xi = beta
        else:
            tau = self._halfplanes @ dp - reg.offset
            xi = stable_softmin(np.concatenate([[beta], tau]), reg.rho)
        diff = p - self._centers
        sig = np.einsum("li,lij,lj->l", diff, self._shapes, diff) - 1.0
        return float(xi), sig


def _direction(azimuth: float, elevation: Optional[float]) -> np.ndarray:
    if elevation is None:
        return np.array([math.cos(azimuth), math.sin(azimuth)])
    polar = math.pi / 2 - elevation
    return np.array(
        [math.sin(polar) * math.cos(azimuth), math.sin(polar) * math.sin(azimuth), math.cos(polar)]
    )


def _rotation(azimuth: float, elevation: Optional[float]) -> np.ndarray:
    ct, st = math.cos(azimuth), math.sin(azimuth)
    if elevation is None:
        return np.array([[ct, st], [-st, ct]])
    polar = math.pi / 2 - elevation
    cp, sp = math.cos(polar), math.sin(polar)
    return np.array(
        [
            [ct * sp, st * sp, cp],
            [-st, ct, 0.0],
            [-ct * cp, -st * cp, sp],
        ]
    )


def exclusion_term(
    q: np.ndarray, r: float, azimuth: float, elevation: Optional[float], r_max: float, eps_a: float
) -> ExclusionTerm:
    """Ellipse (or prolate spheroid) enclosing the hit and its radial shadow."""
    half = (r_max - r) / 2.0
    a = half + eps_a
    z = math.sqrt(a * a - half * half)
    u = _direction(azimuth, elevation)
    center = q + 0.5 * (r + r_max) * u
    dim = q.shape[0]
    axes = np.full(dim, z**-2)
    axes[0] = a**-2
    return ExclusionTerm(center=center, rotation=_rotation(azimuth, elevation), axes=axes)


def solve_fov_offset(
    beta_value_at_pose: float, theta_f: float, rho: float, target: float = 0.0
) -> float:
    """Half-plane offset ``eps`` placing the capture pose on the region level ``target``.

    Solves ``softmin_rho(beta, -eps, -eps) = target`` by bisection on
    ``[-10, 10]``. At the capture pose both half-plane terms equal ``-eps``
    whatever the field of view, so ``theta_f`` does not enter the root.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not beta_value_at_pose > 0:
        raise ValueError("detection function must be positive at the capture pose")
    if not 0 < theta_f <= math.pi:
        raise ValueError("theta_f must lie in (0, pi]")

    def residual(eps: float) -> float:
        return stable_softmin([beta_value_at_pose, -eps, -eps], rho) - target

    lo, hi = -10.0, 10.0
    f_lo, f_hi = residual(lo), residual(hi)
    if f_lo * f_hi > 0:
        raise SynthesisError(
            f"no sign change for FOV offset on [{lo}, {hi}]: residuals {f_lo:.3g}, {f_hi:.3g} "
            f"(beta={beta_value_at_pose:.6g}, rho={rho}, target={target})"
        )
    eps = bisect(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    res = residual(eps)
    if abs(res) >= 1e-10:
        raise SynthesisError(f"FOV offset residual {res:.3g} exceeds 1e-10")
    return float(eps)


def synthesize_barrier(scan: Scan, cfg: BarrierConfig) -> PerceptionBarrier:
    """Build the perception barrier ``b_k`` for one scan."""
    q = scan.pose_q
    dim = scan.dim
    pts = scan.points
    if pts.shape[0] and np.any(pts[:, 0] > cfg.r_max + 1e-12):
        bad = int(np.argmax(pts[:, 0] > cfg.r_max + 1e-12))
        raise ValueError(f"scan point {bad} has range {pts[bad, 0]:.6g} beyond r_max={cfg.r_max}")
    if pts.shape[0] and np.any(pts[:, 0] < 0):
        raise ValueError("scan ranges must be nonnegative")
    terms = []
    for row in pts:
        r = min(float(row[0]), cfg.r_max)
        elev = float(row[2]) if dim == 3 else None
        terms.append(exclusion_term(q, r, float(row[1]), elev, cfg.r_max, cfg.eps_a))

    radius = cfg.r_max - cfg.eps_beta
    if cfg.fov is None or cfg.fov >= 2 * math.pi:
        region = DetectionRegion("disk360", center=q.copy(), radius=radius)
    else:
        if dim != 2:
            raise ValueError("limited field of view is only supported for planar scans")
        inner_rho = cfg.fov_rho if cfg.fov_rho is not None else cfg.rho
        offset = solve_fov_offset(radius**2, cfg.fov, inner_rho, target=cfg.fov_margin)
        region = DetectionRegion(
            "limited_fov",
            center=q.copy(),
            radius=radius,
            heading=float(scan.heading_theta),
            fov=cfg.fov,
            offset=offset,
            rho=inner_rho,
        )
    return PerceptionBarrier(terms, region, cfg.rho, dim, scan.index_k)


def eval_barrier_jet(b: PerceptionBarrier, x) -> ScalarJet2:
    """Jet of ``b_k`` at state ``x``.

    The leading ``b.dim`` entries of ``x`` are the position; the barrier does
    not depend on the remaining state coordinates, nor on time.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] < b.dim:
        raise ValueError(f"state of shape {x.shape} is too short for a {b.dim}D barrier")
    v, g, H, _ = b.position_arrays(x[: b.dim])
    n = x.shape[0]
    grad = np.zeros(n)
    grad[: b.dim] = g
    hess = np.zeros((n, n))
    hess[: b.dim, : b.dim] = H
    return ScalarJet2(v, 0.0, 0.0, grad, np.zeros(n), hess)
