"""Plant models and desired (performance-only) controllers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "SystemModel",
    "unicycle_model",
    "unicycle_desired_control",
    "double_integrator_model",
    "QuadrotorParams",
    "QuadrotorState",
    "quadrotor_commands",
    "quadrotor_derivative",
    "quadrotor_desired_control",
    "euler_321",
    "orthonormalize",
    "rk4_step",
    "GOAL_RADIUS",
]

log = logging.getLogger(__name__)

GOAL_RADIUS = 0.05
_DIST_FLOOR = 1e-6


@dataclass(frozen=True)
class SystemModel:
    """Control-affine model ``x' = f(x) + g(x) u``.

    The position is the leading ``position_dim`` entries of the state.
    """

    name: str
    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    jac_f: Callable[[np.ndarray], np.ndarray]
    position_dim: int
    r: int = 2

    def chi(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[: self.position_dim]

    def dynamics(self, x, u) -> np.ndarray:
        return self.f(x) + self.g(x) @ u


def _unicycle_f(x):
    v, th = x[2], x[3]
    return np.array([v * math.cos(th), v * math.sin(th), 0.0, 0.0])


_UNICYCLE_G = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _unicycle_g(x):
    return _UNICYCLE_G


def _unicycle_jac(x):
    v, th = x[2], x[3]
    c, s = math.cos(th), math.sin(th)
    J = np.zeros((4, 4))
    J[0, 2] = c
    J[0, 3] = -v * s
    J[1, 2] = s
    J[1, 3] = v * c
    return J


def unicycle_model() -> SystemModel:
    """Nonholonomic ground robot with state ``(q_x, q_y, v, theta)`` and
    inputs ``(acceleration, turn rate)``."""
    return SystemModel("unicycle", 4, 2, _unicycle_f, _unicycle_g, _unicycle_jac, 2)


def unicycle_desired_control(x, q_g, k1: float = 0.5, k2: float = 3.0, k3: float = 3.0) -> np.ndarray:
    """Goal-seeking feedback that ignores obstacles.

    Returns zero inside a small goal radius, where the bearing to the goal
    is undefined.
    """
    qx, qy, v, th = (float(s) for s in x[:4])
    ex, ey = qx - q_g[0], qy - q_g[1]
    dist = math.hypot(ex, ey)
    if dist <= GOAL_RADIUS:
        return np.zeros(2)
    delta = math.atan2(ey, ex) - th + math.pi
    sd, cd = math.sin(delta), math.cos(delta)
    u1 = -(k1 + k3) * v + (1.0 + k1 * k3) * dist * cd + k1 * (k2 * dist + v) * sd * sd
    u2 = (k2 + v / max(dist, _DIST_FLOOR)) * sd
    return np.array([u1, u2])


def double_integrator_model(dim: int = 3) -> SystemModel:
    """``q' = p, p' = u`` in ``dim`` dimensions."""
    n = 2 * dim
    G = np.zeros((n, dim))
    G[dim:, :] = np.eye(dim)
    J = np.zeros((n, n))
    J[:dim, dim:] = np.eye(dim)

    def f(x):
        out = np.zeros(n)
        out[:dim] = x[dim:]
        return out

    return SystemModel(
        f"double_integrator{dim}d", n, dim, f, lambda x: G, lambda x: J, dim
    )


# --- attitude-stabilized quadrotor -------------------------------------------------------------


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.1
    gravity: float = 9.81
    k_att: float = 3.4e3
    k_rate: float = 116.67
    k_yaw: float = 1950.0
    k_thrust: float = 3.9e3
    tilt_limit: float = math.radians(80.0)


@dataclass
class QuadrotorState:
    q: np.ndarray
    p: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    F: float = 0.0

    SIZE = 19

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        self.F = float(self.F)

    @classmethod
    def hover(cls, q, params: QuadrotorParams = QuadrotorParams()) -> "QuadrotorState":
        return cls(q=q, p=np.zeros(3), F=params.mass * params.gravity)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.R.ravel(), self.omega, [self.F]])

    @classmethod
    def from_vector(cls, y) -> "QuadrotorState":
        y = np.asarray(y, dtype=float)
        return cls(q=y[0:3], p=y[3:6], R=y[6:15].reshape(3, 3), omega=y[15:18], F=y[18])

    @property
    def design_state(self) -> np.ndarray:
        """``(q, p)``, the state of the double-integrator design model."""
        return np.concatenate([self.q, self.p])


def euler_321(R: np.ndarray) -> tuple[float, float, float]:
    """Roll, pitch, yaw of a body-to-inertial rotation ``R = Rz(yaw) Ry(pitch) Rx(roll)``.

    Pitch is clamped 1e-6 away from +-pi/2.
    """
    lim = math.pi / 2 - 1e-6
    pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    pitch = max(-lim, min(lim, pitch))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw


def _euler_rate_matrix(roll: float, pitch: float) -> np.ndarray:
    # maps Euler-angle rates (roll, pitch, yaw) to body rates
    sphi, cphi = math.sin(roll), math.cos(roll)
    sth, cth = math.sin(pitch), math.cos(pitch)
    return np.array(
        [
            [1.0, 0.0, -sth],
            [0.0, cphi, sphi * cth],
            [0.0, -sphi, cphi * cth],
        ]
    )


def _skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def quadrotor_commands(u, params: QuadrotorParams = QuadrotorParams()) -> tuple[float, float, float]:
    """Map an acceleration command to commanded ``(roll, pitch, thrust)``.

    Tilt commands beyond ``params.tilt_limit`` are saturated with a warning.
    """
    ux, uy, uz = (float(s) for s in u)
    g = params.gravity
    pitch_c = math.atan(ux / (uz + g)) if uz + g != 0 else math.copysign(math.pi / 2, ux)
    roll_c = math.atan(-uy * math.cos(pitch_c) / (uz + g)) if uz + g != 0 else math.copysign(math.pi / 2, -uy)
    lim = params.tilt_limit
    if abs(pitch_c) > lim or abs(roll_c) > lim:
        log.warning("tilt command (%.3f, %.3f) rad saturated at %.3f", roll_c, pitch_c, lim)
        pitch_c = max(-lim, min(lim, pitch_c))
        roll_c = max(-lim, min(lim, roll_c))
    thrust_c = (uz + g) * params.mass / (math.cos(roll_c) * math.cos(pitch_c))
    return roll_c, pitch_c, max(thrust_c, 0.0)


def _quad_rhs(y: np.ndarray, roll_c: float, pitch_c: float, thrust_c: float, params: QuadrotorParams) -> np.ndarray:
    R = y[6:15].reshape(3, 3)
    w = y[15:18]
    F = y[18]
    roll, pitch, _ = euler_321(R)
    M = _euler_rate_matrix(roll, pitch)
    sphi, cphi = math.sin(roll), math.cos(roll)
    cth, tth = math.cos(pitch), math.tan(pitch)
    rates = (
        w[0] + (sphi * w[1] + cphi * w[2]) * tth,
        cphi * w[1] - sphi * w[2],
        (sphi * w[1] + cphi * w[2]) / cth,
    )
    # commanded yaw is identically zero, so the commanded yaw rate is zero too
    loop = np.array(
        [
            params.k_att * (roll_c - roll) - params.k_rate * rates[0],
            params.k_att * (pitch_c - pitch) - params.k_rate * rates[1],
            -params.k_yaw * rates[2],
        ]
    )
    dy = np.empty(19)
    dy[0:3] = y[3:6]
    dy[3:6] = (F / params.mass) * R[:, 2]
    dy[5] -= params.gravity
    dy[6:15] = (R @ _skew(w)).ravel()
    dy[15:18] = M @ loop
    dy[18] = params.k_thrust * (thrust_c - F)
    return dy


def quadrotor_derivative(
    state: QuadrotorState, u, params: QuadrotorParams = QuadrotorParams()
) -> QuadrotorState:
    """Time derivative of the attitude-stabilized quadrotor under acceleration command ``u``."""
    roll_c, pitch_c, thrust_c = quadrotor_commands(u, params)
    dy = _quad_rhs(state.to_vector(), roll_c, pitch_c, thrust_c, params)
    return QuadrotorState.from_vector(dy)


def quadrotor_desired_control(q, p, q_g, k5: float = 3.0, k6: float = 2.0) -> np.ndarray:
    """Saturated PD law ``k5 tanh(q_g - q) - k6 p``."""
    return k5 * np.tanh(np.asarray(q_g, dtype=float) - np.asarray(q, dtype=float)) - k6 * np.asarray(p, dtype=float)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def rk4_step(fun: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float) -> np.ndarray:
    k1 = fun(y)
    k2 = fun(y + 0.5 * h * k1)
    k3 = fun(y + 0.5 * h * k2)
    k4 = fun(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class QuadrotorPlant:
    """Integrates the full quadrotor under a held acceleration command."""

    def __init__(self, params: QuadrotorParams = QuadrotorParams()):
        self.params = params

    def step(self, y: np.ndarray, u, h: float, substeps: int = 1) -> np.ndarray:
        roll_c, pitch_c, thrust_c = quadrotor_commands(u, self.params)
        params = self.params

        def rhs(z):
            return _quad_rhs(z, roll_c, pitch_c, thrust_c, params)

        for _ in range(substeps):
            y = rk4_step(rhs, y, h)
            y[6:15] = orthonormalize(y[6:15].reshape(3, 3)).ravel()
        return y
