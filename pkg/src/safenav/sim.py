"""Sampled-data closed-loop simulation and the Monte Carlo harness.

The plant is integrated with fixed-step RK4 at ``integrator_dt`` while the
control is recomputed at ``control_hz`` and held in between. A new scan is
taken and pushed into the barrier window at every multiple of the perception
period, before the control at that instant is computed.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .barrier import BarrierConfig, synthesize_barrier
from .composer import CompositeBarrier, eval_psi0_jet, eval_psi_chain
from .controller import AssumptionViolation, FilterConfig, compute_control
from .smoothmath import SmoothstepSpec
from .systems import (
    QuadrotorParams,
    QuadrotorPlant,
    QuadrotorState,
    double_integrator_model,
    quadrotor_desired_control,
    unicycle_desired_control,
    unicycle_model,
)
from .world import DynamicObstacle, LidarSpec, World, WorldError, load_world, min_clearance, ray_cast

__all__ = [
    "ConfigError",
    "PreconditionError",
    "ScenarioConfig",
    "TrajectoryLog",
    "DenseTrace",
    "load_scenario",
    "run_scenario",
    "compute_metrics",
    "monte_carlo",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "metrics_to_json",
    "GOAL_TOLERANCE",
    "json_safe",
]

log = logging.getLogger(__name__)

GOAL_TOLERANCE = 0.1


class ConfigError(ValueError):
    """Malformed or inconsistent scenario description."""


class PreconditionError(RuntimeError):
    """The initial state is outside the certified set at time zero."""

    def __init__(self, psi0: float, psi1: float):
        self.psi0 = psi0
        self.psi1 = psi1
        super().__init__(
            f"initial state is not certified safe: psi0(0,x0) = {psi0:.6g}, psi1(0,x0) = {psi1:.6g} "
            "(both must be >= 0)"
        )


# --- configuration -----------------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    """Complete experiment description.

    ``model`` is ``'unicycle'`` (state ``q_x, q_y, v, theta``) or
    ``'quadrotor'`` (design state ``q, p``; the plant carries attitude and
    thrust on top). ``alpha0`` is the gain inside the higher-order chain and
    ``alpha`` the gain in the filter constraint.
    """

    name: str = "scenario"
    model: str = "unicycle"
    world: Optional[World] = None
    world_path: Optional[str] = None
    x0: np.ndarray = field(default_factory=lambda: np.array([5.0, 2.0, 0.0, 0.0]))
    goal: np.ndarray = field(default_factory=lambda: np.array([13.0, 5.0]))
    duration: float = 20.0
    seed: int = 0
    control_hz: float = 100.0
    integrator_dt: float = 1e-3
    lidar: LidarSpec = field(default_factory=LidarSpec)
    barrier: BarrierConfig = field(default_factory=lambda: BarrierConfig(N=4, T=0.2))
    N: int = 4
    T: float = 0.2
    kappa: float = 30.0
    eta: SmoothstepSpec = field(default_factory=SmoothstepSpec)
    variant: str = "eq12"
    alpha0: float = 35.0
    alpha: float = 50.0
    gamma: float = 200.0
    gains: dict = field(default_factory=dict)
    montecarlo: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in ("unicycle", "quadrotor"):
            raise ConfigError(f"model: unknown plant {self.model!r}")
        self.x0 = np.asarray(self.x0, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        n, d = (4, 2) if self.model == "unicycle" else (6, 3)
        if self.x0.shape != (n,):
            raise ConfigError(f"x0: expected {n} entries for {self.model}, got {self.x0.shape[0]}")
        if self.goal.shape != (d,):
            raise ConfigError(f"goal: expected {d} entries for {self.model}, got {self.goal.shape[0]}")
        if not self.duration > 0:
            raise ConfigError("duration: must be positive")
        if not self.control_hz > 0 or not self.integrator_dt > 0:
            raise ConfigError("rates: control_hz and integrator_dt must be positive")
        sub = 1.0 / (self.control_hz * self.integrator_dt)
        if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
            raise ConfigError("rates: the control period must be an integer multiple of integrator_dt")
        per = self.T * self.control_hz
        if abs(per - round(per)) > 1e-9 or round(per) < 1:
            raise ConfigError("composer.T: must be an integer multiple of the control period")
        if abs(self.lidar.period - self.T) > 1e-12:
            raise ConfigError("lidar.period: must equal composer.T")
        if self.world is not None and self.world.dim != d:
            raise ConfigError(f"world: dimension {self.world.dim} does not match the {self.model} plant")
        if self.barrier.N != self.N or abs(self.barrier.T - self.T) > 1e-12:
            raise ConfigError("barrier: N and T must match the composer")

    @property
    def substeps(self) -> int:
        return int(round(1.0 / (self.control_hz * self.integrator_dt)))

    @property
    def steps_per_epoch(self) -> int:
        return int(round(self.T * self.control_hz))

    @property
    def position_dim(self) -> int:
        return 2 if self.model == "unicycle" else 3

    def replace(self, **changes) -> "ScenarioConfig":
        new = copy.copy(self)
        for key, val in changes.items():
            if not hasattr(new, key):
                raise ConfigError(f"unknown scenario field {key!r}")
            setattr(new, key, val)
        new.barrier = BarrierConfig(**{**asdict(new.barrier), "N": new.N, "T": new.T})
        new.__post_init__()
        return new


def _section(doc: dict, key: str) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{key}: expected a mapping")
    return sec


_KNOWN_KEYS = {
    "name", "model", "world", "x0", "goal", "duration", "seed", "rates", "lidar",
    "barrier", "composer", "filter", "gains", "montecarlo",
}


def scenario_from_dict(doc: dict, base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a parsed scenario document."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("model", "world", "x0", "goal"):
        if key not in doc:
            raise ConfigError(f"{key}: required field is missing")
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        world_ref = doc["world"]
        if isinstance(world_ref, dict):
            from .world import world_from_dict

            world, world_path = world_from_dict(world_ref), None
        else:
            wp = Path(world_ref)
            if not wp.is_absolute():
                wp = base_dir / wp
            world, world_path = load_world(wp), str(wp)
    except FileNotFoundError as exc:
        raise ConfigError(f"world: file not found: {exc.filename}") from exc
    except WorldError as exc:
        raise ConfigError(f"world: {exc}") from exc

    rates = _section(doc, "rates")
    lid = _section(doc, "lidar")
    bar = _section(doc, "barrier")
    comp = _section(doc, "composer")
    filt = _section(doc, "filter")
    try:
        T = float(comp.get("T", 0.2))
        N = int(comp.get("N", 1))
        fov_deg = float(lid.get("fov_deg", 360.0))
        lidar = LidarSpec(
            r_max=float(lid.get("r_max", 5.0)),
            beams=int(lid.get("beams", 100)),
            fov=math.radians(fov_deg),
            period=T,
            elevation_rows=int(lid.get("elevation_rows", 10)),
        )
        bfov = None if fov_deg >= 360.0 else math.radians(fov_deg)
        v_max = bar.get("v_max")
        barrier = BarrierConfig(
            r_max=float(bar.get("r_max", lidar.r_max)),
            eps_a=float(bar.get("eps_a", 0.15)),
            eps_beta=float(bar.get("eps_beta", 0.15)),
            rho=float(bar.get("rho", 30.0)),
            fov=bfov,
            fov_rho=None if bar.get("fov_rho") is None else float(bar["fov_rho"]),
            fov_margin=float(bar.get("fov_margin", 0.0)),
            N=N,
            T=T,
            v_max=None if v_max is None else float(v_max),
        )
        eta_doc = comp.get("eta") or {}
        eta = SmoothstepSpec(
            kind=str(eta_doc.get("kind", "polynomial")),
            r=int(eta_doc.get("r", 2)),
            nu=float(eta_doc.get("nu", 2.0)),
        )
        cfg = ScenarioConfig(
            name=str(doc.get("name", "scenario")),
            model=str(doc["model"]),
            world=world,
            world_path=world_path,
            x0=np.asarray(doc["x0"], dtype=float),
            goal=np.asarray(doc["goal"], dtype=float),
            duration=float(doc.get("duration", 20.0)),
            seed=int(doc.get("seed", 0)),
            control_hz=float(rates.get("control_hz", 100.0)),
            integrator_dt=float(rates.get("integrator_dt", 1e-3)),
            lidar=lidar,
            barrier=barrier,
            N=N,
            T=T,
            kappa=float(comp.get("kappa", 30.0)),
            eta=eta,
            variant=str(comp.get("variant", "eq12")),
            alpha0=float(comp.get("alpha0", 35.0)),
            alpha=float(filt.get("alpha", 50.0)),
            gamma=float(filt.get("gamma", 200.0)),
            gains=dict(_section(doc, "gains")),
            montecarlo=dict(_section(doc, "montecarlo")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, WorldError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.variant not in ("eq12", "eq46"):
        raise ConfigError(f"composer.variant: unknown variant {cfg.variant!r}")
    if v_max is not None and cfg.world.v_max is None:
        cfg.world = World(cfg.world.bounds, cfg.world.static, cfg.world.dynamic, float(v_max))
    return cfg


def load_scenario(path) -> ScenarioConfig:
    """Read a YAML scenario file; a relative world path resolves against the file's folder."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark is not None else ""
        raise ConfigError(f"{path}{where}: {getattr(exc, 'problem', exc)}") from exc
    return scenario_from_dict(doc, path.parent)


# --- logs --------------------------------------------------------------------------------------


@dataclass
class TrajectoryLog:
    """Control-rate time series of one run."""

    t: np.ndarray
    state: np.ndarray
    ud: np.ndarray
    u: np.ndarray
    psi0: np.ndarray
    psi1: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    d: np.ndarray
    clearance: np.ndarray
    k: np.ndarray
    goal: np.ndarray
    weights: Optional[np.ndarray] = None
    status: str = "completed"
    warnings: int = 0
    metrics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def position_dim(self) -> int:
        return self.goal.shape[0]


@dataclass
class DenseTrace:
    """Integrator-rate samples of ``psi_0`` and its time derivatives."""

    t: np.ndarray
    k: np.ndarray
    psi0: np.ndarray
    dpsi0_dt: np.ndarray  # partial derivative in time
    psi0_rate: np.ndarray  # total derivative along the trajectory
    psi0_accel_bound: np.ndarray  # |d/dt of the partial time derivative| along the trajectory


class _Recorder:
    def __init__(self, n_rows: int, n: int, m: int, N: int):
        self.t = np.empty(n_rows)
        self.state = np.empty((n_rows, n))
        self.ud = np.empty((n_rows, m))
        self.u = np.empty((n_rows, m))
        self.scalars = np.empty((n_rows, 7))
        self.k = np.empty(n_rows, dtype=int)
        self.weights = np.empty((n_rows, N + 1))
        self.rows = 0

    def add(self, t, x, ud, out, clearance, k, mu):
        i = self.rows
        self.t[i] = t
        self.state[i] = x
        self.ud[i] = ud
        self.u[i] = out.u_star
        self.scalars[i] = (out.psi0, out.psi1, out.lam, out.mu_star, out.omega, out.d, clearance)
        self.k[i] = k
        self.weights[i] = mu
        self.rows += 1

    def build(self, goal, status, warnings) -> TrajectoryLog:
        r = self.rows
        s = self.scalars[:r]
        return TrajectoryLog(
            t=self.t[:r].copy(),
            state=self.state[:r].copy(),
            ud=self.ud[:r].copy(),
            u=self.u[:r].copy(),
            psi0=s[:, 0].copy(),
            psi1=s[:, 1].copy(),
            lam=s[:, 2].copy(),
            mu=s[:, 3].copy(),
            omega=s[:, 4].copy(),
            d=s[:, 5].copy(),
            clearance=s[:, 6].copy(),
            k=self.k[:r].copy(),
            goal=np.asarray(goal, dtype=float).copy(),
            weights=self.weights[:r].copy(),
            status=status,
            warnings=warnings,
        )


# --- plant bindings ----------------------------------------------------------------------------


def _unicycle_zoh(x: np.ndarray, u: np.ndarray, h: float, steps: int) -> np.ndarray:
    """RK4 for the unicycle under a held input, written on scalars for speed."""
    qx, qy, v, th = (float(s) for s in x)
    a, w = float(u[0]), float(u[1])
    cos, sin = math.cos, math.sin
    h2 = 0.5 * h
    for _ in range(steps):
        # v and theta are affine in time under a held input; only q needs stages
        v2 = v + h2 * a
        th2 = th + h2 * w
        v4 = v + h * a
        th4 = th + h * w
        c1, s1 = cos(th), sin(th)
        c2, s2 = cos(th2), sin(th2)
        c4, s4 = cos(th4), sin(th4)
        qx += h / 6.0 * (v * c1 + 4.0 * v2 * c2 + v4 * c4)
        qy += h / 6.0 * (v * s1 + 4.0 * v2 * s2 + v4 * s4)
        v, th = v4, th4
    return np.array([qx, qy, v, th])


class _UnicyclePlant:
    name = "unicycle"

    def __init__(self, cfg: ScenarioConfig):
        self.model = unicycle_model()
        g = cfg.gains
        self.k = (float(g.get("k1", 0.5)), float(g.get("k2", 3.0)), float(g.get("k3", 3.0)))
        self.y = cfg.x0.copy()

    def design_state(self) -> np.ndarray:
        return self.y

    def position(self) -> np.ndarray:
        return self.y[:2]

    def heading(self) -> float:
        return float(self.y[3])

    def desired(self, x, goal) -> np.ndarray:
        return unicycle_desired_control(x, goal, *self.k)

    def advance(self, u, h: float, steps: int) -> None:
        self.y = _unicycle_zoh(self.y, u, h, steps)

    def state_derivative(self, u) -> np.ndarray:
        return self.model.dynamics(self.y, u)


class _QuadPlant:
    name = "quadrotor"

    def __init__(self, cfg: ScenarioConfig):
        self.model = double_integrator_model(3)
        g = cfg.gains
        self.params = QuadrotorParams()
        self.k5 = float(g.get("k5", 3.0))
        self.k6 = float(g.get("k6", 2.0))
        st = QuadrotorState.hover(cfg.x0[:3], self.params)
        st.p = cfg.x0[3:].copy()
        self.plant = QuadrotorPlant(self.params)
        self.y = st.to_vector()

    def design_state(self) -> np.ndarray:
        return self.y[:6]

    def position(self) -> np.ndarray:
        return self.y[:3]

    def heading(self) -> float:
        return 0.0

    def desired(self, x, goal) -> np.ndarray:
        return quadrotor_desired_control(x[:3], x[3:6], goal, self.k5, self.k6)

    def advance(self, u, h: float, steps: int) -> None:
        self.y = self.plant.step(self.y.copy(), u, h, steps)

    def state_derivative(self, u) -> np.ndarray:
        # position-only barriers see q' = p in both the plant and the design model
        out = np.zeros(6)
        out[:3] = self.y[3:6]
        return out


def _make_plant(cfg: ScenarioConfig):
    return _UnicyclePlant(cfg) if cfg.model == "unicycle" else _QuadPlant(cfg)


def make_composite(cfg: ScenarioConfig) -> CompositeBarrier:
    return CompositeBarrier(
        N=cfg.N, T=cfg.T, kappa=cfg.kappa, eta=cfg.eta, variant=cfg.variant, alphas=(cfg.alpha0,)
    )


def make_filter(cfg: ScenarioConfig, mode: str = "simulate") -> FilterConfig:
    return FilterConfig(gamma=cfg.gamma, alpha=cfg.alpha, min_intervention=True, mode=mode)


# --- simulation ---------------------------------------------------------------------------------


def run_scenario(
    cfg: ScenarioConfig,
    *,
    dense: bool = False,
    stop_on_collision: bool = False,
    filter_mode: str = "simulate",
) -> TrajectoryLog | tuple[TrajectoryLog, DenseTrace]:
    """Simulate one closed-loop run.

    Raises :class:`PreconditionError` when ``psi0(0, x0)`` or
    ``psi1(0, x0)`` is negative. A run that leaves the world bounds stops
    with status ``'left_bounds'``. With ``dense=True`` a :class:`DenseTrace`
    sampled at every integrator step is returned as well.
    """
    world = cfg.world
    if world is None:
        raise ConfigError("world: scenario has no world")
    plant = _make_plant(cfg)
    if not world.contains(plant.position()):
        raise ConfigError("x0: start position lies outside the world bounds")
    model = plant.model
    cb = make_composite(cfg)
    fcfg = make_filter(cfg, filter_mode)
    ctrl_dt = 1.0 / cfg.control_hz
    sub = cfg.substeps
    h = cfg.integrator_dt
    per = cfg.steps_per_epoch
    n_steps = int(round(cfg.duration * cfg.control_hz))
    rec = _Recorder(n_steps + 1, model.n, model.m, cfg.N)
    goal = cfg.goal
    warnings = 0
    status = "completed"
    if dense:
        dt_list, dk, dpsi, ddt, drate, dacc = [], [], [], [], [], []

    def dense_sample(tt, k):
        x = plant.design_state()
        jet, _ = eval_psi0_jet(cb, tt, x)
        xdot = plant.state_derivative(np.zeros(model.m))
        dt_list.append(tt)
        dk.append(k)
        dpsi.append(jet.value)
        ddt.append(jet.dt)
        drate.append(jet.dt + jet.grad @ xdot)
        dacc.append(abs(jet.dtt + jet.dt_grad @ xdot))

    for i in range(n_steps + 1):
        t = i * ctrl_dt
        if not world.contains(plant.position()):
            # the sensor model is undefined outside the map
            status = "left_bounds"
            break
        if i % per == 0:
            k = i // per
            scan = ray_cast(world, t, plant.position(), plant.heading(), cfg.lidar, k)
            cb.push(synthesize_barrier(scan, cfg.barrier), k)
        x = plant.design_state().copy()
        chain = eval_psi_chain(cb, t, x, model)
        if i == 0 and (chain.psi0.value < 0.0 or chain.psi1 < 0.0):
            raise PreconditionError(chain.psi0.value, chain.psi1)
        ud = plant.desired(x, goal)
        try:
            out = compute_control(t, x, chain, fcfg, ud)
        except AssumptionViolation:
            status = "assumption_violation"
            break
        if out.assumption_warning:
            warnings += 1
        clearance = min_clearance(world, t, plant.position())
        rec.add(t, x, ud, out, clearance, cb.k, chain.mu)
        if clearance < 0.0 and stop_on_collision:
            status = "collided"
            break
        if i == n_steps:
            break
        if dense:
            dense_sample(t, cb.k)
            for j in range(1, sub):
                plant.advance(out.u_star, h, 1)
                dense_sample(t + j * h, cb.k)
            plant.advance(out.u_star, h, 1)
        else:
            plant.advance(out.u_star, h, sub)
        if not np.all(np.isfinite(plant.y)):
            status = "diverged"
            break
    tlog = rec.build(goal, status, warnings)
    tlog.metrics = compute_metrics(tlog)
    if tlog.metrics["collided"] and status == "completed":
        tlog.status = "collided"
    if dense:
        trace = DenseTrace(
            np.array(dt_list), np.array(dk), np.array(dpsi), np.array(ddt), np.array(drate), np.array(dacc)
        )
        return tlog, trace
    return tlog


# --- metrics -----------------------------------------------------------------------------------


def settling_time(t: np.ndarray, pos: np.ndarray, goal: np.ndarray, tol: float = GOAL_TOLERANCE) -> float:
    """First time after which the position never leaves the goal ball; ``inf`` if it ends outside."""
    inside = np.linalg.norm(pos - goal[None, :], axis=1) <= tol
    if inside.size == 0 or not inside[-1]:
        return math.inf
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return float(t[0])
    return float(t[outside[-1] + 1])


def compute_metrics(tlog: TrajectoryLog) -> dict:
    """Settling time, per-channel RMS of ``u - u_d``, minimum ``psi_0`` and outcome flags."""
    if len(tlog) == 0:
        raise ValueError("cannot compute metrics of an empty log")
    d = tlog.position_dim
    ts = settling_time(tlog.t, tlog.state[:, :d], tlog.goal)
    rms = np.sqrt(np.mean((tlog.u - tlog.ud) ** 2, axis=0))
    return {
        "settling_time_s": ts,
        "rms_u": [float(v) for v in rms],
        "min_psi0": float(np.min(tlog.psi0)),
        "collided": bool(np.min(tlog.clearance) < 0.0),
        "reached": bool(math.isfinite(ts)),
    }


def json_safe(obj):
    """Replace non-finite floats with ``None`` and numpy scalars with Python ones."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return json_safe(obj.item())
    return obj


def metrics_to_json(metrics: dict) -> str:
    """Serialize metrics; an unbounded settling time is written as ``null``."""
    return json.dumps(json_safe(metrics), indent=2, sort_keys=True)


def csv_header(n: int, m: int) -> list[str]:
    return (
        ["t"]
        + [f"state{i}" for i in range(n)]
        + [f"ud{i}" for i in range(m)]
        + [f"u{i}" for i in range(m)]
        + ["psi0", "psi1", "lambda", "mu", "omega", "d", "clearance", "k"]
    )


def write_trajectory_csv(tlog: TrajectoryLog, path) -> None:
    n = tlog.state.shape[1]
    m = tlog.u.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(n, m))
        for i in range(len(tlog)):
            row = [tlog.t[i], *tlog.state[i], *tlog.ud[i], *tlog.u[i], tlog.psi0[i], tlog.psi1[i],
                   tlog.lam[i], tlog.mu[i], tlog.omega[i], tlog.d[i], tlog.clearance[i]]
            w.writerow([repr(float(v)) for v in row] + [str(int(tlog.k[i]))])


def read_trajectory_csv(path, goal) -> TrajectoryLog:
    """Read a trajectory written by :func:`write_trajectory_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for h in header if h.startswith("state"))
    m = sum(1 for h in header if h.startswith("ud"))
    if header != csv_header(n, m):
        raise ValueError(f"unexpected trajectory header {header}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    c = 1
    t = data[:, 0]
    state = data[:, c : c + n]
    c += n
    ud = data[:, c : c + m]
    c += m
    u = data[:, c : c + m]
    c += m
    rest = data[:, c:]
    return TrajectoryLog(
        t=t, state=state, ud=ud, u=u, psi0=rest[:, 0], psi1=rest[:, 1], lam=rest[:, 2], mu=rest[:, 3],
        omega=rest[:, 4], d=rest[:, 5], clearance=rest[:, 6], k=rest[:, 7].astype(int),
        goal=np.asarray(goal, dtype=float),
    )


# --- Monte Carlo -------------------------------------------------------------------------------

_MC_DEFAULTS = {
    "start_box": [[1.0, 14.0], [1.0, 14.0]],
    "goal_box": [[1.0, 14.0], [1.0, 14.0]],
    "spawn_box": [[0.0, 15.0], [0.0, 15.0]],
    "min_start_goal": 6.0,
    "obstacle_radius": [0.3, 0.5],
    "waypoints": 3,
    "start_clearance": 1.5,
    "goal_clearance": 0.5,
    "max_obstacles": 15,
}


@dataclass
class TrialSpec:
    index: int
    x0: np.ndarray
    goal: np.ndarray
    obstacles: list


def _static_clear(world: World, p: np.ndarray, margin: float) -> bool:
    return min_clearance(World(world.bounds, world.static, [], None), 0.0, p) >= margin


def draw_trial(cfg: ScenarioConfig, index: int, seed: int) -> TrialSpec:
    """Random start, goal and the full candidate list of moving obstacles for one trial.

    The stream depends only on ``(seed, index)``, so scenarios that differ
    only in the number of obstacles share starts, goals and obstacle paths.
    """
    mc = {**_MC_DEFAULTS, **cfg.montecarlo}
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    world = cfg.world
    v_max = float(cfg.barrier.v_max if cfg.barrier.v_max is not None else (world.v_max or 0.5))
    sb = np.asarray(mc["start_box"], dtype=float)
    gb = np.asarray(mc["goal_box"], dtype=float)
    pb = np.asarray(mc["spawn_box"], dtype=float)
    rlo, rhi = (float(v) for v in mc["obstacle_radius"])
    for _ in range(10_000):
        start = rng.uniform(sb[:, 0], sb[:, 1])
        goal = rng.uniform(gb[:, 0], gb[:, 1])
        if np.linalg.norm(goal - start) < mc["min_start_goal"]:
            continue
        if _static_clear(world, start, mc["start_clearance"]) and _static_clear(world, goal, mc["goal_clearance"]):
            break
    else:
        raise ConfigError("montecarlo: could not place start and goal")
    heading = rng.uniform(0.0, 2.0 * math.pi)
    obstacles = []
    while len(obstacles) < int(mc["max_obstacles"]):
        radius = rng.uniform(rlo, rhi)
        pts = rng.uniform(pb[:, 0], pb[:, 1], size=(int(mc["waypoints"]), pb.shape[0]))
        speed = v_max * (1.0 - rng.random())  # uniform on (0, v_max]
        if np.linalg.norm(pts[0] - start) - radius < mc["start_clearance"]:
            continue
        obstacles.append(DynamicObstacle(radius, pts, speed))
    x0 = np.array([start[0], start[1], 0.0, heading]) if cfg.model == "unicycle" else np.concatenate([start, np.zeros(3)])
    return TrialSpec(index, x0, goal, obstacles)


def _trial_config(cfg: ScenarioConfig, spec: TrialSpec, n_obstacles: int) -> ScenarioConfig:
    # the randomized obstacles replace any moving obstacles of the template
    world = World(cfg.world.bounds, cfg.world.static, spec.obstacles[:n_obstacles], cfg.world.v_max)
    new = copy.copy(cfg)
    new.world = world
    new.x0 = spec.x0
    new.goal = spec.goal
    return new


def run_trial(cfg: ScenarioConfig, n_obstacles: int, index: int, seed: int) -> dict:
    """One Monte Carlo trial; failures are classified rather than raised."""
    spec = draw_trial(cfg, index, seed)
    tcfg = _trial_config(cfg, spec, n_obstacles)
    try:
        tlog = run_scenario(tcfg, stop_on_collision=True)
    except PreconditionError as exc:
        return {"index": index, "outcome": "precondition", "collided": False, "reached": False,
                "min_psi0": exc.psi0, "settling_time_s": math.inf, "rms_u": [math.nan, math.nan]}
    m = tlog.metrics
    if m["collided"]:
        outcome = "collided"
    elif tlog.status in ("assumption_violation", "diverged", "left_bounds"):
        outcome = tlog.status
    elif not m["reached"]:
        outcome = "timed_out"
    else:
        outcome = "successful"
    return {"index": index, "outcome": outcome, "collided": m["collided"], "reached": m["reached"],
            "min_psi0": m["min_psi0"], "settling_time_s": m["settling_time_s"], "rms_u": m["rms_u"],
            "warnings": tlog.warnings}


def _run_trial_args(args):
    return run_trial(*args)


def boxstats(values: Sequence[float]) -> dict:
    """Median, interquartile range and 10th-90th percentile whiskers of the finite values."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"count": 0, "median": None, "p25": None, "p75": None, "p10": None, "p90": None}
    p10, p25, p50, p75, p90 = np.percentile(v, [10, 25, 50, 75, 90])
    return {"count": int(v.size), "median": float(p50), "p25": float(p25), "p75": float(p75),
            "p10": float(p10), "p90": float(p90)}


def aggregate(n_obstacles: int, results: list[dict]) -> dict:
    results = sorted(results, key=lambda r: r["index"])
    n = len(results)
    # trials that never start or leave the map are not counted as safe
    safe = sum(1 for r in results if not r["collided"] and r["outcome"] not in ("precondition", "left_bounds"))
    ok = sum(1 for r in results if r["outcome"] == "successful")
    good = [r for r in results if r["outcome"] == "successful"]
    outcomes: dict[str, int] = {}
    for r in results:
        outcomes[r["outcome"]] = outcomes.get(r["outcome"], 0) + 1
    m = len(good[0]["rms_u"]) if good else 0
    return {
        "n_obstacles": int(n_obstacles),
        "trials": n,
        "percent_safe": 100.0 * safe / n,
        "percent_successful": 100.0 * ok / n,
        "outcomes": dict(sorted(outcomes.items())),
        "boxstats": {
            "min_psi0": boxstats([r["min_psi0"] for r in good]),
            "settling_time_s": boxstats([r["settling_time_s"] for r in good]),
            **{f"rms_u{j}": boxstats([r["rms_u"][j] for r in good]) for j in range(m)},
        },
    }


def monte_carlo(
    cfg: ScenarioConfig,
    n_obstacles: int | Sequence[int],
    trials: int,
    seed: int = 0,
    jobs: int = 1,
) -> list[dict]:
    """Seeded randomized trials for each obstacle count.

    Results are reduced by trial index, so the output does not depend on
    ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    counts = [int(n_obstacles)] if np.isscalar(n_obstacles) else [int(c) for c in n_obstacles]
    mc = {**_MC_DEFAULTS, **cfg.montecarlo}
    if max(counts) > int(mc["max_obstacles"]):
        cfg = copy.copy(cfg)
        cfg.montecarlo = {**cfg.montecarlo, "max_obstacles": max(counts)}
    tasks = [(cfg, c, i, seed) for c in counts for i in range(trials)]
    if jobs == 1:
        results = [run_trial(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial_args, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    rows = []
    for c in counts:
        rows.append(aggregate(c, [r for (t, r) in zip(tasks, results) if t[1] == c]))
    return rows
