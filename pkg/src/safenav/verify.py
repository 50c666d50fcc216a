"""Randomized property suites exposed through ``safenav verify``.

Each suite returns a list of :class:`PropertyResult`; a failing property
carries the first counterexample found.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .barrier import BarrierConfig, Scan, eval_barrier_jet, synthesize_barrier
from .composer import CompositeBarrier, eval_psi0_jet, eval_psi_chain
from .controller import FilterConfig, compute_control, constraint_value, objective, qp_oracle
from .smoothmath import SmoothstepSpec, smoothstep_jet, stable_softmax, stable_softmin
from .systems import double_integrator_model, unicycle_model

__all__ = [
    "PropertyResult",
    "SUITES",
    "run_suite",
    "random_scan",
    "random_composite",
    "random_state",
    "fd_relative_error",
]


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""
    counterexample: Optional[str] = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        out = f"[{tag}] {self.name}: {self.detail}"
        if self.counterexample:
            out += f"\n        counterexample: {self.counterexample}"
        return out


# --- random problem generators ---------------------------------------------------------------


def random_scan(rng: np.random.Generator, dim: int, k: int = 0, n_points: Optional[int] = None,
                r_max: float = 5.0, pose=None) -> Scan:
    """Scan with random hits around a random pose."""
    q = rng.uniform(-2.0, 2.0, size=dim) if pose is None else np.asarray(pose, dtype=float)
    n = int(rng.integers(0, 12)) if n_points is None else n_points
    r = rng.uniform(0.8, r_max, size=n)
    az = rng.uniform(0.0, 2 * math.pi, size=n)
    if dim == 2:
        pts = np.stack([r, az], axis=1)
    else:
        el = rng.uniform(-math.pi / 2, math.pi / 2, size=n)
        pts = np.stack([r, az, el], axis=1)
    return Scan(index_k=k, pose_q=q, heading_theta=float(rng.uniform(0, 2 * math.pi)), points=pts)


def random_composite(rng: np.random.Generator, dim: int = 2, N: int = 2, variant: str = "eq12",
                     kappa: float = 30.0, rho: float = 10.0, alpha0: float = 35.0,
                     fov: Optional[float] = None) -> CompositeBarrier:
    """Window filled with ``N + 1`` random snapshots (pushed as k = 0..N)."""
    cb = CompositeBarrier(N=N, T=0.2, kappa=kappa, variant=variant, alphas=(alpha0,))
    bcfg = BarrierConfig(rho=rho, N=N, fov=fov)
    center = rng.uniform(-1.0, 1.0, size=dim)
    for k in range(N + 1):
        pose = center + rng.uniform(-0.5, 0.5, size=dim)
        cb.push(synthesize_barrier(random_scan(rng, dim, k, pose=pose), bcfg), k)
    return cb


def random_state(rng: np.random.Generator, cb: CompositeBarrier, model) -> tuple[float, np.ndarray]:
    """A time inside the current epoch and a state near the latest capture pose."""
    t = (cb.k + rng.uniform(0.02, 0.95)) * cb.T
    x = np.zeros(model.n)
    pose = cb.slot(0).region.center
    d = model.position_dim
    x[:d] = pose + rng.uniform(-1.5, 1.5, size=d)
    x[d:] = rng.uniform(-1.0, 1.0, size=model.n - d)
    return t, x


def fd_relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=float)
    nmr = np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - nmr)) / max(1.0, float(np.max(np.abs(a)))))


# --- softmath suite ---------------------------------------------------------------------------


def _suite_softmath(rng: np.random.Generator) -> list[PropertyResult]:
    out = []
    worst = 0.0
    bad = None
    for i in range(10_000):
        n = int(rng.integers(1, 20))
        scale = 10.0 ** rng.uniform(-3, 6)
        z = rng.uniform(-scale, scale, size=n)
        kappa = float(rng.choice([1.0, 10.0, 100.0, 1000.0]))
        smin = stable_softmin(z, kappa)
        smax = stable_softmax(z, kappa)
        slack = math.log(n) / kappa
        viol = max(
            z.min() - slack - smin, smin - z.min(), z.max() - slack - smax, smax - z.max(), 0.0
        )
        if not (math.isfinite(smin) and math.isfinite(smax)):
            viol = math.inf
        if viol > worst:
            worst = viol
            bad = f"z={z.tolist()}, kappa={kappa}"
    out.append(PropertyResult("soft min/max bounds", worst <= 1e-12,
                              f"10^4 vectors up to |z| = 1e6, worst violation {worst:.3g}",
                              bad if worst > 1e-12 else None))
    # bounds at unit scale must hold to 1e-12
    worst = 0.0
    for _ in range(2000):
        z = rng.normal(size=int(rng.integers(1, 10)))
        kappa = float(rng.choice([1.0, 10.0, 100.0, 1000.0]))
        smin = stable_softmin(z, kappa)
        worst = max(worst, z.min() - math.log(z.size) / kappa - smin, smin - z.min())
    out.append(PropertyResult("soft min bounds at unit scale", worst <= 1e-12, f"worst {worst:.3g}"))
    mono_ok = True
    for _ in range(200):
        z = rng.normal(size=5) * 3
        gaps = [abs(stable_softmin(z, 2.0**j) - z.min()) for j in range(11)]
        if any(b > a + 1e-15 for a, b in zip(gaps, gaps[1:])):
            mono_ok = False
            break
    out.append(PropertyResult("convergence monotone in sharpness", mono_ok, "kappa ladder 1..1024"))
    worst = 0.0
    for _ in range(2000):
        z = rng.normal(size=6) * 5
        kappa = float(rng.uniform(0.5, 20))
        naive = -np.log(np.sum(np.exp(-kappa * z))) / kappa
        worst = max(worst, abs(naive - stable_softmin(z, kappa)) / max(1.0, abs(naive)))
    out.append(PropertyResult("shifted form matches naive form", worst < 1e-10, f"worst rel {worst:.3g}"))
    spec = SmoothstepSpec("polynomial", 2, 2.0)
    h = 1e-6
    worst = 0.0
    for t in rng.uniform(-0.2, 0.7, size=500):
        v, d1, d2 = smoothstep_jet(t, spec)
        fd1 = (smoothstep_jet(t + h, spec)[0] - smoothstep_jet(t - h, spec)[0]) / (2 * h)
        fd2 = (smoothstep_jet(t + h, spec)[1] - smoothstep_jet(t - h, spec)[1]) / (2 * h)
        worst = max(worst, abs(fd1 - d1), abs(fd2 - d2) / max(1.0, abs(d2)))
    ends = [smoothstep_jet(0.0, spec), smoothstep_jet(0.5, spec)]
    ends_ok = ends[0] == (0.0, 0.0, 0.0) and ends[1] == (1.0, 0.0, 0.0)
    out.append(PropertyResult("smoothstep derivatives", worst < 1e-6 and ends_ok, f"worst {worst:.3g}"))
    return out


# --- jets suite -------------------------------------------------------------------------------


def _jet_checks(rng, model, dim, samples: int, h: float = 1e-5) -> tuple[float, float, float, float, float]:
    """Worst relative errors: barrier, composite, chained, weight laws, time partials.

    Time partials use a step scaled to the epoch length since the homotopy
    varies on that scale rather than on the unit scale of the state.
    """
    wb = wp = wc = wm = wt = 0.0
    for _ in range(samples):
        fov = None if dim == 3 or rng.random() < 0.5 else float(rng.uniform(math.pi / 6, math.pi))
        cb = random_composite(rng, dim=dim, N=int(rng.integers(1, 4)),
                              variant=str(rng.choice(["eq12", "eq46"])), fov=fov)
        t, x = random_state(rng, cb, model)
        b = cb.slot(0)
        jb = eval_barrier_jet(b, x)
        jet, mu = eval_psi0_jet(cb, t, x)
        chain = eval_psi_chain(cb, t, x, model)
        gb = np.zeros(model.n)
        Hb = np.zeros((model.n, model.n))
        gp = np.zeros(model.n)
        Hp = np.zeros((model.n, model.n))
        gc = np.zeros(model.n)
        for i in range(model.n):
            e = np.zeros(model.n)
            e[i] = h
            bp, bm = eval_barrier_jet(b, x + e), eval_barrier_jet(b, x - e)
            gb[i] = (bp.value - bm.value) / (2 * h)
            Hb[:, i] = (bp.grad - bm.grad) / (2 * h)
            pp, pm = eval_psi0_jet(cb, t, x + e)[0], eval_psi0_jet(cb, t, x - e)[0]
            gp[i] = (pp.value - pm.value) / (2 * h)
            Hp[:, i] = (pp.grad - pm.grad) / (2 * h)
            gc[i] = (eval_psi_chain(cb, t, x + e, model).psi1 - eval_psi_chain(cb, t, x - e, model).psi1) / (2 * h)
        ht = h * cb.T
        tp, tm = eval_psi0_jet(cb, t + ht, x)[0], eval_psi0_jet(cb, t - ht, x)[0]
        dt_fd = np.array([(tp.value - tm.value) / (2 * ht), (tp.dt - tm.dt) / (2 * ht)])
        dtg_fd = (tp.grad - tm.grad) / (2 * ht)
        dpsi1_fd = (eval_psi_chain(cb, t + ht, x, model).psi1 - eval_psi_chain(cb, t - ht, x, model).psi1) / (2 * ht)
        wb = max(wb, fd_relative_error(jb.grad, gb), fd_relative_error(jb.hess, Hb))
        wp = max(wp, fd_relative_error(jet.grad, gp), fd_relative_error(jet.hess, Hp))
        wc = max(wc, fd_relative_error(chain.grad_psi1, gc))
        wt = max(wt, fd_relative_error([jet.dt, jet.dtt], dt_fd), fd_relative_error(jet.dt_grad, dtg_fd),
                 fd_relative_error(chain.dpsi1_dt, dpsi1_fd))
        # L_g psi1 against the mu-weighted combination of the window's L_g L_f b
        lglf = []
        for j in range(cb.N + 1):
            bj = eval_barrier_jet(cb.slot(j), x)
            f = model.f(x)
            grad_lf = bj.hess @ f + model.jac_f(x).T @ bj.grad
            lglf.append(grad_lf @ model.g(x))
        if cb.variant == "eq12":
            combo = sum(m * v for m, v in zip(mu, lglf))
            wm = max(wm, float(np.max(np.abs(combo - chain.Lg_psi1))) / max(1.0, float(np.max(np.abs(combo)))))
        wm = max(wm, abs(mu.sum() - 1.0), float(max(0.0, -mu.min())))
    return wb, wp, wc, wm, wt


def _suite_jets(rng: np.random.Generator, samples: int = 1000) -> list[PropertyResult]:
    out = []
    for name, model, dim in (("unicycle", unicycle_model(), 2), ("double integrator", double_integrator_model(3), 3)):
        wb, wp, wc, wm, wt = _jet_checks(rng, model, dim, samples)
        out.append(PropertyResult(f"{name}: perception barrier jet vs finite differences", wb < 1e-5, f"worst rel {wb:.3g}"))
        out.append(PropertyResult(f"{name}: composite jet vs finite differences", wp < 1e-5, f"worst rel {wp:.3g}"))
        out.append(PropertyResult(f"{name}: chained barrier derivatives vs finite differences", wc < 1e-5, f"worst rel {wc:.3g}"))
        out.append(PropertyResult(f"{name}: time partials vs finite differences", wt < 1e-5, f"worst rel {wt:.3g}"))
        out.append(PropertyResult(f"{name}: weight laws and input coupling", wm < 1e-10, f"worst {wm:.3g}"))
    return out


# --- controller suite -------------------------------------------------------------------------


def _random_filter_problem(rng: np.random.Generator):
    model = unicycle_model()
    cb = random_composite(rng, dim=2, N=int(rng.integers(1, 4)))
    t, x = random_state(rng, cb, model)
    chain = eval_psi_chain(cb, t, x, model)
    cfg = FilterConfig(gamma=float(rng.uniform(1.0, 500.0)), alpha=float(rng.uniform(1.0, 60.0)))
    ud = rng.normal(scale=5.0, size=2)
    return t, x, chain, cfg, ud


def _feasible_samples(rng, chain, cfg, t, x, u_star, mu_star, count: int):
    """Random points on or inside the constraint set around the optimum."""
    a = chain.Lg_psi1
    for _ in range(count):
        du = rng.normal(scale=rng.choice([1e-3, 1e-1, 1.0, 10.0]), size=a.shape[0])
        dmu = float(rng.normal(scale=rng.choice([1e-4, 1e-2, 1.0])))
        u = u_star + du
        mu = mu_star + dmu
        val = constraint_value(t, x, u, mu, chain, cfg)
        if val < 0.0:
            # project onto the boundary along the constraint normal
            nvec = np.concatenate([a, [chain.psi1]])
            nn = nvec @ nvec
            if nn == 0.0:
                continue
            z = np.concatenate([u, [mu]]) - (val / nn) * nvec
            u, mu = z[:-1], z[-1]
        yield u, mu


def _suite_controller(rng: np.random.Generator, states: int = 1000, probes: int = 1000) -> list[PropertyResult]:
    w_or = w_b = w_j = 0.0
    bad_or = bad_b = bad_j = None
    for _ in range(states):
        t, x, chain, cfg, ud = _random_filter_problem(rng)
        out = compute_control(t, x, chain, cfg, ud)
        u_n, mu_n = qp_oracle(t, x, chain, cfg, ud)
        err = max(float(np.max(np.abs(u_n - out.u_star))), abs(mu_n - out.mu_star))
        if err > w_or:
            w_or, bad_or = err, f"x={x.tolist()}, t={t}"
        bval = constraint_value(t, x, out.u_star, out.mu_star, chain, cfg)
        eb = abs(bval - max(0.0, out.omega)) / max(1.0, abs(out.omega))
        if eb > w_b:
            w_b, bad_b = eb, f"x={x.tolist()}, omega={out.omega}"
        J0 = objective(out.u_star, out.mu_star, np.eye(2), -ud, cfg.gamma)
        for u, mu in _feasible_samples(rng, chain, cfg, t, x, out.u_star, out.mu_star, probes):
            gap = J0 - objective(u, mu, np.eye(2), -ud, cfg.gamma)
            if gap > w_j:
                w_j, bad_j = gap, f"x={x.tolist()}, u={u.tolist()}, mu={mu}"
    return [
        PropertyResult("numerical oracle matches closed form", w_or <= 1e-6, f"worst {w_or:.3g}",
                       bad_or if w_or > 1e-6 else None),
        PropertyResult("constraint at optimum equals max(0, omega)", w_b <= 1e-9, f"worst {w_b:.3g}",
                       bad_b if w_b > 1e-9 else None),
        PropertyResult("no sampled feasible point beats the optimum", w_j <= 1e-9, f"worst gap {w_j:.3g}",
                       bad_j if w_j > 1e-9 else None),
    ]


# --- invariance suite -------------------------------------------------------------------------


def _suite_invariance(rng: np.random.Generator) -> list[PropertyResult]:
    from .sim import load_scenario, run_scenario

    out = []
    for name in ("ground_static", "ground_fov120"):
        with resources.as_file(resources.files("safenav") / "scenarios" / f"{name}.cfg") as path:
            cfg = load_scenario(path)
        tlog = run_scenario(cfg)
        ok = tlog.psi0.min() > 0 and tlog.psi1.min() > 0 and tlog.clearance.min() > 0
        out.append(PropertyResult(
            f"{name}: certified set stays invariant", bool(ok),
            f"min psi0 {tlog.psi0.min():.4g}, min psi1 {tlog.psi1.min():.4g}, "
            f"min clearance {tlog.clearance.min():.4g}",
        ))
        w = tlog.weights
        werr = float(max(np.max(np.abs(w.sum(axis=1) - 1.0)), max(0.0, -w.min())))
        out.append(PropertyResult(f"{name}: window weights are convex", werr <= 1e-12, f"worst {werr:.3g}"))
    return out


SUITES: dict[str, Callable[[np.random.Generator], list[PropertyResult]]] = {
    "softmath": _suite_softmath,
    "jets": _suite_jets,
    "controller": _suite_controller,
    "invariance": _suite_invariance,
}


def run_suite(name: str, seed: int = 0) -> list[PropertyResult]:
    """Run one suite (or ``'all'``) with a seeded generator."""
    names = list(SUITES) if name == "all" else [name]
    results = []
    for n in names:
        if n not in SUITES:
            raise ValueError(f"unknown suite {n!r}")
        results.extend(SUITES[n](np.random.default_rng(np.random.SeedSequence([int(seed), len(n)]))))
    return results
