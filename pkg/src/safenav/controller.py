"""Closed-form optimal safety filter with a slack-relaxed barrier constraint.

For each ``(t, x)`` the filter solves

    minimize    1/2 u^T Q u + c^T u + gamma/2 mu^2
    subject to  dpsi1/dt + L_f psi1 + L_g psi1 u + alpha(psi1) + mu psi1 >= 0

in closed form. ``qp_oracle`` solves the same problem numerically through its
KKT system and is used only for verification.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from .composer import PsiChain, as_class_k

__all__ = [
    "ConfigurationError",
    "AssumptionViolation",
    "FilterConfig",
    "ControlOutput",
    "constraint_value",
    "compute_control",
    "qp_oracle",
    "objective",
]

log = logging.getLogger(__name__)

D_FLOOR = 1e-12
LG_WARN = 1e-9


class ConfigurationError(ValueError):
    """The cost weighting is not positive definite."""


class AssumptionViolation(RuntimeError):
    """The constraint is violated while the input has no authority over it."""


@dataclass
class FilterConfig:
    """Safety-filter parameters.

    With ``min_intervention`` the cost is ``|u - u_d|^2 / 2`` (``Q = I``,
    ``c = -u_d``); otherwise ``Q(t, x)`` and ``c(t, x)`` providers are used.
    ``mode='verify'`` raises on an assumption breach, ``'simulate'`` clamps
    the divisor and flags the step instead.
    """

    gamma: float = 200.0
    alpha: object = 50.0
    min_intervention: bool = True
    Q: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    c: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    mode: Literal["simulate", "verify"] = "simulate"
    _alpha: object = field(init=False, repr=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma!r}")
        if self.mode not in ("simulate", "verify"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not self.min_intervention and (self.Q is None or self.c is None):
            raise ConfigurationError("Q and c providers are required unless min_intervention is set")
        self._alpha = as_class_k(self.alpha)

    def alpha_fn(self, s: float) -> float:
        return self._alpha(s)

    def cost(self, t: float, x: np.ndarray, u_d: Optional[np.ndarray], m: int) -> tuple[np.ndarray, np.ndarray]:
        if self.min_intervention:
            if u_d is None:
                raise ConfigurationError("minimum-intervention mode needs a desired control")
            return np.eye(m), -np.asarray(u_d, dtype=float)
        Q = np.asarray(self.Q(t, x), dtype=float)
        c = np.asarray(self.c(t, x), dtype=float)
        if Q.shape != (m, m) or c.shape != (m,):
            raise ConfigurationError(f"cost shapes {Q.shape}, {c.shape} do not match m={m}")
        return Q, c


@dataclass
class ControlOutput:
    u_star: np.ndarray
    mu_star: float
    lam: float
    omega: float
    d: float
    psi0: float
    psi1: float
    constraint_value: float
    slack_active: bool = False
    assumption_warning: bool = False


def _drift_term(chain: PsiChain, cfg: FilterConfig) -> float:
    return chain.dpsi1_dt + chain.Lf_psi1 + cfg.alpha_fn(chain.psi1)


def constraint_value(t: float, x, u_hat, mu_hat: float, chain: PsiChain, cfg: FilterConfig) -> float:
    """Relaxed barrier constraint ``b(t, x, u_hat, mu_hat)``."""
    u_hat = np.asarray(u_hat, dtype=float)
    if u_hat.shape != chain.Lg_psi1.shape:
        raise ValueError(f"input shape {u_hat.shape} does not match {chain.Lg_psi1.shape}")
    return float(_drift_term(chain, cfg) + chain.Lg_psi1 @ u_hat + mu_hat * chain.psi1)


def objective(u, mu: float, Q: np.ndarray, c: np.ndarray, gamma: float) -> float:
    u = np.asarray(u, dtype=float)
    return float(0.5 * u @ Q @ u + c @ u + 0.5 * gamma * mu * mu)


def _factor(Q: np.ndarray) -> np.ndarray:
    if not np.allclose(Q, Q.T, rtol=1e-10, atol=1e-12):
        raise ConfigurationError("Q must be symmetric")
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("Q is not positive definite") from exc


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


def compute_control(
    t: float, x, chain: PsiChain, cfg: FilterConfig, u_d: Optional[np.ndarray] = None
) -> ControlOutput:
    """Closed-form minimizer of the slack-relaxed safety-filter problem."""
    m = chain.Lg_psi1.shape[0]
    Q, c = cfg.cost(t, np.asarray(x, dtype=float), u_d, m)
    L = _factor(Q)
    u_g = -_chol_solve(L, c)
    a = chain.Lg_psi1
    psi1 = chain.psi1
    Qinv_a = _chol_solve(L, a)
    omega = float(_drift_term(chain, cfg) + a @ u_g)
    d = float(a @ Qinv_a + psi1 * psi1 / cfg.gamma)
    warn = bool(np.linalg.norm(a) < LG_WARN and psi1 <= 0.0)
    if omega >= 0.0:
        lam = 0.0
    else:
        if d < D_FLOOR:
            msg = f"omega={omega:.3g} < 0 with d={d:.3g}: input has no authority (t={t:.4f})"
            if cfg.mode == "verify":
                raise AssumptionViolation(msg)
            log.warning(msg)
            warn = True
            lam = -omega / max(d, D_FLOOR)
        else:
            lam = -omega / d
    u_star = u_g + lam * Qinv_a
    mu_star = psi1 * lam / cfg.gamma
    if warn:
        log.debug("assumption monitor: |L_g psi1|=%.3g, psi1=%.3g at t=%.4f", np.linalg.norm(a), psi1, t)
    return ControlOutput(
        u_star=u_star,
        mu_star=float(mu_star),
        lam=float(lam),
        omega=omega,
        d=d,
        psi0=chain.psi0.value,
        psi1=psi1,
        constraint_value=float(omega + lam * d),
        slack_active=bool(lam > 0.0 and psi1 != 0.0),
        assumption_warning=warn,
    )


class KKTError(np.linalg.LinAlgError):
    pass


def qp_oracle(
    t: float,
    x,
    chain: PsiChain,
    cfg: FilterConfig,
    u_d: Optional[np.ndarray] = None,
    polish_iters: int = 50,
) -> tuple[np.ndarray, float]:
    """Numerical minimizer of the safety-filter problem.

    An inactive constraint returns the unconstrained minimizer. Otherwise the
    equality-constrained KKT system is solved with a dense linear solve and
    the result is polished by gradient steps projected onto the constraint
    hyperplane.
    """
    m = chain.Lg_psi1.shape[0]
    Q, c = cfg.cost(t, np.asarray(x, dtype=float), u_d, m)
    _factor(Q)
    gamma = cfg.gamma
    u_free = np.linalg.solve(Q, -c)
    drift = _drift_term(chain, cfg)
    a = np.asarray(chain.Lg_psi1, dtype=float)
    psi1 = chain.psi1
    if drift + a @ u_free >= 0.0:
        return u_free, 0.0
    # variables z = (u, mu); constraint row n^T z = -drift
    nvec = np.concatenate([a, [psi1]])
    Hz = np.zeros((m + 1, m + 1))
    Hz[:m, :m] = Q
    Hz[m, m] = gamma
    gz = np.concatenate([c, [0.0]])
    K = np.zeros((m + 2, m + 2))
    K[: m + 1, : m + 1] = Hz
    K[: m + 1, m + 1] = -nvec
    K[m + 1, : m + 1] = nvec
    rhs = np.concatenate([-gz, [-drift]])
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > 1e14:
        raise KKTError(f"KKT matrix is singular (cond={cond:.3g}, |a|={np.linalg.norm(a):.3g}, psi1={psi1:.3g})")
    sol = np.linalg.solve(K, rhs)
    z = sol[: m + 1]
    nn = nvec @ nvec
    step = 1.0 / max(np.linalg.eigvalsh(Hz).max(), 1e-12)
    for _ in range(polish_iters):
        grad = Hz @ z + gz
        grad -= (grad @ nvec) / nn * nvec
        if np.linalg.norm(grad) < 1e-15 * max(1.0, np.linalg.norm(z)):
            break
        z = z - step * grad
        # re-project onto the active constraint
        z = z - ((nvec @ z + drift) / nn) * nvec
    return z[:m], float(z[m])
