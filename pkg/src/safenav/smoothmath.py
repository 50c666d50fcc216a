"""Log-sum-exp soft minimum / soft maximum, smoothstep homotopies and
second-order jets.

A :class:`ScalarJet2` carries a scalar field together with its first and
second partial derivatives in time and state. All barrier arithmetic in this
package flows through jets so that the higher-order barrier chain can be
formed without symbolic differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np

__all__ = [
    "ScalarJet2",
    "SmoothstepSpec",
    "stable_softmin",
    "stable_softmax",
    "softblend_jet",
    "softblend_arrays",
    "smoothstep_jet",
]


def _check_args(z, kappa: float) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("soft min/max of an empty vector is undefined")
    if not kappa > 0:
        raise ValueError(f"sharpness must be positive, got {kappa!r}")
    if not np.all(np.isfinite(z)):
        raise ValueError("soft min/max arguments must be finite")
    return z


def stable_softmin(z, kappa: float) -> float:
    """Soft minimum ``-(1/kappa) log sum exp(-kappa z)``.

    Evaluated about the hard minimum so the exponentials never exceed one.
    """
    z = _check_args(z, kappa)
    zmin = z.min()
    return float(zmin - np.log(np.sum(np.exp(-kappa * (z - zmin)))) / kappa)


def stable_softmax(z, kappa: float) -> float:
    """Soft maximum ``(1/kappa) log sum exp(kappa z) - log(N)/kappa``."""
    z = _check_args(z, kappa)
    zmax = z.max()
    lse = np.log(np.sum(np.exp(kappa * (z - zmax))))
    return float(zmax + (lse - math.log(z.size)) / kappa)


@dataclass
class ScalarJet2:
    """Value of a scalar field ``h(t, x)`` with derivatives up to order two.

    Attributes
    ----------
    value : float
        ``h``
    dt, dtt : float
        ``dh/dt`` and ``d2h/dt2``
    grad : ndarray, shape (n,)
        ``dh/dx``
    dt_grad : ndarray, shape (n,)
        ``d2h/dt dx``
    hess : ndarray, shape (n, n)
        ``d2h/dx2``
    """

    value: float
    dt: float
    dtt: float
    grad: np.ndarray
    dt_grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        self.value = float(self.value)
        self.dt = float(self.dt)
        self.dtt = float(self.dtt)
        self.grad = np.asarray(self.grad, dtype=float)
        self.dt_grad = np.asarray(self.dt_grad, dtype=float)
        self.hess = np.asarray(self.hess, dtype=float)
        n = self.grad.shape[0]
        if self.grad.shape != (n,) or self.dt_grad.shape != (n,) or self.hess.shape != (n, n):
            raise ValueError(
                f"inconsistent jet shapes: grad {self.grad.shape}, "
                f"dt_grad {self.dt_grad.shape}, hess {self.hess.shape}"
            )

    @property
    def n(self) -> int:
        return self.grad.shape[0]

    @classmethod
    def static(cls, value: float, grad, hess) -> "ScalarJet2":
        """Jet of a time-invariant field."""
        grad = np.asarray(grad, dtype=float)
        return cls(value, 0.0, 0.0, grad, np.zeros_like(grad), hess)

    @classmethod
    def constant(cls, value: float, n: int) -> "ScalarJet2":
        return cls(value, 0.0, 0.0, np.zeros(n), np.zeros(n), np.zeros((n, n)))

    def extended(self) -> tuple[float, np.ndarray, np.ndarray]:
        """Gradient and Hessian in the stacked variable ``(t, x)``."""
        n = self.n
        g = np.empty(n + 1)
        g[0] = self.dt
        g[1:] = self.grad
        H = np.empty((n + 1, n + 1))
        H[0, 0] = self.dtt
        H[0, 1:] = self.dt_grad
        H[1:, 0] = self.dt_grad
        H[1:, 1:] = self.hess
        return self.value, g, H

    @classmethod
    def from_extended(cls, value: float, g: np.ndarray, H: np.ndarray) -> "ScalarJet2":
        return cls(value, g[0], H[0, 0], g[1:], H[1:, 0], H[1:, 1:])

    def scaled(self, a: float) -> "ScalarJet2":
        return ScalarJet2(
            a * self.value, a * self.dt, a * self.dtt, a * self.grad, a * self.dt_grad, a * self.hess
        )

    def __add__(self, other: "ScalarJet2") -> "ScalarJet2":
        return ScalarJet2(
            self.value + other.value,
            self.dt + other.dt,
            self.dtt + other.dtt,
            self.grad + other.grad,
            self.dt_grad + other.dt_grad,
            self.hess + other.hess,
        )

    def __sub__(self, other: "ScalarJet2") -> "ScalarJet2":
        return self + other.scaled(-1.0)

    def lifted(self, n: int) -> "ScalarJet2":
        """Embed a jet over the leading coordinates into an ``n``-dim state.

        The field is taken to be independent of the trailing ``n - self.n``
        coordinates.
        """
        d = self.n
        if n == d:
            return self
        if n < d:
            raise ValueError(f"cannot lift a {d}-dim jet into {n} dims")
        grad = np.zeros(n)
        grad[:d] = self.grad
        dt_grad = np.zeros(n)
        dt_grad[:d] = self.dt_grad
        hess = np.zeros((n, n))
        hess[:d, :d] = self.hess
        return ScalarJet2(self.value, self.dt, self.dtt, grad, dt_grad, hess)


def softblend_arrays(
    values: np.ndarray,
    grads: np.ndarray,
    hessians: np.ndarray,
    kappa: float,
    mode: Literal["min", "max"],
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Soft min/max of K fields given as stacked derivative arrays.

    ``values`` has shape (K,), ``grads`` (K, p) and ``hessians`` (K, p, p),
    where p is whatever set of variables the derivatives are taken in.
    Returns ``(value, grad, hessian, weights)``; the weights are the partial
    derivatives of the soft min/max with respect to each argument and form a
    convex combination.
    """
    if mode not in ("min", "max"):
        raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("need at least one argument")
    if not kappa > 0:
        raise ValueError(f"sharpness must be positive, got {kappa!r}")
    sign = 1.0 if mode == "max" else -1.0
    K = values.size
    if K == 1:
        return float(values[0]), grads[0].copy(), hessians[0].copy(), np.ones(1)
    s = sign * kappa * values
    smax = s.max()
    e = np.exp(s - smax)
    total = e.sum()
    w = e / total
    lse = smax + math.log(total)
    if mode == "max":
        value = (lse - math.log(K)) / kappa
    else:
        value = -lse / kappa
    g = w @ grads
    # second-order term: weighted Hessians plus sign*kappa times the gradient covariance
    H = np.tensordot(w, hessians, axes=1)
    wg = grads * w[:, None]
    H += sign * kappa * (grads.T @ wg - np.outer(g, g))
    H = 0.5 * (H + H.T)
    return float(value), g, H, w


def softblend_jet(
    args: Sequence[ScalarJet2], kappa: float, mode: Literal["min", "max"] = "max"
) -> tuple[ScalarJet2, np.ndarray]:
    """Soft min/max of jets, propagated exactly to second order.

    Returns the resulting jet and the convex weights (one per argument).
    """
    args = list(args)
    if not args:
        raise ValueError("need at least one argument")
    n = args[0].n
    if any(a.n != n for a in args):
        raise ValueError("all jets must share the same state dimension")
    if len(args) == 1:
        return args[0], np.ones(1)
    ext = [a.extended() for a in args]
    values = np.array([e[0] for e in ext])
    grads = np.stack([e[1] for e in ext])
    hessians = np.stack([e[2] for e in ext])
    v, g, H, w = softblend_arrays(values, grads, hessians, kappa, mode)
    return ScalarJet2.from_extended(v, g, H), w


@lru_cache(maxsize=None)
def _smoothstep_coefficients(r: int) -> np.ndarray:
    # ascending powers of s = nu*t; nonzero from s**(r+1) to s**(2r+1)
    coef = np.zeros(2 * r + 2)
    for j in range(r + 1):
        coef[r + 1 + j] = math.comb(r + j, j) * math.comb(2 * r + 1, r - j) * (-1) ** j
    return coef


for _r in range(1, 9):
    _smoothstep_coefficients(_r)


@dataclass(frozen=True)
class SmoothstepSpec:
    """Homotopy ``eta`` rising from 0 at ``t <= 0`` to 1 at ``t >= 1/nu``.

    ``kind='polynomial'`` is the order-``r`` smoothstep polynomial;
    ``kind='sinusoidal'`` is ``nu t - sin(2 pi nu t)/(2 pi)`` and is only
    admissible for ``r`` in {1, 2}.
    """

    kind: Literal["polynomial", "sinusoidal"] = "polynomial"
    r: int = 2
    nu: float = 2.0
    _poly: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("polynomial", "sinusoidal"):
            raise ValueError(f"unknown smoothstep kind {self.kind!r}")
        if int(self.r) != self.r or self.r < 1:
            raise ValueError(f"smoothness order must be a positive integer, got {self.r!r}")
        if not self.nu >= 1:
            raise ValueError(f"transition rate nu must be >= 1, got {self.nu!r}")
        if self.kind == "sinusoidal" and self.r not in (1, 2):
            raise ValueError("sinusoidal smoothstep only satisfies the endpoint conditions for r in {1, 2}")
        if self.kind == "polynomial":
            c = _smoothstep_coefficients(int(self.r))
            c1 = np.polynomial.polynomial.polyder(c)
            c2 = np.polynomial.polynomial.polyder(c1)
            object.__setattr__(self, "_poly", (c[::-1], c1[::-1], c2[::-1]))


def smoothstep_jet(t: float, spec: SmoothstepSpec) -> tuple[float, float, float]:
    """Return ``(eta(t), eta'(t), eta''(t))``."""
    nu = spec.nu
    s = nu * t
    if s <= 0.0:
        return 0.0, 0.0, 0.0
    if s >= 1.0:
        return 1.0, 0.0, 0.0
    if spec.kind == "sinusoidal":
        w = 2.0 * math.pi * s
        return (
            s - math.sin(w) / (2.0 * math.pi),
            nu * (1.0 - math.cos(w)),
            nu * nu * 2.0 * math.pi * math.sin(w),
        )
    p0, p1, p2 = spec._poly
    # Horner evaluation, coefficients stored highest power first
    v0 = v1 = v2 = 0.0
    for c in p0:
        v0 = v0 * s + c
    for c in p1:
        v1 = v1 * s + c
    for c in p2:
        v2 = v2 * s + c
    return v0, nu * v1, nu * nu * v2
