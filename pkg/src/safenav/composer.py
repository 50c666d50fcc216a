"""Time-varying soft-maximum composition of a sliding window of barriers.

The window holds the N+1 most recent perception barriers. The newest one is
faded in, and the oldest faded out, by a smoothstep homotopy over each
perception period, so the composite is as smooth in time as the homotopy.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np

from .barrier import PerceptionBarrier, eval_barrier_jet
from .smoothmath import ScalarJet2, SmoothstepSpec, softblend_arrays, smoothstep_jet

__all__ = [
    "SequencingError",
    "UnsupportedOrderError",
    "LinearGain",
    "as_class_k",
    "CompositeBarrier",
    "PsiChain",
    "push_perception",
    "eval_psi0_jet",
    "eval_psi_chain",
]

log = logging.getLogger(__name__)

# epoch guard: control instants that land on k*T up to rounding belong to epoch k
_EPOCH_GUARD = 1e-9


class SequencingError(RuntimeError):
    """Perception pushed out of order, or evaluation outside the current epoch."""


class UnsupportedOrderError(NotImplementedError):
    """Requested a barrier chain of relative degree other than two."""


@dataclass(frozen=True)
class LinearGain:
    """Extended class-K function ``a * s``."""

    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"class-K gain must be positive, got {self.a!r}")

    def __call__(self, s: float) -> float:
        return self.a * s

    def derivative(self, s: float) -> float:
        return self.a


class _CallableClassK:
    def __init__(self, fn: Callable[[float], float], dfn: Callable[[float], float]):
        self.fn = fn
        self.dfn = dfn

    def __call__(self, s):
        return self.fn(s)

    def derivative(self, s):
        return self.dfn(s)


def as_class_k(alpha) -> Union[LinearGain, _CallableClassK]:
    """Coerce a gain, a ``LinearGain`` or a ``(fn, dfn)`` pair to a class-K object."""
    if isinstance(alpha, (LinearGain, _CallableClassK)):
        return alpha
    if isinstance(alpha, (int, float)):
        return LinearGain(float(alpha))
    if isinstance(alpha, tuple) and len(alpha) == 2:
        return _CallableClassK(*alpha)
    if callable(alpha) and hasattr(alpha, "derivative"):
        return alpha
    raise TypeError(f"cannot interpret {alpha!r} as an extended class-K function")


class CompositeBarrier:
    """Ring buffer of N+1 perception barriers and the composite ``psi_0``.

    Parameters
    ----------
    N : int
        Window length minus one.
    T : float
        Perception period in seconds.
    kappa : float
        Soft-max sharpness.
    eta : SmoothstepSpec
        Homotopy used to fade barriers in and out.
    variant : {'eq12', 'eq46'}
        ``eq12`` blends newest and oldest inside a single soft max.
        ``eq46`` blends the soft max of the older N barriers with the soft
        max of the newer N barriers.
    alphas : sequence
        Class-K functions ``alpha_0 .. alpha_{r-2}`` for the higher-order chain.
    r : int
        Relative degree; only 2 is implemented.
    """

    def __init__(
        self,
        N: int = 1,
        T: float = 0.2,
        kappa: float = 30.0,
        eta: Optional[SmoothstepSpec] = None,
        variant: Literal["eq12", "eq46"] = "eq12",
        alphas: Sequence = (35.0,),
        r: int = 2,
    ):
        if int(N) != N or N < 1:
            raise ValueError("N must be a positive integer")
        if not T > 0:
            raise ValueError("T must be positive")
        if not kappa > 0:
            raise ValueError("kappa must be positive")
        if variant not in ("eq12", "eq46"):
            raise ValueError(f"unknown composition variant {variant!r}")
        self.N = int(N)
        self.T = float(T)
        self.kappa = float(kappa)
        self.eta = eta if eta is not None else SmoothstepSpec("polynomial", 2, 2.0)
        self.variant = variant
        self.r = int(r)
        self.alphas = [as_class_k(a) for a in alphas]
        self.window: deque[PerceptionBarrier] = deque(maxlen=self.N + 1)
        self.k: Optional[int] = None

    def __repr__(self) -> str:
        return (
            f"CompositeBarrier(N={self.N}, T={self.T}, kappa={self.kappa}, "
            f"variant={self.variant!r}, k={self.k})"
        )

    def push(self, b_new: PerceptionBarrier, k: int) -> "CompositeBarrier":
        """Insert the barrier captured at sample ``k``."""
        if self.k is None:
            if k != 0:
                raise SequencingError(f"first perception must have k=0, got {k}")
            for _ in range(self.N + 1):
                self.window.appendleft(b_new)
        else:
            if k != self.k + 1:
                raise SequencingError(f"expected perception k={self.k + 1}, got {k}")
            self.window.appendleft(b_new)
        self.k = int(k)
        return self

    def slot(self, j: int) -> PerceptionBarrier:
        """``b_{k-j}`` for ``j`` in ``0..N``."""
        return self.window[j]

    def epoch_phase(self, t: float) -> float:
        """Position ``t/T - k`` inside the current epoch, in ``[0, 1)``."""
        if self.k is None:
            raise SequencingError("no perception has been pushed yet")
        s = t / self.T - self.k
        if s < -_EPOCH_GUARD or s >= 1.0 - _EPOCH_GUARD:
            raise SequencingError(
                f"t={t!r} lies outside epoch k={self.k} [{self.k * self.T}, {(self.k + 1) * self.T})"
            )
        return max(s, 0.0)

    def homotopy(self, t: float) -> tuple[float, float, float]:
        """``eta`` and its first two time derivatives at ``t``."""
        s = self.epoch_phase(t)
        e, de, dde = smoothstep_jet(s, self.eta)
        return e, de / self.T, dde / (self.T * self.T)

    def slot_jets(self, x: np.ndarray) -> list[ScalarJet2]:
        """Jets of ``b_k .. b_{k-N}`` at ``x``; shared slots are evaluated once."""
        cache: dict[int, ScalarJet2] = {}
        out = []
        for b in self.window:
            key = id(b)
            if key not in cache:
                cache[key] = eval_barrier_jet(b, x)
            out.append(cache[key])
        return out


def push_perception(cb: CompositeBarrier, b_new: PerceptionBarrier, k: int) -> CompositeBarrier:
    return cb.push(b_new, k)


def _stack_static(jets: Sequence[ScalarJet2]):
    values = np.array([j.value for j in jets])
    grads = np.stack([j.grad for j in jets])
    hess = np.stack([j.hess for j in jets])
    return values, grads, hess


def _homotopy_jet(
    new: ScalarJet2, old: ScalarJet2, e: float, de: float, dde: float
) -> ScalarJet2:
    """Jet of ``eta(t) new(x) + (1 - eta(t)) old(x)`` for time-invariant inputs."""
    diff_v = new.value - old.value
    diff_g = new.grad - old.grad
    return ScalarJet2(
        e * new.value + (1.0 - e) * old.value,
        de * diff_v,
        dde * diff_v,
        e * new.grad + (1.0 - e) * old.grad,
        de * diff_g,
        e * new.hess + (1.0 - e) * old.hess,
    )


def _blend_time_invariant(
    jets: Sequence[ScalarJet2], kappa: float
) -> tuple[ScalarJet2, np.ndarray]:
    v, g, H = _stack_static(jets)
    value, grad, hess, w = softblend_arrays(v, g, H, kappa, "max")
    n = grad.shape[0]
    return ScalarJet2(value, 0.0, 0.0, grad, np.zeros(n), hess), w


def eval_psi0_jet(cb: CompositeBarrier, t: float, x) -> tuple[ScalarJet2, np.ndarray]:
    """Composite barrier ``psi_0`` at ``(t, x)`` and its weights ``mu_0 .. mu_N``.

    ``mu_j`` is the sensitivity of ``psi_0`` to ``b_{k-j}``; the weights are
    nonnegative and sum to one.
    """
    x = np.asarray(x, dtype=float)
    e, de, dde = cb.homotopy(t)
    jets = cb.slot_jets(x)
    N = cb.N
    mu = np.zeros(N + 1)
    if cb.variant == "eq12":
        h = _homotopy_jet(jets[0], jets[N], e, de, dde)
        middle = jets[1:N]
        if not middle:
            mu[0] = e
            mu[N] = 1.0 - e
            return h, mu
        args = list(middle) + [h]
        ext = [a.extended() for a in args]
        values = np.array([a[0] for a in ext])
        grads = np.stack([a[1] for a in ext])
        hess = np.stack([a[2] for a in ext])
        value, g, H, w = softblend_arrays(values, grads, hess, cb.kappa, "max")
        mu[1:N] = w[:-1]
        mu[0] = e * w[-1]
        mu[N] = (1.0 - e) * w[-1]
        return ScalarJet2.from_extended(value, g, H), mu
    # eq46: (1 - eta) softmax(b_{k-1..k-N}) + eta softmax(b_k..b_{k-N+1})
    older, w_old = _blend_time_invariant(jets[1:], cb.kappa)
    newer, w_new = _blend_time_invariant(jets[:N], cb.kappa)
    psi = _homotopy_jet(newer, older, e, de, dde)
    mu[1:] += (1.0 - e) * w_old
    mu[:N] += e * w_new
    return psi, mu


@dataclass
class PsiChain:
    """Higher-order barrier chain at one ``(t, x)`` for relative degree two."""

    t: float
    psi0: ScalarJet2
    mu: np.ndarray
    psi1: float
    dpsi1_dt: float
    grad_psi1: np.ndarray
    Lf_psi1: float
    Lg_psi1: np.ndarray
    Lg_psi0: np.ndarray
    f: np.ndarray
    g: np.ndarray

    @property
    def grad_norm_psi0(self) -> float:
        """Size of the spatial gradient of psi_0; large values flag sharp soft-max corners."""
        return float(np.linalg.norm(self.psi0.grad))


def eval_psi_chain(cb: CompositeBarrier, t: float, x, model) -> PsiChain:
    """Evaluate ``psi_0``, ``psi_1 = d psi_0/dt + L_f psi_0 + alpha_0(psi_0)`` and
    the Lie derivatives of ``psi_1`` along the model's vector fields."""
    if cb.r != 2:
        raise UnsupportedOrderError(f"only relative degree 2 is implemented, got r={cb.r}")
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"state shape {x.shape} does not match model dimension {model.n}")
    psi0, mu = eval_psi0_jet(cb, t, x)
    f = model.f(x)
    g = model.g(x)
    J = model.jac_f(x)
    a0 = cb.alphas[0]
    a0_val = a0(psi0.value)
    a0_der = a0.derivative(psi0.value)
    psi1 = psi0.dt + psi0.grad @ f + a0_val
    dpsi1_dt = psi0.dtt + psi0.dt_grad @ f + a0_der * psi0.dt
    grad_psi1 = psi0.dt_grad + psi0.hess @ f + J.T @ psi0.grad + a0_der * psi0.grad
    return PsiChain(
        t=float(t),
        psi0=psi0,
        mu=mu,
        psi1=float(psi1),
        dpsi1_dt=float(dpsi1_dt),
        grad_psi1=grad_psi1,
        Lf_psi1=float(grad_psi1 @ f),
        Lg_psi1=grad_psi1 @ g,
        Lg_psi0=psi0.grad @ g,
        f=f,
        g=g,
    )
