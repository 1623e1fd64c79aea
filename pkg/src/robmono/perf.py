"""User utilities g(MSE), system utilities f(g), and box-reduction coefficients."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

COEFF_TOL = 1e-9


class DomainError(ValueError):
    pass


class UserKind(str, enum.Enum):
    INVERSE_MSE = "inverse-mse"
    RATE = "rate"
    NEG_MSE = "neg-mse"


class SystemKind(str, enum.Enum):
    SUM = "sum"
    PROP_FAIR = "prop-fair"
    HARMONIC = "harmonic"
    MAX_MIN = "max-min"


@dataclass(frozen=True)
class UserUtility:
    """Strictly decreasing map from MSE in (0, 1] to performance, with g(1) = 0."""

    kind: UserKind = UserKind.RATE

    def __post_init__(self):
        object.__setattr__(self, "kind", UserKind(self.kind))

    @property
    def sup(self) -> float:
        """g(0+), the supremum of the utility."""
        return 1.0 if self.kind is UserKind.NEG_MSE else math.inf

    def __call__(self, mse):
        return g_eval(self, mse)

    def inverse(self, value):
        return g_inverse(self, value)


def g_eval(utility: UserUtility, mse):
    m = np.asarray(mse, dtype=float)
    if np.any(m <= 0) or np.any(m > 1):
        raise DomainError(f"MSE {mse} outside (0, 1]")
    if utility.kind is UserKind.INVERSE_MSE:
        out = 1.0 / m - 1.0
    elif utility.kind is UserKind.RATE:
        out = -np.log2(m)
    else:
        out = 1.0 - m
    return out if out.ndim else float(out)


def g_inverse(utility: UserUtility, value):
    v = np.asarray(value, dtype=float)
    if np.any(v < 0) or np.any(v >= utility.sup):
        raise DomainError(f"utility value {value} outside [0, {utility.sup})")
    if utility.kind is UserKind.INVERSE_MSE:
        out = 1.0 / (1.0 + v)
    elif utility.kind is UserKind.RATE:
        out = np.exp2(-v)
    else:
        out = 1.0 - v
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SystemUtility:
    """Strictly increasing aggregate of user performance.

    Weighted variants: ``sum(w g)``, ``min(w g)``, ``prod(g ** (w / sum w))``
    and ``sum(w) / sum(w / g)``.
    """

    kind: SystemKind = SystemKind.SUM
    weights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SystemKind(self.kind))
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if any(x <= 0 for x in w):
                raise ValueError("weights must be positive")
            object.__setattr__(self, "weights", w)

    def w(self, k: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(k)
        if len(self.weights) != k:
            raise ValueError(f"{len(self.weights)} weights for {k} users")
        return np.asarray(self.weights)

    def __call__(self, g) -> float:
        return f_eval(self, g)


def f_eval(utility: SystemUtility, g) -> float:
    g = np.asarray(g, dtype=float)
    w = utility.w(g.shape[-1])
    kind = utility.kind
    if kind is SystemKind.SUM:
        return float(w @ g)
    if kind is SystemKind.MAX_MIN:
        return float(np.min(w * g))
    if np.any(g <= 0):
        return 0.0
    if kind is SystemKind.PROP_FAIR:
        return float(np.exp((w / w.sum()) @ np.log(g)))
    with np.errstate(over="ignore"):
        return float(w.sum() / np.sum(w / g))


def _largest_feasible(pred, tol=COEFF_TOL) -> float:
    """Largest t in [0, 1] with pred(t), pred monotone (true then false).

    Returns an over-estimate within ``tol`` so reductions err on the safe side.
    """
    if pred(1.0):
        return 1.0
    if not pred(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return hi


def reduction_coefficients(utility: SystemUtility, a, b, f_min: float, beta: float,
                           closed_form: bool = True):
    """Box-reduction coefficients (nu, mu) and the reduced corners (a', b').

    ``nu_k`` is the largest fraction the upper corner can be lowered along k
    while keeping ``f >= f_min``; ``mu_k`` the largest fraction the lifted
    lower corner can be raised along k while keeping ``f <= beta``.
    """
    if f_min > beta:
        raise ValueError(f"f_min={f_min} exceeds beta={beta}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    K = a.shape[0]
    width = b - a
    nu = np.ones(K)
    if closed_form and utility.kind is SystemKind.SUM:
        w = utility.w(K)
        fb = float(w @ b)
        with np.errstate(divide="ignore", invalid="ignore"):
            nu = np.where(width > 0, np.minimum((fb - f_min) / (w * width), 1.0), 1.0)
        nu = np.clip(nu, 0.0, 1.0)
    else:
        for k in range(K):
            if width[k] <= 0:
                continue
            def lowered(t, k=k):
                x = b.copy()
                x[k] -= t * width[k]
                return f_eval(utility, x) >= f_min
            nu[k] = _largest_feasible(lowered)
    a_new = np.minimum(np.maximum(b - nu * width, a), b)

    width2 = b - a_new
    mu = np.ones(K)
    if closed_form and utility.kind is SystemKind.SUM:
        w = utility.w(K)
        fa = float(w @ a_new)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(width2 > 0, np.minimum((beta - fa) / (w * width2), 1.0), 1.0)
        mu = np.clip(mu, 0.0, 1.0)
    else:
        for k in range(K):
            if width2[k] <= 0:
                continue
            def raised(t, k=k):
                x = a_new.copy()
                x[k] += t * width2[k]
                return f_eval(utility, x) <= beta
            mu[k] = _largest_feasible(raised)
    b_new = np.maximum(np.minimum(a_new + mu * width2, b), a_new)
    return nu, mu, a_new, b_new
