"""Fairness-profile optimization: bisection along a ray of the performance region.

Regions are accessed only through :class:`RegionOracle`, which maps a point
of the performance space to a certificate (feasible) or ``None``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conic import SolverError
from .feasibility import FeasibilityChecker, Feasible
from .perf import DomainError, UserKind, UserUtility
from .scenario import ChannelRealization, Scenario

log = logging.getLogger(__name__)


class InfeasibleStart(ValueError):
    """The ray's starting point lies outside the region."""


class UnsupportedBound(ValueError):
    pass


def as_utilities(utilities, num_users: int) -> list:
    if isinstance(utilities, (UserUtility, str, UserKind)):
        u = utilities if isinstance(utilities, UserUtility) else UserUtility(utilities)
        return [u] * num_users
    out = [u if isinstance(u, UserUtility) else UserUtility(u) for u in utilities]
    if len(out) != num_users:
        raise ValueError(f"{len(out)} user utilities for {num_users} users")
    return out


# --- oracles ------------------------------------------------------------------

class RegionOracle:
    """Membership test for a compact normal set in the non-negative orthant."""

    def __init__(self, dim: int):
        self.dim = dim
        self.evaluations = 0

    def __call__(self, point):
        self.evaluations += 1
        return self.test(np.asarray(point, dtype=float))

    def test(self, point):
        raise NotImplementedError


class FeasibilityOracle(RegionOracle):
    """Maps performance targets to MSE targets and runs the conic feasibility check."""

    def __init__(self, checker: FeasibilityChecker, utilities):
        super().__init__(checker.scenario.num_users)
        self.checker = checker
        self.utilities = as_utilities(utilities, self.dim)

    @classmethod
    def build(cls, scenario: Scenario, realization: ChannelRealization, utilities,
              backend=None, formulation: str = "auto"):
        return cls(FeasibilityChecker(scenario, realization, backend, formulation), utilities)

    def targets(self, point) -> np.ndarray | None:
        """MSE targets for a performance point, or None if outside every g's range."""
        gamma = np.empty(self.dim)
        for k, (u, g) in enumerate(zip(self.utilities, point)):
            if g >= u.sup:
                return None
            try:
                gamma[k] = u.inverse(max(g, 0.0))
            except DomainError:
                return None
            if gamma[k] <= 0:
                return None
        return gamma

    def test(self, point):
        gamma = self.targets(point)
        if gamma is None:
            return None
        outcome = self.checker.check(gamma)
        return outcome if isinstance(outcome, Feasible) else None


@dataclass
class AnalyticPoint:
    """Certificate returned by the analytic oracles."""
    point: np.ndarray


class SimplexOracle(RegionOracle):
    """{g >= 0 : sum(g / scale) <= 1}."""

    def __init__(self, dim: int, scale=1.0):
        super().__init__(dim)
        self.scale = np.broadcast_to(np.asarray(scale, dtype=float), (dim,))

    def test(self, point):
        if np.all(point >= 0) and np.sum(point / self.scale) <= 1.0:
            return AnalyticPoint(point)
        return None


class QuarterDiscOracle(RegionOracle):
    """{g >= 0 : ||g||_2 <= radius}."""

    def __init__(self, dim: int, radius: float = 1.0):
        super().__init__(dim)
        self.radius = radius

    def test(self, point):
        if np.all(point >= 0) and np.linalg.norm(point) <= self.radius:
            return AnalyticPoint(point)
        return None


# --- RFO ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FairnessProfile:
    start: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.start, dtype=float)
        al = np.asarray(self.direction, dtype=float)
        if a.shape != al.shape or a.ndim != 1:
            raise ValueError("start and direction must be vectors of equal length")
        if np.any(a < 0):
            raise ValueError("start must be non-negative")
        if np.any(al < 0) or abs(al.sum() - 1.0) > 1e-12:
            raise ValueError(f"direction must be non-negative with unit sum, got {al}")
        object.__setattr__(self, "start", a)
        object.__setattr__(self, "direction", al)

    @classmethod
    def towards(cls, start, target) -> "FairnessProfile":
        """Profile from ``start`` pointing at ``target`` (normalized direction)."""
        start = np.asarray(start, dtype=float)
        d = np.asarray(target, dtype=float) - start
        d = d / d.sum()
        return cls(start, d)

    def point(self, f: float) -> np.ndarray:
        return self.start + self.direction * f


@dataclass
class RfoResult:
    f_lo: float
    f_hi: float
    point: np.ndarray
    certificate: object
    evaluations: int
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    @property
    def strategy(self):
        return getattr(self.certificate, "strategy", None)

    def to_dict(self) -> dict:
        out = {"f_lo": self.f_lo, "f_hi": self.f_hi, "point": self.point.tolist(),
               "evaluations": self.evaluations, "iterations": self.iterations,
               "converged": self.converged}
        if self.strategy is not None:
            out["strategy"] = self.strategy.to_dict()
        return out


def _query(oracle, point, level):
    try:
        return oracle(point)
    except SolverError as exc:
        log.warning("solver error at level %.6g (%s); retrying once", level, exc)
    try:
        return oracle(point)
    except SolverError as exc:
        raise SolverError(f"RFO aborted at level {level:.9g}: {exc}") from exc


def solve_rfo(oracle: RegionOracle, profile: FairnessProfile, delta: float, f_upper: float,
              max_iters: int = 64, start_certificate=None) -> RfoResult:
    """Bisection for the largest f with start + direction * f in the region.

    ``start_certificate`` skips the initial membership test when the caller
    already knows the start is feasible.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if f_upper < 0:
        raise ValueError("f_upper must be non-negative")
    evals = 0
    cert = start_certificate
    if cert is None:
        cert = _query(oracle, profile.start, 0.0)
        evals += 1
        if cert is None:
            raise InfeasibleStart(f"start point {profile.start} is outside the region")
    lo, hi = 0.0, float(f_upper)
    history = [(lo, hi)]
    it = 0
    while hi - lo > delta and it < max_iters:
        mid = 0.5 * (lo + hi)
        c = _query(oracle, profile.point(mid), mid)
        evals += 1
        it += 1
        if c is not None:
            lo, cert = mid, c
        else:
            hi = mid
        history.append((lo, hi))
    return RfoResult(lo, hi, profile.point(lo), cert, evals, it, hi - lo <= delta, history)


def expected_evaluations(f_upper: float, delta: float, include_start: bool = True) -> int:
    n = max(0, math.ceil(math.log2(f_upper / delta))) if f_upper > delta else 0
    return n + int(include_start)


# --- initial upper bounds ----------------------------------------------------------

class BoundMethod(str, enum.Enum):
    SUP = "sup"
    POWER = "power"
    SINGLE_USER = "single-user"


def max_serving_power(scenario: Scenario) -> np.ndarray:
    """Per user, an upper bound on ||D_k v_k||^2 implied by the power constraints.

    Uses the constraints that touch the serving antennas: their sum is
    positive definite there, so ||D v||^2 <= sum q_l / lambda_min.
    """
    out = np.empty(scenario.num_users)
    for k in range(scenario.num_users):
        support = scenario.data_masks[k] > 0
        if not support.any():
            out[k] = 0.0
            continue
        total = np.zeros((support.sum(),) * 2, dtype=complex)
        budget = 0.0
        for Q, q in scenario.power_constraints:
            block = Q[np.ix_(support, support)]
            if np.any(np.abs(block) > 0):
                total += block
                budget += q
        lam = np.linalg.eigvalsh(total)[0]
        if lam <= 0:
            raise UnsupportedBound(f"power constraints do not bound user {k}'s beamformer")
        out[k] = budget / lam
    return out


def power_bound_terms(scenario: Scenario, realization: ChannelRealization, utilities) -> np.ndarray:
    """Per-user g_k of the interference-free MMSE at maximum serving power."""
    utilities = as_utilities(utilities, scenario.num_users)
    kappa = max_serving_power(scenario)
    out = np.empty(scenario.num_users)
    for k, u in enumerate(utilities):
        gain = np.linalg.norm(realization.estimates[k] * scenario.data_masks[k]) ** 2
        s2 = scenario.noise_variances[k]
        out[k] = u(s2 / (kappa[k] * gain + s2))
    return out


def single_user_terms(scenario: Scenario, realization: ChannelRealization, utilities,
                      delta: float = 1e-3, backend=None) -> np.ndarray:
    """Per-user RFO upper ends with every other user silent."""
    K = scenario.num_users
    utilities = as_utilities(utilities, K)
    caps = power_bound_terms(scenario, realization, utilities)
    oracle = FeasibilityOracle.build(scenario, realization, utilities, backend)
    out = np.empty(K)
    for k in range(K):
        if caps[k] <= 0:
            out[k] = 0.0
            continue
        prof = FairnessProfile(np.zeros(K), np.eye(K)[k])
        res = solve_rfo(oracle, prof, delta, caps[k], start_certificate=True)
        out[k] = res.f_hi
    return out


def per_user_upper_bounds(scenario, realization, utilities, method="power",
                          delta: float = 1e-3, backend=None) -> np.ndarray:
    """Vector b with the region inside [0, b]."""
    method = BoundMethod(method)
    K = scenario.num_users
    utilities = as_utilities(utilities, K)
    if method is BoundMethod.SUP:
        sup = np.array([u.sup for u in utilities])
        if not np.all(np.isfinite(sup)):
            raise UnsupportedBound("the sup bound needs finite g_k(0) for every user")
        return sup
    if method is BoundMethod.POWER:
        return power_bound_terms(scenario, realization, utilities)
    return single_user_terms(scenario, realization, utilities, delta, backend)


def initial_upper_bound(scenario: Scenario, realization: ChannelRealization, utilities, a,
                        method="power", backend=None, direction=None, delta: float = 1e-3,
                        oracle: RegionOracle | None = None, verify: bool = True) -> float:
    """An f_upper with start + direction * f_upper outside the region.

    With ``verify`` the end point is tested and, if found feasible (the
    bound can be tight), pushed outward until it is not.
    """
    K = scenario.num_users
    utilities = as_utilities(utilities, K)
    a = np.asarray(a, dtype=float)
    method = BoundMethod(method)
    if method is BoundMethod.SUP:
        sup = np.array([u.sup for u in utilities])
        if not np.all(np.isfinite(sup)):
            raise UnsupportedBound("the sup bound needs finite g_k(0) for every user")
        f_up = K * float(np.max(sup - a))
    else:
        terms = per_user_upper_bounds(scenario, realization, utilities, method, delta, backend)
        f_up = float(np.sum(terms - a))
    if f_up <= 0:
        raise InfeasibleStart(f"start {a} is not below the per-user bounds")
    if not verify:
        return f_up
    if direction is None:
        direction = np.full(K, 1.0 / K)
    prof = FairnessProfile(a, direction)
    if oracle is None:
        oracle = FeasibilityOracle.build(scenario, realization, utilities, backend)
    step = 1e-6 * max(f_up, 1.0)
    while _query(oracle, prof.point(f_up), f_up) is not None:
        f_up += step
        step *= 2
    return f_up
