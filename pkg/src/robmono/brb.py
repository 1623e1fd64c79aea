"""Branch-reduce-and-bound over a normal performance region, and a brute-force reference."""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .perf import SystemUtility, f_eval, reduction_coefficients
from .rfo import FairnessProfile, RegionOracle, _query, solve_rfo

log = logging.getLogger(__name__)


class DegenerateBranch(ValueError):
    pass


class TooExpensive(RuntimeError):
    """Brute force would exceed its evaluation cap."""


@dataclass
class Box:
    a: np.ndarray
    b: np.ndarray
    beta: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if np.any(self.a > self.b):
            raise ValueError(f"box corners out of order: {self.a} > {self.b}")

    @property
    def widths(self) -> np.ndarray:
        return self.b - self.a

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.a - tol) and np.all(x <= self.b + tol))


class BoxSet:
    """Live boxes ordered by beta; ties go to the earliest inserted box."""

    def __init__(self):
        self._heap: list = []
        self._count = itertools.count()

    def __len__(self):
        return len(self._heap)

    def __iter__(self):
        return (box for _, _, box in self._heap)

    def push(self, box: Box):
        heapq.heappush(self._heap, (-box.beta, next(self._count), box))

    def pop(self) -> Box:
        return heapq.heappop(self._heap)[2]

    def max_beta(self) -> float:
        return -self._heap[0][0] if self._heap else -np.inf

    def overlapping_pairs(self, tol: float = 1e-12) -> list:
        boxes = list(self)
        if len(boxes) < 2:
            return []
        A = np.array([bx.a for bx in boxes])
        B = np.array([bx.b for bx in boxes])
        lo = np.maximum(A[:, None], A[None])
        hi = np.minimum(B[:, None], B[None])
        hit = np.all(hi - lo > tol, axis=-1)
        i, j = np.nonzero(np.triu(hit, 1))
        return list(zip(i.tolist(), j.tolist()))


def branch(box: Box, utility: SystemUtility) -> tuple[Box, Box]:
    w = box.widths
    dim = int(np.argmax(w))
    if w[dim] <= 0:
        raise DegenerateBranch("cannot branch a box of zero volume")
    s = w[dim] / 2
    step = np.zeros_like(w)
    step[dim] = s
    b1 = box.b - step
    m1 = Box(box.a.copy(), b1, min(box.beta, f_eval(utility, b1)))
    m2 = Box(box.a + step, box.b.copy(), box.beta)
    return m1, m2


def reduce(box: Box, f_min: float, utility: SystemUtility) -> Box | None:
    """Shrink ``box`` to the part that can hold values in [f_min, beta]; None if none."""
    if box.beta < f_min:
        return None
    if f_eval(utility, box.b) < f_min:
        return None
    _, _, a, b = reduction_coefficients(utility, box.a, box.b, f_min, box.beta)
    return Box(a, b, box.beta)


@dataclass
class BoundResult:
    f_min: float
    f_max: float
    point: np.ndarray
    certificate: object
    evaluations: int


def bound(box: Box, oracle: RegionOracle, utility: SystemUtility, delta: float,
          corner_certificate=True) -> BoundResult:
    """Local bounds via a line search from the (feasible) lower corner to the upper corner."""
    a, b = box.a, box.b
    length = float(np.sum(b - a))
    if length < delta:
        return BoundResult(f_eval(utility, a), f_eval(utility, b), a.copy(), corner_certificate, 0)
    prof = FairnessProfile.towards(a, b)
    res = solve_rfo(oracle, prof, delta, length, start_certificate=corner_certificate)
    if res.f_hi >= length:
        # every probe was feasible; the ray may leave the region exactly at b
        cert = _query(oracle, b, length)
        if cert is not None:
            fb = f_eval(utility, b)
            return BoundResult(fb, fb, b.copy(), cert, res.evaluations + 1)
        return _bound_from(res, prof, a, b, utility, res.evaluations + 1)
    return _bound_from(res, prof, a, b, utility, res.evaluations)


def _bound_from(res, prof, a, b, utility, evaluations) -> BoundResult:
    n = np.minimum(prof.point(res.f_hi), b)
    lo = f_eval(utility, res.point)
    hi = -np.inf
    for k in range(a.shape[0]):
        x = b.copy()
        x[k] = n[k]
        hi = max(hi, f_eval(utility, x))
    return BoundResult(lo, hi, res.point, res.certificate, evaluations)


@dataclass
class BrbResult:
    f_min: float
    f_max: float
    point: np.ndarray
    certificate: object
    evaluations: int
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def strategy(self):
        return getattr(self.certificate, "strategy", None)

    @property
    def relative_gap(self) -> float:
        return (self.f_max - self.f_min) / self.f_min if self.f_min > 0 else np.inf

    def to_dict(self) -> dict:
        out = {"f_min": self.f_min, "f_max": self.f_max, "point": self.point.tolist(),
               "evaluations": self.evaluations, "iterations": self.iterations,
               "converged": self.converged}
        if self.strategy is not None:
            out["strategy"] = self.strategy.to_dict()
        return out


def solve_brb(oracle: RegionOracle, utility: SystemUtility, upper, eps: float, delta: float,
              f_min: float | None = None, seed_point=None, seed_certificate=None,
              max_evaluations: int | None = None, relative_gap: float | None = None,
              check_invariants: bool = False, callback=None) -> BrbResult:
    """Global maximization of an increasing ``utility`` over the oracle's region.

    ``upper`` is b0 with the region inside [0, b0]. An optional seed
    (``f_min`` with the point and certificate that achieve it) tightens
    the initial lower bound. Stops when ``f_max - f_min <= eps``, when the
    relative gap drops below ``relative_gap`` or after ``max_evaluations``.
    ``callback(boxes, f_min, f_max)`` runs after every iteration.
    """
    upper = np.asarray(upper, dtype=float)
    K = upper.shape[0]
    best_point = np.zeros(K) if seed_point is None else np.asarray(seed_point, dtype=float)
    best_cert = seed_certificate
    fmin = f_eval(utility, np.zeros(K))
    if f_min is not None and f_min > fmin:
        fmin = float(f_min)
    boxes = BoxSet()
    root = Box(np.zeros(K), upper, f_eval(utility, upper))
    fmax = root.beta
    if root.beta >= fmin:
        boxes.push(root)
    fmax = max(boxes.max_beta(), fmin)
    evals = 0
    iterations = 0
    trace = [(0, fmin, fmax)]

    def done():
        if fmax - fmin <= eps:
            return True
        return relative_gap is not None and fmin > 0 and (fmax - fmin) / fmin <= relative_gap

    while not done():
        if max_evaluations is not None and evals >= max_evaluations:
            break
        if not len(boxes):
            # every remaining candidate was shown to be below f_min
            fmax = fmin
            break
        iterations += 1
        m1, m2 = branch(boxes.pop(), utility)
        r1 = reduce(m1, fmin, utility)
        r2 = reduce(m2, fmin, utility)
        if r1 is not None:
            boxes.push(r1)
        if r2 is not None:
            cert = _query(oracle, r2.a, 0.0)
            evals += 1
            if cert is not None:
                bres = bound(r2, oracle, utility, delta, corner_certificate=cert)
                evals += bres.evaluations
                if bres.f_min > fmin:
                    fmin, best_point, best_cert = bres.f_min, bres.point, bres.certificate
                r2.beta = min(r2.beta, bres.f_max)
                if r2.beta >= fmin:
                    boxes.push(r2)
        fmax = min(fmax, max(boxes.max_beta(), fmin))
        trace.append((evals, fmin, fmax))
        if callback is not None:
            callback(boxes, fmin, fmax)
        if check_invariants:
            bad = boxes.overlapping_pairs()
            if bad:
                raise AssertionError(f"overlapping live boxes: {bad}")
    return BrbResult(fmin, fmax, best_point, best_cert, evals, iterations, done(), trace)


# --- brute force ------------------------------------------------------------------

@dataclass
class BruteForceResult:
    f_best: float
    point: np.ndarray
    certificate: object
    evaluations: int
    cells: int


def _uniform_divisions(utility, upper, eps, cap):
    n = 1
    while True:
        edges = [np.linspace(0.0, u, n + 1) for u in upper]
        lows = np.array(list(itertools.product(*[e[:-1] for e in edges])))
        highs = np.array(list(itertools.product(*[e[1:] for e in edges])))
        gap = max(f_eval(utility, h) - f_eval(utility, l) for l, h in zip(lows, highs))
        if gap <= eps:
            return n, lows
        n *= 2
        if n ** len(upper) > cap:
            raise TooExpensive(f"uniform grid needs more than {cap} cells")


def brute_force(oracle: RegionOracle, utility: SystemUtility, upper, eps: float,
                max_evaluations: int = 200_000, exhaustive: bool = False) -> BruteForceResult:
    """Optimum within ``eps`` by partitioning [0, upper] into cells.

    Each cell's lower corner is tested once. A cell whose corner-to-corner
    utility change is at most ``eps`` is final. ``exhaustive`` tests every
    cell of a uniform grid; otherwise cells are refined best-first by
    halving every side and cells whose upper corner cannot beat the
    incumbent by more than ``eps`` are never refined.
    """
    upper = np.asarray(upper, dtype=float)
    K = upper.shape[0]
    best, best_point, best_cert = -np.inf, np.zeros(K), None
    evals = 0
    if exhaustive:
        _, lows = _uniform_divisions(utility, upper, eps, max_evaluations)
        for l in lows:
            c = oracle(l)
            evals += 1
            if c is not None and f_eval(utility, l) > best:
                best, best_point, best_cert = f_eval(utility, l), l, c
        return BruteForceResult(best, best_point, best_cert, evals, len(lows))

    count = itertools.count()
    heap = [(-f_eval(utility, upper), next(count), np.zeros(K), upper.copy(), None)]
    cells = 0
    while heap:
        neg_fu, _, lo, hi, cert = heapq.heappop(heap)
        if -neg_fu <= best + eps:
            break
        cells += 1
        if cert is None:
            if evals >= max_evaluations:
                raise TooExpensive(f"brute force exceeded {max_evaluations} evaluations")
            cert = oracle(lo)
            evals += 1
            if cert is None:
                continue
        flo = f_eval(utility, lo)
        if flo > best:
            best, best_point, best_cert = flo, lo, cert
        if -neg_fu - flo <= eps:
            continue
        mid = 0.5 * (lo + hi)
        for corner in itertools.product((0, 1), repeat=K):
            sel = np.array(corner, dtype=bool)
            clo = np.where(sel, mid, lo)
            chi = np.where(sel, hi, mid)
            heapq.heappush(heap, (-f_eval(utility, chi), next(count), clo, chi,
                                  cert if not sel.any() else None))
    return BruteForceResult(best, best_point, best_cert, evals, cells)
