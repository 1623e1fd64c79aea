"""Standard-form conic programs and solver backends.

A program is ``minimize c @ x  subject to  b - A @ x in K`` where ``K`` is a
product of cones listed in order. Supported cone kinds:

``zero``     equality rows
``nonneg``   non-negative orthant
``soc``      second-order cone ``(t, u)`` with ``||u|| <= t``
``psd``      real symmetric PSD cone of order ``n``, packed as the upper
             triangle in column-major order with off-diagonals scaled by sqrt(2)
``exp``      exponential cone ``{(x, y, z): y exp(x / y) <= z, y > 0}``

Complex Hermitian constraints enter through :func:`hermitian_to_real`.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

CONE_KINDS = ("zero", "nonneg", "soc", "psd", "exp")


class SolverError(RuntimeError):
    """The backend failed numerically (distinct from certified infeasibility)."""


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    FAILED = "failed"


def cone_rows(kind: str, size: int) -> int:
    if kind == "psd":
        return size * (size + 1) // 2
    if kind == "exp":
        return 3 * size
    return size


def psd_pack_index(n: int):
    """Row/column indices of the packed upper triangle (column-major)."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


_PACK_CACHE: dict[int, tuple] = {}


def svec(mats: np.ndarray) -> np.ndarray:
    """Pack symmetric matrices (..., n, n) into (..., n(n+1)/2) vectors."""
    n = mats.shape[-1]
    if n not in _PACK_CACHE:
        r, c = psd_pack_index(n)
        scale = np.where(r == c, 1.0, np.sqrt(2.0))
        _PACK_CACHE[n] = (r, c, scale)
    r, c, scale = _PACK_CACHE[n]
    return mats[..., r, c] * scale


def smat(vec: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`svec` for a single vector."""
    r, c = psd_pack_index(n)
    scale = np.where(r == c, 1.0, 1.0 / np.sqrt(2.0))
    out = np.zeros((n, n))
    out[r, c] = vec * scale
    out[c, r] = vec * scale
    return out


def hermitian_to_real(h: np.ndarray) -> np.ndarray:
    """Map Hermitian (..., n, n) to real symmetric (..., 2n, 2n).

    ``[[Re H, -Im H], [Im H, Re H]]`` is PSD iff ``H`` is PSD.
    """
    re, im = h.real, h.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


@dataclass
class ConicProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: list = field(default_factory=list)

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    def check_shapes(self):
        m = sum(cone_rows(k, s) for k, s in self.cones)
        if self.A.shape != (m, self.num_vars) or self.b.shape != (m,):
            raise ValueError(
                f"inconsistent program: A {self.A.shape}, b {self.b.shape}, "
                f"{m} cone rows, {self.num_vars} variables")

    def residual(self, x: np.ndarray) -> float:
        """Largest cone violation of ``b - A x`` (0 when strictly feasible)."""
        s = self.b - self.A @ x
        worst = 0.0
        pos = 0
        for kind, size in self.cones:
            m = cone_rows(kind, size)
            blk = s[pos:pos + m]
            pos += m
            if kind == "zero":
                v = np.max(np.abs(blk), initial=0.0)
            elif kind == "nonneg":
                v = max(0.0, -np.min(blk, initial=0.0))
            elif kind == "soc":
                v = max(0.0, np.linalg.norm(blk[1:]) - blk[0])
            elif kind == "psd":
                v = max(0.0, -np.linalg.eigvalsh(smat(blk, size))[0])
            else:
                v = 0.0
                for x_, y_, z_ in blk.reshape(-1, 3):
                    if y_ > 0:
                        v = max(v, y_ * np.exp(min(x_ / y_, 700.0)) - z_)
                    else:
                        v = max(v, -y_, x_ if y_ == 0 else 0.0)
            worst = max(worst, v)
        return worst


class ProgramBuilder:
    """Accumulates affine cone constraints ``const + coef @ x in K``."""

    def __init__(self, num_vars: int):
        self.num_vars = num_vars
        self.c = np.zeros(num_vars)
        self._coef: list[np.ndarray] = []
        self._const: list[np.ndarray] = []
        self.cones: list = []

    def add(self, kind: str, const, coef, size: int | None = None):
        const = np.atleast_1d(np.asarray(const, dtype=float))
        coef = np.asarray(coef, dtype=float).reshape(const.shape[0], self.num_vars)
        if kind not in CONE_KINDS:
            raise ValueError(f"unknown cone {kind!r}")
        if size is None:
            size = const.shape[0] if kind != "exp" else const.shape[0] // 3
        if cone_rows(kind, size) != const.shape[0]:
            raise ValueError(f"{kind} cone of size {size} needs "
                             f"{cone_rows(kind, size)} rows, got {const.shape[0]}")
        self._const.append(const)
        self._coef.append(coef)
        self.cones.append((kind, size))

    def add_psd(self, const_mat: np.ndarray, coef_mats: np.ndarray):
        """Symmetric ``const_mat + sum_i x_i coef_mats[i]`` must be PSD."""
        n = const_mat.shape[0]
        self.add("psd", svec(const_mat), svec(coef_mats).T, size=n)

    def add_hermitian_psd(self, const_mat: np.ndarray, coef_mats: np.ndarray):
        self.add_psd(hermitian_to_real(const_mat), hermitian_to_real(coef_mats))

    def build(self) -> ConicProgram:
        if self._const:
            b = np.concatenate(self._const)
            A = -np.vstack(self._coef)
        else:
            b = np.zeros(0)
            A = np.zeros((0, self.num_vars))
        prog = ConicProgram(self.c.copy(), A, b, list(self.cones))
        prog.check_shapes()
        return prog


@dataclass
class ConicResult:
    status: Status
    x: np.ndarray | None
    objective: float
    residual: float
    raw_status: str = ""


class ConicBackend:
    """Interface: solve a :class:`ConicProgram`."""

    name = "abstract"
    tolerance = 1e-7

    def solve(self, prog: ConicProgram) -> ConicResult:
        raise NotImplementedError

    def _result(self, prog, status, x, raw):
        if x is not None:
            x = np.asarray(x, dtype=float)
            obj = float(prog.c @ x)
            res = prog.residual(x)
        else:
            obj, res = np.nan, np.inf
        return ConicResult(status, x, obj, res, raw)


class ClarabelBackend(ConicBackend):
    name = "clarabel"

    def __init__(self, tol: float = 1e-9, max_iter: int = 200):
        self.tolerance = max(tol, 1e-9) * 100
        self.tol = tol
        self.max_iter = max_iter

    def solve(self, prog: ConicProgram) -> ConicResult:
        import clarabel

        cones = []
        for kind, size in prog.cones:
            if kind == "zero":
                cones.append(clarabel.ZeroConeT(size))
            elif kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(size))
            elif kind == "soc":
                cones.append(clarabel.SecondOrderConeT(size))
            elif kind == "psd":
                cones.append(clarabel.PSDTriangleConeT(size))
            else:
                cones.extend(clarabel.ExponentialConeT() for _ in range(size))
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = self.tol
        settings.tol_gap_rel = self.tol
        settings.tol_feas = self.tol
        settings.presolve_enable = False
        n = prog.num_vars
        P = sp.csc_matrix((n, n))
        solver = clarabel.DefaultSolver(P, prog.c, sp.csc_matrix(prog.A), prog.b, cones, settings)
        sol = solver.solve()
        raw = str(sol.status)
        if raw in ("Solved", "AlmostSolved"):
            return self._result(prog, Status.OPTIMAL, sol.x, raw)
        if raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return self._result(prog, Status.INFEASIBLE, None, raw)
        if raw in ("DualInfeasible", "AlmostDualInfeasible"):
            return self._result(prog, Status.UNBOUNDED, None, raw)
        return self._result(prog, Status.FAILED, sol.x, raw)


class ScsBackend(ConicBackend):
    """SCS wrapper; reorders rows into SCS's canonical cone order."""

    name = "scs"

    def __init__(self, eps: float = 1e-9, max_iters: int = 100_000):
        self.eps = eps
        self.max_iters = max_iters
        self.tolerance = 1e-5

    def solve(self, prog: ConicProgram) -> ConicResult:
        import scs

        blocks: dict[str, list] = {k: [] for k in CONE_KINDS}
        pos = 0
        for kind, size in prog.cones:
            m = cone_rows(kind, size)
            rows = np.arange(pos, pos + m)
            pos += m
            if kind == "psd":
                # SCS packs the lower triangle column-major == upper row-major
                r, c = psd_pack_index(size)
                order = {(i, j): t for t, (i, j) in enumerate(zip(r, c))}
                rows = rows[[order[(j, i)] for j in range(size) for i in range(j, size)]]
            blocks[kind].append((rows, size))
        perm = np.concatenate([rows for k in CONE_KINDS for rows, _ in blocks[k]]
                              or [np.zeros(0, dtype=int)]).astype(int)
        cone = {
            "z": sum(s for _, s in blocks["zero"]),
            "l": sum(s for _, s in blocks["nonneg"]),
            "q": [s for _, s in blocks["soc"]],
            "s": [s for _, s in blocks["psd"]],
            "ep": sum(s for _, s in blocks["exp"]),
        }
        data = {"A": sp.csc_matrix(prog.A[perm]), "b": prog.b[perm], "c": prog.c}
        solver = scs.SCS(data, cone, verbose=False, eps_abs=self.eps, eps_rel=self.eps,
                         max_iters=self.max_iters)
        sol = solver.solve()
        raw = sol["info"]["status"]
        if raw in ("solved", "solved_inaccurate"):
            return self._result(prog, Status.OPTIMAL, sol["x"], raw)
        if raw in ("infeasible", "infeasible_inaccurate"):
            return self._result(prog, Status.INFEASIBLE, None, raw)
        if raw in ("unbounded", "unbounded_inaccurate"):
            return self._result(prog, Status.UNBOUNDED, None, raw)
        return self._result(prog, Status.FAILED, sol.get("x"), raw)


def default_backend() -> ConicBackend:
    return ClarabelBackend()


def get_backend(name: str | ConicBackend | None) -> ConicBackend:
    if isinstance(name, ConicBackend):
        return name
    if name is None or name == "clarabel":
        return ClarabelBackend()
    if name == "scs":
        return ScsBackend()
    raise ValueError(f"unknown backend {name!r}")
