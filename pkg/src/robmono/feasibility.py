"""Convex feasibility subproblems for target MSE vectors.

Two formulations are available:

* ``lmi``: one Hermitian LMI of order N + K_r + 2 per user, which makes the
  MSE target hold for every channel in the user's uncertainty ellipsoid.
* ``soc``: the perfect-CSI form with MMSE equalizers plugged in, giving one
  second-order cone per user.

Both are posed as "minimize the power scale s such that the MSE targets
hold under limits s^2 q_l" and declared feasible iff s <= 1. The scale is
capped at ``max_power_scale`` so the feasible set stays compact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .conic import (ConicBackend, ProgramBuilder, SolverError, Status, get_backend,
                    hermitian_to_real, svec)
from .scenario import ChannelRealization, CsiMode, Scenario

log = logging.getLogger(__name__)

GAMMA_FLOOR = 1e-9
VALIDATION_TOL = 1e-6


class UnreachableTarget(ValueError):
    """Target MSE below what the given beamformers can reach."""


@dataclass(frozen=True, eq=False)
class Strategy:
    """Beamformers (K_r, N) with row k = v_k, and real equalizers r_k >= 0."""

    beamformers: np.ndarray
    equalizers: np.ndarray

    def __post_init__(self):
        V = np.array(self.beamformers, dtype=complex)
        r = np.array(self.equalizers, dtype=float)
        V.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "beamformers", V)
        object.__setattr__(self, "equalizers", r)

    @classmethod
    def projected(cls, scenario: Scenario, beamformers, equalizers) -> "Strategy":
        """Zero the entries of v_k outside the antennas that serve user k."""
        return cls(np.asarray(beamformers) * scenario.data_masks, equalizers)

    def stacked(self, scenario: Scenario) -> np.ndarray:
        """N x K_r matrix [D_1 v_1 ... D_K v_K]."""
        return (self.beamformers * scenario.data_masks).T

    def power(self, scenario: Scenario) -> np.ndarray:
        V = self.beamformers
        return np.array([np.real(np.einsum("kn,nm,km->", V.conj(), Q, V))
                         for Q, _ in scenario.power_constraints])

    def power_feasible(self, scenario: Scenario, rtol: float = 1e-7) -> bool:
        limits = np.array([q for _, q in scenario.power_constraints])
        return bool(np.all(self.power(scenario) <= limits * (1 + rtol)))

    def to_dict(self) -> dict:
        V = self.beamformers
        return {"beamformers": np.stack([V.real, V.imag], axis=-1).tolist(),
                "equalizers": self.equalizers.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Strategy":
        arr = np.asarray(d["beamformers"], dtype=float)
        return cls(arr[..., 0] + 1j * arr[..., 1], d["equalizers"])


@dataclass
class Feasible:
    strategy: Strategy
    auxiliaries: np.ndarray
    power_scale: float = 0.0
    feasible = True

    def __bool__(self):
        return True


@dataclass
class Infeasible:
    certificate_note: str = ""
    power_scale: float = np.inf
    feasible = False

    def __bool__(self):
        return False


# --- closed forms -----------------------------------------------------------

def effective_gains(scenario: Scenario, beamformers, k: int, channel) -> np.ndarray:
    """h^H C_k D_j v_j for every j; ``channel`` may be (N,) or (M, N)."""
    Vt = (np.asarray(beamformers) * scenario.data_masks).T
    h = np.asarray(channel) * scenario.coord_masks[k]
    return h.conj() @ Vt


def mse_nominal(scenario: Scenario, strategy: Strategy, k: int, channel) -> np.ndarray | float:
    """MSE of user k for the exact channel(s) given (signal, interference, noise terms)."""
    y = effective_gains(scenario, strategy.beamformers, k, channel)
    r = strategy.equalizers[k]
    sig = np.abs(r * y[..., k] - 1.0) ** 2
    interf = np.sum(np.abs(r * y) ** 2, axis=-1) - np.abs(r * y[..., k]) ** 2
    out = sig + interf + r ** 2 * scenario.noise_variances[k]
    return float(out) if np.ndim(out) == 0 else out


def align_phases(scenario: Scenario, realization: ChannelRealization, beamformers) -> np.ndarray:
    """Rotate each v_k so that h_k^H C_k D_k v_k is real and non-negative."""
    V = np.array(beamformers, dtype=complex)
    for k in range(scenario.num_users):
        s = effective_gains(scenario, V, k, realization.estimates[k])[k]
        if abs(s) > 0:
            V[k] *= np.conj(s) / abs(s)
    return V


def optimal_equalizer_perfect_csi(scenario: Scenario, realization: ChannelRealization,
                                  beamformers, k: int) -> float:
    """MMSE equalizer for user k, assuming v_k is phase-aligned (see align_phases)."""
    y = effective_gains(scenario, beamformers, k, realization.estimates[k])
    denom = np.sum(np.abs(y) ** 2) + scenario.noise_variances[k]
    return float(abs(y[k]) / denom)


def mmse_perfect_csi(scenario: Scenario, realization: ChannelRealization, beamformers, k: int) -> float:
    y = effective_gains(scenario, beamformers, k, realization.estimates[k])
    s2 = scenario.noise_variances[k]
    total = np.sum(np.abs(y) ** 2) + s2
    return float((total - abs(y[k]) ** 2) / total)


def equalizer_for_target_mse(signal_gain: float, total_power: float, gamma: float) -> float:
    """Largest r >= 0 with b r^2 - 2 a r + 1 = gamma."""
    a, b = signal_gain, total_power
    disc = a * a - (1.0 - gamma) * b
    if disc < -1e-12 * max(1.0, a * a):
        raise UnreachableTarget(f"target MSE {gamma} below the reachable minimum {1 - a * a / b}")
    return float((a + np.sqrt(max(disc, 0.0))) / b)


def build_robust_lmi(scenario: Scenario, realization: ChannelRealization, stacked,
                     rt: float, lam: float, gamma: float, k: int) -> np.ndarray:
    """Hermitian matrix of order N + K_r + 2 whose PSD-ness certifies robust MSE <= gamma.

    ``stacked`` is the N x K_r matrix of effective beamformers D_j v_j and
    ``rt`` is the inverse equalizer 1 / r_k.
    """
    N, K = scenario.total_antennas, scenario.num_users
    Vt = np.asarray(stacked, dtype=complex)
    if Vt.shape != (N, K):
        raise ValueError(f"stacked beamformers must be {(N, K)}, got {Vt.shape}")
    C = np.diag(scenario.coord_masks[k])
    h = realization.estimates[k]
    B = realization.uncertainty_shapes[k]
    sigma = np.sqrt(scenario.noise_variances[k])
    sg = np.sqrt(gamma)
    e = np.zeros(K)
    e[k] = 1.0
    row = h.conj() @ C @ Vt - rt * e
    cross = -(Vt.conj().T @ C.T @ B)          # K x N
    n = N + K + 2
    A = np.zeros((n, n), dtype=complex)
    A[0, 0] = sg * rt - lam
    A[0, 1:K + 1] = row
    A[1:K + 1, 0] = row.conj()
    A[0, K + 1] = A[K + 1, 0] = sigma
    A[1:K + 1, 1:K + 1] = sg * rt * np.eye(K)
    A[1:K + 1, K + 2:] = cross
    A[K + 2:, 1:K + 1] = cross.conj().T
    A[K + 1, K + 1] = sg * rt
    A[K + 2:, K + 2:] = lam * np.eye(N)
    return A


# --- problem construction ------------------------------------------------------

class _Structure:
    """Realization-dependent tensors shared by every gamma."""

    def __init__(self, scenario: Scenario, realization: ChannelRealization):
        self.scenario = scenario
        self.realization = realization
        K, N = scenario.num_users, scenario.total_antennas
        self.K, self.N = K, N
        dm = scenario.data_masks
        self.slots = [(k, n) for k in range(K) for n in range(N) if dm[k, n]]
        nv = 2 * len(self.slots)
        self.nv = nv
        E = np.zeros((nv, N, K), dtype=complex)
        for i, (k, n) in enumerate(self.slots):
            E[2 * i, n, k] = 1.0
            E[2 * i + 1, n, k] = 1j
        self.E = E
        hc = realization.estimates * scenario.coord_masks
        # G[k, i, j] = coefficient of x_i in h_k^H C_k D_j v_j
        self.G = np.einsum("kn,inj->kij", hc.conj(), E)
        self.power_rows = []
        for Q, q in scenario.power_constraints:
            w, U = np.linalg.eigh(Q)
            keep = w > 1e-12 * max(1.0, w[-1])
            L = U[:, keep] * np.sqrt(w[keep])
            W = np.einsum("nr,inj->irj", L.conj(), E).reshape(nv, -1)
            self.power_rows.append((np.hstack([W.real, W.imag]).T, q))
        self.sigma = np.sqrt(scenario.noise_variances)
        self._lmi_cache: dict[int, tuple] = {}

    def beamformers(self, xv: np.ndarray) -> np.ndarray:
        V = np.zeros((self.K, self.N), dtype=complex)
        for i, (k, n) in enumerate(self.slots):
            V[k, n] = xv[2 * i] + 1j * xv[2 * i + 1]
        return V

    def add_power(self, b: ProgramBuilder, s_index: int):
        nx = b.num_vars
        for rows, q in self.power_rows:
            coef = np.zeros((1 + rows.shape[0], nx))
            coef[0, s_index] = np.sqrt(q)
            coef[1:, :self.nv] = rows
            b.add("soc", np.zeros(coef.shape[0]), coef)

    def lmi_pieces(self, k: int):
        """svec'd pieces of the real-embedded A_k; gamma enters as a scale."""
        if k in self._lmi_cache:
            return self._lmi_cache[k]
        K, N, nv = self.K, self.N, self.nv
        n = N + K + 2
        CB = self.scenario.coord_masks[k][:, None] * self.realization.uncertainty_shapes[k]
        F = np.einsum("inj,nq->ijq", self.E.conj(), CB)       # Vt^H C B per x_i
        Tv = np.zeros((nv, n, n), dtype=complex)
        Tv[:, 0, 1:K + 1] = self.G[k]
        Tv[:, 1:K + 1, 0] = self.G[k].conj()
        Tv[:, 1:K + 1, K + 2:] = -F
        Tv[:, K + 2:, 1:K + 1] = -np.conj(np.transpose(F, (0, 2, 1)))
        H0 = np.zeros((n, n), dtype=complex)
        H0[0, K + 1] = H0[K + 1, 0] = self.sigma[k]
        rt_off = np.zeros((n, n), dtype=complex)
        rt_off[0, 1 + k] = rt_off[1 + k, 0] = -1.0
        rt_diag = np.zeros((n, n), dtype=complex)
        rt_diag[0, 0] = 1.0
        rt_diag[np.arange(1, K + 2), np.arange(1, K + 2)] = 1.0
        lam = np.zeros((n, n), dtype=complex)
        lam[0, 0] = -1.0
        lam[np.arange(K + 2, n), np.arange(K + 2, n)] = 1.0
        pieces = (2 * n,
                  svec(hermitian_to_real(H0)),
                  svec(hermitian_to_real(Tv)).T,
                  svec(hermitian_to_real(rt_off)),
                  svec(hermitian_to_real(rt_diag)),
                  svec(hermitian_to_real(lam)))
        self._lmi_cache[k] = pieces
        return pieces


def _clamp(gamma) -> np.ndarray:
    return np.clip(np.asarray(gamma, dtype=float), GAMMA_FLOOR, 1.0)


class FeasibilityChecker:
    """Feasibility oracle for MSE target vectors on one channel realization.

    Parameters
    ----------
    formulation : {"auto", "lmi", "soc"}
        ``auto`` picks ``soc`` for perfect CSI and ``lmi`` otherwise.
    fallback : ConicBackend or None
        Backend retried when the primary one fails numerically.
    """

    def __init__(self, scenario: Scenario, realization: ChannelRealization,
                 backend: ConicBackend | str | None = None, formulation: str = "auto",
                 max_power_scale: float = 4.0, fallback: ConicBackend | str | None = "scs"):
        if formulation == "auto":
            perfect = scenario.csi_mode is CsiMode.PERFECT or realization.is_perfect
            formulation = "soc" if perfect else "lmi"
        if formulation not in ("lmi", "soc"):
            raise ValueError(f"unknown formulation {formulation!r}")
        if formulation == "soc" and not realization.is_perfect:
            raise ValueError("the SOC formulation needs perfect CSI")
        self.scenario = scenario
        self.realization = realization
        self.formulation = formulation
        self.backend = get_backend(backend)
        self.fallback = get_backend(fallback) if fallback is not None else None
        self.max_power_scale = max_power_scale
        self.structure = _Structure(scenario, realization)
        self.evaluations = 0

    # program builders ---------------------------------------------------------
    def program(self, gamma):
        gamma = _clamp(gamma)
        return self._soc_program(gamma) if self.formulation == "soc" else self._lmi_program(gamma)

    def _soc_program(self, gamma):
        st = self.structure
        K, nv = st.K, st.nv
        nx = nv + 1
        b = ProgramBuilder(nx)
        b.c[nv] = 1.0
        for k in range(K):
            if gamma[k] >= 1.0:
                continue
            c = np.sqrt(gamma[k] / (1.0 - gamma[k]))
            others = [j for j in range(K) if j != k]
            coef = np.zeros((2 + 2 * len(others), nx))
            coef[0, :nv] = c * st.G[k, :, k].real
            for t, j in enumerate(others):
                coef[1 + 2 * t, :nv] = st.G[k, :, j].real
                coef[2 + 2 * t, :nv] = st.G[k, :, j].imag
            const = np.zeros(coef.shape[0])
            const[-1] = st.sigma[k]
            b.add("soc", const, coef)
        st.add_power(b, nv)
        cap = np.zeros((1, nx))
        cap[0, nv] = -1.0
        b.add("nonneg", [self.max_power_scale], cap)
        return b.build()

    def _lmi_program(self, gamma):
        st = self.structure
        K, nv = st.K, st.nv
        nx = nv + 2 * K + 1
        s_idx = nx - 1
        b = ProgramBuilder(nx)
        b.c[s_idx] = 1.0
        silent = []
        for k in range(K):
            if gamma[k] >= 1.0:
                silent.append(k)
                continue
            _, const, Mv, rt_off, rt_diag, lam = st.lmi_pieces(k)
            coef = np.zeros((const.shape[0], nx))
            coef[:, :nv] = Mv
            coef[:, nv + k] = rt_off + np.sqrt(gamma[k]) * rt_diag
            coef[:, nv + K + k] = lam
            b.add("psd", const, coef, size=2 * (st.N + K + 2))
        if silent:
            coef = np.zeros((2 * len(silent), nx))
            for t, k in enumerate(silent):
                coef[2 * t, nv + k] = 1.0
                coef[2 * t + 1, nv + K + k] = 1.0
            b.add("zero", np.zeros(coef.shape[0]), coef)
        coef = np.zeros((2 * K, nx))
        coef[:, nv:nv + 2 * K] = np.eye(2 * K)
        b.add("nonneg", np.zeros(2 * K), coef)
        st.add_power(b, s_idx)
        cap = np.zeros((1, nx))
        cap[0, s_idx] = -1.0
        b.add("nonneg", [self.max_power_scale], cap)
        return b.build()

    # solving ------------------------------------------------------------------
    def check(self, gamma):
        """Feasible(strategy, lambdas) or Infeasible(note); raises SolverError."""
        self.evaluations += 1
        gamma = _clamp(gamma)
        if np.all(gamma >= 1.0):
            K, N = self.structure.K, self.structure.N
            return Feasible(Strategy(np.zeros((K, N)), np.zeros(K)), np.zeros(K), 0.0)
        prog = self.program(gamma)
        errors = []
        for backend in (self.backend, self.fallback):
            if backend is None:
                continue
            res = backend.solve(prog)
            if res.status is Status.INFEASIBLE:
                return Infeasible(f"{backend.name}: certified infeasible ({res.raw_status})")
            if res.x is None:
                errors.append(f"{backend.name}: {res.raw_status}")
                continue
            scale = float(res.x[-1])
            if res.status is Status.OPTIMAL and scale > 1.0:
                return Infeasible(f"minimum power scale {scale:.9g} > 1", scale)
            if scale <= 1.0:
                outcome = self._certificate(res.x, gamma, scale)
                if outcome is not None:
                    return outcome
                errors.append(f"{backend.name}: certificate failed validation ({res.raw_status})")
            else:
                errors.append(f"{backend.name}: {res.raw_status} with scale {scale:.3g}")
        raise SolverError("; ".join(errors) or "no backend")

    def _certificate(self, x, gamma, scale):
        st = self.structure
        sc, real = self.scenario, self.realization
        K = st.K
        V = st.beamformers(x[:st.nv])
        if self.formulation == "soc":
            V = align_phases(sc, real, V)
            r = np.array([optimal_equalizer_perfect_csi(sc, real, V, k) for k in range(K)])
            lam = np.zeros(K)
            strat = Strategy(V, r)
            mses = np.array([mse_nominal(sc, strat, k, real.estimates[k]) for k in range(K)])
            ok = np.all(mses <= gamma + VALIDATION_TOL)
        else:
            rt = x[st.nv:st.nv + K]
            lam = x[st.nv + K:st.nv + 2 * K]
            r = np.where(gamma < 1.0, 1.0 / np.maximum(rt, 1e-300), 0.0)
            strat = Strategy(V, r)
            ok = True
            Vt = strat.stacked(sc)
            for k in range(K):
                if gamma[k] >= 1.0:
                    continue
                A = build_robust_lmi(sc, real, Vt, rt[k], lam[k], gamma[k], k)
                ev = np.linalg.eigvalsh(A)[0]
                if ev < -VALIDATION_TOL * max(1.0, rt[k]):
                    ok = False
        ok = ok and strat.power_feasible(sc, rtol=VALIDATION_TOL)
        if not ok:
            return None
        return Feasible(strat, np.asarray(lam), scale)

    def __call__(self, gamma):
        return self.check(gamma)


def check_feasible(scenario: Scenario, realization: ChannelRealization, gamma,
                   backend=None, formulation: str = "auto"):
    return FeasibilityChecker(scenario, realization, backend, formulation).check(gamma)


# --- robust evaluation ----------------------------------------------------------

def worst_case_mse(scenario: Scenario, realization: ChannelRealization, strategy: Strategy,
                   k: int, backend=None) -> float:
    """Largest MSE of user k over its uncertainty ellipsoid for a fixed strategy."""
    r = float(strategy.equalizers[k])
    if r <= 0:
        return 1.0
    if not np.any(realization.uncertainty_shapes[k]):
        return float(mse_nominal(scenario, strategy, k, realization.estimates[k]))
    backend = get_backend(backend)
    N, K = scenario.total_antennas, scenario.num_users
    rt = 1.0 / r
    Vt = strategy.stacked(scenario)
    # A_k at (gamma~ = 0, lambda = 0), then the two variable directions
    H0 = build_robust_lmi(scenario, realization, Vt, rt, 0.0, 0.0, k)
    n = N + K + 2
    Hg = np.zeros((n, n))
    Hg[0, 0] = rt
    Hg[np.arange(1, K + 2), np.arange(1, K + 2)] = rt
    Hl = np.zeros((n, n))
    Hl[0, 0] = -1.0
    Hl[np.arange(K + 2, n), np.arange(K + 2, n)] = 1.0
    b = ProgramBuilder(2)
    b.c[0] = 1.0
    b.add_hermitian_psd(H0, np.stack([Hg, Hl]).astype(complex))
    b.add("nonneg", np.zeros(2), np.eye(2))
    res = backend.solve(b.build())
    if res.status is not Status.OPTIMAL:
        raise SolverError(f"robust MSE evaluation failed: {res.raw_status}")
    return float(res.x[0] ** 2)
