"""Zero-forcing / interference-constrained beamforming via SDR, and robust strategy evaluation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .conic import ProgramBuilder, SolverError, Status, get_backend
from .feasibility import Strategy, align_phases, mse_nominal, optimal_equalizer_perfect_csi, \
    worst_case_mse
from .perf import SystemKind, SystemUtility, UserKind, UserUtility, f_eval
from .scenario import ChannelRealization, Scenario

log = logging.getLogger(__name__)

RANK_TOL = 1e-7


class ZfInfeasible(RuntimeError):
    pass


class ExtractionWarning(UserWarning):
    pass


def auto_caps(scenario: Scenario) -> np.ndarray:
    """z_k = (K_r - 1) tr(B_k B_k^H); equals (K_r - 1) N xi for spherical sets."""
    K, N = scenario.num_users, scenario.total_antennas
    if scenario.uncertainty_matrices is not None:
        tr = np.array([np.linalg.norm(B) ** 2 for B in scenario.uncertainty_matrices])
    else:
        tr = np.full(K, N * scenario.uncertainty_xi)
    return (K - 1) * tr


def parse_caps(z, scenario: Scenario) -> np.ndarray:
    if isinstance(z, str):
        if z == "auto":
            return auto_caps(scenario)
        z = [float(t) for t in z.split(",")]
    z = np.broadcast_to(np.asarray(z, dtype=float), (scenario.num_users,)).copy()
    if np.any(z < 0):
        raise ValueError("interference caps must be non-negative")
    return z


def hermitian_basis(m: int) -> np.ndarray:
    """Real-coefficient basis (m^2, m, m) of m x m Hermitian matrices."""
    out = []
    for i in range(m):
        e = np.zeros((m, m), dtype=complex)
        e[i, i] = 1.0
        out.append(e)
    for i in range(m):
        for j in range(i + 1, m):
            e = np.zeros((m, m), dtype=complex)
            e[i, j] = e[j, i] = 1.0
            out.append(e)
            e = np.zeros((m, m), dtype=complex)
            e[i, j], e[j, i] = 1j, -1j
            out.append(e)
    return np.array(out).reshape(m * m, m, m)


def _trace_coef(A: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Coefficients of tr(A W) for W = sum_t x_t basis[t]."""
    return np.real(np.einsum("ij,tji->t", A, basis))


@dataclass
class ZfResult:
    strategy: Strategy
    eta: np.ndarray              # realized nominal SINRs
    design_eta: np.ndarray       # signal power over sigma^2 + z_k
    sdr_value: float
    extracted_value: float
    caps: np.ndarray
    covariances: list = field(default_factory=list)
    ranks: list = field(default_factory=list)

    @property
    def beamformers(self) -> np.ndarray:
        return self.strategy.beamformers

    def to_dict(self) -> dict:
        return {"strategy": self.strategy.to_dict(), "eta": self.eta.tolist(),
                "design_eta": self.design_eta.tolist(), "sdr_value": self.sdr_value,
                "extracted_value": self.extracted_value, "caps": self.caps.tolist(),
                "ranks": list(self.ranks)}


class _ZfModel:
    def __init__(self, scenario: Scenario, realization: ChannelRealization, caps):
        self.scenario = scenario
        K, N = scenario.num_users, scenario.total_antennas
        self.K, self.N = K, N
        self.caps = np.asarray(caps, dtype=float)
        h = realization.estimates * scenario.coord_masks      # C_k h_k
        self.hc = h
        dm = scenario.data_masks
        self.bases = []
        for k in range(K):
            support = np.eye(N)[:, dm[k] > 0].astype(complex)
            rows = [(dm[k] * h[j]).conj() for j in range(K) if j != k and self.caps[j] == 0]
            rows = [r for r in rows if np.any(r)]
            if rows:
                ns = null_space(np.array(rows) @ support)
                U = support @ ns if ns.size else np.zeros((N, 0), dtype=complex)
            else:
                U = support
            self.bases.append(U)

    def gain(self, j: int, k: int) -> np.ndarray:
        """Projected rank-one matrix for |h_j^H C_j D_k v_k|^2 in user k's basis."""
        U = self.bases[k]
        t = U.conj().T @ (self.scenario.data_masks[k] * self.hc[j])
        return np.outer(t, t.conj())

    def covariance(self, k: int, W: np.ndarray) -> np.ndarray:
        U = self.bases[k]
        return U @ W @ U.conj().T


def _add_user_utility(b: ProgramBuilder, kind: UserKind, gi: int, ei: int):
    nx = b.num_vars
    if kind is UserKind.INVERSE_MSE:
        coef = np.zeros((1, nx))
        coef[0, gi], coef[0, ei] = -1.0, 1.0
        b.add("nonneg", [0.0], coef)
    elif kind is UserKind.RATE:
        coef = np.zeros((3, nx))
        coef[0, gi] = np.log(2.0)
        coef[2, ei] = 1.0
        b.add("exp", [0.0, 1.0, 1.0], coef)
    else:
        coef = np.zeros((3, nx))
        coef[0, gi], coef[0, ei] = -1.0, 1.0
        coef[2, gi], coef[2, ei] = -1.0, -1.0
        b.add("soc", [2.0, 2.0, 0.0], coef)


def _user_value(kind: UserKind, eta):
    eta = np.maximum(np.asarray(eta, dtype=float), 0.0)
    if kind is UserKind.INVERSE_MSE:
        return eta
    if kind is UserKind.RATE:
        return np.log2(1.0 + eta)
    return eta / (1.0 + eta)


def zf_objective(user: UserUtility, system: SystemUtility, eta) -> float:
    kind = user.kind if isinstance(user, UserUtility) else UserKind(user)
    return f_eval(system, _user_value(kind, eta))


def solve_zf(scenario: Scenario, realization: ChannelRealization, caps=0.0,
             user_utility=UserKind.RATE, system_utility=None, backend=None) -> ZfResult:
    """Interference-constrained beamforming on the nominal channels (caps 0: zero-forcing).

    Maximizes ``f(g(eta))`` over the semidefinite relaxation, then extracts
    rank-one beamformers.
    """
    user = user_utility if isinstance(user_utility, UserUtility) else UserUtility(user_utility)
    system = SystemUtility() if system_utility is None else system_utility
    backend = get_backend(backend)
    caps = parse_caps(caps, scenario)
    model = _ZfModel(scenario, realization, caps)
    K = scenario.num_users
    for k in range(K):
        if not np.real(np.trace(model.gain(k, k))) > 1e-12:
            raise ZfInfeasible(f"user {k} has no signal direction that meets the interference caps")
    sizes = [U.shape[1] for U in model.bases]
    bases = [hermitian_basis(m) for m in sizes]
    offs = np.concatenate([[0], np.cumsum([m * m for m in sizes])]).astype(int)
    nw = int(offs[-1])
    eta_i = nw
    g_i = nw + K
    aux_i = nw + 2 * K
    kind = system.kind
    n_aux = 1 if kind is SystemKind.MAX_MIN else (K if kind in (SystemKind.PROP_FAIR, SystemKind.HARMONIC) else 0)
    nx = aux_i + n_aux
    b = ProgramBuilder(nx)
    w = system.w(K)
    s2 = scenario.noise_variances

    for k in range(K):
        m = sizes[k]
        if m:
            coef = np.zeros((nx, m, m), dtype=complex)
            coef[offs[k]:offs[k + 1]] = bases[k]
            b.add_hermitian_psd(np.zeros((m, m), dtype=complex), coef)
        coef = np.zeros((1, nx))
        if m:
            coef[0, offs[k]:offs[k + 1]] = _trace_coef(model.gain(k, k), bases[k])
        coef[0, eta_i + k] = -(s2[k] + caps[k])
        b.add("nonneg", [0.0], coef)
        if caps[k] > 0:
            coef = np.zeros((1, nx))
            for j in range(K):
                if j != k and sizes[j]:
                    coef[0, offs[j]:offs[j + 1]] = -_trace_coef(model.gain(k, j), bases[j])
            b.add("nonneg", [caps[k]], coef)
    for Q, q in scenario.power_constraints:
        coef = np.zeros((1, nx))
        for k in range(K):
            if sizes[k]:
                U = model.bases[k]
                coef[0, offs[k]:offs[k + 1]] = -_trace_coef(U.conj().T @ Q @ U, bases[k])
        b.add("nonneg", [q], coef)
    coef = np.zeros((K, nx))
    coef[:, eta_i:eta_i + K] = np.eye(K)
    b.add("nonneg", np.zeros(K), coef)
    for k in range(K):
        _add_user_utility(b, user.kind, g_i + k, eta_i + k)

    if kind is SystemKind.SUM:
        b.c[g_i:g_i + K] = -w
    elif kind is SystemKind.MAX_MIN:
        coef = np.zeros((K, nx))
        coef[:, g_i:g_i + K] = np.diag(w)
        coef[:, aux_i] = -1.0
        b.add("nonneg", np.zeros(K), coef)
        b.c[aux_i] = -1.0
    elif kind is SystemKind.PROP_FAIR:
        for k in range(K):
            coef = np.zeros((3, nx))
            coef[0, aux_i + k] = 1.0
            coef[2, g_i + k] = 1.0
            b.add("exp", [0.0, 1.0, 0.0], coef)
        b.c[aux_i:aux_i + K] = -w / w.sum()
    else:
        for k in range(K):
            coef = np.zeros((3, nx))
            coef[0, aux_i + k] = coef[0, g_i + k] = 1.0
            coef[2, aux_i + k], coef[2, g_i + k] = 1.0, -1.0
            b.add("soc", [0.0, 2.0, 0.0], coef)
        b.c[aux_i:aux_i + K] = w

    res = backend.solve(b.build())
    if res.status is Status.INFEASIBLE:
        raise ZfInfeasible("relaxed problem infeasible (too few spatial degrees of freedom?)")
    if res.status is not Status.OPTIMAL:
        raise SolverError(f"ZF relaxation failed: {res.raw_status}")
    x = res.x
    covs = []
    for k in range(K):
        W = np.einsum("t,tij->ij", x[offs[k]:offs[k + 1]], bases[k]) if sizes[k] else np.zeros((0, 0))
        covs.append(model.covariance(k, W))
    eta_sdr = np.maximum(x[eta_i:eta_i + K], 0.0)
    sdr_value = zf_objective(user, system, eta_sdr)

    V, ranks = extract_rank_one(covs, scenario, realization, backend, model=model)
    V = align_phases(scenario, realization, V)
    r = np.array([optimal_equalizer_perfect_csi(scenario, realization, V, k) for k in range(K)])
    strategy = Strategy.projected(scenario, V, r)
    sig, interf = signal_interference(scenario, realization, strategy.beamformers)
    design = sig / (s2 + caps)
    value = zf_objective(user, system, design)
    if sdr_value > 0 and (sdr_value - value) / abs(sdr_value) > 1e-3:
        warnings.warn(f"rank-one extraction lost {(sdr_value - value) / sdr_value:.2e} "
                      "of the relaxed objective", ExtractionWarning)
    return ZfResult(strategy, sig / (s2 + interf), design, sdr_value, value, caps, covs, ranks)


def signal_interference(scenario: Scenario, realization: ChannelRealization, beamformers):
    """Nominal |h_k^H C_k D_k v_k|^2 and sum over j != k of |h_k^H C_k D_j v_j|^2."""
    Vt = (np.asarray(beamformers) * scenario.data_masks).T
    Y = np.abs((realization.estimates * scenario.coord_masks).conj() @ Vt) ** 2
    sig = np.diag(Y).copy()
    return sig, Y.sum(axis=1) - sig


def extract_rank_one(covariances, scenario: Scenario, realization: ChannelRealization,
                     backend=None, model: _ZfModel | None = None):
    """Beamformers (K, N) from relaxed covariances, and each covariance's numerical rank."""
    backend = get_backend(backend)
    K, N = scenario.num_users, scenario.total_antennas
    if model is None:
        model = _ZfModel(scenario, realization, np.zeros(K))
        model.bases = [np.eye(N)[:, scenario.data_masks[k] > 0].astype(complex) for k in range(K)]
    V = np.zeros((K, N), dtype=complex)
    ranks = []
    for k, C in enumerate(covariances):
        C = 0.5 * (C + C.conj().T)
        lam, vec = np.linalg.eigh(C)
        top = lam[-1]
        if top <= 0:
            ranks.append(0)
            continue
        rank = int(np.sum(lam > RANK_TOL * top))
        ranks.append(rank)
        if rank == 1:
            V[k] = np.sqrt(top) * vec[:, -1]
        else:
            V[k] = _second_stage(k, C, scenario, model, backend)
    return V, ranks


def _second_stage(k, C, scenario, model, backend) -> np.ndarray:
    """max Re(h_k^H C_k D_k v) with per-user interference and power traces of C as caps."""
    U = model.bases[k]
    m = U.shape[1]
    K = scenario.num_users
    dm = scenario.data_masks[k]
    nx = 2 * m
    a = U.conj().T @ (dm * model.hc[k])

    def lin(t):
        """Rows for Re and Im of t^H y with y = yr + i yi."""
        return (np.concatenate([t.real, t.imag]), np.concatenate([-t.imag, t.real]))

    b = ProgramBuilder(nx)
    re, im = lin(a)
    b.c[:] = -re
    b.add("zero", [0.0], im[None, :])
    for j in range(K):
        if j == k:
            continue
        t = U.conj().T @ (dm * model.hc[j])
        if not np.any(t):
            continue
        cap = np.real(np.conj(t) @ (U.conj().T @ C @ U) @ t)
        re_j, im_j = lin(t)
        b.add("soc", [np.sqrt(max(cap, 0.0) + 1e-12), 0.0, 0.0],
              np.vstack([np.zeros(nx), re_j, im_j]))
    for Q, _ in scenario.power_constraints:
        QU = U.conj().T @ Q @ U
        cap = np.real(np.trace(QU @ U.conj().T @ C @ U))
        w, E = np.linalg.eigh(QU)
        keep = w > 1e-12 * max(1.0, abs(w[-1]))
        if not keep.any():
            continue
        L = (E[:, keep] * np.sqrt(w[keep])).conj().T
        rows = np.vstack([np.hstack([L.real, -L.imag]), np.hstack([L.imag, L.real])])
        b.add("soc", np.concatenate([[np.sqrt(max(cap, 0.0))], np.zeros(rows.shape[0])]),
              np.vstack([np.zeros(nx), -rows]))
    res = backend.solve(b.build())
    if res.status is not Status.OPTIMAL:
        raise SolverError(f"rank-one extraction failed for user {k}: {res.raw_status}")
    y = res.x[:m] + 1j * res.x[m:]
    return U @ y


@dataclass
class Evaluation:
    gamma: np.ndarray            # worst-case MSE per user
    nominal: np.ndarray          # MSE at the channel estimates
    equalizers: np.ndarray

    def utilities(self, user) -> np.ndarray:
        user = user if isinstance(user, UserUtility) else UserUtility(user)
        return user(np.clip(self.gamma, 1e-300, 1.0))

    @property
    def geometric_mean_mse(self) -> float:
        return float(np.exp(np.mean(np.log(self.gamma))))


def evaluate_strategy(scenario: Scenario, realization: ChannelRealization, beamformers,
                      equalizers=None, backend=None) -> Evaluation:
    """Worst-case MSEs of given beamformers.

    Without ``equalizers`` each receiver uses the MMSE equalizer computed as
    if its channel estimate were exact.
    """
    V = np.asarray(beamformers, dtype=complex) * scenario.data_masks
    K = scenario.num_users
    if equalizers is None:
        V = align_phases(scenario, realization, V)
        r = np.array([optimal_equalizer_perfect_csi(scenario, realization, V, k) for k in range(K)])
    else:
        r = np.asarray(equalizers, dtype=float)
    strat = Strategy(V, r)
    gamma = np.array([worst_case_mse(scenario, realization, strat, k, backend) for k in range(K)])
    nominal = np.array([mse_nominal(scenario, strat, k, realization.estimates[k]) for k in range(K)])
    return Evaluation(gamma, nominal, r)
