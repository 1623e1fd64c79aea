"""Multicell MISO system model: clusters, power constraints, uncertainty, channels."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSD_TOL = 1e-9


class ConfigurationError(ValueError):
    pass


class CsiMode(str, enum.Enum):
    PERFECT = "perfect"
    WORST_CASE = "worst-case"


@dataclass(frozen=True)
class TotalPower:
    q: float


@dataclass(frozen=True)
class PerAntenna:
    q: float


@dataclass(frozen=True)
class PerTransmitter:
    q: float


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable description of a multicell downlink system.

    ``uncertainty_xi`` describes spherical ellipsoids ``B_k = sqrt(xi) I``;
    ``uncertainty_matrices`` (one N x N matrix per user) overrides it.
    ``channel_gains[j, k]`` is the average ``||h_jk||^2`` used by
    :func:`draw_channels`.
    """

    num_transmitters: int
    antennas: tuple
    num_users: int
    data_clusters: tuple
    coord_clusters: tuple
    power_constraints: tuple
    noise_variances: np.ndarray
    csi_mode: CsiMode = CsiMode.PERFECT
    uncertainty_xi: float = 0.0
    uncertainty_matrices: tuple | None = None
    channel_gains: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "antennas", tuple(int(n) for n in self.antennas))
        object.__setattr__(self, "data_clusters",
                           tuple(frozenset(int(k) for k in s) for s in self.data_clusters))
        object.__setattr__(self, "coord_clusters",
                           tuple(frozenset(int(k) for k in s) for s in self.coord_clusters))
        object.__setattr__(self, "power_constraints",
                           tuple((_frozen(np.asarray(Q, dtype=complex)), float(q))
                                 for Q, q in self.power_constraints))
        noise = np.broadcast_to(np.asarray(self.noise_variances, dtype=float),
                                (self.num_users,))
        object.__setattr__(self, "noise_variances", _frozen(noise))
        object.__setattr__(self, "csi_mode", CsiMode(self.csi_mode))
        if self.uncertainty_matrices is not None:
            object.__setattr__(self, "uncertainty_matrices",
                               tuple(_frozen(np.asarray(B, dtype=complex))
                                     for B in self.uncertainty_matrices))
        if self.channel_gains is not None:
            object.__setattr__(self, "channel_gains",
                               _frozen(np.asarray(self.channel_gains, dtype=float)))
        if len(self.antennas) != self.num_transmitters:
            raise ConfigurationError(
                f"{len(self.antennas)} antenna counts for {self.num_transmitters} transmitters")
        for name in ("data_clusters", "coord_clusters"):
            sets = getattr(self, name)
            if len(sets) != self.num_transmitters:
                raise ConfigurationError(f"{name}: expected {self.num_transmitters} sets")
            for j, s in enumerate(sets):
                bad = [k for k in s if not 0 <= k < self.num_users]
                if bad:
                    raise ConfigurationError(f"{name}[{j}] references unknown users {bad}")
        n = self.total_antennas
        for l, (Q, _) in enumerate(self.power_constraints):
            if Q.shape != (n, n):
                raise ConfigurationError(f"power constraint {l} has shape {Q.shape}, need {(n, n)}")
        if self.uncertainty_matrices is not None:
            if len(self.uncertainty_matrices) != self.num_users:
                raise ConfigurationError("need one uncertainty matrix per user")
            for k, B in enumerate(self.uncertainty_matrices):
                if B.shape != (n, n):
                    raise ConfigurationError(f"uncertainty matrix {k} has shape {B.shape}")

    @property
    def total_antennas(self) -> int:
        return sum(self.antennas)

    @property
    def num_constraints(self) -> int:
        return len(self.power_constraints)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.antennas)])

    @property
    def data_masks(self) -> np.ndarray:
        """(K_r, N) 0/1 diagonals of D_k."""
        return _masks(self.data_clusters, self.antennas, self.num_users)

    @property
    def coord_masks(self) -> np.ndarray:
        """(K_r, N) 0/1 diagonals of C_k."""
        return _masks(self.coord_clusters, self.antennas, self.num_users)

    def uncertainty_shape(self, k: int) -> np.ndarray:
        """B_k with rows/columns of uncoordinated transmitters zeroed."""
        c = self.coord_masks[k]
        if self.csi_mode is CsiMode.PERFECT:
            return np.zeros((self.total_antennas,) * 2, dtype=complex)
        if self.uncertainty_matrices is not None:
            B = np.asarray(self.uncertainty_matrices[k])
        else:
            B = np.sqrt(self.uncertainty_xi) * np.eye(self.total_antennas)
        return c[:, None] * B * c[None, :]

    def with_uncertainty(self, xi: float) -> "Scenario":
        """Same system with spherical uncertainty of squared radius ``xi``."""
        mode = CsiMode.PERFECT if xi == 0 else CsiMode.WORST_CASE
        return _replace(self, uncertainty_xi=float(xi), uncertainty_matrices=None, csi_mode=mode)

    def with_power(self, scale: float) -> "Scenario":
        """Same system with every power limit multiplied by ``scale``."""
        pcs = tuple((Q, q * scale) for Q, q in self.power_constraints)
        return _replace(self, power_constraints=pcs)


def _replace(s: Scenario, **kw) -> Scenario:
    fields = dict(
        num_transmitters=s.num_transmitters, antennas=s.antennas, num_users=s.num_users,
        data_clusters=s.data_clusters, coord_clusters=s.coord_clusters,
        power_constraints=s.power_constraints, noise_variances=s.noise_variances,
        csi_mode=s.csi_mode, uncertainty_xi=s.uncertainty_xi,
        uncertainty_matrices=s.uncertainty_matrices, channel_gains=s.channel_gains)
    fields.update(kw)
    return Scenario(**fields)


def _masks(clusters, antennas, num_users) -> np.ndarray:
    out = np.zeros((num_users, sum(antennas)))
    offs = np.concatenate([[0], np.cumsum(antennas)])
    for j, users in enumerate(clusters):
        for k in users:
            out[k, offs[j]:offs[j + 1]] = 1.0
    return out


def selection_matrix(clusters: Sequence, antennas: Sequence[int], user: int) -> np.ndarray:
    """Block-diagonal 0/1 matrix selecting the antennas of transmitters whose set holds ``user``."""
    if len(clusters) != len(antennas):
        raise ConfigurationError(
            f"{len(clusters)} cluster sets but {len(antennas)} transmitters")
    if user < 0:
        raise ConfigurationError(f"invalid user index {user}")
    diag = np.concatenate([np.full(n, 1.0 if user in set(s) else 0.0)
                           for s, n in zip(clusters, antennas)])
    return np.diag(diag)


@dataclass(frozen=True)
class SelectionMatrices:
    data: np.ndarray    # (K_r, N, N)
    coord: np.ndarray   # (K_r, N, N)


def selection_matrices(scenario: Scenario) -> SelectionMatrices:
    d = np.stack([selection_matrix(scenario.data_clusters, scenario.antennas, k)
                  for k in range(scenario.num_users)])
    c = np.stack([selection_matrix(scenario.coord_clusters, scenario.antennas, k)
                  for k in range(scenario.num_users)])
    return SelectionMatrices(d, c)


def _check_dims(num_tx, antennas, num_users):
    if num_tx <= 0 or num_users <= 0:
        raise ConfigurationError("dimensions must be positive")
    if len(antennas) != num_tx or any(int(n) <= 0 for n in antennas):
        raise ConfigurationError(f"need {num_tx} positive antenna counts, got {antennas}")


def _power_matrices(model, antennas) -> list:
    n = sum(antennas)
    if isinstance(model, TotalPower):
        return [(np.eye(n), model.q)]
    if isinstance(model, PerAntenna):
        return [(np.diag(np.eye(n)[l]), model.q) for l in range(n)]
    if isinstance(model, PerTransmitter):
        offs = np.concatenate([[0], np.cumsum(antennas)])
        out = []
        for j in range(len(antennas)):
            d = np.zeros(n)
            d[offs[j]:offs[j + 1]] = 1.0
            out.append((np.diag(d), model.q))
        return out
    raise ConfigurationError(f"unknown power model {model!r}")


def make_network_mimo(num_tx: int, antennas: Sequence[int], num_users: int,
                      power_model=TotalPower(10.0), xi: float = 0.0,
                      noise=1.0, channel_gains=None) -> Scenario:
    """All transmitters serve and coordinate every user."""
    _check_dims(num_tx, antennas, num_users)
    if xi < 0:
        raise ConfigurationError("xi must be non-negative")
    everyone = [set(range(num_users))] * num_tx
    return Scenario(
        num_transmitters=num_tx, antennas=tuple(antennas), num_users=num_users,
        data_clusters=everyone, coord_clusters=everyone,
        power_constraints=_power_matrices(power_model, antennas),
        noise_variances=noise,
        csi_mode=CsiMode.PERFECT if xi == 0 else CsiMode.WORST_CASE,
        uncertainty_xi=float(xi), channel_gains=channel_gains)


def make_interference_channel(num_tx: int, antennas: Sequence[int], q: float,
                              uncertainty_blocks=None, noise=1.0,
                              channel_gains=None) -> Scenario:
    """Transmitter j serves user j and coordinates interference to all users.

    ``uncertainty_blocks[k][j]`` is the N_j x N_j block of B_k.
    """
    _check_dims(num_tx, antennas, num_tx)
    n = sum(antennas)
    offs = np.concatenate([[0], np.cumsum(antennas)])
    matrices = None
    mode = CsiMode.PERFECT
    if uncertainty_blocks is not None:
        matrices = []
        for k in range(num_tx):
            B = np.zeros((n, n), dtype=complex)
            for j in range(num_tx):
                B[offs[j]:offs[j + 1], offs[j]:offs[j + 1]] = uncertainty_blocks[k][j]
            matrices.append(B)
        if any(np.any(B != 0) for B in matrices):
            mode = CsiMode.WORST_CASE
    return Scenario(
        num_transmitters=num_tx, antennas=tuple(antennas), num_users=num_tx,
        data_clusters=[{j} for j in range(num_tx)],
        coord_clusters=[set(range(num_tx))] * num_tx,
        power_constraints=_power_matrices(PerTransmitter(q), antennas),
        noise_variances=noise, csi_mode=mode, uncertainty_matrices=matrices,
        channel_gains=channel_gains)


def make_clustered(num_tx: int, antennas: Sequence[int], num_users: int, data_clusters,
                   coord_clusters=None, power_model=None, xi: float = 0.0, noise=1.0,
                   channel_gains=None) -> Scenario:
    """General cooperation clusters; ``coord_clusters`` defaults to every user."""
    _check_dims(num_tx, antennas, num_users)
    if xi < 0:
        raise ConfigurationError("xi must be non-negative")
    if coord_clusters is None:
        coord_clusters = [set(range(num_users))] * num_tx
    power_model = PerTransmitter(10.0) if power_model is None else power_model
    return Scenario(
        num_transmitters=num_tx, antennas=tuple(antennas), num_users=num_users,
        data_clusters=data_clusters, coord_clusters=coord_clusters,
        power_constraints=_power_matrices(power_model, antennas),
        noise_variances=noise,
        csi_mode=CsiMode.PERFECT if xi == 0 else CsiMode.WORST_CASE,
        uncertainty_xi=float(xi), channel_gains=channel_gains)


def validate(scenario: Scenario) -> list[str]:
    """Return human-readable violations of the scenario invariants (empty if valid)."""
    out = []
    for j, (d, c) in enumerate(zip(scenario.data_clusters, scenario.coord_clusters)):
        if not d <= c:
            out.append(f"transmitter {j}: data cluster {sorted(d)} not inside "
                       f"coordination cluster {sorted(c)}")
    total = np.zeros((scenario.total_antennas,) * 2, dtype=complex)
    for l, (Q, q) in enumerate(scenario.power_constraints):
        if not np.allclose(Q, Q.conj().T, atol=1e-12):
            out.append(f"power constraint {l}: Q not Hermitian")
            continue
        ev = np.linalg.eigvalsh(Q)
        if ev[0] < -PSD_TOL * max(1.0, abs(ev[-1])):
            out.append(f"power constraint {l}: Q not positive semidefinite")
        if q <= 0:
            out.append(f"power constraint {l}: limit {q} not positive")
        total = total + Q
    if scenario.power_constraints:
        ev = np.linalg.eigvalsh(total)
        if ev[0] <= PSD_TOL * max(1.0, abs(ev[-1])):
            out.append("sum of Q_l not positive definite")
    else:
        out.append("sum of Q_l not positive definite (no power constraints)")
    for k, s2 in enumerate(scenario.noise_variances):
        if not s2 > 0:
            out.append(f"user {k}: noise variance {s2} not positive")
    return out


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Channel estimates (K_r, N) and uncertainty shapes (K_r, N, N)."""

    estimates: np.ndarray
    uncertainty_shapes: np.ndarray = field(default=None)

    def __post_init__(self):
        h = np.asarray(self.estimates, dtype=complex)
        B = self.uncertainty_shapes
        if B is None:
            B = np.zeros((h.shape[0], h.shape[1], h.shape[1]), dtype=complex)
        object.__setattr__(self, "estimates", _frozen(h))
        object.__setattr__(self, "uncertainty_shapes", _frozen(np.asarray(B, dtype=complex)))

    @property
    def is_perfect(self) -> bool:
        return not np.any(self.uncertainty_shapes)


def default_gains(scenario: Scenario) -> np.ndarray:
    if scenario.channel_gains is not None:
        return np.asarray(scenario.channel_gains)
    return np.repeat(np.asarray(scenario.antennas, dtype=float)[:, None],
                     scenario.num_users, axis=1)


def draw_channels(scenario: Scenario, gains=None, seed: int = 0) -> ChannelRealization:
    """Rayleigh-fading estimates with ``E||h_jk||^2 = gains[j, k]``.

    Channels from transmitters that do not coordinate a user are zero.
    """
    gains = default_gains(scenario) if gains is None else np.asarray(gains, dtype=float)
    if gains.shape != (scenario.num_transmitters, scenario.num_users):
        raise ConfigurationError(f"gains need shape {(scenario.num_transmitters, scenario.num_users)}")
    if np.any(gains < 0):
        raise ConfigurationError("gains must be non-negative")
    rng = np.random.default_rng(seed)
    K, N = scenario.num_users, scenario.total_antennas
    z = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2)
    offs = scenario.offsets
    scale = np.zeros((K, N))
    for j, nj in enumerate(scenario.antennas):
        scale[:, offs[j]:offs[j + 1]] = np.sqrt(gains[j] / nj)[:, None]
    h = z * scale * scenario.coord_masks
    B = np.stack([scenario.uncertainty_shape(k) for k in range(K)])
    return ChannelRealization(h, B)


# --- JSON ---------------------------------------------------------------

def complex_to_json(a) -> list:
    """Row-major list of [re, im] pairs (nested like the array)."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def complex_from_json(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def scenario_to_dict(s: Scenario) -> dict:
    if s.uncertainty_matrices is not None:
        unc = {"kind": "explicit",
               "matrices": [complex_to_json(B) for B in s.uncertainty_matrices]}
    else:
        unc = {"kind": "sphere", "xi": s.uncertainty_xi}
    out = {
        "num_transmitters": s.num_transmitters,
        "antennas": list(s.antennas),
        "num_users": s.num_users,
        "data_clusters": [sorted(c) for c in s.data_clusters],
        "coord_clusters": [sorted(c) for c in s.coord_clusters],
        "power_constraints": [{"matrix": complex_to_json(Q), "limit": q}
                              for Q, q in s.power_constraints],
        "noise_variances": s.noise_variances.tolist(),
        "uncertainty": unc,
        "csi_mode": s.csi_mode.value,
    }
    if s.channel_gains is not None:
        out["channel_gains"] = s.channel_gains.tolist()
    return out


def scenario_from_dict(d: dict) -> Scenario:
    unc = d.get("uncertainty", {"kind": "sphere", "xi": 0.0})
    xi, mats = 0.0, None
    if unc["kind"] == "sphere":
        xi = float(unc.get("xi", 0.0))
    elif unc["kind"] == "explicit":
        mats = [complex_from_json(m) for m in unc["matrices"]]
    else:
        raise ConfigurationError(f"unknown uncertainty kind {unc['kind']!r}")
    return Scenario(
        num_transmitters=d["num_transmitters"], antennas=d["antennas"],
        num_users=d["num_users"], data_clusters=d["data_clusters"],
        coord_clusters=d["coord_clusters"],
        power_constraints=[(complex_from_json(p["matrix"]), p["limit"])
                           for p in d["power_constraints"]],
        noise_variances=d["noise_variances"],
        csi_mode=d.get("csi_mode", "perfect"),
        uncertainty_xi=xi, uncertainty_matrices=mats,
        channel_gains=d.get("channel_gains"))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scenario: Scenario, path):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=1)
