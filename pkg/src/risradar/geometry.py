"""Scenario description, geometric channel-parameter mappings, and path gains.

Conventions used throughout the package:

- Euler orientations are intrinsic Z-Y-X (yaw, pitch, roll).
- Uniform planar arrays live in the local y-z plane with the array normal
  along local +x; element (i, j) sits at (0, i*d, j*d) and elements are
  indexed row-major over (azimuth index i, elevation index j), i.e. the
  elevation index varies fastest.
- Azimuth angles are atan2 principal values in (-pi, pi]; elevations are
  arccos of the unit z-component, in [0, pi].
- SI units everywhere (s, m, rad, W); dBm quantities are linearized once
  at scenario construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0

# RIS element gain exponent of the cosine pattern.
DEFAULT_Q0 = 0.285


class GeometryError(ValueError):
    """Degenerate geometry (coincident points, gimbal singularity, ...)."""


def dbm_to_watt(dbm):
    return 10.0 ** (dbm / 10.0 - 3.0)


def euler_to_rotation(orientation):
    """Rotation matrix for intrinsic Z-Y-X Euler angles (yaw, pitch, roll)."""
    yaw, pitch, roll = np.asarray(orientation, dtype=float)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def upa_positions(n_az, n_el, spacing):
    """Local element positions of an (n_az x n_el) UPA in the y-z plane.

    Returns an array of shape (n_az*n_el, 3); elevation index fastest.
    """
    idx_az = np.repeat(np.arange(n_az), n_el)
    idx_el = np.tile(np.arange(n_el), n_az)
    pos = np.zeros((n_az * n_el, 3))
    pos[:, 1] = idx_az * spacing
    pos[:, 2] = idx_el * spacing
    return pos


def direction_angles(vec):
    """(azimuth, elevation) of a direction vector in its local frame."""
    v = np.asarray(vec, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise GeometryError("coincident geometry: zero direction vector")
    u = v / norm
    return np.array([np.arctan2(u[1], u[0]), np.arccos(np.clip(u[2], -1.0, 1.0))])


def unit_from_angles(az, el):
    return np.array([np.cos(az) * np.sin(el), np.sin(az) * np.sin(el), np.cos(el)])


@dataclass(frozen=True)
class Scenario:
    """Static world description: states, OFDM numerology, arrays, budget.

    ``total_energy_dbm`` is the transmit energy budget; the per-dimension
    energy is ``es = linear(total_energy_dbm) / (n_subcarriers * n_ue)``.
    ``noise_psd_dbm`` is N0; the noise power is ``sigma2 = N0 * W``.
    """

    ue_state: np.ndarray
    ris_state: np.ndarray
    fc: float
    delta_f: float
    n_subcarriers: int
    n_symbols: int
    ue_array: tuple[int, int]
    ris_array: tuple[int, int]
    total_energy_dbm: float
    noise_psd_dbm: float
    ref_th: float = 0.3
    q0: float = DEFAULT_Q0

    def __post_init__(self):
        object.__setattr__(self, "ue_state", np.asarray(self.ue_state, dtype=float))
        object.__setattr__(self, "ris_state", np.asarray(self.ris_state, dtype=float))
        if self.ue_state.shape != (6,) or self.ris_state.shape != (6,):
            raise ValueError("ue_state and ris_state must be 6-vectors")
        if self.n_symbols % 2 != 0:
            raise ValueError("n_symbols must be even (time-orthogonal RIS sequence)")
        if self.fc <= 0 or self.delta_f <= 0 or self.n_subcarriers <= 0:
            raise ValueError("fc, delta_f and n_subcarriers must be positive")

    # -- derived quantities ------------------------------------------------

    @property
    def ue_position(self):
        return self.ue_state[:3]

    @property
    def ris_position(self):
        return self.ris_state[:3]

    @property
    def ue_rotation(self):
        return euler_to_rotation(self.ue_state[3:])

    @property
    def ris_rotation(self):
        return euler_to_rotation(self.ris_state[3:])

    @property
    def ris_normal(self):
        return self.ris_rotation @ np.array([1.0, 0.0, 0.0])

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.fc

    @property
    def bandwidth(self):
        return self.n_subcarriers * self.delta_f

    @property
    def n_ue(self):
        return self.ue_array[0] * self.ue_array[1]

    @property
    def n_ris(self):
        return self.ris_array[0] * self.ris_array[1]

    @property
    def n_half_symbols(self):
        return self.n_symbols // 2

    @property
    def sigma2(self):
        """Noise power sigma^2 = N0 * W."""
        return dbm_to_watt(self.noise_psd_dbm) * self.bandwidth

    @property
    def es(self):
        """Per-dimension transmit energy (see class docstring)."""
        return dbm_to_watt(self.total_energy_dbm) / (self.n_subcarriers * self.n_ue)

    @property
    def ue_positions_local(self):
        return upa_positions(*self.ue_array, self.wavelength / 2.0)

    @property
    def ris_positions_local(self):
        return upa_positions(*self.ris_array, self.wavelength / 4.0)

    def with_overrides(self, **kwargs) -> "Scenario":
        """Copy of the scenario with selected fields replaced."""
        data = {
            "ue_state": self.ue_state,
            "ris_state": self.ris_state,
            "fc": self.fc,
            "delta_f": self.delta_f,
            "n_subcarriers": self.n_subcarriers,
            "n_symbols": self.n_symbols,
            "ue_array": self.ue_array,
            "ris_array": self.ris_array,
            "total_energy_dbm": self.total_energy_dbm,
            "noise_psd_dbm": self.noise_psd_dbm,
            "ref_th": self.ref_th,
            "q0": self.q0,
        }
        data.update(kwargs)
        return Scenario(**data)


@dataclass(frozen=True)
class TargetSet:
    """Scatter-point positions (m) and expected RCS values (m^2)."""

    positions: np.ndarray
    rcs: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        rcs = np.atleast_1d(np.asarray(self.rcs, dtype=float))
        if pos.shape[0] != rcs.shape[0]:
            raise ValueError("positions and rcs must have matching lengths")
        if np.any(rcs <= 0):
            raise ValueError("rcs values must be strictly positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "rcs", rcs)

    def __len__(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class ChannelParams:
    """Per-target channel parameters plus shared UE-RIS quantities.

    ``theta``/``phi`` carry (azimuth, elevation) pairs per target; delays in
    seconds.
    """

    tau: np.ndarray
    theta: np.ndarray
    tau_bar: np.ndarray
    phi: np.ndarray
    tau0: float
    theta0: np.ndarray
    phi0: np.ndarray

    def eta_nonris(self, l):
        return np.array([self.tau[l], self.theta[l, 0], self.theta[l, 1]])

    def eta_ris(self, l):
        return np.array(
            [self.theta[l, 0], self.theta[l, 1], self.tau_bar[l], self.phi[l, 0], self.phi[l, 1]]
        )


@dataclass(frozen=True)
class PathGains:
    """Deterministic path amplitudes, Rayleigh scales, and drawn gains."""

    amp_nonris: np.ndarray
    amp_ris: np.ndarray
    amp_ue_ris: float
    rayleigh_scale_nonris: np.ndarray
    rayleigh_scale_ris: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha0: complex


def channel_params(scenario: Scenario, targets: TargetSet) -> ChannelParams:
    """Geometric channel parameters (delays and local-frame AoAs)."""
    p = scenario.ue_position
    pr = scenario.ris_position
    qu = scenario.ue_rotation
    qr = scenario.ris_rotation
    c = targets.positions

    d_su = np.linalg.norm(c - p, axis=1)
    d_sr = np.linalg.norm(c - pr, axis=1)
    d_ur = np.linalg.norm(p - pr)
    if np.any(d_su == 0) or np.any(d_sr == 0):
        raise GeometryError("coincident geometry: target at UE or RIS position")
    if d_ur == 0:
        raise GeometryError("coincident geometry: UE at RIS position")

    tau = 2.0 * d_su / SPEED_OF_LIGHT
    tau_bar = (d_ur + d_sr + d_su) / SPEED_OF_LIGHT
    tau0 = 2.0 * d_ur / SPEED_OF_LIGHT

    theta = np.stack([direction_angles(qu.T @ (ci - p)) for ci in c])
    phi = np.stack([direction_angles(qr.T @ (ci - pr)) for ci in c])
    theta0 = direction_angles(qu.T @ (pr - p))
    phi0 = direction_angles(qr.T @ (p - pr))
    return ChannelParams(
        tau=tau, theta=theta, tau_bar=tau_bar, phi=phi, tau0=tau0, theta0=theta0, phi0=phi0
    )


def invert_nonris(params, scenario: Scenario):
    """Position from a non-RIS triple (tau, theta_az, theta_el)."""
    tau, az, el = params
    if tau <= 0:
        raise GeometryError("delay must be positive")
    r = SPEED_OF_LIGHT * tau / 2.0
    return scenario.ue_position + r * (scenario.ue_rotation @ unit_from_angles(az, el))


def ris_angles_of_position(position, scenario: Scenario):
    """AoA pair at the RIS for a scatter position."""
    return direction_angles(scenario.ris_rotation.T @ (np.asarray(position) - scenario.ris_position))


def ris_delay_of_position(position, scenario: Scenario):
    """Three-segment UE-SP-RIS-UE delay for a scatter position."""
    p, pr = scenario.ue_position, scenario.ris_position
    pos = np.asarray(position, dtype=float)
    return (
        np.linalg.norm(p - pr) + np.linalg.norm(pr - pos) + np.linalg.norm(pos - p)
    ) / SPEED_OF_LIGHT


def gain_amplitudes(scenario: Scenario, targets: TargetSet):
    """Deterministic amplitudes P_alpha, P_alpha_bar, P_alpha0.

    Cosine pattern factors use absolute values: Table-I geometry places the
    UE behind the RIS plane and a signed cosine raised to 2*q0 is undefined.
    """
    p = scenario.ue_position
    pr = scenario.ris_position
    lam = scenario.wavelength
    es = scenario.es
    q0 = scenario.q0
    c = targets.positions

    d_su = np.linalg.norm(c - p, axis=1)
    d_sr = np.linalg.norm(c - pr, axis=1)
    d_ur = np.linalg.norm(p - pr)
    nr = scenario.ris_normal
    g_ur = abs(float((p - pr) @ nr) / d_ur)
    g_sr = np.abs((c - pr) @ nr) / d_sr

    amp_nonris = np.sqrt(es * lam**2 / ((4 * np.pi) ** 3 * d_su**4))
    amp_ris = np.sqrt(
        es
        * lam**4
        * g_ur ** (2 * q0)
        * g_sr ** (2 * q0)
        / ((4 * np.pi) ** 4 * d_ur**2 * d_sr**2 * d_su**2)
    )
    amp_ue_ris = float(np.sqrt(es * lam**4 * g_ur ** (4 * q0) / ((4 * np.pi) ** 3 * d_ur**4)))
    return amp_nonris, amp_ris, amp_ue_ris


def path_gains(scenario: Scenario, targets: TargetSet, rng_seed) -> PathGains:
    """Draw complex path gains; reproducible under ``rng_seed``.

    alpha_l = P_alpha_l * xi_l with xi_l circularly-symmetric complex
    Gaussian of variance 4*rcs_l/pi, so |alpha_l| is Rayleigh with scale
    sqrt(2/pi) * P_alpha_l * sqrt(rcs_l).
    """
    rng = np.random.default_rng(rng_seed)
    amp_nonris, amp_ris, amp_ue_ris = gain_amplitudes(scenario, targets)
    sigma_rcs = np.sqrt(targets.rcs)
    scale_n = np.sqrt(2.0 / np.pi) * amp_nonris * sigma_rcs
    scale_r = np.sqrt(2.0 / np.pi) * amp_ris * sigma_rcs

    L = len(targets)
    # per-component std of xi: sqrt((4 rcs / pi) / 2)
    comp = np.sqrt(2.0 / np.pi) * sigma_rcs
    xi = rng.normal(0.0, 1.0, (L, 2)) * comp[:, None]
    alpha = amp_nonris * (xi[:, 0] + 1j * xi[:, 1])
    xi_bar = rng.normal(0.0, 1.0, (L, 2)) * comp[:, None]
    alpha_bar = amp_ris * (xi_bar[:, 0] + 1j * xi_bar[:, 1])
    # UE-RIS-UE gain: unit-power complex fading, no RCS factor
    xi0 = rng.normal(0.0, np.sqrt(0.5), 2)
    alpha0 = amp_ue_ris * complex(xi0[0], xi0[1])
    return PathGains(
        amp_nonris=amp_nonris,
        amp_ris=amp_ris,
        amp_ue_ris=amp_ue_ris,
        rayleigh_scale_nonris=scale_n,
        rayleigh_scale_ris=scale_r,
        alpha=alpha,
        alpha_bar=alpha_bar,
        alpha0=alpha0,
    )


def jacobian_position(position, scenario: Scenario):
    """6x3 Jacobian of (tau, theta_az, theta_el, tau_bar, phi_az, phi_el) wrt position."""
    pos = np.asarray(position, dtype=float)
    p = scenario.ue_position
    pr = scenario.ris_position
    qu = scenario.ue_rotation
    qr = scenario.ris_rotation
    c = SPEED_OF_LIGHT

    diff_u = pos - p
    diff_r = pos - pr
    d_u = np.linalg.norm(diff_u)
    d_r = np.linalg.norm(diff_r)
    if d_u == 0 or d_r == 0:
        raise GeometryError("coincident geometry: target at UE or RIS position")

    x_su = qu.T @ (diff_u / d_u)
    x_sr = qr.T @ (diff_r / d_r)
    for u in (x_su, x_sr):
        if 1.0 - abs(u[2]) < 1e-9:
            raise GeometryError("gimbal singularity: elevation at 0 or pi")

    d_tau = 2.0 * diff_u / (c * d_u)
    d_tau_bar = diff_r / (c * d_r) + diff_u / (c * d_u)

    def angle_rows(q, u_local, u_global, dist):
        x, y, z = u_local
        d_az = (x * q[:, 1] - y * q[:, 0]) / ((x**2 + y**2) * dist)
        d_el = -(q[:, 2] - z * u_global) / (dist * np.sqrt(1.0 - z**2))
        return d_az, d_el

    # u_local/u_global are unit directions; the appendix expressions use the
    # unnormalized local vector, which reduces to these after norm division.
    d_theta_az, d_theta_el = angle_rows(qu, x_su, diff_u / d_u, d_u)
    d_phi_az, d_phi_el = angle_rows(qr, x_sr, diff_r / d_r, d_r)
    return np.stack([d_tau, d_theta_az, d_theta_el, d_tau_bar, d_phi_az, d_phi_el])


# -- configuration loading --------------------------------------------------


def load_config(path):
    """Load a Scenario and TargetSet from a JSON config file.

    Targets may be given either as Euclidean ``target_positions`` or as
    non-RIS channel triples ``target_taus_ns``/``target_azimuths``/
    ``target_elevations`` (delays in ns, converted here).
    """
    with open(path) as fh:
        cfg = json.load(fh)
    return scenario_from_dict(cfg), targets_from_dict(cfg), cfg


def scenario_from_dict(cfg) -> Scenario:
    return Scenario(
        ue_state=np.asarray(cfg["ue_state"], dtype=float),
        ris_state=np.asarray(cfg["ris_state"], dtype=float),
        fc=float(cfg["fc"]),
        delta_f=float(cfg["delta_f"]),
        n_subcarriers=int(cfg["n_subcarriers"]),
        n_symbols=int(cfg["n_symbols"]),
        ue_array=tuple(int(v) for v in cfg["ue_array"]),
        ris_array=tuple(int(v) for v in cfg["ris_array"]),
        total_energy_dbm=float(cfg["total_energy_dbm"]),
        noise_psd_dbm=float(cfg["noise_psd_dbm"]),
        ref_th=float(cfg.get("ref_th", 0.3)),
        q0=float(cfg.get("q0", DEFAULT_Q0)),
    )


def targets_from_dict(cfg) -> TargetSet:
    rcs = np.asarray(cfg["target_rcs"], dtype=float)
    if "target_positions" in cfg:
        pos = np.asarray(cfg["target_positions"], dtype=float)
    else:
        taus = np.asarray(cfg["target_taus_ns"], dtype=float) * 1e-9
        azs = np.asarray(cfg["target_azimuths"], dtype=float)
        els = np.asarray(cfg["target_elevations"], dtype=float)
        scenario = scenario_from_dict(cfg)
        pos = np.stack(
            [invert_nonris((t, a, e), scenario) for t, a, e in zip(taus, azs, els)]
        )
    return TargetSet(positions=pos, rcs=rcs)


def table_default_scenario() -> Scenario:
    """Desk-scale default scenario used by the experiment suite."""
    return Scenario(
        ue_state=np.zeros(6),
        ris_state=np.array([3.0, 5.0, 6.0, 0.0, 0.0, 0.0]),
        fc=15e9,
        delta_f=120e3,
        n_subcarriers=75,
        n_symbols=50,
        ue_array=(2, 2),
        ris_array=(35, 35),
        total_energy_dbm=65.0,
        noise_psd_dbm=-166.0,
        ref_th=0.3,
        q0=DEFAULT_Q0,
    )


def spaced_targets(scenario: Scenario, delta, base=(120e-9, 0.7, 0.8), rcs=(50.0, 5.0, 0.5), count=3) -> TargetSet:
    """Cluster of up to three targets spaced by ``delta`` rad in UE AoA.

    eta_1 = base, eta_2 = [tau, az+delta, el-delta], eta_3 = [tau, az-delta, el+delta].
    """
    tau, az, el = base
    etas = [(tau, az, el), (tau, az + delta, el - delta), (tau, az - delta, el + delta)][:count]
    pos = np.stack([invert_nonris(e, scenario) for e in etas])
    return TargetSet(positions=pos, rcs=np.asarray(rcs[:count], dtype=float))
