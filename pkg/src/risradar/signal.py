"""Precoder and RIS-schedule design, resolution region, and signal synthesis.

Vector stacking is symbol-major, then subcarrier, then antenna, matching the
Kronecker structure nu ⊗ d ⊗ a of the stacked atoms. This ordering is the
wire format for every stacked vector in the package.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    GeometryError,
    Scenario,
    invert_nonris,
    ris_angles_of_position,
    ris_delay_of_position,
    unit_from_angles,
)


class SignalError(ValueError):
    pass


def wavenumber(scenario: Scenario, angles):
    az, el = angles
    return 2.0 * np.pi / scenario.wavelength * unit_from_angles(az, el)


def steering_ue(theta, scenario: Scenario):
    """UE array response a_u(theta) = exp(j P_u^T k(theta)); ||a_u||^2 = N_u."""
    return np.exp(1j * scenario.ue_positions_local @ wavenumber(scenario, theta))


def steering_ris(phi, scenario: Scenario):
    """RIS array response a_r(phi)."""
    return np.exp(1j * scenario.ris_positions_local @ wavenumber(scenario, phi))


def delay_response(tau, scenario: Scenario):
    """d(tau) with d_n(tau) = exp(-j 2 pi n tau delta_f), n = 0..N-1."""
    n = np.arange(scenario.n_subcarriers)
    return np.exp(-1j * 2.0 * np.pi * n * tau * scenario.delta_f)


def precoder_gain(theta, precoder, scenario: Scenario):
    """<a_u^*(theta), f> = a_u(theta)^T f."""
    return steering_ue(theta, scenario) @ precoder


@dataclass(frozen=True)
class ResolutionRegion:
    """Delay-angle box in the UE frame plus its image in the RIS parameters."""

    delay_interval: tuple[float, float]
    az_interval: tuple[float, float]
    el_interval: tuple[float, float]
    ris_az_interval: tuple[float, float]
    ris_el_interval: tuple[float, float]
    ris_delay_interval: tuple[float, float]

    def angular_center(self):
        return np.array(
            [
                0.5 * (self.az_interval[0] + self.az_interval[1]),
                0.5 * (self.el_interval[0] + self.el_interval[1]),
            ]
        )

    def center_position(self, scenario: Scenario):
        tau_c = 0.5 * (self.delay_interval[0] + self.delay_interval[1])
        az_c, el_c = self.angular_center()
        return invert_nonris((tau_c, az_c, el_c), scenario)

    def contains_nonris(self, eta):
        tau, az, el = eta
        return (
            self.delay_interval[0] <= tau <= self.delay_interval[1]
            and self.az_interval[0] <= az <= self.az_interval[1]
            and self.el_interval[0] <= el <= self.el_interval[1]
        )


def region_from_intervals(scenario: Scenario, delay_interval, az_interval, el_interval, lattice=7):
    """Build a ResolutionRegion, deriving the RIS-side intervals.

    The RIS angle and delay bounds are the min/max over a lattice of box
    sample points mapped through position space.
    """
    taus = np.linspace(*delay_interval, lattice)
    azs = np.linspace(*az_interval, lattice)
    els = np.linspace(*el_interval, lattice)
    phis = []
    tau_bars = []
    for t in taus:
        for a in azs:
            for e in els:
                pos = invert_nonris((t, a, e), scenario)
                phis.append(ris_angles_of_position(pos, scenario))
                tau_bars.append(ris_delay_of_position(pos, scenario))
    phis = np.asarray(phis)
    tau_bars = np.asarray(tau_bars)
    return ResolutionRegion(
        delay_interval=tuple(delay_interval),
        az_interval=tuple(az_interval),
        el_interval=tuple(el_interval),
        ris_az_interval=(float(phis[:, 0].min()), float(phis[:, 0].max())),
        ris_el_interval=(float(phis[:, 1].min()), float(phis[:, 1].max())),
        ris_delay_interval=(float(tau_bars.min()), float(tau_bars.max())),
    )


def build_resolution_region(scenario: Scenario, nonris_detection, ambiguity_grid=None):
    """Bounding box of the non-RIS matched-filter ambiguity around a peak.

    Evaluates |<g(eta), g(eta_hat)>| / ||g(eta_hat)||^2 of the structural
    atom (unit precoder factor) on a local grid and keeps points with a
    normalized response >= scenario.ref_th. ``ambiguity_grid`` overrides the
    default grid as (delay_points, az_points, el_points) arrays.
    """
    tau_hat, az_hat, el_hat = nonris_detection
    if ambiguity_grid is None:
        delay_bin = 1.0 / scenario.bandwidth
        angle_bin = 2.0 / scenario.ue_array[0]
        taus = tau_hat + np.linspace(-3, 3, 19) * delay_bin / 3.0
        azs = az_hat + np.linspace(-3, 3, 19) * angle_bin / 3.0
        els = el_hat + np.linspace(-3, 3, 19) * angle_bin / 3.0
        taus = taus[taus > 0]
    else:
        taus, azs, els = (np.asarray(g, dtype=float) for g in ambiguity_grid)

    d_hat = delay_response(tau_hat, scenario)
    a_hat = steering_ue((az_hat, el_hat), scenario)
    n_tot = scenario.n_subcarriers * scenario.n_ue

    d_all = np.stack([delay_response(t, scenario) for t in taus])
    a_all = np.stack([steering_ue((a, e), scenario) for a in azs for e in els])
    corr_d = np.abs(d_all.conj() @ d_hat)
    corr_a = np.abs(a_all.conj() @ a_hat).reshape(len(azs), len(els))
    amb = corr_d[:, None, None] * corr_a[None, :, :] / n_tot

    mask = amb >= scenario.ref_th
    if not mask.any():
        raise SignalError("empty super-threshold set in ambiguity region")
    it, ia, ie = np.nonzero(mask)
    return region_from_intervals(
        scenario,
        (float(taus[it].min()), float(taus[it].max())),
        (float(azs[ia].min()), float(azs[ia].max())),
        (float(els[ie].min()), float(els[ie].max())),
    )


def build_precoder(scenario: Scenario, region: ResolutionRegion):
    """Unit-norm conjugate beam at the region center with an exact RIS null.

    f = normalize(conj((I - a0 a0^H / N_u) a_c)) so that a_u(theta0)^T f = 0.
    """
    from .geometry import channel_params, TargetSet  # local import to avoid cycle

    center = region.center_position(scenario)
    params = channel_params(scenario, TargetSet(positions=center[None, :], rcs=np.array([1.0])))
    theta0 = params.theta0
    theta_c = params.theta[0]

    a0 = steering_ue(theta0, scenario)
    ac = steering_ue(theta_c, scenario)
    if abs(ac.conj() @ a0) ** 2 / scenario.n_ue**2 > 1.0 - 1e-12:
        raise SignalError("precoder null conflict: region center equals RIS direction")
    fv = np.conj(ac - (a0.conj() @ ac) / scenario.n_ue * a0)
    return fv / np.linalg.norm(fv)


@dataclass(frozen=True)
class RisSchedule:
    """Half-rate RIS profiles; the full schedule alternates +w, -w."""

    profiles: np.ndarray  # (T_half, N_r) unit-modulus
    central_angles: np.ndarray  # (T_half, 2)
    d_az: int
    d_el: int
    mode: str

    @property
    def n_half_symbols(self):
        return self.profiles.shape[0]


def _focused_halfpower_width(scenario: Scenario):
    """Approximate -3 dB width (rad) of a focused RIS beam near the region."""
    n_az = scenario.ris_array[0]
    # lambda/4 spacing: aperture (n-1)*lambda/4, classic 0.886 lambda/D mainlobe
    aperture = (n_az - 1) * scenario.wavelength / 4.0
    return 0.886 * scenario.wavelength / aperture


def build_schedule(scenario: Scenario, region: ResolutionRegion, d_az, d_el, mode="auto"):
    """RIS sweep profiles over the region's RIS-angle box.

    Central angles tile the box at cell centers, azimuth index fastest.
    ``focused`` profiles are conjugate-matched pencil beams at the centers;
    ``uniform`` profiles phase element (i, j) for the angle linearly
    interpolated across the cell, spreading the beam over the whole cell.
    ``auto`` picks focused when the pencil (-3 dB) width covers a cell.
    """
    t_half = scenario.n_half_symbols
    if d_az * d_el != t_half:
        raise SignalError(f"d_az*d_el = {d_az * d_el} != T/2 = {t_half}")

    az_lo, az_hi = region.ris_az_interval
    el_lo, el_hi = region.ris_el_interval
    zeta_az = (az_hi - az_lo) / d_az
    zeta_el = (el_hi - el_lo) / d_el

    if mode == "auto":
        width = _focused_halfpower_width(scenario)
        mode = "focused" if width >= max(zeta_az, zeta_el) else "uniform"

    pos = scenario.ris_positions_local
    n_r = scenario.n_ris
    # element grid indices, elevation fastest (matches upa_positions)
    n_az_arr, n_el_arr = scenario.ris_array
    idx_az = np.repeat(np.arange(n_az_arr), n_el_arr)
    idx_el = np.tile(np.arange(n_el_arr), n_az_arr)

    from .geometry import channel_params, TargetSet

    center = region.center_position(scenario)
    params = channel_params(scenario, TargetSet(positions=center[None, :], rcs=np.array([1.0])))
    a_phi0 = steering_ris(params.phi0, scenario)

    profiles = np.zeros((t_half, n_r), dtype=complex)
    centers = np.zeros((t_half, 2))
    for t in range(t_half):
        ia, ie = t % d_az, t // d_az
        centers[t] = (az_lo + (ia + 0.5) * zeta_az, el_lo + (ie + 0.5) * zeta_el)
        if mode == "focused":
            a_dir = steering_ris(centers[t], scenario)
        elif mode == "uniform":
            az_elem = az_lo + ia * zeta_az + zeta_az * idx_az / max(n_az_arr - 1, 1)
            el_elem = el_lo + ie * zeta_el + zeta_el * idx_el / max(n_el_arr - 1, 1)
            k_elem = (
                2.0
                * np.pi
                / scenario.wavelength
                * np.stack(
                    [
                        np.cos(az_elem) * np.sin(el_elem),
                        np.sin(az_elem) * np.sin(el_elem),
                        np.cos(el_elem),
                    ]
                )
            )
            a_dir = np.exp(1j * np.einsum("mi,im->m", pos, k_elem))
        else:
            raise SignalError(f"unknown schedule mode {mode!r}")
        profiles[t] = np.conj(a_dir * a_phi0)
    return RisSchedule(profiles=profiles, central_angles=centers, d_az=d_az, d_el=d_el, mode=mode)


def ris_response_vector(phi, phi0, schedule: RisSchedule, scenario: Scenario):
    """nu(phi) with entry t = w_t^T (a_r(phi) ⊙ a_r(phi0))."""
    prod = steering_ris(phi, scenario) * steering_ris(phi0, scenario)
    return schedule.profiles @ prod


def atom_nonris(eta_n, precoder, scenario: Scenario):
    """g^n(eta) = <a_u^*(theta), f> 1 ⊗ d(tau) ⊗ a_u(theta)."""
    tau, az, el = eta_n
    a = steering_ue((az, el), scenario)
    pf = a @ precoder
    ones = np.ones(scenario.n_half_symbols)
    return pf * np.kron(ones, np.kron(delay_response(tau, scenario), a))


def atom_ris(eta_r, precoder, schedule: RisSchedule, scenario: Scenario, phi0=None, theta0=None):
    """g^r(eta) = <a_u^*(theta), f> nu(phi) ⊗ d(tau_bar) ⊗ a_u(theta0).

    ``eta_r`` is (theta_az, theta_el, tau_bar, phi_az, phi_el). phi0/theta0
    default to the scenario's UE-RIS geometry.
    """
    th_az, th_el, tau_bar, ph_az, ph_el = eta_r
    if phi0 is None or theta0 is None:
        from .geometry import direction_angles

        qu, qr = scenario.ue_rotation, scenario.ris_rotation
        p, pr = scenario.ue_position, scenario.ris_position
        theta0 = direction_angles(qu.T @ (pr - p)) if theta0 is None else theta0
        phi0 = direction_angles(qr.T @ (p - pr)) if phi0 is None else phi0
    pf = steering_ue((th_az, th_el), scenario) @ precoder
    nu = ris_response_vector((ph_az, ph_el), phi0, schedule, scenario)
    return pf * np.kron(nu, np.kron(delay_response(tau_bar, scenario), steering_ue(theta0, scenario)))


@dataclass(frozen=True)
class SignalBlock:
    """Separated observation vectors, stacked symbol-major."""

    y_nonris: np.ndarray
    y_ris: np.ndarray
    noise_var: float  # per separated stream, sigma^2 / 2

    @property
    def n_samples(self):
        return self.y_nonris.size


def synthesize(scenario: Scenario, targets, gains, precoder, schedule: RisSchedule, rng_seed, noiseless=False, return_full=False):
    """Simulate y^sys over T symbols with alternating ±w profiles and separate.

    The per-symbol model includes the UE-SP-UE paths, the UE-SP-RIS-UE paths,
    and the interference terms removed by the precoder null (UE-RIS-UE and
    UE-RIS-SP-UE). Separation: y^n = (y_{2t-1}+y_{2t})/2, y^r = (y_{2t-1}-y_{2t})/2.
    With ``return_full`` the raw (T, N, N_u) tensor is returned alongside.
    """
    from .geometry import channel_params

    t_half = schedule.n_half_symbols
    if t_half != scenario.n_half_symbols:
        raise SignalError("schedule symbol count does not match scenario")
    n, n_u = scenario.n_subcarriers, scenario.n_ue
    L = len(targets)

    rng = np.random.default_rng(rng_seed)
    y_half_sum = np.zeros((t_half, n, n_u), dtype=complex)
    y_half_diff = np.zeros((t_half, n, n_u), dtype=complex)

    if L > 0:
        params = channel_params(scenario, targets)
        a0 = steering_ue(params.theta0, scenario)
        pf0 = a0 @ precoder
        d_mat = np.stack([delay_response(params.tau[l], scenario) for l in range(L)])
        d_bar = np.stack([delay_response(params.tau_bar[l], scenario) for l in range(L)])
        a_l = np.stack([steering_ue(params.theta[l], scenario) for l in range(L)])
        pf_l = a_l @ precoder
        nu_l = np.stack(
            [ris_response_vector(params.phi[l], params.phi0, schedule, scenario) for l in range(L)]
        )
        nu_00 = ris_response_vector(params.phi0, params.phi0, schedule, scenario)
        d0 = delay_response(params.tau0, scenario)

        # UE-SP-UE: alpha_l d_n(tau_l) a(theta_l) <a*(theta_l), f>
        y_nonris_clean = np.einsum("l,ln,lk->nk", gains.alpha * pf_l, d_mat, a_l)
        y_half_sum += y_nonris_clean[None, :, :]
        # UE-SP-RIS-UE: abar_l nu_t(phi_l) d_n(taubar_l) a(theta_0) <a*(theta_l), f>
        y_half_diff += np.einsum("l,lt,ln,k->tnk", gains.alpha_bar * pf_l, nu_l, d_bar, a0)
        # UE-RIS-SP-UE: abar_l nu_t(phi_l) d_n(taubar_l) a(theta_l) <a*(theta_0), f>
        y_half_diff += np.einsum("l,lt,ln,lk->tnk", gains.alpha_bar * pf0, nu_l, d_bar, a_l)
        # UE-RIS-UE: alpha0 nu_t(phi_0,phi_0) d_n(tau_0) a(theta_0) <a*(theta_0), f>
        y_half_diff += gains.alpha0 * pf0 * np.einsum("t,n,k->tnk", nu_00, d0, a0)

    # full-rate signal with alternating profiles, then exact separation
    y_sys = np.zeros((2 * t_half, n, n_u), dtype=complex)
    y_sys[0::2] = y_half_sum + y_half_diff
    y_sys[1::2] = y_half_sum - y_half_diff
    if noiseless:
        # separation is exact: the clean components are the streams
        y_n = y_half_sum
        y_r = y_half_diff
    else:
        sigma = np.sqrt(scenario.sigma2 / 2.0)
        noise = rng.normal(0.0, sigma, y_sys.shape) + 1j * rng.normal(0.0, sigma, y_sys.shape)
        y_sys = y_sys + noise
        y_n = 0.5 * (y_sys[0::2] + y_sys[1::2])
        y_r = 0.5 * (y_sys[0::2] - y_sys[1::2])
    block = SignalBlock(
        y_nonris=y_n.reshape(-1), y_ris=y_r.reshape(-1), noise_var=scenario.sigma2 / 2.0
    )
    if return_full:
        return block, y_sys
    return block


# -- exports -----------------------------------------------------------------


def dump_signal_block(block: SignalBlock, path):
    """Binary dump: header (magic, T_half*N*N_u) + interleaved re/im, little-endian."""
    n = block.n_samples
    with open(path, "wb") as fh:
        fh.write(b"RISSIG01")
        fh.write(struct.pack("<qd", n, block.noise_var))
        for vec in (block.y_nonris, block.y_ris):
            inter = np.empty(2 * n)
            inter[0::2] = vec.real
            inter[1::2] = vec.imag
            fh.write(inter.astype("<f8").tobytes())


def load_signal_block(path) -> SignalBlock:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != b"RISSIG01":
            raise SignalError("bad signal dump header")
        n, noise_var = struct.unpack("<qd", fh.read(16))
        vecs = []
        for _ in range(2):
            inter = np.frombuffer(fh.read(16 * n), dtype="<f8")
            vecs.append(inter[0::2] + 1j * inter[1::2])
    return SignalBlock(y_nonris=vecs[0], y_ris=vecs[1], noise_var=noise_var)


def signal_block_to_csv(block: SignalBlock, path):
    with open(path, "w") as fh:
        fh.write("index,stream,re,im\n")
        for name, vec in (("nonris", block.y_nonris), ("ris", block.y_ris)):
            for i, v in enumerate(vec):
                fh.write(f"{i},{name},{v.real!r},{v.imag!r}\n")


def schedule_to_csv(schedule: RisSchedule, path):
    with open(path, "w") as fh:
        fh.write("profile,element,phase\n")
        for t in range(schedule.n_half_symbols):
            for m, w in enumerate(schedule.profiles[t]):
                fh.write(f"{t},{m},{np.angle(w)!r}\n")
