"""Fisher information, error bounds, and the two-target equivalent FIM.

Parameter ordering is parameter-major and frozen:

- non-RIS, 5L params: [Re a (L), Im a (L), tau (L), theta_az (L), theta_el (L)]
- RIS, 7L params: [Re a (L), Im a (L), theta_az (L), theta_el (L),
  tau_bar (L), phi_az (L), phi_el (L)]

so that tau_l sits at index 2L+l (non-RIS) and tau_bar_l at 4L+l (RIS),
matching the bound index arithmetic. FIMs are reported in SI units; inside
factorizations matrices are Jacobi-equilibrated so the condition-number
guard measures genuine singularity, not unit disparity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Scenario, jacobian_position
from .signal import (
    RisSchedule,
    delay_response,
    ris_response_vector,
    steering_ris,
    steering_ue,
    wavenumber,
)

COND_GUARD = 1e12


def _dk_daz(scenario, angles):
    az, el = angles
    return (
        2.0
        * np.pi
        / scenario.wavelength
        * np.array([-np.sin(az) * np.sin(el), np.cos(az) * np.sin(el), 0.0])
    )


def _dk_del(scenario, angles):
    az, el = angles
    return (
        2.0
        * np.pi
        / scenario.wavelength
        * np.array([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), -np.sin(el)])
    )


def steering_ue_derivative(theta, scenario, which):
    a = steering_ue(theta, scenario)
    dk = _dk_daz(scenario, theta) if which == "az" else _dk_del(scenario, theta)
    return 1j * (scenario.ue_positions_local @ dk) * a


def steering_ris_derivative(phi, scenario, which):
    a = steering_ris(phi, scenario)
    dk = _dk_daz(scenario, phi) if which == "az" else _dk_del(scenario, phi)
    return 1j * (scenario.ris_positions_local @ dk) * a


def atom_derivatives_nonris(eta_n, precoder, scenario: Scenario):
    """Atom and its derivatives wrt (tau, theta_az, theta_el).

    The angle derivatives carry both product-rule terms: the receive
    steering vector and the precoder inner product vary with theta.
    """
    tau, az, el = eta_n
    theta = (az, el)
    a = steering_ue(theta, scenario)
    da_az = steering_ue_derivative(theta, scenario, "az")
    da_el = steering_ue_derivative(theta, scenario, "el")
    d = delay_response(tau, scenario)
    n_idx = np.arange(scenario.n_subcarriers)
    nd = n_idx * d
    ones = np.ones(scenario.n_half_symbols)
    pf = a @ precoder
    pf_az = da_az @ precoder
    pf_el = da_el @ precoder

    g = pf * np.kron(ones, np.kron(d, a))
    g_tau = -1j * 2.0 * np.pi * scenario.delta_f * pf * np.kron(ones, np.kron(nd, a))
    g_az = np.kron(ones, np.kron(d, pf * da_az + pf_az * a))
    g_el = np.kron(ones, np.kron(d, pf * da_el + pf_el * a))
    return {"g": g, "tau": g_tau, "theta_az": g_az, "theta_el": g_el}


def atom_derivatives_ris(eta_r, precoder, schedule: RisSchedule, scenario: Scenario, phi0, theta0):
    """Atom and its derivatives wrt (theta_az, theta_el, tau_bar, phi_az, phi_el).

    Only the precoder inner product varies with theta; nu and d are
    theta-independent, and a_u(theta_0) is fixed.
    """
    th_az, th_el, tau_bar, ph_az, ph_el = eta_r
    theta = (th_az, th_el)
    phi = (ph_az, ph_el)
    a_th = steering_ue(theta, scenario)
    a0 = steering_ue(theta0, scenario)
    pf = a_th @ precoder
    pf_az = steering_ue_derivative(theta, scenario, "az") @ precoder
    pf_el = steering_ue_derivative(theta, scenario, "el") @ precoder

    d = delay_response(tau_bar, scenario)
    nd = np.arange(scenario.n_subcarriers) * d
    nu = ris_response_vector(phi, phi0, schedule, scenario)
    a_r0 = steering_ris(phi0, scenario)
    dnu_az = schedule.profiles @ (steering_ris_derivative(phi, scenario, "az") * a_r0)
    dnu_el = schedule.profiles @ (steering_ris_derivative(phi, scenario, "el") * a_r0)

    base = np.kron(d, a0)
    g = pf * np.kron(nu, base)
    g_thaz = pf_az * np.kron(nu, base)
    g_thel = pf_el * np.kron(nu, base)
    g_tau = -1j * 2.0 * np.pi * scenario.delta_f * pf * np.kron(nu, np.kron(nd, a0))
    g_phaz = pf * np.kron(dnu_az, base)
    g_phel = pf * np.kron(dnu_el, base)
    return {
        "g": g,
        "theta_az": g_thaz,
        "theta_el": g_thel,
        "tau_bar": g_tau,
        "phi_az": g_phaz,
        "phi_el": g_phel,
    }


_NONRIS_KEYS = ("tau", "theta_az", "theta_el")
_RIS_KEYS = ("theta_az", "theta_el", "tau_bar", "phi_az", "phi_el")


class FimBuilder:
    """Precomputed Gram factor; FIM evaluation per gain draw is O(L^2).

    Columns of the derivative matrix are base vectors times gain-dependent
    scalars, so Re{D^H D} follows from one base Gram matrix.
    """

    def __init__(self, deriv_dicts, keys, sigma2):
        self.keys = keys
        self.sigma2 = sigma2
        self.L = len(deriv_dicts)
        cols = [dd["g"] for dd in deriv_dicts]
        for key in keys:
            cols.extend(dd[key] for dd in deriv_dicts)
        base = np.stack(cols, axis=1)
        self.gram = base.conj().T @ base

    def fim(self, gains):
        L, keys = self.L, self.keys
        gains = np.asarray(gains, dtype=complex)
        n_groups = 2 + len(keys)
        base_idx = np.concatenate(
            [np.arange(L), np.arange(L)]
            + [np.arange((1 + k) * L, (2 + k) * L) for k in range(len(keys))]
        )
        scales = np.concatenate(
            [np.ones(L), 1j * np.ones(L)] + [gains] * len(keys)
        )
        sub = self.gram[np.ix_(base_idx, base_idx)]
        fim = (4.0 / self.sigma2) * np.real(np.conj(scales)[:, None] * scales[None, :] * sub)
        return fim


def fim_nonris(deriv_dicts, gains, sigma2):
    """Conditional FIM of the non-RIS signal, (5L x 5L)."""
    return FimBuilder(deriv_dicts, _NONRIS_KEYS, sigma2).fim(gains)


def fim_ris(deriv_dicts, gains, sigma2):
    """Conditional FIM of the RIS signal, (7L x 7L)."""
    return FimBuilder(deriv_dicts, _RIS_KEYS, sigma2).fim(gains)


def _guarded_inverse(mat):
    """Jacobi-equilibrated PSD inverse with a condition guard.

    FIM entries mix parameter units spanning many orders (gains, seconds,
    radians); equilibrating by the diagonal makes the condition number
    measure genuine information degeneracy. Non-PSD or too-ill-conditioned
    inputs flag as singular. Returns (inv, singular_flag).
    """
    if not np.all(np.isfinite(mat)):
        return np.full_like(mat, np.inf), True
    diag = np.diag(mat).copy()
    if np.any(diag <= 0):
        return np.full_like(mat, np.inf), True
    s = 1.0 / np.sqrt(diag)
    scaled = s[:, None] * mat * s[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (scaled + scaled.T))
    if vals[0] <= 0 or vals[-1] / vals[0] > COND_GUARD:
        return np.full_like(mat, np.inf), True
    inv_scaled = (vecs / vals) @ vecs.T
    return s[:, None] * inv_scaled * s[None, :], False


@dataclass
class FisherReport:
    fim_nonris: np.ndarray
    fim_ris: np.ndarray
    deb_n: np.ndarray
    deb_r: np.ndarray
    aeb_n: np.ndarray
    aeb_r: np.ndarray
    peb_n: np.ndarray
    peb_r: np.ndarray
    peb_joint: np.ndarray
    fim_euc_n: np.ndarray
    fim_euc_r: np.ndarray
    fim_euc_joint: np.ndarray


def efim_geometric(fim, L, kind):
    """EFIM of the geometric parameters (3L x 3L), parameter-major.

    non-RIS: marginalize the 2L gain params, keep (tau, theta). RIS:
    marginalize 4L params (gains and the nuisance theta angles), keep
    (tau_bar, phi_az, phi_el). The nuisance block is marginalized through a
    pseudo-inverse Schur complement: the RIS-signal theta angles can be
    exactly unidentifiable (their atom derivatives are collinear with the
    gain derivatives), which makes the block singular without carrying any
    information about the kept parameters.
    """
    cut = 2 * L if kind == "nonris" else 4 * L
    a = fim[cut:, cut:]
    b = fim[cut:, :cut]
    c = fim[:cut, :cut]
    if not np.all(np.isfinite(c)) or np.any(np.diag(c) <= 0):
        return np.full_like(a, np.inf), True
    s = 1.0 / np.sqrt(np.diag(c))
    c_eq = s[:, None] * c * s[None, :]
    vals, vecs = np.linalg.eigh(c_eq)
    keep = vals > 1e-12 * vals.max()
    c_pinv = s[:, None] * (vecs[:, keep] / vals[keep] @ vecs[:, keep].T) * s[None, :]
    loss = b @ c_pinv @ b.conj().T
    return a - 0.5 * (loss + loss.T), False


def _rearrange_target_major(mat, L, dim):
    """Reorder a parameter-major (dim*L) matrix into per-target blocks."""
    idx = np.concatenate([[j * L + l for j in range(dim)] for l in range(L)])
    return mat[np.ix_(idx, idx)]


OVERLAP_TOL = 1e-3


def _truncated_inverse(mat, overlap_tol=OVERLAP_TOL):
    """Equilibrated eigen-inverse with truncation and per-entry inf masks.

    Eigendirections below 1/COND_GUARD of the largest carry no recoverable
    information in double precision: they are dropped, and entries whose
    basis vectors overlap the dropped subspace are masked (their bound is
    effectively infinite). Entries clear of the dropped subspace are
    accurate; validated against extended-precision inversion.
    """
    n = mat.shape[0]
    if not np.all(np.isfinite(mat)) or np.any(np.diag(mat) <= 0):
        return np.full_like(mat, np.inf), np.ones(n, dtype=bool)
    s = 1.0 / np.sqrt(np.diag(mat))
    scaled = s[:, None] * mat * s[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (scaled + scaled.T))
    keep = vals > vals[-1] / COND_GUARD
    if not keep.any():
        return np.full_like(mat, np.inf), np.ones(n, dtype=bool)
    inv = s[:, None] * ((vecs[:, keep] / vals[keep]) @ vecs[:, keep].T) * s[None, :]
    mask = np.sum(vecs[:, ~keep] ** 2, axis=1) > overlap_tol
    return inv, mask


def _info_from_cov(cov):
    """Pseudo-information matrix of a truncated covariance (zeros stay zero)."""
    d = np.sqrt(np.abs(np.diag(cov)))
    d[d == 0] = 1.0
    scaled = cov / d[:, None] / d[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (scaled + scaled.T))
    keep = vals > 1e-12 * max(vals.max(), 1e-300)
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return inv / d[:, None] / d[None, :]


def _block_diag_jacobian(jacs):
    L = len(jacs)
    t = np.zeros((3 * L, 3 * L))
    for l, jac in enumerate(jacs):
        t[3 * l : 3 * l + 3, 3 * l : 3 * l + 3] = jac
    return t


def bounds(fim_n, fim_r, positions, scenario: Scenario) -> FisherReport:
    """DEB/AEB/PEB per target and signal, plus the joint Euclidean FIM.

    DEB/AEB follow the inverse-FIM index arithmetic directly (tau at 2L+l
    non-RIS, tau_bar at 4L+l RIS, angles after). Position bounds go through
    the covariance domain: C_pos = T^{-1} [F^{-1}]_geo T^{-T}, which avoids
    the catastrophic cancellation an explicit nuisance Schur complement
    suffers at desk-scale coherence. Parameters entangled with numerically
    unidentifiable directions are reported as +inf.
    """
    L = fim_n.shape[0] // 5
    crlb_n, mask_n = _truncated_inverse(fim_n)
    crlb_r, mask_r = _truncated_inverse(fim_r)
    idx = np.arange(L)

    def entry(crlb, mask, i):
        return np.where(mask[i], np.inf, crlb[i, i])

    deb_n = np.sqrt(entry(crlb_n, mask_n, 2 * L + idx))
    aeb_n = np.sqrt(
        entry(crlb_n, mask_n, 3 * L + idx) + entry(crlb_n, mask_n, 4 * L + idx)
    )
    deb_r = np.sqrt(entry(crlb_r, mask_r, 4 * L + idx))
    aeb_r = np.sqrt(
        entry(crlb_r, mask_r, 5 * L + idx) + entry(crlb_r, mask_r, 6 * L + idx)
    )

    jacs = [jacobian_position(pos, scenario) for pos in positions]

    def position_cov(crlb, mask, cut, jac_rows):
        geo = _rearrange_target_major(crlb[cut:, cut:], L, 3)
        geo_mask = np.concatenate(
            [[mask[cut + j * L + l] for j in range(3)] for l in range(L)]
        )
        t = _block_diag_jacobian(jac_rows)
        t_inv = np.linalg.inv(t)
        cov = t_inv @ geo @ t_inv.T
        # a position coordinate mixing any masked parameter is unidentifiable
        pos_mask = np.repeat(
            [geo_mask[3 * l : 3 * l + 3].any() for l in range(L)], 3
        )
        return cov, pos_mask

    cov_n, pmask_n = position_cov(crlb_n, mask_n, 2 * L, [j[:3] for j in jacs])
    cov_r, pmask_r = position_cov(crlb_r, mask_r, 4 * L, [j[3:] for j in jacs])

    def peb(cov, pmask):
        out = np.empty(L)
        for l in range(L):
            if pmask[3 * l : 3 * l + 3].any():
                out[l] = np.inf
            else:
                out[l] = np.sqrt(max(np.trace(cov[3 * l : 3 * l + 3, 3 * l : 3 * l + 3]), 0.0))
        return out

    fim_euc_n = _info_from_cov(np.where(np.isfinite(cov_n), cov_n, 0.0)) if np.all(
        np.isfinite(cov_n)
    ) else _info_from_cov(np.nan_to_num(cov_n, posinf=0.0, neginf=0.0))
    fim_euc_r = _info_from_cov(np.where(np.isfinite(cov_r), cov_r, 0.0)) if np.all(
        np.isfinite(cov_r)
    ) else _info_from_cov(np.nan_to_num(cov_r, posinf=0.0, neginf=0.0))
    fim_euc_joint = fim_euc_n + fim_euc_r
    cov_joint, mask_joint = _truncated_inverse(fim_euc_joint)
    if np.all(np.isinf(cov_joint)):
        peb_joint = np.full(L, np.inf)
    else:
        peb_joint = np.empty(L)
        for l in range(L):
            if mask_joint[3 * l : 3 * l + 3].any():
                peb_joint[l] = np.inf
            else:
                peb_joint[l] = np.sqrt(
                    max(np.trace(cov_joint[3 * l : 3 * l + 3, 3 * l : 3 * l + 3]), 0.0)
                )

    return FisherReport(
        fim_nonris=fim_n,
        fim_ris=fim_r,
        deb_n=deb_n,
        deb_r=deb_r,
        aeb_n=aeb_n,
        aeb_r=aeb_r,
        peb_n=peb(cov_n, pmask_n),
        peb_r=peb(cov_r, pmask_r),
        peb_joint=peb_joint,
        fim_euc_n=fim_euc_n,
        fim_euc_r=fim_euc_r,
        fim_euc_joint=fim_euc_joint,
    )


# -- two-target equivalent-FIM case study -------------------------------------


def equivalent_fim_schur(g, dg, gains, sigma2):
    """Schur complement of the 6x6 case-study FIM onto the first azimuth.

    Unknowns: Re a1, Re a2, Im a1, Im a2, az_1, az_2 (all other channel
    parameters held known). ``g`` and ``dg`` are (n, 2) columns of atoms and
    their azimuth derivatives.
    """
    a1, a2 = gains
    cols = [g[:, 0], g[:, 1], 1j * g[:, 0], 1j * g[:, 1], a1 * dg[:, 0], a2 * dg[:, 1]]
    d = np.stack(cols, axis=1)
    fim = (4.0 / sigma2) * np.real(d.conj().T @ d)
    keep = 4  # az_1 entry
    rest = [0, 1, 2, 3, 5]
    f_kk = fim[keep, keep]
    f_kr = fim[keep, rest]
    f_rr = fim[np.ix_(rest, rest)]
    return float(f_kk - f_kr @ np.linalg.solve(f_rr, f_kr))


def equivalent_fim_case_study(g, dg, gains, sigma2):
    """Closed-form equivalent Fisher information for the first azimuth.

    IL_alpha is exactly the generalized coherence C~(g1, g2, dg1), and the
    cross term uses x_i = g1 <dg_i, g2> - g2 <dg_i, g1> (the coherence-
    definition coefficient convention; the other conjugation does not equal
    the Schur complement). Returns 0 when the two azimuths coincide.
    """
    from .detection import generalized_coherence

    g1, g2 = g[:, 0], g[:, 1]
    dg1, dg2 = dg[:, 0], dg[:, 1]
    a1, a2 = gains
    n1 = np.linalg.norm(g1) ** 2
    n2 = np.linalg.norm(g2) ** 2
    c12 = abs(np.vdot(g1, g2)) ** 2 / (n1 * n2)
    if np.allclose(g1, g2) and np.allclose(dg1, dg2):
        return 0.0
    den = n1 * n2 * (1.0 - c12)

    il_alpha = generalized_coherence(g1, g2, dg1)
    ctilde_dg2 = generalized_coherence(g1, g2, dg2)

    x1 = g1 * np.vdot(dg1, g2) - g2 * np.vdot(dg1, g1)
    x2 = g1 * np.vdot(dg2, g2) - g2 * np.vdot(dg2, g1)
    inner = np.vdot(dg1, dg2) - np.vdot(x2, x1) / den
    il_theta2 = (np.real(np.conj(a1) * a2 * inner)) ** 2 / (
        abs(a2) ** 2 * np.linalg.norm(dg2) ** 2 * (1.0 - ctilde_dg2)
    )
    return float(
        (4.0 / sigma2)
        * (abs(a1) ** 2 * np.linalg.norm(dg1) ** 2 * (1.0 - il_alpha) - il_theta2)
    )
