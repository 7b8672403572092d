"""Detection-probability bounds for greedy multi-target detection.

Everything here is estimator-independent: given signal atoms g_1..g_L (in
any common stacking), complex gains or Rayleigh scales, and the noise power
sigma^2 (per full-rate sample; each separated stream has sigma^2/2), these
routines evaluate the conditional and expected detection probabilities of
the l-th strongest target under optimal greedy processing, their ROC areas,
and the coherence quantities that control them.
"""

from __future__ import annotations

import numpy as np


class DetectionError(ValueError):
    pass


def marcum_q1(a, b):
    """First-order Marcum Q function Q_1(a, b) to ~1e-12 absolute accuracy.

    Series over the Poisson mixture of central chi-square tails:
    Q_1(a,b) = sum_k Pois(k; a^2/2) * P(Pois(b^2/2) <= k).
    """
    if a < 0 or b < 0:
        raise DetectionError("Marcum Q arguments must be nonnegative")
    if b == 0.0:
        return 1.0
    if a == 0.0:
        return float(np.exp(-(b**2) / 2.0))
    # far-tail guard: Q1(a,b) <= exp(-(b-a)^2/2) for b > a
    if b > a and (b - a) ** 2 / 2.0 > 745.0:
        return 0.0
    u = a * a / 2.0
    v = b * b / 2.0
    # running Poisson(u) pmf and Poisson(v) cdf
    log_pois_u = -u
    pois_u = np.exp(log_pois_u)
    pois_v_term = np.exp(-v)
    pois_v_cdf = pois_v_term
    total = pois_u * pois_v_cdf
    mass_used = pois_u
    k = 0
    while mass_used < 1.0 - 1e-15 and k < 100000:
        k += 1
        pois_u *= u / k
        pois_v_term *= v / k
        pois_v_cdf += pois_v_term
        total += pois_u * min(pois_v_cdf, 1.0)
        mass_used += pois_u
        if pois_u < 1e-18 * max(mass_used, 1e-300) and k > u:
            break
    # remaining Poisson(u) mass contributes at most (1 - mass_used) * 1
    return float(min(total + max(1.0 - mass_used, 0.0), 1.0))


def coherence(g1, g2):
    """C(g1, g2) = |<g1, g2>|^2 / (||g1||^2 ||g2||^2), in [0, 1]."""
    n1 = np.linalg.norm(g1)
    n2 = np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        raise DetectionError("coherence of a zero vector is undefined")
    val = abs(np.vdot(g1, g2)) ** 2 / (n1**2 * n2**2)
    return float(min(val, 1.0))


def generalized_coherence(g1, g2, g3):
    """Fraction of g3's energy in span{g1, g2}.

    C~(g1,g2,g3) = ||g1 <g3,g2> - g2 <g3,g1>||^2
                   / (||g1||^2 ||g2||^2 ||g3||^2 (1 - C_{1,2})).
    """
    c12 = coherence(g1, g2)
    if c12 >= 1.0 - 1e-14:
        raise DetectionError("degenerate pair: g1 and g2 are linearly dependent")
    num = np.linalg.norm(g1 * np.vdot(g3, g2) - g2 * np.vdot(g3, g1)) ** 2
    den = (
        np.linalg.norm(g1) ** 2
        * np.linalg.norm(g2) ** 2
        * np.linalg.norm(g3) ** 2
        * (1.0 - c12)
    )
    return float(min(num / den, 1.0))


def _residual_projector(G, l):
    """Apply (I - P_{l-1}) to the columns l-1..L-1 of G; returns (glp, G_tail)."""
    G = np.asarray(G)
    if G.ndim != 2:
        G = np.stack(G, axis=1)
    if l < 1 or l > G.shape[1]:
        raise DetectionError("target index out of range")
    g_l = G[:, l - 1]
    tail = G[:, l - 1 :]
    if l == 1:
        return g_l.copy(), tail
    q, r = np.linalg.qr(G[:, : l - 1])
    if np.min(np.abs(np.diag(r))) < 1e-12 * np.max(np.abs(np.diag(r))):
        raise DetectionError("rank-deficient atoms among g_1..g_{l-1}")
    glp = g_l - q @ (q.conj().T @ g_l)
    return glp, tail


def noncentrality(G, gains, sigma2, l):
    """mu_l = A_l beta_l of the greedy detector for the l-th target."""
    glp, tail = _residual_projector(G, l)
    gains = np.asarray(gains, dtype=complex)
    g_l = np.asarray(G)[:, l - 1] if np.asarray(G).ndim == 2 else G[l - 1]
    denom = float(np.real(np.vdot(g_l, glp)))
    a_l = 4.0 / (sigma2 * denom)
    beta = abs(np.vdot(glp, tail @ gains[l - 1 :])) ** 2
    return a_l * beta


def conditional_pd(G, gains, sigma2, l, p_fa):
    """Detection probability of target l conditioned on the gains (Marcum Q)."""
    mu = noncentrality(G, gains, sigma2, l)
    gamma_th = -2.0 * np.log(p_fa)
    return marcum_q1(np.sqrt(mu), np.sqrt(gamma_th))


def conditional_auc(G, gains, sigma2, l, tol=1e-7):
    """AUC of the conditional ROC, integrated adaptively in u = log p_fa."""
    mu = noncentrality(G, gains, sigma2, l)
    return auc_from_noncentrality(mu, tol)


def auc_from_noncentrality(mu, tol=1e-7):
    """integral_0^1 Q1(sqrt(mu), sqrt(-2 log pfa)) dpfa via adaptive Simpson."""
    root_mu = np.sqrt(mu)

    def pd_of_u(u):  # u = log p_fa
        return marcum_q1(root_mu, np.sqrt(-2.0 * u)) * np.exp(u)

    def simpson(f, a, b, fa, fm, fb, whole, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth <= 0 or abs(left + right - whole) < 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return simpson(f, a, m, fa, flm, fm, left, depth - 1) + simpson(
            f, m, b, fm, frm, fb, right, depth - 1
        )

    a, b = -30.0, 0.0
    # integrate each unit-wide panel adaptively; pd varies on the log scale
    total = 0.0
    edges = np.linspace(a, b, 31)
    for lo, hi in zip(edges[:-1], edges[1:]):
        flo, fmid, fhi = pd_of_u(lo), pd_of_u(0.5 * (lo + hi)), pd_of_u(hi)
        whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
        total += simpson(pd_of_u, lo, hi, flo, fmid, fhi, whole, 40)
    # tail below p_fa = e^-30 is bounded by e^-30
    return float(min(max(total, 0.5), 1.0))


def zeta_parameter(G, scales, sigma2, l):
    """(A_l, zeta_l): Rayleigh-mixture parameters of the expected detection.

    zeta_l = sum_{i>=l} scale_i^2 |g_l^H (I - P_{l-1}) g_i|^2, the squared
    Rayleigh scale of sqrt(beta_l). (The factor matches the three-target
    closed forms; the corollary's printed 1/2 does not.)
    """
    glp, tail = _residual_projector(G, l)
    G = np.asarray(G) if np.asarray(G).ndim == 2 else np.stack(G, axis=1)
    g_l = G[:, l - 1]
    denom = float(np.real(np.vdot(g_l, glp)))
    a_l = 4.0 / (sigma2 * denom)
    scales = np.asarray(scales, dtype=float)
    cross = tail.conj().T @ glp  # entries g_i^H (I-P) g_l
    zeta = float(np.sum(scales[l - 1 :] ** 2 * np.abs(cross) ** 2))
    return a_l, zeta


def expected_pd(G, scales, sigma2, l, p_fa):
    """Expected detection probability over Rayleigh gains (fixed region)."""
    a_l, zeta = zeta_parameter(G, scales, sigma2, l)
    return float(np.exp(np.log(p_fa) / (a_l * zeta + 1.0)))


def expected_auc(G, scales, sigma2, l):
    """AUC of the expected ROC: (1 + A zeta) / (2 + A zeta)."""
    a_l, zeta = zeta_parameter(G, scales, sigma2, l)
    return (1.0 + a_l * zeta) / (2.0 + a_l * zeta)


def joint_pd(pd_n, pd_r, p_fa=None):
    """Union detection probability and its false-alarm rate."""
    pd_joint = pd_n + pd_r - pd_n * pd_r
    if p_fa is None:
        return pd_joint
    return pd_joint, 2.0 * p_fa - p_fa**2


def detection_order(G, scales, sigma2):
    """Greedy order: descending expected receive SNR 2 s^2 ||g||^2 / sigma2."""
    G = np.asarray(G) if np.asarray(G).ndim == 2 else np.stack(G, axis=1)
    snr = 2.0 * np.asarray(scales) ** 2 * np.sum(np.abs(G) ** 2, axis=0) / sigma2
    # ties broken by original index (stable sort on negated key)
    return np.argsort(-snr, kind="stable")


# -- three-target closed forms ------------------------------------------------

# These duplicate the projector path on purpose: they are the second,
# independent route used to validate Prop. 1 / Cor. 1 for L = 3.


def mu_three_targets(G, gains, sigma2):
    """Non-centrality parameters (mu_1, mu_2, mu_3) in closed form."""
    G = np.asarray(G) if np.asarray(G).ndim == 2 else np.stack(G, axis=1)
    if G.shape[1] != 3:
        raise DetectionError("closed forms require exactly three targets")
    g1, g2, g3 = G[:, 0], G[:, 1], G[:, 2]
    a1, a2, a3 = np.asarray(gains, dtype=complex)
    n1, n2, n3 = (np.linalg.norm(g) ** 2 for g in (g1, g2, g3))
    c12 = coherence(g1, g2)
    ctilde = generalized_coherence(g1, g2, g3)

    mu1 = (4.0 * n1 / sigma2) * abs(
        a1 + a2 * np.vdot(g1, g2) / n1 + a3 * np.vdot(g1, g3) / n1
    ) ** 2
    mu2 = (4.0 * n2 * (1.0 - c12) / sigma2) * abs(
        a2
        + a3
        * (n1 * np.vdot(g2, g3) - np.vdot(g2, g1) * np.vdot(g1, g3))
        / (n1 * n2 * (1.0 - c12))
    ) ** 2
    mu3 = (4.0 * n3 * (1.0 - ctilde) / sigma2) * abs(a3) ** 2
    return float(mu1), float(mu2), float(mu3)


def breve_coherence(g1, g2, g3):
    """C-breve = |n1 <g3,g2> - <g3,g1><g1,g2>|^2 / (n1^2 n2 n3 (1-C12))."""
    n1 = np.linalg.norm(g1) ** 2
    n2 = np.linalg.norm(g2) ** 2
    n3 = np.linalg.norm(g3) ** 2
    c12 = coherence(g1, g2)
    num = abs(n1 * np.vdot(g3, g2) - np.vdot(g3, g1) * np.vdot(g1, g2)) ** 2
    return float(num / (n1**2 * n2 * n3 * (1.0 - c12)))


def expected_pd_three_targets(G, scales, sigma2, p_fa):
    """Expected detection probabilities (pd_1, pd_2, pd_3) in closed form."""
    G = np.asarray(G) if np.asarray(G).ndim == 2 else np.stack(G, axis=1)
    if G.shape[1] != 3:
        raise DetectionError("closed forms require exactly three targets")
    g1, g2, g3 = G[:, 0], G[:, 1], G[:, 2]
    s1, s2, s3 = np.asarray(scales, dtype=float)
    n1, n2, n3 = (np.linalg.norm(g) ** 2 for g in (g1, g2, g3))
    c12 = coherence(g1, g2)
    ctilde = generalized_coherence(g1, g2, g3)
    cbreve = breve_coherence(g1, g2, g3)
    log_pfa = np.log(p_fa)

    c11, c12_, c13 = coherence(g1, g1), c12, coherence(g1, g3)
    pd1 = np.exp(
        sigma2
        * log_pfa
        / (4.0 * (s1**2 * n1 * c11 + s2**2 * n2 * c12_ + s3**2 * n3 * c13) + sigma2)
    )
    pd2 = np.exp(
        sigma2
        * log_pfa
        / (4.0 * (s2**2 * n2 * (1.0 - c12) + s3**2 * n3 * cbreve) + sigma2)
    )
    pd3 = np.exp(sigma2 * log_pfa / (4.0 * s3**2 * n3 * (1.0 - ctilde) + sigma2))
    return float(pd1), float(pd2), float(pd3)


# -- explicit coherence factorizations ----------------------------------------


def coherence_factors_nonris(eta_l, eta_k, precoder, scenario):
    """(angle factor, delay factor) of the non-RIS coherence."""
    from .signal import delay_response, steering_ue

    a_l = steering_ue(eta_l[1:], scenario)
    a_k = steering_ue(eta_k[1:], scenario)
    d_l = delay_response(eta_l[0], scenario)
    d_k = delay_response(eta_k[0], scenario)
    angle = abs(np.vdot(a_l, a_k)) ** 2 / scenario.n_ue**2
    delay = abs(np.vdot(d_l, d_k)) ** 2 / scenario.n_subcarriers**2
    return float(angle), float(delay)


def coherence_factors_ris(eta_l, eta_k, schedule, scenario, phi0):
    """(RIS response factor, delay factor) of the RIS coherence."""
    from .signal import delay_response, ris_response_vector

    nu_l = ris_response_vector(eta_l[3:], phi0, schedule, scenario)
    nu_k = ris_response_vector(eta_k[3:], phi0, schedule, scenario)
    d_l = delay_response(eta_l[2], scenario)
    d_k = delay_response(eta_k[2], scenario)
    nu_fac = abs(np.vdot(nu_l, nu_k)) ** 2 / (
        np.linalg.norm(nu_l) ** 2 * np.linalg.norm(nu_k) ** 2
    )
    delay = abs(np.vdot(d_l, d_k)) ** 2 / scenario.n_subcarriers**2
    return float(nu_fac), float(delay)
