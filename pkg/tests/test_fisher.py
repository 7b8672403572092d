import numpy as np
import pytest

from risradar.detection import generalized_coherence
from risradar.fisher import (
    FimBuilder,
    _NONRIS_KEYS,
    _RIS_KEYS,
    atom_derivatives_nonris,
    atom_derivatives_ris,
    bounds,
    efim_geometric,
    equivalent_fim_case_study,
    equivalent_fim_schur,
    fim_nonris,
    fim_ris,
)
from risradar.geometry import channel_params, path_gains, spaced_targets
from risradar.harness import ExperimentConfig, _build_setup
from risradar.signal import atom_nonris, atom_ris


@pytest.fixture(scope="module")
def setup(small_scenario):
    return _build_setup(small_scenario, ExperimentConfig(kind="fisher-cdf"))


def _fd_nonris(eta, f, scenario, which, step):
    d = np.zeros(3)
    d[which] = step
    gp = atom_nonris(np.asarray(eta) + d, f, scenario)
    gm = atom_nonris(np.asarray(eta) - d, f, scenario)
    return (gp - gm) / (2 * step)


def _fd_ris(eta, f, schedule, scenario, which, step):
    d = np.zeros(5)
    d[which] = step
    gp = atom_ris(np.asarray(eta) + d, f, schedule, scenario)
    gm = atom_ris(np.asarray(eta) - d, f, schedule, scenario)
    return (gp - gm) / (2 * step)


def test_derivatives_match_finite_differences(small_scenario, setup):
    rng = np.random.default_rng(0)
    region = setup.region
    for _ in range(100):
        eta_n = (
            rng.uniform(*region.delay_interval),
            rng.uniform(*region.az_interval),
            rng.uniform(*region.el_interval),
        )
        dd = atom_derivatives_nonris(eta_n, setup.precoder, small_scenario)
        for which, key, step in ((0, "tau", 1e-12), (1, "theta_az", 1e-7), (2, "theta_el", 1e-7)):
            fd = _fd_nonris(eta_n, setup.precoder, small_scenario, which, step)
            rel = np.linalg.norm(dd[key] - fd) / np.linalg.norm(fd)
            assert rel < 1e-5, (key, rel)

        eta_r = (
            eta_n[1],
            eta_n[2],
            rng.uniform(*region.ris_delay_interval),
            rng.uniform(*region.ris_az_interval),
            rng.uniform(*region.ris_el_interval),
        )
        dr = atom_derivatives_ris(
            eta_r, setup.precoder, setup.schedule, small_scenario,
            phi0=setup.phi0, theta0=setup.theta0,
        )
        for which, key, step in (
            (0, "theta_az", 1e-7),
            (1, "theta_el", 1e-7),
            (2, "tau_bar", 1e-12),
            (3, "phi_az", 1e-7),
            (4, "phi_el", 1e-7),
        ):
            fd = _fd_ris(eta_r, setup.precoder, setup.schedule, small_scenario, which, step)
            rel = np.linalg.norm(dr[key] - fd) / np.linalg.norm(fd)
            assert rel < 1e-5, (key, rel)


def test_delay_derivative_magnitudes(small_scenario, setup):
    eta = (120e-9, 0.7, 0.8)
    dd = atom_derivatives_nonris(eta, setup.precoder, small_scenario)
    n = small_scenario.n_subcarriers
    n_u = small_scenario.n_ue
    g = dd["g"].reshape(-1, n, n_u)
    g_tau = dd["tau"].reshape(-1, n, n_u)
    for ni in range(n):
        expect = 2 * np.pi * small_scenario.delta_f * ni * np.abs(g[0, ni])
        assert np.allclose(np.abs(g_tau[0, ni]), expect, rtol=1e-12)


def test_ris_theta_derivative_structure(small_scenario, setup):
    """The RIS-atom theta derivative only rescales the atom direction."""
    eta_r = (0.7, 0.8, 125e-9, 0.4, 0.9)
    dr = atom_derivatives_ris(
        eta_r, setup.precoder, setup.schedule, small_scenario,
        phi0=setup.phi0, theta0=setup.theta0,
    )
    g = dr["g"]
    for key in ("theta_az", "theta_el"):
        v = dr[key]
        # collinearity: v = c * g for a complex scalar c
        c = np.vdot(g, v) / np.vdot(g, g)
        assert np.linalg.norm(v - c * g) < 1e-10 * np.linalg.norm(v)


def test_fim_single_target_gain_block(small_scenario, setup):
    eta = (120e-9, 0.7, 0.8)
    dd = atom_derivatives_nonris(eta, setup.precoder, small_scenario)
    sigma2 = small_scenario.sigma2
    fim = fim_nonris([dd], np.array([0.3 + 0.1j]), sigma2)
    norm2 = np.linalg.norm(dd["g"]) ** 2
    expected = 4.0 / sigma2 * norm2
    assert np.isclose(fim[0, 0], expected, rtol=1e-12)
    assert np.isclose(fim[1, 1], expected, rtol=1e-12)
    assert abs(fim[0, 1]) < 1e-9 * expected


def test_fim_symmetric_psd(small_scenario, setup):
    rng = np.random.default_rng(1)
    targets = spaced_targets(small_scenario, 0.1)
    params = channel_params(small_scenario, targets)
    deriv_n = [
        atom_derivatives_nonris(params.eta_nonris(l), setup.precoder, small_scenario)
        for l in range(3)
    ]
    deriv_r = [
        atom_derivatives_ris(
            params.eta_ris(l), setup.precoder, setup.schedule, small_scenario,
            phi0=params.phi0, theta0=params.theta0,
        )
        for l in range(3)
    ]
    for _ in range(100):
        gains = rng.normal(size=3) + 1j * rng.normal(size=3)
        for fim in (
            fim_nonris(deriv_n, gains, small_scenario.sigma2),
            fim_ris(deriv_r, gains, small_scenario.sigma2),
        ):
            assert np.allclose(fim, fim.T, atol=1e-6 * np.abs(fim).max())
            eig = np.linalg.eigvalsh(fim)
            assert eig.min() > -1e-8 * np.trace(fim)


def test_fim_monte_carlo_score_oracle(mini_scenario):
    """FIM equals the covariance of the score over noise draws."""
    from risradar.signal import build_precoder, build_schedule, region_from_intervals

    sc = mini_scenario
    region = region_from_intervals(sc, (100e-9, 140e-9), (0.5, 0.9), (0.6, 1.0))
    f = build_precoder(sc, region)
    eta = (120e-9, 0.72, 0.81)
    dd = atom_derivatives_nonris(eta, f, sc)
    alpha = np.array([0.8 - 0.4j])
    sigma2 = 1.3
    fim = fim_nonris([dd], alpha, sigma2)

    # score of the AWGN likelihood: (2/sigma_s^2) Re{d_i^H eps}, sigma_s^2 = sigma2/2
    cols = [dd["g"], 1j * dd["g"], alpha[0] * dd["tau"], alpha[0] * dd["theta_az"], alpha[0] * dd["theta_el"]]
    d = np.stack(cols, axis=1)
    rng = np.random.default_rng(5)
    trials = 20000
    n = d.shape[0]
    eps = (rng.normal(size=(trials, n)) + 1j * rng.normal(size=(trials, n))) * np.sqrt(sigma2 / 4)
    scores = (2.0 / (sigma2 / 2.0)) * np.real(eps.conj() @ d)
    emp = scores.T @ scores / trials
    assert np.allclose(emp, fim, rtol=0.05, atol=0.03 * np.abs(fim).max())


def _fisher_report(scenario, setup, delta, seed):
    targets = spaced_targets(scenario, delta)
    params = channel_params(scenario, targets)
    L = len(targets)
    deriv_n = [
        atom_derivatives_nonris(params.eta_nonris(l), setup.precoder, scenario)
        for l in range(L)
    ]
    deriv_r = [
        atom_derivatives_ris(
            params.eta_ris(l), setup.precoder, setup.schedule, scenario,
            phi0=params.phi0, theta0=params.theta0,
        )
        for l in range(L)
    ]
    gains = path_gains(scenario, targets, seed)
    fim_n = fim_nonris(deriv_n, gains.alpha, scenario.sigma2)
    fim_r = fim_ris(deriv_r, gains.alpha_bar, scenario.sigma2)
    return bounds(fim_n, fim_r, targets.positions, scenario), fim_n, fim_r, gains, (deriv_n, deriv_r)


def test_bounds_additivity_and_monotonicity(small_scenario, setup):
    report, *_ = _fisher_report(small_scenario, setup, 0.1, 3)
    assert np.allclose(
        report.fim_euc_joint, report.fim_euc_n + report.fim_euc_r, rtol=1e-12
    )
    for l in range(3):
        assert report.peb_joint[l] <= min(report.peb_n[l], report.peb_r[l]) + 1e-12


def test_efim_not_exceeding_geometric_block(small_scenario, setup):
    report, fim_n, fim_r, _, _ = _fisher_report(small_scenario, setup, 0.1, 4)
    L = 3
    efim, singular = efim_geometric(fim_n, L, "nonris")
    assert not singular
    geo = fim_n[2 * L :, 2 * L :]
    eig = np.linalg.eigvalsh(geo - efim)
    assert eig.min() > -1e-8 * np.trace(geo)


def test_peb_snr_scaling(small_scenario, setup):
    report, fim_n, fim_r, gains, (deriv_n, deriv_r) = _fisher_report(small_scenario, setup, 0.1, 5)
    targets = spaced_targets(small_scenario, 0.1)
    # doubling E_s multiplies |alpha|^2 by 2: squared bounds halve
    fim_n2 = fim_nonris(deriv_n, gains.alpha * np.sqrt(2), small_scenario.sigma2)
    fim_r2 = fim_ris(deriv_r, gains.alpha_bar * np.sqrt(2), small_scenario.sigma2)
    report2 = bounds(fim_n2, fim_r2, targets.positions, small_scenario)
    assert np.allclose(report2.deb_n**2, report.deb_n**2 / 2, rtol=1e-6)
    assert np.allclose(report2.peb_joint**2, report.peb_joint**2 / 2, rtol=1e-6)


def test_efim_gain_phase_invariance(small_scenario, setup):
    # well-separated pair so the FIM is far from singular
    targets = spaced_targets(small_scenario, 0.3, count=2)
    params = channel_params(small_scenario, targets)
    deriv_n = [
        atom_derivatives_nonris(params.eta_nonris(l), setup.precoder, small_scenario)
        for l in range(2)
    ]
    gains = path_gains(small_scenario, targets, 6)
    fim_a = fim_nonris(deriv_n, gains.alpha, small_scenario.sigma2)
    fim_b = fim_nonris(deriv_n, gains.alpha * np.exp(1j * 0.9), small_scenario.sigma2)
    e1, s1 = efim_geometric(fim_a, 2, "nonris")
    e2, s2 = efim_geometric(fim_b, 2, "nonris")
    assert not s1 and not s2
    # compare as correlation matrices: raw entries span ~17 orders (s vs rad)
    d1 = np.sqrt(np.abs(np.diag(e1)))
    n1 = e1 / np.outer(d1, d1)
    n2 = e2 / np.outer(d1, d1)
    assert np.allclose(n1, n2, atol=1e-7)


def test_singular_fim_flags_infinite(small_scenario, setup):
    targets = spaced_targets(small_scenario, 1e-9)  # effectively coincident
    params = channel_params(small_scenario, targets)
    deriv_n = [
        atom_derivatives_nonris(params.eta_nonris(l), setup.precoder, small_scenario)
        for l in range(3)
    ]
    deriv_r = [
        atom_derivatives_ris(
            params.eta_ris(l), setup.precoder, setup.schedule, small_scenario,
            phi0=params.phi0, theta0=params.theta0,
        )
        for l in range(3)
    ]
    gains = path_gains(small_scenario, targets, 0)
    fim_n = fim_nonris(deriv_n, gains.alpha, small_scenario.sigma2)
    fim_r = fim_ris(deriv_r, gains.alpha_bar, small_scenario.sigma2)
    report = bounds(fim_n, fim_r, targets.positions, small_scenario)
    # per-signal bounds blow up at coincident targets; the joint FIM stays
    # generically invertible (the two null spaces only share the origin)
    assert np.all(np.isinf(report.peb_n))
    assert np.all(np.isinf(report.peb_r))
    assert np.all(np.isinf(report.deb_n))


def test_equivalent_fim_zero_at_coincident():
    rng = np.random.default_rng(7)
    g1 = rng.normal(size=12) + 1j * rng.normal(size=12)
    dg1 = rng.normal(size=12) + 1j * rng.normal(size=12)
    g = np.stack([g1, g1], axis=1)
    dg = np.stack([dg1, dg1], axis=1)
    assert equivalent_fim_case_study(g, dg, (0.5 + 0.2j, -0.3j), 0.5) == 0.0


def test_equivalent_fim_orthogonal_maximum():
    n = 16
    g = np.zeros((n, 2), dtype=complex)
    dg = np.zeros((n, 2), dtype=complex)
    g[0, 0] = 1.5
    g[1, 1] = 1.0
    dg[2, 0] = 2.0  # orthogonal to everything
    dg[3, 1] = 1.0
    a = (0.7 - 0.2j, 0.4 + 0.9j)
    sigma2 = 0.8
    val = equivalent_fim_case_study(g, dg, a, sigma2)
    expect = 4 / sigma2 * abs(a[0]) ** 2 * np.linalg.norm(dg[:, 0]) ** 2
    assert np.isclose(val, expect, rtol=1e-12)
    # and with C(g1, dg1) nonzero the stated maximal form holds
    dg2 = dg.copy()
    dg2[0, 0] = 0.5  # component along g1
    val2 = equivalent_fim_case_study(g, dg2, a, sigma2)
    c = abs(np.vdot(g[:, 0], dg2[:, 0])) ** 2 / (
        np.linalg.norm(g[:, 0]) ** 2 * np.linalg.norm(dg2[:, 0]) ** 2
    )
    expect2 = 4 / sigma2 * abs(a[0]) ** 2 * np.linalg.norm(dg2[:, 0]) ** 2 * (1 - c)
    assert np.isclose(val2, expect2, rtol=1e-12)


def test_equivalent_fim_matches_schur():
    rng = np.random.default_rng(8)
    for _ in range(50):
        g = rng.normal(size=(24, 2)) + 1j * rng.normal(size=(24, 2))
        dg = rng.normal(size=(24, 2)) + 1j * rng.normal(size=(24, 2))
        gains = rng.normal(size=2) + 1j * rng.normal(size=2)
        cf = equivalent_fim_case_study(g, dg, gains, 0.41)
        sc = equivalent_fim_schur(g, dg, gains, 0.41)
        assert abs(cf - sc) < 1e-8 * abs(sc)


def test_equivalent_fim_il_alpha_is_generalized_coherence():
    """IL_alpha equals C~(g1, g2, dg1): oracle via the theta2-known Schur.

    With theta2 known the unknowns are the four gain components and theta1,
    and the equivalent information is exactly
    (4/sigma2) |a1|^2 ||dg1||^2 (1 - Ctilde(g1, g2, dg1)).
    """
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = rng.normal(size=(20, 2)) + 1j * rng.normal(size=(20, 2))
        dg1 = rng.normal(size=20) + 1j * rng.normal(size=20)
        sigma2 = 0.37
        a1 = 1.3 - 0.4j
        cols = [g[:, 0], g[:, 1], 1j * g[:, 0], 1j * g[:, 1], a1 * dg1]
        d = np.stack(cols, axis=1)
        fim = (4.0 / sigma2) * np.real(d.conj().T @ d)
        rest = [0, 1, 2, 3]
        schur = fim[4, 4] - fim[4, rest] @ np.linalg.solve(
            fim[np.ix_(rest, rest)], fim[4, rest]
        )
        ct = generalized_coherence(g[:, 0], g[:, 1], dg1)
        expect = 4 / sigma2 * abs(a1) ** 2 * np.linalg.norm(dg1) ** 2 * (1 - ct)
        assert np.isclose(schur, expect, rtol=1e-9)


def test_ris_equivalent_fim_from_scenario_atoms(small_scenario, setup):
    """Case study on real RIS atoms: closed form equals the Schur complement."""
    targets = spaced_targets(small_scenario, 0.12, count=3)
    params = channel_params(small_scenario, targets)
    dr = [
        atom_derivatives_ris(
            params.eta_ris(l), setup.precoder, setup.schedule, small_scenario,
            phi0=params.phi0, theta0=params.theta0,
        )
        for l in range(2)
    ]
    g = np.stack([dr[0]["g"], dr[1]["g"]], axis=1)
    dg = np.stack([dr[0]["phi_az"], dr[1]["phi_az"]], axis=1)
    gains = path_gains(small_scenario, targets, 2).alpha_bar[:2]
    cf = equivalent_fim_case_study(g, dg, gains, small_scenario.sigma2)
    sc = equivalent_fim_schur(g, dg, gains, small_scenario.sigma2)
    assert abs(cf - sc) < 1e-8 * abs(sc)
