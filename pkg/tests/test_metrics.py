import itertools

import numpy as np
import pytest

from risradar.metrics import TrialRecord, empirical_auc, empirical_rates, gospa


def _rec(l_hat, L=3):
    return TrialRecord(
        true_count=L,
        estimated_count=l_hat,
        true_positions=np.zeros((L, 3)),
        estimated_positions=np.zeros((l_hat, 3)),
        threshold=1.0,
    )


def test_rates_all_correct():
    p_d, p_fa = empirical_rates([_rec(3) for _ in range(10)])
    assert np.allclose(p_d, [1, 1, 1])
    assert p_fa == 0.0


def test_rates_all_missed():
    p_d, p_fa = empirical_rates([_rec(0) for _ in range(5)])
    assert np.allclose(p_d, [0, 0, 0])


def test_rates_hand_count():
    p_d, p_fa = empirical_rates([_rec(k) for k in (2, 3, 4, 3)])
    assert np.isclose(p_d[2], 3 / 4)
    assert np.isclose(p_fa, 1 / 4)
    assert np.isclose(p_d[0], 1.0)


def test_rates_empty_group():
    with pytest.raises(ValueError):
        empirical_rates([])


def test_auc_diagonal():
    pfa = np.linspace(0.05, 0.95, 10)
    assert np.isclose(empirical_auc(pfa, pfa), 0.5, atol=1e-12)


def test_auc_perfect():
    assert np.isclose(empirical_auc([0.0], [1.0]), 1.0)


def test_auc_hand_integration():
    val = empirical_auc([0.1, 0.5], [0.6, 0.9])
    # staircase through (0,0), (0.1,0.6), (0.5,0.9), (1,1)
    expect = 0.1 * 0.3 + 0.4 * 0.75 + 0.5 * 0.95
    assert np.isclose(val, expect)


def test_auc_enforces_monotone_staircase():
    val = empirical_auc([0.1, 0.2, 0.5], [0.6, 0.4, 0.9])
    expect = empirical_auc([0.1, 0.2, 0.5], [0.6, 0.6, 0.9])
    assert np.isclose(val, expect)


def test_auc_noise_floor():
    """The first undetectable target: p_d,(L+1) is the false-alarm rate."""
    rng = np.random.default_rng(0)
    L = 3
    pfa, pd = [], []
    for lam in (0.5, 1.0, 2.0, 4.0, 6.0):  # threshold sweep of a noise counter
        counts = rng.poisson(lam, size=2000)
        pd.append((counts >= L + 1).mean())
        pfa.append((counts > L).mean())
    auc = empirical_auc(pfa, pd)
    assert np.isclose(auc, 0.5, atol=1e-12)


def test_gospa_identical_sets():
    pts = np.array([[0.0, 0, 0], [1, 2, 3]])
    assert gospa(pts, pts) == 0.0


def test_gospa_pure_cardinality():
    val = gospa(np.array([[0.0, 0, 0]]), np.zeros((0, 3)))
    assert np.isclose(val, np.sqrt(25.0 / 2.0))
    assert gospa(np.zeros((0, 3)), np.zeros((0, 3))) == 0.0


def test_gospa_symmetry():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 3))
    b = rng.normal(size=(5, 3))
    assert np.isclose(gospa(a, b), gospa(b, a))


def test_gospa_brute_force_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.uniform(-4, 4, size=(3, 3))
        b = rng.uniform(-4, 4, size=(3, 3))
        got = gospa(a, b)
        c, p = 5.0, 2.0
        best = np.inf
        for perm in itertools.permutations(range(3)):
            tot = sum(
                min(np.linalg.norm(a[i] - b[perm[i]]), c) ** p for i in range(3)
            )
            best = min(best, tot)
        assert np.isclose(got, best ** (1 / p))


def test_gospa_triangle_inequality_spot():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = rng.uniform(-3, 3, size=(rng.integers(1, 4), 3))
        b = rng.uniform(-3, 3, size=(rng.integers(1, 4), 3))
        c = rng.uniform(-3, 3, size=(rng.integers(1, 4), 3))
        assert gospa(a, c) <= gospa(a, b) + gospa(b, c) + 1e-9


def test_gospa_monotone_in_cutoff():
    rng = np.random.default_rng(4)
    a = rng.uniform(-8, 8, size=(3, 3))
    b = rng.uniform(-8, 8, size=(4, 3))
    vals = [gospa(a, b, cutoff=c) for c in (1.0, 2.0, 5.0, 10.0)]
    assert all(v2 >= v1 - 1e-12 for v1, v2 in zip(vals, vals[1:]))
