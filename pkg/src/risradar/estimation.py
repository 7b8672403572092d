"""OMP channel estimation, angle-domain data association, and positioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import (
    SPEED_OF_LIGHT,
    Scenario,
    invert_nonris,
    jacobian_position,
    ris_angles_of_position,
    ris_delay_of_position,
    unit_from_angles,
)
from .signal import ResolutionRegion, RisSchedule, atom_nonris, atom_ris


class EstimationError(ValueError):
    pass


@dataclass
class Dictionary:
    """Redundant atom dictionary over a parameter grid inside the region.

    Unit-normalized atoms are stored together with the raw norms; raw atoms
    are reconstructed per column on demand (the full raw matrix can be
    hundreds of MB for the RIS stream).
    """

    atoms_unit: np.ndarray  # (n, M) unit-normalized atoms
    norms: np.ndarray  # (M,) raw atom norms
    grid: np.ndarray  # (M, k) parameter tuples
    kind: str  # "nonris" | "ris"

    @property
    def size(self):
        return self.atoms_unit.shape[1]

    @property
    def atoms(self):
        """Raw atoms, materialized; prefer :meth:`columns` for subsets."""
        return self.atoms_unit * self.norms

    def columns(self, indices):
        return self.atoms_unit[:, indices] * self.norms[indices]


def _grid_axes(interval, count):
    lo, hi = interval
    if count == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, count)


def build_dictionary_nonris(scenario: Scenario, region: ResolutionRegion, precoder,
                            n_delay=3, n_az=17, n_el=17) -> Dictionary:
    """Non-RIS dictionary over (tau, theta_az, theta_el)."""
    taus = _grid_axes(region.delay_interval, n_delay)
    azs = _grid_axes(region.az_interval, n_az)
    els = _grid_axes(region.el_interval, n_el)
    grid = np.array([(t, a, e) for t in taus for a in azs for e in els])
    atoms = np.stack([atom_nonris(eta, precoder, scenario) for eta in grid], axis=1)
    norms = np.linalg.norm(atoms, axis=0)
    atoms /= norms
    return Dictionary(atoms_unit=atoms, norms=norms, grid=grid, kind="nonris")


def build_dictionary_ris(scenario: Scenario, region: ResolutionRegion, precoder,
                         schedule: RisSchedule, theta_c, n_delay=9, n_az=17, n_el=17) -> Dictionary:
    """RIS dictionary over (tau_bar, phi_az, phi_el) at fixed theta = theta_c.

    The UE-side angle of a RIS atom only scales it through the precoder
    inner product, which is unidentifiable from the RIS stream alone; atoms
    are built at the region's angular center. The delay axis is sampled
    densely enough that the off-grid bias of a strong in-region target stays
    below the noise floor (a coarse delay grid leaves ghost residual energy).
    """
    taus = _grid_axes(region.ris_delay_interval, n_delay)
    azs = _grid_axes(region.ris_az_interval, n_az)
    els = _grid_axes(region.ris_el_interval, n_el)
    grid = np.array([(t, a, e) for t in taus for a in azs for e in els])
    atoms = np.stack(
        [
            atom_ris((theta_c[0], theta_c[1], t, a, e), precoder, schedule, scenario)
            for t, a, e in grid
        ],
        axis=1,
    )
    norms = np.linalg.norm(atoms, axis=0)
    atoms /= norms
    return Dictionary(atoms_unit=atoms, norms=norms, grid=grid, kind="ris")


@dataclass
class OmpResult:
    support: list[int]
    coefficients: np.ndarray
    residual_trace: np.ndarray  # residual norms, length n_iter+1 (starts at ||y||)
    params: np.ndarray  # (n_iter, k) grid tuples in selection order

    def count_at_threshold(self, residual_th):
        """Detections claimed if stopping at ``residual_th``: the number of
        iterations executed before the residual norm first drops below it."""
        below = np.nonzero(self.residual_trace < residual_th)[0]
        if below.size == 0:
            return len(self.support)
        return int(below[0])


def omp(y, dictionary: Dictionary, residual_th, max_iter=10, normalized_match=True):
    """Orthogonal matching pursuit on a fixed dictionary.

    Greedy loop: argmax_i |<g_i, r>| (over unit-normalized atoms by default),
    support update, least-squares refit on the support, residual update.
    Terminates when ||r|| < residual_th, on max_iter, or when the selected
    atoms become numerically rank-deficient (candidate dropped).
    """
    if residual_th <= 0:
        raise EstimationError("residual_th must be positive")
    y = np.asarray(y, dtype=complex)
    r = y.copy()
    support: list[int] = []
    trace = [np.linalg.norm(y)]
    coeffs = np.zeros(0, dtype=complex)
    while trace[-1] >= residual_th and len(support) < max_iter:
        # |<g_i, r>| = |r^H g_i|; conjugating r avoids copying the dictionary
        scores = np.abs(r.conj() @ dictionary.atoms_unit)
        if not normalized_match:
            scores = scores * dictionary.norms
        idx = int(np.argmax(scores))
        if idx in support:
            break
        candidate = support + [idx]
        sub = dictionary.columns(candidate)
        q, rr = np.linalg.qr(sub)
        diag = np.abs(np.diag(rr))
        if diag.min() < 1e-10 * diag.max():
            break
        support = candidate
        coeffs = np.linalg.solve(rr, q.conj().T @ y)
        r = y - sub @ coeffs
        trace.append(np.linalg.norm(r))
    params = dictionary.grid[support] if support else np.zeros((0, dictionary.grid.shape[1]))
    return OmpResult(
        support=support,
        coefficients=coeffs,
        residual_trace=np.asarray(trace),
        params=params,
    )


# -- data association ---------------------------------------------------------


def wrap_cost(a, b, period):
    d = abs(a - b)
    return min(d**2, (d - period) ** 2)


def association_cost_matrix(phi_nonris, phi_ris):
    """Wrap-aware squared angular cost; azimuth period 2pi, elevation pi."""
    n, m = len(phi_nonris), len(phi_ris)
    cost = np.zeros((n, m))
    for i in range(n):
        for k in range(m):
            cost[i, k] = wrap_cost(phi_nonris[i][0], phi_ris[k][0], 2 * np.pi) + wrap_cost(
                phi_nonris[i][1], phi_ris[k][1], np.pi
            )
    return cost


def solve_assignment(cost):
    """Minimum-cost one-to-one assignment on a rectangular matrix.

    Returns (rows, cols) index arrays of matched pairs.
    """
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


@dataclass
class Association:
    """Indices into the detection lists; -1 marks a missing side."""

    nonris_idx: int
    ris_idx: int


def associate(nonris_detections, ris_detections, scenario: Scenario):
    """Pair detections in the RIS-AoA domain; unmatched survive as singletons.

    ``nonris_detections``: list of (tau, theta_az, theta_el) estimates.
    ``ris_detections``: list of (tau_bar, phi_az, phi_el) estimates.
    """
    ln, lr = len(nonris_detections), len(ris_detections)
    if ln == 0 or lr == 0:
        return [Association(i, -1) for i in range(ln)] + [Association(-1, k) for k in range(lr)]
    phi_n = [
        ris_angles_of_position(invert_nonris(det, scenario), scenario)
        for det in nonris_detections
    ]
    phi_r = [np.asarray(det[1:]) for det in ris_detections]
    cost = association_cost_matrix(phi_n, phi_r)
    rows, cols = solve_assignment(cost)
    pairs = [Association(int(i), int(k)) for i, k in zip(rows, cols)]
    matched_n = {a.nonris_idx for a in pairs}
    matched_r = {a.ris_idx for a in pairs}
    pairs += [Association(i, -1) for i in range(ln) if i not in matched_n]
    pairs += [Association(-1, k) for k in range(lr) if k not in matched_r]
    return pairs


# -- position estimation ------------------------------------------------------

_NS = 1e-9


def _h_of_position(pos, scenario):
    """Channel map h(c) = (tau, theta_az, theta_el, tau_bar, phi_az, phi_el)."""
    from .geometry import channel_params, TargetSet

    params = channel_params(scenario, TargetSet(positions=np.asarray(pos)[None, :], rcs=np.array([1.0])))
    return np.array(
        [
            params.tau[0],
            params.theta[0, 0],
            params.theta[0, 1],
            params.tau_bar[0],
            params.phi[0, 0],
            params.phi[0, 1],
        ]
    )


def ris_ray_position(measurement, scenario: Scenario):
    """Closed-form init for a RIS-only detection (tau_bar, phi_az, phi_el).

    Intersects the RIS-frame ray with the bistatic delay ellipsoid:
    r = (b^2 - a^2) / (2 (b + u^T (p_r - p))) on the ray c = p_r + r u.
    """
    tau_bar, ph_az, ph_el = measurement
    p, pr = scenario.ue_position, scenario.ris_position
    u = scenario.ris_rotation @ unit_from_angles(ph_az, ph_el)
    a = np.linalg.norm(p - pr)
    b = SPEED_OF_LIGHT * tau_bar - a
    denom = 2.0 * (b + u @ (pr - p))
    if b <= 0 or denom <= 0:
        raise EstimationError("inconsistent RIS-only measurement")
    r = (b**2 - a**2) / denom
    return pr + r * u


@dataclass
class PositionEstimate:
    position: np.ndarray
    converged: bool
    objective: float
    n_iter: int
    flagged: bool = False


def estimate_position_single(measurement, weight, scenario: Scenario, init,
                             rows=(0, 1, 2, 3, 4, 5), max_iter=100, step_tol=1e-9):
    """Weighted Gauss-Newton on 0.5 (h(c) - eta)^T W (h(c) - eta).

    ``rows`` selects which components of h participate (paired detections use
    all six; singletons use (0,1,2) or (3,4,5)). Delay rows are rescaled to
    ns internally so the normal equations stay well-conditioned; ``weight``
    is in SI units, or None for identity weighting in the scaled (ns, rad)
    units. Levenberg damping: start 1e-3, x10 on reject, /10 on accept.
    """
    rows = np.asarray(rows, dtype=int)
    eta = np.asarray(measurement, dtype=float)
    scale = np.ones(6)
    scale[0] = scale[3] = _NS
    s = scale[rows]

    def objective(pos):
        res = (_h_of_position(pos, scenario)[rows] - eta) / s
        return res, 0.5 * res @ (w_s @ res)

    if weight is None:
        w_s = np.eye(len(rows))
    else:
        # weight in scaled units keeps the objective value
        w_s = np.outer(s, s) * np.asarray(weight, dtype=float)
    pos = np.asarray(init, dtype=float).copy()
    res, obj = objective(pos)
    lam = 1e-3
    n_done = 0
    for it in range(max_iter):
        n_done = it + 1
        jac = jacobian_position(pos, scenario)[rows] * (1.0 / s)[:, None]
        grad = jac.T @ (w_s @ res)
        hess = jac.T @ w_s @ jac
        try:
            step = np.linalg.solve(hess + lam * np.diag(np.diag(hess) + 1e-30), -grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        new_pos = pos + step
        try:
            new_res, new_obj = objective(new_pos)
        except Exception:
            lam *= 10.0
            continue
        if new_obj <= obj:
            pos, res, obj = new_pos, new_res, new_obj
            lam = max(lam / 10.0, 1e-12)
            if np.linalg.norm(step) < step_tol:
                return PositionEstimate(pos, True, obj, n_done)
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return PositionEstimate(pos, False, obj, n_done)


def _inside_region(pos, region, scenario, slack=0.35):
    """Whether a position maps into the (slack-inflated) resolution region."""
    if region is None:
        return True
    from .geometry import channel_params, TargetSet

    try:
        params = channel_params(
            scenario, TargetSet(positions=np.asarray(pos)[None, :], rcs=np.array([1.0]))
        )
    except Exception:
        return False

    def inside(val, interval):
        lo, hi = interval
        pad = slack * (hi - lo)
        return lo - pad <= val <= hi + pad

    return (
        inside(params.tau[0], region.delay_interval)
        and inside(params.theta[0, 0], region.az_interval)
        and inside(params.theta[0, 1], region.el_interval)
    )


def _ris_singleton_estimate(det_r, weight, scenario, region):
    try:
        init = ris_ray_position(det_r, scenario)
    except EstimationError:
        if region is None:
            raise
        init = region.center_position(scenario)
    return estimate_position_single(
        np.asarray(det_r, dtype=float), weight, scenario, init, rows=(3, 4, 5)
    ), init


def estimate_positions(associations, nonris_detections, ris_detections, scenario: Scenario,
                       weight_blocks=None, region=None):
    """Positions for every association (pairs and singletons).

    ``weight_blocks`` maps an association index to its weighting matrix
    (6x6 for pairs, 3x3 for singletons); scaled-identity weighting is used
    where missing or non-finite. Non-RIS singletons use the closed-form
    inverse; RIS singletons run the NLS from the ray intersection (falling
    back to the region center when the ray is inconsistent).

    For pairs the NLS runs from both single-signal initializations and
    keeps the lower objective. A mismatched pair (ghost detections carry
    near-zero plug-in information, leaving the objective flat) can drift
    far outside the prior region; such results are replaced by the sharper
    RIS-only fix and flagged.
    """
    estimates = []
    for j, assoc in enumerate(associations):
        w = None if weight_blocks is None else weight_blocks.get(j)
        if assoc.nonris_idx >= 0 and assoc.ris_idx >= 0:
            det_n = nonris_detections[assoc.nonris_idx]
            det_r = ris_detections[assoc.ris_idx]
            eta = np.array([det_n[0], det_n[1], det_n[2], det_r[0], det_r[1], det_r[2]])
            weight = w if _usable_weight(w, 6) else None
            inits = [invert_nonris(det_n, scenario)]
            try:
                inits.append(ris_ray_position(det_r, scenario))
            except EstimationError:
                pass
            cands = [
                estimate_position_single(eta, weight, scenario, init, rows=(0, 1, 2, 3, 4, 5))
                for init in inits
            ]
            est = min(cands, key=lambda e: e.objective)
            if not _inside_region(est.position, region, scenario):
                sub_w = None
                if weight is not None:
                    sub_w = weight[3:, 3:]
                    sub_w = sub_w if _usable_weight(sub_w, 3) else None
                est, _ = _ris_singleton_estimate(det_r, sub_w, scenario, region)
                est.flagged = True
        elif assoc.nonris_idx >= 0:
            pos = invert_nonris(nonris_detections[assoc.nonris_idx], scenario)
            est = PositionEstimate(pos, True, 0.0, 0)
        else:
            det_r = ris_detections[assoc.ris_idx]
            weight = w if _usable_weight(w, 3) else None
            est, _ = _ris_singleton_estimate(det_r, weight, scenario, region)
        estimates.append(est)
    return estimates


def _usable_weight(w, dim):
    return (
        w is not None
        and np.asarray(w).shape == (dim, dim)
        and np.all(np.isfinite(w))
        and np.all(np.diag(np.asarray(w)) > 0)
    )
