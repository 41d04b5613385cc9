"""Explicit sample-complexity constants for CVaR-based VI approximation.

Covers three bound families: the general uniform exponential bound built
from a covering of the decision set, the tighter bound for costs that
separate into a decision factor and an uncertainty factor, and the routing
specialization over the flow polytope. Covering numbers of simplices and
the flow polytope are exact big-integer binomials; the general gamma
constant is tracked in log-space because it overflows doubles quickly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cvar import RiskLevel

__all__ = [
    "BoundInputs",
    "BoundReport",
    "pointwise_deviation_bound",
    "covering_number_convex",
    "covering_number_compact",
    "covering_number_simplex",
    "covering_number_flow_polytope",
    "simplex_lattice_cover",
    "flow_polytope_cover",
    "exponential_bound_general",
    "exponential_bound_separable",
    "exponential_bound_routing",
    "sample_size",
    "delta_strongly_monotone",
    "set_deviation",
]


@dataclass
class BoundInputs:
    """Constants feeding the gamma/beta calculators.

    `delta_eps` is the field-accuracy level at which the bound constants
    are evaluated; it must be supplied except in the strongly monotone
    separable case, where delta(eps) = sigma * eps is derived.
    """

    n: int
    alpha: RiskLevel
    ell: float
    big_l: float
    m_lip: Optional[float] = None
    diam_x: Optional[float] = None
    epsilon: Optional[float] = None
    delta_eps: Optional[float] = None
    sigma: Optional[float] = None
    f_max: Optional[float] = None
    g_rge: Optional[float] = None
    ods: Optional[Sequence[tuple[int, float]]] = None  # (path_count, demand) per OD

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("decision dimension must be positive")
        if self.ell > self.big_l:
            raise ValueError("cost range is inverted")

    def resolved_delta(self) -> float:
        if self.delta_eps is not None:
            if self.delta_eps <= 0:
                raise ValueError("delta must be positive")
            return self.delta_eps
        if self.sigma is not None and self.epsilon is not None:
            # Strongly monotone separable case: delta(eps) = sigma * eps.
            return self.sigma * self.epsilon
        raise ValueError("delta_eps missing and not derivable (need sigma and epsilon)")


@dataclass
class BoundReport:
    gamma: float  # math.inf when it overflows doubles
    ln_gamma: float
    beta: float
    formula_id: str
    n_samples: Optional[int] = None
    gamma_exact: Optional[int] = None  # populated by the routing formula


def pointwise_deviation_bound(
    ell: float, big_l: float, alpha: RiskLevel, epsilon: float, n_samples: int, clip: bool = True
) -> float:
    """Probability bound 6 exp(-alpha eps^2 N / (11 (L-l)^2)) on the
    deviation between a CVaR and its N-sample empirical estimate.

    Values above one are vacuous; they are clipped to 1.0 for reporting
    unless clip=False.
    """
    if big_l <= ell:
        raise ValueError("degenerate cost support: need L > ell")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    raw = 6.0 * math.exp(-alpha.alpha * epsilon**2 * n_samples / (11.0 * (big_l - ell) ** 2))
    return min(raw, 1.0) if clip else raw


def covering_number_convex(n: int, vol_x: float, vol_b: float, epsilon: float) -> float:
    """Upper bound (3/eps)^n vol(X)/vol(B) on the eps-covering number of a
    convex set containing an eps-ball."""
    if min(n, vol_x, vol_b, epsilon) <= 0:
        raise ValueError("all arguments must be positive")
    return math.exp(n * math.log(3.0 / epsilon) + math.log(vol_x) - math.log(vol_b))


def _log_inv_ball_volume(n: int) -> float:
    # Lower bound vol(B) >= 2 pi^(n/2) / ceil(n/2)! used throughout, so the
    # constants match the printed bound formulas verbatim.
    return math.lgamma(math.ceil(n / 2) + 1) - math.log(2.0) - 0.5 * n * math.log(math.pi)


def covering_number_compact(n: int, diam_x: float, epsilon: float) -> float:
    """Upper bound (3 diam/eps)^n * ceil(n/2)!/(2 pi^(n/2)) on the
    eps-covering number of a compact set."""
    if n < 1 or diam_x <= 0:
        raise ValueError("need positive dimension and diameter")
    if not 0 < epsilon <= diam_x / 2:
        raise ValueError("epsilon must lie in (0, diam/2]")
    return math.exp(n * math.log(3.0 * diam_x / epsilon) + _log_inv_ball_volume(n))


def _simplex_k(n: int, d: float, epsilon: float) -> int:
    return max(1, math.ceil(math.sqrt(n) * d / epsilon))


def covering_number_simplex(n: int, d: float, epsilon: float) -> int:
    """Binomial bound C(n + K - 1, K - 1), K = ceil(sqrt(n) d / eps), on
    the eps-covering number of {x >= 0, sum x = d}."""
    if n < 1 or d <= 0 or epsilon <= 0:
        raise ValueError("need n >= 1, d > 0, eps > 0")
    k = _simplex_k(n, d, epsilon)
    return math.comb(n + k - 1, k - 1)


def covering_number_flow_polytope(ods: Sequence[tuple[int, float]], epsilon: float) -> int:
    """Product over OD pairs of per-simplex binomial bounds with
    K_w = ceil(|W| sqrt(|P_w|) d_w / eps)."""
    if not ods:
        raise ValueError("need at least one OD pair")
    if epsilon <= 0:
        raise ValueError("eps must be positive")
    w_count = len(ods)
    total = 1
    for path_count, demand in ods:
        k_w = max(1, math.ceil(w_count * math.sqrt(path_count) * demand / epsilon))
        total *= math.comb(path_count + k_w - 1, k_w - 1)
    return total


def simplex_lattice_cover(n: int, d: float, k: int) -> np.ndarray:
    """The explicit lattice {(i_1, .., i_n) d / K : i_s >= 0, sum i_s = K}.

    Every point of the simplex lies within sqrt(n) d / K of some lattice
    point. Note the lattice has C(n + K - 1, n - 1) points, which differs
    from the binomial reported by covering_number_simplex whenever n != K.
    """
    if n < 1 or k < 1 or d <= 0:
        raise ValueError("need n >= 1, K >= 1, d > 0")
    points = []
    for combo in itertools.combinations(range(k + n - 1), n - 1):
        # Stars and bars: bar positions -> composition of K into n parts.
        prev = -1
        parts = []
        for c in combo:
            parts.append(c - prev - 1)
            prev = c
        parts.append(k + n - 2 - prev)
        points.append(parts)
    return np.asarray(points, dtype=float) * (d / k)


def flow_polytope_cover(ods: Sequence[tuple[int, float]], epsilon: float) -> np.ndarray:
    """Cartesian product of per-OD lattice covers at radius eps/|W| each,
    giving an eps-cover of the feasible flow polytope."""
    w_count = len(ods)
    block_covers = []
    for path_count, demand in ods:
        k_w = max(1, math.ceil(w_count * math.sqrt(path_count) * demand / epsilon))
        block_covers.append(simplex_lattice_cover(path_count, demand, k_w))
    rows = []
    for combo in itertools.product(*[range(len(c)) for c in block_covers]):
        rows.append(np.concatenate([block_covers[w][i] for w, i in enumerate(combo)]))
    return np.asarray(rows)


def _finalize(ln_gamma: float, beta: float, formula_id: str, zeta: Optional[float],
              gamma_exact: Optional[int] = None) -> BoundReport:
    gamma = math.exp(ln_gamma) if ln_gamma < 700 else math.inf
    report = BoundReport(
        gamma=gamma, ln_gamma=ln_gamma, beta=beta, formula_id=formula_id, gamma_exact=gamma_exact
    )
    if zeta is not None:
        if not 0 < zeta < 1:
            raise ValueError("confidence parameter zeta must lie in (0, 1)")
        report.n_samples = max(1, math.ceil((ln_gamma - math.log(zeta)) / beta))
    return report


def exponential_bound_general(inputs: BoundInputs, zeta: Optional[float] = None) -> BoundReport:
    """gamma = 6 n (12 M diam / (delta alpha))^n ceil(n/2)!/(2 pi^(n/2)),
    beta = alpha delta^2 / (44 n (L - l)^2), evaluated at delta_eps."""
    if inputs.m_lip is None or inputs.diam_x is None:
        raise ValueError("general bound needs the Lipschitz constant and diam(X)")
    delta = inputs.resolved_delta()
    if not delta < inputs.diam_x / 2:
        raise ValueError("accuracy level must be below diam(X)/2")
    a = inputs.alpha.alpha
    n = inputs.n
    ln_gamma = (
        math.log(6 * n)
        + n * math.log(12.0 * inputs.m_lip * inputs.diam_x / (delta * a))
        + _log_inv_ball_volume(n)
    )
    beta = a * delta**2 / (44.0 * n * (inputs.big_l - inputs.ell) ** 2)
    return _finalize(ln_gamma, beta, "general", zeta)


def exponential_bound_separable(inputs: BoundInputs, zeta: Optional[float] = None) -> BoundReport:
    """gamma = 6 n, beta = alpha delta^2 / (11 n (f_max g_rge)^2); no
    dependence on the size of the decision set."""
    if not inputs.f_max or not inputs.g_rge:
        raise ValueError("separable bound needs positive f_max and g_rge")
    delta = inputs.resolved_delta()
    a = inputs.alpha.alpha
    ln_gamma = math.log(6 * inputs.n)
    beta = a * delta**2 / (11.0 * inputs.n * (inputs.f_max * inputs.g_rge) ** 2)
    return _finalize(ln_gamma, beta, "separable", zeta)


def exponential_bound_routing(inputs: BoundInputs, zeta: Optional[float] = None) -> BoundReport:
    """gamma = 6 |P| prod_w ceil(4 M |W| sqrt(|P_w|) / (delta alpha)),
    beta = alpha delta^2 / (44 |P| (L - l)^2)."""
    if inputs.ods is None or inputs.m_lip is None:
        raise ValueError("routing bound needs the OD table and the Lipschitz constant")
    delta = inputs.resolved_delta()
    a = inputs.alpha.alpha
    w_count = len(inputs.ods)
    p_total = sum(pc for pc, _ in inputs.ods)
    gamma_exact = 6 * p_total
    for path_count, _ in inputs.ods:
        gamma_exact *= math.ceil(4.0 * inputs.m_lip * w_count * math.sqrt(path_count) / (delta * a))
    beta = a * delta**2 / (44.0 * p_total * (inputs.big_l - inputs.ell) ** 2)
    ln_gamma = float(math.log(gamma_exact))
    return _finalize(ln_gamma, beta, "routing", zeta, gamma_exact=gamma_exact)


_FORMULAS = {
    "general": exponential_bound_general,
    "separable": exponential_bound_separable,
    "routing": exponential_bound_routing,
}


def sample_size(inputs: BoundInputs, zeta: float, formula: str = "general") -> int:
    """N(zeta, eps) = ceil((1/beta) ln(gamma/zeta)), floored at one."""
    if formula not in _FORMULAS:
        raise ValueError(f"unknown formula {formula!r}; choose from {sorted(_FORMULAS)}")
    return _FORMULAS[formula](inputs, zeta=zeta).n_samples


def delta_strongly_monotone(sigma: float, sup_dev: float) -> float:
    """Solution-set deviation bound sup_dev / sigma for strongly monotone
    separable fields with modulus sigma."""
    if sigma <= 0:
        raise ValueError("strong monotonicity modulus must be positive")
    return sup_dev / sigma


def set_deviation(a_set: np.ndarray, s_set: np.ndarray) -> float:
    """One-sided deviation sup_{a in A} dist(a, S); not symmetric."""
    a_set = np.atleast_2d(np.asarray(a_set, dtype=float))
    s_set = np.atleast_2d(np.asarray(s_set, dtype=float))
    if len(a_set) == 0 or len(s_set) == 0:
        raise ValueError("both sets must be nonempty")
    diffs = a_set[:, None, :] - s_set[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    return float(dists.min(axis=1).max())
