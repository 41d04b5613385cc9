"""Exact and empirical conditional value-at-risk of scalar random costs.

The empirical CVaR is the minimum over t of the piecewise-linear convex
objective t + (1/(N*alpha)) * sum([v_j - t]_+). We solve it exactly by the
order-statistic closed form (mean of the worst alpha-fraction, with an
interpolated term when N*alpha is fractional) rather than by iterative
minimization. A linear-programming route is provided for cross-checking.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "RiskLevel",
    "SampleBatch",
    "CvarEstimate",
    "CvarMethod",
    "DiscreteDistribution",
    "empirical_cvar",
    "empirical_cvar_lp",
    "cvar_discrete",
    "cvar_uniform_interval",
    "optimizer_bounds",
]

# Probability-accumulation slack when locating quantile/tail indices.
_PROB_TOL = 1e-12


class CvarMethod(enum.Enum):
    ORDER_STATISTIC = "order_statistic"
    SCALAR_MINIMIZATION = "scalar_minimization"
    LINEAR_PROGRAM = "linear_program"


@dataclass(frozen=True)
class RiskLevel:
    """Risk-aversion level; small alpha means high risk-aversion."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"risk level must lie strictly inside (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class SampleBatch:
    """Ordered i.i.d. scalar draws together with the seed that produced them."""

    values: tuple[float, ...]
    seed: int = 0
    source_tag: str = ""

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("sample batch must contain at least one draw")
        arr = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("sample batch contains non-finite values")
        object.__setattr__(self, "values", tuple(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def to_csv(self) -> str:
        """One value per line under a `value` header."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["value"])
        for v in self.values:
            writer.writerow([f"{v:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int = 0, source_tag: str = "") -> "SampleBatch":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["value"]:
            raise ValueError("sample CSV must start with a `value` header row")
        values = []
        for row in reader:
            if not row or not row[0].strip():
                continue
            values.append(float(row[0]))
        return cls(values=tuple(values), seed=seed, source_tag=source_tag)


@dataclass(frozen=True)
class CvarEstimate:
    value: float
    t_star: float
    method: CvarMethod


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support distribution given as (value, probability) atoms."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.atoms) == 0:
            raise ValueError("distribution needs at least one atom")
        probs = np.array([p for _, p in self.atoms], dtype=float)
        if np.any(probs < 0):
            raise ValueError("atom probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"atom probabilities sum to {probs.sum()}, expected 1")

    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms], dtype=float)

    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float)

    @classmethod
    def uniform_over(cls, values) -> "DiscreteDistribution":
        values = np.asarray(values, dtype=float)
        p = 1.0 / len(values)
        return cls(atoms=tuple((float(v), p) for v in values))


def _weighted_cvar(values: np.ndarray, probs: np.ndarray, alpha: float) -> tuple[float, float]:
    """CVaR and left-quantile t* of a finite-support random variable.

    Returns the mean of the upper-alpha tail: sort values descending,
    accumulate probability mass until alpha is reached, splitting the
    boundary atom proportionally. t* is the smallest value v with
    P(Z <= v) >= 1 - alpha.
    """
    order = np.argsort(-values, kind="stable")
    v = values[order]
    p = probs[order]
    cum = np.cumsum(p)
    # First atom index at which the accumulated tail mass reaches alpha.
    k = int(np.searchsorted(cum, alpha - _PROB_TOL, side="left"))
    k = min(k, len(v) - 1)
    head = float(np.dot(p[:k], v[:k]))
    mass_before = float(cum[k - 1]) if k > 0 else 0.0
    value = (head + (alpha - mass_before) * v[k]) / alpha

    # Left-side (1 - alpha)-quantile from the ascending CDF.
    va = v[::-1]
    ca = np.cumsum(p[::-1])
    j = int(np.searchsorted(ca, 1.0 - alpha - _PROB_TOL, side="left"))
    j = min(j, len(va) - 1)
    t_star = float(va[j])
    return float(value), t_star


def cvar_from_values(values: np.ndarray, alpha: float) -> tuple[float, float]:
    """Empirical CVaR (value, t*) of raw draws at level alpha."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    return _weighted_cvar(values, np.full(n, 1.0 / n), alpha)


def empirical_cvar(samples: SampleBatch, alpha: RiskLevel) -> CvarEstimate:
    """Exact minimum of t + (1/(N*alpha)) * sum([v_j - t]_+) over t.

    Computed by the order-statistic closed form; t* is reported as the left
    endpoint of the optimizer interval (the value-at-risk).
    """
    value, t_star = cvar_from_values(samples.as_array(), alpha.alpha)
    return CvarEstimate(value=value, t_star=t_star, method=CvarMethod.ORDER_STATISTIC)


def cvar_discrete(dist: DiscreteDistribution, alpha: RiskLevel) -> CvarEstimate:
    """Exact CVaR of a finite-support random variable."""
    value, t_star = _weighted_cvar(dist.values(), dist.probabilities(), alpha.alpha)
    return CvarEstimate(value=value, t_star=t_star, method=CvarMethod.ORDER_STATISTIC)


def cvar_uniform_interval(lo: float, hi: float, alpha: RiskLevel) -> float:
    """CVaR of U(lo, hi): the mean of its upper-alpha tail."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    return hi - alpha.alpha * (hi - lo) / 2.0


def empirical_cvar_lp(samples: SampleBatch, alpha: RiskLevel) -> CvarEstimate:
    """Empirical CVaR by the linear program

        min  t + (1/(N*alpha)) * sum_j y_j
        s.t. y_j >= v_j - t,  y_j >= 0.

    Independent of the order-statistic route; agrees with it to 1e-10.
    """
    v = samples.as_array()
    n = len(v)
    a = alpha.alpha
    # Variables: (t, y_1..y_N).
    c = np.concatenate([[1.0], np.full(n, 1.0 / (n * a))])
    a_ub = np.hstack([-np.ones((n, 1)), -np.eye(n)])
    b_ub = -v
    bounds = [(None, None)] + [(0.0, None)] * n
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"CVaR linear program failed: {res.message}")
    return CvarEstimate(value=float(res.fun), t_star=float(res.x[0]), method=CvarMethod.LINEAR_PROGRAM)


def optimizer_bounds(
    f_range_lo: float, f_range_hi: float, alpha: RiskLevel
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Compact intervals containing the CVaR program's optimizer t and its
    objective values: t in [lo, hi] and the objective in
    [lo, lo + (hi - lo)/alpha]."""
    if f_range_lo > f_range_hi:
        raise ValueError(f"inverted cost range [{f_range_lo}, {f_range_hi}]")
    lo, hi = f_range_lo, f_range_hi
    return (lo, hi), (lo, lo + (hi - lo) / alpha.alpha)
