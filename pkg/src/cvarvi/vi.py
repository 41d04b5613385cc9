"""Finite-dimensional variational inequalities over compact convex sets.

Feasible sets are boxes, products of scaled simplices (the flow polytope of
the routing game), or described polytopes (membership checks only). The
solver is the projection-based extragradient method; solution quality is
measured by the natural residual ||x - proj(x - F(x))||, which vanishes
exactly at solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "FeasibleSet",
    "Box",
    "SimplexProduct",
    "Polytope",
    "VectorField",
    "ViSolution",
    "MonotonicityReport",
    "affine_field",
    "spectral_norm",
    "project_simplex",
    "project",
    "natural_residual",
    "extragradient_solve",
    "check_monotone",
]

_FEASIBILITY_TOL = 1e-9


def project_simplex(y: np.ndarray, demand: float) -> np.ndarray:
    """Euclidean projection of y onto {h >= 0, sum(h) = demand}.

    Sort-threshold algorithm; ties are resolved by the stable descending
    sort, so the output is deterministic.
    """
    y = np.asarray(y, dtype=float)
    if demand == 0.0:
        return np.zeros_like(y)
    n = len(y)
    u = -np.sort(-y, kind="stable")
    css = np.cumsum(u)
    ks = np.arange(1, n + 1)
    cond = u - (css - demand) / ks > 0
    k = int(ks[cond][-1]) if cond.any() else n
    tau = (css[k - 1] - demand) / k
    return np.maximum(y - tau, 0.0)


class FeasibleSet:
    """Base class: nonempty compact convex feasible set."""

    dimension: int

    def project(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x: np.ndarray, tol: float = _FEASIBILITY_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - self.project(x))) <= tol

    def default_start(self) -> np.ndarray:
        raise NotImplementedError

    def _check_dimension(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dimension,):
            raise ValueError(f"expected vector of dimension {self.dimension}, got shape {y.shape}")
        return y


@dataclass
class Box(FeasibleSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(self.lo > self.hi):
            raise ValueError("box has empty coordinate range")
        self.dimension = len(self.lo)

    def project(self, y):
        y = self._check_dimension(y)
        return np.clip(y, self.lo, self.hi)

    def sample(self, rng):
        return rng.uniform(self.lo, self.hi)

    def default_start(self):
        return 0.5 * (self.lo + self.hi)


@dataclass
class SimplexProduct(FeasibleSet):
    """Product of scaled simplices {h >= 0, sum(h_block) = demand}."""

    blocks: Sequence[tuple[int, float]]

    def __post_init__(self):
        self.blocks = [(int(n), float(d)) for n, d in self.blocks]
        for n, d in self.blocks:
            if n < 1:
                raise ValueError("simplex block needs positive dimension")
            if d < 0:
                raise ValueError("simplex block demand must be nonnegative")
        self.dimension = sum(n for n, _ in self.blocks)

    def _block_slices(self):
        start = 0
        for n, d in self.blocks:
            yield slice(start, start + n), d
            start += n

    def project(self, y):
        y = self._check_dimension(y)
        out = np.empty_like(y)
        for sl, d in self._block_slices():
            out[sl] = project_simplex(y[sl], d)
        return out

    def sample(self, rng):
        parts = []
        for n, d in self.blocks:
            parts.append(d * rng.dirichlet(np.ones(n)))
        return np.concatenate(parts)

    def default_start(self):
        # Demand spread uniformly over each block: interior start.
        parts = [np.full(n, d / n) for n, d in self.blocks]
        return np.concatenate(parts)


@dataclass
class Polytope(FeasibleSet):
    """{x : A x <= b}; descriptive only, supports membership checks."""

    a_mat: np.ndarray
    b_vec: np.ndarray

    def __post_init__(self):
        self.a_mat = np.asarray(self.a_mat, dtype=float)
        self.b_vec = np.asarray(self.b_vec, dtype=float)
        if self.a_mat.ndim != 2 or self.a_mat.shape[0] != len(self.b_vec):
            raise ValueError("inconsistent polytope description")
        self.dimension = self.a_mat.shape[1]

    def project(self, y):
        raise NotImplementedError("polytope sets support validation only")

    def contains(self, x, tol=_FEASIBILITY_TOL):
        x = self._check_dimension(x)
        return bool(np.all(self.a_mat @ x - self.b_vec <= tol))


@dataclass
class VectorField:
    """Deterministic evaluator x -> F(x) with an optional Lipschitz hint."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    lipschitz_hint: Optional[float] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(x), dtype=float)


@dataclass
class ViSolution:
    x_star: np.ndarray
    residual: float
    iterations: int
    converged: bool


@dataclass
class MonotonicityReport:
    violations: int
    worst_value: float


def spectral_norm(a: np.ndarray, iterations: int = 100) -> float:
    """Spectral norm estimate by power iteration on A^T A, fixed start."""
    a = np.asarray(a, dtype=float)
    v = np.ones(a.shape[1]) / np.sqrt(a.shape[1])
    for _ in range(iterations):
        w = a.T @ (a @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(a @ v))


def affine_field(a: np.ndarray, b: np.ndarray) -> VectorField:
    """Field x -> A x + b with a power-iteration Lipschitz hint."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return VectorField(evaluator=lambda x: a @ x + b, lipschitz_hint=spectral_norm(a))


def project(feasible: FeasibleSet, y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the feasible set."""
    return feasible.project(y)


def natural_residual(feasible: FeasibleSet, field: VectorField, x: np.ndarray) -> float:
    """||x - proj(x - F(x))||; zero exactly at VI solutions."""
    x = np.asarray(x, dtype=float)
    infeas = float(np.linalg.norm(x - feasible.project(x)))
    if infeas > _FEASIBILITY_TOL:
        raise ValueError(f"point is infeasible (distance {infeas:.3e} to the set)")
    return float(np.linalg.norm(x - feasible.project(x - field(x))))


def extragradient_solve(
    feasible: FeasibleSet,
    field: VectorField,
    step: Optional[float] = None,
    tol: float = 1e-9,
    max_iter: int = 200000,
    x0: Optional[np.ndarray] = None,
) -> ViSolution:
    """Extragradient iteration y = proj(x - s F(x)), x+ = proj(x - s F(y)).

    Converges for monotone Lipschitz fields with s < 1/L; the default step
    is 0.9 / lipschitz_hint.
    """
    if step is None:
        if not field.lipschitz_hint:
            raise ValueError("no step supplied and the field carries no Lipschitz hint")
        step = 0.9 / field.lipschitz_hint
    if step <= 0:
        raise ValueError("step must be positive")

    x = feasible.project(np.asarray(x0, dtype=float)) if x0 is not None else feasible.default_start()
    residual = np.inf
    for it in range(max_iter):
        fx = field(x)
        if not np.all(np.isfinite(fx)):
            raise FloatingPointError(f"field returned non-finite values at iteration {it}: x={x}")
        residual = float(np.linalg.norm(x - feasible.project(x - fx)))
        if residual <= tol:
            return ViSolution(x_star=x, residual=residual, iterations=it, converged=True)
        y = feasible.project(x - step * fx)
        fy = field(y)
        if not np.all(np.isfinite(fy)):
            raise FloatingPointError(f"field returned non-finite values at iteration {it}: y={y}")
        x = feasible.project(x - step * fy)
    residual = float(np.linalg.norm(x - feasible.project(x - field(x))))
    return ViSolution(x_star=x, residual=residual, iterations=max_iter, converged=residual <= tol)


def check_monotone(
    field: VectorField, feasible: FeasibleSet, trials: int = 1000, rng_seed: int = 0
) -> MonotonicityReport:
    """Sample point pairs and report violations of
    (F(x) - F(x'))^T (x - x') >= 0 below -1e-10."""
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(rng_seed)
    violations = 0
    worst = np.inf
    for _ in range(trials):
        x = feasible.sample(rng)
        xp = feasible.sample(rng)
        inner = float(np.dot(field(x) - field(xp), x - xp))
        worst = min(worst, inner)
        if inner < -1e-10:
            violations += 1
    return MonotonicityReport(violations=violations, worst_value=worst)
