"""Monte Carlo convergence experiments for sample-average equilibria.

For each sample size N the harness draws R independent replications of the
empirical per-path CVaR offsets, solves each replication's equilibrium,
and records the distance to a high-accuracy reference equilibrium. Output
is a flat results table plus one empirical-CDF table per sample size, all
byte-identical across repeated runs with the same configuration (worker
count and scheduling order do not affect the files).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bounds import BoundInputs, exponential_bound_routing
from .cvar import RiskLevel
from .routing import (
    OdPair,
    OdSpec,
    RoutingGame,
    build_game,
    builtin_network,
    load_tntp,
    sample_path_kappa,
    solve_cwe,
    true_path_kappa,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "BoundComparison",
    "ConfigError",
    "parse_config",
    "load_config",
    "default_config_text",
    "build_configured_game",
    "run_experiment",
    "routing_bound_inputs",
    "compare_bounds",
]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Flat description of one convergence experiment."""

    network: str = "builtin:siouxfalls"
    alpha: float = 0.05
    b_e: float = 100.0
    uncertain_nodes: tuple[int, ...] = (10, 16, 17)
    noise_scale: float = 0.5
    ods: tuple[tuple[int, int, float, int], ...] = (
        (1, 19, 300.0, 10),
        (13, 8, 600.0, 10),
        (12, 18, 200.0, 10),
    )
    sample_sizes: tuple[int, ...] = (50, 500, 5000)
    replications: int = 500
    master_seed: int = 20240817
    epsilon: float = 1.0
    zeta: float = 0.05
    ref_samples: int = 10**6
    ref_seed: int = 42
    solver: str = "lemke"

    def __post_init__(self):
        if self.replications < 200:
            raise ConfigError(f"need at least 200 replications, got {self.replications}")
        if not self.sample_sizes or any(n < 1 for n in self.sample_sizes):
            raise ConfigError("sample sizes must be positive")
        if len(set(self.sample_sizes)) != len(self.sample_sizes):
            raise ConfigError("duplicate sample sizes")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epsilon <= 0 or not 0 < self.zeta < 1:
            raise ConfigError("need epsilon > 0 and zeta in (0, 1)")
        if not self.ods:
            raise ConfigError("need at least one od line")


_LIST_KEYS = {"sample_sizes", "uncertain_nodes"}
_INT_KEYS = {"replications", "master_seed", "ref_samples", "ref_seed"}
_FLOAT_KEYS = {"alpha", "b_e", "noise_scale", "epsilon", "zeta"}
_STR_KEYS = {"network", "solver"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat `key = value` experiment format.

    `#` starts a comment; the `od` key repeats, one `origin destination
    demand paths` quadruple per line; list values are comma-separated.
    """
    kwargs: dict = {}
    ods: list[tuple[int, int, float, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        try:
            if key == "od":
                parts = value.split()
                if len(parts) != 4:
                    raise ValueError("od takes: origin destination demand paths")
                ods.append((int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])))
            elif key in _LIST_KEYS:
                kwargs[key] = tuple(int(v) for v in value.replace(",", " ").split())
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _STR_KEYS:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    if ods:
        kwargs["ods"] = tuple(ods)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def default_config_text() -> str:
    cfg_path = Path(__file__).parent / "data" / "siouxfalls.cfg"
    return cfg_path.read_text()


def build_configured_game(config: ExperimentConfig) -> RoutingGame:
    if config.network.startswith("builtin:"):
        network = builtin_network(config.network.split(":", 1)[1])
    else:
        network = load_tntp(config.network)
    od_spec = OdSpec(
        pairs=[OdPair(origin=o, destination=d, demand=dem, paths_per_od=k)
               for o, d, dem, k in config.ods]
    )
    return build_game(
        network,
        od_spec,
        RiskLevel(config.alpha),
        b_e=config.b_e,
        uncertain_nodes=config.uncertain_nodes,
        noise_scale=config.noise_scale,
    )


@dataclass
class RepRecord:
    n_samples: int
    rep: int
    deviation: float
    residual: float
    status: str


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    h_ref: np.ndarray
    records: list[RepRecord]
    results_path: Optional[Path] = None
    cdf_paths: dict[int, Path] = field(default_factory=dict)

    def deviations(self, n_samples: int) -> np.ndarray:
        return np.array(
            [r.deviation for r in self.records if r.n_samples == n_samples and r.status == "ok"]
        )

    def failure_fraction(self) -> float:
        bad = sum(1 for r in self.records if r.status != "ok")
        return bad / len(self.records)

    @property
    def healthy(self) -> bool:
        return self.failure_fraction() <= 0.01


def _run_rep(game: RoutingGame, n_samples: int, master_seed: int, n_index: int, rep: int,
             h_ref: np.ndarray, solver: str) -> RepRecord:
    try:
        kappa_hat = sample_path_kappa(game, n_samples, master_seed, n_index, rep)
        sol = solve_cwe(game, kappa_hat, method=solver)
        deviation = float(np.linalg.norm(sol.x_star - h_ref))
        return RepRecord(n_samples, rep, deviation, sol.residual, "ok")
    except Exception as exc:  # recorded per replication, judged in bulk
        return RepRecord(n_samples, rep, math.nan, math.nan, f"fail:{type(exc).__name__}")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_results_csv(path: Path, records: Sequence[RepRecord]) -> None:
    lines = ["n_samples,rep,deviation,residual,status"]
    for r in records:
        lines.append(f"{r.n_samples},{r.rep},{_fmt(r.deviation)},{_fmt(r.residual)},{r.status}")
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _write_cdf_csv(path: Path, deviations: np.ndarray) -> None:
    devs = np.sort(np.asarray(deviations, dtype=float))
    n = len(devs)
    lines = ["deviation,probability"]
    for k, d in enumerate(devs, start=1):
        lines.append(f"{_fmt(float(d))},{_fmt(k / n)}")
    path.write_text("\n".join(lines) + "\n", newline="\n")


def run_experiment(
    config: ExperimentConfig,
    output_dir,
    workers: int = 1,
    cache_dir=None,
    game: Optional[RoutingGame] = None,
    progress=None,
) -> ExperimentResult:
    """Run the full replication grid and write results.csv plus one
    cdf_{N}.csv per sample size into output_dir.

    Output bytes depend only on the configuration, never on `workers`.
    Raises RuntimeError when more than 1% of replications fail.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if cache_dir is None:
        cache_dir = output_dir / "cache"
    if game is None:
        game = build_configured_game(config)

    kappa_ref = true_path_kappa(game, config.ref_samples, config.ref_seed, cache_dir=cache_dir)
    h_ref = solve_cwe(game, kappa_ref, method=config.solver).x_star

    tasks = [
        (game, n, config.master_seed, n_index, rep, h_ref, config.solver)
        for n_index, n in enumerate(config.sample_sizes)
        for rep in range(config.replications)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_rep, *zip(*tasks), chunksize=16))
    else:
        records = []
        for task in tasks:
            records.append(_run_rep(*task))
            if progress is not None:
                progress(len(records), len(tasks))
    records.sort(key=lambda r: (r.n_samples, r.rep))

    result = ExperimentResult(config=config, h_ref=h_ref, records=records)
    result.results_path = output_dir / "results.csv"
    _write_results_csv(result.results_path, records)
    for n in config.sample_sizes:
        path = output_dir / f"cdf_{n}.csv"
        _write_cdf_csv(path, result.deviations(n))
        result.cdf_paths[n] = path

    if not result.healthy:
        raise RuntimeError(
            f"{result.failure_fraction():.1%} of replications failed (tolerated: 1%); "
            f"see {result.results_path}"
        )
    return result


def routing_bound_inputs(
    game: RoutingGame, epsilon: float, delta_eps: Optional[float] = None
) -> BoundInputs:
    """Conservative constants for the routing-specific exponential bound.

    M is the largest per-path Lipschitz constant of the cost map over
    flows; the cost range [l, L] combines free-flow times, the congestion
    term at maximal per-OD loading, and the top of the noise support.
    """
    q_inc = game.path_set.edge_incidence
    a_mat = q_inc.T @ (game.congestion_diag[:, None] * q_inc)
    m_lip = float(np.max(np.linalg.norm(a_mat, axis=1)))
    base = q_inc.T @ game.network.free_flow_time
    demand_of_path = game.demands[game.path_set.od_of_path]
    noise_top = q_inc.T @ game.noise_hi
    ell = float(base.min())
    big_l = float((base + a_mat @ demand_of_path + noise_top).max())
    ods = [
        (int(game.path_set.od_incidence[w].sum()), float(od.demand))
        for w, od in enumerate(game.od_spec.pairs)
    ]
    return BoundInputs(
        n=game.path_set.n_paths,
        alpha=game.alpha,
        ell=ell,
        big_l=big_l,
        m_lip=m_lip,
        epsilon=epsilon,
        delta_eps=delta_eps if delta_eps is not None else epsilon,
        ods=ods,
    )


@dataclass
class BoundComparison:
    n_samples: int
    empirical_freq: float
    bound_value: float
    consistent: bool


def compare_bounds(result: ExperimentResult, game: Optional[RoutingGame] = None) -> list[BoundComparison]:
    """Per sample size, the empirical frequency of deviations of at least
    epsilon against the theoretical tail bound min(1, gamma exp(-beta N)).

    Consistency allows three binomial standard errors of slack: the bound
    is an upper tail estimate, never an equality.
    """
    if game is None:
        game = build_configured_game(result.config)
    inputs = routing_bound_inputs(game, result.config.epsilon)
    report = exponential_bound_routing(inputs)
    comparisons = []
    for n in result.config.sample_sizes:
        devs = result.deviations(n)
        if len(devs) == 0:
            raise RuntimeError(f"no successful replications at N={n}")
        freq = float(np.mean(devs >= result.config.epsilon))
        ln_tail = report.ln_gamma - report.beta * n
        bound = 1.0 if ln_tail >= 0 else math.exp(ln_tail)
        se = math.sqrt(freq * (1.0 - freq) / len(devs))
        comparisons.append(
            BoundComparison(
                n_samples=n,
                empirical_freq=freq,
                bound_value=bound,
                consistent=freq <= bound + 3.0 * se,
            )
        )
    return comparisons
