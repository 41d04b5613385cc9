"""Uncertain routing games: network model, TNTP ingestion, path
enumeration, cost maps, uncertainty sampling, and equilibrium solves.

Edge travel time is affine in the edge flow, t_e (1 + b_e l_e / c_e), with
an additive uniform noise term on edges touching a designated node set.
Path costs are edge sums, so the per-path cost field is the affine map
h -> Q^T R Q h + Q^T t + kappa where kappa collects per-path CVaR offsets
of the noise. The risk-averse Wardrop equilibrium is the solution of the
VI over the flow polytope, solvable by extragradient, Lemke pivoting, or
the complementarity-gap program.
"""

from __future__ import annotations

import hashlib
import heapq
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import lcp as lcp_mod
from .cvar import RiskLevel, cvar_from_values
from .vi import SimplexProduct, VectorField, ViSolution, extragradient_solve, natural_residual, spectral_norm

__all__ = [
    "Network",
    "OdPair",
    "OdSpec",
    "PathSet",
    "RoutingGame",
    "TntpParseError",
    "parse_tntp",
    "load_tntp",
    "builtin_network",
    "enumerate_paths",
    "edge_flows",
    "build_game",
    "path_cost_field",
    "sample_path_kappa",
    "true_path_kappa",
    "solve_cwe",
    "wardrop_gap",
    "replication_rng",
]

_USED_FLOW_TOL = 1e-6


class TntpParseError(ValueError):
    pass


@dataclass
class Network:
    """Directed graph with per-edge free-flow time, capacity, and
    congestion coefficient."""

    n_nodes: int
    tail: np.ndarray
    head: np.ndarray
    free_flow_time: np.ndarray
    capacity: np.ndarray
    congestion_coeff: np.ndarray

    def __post_init__(self):
        self.tail = np.asarray(self.tail, dtype=int)
        self.head = np.asarray(self.head, dtype=int)
        self.free_flow_time = np.asarray(self.free_flow_time, dtype=float)
        self.capacity = np.asarray(self.capacity, dtype=float)
        self.congestion_coeff = np.asarray(self.congestion_coeff, dtype=float)
        n_edges = len(self.tail)
        for name, arr in [
            ("head", self.head),
            ("free_flow_time", self.free_flow_time),
            ("capacity", self.capacity),
            ("congestion_coeff", self.congestion_coeff),
        ]:
            if len(arr) != n_edges:
                raise ValueError(f"edge array {name} has length {len(arr)}, expected {n_edges}")
        if np.any(self.tail == self.head):
            raise ValueError("self-loops are not allowed")
        for nodes in (self.tail, self.head):
            if np.any((nodes < 1) | (nodes > self.n_nodes)):
                raise ValueError("edge endpoint outside the node range")
        if np.any(self.free_flow_time <= 0) or np.any(self.capacity <= 0):
            raise ValueError("free-flow times and capacities must be positive")
        if np.any(self.congestion_coeff < 0):
            raise ValueError("congestion coefficients must be nonnegative")

    @property
    def n_edges(self) -> int:
        return len(self.tail)

    def with_congestion(self, b_e: float) -> "Network":
        return Network(
            n_nodes=self.n_nodes,
            tail=self.tail,
            head=self.head,
            free_flow_time=self.free_flow_time,
            capacity=self.capacity,
            congestion_coeff=np.full(self.n_edges, float(b_e)),
        )

    def out_edges(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {v: [] for v in range(1, self.n_nodes + 1)}
        for e in range(self.n_edges):
            adj[int(self.tail[e])].append(e)
        return adj


@dataclass(frozen=True)
class OdPair:
    origin: int
    destination: int
    demand: float
    paths_per_od: int

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("origin and destination must differ")
        if not np.isfinite(self.demand) or self.demand < 0:
            raise ValueError("demand must be finite and nonnegative")
        if self.paths_per_od < 1:
            raise ValueError("need at least one path per OD pair")


@dataclass
class OdSpec:
    pairs: Sequence[OdPair]

    def __post_init__(self):
        self.pairs = list(self.pairs)
        if not self.pairs:
            raise ValueError("need at least one OD pair")


@dataclass
class PathSet:
    """Simple paths grouped by OD pair with edge and OD incidence."""

    paths: list[tuple[int, ...]]
    od_of_path: np.ndarray  # OD index per path, nondecreasing
    edge_incidence: np.ndarray  # Q: |E| x |P|, 0/1
    od_incidence: np.ndarray  # B: |W| x |P|, 0/1

    @property
    def n_paths(self) -> int:
        return len(self.paths)


_META_RE = re.compile(r"<([^>]+)>\s*(\S*)")


def parse_tntp(text: str) -> Network:
    """Parse the plain-text transportation-network format.

    Metadata tags supply node and link counts; `~` lines are comments;
    data rows are `tail head capacity length fftt B power speed toll
    type ;`. Free-flow time and capacity are kept; the format's own
    congestion columns are ignored (coefficients are set per game).
    """
    n_nodes = None
    n_links = None
    rows = []
    in_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        if line.startswith("<"):
            match = _META_RE.match(line)
            if match:
                tag = match.group(1).strip().upper()
                if tag == "NUMBER OF NODES":
                    n_nodes = int(match.group(2))
                elif tag == "NUMBER OF LINKS":
                    n_links = int(match.group(2))
                elif tag == "END OF METADATA":
                    in_data = True
            continue
        if not in_data and n_nodes is None:
            raise TntpParseError(f"line {lineno}: data row before metadata")
        fields = line.rstrip(";").split()
        if len(fields) < 5:
            raise TntpParseError(f"line {lineno}: expected at least 5 columns, got {len(fields)}")
        try:
            tail = int(fields[0])
            head = int(fields[1])
            capacity = float(fields[2])
            fftt = float(fields[4])
        except ValueError as exc:
            raise TntpParseError(f"line {lineno}: malformed row ({exc})") from exc
        rows.append((lineno, tail, head, capacity, fftt))

    if n_nodes is None or n_links is None:
        raise TntpParseError("missing <NUMBER OF NODES> or <NUMBER OF LINKS> metadata")
    if len(rows) != n_links:
        raise TntpParseError(f"found {len(rows)} links, metadata promises {n_links}")
    for lineno, tail, head, _, _ in rows:
        if not (1 <= tail <= n_nodes and 1 <= head <= n_nodes):
            raise TntpParseError(f"line {lineno}: node id out of range 1..{n_nodes}")
    return Network(
        n_nodes=n_nodes,
        tail=np.array([r[1] for r in rows]),
        head=np.array([r[2] for r in rows]),
        capacity=np.array([r[3] for r in rows]),
        free_flow_time=np.array([r[4] for r in rows]),
        congestion_coeff=np.zeros(len(rows)),
    )


def load_tntp(path) -> Network:
    return parse_tntp(Path(path).read_text())


def builtin_network(name: str = "siouxfalls") -> Network:
    """Networks shipped with the package (currently `siouxfalls`)."""
    data_dir = Path(__file__).parent / "data"
    candidate = data_dir / f"{name}_net.tntp"
    if not candidate.exists():
        raise ValueError(f"no builtin network named {name!r}")
    return parse_tntp(candidate.read_text())


def _dijkstra_lex(adj, network: Network, source: int, target: int,
                  banned_edges: frozenset, banned_nodes: frozenset) -> Optional[tuple[float, tuple[int, ...]]]:
    """Shortest path by free-flow time, lexicographically smallest node
    sequence among ties. Returns (cost, nodes) or None."""
    heap = [(0.0, (source,))]
    settled = set()
    while heap:
        cost, nodes = heapq.heappop(heap)
        v = nodes[-1]
        if v == target:
            return cost, nodes
        if v in settled:
            continue
        settled.add(v)
        for e in adj[v]:
            if e in banned_edges:
                continue
            w = int(network.head[e])
            if w in banned_nodes or w in settled or w in nodes:
                continue
            heapq.heappush(heap, (cost + float(network.free_flow_time[e]), nodes + (w,)))
    return None


def _k_shortest_paths(network: Network, source: int, target: int, k: int) -> list[tuple[int, ...]]:
    """Yen-style loopless k-shortest paths by free-flow travel time with
    deterministic (cost, node-sequence) tie-breaking."""
    adj = network.out_edges()
    edge_of = {(int(network.tail[e]), int(network.head[e])): e for e in range(network.n_edges)}

    first = _dijkstra_lex(adj, network, source, target, frozenset(), frozenset())
    if first is None:
        return []
    accepted = [first]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen = {first[1]}

    while len(accepted) < k:
        _, last_path = accepted[-1]
        for i in range(len(last_path) - 1):
            spur_node = last_path[i]
            root = last_path[: i + 1]
            banned_edges = set()
            for _, path in accepted:
                if path[: i + 1] == root and len(path) > i + 1:
                    banned_edges.add(edge_of[(path[i], path[i + 1])])
            banned_nodes = frozenset(root[:-1])
            spur = _dijkstra_lex(adj, network, spur_node, target, frozenset(banned_edges), banned_nodes)
            if spur is None:
                continue
            spur_cost, spur_nodes = spur
            root_cost = sum(
                float(network.free_flow_time[edge_of[(root[j], root[j + 1])]])
                for j in range(len(root) - 1)
            )
            total = root + spur_nodes[1:]
            if total not in seen:
                seen.add(total)
                heapq.heappush(candidates, (root_cost + spur_cost, total))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates))
    return [nodes for _, nodes in accepted]


def enumerate_paths(network: Network, od_spec: OdSpec) -> PathSet:
    """For each OD pair, the k simple paths with smallest free-flow travel
    time; builds the edge and OD incidence matrices."""
    edge_of = {(int(network.tail[e]), int(network.head[e])): e for e in range(network.n_edges)}
    paths: list[tuple[int, ...]] = []
    od_of_path: list[int] = []
    for w, od in enumerate(od_spec.pairs):
        found = _k_shortest_paths(network, od.origin, od.destination, od.paths_per_od)
        if len(found) < od.paths_per_od:
            raise ValueError(
                f"OD pair ({od.origin}, {od.destination}) has only {len(found)} simple paths, "
                f"requested {od.paths_per_od}"
            )
        paths.extend(found)
        od_of_path.extend([w] * len(found))

    n_paths = len(paths)
    q_inc = np.zeros((network.n_edges, n_paths))
    b_inc = np.zeros((len(od_spec.pairs), n_paths))
    for p, nodes in enumerate(paths):
        for j in range(len(nodes) - 1):
            q_inc[edge_of[(nodes[j], nodes[j + 1])], p] = 1.0
        b_inc[od_of_path[p], p] = 1.0
    return PathSet(
        paths=paths,
        od_of_path=np.asarray(od_of_path, dtype=int),
        edge_incidence=q_inc,
        od_incidence=b_inc,
    )


def edge_flows(path_set: PathSet, h: np.ndarray) -> np.ndarray:
    """Edge loads Q h induced by path flows h."""
    h = np.asarray(h, dtype=float)
    if h.shape != (path_set.n_paths,):
        raise ValueError(f"flow vector must have length {path_set.n_paths}")
    if np.any(h < -1e-12):
        raise ValueError("path flows must be nonnegative")
    return path_set.edge_incidence @ h


@dataclass
class RoutingGame:
    """Immutable bundle: network, OD demands, enumerated paths, per-edge
    noise supports, and the common risk level."""

    network: Network
    od_spec: OdSpec
    path_set: PathSet
    noise_lo: np.ndarray  # per-edge uniform support [lo, hi]; lo = hi = 0 when deterministic
    noise_hi: np.ndarray
    alpha: RiskLevel

    def __post_init__(self):
        self.noise_lo = np.asarray(self.noise_lo, dtype=float)
        self.noise_hi = np.asarray(self.noise_hi, dtype=float)
        n_edges = self.network.n_edges
        if self.noise_lo.shape != (n_edges,) or self.noise_hi.shape != (n_edges,):
            raise ValueError("noise supports must be per-edge")
        if np.any(self.noise_lo < 0) or np.any(self.noise_hi < self.noise_lo):
            raise ValueError("need 0 <= lo <= hi per edge")
        if self.path_set.edge_incidence.shape != (n_edges, self.path_set.n_paths):
            raise ValueError("edge incidence inconsistent with the network")

    @property
    def congestion_diag(self) -> np.ndarray:
        """Diagonal of R: b_e t_e / c_e per edge."""
        net = self.network
        return net.congestion_coeff * net.free_flow_time / net.capacity

    @property
    def demands(self) -> np.ndarray:
        return np.array([od.demand for od in self.od_spec.pairs], dtype=float)

    @property
    def uncertain_edges(self) -> np.ndarray:
        return np.nonzero(self.noise_hi > self.noise_lo)[0]

    def feasible_flows(self) -> SimplexProduct:
        blocks = []
        for w, od in enumerate(self.od_spec.pairs):
            blocks.append((int(self.path_set.od_incidence[w].sum()), od.demand))
        return SimplexProduct(blocks=blocks)


def build_game(
    network: Network,
    od_spec: OdSpec,
    alpha: RiskLevel,
    b_e: float = 100.0,
    uncertain_nodes: Sequence[int] = (10, 16, 17),
    noise_scale: float = 0.5,
) -> RoutingGame:
    """Assemble the game: congestion coefficient b_e on every edge, paths
    by free-flow k-shortest enumeration, and uniform noise on [0,
    noise_scale * t_e] for every edge whose tail or head lies in
    uncertain_nodes."""
    net = network.with_congestion(b_e)
    path_set = enumerate_paths(net, od_spec)
    node_set = set(int(v) for v in uncertain_nodes)
    uncertain = np.array(
        [int(t) in node_set or int(h) in node_set for t, h in zip(net.tail, net.head)]
    )
    noise_hi = np.where(uncertain, noise_scale * net.free_flow_time, 0.0)
    return RoutingGame(
        network=net,
        od_spec=od_spec,
        path_set=path_set,
        noise_lo=np.zeros(net.n_edges),
        noise_hi=noise_hi,
        alpha=alpha,
    )


def path_cost_field(game: RoutingGame, kappa: np.ndarray) -> VectorField:
    """Affine CVaR path-cost map h -> Q^T R Q h + Q^T t + kappa."""
    kappa = np.asarray(kappa, dtype=float)
    q_inc = game.path_set.edge_incidence
    if len(kappa) != game.path_set.n_paths:
        raise ValueError(f"kappa must have length {game.path_set.n_paths}")
    a_mat = q_inc.T @ (game.congestion_diag[:, None] * q_inc)
    const = q_inc.T @ game.network.free_flow_time + kappa
    return VectorField(evaluator=lambda h: a_mat @ h + const, lipschitz_hint=spectral_norm(a_mat))


def replication_rng(master_seed: int, *stream_key: int) -> np.random.Generator:
    """Counter-based Philox generator on a substream derived from the
    master seed and a replication key; independent across keys."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in stream_key))
    return np.random.Generator(np.random.Philox(seq))


def _kappa_from_noise(game: RoutingGame, draws: np.ndarray, uncertain: np.ndarray) -> np.ndarray:
    """Per-path empirical CVaR of path noise sums for draws of shape
    (N, len(uncertain))."""
    alpha = game.alpha.alpha
    q_unc = game.path_set.edge_incidence[uncertain]
    kappa = np.zeros(game.path_set.n_paths)
    for p in range(game.path_set.n_paths):
        cols = np.nonzero(q_unc[:, p])[0]
        if len(cols) == 0:
            continue
        sums = draws[:, cols].sum(axis=1)
        kappa[p], _ = cvar_from_values(sums, alpha)
    return kappa


def sample_path_kappa(game: RoutingGame, n_samples: int, seed: int, *stream_key: int) -> np.ndarray:
    """Empirical per-path CVaR offsets from N i.i.d. edge-noise vectors.

    Paths without uncertain edges get exactly zero. Bitwise reproducible
    for equal (n_samples, seed, stream_key); distinct stream keys give
    statistically independent replications under one master seed.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    uncertain = game.uncertain_edges
    if len(uncertain) == 0:
        return np.zeros(game.path_set.n_paths)
    rng = replication_rng(seed, *stream_key)
    lo = game.noise_lo[uncertain]
    hi = game.noise_hi[uncertain]
    draws = rng.uniform(lo, hi, size=(n_samples, len(uncertain)))
    return _kappa_from_noise(game, draws, uncertain)


def true_path_kappa(
    game: RoutingGame,
    n_ref: int = 10**6,
    seed_ref: int = 42,
    cache_dir: Optional[Path] = None,
) -> np.ndarray:
    """Reference per-path CVaR offsets from one huge fixed-seed batch.

    The tail of a sum of independent uniforms has no closed form, so the
    reference is Monte Carlo at n_ref draws, cached to disk with its
    parameters when a cache directory is given.
    """
    if n_ref < 10**5:
        raise ValueError("reference batch must use at least 1e5 samples")
    key = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256()
        digest.update(np.asarray([n_ref, seed_ref, game.alpha.alpha]).tobytes())
        digest.update(game.noise_lo.tobytes())
        digest.update(game.noise_hi.tobytes())
        digest.update(game.path_set.edge_incidence.tobytes())
        key = cache_dir / f"kappa_ref_{digest.hexdigest()[:16]}.npz"
        if key.exists():
            return np.load(key)["kappa"]
    kappa = sample_path_kappa(game, n_ref, seed_ref)
    if key is not None:
        np.savez(key, kappa=kappa, n_ref=n_ref, seed_ref=seed_ref, alpha=game.alpha.alpha)
    return kappa


def wardrop_gap(game: RoutingGame, kappa: np.ndarray, h: np.ndarray) -> float:
    """Largest excess of a used path's CVaR cost over its OD minimum.

    Zero (within solver tolerance) exactly when flow is placed only on
    minimum-CVaR paths.
    """
    costs = path_cost_field(game, kappa)(np.asarray(h, dtype=float))
    gap = 0.0
    for w in range(len(game.od_spec.pairs)):
        members = np.nonzero(game.path_set.od_incidence[w])[0]
        min_cost = costs[members].min()
        used = members[h[members] > _USED_FLOW_TOL]
        if len(used):
            gap = max(gap, float(costs[used].max() - min_cost))
    return gap


def solve_cwe(
    game: RoutingGame,
    kappa: np.ndarray,
    method: str = "extragradient",
    tol: float = 1e-9,
    max_iter: int = 200000,
    x0: Optional[np.ndarray] = None,
    wardrop_tol: float = 1e-5,
) -> ViSolution:
    """Equilibrium flow for the game under a fixed per-path CVaR offset.

    Methods: `extragradient` on the flow polytope VI, `lemke`
    complementary pivoting on the LCP, or `qp` complementarity-gap
    minimization. The returned flow is certified against the equilibrium
    complementarity condition at wardrop_tol.
    """
    kappa = np.asarray(kappa, dtype=float)
    feasible = game.feasible_flows()
    field = path_cost_field(game, kappa)

    if method == "extragradient":
        sol = extragradient_solve(feasible, field, tol=tol, max_iter=max_iter, x0=x0)
    elif method in ("lemke", "qp"):
        problem = lcp_mod.assemble_lcp(game, kappa)
        if method == "lemke":
            lcp_sol = lcp_mod.solve_lcp_lemke(problem)
        else:
            lcp_sol = lcp_mod.solve_lcp_qp(problem)
        h = feasible.project(lcp_sol.x[: game.path_set.n_paths])
        sol = ViSolution(
            x_star=h,
            residual=natural_residual(feasible, field, h),
            iterations=0,
            converged=lcp_sol.feasible,
        )
    else:
        raise ValueError(f"unknown method {method!r}; choose extragradient, lemke, or qp")

    gap = wardrop_gap(game, kappa, sol.x_star)
    if gap > wardrop_tol:
        raise RuntimeError(
            f"solver returned a flow violating the equilibrium condition "
            f"(gap {gap:.3e} > {wardrop_tol:.1e}, method {method})"
        )
    return sol
