import numpy as np
import pytest

from cvarvi.cvar import RiskLevel, cvar_uniform_interval
from cvarvi.routing import (
    Network,
    OdPair,
    OdSpec,
    TntpParseError,
    build_game,
    builtin_network,
    edge_flows,
    enumerate_paths,
    parse_tntp,
    path_cost_field,
    sample_path_kappa,
    solve_cwe,
    wardrop_gap,
)

MINIMAL_TNTP = """
<NUMBER OF NODES> 3
<NUMBER OF LINKS> 3
<END OF METADATA>
~ tail head capacity length fftt b power speed toll type ;
1 2 10.0 1 1.5 0.15 4 0 0 1 ;
2 3 20.0 1 2.5 0.15 4 0 0 1 ;
1 3 30.0 1 5.0 0.15 4 0 0 1 ;
"""


def diamond_network():
    """Four simple 1->4 paths with distinct free-flow times."""
    return Network(
        n_nodes=4,
        tail=[1, 1, 2, 2, 3, 3],
        head=[2, 3, 3, 4, 2, 4],
        free_flow_time=[1.0, 2.0, 0.5, 3.0, 0.25, 1.0],
        capacity=np.ones(6) * 10.0,
        congestion_coeff=np.ones(6),
    )


def all_simple_paths(network, source, target):
    """Exhaustive DFS oracle returning every simple path with its cost."""
    adj = network.out_edges()
    out = []

    def walk(nodes, cost):
        v = nodes[-1]
        if v == target:
            out.append((cost, tuple(nodes)))
            return
        for e in adj[v]:
            w = int(network.head[e])
            if w not in nodes:
                walk(nodes + [w], cost + float(network.free_flow_time[e]))

    walk([source], 0.0)
    return sorted(out)


class TestTntpParsing:
    def test_minimal(self):
        net = parse_tntp(MINIMAL_TNTP)
        assert net.n_nodes == 3 and net.n_edges == 3
        assert net.free_flow_time == pytest.approx([1.5, 2.5, 5.0])
        assert net.capacity == pytest.approx([10.0, 20.0, 30.0])

    def test_comments_and_blank_lines_anywhere(self):
        shuffled = MINIMAL_TNTP.replace("1 2 10.0", "~ noise line\n\n1 2 10.0")
        net = parse_tntp(shuffled)
        assert net.n_edges == 3

    def test_link_count_mismatch(self):
        bad = MINIMAL_TNTP.replace("<NUMBER OF LINKS> 3", "<NUMBER OF LINKS> 4")
        with pytest.raises(TntpParseError, match="metadata promises 4"):
            parse_tntp(bad)

    def test_node_out_of_range_names_line(self):
        bad = MINIMAL_TNTP.replace("2 3 20.0", "2 9 20.0")
        with pytest.raises(TntpParseError, match="line"):
            parse_tntp(bad)

    def test_malformed_row(self):
        bad = MINIMAL_TNTP.replace("20.0", "twenty")
        with pytest.raises(TntpParseError, match="malformed"):
            parse_tntp(bad)

    def test_self_loop_rejected(self):
        bad = MINIMAL_TNTP.replace("2 3 20.0", "2 2 20.0")
        with pytest.raises(ValueError, match="self-loop"):
            parse_tntp(bad)

    def test_builtin_sioux_falls_counts(self):
        net = builtin_network()
        assert net.n_nodes == 24
        assert net.n_edges == 76

    def test_unknown_builtin(self):
        with pytest.raises(ValueError):
            builtin_network("atlantis")


class TestPathEnumeration:
    def test_diamond_matches_exhaustive_oracle(self):
        net = diamond_network()
        oracle = all_simple_paths(net, 1, 4)
        for k in range(1, len(oracle) + 1):
            ps = enumerate_paths(net, OdSpec(pairs=[OdPair(1, 4, 1.0, k)]))
            got = []
            for p, nodes in enumerate(ps.paths):
                cost = float(ps.edge_incidence[:, p] @ net.free_flow_time)
                got.append((cost, nodes))
            assert got == oracle[:k]

    def test_too_many_paths_requested(self):
        net = diamond_network()
        with pytest.raises(ValueError, match=r"\(1, 4\)"):
            enumerate_paths(net, OdSpec(pairs=[OdPair(1, 4, 1.0, 99)]))

    def test_incidence_structure(self):
        net = diamond_network()
        ps = enumerate_paths(net, OdSpec(pairs=[OdPair(1, 4, 1.0, 2), OdPair(2, 4, 1.0, 2)]))
        assert ps.edge_incidence.shape == (6, 4)
        assert ps.od_incidence.sum(axis=0) == pytest.approx(np.ones(4))
        assert ps.od_incidence[0].sum() == 2 and ps.od_incidence[1].sum() == 2

    def test_deterministic_repeat(self):
        net = builtin_network()
        od = OdSpec(pairs=[OdPair(1, 19, 300, 10)])
        a = enumerate_paths(net, od)
        b = enumerate_paths(net, od)
        assert a.paths == b.paths


@pytest.fixture(scope="module")
def sioux_game():
    od = OdSpec(
        pairs=[OdPair(1, 19, 300, 10), OdPair(13, 8, 600, 10), OdPair(12, 18, 200, 10)]
    )
    return build_game(builtin_network(), od, RiskLevel(0.05))


class TestGameAssembly:
    def test_dimensions(self, sioux_game):
        assert sioux_game.path_set.n_paths == 30
        assert len(sioux_game.uncertain_edges) == 18

    def test_uncertain_edges_touch_marked_nodes(self, sioux_game):
        net = sioux_game.network
        marked = {10, 16, 17}
        for e in range(net.n_edges):
            touches = int(net.tail[e]) in marked or int(net.head[e]) in marked
            assert (sioux_game.noise_hi[e] > 0) == touches
            if touches:
                assert sioux_game.noise_hi[e] == pytest.approx(0.5 * net.free_flow_time[e])

    def test_congestion_diag(self, sioux_game):
        net = sioux_game.network
        expected = 100.0 * net.free_flow_time / net.capacity
        assert sioux_game.congestion_diag == pytest.approx(expected)

    def test_demands_vector(self, sioux_game):
        assert sioux_game.demands == pytest.approx([300.0, 600.0, 200.0])

    def test_edge_flows(self, sioux_game):
        h = sioux_game.feasible_flows().default_start()
        loads = edge_flows(sioux_game.path_set, h)
        assert loads.shape == (76,)
        assert loads.sum() == pytest.approx(
            float((sioux_game.path_set.edge_incidence @ h).sum())
        )
        with pytest.raises(ValueError):
            edge_flows(sioux_game.path_set, -h - 1.0)


class TestKappaSampling:
    def test_deterministic_paths_exactly_zero(self):
        od = OdSpec(
            pairs=[OdPair(1, 19, 300, 10), OdPair(13, 8, 600, 10), OdPair(12, 18, 200, 10)]
        )
        game = build_game(builtin_network(), od, RiskLevel(0.05))
        kappa = sample_path_kappa(game, 200, 5)
        q_unc = game.path_set.edge_incidence[game.uncertain_edges]
        for p in range(game.path_set.n_paths):
            if q_unc[:, p].sum() == 0:
                assert kappa[p] == 0.0
            else:
                assert kappa[p] > 0.0

    def test_bitwise_reproducible(self):
        od = OdSpec(pairs=[OdPair(1, 19, 300, 5)])
        game = build_game(builtin_network(), od, RiskLevel(0.05))
        a = sample_path_kappa(game, 100, 7, 1, 2)
        b = sample_path_kappa(game, 100, 7, 1, 2)
        c = sample_path_kappa(game, 100, 7, 1, 3)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_single_edge_matches_uniform_cvar(self):
        # A path whose only uncertain edge carries U(0, hi) noise must have
        # kappa close to the analytic uniform CVaR for large N.
        od = OdSpec(pairs=[OdPair(16, 17, 1.0, 1)])
        game = build_game(builtin_network(), od, RiskLevel(0.05))
        assert game.path_set.paths[0] == (16, 17)
        e = np.nonzero(game.path_set.edge_incidence[:, 0])[0][0]
        hi = game.noise_hi[e]
        assert hi > 0
        kappa = sample_path_kappa(game, 100000, 3)
        exact = cvar_uniform_interval(0.0, hi, RiskLevel(0.05))
        assert kappa[0] == pytest.approx(exact, rel=5e-3)


class TestSolveAndCertificate:
    def test_two_path_toy_analytic(self):
        # One OD, two disjoint routes with distinct congestion: interior split.
        net = Network(
            n_nodes=4,
            tail=[1, 2, 1, 3],
            head=[2, 4, 3, 4],
            free_flow_time=[1.0, 1.0, 1.0, 1.0],
            capacity=[1.0, 1.0, 1.0, 1.0],
            congestion_coeff=[1.0, 1.0, 1.0, 1.0],
        )
        od = OdSpec(pairs=[OdPair(1, 4, 1.0, 2)])
        game = build_game(net, od, RiskLevel(0.5), b_e=1.0, uncertain_nodes=())
        # Both paths symmetric: equilibrium splits demand evenly.
        sol = solve_cwe(game, np.zeros(2), method="extragradient")
        assert sol.x_star == pytest.approx([0.5, 0.5], abs=1e-7)
        assert wardrop_gap(game, np.zeros(2), sol.x_star) < 1e-8

    def test_wardrop_gap_flags_bad_flow(self):
        od = OdSpec(pairs=[OdPair(1, 19, 300, 10)])
        game = build_game(builtin_network(), od, RiskLevel(0.05))
        kappa = sample_path_kappa(game, 100, 0)
        uniform = game.feasible_flows().default_start()
        assert wardrop_gap(game, kappa, uniform) > 1e-3

    def test_unknown_method(self):
        od = OdSpec(pairs=[OdPair(1, 19, 300, 3)])
        game = build_game(builtin_network(), od, RiskLevel(0.05))
        with pytest.raises(ValueError, match="unknown method"):
            solve_cwe(game, np.zeros(3), method="magic")

    def test_field_monotone_on_sioux(self):
        from cvarvi.vi import check_monotone

        od = OdSpec(
            pairs=[OdPair(1, 19, 300, 10), OdPair(13, 8, 600, 10), OdPair(12, 18, 200, 10)]
        )
        game = build_game(builtin_network(), od, RiskLevel(0.05))
        field = path_cost_field(game, np.zeros(30))
        report = check_monotone(field, game.feasible_flows(), trials=300)
        assert report.violations == 0
