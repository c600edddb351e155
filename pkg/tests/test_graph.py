import itertools

import numpy as np
import pytest

from graphpass.exceptions import (
    BadParams,
    DisconnectedGraph,
    MalformedFile,
    NonPositiveWeightOrMeasure,
    NonSymmetricWeight,
    SelfLoop,
    UnknownVertex,
)
from graphpass.graph import (
    Lattice,
    WeightedGraph,
    build_graph,
    distances_from,
    generate,
    graph_distance,
    read_graph,
    truncate_ball,
    write_graph,
)


class TestBuildGraph:
    def test_smallest_connected_graph(self):
        g = build_graph(["x1", "x2"], [("x1", "x2", 1.0)], {"x1": 1.0, "x2": 1.0})
        assert g.mu_min == 1.0
        assert g.n_edges == 1

    def test_path_is_connected(self):
        g = build_graph([1, 2, 3], [(1, 2, 1.0), (2, 3, 1.0)])
        assert g.n_vertices == 3

    def test_two_components_rejected(self):
        with pytest.raises(DisconnectedGraph):
            build_graph([1, 2, 3, 4], [(1, 2, 1.0), (3, 4, 1.0)])

    def test_self_loop(self):
        with pytest.raises(SelfLoop):
            build_graph([1, 2], [(1, 2), (1, 1)])

    @pytest.mark.parametrize("w", [0.0, -1.0, float("nan")])
    def test_bad_weight(self, w):
        with pytest.raises(NonPositiveWeightOrMeasure):
            build_graph([1, 2], [(1, 2, w)])

    def test_bad_measure(self):
        with pytest.raises(NonPositiveWeightOrMeasure):
            build_graph([1, 2], [(1, 2)], [1.0, 0.0])

    def test_conflicting_weights(self):
        with pytest.raises(NonSymmetricWeight):
            build_graph([1, 2], [(1, 2, 1.0), (2, 1, 2.0)])

    def test_repeated_edge_same_weight_ok(self):
        g = build_graph([1, 2], [(1, 2, 2.0), (2, 1, 2.0)])
        assert g.n_edges == 1 and g.weight(2, 1) == 2.0

    def test_unknown_vertex(self):
        g = generate("path", 2)
        with pytest.raises(UnknownVertex):
            g.index(7)
        with pytest.raises(KeyError):
            g.index(7)

    def test_mu_min_is_true_minimum(self, rng):
        mu = rng.uniform(0.1, 10, 6)
        g = build_graph(range(6), [(i, i + 1) for i in range(5)], mu)
        assert g.mu_min == mu.min()

    def test_arrays_read_only(self):
        g = generate("path", 3)
        with pytest.raises(ValueError):
            g.measure[0] = 5.0

    def test_revalidation_idempotent(self, rng):
        for kind, kw in [("path", {"n": 5}), ("star", {"n": 4}), ("random_tree", {"n": 9, "seed": 3}),
                         ("lattice_ball", {"d": 2, "R": 2})]:
            g = generate(kind, **kw)
            h = build_graph(g.vertex_ids, list(g.edges()), g.measure)
            assert h.tag == g.tag


class TestDistance:
    def test_path(self):
        g = build_graph(["x1", "x2", "x3"], [("x1", "x2"), ("x2", "x3")])
        assert graph_distance(g, "x1", "x3") == 2
        assert graph_distance(g, "x2", "x2") == 0

    def test_lattice_corner_to_corner(self):
        ids = list(itertools.product(range(5), range(5)))
        edges = [((i, j), (i + 1, j)) for i in range(4) for j in range(5)]
        edges += [((i, j), (i, j + 1)) for i in range(5) for j in range(4)]
        g = build_graph(ids, edges)
        assert graph_distance(g, (0, 0), (4, 4)) == 8

    def test_metric_axioms(self, rng):
        for _ in range(5):
            g = generate("random_tree", int(rng.integers(2, 30)), seed=int(rng.integers(1000)))
            D = np.array([distances_from(g, x) for x in g.vertex_ids])
            assert np.all(D >= 0)
            assert np.array_equal(D, D.T)
            assert np.all((D == 0) == np.eye(g.n_vertices, dtype=bool))
            assert np.all(D[:, :, None] <= D[:, None, :] + D.T[None, :, :])


class TestGenerate:
    def test_path2(self):
        g = generate("path", 2)
        assert g.n_vertices == 2 and g.n_edges == 1 and g.mu_min == 1.0

    def test_star(self):
        g = generate("star", 4)
        assert g.n_vertices == 5
        assert g.degree[g.index(0)] == 4

    def test_lattice_ball_count(self):
        expected = sum(1 for i in range(-2, 3) for j in range(-2, 3) if abs(i) + abs(j) <= 2)
        assert generate("lattice_ball", d=2, R=2).n_vertices == expected == 13

    def test_random_ranges(self):
        g = generate("random_tree", 20, seed=1, weight_range=(0.1, 10), measure_range=(0.1, 10))
        _, _, w = g.edge_arrays
        assert np.all((w >= 0.1) & (w <= 10)) and np.all((g.measure >= 0.1) & (g.measure <= 10))

    def test_deterministic(self):
        a = generate("random_tree", 15, seed=4, weight_range=(0.1, 10))
        b = generate("random_tree", 15, seed=4, weight_range=(0.1, 10))
        assert a.tag == b.tag

    @pytest.mark.parametrize("kind,kw", [("blob", {"n": 3}), ("path", {"n": 0}), ("lattice_ball", {"d": 4, "R": 1}),
                                         ("lattice_ball", {"d": 2, "R": -1})])
    def test_bad_params(self, kind, kw):
        with pytest.raises(BadParams):
            generate(kind, **kw)


class TestTruncateBall:
    def test_z1_radius1(self):
        t = truncate_ball(Lattice(1), (0,), 1)
        assert set(t.interior.vertex_ids) == {(-1,), (0,), (1,)}
        assert set(t.ghost_vertices) == {(-3,), (-2,), (2,), (3,)}

    def test_radius0(self):
        t = truncate_ball(Lattice(2), (0, 0), 0)
        assert t.interior.vertex_ids == ((0, 0),)
        assert sorted(set(t.ghost_layer)) == [1, 2]

    def test_z2_radius2(self):
        assert truncate_ball(Lattice(2), (0, 0), 2).n_vertices == 13

    def test_interior_first(self):
        t = truncate_ball(Lattice(2), (0, 0), 2)
        np.testing.assert_array_equal(t.free_index, np.arange(13))
        assert t.extended.vertex_ids[:13] == t.interior.vertex_ids

    @pytest.mark.parametrize("R", [0, 1, 2, 3])
    def test_interior_matches_larger_truncation(self, R):
        big = truncate_ball(Lattice(2), (0, 0), R + 3).extended
        dist = distances_from(big, (0, 0))
        expected = {x for x, dx in zip(big.vertex_ids, dist) if dx <= R}
        assert set(truncate_ball(Lattice(2), (0, 0), R).interior.vertex_ids) == expected

    def test_ghosts_adjacent_to_ball(self):
        R = 1
        t = truncate_ball(Lattice(3), (0, 0, 0), R)
        dist = distances_from(t.extended, (0, 0, 0))
        for x, layer in zip(t.ghost_vertices, t.ghost_layer):
            assert dist[t.extended.index(x)] == layer
            nb = [t.extended.index(y) for y in t.extended.neighbors(x)]
            assert min(dist[nb]) == layer - 1


class TestGraphFile:
    def test_roundtrip(self, tmp_path):
        g = generate("random_tree", 8, seed=2, weight_range=(0.5, 2), measure_range=(0.5, 2))
        write_graph(g, tmp_path / "g.txt")
        h = read_graph(tmp_path / "g.txt")
        np.testing.assert_array_equal(h.measure, g.measure)
        assert h.n_edges == g.n_edges

    def test_lattice_ids(self, tmp_path):
        g = generate("lattice_ball", d=2, R=1)
        write_graph(g, tmp_path / "g.txt")
        assert "0,0" in read_graph(tmp_path / "g.txt").vertex_ids

    @pytest.mark.parametrize("text,line", [
        ("graph 2\nv a 1\nv a 1\n", 3),
        ("graph 2\nv a 1\nv b 1\ne a c 1\n", 4),
        ("graph 2\nv a 1\nv b x\n", 3),
        ("grph 2\n", 1),
        ("graph 2\nv a 1\nv b 1\nq a b\n", 4),
    ])
    def test_malformed_line_numbers(self, tmp_path, text, line):
        p = tmp_path / "g.txt"
        p.write_text(text)
        with pytest.raises(MalformedFile) as exc:
            read_graph(p)
        assert exc.value.line == line

    def test_vertex_count_mismatch(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("graph 3\nv a 1\nv b 1\ne a b 1\n")
        with pytest.raises(MalformedFile):
            read_graph(p)

    def test_invariants_enforced_on_read(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("graph 3\nv a 1\nv b 1\nv c 1\ne a b 1\n")
        with pytest.raises(DisconnectedGraph):
            read_graph(p)


def test_single_vertex_graph():
    g = WeightedGraph([0], [])
    assert g.n_vertices == 1 and g.n_edges == 0
