"""Finite weighted graphs, ball truncations of infinite families, generators.

A :class:`WeightedGraph` is immutable once built.  Its vertex order is fixed
at construction and is the canonical index used by every vector and matrix
elsewhere in the package.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .exceptions import (
    BadParams,
    DisconnectedGraph,
    GraphError,
    MalformedFile,
    NonPositiveWeightOrMeasure,
    NonSymmetricWeight,
    SelfLoop,
    UnknownVertex,
)

__all__ = [
    "WeightedGraph",
    "TruncatedGraph",
    "Lattice",
    "build_graph",
    "graph_distance",
    "distances_from",
    "generate",
    "truncate_ball",
    "read_graph",
    "write_graph",
    "format_vertex_id",
]


class WeightedGraph:
    """Connected, undirected, positively weighted graph with a vertex measure.

    Parameters
    ----------
    vertex_ids : sequence of hashable
        Vertex labels; their order becomes the canonical vertex order.
    weighted_edges : iterable of tuple
        ``(x, y, w)`` or ``(x, y)`` (weight 1).  An unordered pair may be
        repeated only with the same weight.
    measure : mapping, sequence, float or None
        Vertex measure.  A mapping is keyed by vertex label, a sequence is
        aligned with ``vertex_ids``; ``None`` means the counting measure.
    """

    def __init__(self, vertex_ids, weighted_edges, measure=None):
        ids = tuple(vertex_ids)
        if not ids:
            raise GraphError("a graph needs at least one vertex")
        index = {}
        for i, x in enumerate(ids):
            if x in index:
                raise GraphError(f"duplicate vertex id {x!r}")
            index[x] = i
        self._ids = ids
        self._index = index
        n = len(ids)

        pairs: dict[tuple[int, int], float] = {}
        for edge in weighted_edges:
            if len(edge) == 2:
                x, y = edge
                w = 1.0
            else:
                x, y, w = edge
            i, j = self.index(x), self.index(y)
            if i == j:
                raise SelfLoop(f"self-loop at vertex {x!r}")
            w = float(w)
            if not (w > 0 and math.isfinite(w)):
                raise NonPositiveWeightOrMeasure(f"edge {x!r}-{y!r} has weight {w!r}")
            key = (i, j) if i < j else (j, i)
            if key in pairs and pairs[key] != w:
                raise NonSymmetricWeight(
                    f"edge {x!r}-{y!r} given conflicting weights {pairs[key]!r} and {w!r}"
                )
            pairs[key] = w

        keys = sorted(pairs)
        self._edge_i = np.array([k[0] for k in keys], dtype=np.intp)
        self._edge_j = np.array([k[1] for k in keys], dtype=np.intp)
        self._edge_w = np.array([pairs[k] for k in keys], dtype=float)

        if measure is None:
            mu = np.ones(n)
        elif isinstance(measure, Mapping):
            missing = [x for x in ids if x not in measure]
            if missing:
                raise GraphError(f"measure missing for vertices {missing[:5]!r}")
            mu = np.array([float(measure[x]) for x in ids])
        elif np.ndim(measure) == 0:
            mu = np.full(n, float(measure))
        else:
            mu = np.asarray(measure, dtype=float).ravel()
            if mu.size != n:
                raise GraphError(f"measure has {mu.size} entries for {n} vertices")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            bad = int(np.argmin(np.where(np.isfinite(mu), mu, -np.inf)))
            raise NonPositiveWeightOrMeasure(f"measure at {ids[bad]!r} is {mu[bad]!r}")
        self._mu = mu

        for arr in (self._edge_i, self._edge_j, self._edge_w, self._mu):
            arr.flags.writeable = False

        if n > 1:
            ncomp, _ = sparse.csgraph.connected_components(self.adjacency, directed=False)
            if ncomp != 1:
                raise DisconnectedGraph(f"graph has {ncomp} connected components")

    # ---- basic accessors -------------------------------------------------
    @property
    def vertex_ids(self) -> tuple:
        return self._ids

    @property
    def n_vertices(self) -> int:
        return len(self._ids)

    @property
    def n_edges(self) -> int:
        return int(self._edge_w.size)

    @property
    def measure(self) -> np.ndarray:
        return self._mu

    @property
    def mu_min(self) -> float:
        return float(self._mu.min())

    @property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Endpoint indices ``(i, j)`` with ``i < j`` and weights, one entry per edge."""
        return self._edge_i, self._edge_j, self._edge_w

    def edges(self):
        """Iterate ``(x, y, w)`` once per unordered edge."""
        for i, j, w in zip(self._edge_i, self._edge_j, self._edge_w):
            yield self._ids[i], self._ids[j], float(w)

    def index(self, x) -> int:
        try:
            return self._index[x]
        except (KeyError, TypeError):
            raise UnknownVertex(f"unknown vertex {x!r}") from None

    def __contains__(self, x) -> bool:
        try:
            return x in self._index
        except TypeError:
            return False

    def __len__(self) -> int:
        return self.n_vertices

    def __repr__(self) -> str:
        return f"WeightedGraph(n_vertices={self.n_vertices}, n_edges={self.n_edges}, mu_min={self.mu_min:g})"

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric weighted adjacency matrix ``W`` with ``W[x, y] = w_xy``."""
        n = self.n_vertices
        i, j, w = self._edge_i, self._edge_j, self._edge_w
        W = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)
        ).tocsr()
        W.sort_indices()
        return W

    @cached_property
    def degree(self) -> np.ndarray:
        """Number of neighbours of each vertex."""
        return np.diff(self.adjacency.indptr)

    @cached_property
    def weighted_degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def neighbors(self, x) -> list:
        i = self.index(x)
        W = self.adjacency
        return [self._ids[j] for j in W.indices[W.indptr[i] : W.indptr[i + 1]]]

    def weight(self, x, y) -> float:
        """Edge weight, 0 when ``x`` and ``y`` are not adjacent."""
        return float(self.adjacency[self.index(x), self.index(y)])

    @cached_property
    def operators(self):
        """Assembled sparse operators, built once per graph."""
        from .calculus import assemble

        return assemble(self)

    @cached_property
    def tag(self) -> str:
        """Content hash binding vertex functions to this graph."""
        h = hashlib.sha1()
        h.update(repr(self._ids).encode())
        for arr in (self._edge_i, self._edge_j, self._edge_w, self._mu):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def function(self, values):
        """Wrap ``values`` as a :class:`~graphpass.calculus.VertexFunction` bound to this graph."""
        from .calculus import VertexFunction

        return VertexFunction.on(self, values)


def build_graph(vertex_ids, weighted_edges, measure=None) -> WeightedGraph:
    """Validate and build a :class:`WeightedGraph`.

    >>> g = build_graph(["x1", "x2"], [("x1", "x2", 1.0)], {"x1": 1, "x2": 1})
    >>> g.mu_min
    1.0
    """
    return WeightedGraph(vertex_ids, weighted_edges, measure)


def distances_from(g: WeightedGraph, x) -> np.ndarray:
    """Hop distances from ``x`` to every vertex, in canonical order."""
    src = g.index(x)
    W = g.adjacency
    dist = np.full(g.n_vertices, -1, dtype=np.intp)
    dist[src] = 0
    queue = deque([src])
    while queue:
        i = queue.popleft()
        for j in W.indices[W.indptr[i] : W.indptr[i + 1]]:
            if dist[j] < 0:
                dist[j] = dist[i] + 1
                queue.append(j)
    return dist


def graph_distance(g: WeightedGraph, x, y) -> int:
    """Minimal number of edges on a path from ``x`` to ``y``."""
    target = g.index(y)
    return int(distances_from(g, x)[target])


# ---- implicit infinite families ------------------------------------------

class Lattice:
    """The integer lattice Z^d with nearest-neighbour edges.

    Vertices are integer tuples.  ``weight`` may be a constant or a callable
    ``(x, y) -> w`` (it must be symmetric); ``measure`` a constant or a
    callable ``x -> mu``.
    """

    def __init__(self, d: int, weight=1.0, measure=1.0):
        if d not in (1, 2, 3):
            raise BadParams(f"lattice dimension must be 1, 2 or 3, got {d!r}")
        self.d = d
        self._weight = weight
        self._measure = measure

    def neighbors(self, x):
        out = []
        for k in range(self.d):
            for step in (-1, 1):
                y = list(x)
                y[k] += step
                y = tuple(y)
                w = self._weight(x, y) if callable(self._weight) else self._weight
                out.append((y, float(w)))
        return out

    def measure(self, x) -> float:
        return float(self._measure(x) if callable(self._measure) else self._measure)

    def origin(self):
        return (0,) * self.d


@dataclass(frozen=True)
class TruncatedGraph:
    """A ball ``B_R(x0)`` cut out of an infinite family, with two ghost layers.

    Functions live on ``interior`` and are zero on every ghost vertex.  The
    ``extended`` graph holds interior and ghosts together; energies and
    residuals are evaluated on it with the ghost values pinned to zero.
    """

    interior: WeightedGraph
    extended: WeightedGraph
    ghost_vertices: tuple
    ghost_layer: tuple
    center: Hashable
    radius: int

    @property
    def free_index(self) -> np.ndarray:
        return np.arange(self.interior.n_vertices)

    @property
    def vertex_ids(self) -> tuple:
        return self.interior.vertex_ids

    @property
    def n_vertices(self) -> int:
        return self.interior.n_vertices

    @property
    def mu_min(self) -> float:
        return self.interior.mu_min

    @property
    def measure(self) -> np.ndarray:
        return self.interior.measure

    @property
    def tag(self) -> str:
        return self.interior.tag

    def ghost_weights(self):
        """``(ghost, interior_vertex, w)`` for every edge leaving the ball."""
        inside = set(self.interior.vertex_ids)
        for x, y, w in self.extended.edges():
            if (x in inside) != (y in inside):
                yield (y, x, w) if x in inside else (x, y, w)

    def index(self, x) -> int:
        return self.interior.index(x)


def _sorted_if_possible(items):
    try:
        return sorted(items)
    except TypeError:
        return list(items)


def truncate_ball(family, x0, R: int) -> TruncatedGraph:
    """Cut the ball of hop radius ``R`` around ``x0`` out of ``family``.

    ``family`` must provide ``neighbors(x) -> [(y, w), ...]`` and
    ``measure(x) -> float``.
    """
    if not isinstance(R, (int, np.integer)) or R < 0:
        raise BadParams(f"radius must be a nonnegative integer, got {R!r}")
    dist = {x0: 0}
    layers: list[list] = [[x0]]
    adj: dict = {}
    frontier = [x0]
    for depth in range(1, R + 3):
        nxt = []
        for x in frontier:
            nbrs = list(family.neighbors(x))
            adj[x] = nbrs
            for y, _ in nbrs:
                if y not in dist:
                    dist[y] = depth
                    nxt.append(y)
        layers.append(nxt)
        frontier = nxt

    interior_ids = _sorted_if_possible(v for layer in layers[: R + 1] for v in layer)
    ghost1 = _sorted_if_possible(layers[R + 1])
    ghost2 = _sorted_if_possible(layers[R + 2])

    def edges_among(vertices):
        vs = set(vertices)
        seen = set()
        out = []
        for x in vertices:
            for y, w in adj.get(x, ()):
                key = frozenset((x, y))
                if y in vs and key not in seen:
                    seen.add(key)
                    out.append((x, y, w))
        return out

    interior = WeightedGraph(
        interior_ids, edges_among(interior_ids), [family.measure(x) for x in interior_ids]
    )
    # ghost-2 vertices only need their edges towards ghost-1; their own
    # neighbours beyond R+2 are never read
    all_ids = interior_ids + ghost1 + ghost2
    ext_edges = edges_among(interior_ids + ghost1)
    g1 = set(ghost1)
    for x in ghost2:
        for y, w in family.neighbors(x):
            if y in g1:
                ext_edges.append((x, y, w))
    extended = WeightedGraph(all_ids, ext_edges, [family.measure(x) for x in all_ids])
    return TruncatedGraph(
        interior=interior,
        extended=extended,
        ghost_vertices=tuple(ghost1 + ghost2),
        ghost_layer=tuple([R + 1] * len(ghost1) + [R + 2] * len(ghost2)),
        center=x0,
        radius=int(R),
    )


# ---- generators ------------------------------------------------------------

def _profile(value, rng, rng_range, what):
    if rng_range is not None:
        lo, hi = rng_range
        if not (0 < lo <= hi):
            raise BadParams(f"{what}_range must satisfy 0 < lo <= hi, got {rng_range!r}")
        return lambda *_: float(rng.uniform(lo, hi))
    if callable(value):
        return value
    return lambda *_: float(value)


def generate(
    kind: str,
    n: int | None = None,
    *,
    d: int | None = None,
    R: int | None = None,
    seed: int | None = None,
    weight: float | Callable = 1.0,
    measure: float | Callable = 1.0,
    weight_range: tuple[float, float] | None = None,
    measure_range: tuple[float, float] | None = None,
) -> WeightedGraph:
    """Build a canonical test graph.

    Parameters
    ----------
    kind : {"path", "star", "lattice_ball", "random_tree"}
        ``path(n)``: vertices ``0..n-1`` in a line.  ``star(n)``: centre ``0``
        joined to leaves ``1..n``.  ``lattice_ball(d, R)``: the l1 ball of
        radius ``R`` in Z^d (free boundary).  ``random_tree(n, seed)``: vertex
        ``i`` attaches to a uniformly chosen earlier vertex.
    weight, measure : float or callable
        Edge weight ``w(x, y)`` and vertex measure ``mu(x)``; default 1.
    weight_range, measure_range : (lo, hi), optional
        Draw weights / measures uniformly from the range instead, using ``seed``.
    """
    rng = np.random.default_rng(seed)
    if kind == "lattice_ball":
        if d not in (1, 2, 3):
            raise BadParams(f"lattice dimension must be 1, 2 or 3, got {d!r}")
        if R is None or R < 0:
            raise BadParams(f"lattice_ball needs R >= 0, got {R!r}")
    elif kind in ("path", "star", "random_tree"):
        if n is None or n < 1:
            raise BadParams(f"{kind} needs n >= 1, got {n!r}")
    else:
        raise BadParams(f"unknown graph kind {kind!r}")

    if kind == "path":
        ids = list(range(n))
        pairs = [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        ids = list(range(n + 1))
        pairs = [(0, i) for i in range(1, n + 1)]
    elif kind == "random_tree":
        ids = list(range(n))
        pairs = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    else:
        ids = _sorted_if_possible(_l1_ball(d, R))
        members = set(ids)
        pairs = []
        for x in ids:
            for k in range(d):
                y = list(x)
                y[k] += 1
                y = tuple(y)
                if y in members:
                    pairs.append((x, y))

    wfun = _profile(weight, rng, weight_range, "weight")
    mfun = _profile(measure, rng, measure_range, "measure")
    edges = [(x, y, wfun(x, y)) for x, y in pairs]
    mu = [mfun(x) for x in ids]
    return WeightedGraph(ids, edges, mu)


def _l1_ball(d, R):
    out = []

    def rec(prefix, budget):
        if len(prefix) == d:
            out.append(tuple(prefix))
            return
        for v in range(-budget, budget + 1):
            rec(prefix + [v], budget - abs(v))

    rec([], R)
    return out


# ---- file format -----------------------------------------------------------

def format_vertex_id(x) -> str:
    """Whitespace-free text form of a vertex label (tuples become ``a,b``)."""
    if isinstance(x, tuple):
        return ",".join(str(v) for v in x)
    s = str(x)
    if not s or any(c.isspace() for c in s):
        raise BadParams(f"vertex id {x!r} cannot be written to a graph file")
    return s


def write_graph(g: WeightedGraph, path) -> None:
    lines = [f"graph {g.n_vertices}"]
    for x, mu in zip(g.vertex_ids, g.measure):
        lines.append(f"v {format_vertex_id(x)} {float(mu)!r}")
    for x, y, w in g.edges():
        lines.append(f"e {format_vertex_id(x)} {format_vertex_id(y)} {w!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_float(token, path, lineno):
    try:
        value = float(token)
    except ValueError:
        raise MalformedFile(f"not a number: {token!r}", path, lineno) from None
    if not math.isfinite(value):
        raise MalformedFile(f"non-finite number: {token!r}", path, lineno)
    return value


def read_graph(path) -> WeightedGraph:
    """Parse the line-oriented graph format.

    ``graph <n>`` header, then ``v <id> <mu>`` and ``e <id> <id> <w>`` lines;
    ``#`` starts a comment.  Vertex ids are returned as strings.
    """
    n_declared = None
    ids: list[str] = []
    mu: dict[str, float] = {}
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if n_declared is None:
                if tok[0] != "graph" or len(tok) != 2:
                    raise MalformedFile("expected header 'graph <n_vertices>'", path, lineno)
                try:
                    n_declared = int(tok[1])
                except ValueError:
                    raise MalformedFile(f"bad vertex count {tok[1]!r}", path, lineno) from None
                if n_declared < 1:
                    raise MalformedFile("vertex count must be positive", path, lineno)
                continue
            if tok[0] == "v":
                if len(tok) != 3:
                    raise MalformedFile("expected 'v <id> <mu>'", path, lineno)
                if tok[1] in mu:
                    raise MalformedFile(f"duplicate vertex {tok[1]!r}", path, lineno)
                ids.append(tok[1])
                mu[tok[1]] = _parse_float(tok[2], path, lineno)
            elif tok[0] == "e":
                if len(tok) != 4:
                    raise MalformedFile("expected 'e <id> <id> <w>'", path, lineno)
                for v in tok[1:3]:
                    if v not in mu:
                        raise MalformedFile(f"edge references undeclared vertex {v!r}", path, lineno)
                edges.append((tok[1], tok[2], _parse_float(tok[3], path, lineno)))
            else:
                raise MalformedFile(f"unknown record type {tok[0]!r}", path, lineno)
    if n_declared is None:
        raise MalformedFile("empty graph file", path)
    if len(ids) != n_declared:
        raise MalformedFile(f"header declares {n_declared} vertices, found {len(ids)}", path)
    return WeightedGraph(ids, edges, mu)
