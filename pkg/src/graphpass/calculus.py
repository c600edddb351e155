"""Discrete calculus on a weighted graph.

Pointwise operators are computed edge by edge; :func:`assemble` builds the
same operators as sparse matrices.  The two code paths are deliberately
separate so that each can check the other.

Sign convention: ``(Lap u)(x) = (1/mu(x)) sum_y w_xy (u(y) - u(x))``, so
``-Lap`` is positive semidefinite with respect to the measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .exceptions import (
    BadExponent,
    BadParams,
    EigenSolverFailure,
    GraphMismatch,
    MalformedFile,
    NonPositivePotential,
)
from .graph import WeightedGraph, format_vertex_id

__all__ = [
    "VertexFunction",
    "AssembledOperators",
    "check_vertex_function",
    "laplacian",
    "biharmonic",
    "gamma_field",
    "integral",
    "dirichlet_energy",
    "norm_lr",
    "e_inner",
    "e_norm",
    "assemble",
    "e_gram_matrix",
    "sharp_embedding_2",
    "embedding_ratios",
    "read_vertex_function",
    "write_vertex_function",
]


@dataclass(frozen=True)
class VertexFunction:
    """Real values on the vertices of one graph, in canonical vertex order."""

    values: np.ndarray
    graph_tag: str

    @classmethod
    def on(cls, g, values):
        vals = check_vertex_function(g, values)
        vals = vals.copy()
        vals.flags.writeable = False
        return cls(vals, g.tag)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return len(self.values)


def check_vertex_function(g, u, name="u") -> np.ndarray:
    """Validate ``u`` against ``g`` and return it as a float array.

    A :class:`VertexFunction` must carry ``g``'s tag; anything else must be
    array-like with one finite value per vertex.
    """
    if isinstance(u, VertexFunction):
        if u.graph_tag != g.tag:
            raise GraphMismatch(f"{name} is bound to graph {u.graph_tag}, not {g.tag}")
        arr = u.values
    else:
        arr = np.asarray(u, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != g.n_vertices:
        raise GraphMismatch(f"{name} has shape {arr.shape}, graph has {g.n_vertices} vertices")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return np.asarray(arr, dtype=float)


def _edge_sum(g: WeightedGraph, per_edge: np.ndarray) -> np.ndarray:
    """Scatter ``per_edge[k]`` onto both endpoints of edge ``k``."""
    i, j, _ = g.edge_arrays
    out = np.zeros(g.n_vertices)
    np.add.at(out, i, per_edge)
    np.add.at(out, j, per_edge)
    return out


def laplacian(g: WeightedGraph, u) -> np.ndarray:
    u = check_vertex_function(g, u)
    i, j, w = g.edge_arrays
    flux = w * (u[j] - u[i])
    out = np.zeros(g.n_vertices)
    np.add.at(out, i, flux)
    np.add.at(out, j, -flux)
    return out / g.measure


def biharmonic(g: WeightedGraph, u) -> np.ndarray:
    return laplacian(g, laplacian(g, u))


def gamma_field(g: WeightedGraph, u, v) -> np.ndarray:
    """Carré du champ ``Gamma(u, v)``; ``gamma_field(g, u, u)`` is ``|grad u|^2``."""
    u = check_vertex_function(g, u, "u")
    v = check_vertex_function(g, v, "v")
    i, j, w = g.edge_arrays
    return _edge_sum(g, w * (u[j] - u[i]) * (v[j] - v[i])) / (2.0 * g.measure)


def integral(g: WeightedGraph, f) -> float:
    f = check_vertex_function(g, f, "f")
    return float(np.dot(f, g.measure))


def dirichlet_energy(g: WeightedGraph, u) -> float:
    """``int |grad u|^2 dmu``, summed once per edge."""
    u = check_vertex_function(g, u)
    i, j, w = g.edge_arrays
    return float(np.dot(w, (u[j] - u[i]) ** 2))


def norm_lr(g: WeightedGraph, u, r) -> float:
    """Weighted ``L^r`` norm for ``2 <= r <= inf``."""
    u = check_vertex_function(g, u)
    if r == math.inf or r == "inf":
        return float(np.max(np.abs(u)))
    r = float(r)
    if not r >= 2:
        raise BadExponent(f"exponent must satisfy 2 <= r <= inf, got {r!r}")
    a = np.abs(u)
    scale = a.max()
    if scale == 0:
        return 0.0
    # factor out the max to keep |u|^r in range for large r
    return float(scale * np.dot(g.measure, (a / scale) ** r) ** (1.0 / r))


def _check_potential(g, Vpot):
    V = check_vertex_function(g, Vpot, "Vpot")
    if np.any(V <= 0):
        k = int(np.argmin(V))
        raise NonPositivePotential(f"potential is {V[k]!r} at vertex {g.vertex_ids[k]!r}")
    return V


def e_inner(g: WeightedGraph, a: float, Vpot, u, w) -> float:
    """``int (Lap u Lap w + a Gamma(u, w) + V u w) dmu``."""
    if a < 0:
        raise BadParams(f"gradient coefficient must be nonnegative, got {a!r}")
    V = _check_potential(g, Vpot)
    u = check_vertex_function(g, u, "u")
    w = check_vertex_function(g, w, "w")
    return (
        integral(g, laplacian(g, u) * laplacian(g, w))
        + a * integral(g, gamma_field(g, u, w))
        + integral(g, V * u * w)
    )


def e_norm(g: WeightedGraph, a: float, Vpot, u) -> float:
    return math.sqrt(max(e_inner(g, a, Vpot, u, u), 0.0))


@dataclass(frozen=True)
class AssembledOperators:
    """Sparse matrix forms of the graph operators.

    ``dirichlet_matrix`` is the combinatorial Laplacian ``Deg - W`` so that
    ``u @ D @ u`` equals the Dirichlet energy; ``laplacian_matrix`` is
    ``-diag(1/mu) @ D``.
    """

    laplacian_matrix: sparse.csr_matrix
    biharmonic_matrix: sparse.csr_matrix
    dirichlet_matrix: sparse.csr_matrix
    mass_diagonal: np.ndarray

    def gram(self, a: float, Vpot) -> sparse.csr_matrix:
        """Matrix ``G`` with ``u @ G @ w = (u, w)_E`` for the given ``a`` and potential."""
        mu = self.mass_diagonal
        MB = sparse.diags(mu) @ self.biharmonic_matrix
        # M B is symmetric in exact arithmetic; symmetrise the round-off
        MB = 0.5 * (MB + MB.T)
        return (MB + a * self.dirichlet_matrix + sparse.diags(mu * np.asarray(Vpot))).tocsr()


def assemble(g: WeightedGraph) -> AssembledOperators:
    W = g.adjacency
    D = (sparse.diags(g.weighted_degree) - W).tocsr()
    L = (-sparse.diags(1.0 / g.measure) @ D).tocsr()
    B = (L @ L).tocsr()
    for m in (L, B, D):
        m.sort_indices()
    return AssembledOperators(L, B, D, np.array(g.measure))


def e_gram_matrix(g: WeightedGraph, a: float, Vpot) -> sparse.csr_matrix:
    V = _check_potential(g, Vpot)
    return assemble(g).gram(a, V)


def _pencil_eigenvalues(g, a, Vpot, k):
    V = _check_potential(g, Vpot)
    G = assemble(g).gram(a, V)
    mu = g.measure
    n = g.n_vertices
    k = min(k, n)
    try:
        if n <= 1500:
            lam = scipy.linalg.eigh(G.toarray(), np.diag(mu), eigvals_only=True, subset_by_index=[0, k - 1])
        else:
            lam = splinalg.eigsh(G.tocsc(), k=k, M=sparse.diags(mu).tocsc(), sigma=0, which="LM",
                                 return_eigenvectors=False)
            lam = np.sort(lam)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, splinalg.ArpackError) as exc:
        raise EigenSolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)) or lam[0] <= 0:
        raise EigenSolverFailure(f"pencil eigenvalues not positive: {lam[:3]!r}")
    return lam


def sharp_embedding_2(g: WeightedGraph, a: float, Vpot) -> float:
    """Best constant ``C`` in ``||u||_2 <= C ||u||_E``.

    Equal to ``1/sqrt(lambda_min)`` for the pencil (E-Gram matrix, mass matrix).
    """
    lam = _pencil_eigenvalues(g, a, Vpot, 1)
    return float(1.0 / math.sqrt(lam[0]))


def embedding_ratios(g: WeightedGraph, a: float, Vpot, k: int) -> np.ndarray:
    """Sharp ``L^2``/E constants on the E-orthogonal complement of the first ``j``
    pencil eigenvectors, for ``j = 0..k-1``.

    The sequence is non-increasing; on a finite graph it stops at ``n`` terms.
    """
    lam = _pencil_eigenvalues(g, a, Vpot, k)
    return 1.0 / np.sqrt(lam)


def read_vertex_function(g, path) -> np.ndarray:
    """Read ``<vertex_id> <value>`` lines; vertices not listed are 0."""
    lookup = {format_vertex_id(x): k for k, x in enumerate(g.vertex_ids)}
    out = np.zeros(g.n_vertices)
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) != 2:
                raise MalformedFile("expected '<vertex_id> <value>'", path, lineno)
            if tok[0] not in lookup:
                raise MalformedFile(f"unknown vertex {tok[0]!r}", path, lineno)
            if tok[0] in seen:
                raise MalformedFile(f"duplicate vertex {tok[0]!r}", path, lineno)
            seen.add(tok[0])
            try:
                value = float(tok[1])
            except ValueError:
                raise MalformedFile(f"not a number: {tok[1]!r}", path, lineno) from None
            if not math.isfinite(value):
                raise MalformedFile(f"non-finite value {tok[1]!r}", path, lineno)
            out[lookup[tok[0]]] = value
    return out


def write_vertex_function(g, u, path) -> None:
    u = check_vertex_function(g, u)
    with open(path, "w", encoding="utf-8") as fh:
        for x, val in zip(g.vertex_ids, u):
            fh.write(f"{format_vertex_id(x)} {float(val)!r}\n")
