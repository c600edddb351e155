"""Energy functional, its derivative, the strong residual and the Jacobian.

Two independent routes compute the derivative:

* the weak pairing (:func:`phi_directional`) uses the pointwise, edge-based
  operators and ``int Lap u Lap phi``;
* the strong residual (:func:`residual`) and :func:`jacobian_apply` use the
  assembled matrices and ``Lap^2 u``.

Their agreement is tested, not assumed.  On a :class:`TruncatedGraph` every
function is zero on the ghost layers and the residual is reported on the
interior only.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from . import calculus
from .exceptions import GraphMismatch
from .graph import TruncatedGraph, WeightedGraph
from .model import Model

__all__ = [
    "StatePair",
    "EnergyBreakdown",
    "CeramiDiagnostics",
    "Discretization",
    "phi",
    "residual",
    "phi_directional",
    "self_pairing",
    "cerami_identity",
    "jacobian_apply",
    "e_norms",
    "diagnostics_record",
]


@dataclass(frozen=True)
class StatePair:
    """The unknown ``(u, v)``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim != 1 or u.shape != v.shape:
            raise GraphMismatch(f"u and v must be 1-d of equal length, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("state contains non-finite values")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_flat(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])

    def __len__(self):
        return self.u.size

    def __neg__(self):
        return StatePair(-self.u, -self.v)

    def __add__(self, other):
        return StatePair(self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return StatePair(self.u - other.u, self.v - other.v)

    def __mul__(self, c):
        return StatePair(c * self.u, c * self.v)

    __rmul__ = __mul__


@dataclass(frozen=True)
class EnergyBreakdown:
    quad_u: float
    quad_v: float
    kirchhoff_u: float
    kirchhoff_v: float
    potential_term: float
    total: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CeramiDiagnostics:
    """``phi - self_pairing/theta`` against ``calF_integral + quarter_norms + kirchhoff_correction``.

    ``quarter_norms`` is ``(theta-2)/(2 theta) (||u||^2 + ||v||^2)``, a quarter
    of the squared norms when ``theta = 4``; ``kirchhoff_correction`` is
    ``(theta-4)/(4 theta) sum b_i q_i^2`` and vanishes when ``theta = 4``.
    """

    phi: float
    self_pairing: float
    calF_integral: float
    quarter_norms: float
    kirchhoff_correction: float
    gap: float
    theta: float

    def to_dict(self):
        return asdict(self)


DENSE_LIMIT = 64

# restricted operators depend only on the graph; cache them per graph object
_RESTRICTED = weakref.WeakKeyDictionary()


class _Restricted:
    def __init__(self, g):
        if isinstance(g, TruncatedGraph):
            ext, free, base = g.extended, g.free_index, g.interior
        elif isinstance(g, WeightedGraph):
            ext, free, base = g, np.arange(g.n_vertices), g
        else:
            raise TypeError(f"expected WeightedGraph or TruncatedGraph, got {type(g).__name__}")
        ops = ext.operators
        self.ext = ext
        self.base = base
        self.free = free
        self.n = free.size
        self.n_ext = ext.n_vertices
        self.mu = np.asarray(ext.measure)[free]
        self.L = ops.laplacian_matrix[free][:, free].tocsr()
        self.B = ops.biharmonic_matrix[free][:, free].tocsr()
        self.D = ops.dirichlet_matrix[free][:, free].tocsr()
        MB = sparse.diags(self.mu) @ self.B
        self.MB = (0.5 * (MB + MB.T)).tocsr()


def _restricted(g) -> _Restricted:
    try:
        return _RESTRICTED[g]
    except KeyError:
        r = _Restricted(g)
        _RESTRICTED[g] = r
        return r
    except TypeError:
        return _Restricted(g)


class Discretization:
    """A model bound to a graph: every quantity the solvers need, in flat form.

    Flat vectors stack ``u`` then ``v`` (length ``2n``).
    """

    def __init__(self, g, model: Model, allow_fd_hessian: bool = True):
        self.g = g
        self.model = model
        self.allow_fd_hessian = allow_fd_hessian
        r = _restricted(g)
        self._r = r
        self.n = r.n
        self.mu = r.mu
        self.L, self.B, self.D = r.L, r.B, r.D
        # dense arithmetic beats sparse overhead on small graphs
        self.dense = self.n <= DENSE_LIMIT
        if self.dense:
            self.L, self.B, self.D = (m.toarray() for m in (r.L, r.B, r.D))
        self.V1, self.V2 = model.potentials(self.n)
        self.idx = np.arange(self.n)
        mu = self.mu
        self.G1 = (r.MB + model.a1 * r.D + sparse.diags(mu * self.V1)).tocsr()
        self.G2 = (r.MB + model.a2 * r.D + sparse.diags(mu * self.V2)).tocsr()
        self.G = sparse.block_diag([self.G1, self.G2], format="csr")
        if self.dense:
            self.G1, self.G2, self.G = (m.toarray() for m in (self.G1, self.G2, self.G))
        self.mass2 = np.concatenate([mu, mu])

    @property
    def base_graph(self) -> WeightedGraph:
        return self._r.base

    # ---- coercion --------------------------------------------------------
    def split(self, state):
        if isinstance(state, StatePair):
            u, v = state.u, state.v
        elif isinstance(state, tuple) and len(state) == 2:
            u, v = (np.asarray(a, dtype=float) for a in state)
        else:
            x = np.asarray(state, dtype=float)
            if x.shape != (2 * self.n,):
                raise GraphMismatch(f"flat state has shape {x.shape}, expected ({2 * self.n},)")
            u, v = x[: self.n], x[self.n :]
        if u.shape != (self.n,) or v.shape != (self.n,):
            raise GraphMismatch(f"state components must have length {self.n}")
        return u, v

    def _extend(self, u):
        if self._r.n_ext == self.n:
            return u
        out = np.zeros(self._r.n_ext)
        out[self._r.free] = u
        return out

    # ---- pointwise route -------------------------------------------------
    def _pointwise_pieces(self, u, w):
        """``int Lap u Lap w``, ``int Gamma(u, w)`` on the extended graph, and ``int u w`` weights."""
        ext = self._r.ext
        ue, we = self._extend(u), self._extend(w)
        lap_u = calculus.laplacian(ext, ue)
        lap_w = lap_u if w is u else calculus.laplacian(ext, we)
        i, j, wt = ext.edge_arrays
        grad = float(np.dot(wt, (ue[j] - ue[i]) * (we[j] - we[i])))
        return float(np.dot(ext.measure, lap_u * lap_w)), grad

    def e_inner(self, u, w, which):
        a, V = (self.model.a1, self.V1) if which == 1 else (self.model.a2, self.V2)
        lap, grad = self._pointwise_pieces(u, w)
        return lap + a * grad + float(np.dot(self.mu, V * u * w))

    def dirichlet(self, u) -> float:
        ue = self._extend(u)
        i, j, wt = self._r.ext.edge_arrays
        return float(np.dot(wt, (ue[j] - ue[i]) ** 2))

    def phi(self, state) -> EnergyBreakdown:
        u, v = self.split(state)
        m = self.model
        qu, qv = self.dirichlet(u), self.dirichlet(v)
        lap_u, _ = self._pointwise_pieces(u, u)
        lap_v, _ = self._pointwise_pieces(v, v)
        quad_u = 0.5 * (lap_u + m.a1 * qu + float(np.dot(self.mu, self.V1 * u * u)))
        quad_v = 0.5 * (lap_v + m.a2 * qv + float(np.dot(self.mu, self.V2 * v * v)))
        kir_u = 0.25 * m.b1 * qu**2
        kir_v = 0.25 * m.b2 * qv**2
        pot = float(np.dot(self.mu, m.nonlinearity.F(self.idx, u, v)))
        return EnergyBreakdown(quad_u, quad_v, kir_u, kir_v, pot, quad_u + quad_v + kir_u + kir_v - pot)

    def energy(self, state) -> float:
        return self.phi(state).total

    def pairing(self, state, direction) -> float:
        u, v = self.split(state)
        p1, p2 = self.split(direction)
        m = self.model
        nl = m.nonlinearity
        val = self.e_inner(u, p1, 1) + self.e_inner(v, p2, 2)
        if m.b1:
            val += m.b1 * self.dirichlet(u) * self._pointwise_pieces(u, p1)[1]
        if m.b2:
            val += m.b2 * self.dirichlet(v) * self._pointwise_pieces(v, p2)[1]
        val -= float(np.dot(self.mu, nl.F_s(self.idx, u, v) * p1 + nl.F_t(self.idx, u, v) * p2))
        return val

    # ---- matrix route ----------------------------------------------------
    def residual_parts(self, state):
        u, v = self.split(state)
        m = self.model
        nl = m.nonlinearity
        qu = float(u @ (self.D @ u))
        qv = float(v @ (self.D @ v))
        R1 = self.B @ u - (m.a1 + m.b1 * qu) * (self.L @ u) + self.V1 * u - nl.F_s(self.idx, u, v)
        R2 = self.B @ v - (m.a2 + m.b2 * qv) * (self.L @ v) + self.V2 * v - nl.F_t(self.idx, u, v)
        return R1, R2

    def residual_flat(self, x) -> np.ndarray:
        R1, R2 = self.residual_parts(x)
        return np.concatenate([R1, R2])

    def gradient_flat(self, x) -> np.ndarray:
        """Euclidean gradient of the energy in flat coordinates (``M R``)."""
        return self.mass2 * self.residual_flat(x)

    def hessian_diagonals(self, state):
        u, v = self.split(state)
        return self.model.nonlinearity.second_partials(self.idx, u, v, allow_fd=self.allow_fd_hessian)

    def jacobian_parts(self, state):
        """Sparse part ``S`` and low-rank factors ``(U, W)`` with ``J = S + U W^T``.

        ``S`` is a dense array on small graphs.
        """
        u, v = self.split(state)
        m = self.model
        n = self.n
        Fss, Fst, Ftt = self.hessian_diagonals((u, v))
        qu = float(u @ (self.D @ u))
        qv = float(v @ (self.D @ v))
        d1 = self.V1 - Fss
        d2 = self.V2 - Ftt
        c = -np.asarray(Fst, dtype=float) * np.ones(n)
        if self.dense:
            S = np.zeros((2 * n, 2 * n))
            S[:n, :n] = self.B - (m.a1 + m.b1 * qu) * self.L + np.diag(d1)
            S[n:, n:] = self.B - (m.a2 + m.b2 * qv) * self.L + np.diag(d2)
            S[:n, n:] = S[n:, :n] = np.diag(c)
        else:
            A1 = self.B - (m.a1 + m.b1 * qu) * self.L + sparse.diags(d1)
            A2 = self.B - (m.a2 + m.b2 * qv) * self.L + sparse.diags(d2)
            C = sparse.diags(c)
            S = sparse.bmat([[A1, C], [C, A2]], format="csc")
        cols_u, cols_w = [], []
        z = np.zeros(n)
        if m.b1:
            cols_u.append(np.concatenate([-2.0 * m.b1 * (self.L @ u), z]))
            cols_w.append(np.concatenate([self.D @ u, z]))
        if m.b2:
            cols_u.append(np.concatenate([z, -2.0 * m.b2 * (self.L @ v)]))
            cols_w.append(np.concatenate([z, self.D @ v]))
        if cols_u:
            U = np.column_stack(cols_u)
            W = np.column_stack(cols_w)
        else:
            U = W = np.zeros((2 * n, 0))
        return S, U, W

    def jacobian_apply_flat(self, state, d) -> np.ndarray:
        u, v = self.split(state)
        p1, p2 = self.split(d)
        m = self.model
        Fss, Fst, Ftt = self.hessian_diagonals((u, v))
        qu = float(u @ (self.D @ u))
        qv = float(v @ (self.D @ v))
        Lu, Lv = self.L @ u, self.L @ v
        J1 = (self.B @ p1 - (m.a1 + m.b1 * qu) * (self.L @ p1) - 2.0 * m.b1 * float(u @ (self.D @ p1)) * Lu
              + self.V1 * p1 - Fss * p1 - Fst * p2)
        J2 = (self.B @ p2 - (m.a2 + m.b2 * qv) * (self.L @ p2) - 2.0 * m.b2 * float(v @ (self.D @ p2)) * Lv
              + self.V2 * p2 - Fst * p1 - Ftt * p2)
        return np.concatenate([J1, J2])

    # ---- norms -----------------------------------------------------------
    def e_norm_sq(self, x) -> float:
        x = x.flat() if isinstance(x, StatePair) else np.asarray(x, dtype=float)
        return max(float(x @ (self.G @ x)), 0.0)

    def e_norm(self, x) -> float:
        return math.sqrt(self.e_norm_sq(x))

    def e_norms(self, state):
        u, v = self.split(state)
        nu = math.sqrt(max(float(u @ (self.G1 @ u)), 0.0))
        nv = math.sqrt(max(float(v @ (self.G2 @ v)), 0.0))
        return nu, nv


def _disc(g, model) -> Discretization:
    return Discretization(g, model)


def _as_pair(d: Discretization, x) -> StatePair:
    return StatePair(*d.split(x))


def phi(g, model: Model, state) -> EnergyBreakdown:
    """Energy of ``state`` split into its quadratic, Kirchhoff and potential parts."""
    return _disc(g, model).phi(state)


def residual(g, model: Model, state) -> StatePair:
    """Strong residual of the coupled system at every (interior) vertex."""
    R1, R2 = _disc(g, model).residual_parts(state)
    return StatePair(R1, R2)


def phi_directional(g, model: Model, state, direction) -> float:
    """Derivative of the energy at ``state`` in ``direction`` (weak pairing)."""
    return _disc(g, model).pairing(state, direction)


def self_pairing(g, model: Model, state) -> float:
    """Derivative paired with the state itself, from the closed-form expression."""
    d = _disc(g, model)
    u, v = d.split(state)
    m = model
    nl = m.nonlinearity
    br = d.phi((u, v))
    qu, qv = d.dirichlet(u), d.dirichlet(v)
    return (2 * br.quad_u + 2 * br.quad_v + m.b1 * qu**2 + m.b2 * qv**2
            - float(np.dot(d.mu, nl.F_s(d.idx, u, v) * u + nl.F_t(d.idx, u, v) * v)))


def cerami_identity(g, model: Model, state) -> CeramiDiagnostics:
    """Check ``phi - SP/theta = int calF + (theta-2)/(2 theta)(||u||^2+||v||^2)`` (+ Kirchhoff term)."""
    from .model import calF

    d = _disc(g, model)
    u, v = d.split(state)
    theta = model.theta
    br = d.phi((u, v))
    sp = self_pairing(g, model, (u, v))
    norms = 2 * br.quad_u + 2 * br.quad_v
    cf = float(np.dot(d.mu, calF(model, d.idx, u, v)))
    qn = (theta - 2) / (2 * theta) * norms
    kc = (theta - 4) / (4 * theta) * (model.b1 * d.dirichlet(u) ** 2 + model.b2 * d.dirichlet(v) ** 2)
    gap = abs(br.total - sp / theta - cf - qn - kc)
    return CeramiDiagnostics(br.total, sp, cf, qn, kc, gap, theta)


def jacobian_apply(g, model: Model, state, direction, allow_fd: bool = True) -> StatePair:
    """Directional derivative of :func:`residual` at ``state``."""
    d = Discretization(g, model, allow_fd_hessian=allow_fd)
    return StatePair.from_flat(d.jacobian_apply_flat(state, direction))


def e_norms(g, model: Model, state) -> dict:
    """Both product norms: Hilbert ``sqrt(|u|^2+|v|^2)`` and the sum ``|u|+|v|``."""
    nu, nv = _disc(g, model).e_norms(state)
    return {"norm_u": nu, "norm_v": nv, "hilbert": math.hypot(nu, nv), "sum": nu + nv}


def diagnostics_record(g, model: Model, state) -> dict:
    """Flat JSON-ready record of energy parts, the Cerami identity and evenness."""
    d = _disc(g, model)
    u, v = d.split(state)
    br = d.phi((u, v))
    cer = cerami_identity(g, model, (u, v))
    neg = d.phi((-u, -v)).total
    out = {f"energy_{k}": val for k, val in br.to_dict().items()}
    out.update({f"cerami_{k}": val for k, val in cer.to_dict().items()})
    out["evenness_gap"] = abs(br.total - neg)
    out.update(e_norms(g, model, (u, v)))
    return out
