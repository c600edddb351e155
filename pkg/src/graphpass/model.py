"""Model description (potentials, coefficients, nonlinearity) and hypothesis audit.

Nonlinearity callables are vectorised: ``F(x, s, t)`` receives an integer
array ``x`` of vertex indices (canonical order of the graph the model is
solved on) and float arrays ``s``, ``t`` of the same shape.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .calculus import check_vertex_function, read_vertex_function
from .exceptions import (
    BadExponent,
    BadParams,
    CoefficientOutOfRange,
    GraphMismatch,
    MalformedFile,
    MissingMetadata,
    MissingSecondPartials,
    NonPositivePotential,
)
from .graph import TruncatedGraph, distances_from

__all__ = [
    "Nonlinearity",
    "Model",
    "SamplingPlan",
    "HypothesisResult",
    "AuditReport",
    "builtin_nonlinearity",
    "calF",
    "embedding_gamma",
    "embedding_gamma_f5_literal",
    "audit",
    "read_model",
    "PASS",
    "FAIL",
    "NOT_CHECKABLE",
]

PASS = "passes_on_samples"
FAIL = "fails_with_witness"
NOT_CHECKABLE = "not_checkable_on_finite_graph"


def _fd_step(s, t):
    return 1e-5 * (1.0 + np.abs(s) + np.abs(t))


@dataclass
class Nonlinearity:
    """Potential ``F(x, s, t)`` with its partials and hypothesis metadata.

    ``growth_bound`` is a pair ``(a, b)`` of callables, ``a(r)`` on radii and
    ``b(x)`` on vertex indices, with ``|F|, |F_s|, |F_t| <= a(|(s,t)|) b(x)``.
    """

    F: Callable
    F_s: Callable
    F_t: Callable
    F_ss: Callable | None = None
    F_st: Callable | None = None
    F_tt: Callable | None = None
    claims_even: bool = False
    claims_F0: bool = False
    growth_bound: tuple | None = None
    r0: float | None = None
    k: float | None = None
    c: float | None = None
    mu_ar: float | None = None
    sigma: float | None = None
    h: float | None = None
    rho_star: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def has_second_partials(self) -> bool:
        return self.F_ss is not None and self.F_st is not None and self.F_tt is not None

    def second_partials(self, x, s, t, allow_fd=True):
        """``(F_ss, F_st, F_tt)``; central differences of the first partials when not supplied."""
        if self.has_second_partials:
            return self.F_ss(x, s, t), self.F_st(x, s, t), self.F_tt(x, s, t)
        if not allow_fd:
            raise MissingSecondPartials(f"nonlinearity {self.name!r} has no second partials")
        h = _fd_step(s, t)
        Fss = (self.F_s(x, s + h, t) - self.F_s(x, s - h, t)) / (2 * h)
        Ftt = (self.F_t(x, s, t + h) - self.F_t(x, s, t - h)) / (2 * h)
        # average both mixed differences so the Hessian stays symmetric
        Fst = 0.5 * (
            (self.F_s(x, s, t + h) - self.F_s(x, s, t - h)) / (2 * h)
            + (self.F_t(x, s + h, t) - self.F_t(x, s - h, t)) / (2 * h)
        )
        return Fss, Fst, Ftt


def _coef(value, name):
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        c = float(arr)
        return lambda x: np.full(np.shape(x), c)
    arr = arr.copy()
    return lambda x: arr[x]


def _coef_range(value, name, lo_open=0.0, hi_open=1.0):
    arr = np.asarray(value, dtype=float)
    lo, hi = float(arr.min()), float(arr.max())
    if not (lo > lo_open and hi < hi_open):
        raise CoefficientOutOfRange(
            f"{name} must satisfy {lo_open} < inf <= sup < {hi_open}, got inf={lo}, sup={hi}"
        )
    return lo, hi


def _remark11_poly(coeffs):
    c1v = coeffs.get("c1", 0.5)
    c2v = coeffs.get("c2", 0.5)
    if callable(c1v) or callable(c2v):
        raise BadParams("remark11_poly coefficients must be constants or per-vertex arrays")
    lo1, hi1 = _coef_range(c1v, "c1")
    lo2, hi2 = _coef_range(c2v, "c2")
    c1, c2 = _coef(c1v, "c1"), _coef(c2v, "c2")

    def G(s):
        return (5.0 / 6.0) * s**6 - 0.75 * s**4

    def g(s):
        return 5.0 * s**5 - 3.0 * s**3

    def gp(s):
        return 25.0 * s**4 - 9.0 * s**2

    def a_bound(r):
        r = np.asarray(r, dtype=float)
        return (5.0 / 6.0) * r**6 + 5.0 * r**5 + 0.75 * r**4 + 3.0 * r**3

    hi, lo = max(hi1, hi2), min(lo1, lo2)
    # for |(s,t)| >= 2: |F| <= (19/12) sup c P and calF >= (5/12) inf c P, P = s^6 + t^6 <= r^6
    c_const = (19.0 / 12.0 * hi) ** 1.5 / (5.0 / 12.0 * lo)
    return Nonlinearity(
        F=lambda x, s, t: c1(x) * G(s) + c2(x) * G(t),
        F_s=lambda x, s, t: c1(x) * g(s),
        F_t=lambda x, s, t: c2(x) * g(t),
        F_ss=lambda x, s, t: c1(x) * gp(s),
        F_st=lambda x, s, t: np.zeros(np.broadcast(x, s, t).shape),
        F_tt=lambda x, s, t: c2(x) * gp(t),
        claims_even=True,
        claims_F0=True,
        growth_bound=(a_bound, lambda x: np.maximum(c1(x), c2(x))),
        r0=2.0,
        k=1.5,
        c=c_const,
        mu_ar=6.0,
        sigma=1e-3,
        h=0.0,
        name="remark11_poly",
        params={"c1": c1v, "c2": c2v},
    )


def _remark42_exponential(coeffs):
    av = coeffs.get("a", 0.5)
    if callable(av):
        raise BadParams("remark42_exponential coefficient must be a constant or per-vertex array")
    _coef_range(av, "a")
    a = _coef(av, "a")

    def G(s):
        return np.exp(np.abs(s)) * s**4

    def g(s):
        # odd extension: e^{|s|} (sign(s) s^4 + 4 s^3)
        return np.exp(np.abs(s)) * (np.sign(s) * s**4 + 4.0 * s**3)

    def gp(s):
        m = np.abs(s)
        return np.exp(m) * (s**4 + 8.0 * m**3 + 12.0 * s**2)

    def a_bound(r):
        r = np.asarray(r, dtype=float)
        return 2.0 * np.exp(r) * (r**4 + 4.0 * r**3)

    return Nonlinearity(
        F=lambda x, s, t: a(x) * (G(s) + G(t)),
        F_s=lambda x, s, t: a(x) * g(s),
        F_t=lambda x, s, t: a(x) * g(t),
        F_ss=lambda x, s, t: a(x) * gp(s),
        F_st=lambda x, s, t: np.zeros(np.broadcast(x, s, t).shape),
        F_tt=lambda x, s, t: a(x) * gp(t),
        claims_even=True,
        claims_F0=True,
        growth_bound=(a_bound, a),
        r0=1.0,
        mu_ar=4.0,
        sigma=1e-3,
        h=0.0,
        name="remark42_exponential",
        params={"a": av},
    )


def _power_pq(coeffs, p, q, coef):
    if p is None or p < 2:
        raise BadParams(f"power_pq needs p >= 2, got {p!r}")
    if q is not None and q < 2:
        raise BadParams(f"power_pq needs q >= 2 or None, got {q!r}")
    if not coef > 0:
        raise CoefficientOutOfRange(f"power_pq coefficient must be positive, got {coef!r}")

    def G(s, e):
        return np.abs(s) ** e / e

    def g(s, e):
        return np.abs(s) ** (e - 2) * s

    def gp(s, e):
        return (e - 1) * np.abs(s) ** (e - 2)

    zero = lambda x, s, t: np.zeros(np.broadcast(x, s, t).shape)  # noqa: E731
    if q is None:
        F = lambda x, s, t: coef * G(s, p) + 0.0 * t  # noqa: E731
        F_t, F_tt = zero, zero
        exps = [p]
    else:
        F = lambda x, s, t: coef * (G(s, p) + G(t, q))  # noqa: E731
        F_t = lambda x, s, t: coef * g(t, q)  # noqa: E731
        F_tt = lambda x, s, t: coef * gp(t, q)  # noqa: E731
        exps = [p, q]

    def a_bound(r):
        r = np.asarray(r, dtype=float)
        return coef * sum(r**e / e + r ** (e - 1) for e in exps)

    lo = min(exps)
    return Nonlinearity(
        F=F,
        F_s=lambda x, s, t: coef * g(s, p),
        F_t=F_t,
        F_ss=lambda x, s, t: coef * gp(s, p),
        F_st=zero,
        F_tt=F_tt,
        claims_even=True,
        claims_F0=True,
        growth_bound=(a_bound, lambda x: np.ones(np.shape(x))),
        r0=1e-12,
        mu_ar=float(lo),
        sigma=1e-3,
        h=math.inf if lo < 3 else coef * sum(1.0 for e in exps if e == 3),
        name="power_pq",
        params={"p": p, "q": q, "coef": coef},
    )


def builtin_nonlinearity(name: str, coeff_functions: dict | None = None, **params) -> Nonlinearity:
    """Construct one of the built-in nonlinearities.

    ``remark11_poly``
        ``F = c1(x)(5/6 s^6 - 3/4 s^4) + c2(x)(5/6 t^6 - 3/4 t^4)`` with
        ``0 < inf c_i <= sup c_i < 1`` (keys ``c1``, ``c2``; default 0.5).
    ``remark42_exponential``
        ``F = G(x, s) + G(x, t)`` with ``G(x, s) = a(x) e^{|s|} s^4``, the even
        exponential potential; restricted to ``u = v`` it is the scalar equation
        (key ``a``; default 0.5).
    ``power_pq``
        ``F = coef (|s|^p/p + |t|^q/q)``; ``q=None`` drops the ``t`` term.
    """
    coeffs = dict(coeff_functions or {})
    if name == "remark11_poly":
        return _remark11_poly(coeffs)
    if name == "remark42_exponential":
        return _remark42_exponential(coeffs)
    if name == "power_pq":
        return _power_pq(coeffs, params.get("p"), params.get("q"), float(params.get("coef", 1.0)))
    raise BadParams(f"unknown builtin nonlinearity {name!r}")


@dataclass
class Model:
    """Coefficients, potentials and nonlinearity of the coupled system.

    ``V1``/``V2`` are constants or per-vertex arrays.  ``theta`` is the
    homogeneity exponent: 4 with a Kirchhoff term (``max(b1, b2) > 0``),
    2 otherwise, unless ``theta_override`` is set.
    """

    a1: float
    a2: float
    b1: float
    b2: float
    V1: float | np.ndarray
    V2: float | np.ndarray
    nonlinearity: Nonlinearity
    theta_override: float | None = None

    def __post_init__(self):
        for name in ("a1", "a2"):
            if not getattr(self, name) > 0:
                raise BadParams(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("b1", "b2"):
            if not getattr(self, name) >= 0:
                raise BadParams(f"{name} must be nonnegative, got {getattr(self, name)!r}")
        for name in ("V1", "V2"):
            V = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(V)) or np.any(V <= 0):
                raise NonPositivePotential(f"{name} must be positive everywhere")
            setattr(self, name, float(V) if V.ndim == 0 else V.copy())

    @property
    def theta(self) -> float:
        if self.theta_override is not None:
            return float(self.theta_override)
        return 4.0 if max(self.b1, self.b2) > 0 else 2.0

    @property
    def inf_V1(self) -> float:
        return float(np.min(self.V1))

    @property
    def inf_V2(self) -> float:
        return float(np.min(self.V2))

    def potentials(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for name in ("V1", "V2"):
            V = np.asarray(getattr(self, name), dtype=float)
            if V.ndim == 0:
                V = np.full(n, float(V))
            elif V.shape != (n,):
                raise GraphMismatch(f"{name} has {V.size} values for {n} vertices")
            out.append(V)
        return out[0], out[1]

    def with_b(self, b1, b2) -> "Model":
        return replace(self, b1=b1, b2=b2)


def calF(model: Model, x, s, t):
    """``(1/theta)(F_s s + F_t t) - F``."""
    nl = model.nonlinearity
    x = np.asarray(x)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return (nl.F_s(x, s, t) * s + nl.F_t(x, s, t) * t) / model.theta - nl.F(x, s, t)


def embedding_gamma(mu_min: float, inf_V: float, r) -> float:
    """Constant ``gamma_r`` with ``||u||_r <= gamma_r ||u||_E``.

    ``(mu_min inf_V)^((2-r)/(2r)) inf_V^(-1/r)`` for finite ``r`` and
    ``(mu_min inf_V)^(-1/2)`` for ``r = inf``.
    """
    if not (mu_min > 0 and inf_V > 0):
        raise BadParams("mu_min and inf_V must be positive")
    if r == math.inf or r == "inf":
        return (mu_min * inf_V) ** -0.5
    r = float(r)
    if not r >= 2:
        raise BadExponent(f"exponent must satisfy 2 <= r <= inf, got {r!r}")
    return (mu_min * inf_V) ** ((2.0 - r) / (2.0 * r)) * inf_V ** (-1.0 / r)


def embedding_gamma_f5_literal(mu_min: float, inf_V: float) -> float:
    """The ``gamma_2`` value as written in the Ambrosetti-Rabinowitz-type hypothesis.

    It disagrees with :func:`embedding_gamma` at ``r = 2``; reported for
    comparison only.
    """
    return mu_min * math.sqrt(inf_V)


# ---- audit -----------------------------------------------------------------

@dataclass
class SamplingPlan:
    seed: int = 0
    n_samples: int = 1000
    s_range: float = 10.0
    ray_radii: tuple = (10.0, 100.0, 1000.0)
    n_rays: int = 16
    grid: int = 201
    hypotheses: tuple | None = None


@dataclass
class HypothesisResult:
    name: str
    verdict: str
    witness: dict | None = None
    detail: str = ""
    values: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "verdict": self.verdict, "witness": self.witness,
                "detail": self.detail, "values": self.values}


@dataclass
class AuditReport:
    results: dict
    constants: dict
    skipped: list

    @property
    def passed(self) -> bool:
        return all(r.verdict != FAIL for r in self.results.values())

    def verdict(self, name) -> str:
        return self.results[name].verdict

    def to_dict(self):
        return {
            "results": {k: v.to_dict() for k, v in self.results.items()},
            "constants": self.constants,
            "skipped": list(self.skipped),
            "passed": self.passed,
        }

    def to_text(self) -> str:
        width = max([len(k) for k in self.results] + [4])
        lines = []
        for name, res in self.results.items():
            line = f"{name:<{width}}  {res.verdict}"
            if res.detail:
                line += f"  ({res.detail})"
            lines.append(line)
            if res.witness:
                lines.append(" " * (width + 2) + f"witness: {res.witness}")
        for name in self.skipped:
            lines.append(f"{name:<{width}}  skipped (metadata not supplied)")
        lines.append("")
        for k, v in self.constants.items():
            lines.append(f"{k} = {v!r}")
        return "\n".join(lines) + "\n"


ALL_HYPOTHESES = ("V", "V_coercive", "F0", "F1", "C1", "C2", "F2", "F3", "F4", "F5", "F6", "partials")

_REQUIRES = {
    "F1": ("growth_bound",),
    "C1": ("growth_bound",),
    "C2": ("growth_bound",),
    "F3": ("r0",),
    "F4": ("r0", "k", "c"),
    "F5": ("mu_ar", "sigma"),
}


def _witness(x_idx, g, s, t, **extra):
    x_idx = int(x_idx)
    out = {"vertex": _jsonable_id(g.vertex_ids[x_idx]), "index": x_idx, "s": float(s), "t": float(t)}
    out.update(extra)
    return out


def _jsonable_id(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, tuple):
        return list(x)
    return x


def _sample_points(plan, rng):
    probes = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5], [0.5, -2.0], [2.0, 2.0]])
    m = max(plan.n_samples - len(probes), 0)
    half = m // 2
    box = rng.uniform(-plan.s_range, plan.s_range, size=(half, 2))
    radius = np.exp(rng.uniform(np.log(1e-3), np.log(plan.s_range), size=m - half))
    angle = rng.uniform(0, 2 * np.pi, size=m - half)
    polar = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return np.vstack([probes, box, polar])


def _grid_eval(g, n, pts, plan, rng):
    """Broadcast sample points against vertices: returns (x, s, t) arrays."""
    if n * len(pts) <= 2_000_000:
        X = np.repeat(np.arange(n)[:, None], len(pts), axis=1)
        S = np.broadcast_to(pts[:, 0], X.shape)
        T = np.broadcast_to(pts[:, 1], X.shape)
        return X.ravel(), np.ascontiguousarray(S).ravel(), np.ascontiguousarray(T).ravel()
    X = rng.integers(0, n, size=len(pts))
    return X, pts[:, 0].copy(), pts[:, 1].copy()


def _diamond_max(fun, radius, grid):
    """Max of ``fun(|(s,t)|)`` over ``|s| + |t| <= radius``: grid plus local refinement."""
    if radius <= 0:
        return float(fun(np.zeros(1))[0]), (0.0, 0.0)
    lin = np.linspace(-radius, radius, grid)
    S, T = np.meshgrid(lin, lin)
    mask = np.abs(S) + np.abs(T) <= radius * (1 + 1e-12)
    S, T = S[mask], T[mask]
    vals = fun(np.hypot(S, T))
    k = int(np.argmax(vals))
    best, bs, bt = float(vals[k]), float(S[k]), float(T[k])
    step = 2 * radius / (grid - 1)
    for _ in range(6):
        loc = np.linspace(-step, step, 21)
        s2, t2 = np.meshgrid(bs + loc, bt + loc)
        s2, t2 = s2.ravel(), t2.ravel()
        keep = np.abs(s2) + np.abs(t2) <= radius * (1 + 1e-12)
        s2, t2 = s2[keep], t2[keep]
        v2 = fun(np.hypot(s2, t2))
        k = int(np.argmax(v2))
        if v2[k] > best:
            best, bs, bt = float(v2[k]), float(s2[k]), float(t2[k])
        step /= 10
    return best, (bs, bt)


def _center_index(g, plan_center=None):
    if isinstance(g, TruncatedGraph):
        return g.interior.index(g.center)
    return 0 if plan_center is None else g.index(plan_center)


def audit(g, model: Model, sampling_plan: SamplingPlan | None = None, *, center=None) -> AuditReport:
    """Check the structural hypotheses on ``model`` at sample points.

    Limit hypotheses are judged by trend evidence only and are reported as
    ``passes_on_samples`` at best; coercivity of the potentials cannot be
    decided on a finite graph at all.
    """
    plan = sampling_plan or SamplingPlan()
    nl = model.nonlinearity
    base = g.interior if isinstance(g, TruncatedGraph) else g
    n = base.n_vertices
    V1, V2 = model.potentials(n)
    theta = model.theta
    rng = np.random.default_rng(plan.seed)

    requested = tuple(plan.hypotheses) if plan.hypotheses is not None else ALL_HYPOTHESES
    for name in requested:
        if name not in ALL_HYPOTHESES:
            raise BadParams(f"unknown hypothesis {name!r}")
    skipped = []
    todo = []
    for name in requested:
        missing = [f for f in _REQUIRES.get(name, ()) if getattr(nl, f) is None]
        if missing:
            if plan.hypotheses is not None:
                raise MissingMetadata(f"hypothesis {name} needs {', '.join(missing)}")
            skipped.append(name)
        else:
            todo.append(name)

    mu_min = base.mu_min
    consts = {"theta": theta, "mu_min": mu_min, "inf_V1": float(V1.min()), "inf_V2": float(V2.min())}
    for i, V in ((1, V1), (2, V2)):
        for r in (2, 3, 4, 6):
            consts[f"gamma_{r}_{i}"] = embedding_gamma(mu_min, float(V.min()), r)
        consts[f"gamma_inf_{i}"] = embedding_gamma(mu_min, float(V.min()), math.inf)
        consts[f"gamma_2_{i}_f5_literal"] = embedding_gamma_f5_literal(mu_min, float(V.min()))

    pts = _sample_points(plan, rng)
    X, S, T = _grid_eval(base, n, pts, plan, rng)
    results = {}

    with np.errstate(over="ignore", invalid="ignore"):
        Fv = nl.F(X, S, T)
        Fs = nl.F_s(X, S, T)
        Ft = nl.F_t(X, S, T)
        R = np.hypot(S, T)

        for name in todo:
            if name == "V":
                bad = np.flatnonzero(np.minimum(V1, V2) <= 0)
                if bad.size:
                    k = int(bad[0])
                    results[name] = HypothesisResult(name, FAIL, {"vertex": _jsonable_id(base.vertex_ids[k]),
                                                                  "index": k, "V1": float(V1[k]), "V2": float(V2[k])})
                else:
                    results[name] = HypothesisResult(name, PASS, detail="inf V_i > 0")

            elif name == "V_coercive":
                c = _center_index(g, center)
                dist = distances_from(base, base.vertex_ids[c])
                shell = dist == dist.max()
                vals = {"center": _jsonable_id(base.vertex_ids[c]), "outer_shell_distance": int(dist.max()),
                        "min_V1_outer_shell": float(V1[shell].min()), "min_V2_outer_shell": float(V2[shell].min())}
                results[name] = HypothesisResult(name, NOT_CHECKABLE, detail="growth at infinity", values=vals)

            elif name == "F0":
                idx = np.arange(n)
                z = np.zeros(n)
                F00 = nl.F(idx, z, z)
                bad = np.flatnonzero(F00 != 0)
                if bad.size:
                    results[name] = HypothesisResult(name, FAIL, _witness(bad[0], base, 0.0, 0.0, F=float(F00[bad[0]])))
                else:
                    results[name] = HypothesisResult(name, PASS, detail="F(x,0,0) = 0 at every vertex")

            elif name == "F1":
                a_fn, b_fn = nl.growth_bound
                bound = a_fn(R) * b_fn(X)
                lhs = np.maximum(np.abs(Fv), np.maximum(np.abs(Fs), np.abs(Ft)))
                bad = np.flatnonzero(~(lhs <= bound * (1 + 1e-12) + 1e-300))
                if bad.size:
                    k = bad[0]
                    results[name] = HypothesisResult(name, FAIL, _witness(X[k], base, S[k], T[k], lhs=float(lhs[k]),
                                                                          bound=float(bound[k])))
                else:
                    results[name] = HypothesisResult(name, PASS, values={"int_b": float(np.dot(b_fn(np.arange(n)), base.measure))})

            elif name == "C1":
                a_fn, _ = nl.growth_bound
                radii = 10.0 ** -np.arange(1, 9)
                q = a_fn(radii) / radii**2
                vals = {"radii": radii.tolist(), "a_over_r2": q.tolist()}
                # converging ratio: successive differences must die out
                ok = bool(np.all(np.isfinite(q))) and abs(q[-1] - q[-2]) <= 1e-3 * (1 + abs(q[-1]))
                if ok and nl.h is not None and math.isfinite(nl.h):
                    ok = abs(q[-1] - nl.h) <= 1e-3 * (1 + abs(nl.h))
                if ok:
                    results[name] = HypothesisResult(name, PASS, detail="a(r)/r^2 bounded as r -> 0", values=vals)
                else:
                    results[name] = HypothesisResult(name, FAIL, {"r": float(radii[-1]), "a_over_r2": float(q[-1]),
                                                                  "h": nl.h}, values=vals)

            elif name == "C2":
                a_fn, b_fn = nl.growth_bound
                int_b = float(np.dot(b_fn(np.arange(n)), base.measure))
                cgam = consts["gamma_inf_1"] + consts["gamma_inf_2"]

                def alpha(rho):
                    m, st = _diamond_max(a_fn, cgam * rho, plan.grid)
                    return 0.25 * rho**2 - m * int_b, st

                if nl.rho_star is not None:
                    rho = float(nl.rho_star)
                    a_star, st = alpha(rho)
                else:
                    best = None
                    for rho in np.logspace(-6, 2, 81):
                        val, st = alpha(float(rho))
                        if best is None or val > best[0]:
                            best = (val, st, float(rho))
                    a_star, st, rho = best
                consts["rho_star"] = rho
                consts["alpha_star"] = a_star
                vals = {"rho_star": rho, "alpha_star": a_star, "int_b": int_b, "search": nl.rho_star is None}
                if a_star > 0:
                    results[name] = HypothesisResult(name, PASS, detail=f"alpha* = {a_star:.6g} > 0", values=vals)
                else:
                    results[name] = HypothesisResult(name, FAIL, {"s": st[0], "t": st[1], "rho_star": rho,
                                                                  "alpha_star": a_star}, values=vals)

            elif name == "F2":
                ang = np.linspace(0, 2 * np.pi, plan.n_rays, endpoint=False)
                radii = np.asarray(plan.ray_radii, dtype=float)
                idx = np.arange(n)
                witness = None
                for th in ang:
                    prev = None
                    for r in radii:
                        s, t = r * np.cos(th), r * np.sin(th)
                        ratio = nl.F(idx, np.full(n, s), np.full(n, t)) / r**theta
                        ratio = np.where(np.isnan(ratio), -np.inf, ratio)
                        if prev is not None:
                            bad = np.flatnonzero(~(ratio > prev))
                            if bad.size:
                                k = bad[0]
                                witness = _witness(k, base, s, t, ratio=float(ratio[k]), previous_ratio=float(prev[k]))
                                break
                        prev = ratio
                    if witness:
                        break
                if witness:
                    results[name] = HypothesisResult(name, FAIL, witness, detail=f"F/|(s,t)|^{theta:g} not increasing")
                else:
                    results[name] = HypothesisResult(name, PASS, detail=f"F/|(s,t)|^{theta:g} increasing along rays")

            elif name == "F3":
                r0 = float(nl.r0)
                m = len(pts)
                rad = np.exp(rng.uniform(np.log(r0), np.log(max(2 * r0, plan.s_range)), size=m))
                ang = rng.uniform(0, 2 * np.pi, size=m)
                X3 = rng.integers(0, n, size=m)
                S3, T3 = rad * np.cos(ang), rad * np.sin(ang)
                F3 = nl.F(X3, S3, T3)
                bad = np.flatnonzero(~(F3 >= 0))
                if bad.size:
                    k = bad[0]
                    results[name] = HypothesisResult(name, FAIL, _witness(X3[k], base, S3[k], T3[k], F=float(F3[k])))
                else:
                    results[name] = HypothesisResult(name, PASS, detail=f"F >= 0 for |(s,t)| >= {r0:g}")

            elif name == "F4":
                cF = (Fs * S + Ft * T) / theta - Fv
                tol = 1e-12 * (np.abs(Fs * S) + np.abs(Ft * T) + np.abs(Fv))
                bad = np.flatnonzero(~(cF >= -tol))
                witness = None
                if bad.size:
                    k = bad[0]
                    witness = _witness(X[k], base, S[k], T[k], calF=float(cF[k]))
                else:
                    far = R >= nl.r0
                    lhs = np.abs(Fv) ** nl.k
                    rhs = nl.c * R ** (2 * nl.k) * cF
                    bad = np.flatnonzero(far & ~(lhs <= rhs * (1 + 1e-10)))
                    if bad.size:
                        k = bad[0]
                        witness = _witness(X[k], base, S[k], T[k], lhs=float(lhs[k]), rhs=float(rhs[k]))
                if witness:
                    results[name] = HypothesisResult(name, FAIL, witness)
                else:
                    results[name] = HypothesisResult(name, PASS, detail=f"calF >= 0 and |F|^k <= c r^2k calF (k={nl.k:g})")

            elif name == "F5":
                gmax = max(consts["gamma_2_1"], consts["gamma_2_2"]) ** 2
                glit = max(consts["gamma_2_1_f5_literal"], consts["gamma_2_2_f5_literal"]) ** 2
                sig_hi = (nl.mu_ar - 2) / (2 * gmax)
                vals = {"mu": nl.mu_ar, "sigma": nl.sigma, "sigma_upper": sig_hi,
                        "sigma_upper_f5_literal": (nl.mu_ar - 2) / (2 * glit)}
                witness = None
                if not nl.mu_ar > theta:
                    witness = {"mu": nl.mu_ar, "theta": theta, "reason": "mu must exceed theta"}
                elif not 0 < nl.sigma < sig_hi:
                    witness = {"sigma": nl.sigma, "sigma_upper": sig_hi, "reason": "sigma out of range"}
                else:
                    lhs = nl.mu_ar * Fv
                    rhs = S * Fs + T * Ft + nl.sigma * (S**2 + T**2)
                    scale = np.abs(lhs) + np.abs(S * Fs) + np.abs(T * Ft)
                    bad = np.flatnonzero(~(lhs <= rhs + 1e-12 * scale))
                    if bad.size:
                        k = bad[0]
                        witness = _witness(X[k], base, S[k], T[k], lhs=float(lhs[k]), rhs=float(rhs[k]))
                if witness:
                    results[name] = HypothesisResult(name, FAIL, witness, values=vals)
                else:
                    results[name] = HypothesisResult(name, PASS, values=vals)

            elif name == "F6":
                Fm = nl.F(X, -S, -T)
                bad = np.flatnonzero(~(np.abs(Fv - Fm) <= 1e-12 * (1 + np.abs(Fv))))
                if bad.size:
                    k = bad[0]
                    results[name] = HypothesisResult(name, FAIL, _witness(X[k], base, S[k], T[k], F=float(Fv[k]),
                                                                          F_negated=float(Fm[k])))
                else:
                    results[name] = HypothesisResult(name, PASS, detail="F(x,s,t) = F(x,-s,-t)")

            elif name == "partials":
                witness = _check_partials(nl, base, X, S, T, Fs, Ft)
                if witness:
                    results[name] = HypothesisResult(name, FAIL, witness)
                else:
                    detail = "first partials match finite differences"
                    if nl.has_second_partials:
                        detail += "; second partials too"
                    results[name] = HypothesisResult(name, PASS, detail=detail)

    return AuditReport(results=results, constants=consts, skipped=skipped)


def _check_partials(nl, g, X, S, T, Fs, Ft):
    keep = (np.abs(S) <= 50) & (np.abs(T) <= 50)
    X, S, T, Fs, Ft = X[keep], S[keep], T[keep], Fs[keep], Ft[keep]
    h = _fd_step(S, T)
    checks = [
        ("F_s", Fs, (nl.F(X, S + h, T) - nl.F(X, S - h, T)) / (2 * h), 1e-6),
        ("F_t", Ft, (nl.F(X, S, T + h) - nl.F(X, S, T - h)) / (2 * h), 1e-6),
    ]
    if nl.has_second_partials:
        checks += [
            ("F_ss", nl.F_ss(X, S, T), (nl.F_s(X, S + h, T) - nl.F_s(X, S - h, T)) / (2 * h), 1e-5),
            ("F_st", nl.F_st(X, S, T), (nl.F_s(X, S, T + h) - nl.F_s(X, S, T - h)) / (2 * h), 1e-5),
            ("F_tt", nl.F_tt(X, S, T), (nl.F_t(X, S, T + h) - nl.F_t(X, S, T - h)) / (2 * h), 1e-5),
        ]
    for label, exact, approx, rtol in checks:
        bad = np.flatnonzero(~(np.abs(exact - approx) <= rtol * (1 + np.abs(exact))))
        if bad.size:
            k = bad[0]
            return _witness(X[k], g, S[k], T[k], partial=label, analytic=float(exact[k]), finite_difference=float(approx[k]))
    return None


# ---- model file --------------------------------------------------------------

_META_KEYS = ("r0", "k", "c", "mu_ar", "sigma", "h", "rho_star")


def _parse_value(tok, path, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise MalformedFile(f"not a number: {tok!r}", path, lineno) from None
    if not math.isfinite(v):
        raise MalformedFile(f"non-finite number: {tok!r}", path, lineno)
    return v


def read_model(path, g) -> tuple[Model, SamplingPlan]:
    """Parse a model file for graph ``g``.

    Grammar (one record per line, ``#`` comments, every key at most once)::

        a1 <float>            a2 <float>        b1 <float>     b2 <float>
        theta <2|4>                                   # optional override
        potential V1 const <float> | potential V1 file <path>
        potential V2 ...
        nonlinearity <name> [key=value ...]          # value: float, none, file:<path>
        meta <r0|k|c|mu_ar|sigma|h|rho_star> <float>
        audit <seed|samples|range|rays> <value>
    """
    base = g.interior if isinstance(g, TruncatedGraph) else g
    folder = os.path.dirname(os.path.abspath(path))
    seen = {}
    scalars = {}
    potentials = {}
    nl_spec = None
    meta = {}
    plan = SamplingPlan()

    def claim(key, lineno):
        if key in seen:
            raise MalformedFile(f"duplicate key {key!r} (first on line {seen[key]})", path, lineno)
        seen[key] = lineno

    def load_array(ref, lineno):
        fpath = ref if os.path.isabs(ref) else os.path.join(folder, ref)
        if not os.path.exists(fpath):
            raise MalformedFile(f"file not found: {ref!r}", path, lineno)
        return read_vertex_function(base, fpath)

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            key = tok[0]
            if key in ("a1", "a2", "b1", "b2", "theta"):
                if len(tok) != 2:
                    raise MalformedFile(f"expected '{key} <float>'", path, lineno)
                claim(key, lineno)
                scalars[key] = _parse_value(tok[1], path, lineno)
            elif key == "potential":
                if len(tok) != 4 or tok[1] not in ("V1", "V2") or tok[2] not in ("const", "file"):
                    raise MalformedFile("expected 'potential V1|V2 const <c>|file <path>'", path, lineno)
                claim(f"potential {tok[1]}", lineno)
                if tok[2] == "const":
                    potentials[tok[1]] = _parse_value(tok[3], path, lineno)
                else:
                    potentials[tok[1]] = load_array(tok[3], lineno)
            elif key == "nonlinearity":
                if len(tok) < 2:
                    raise MalformedFile("expected 'nonlinearity <name> [key=value ...]'", path, lineno)
                claim("nonlinearity", lineno)
                params = {}
                for item in tok[2:]:
                    if "=" not in item:
                        raise MalformedFile(f"expected key=value, got {item!r}", path, lineno)
                    k, v = item.split("=", 1)
                    if k in params:
                        raise MalformedFile(f"duplicate parameter {k!r}", path, lineno)
                    if v == "none":
                        params[k] = None
                    elif v.startswith("file:"):
                        params[k] = load_array(v[5:], lineno)
                    else:
                        params[k] = _parse_value(v, path, lineno)
                nl_spec = (tok[1], params, lineno)
            elif key == "meta":
                if len(tok) != 3 or tok[1] not in _META_KEYS:
                    raise MalformedFile(f"expected 'meta <{'|'.join(_META_KEYS)}> <float>'", path, lineno)
                claim(f"meta {tok[1]}", lineno)
                meta[tok[1]] = _parse_value(tok[2], path, lineno)
            elif key == "audit":
                fields = {"seed": "seed", "samples": "n_samples", "range": "s_range", "rays": "n_rays"}
                if len(tok) != 3 or tok[1] not in fields:
                    raise MalformedFile("expected 'audit <seed|samples|range|rays> <value>'", path, lineno)
                claim(f"audit {tok[1]}", lineno)
                val = _parse_value(tok[2], path, lineno)
                if tok[1] in ("seed", "samples", "rays"):
                    if val != int(val) or val < 0:
                        raise MalformedFile(f"audit {tok[1]} must be a nonnegative integer", path, lineno)
                    val = int(val)
                plan = replace(plan, **{fields[tok[1]]: val})
            else:
                raise MalformedFile(f"unknown key {key!r}", path, lineno)

    for key in ("a1", "a2", "b1", "b2"):
        if key not in scalars:
            raise MalformedFile(f"missing required key {key!r}", path)
    if nl_spec is None:
        raise MalformedFile("missing 'nonlinearity' line", path)
    name, params, nl_line = nl_spec
    try:
        if name == "power_pq":
            for k in params:
                if k not in ("p", "q", "coef"):
                    raise MalformedFile(f"unknown power_pq parameter {k!r}", path, nl_line)
            nl = builtin_nonlinearity(name, p=params.get("p"), q=params.get("q"), coef=params.get("coef", 1.0))
        else:
            allowed = {"remark11_poly": ("c1", "c2"), "remark42_exponential": ("a",)}.get(name)
            if allowed is None:
                raise MalformedFile(f"unknown nonlinearity {name!r}", path, nl_line)
            for k in params:
                if k not in allowed:
                    raise MalformedFile(f"unknown {name} parameter {k!r}", path, nl_line)
            nl = builtin_nonlinearity(name, params)
    except (BadParams, CoefficientOutOfRange) as exc:
        raise MalformedFile(str(exc), path, nl_line) from exc
    for k, v in meta.items():
        setattr(nl, k, v)
    model = Model(
        a1=scalars["a1"], a2=scalars["a2"], b1=scalars["b1"], b2=scalars["b2"],
        V1=potentials.get("V1", 1.0), V2=potentials.get("V2", 1.0),
        nonlinearity=nl, theta_override=scalars.get("theta"),
    )
    model.potentials(base.n_vertices)
    return model, plan
