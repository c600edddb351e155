"""Critical points of the energy: deflated Newton, mountain pass, enumeration.

All runs are sequential and driven by one seeded generator, so identical
inputs give identical record lists.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .energy import Discretization, StatePair
from .exceptions import (
    BadFarPoint,
    BadParams,
    FoundFewer,
    NoConvergence,
    SingularJacobian,
    SymmetryViolated,
)
from .model import Model

__all__ = [
    "SolverConfig",
    "SolutionRecord",
    "EnumerationResult",
    "newton_solve",
    "mountain_pass",
    "antipode",
    "enumerate_solutions",
    "deflation_search",
    "multistart_sweep",
    "verify_state",
    "weak_form_check",
]

METHODS = ("newton_deflated", "mountain_pass")
TRIVIAL_NORM = 1e-8
DEDUP_DISTANCE = 1e-6
DIRECT_LIMIT = 2000
ROOT_START_SCALES = (0.1, 0.3, 1.0)


@dataclass
class SolverConfig:
    """Solver settings.

    ``initial_states`` may hold explicit starts (StatePair or ``(u, v)``);
    otherwise starts are drawn from ``seed`` on E-norm shells of radius
    ``shell_base * 2**j``, ``j < n_shells``.
    """

    method: str = "newton_deflated"
    tol_residual: float = 1e-9
    max_iters: int = 100
    deflation_power: float = 2.0
    deflation_shift: float = 1.0
    initial_states: list | None = None
    line_search_factor: float = 0.5
    line_search_max_halvings: int = 40
    mp_path_points: int = 21
    mp_max_deformations: int = 500
    mp_descent_step: float = 0.5
    mp_switch_tol: float = 1e-4
    n_starts: int = 64
    roots_per_start: int = 8
    n_shells: int = 5
    shell_base: float | None = None
    linear_solver: str = "auto"
    allow_fd_hessian: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise BadParams(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.tol_residual > 0:
            raise BadParams("tol_residual must be positive")
        if self.max_iters < 1:
            raise BadParams("max_iters must be positive")
        if self.mp_path_points < 3:
            raise BadParams("mp_path_points must be at least 3")
        if not 0 < self.line_search_factor < 1:
            raise BadParams("line_search_factor must lie in (0, 1)")
        if self.linear_solver not in ("auto", "direct", "gmres"):
            raise BadParams(f"unknown linear_solver {self.linear_solver!r}")


@dataclass
class SolutionRecord:
    id: int
    state: StatePair
    energy: float
    residual_sup: float
    method: str
    deflated_against: tuple = ()
    iterations: int = 0
    is_trivial: bool = False
    antipode_of: int | None = None
    e_norm: float = 0.0

    def summary(self) -> dict:
        return {
            "id": self.id,
            "energy": self.energy,
            "residual_sup": self.residual_sup,
            "method": self.method,
            "deflated_against": list(self.deflated_against),
            "iterations": self.iterations,
            "is_trivial": self.is_trivial,
            "antipode_of": self.antipode_of,
            "e_norm": self.e_norm,
        }


class EnumerationResult(list):
    """Representatives sorted by energy; ``antipodes[id]`` holds each partner
    and ``found`` every accepted root in discovery order."""

    def __init__(self, reps=(), antipodes=None, found=()):
        super().__init__(reps)
        self.antipodes = dict(antipodes or {})
        self.found = list(found)

    @property
    def energies(self) -> list:
        return [r.energy for r in self]


# ---------------------------------------------------------------------------
# helpers


def _disc(g, model, config) -> Discretization:
    return Discretization(g, model, allow_fd_hessian=config.allow_fd_hessian)


def _flat(d: Discretization, state) -> np.ndarray:
    u, v = d.split(state)
    return np.concatenate([u, v])


def _make_record(d, x, method, rid, iterations=0, against=(), antipode_of=None) -> SolutionRecord:
    state = StatePair.from_flat(x)
    R = d.residual_flat(x)
    enorm = d.e_norm(x)
    return SolutionRecord(
        id=rid,
        state=state,
        energy=d.energy(state),
        residual_sup=float(np.max(np.abs(R))) if R.size else 0.0,
        method=method,
        deflated_against=tuple(against),
        iterations=iterations,
        is_trivial=enorm < TRIVIAL_NORM,
        antipode_of=antipode_of,
        e_norm=enorm,
    )


class _LinearSolver:
    """Solve ``J(x) delta = rhs``: assembled LU plus Woodbury, or GMRES."""

    def __init__(self, d: Discretization, config: SolverConfig):
        self.d = d
        mode = config.linear_solver
        if mode == "auto":
            mode = "direct" if d.n <= DIRECT_LIMIT else "gmres"
        self.mode = mode

    def solve(self, x, rhs, iterate_for_error=None):
        if self.mode == "direct":
            return self._direct(x, rhs)
        return self._gmres(x, rhs)

    def _direct(self, x, rhs):
        S, U, W = self.d.jacobian_parts(x)
        if isinstance(S, np.ndarray):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                    y = scipy.linalg.solve(S + U @ W.T, rhs)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
                raise SingularJacobian(f"Jacobian is singular: {exc}", iterate=StatePair.from_flat(x)) from exc
            if not np.all(np.isfinite(y)):
                raise SingularJacobian("Jacobian solve produced non-finite values", iterate=StatePair.from_flat(x))
            return y
        try:
            lu = splinalg.splu(S.tocsc())
            y = lu.solve(rhs)
            if U.shape[1]:
                Z = lu.solve(U)
                cap = np.eye(U.shape[1]) + W.T @ Z
                y = y - Z @ np.linalg.solve(cap, W.T @ y)
        except (RuntimeError, np.linalg.LinAlgError):
            # the sparse part alone may be singular; try the full matrix
            J = S.toarray() + U @ W.T
            try:
                y = scipy.linalg.solve(J, rhs)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
                raise SingularJacobian(f"Jacobian is singular: {exc}", iterate=StatePair.from_flat(x)) from exc
        if not np.all(np.isfinite(y)):
            raise SingularJacobian("Jacobian solve produced non-finite values", iterate=StatePair.from_flat(x))
        return y

    def _gmres(self, x, rhs):
        d = self.d
        S, U, W = d.jacobian_parts(x)
        diag = S.diagonal() + np.einsum("ij,ij->i", U, W)
        diag = np.where(np.abs(diag) > 1e-14, diag, 1.0)
        N = rhs.size
        A = splinalg.LinearOperator((N, N), matvec=lambda p: d.jacobian_apply_flat(x, p))
        P = splinalg.LinearOperator((N, N), matvec=lambda p: p / diag)
        tol = 1e-12
        for restart in (50, 200, 1000):
            y, info = splinalg.gmres(A, rhs, M=P, rtol=tol, atol=0.0, restart=restart, maxiter=20)
            if info == 0:
                return y
        if info < 0:
            raise SingularJacobian("GMRES breakdown", iterate=StatePair.from_flat(x))
        return y


class _Deflation:
    def __init__(self, d, roots, power, shift):
        self.d = d
        self.W = np.array(roots, dtype=float).reshape(len(roots), 2 * d.n)
        self.p = power
        self.shift = shift

    def log_factor_and_gradient(self, x):
        """``log m(x)`` and ``grad log m(x)`` for the deflation factor ``m``."""
        if not len(self.W):
            return 0.0, np.zeros_like(x)
        p = self.p
        diff = x[None, :] - self.W
        Gd = (self.d.G @ diff.T).T
        dist2 = np.maximum(np.einsum("ij,ij->i", diff, Gd), 1e-300)
        mw = dist2 ** (-p / 2) + self.shift
        # d/dx ||d||^-p = -p ||d||^(-p-2) G d
        glog = ((-p * dist2 ** (-p / 2 - 1) / mw)[:, None] * Gd).sum(axis=0)
        return float(np.sum(np.log(mw))), glog


def _coerce_roots(d, known):
    out, ids = [], []
    for k in known or ():
        if isinstance(k, SolutionRecord):
            out.append(k.state.flat())
            ids.append(k.id)
        else:
            out.append(_flat(d, k))
    return out, ids


def _newton(d, config, x0, roots, solver=None):
    """Deflated damped Newton from ``x0``; returns ``(x, iterations)``."""
    solver = solver or _LinearSolver(d, config)
    defl = _Deflation(d, roots, config.deflation_power, config.deflation_shift)
    x = np.array(x0, dtype=float)
    tol = config.tol_residual
    for it in range(config.max_iters + 1):
        R = d.residual_flat(x)
        rsup = float(np.max(np.abs(R)))
        if not math.isfinite(rsup):
            raise NoConvergence("residual became non-finite", iterate=StatePair.from_flat(x), iterations=it)
        if rsup <= tol:
            return x, it
        if it == config.max_iters:
            break
        delta = solver.solve(x, -R)
        # line search on the log of the deflated residual norm
        logm = 0.0
        if roots:
            logm, glog = defl.log_factor_and_gradient(x)
            denom = 1.0 - float(glog @ delta)
            if abs(denom) < 1e-14:
                denom = math.copysign(1e-14, denom)
            delta = delta / denom
        merit0 = logm + math.log(float(np.linalg.norm(R)))
        lam = 1.0
        for _ in range(config.line_search_max_halvings + 1):
            y = x + lam * delta
            Ry = d.residual_flat(y)
            rn = float(np.linalg.norm(Ry))
            if math.isfinite(rn) and float(np.max(np.abs(Ry))) <= tol:
                break
            if math.isfinite(rn) and rn > 0:
                merit = math.log(rn) + (defl.log_factor_and_gradient(y)[0] if roots else 0.0)
                if merit < merit0 + math.log1p(-1e-4 * lam):
                    break
            lam *= config.line_search_factor
        else:
            raise NoConvergence("line search failed", iterate=StatePair.from_flat(x), iterations=it)
        x = y
        if d.e_norm_sq(x) > 1e16:
            raise NoConvergence("iterate diverged", iterate=StatePair.from_flat(x), iterations=it)
    raise NoConvergence(f"no convergence in {config.max_iters} iterations",
                        iterate=StatePair.from_flat(x), iterations=config.max_iters)


def _near_known(d, x, roots) -> bool:
    return any(d.e_norm(x - w) <= DEDUP_DISTANCE for w in roots)


# ---------------------------------------------------------------------------
# public solvers


def newton_solve(g, model: Model, config: SolverConfig, start, known=(), *, rid: int = 0) -> SolutionRecord:
    """Deflated damped Newton from ``start`` against the ``known`` roots."""
    d = _disc(g, model, config)
    roots, ids = _coerce_roots(d, known)
    x, its = _newton(d, config, _flat(d, start), roots)
    if _near_known(d, x, roots):
        raise NoConvergence("converged to a known root", iterate=StatePair.from_flat(x), iterations=its)
    return _make_record(d, x, "newton_deflated", rid, its, ids)


def _lowest_mode(G, mu) -> np.ndarray:
    n = mu.size
    if n <= 1500:
        G = G if isinstance(G, np.ndarray) else G.toarray()
        _, vec = scipy.linalg.eigh(G, np.diag(mu), subset_by_index=[0, 0])
        e = vec[:, 0]
    else:
        _, vec = splinalg.eigsh(G.tocsc(), k=1, M=sparse.diags(mu).tocsc(), sigma=0, which="LM")
        e = vec[:, 0]
    # deterministic sign
    k = int(np.argmax(np.abs(e)))
    return e if e[k] > 0 else -e


def _default_far_points(d):
    e1 = _lowest_mode(d.G1, d.mu)
    e2 = _lowest_mode(d.G2, d.mu)
    z = np.zeros(d.n)
    cands = [np.concatenate([e1, z]), np.concatenate([z, e2]), np.concatenate([e1, e2])]
    return [c / d.e_norm(c) for c in cands]


def _scale_to_negative(d, x):
    for _ in range(61):
        if d.energy(x) < 0:
            return x
        x = 2.0 * x
    return None


def _reparametrize(d, nodes):
    """Redistribute interior nodes uniformly in E-arclength along the polygon."""
    seg = np.array([d.e_norm(nodes[k + 1] - nodes[k]) for k in range(len(nodes) - 1)])
    total = seg.sum()
    if total == 0:
        return nodes
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, len(nodes))
    out = nodes.copy()
    for k in range(1, len(nodes) - 1):
        j = min(int(np.searchsorted(s, targets[k], side="right")) - 1, len(seg) - 1)
        t = 0.0 if seg[j] == 0 else (targets[k] - s[j]) / seg[j]
        out[k] = (1 - t) * nodes[j] + t * nodes[j + 1]
    return out


def mountain_pass(g, model: Model, config: SolverConfig, far_point=None, *, rid: int = 0) -> SolutionRecord:
    """Deform the segment from 0 to ``far_point`` by lowering its highest node.

    The highest interior node moves along the negative E-gradient (obtained
    by solving the Gram system) with an Armijo step.  Once its residual is
    below ``mp_switch_tol`` an undeflated Newton iteration polishes it to
    ``tol_residual``.
    """
    d = _disc(g, model, config)
    if far_point is None:
        end = None
        for c in _default_far_points(d):
            end = _scale_to_negative(d, c)
            if end is not None:
                break
    else:
        end = _flat(d, far_point)
        if not np.any(end):
            raise BadFarPoint("far point is the zero state")
        end = _scale_to_negative(d, end)
    if end is None:
        raise BadFarPoint("energy stays nonnegative after 60 doublings")

    if isinstance(d.G, np.ndarray):
        Gcho = scipy.linalg.cho_factor(d.G)
        gram_solve = lambda r: scipy.linalg.cho_solve(Gcho, r)  # noqa: E731
    else:
        gram_solve = splinalg.splu(d.G.tocsc()).solve
    N = config.mp_path_points
    nodes = np.outer(np.linspace(0.0, 1.0, N), end)
    E = np.array([d.energy(p) for p in nodes])
    step = config.mp_descent_step
    its = 0
    for its in range(1, config.mp_max_deformations + 1):
        i = 1 + int(np.argmax(E[1:-1]))
        x = nodes[i]
        R = d.residual_flat(x)
        if float(np.max(np.abs(R))) <= max(config.mp_switch_tol, config.tol_residual):
            break
        MR = d.mass2 * R
        grad = gram_solve(MR)
        gn2 = float(grad @ MR)
        s = step
        for _ in range(config.line_search_max_halvings + 1):
            y = x - s * grad
            Ey = d.energy(y)
            if Ey <= E[i] - 1e-4 * s * gn2:
                break
            s *= config.line_search_factor
        else:
            break
        nodes[i] = y
        E[i] = Ey
        step = min(2 * s, config.mp_descent_step)
        seg = np.array([d.e_norm(nodes[k + 1] - nodes[k]) for k in range(N - 1)])
        if seg.max() > 2.0 * seg.mean():
            nodes = _reparametrize(d, nodes)
            E = np.array([d.energy(p) for p in nodes])
    i = 1 + int(np.argmax(E[1:-1]))
    peak = nodes[i]
    try:
        x, newton_its = _newton(d, config, peak, [])
    except NoConvergence as exc:
        raise NoConvergence(f"mountain pass did not converge: {exc}", iterate=StatePair.from_flat(peak),
                            iterations=its) from exc
    rec = _make_record(d, x, "mountain_pass", rid, its + newton_its)
    if rec.is_trivial or not rec.energy > 0:
        raise NoConvergence("mountain pass collapsed onto the trivial solution",
                            iterate=rec.state, iterations=rec.iterations)
    return rec


def antipode(g, model: Model, record: SolutionRecord, *, tol: float | None = None, rid: int | None = None):
    """Record for ``(-u, -v)``; its residual is recomputed, not assumed."""
    if record.is_trivial:
        return record
    d = Discretization(g, model)
    x = -record.state.flat()
    out = _make_record(d, x, "antipode", record.id if rid is None else rid,
                       0, record.deflated_against, antipode_of=record.id)
    tol = record.residual_sup if tol is None else tol
    tol = max(tol, 1e-300)
    if out.residual_sup > tol:
        raise SymmetryViolated(f"antipode of solution {record.id} has residual {out.residual_sup:.3e} > {tol:.3e}")
    if abs(out.energy - record.energy) > 1e-10 * (1 + abs(record.energy)):
        raise SymmetryViolated(f"antipode of solution {record.id} changes the energy")
    return out


def verify_state(g, model: Model, state, tol: float) -> dict:
    """Recompute residual and energy; localise the worst vertex.

    ``vertex`` is where the Newton correction ``J^{-1} R`` is largest, which
    points at a perturbed value more reliably than the residual maximum (the
    fourth-order stencil spreads a point error to neighbours).
    """
    d = Discretization(g, model)
    x = _flat(d, state)
    R = d.residual_flat(x)
    rsup = float(np.max(np.abs(R))) if R.size else 0.0
    out = {"residual_sup": rsup, "energy": d.energy(x), "passed": rsup <= tol, "vertex_index": None,
           "component": None}
    if not out["passed"]:
        try:
            corr = _LinearSolver(d, SolverConfig()).solve(x, R)
        except SingularJacobian:
            corr = R
        k = int(np.argmax(np.abs(corr)))
        out["vertex_index"] = k % d.n
        out["component"] = "u" if k < d.n else "v"
    return out


def weak_form_check(g, model: Model, state, n_dirs: int = 20, seed: int = 0) -> float:
    """Largest ``|<Phi'(state), delta>| / ||delta||_E`` over random directions."""
    d = Discretization(g, model)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_dirs):
        delta = rng.standard_normal(2 * d.n)
        worst = max(worst, abs(d.pairing(state, delta)) / d.e_norm(delta))
    return worst


# ---------------------------------------------------------------------------
# enumeration


class _RootSet:
    """Accepted roots (with antipodes when the model is even)."""

    def __init__(self, g, model, d, config, use_antipodes):
        self.g, self.model, self.d, self.config = g, model, d, config
        self.use_antipodes = use_antipodes
        self.records = []  # accepted, excluding trivial
        self.trivial = None
        self.flats = []
        self.next_id = 1

    def contains(self, x) -> bool:
        return _near_known(self.d, x, self.flats)

    def add_trivial(self):
        x = np.zeros(2 * self.d.n)
        R = self.d.residual_flat(x)
        if float(np.max(np.abs(R))) <= self.config.tol_residual:
            self.trivial = _make_record(self.d, x, "trivial", 0)
            self.flats.append(x)

    def add(self, rec) -> bool:
        x = rec.state.flat()
        if rec.is_trivial or self.contains(x):
            return False
        rec.id = self.next_id
        self.next_id += 1
        self.records.append(rec)
        self.flats.append(x)
        if self.use_antipodes:
            anti = antipode(self.g, self.model, rec, tol=self.config.tol_residual, rid=self.next_id)
            self.next_id += 1
            if not self.contains(anti.state.flat()):
                self.records.append(anti)
                self.flats.append(anti.state.flat())
        return True

    def known_ids(self):
        ids = [r.id for r in self.records]
        return ([0] if self.trivial is not None else []) + ids


def _shell_start(d, rng, radius):
    z = rng.standard_normal(2 * d.n)
    return z * (radius / d.e_norm(z))


def _search(g, model, config, stop_levels=None, patience=None, run_mp=True, root_starts=0):
    d = _disc(g, model, config)
    rng = np.random.default_rng(config.seed)
    roots = _RootSet(g, model, d, config, model.nonlinearity.claims_even)
    roots.add_trivial()
    mp_rec = None
    if run_mp:
        try:
            mp_rec = mountain_pass(g, model, config)
            roots.add(mp_rec)
        except (NoConvergence, BadFarPoint):
            mp_rec = None
    base = config.shell_base
    if base is None:
        base = mp_rec.e_norm / 4 if mp_rec is not None else (model.nonlinearity.rho_star or 1.0)
    solver = _LinearSolver(d, config)

    def done():
        if stop_levels is None:
            return False
        return len(_levels([r for r in roots.records if r.antipode_of is None])) >= stop_levels

    def attempt(start):
        """Deflated solves from one start until one fails; returns the number of new roots."""
        new = 0
        for _ in range(config.roots_per_start):
            against = roots.known_ids()
            try:
                x, its = _newton(d, config, start, roots.flats, solver)
            except NoConvergence:
                break
            if roots.contains(x):
                break
            rec = _make_record(d, x, "newton_deflated", 0, its, against)
            if roots.add(rec):
                new += 1
        return new

    explicit = [] if config.initial_states is None else [_flat(d, s) for s in config.initial_states]
    idle = 0
    for k in range(len(explicit) + config.n_starts):
        if k < len(explicit):
            start = explicit[k]
        else:
            j = (k - len(explicit)) % config.n_shells
            start = _shell_start(d, rng, base * 2.0**j)
        idle = 0 if attempt(start) else idle + 1
        if done() or (patience is not None and idle >= patience):
            break

    # second phase: restart from perturbations of every accepted root; the
    # deflation pushes the iterate off that root towards its neighbours
    k = 0
    while root_starts and not done() and k < len(roots.flats):
        w = roots.flats[k]
        size = 1.0 + d.e_norm(w)
        for i in range(root_starts):
            attempt(w + _shell_start(d, rng, size * ROOT_START_SCALES[i % len(ROOT_START_SCALES)]))
        k += 1
    return roots


def _levels(records):
    """One representative per energy level, ascending."""
    reps = []
    for r in sorted(records, key=lambda r: (r.energy, r.id)):
        if reps and abs(r.energy - reps[-1].energy) <= 1e-8 * (1 + abs(r.energy)):
            continue
        reps.append(r)
    return reps


def enumerate_solutions(g, model: Model, config: SolverConfig, K: int, *, run_mp: bool = True) -> EnumerationResult:
    """Up to ``K`` nontrivial solution pairs with strictly increasing energies.

    A mountain-pass solve seeds the search unless ``run_mp`` is false.

    Raises :class:`FoundFewer` (carrying the partial result) when fewer than
    ``K`` distinct levels were found within the start budget.
    """
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise BadParams(f"K must be a positive integer, got {K!r}")
    roots = _search(g, model, config, stop_levels=K, run_mp=run_mp)
    primaries = [r for r in roots.records if r.antipode_of is None]
    reps = _levels(primaries)[:K]
    anti = {r.antipode_of: r for r in roots.records if r.antipode_of is not None}
    result = EnumerationResult(reps, {r.id: anti[r.id] for r in reps if r.id in anti}, roots.records)
    if len(reps) < K:
        raise FoundFewer(result, K)
    return result


def deflation_search(g, model: Model, config: SolverConfig, patience: int | None = 20,
                     root_starts: int = 4) -> list:
    """Every root deflation reaches.

    Random shell starts run until ``patience`` consecutive starts yield
    nothing new (or ``config.n_starts`` is spent); then ``root_starts``
    perturbed restarts are made from each accepted root, including roots
    found along the way.  The trivial root is included when it solves the
    system.
    """
    roots = _search(g, model, config, patience=patience, run_mp=False, root_starts=root_starts)
    return ([roots.trivial] if roots.trivial is not None else []) + roots.records


def multistart_sweep(g, model: Model, config: SolverConfig, n_starts: int = 1000) -> list:
    """Undeflated Newton from ``n_starts`` random shell starts; distinct roots found."""
    d = _disc(g, model, config)
    rng = np.random.default_rng(config.seed)
    base = config.shell_base or 1.0
    solver = _LinearSolver(d, config)
    found = []
    for k in range(n_starts):
        start = _shell_start(d, rng, base * 2.0 ** (k % config.n_shells))
        try:
            x, its = _newton(d, config, start, [], solver)
        except NoConvergence:
            continue
        if not _near_known(d, x, found):
            found.append(x)
    return [_make_record(d, x, "newton", i) for i, x in enumerate(found)]
