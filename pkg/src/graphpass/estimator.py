"""Scikit-learn style facade over the functional solver API.

The "data" passed to :meth:`CriticalPointSolver.fit` is the graph itself;
there is no target and no ``predict``.  The estimator exists so that solver
settings can be cloned, compared and grid-searched with ``get_params``.
"""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import FoundFewer
from .graph import TruncatedGraph, WeightedGraph
from .model import Model, builtin_nonlinearity
from .solver import SolverConfig, enumerate_solutions


def check_graph(X):
    """Return ``X`` if it is a graph the solvers accept, else raise ``TypeError``."""
    if not isinstance(X, (WeightedGraph, TruncatedGraph)):
        raise TypeError(f"expected a WeightedGraph or TruncatedGraph, got {type(X).__name__}")
    return X


class CriticalPointSolver(BaseEstimator):
    """Find ``n_solutions`` solution pairs of the coupled system on a graph.

    Parameters
    ----------
    a1, a2, b1, b2 : float
        Gradient and Kirchhoff coefficients.
    V1, V2 : float or array
        Positive potentials.
    nonlinearity : str
        Name of a built-in nonlinearity.
    nonlinearity_params : dict, optional
        Coefficients passed to the built-in constructor.
    n_solutions : int
        Number of distinct energy levels requested.
    method : {"both", "newton"}
        Seed the search with a mountain-pass solve or not.
    tol, seed : float, int
        Residual tolerance and random seed.
    strict : bool
        Re-raise :class:`FoundFewer` instead of keeping a partial result.

    Attributes
    ----------
    model_ : Model
    solutions_ : list of SolutionRecord
        One representative per pair, sorted by energy.
    antipodes_ : dict
    energies_ : list of float
    """

    def __init__(self, a1=1.0, a2=1.0, b1=0.0, b2=0.0, V1=1.0, V2=1.0, nonlinearity="remark11_poly",
                 nonlinearity_params=None, n_solutions=3, method="both", tol=1e-9, seed=0, strict=False):
        self.a1 = a1
        self.a2 = a2
        self.b1 = b1
        self.b2 = b2
        self.V1 = V1
        self.V2 = V2
        self.nonlinearity = nonlinearity
        self.nonlinearity_params = nonlinearity_params
        self.n_solutions = n_solutions
        self.method = method
        self.tol = tol
        self.seed = seed
        self.strict = strict

    def _build_model(self):
        params = dict(self.nonlinearity_params or {})
        coeffs = params.pop("coeff_functions", None)
        nl = builtin_nonlinearity(self.nonlinearity, coeffs, **params)
        return Model(self.a1, self.a2, self.b1, self.b2, self.V1, self.V2, nl)

    def fit(self, X, y=None):
        g = check_graph(X)
        self.model_ = self._build_model()
        cfg = SolverConfig(tol_residual=self.tol, seed=self.seed)
        try:
            result = enumerate_solutions(g, self.model_, cfg, self.n_solutions, run_mp=self.method == "both")
        except FoundFewer as exc:
            if self.strict:
                raise
            result = exc.records
        self.solutions_ = list(result)
        self.antipodes_ = dict(result.antipodes)
        self.energies_ = result.energies
        self.n_found_ = len(self.solutions_)
        return self

    def energy_table(self):
        """``[(k, energy), ...]`` for the fitted solutions."""
        check_is_fitted(self, "solutions_")
        return [(k, e) for k, e in enumerate(self.energies_, start=1)]
