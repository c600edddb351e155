"""Multiple solutions of a Kirchhoff-type biharmonic system on weighted graphs."""

__version__ = "0.1.0"

from .calculus import (
    VertexFunction,
    assemble,
    biharmonic,
    dirichlet_energy,
    e_inner,
    e_norm,
    embedding_ratios,
    gamma_field,
    integral,
    laplacian,
    norm_lr,
    sharp_embedding_2,
)
from .energy import (
    CeramiDiagnostics,
    EnergyBreakdown,
    StatePair,
    cerami_identity,
    jacobian_apply,
    phi,
    phi_directional,
    residual,
    self_pairing,
)
from .estimator import CriticalPointSolver
from .graph import Lattice, TruncatedGraph, WeightedGraph, build_graph, generate, read_graph, truncate_ball, write_graph
from .model import AuditReport, Model, Nonlinearity, SamplingPlan, audit, builtin_nonlinearity, read_model
from .solver import (
    SolutionRecord,
    SolverConfig,
    antipode,
    deflation_search,
    enumerate_solutions,
    mountain_pass,
    multistart_sweep,
    newton_solve,
)
