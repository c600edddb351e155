import numpy as np
import pytest

from graphpass.graph import build_graph, generate
from graphpass.model import Model, Nonlinearity, builtin_nonlinearity


def zero_nonlinearity():
    z = lambda x, s, t: np.zeros(np.broadcast(x, s, t).shape)  # noqa: E731
    return Nonlinearity(F=z, F_s=z, F_t=z, F_ss=z, F_st=z, F_tt=z, claims_even=True, claims_F0=True, name="zero")


def random_graph(rng, n_max=12, lo=0.1, hi=10.0, extra=None):
    """Connected graph: a random tree plus ``extra`` random chords (so cycles occur)."""
    n = int(rng.integers(1, n_max + 1))
    tree = generate("random_tree", n, seed=int(rng.integers(2**31)), weight_range=(lo, hi), measure_range=(lo, hi))
    if n < 3:
        return tree
    edges = list(tree.edges())
    have = {frozenset((x, y)) for x, y, _ in edges}
    k = int(rng.integers(0, n)) if extra is None else extra
    for _ in range(k):
        x, y = (int(a) for a in rng.choice(n, size=2, replace=False))
        if frozenset((x, y)) not in have:
            have.add(frozenset((x, y)))
            edges.append((x, y, float(rng.uniform(lo, hi))))
    return build_graph(tree.vertex_ids, edges, tree.measure)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path2():
    return generate("path", 2)


@pytest.fixture
def path3():
    return generate("path", 3)


@pytest.fixture
def single():
    return generate("path", 1)


@pytest.fixture
def quartic_model():
    """Single-equation fixture ``F = u^4/4``: energy ``u^2/2 - u^4/4`` on one vertex."""
    return Model(1.0, 1.0, 0.0, 0.0, 1.0, 1.0, builtin_nonlinearity("power_pq", p=4, q=None))


@pytest.fixture
def poly_model():
    return Model(1.0, 1.0, 0.0, 0.0, 1.0, 1.0, builtin_nonlinearity("remark11_poly"))
