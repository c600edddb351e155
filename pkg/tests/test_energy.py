import numpy as np
import pytest

from conftest import random_graph, zero_nonlinearity
from graphpass.calculus import assemble, biharmonic, dirichlet_energy, e_inner, integral, laplacian
from graphpass.energy import (
    StatePair,
    cerami_identity,
    diagnostics_record,
    e_norms,
    jacobian_apply,
    phi,
    phi_directional,
    residual,
    self_pairing,
)
from graphpass.exceptions import GraphMismatch, MissingSecondPartials
from graphpass.graph import Lattice, generate, truncate_ball
from graphpass.model import Model, Nonlinearity, builtin_nonlinearity


def phi_oracle(g, model, u, v):
    """Energy assembled from graph-calculus primitives only."""
    n = g.n_vertices
    V1, V2 = model.potentials(n)
    idx = np.arange(n)
    quad = 0.5 * e_inner(g, model.a1, V1, u, u) + 0.5 * e_inner(g, model.a2, V2, v, v)
    kir = model.b1 / 4 * dirichlet_energy(g, u) ** 2 + model.b2 / 4 * dirichlet_energy(g, v) ** 2
    return quad + kir - integral(g, model.nonlinearity.F(idx, u, v))


def residual_oracle(g, model, u, v):
    n = g.n_vertices
    V1, V2 = model.potentials(n)
    idx = np.arange(n)
    nl = model.nonlinearity
    r1 = biharmonic(g, u) - (model.a1 + model.b1 * dirichlet_energy(g, u)) * laplacian(g, u) + V1 * u - nl.F_s(idx, u, v)
    r2 = biharmonic(g, v) - (model.a2 + model.b2 * dirichlet_energy(g, v)) * laplacian(g, v) + V2 * v - nl.F_t(idx, u, v)
    return r1, r2


def random_model(rng, n, kirchhoff=True):
    nl = builtin_nonlinearity("remark11_poly", {"c1": rng.uniform(0.1, 0.9, n), "c2": rng.uniform(0.1, 0.9)})
    b = rng.uniform(0, 2, 2) if kirchhoff else (0.0, 0.0)
    return Model(rng.uniform(0.5, 2), rng.uniform(0.5, 2), b[0], b[1],
                 rng.uniform(0.5, 3, n), rng.uniform(0.5, 3), nl)


def random_state(rng, n, scale=0.5):
    return StatePair(rng.normal(scale=scale, size=n), rng.normal(scale=scale, size=n))


class TestStatePair:
    def test_readonly(self):
        s = StatePair([1.0, 2.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            s.u[0] = 5

    def test_arithmetic(self):
        s = StatePair([1.0, 2.0], [3.0, 4.0])
        np.testing.assert_array_equal((-s).flat(), [-1, -2, -3, -4])
        np.testing.assert_array_equal((s + s - s * 2).flat(), 0)
        np.testing.assert_array_equal(StatePair.from_flat(s.flat()).v, s.v)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            StatePair([np.inf], [0.0])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(GraphMismatch):
            StatePair([1.0, 2.0], [0.0])


class TestPhi:
    def test_zero_state(self, poly_model, path3):
        assert phi(path3, poly_model, StatePair.zeros(3)).total == 0

    def test_path2_examples(self, path2):
        m = Model(1, 1, 0, 0, 1, 1, zero_nonlinearity())
        state = StatePair([1.0, 0.0], [0.0, 0.0])
        br = phi(path2, m, state)
        assert br.total == pytest.approx(2)
        assert br.quad_u == pytest.approx(2)
        assert phi(path2, m.with_b(4, 0), state).total == pytest.approx(3)
        assert phi(path2, m.with_b(4, 0), state).kirchhoff_u == pytest.approx(1)

    def test_breakdown_sums(self, rng):
        g = random_graph(rng)
        m = random_model(rng, g.n_vertices)
        br = phi(g, m, random_state(rng, g.n_vertices))
        assert br.total == pytest.approx(br.quad_u + br.quad_v + br.kirchhoff_u + br.kirchhoff_v - br.potential_term)

    def test_against_oracle(self, rng):
        for _ in range(20):
            g = random_graph(rng)
            m = random_model(rng, g.n_vertices)
            s = random_state(rng, g.n_vertices)
            want = phi_oracle(g, m, s.u, s.v)
            assert phi(g, m, s).total == pytest.approx(want, rel=1e-11, abs=1e-11)

    def test_graph_mismatch(self, path3, poly_model):
        with pytest.raises(GraphMismatch):
            phi(path3, poly_model, StatePair.zeros(2))


class TestResidual:
    def test_zero_state(self, path3, poly_model):
        np.testing.assert_array_equal(residual(path3, poly_model, StatePair.zeros(3)).flat(), 0)

    def test_single_vertex_cubic(self, single, quartic_model):
        for u in (0.3, 1.0, -1.7):
            r = residual(single, quartic_model, StatePair([u], [0.0]))
            assert r.u[0] == pytest.approx(u - u**3)
        assert residual(single, quartic_model, StatePair([1.0], [0.0])).u[0] == 0

    def test_linear_nonlinearity_matches_assembly(self, path2):
        lam = 0.7
        nl = Nonlinearity(F=lambda x, s, t: 0.5 * lam * (s**2 + t**2), F_s=lambda x, s, t: lam * s + 0 * t,
                          F_t=lambda x, s, t: lam * t + 0 * s, claims_F0=True, claims_even=True)
        m = Model(1.0, 2.0, 0, 0, 1.0, 3.0, nl)
        ops = assemble(path2)
        B, Lm = ops.biharmonic_matrix.toarray(), ops.laplacian_matrix.toarray()
        u, v = np.array([1.0, -0.5]), np.array([0.2, 0.4])
        r = residual(path2, m, StatePair(u, v))
        np.testing.assert_allclose(r.u, (B - 1.0 * Lm + np.eye(2)) @ u - lam * u, atol=1e-14)
        np.testing.assert_allclose(r.v, (B - 2.0 * Lm + 3 * np.eye(2)) @ v - lam * v, atol=1e-14)

    def test_against_oracle(self, rng):
        for _ in range(20):
            g = random_graph(rng)
            m = random_model(rng, g.n_vertices)
            s = random_state(rng, g.n_vertices)
            r1, r2 = residual_oracle(g, m, s.u, s.v)
            r = residual(g, m, s)
            scale = 1 + np.abs(np.concatenate([r1, r2])).max()
            np.testing.assert_allclose(r.u, r1, atol=1e-10 * scale)
            np.testing.assert_allclose(r.v, r2, atol=1e-10 * scale)


class TestPairing:
    def test_zero_direction(self, rng, path3):
        m = random_model(rng, 3)
        assert phi_directional(path3, m, random_state(rng, 3), StatePair.zeros(3)) == 0

    def test_matches_residual_integral(self, rng):
        for _ in range(30):
            g = random_graph(rng)
            n = g.n_vertices
            m = random_model(rng, n)
            s, dlt = random_state(rng, n), random_state(rng, n)
            r = residual(g, m, s)
            want = integral(g, r.u * dlt.u) + integral(g, r.v * dlt.v)
            got = phi_directional(g, m, s, dlt)
            assert abs(got - want) <= 1e-10 * (1 + abs(want) + np.abs(r.flat()).max() * np.abs(dlt.flat()).max() * g.measure.sum())

    def test_finite_difference(self, rng, path3):
        h = 1e-5
        for _ in range(20):
            m = random_model(rng, 3)
            s, dlt = random_state(rng, 3), random_state(rng, 3)
            fd = (phi(path3, m, s + dlt * h).total - phi(path3, m, s - dlt * h).total) / (2 * h)
            got = phi_directional(path3, m, s, dlt)
            assert abs(got - fd) <= 1e-6 * abs(fd) + 1e-9

    def test_self_pairing_path2(self, path2):
        m = Model(1, 1, 0, 0, 1, 1, zero_nonlinearity())
        assert self_pairing(path2, m, StatePair([1.0, 0.0], [0.0, 0.0])) == pytest.approx(4)
        assert self_pairing(path2, m, StatePair.zeros(2)) == 0

    def test_self_pairing_vs_directional(self, rng):
        for _ in range(20):
            g = random_graph(rng)
            m = random_model(rng, g.n_vertices)
            s = random_state(rng, g.n_vertices)
            sp = self_pairing(g, m, s)
            assert abs(sp - phi_directional(g, m, s, s)) <= 1e-10 * (1 + abs(sp))


class TestCerami:
    def test_zero(self, path3, poly_model):
        assert cerami_identity(path3, poly_model.with_b(1, 1), StatePair.zeros(3)).gap == 0

    @pytest.mark.parametrize("kirchhoff", [True, False])
    def test_identity(self, rng, kirchhoff):
        for _ in range(20):
            g = random_graph(rng)
            m = random_model(rng, g.n_vertices, kirchhoff=kirchhoff)
            if kirchhoff:
                m = m.with_b(m.b1 + 0.1, m.b2)
            s = random_state(rng, g.n_vertices)
            c = cerami_identity(g, m, s)
            assert c.theta == (4 if kirchhoff else 2)
            assert c.gap <= 1e-9 * (1 + abs(c.phi))

    def test_independent_quarter_form(self, rng):
        g = random_graph(rng)
        n = g.n_vertices
        m = random_model(rng, n).with_b(0.5, 1.5)
        s = random_state(rng, n)
        V1, V2 = m.potentials(n)
        idx = np.arange(n)
        nl = m.nonlinearity
        calf = integral(g, 0.25 * (nl.F_s(idx, s.u, s.v) * s.u + nl.F_t(idx, s.u, s.v) * s.v) - nl.F(idx, s.u, s.v))
        norms = e_inner(g, m.a1, V1, s.u, s.u) + e_inner(g, m.a2, V2, s.v, s.v)
        lhs = phi_oracle(g, m, s.u, s.v) - 0.25 * phi_directional(g, m, s, s)
        assert lhs == pytest.approx(calf + 0.25 * norms, rel=1e-9)

    def test_quartic_power_b0(self, rng, path3):
        m = Model(1, 1, 0, 0, 1, 1, builtin_nonlinearity("power_pq", p=4, q=4), theta_override=4)
        s = random_state(rng, 3)
        c = cerami_identity(path3, m, s)
        assert c.calF_integral == pytest.approx(0, abs=1e-12)
        norms = sum(e_norms(path3, m, s)[k] ** 2 for k in ("norm_u", "norm_v"))
        assert c.phi - c.self_pairing / 4 == pytest.approx(norms / 4, rel=1e-12)


class TestJacobian:
    def test_finite_difference(self, rng):
        h = 1e-5
        for _ in range(20):
            g = random_graph(rng, n_max=12)
            m = random_model(rng, g.n_vertices)
            s, dlt = random_state(rng, g.n_vertices), random_state(rng, g.n_vertices)
            fd = (residual(g, m, s + dlt * h).flat() - residual(g, m, s - dlt * h).flat()) / (2 * h)
            got = jacobian_apply(g, m, s, dlt).flat()
            assert np.linalg.norm(got - fd) <= 1e-5 * (1 + np.linalg.norm(fd))

    def test_symmetric(self, rng):
        for _ in range(10):
            g = random_graph(rng)
            n = g.n_vertices
            m = random_model(rng, n)
            s, d1, d2 = (random_state(rng, n) for _ in range(3))
            mu2 = np.concatenate([g.measure, g.measure])
            a = np.dot(mu2 * jacobian_apply(g, m, s, d1).flat(), d2.flat())
            b = np.dot(mu2 * jacobian_apply(g, m, s, d2).flat(), d1.flat())
            assert a == pytest.approx(b, rel=1e-8, abs=1e-10)

    def test_quadratic_state_independent(self, rng, path3):
        nl = Nonlinearity(F=lambda x, s, t: 0.3 * s**2 + 0.1 * s * t + 0.2 * t**2,
                          F_s=lambda x, s, t: 0.6 * s + 0.1 * t, F_t=lambda x, s, t: 0.1 * s + 0.4 * t,
                          F_ss=lambda x, s, t: 0.6 + 0 * s, F_st=lambda x, s, t: 0.1 + 0 * s,
                          F_tt=lambda x, s, t: 0.4 + 0 * s)
        m = Model(1, 1, 0, 0, 1, 1, nl)
        dlt = random_state(rng, 3)
        a = jacobian_apply(path3, m, random_state(rng, 3), dlt).flat()
        b = jacobian_apply(path3, m, random_state(rng, 3, scale=5), dlt).flat()
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_zero_direction(self, rng, path3):
        m = random_model(rng, 3)
        np.testing.assert_array_equal(jacobian_apply(path3, m, random_state(rng, 3), StatePair.zeros(3)).flat(), 0)

    def test_missing_second_partials(self, path3):
        nl = Nonlinearity(F=lambda x, s, t: s**4 + t**4, F_s=lambda x, s, t: 4 * s**3 + 0 * t,
                          F_t=lambda x, s, t: 4 * t**3 + 0 * s)
        m = Model(1, 1, 0, 0, 1, 1, nl)
        s = StatePair([0.1, 0.2, 0.3], [0.0, 0.1, 0.0])
        with pytest.raises(MissingSecondPartials):
            jacobian_apply(path3, m, s, s, allow_fd=False)
        fd = jacobian_apply(path3, m, s, s).flat()
        exact = jacobian_apply(path3, Model(1, 1, 0, 0, 1, 1, Nonlinearity(
            F=nl.F, F_s=nl.F_s, F_t=nl.F_t, F_ss=lambda x, s, t: 12 * s**2 + 0 * t,
            F_st=lambda x, s, t: 0 * s, F_tt=lambda x, s, t: 12 * t**2 + 0 * s)), s, s).flat()
        np.testing.assert_allclose(fd, exact, rtol=1e-6, atol=1e-9)


class TestTruncated:
    def test_ghosts_pinned_to_zero(self, rng):
        tg = truncate_ball(Lattice(2), (0, 0), 2)
        ext = tg.extended
        n = tg.n_vertices
        m = random_model(rng, n)
        s = random_state(rng, n)
        # oracle: pad with zeros on ghosts and evaluate on the extended graph
        pos = [ext.index(x) for x in tg.vertex_ids]
        ue, ve = np.zeros(ext.n_vertices), np.zeros(ext.n_vertices)
        ue[pos], ve[pos] = s.u, s.v
        Ve = np.ones(ext.n_vertices)
        V1, V2 = m.potentials(n)
        V1e, V2e = Ve.copy(), Ve.copy()
        V1e[pos], V2e[pos] = V1, V2
        c1e = np.full(ext.n_vertices, 0.5)
        c1e[pos] = m.nonlinearity.params["c1"]
        me = Model(m.a1, m.a2, m.b1, m.b2, V1e, V2e,
                   builtin_nonlinearity("remark11_poly", {"c1": c1e, "c2": m.nonlinearity.params["c2"]}))
        assert phi(tg, m, s).total == pytest.approx(phi_oracle(ext, me, ue, ve), rel=1e-11)
        r1, r2 = residual_oracle(ext, me, ue, ve)
        r = residual(tg, m, s)
        np.testing.assert_allclose(r.u, r1[pos], rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(r.v, r2[pos], rtol=1e-10, atol=1e-10)

    def test_pairing_on_truncated(self, rng):
        tg = truncate_ball(Lattice(1), (0,), 3)
        n = tg.n_vertices
        m = random_model(rng, n)
        s, dlt = random_state(rng, n), random_state(rng, n)
        r = residual(tg, m, s)
        want = float(np.dot(tg.measure, r.u * dlt.u + r.v * dlt.v))
        assert phi_directional(tg, m, s, dlt) == pytest.approx(want, rel=1e-10, abs=1e-12)


class TestEvenness:
    def test_even_model(self, rng):
        g = generate("path", 6)
        m = random_model(rng, 6)
        for _ in range(50):
            s = random_state(rng, 6, scale=1.5)
            a, b = phi(g, m, s).total, phi(g, m, -s).total
            assert abs(a - b) <= 1e-10 * (1 + abs(a))


class TestDiagnostics:
    def test_keys(self, rng, path3):
        m = random_model(rng, 3)
        rec = diagnostics_record(path3, m, random_state(rng, 3))
        for key in ("energy_total", "energy_quad_u", "energy_potential_term", "cerami_gap", "cerami_self_pairing",
                    "evenness_gap", "hilbert", "sum", "norm_u", "norm_v"):
            assert key in rec
        assert rec["sum"] >= rec["hilbert"]
