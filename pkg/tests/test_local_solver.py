import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import minimize

from dacnet.graph import path_graph
from dacnet.local_solver import (
    LocalSolverError,
    assemble_local,
    build_structure,
    decay_profile,
    decay_envelope,
    local_kkt,
    residuals,
    solve_local_iterative,
    solve_local_newton,
    solve_local_quadratic,
)
from dacnet.oracles import oracle_dense_kkt, oracle_projection, oracle_quadratic
from dacnet.partition import build_partition, select_fusion_centers, voronoi_regions
from dacnet.problems import (
    Constraints,
    ProblemInstance,
    QuadraticObjective,
    make_entropy_problem,
    make_l2_problem,
    make_quadratic_problem,
)


def p5_l2(W=(1, 3), z=None):
    g = path_graph(5)
    z = np.linspace(0.1, 0.9, 5) if z is None else z
    p = make_l2_problem(g, list(W), z)
    part = build_partition(g, [0, 4], voronoi_regions(g, [0, 4]), 1, 1, p.constraints.A, p.constraints.W)
    return p, part


def rgg_instance(kind, rgg, R=2, seed=0):
    g = rgg[0]
    rng = np.random.default_rng(seed)
    lam = select_fusion_centers(g, R, seed)
    W = np.union1d(rng.choice(g.n, 8, replace=False), lam)
    if kind == "l2":
        p = make_l2_problem(g, W, rng.random(g.n))
        x_star = oracle_projection(p.constraints.A, p.constraints.b, p.objective.z).x_star
    else:
        p = make_quadratic_problem(g, W, rng.random(g.n))
        x_star = oracle_quadratic(p.objective.Q, p.objective.c, p.constraints.A, p.constraints.b).x_star
    part = build_partition(g, lam, voronoi_regions(g, lam), R, 1, p.constraints.A, p.constraints.W)
    return p, part, x_star


class TestAssembly:
    def test_p5_sets(self):
        p, part = p5_l2()
        lp = assemble_local(p, part, 0, np.zeros(5))
        assert list(lp.free) == [0, 1, 2, 3]
        assert list(lp.frozen) == [4]

    def test_single_center(self, rgg50):
        g = rgg50[0]
        p = make_l2_problem(g, [3, 9, 20], np.zeros(g.n))
        part = build_partition(g, [0], {0: np.arange(g.n)}, 1, 1, p.constraints.A, p.constraints.W)
        lp = assemble_local(p, part, 0, np.random.default_rng(0).random(g.n))
        assert lp.frozen.size == 0
        assert np.array_equal(lp.rhs, p.constraints.b)

    def test_zero_boundary_gives_plain_rhs(self):
        p, part = p5_l2()
        p.constraints.b[:] = [0.7, -0.2]
        x = np.ones(5)
        x[4] = 0.0
        lp = assemble_local(p, part, 0, x)
        assert np.array_equal(lp.rhs, p.constraints.b[lp.rows])

    def test_boundary_correction(self):
        p, part = p5_l2()
        x = np.arange(5.0)
        lp = assemble_local(p, part, 0, x)
        A = p.constraints.A.toarray()
        expected = p.constraints.b[lp.rows] - A[np.ix_(lp.rows, lp.frozen)] @ x[lp.frozen]
        assert np.allclose(lp.rhs, expected)

    def test_reads_only_the_4m_neighborhood(self, rgg50):
        p, part, _ = rgg_instance("quadratic", rgg50)
        rng = np.random.default_rng(2)
        for lam in part.centers:
            st = build_structure(p, part, lam)
            x = rng.standard_normal(p.n)
            y = x.copy()
            outside = np.setdiff1d(np.arange(p.n), st.nb4)
            y[outside] = rng.standard_normal(outside.size)
            a, b = assemble_local(p, part, lam, x, st), assemble_local(p, part, lam, y, st)
            assert np.array_equal(a.rhs, b.rhs) and np.array_equal(a.view, b.view)
            sa, sb = solve_local_quadratic(a), solve_local_quadratic(b)
            assert np.array_equal(sa.w, sb.w)


class TestQuadraticSolve:
    def test_no_rows_is_unconstrained_minimizer(self):
        g = path_graph(4)
        Q = np.diag([2.0, 3.0, 4.0, 5.0])
        p = ProblemInstance(QuadraticObjective(Q, np.ones(4)),
                            Constraints(sp.csr_array((0, 4)), np.zeros(0), np.zeros(0, dtype=int)), "quadratic", g)
        part = build_partition(g, [0], {0: np.arange(4)}, 1, 1, p.constraints.A, p.constraints.W)
        sol = solve_local_quadratic(assemble_local(p, part, 0, np.zeros(4)))
        assert np.allclose(sol.w, -1.0 / np.diag(Q))

    def test_single_center_matches_projection(self, rgg50):
        g = rgg50[0]
        rng = np.random.default_rng(4)
        p = make_l2_problem(g, np.sort(rng.choice(g.n, 10, replace=False)), rng.random(g.n))
        part = build_partition(g, [0], {0: np.arange(g.n)}, 1, 1, p.constraints.A, p.constraints.W)
        sol = solve_local_quadratic(assemble_local(p, part, 0, np.zeros(g.n)))
        ref = oracle_projection(p.constraints.A, p.constraints.b, p.objective.z)
        assert np.allclose(sol.w, ref.x_star, atol=1e-10)
        assert np.allclose(sol.v, ref.v_star, atol=1e-9)
        assert max(sol.theta_inf, sol.eta_inf) <= 1e-10

    def test_fully_determined(self):
        g = path_graph(2)
        p = ProblemInstance(QuadraticObjective(np.eye(2), np.array([5.0, -3.0])),
                            Constraints(sp.csr_array(np.array([[2.0, 0.0]])), np.array([3.0]), np.array([0])),
                            "quadratic", g)
        part = build_partition(g, [0, 1], {0: np.array([0]), 1: np.array([1])}, 1, 1, p.constraints.A, p.constraints.W)
        # tiny free set: free = {0, 1}, but on a 1-vertex region the row pins w_0
        sol = solve_local_quadratic(assemble_local(p, part, 0, np.zeros(2)))
        assert sol.w[0] == pytest.approx(1.5)

    @pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
    def test_singular_system_names_center(self):
        g = path_graph(3)
        Q = np.diag([1.0, 0.0, 1.0])
        p = ProblemInstance(QuadraticObjective(Q, np.zeros(3)),
                            Constraints(sp.csr_array((0, 3)), np.zeros(0), np.zeros(0, dtype=int)), "quadratic", g)
        part = build_partition(g, [1], {1: np.arange(3)}, 1, 1, p.constraints.A, p.constraints.W)
        with pytest.raises(LocalSolverError, match="center 1"):
            build_structure(p, part, 1)

    @pytest.mark.parametrize("kind", ["l2", "quadratic"])
    def test_fixed_point(self, kind, rgg50):
        p, part, x_star = rgg_instance(kind, rgg50)
        for lam in part.centers:
            sol = solve_local_quadratic(assemble_local(p, part, lam, x_star))
            assert np.allclose(sol.w, x_star[part.extended[lam]], atol=1e-8)

    @pytest.mark.parametrize("kind", ["l2", "quadratic"])
    def test_newton_agrees(self, kind, rgg50):
        p, part, _ = rgg_instance(kind, rgg50)
        x = np.random.default_rng(9).standard_normal(p.n)
        for lam in part.centers:
            lp = assemble_local(p, part, lam, x)
            a, b = solve_local_quadratic(lp), solve_local_newton(lp, 1e-12)
            assert np.allclose(a.w, b.w, atol=1e-8)
            assert b.newton_iters == 1

    def test_iterative_tolerance(self, rgg50):
        p, part, _ = rgg_instance("quadratic", rgg50)
        x = np.random.default_rng(10).standard_normal(p.n)
        for tol in (1e-2, 1e-5):
            for lam in part.centers:
                sol = solve_local_iterative(assemble_local(p, part, lam, x), tol)
                assert max(sol.theta_inf, sol.eta_inf) <= tol


class TestNewton:
    def entropy_p3(self):
        g = path_graph(3)
        p = make_entropy_problem(g, [1], [2.0])
        part = build_partition(g, [1], {1: np.arange(3)}, 1, 1, p.constraints.A, p.constraints.W)
        return p, part

    def test_entropy_p3_matches_centralized(self):
        p, part = self.entropy_p3()
        A = p.constraints.A.toarray()
        start = np.full(3, 2.0 / A.sum())
        sol = solve_local_newton(assemble_local(p, part, 1, start), 1e-10)
        assert sol.converged
        ref = oracle_dense_kkt(p, 1e-12)
        assert np.allclose(sol.w, ref.x_star, atol=1e-9)
        # second, unrelated reference: SLSQP on the same subproblem
        res = minimize(lambda x: np.sum(x * np.log(x)), start, method="SLSQP",
                       constraints=[{"type": "eq", "fun": lambda x: A @ x - 2.0}],
                       bounds=[(1e-9, None)] * 3, options={"ftol": 1e-14, "maxiter": 500})
        assert np.allclose(sol.w, res.x, atol=1e-5)

    def test_loose_tolerance_contract(self):
        p, part = self.entropy_p3()
        sol = solve_local_newton(assemble_local(p, part, 1, np.ones(3)), 1e-2)
        assert sol.converged and max(sol.theta_inf, sol.eta_inf) <= 1e-2

    def test_iteration_cap_flags_non_convergence(self):
        p, part = self.entropy_p3()
        sol = solve_local_newton(assemble_local(p, part, 1, np.ones(3)), 1e-14, max_iters=1)
        assert not sol.converged and sol.newton_iters == 1

    def test_infeasible_start_is_an_error(self):
        p, part = self.entropy_p3()
        with pytest.raises(LocalSolverError):
            solve_local_newton(assemble_local(p, part, 1, np.array([1.0, -1.0, 1.0])), 1e-8)


class TestResiduals:
    def test_zero_at_kkt_point(self):
        p, part = p5_l2()
        lp = assemble_local(p, part, 0, np.ones(5))
        sol = solve_local_quadratic(lp)
        assert max(residuals(lp, sol.w, sol.v)) <= 1e-10

    def test_multiplier_perturbation_bound(self):
        p, part = p5_l2()
        lp = assemble_local(p, part, 0, np.ones(5))
        sol = solve_local_quadratic(lp)
        A = lp.structure.A_free
        eps = 1e-3
        for k in range(lp.rows.size):
            v = sol.v.copy()
            v[k] += eps
            th, _ = residuals(lp, sol.w, v)
            assert th <= sol.theta_inf + eps * np.abs(A).sum(axis=0).max() + 1e-15

    def test_dense_recomputation(self):
        p, part = p5_l2()
        rng = np.random.default_rng(11)
        x = rng.standard_normal(5)
        for lam in part.centers:
            lp = assemble_local(p, part, lam, x)
            w, v = rng.standard_normal(lp.free.size), rng.standard_normal(lp.rows.size)
            full = x.copy()
            full[lp.free] = w
            A = p.constraints.A.toarray()
            vfull = np.zeros(A.shape[0])
            vfull[lp.rows] = v
            theta = (full - p.objective.z + A.T @ vfull)[lp.free]
            eta = (A @ full - p.constraints.b)[lp.rows]
            assert residuals(lp, w, v) == pytest.approx((np.abs(theta).max(), np.abs(eta).max()), abs=1e-14)


class TestDecay:
    def test_diagonal(self):
        g = path_graph(6)
        prof = decay_profile(np.diag(np.arange(1.0, 7.0)), np.arange(6), g)
        assert prof[0][1] == 1.0
        assert all(v == 0 for s, v in prof[1:])

    def test_singular(self):
        with pytest.raises(LocalSolverError):
            decay_profile(np.zeros((3, 3)), np.arange(3), path_graph(3))

    def test_p10_envelope(self):
        g = path_graph(10)
        rng = np.random.default_rng(12)
        p = make_l2_problem(g, [2, 5, 7], rng.random(10))
        part = build_partition(g, [0], {0: np.arange(10)}, 1, 1, p.constraints.A, p.constraints.W)
        lp = assemble_local(p, part, 0, np.zeros(10))
        K, verts = local_kkt(lp, p.constraints.W)
        prof = decay_profile(K, verts, g)
        norm = np.linalg.norm(K, 2)
        cond = np.linalg.cond(K)
        assert prof[0][1] <= np.linalg.norm(np.linalg.inv(K), 2) + 1e-12
        for s, v in prof:
            assert v <= decay_envelope(s, cond, norm, p.m) * (1 + 1e-12)
        assert prof[-1][1] < prof[0][1]
