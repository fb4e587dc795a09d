import numpy as np
import pytest

from netslic.exceptions import ConstraintError, ConvergenceError, InputError
from netslic.formulation import build_design_system, rqm_objective, swap_reference
from netslic.model import PsiVector
from netslic.solver import (SolverConfig, build_equality_constraint, pair_terms,
                            rqm_terms, solve_branch_pair, solve_rqm_branch)

from test_formulation import random_psi, true_psi


def perturbed(psi, rng, spread=0.2):
    v = np.array(psi.values if hasattr(psi, "values") else psi, dtype=float)
    v[:3] *= rng.uniform(1 - spread, 1 + spread, size=3)
    v[3:] = [1, 0, 1, 0, 1, 0]
    return v


def non_increasing(history, rel=1e-12):
    h = np.asarray(history)
    return np.all(np.diff(h) <= rel * np.abs(h[:-1]) + 1e-300)


def fd_gradient(fun, x, h=1e-7):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


class TestConfig:
    def test_defaults(self):
        c = SolverConfig()
        assert (c.lam, c.lam1, c.M, c.window, c.max_iters) == (0.1, 0.1, 10, 60, 100)

    @pytest.mark.parametrize("kw", [dict(lam=-1), dict(trust_shrink=1.5),
                                    dict(trust_grow=0.5),
                                    dict(ratio_accept=0.8, ratio_good=0.75),
                                    dict(M=0), dict(partition="random")])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            SolverConfig(**kw)


@pytest.fixture(scope="module")
def rqm_system(ideal_desk_dataset):
    return build_design_system(ideal_desk_dataset.measurements[(1, 2)], 1)


class TestRqmBranch:
    def test_gradient_matches_finite_differences(self, rqm_system, rng):
        for _ in range(20):
            psi = random_psi(rng)
            g = rqm_terms(psi, rqm_system, 0.1)[1]
            fd = fd_gradient(lambda v: rqm_objective(v, rqm_system, 0.1), psi)
            assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))

    def test_from_truth(self, ideal_desk_dataset, rqm_system):
        truth = true_psi(ideal_desk_dataset, (1, 2), 1)
        psi, diag = solve_rqm_branch(rqm_system, SolverConfig(), truth)
        assert diag.converged and diag.iterations <= 2
        np.testing.assert_allclose(psi.values, truth.values, atol=1e-10)

    def test_from_perturbed_start(self, ideal_desk_dataset, rqm_system, rng):
        truth = true_psi(ideal_desk_dataset, (1, 2), 1)
        for _ in range(5):
            psi, diag = solve_rqm_branch(rqm_system, SolverConfig(),
                                         perturbed(truth, rng))
            np.testing.assert_allclose(psi.values, truth.values, atol=1e-8)
            assert diag.plausible
            assert non_increasing(diag.history)

    def test_exact_hessian_mode(self, ideal_desk_dataset, rqm_system, rng):
        truth = true_psi(ideal_desk_dataset, (1, 2), 1)
        psi, _ = solve_rqm_branch(rqm_system, SolverConfig(exact_hessian=True),
                                  perturbed(truth, rng))
        np.testing.assert_allclose(psi.values, truth.values, atol=1e-8)

    def test_iteration_budget(self, ideal_desk_dataset, rqm_system, rng):
        truth = true_psi(ideal_desk_dataset, (1, 2), 1)
        with pytest.raises(ConvergenceError) as err:
            solve_rqm_branch(rqm_system, SolverConfig(max_iters=1),
                             perturbed(truth, rng, 0.5))
        assert len(err.value.history) >= 1

    def test_needs_init(self, rqm_system):
        with pytest.raises(InputError):
            solve_rqm_branch(rqm_system, SolverConfig(), None)


class TestConstraint:
    def test_unit_ratios(self):
        A = build_equality_constraint(1, 1).A
        np.testing.assert_array_equal(A, [[1, 0, -1, 0], [0, 1, 0, -1]])

    def test_imaginary_gamma(self):
        A = build_equality_constraint(1, 1j).A
        np.testing.assert_array_equal(A, [[0, -1, -1, 0], [1, 0, 0, -1]])

    def test_planted_pair_is_feasible(self, ideal_desk_dataset):
        ds = ideal_desk_dataset
        for prev, pres in [((1, 2), (2, 3)), ((2, 3), (3, 9)), ((6, 8), (2, 6))]:
            q = (set(prev) & set(pres)).pop()
            cp, cs = ds.true_cfs(prev), ds.true_cfs(pres)
            alpha = lambda cf, br: cf.alpha_from if q == br[0] else cf.alpha_to
            beta = lambda cf, br: cf.beta_from if q == br[0] else cf.beta_to
            rho = alpha(cs, pres) / alpha(cp, prev)
            gamma = beta(cs, pres) / beta(cp, prev)
            con = build_equality_constraint(rho, gamma)
            assert con.violation(true_psi(ds, prev, q).values,
                                 true_psi(ds, pres, q).values) <= 1e-10

    def test_rejects_non_finite(self):
        with pytest.raises(InputError):
            build_equality_constraint(np.nan, 1)


def pair_setup(ds, prev, pres):
    q = (set(prev) & set(pres)).pop()
    cp, cs = ds.true_cfs(prev), ds.true_cfs(pres)
    pick = lambda a, b, br: a if q == br[0] else b
    rho = pick(cs.alpha_from, cs.alpha_to, pres) / pick(cp.alpha_from, cp.alpha_to, prev)
    gamma = pick(cs.beta_from, cs.beta_to, pres) / pick(cp.beta_from, cp.beta_to, prev)
    sys_qp = build_design_system(ds.measurements[prev], q)
    sys_qs = build_design_system(ds.measurements[pres], q)
    return (sys_qp, sys_qs, build_equality_constraint(rho, gamma),
            true_psi(ds, prev, q), true_psi(ds, pres, q))


class TestBranchPair:
    def test_gradient_matches_finite_differences(self, ideal_desk_dataset, rng):
        sys_qp, sys_qs, _, tp, _ = pair_setup(ideal_desk_dataset, (1, 2), (2, 3))
        for _ in range(10):
            xi = np.r_[random_psi(rng), random_psi(rng)]
            g = pair_terms(xi, sys_qp, sys_qs, tp.values, 0.1)[1]
            fd = fd_gradient(lambda v: pair_terms(v, sys_qp, sys_qs, tp.values,
                                                  0.1)[0], xi)
            assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))

    def test_prior_truth_returns_truth(self, ideal_desk_dataset):
        sys_qp, sys_qs, con, tp, ts = pair_setup(ideal_desk_dataset, (1, 2), (2, 3))
        qp, qs, diag = solve_branch_pair(sys_qp, sys_qs, tp, con, SolverConfig(),
                                         init_qs=ts)
        np.testing.assert_allclose(qp.values, tp.values, atol=1e-8)
        np.testing.assert_allclose(qs.values, ts.values, atol=1e-8)
        assert diag.constraint_violation <= 1e-12

    @pytest.mark.parametrize("pair", [((1, 2), (2, 3)), ((2, 3), (3, 4)),
                                      ((2, 6), (6, 8)), ((9, 10), (10, 11))])
    def test_perturbed_start(self, ideal_desk_dataset, rng, pair):
        sys_qp, sys_qs, con, tp, ts = pair_setup(ideal_desk_dataset, *pair)
        qp, qs, diag = solve_branch_pair(sys_qp, sys_qs, tp, con, SolverConfig(),
                                         init_qs=perturbed(ts, rng),
                                         init_qp=perturbed(tp, rng))
        np.testing.assert_allclose(qp.values, tp.values, atol=1e-7)
        np.testing.assert_allclose(qs.values, ts.values, atol=1e-7)
        assert diag.converged and diag.constraint_violation <= 1e-8
        assert non_increasing(diag.history)

    def test_rank_deficient_constraint(self, ideal_desk_dataset):
        sys_qp, sys_qs, _, tp, ts = pair_setup(ideal_desk_dataset, (1, 2), (2, 3))
        with pytest.raises(ConstraintError):
            solve_branch_pair(sys_qp, sys_qs, tp, build_equality_constraint(0, 0),
                              SolverConfig(), init_qs=ts)

    def test_references_must_match(self, ideal_desk_dataset):
        ds = ideal_desk_dataset
        sys_qp = build_design_system(ds.measurements[(1, 2)], 1)
        sys_qs = build_design_system(ds.measurements[(2, 3)], 2)
        with pytest.raises(InputError):
            solve_branch_pair(sys_qp, sys_qs, np.ones(9),
                              build_equality_constraint(1, 1), init_qs=np.ones(9))
