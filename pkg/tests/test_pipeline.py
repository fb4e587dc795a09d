import numpy as np
import pytest

from netslic.exceptions import InputError, PipelineError
from netslic.formulation import build_design_system
from netslic.model import PsiVector
from netslic.networks import chain_network
from netslic.pipeline import (calibrate_dataset, compute_lambda_chain,
                              reconstruct_branch_cfs, reconstruct_rqm_cfs,
                              run_pipeline, run_samples)
from netslic.solver import SolverConfig, solve_rqm_branch
from netslic.synthgen import LoadScenario, NoiseConfig, generate_dataset

CF_NAMES = ("alpha_from", "alpha_to", "beta_from", "beta_to")


def psi(branch, ref, a=1, bn=1, bf=1, line=(0.01, 0.05, 0.2)):
    a, bn, bf = complex(a), complex(bn), complex(bf)
    return PsiVector(np.r_[line, a.real, a.imag, bn.real, bn.imag, bf.real,
                           bf.imag], branch, ref)


def assert_recovers(dataset, estimates, params_tol, cf_tol):
    for br, est in estimates.items():
        truth = dataset.network.branch_spec(br).params
        np.testing.assert_allclose(est.line.as_array(), truth.as_array(),
                                   rtol=0, atol=params_tol)
        true_cf = dataset.true_cfs(br)
        for name in CF_NAMES:
            assert abs(getattr(est.cfs, name) - getattr(true_cf, name)) <= cf_tol


class TestLambdaChain:
    def test_all_ones(self):
        path = [(1, 2), (2, 3), (3, 4)]
        runs = {br: [psi(br, br[0])] * 3 for br in path}
        rhos = {(2, 3): 1, (3, 4): 1}
        assert compute_lambda_chain(path, runs, rhos, 3) == 1 + 0j

    def test_single_hop(self):
        runs = {(1, 2): [psi((1, 2), 1)], (2, 3): [psi((2, 3), 2)]}
        assert compute_lambda_chain([(1, 2), (2, 3)], runs, {(2, 3): 1.01}, 1) \
            == pytest.approx(1.01)

    def test_ratio_applies_when_leaving_far_end(self):
        a = 1.002 - 0.001j
        runs = {(1, 2): [psi((1, 2), 1, a=a)], (2, 3): [psi((2, 3), 2)]}
        got = compute_lambda_chain([(1, 2), (2, 3)], runs, {(2, 3): 0.99}, 1)
        assert got == pytest.approx(a * 0.99, abs=1e-15)

    def test_averages_runs(self):
        runs = {(1, 2): [psi((1, 2), 1, a=1.0), psi((1, 2), 1, a=1.02)],
                (2, 3): [psi((2, 3), 2)] * 2}
        got = compute_lambda_chain([(1, 2), (2, 3)], runs, {(2, 3): 1.0}, 2)
        assert got == pytest.approx(1.01)

    def test_missing_estimate(self):
        with pytest.raises(PipelineError):
            compute_lambda_chain([(1, 2), (2, 3)], {(1, 2): [psi((1, 2), 1)]},
                                 {(2, 3): 1}, 1)


class TestReconstruction:
    def test_identity(self):
        cf = reconstruct_branch_cfs(1, (1, 1, 1), (1, 2), 1)
        assert all(getattr(cf, n) == 1 for n in CF_NAMES)

    def test_product(self):
        cf = reconstruct_branch_cfs(1.01, (1, 0.99, 1), (1, 2), 1)
        assert cf.beta_from == pytest.approx(0.9999, abs=1e-15)

    def test_reference_at_to_bus(self):
        cf = reconstruct_branch_cfs(1.01, (1.002, 0.99, 0.98), (1, 2), 2)
        assert cf.alpha_to == pytest.approx(1.01)
        assert cf.alpha_from == pytest.approx(1.01 * 1.002)
        assert cf.beta_to == pytest.approx(1.01 * 0.99)
        assert cf.beta_from == pytest.approx(1.01 * 0.98)

    def test_rqm_single_run_passthrough(self):
        p = psi((1, 2), 1, a=1.001, bn=0.999 + 0.001j, bf=1.003)
        assert reconstruct_rqm_cfs([p]) == (p.alpha_ratio, p.beta_ref_ratio,
                                            p.beta_far_ratio)

    def test_rqm_identical_runs(self):
        p = psi((1, 2), 1, a=1.001, bn=0.999 + 0.001j, bf=1.003)
        got = reconstruct_rqm_cfs([p] * 10)
        assert got[0] == pytest.approx(p.alpha_ratio, abs=1e-15)

    def test_rqm_averaging_reduces_error(self, desk):
        cfg = SolverConfig()
        for seed in range(5):
            ds = generate_dataset(desk, NoiseConfig(tve_max=0.001, perfect_rqm=True,
                                                    rng_seed=seed))
            truth = ds.true_cfs((1, 2)).beta_to
            runs = []
            init = psi((1, 2), 1, line=ds.legacy[(1, 2)].as_array())
            for idx in run_samples(ds.n_samples, cfg):
                sys = build_design_system(ds.measurements[(1, 2)].take(idx), 1)
                runs.append(solve_rqm_branch(sys, cfg, init)[0])
            single = [abs(p.beta_far_ratio - truth) for p in runs]
            mean_err = abs(reconstruct_rqm_cfs(runs)[2] - truth)
            assert mean_err <= np.percentile(single, 90)


class TestRunSamples:
    def test_interleaved_disjoint_and_spanning(self):
        sets = run_samples(600, SolverConfig())
        flat = np.concatenate(sets)
        assert len(sets) == 10 and all(s.size == 60 for s in sets)
        assert np.unique(flat).size == 600
        assert all(s[0] < 10 and s[-1] >= 590 for s in sets)

    def test_contiguous(self):
        sets = run_samples(600, SolverConfig(partition="contiguous"))
        assert sets[3][0] == 180 and sets[3][-1] == 239

    def test_too_short(self):
        with pytest.raises(InputError):
            run_samples(500, SolverConfig())


class TestPipeline:
    def test_single_branch_tree(self):
        net = chain_network(1)
        ds = generate_dataset(net, NoiseConfig(tve_max=0.001, rng_seed=2))
        cfg = SolverConfig()
        est = calibrate_dataset(ds, cfg)[(1, 2)]
        runs = []
        init = psi((1, 2), 1, line=ds.legacy[(1, 2)].as_array())
        for idx in run_samples(ds.n_samples, cfg):
            sys = build_design_system(ds.measurements[(1, 2)].take(idx), 1)
            runs.append(solve_rqm_branch(sys, cfg, init)[0])
        a, bn, bf = reconstruct_rqm_cfs(runs)
        assert est.cfs.alpha_from == 1
        assert est.cfs.alpha_to == pytest.approx(a, abs=1e-15)
        assert est.cfs.beta_from == pytest.approx(bn, abs=1e-15)
        assert est.cfs.beta_to == pytest.approx(bf, abs=1e-15)

    def test_chain_noise_free(self, ideal_chain_dataset):
        est = calibrate_dataset(ideal_chain_dataset)
        assert len(est) == 3
        assert_recovers(ideal_chain_dataset, est, 1e-7, 1e-7)

    def test_desk_noise_free(self, ideal_desk_dataset):
        est = calibrate_dataset(ideal_desk_dataset)
        assert_recovers(ideal_desk_dataset, est, 1e-7, 1e-9)
        for e in est.values():
            assert e.max_constraint_violation <= 1e-8
            assert all(d.converged for d in e.diagnostics)

    def test_lambda_chain_matches_truth(self, ideal_desk_dataset):
        ds = ideal_desk_dataset
        est = calibrate_dataset(ds)
        for br, e in est.items():
            cf = ds.true_cfs(br)
            truth = cf.alpha_from if e.reference_end == br[0] else cf.alpha_to
            assert abs(e.scale - truth) <= 1e-9

    def test_deterministic(self, desk):
        ds = generate_dataset(desk, NoiseConfig(rng_seed=21))
        a = calibrate_dataset(ds)
        b = calibrate_dataset(generate_dataset(desk, NoiseConfig(rng_seed=21)))
        for br in a:
            assert a[br].as_dict() == b[br].as_dict()

    def test_partial_failure(self, ideal_chain_dataset):
        ds = ideal_chain_dataset
        params = {k: v for k, v in ds.legacy.items() if k != (2, 3)}
        with pytest.raises(PipelineError) as err:
            run_pipeline(ds.tree, ds.measurements, ds.bus_currents, params)
        assert set(err.value.partial) == {(1, 2)}
        assert set(err.value.failures) == {(2, 3), (3, 4)}

    def test_missing_measurements(self, ideal_chain_dataset):
        ds = ideal_chain_dataset
        meas = {k: v for k, v in ds.measurements.items() if k != (3, 4)}
        with pytest.raises(InputError):
            run_pipeline(ds.tree, meas, ds.bus_currents, ds.legacy)

    def test_report_layout(self, ideal_chain_dataset):
        est = calibrate_dataset(ideal_chain_dataset)
        doc = est[(2, 3)].as_dict()
        for key in ("r", "x", "b", *CF_NAMES, "diagnostics", "ratios"):
            assert key in doc
