"""Network-wide calibration over a connected tree.

The RQM branch is solved first. Every other branch is then solved jointly
with the branch that precedes it on its path to the RQM branch, under the
constraint built from the across-bus ratios. Branches are visited in BFS
order so the previous branch of a pair is always already estimated.

Each branch is solved ``M`` times on disjoint sample sets of the recording.
Line parameters and CFRs are averaged over those runs; absolute
correction factors follow from chaining the VT ratios back to the RQM.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InputError, PipelineError, SlicError
from .formulation import build_design_system, swap_reference
from .model import (Branch, BranchMeasurements, BusCurrentSet,
                    ConnectedTree, CorrectionFactors, LineParams, PsiVector,
                    find_path, shared_bus)
from .ratios import RatioEstimates, estimate_gamma, estimate_rho
from .solver import (SolveDiagnostics, SolverConfig, build_equality_constraint,
                     solve_branch_pair, solve_rqm_branch)

log = logging.getLogger(__name__)


@dataclass
class SlicEstimate:
    """Averaged estimate of one branch plus the runs it came from.

    ``cfs`` is expressed in branch orientation (from/to). ``cfr`` holds the
    averaged ratios ``(alpha_far, beta_ref, beta_far) / alpha_ref`` for
    ``reference_end``, and ``scale`` the chained factor that turns them into
    correction factors.
    """

    branch: Branch
    reference_end: int
    line: LineParams
    cfs: CorrectionFactors
    cfr: Tuple[complex, complex, complex]
    scale: complex
    runs: List[PsiVector] = field(repr=False)
    diagnostics: List[SolveDiagnostics] = field(repr=False)
    parent: Optional[Branch] = None
    ratios: Optional[RatioEstimates] = None

    @property
    def max_constraint_violation(self) -> float:
        return max((d.constraint_violation for d in self.diagnostics),
                   default=0.0)

    def as_dict(self) -> dict:
        def cplx(z):
            return [float(z.real), float(z.imag)]

        out = {
            "branch": list(self.branch),
            "r": self.line.r, "x": self.line.x, "b": self.line.b,
            "alpha_from": cplx(self.cfs.alpha_from),
            "alpha_to": cplx(self.cfs.alpha_to),
            "beta_from": cplx(self.cfs.beta_from),
            "beta_to": cplx(self.cfs.beta_to),
            "reference_end": self.reference_end,
            "diagnostics": {
                "runs": len(self.runs),
                "iterations": [d.iterations for d in self.diagnostics],
                "max_grad_norm": max(d.grad_norm for d in self.diagnostics),
                "max_constraint_violation": self.max_constraint_violation,
                "all_converged": all(d.converged for d in self.diagnostics),
                "plausible": all(d.plausible for d in self.diagnostics),
            },
        }
        if self.ratios is not None:
            out["ratios"] = {"bus": self.ratios.bus,
                             "previous": list(self.ratios.previous),
                             "rho": cplx(self.ratios.rho),
                             "gamma": cplx(self.ratios.gamma)}
        return out


def mean_psi(runs: Sequence[PsiVector]) -> PsiVector:
    if not runs:
        raise InputError("no runs to average")
    first = runs[0]
    if any(p.reference_end != first.reference_end for p in runs):
        raise InputError("runs are referenced at different ends")
    vals = np.mean([p.values for p in runs], axis=0)
    return PsiVector(vals, first.branch, first.reference_end)


def reconstruct_rqm_cfs(runs: Sequence[PsiVector]
                        ) -> Tuple[complex, complex, complex]:
    """Average the RQM-branch CFRs over the runs.

    Because the RQM VT is nearly exact, the averaged ratios are read
    directly as ``(alpha_far, beta_ref, beta_far)``.
    """
    avg = mean_psi(runs)
    return avg.alpha_ratio, avg.beta_ref_ratio, avg.beta_far_ratio


def compute_lambda_chain(path: Sequence[Branch],
                         runs: Mapping[Branch, Sequence[PsiVector]],
                         rhos: Mapping[Branch, complex], M: int) -> complex:
    """Chained VT correction factor at the entry end of ``path[-1]``.

    Starting from ``1`` at the RQM end, each run multiplies the VT ratio
    of every branch it crosses and the across-bus ratio ``rho`` of every
    bus it passes; the result is averaged over the first ``M`` runs.

    Parameters
    ----------
    path : sequence of Branch
        As returned by :func:`netslic.model.find_path`.
    runs : mapping
        Branch -> per-run PsiVector, each referenced at the branch's entry.
    rhos : mapping
        Branch -> ``alpha(branch) / alpha(previous branch)`` at their shared
        bus, for every branch after the first on the path.
    M : int
    """
    if M < 1:
        raise InputError("M must be >= 1")
    for br in path:
        if br not in runs or len(runs[br]) < M:
            raise PipelineError(f"missing run estimates for branch {br}")
    for br in path[1:]:
        if br not in rhos:
            raise PipelineError(f"missing rho estimate for branch {br}")
    total = 0j
    for j in range(M):
        value = 1.0 + 0j
        for k, br in enumerate(path):
            psi = runs[br][j]
            if k + 1 < len(path):
                bus = shared_bus(br, path[k + 1])
                if bus != psi.reference_end:
                    value *= psi.alpha_ratio
                value *= rhos[path[k + 1]]
        total += value
    return total / M


def reconstruct_branch_cfs(scale, cfr, branch: Branch, reference_end: int
                           ) -> CorrectionFactors:
    """Turn averaged CFRs into the four correction factors of a branch."""
    scale = complex(scale)
    a, bn, bf = (complex(c) for c in cfr)
    alpha_ref, alpha_far = scale, scale * a
    beta_ref, beta_far = scale * bn, scale * bf
    if reference_end == branch[0]:
        return CorrectionFactors(alpha_ref, alpha_far, beta_ref, beta_far)
    if reference_end == branch[1]:
        return CorrectionFactors(alpha_far, alpha_ref, beta_far, beta_ref)
    raise InputError(f"bus {reference_end} is not an end of {branch}")


def run_samples(n_samples: int, config: SolverConfig) -> List[np.ndarray]:
    """Sample indices of each of the ``M`` runs (disjoint, ``window`` each)."""
    w, M = config.window, config.M
    if M * w > n_samples:
        raise InputError(f"{M} runs of {w} samples need {M * w} samples, "
                         f"only {n_samples} available")
    if config.partition == "contiguous":
        return [np.arange(j * w, (j + 1) * w) for j in range(M)]
    # spread each run over the whole recording
    stride = n_samples // w
    return [np.arange(w) * stride + j for j in range(M)]


def _initial_psi(params: LineParams, branch, ref) -> PsiVector:
    return PsiVector.from_parts(params, 1, 1, 1, branch, ref)


def _at(psi: PsiVector, bus: int) -> PsiVector:
    return psi if psi.reference_end == bus else swap_reference(psi)


def bus_ratios(tree: ConnectedTree, measurements, bus_currents, previous,
               present) -> RatioEstimates:
    """Estimate ``rho`` and ``gamma`` where two tree branches meet."""
    q = shared_bus(previous, present)
    m_prev, m_pres = measurements[previous], measurements[present]
    rho = estimate_rho(m_prev.voltage_at(q), m_pres.voltage_at(q))
    currents = bus_currents[q]
    extra = [currents.branch_currents[br] for br in tree.incident(q)
             if br not in (previous, present)]
    extra.append(currents.residual)
    gamma, gamma_load = estimate_gamma(m_prev.current_at(q),
                                       m_pres.current_at(q),
                                       np.column_stack(extra), bus=q)
    load = None if gamma_load is None else np.atleast_1d(gamma_load)[-1]
    load = None if load is None or np.isnan(load) else complex(load)
    return RatioEstimates(q, previous, present, rho, gamma, load,
                          m_prev.n)


def run_pipeline(tree: ConnectedTree,
                 measurements: Mapping[Branch, BranchMeasurements],
                 bus_currents: Mapping[int, BusCurrentSet],
                 initial_params: Mapping[Branch, LineParams],
                 config: SolverConfig = SolverConfig(),
                 history: Optional[Mapping[Branch, BranchMeasurements]] = None,
                 history_currents: Optional[Mapping[int, BusCurrentSet]] = None,
                 ) -> Dict[Branch, SlicEstimate]:
    """Estimate line parameters and correction factors of every branch.

    Parameters
    ----------
    tree : ConnectedTree
    measurements : mapping
        Branch -> measured series; at least ``M * window`` samples.
    bus_currents : mapping
        Bus -> currents leaving the bus (tree branches plus residual).
    initial_params : mapping
        Branch -> database line parameters used as the starting point.
    config : SolverConfig
    history, history_currents : mapping, optional
        Series used for the across-bus ratios; default to the full
        ``measurements`` / ``bus_currents``.

    Returns
    -------
    dict
        Branch -> :class:`SlicEstimate`, in BFS visiting order.

    Raises
    ------
    PipelineError
        If any branch could not be estimated. ``partial`` carries the
        estimates that succeeded.
    """
    measurements = {tree.lookup(k): v for k, v in measurements.items()}
    for br in tree.branches:
        if br not in measurements:
            raise InputError(f"no measurements for branch {br}")
    history = measurements if history is None else {
        tree.lookup(k): v for k, v in history.items()}
    history_currents = bus_currents if history_currents is None else \
        history_currents
    n = min(m.n for m in measurements.values())
    subsets = run_samples(n, config)
    parents = tree.bfs_parents()
    estimates: Dict[Branch, SlicEstimate] = {}
    runs: Dict[Branch, List[PsiVector]] = {}
    rhos: Dict[Branch, complex] = {}
    failures: Dict[Branch, Exception] = {}

    for br, parent in parents.items():
        try:
            init_line = initial_params[br] if br in initial_params else \
                initial_params[(br[1], br[0])]
        except KeyError:
            failures[br] = InputError(f"no initial parameters for {br}")
            continue
        try:
            if parent is None:
                ref = tree.rqm_end
                init = _initial_psi(init_line, br, ref)
                solved, diags = [], []
                for idx in subsets:
                    system = build_design_system(measurements[br].take(idx),
                                                 ref)
                    psi, diag = solve_rqm_branch(system, config, init)
                    solved.append(psi)
                    diags.append(diag)
                ratio = None
            else:
                if parent in failures:
                    raise PipelineError(f"previous branch {parent} failed")
                ref = shared_bus(br, parent)
                ratio = bus_ratios(tree, history, history_currents, parent, br)
                rhos[br] = ratio.rho
                constraint = build_equality_constraint(ratio.rho, ratio.gamma)
                prior = _at(mean_psi(runs[parent]), ref)
                init = _initial_psi(init_line, br, ref)
                solved, diags = [], []
                for idx in subsets:
                    sys_qp = build_design_system(
                        measurements[parent].take(idx), ref)
                    sys_qs = build_design_system(
                        measurements[br].take(idx), ref)
                    _, psi, diag = solve_branch_pair(sys_qp, sys_qs, prior,
                                                     constraint, config,
                                                     init_qs=init)
                    solved.append(psi)
                    diags.append(diag)
            runs[br] = solved
            avg = mean_psi(solved)
            cfr = (avg.alpha_ratio, avg.beta_ref_ratio, avg.beta_far_ratio)
            path = find_path(tree, br)
            scale = compute_lambda_chain(path, runs, rhos, config.M)
            cfs = reconstruct_branch_cfs(scale, cfr, br, ref)
            estimates[br] = SlicEstimate(br, ref, avg.line, cfs, cfr, scale,
                                         solved, diags, parent, ratio)
        except SlicError as exc:
            log.warning("branch %s failed: %s", br, exc)
            failures[br] = exc
    if failures:
        names = ", ".join(f"{b}: {e}" for b, e in failures.items())
        raise PipelineError(f"{len(failures)} branch(es) failed: {names}",
                            partial=estimates, failures=failures)
    return estimates


def calibrate_dataset(dataset, config: SolverConfig = SolverConfig(),
                      initial_params=None) -> Dict[Branch, SlicEstimate]:
    """:func:`run_pipeline` on a generated or loaded dataset."""
    params = dataset.legacy if initial_params is None else initial_params
    return run_pipeline(dataset.tree, dataset.measurements,
                        dataset.bus_currents, params, config)


__all__ = [
    "SlicEstimate", "mean_psi", "reconstruct_rqm_cfs", "compute_lambda_chain",
    "reconstruct_branch_cfs", "run_pipeline", "calibrate_dataset", "run_samples",
    "bus_ratios",
]
