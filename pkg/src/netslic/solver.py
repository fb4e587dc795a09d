"""Newton-type solvers for single branches and constrained branch pairs.

Both objectives are sums of squared residuals ``||D f(psi) - c||^2`` plus
quadratic regularizers, so their gradients and (Gauss-Newton or exact)
Hessians are assembled from the analytic Jacobian/Hessian of ``f``.

* :func:`solve_rqm_branch` runs damped Newton with an Armijo line search
  on the RQM branch, whose reference CT ratio is pulled toward ``1 + 0j``.
* :func:`solve_branch_pair` solves two adjacent branches jointly under a
  linear equality constraint with a trust-region Newton method. Steps come
  from the KKT system and start from a feasible point, so every accepted
  iterate stays feasible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .exceptions import ConstraintError, ConvergenceError, InputError
from .formulation import (DesignSystem, hessian_theta_psi, jacobian_theta_psi,
                          theta_from_psi)
from .model import PsiVector

#: indices of the reference-end CT ratio inside psi
CT_REF = (5, 6)

#: accepted distance of the RQM CT ratio from 1 before flagging implausible
RQM_PLAUSIBLE = 0.05


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs shared by the single-branch and pair solvers.

    ``lam`` weights the RQM regularizer, ``lam1`` the prior on the previous
    branch of a pair. ``M`` solves over disjoint sets of ``window`` samples
    are averaged during reconstruction. ``partition`` chooses how the sets
    are cut: ``"interleaved"`` gives run ``j`` every ``n // window``-th
    sample from offset ``j`` so each run spans the whole recording,
    ``"contiguous"`` gives it one block of consecutive samples.
    """

    lam: float = 0.1
    lam1: float = 0.1
    max_iters: int = 100
    grad_tol: float = 1e-9
    step_tol: float = 1e-12
    trust_radius_init: float = 1.0
    trust_shrink: float = 0.25
    trust_grow: float = 2.0
    ratio_accept: float = 0.1
    ratio_good: float = 0.75
    M: int = 10
    window: int = 60
    exact_hessian: bool = False
    min_radius: float = 1e-14
    partition: str = "interleaved"

    def __post_init__(self):
        if self.lam < 0 or self.lam1 < 0:
            raise InputError("regularization weights must be >= 0")
        if not 0 < self.trust_shrink < 1 < self.trust_grow:
            raise InputError("need 0 < trust_shrink < 1 < trust_grow")
        if not 0 <= self.ratio_accept < self.ratio_good <= 1:
            raise InputError("need 0 <= ratio_accept < ratio_good <= 1")
        if self.max_iters < 1 or self.M < 1 or self.window < 3:
            raise InputError("max_iters, M must be >= 1 and window >= 3")
        if self.trust_radius_init <= 0:
            raise InputError("trust_radius_init must be positive")
        if self.partition not in ("interleaved", "contiguous"):
            raise InputError(f"unknown partition {self.partition!r}")


@dataclass
class SolveDiagnostics:
    iterations: int = 0
    objective: float = float("nan")
    grad_norm: float = float("nan")
    step_norm: float = float("nan")
    constraint_violation: float = 0.0
    converged: bool = False
    reason: str = ""
    history: List[float] = field(default_factory=list)
    plausible: bool = True

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "objective": self.objective,
                "grad_norm": self.grad_norm, "step_norm": self.step_norm,
                "constraint_violation": self.constraint_violation,
                "converged": self.converged, "reason": self.reason,
                "plausible": self.plausible}


# ---------------------------------------------------------------------------
# objective pieces

def _data_terms(v, system: DesignSystem, exact: bool):
    """Value, gradient and Hessian of ``||D f(v) - c||^2``."""
    r = system.D @ theta_from_psi(v) - system.c
    J = jacobian_theta_psi(v)
    DJ = system.D @ J
    g = 2.0 * DJ.T @ r
    H = 2.0 * DJ.T @ DJ
    if exact:
        H = H + 2.0 * np.tensordot(system.D.T @ r, hessian_theta_psi(v), axes=1)
    return float(r @ r), g, H


def _data_change(v_old, v_new, system: DesignSystem) -> float:
    """``||D f(v_new) - c||^2 - ||D f(v_old) - c||^2`` without cancellation.

    Differencing two nearly equal sums of squares loses every digit once
    steps are small; ``(r1 - r0) . (r1 + r0)`` with ``r1 - r0`` formed from
    the theta difference keeps the change accurate.
    """
    t0, t1 = theta_from_psi(v_old), theta_from_psi(v_new)
    r0 = system.D @ t0 - system.c
    r1 = system.D @ t1 - system.c
    return float((system.D @ (t1 - t0)) @ (r1 + r0))


def _quad_change(x0, x1, target) -> float:
    """Change of ``||x - target||^2`` between ``x0`` and ``x1``."""
    return float((x1 - x0) @ (x1 + x0 - 2 * target))


def rqm_terms(psi, system: DesignSystem, lam: float, exact=False):
    """Objective, gradient and Hessian of the regularized RQM problem."""
    v = np.asarray(getattr(psi, "values", psi), dtype=float)
    F, g, H = _data_terms(v, system, exact)
    i, j = CT_REF
    F += lam * ((v[i] - 1.0) ** 2 + v[j] ** 2)
    g = g.copy()
    g[i] += 2 * lam * (v[i] - 1.0)
    g[j] += 2 * lam * v[j]
    H = H.copy()
    H[i, i] += 2 * lam
    H[j, j] += 2 * lam
    return F, g, H


def _rqm_change(v0, v1, system, lam):
    idx = list(CT_REF)
    return (_data_change(v0, v1, system)
            + lam * _quad_change(v0[idx], v1[idx], np.array([1.0, 0.0])))


def _damped_solve(H, g, mu0=0.0):
    """Solve ``(H + mu I) d = -g`` raising ``mu`` until ``d`` descends."""
    n = H.shape[0]
    scale = max(np.trace(H) / n, 1e-300)
    mu = mu0
    for _ in range(30):
        try:
            d = np.linalg.solve(H + mu * np.eye(n), -g)
            if np.all(np.isfinite(d)) and g @ d < 0:
                return d, mu
        except np.linalg.LinAlgError:
            pass
        mu = max(10 * mu, 1e-10 * scale)
    raise ConvergenceError("Hessian could not be regularized into a "
                           "descent direction")


def solve_rqm_branch(system: DesignSystem, config: SolverConfig = SolverConfig(),
                     init=None) -> Tuple[PsiVector, SolveDiagnostics]:
    """Minimize the regularized single-branch objective from ``init``.

    Parameters
    ----------
    system : DesignSystem
        Rows of the RQM branch built with its RQM end as reference.
    config : SolverConfig
    init : PsiVector or array_like
        Starting point (line parameters from a database, CFRs at one).

    Returns
    -------
    psi : PsiVector
    diagnostics : SolveDiagnostics
        ``plausible`` is False when the reference CT ratio lands more than
        0.05 away from ``1 + 0j``.

    Raises
    ------
    ConvergenceError
        When no stationary point is reached within ``max_iters``.
    """
    if init is None:
        raise InputError("an initial psi is required")
    v = np.array(getattr(init, "values", init), dtype=float)
    if v.shape != (9,):
        raise InputError("init must hold 9 reals")
    lam = config.lam
    diag = SolveDiagnostics()
    for it in range(config.max_iters + 1):
        F, g, H = rqm_terms(v, system, lam, config.exact_hessian)
        diag.history.append(F)
        gnorm = float(np.linalg.norm(g))
        diag.iterations, diag.objective, diag.grad_norm = it, F, gnorm
        if gnorm <= config.grad_tol:
            diag.converged, diag.reason = True, "gradient"
            break
        if it == config.max_iters:
            break
        d, mu = _damped_solve(H, g)
        diag.step_norm = float(np.linalg.norm(d))
        if diag.step_norm <= config.step_tol:
            diag.converged, diag.reason = True, "step"
            break
        slope = float(g @ d)
        accepted = False
        for _ in range(3):
            t = 1.0
            for _ in range(50):
                trial = v + t * d
                if _rqm_change(v, trial, system, lam) <= 1e-4 * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            # the quadratic model misleads; damp harder and retry
            d, mu = _damped_solve(H, g, max(10 * mu, 1e-6 * np.trace(H) / 9))
            slope = float(g @ d)
        if not accepted:
            if -slope <= 1e-13 * F + 1e-300:
                diag.converged, diag.reason = True, "stalled at rounding floor"
                break
            raise ConvergenceError("line search failed on RQM branch",
                                   history=diag.history)
        v = trial
    if not diag.converged:
        raise ConvergenceError(
            f"RQM branch did not converge in {config.max_iters} iterations",
            history=diag.history)
    i, j = CT_REF
    diag.plausible = bool(abs(v[i] - 1.0) <= RQM_PLAUSIBLE
                          and abs(v[j]) <= RQM_PLAUSIBLE)
    return PsiVector(v, system.branch, system.reference_end), diag


# ---------------------------------------------------------------------------
# branch pairs

@dataclass(frozen=True)
class EqualityConstraint:
    """``A @ (psi_qp[5:7], psi_qs[5:7]) = 0`` in real/imag split form."""

    A: np.ndarray
    rho: complex
    gamma: complex

    def full(self) -> np.ndarray:
        """The constraint as a 2x18 matrix over the stacked pair."""
        C = np.zeros((2, 18))
        C[:, [5, 6, 14, 15]] = self.A
        return C

    def violation(self, psi_qp, psi_qs) -> float:
        xi = np.array([psi_qp[5], psi_qp[6], psi_qs[5], psi_qs[6]])
        return float(np.linalg.norm(self.A @ xi))


def build_equality_constraint(rho_hat, gamma_hat) -> EqualityConstraint:
    """Link the shared-bus CT ratios of a branch pair.

    Encodes ``gamma * (psi_qp6 + j psi_qp7) - rho * (psi_qs6 + j psi_qs7)
    = 0`` as two real rows.
    """
    rho, gamma = complex(rho_hat), complex(gamma_hat)
    for name, z in (("rho", rho), ("gamma", gamma)):
        if not (np.isfinite(z.real) and np.isfinite(z.imag)):
            raise InputError(f"{name} is not finite")
    A = np.array([[gamma.real, -gamma.imag, -rho.real, rho.imag],
                  [gamma.imag, gamma.real, -rho.imag, -rho.real]])
    return EqualityConstraint(A, rho, gamma)


def feasible_start(psi_qp, psi_qs, constraint: EqualityConstraint):
    """Replace the CT ratio of ``psi_qs`` so the pair meets the constraint."""
    if abs(constraint.rho) == 0:
        raise ConstraintError("rho is zero; constraint cannot be satisfied")
    v = np.array(psi_qs, dtype=float)
    bn = constraint.gamma / constraint.rho * complex(psi_qp[5], psi_qp[6])
    v[5], v[6] = bn.real, bn.imag
    return v


def pair_terms(xi, sys_qp, sys_qs, prior, lam1, exact=False):
    """Objective, gradient and Hessian of the regularized pair problem."""
    F1, g1, H1 = _data_terms(xi[:9], sys_qp, exact)
    F2, g2, H2 = _data_terms(xi[9:], sys_qs, exact)
    dev = xi[:9] - prior
    F = F1 + F2 + lam1 * float(dev @ dev)
    g = np.concatenate([g1 + 2 * lam1 * dev, g2])
    H = np.zeros((18, 18))
    H[:9, :9] = H1 + 2 * lam1 * np.eye(9)
    H[9:, 9:] = H2
    return F, g, H


def _pair_change(x0, x1, sys_qp, sys_qs, prior, lam1):
    return (_data_change(x0[:9], x1[:9], sys_qp)
            + _data_change(x0[9:], x1[9:], sys_qs)
            + lam1 * _quad_change(x0[:9], x1[:9], prior))


def solve_branch_pair(sys_qp: DesignSystem, sys_qs: DesignSystem, prior,
                      constraint: EqualityConstraint,
                      config: SolverConfig = SolverConfig(),
                      init_qs=None, init_qp=None
                      ) -> Tuple[PsiVector, PsiVector, SolveDiagnostics]:
    """Trust-region Newton on two adjacent branches sharing bus ``q``.

    Parameters
    ----------
    sys_qp, sys_qs : DesignSystem
        Previous and present branch, both referenced at the shared bus.
    prior : PsiVector or array_like
        Earlier estimate of the previous branch at the shared bus; it is
        both the regularization target and the starting point for that
        branch unless ``init_qp`` is given.
    constraint : EqualityConstraint
    init_qs : array_like
        Starting point of the present branch; its CT ratio is overwritten
        so that the start is feasible.

    Returns
    -------
    psi_qp, psi_qs : PsiVector
    diagnostics : SolveDiagnostics

    Raises
    ------
    ConstraintError
        If the constraint matrix is rank deficient.
    ConvergenceError
        On trust-region collapse or iteration exhaustion.
    """
    if sys_qp.reference_end != sys_qs.reference_end:
        raise InputError("both branches must be referenced at the shared bus")
    prior = np.array(getattr(prior, "values", prior), dtype=float)
    if init_qs is None:
        raise InputError("an initial psi for the present branch is required")
    C = constraint.full()
    sv = np.linalg.svd(C, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise ConstraintError("equality constraint is rank deficient")
    CCt_inv = np.linalg.inv(C @ C.T)
    Z = np.linalg.svd(C)[2][2:].T            # null-space basis, 18 x 16

    def project(x):
        return x - C.T @ (CCt_inv @ (C @ x))

    qp0 = prior if init_qp is None else np.array(
        getattr(init_qp, "values", init_qp), dtype=float)
    qs0 = feasible_start(qp0, getattr(init_qs, "values", init_qs), constraint)
    xi = project(np.concatenate([qp0, qs0])) if np.linalg.norm(
        C @ np.concatenate([qp0, qs0])) > 1e-15 else np.concatenate([qp0, qs0])

    lam1 = config.lam1
    radius = config.trust_radius_init
    diag = SolveDiagnostics()
    accepted_steps = 0
    F, g, H = pair_terms(xi, sys_qp, sys_qs, prior, lam1, config.exact_hessian)
    diag.history.append(F)
    n_kkt = 18 + 2
    while True:
        pg = Z @ (Z.T @ g)
        diag.objective, diag.grad_norm = F, float(np.linalg.norm(pg))
        diag.iterations = accepted_steps
        if diag.grad_norm <= config.grad_tol:
            diag.converged, diag.reason = True, "projected gradient"
            break
        if accepted_steps >= config.max_iters:
            break
        # Levenberg damping if the reduced Hessian is not positive definite
        red = Z.T @ H @ Z
        ev = np.linalg.eigvalsh(0.5 * (red + red.T))
        mu = 0.0
        if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
            mu = max(-ev[0], 0.0) + 1e-10 * max(abs(ev[-1]), 1.0)
        K = np.zeros((n_kkt, n_kkt))
        K[:18, :18] = H + mu * np.eye(18)
        K[:18, 18:] = C.T
        K[18:, :18] = C
        rhs = np.concatenate([-g, -(C @ xi)])
        try:
            d = np.linalg.solve(K, rhs)[:18]
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("KKT system is singular",
                                   history=diag.history) from exc
        dnorm = float(np.linalg.norm(d))
        diag.step_norm = dnorm
        if dnorm <= config.step_tol:
            diag.converged, diag.reason = True, "step"
            break
        done = False
        while True:
            s = d if dnorm <= radius else d * (radius / dnorm)
            pred = -(g @ s + 0.5 * s @ H @ s)
            if pred <= 1e-15 * max(F, 1e-300):
                diag.converged, diag.reason = True, "stalled at rounding floor"
                done = True
                break
            trial = xi + s
            actual = -_pair_change(xi, trial, sys_qp, sys_qs, prior, lam1)
            ratio = actual / pred
            if not np.isfinite(actual) or ratio < config.ratio_accept:
                radius = config.trust_shrink * min(radius, float(np.linalg.norm(s)))
                if radius < config.min_radius:
                    raise ConvergenceError("trust radius collapsed",
                                           history=diag.history)
                continue
            if ratio > config.ratio_good and np.linalg.norm(s) >= 0.99 * radius:
                radius = config.trust_grow * radius
            xi = project(trial)
            accepted_steps += 1
            break
        if done:
            break
        F, g, H = pair_terms(xi, sys_qp, sys_qs, prior, lam1,
                             config.exact_hessian)
        diag.history.append(F)
    diag.iterations = accepted_steps
    diag.constraint_violation = float(np.linalg.norm(C @ xi))
    if not diag.converged:
        raise ConvergenceError(
            f"branch pair did not converge in {config.max_iters} iterations",
            history=diag.history)
    psi_qp = PsiVector(xi[:9], sys_qp.branch, sys_qp.reference_end)
    psi_qs = PsiVector(xi[9:], sys_qs.branch, sys_qs.reference_end)
    return psi_qp, psi_qs, diag


__all__ = [
    "SolverConfig", "SolveDiagnostics", "EqualityConstraint",
    "build_equality_constraint", "solve_rqm_branch", "solve_branch_pair",
    "rqm_terms", "pair_terms", "feasible_start",
]
