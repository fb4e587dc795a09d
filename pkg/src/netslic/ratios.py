"""Across-bus VT and CT ratio estimators.

At a bus ``q`` shared by branches ``p-q`` and ``q-s``:

* ``rho = alpha_qs / alpha_qp`` follows from the two VTs seeing the same
  bus voltage, estimated as a ratio of sample sums;
* ``gamma = beta_qs / beta_qp`` follows from KCL,
  ``gamma I_qs + gamma_L I_qL = -I_qp``, solved as total least squares
  because every current column is noisy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import IllConditionedError, InputError, NumericDomainError
from .model import Branch, as_series

MIN_HISTORY = 8
MAX_COND = 1e8


@dataclass(frozen=True)
class RatioEstimates:
    bus: int
    previous: Branch
    present: Branch
    rho: complex
    gamma: complex
    gamma_load: Optional[complex]
    N: int


def _check_lengths(*series):
    n = series[0].size
    if any(s.size != n for s in series):
        raise InputError("historical series differ in length")
    if n < MIN_HISTORY:
        raise InputError(f"need at least {MIN_HISTORY} historical samples")
    return n


def estimate_rho(v_qp, v_qs) -> complex:
    """Ratio of sample sums ``sum(V_qp) / sum(V_qs)``."""
    v_qp = as_series(v_qp, "V_qp")
    v_qs = as_series(v_qs, "V_qs")
    _check_lengths(v_qp, v_qs)
    den = v_qs.sum()
    if abs(den) <= 1e-9:
        raise NumericDomainError("sum of V_qs is numerically zero")
    return complex(v_qp.sum() / den)


def realify(M) -> np.ndarray:
    """Real representation ``[[Re M, -Im M], [Im M, Re M]]``."""
    M = np.asarray(M, dtype=complex)
    if M.ndim == 1:
        M = M[:, None]
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def _columns(i_qs, i_ql):
    cols = [as_series(i_qs, "I_qs")[:, None]]
    if i_ql is not None:
        ql = np.asarray(i_ql, dtype=complex)
        if ql.ndim == 1:
            ql = ql[:, None]
        if not np.all(np.isfinite(ql)):
            raise InputError("I_qL contains non-finite samples")
        cols.append(ql)
    return np.hstack(cols)


def tls_complex(A, b) -> np.ndarray:
    """TLS solution of ``A x ~ b`` from the complex SVD of ``[A | b]``."""
    C = np.column_stack([A, b])
    k = A.shape[1]
    v = np.linalg.svd(C)[2][-1].conj()
    if abs(v[k]) < 1e-12 * np.linalg.norm(v):
        raise IllConditionedError("TLS problem is non-generic")
    return -v[:k] / v[k]


def tls_realified(A, b) -> np.ndarray:
    """Same solution via a real SVD of the realified augmented matrix.

    The realification doubles every singular value, so the two smallest
    right singular vectors span the solution subspace; ``X = -V12 V22^-1``
    carries the complex coefficients in its first column.
    """
    k = A.shape[1]
    Ar = realify(A)
    br = realify(b)
    Vt = np.linalg.svd(np.hstack([Ar, br]))[2]
    V = Vt.T
    V12 = V[:2 * k, 2 * k:]
    V22 = V[2 * k:, 2 * k:]
    if abs(np.linalg.det(V22)) < 1e-24:
        raise IllConditionedError("TLS problem is non-generic")
    X = -V12 @ np.linalg.inv(V22)
    return X[:k, 0] + 1j * X[k:, 0]


def estimate_gamma(i_qp, i_qs, i_ql=None, bus=None, method="complex"
                   ) -> Tuple[complex, Optional[complex]]:
    """TLS estimate of the CT ratios at a bus.

    Parameters
    ----------
    i_qp : array_like
        Current leaving the bus into the previous branch (the denominator CT).
    i_qs : array_like
        Current leaving the bus into the present branch.
    i_ql : array_like, optional
        Residual current(s). A 2-D array adds one column per extra channel,
        which covers buses with more than two monitored branches. An
        all-zero residual is dropped (its ratio is then ``None``).
    bus : int, optional
        Only used in error messages.
    method : {"complex", "realified"}

    Returns
    -------
    gamma : complex
        ``beta_qs / beta_qp``.
    gamma_load : complex, ndarray or None
        Ratio(s) of the residual channel(s); ``None`` when dropped.
    """
    i_qp = as_series(i_qp, "I_qp")
    A = _columns(i_qs, i_ql)
    _check_lengths(i_qp, A[:, 0])
    if A.shape[0] != i_qp.size:
        raise InputError("I_qL length differs from I_qp")
    keep = [0] + [j for j in range(1, A.shape[1])
                  if np.max(np.abs(A[:, j])) > 1e-12]
    A = A[:, keep]
    cond = np.linalg.cond(realify(A))
    if not np.isfinite(cond) or cond > MAX_COND:
        raise IllConditionedError(
            f"current profiles at bus {bus} are collinear (cond={cond:.3g})",
            bus=bus, cond=cond)
    b = -i_qp
    if method == "complex":
        x = tls_complex(A, b)
    elif method == "realified":
        x = tls_realified(A, b)
    else:
        raise InputError(f"unknown TLS method {method!r}")
    gamma = complex(x[0])
    n_extra = 0 if i_ql is None else np.atleast_2d(
        np.asarray(i_ql).reshape(i_qp.size, -1)).shape[1]
    if n_extra == 0:
        return gamma, None
    loads = np.full(n_extra, np.nan + 0j)
    for pos, j in enumerate(keep[1:], start=1):
        loads[j - 1] = x[pos]
    if n_extra == 1:
        load = loads[0]
        return gamma, (None if np.isnan(load) else complex(load))
    return gamma, loads


def tls_residual(A, b) -> float:
    """Smallest singular value of ``[A | b]`` (the TLS misfit)."""
    return float(np.linalg.svd(np.column_stack([A, b]), compute_uv=False)[-1])


def ols_residual(A, b) -> float:
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    return float(np.linalg.norm(A @ x - b))
