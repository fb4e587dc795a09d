"""Linear-in-theta measurement system and the nonlinear map theta = f(psi).

For a branch observed from its reference end ``p`` (far end ``q``), each
time instant contributes four real rows::

    Re  [ s^2 Vp - s a Vq - z s bn Ip ] = 0
    Re  [ s a Vq - z bf Iq ]            = Re Vp
    Im  [ s^2 Vp - s a Vq - z s bn Ip ] = 0
    Im  [ s a Vq - z bf Iq ]            = Im Vp

with ``z = r + jx``, ``s = 1 + j b z``, ``a = alpha_q/alpha_p``,
``bn = beta_p/alpha_p`` and ``bf = beta_q/alpha_p``. The eight entries
of theta are the real/imaginary parts of ``s^2, s a, z s bn, z bf``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, NumericDomainError
from .model import Branch, BranchMeasurements, PsiVector, as_series

#: below this magnitude the VT ratio cannot serve as a denominator
SWAP_EPS = 1e-6


def _vals(psi) -> np.ndarray:
    if isinstance(psi, PsiVector):
        return psi.values
    return np.asarray(psi, dtype=float)


@dataclass(frozen=True)
class DesignSystem:
    D: np.ndarray
    c: np.ndarray
    branch: Branch
    reference_end: int

    @property
    def n(self) -> int:
        return self.D.shape[0] // 4


def design_rows(v_ref, v_far, i_ref, i_far):
    """Assemble ``(D, c)`` from already oriented phasor series."""
    vp = as_series(v_ref, "v_ref")
    vq = as_series(v_far, "v_far")
    ip = as_series(i_ref, "i_ref")
    iq = as_series(i_far, "i_far")
    n = vp.size
    D = np.zeros((n, 4, 8))
    c = np.zeros((n, 4))
    D[:, 0, 0], D[:, 0, 1] = vp.real, -vp.imag
    D[:, 0, 2], D[:, 0, 3] = -vq.real, vq.imag
    D[:, 0, 4], D[:, 0, 5] = -ip.real, ip.imag
    D[:, 1, 2], D[:, 1, 3] = vq.real, -vq.imag
    D[:, 1, 6], D[:, 1, 7] = -iq.real, iq.imag
    D[:, 2, 0], D[:, 2, 1] = vp.imag, vp.real
    D[:, 2, 2], D[:, 2, 3] = -vq.imag, -vq.real
    D[:, 2, 4], D[:, 2, 5] = -ip.imag, -ip.real
    D[:, 3, 2], D[:, 3, 3] = vq.imag, vq.real
    D[:, 3, 6], D[:, 3, 7] = -iq.imag, -iq.real
    c[:, 1] = vp.real
    c[:, 3] = vp.imag
    return D.reshape(4 * n, 8), c.reshape(4 * n)


def build_design_system(m: BranchMeasurements, reference_end: int) -> DesignSystem:
    """Stack the measurement rows of branch ``m`` seen from ``reference_end``.

    When the reference is the to-bus the from/to channels exchange roles
    before the rows are filled.
    """
    if m.n < 3:
        raise InputError("design system needs at least 3 samples")
    D, c = design_rows(*m.oriented(reference_end))
    D.setflags(write=False)
    c.setflags(write=False)
    return DesignSystem(D, c, m.branch, reference_end)


def theta_from_psi(psi) -> np.ndarray:
    """Evaluate the eight polynomials theta(psi)."""
    p1, p2, p3, p4, p5, p6, p7, p8, p9 = _vals(psi)
    return np.array([
        1 - 2 * p2 * p3 + p2**2 * p3**2 - p1**2 * p3**2,
        2 * p1 * p3 - 2 * p1 * p2 * p3**2,
        p4 - p2 * p3 * p4 - p1 * p3 * p5,
        p5 - p2 * p3 * p5 + p1 * p3 * p4,
        (p1 * p6 - 2 * p1 * p2 * p3 * p6 - p1**2 * p3 * p7 - p2 * p7
         + p2**2 * p3 * p7),
        (p1 * p7 - 2 * p1 * p2 * p3 * p7 + p1**2 * p3 * p6 + p2 * p6
         - p2**2 * p3 * p6),
        p1 * p8 - p2 * p9,
        p1 * p9 + p2 * p8,
    ])


def _primitives(v):
    # complex building blocks and their gradients w.r.t. the 9 reals
    r, x, b = v[0], v[1], v[2]
    z = complex(r, x)
    s = 1 + 1j * b * z
    a = complex(v[3], v[4])
    bn = complex(v[5], v[6])
    bf = complex(v[7], v[8])
    dz = np.zeros(9, complex)
    dz[0], dz[1] = 1, 1j
    ds = np.zeros(9, complex)
    ds[0], ds[1], ds[2] = 1j * b, -b, 1j * z
    da = np.zeros(9, complex)
    da[3], da[4] = 1, 1j
    dbn = np.zeros(9, complex)
    dbn[5], dbn[6] = 1, 1j
    dbf = np.zeros(9, complex)
    dbf[7], dbf[8] = 1, 1j
    return z, s, a, bn, bf, dz, ds, da, dbn, dbf


def _complex_jacobian(v):
    z, s, a, bn, bf, dz, ds, da, dbn, dbf = _primitives(v)
    dw = dz * s + z * ds
    return np.array([
        2 * s * ds,
        ds * a + s * da,
        dw * bn + z * s * dbn,
        dz * bf + z * dbf,
    ])


def jacobian_theta_psi(psi) -> np.ndarray:
    """Analytic 8x9 Jacobian of :func:`theta_from_psi`."""
    P = _complex_jacobian(_vals(psi))
    J = np.empty((8, 9))
    J[0::2] = P.real
    J[1::2] = P.imag
    return J


def hessian_theta_psi(psi) -> np.ndarray:
    """Second derivatives of theta, shape (8, 9, 9)."""
    v = _vals(psi)
    z, s, a, bn, bf, dz, ds, da, dbn, dbf = _primitives(v)
    d2s = np.zeros((9, 9), complex)
    d2s[0, 2] = d2s[2, 0] = 1j
    d2s[1, 2] = d2s[2, 1] = -1
    dw = dz * s + z * ds
    d2w = np.outer(dz, ds) + np.outer(ds, dz) + z * d2s
    H = np.array([
        2 * (np.outer(ds, ds) + s * d2s),
        d2s * a + np.outer(ds, da) + np.outer(da, ds),
        d2w * bn + np.outer(dw, dbn) + np.outer(dbn, dw),
        np.outer(dz, dbf) + np.outer(dbf, dz),
    ])
    out = np.empty((8, 9, 9))
    out[0::2] = H.real
    out[1::2] = H.imag
    return out


def swap_reference(psi):
    """Re-reference psi from one end's VT to the other end's VT.

    Line parameters are kept as they are. The CT ratios exchange slots so
    that entries 6-7 keep holding the reference-end CT, which is what a
    design system built from the other end expects. Applying the map
    twice returns the input. A :class:`PsiVector` input yields a
    :class:`PsiVector` referenced at its former far end.
    """
    v = _vals(psi)
    a = complex(v[3], v[4])
    if abs(a) <= SWAP_EPS:
        raise NumericDomainError(f"VT ratio {a} too small to invert")
    bn = complex(v[5], v[6])
    bf = complex(v[7], v[8])
    inv = 1 / a
    new_bn = bf * inv
    new_bf = bn * inv
    out = np.array([v[0], v[1], v[2], inv.real, inv.imag,
                    new_bn.real, new_bn.imag, new_bf.real, new_bf.imag])
    if isinstance(psi, PsiVector):
        return PsiVector(out, psi.branch, psi.far_end)
    return out


def residual(psi, system: DesignSystem) -> np.ndarray:
    return system.D @ theta_from_psi(psi) - system.c


def data_objective(psi, system: DesignSystem) -> float:
    res = residual(psi, system)
    return float(res @ res)


def rqm_objective(psi, system: DesignSystem, lam: float) -> float:
    """Data misfit plus ``lam`` times the squared distance of the
    reference-end CT ratio from ``1 + 0j``."""
    if lam < 0:
        raise InputError("lambda must be non-negative")
    v = _vals(psi)
    return data_objective(v, system) + lam * ((v[5] - 1.0) ** 2 + v[6] ** 2)
