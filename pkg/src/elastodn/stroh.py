# ruff: noqa: E741
"""Barnett-Lothe integrals, surface impedance and the fundamental solution.

For a reference direction ``l`` and an orthonormal pair (m0, n0) spanning
the plane orthogonal to it, the rotating frame is

    m(phi) =  m0 cos(phi) + n0 sin(phi)
    n(phi) = -m0 sin(phi) + n0 cos(phi)

and the integrals over phi in [0, 2 pi) are evaluated with the composite
trapezoid rule. The integrands are real-analytic and 2 pi-periodic, so the
rule converges geometrically in the number of nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularS2, ZeroPoint
from .tensor import ElasticityTensor, as_unit

DEFAULT_ORDER = 64
S2_COND_LIMIT = 1e12
FRAME_BRANCH_TOL = 1e-6


@dataclass(frozen=True)
class RotatingFrame:
    m0: np.ndarray
    n0: np.ndarray
    l: np.ndarray

    def at(self, phi):
        """Return (m_phi, n_phi) stacked along a leading axis for array ``phi``."""
        c = np.cos(phi)[:, None]
        s = np.sin(phi)[:, None]
        return self.m0 * c + self.n0 * s, -self.m0 * s + self.n0 * c


@dataclass(frozen=True)
class ImpedanceTensor:
    z: np.ndarray
    l: np.ndarray
    quadrature_order: int

    @property
    def hermitian_residual(self) -> float:
        return float(np.linalg.norm(self.z - self.z.conj().T) / np.linalg.norm(self.z))


@dataclass(frozen=True)
class FundamentalSolutionSample:
    x: np.ndarray
    gamma: np.ndarray


def _explicit_frame(l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # valid for l3 > 0 (so 1 - l1^2 > 0)
    s = np.sqrt(1.0 - l[0] ** 2)
    m0 = np.array([1.0 - l[0] ** 2, -l[0] * l[1], -l[0] * l[2]]) / s
    n0 = np.array([0.0, l[2], -l[1]]) / s
    return m0, n0


def rotating_frame(l) -> RotatingFrame:
    """Orthonormal (m0, n0) orthogonal to ``l``.

    Uses the explicit chart formulas when l3 > 1e-6; otherwise the largest
    component of ``l`` is cycled into slot 3 (sign-flipped to be positive),
    the frame is built there and mapped back.
    """
    l = as_unit(l, "l")
    if l[2] > FRAME_BRANCH_TOL:
        m0, n0 = _explicit_frame(l)
        return RotatingFrame(m0, n0, l)
    k = int(np.argmax(np.abs(l)))
    # cyclic permutation moving slot k to slot 2 keeps orientation
    perm = np.roll(np.arange(3), 2 - k)
    sign = 1.0 if l[perm[2]] > 0 else -1.0
    lp = sign * l[perm]
    m0p, n0p = _explicit_frame(lp)
    inv = np.argsort(perm)
    m0 = m0p[inv]
    n0 = sign * n0p[inv]
    return RotatingFrame(m0, n0, l)


def _check_order(order: int) -> int:
    order = int(order)
    if order < 8 or order % 2:
        raise ValueError(f"quadrature order must be even and >= 8, got {order}")
    return order


def barnett_lothe(
    C: ElasticityTensor, l, order: int = DEFAULT_ORDER, frame: RotatingFrame | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(S1, S2) by the trapezoid rule with ``order`` equispaced nodes."""
    order = _check_order(order)
    if frame is None:
        frame = rotating_frame(l)
    phi = 2.0 * np.pi * np.arange(order) / order
    m, n = frame.at(phi)
    # R_ik(m, n) = C_ijkl m_j n_l ; T_ik(n) = C_ijkl n_j n_l
    R = np.einsum("ijkl,qj,ql->qik", C.full, m, n)
    T = np.einsum("ijkl,qj,ql->qik", C.full, n, n)
    Tinv = np.linalg.inv(T)
    S1 = -np.mean(Tinv @ np.transpose(R, (0, 2, 1)), axis=0)
    S2 = np.mean(Tinv, axis=0)
    return S1, 0.5 * (S2 + S2.T)


def impedance(C: ElasticityTensor, l, order: int = DEFAULT_ORDER) -> ImpedanceTensor:
    """Z(l) = S2^-1 + i S2^-1 S1.

    Raises SingularS2 when cond(S2) exceeds 1e12 or S2 is not positive
    definite (then Re Z = S2^-1 is not either).
    """
    lu = as_unit(l, "l")
    S1, S2 = barnett_lothe(C, lu, order)
    if np.linalg.eigvalsh(S2)[0] <= 0.0:
        raise SingularS2(f"S2 is not positive definite at l = {lu}")
    if np.linalg.cond(S2) > S2_COND_LIMIT:
        raise SingularS2(f"cond(S2) = {np.linalg.cond(S2):.3e} at l = {lu}")
    S2inv = np.linalg.inv(S2)
    z = S2inv + 1j * (S2inv @ S1)
    return ImpedanceTensor(z, lu, order)


def impedance_batch(C: ElasticityTensor, directions, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Z(l) for a stack of unit directions, shape (N, 3, 3).

    Skips the per-direction conditioning check of :func:`impedance`; used by
    the least-squares fits where C is a trial iterate.
    """
    order = _check_order(order)
    L = np.atleast_2d(np.asarray(directions, dtype=float))
    frames = [rotating_frame(l) for l in L]
    m0 = np.array([f.m0 for f in frames])
    n0 = np.array([f.n0 for f in frames])
    phi = 2.0 * np.pi * np.arange(order) / order
    c, s = np.cos(phi)[None, :, None], np.sin(phi)[None, :, None]
    m = m0[:, None] * c + n0[:, None] * s
    n = -m0[:, None] * s + n0[:, None] * c
    R = np.einsum("ijkl,pqj,pql->pqik", C.full, m, n, optimize=True)
    T = np.einsum("ijkl,pqj,pql->pqik", C.full, n, n, optimize=True)
    Tinv = np.linalg.inv(T)
    S1 = -np.mean(Tinv @ np.swapaxes(R, -1, -2), axis=1)
    S2 = np.mean(Tinv, axis=1)
    S2 = 0.5 * (S2 + np.swapaxes(S2, -1, -2))
    S2inv = np.linalg.inv(S2)
    return S2inv + 1j * (S2inv @ S1)


def impedance_matrix(C: ElasticityTensor, l, order: int = DEFAULT_ORDER) -> np.ndarray:
    return impedance(C, l, order).z


def fundamental_solution(C: ElasticityTensor, x, order: int = DEFAULT_ORDER) -> FundamentalSolutionSample:
    """Gamma(x) = (4 pi |x|)^-1 (Re Z(x/|x|))^-1."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x)
    if r == 0.0:
        raise ZeroPoint("fundamental solution is singular at the origin")
    Z = impedance(C, x / r, order).z
    g = np.linalg.inv(Z.real) / (4.0 * np.pi * r)
    return FundamentalSolutionSample(x.copy(), 0.5 * (g + g.T))


def kelvin_solution(lam: float, mu: float, x) -> np.ndarray:
    """Closed-form isotropic fundamental solution (Kelvin)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x)
    xh = x / r
    nu = lam / (2.0 * (lam + mu))
    return ((3.0 - 4.0 * nu) * np.eye(3) + np.outer(xh, xh)) / (16.0 * np.pi * mu * (1.0 - nu) * r)


def impedance_rows(samples) -> list[list[float]]:
    """Rows ``l1,l2,l3, Re z (6 upper entries), Im z (3 upper off-diagonal)``."""
    iu = np.triu_indices(3)
    iu1 = np.triu_indices(3, 1)
    rows = []
    for s in samples:
        z = s.z
        rows.append([*map(float, s.l), *map(float, z.real[iu]), *map(float, z.imag[iu1])])
    return rows


IMPEDANCE_COLUMNS = [
    "l1", "l2", "l3",
    "re_z11", "re_z12", "re_z13", "re_z22", "re_z23", "re_z33",
    "im_z12", "im_z13", "im_z23",
]


def z_from_row(re6, im3) -> np.ndarray:
    iu = np.triu_indices(3)
    iu1 = np.triu_indices(3, 1)
    re = np.zeros((3, 3))
    re[iu] = re6
    re = re + np.triu(re, 1).T
    im = np.zeros((3, 3))
    im[iu1] = im3
    im = im - im.T
    return re + 1j * im
