# ruff: noqa: E741
"""Constant anisotropic elasticity tensors.

Storage is a plain 6x6 Voigt matrix with index pairing
(11, 22, 33, 23, 13, 12) -> (0, 1, 2, 3, 4, 5) and *no* engineering factors,
so ``voigt[I, J] == C[i, j, k, l]``. Quadratic forms on symmetric matrices
are evaluated in the Mandel basis (shear rows/columns scaled by sqrt(2)),
which is the isometry between symmetric 3x3 matrices with the Frobenius
product and R^6 with the Euclidean one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AsymmetricInput, NotARotation, NotStronglyConvex, NotUnit, ZeroDirection

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

# (i, j) -> Voigt index
VOIGT_INDEX = np.array([[0, 5, 4], [5, 1, 3], [4, 3, 2]])

# multiply shear rows/cols by sqrt(2) to go Voigt -> Mandel
MANDEL_SCALE = np.array([1.0, 1.0, 1.0, np.sqrt(2.0), np.sqrt(2.0), np.sqrt(2.0)])

SYMMETRY_TOL = 1e-12
UNIT_TOL = 1e-12


def voigt_to_full(voigt: np.ndarray) -> np.ndarray:
    """Expand a 6x6 Voigt matrix to the rank-4 tensor ``C[i, j, k, l]``."""
    return np.asarray(voigt)[VOIGT_INDEX[:, :, None, None], VOIGT_INDEX[None, None, :, :]]


def full_to_voigt(full: np.ndarray) -> np.ndarray:
    idx = np.array(VOIGT_PAIRS)
    return np.asarray(full)[idx[:, None, 0], idx[:, None, 1], idx[None, :, 0], idx[None, :, 1]]


def mandel(voigt: np.ndarray) -> np.ndarray:
    return MANDEL_SCALE[:, None] * np.asarray(voigt) * MANDEL_SCALE[None, :]


def from_mandel(m: np.ndarray) -> np.ndarray:
    return np.asarray(m) / (MANDEL_SCALE[:, None] * MANDEL_SCALE[None, :])


@dataclass(frozen=True, eq=False)
class ElasticityTensor:
    """Validated constant elasticity tensor.

    Construct through :func:`make_elasticity_tensor` (or the generators);
    the constructor itself trusts its input.
    """

    voigt: np.ndarray
    _full: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.voigt, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "voigt", v)
        f = voigt_to_full(v)
        f.setflags(write=False)
        object.__setattr__(self, "_full", f)

    @property
    def full(self) -> np.ndarray:
        """Rank-4 view ``C[i, j, k, l]``."""
        return self._full

    @property
    def mandel(self) -> np.ndarray:
        return mandel(self.voigt)

    @property
    def lambda_min(self) -> float:
        return strong_convexity_constant(self)

    def params(self) -> np.ndarray:
        """The 21 independent constants (upper triangle, row-major)."""
        return self.voigt[np.triu_indices(6)].copy()

    def __eq__(self, other):
        if not isinstance(other, ElasticityTensor):
            return NotImplemented
        return bool(np.array_equal(self.voigt, other.voigt))

    def __hash__(self):
        return hash(self.voigt.tobytes())

    def to_json(self) -> dict:
        return {"voigt": self.voigt.tolist()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def make_elasticity_tensor(voigt) -> ElasticityTensor:
    """Validate a 6x6 Voigt matrix and wrap it.

    Raises
    ------
    AsymmetricInput
        if any off-diagonal pair differs by more than 1e-12.
    NotStronglyConvex
        if the quadratic form on symmetric matrices is not positive definite.
    """
    v = np.asarray(voigt, dtype=float)
    if v.shape != (6, 6):
        raise ValueError(f"Voigt matrix must be 6x6, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("Voigt matrix has non-finite entries")
    asym = np.max(np.abs(v - v.T))
    if asym > SYMMETRY_TOL:
        raise AsymmetricInput(f"Voigt matrix off-symmetry {asym:.3e} exceeds {SYMMETRY_TOL:g}")
    v = 0.5 * (v + v.T)
    lam = float(np.linalg.eigvalsh(mandel(v))[0])
    if lam <= 0.0:
        raise NotStronglyConvex(f"strong convexity constant {lam:.6g} <= 0")
    return ElasticityTensor(v)


def params_to_tensor(p: np.ndarray) -> np.ndarray:
    """Inverse of :meth:`ElasticityTensor.params`; returns a raw Voigt matrix."""
    v = np.zeros((6, 6))
    v[np.triu_indices(6)] = p
    return v + np.triu(v, 1).T


def load_tensor(path) -> ElasticityTensor:
    data = json.loads(Path(path).read_text())
    return make_elasticity_tensor(data["voigt"])


def strong_convexity_constant(C: ElasticityTensor) -> float:
    """Largest lambda with eps:(C::eps) >= lambda eps:eps for all symmetric eps."""
    return float(np.linalg.eigvalsh(C.mandel)[0])


def as_unit(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise NotUnit(f"{name} has norm {np.linalg.norm(v):.16g}")
    return v


def rt_matrices(C: ElasticityTensor, m, n) -> tuple[np.ndarray, np.ndarray]:
    """R_ik = C_ijkl m_j n_l and T_ik = C_ijkl n_j n_l."""
    m = as_unit(m, "m")
    n = as_unit(n, "n")
    R = np.einsum("ijkl,j,l->ik", C.full, m, n)
    T = np.einsum("ijkl,j,l->ik", C.full, n, n)
    return R, T


def acoustic_tensor(C: ElasticityTensor, xi) -> np.ndarray:
    """Q_il(xi) = sum_jk C_ijkl xi_j xi_k (equal to T(n) for unit xi)."""
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        raise ZeroDirection("acoustic tensor of the zero vector")
    return np.einsum("ijkl,j,k->il", C.full, xi, xi)


def check_rotation(Q, tol: float = 1e-12) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (3, 3):
        raise NotARotation(f"expected 3x3, got {Q.shape}")
    if np.max(np.abs(Q.T @ Q - np.eye(3))) > tol or np.linalg.det(Q) <= 0:
        raise NotARotation("matrix is not a proper rotation")
    return Q


def rotate_tensor(C: ElasticityTensor, Q) -> ElasticityTensor:
    """C'_ijkl = Q_ia Q_jb Q_kc Q_ld C_abcd."""
    Q = check_rotation(Q)
    full = np.einsum("ia,jb,kc,ld,abcd->ijkl", Q, Q, Q, Q, C.full, optimize=True)
    v = full_to_voigt(full)
    return ElasticityTensor(0.5 * (v + v.T))


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def rotation_to(axis) -> np.ndarray:
    """A rotation taking e3 onto ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    e3 = np.array([0.0, 0.0, 1.0])
    c = float(a @ e3)
    w = np.cross(e3, a)
    s = np.linalg.norm(w)
    if s < 1e-14:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    return rotation_about(w, np.arctan2(s, c))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# -- generators ---------------------------------------------------------------

def isotropic(lam: float, mu: float) -> ElasticityTensor:
    v = np.zeros((6, 6))
    v[:3, :3] = lam
    v[[0, 1, 2], [0, 1, 2]] = lam + 2 * mu
    v[[3, 4, 5], [3, 4, 5]] = mu
    return make_elasticity_tensor(v)


def cubic(c11: float, c12: float, c44: float) -> ElasticityTensor:
    v = np.zeros((6, 6))
    v[:3, :3] = c12
    v[[0, 1, 2], [0, 1, 2]] = c11
    v[[3, 4, 5], [3, 4, 5]] = c44
    return make_elasticity_tensor(v)


def transversely_isotropic(c11, c33, c44, c66, c13, axis=(0.0, 0.0, 1.0)) -> ElasticityTensor:
    """Hexagonal symmetry about ``axis`` (c12 = c11 - 2 c66 in the axis frame)."""
    v = np.zeros((6, 6))
    v[0, 0] = v[1, 1] = c11
    v[2, 2] = c33
    v[0, 1] = v[1, 0] = c11 - 2 * c66
    v[0, 2] = v[2, 0] = v[1, 2] = v[2, 1] = c13
    v[3, 3] = v[4, 4] = c44
    v[5, 5] = c66
    C = make_elasticity_tensor(v)
    Q = rotation_to(axis)
    if np.array_equal(Q, np.eye(3)):
        return C
    return make_elasticity_tensor(rotate_tensor(C, Q).voigt)


def random_tensor(
    rng: np.random.Generator,
    spread: float = 0.25,
    floor: float = 0.6,
    base: ElasticityTensor | None = None,
) -> ElasticityTensor:
    """General 21-constant tensor: ``base`` plus symmetric Gaussian noise,
    projected onto {Mandel eigenvalues >= floor}."""
    if base is None:
        base = isotropic(1.0, 1.0)
    g = rng.standard_normal((6, 6))
    M = base.mandel + spread * 0.5 * (g + g.T)
    w, V = np.linalg.eigh(M)
    M = (V * np.maximum(w, floor)) @ V.T
    v = from_mandel(0.5 * (M + M.T))
    return make_elasticity_tensor(0.5 * (v + v.T))


def relative_error(A: ElasticityTensor, B: ElasticityTensor) -> float:
    """Frobenius relative difference of the Voigt matrices, ||A - B|| / ||B||."""
    return float(np.linalg.norm(A.voigt - B.voigt) / np.linalg.norm(B.voigt))
