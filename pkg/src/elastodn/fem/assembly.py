"""P1 stiffness assembly for piecewise-constant anisotropic tensors.

Global dof of vertex ``v``, component ``c`` is ``3 v + c``. Strains are
packed in engineering Voigt order (e11, e22, e33, 2e23, 2e13, 2e12); with
the factor-free Voigt storage of :mod:`elastodn.tensor` the stress is then
simply ``voigt @ strain`` and ``strain . voigt . strain = eps:(C::eps)``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import InvertedElement
from .mesh import SubdomainMap, TetMesh


def barycentric_gradients(vertices: np.ndarray, tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (m, 4, 3) of the P1 hat functions and tet volumes (m,)."""
    p = vertices[tets]
    J = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))  # columns are edge vectors
    det = np.linalg.det(J)
    if np.any(det <= 0):
        bad = int(np.flatnonzero(det <= 0)[0])
        raise InvertedElement(f"tet {bad} is inverted or degenerate")
    Jinv = np.linalg.inv(J)
    g = np.empty((len(tets), 4, 3))
    g[:, 1:] = Jinv
    g[:, 0] = -Jinv.sum(axis=1)
    return g, det / 6.0


def strain_matrices(grads: np.ndarray) -> np.ndarray:
    """Engineering-strain B matrices, shape (m, 6, 12)."""
    m = len(grads)
    B = np.zeros((m, 6, 12))
    for a in range(4):
        gx, gy, gz = grads[:, a, 0], grads[:, a, 1], grads[:, a, 2]
        c = 3 * a
        B[:, 0, c] = gx
        B[:, 1, c + 1] = gy
        B[:, 2, c + 2] = gz
        B[:, 3, c + 1] = gz
        B[:, 3, c + 2] = gy
        B[:, 4, c] = gz
        B[:, 4, c + 2] = gx
        B[:, 5, c] = gy
        B[:, 5, c + 1] = gx
    return B


def tet_dofs(tets: np.ndarray) -> np.ndarray:
    return (3 * tets[:, :, None] + np.arange(3)).reshape(len(tets), 12)


def _scatter(tets: np.ndarray, Ke: np.ndarray, ndof: int) -> sp.csr_matrix:
    d = tet_dofs(tets)
    rows = np.repeat(d, 12, axis=1).ravel()
    cols = np.tile(d, (1, 12)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()
    K.sum_duplicates()
    return K


def element_voigt(smap: SubdomainMap, tet_ids: np.ndarray) -> np.ndarray:
    labels = smap.tet_labels[tet_ids]
    out = np.empty((len(tet_ids), 6, 6))
    for lab in np.unique(labels):
        out[labels == lab] = smap.materials[int(lab)].voigt
    return out


def assemble_stiffness(mesh: TetMesh, smap: SubdomainMap, tet_ids=None) -> sp.csr_matrix:
    """Global stiffness of the tets ``tet_ids`` (default: all), size 3 n_vertices."""
    ids = np.arange(len(mesh.tets)) if tet_ids is None else np.asarray(tet_ids)
    t = mesh.tets[ids]
    g, vol = barycentric_gradients(mesh.vertices, t)
    B = strain_matrices(g)
    V = element_voigt(smap, ids)
    Ke = vol[:, None, None] * np.einsum("mai,mab,mbj->mij", B, V, B, optimize=True)
    K = _scatter(t, Ke, 3 * mesh.n_vertices)
    return 0.5 * (K + K.T)


def assemble_parametric(mesh: TetMesh, tet_ids) -> list[sp.csr_matrix]:
    """Stiffness pieces K_p for the 21 Voigt parameters (upper triangle order),
    so that the stiffness of ``tet_ids`` with tensor p is sum_p p_i K_i."""
    t = mesh.tets[np.asarray(tet_ids)]
    g, vol = barycentric_gradients(mesh.vertices, t)
    B = strain_matrices(g)
    out = []
    for a, b in zip(*np.triu_indices(6)):
        E = np.zeros((6, 6))
        E[a, b] = E[b, a] = 1.0
        Ke = vol[:, None, None] * np.einsum("mai,ab,mbj->mij", B, E, B, optimize=True)
        out.append(_scatter(t, Ke, 3 * mesh.n_vertices))
    return out


def element_strains(mesh: TetMesh, u: np.ndarray, tet_ids=None) -> np.ndarray:
    """Engineering strains (m, 6) of a P1 field ``u`` (n_vertices, 3)."""
    ids = np.arange(len(mesh.tets)) if tet_ids is None else np.asarray(tet_ids)
    t = mesh.tets[ids]
    g, _ = barycentric_gradients(mesh.vertices, t)
    B = strain_matrices(g)
    ue = np.asarray(u)[t].reshape(len(t), 12)
    return np.einsum("mij,mj->mi", B, ue)


def element_stresses(mesh: TetMesh, smap: SubdomainMap, u: np.ndarray, tet_ids=None) -> np.ndarray:
    """Stress tensors (m, 3, 3) per tet."""
    ids = np.arange(len(mesh.tets)) if tet_ids is None else np.asarray(tet_ids)
    s = np.einsum("mij,mj->mi", element_voigt(smap, ids), element_strains(mesh, u, ids))
    out = np.empty((len(ids), 3, 3))
    out[:, 0, 0], out[:, 1, 1], out[:, 2, 2] = s[:, 0], s[:, 1], s[:, 2]
    out[:, 1, 2] = out[:, 2, 1] = s[:, 3]
    out[:, 0, 2] = out[:, 2, 0] = s[:, 4]
    out[:, 0, 1] = out[:, 1, 0] = s[:, 5]
    return out


def energy(K: sp.spmatrix, u: np.ndarray) -> float:
    x = np.asarray(u).reshape(-1)
    return float(x @ (K @ x))


def surface_mass(vertices: np.ndarray, faces: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Dense P1 surface mass matrix on vertex list ``ids``, expanded to 3 components."""
    pos = -np.ones(len(vertices), dtype=np.int64)
    pos[ids] = np.arange(len(ids))
    p = vertices[faces]
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M = np.zeros((len(ids), len(ids)))
    for f, a in zip(faces, area):
        q = pos[f]
        ok = q >= 0
        qi = q[ok]
        M[np.ix_(qi, qi)] += a * local[np.ix_(ok, ok)]
    return np.kron(M, np.eye(3))


def rigid_motions(vertices: np.ndarray) -> np.ndarray:
    """(3 n, 6) basis of translations and infinitesimal rotations."""
    n = len(vertices)
    R = np.zeros((n, 3, 6))
    for c in range(3):
        R[:, c, c] = 1.0
    x, y, z = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    R[:, 1, 3], R[:, 2, 3] = -z, y
    R[:, 0, 4], R[:, 2, 4] = z, -x
    R[:, 0, 5], R[:, 1, 5] = -y, x
    return R.reshape(3 * n, 6)
