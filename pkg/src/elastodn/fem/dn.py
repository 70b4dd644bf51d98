"""Dirichlet solves, localized DN matrices and boundary tractions.

A DN matrix here is the Schur complement of the stiffness matrix onto the
trace dofs of a patch (all other boundary dofs clamped to zero). It maps
nodal displacements to *nodal loads*, so

    <Lambda w, phi> = phi . (matrix @ w)

is the energy pairing. Nodal traction values are ``M^-1 (matrix @ w)`` with
the patch mass matrix ``M`` stored alongside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import EmptyPatch, SolverFailure
from .assembly import assemble_stiffness, element_stresses, surface_mass
from .mesh import SubdomainMap, SurfacePatch, TetMesh, oriented_faces, region_boundary

RESIDUAL_TOL = 1e-10


def vertex_dofs(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return (3 * v[:, None] + np.arange(3)).ravel()


DENSE_FACTOR_LIMIT = 12000


class Factorized:
    """Factorization of a symmetric positive definite stiffness block.

    Blocks up to ``DENSE_FACTOR_LIMIT`` rows use a dense Cholesky factor
    (fast multi-rhs solves); larger ones a sparse LU with one step of
    iterative refinement. Every solve checks its residual.
    """

    def __init__(self, A: sp.spmatrix):
        self.A = sp.csc_matrix(A)
        self.chol = None
        self.lu = None
        if self.A.shape[0] <= DENSE_FACTOR_LIMIT:
            try:
                self.chol = sla.cho_factor(self.A.toarray(), lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                self.chol = None
        if self.chol is None:
            try:
                self.lu = spla.splu(self.A)
            except RuntimeError as exc:
                raise SolverFailure(str(exc)) from exc

    def _raw(self, b):
        if self.chol is not None:
            return sla.cho_solve(self.chol, b, check_finite=False)
        return self.lu.solve(b)

    def solve(self, b: np.ndarray, tol: float = RESIDUAL_TOL) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = self._raw(b)
        r = b - self.A @ x
        if self.lu is not None:
            x = x + self._raw(r)
            r = b - self.A @ x
        bn = np.linalg.norm(b)
        if bn > 0 and np.linalg.norm(r) > tol * bn:
            raise SolverFailure(f"relative residual {np.linalg.norm(r) / bn:.2e} > {tol:g}")
        return x


DENSE_SCHUR_LIMIT = 12000


def schur_complement(K: sp.spmatrix, trace_dofs, interior_dofs, with_extension: bool = False):
    """S = K_TT - K_TI K_II^-1 K_IT; optionally also E = -K_II^-1 K_IT.

    Moderate interior blocks go through a dense Cholesky factor (S = K_TT -
    W^T W with W = L^-1 K_IT), which is much faster than a multi-rhs sparse
    solve here; larger ones, or a failed factorization, use sparse LU.
    """
    K = sp.csr_matrix(K)
    T = np.asarray(trace_dofs)
    I = np.asarray(interior_dofs)
    KTT = K[T][:, T].toarray()
    if len(I) == 0:
        return (KTT, np.zeros((0, len(T)))) if with_extension else KTT
    KII = K[I][:, I]
    KIT = K[I][:, T].toarray()
    if len(I) <= DENSE_SCHUR_LIMIT:
        try:
            L = sla.cholesky(KII.toarray(), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            L = None
        if L is not None:
            W = sla.solve_triangular(L, KIT, lower=True, check_finite=False)
            S = KTT - W.T @ W
            S = 0.5 * (S + S.T)
            if with_extension:
                E = -sla.solve_triangular(L, W, lower=True, trans="T", check_finite=False)
                return S, E
            return S
    E = -Factorized(KII).solve(KIT)
    S = KTT + K[T][:, I] @ E
    return (S, E) if with_extension else S


@dataclass(frozen=True, eq=False)
class DnMapMatrix:
    """Dense DN operator on the trace coordinates of ``vertex_ids``."""

    matrix: np.ndarray
    vertex_ids: np.ndarray
    mass: np.ndarray
    patch_id: str = "patch"
    mesh_fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def ndof(self) -> int:
        return self.matrix.shape[0]

    @property
    def dofs(self) -> np.ndarray:
        return vertex_dofs(self.vertex_ids)

    def symmetry_defect(self) -> float:
        A = self.matrix
        return float(np.linalg.norm(A - A.T) / np.linalg.norm(A))

    def pairing(self, w, phi) -> float:
        return float(np.ravel(phi) @ (self.matrix @ np.ravel(w)))

    def traction_values(self, w) -> np.ndarray:
        return np.linalg.solve(self.mass, self.matrix @ np.ravel(w))

    def symmetrized(self) -> "DnMapMatrix":
        return DnMapMatrix(0.5 * (self.matrix + self.matrix.T), self.vertex_ids, self.mass,
                           self.patch_id, self.mesh_fingerprint, dict(self.meta))

    def restrict(self, vertex_subset, patch_id: str | None = None) -> "DnMapMatrix":
        """Keep only the rows/cols of ``vertex_subset`` (data zero elsewhere)."""
        pos = {int(v): i for i, v in enumerate(self.vertex_ids)}
        idx = np.array([pos[int(v)] for v in vertex_subset], dtype=np.int64)
        d = vertex_dofs(idx)
        return DnMapMatrix(self.matrix[np.ix_(d, d)], np.asarray(vertex_subset), self.mass[np.ix_(d, d)],
                           patch_id or self.patch_id, self.mesh_fingerprint, dict(self.meta))

    def permuted(self, order) -> "DnMapMatrix":
        return self.restrict(np.asarray(self.vertex_ids)[np.asarray(order)])

    def relative_error(self, reference: "DnMapMatrix") -> float:
        """||A - B||_F / ||B||_F after aligning vertex order."""
        other = self.restrict(reference.vertex_ids)
        return float(np.linalg.norm(other.matrix - reference.matrix) / np.linalg.norm(reference.matrix))

    def save(self, prefix) -> Path:
        """Binary column-major float64 matrix + mass, and a JSON sidecar."""
        prefix = Path(prefix)
        mat = prefix.with_suffix(".dn.bin")
        mass = prefix.with_suffix(".mass.bin")
        side = prefix.with_suffix(".dn.json")
        np.asfortranarray(self.matrix).ravel(order="F").astype("<f8").tofile(mat)
        np.asfortranarray(self.mass).ravel(order="F").astype("<f8").tofile(mass)
        side.write_text(json.dumps({
            "rows": int(self.matrix.shape[0]),
            "cols": int(self.matrix.shape[1]),
            "dtype": "float64-le",
            "order": "column-major",
            "dofs_per_vertex": 3,
            "matrix_file": mat.name,
            "mass_file": mass.name,
            "patch_id": self.patch_id,
            "patch_vertex_ids": (np.asarray(self.vertex_ids) + 1).tolist(),
            "mesh_fingerprint": self.mesh_fingerprint,
            "meta": self.meta,
        }, indent=1))
        return side


def load_dn(sidecar) -> DnMapMatrix:
    sidecar = Path(sidecar)
    info = json.loads(sidecar.read_text())
    shape = (info["rows"], info["cols"])
    mat = np.fromfile(sidecar.parent / info["matrix_file"], dtype="<f8").reshape(shape, order="F")
    mass = np.fromfile(sidecar.parent / info["mass_file"], dtype="<f8").reshape(shape, order="F")
    return DnMapMatrix(mat, np.asarray(info["patch_vertex_ids"], dtype=np.int64) - 1, mass,
                       info["patch_id"], info["mesh_fingerprint"], info.get("meta", {}))


@dataclass(frozen=True)
class DofSplit:
    """Vertex partition of a region for a localized Dirichlet problem."""

    trace: np.ndarray      # vertices carrying data
    clamped: np.ndarray    # boundary vertices held at zero
    interior: np.ndarray   # free vertices


def region_split(mesh: TetMesh, patch: SurfacePatch, tet_ids=None, closed_vertices=None) -> DofSplit:
    """Partition the vertices of the region ``tet_ids`` (default: the whole mesh).

    Trace vertices are those interior to ``patch`` relative to the region
    boundary; remaining boundary vertices are clamped. ``closed_vertices``
    forces extra vertices out of the trace set.
    """
    if len(patch.faces) == 0:
        raise EmptyPatch(f"patch {patch.name!r} has no faces")
    if tet_ids is None:
        verts = np.arange(mesh.n_vertices)
        bf = mesh.boundary_faces
    else:
        verts = np.unique(mesh.tets[np.asarray(tet_ids)])
        bf = region_boundary(mesh, tet_ids)[:, :3]
    bverts = np.unique(bf)
    in_patch = set(map(tuple, np.sort(patch.faces, axis=1).tolist()))
    outside = [f for f in np.sort(bf, axis=1).tolist() if tuple(f) not in in_patch]
    excluded = np.unique(np.array(outside, dtype=np.int64)) if outside else np.zeros(0, np.int64)
    trace = np.setdiff1d(np.intersect1d(patch.patch_vertices, bverts), excluded)
    if closed_vertices is not None:
        trace = np.setdiff1d(trace, closed_vertices)
    if len(trace) == 0:
        raise EmptyPatch(f"patch {patch.name!r} has no interior vertices")
    clamped = np.setdiff1d(bverts, trace)
    interior = np.setdiff1d(verts, bverts)
    return DofSplit(trace, clamped, interior)


def dn_from_stiffness(K: sp.spmatrix, mesh: TetMesh, split: DofSplit, faces: np.ndarray,
                      patch_id: str, with_extension: bool = False):
    T = vertex_dofs(split.trace)
    I = vertex_dofs(split.interior)
    out = schur_complement(K, T, I, with_extension)
    S, E = out if with_extension else (out, None)
    M = surface_mass(mesh.vertices, faces, split.trace)
    dn = DnMapMatrix(S, split.trace, M, patch_id, mesh.fingerprint)
    return (dn, E) if with_extension else dn


def local_dn_matrix(mesh: TetMesh, smap: SubdomainMap, patch: SurfacePatch, tet_ids=None,
                    K: sp.spmatrix | None = None) -> DnMapMatrix:
    """DN matrix of the region ``tet_ids`` (default: whole body) localized to ``patch``."""
    split = region_split(mesh, patch, tet_ids)
    if K is None:
        K = assemble_stiffness(mesh, smap, tet_ids)
    return dn_from_stiffness(K, mesh, split, patch.faces, patch.name)


def solve_dirichlet(mesh: TetMesh, smap: SubdomainMap, data, patch: SurfacePatch | None = None,
                    K: sp.spmatrix | None = None, tet_ids=None) -> np.ndarray:
    """Solve L_C u = 0 with u = data on the patch trace vertices, 0 on the rest
    of the boundary. ``data`` is an (n_vertices, 3) array."""
    data = np.asarray(data, dtype=float).reshape(mesh.n_vertices, 3)
    if patch is None:
        from .mesh import boundary_patch
        patch = boundary_patch(mesh)
    split = region_split(mesh, patch, tet_ids)
    if np.any(data[split.clamped] != 0.0):
        raise ValueError("Dirichlet data must vanish on boundary vertices outside the patch")
    if K is None:
        K = assemble_stiffness(mesh, smap, tet_ids)
    K = sp.csr_matrix(K)
    u = np.zeros((mesh.n_vertices, 3))
    u[split.trace] = data[split.trace]
    I = vertex_dofs(split.interior)
    if len(I):
        T = vertex_dofs(split.trace)
        rhs = -(K[I][:, T] @ u.reshape(-1)[T])
        u.reshape(-1)[I] = Factorized(K[I][:, I]).solve(rhs)
    return u


def _face_owners(mesh: TetMesh, faces: np.ndarray, tet_ids=None) -> np.ndarray:
    of = oriented_faces(mesh.vertices, mesh.tets, tet_ids)
    lookup = {tuple(k): int(o) for k, o in zip(np.sort(of[:, :3], axis=1).tolist(), of[:, 3])}
    return np.array([lookup[tuple(k)] for k in np.sort(faces, axis=1).tolist()], dtype=np.int64)


def traction(mesh: TetMesh, smap: SubdomainMap, u, patch: SurfacePatch, K: sp.spmatrix | None = None,
             tet_ids=None) -> np.ndarray:
    """Piecewise-constant traction (k, 3) on the patch faces.

    Starts from the element stress of the owning tet, ``sigma n``, and adds
    the minimum-norm correction making the face tractions reproduce the
    consistent nodal loads ``K u`` at the patch trace vertices. For linear
    fields the correction vanishes.
    """
    u = np.asarray(u, dtype=float).reshape(mesh.n_vertices, 3)
    owners = _face_owners(mesh, patch.faces, tet_ids)
    sig = element_stresses(mesh, smap, u, owners)
    t = np.einsum("fij,fj->fi", sig, patch.normals)
    split = region_split(mesh, patch, tet_ids)
    if K is None:
        K = assemble_stiffness(mesh, smap, tet_ids)
    r = (K @ u.reshape(-1)).reshape(-1, 3)[split.trace]
    pos = -np.ones(mesh.n_vertices, dtype=np.int64)
    pos[split.trace] = np.arange(len(split.trace))
    rows, cols, vals = [], [], []
    for fi, (f, a) in enumerate(zip(patch.faces, patch.areas)):
        for v in f:
            if pos[v] >= 0:
                rows.append(pos[v])
                cols.append(fi)
                vals.append(a / 3.0)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(len(split.trace), len(patch.faces)))
    # P P^T can be singular (3-colourable surface triangulations), so use lstsq
    corr, *_ = np.linalg.lstsq(P.toarray(), r - P @ t, rcond=None)
    return t + corr


def nodal_traction(mesh: TetMesh, smap: SubdomainMap, u, patch: SurfacePatch, K: sp.spmatrix | None = None,
                   tet_ids=None) -> tuple[np.ndarray, np.ndarray]:
    """P1 traction values ``M^-1 (K u)`` at the patch trace vertices.

    Returns (trace vertex ids, (n, 3) values); paired with the trace data
    through the patch mass matrix this reproduces the DN energy exactly.
    """
    u = np.asarray(u, dtype=float).reshape(mesh.n_vertices, 3)
    split = region_split(mesh, patch, tet_ids)
    if K is None:
        K = assemble_stiffness(mesh, smap, tet_ids)
    r = (K @ u.reshape(-1))[vertex_dofs(split.trace)]
    M = surface_mass(mesh.vertices, patch.faces, split.trace)
    return split.trace, np.linalg.solve(M, r).reshape(-1, 3)
