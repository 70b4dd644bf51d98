"""Inner extension of a localized DN map across a known layer.

Setting: Omega_1 = D_1 u Omega_2 with the layer tensor C0 known on D_1.
Given the DN matrix of Omega_1 on a patch Gamma_1 of its boundary, compute
the DN matrix of Omega_2 on Sigma_2 = dOmega_2 \\ dOmega_1 through

    Lambda^{Sigma_2} = Lambda^{Sigma_2,+} + (S^{Sigma_2})^-1

where S is the single layer operator (Green operator of Omega_1, zero
Dirichlet data on dOmega_1, restricted to Sigma_2) and Lambda^{Sigma_2,+}
is the (negative) DN map of the layer seen from Sigma_2.

Discrete conventions: DN matrices map nodal displacements to nodal loads,
G0 = K0^-1 on the free dofs of Omega_1, and the discrete trace load T_f is
the injection of a nodal load vector f at the Sigma_2 vertices. All
identities below are then exact matrix identities except for the Runge
step, whose residual is reported.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ApproximationStalled, IllConditionedS, MeshError, SymmetrizationDefectLarge
from .fem.assembly import assemble_stiffness, surface_mass
from .fem.dn import DnMapMatrix, Factorized, region_split, schur_complement, vertex_dofs
from .fem.mesh import SubdomainMap, SurfacePatch, TetMesh, region_boundary
from .tensor import ElasticityTensor

RUNGE_SVD_TOL = 1e-12
RUNGE_TOL = 1e-6
STRIP_REGULARIZATION = 1e-8
DEFECT_LIMIT = 0.05


def _face_keys(faces) -> set:
    return set(map(tuple, np.sort(np.asarray(faces)[:, :3], axis=1).tolist()))


@dataclass(frozen=True, eq=False)
class LayerGeometry:
    """One stripping step.

    ``layer_tets`` is D_1, ``inner_tets`` is Omega_2 and their union is
    Omega_1. ``gamma1`` is a patch of dOmega_1 carrying the data,
    ``gamma2`` an optional sub-patch of Sigma_2 for the final restriction.
    ``c0`` is the layer tensor; it is also used as the reference tensor
    inside Omega_2.
    """

    mesh: TetMesh
    layer_tets: np.ndarray
    inner_tets: np.ndarray
    gamma1: SurfacePatch
    c0: ElasticityTensor
    gamma2: SurfacePatch | None = None
    name: str = "layer"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layer_tets", np.asarray(self.layer_tets, dtype=np.int64))
        object.__setattr__(self, "inner_tets", np.asarray(self.inner_tets, dtype=np.int64))
        if len(self.layer_tets) == 0 or len(self.inner_tets) == 0:
            raise MeshError("layer and inner region must both be nonempty")
        if np.intersect1d(self.layer_tets, self.inner_tets).size:
            raise MeshError("layer and inner region overlap")
        adj = self.mesh.tet_adjacency(self.layer_tets)
        if connected_components(adj, directed=False)[0] != 1:
            raise MeshError("layer D_1 is not connected")
        if len(self.sigma2.faces) == 0:
            raise MeshError("Sigma_2 is empty: the inner region does not touch the layer")

    @classmethod
    def from_labels(cls, mesh: TetMesh, labels, layer_labels, inner_labels, gamma1: SurfacePatch,
                    c0: ElasticityTensor, gamma2: SurfacePatch | None = None, name: str = "layer"):
        labels = np.asarray(labels)
        layer = np.flatnonzero(np.isin(labels, list(layer_labels)))
        inner = np.flatnonzero(np.isin(labels, list(inner_labels)))
        return cls(mesh, layer, inner, gamma1, c0, gamma2, name)

    # -- regions ---------------------------------------------------------------

    @cached_property
    def omega1_tets(self) -> np.ndarray:
        return np.sort(np.concatenate([self.layer_tets, self.inner_tets]))

    @cached_property
    def omega1_boundary(self) -> np.ndarray:
        return region_boundary(self.mesh, self.omega1_tets)[:, :3]

    @cached_property
    def sigma2(self) -> SurfacePatch:
        """dOmega_2 minus dOmega_1, normals pointing out of Omega_2."""
        rb = region_boundary(self.mesh, self.inner_tets)[:, :3]
        outer = _face_keys(self.omega1_boundary)
        keep = np.array([tuple(f) not in outer for f in np.sort(rb, axis=1).tolist()], dtype=bool)
        return SurfacePatch(self.mesh.vertices, rb[keep] if len(rb) else rb, surface=rb, name=f"{self.name}:sigma2")

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.omega1_boundary)

    @cached_property
    def gamma1_vertices(self) -> np.ndarray:
        return region_split(self.mesh, self.gamma1, self.omega1_tets).trace

    @cached_property
    def sigma2_vertices(self) -> np.ndarray:
        """Sigma_2 vertices off dOmega_1 (the trace coordinates of S and Lambda^{Sigma_2})."""
        return np.setdiff1d(self.sigma2.patch_vertices, self.boundary_vertices)

    @cached_property
    def gamma2_vertices(self) -> np.ndarray:
        if self.gamma2 is None:
            return self.sigma2_vertices
        return np.intersect1d(region_split(self.mesh, self.gamma2, self.inner_tets).trace, self.sigma2_vertices)

    @cached_property
    def free_vertices(self) -> np.ndarray:
        return np.setdiff1d(np.unique(self.mesh.tets[self.omega1_tets]), self.boundary_vertices)

    @cached_property
    def layer_interior_vertices(self) -> np.ndarray:
        """Free vertices of Omega_1 outside the closed inner region."""
        return np.setdiff1d(self.free_vertices, np.unique(self.mesh.tets[self.inner_tets]))

    def _free_pos(self, verts) -> np.ndarray:
        pos = -np.ones(self.mesh.n_vertices, dtype=np.int64)
        pos[self.free_vertices] = np.arange(len(self.free_vertices))
        p = pos[np.asarray(verts)]
        if np.any(p < 0):
            raise MeshError("vertex is not a free vertex of Omega_1")
        return vertex_dofs(p)

    # -- operators ---------------------------------------------------------------

    @cached_property
    def reference_map(self) -> SubdomainMap:
        return SubdomainMap(np.zeros(len(self.mesh.tets), dtype=np.int64), {0: self.c0})

    @cached_property
    def k0(self) -> sp.csr_matrix:
        """Stiffness of Omega_1 with C0 everywhere."""
        return sp.csr_matrix(assemble_stiffness(self.mesh, self.reference_map, self.omega1_tets))

    @cached_property
    def _k0_blocks(self):
        F = vertex_dofs(self.free_vertices)
        T = vertex_dofs(self.gamma1_vertices)
        K = self.k0
        return K[F][:, F], K[F][:, T], K[T][:, T]

    @cached_property
    def g0(self) -> Factorized:
        """Factorization of K0 on the free dofs (the discrete G0)."""
        return Factorized(self._k0_blocks[0])

    @cached_property
    def sigma2_injection(self) -> sp.csr_matrix:
        """R: free dofs -> Sigma_2 dofs."""
        rows = np.arange(3 * len(self.sigma2_vertices))
        cols = self._free_pos(self.sigma2_vertices)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(rows), 3 * len(self.free_vertices)))

    @cached_property
    def g0_sigma2(self) -> np.ndarray:
        """G0 R^T (free dofs x Sigma_2 dofs)."""
        return self.g0.solve(self.sigma2_injection.T.toarray())

    @cached_property
    def runge_operator(self) -> np.ndarray:
        """A: Gamma_1 data -> Sigma_2 values of the C0 solution in Omega_1."""
        KFT = self._k0_blocks[1]
        return -np.asarray((KFT.T @ self.g0_sigma2).T)

    @cached_property
    def runge_svd(self):
        return np.linalg.svd(self.runge_operator, full_matrices=False)

    @cached_property
    def inner_reference_dn(self) -> np.ndarray:
        """C0 DN matrix of Omega_2 on the Sigma_2 vertices (H^1 seminorm weight)."""
        split = region_split(self.mesh, self.sigma2, self.inner_tets)
        K = assemble_stiffness(self.mesh, self.reference_map, self.inner_tets)
        S = schur_complement(K, vertex_dofs(split.trace), vertex_dofs(split.interior))
        pos = {int(v): i for i, v in enumerate(split.trace)}
        idx = vertex_dofs(np.array([pos[int(v)] for v in self.sigma2_vertices], dtype=np.int64))
        return S[np.ix_(idx, idx)]

    def reference_dn_apply(self, omega: np.ndarray) -> np.ndarray:
        """Lambda_{C0}^{Gamma_1} @ omega without forming the matrix."""
        KFF, KFT, KTT = self._k0_blocks
        u = self.g0.solve(-(KFT @ omega))
        return KTT @ omega + KFT.T @ u

    def diagnostics(self) -> dict:
        return {
            "name": self.name,
            "layer_tets": int(len(self.layer_tets)),
            "inner_tets": int(len(self.inner_tets)),
            "gamma1_vertices": int(len(self.gamma1_vertices)),
            "sigma2_vertices": int(len(self.sigma2_vertices)),
            "gamma2_vertices": int(len(self.gamma2_vertices)),
        }


# -- sources -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InteriorSource:
    """Nodal loads ``values`` (k, 3) at ``vertex_ids`` strictly inside D_1."""

    vertex_ids: np.ndarray
    values: np.ndarray

    def check(self, geometry: LayerGeometry) -> None:
        bad = np.setdiff1d(self.vertex_ids, geometry.layer_interior_vertices)
        if len(bad):
            raise ValueError(f"source touches vertices outside the open layer: {bad[:5].tolist()}")

    def load(self, geometry: LayerGeometry) -> np.ndarray:
        self.check(geometry)
        f = np.zeros(3 * len(geometry.free_vertices))
        np.add.at(f, geometry._free_pos(self.vertex_ids), np.asarray(self.values, dtype=float).ravel())
        return f


def vertex_layers(geometry: LayerGeometry, depth: int) -> list[np.ndarray]:
    """Graph layers of D_1 vertices at edge distance 1..depth from Sigma_2."""
    mesh = geometry.mesh
    t = mesh.tets[geometry.layer_tets]
    e = np.concatenate([t[:, [a, b]] for a in range(4) for b in range(a + 1, 4)])
    g = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(mesh.n_vertices,) * 2).tocsr()
    g = ((g + g.T) > 0).tocsr()
    seen = np.zeros(mesh.n_vertices, dtype=bool)
    seen[geometry.sigma2.patch_vertices] = True
    front = geometry.sigma2.patch_vertices
    allowed = np.zeros(mesh.n_vertices, dtype=bool)
    allowed[geometry.layer_interior_vertices] = True
    out = []
    for _ in range(depth):
        nxt = np.unique(g[front].indices)
        nxt = nxt[~seen[nxt] & allowed[nxt]]
        seen[nxt] = True
        out.append(nxt)
        front = nxt
    return out


def _vertex_normals(patch: SurfacePatch, verts: np.ndarray) -> np.ndarray:
    acc = np.zeros((len(patch.vertices), 3))
    for k in range(3):
        np.add.at(acc, patch.faces[:, k], patch.normals * patch.areas[:, None])
    n = acc[verts]
    return n / np.linalg.norm(n, axis=1)[:, None]


def offset_source_map(geometry: LayerGeometry, layer: int) -> np.ndarray:
    """For each Sigma_2 trace vertex, the vertex of graph layer ``layer`` in
    D_1 closest to the normal ray through it (the discrete F_epsilon)."""
    layers = vertex_layers(geometry, layer)
    cand = layers[-1]
    if len(cand) == 0:
        raise ValueError(f"D_1 has no interior vertex layer {layer}")
    X = geometry.mesh.vertices
    s = geometry.sigma2_vertices
    nu = _vertex_normals(geometry.sigma2, s)
    d = X[cand][None, :, :] - X[s][:, None, :]
    along = np.einsum("sck,sk->sc", d, nu)
    perp = np.linalg.norm(d - along[..., None] * nu[:, None, :], axis=2)
    perp[along <= 0] = np.inf
    return cand[np.argmin(perp, axis=1)]


def source_matrix(geometry: LayerGeometry, layer: int = 0) -> sp.csr_matrix:
    """Columns are the loads approximating T_f for unit nodal f on Sigma_2.

    ``layer = 0`` is T_f itself; ``layer = m >= 1`` moves every load to the
    vertex of the m-th interior layer of D_1 along the normal.
    """
    target = geometry.sigma2_vertices if layer == 0 else offset_source_map(geometry, layer)
    cols = np.arange(3 * len(target))
    rows = geometry._free_pos(target)
    return sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(3 * len(geometry.free_vertices), len(cols)))


# -- Runge approximation ----------------------------------------------------------------

@dataclass
class RungeResult:
    omega: np.ndarray            # Gamma_1 data, one column per target
    residual: np.ndarray         # relative l2 trace residual per column
    energy_residual: np.ndarray  # relative H^1(Omega_2) seminorm residual per column
    rank: int
    stalled: bool


def runge_approximate(geometry: LayerGeometry, target, tol: float = RUNGE_TOL, svd_tol: float = RUNGE_SVD_TOL,
                      rank: int | None = None, raise_on_stall: bool = False) -> RungeResult:
    """Gamma_1 data whose C0 solution matches ``target`` on Sigma_2.

    ``target`` is an (n_vertices, 3) field or an array of Sigma_2 trace
    values (3 per Sigma_2 vertex, one column per target). It should solve
    the C0 equation in Omega_2; matching on Sigma_2 then matches it on the
    closed inner region. Truncated SVD keeps singular values above
    ``svd_tol * sigma_max`` (or the ``rank`` largest).
    """
    t = np.asarray(target, dtype=float)
    nS = 3 * len(geometry.sigma2_vertices)
    if t.ndim == 2 and t.shape == (geometry.mesh.n_vertices, 3):
        t = t[geometry.sigma2_vertices].reshape(-1)
    if t.shape[0] != nS:
        raise ValueError(f"target has {t.shape[0]} rows, Sigma_2 has {nS} dofs")
    vec = t.ndim == 1
    T = t[:, None] if vec else t
    U, s, Vt = geometry.runge_svd
    r = int(np.sum(s > svd_tol * s[0])) if rank is None else int(min(rank, len(s)))
    omega = Vt[:r].T @ ((U[:, :r].T @ T) / s[:r, None])
    d = geometry.runge_operator @ omega - T
    tn = np.linalg.norm(T, axis=0)
    res = np.linalg.norm(d, axis=0) / np.where(tn > 0, tn, 1.0)
    N0 = geometry.inner_reference_dn
    en = np.sqrt(np.maximum(np.einsum("ij,ij->j", T, N0 @ T), 0.0))
    ed = np.sqrt(np.maximum(np.einsum("ij,ij->j", d, N0 @ d), 0.0))
    eres = ed / np.where(en > 0, en, 1.0)
    stalled = bool(np.any(res > tol))
    if stalled:
        msg = f"Runge residual {np.max(res):.2e} above {tol:g} at rank {r}"
        if raise_on_stall:
            raise ApproximationStalled(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if vec:
        omega = omega[:, 0]
    return RungeResult(omega, res, eres, r, stalled)


def _aligned(lam: DnMapMatrix, geometry: LayerGeometry) -> np.ndarray:
    if np.array_equal(lam.vertex_ids, geometry.gamma1_vertices):
        return lam.matrix
    return lam.restrict(geometry.gamma1_vertices).matrix


# -- Green pairing and single layer --------------------------------------------------------

@dataclass
class PairingResult:
    value: float
    reference: float       # H(G0 F)
    correction: float      # -<(Lambda - Lambda0) U, V>
    runge_residual: float


def green_pairing(lam: DnMapMatrix, geometry: LayerGeometry, F: InteriorSource, H: InteriorSource,
                  **runge_options) -> PairingResult:
    """H(G F) from the DN matrix on Gamma_1 and the layer tensor.

    With U0 = G0 F, V0 = G0 H and Gamma_1 data U, V whose C0 solutions
    match U0, V0 on the inner region,

        H(G F) = H(G0 F) - <(Lambda - Lambda0) U, V>.
    """
    f, h = F.load(geometry), H.load(geometry)
    U0 = geometry.g0.solve(np.column_stack([f, h]))
    R = geometry.sigma2_injection
    run = runge_approximate(geometry, R @ U0, **runge_options)
    L = _aligned(lam, geometry)
    wF, wH = run.omega[:, 0], run.omega[:, 1]
    dL = L @ wF - geometry.reference_dn_apply(wF)
    ref = float(h @ U0[:, 0])
    corr = -float(wH @ dL)
    return PairingResult(ref + corr, ref, corr, float(np.max(run.residual)))


@dataclass
class SingleLayer:
    matrix: np.ndarray
    symmetrization_defect: float
    runge_residuals: np.ndarray
    runge_rank: int
    source_layer: int


def single_layer_matrix(lam: DnMapMatrix, geometry: LayerGeometry, source_layer: int = 0,
                        defect_limit: float = DEFECT_LIMIT, **runge_options) -> SingleLayer:
    """Discrete S^{Sigma_2} on the Sigma_2 trace dofs.

    Entry (h, f) is H(G F) for the sources of :func:`source_matrix` (exact
    trace loads when ``source_layer == 0``), computed column-wise through
    :func:`green_pairing`'s identity. The result is symmetrized; the defect
    before symmetrization is returned.

    Raises
    ------
    SymmetrizationDefectLarge
        when the relative defect exceeds ``defect_limit``.
    """
    P = source_matrix(geometry, source_layer)
    U0 = geometry.g0_sigma2 if source_layer == 0 else geometry.g0.solve(P.toarray())
    B = geometry.sigma2_injection @ U0
    run = runge_approximate(geometry, B, **runge_options)
    L = _aligned(lam, geometry)
    W = run.omega
    dL = L @ W - geometry.reference_dn_apply(W)
    S = np.asarray(P.T @ U0) - W.T @ dL
    defect = float(np.linalg.norm(S - S.T) / np.linalg.norm(S))
    if defect > defect_limit:
        raise SymmetrizationDefectLarge(f"single layer symmetrization defect {defect:.3e} > {defect_limit:g}")
    return SingleLayer(0.5 * (S + S.T), defect, run.residual, run.rank, source_layer)


def dn_plus(geometry: LayerGeometry) -> DnMapMatrix:
    """Lambda^{Sigma_2,+}: minus the energy form of the layer D_1 for data on
    Sigma_2, zero on the rest of dD_1 (the normal points into D_1)."""
    split = region_split(geometry.mesh, geometry.sigma2, geometry.layer_tets)
    K = assemble_stiffness(geometry.mesh, geometry.reference_map, geometry.layer_tets)
    S = schur_complement(K, vertex_dofs(split.trace), vertex_dofs(split.interior))
    pos = {int(v): i for i, v in enumerate(split.trace)}
    idx = vertex_dofs(np.array([pos[int(v)] for v in geometry.sigma2_vertices], dtype=np.int64))
    M = surface_mass(geometry.mesh.vertices, geometry.sigma2.faces, geometry.sigma2_vertices)
    return DnMapMatrix(-S[np.ix_(idx, idx)], geometry.sigma2_vertices, M, f"{geometry.name}:sigma2+",
                       geometry.mesh.fingerprint)


@dataclass
class StripResult:
    sigma2: DnMapMatrix      # full Sigma_2 operator (carried along a chain)
    gamma2: DnMapMatrix      # restriction to Gamma_2
    single_layer: SingleLayer
    diagnostics: dict

    def to_json(self) -> dict:
        return self.diagnostics


def strip_layer(lam: DnMapMatrix, geometry: LayerGeometry, regularization: float = STRIP_REGULARIZATION,
                source_layer: int = 0, **runge_options) -> StripResult:
    """Lambda^{Sigma_2} = Lambda^{Sigma_2,+} + S^-1, restricted to Gamma_2.

    S is inverted by truncated SVD keeping singular values above
    ``regularization * sigma_max``.

    Raises
    ------
    IllConditionedS
        when fewer than 3/2 of the Sigma_2 vertex count singular values are
        retained.
    """
    sl = single_layer_matrix(lam, geometry, source_layer, **runge_options)
    U, s, Vt = np.linalg.svd(sl.matrix)
    keep = s > regularization * s[0]
    r = int(np.sum(keep))
    diag = {
        "runge_residuals": sl.runge_residuals.tolist(),
        "runge_rank": sl.runge_rank,
        "symmetrization_defect": sl.symmetrization_defect,
        "svd_spectrum": s.tolist(),
        "retained_rank": r,
        "source_layer": source_layer,
        "regularization": regularization,
        **geometry.diagnostics(),
    }
    if r < 1.5 * len(geometry.sigma2_vertices):
        raise IllConditionedS(f"retained rank {r} < {1.5 * len(geometry.sigma2_vertices):g}")
    Sinv = (Vt[:r].T / s[:r]) @ U[:, :r].T
    plus = dn_plus(geometry)
    A = Sinv + plus.matrix
    A = 0.5 * (A + A.T)
    full = DnMapMatrix(A, geometry.sigma2_vertices, plus.mass, f"{geometry.name}:sigma2",
                       geometry.mesh.fingerprint, {"source_layer": source_layer, "retained_rank": r})
    part = full.restrict(geometry.gamma2_vertices, f"{geometry.name}:gamma2")
    return StripResult(full, part, sl, diag)


def direct_inner_dn(geometry: LayerGeometry, smap: SubdomainMap) -> DnMapMatrix:
    """Reference Lambda^{Sigma_2} of Omega_2 computed with the true tensors."""
    split = region_split(geometry.mesh, geometry.sigma2, geometry.inner_tets)
    K = assemble_stiffness(geometry.mesh, smap, geometry.inner_tets)
    S = schur_complement(K, vertex_dofs(split.trace), vertex_dofs(split.interior))
    pos = {int(v): i for i, v in enumerate(split.trace)}
    idx = vertex_dofs(np.array([pos[int(v)] for v in geometry.sigma2_vertices], dtype=np.int64))
    M = surface_mass(geometry.mesh.vertices, geometry.sigma2.faces, geometry.sigma2_vertices)
    return DnMapMatrix(S[np.ix_(idx, idx)], geometry.sigma2_vertices, M, f"{geometry.name}:direct",
                       geometry.mesh.fingerprint)


def polynomial_traces(coords, degree: int = 2) -> np.ndarray:
    """Traces of the vector fields x^alpha e_c with 1 <= |alpha| <= degree."""
    Y = np.asarray(coords, dtype=float)
    Y = Y - Y.mean(axis=0)
    mons = [Y[:, i] for i in range(3)]
    if degree >= 2:
        mons += [Y[:, i] * Y[:, j] for i in range(3) for j in range(i, 3)]
    cols = []
    for f in mons:
        for c in range(3):
            u = np.zeros((len(Y), 3))
            u[:, c] = f
            cols.append(u.ravel())
    return np.array(cols).T


def smooth_trace_error(approx: DnMapMatrix, reference: DnMapMatrix, coords, degree: int = 2) -> float:
    """Relative error of the energy forms on a fixed family of smooth traces.

    ``coords`` are the coordinates of ``reference.vertex_ids``. Unlike the
    Frobenius error this does not weigh mesh-scale oscillations, so it is
    comparable across meshes.
    """
    Phi = polynomial_traces(coords, degree)
    D = approx.restrict(reference.vertex_ids).matrix - reference.matrix
    return float(np.linalg.norm(Phi.T @ D @ Phi) / np.linalg.norm(Phi.T @ reference.matrix @ Phi))
