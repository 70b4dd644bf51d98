"""Tetrahedral meshes, subdomain labels and surface patches.

File formats (all indices 1-based, ``#`` starts a comment):

* nodes:     ``id x y z`` per line
* elements:  ``id v1 v2 v3 v4`` per line
* boundary:  ``id v1 v2 v3`` per line, outward orientation (right-hand rule)
* subdomain map (JSON): ``{"tet_labels": [...], "materials": {label: voigt}}``
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from ..errors import InvertedElement, MeshError
from ..tensor import ElasticityTensor, make_elasticity_tensor, rotation_to

# local faces of a tet, each listed with the opposite vertex last
_TET_FACES = np.array([[1, 2, 3, 0], [0, 3, 2, 1], [0, 1, 3, 2], [0, 2, 1, 3]])


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals (right-hand rule) and areas of triangles."""
    p = vertices[faces]
    c = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    a = np.linalg.norm(c, axis=1)
    return c / a[:, None], 0.5 * a


def oriented_faces(vertices: np.ndarray, tets: np.ndarray, tet_ids=None) -> np.ndarray:
    """Faces that appear exactly once among ``tets[tet_ids]``, oriented outward.

    Returns an (k, 4) array: three vertex ids and the owning tet id.
    """
    ids = np.arange(len(tets)) if tet_ids is None else np.asarray(tet_ids)
    t = tets[ids]
    f = t[:, _TET_FACES[:, :3]].reshape(-1, 3)
    opp = t[:, _TET_FACES[:, 3]].reshape(-1)
    owner = np.repeat(ids, 4)
    key = np.sort(f, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = cnt[inv.ravel()] == 1
    f, opp, owner = f[once], opp[once], owner[once]
    n, _ = face_normals(vertices, f)
    outward = np.einsum("ij,ij->i", n, vertices[opp] - vertices[f].mean(axis=1)) < 0
    f[~outward] = f[~outward][:, [0, 2, 1]]
    return np.column_stack([f, owner])


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray

    def __post_init__(self):
        for name, dtype in (("vertices", float), ("tets", np.int64), ("boundary_faces", np.int64)):
            a = np.array(getattr(self, name), dtype=dtype)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_tets(cls, vertices, tets, fix_orientation: bool = False) -> "TetMesh":
        """Build a mesh deriving the outward boundary faces from the tets."""
        vertices = np.asarray(vertices, dtype=float)
        tets = np.array(tets, dtype=np.int64)
        if fix_orientation:
            neg = tet_volumes(vertices, tets) < 0
            tets[neg] = tets[neg][:, [0, 2, 1, 3]]
        bf = oriented_faces(vertices, tets)[:, :3]
        mesh = cls(vertices, tets, bf)
        mesh.validate()
        return mesh

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def volumes(self) -> np.ndarray:
        return tet_volumes(self.vertices, self.tets)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_faces)

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.vertices, self.tets, self.boundary_faces):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def validate(self) -> None:
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (n, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshError("tets must be (m, 4)")
        if self.tets.min() < 0 or self.tets.max() >= self.n_vertices:
            raise MeshError("tet vertex index out of range")
        vol = self.volumes
        if np.any(vol <= 0):
            bad = int(np.flatnonzero(vol <= 0)[0])
            raise InvertedElement(f"tet {bad} has non-positive volume {vol[bad]:.3e}")
        derived = oriented_faces(self.vertices, self.tets)[:, :3]
        if not _same_oriented_faces(derived, self.boundary_faces):
            raise MeshError("boundary faces are inconsistent with the tets")
        ncomp, _ = connected_components(self.tet_adjacency(), directed=False)
        if ncomp != 1:
            raise MeshError(f"mesh has {ncomp} connected components")

    def tet_adjacency(self, tet_ids=None) -> sp.csr_matrix:
        """Face adjacency graph between tets (restricted to ``tet_ids`` if given)."""
        ids = np.arange(len(self.tets)) if tet_ids is None else np.asarray(tet_ids)
        t = self.tets[ids]
        f = np.sort(t[:, _TET_FACES[:, :3]].reshape(-1, 3), axis=1)
        owner = np.repeat(np.arange(len(ids)), 4)
        _, inv = np.unique(f, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        s = inv[order]
        pair = np.flatnonzero(s[1:] == s[:-1])
        a, b = owner[order[pair]], owner[order[pair + 1]]
        n = len(ids)
        g = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
        return (g + g.T).tocsr()

    def refined_volume(self) -> float:
        return float(self.volumes.sum())

    def save(self, prefix) -> tuple[Path, Path, Path]:
        """Write ``<prefix>.nodes``, ``<prefix>.elements``, ``<prefix>.boundary``."""
        prefix = Path(prefix)
        paths = (prefix.with_suffix(".nodes"), prefix.with_suffix(".elements"), prefix.with_suffix(".boundary"))
        with open(paths[0], "w") as fh:
            fh.write("# id x y z\n")
            for i, x in enumerate(self.vertices, 1):
                fh.write(f"{i} " + " ".join(repr(float(c)) for c in x) + "\n")
        for path, arr, head in ((paths[1], self.tets, "# id v1 v2 v3 v4"), (paths[2], self.boundary_faces, "# id v1 v2 v3")):
            with open(path, "w") as fh:
                fh.write(head + "\n")
                for i, row in enumerate(arr + 1, 1):
                    fh.write(f"{i} " + " ".join(map(str, row)) + "\n")
        return paths


def _same_oriented_faces(a: np.ndarray, b: np.ndarray) -> bool:
    if len(a) != len(b):
        return False

    def canon(f):
        # rotate each triangle so the smallest index comes first (keeps orientation)
        k = np.argmin(f, axis=1)
        r = np.stack([np.roll(row, -s) for row, s in zip(f, k)]) if len(f) else f
        return r[np.lexsort(r.T[::-1])]

    return bool(np.array_equal(canon(np.asarray(a)), canon(np.asarray(b))))


def _read_table(path, ncols: int) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != ncols + 1:
            raise MeshError(f"{path}: expected {ncols + 1} columns, got {len(parts)}: {line!r}")
        rows.append(parts[1:])
    return np.array(rows, dtype=float) if rows else np.zeros((0, ncols))


def load_mesh(nodes, elements, boundary=None) -> TetMesh:
    """Read a mesh from the plain-text files (1-based indices)."""
    for p in (nodes, elements) + ((boundary,) if boundary else ()):
        if not Path(p).exists():
            raise FileNotFoundError(p)
    v = _read_table(nodes, 3)
    t = _read_table(elements, 4).astype(np.int64) - 1
    if boundary is None:
        return TetMesh.from_tets(v, t)
    b = _read_table(boundary, 3).astype(np.int64) - 1
    mesh = TetMesh(v, t, b)
    mesh.validate()
    return mesh


def load_mesh_prefix(prefix) -> TetMesh:
    prefix = Path(prefix)
    return load_mesh(prefix.with_suffix(".nodes"), prefix.with_suffix(".elements"), prefix.with_suffix(".boundary"))


@dataclass(frozen=True, eq=False)
class SubdomainMap:
    """Per-tet material labels and one constant tensor per label."""

    tet_labels: np.ndarray
    materials: dict

    def __post_init__(self):
        lab = np.array(self.tet_labels, dtype=np.int64)
        lab.setflags(write=False)
        object.__setattr__(self, "tet_labels", lab)
        object.__setattr__(self, "materials", {int(k): v for k, v in self.materials.items()})

    @property
    def labels(self) -> list[int]:
        return sorted(int(x) for x in np.unique(self.tet_labels))

    def tets_of(self, label) -> np.ndarray:
        return np.flatnonzero(self.tet_labels == label)

    def tets_of_set(self, labels) -> np.ndarray:
        return np.flatnonzero(np.isin(self.tet_labels, list(labels)))

    def with_materials(self, materials: dict) -> "SubdomainMap":
        m = dict(self.materials)
        m.update(materials)
        return SubdomainMap(self.tet_labels, m)

    def uniform(self, C: ElasticityTensor) -> "SubdomainMap":
        return SubdomainMap(self.tet_labels, {lab: C for lab in self.labels})

    def validate(self, mesh: TetMesh) -> None:
        if len(self.tet_labels) != len(mesh.tets):
            raise MeshError(f"{len(self.tet_labels)} labels for {len(mesh.tets)} tets")
        missing = set(self.labels) - set(self.materials)
        if missing:
            raise MeshError(f"no material for labels {sorted(missing)}")
        for lab in self.labels:
            ids = self.tets_of(lab)
            ncomp, _ = connected_components(mesh.tet_adjacency(ids), directed=False)
            if ncomp != 1:
                raise MeshError(f"subdomain {lab} is not connected ({ncomp} components)")

    def adjacency(self, mesh: TetMesh) -> dict[int, set[int]]:
        """Labels sharing at least one face."""
        g = mesh.tet_adjacency().tocoo()
        la, lb = self.tet_labels[g.row], self.tet_labels[g.col]
        adj: dict[int, set[int]] = {lab: set() for lab in self.labels}
        for a, b in set(zip(la.tolist(), lb.tolist())):
            if a != b:
                adj[a].add(b)
        return adj

    def to_json(self) -> dict:
        return {
            "tet_labels": self.tet_labels.tolist(),
            "materials": {str(k): v.voigt.tolist() for k, v in sorted(self.materials.items())},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def load_subdomain_map(path) -> SubdomainMap:
    """Read the JSON map; every material is validated (NotStronglyConvex etc.)."""
    data = json.loads(Path(path).read_text())
    mats = {int(k): make_elasticity_tensor(v) for k, v in data["materials"].items()}
    return SubdomainMap(np.asarray(data["tet_labels"]), mats)


@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """Triangles of a surface with outward unit normals.

    ``surface`` is the closed surface the patch belongs to (for boundary
    patches: all boundary faces). A vertex is *interior* to the patch when
    every surface triangle touching it belongs to the patch.
    """

    vertices: np.ndarray
    faces: np.ndarray
    surface: np.ndarray | None = None
    name: str = "patch"
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "faces", f)
        n, a = face_normals(np.asarray(self.vertices), f) if len(f) else (np.zeros((0, 3)), np.zeros(0))
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "areas", a)
        if self.surface is not None:
            object.__setattr__(self, "surface", np.array(self.surface, dtype=np.int64).reshape(-1, 3))

    @property
    def patch_vertices(self) -> np.ndarray:
        return np.unique(self.faces)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        pv = self.patch_vertices
        if self.surface is None:
            return pv
        in_patch = set(map(tuple, np.sort(self.faces, axis=1).tolist()))
        outside = [f for f in np.sort(self.surface, axis=1).tolist() if tuple(f) not in in_patch]
        excluded = np.unique(np.array(outside, dtype=np.int64)) if outside else np.zeros(0, np.int64)
        return np.setdiff1d(pv, excluded)

    def face_adjacency(self) -> sp.csr_matrix:
        """Triangles sharing an edge."""
        f = self.faces
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        owner = np.tile(np.arange(len(f)), 3)
        _, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        s = inv[order]
        pair = np.flatnonzero(s[1:] == s[:-1])
        a, b = owner[order[pair]], owner[order[pair + 1]]
        g = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(len(f), len(f)))
        return (g + g.T).tocsr()

    def is_connected(self) -> bool:
        if len(self.faces) == 0:
            return False
        ncomp, _ = connected_components(self.face_adjacency(), directed=False)
        return ncomp == 1

    def centroids(self) -> np.ndarray:
        return np.asarray(self.vertices)[self.faces].mean(axis=1)


def boundary_patch(mesh: TetMesh, selector=None, name: str = "sigma") -> SurfacePatch:
    """Patch of boundary faces whose centroid satisfies ``selector`` (all if None)."""
    bf = mesh.boundary_faces
    if selector is None:
        faces = bf
    else:
        cen = mesh.vertices[bf].mean(axis=1)
        faces = bf[np.asarray(selector(cen), dtype=bool)]
    return SurfacePatch(mesh.vertices, faces, surface=bf, name=name)


def region_boundary(mesh: TetMesh, tet_ids) -> np.ndarray:
    """Outward faces (k, 4 with owner tet) of the union of ``tet_ids``."""
    return oriented_faces(mesh.vertices, mesh.tets, tet_ids)


def interface_patch(mesh: TetMesh, smap: SubdomainMap, inner_labels, name: str = "interface") -> SurfacePatch:
    """Boundary of the region ``inner_labels`` minus the outer boundary, with
    normals pointing out of the region."""
    inner = smap.tets_of_set(inner_labels)
    rb = region_boundary(mesh, inner)[:, :3]
    outer = set(map(tuple, np.sort(mesh.boundary_faces, axis=1).tolist()))
    keep = np.array([tuple(f) not in outer for f in np.sort(rb, axis=1).tolist()], dtype=bool)
    return SurfacePatch(mesh.vertices, rb[keep], surface=rb, name=name)


# -- phantom geometry -----------------------------------------------------------

_KUHN_LOCAL = np.array(
    [
        [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)],
        [(0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1)],
        [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 1, 1)],
        [(0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)],
        [(0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)],
        [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)],
    ]
)


def _kuhn_cells(n_cells: np.ndarray, flip: np.ndarray | None = None):
    """Six-tet (Kuhn) split of a structured hex grid; returns (tets, cell ids).

    ``flip`` (n_cells_total, 3) bool mirrors the split of a cell along the
    flagged axes. Mirroring whole octants about the grid centre keeps the
    mesh conforming and points every cell diagonal away from the centre.
    """
    n_cells = np.asarray(n_cells)
    nx, ny, nz = n_cells
    idx = np.arange((nx + 1) * (ny + 1) * (nz + 1)).reshape(nx + 1, ny + 1, nz + 1)
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = np.column_stack([i.ravel(), j.ravel(), k.ravel()])
    if flip is None:
        flip = np.zeros_like(base, dtype=bool)
    off = np.where(flip[:, None, None, :], 1 - _KUHN_LOCAL[None], _KUHN_LOCAL[None])
    q = base[:, None, None, :] + off
    tets = idx[q[..., 0], q[..., 1], q[..., 2]].reshape(-1, 4)
    cell = np.repeat(base, 6, axis=0)
    return tets, cell


def box_mesh(n=(4, 4, 4), lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TetMesh:
    n = np.asarray(n)
    axes = [np.linspace(lo[d], hi[d], n[d] + 1) for d in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    tets, _ = _kuhn_cells(n)
    return TetMesh.from_tets(verts, tets, fix_orientation=True)


@dataclass(frozen=True, eq=False)
class ShellPhantom:
    """Ball mesh whose cube shells are mapped onto concentric spheres.

    ``shell_index[v]`` is the sup-norm shell of vertex ``v`` in grid units
    (0 at the centre, ``n`` on the outer sphere); ``cell_shell[t]`` is the
    shell layer a tet lives in (tets between shells s-1 and s have value s).
    """

    mesh: TetMesh
    n: int
    radius: float
    shell_index: np.ndarray
    cell_shell: np.ndarray


def _spherify(u: np.ndarray) -> np.ndarray:
    # map the unit sup-norm cube onto the unit ball, area-balanced on faces
    x, y, z = u[:, 0], u[:, 1], u[:, 2]
    x2, y2, z2 = x * x, y * y, z * z
    return np.column_stack(
        [
            x * np.sqrt(1 - y2 / 2 - z2 / 2 + y2 * z2 / 3),
            y * np.sqrt(1 - z2 / 2 - x2 / 2 + z2 * x2 / 3),
            z * np.sqrt(1 - x2 / 2 - y2 / 2 + x2 * y2 / 3),
        ]
    )


def ball_mesh(n: int = 4, radius: float = 1.0, inner: int = 0) -> ShellPhantom:
    """Ball of radius ``radius`` from a (2n)^3 grid of octant-mirrored Kuhn
    cells; each cube shell |x|_inf = s is mapped onto the sphere of radius
    s radius / n. Cells with sup-norm shell <= ``inner`` are dropped
    (``inner > 0`` gives a thick spherical shell)."""
    m = 2 * n
    g = np.arange(-n, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]).astype(float)
    i, j, k = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    centre = np.column_stack([i.ravel(), j.ravel(), k.ravel()]) - n + 0.5
    tets, cell = _kuhn_cells(np.array([m, m, m]), flip=centre < 0)
    cell_c = cell - n + 0.5
    cshell = np.ceil(np.max(np.abs(cell_c), axis=1)).astype(int)
    keep = cshell > inner
    tets, cshell = tets[keep], cshell[keep]
    used = np.unique(tets)
    remap = -np.ones(len(grid), dtype=np.int64)
    remap[used] = np.arange(len(used))
    grid = grid[used]
    tets = remap[tets]
    sup = np.max(np.abs(grid), axis=1)
    u = np.divide(grid, sup[:, None], out=np.zeros_like(grid), where=sup[:, None] > 0)
    verts = _spherify(u) * (sup * radius / n)[:, None]
    mesh = TetMesh.from_tets(verts, tets, fix_orientation=True)
    return ShellPhantom(mesh, n, radius, sup.astype(int), cshell)


def nested_labels(phantom: ShellPhantom, interfaces) -> np.ndarray:
    """Tet labels 0, 1, ... from the outside in, split at the given shell indices.

    ``interfaces=(k,)`` labels shells > k as 0 and <= k as 1.
    """
    lab = np.zeros(len(phantom.cell_shell), dtype=np.int64)
    for k in sorted(interfaces, reverse=True):
        lab[phantom.cell_shell <= k] += 1
    return lab


# -- stand-alone surface patches --------------------------------------------------

def _outward(vertices: np.ndarray, faces: np.ndarray, outward_dir) -> np.ndarray:
    n, _ = face_normals(vertices, faces)
    ref = outward_dir(vertices[faces].mean(axis=1))
    flip = np.einsum("ij,ij->i", n, ref) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def spherical_cap_patch(half_angle: float, rings: int = 6, radius: float = 1.0,
                        axis=(0.0, 0.0, 1.0), name: str = "cap") -> SurfacePatch:
    """Triangulated cap {x : |x| = radius, angle(x, axis) <= half_angle}."""
    pts = [np.zeros(2)]
    for i in range(1, rings + 1):
        t = 2 * np.pi * np.arange(6 * i) / (6 * i)
        pts.append(np.column_stack([np.cos(t), np.sin(t)]) * i / rings)
    disk = np.vstack(pts)
    faces = Delaunay(disk).simplices.astype(np.int64)
    r = np.linalg.norm(disk, axis=1)
    theta = half_angle * r
    phi = np.arctan2(disk[:, 1], disk[:, 0])
    v = radius * np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    Q = rotation_to(axis)
    v = v @ Q.T
    faces = _outward(v, faces, lambda c: c)
    return SurfacePatch(v, faces, name=name)


def cylinder_patch(angle: float = np.pi / 3, height: float = 1.0, n_angle: int = 8, n_height: int = 4,
                   radius: float = 1.0, name: str = "cylinder") -> SurfacePatch:
    """Piece of the cylinder x^2 + y^2 = radius^2 over an angular range ``angle``."""
    t = np.linspace(0.0, angle, n_angle + 1)
    z = np.linspace(0.0, height, n_height + 1)
    T, Zg = np.meshgrid(t, z, indexing="ij")
    v = np.column_stack([radius * np.cos(T.ravel()), radius * np.sin(T.ravel()), Zg.ravel()])
    idx = np.arange(len(v)).reshape(n_angle + 1, n_height + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    faces = _outward(v, faces, lambda p: np.column_stack([p[:, 0], p[:, 1], np.zeros(len(p))]))
    return SurfacePatch(v, faces, name=name)


def flat_patch(n: int = 4, size: float = 1.0, name: str = "flat") -> SurfacePatch:
    """Square in the plane z = 0 with normal +e3."""
    g = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange(len(v)).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    faces = _outward(v, faces, lambda p: np.tile([0.0, 0.0, 1.0], (len(p), 1)))
    return SurfacePatch(v, faces, name=name)
