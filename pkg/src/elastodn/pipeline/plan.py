"""Chain planning over the subdomain adjacency graph."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from ..boundary import CURVED_TOL, CurvatureReport, curved_check
from ..errors import MeshError, SigmaAmbiguous, SigmaFlat
from ..fem.mesh import SubdomainMap, SurfacePatch, TetMesh, oriented_faces, region_boundary


@dataclass(frozen=True, eq=False)
class ChainPlan:
    """Labels D_1..D_N from the measured block to the target, the
    interfaces Gamma_1 = Sigma, Gamma_2, ... with Gamma_{i+1} shared by
    D_i and D_{i+1}, and their curvature diagnostics."""

    labels: tuple
    interfaces: tuple
    curvature: tuple

    @property
    def target(self) -> int:
        return self.labels[-1]

    @property
    def depth(self) -> int:
        return len(self.labels)

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "interfaces": [p.name for p in self.interfaces],
            "interface_faces": [int(len(p.faces)) for p in self.interfaces],
            "curvature": [c.to_json() for c in self.curvature],
        }


@dataclass(frozen=True)
class Undetermined:
    label: int
    reason: str
    patches: tuple = ()

    def to_json(self) -> dict:
        return {"label": self.label, "reason": self.reason, "patches": list(self.patches)}


@dataclass(frozen=True, eq=False)
class Plan:
    root: int
    chains: tuple
    undetermined: tuple
    interfaces: dict = field(default_factory=dict)

    def chain_to(self, label: int) -> ChainPlan:
        for c in self.chains:
            if c.target == label:
                return c
        raise KeyError(label)

    def to_json(self) -> dict:
        return {
            "root": self.root,
            "chains": [c.to_json() for c in self.chains],
            "undetermined": [u.to_json() for u in self.undetermined],
        }


def _keys(faces) -> list:
    return [tuple(f) for f in np.sort(np.asarray(faces)[:, :3], axis=1).tolist()]


def sigma_owner(mesh: TetMesh, smap: SubdomainMap, sigma: SurfacePatch) -> int:
    """The single label whose boundary contains Sigma."""
    of = oriented_faces(mesh.vertices, mesh.tets)
    owner = dict(zip(_keys(of), of[:, 3].tolist()))
    try:
        labs = sorted({int(smap.tet_labels[owner[k]]) for k in _keys(sigma.faces)})
    except KeyError as exc:
        raise MeshError("measurement patch contains a face that is not on the outer boundary") from exc
    if len(labs) != 1:
        raise SigmaAmbiguous(f"measurement patch touches subdomains {labs}")
    return labs[0]


def interface_between(mesh: TetMesh, smap: SubdomainMap, outer: int, inner: int) -> SurfacePatch:
    """Faces shared by D_outer and D_inner, normals pointing out of D_inner."""
    rb = region_boundary(mesh, smap.tets_of(inner))[:, :3]
    other = set(_keys(region_boundary(mesh, smap.tets_of(outer))))
    keep = np.array([k in other for k in _keys(rb)], dtype=bool)
    return SurfacePatch(mesh.vertices, rb[keep], surface=rb, name=f"interface:{outer}-{inner}")


def plan_chains(mesh: TetMesh, smap: SubdomainMap, sigma: SurfacePatch, curved_tol: float = CURVED_TOL) -> Plan:
    """Shortest chains from the Sigma block to every reachable subdomain.

    Breadth-first search visits neighbours in increasing label order, so
    among shortest chains the lexicographically smallest label sequence is
    chosen. An edge is usable only when the shared interface passes
    :func:`curved_check`.

    Raises
    ------
    SigmaAmbiguous
        when Sigma touches more than one subdomain.
    SigmaFlat
        when Sigma itself fails the curvature test.
    """
    root = sigma_owner(mesh, smap, sigma)
    rep = curved_check(sigma, curved_tol)
    if not rep.curved:
        raise SigmaFlat(f"measurement patch is flat: normal-image diameter {rep.walk_diameter:.3e} rad")
    adj = smap.adjacency(mesh)
    checks: dict = {}

    def edge(a: int, b: int):
        if (a, b) not in checks:
            patch = interface_between(mesh, smap, a, b)
            checks[(a, b)] = (patch, curved_check(patch, curved_tol))
        return checks[(a, b)]

    chains = {root: ChainPlan((root,), (sigma,), (rep,))}
    queue = deque([root])
    while queue:
        a = queue.popleft()
        for b in sorted(adj[a]):
            if b in chains:
                continue
            patch, crep = edge(a, b)
            if crep.curved:
                c = chains[a]
                chains[b] = ChainPlan(c.labels + (b,), c.interfaces + (patch,), c.curvature + (crep,))
                queue.append(b)
    undetermined = []
    for lab in smap.labels:
        if lab in chains:
            continue
        flat = [edge(a, lab)[0].name for a in sorted(adj[lab]) if a in chains]
        if flat:
            undetermined.append(Undetermined(lab, "every interface to a reachable subdomain is flat", tuple(flat)))
        else:
            undetermined.append(Undetermined(lab, "no reachable neighbour"))
    ordered = tuple(sorted(chains.values(), key=lambda c: (c.depth, c.labels)))
    return Plan(root, ordered, tuple(undetermined), {k: v[1] for k, v in checks.items()})


def intersect_partitions(mesh: TetMesh, a: SubdomainMap, b: SubdomainMap) -> SubdomainMap:
    """Common refinement of two partitions of the same mesh.

    Region labels are assigned to the distinct (label_a, label_b) pairs in
    sorted order; materials come from ``a``. Each region must be connected.
    """
    if len(a.tet_labels) != len(b.tet_labels):
        raise MeshError("partitions cover different numbers of tets")
    pairs = np.column_stack([a.tet_labels, b.tet_labels])
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    inv = inv.ravel()
    mats = {i: a.materials[int(pa)] for i, (pa, _) in enumerate(uniq)}
    out = SubdomainMap(inv, mats)
    for lab in out.labels:
        ncomp, _ = connected_components(mesh.tet_adjacency(out.tets_of(lab)), directed=False)
        if ncomp != 1:
            pa, pb = uniq[lab]
            raise MeshError(f"common region ({pa}, {pb}) is not connected ({ncomp} components)")
    return out
