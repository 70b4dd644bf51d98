"""Tetrahedral P1 forward solver producing localized DN matrices."""

from .assembly import assemble_parametric, assemble_stiffness, element_stresses, energy, rigid_motions, surface_mass
from .dn import (
    DnMapMatrix,
    DofSplit,
    Factorized,
    load_dn,
    local_dn_matrix,
    nodal_traction,
    region_split,
    schur_complement,
    solve_dirichlet,
    traction,
    vertex_dofs,
)
from .mesh import (
    ShellPhantom,
    SubdomainMap,
    SurfacePatch,
    TetMesh,
    ball_mesh,
    boundary_patch,
    box_mesh,
    interface_patch,
    load_mesh,
    load_mesh_prefix,
    load_subdomain_map,
    nested_labels,
    region_boundary,
)
