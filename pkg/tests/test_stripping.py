"""Layer stripping on a small two-block ball."""

import numpy as np
import pytest
import scipy.sparse as sp

from elastodn.errors import ApproximationStalled, IllConditionedS, MeshError, SymmetrizationDefectLarge
from elastodn.fem import SubdomainMap, assemble_stiffness, ball_mesh, boundary_patch, local_dn_matrix, nested_labels
from elastodn.fem.dn import Factorized, vertex_dofs
from elastodn.stripping import (
    InteriorSource,
    LayerGeometry,
    direct_inner_dn,
    dn_plus,
    green_pairing,
    polynomial_traces,
    runge_approximate,
    single_layer_matrix,
    smooth_trace_error,
    source_matrix,
    strip_layer,
    vertex_layers,
)
from elastodn.tensor import isotropic, transversely_isotropic

C0 = isotropic(1.0, 1.0)
C1 = transversely_isotropic(3.0, 2.0, 0.7, 0.9, 1.2, axis=(1.0, 1.0, 0.5))


@pytest.fixture(scope="module")
def setup():
    ph = ball_mesh(4)
    M = ph.mesh
    lab = nested_labels(ph, (2,))
    smap = SubdomainMap(lab, {0: C0, 1: C1})
    g1 = boundary_patch(M)
    lam = local_dn_matrix(M, smap, g1)
    geo = LayerGeometry.from_labels(M, lab, [0], [1], g1, C0)
    return M, smap, lam, geo


def _true_green(M, smap, geo):
    K = assemble_stiffness(M, smap, geo.omega1_tets)
    F = vertex_dofs(geo.free_vertices)
    return Factorized(sp.csr_matrix(K)[F][:, F])


def test_geometry_counts(setup):
    M, smap, lam, geo = setup
    d = geo.diagnostics()
    assert d["gamma1_vertices"] == len(M.boundary_vertices)
    assert d["sigma2_vertices"] == len(np.unique(geo.sigma2.faces))
    assert np.intersect1d(geo.layer_interior_vertices, geo.sigma2_vertices).size == 0


def test_geometry_rejects_bad_regions(setup):
    M, smap, lam, geo = setup
    with pytest.raises(MeshError):
        LayerGeometry(M, geo.layer_tets, geo.layer_tets[:3], geo.gamma1, C0)
    with pytest.raises(MeshError):
        LayerGeometry(M, geo.layer_tets, np.zeros(0, dtype=np.int64), geo.gamma1, C0)


def test_runge_reproduces_reference_solutions(setup):
    M, smap, lam, geo = setup
    target = geo.sigma2_injection @ geo.g0_sigma2[:, :12]
    run = runge_approximate(geo, target)
    assert run.residual.max() < 1e-6
    assert not run.stalled


def test_runge_stall(setup):
    geo = setup[3]
    target = geo.sigma2_injection @ geo.g0_sigma2[:, :3]
    with pytest.warns(RuntimeWarning):
        runge_approximate(geo, target, rank=5)
    with pytest.raises(ApproximationStalled):
        runge_approximate(geo, target, rank=5, raise_on_stall=True)


def test_green_pairing_matches_true_green(setup, rng):
    M, smap, lam, geo = setup
    layer = vertex_layers(geo, 1)[0]
    vi = rng.choice(layer, 2, replace=False)
    F = InteriorSource(vi[:1], rng.standard_normal((1, 3)))
    H = InteriorSource(vi[1:], rng.standard_normal((1, 3)))
    res = green_pairing(lam, geo, F, H)
    G = _true_green(M, smap, geo)
    exact = H.load(geo) @ G.solve(F.load(geo))
    assert abs(res.value - exact) <= 1e-8 * abs(exact)
    back = green_pairing(lam, geo, H, F)
    assert abs(back.value - res.value) <= 1e-8 * abs(exact)


def test_source_outside_layer_rejected(setup):
    geo = setup[3]
    with pytest.raises(ValueError):
        InteriorSource(geo.sigma2_vertices[:1], np.ones((1, 3))).load(geo)


def test_single_layer_matches_true(setup):
    M, smap, lam, geo = setup
    sl = single_layer_matrix(lam, geo)
    G = _true_green(M, smap, geo)
    R = geo.sigma2_injection
    exact = R @ G.solve(R.T.toarray())
    assert np.linalg.norm(sl.matrix - exact) / np.linalg.norm(exact) < 1e-8
    assert sl.symmetrization_defect < 1e-6


def test_symmetrization_limit(setup):
    with pytest.raises(SymmetrizationDefectLarge):
        single_layer_matrix(setup[2], setup[3], defect_limit=0.0)


def test_dn_plus_negative(setup):
    geo = setup[3]
    assert np.linalg.eigvalsh(dn_plus(geo).matrix)[-1] < 0


def test_strip_matches_direct(setup):
    M, smap, lam, geo = setup
    out = strip_layer(lam, geo)
    ref = direct_inner_dn(geo, smap)
    assert out.sigma2.relative_error(ref) < 1e-6
    assert smooth_trace_error(out.sigma2, ref, M.vertices[ref.vertex_ids]) < 1e-6
    assert out.diagnostics["retained_rank"] == len(out.diagnostics["svd_spectrum"])


def test_strip_ill_conditioned(setup):
    with pytest.raises(IllConditionedS):
        strip_layer(setup[2], setup[3], regularization=0.5)


def test_offset_sources_inside_layer(setup):
    geo = setup[3]
    P = source_matrix(geo, 1)
    assert P.shape == (3 * len(geo.free_vertices), 3 * len(geo.sigma2_vertices))
    layers = vertex_layers(geo, 2)
    assert np.intersect1d(layers[0], layers[1]).size == 0


def test_smooth_trace_metric(setup):
    M, smap, lam, geo = setup
    ref = direct_inner_dn(geo, smap)
    X = M.vertices[ref.vertex_ids]
    assert polynomial_traces(X).shape == (3 * len(X), 27)
    assert polynomial_traces(X, 1).shape == (3 * len(X), 9)
    assert smooth_trace_error(ref, ref, X) == 0.0
