"""Impedance samples, curvature checks and tensor recovery."""

# ruff: noqa: E741
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elastodn.boundary import (
    AcousticSample,
    SampleSet,
    cap_directions,
    curved_check,
    estimate_impedance,
    fibonacci_directions,
    linear_trace_basis,
    oracle_samples,
    recover_tensor_from_energy,
    recover_tensor_from_impedance,
    recover_via_acoustic,
    require_curved,
    synthesize_impedance_samples,
    tangent_directions,
)
from elastodn.errors import EmptyPatch, FlatPatch, RankDeficient
from elastodn.fem import SubdomainMap, ball_mesh, boundary_patch, box_mesh, local_dn_matrix
from elastodn.fem.mesh import SurfacePatch, cylinder_patch, flat_patch, spherical_cap_patch
from elastodn.stroh import impedance
from elastodn.tensor import acoustic_tensor, isotropic, random_tensor, relative_error, transversely_isotropic

TI = transversely_isotropic(3.0, 2.0, 0.7, 0.9, 1.2, axis=(1.0, 1.0, 0.5))


@pytest.mark.parametrize("n", [1, 7, 40])
def test_fibonacci_unit(n):
    L = fibonacci_directions(n)
    assert L.shape == (n, 3)
    np.testing.assert_allclose(np.linalg.norm(L, axis=1), 1.0, atol=1e-15)


def test_cap_directions_within_angle():
    axis = np.array([0.3, -0.2, 1.0])
    L = cap_directions(40, np.radians(30), axis=axis)
    ang = np.degrees(np.arccos(L @ (axis / np.linalg.norm(axis))))
    assert ang.max() <= 30 + 1e-9
    assert len(np.unique(L.round(12), axis=0)) == 40


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1))
def test_tangent_directions_orthogonal(a, b, c):
    n = np.array([a, b, c]) / np.linalg.norm([a, b, c])
    L = tangent_directions(n, 6)
    np.testing.assert_allclose(L @ n, 0.0, atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(L, axis=1), 1.0, atol=1e-14)


@pytest.mark.parametrize("patch,curved", [
    (spherical_cap_patch(np.radians(30)), True),
    (cylinder_patch(), True),
    (flat_patch(), False),
], ids=["cap", "cylinder", "flat"])
def test_curved_check(patch, curved):
    rep = curved_check(patch)
    assert rep.curved is curved
    assert bool(rep) is curved
    assert rep.n_faces == len(patch.faces)


def test_flat_patch_raises():
    with pytest.raises(FlatPatch):
        require_curved(flat_patch())
    with pytest.raises(FlatPatch):
        synthesize_impedance_samples(TI, flat_patch())


def test_empty_patch_raises():
    p = flat_patch()
    with pytest.raises(EmptyPatch):
        curved_check(SurfacePatch(p.vertices, np.zeros((0, 3), dtype=np.int64)))


def test_two_flat_components_not_curved():
    # two separate flat squares with different normals: no continuous curve
    a = flat_patch(2)
    v2 = a.vertices @ np.array([[1, 0, 0], [0, 0, 1], [0, -1, 0]]).T + [5.0, 0, 0]
    V = np.vstack([a.vertices, v2])
    F = np.vstack([a.faces, a.faces + len(a.vertices)])
    rep = curved_check(SurfacePatch(V, F))
    assert rep.n_components == 2
    assert not rep.curved
    assert rep.diameter > 1.0


def test_oracle_roundtrip_general(rng):
    C = random_tensor(rng)
    Ch, rep = recover_tensor_from_impedance(oracle_samples(C, fibonacci_directions(40)))
    assert relative_error(Ch, C) < 1e-6
    assert rep.jacobian_rank == 21
    assert rep.residual_history[-1] <= rep.residual_history[0]


def test_oracle_roundtrip_from_patch():
    S = synthesize_impedance_samples(TI, spherical_cap_patch(np.radians(45)), 6, max_points=8)
    assert S.meta["points"] == 8
    Ch, _ = recover_tensor_from_impedance(S)
    assert relative_error(Ch, TI) < 1e-6


def test_too_few_directions():
    with pytest.raises(RankDeficient):
        recover_tensor_from_impedance(oracle_samples(TI, fibonacci_directions(6)))


def test_sample_set_csv_roundtrip(tmp_path):
    S = oracle_samples(TI, fibonacci_directions(9), patch_id="p")
    S.save_csv(tmp_path / "s.csv")
    T = SampleSet.load_csv(tmp_path / "s.csv")
    np.testing.assert_allclose(T.directions, S.directions, atol=0)
    np.testing.assert_allclose(T.values, S.values, rtol=1e-15)


def test_rotated_samples(rng):
    from elastodn.tensor import random_rotation, rotate_tensor

    Q = random_rotation(rng)
    S = oracle_samples(TI, fibonacci_directions(5)).rotated(Q)
    for s in S.samples:
        np.testing.assert_allclose(s.z, impedance(rotate_tensor(TI, Q), s.l).z, atol=1e-12)


def test_acoustic_roundtrip(rng):
    C = random_tensor(rng)
    xi = rng.standard_normal((21, 3))
    Ch = recover_via_acoustic([AcousticSample(x, acoustic_tensor(C, x)) for x in xi])
    assert relative_error(Ch, C) < 1e-10


def test_acoustic_planar_rank_deficient():
    t = np.linspace(0, np.pi, 30, endpoint=False)
    xi = np.column_stack([np.cos(t), np.sin(t), np.zeros_like(t)])
    with pytest.raises(RankDeficient):
        recover_via_acoustic([(x, acoustic_tensor(TI, x)) for x in xi])


def test_energy_route_exact_on_block():
    ph = ball_mesh(3)
    M = ph.mesh
    dn = local_dn_matrix(M, SubdomainMap(np.zeros(len(M.tets), int), {0: TI}), boundary_patch(M))
    B = linear_trace_basis(M.vertices[dn.vertex_ids])
    assert B.shape == (3 * len(dn.vertex_ids), 6)
    Ch = recover_tensor_from_energy(dn, M.vertices[dn.vertex_ids], float(M.volumes.sum()))
    assert relative_error(Ch, TI) < 1e-12


def _estimator_errors(m):
    M = box_mesh((m, m, m // 2), (0, 0, 0), (1, 1, 0.5))
    patch = boundary_patch(M, lambda c: c[:, 2] > 0.5 - 1e-9)
    dn = local_dn_matrix(M, SubdomainMap(np.zeros(len(M.tets), int), {0: TI}), patch)
    S = estimate_impedance(dn, patch, 4, max_points=1, radius=0.45)
    return np.mean([np.linalg.norm(s.z - impedance(TI, s.l).z) / np.linalg.norm(impedance(TI, s.l).z)
                    for s in S.samples])


def test_estimator_improves_with_refinement():
    errs = [_estimator_errors(m) for m in (8, 12, 16)]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.xfail(strict=True, reason="estimator mode is experimental: about 20% error at this mesh size")
def test_estimator_within_five_percent():
    assert _estimator_errors(16) < 0.05


def test_synthesize_rejects_unknown_source():
    with pytest.raises(TypeError):
        synthesize_impedance_samples("not a source", spherical_cap_patch(0.5))


def test_isotropic_zero_im_part():
    S = oracle_samples(isotropic(1, 1), fibonacci_directions(3))
    assert all(np.allclose(s.z, s.z.conj().T) for s in S.samples)
