"""Configuration, chain planning, reconstruction runs and reports."""

import json

import numpy as np
import pytest

from elastodn.errors import ConfigError, MeshError, NotStronglyConvex, SigmaAmbiguous, SigmaFlat
from elastodn.fem import SubdomainMap, ball_mesh, boundary_patch, box_mesh, nested_labels
from elastodn.pipeline import (
    ReconstructionReport,
    emit_report,
    intersect_partitions,
    load_config,
    load_inputs,
    load_report,
    plan_chains,
    run_reconstruction,
    write_phantom,
)
from elastodn.pipeline.cli import main
from elastodn.tensor import isotropic

ISO = isotropic(1.0, 1.0)


@pytest.fixture(scope="module")
def three_shell(tmp_path_factory):
    d = tmp_path_factory.mktemp("three")
    cfg = load_config(write_phantom(d, "three-shell", n=4))
    return cfg, run_reconstruction(cfg)


def test_config_defaults(tmp_path):
    cfg = load_config(write_phantom(tmp_path, "one-block", n=2))
    assert cfg.quadrature_order == 64
    assert cfg.sigma == {"kind": "all"}
    assert cfg.mesh_path.with_suffix(".nodes").is_file()


@pytest.mark.parametrize("text,match", [
    ('mesh = "m"\n', "materials"),
    ('mesh = "m"\nmaterials = "x"\nbogus = 1\n', "unknown"),
    ('mesh = "m"\nmaterials = "x"\nsigma = "sideways"\n', "sigma.kind"),
    ('mesh = "m"\nmaterials = "x"\nquadrature_order = 7\n', "quadrature"),
    ('mesh = "m"\nmaterials = "x"\nimpedance_mode = "guess"\n', "impedance_mode"),
    ('mesh = = 1\n', None),
], ids=["missing-key", "unknown-key", "sigma-kind", "order", "mode", "syntax"])
def test_config_errors(tmp_path, text, match):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(p)


def test_missing_mesh_detected_before_compute(tmp_path):
    cfg = load_config(write_phantom(tmp_path, "one-block", n=2))
    cfg.mesh_path.with_suffix(".elements").unlink()
    with pytest.raises(ConfigError, match="not found"):
        load_inputs(cfg)


def test_nonconvex_materials_rejected(tmp_path):
    cfg = load_config(write_phantom(tmp_path, "nonconvex", n=2))
    with pytest.raises(NotStronglyConvex):
        run_reconstruction(cfg)
    assert not cfg.out_path.exists()


def test_sigma_selectors(tmp_path):
    cfg = load_config(write_phantom(tmp_path, "one-block", n=3))
    inp = load_inputs(cfg)
    cfg.sigma = {"kind": "cap", "axis": [0, 0, 1], "half_angle_deg": 60}
    from elastodn.pipeline import sigma_patch

    cap = sigma_patch(cfg, inp.mesh)
    assert 0 < len(cap.faces) < len(inp.mesh.boundary_faces)
    faces = tmp_path / "sigma.faces"
    faces.write_text("\n".join(" ".join(map(str, f + 1)) for f in cap.faces))
    cfg.sigma = {"kind": "faces", "file": str(faces)}
    assert len(sigma_patch(cfg, inp.mesh).faces) == len(cap.faces)


def test_plan_single_block():
    M = ball_mesh(2).mesh
    smap = SubdomainMap(np.zeros(len(M.tets), dtype=np.int64), {0: ISO})
    plan = plan_chains(M, smap, boundary_patch(M))
    assert [c.labels for c in plan.chains] == [(0,)]
    assert plan.undetermined == ()


def test_plan_three_shells():
    ph = ball_mesh(4)
    smap = SubdomainMap(nested_labels(ph, (3, 1)), {0: ISO, 1: ISO, 2: ISO})
    plan = plan_chains(ph.mesh, smap, boundary_patch(ph.mesh))
    assert [c.depth for c in plan.chains] == [1, 2, 3]
    assert plan.chain_to(2).labels == (0, 1, 2)
    assert all(r.curved for c in plan.chains for r in c.curvature)


def test_plan_flat_interface_undetermined():
    M = box_mesh((4, 4, 4))
    z = M.vertices[M.tets].mean(axis=1)[:, 2]
    smap = SubdomainMap((z < 0.5).astype(np.int64), {0: ISO, 1: ISO})
    plan = plan_chains(M, smap, boundary_patch(M, lambda c: c[:, 2] > 0.5))
    assert [c.labels for c in plan.chains] == [(0,)]
    (u,) = plan.undetermined
    assert u.label == 1
    assert u.patches == ("interface:0-1",)
    with pytest.raises(SigmaAmbiguous):
        plan_chains(M, smap, boundary_patch(M))
    with pytest.raises(SigmaFlat):
        plan_chains(M, smap, boundary_patch(M, lambda c: c[:, 2] > 0.99))


def test_plan_lexicographic_tie_break():
    # core 3 touches both 1 and 2, which both touch the outer block 0
    ph = ball_mesh(4)
    lab = nested_labels(ph, (2,))
    x = ph.mesh.vertices[ph.mesh.tets].mean(axis=1)[:, 0]
    lab = np.where(lab == 1, 3, np.where(ph.cell_shell == 3, np.where(x > 0, 2, 1), 0))
    smap = SubdomainMap(lab, {k: ISO for k in range(4)})
    smap.validate(ph.mesh)
    plan = plan_chains(ph.mesh, smap, boundary_patch(ph.mesh))
    assert plan.chain_to(3).labels == (0, 1, 3)


def test_intersect_partitions():
    ph = ball_mesh(3)
    a = SubdomainMap(nested_labels(ph, (1,)), {0: ISO, 1: ISO})
    b = SubdomainMap(nested_labels(ph, (2,)), {0: ISO, 1: ISO})
    c = intersect_partitions(ph.mesh, a, b)
    assert c.labels == [0, 1, 2]
    x = ph.mesh.vertices[ph.mesh.tets].mean(axis=1)[:, 0]
    halves = SubdomainMap((x > 0).astype(np.int64), {0: ISO, 1: ISO})
    d = intersect_partitions(ph.mesh, a, halves)
    assert len(d.labels) == 4
    with pytest.raises(MeshError):
        intersect_partitions(ph.mesh, a, SubdomainMap((np.abs(x) > 0.5).astype(np.int64), {0: ISO, 1: ISO}))


def test_three_shell_run(three_shell):
    cfg, rep = three_shell
    assert rep.status == "completed"
    assert rep.exit_code == 0
    assert [b.depth for b in rep.blocks] == [1, 2, 3]
    assert rep.block(0).error < 1e-6
    assert rep.block(2).method == "energy"
    assert rep.block(2).error < 1e-6
    assert all(s.strip_error < 1e-6 for s in rep.steps)
    assert (cfg.out_path / "operators" / "after_strip_1.dn.json").is_file()


def test_report_roundtrip(three_shell, tmp_path):
    _, rep = three_shell
    paths = emit_report(rep, tmp_path)
    assert load_report(tmp_path) == rep
    names = {p.name for p in paths}
    assert {"report.json", "blocks.csv", "steps.csv", "error_vs_depth.csv", "error_vs_depth.png"} <= names
    rows = (tmp_path / "error_vs_depth.csv").read_text().splitlines()
    assert rows[0] == "depth,label,error,upstream_strip_error"
    assert len(rows) == 4


def test_empty_report(tmp_path):
    rep = ReconstructionReport("empty")
    emit_report(rep, tmp_path)
    assert load_report(tmp_path) == rep
    assert (tmp_path / "blocks.csv").read_text().count("\n") == 1
    assert rep.exit_code == 0


def test_determinism(tmp_path):
    cfg = load_config(write_phantom(tmp_path, "two-block", n=3))
    a = run_reconstruction(cfg, archive=False)
    cfg.seed, cfg.workers = 12345, 1
    b = run_reconstruction(cfg, archive=False)
    assert a.dumps() == b.dumps()


def test_undetermined_run(tmp_path):
    cfg = load_config(write_phantom(tmp_path, "flat-attached", n=4))
    rep = run_reconstruction(cfg, archive=False)
    assert rep.status == "undetermined"
    assert rep.exit_code == 2
    assert rep.plan["undetermined"][0]["patches"] == ["interface:0-1"]


def test_random_phantom_seeded(tmp_path):
    write_phantom(tmp_path / "a", "two-block", n=2, random_materials=True, seed=7)
    write_phantom(tmp_path / "b", "two-block", n=2, random_materials=True, seed=7)
    write_phantom(tmp_path / "c", "two-block", n=2, random_materials=True, seed=8)
    a, b, c = (json.loads((tmp_path / k / "materials.json").read_text()) for k in "abc")
    assert a == b
    assert a != c


class TestCli:
    def test_verbs(self, tmp_path, capsys):
        assert main(["phantom", str(tmp_path), "--preset", "one-block", "--n", "2"]) == 0
        cfg = str(tmp_path / "config.toml")
        assert main(["validate", cfg]) == 0
        assert main(["plan", cfg]) == 0
        assert main(["simulate", cfg]) == 0
        assert (tmp_path / "out" / "operators" / "lambda_sigma.dn.json").is_file()
        assert main(["reconstruct", cfg, "--seed", "3"]) == 0
        assert json.loads((tmp_path / "out" / "run.json").read_text())["seed"] == 3
        assert main(["report", cfg, "--no-figures"]) == 0
        assert "chain 0" in capsys.readouterr().out

    def test_exit_codes(self, tmp_path):
        main(["phantom", str(tmp_path / "f"), "--preset", "flat-attached", "--n", "2"])
        assert main(["plan", str(tmp_path / "f" / "config.toml")]) == 2
        main(["phantom", str(tmp_path / "s"), "--preset", "flat-sigma", "--n", "2"])
        assert main(["reconstruct", str(tmp_path / "s" / "config.toml")]) == 1
        assert main(["validate", str(tmp_path / "missing.toml")]) == 1

    def test_tensor_verb(self, tmp_path):
        from elastodn.tensor import load_tensor, transversely_isotropic

        out = tmp_path / "t.json"
        assert main(["tensor", "ti", "3", "2", "0.7", "0.9", "1.2", "--axis", "1", "1", "0.5", "-o", str(out)]) == 0
        assert load_tensor(out) == transversely_isotropic(3.0, 2.0, 0.7, 0.9, 1.2, axis=(1.0, 1.0, 0.5))
        assert main(["tensor", "isotropic", "1", "-1", "-o", str(out)]) == 1
