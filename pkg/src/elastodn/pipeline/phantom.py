"""Synthetic phantoms written as mesh + materials + config files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..fem.mesh import SubdomainMap, ball_mesh, box_mesh, nested_labels
from ..tensor import cubic, isotropic, random_tensor, transversely_isotropic

PRESETS = ("one-block", "two-block", "three-shell", "flat-attached", "flat-sigma", "nonconvex")

OUTER = isotropic(1.0, 1.0)
TILTED = transversely_isotropic(3.0, 2.0, 0.7, 0.9, 1.2, axis=(1.0, 1.0, 0.5))
CORE = cubic(2.0, 0.8, 0.9)


def _materials(n_labels: int, defaults: list, rng: np.random.Generator | None) -> dict:
    if rng is None:
        return {k: defaults[k] for k in range(n_labels)}
    return {k: random_tensor(rng) for k in range(n_labels)}


def _config_text(sigma: str, extra: str = "") -> str:
    return (
        'mesh = "mesh"\n'
        'materials = "materials.json"\n'
        "quadrature_order = 64\n"
        "runge_svd_tol = 1e-12\n"
        "runge_tol = 1e-6\n"
        "strip_regularization = 1e-8\n"
        "source_layer = 0\n"
        'impedance_mode = "oracle"\n'
        'block_method = "auto"\n'
        'output_dir = "out"\n'
        "seed = 0\n"
        f"{extra}"
        f"{sigma}\n"  # a [sigma] table must come last
    )


def write_phantom(out_dir, preset: str = "two-block", n: int | None = None, random_materials: bool = False,
                  seed: int = 0) -> Path:
    """Write ``mesh.*``, ``materials.json`` and ``config.toml``; returns the config path.

    Presets: nested balls with 1, 2 or 3 blocks (curved interfaces); a box
    whose lower half hangs on a flat interface; a box measured on one flat
    face; and a ball whose material file is not strongly convex.
    ``random_materials`` replaces the default tensors by draws from
    :func:`random_tensor` seeded by ``seed``.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed) if random_materials else None
    sigma = 'sigma = "all"'
    if preset in ("one-block", "two-block", "three-shell", "nonconvex"):
        n = n or {"one-block": 4, "two-block": 6, "three-shell": 6, "nonconvex": 3}[preset]
        ph = ball_mesh(n)
        mesh = ph.mesh
        cuts = {"one-block": (), "two-block": (n // 2,), "three-shell": (2 * n // 3, n // 3), "nonconvex": ()}[preset]
        labels = nested_labels(ph, cuts)
        mats = _materials(len(cuts) + 1, [OUTER, TILTED, CORE], rng)
    else:
        n = n or 4
        mesh = box_mesh((n, n, n))
        z = mesh.vertices[mesh.tets].mean(axis=1)[:, 2]
        if preset == "flat-attached":
            labels = (z < 0.5).astype(np.int64)
            mats = _materials(2, [OUTER, CORE], rng)
            sigma = '[sigma]\nkind = "halfspace"\nnormal = [0.0, 0.0, 1.0]\noffset = 0.5'
        else:
            labels = np.zeros(len(mesh.tets), dtype=np.int64)
            mats = _materials(1, [OUTER], rng)
            sigma = '[sigma]\nkind = "halfspace"\nnormal = [0.0, 0.0, 1.0]\noffset = 0.99'
    mesh.save(out / "mesh")
    smap = SubdomainMap(labels, mats)
    data = smap.to_json()
    if preset == "nonconvex":
        bad = np.asarray(data["materials"]["0"])
        bad[3, 3] = -0.5
        data["materials"]["0"] = bad.tolist()
    (out / "materials.json").write_text(json.dumps(data))
    cfg = out / "config.toml"
    cfg.write_text(_config_text(sigma))
    return cfg
