"""Experiment configuration read from a TOML key/value file."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..boundary import CURVED_TOL
from ..errors import ConfigError
from ..fem.mesh import SubdomainMap, SurfacePatch, TetMesh, boundary_patch, load_mesh_prefix, load_subdomain_map
from ..stripping import RUNGE_SVD_TOL, RUNGE_TOL, STRIP_REGULARIZATION
from ..stroh import DEFAULT_ORDER

MESH_SUFFIXES = (".nodes", ".elements", ".boundary")
SIGMA_KINDS = ("all", "cap", "halfspace", "faces")
IMPEDANCE_MODES = ("oracle", "estimator")
BLOCK_METHODS = ("auto", "impedance", "energy")


@dataclass
class ExperimentConfig:
    """All inputs of a run. Relative paths are resolved against ``base_dir``.

    ``sigma`` selects the measurement patch among the boundary faces:
    ``{"kind": "all"}``, ``{"kind": "cap", "axis": [...], "half_angle_deg": a}``,
    ``{"kind": "halfspace", "normal": [...], "offset": d}`` (centroid . normal > d)
    or ``{"kind": "faces", "file": path}`` (1-based vertex triples).
    """

    mesh: str
    materials: str
    sigma: dict = field(default_factory=lambda: {"kind": "all"})
    quadrature_order: int = DEFAULT_ORDER
    runge_svd_tol: float = RUNGE_SVD_TOL
    runge_tol: float = RUNGE_TOL
    strip_regularization: float = STRIP_REGULARIZATION
    source_layer: int = 0
    impedance_mode: str = "oracle"
    block_method: str = "auto"
    directions_per_point: int = 6
    sample_points: int = 8
    curved_tol: float = CURVED_TOL
    output_dir: str = "out"
    seed: int = 0
    workers: int = 2
    compare_materials: str | None = None
    base_dir: str = "."

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def mesh_path(self) -> Path:
        return self.path(self.mesh)

    @property
    def materials_path(self) -> Path:
        return self.path(self.materials)

    @property
    def out_path(self) -> Path:
        return self.path(self.output_dir)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def check(self) -> None:
        """Field-level checks that need no file access."""
        kind = self.sigma.get("kind")
        if kind not in SIGMA_KINDS:
            raise ConfigError(f"sigma.kind must be one of {SIGMA_KINDS}, got {kind!r}")
        if self.impedance_mode not in IMPEDANCE_MODES:
            raise ConfigError(f"impedance_mode must be one of {IMPEDANCE_MODES}")
        if self.block_method not in BLOCK_METHODS:
            raise ConfigError(f"block_method must be one of {BLOCK_METHODS}")
        if self.quadrature_order < 4 or self.quadrature_order % 2:
            raise ConfigError("quadrature_order must be an even integer >= 4")
        for name in ("runge_svd_tol", "runge_tol", "strip_regularization", "curved_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.source_layer < 0:
            raise ConfigError("source_layer must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for key in ("mesh", "materials"):
        if key not in data:
            raise ConfigError(f"{path}: missing required key {key!r}")
    sigma = data.pop("sigma", "all")
    if isinstance(sigma, str):
        sigma = {"kind": sigma}
    known = set(ExperimentConfig.__dataclass_fields__) - {"base_dir", "sigma"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    cfg = ExperimentConfig(sigma=dict(sigma), base_dir=str(path.parent), **data)
    cfg.check()
    return cfg


def _read_faces(path: Path) -> np.ndarray:
    rows = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].split()
        if line:
            rows.append([int(x) for x in line[-3:]])
    return np.array(rows, dtype=np.int64).reshape(-1, 3) - 1


def sigma_patch(cfg: ExperimentConfig, mesh: TetMesh) -> SurfacePatch:
    opts = cfg.sigma
    kind = opts["kind"]
    if kind == "all":
        return boundary_patch(mesh, name="sigma")
    if kind == "cap":
        axis = np.asarray(opts.get("axis", [0.0, 0.0, 1.0]), dtype=float)
        axis /= np.linalg.norm(axis)
        cos_a = np.cos(np.radians(float(opts["half_angle_deg"])))
        return boundary_patch(mesh, lambda c: (c @ axis) > cos_a * np.linalg.norm(c, axis=1), name="sigma")
    if kind == "halfspace":
        nrm = np.asarray(opts["normal"], dtype=float)
        off = float(opts.get("offset", 0.0))
        return boundary_patch(mesh, lambda c: c @ nrm > off, name="sigma")
    faces = _read_faces(cfg.path(opts["file"]))
    keys = set(map(tuple, np.sort(faces, axis=1).tolist()))
    bf = mesh.boundary_faces
    sel = np.array([tuple(f) in keys for f in np.sort(bf, axis=1).tolist()], dtype=bool)
    if sel.sum() != len(keys):
        raise ConfigError("sigma face file lists faces that are not boundary faces")
    return SurfacePatch(mesh.vertices, bf[sel], surface=bf, name="sigma")


@dataclass
class Inputs:
    config: ExperimentConfig
    mesh: TetMesh
    smap: SubdomainMap
    sigma: SurfacePatch


def load_inputs(cfg: ExperimentConfig) -> Inputs:
    """Read and validate every referenced file; no solve happens here.

    Raises ConfigError for missing files, MeshError for invalid meshes or
    maps, NotStronglyConvex / AsymmetricInput for bad materials.
    """
    for suf in MESH_SUFFIXES:
        p = cfg.mesh_path.with_suffix(suf)
        if not p.is_file():
            raise ConfigError(f"mesh file {p} not found")
    if not cfg.materials_path.is_file():
        raise ConfigError(f"materials file {cfg.materials_path} not found")
    smap = load_subdomain_map(cfg.materials_path)
    mesh = load_mesh_prefix(cfg.mesh_path)
    smap.validate(mesh)
    if cfg.compare_materials is not None:
        from .plan import intersect_partitions

        other = load_subdomain_map(cfg.path(cfg.compare_materials))
        smap = intersect_partitions(mesh, smap, other)
    sigma = sigma_patch(cfg, mesh)
    if len(sigma.faces) == 0:
        raise ConfigError("the measurement patch selects no boundary faces")
    return Inputs(cfg, mesh, smap, sigma)
