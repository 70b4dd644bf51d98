"""End-to-end reconstruction along the planned chains."""

from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..boundary import recover_tensor_from_energy, recover_tensor_from_impedance, synthesize_impedance_samples
from ..errors import ConfigError, ElastoDNError
from ..fem.dn import DnMapMatrix, local_dn_matrix
from ..fem.mesh import SubdomainMap, SurfacePatch, region_boundary
from ..stripping import LayerGeometry, direct_inner_dn, smooth_trace_error, strip_layer
from ..tensor import relative_error
from .config import ExperimentConfig, Inputs, load_inputs
from .plan import Plan, plan_chains

# config fields that do not influence any number in the report
RUN_ONLY_FIELDS = ("seed", "workers", "output_dir")


@dataclass
class BlockResult:
    label: int
    depth: int
    path: list
    method: str
    status: str                      # ok | failed | blocked
    voigt: list | None = None
    true_voigt: list | None = None
    error: float | None = None
    residual: float | None = None
    message: str = ""
    fit: dict | None = None


@dataclass
class StepResult:
    label: int                       # the stripped layer
    inner_labels: list
    status: str
    strip_error: float | None = None
    smooth_error: float | None = None
    runge_residual: float | None = None
    runge_rank: int | None = None
    retained_rank: int | None = None
    symmetrization_defect: float | None = None
    sigma2_vertices: int | None = None
    svd_spectrum: list = field(default_factory=list)
    message: str = ""


@dataclass
class ReconstructionReport:
    status: str                      # completed | undetermined | failed | empty
    mesh_fingerprint: str = ""
    config: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)
    blocks: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return {"completed": 0, "empty": 0, "undetermined": 2}.get(self.status, 1)

    def block(self, label: int) -> BlockResult:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def step(self, label: int) -> StepResult:
        for s in self.steps:
            if s.label == label:
                return s
        raise KeyError(label)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "mesh_fingerprint": self.mesh_fingerprint,
            "config": self.config,
            "plan": self.plan,
            "blocks": [asdict(b) for b in self.blocks],
            "steps": [asdict(s) for s in self.steps],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ReconstructionReport":
        return cls(
            data["status"], data.get("mesh_fingerprint", ""), data.get("config", {}), data.get("plan", {}),
            [BlockResult(**b) for b in data.get("blocks", [])],
            [StepResult(**s) for s in data.get("steps", [])],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


@dataclass
class _Node:
    """Data available when block ``label`` is reached."""

    label: int
    path: tuple
    region: np.ndarray               # tets of Omega_i
    data: DnMapMatrix                # DN matrix on the data surface
    data_patch: SurfacePatch
    interface: SurfacePatch          # Gamma_i


def simulate(inputs: Inputs) -> DnMapMatrix:
    """Lambda^Sigma of the phantom (the synthetic measurement)."""
    return local_dn_matrix(inputs.mesh, inputs.smap, inputs.sigma)


def _energy_applicable(inputs: Inputs, node: _Node) -> bool:
    block = inputs.smap.tets_of(node.label)
    if len(block) != len(node.region):
        return False
    bverts = np.unique(region_boundary(inputs.mesh, block)[:, :3])
    return bool(np.all(np.isin(bverts, node.data.vertex_ids)))


def _choose_method(cfg: ExperimentConfig, inputs: Inputs, node: _Node) -> str:
    closed = _energy_applicable(inputs, node)
    if cfg.block_method == "energy":
        if not closed:
            raise ConfigError(f"energy route needs data on the whole boundary of block {node.label}")
        return "energy"
    if cfg.block_method == "auto" and closed and len(node.path) > 1:
        return "energy"
    return f"impedance-{cfg.impedance_mode}"


def _recover(cfg: ExperimentConfig, inputs: Inputs, node: _Node, archive: Path | None) -> BlockResult:
    mesh, smap = inputs.mesh, inputs.smap
    truth = smap.materials.get(node.label)
    res = BlockResult(node.label, len(node.path), list(node.path), "", "failed",
                      true_voigt=None if truth is None else truth.voigt.tolist())
    try:
        res.method = _choose_method(cfg, inputs, node)
        if res.method == "energy":
            block = smap.tets_of(node.label)
            C = recover_tensor_from_energy(node.data, mesh.vertices[node.data.vertex_ids],
                                           float(mesh.volumes[block].sum()))
            fitted = local_dn_matrix(mesh, smap.uniform(C), node.data_patch, block)
            res.residual = fitted.relative_error(node.data)
        else:
            if res.method == "impedance-oracle":
                if truth is None:
                    raise ConfigError(f"oracle mode needs the tensor of block {node.label}")
                source = truth
            else:
                source = node.data
            samples = synthesize_impedance_samples(source, node.interface, cfg.directions_per_point,
                                                   max_points=cfg.sample_points, order=cfg.quadrature_order,
                                                   curved_tol=cfg.curved_tol)
            C, fit = recover_tensor_from_impedance(samples, order=cfg.quadrature_order)
            zscale = float(np.sum(samples.weights * np.linalg.norm(samples.values, axis=(1, 2)) ** 2))
            res.residual = float(np.sqrt(fit.residual_history[-1] / zscale))
            res.fit = {k: fit.to_json()[k] for k in ("iterations", "jacobian_rank")}
            if archive is not None:
                samples.save_csv(archive / "samples" / f"block_{node.label}.csv")
                fit.save(archive / "fits" / f"block_{node.label}.json")
        res.voigt = C.voigt.tolist()
        res.error = None if truth is None else relative_error(C, truth)
        res.status = "ok"
    except (ElastoDNError, np.linalg.LinAlgError) as exc:
        res.message = f"{type(exc).__name__}: {exc}"
    return res


def _strip(cfg: ExperimentConfig, inputs: Inputs, node: _Node, C, children: list, plan: Plan,
           archive: Path | None) -> tuple[StepResult, list]:
    mesh, smap = inputs.mesh, inputs.smap
    layer = smap.tets_of(node.label)
    inner = np.setdiff1d(node.region, layer)
    inner_labels = sorted(int(x) for x in np.unique(smap.tet_labels[inner]))
    step = StepResult(node.label, inner_labels, "failed")
    try:
        geo = LayerGeometry(mesh, layer, inner, node.data_patch, C, name=f"strip{node.label}")
        out = strip_layer(node.data, geo, cfg.strip_regularization, cfg.source_layer,
                          tol=cfg.runge_tol, svd_tol=cfg.runge_svd_tol)
        d = out.diagnostics
        step.runge_residual = float(np.max(d["runge_residuals"]))
        step.runge_rank = int(d["runge_rank"])
        step.retained_rank = int(d["retained_rank"])
        step.symmetrization_defect = float(d["symmetrization_defect"])
        step.sigma2_vertices = int(d["sigma2_vertices"])
        step.svd_spectrum = [float(x) for x in d["svd_spectrum"]]
        if step.runge_residual > cfg.runge_tol:
            step.message = f"Runge residual {step.runge_residual:.2e} above runge_tol {cfg.runge_tol:g}"
        if all(lab in smap.materials for lab in inner_labels):
            ref = direct_inner_dn(geo, smap)
            step.strip_error = out.sigma2.relative_error(ref)
            step.smooth_error = smooth_trace_error(out.sigma2, ref, mesh.vertices[ref.vertex_ids])
        if archive is not None:
            out.sigma2.save(archive / "operators" / f"after_strip_{node.label}")
        step.status = "ok"
    except (ElastoDNError, np.linalg.LinAlgError) as exc:
        step.message = f"{type(exc).__name__}: {exc}"
        return step, []
    nxt = []
    for b in children:
        chain = plan.chain_to(b)
        nxt.append(_Node(b, chain.labels, inner, out.sigma2, geo.sigma2, chain.interfaces[-1]))
    return step, nxt


def _process(cfg, inputs, plan, tree, node, archive):
    block = _recover(cfg, inputs, node, archive)
    kids = tree.get(node.label, [])
    if block.status != "ok" or not kids:
        return block, None, []
    from ..tensor import make_elasticity_tensor

    step, nxt = _strip(cfg, inputs, node, make_elasticity_tensor(block.voigt), kids, plan, archive)
    return block, step, nxt


def _config_record(cfg: ExperimentConfig) -> dict:
    d = cfg.to_json()
    for k in RUN_ONLY_FIELDS:
        d.pop(k, None)
    return d


def _blocked(label: int, plan: Plan, reason: str) -> BlockResult:
    chain = plan.chain_to(label)
    return BlockResult(label, chain.depth, list(chain.labels), "", "blocked", message=reason)


def run_reconstruction(cfg: ExperimentConfig, inputs: Inputs | None = None, archive: bool = True,
                       timings: dict | None = None) -> ReconstructionReport:
    """Simulate Lambda^Sigma for the phantom and walk every chain.

    Blocks are processed breadth-first; blocks of one depth are
    independent and run concurrently on ``cfg.workers`` threads. Errors of
    one step are recorded and only block the chains through it. The
    seed is recorded but nothing here is random.
    """
    t0 = time.perf_counter()
    inputs = inputs or load_inputs(cfg)
    plan = plan_chains(inputs.mesh, inputs.smap, inputs.sigma, cfg.curved_tol)
    arch = cfg.out_path if archive else None
    if arch is not None:
        for sub in ("operators", "samples", "fits"):
            (arch / sub).mkdir(parents=True, exist_ok=True)
    report = ReconstructionReport("completed", inputs.mesh.fingerprint, _config_record(cfg), plan.to_json())
    tree: dict = {}
    for c in plan.chains:
        if c.depth > 1:
            tree.setdefault(c.labels[-2], []).append(c.target)
    lam = simulate(inputs)
    if arch is not None:
        lam.save(arch / "operators" / "lambda_sigma")
    t_sim = time.perf_counter()
    root = plan.chain_to(plan.root)
    level = [_Node(plan.root, root.labels, np.arange(len(inputs.mesh.tets)), lam, inputs.sigma, inputs.sigma)]
    done: set = set()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            while level:
                outs = list(pool.map(lambda n: _process(cfg, inputs, plan, tree, n, arch), level))
                level = []
                for block, step, nxt in outs:
                    report.blocks.append(block)
                    done.add(block.label)
                    if step is not None:
                        report.steps.append(step)
                    level.extend(nxt)
    for c in plan.chains:
        if c.target not in done:
            report.blocks.append(_blocked(c.target, plan, "an earlier step of the chain failed"))
    report.blocks.sort(key=lambda b: (b.depth, b.label))
    report.steps.sort(key=lambda s: s.label)
    failed = any(b.status != "ok" for b in report.blocks) or any(s.status != "ok" for s in report.steps)
    if failed:
        report.status = "failed"
    elif plan.undetermined:
        report.status = "undetermined"
    if timings is not None:
        timings.update({"simulate_s": t_sim - t0, "total_s": time.perf_counter() - t0})
    return report
