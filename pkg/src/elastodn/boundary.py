# ruff: noqa: E741
"""Boundary determination: impedance samples on a curved patch and the
recovery of a constant tensor from them.

Two recovery routes exist. The primary one fits all 21 constants to
impedance samples by Gauss-Newton on the forward map C -> Z(l). The second
is linear and consumes acoustic-tensor samples Q(xi) directly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import EmptyPatch, EstimatorDiverged, FlatPatch, NotConverged, RankDeficient
from .fem.dn import DnMapMatrix
from .fem.mesh import SurfacePatch
from .stroh import DEFAULT_ORDER, IMPEDANCE_COLUMNS, impedance_batch, rotating_frame, z_from_row
from .tensor import ElasticityTensor, isotropic, make_elasticity_tensor, params_to_tensor

CURVED_TOL = 1e-3
MIN_DIRECTIONS = 7
DISTINCT_TOL = 1e-9


# -- directions -------------------------------------------------------------------

def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` nearly uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    t = np.pi * (1.0 + 5.0 ** 0.5) * i
    return np.column_stack([r * np.cos(t), r * np.sin(t), z])


def cap_directions(n: int, half_angle: float, axis=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Golden-angle spiral restricted to the cap of ``half_angle`` around ``axis``."""
    from .tensor import rotation_to

    i = np.arange(n) + 0.5
    z = 1.0 - (1.0 - np.cos(half_angle)) * i / n
    r = np.sqrt(1.0 - z * z)
    t = np.pi * (1.0 + 5.0 ** 0.5) * i
    d = np.column_stack([r * np.cos(t), r * np.sin(t), z])
    return d @ rotation_to(axis).T


def tangent_directions(normal, count: int) -> np.ndarray:
    """``count`` directions on the half circle orthogonal to ``normal``.

    Half a circle suffices since Z(-l) is the complex conjugate of Z(l).
    """
    f = rotating_frame(np.asarray(normal, dtype=float))
    t = np.pi * np.arange(count) / count
    return np.cos(t)[:, None] * f.m0 + np.sin(t)[:, None] * f.n0


# -- samples ----------------------------------------------------------------------

@dataclass(frozen=True)
class ImpedanceSample:
    l: np.ndarray
    z: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Impedance samples at pairwise distinct directions."""

    samples: tuple
    patch_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = tuple(self.samples)
        if not s:
            raise ValueError("a sample set needs at least one sample")
        object.__setattr__(self, "samples", s)
        L = self.directions
        for i in range(1, len(L)):
            if np.min(np.linalg.norm(L[:i] - L[i], axis=1)) < DISTINCT_TOL:
                raise ValueError(f"direction {i} repeats an earlier one")

    def __len__(self):
        return len(self.samples)

    @property
    def directions(self) -> np.ndarray:
        return np.array([s.l for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s.z for s in self.samples])

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.samples], dtype=float)

    def rotated(self, Q) -> "SampleSet":
        Q = np.asarray(Q, dtype=float)
        return SampleSet(tuple(ImpedanceSample(Q @ s.l, Q @ s.z @ Q.T, s.weight) for s in self.samples),
                         self.patch_id, dict(self.meta))

    def save_csv(self, path) -> None:
        iu = np.triu_indices(3)
        iu1 = np.triu_indices(3, 1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(IMPEDANCE_COLUMNS + ["weight"])
            for s in self.samples:
                w.writerow([repr(float(x)) for x in (*s.l, *s.z.real[iu], *s.z.imag[iu1], s.weight)])

    @classmethod
    def load_csv(cls, path, patch_id: str = "") -> "SampleSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out = []
        for r in rows:
            l = np.array([float(r[c]) for c in ("l1", "l2", "l3")])
            re6 = [float(r[c]) for c in IMPEDANCE_COLUMNS[3:9]]
            im3 = [float(r[c]) for c in IMPEDANCE_COLUMNS[9:12]]
            out.append(ImpedanceSample(l, z_from_row(re6, im3), float(r.get("weight", 1.0))))
        return cls(tuple(out), patch_id)


def _dedupe(L: np.ndarray) -> np.ndarray:
    keep = []
    for i, l in enumerate(L):
        if all(np.linalg.norm(l - L[j]) >= DISTINCT_TOL for j in keep):
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def oracle_samples(C: ElasticityTensor, directions, order: int = DEFAULT_ORDER, patch_id: str = "") -> SampleSet:
    """Exact impedance samples at the given directions."""
    L = np.atleast_2d(np.asarray(directions, dtype=float))
    L = L / np.linalg.norm(L, axis=1)[:, None]
    L = L[_dedupe(L)]
    Z = impedance_batch(C, L, order)
    Z = 0.5 * (Z + np.conj(np.swapaxes(Z, -1, -2)))
    return SampleSet(tuple(ImpedanceSample(l, z) for l, z in zip(L, Z)), patch_id, {"mode": "oracle"})


# -- curvature --------------------------------------------------------------------

@dataclass(frozen=True)
class CurvatureReport:
    curved: bool
    diameter: float          # geodesic diameter of the facet-normal image (rad)
    walk_diameter: float     # largest diameter inside one edge-connected component
    n_faces: int
    n_components: int
    tol: float

    def __bool__(self):
        return self.curved

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("curved", "diameter", "walk_diameter", "n_faces", "n_components", "tol")}


def _normal_diameter(N: np.ndarray, chunk: int = 512) -> float:
    best = 1.0
    for i in range(0, len(N), chunk):
        best = min(best, float(np.min(N[i:i + chunk] @ N.T)))
    return float(np.arccos(np.clip(best, -1.0, 1.0)))


def curved_check(patch: SurfacePatch, tol: float = CURVED_TOL) -> CurvatureReport:
    """Discrete test of the curve condition on the normal image.

    The patch counts as curved when two facets joined by an edge-connected
    walk have normals more than ``tol`` apart; the normals along such a
    walk trace a path on the sphere through two distinct points.
    """
    if len(patch.faces) == 0:
        raise EmptyPatch(f"patch {patch.name!r} has no facets")
    N = patch.normals
    ncomp, comp = connected_components(patch.face_adjacency(), directed=False)
    walk = max(_normal_diameter(N[comp == c]) for c in range(ncomp))
    diam = _normal_diameter(N)
    return CurvatureReport(bool(walk > tol), diam, walk, len(N), int(ncomp), float(tol))


def require_curved(patch: SurfacePatch, tol: float = CURVED_TOL) -> CurvatureReport:
    rep = curved_check(patch, tol)
    if not rep.curved:
        raise FlatPatch(f"patch {patch.name!r} is flat: normal-image diameter {rep.walk_diameter:.3e} rad <= {tol:g}")
    return rep


# -- synthesis ----------------------------------------------------------------------

def _sample_faces(patch: SurfacePatch, count: int | None, allowed=None) -> np.ndarray:
    ids = np.arange(len(patch.faces)) if allowed is None else np.flatnonzero(allowed)
    if count is None or count >= len(ids):
        return ids
    return ids[np.round(np.linspace(0, len(ids) - 1, count)).astype(np.int64)]


def synthesize_impedance_samples(source, patch: SurfacePatch, directions_per_point: int = 6, *,
                                 max_points: int | None = 8, order: int = DEFAULT_ORDER,
                                 curved_tol: float = CURVED_TOL, **estimator_options) -> SampleSet:
    """Impedance samples for directions tangent to ``patch``.

    ``source`` may be an :class:`ElasticityTensor` (oracle mode: exact
    Z(l) for l in the tangent circle at each sampled facet) or a
    :class:`DnMapMatrix` on the patch (estimator mode, experimental; see
    :func:`estimate_impedance`).

    Raises
    ------
    FlatPatch
        when the patch fails :func:`curved_check`.
    """
    require_curved(patch, curved_tol)
    if isinstance(source, ElasticityTensor):
        faces = _sample_faces(patch, max_points)
        L = np.vstack([tangent_directions(patch.normals[f], directions_per_point) for f in faces])
        out = oracle_samples(source, L, order, patch.name)
        out.meta.update({"points": len(faces), "directions_per_point": directions_per_point})
        return out
    if isinstance(source, DnMapMatrix):
        return estimate_impedance(source, patch, directions_per_point, max_points=max_points, **estimator_options)
    raise TypeError(f"source must be an ElasticityTensor or DnMapMatrix, got {type(source).__name__}")


def _cutoff(d: np.ndarray, rho: float) -> np.ndarray:
    w = np.zeros_like(d)
    inside = d < rho
    w[inside] = np.cos(0.5 * np.pi * d[inside] / rho) ** 2
    return w


def estimate_impedance(dn: DnMapMatrix, patch: SurfacePatch, directions_per_point: int = 6, *,
                       max_points: int | None = 8, radius: float | None = None,
                       frequencies=None, divergence_tol: float = 1.0) -> SampleSet:
    """Experimental estimate of Z(P, l) from a DN matrix on ``patch``.

    Dirichlet data ``chi(x) exp(i k xi.(x - P)) e_p`` with a smooth cutoff
    ``chi`` of radius ``radius`` around P and xi = l x n(P) give

        k Z_qp(l) int chi^2  ~  conj(w_q) . (Lambda w_p)

    up to a cutoff error of order (k radius)^-2 and a P1 discretization
    error growing with k h. The quotient is evaluated on a frequency sweep
    (default k h = 0.4, 0.5, 0.6 for mean edge length h) and the cutoff
    term is removed by a least-squares fit in the basis (1, k^-2). The per-sample weight is
    ``1 / (1 + (delta / 0.05)^2)`` with ``delta`` the relative gap between
    the finest-frequency estimate and the extrapolated value.

    Raises
    ------
    EstimatorDiverged
        if an estimate is not finite, has an indefinite real part, or the
        extrapolation moves the finest estimate by more than
        ``divergence_tol`` relative.
    """
    X = np.asarray(patch.vertices)[dn.vertex_ids]
    edges = np.linalg.norm(np.asarray(patch.vertices)[patch.faces] - np.roll(np.asarray(patch.vertices)[patch.faces], 1, axis=1), axis=2)
    h = float(np.mean(edges))
    span = float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))
    if radius is None:
        radius = 0.5 * span
    if frequencies is None:
        frequencies = np.array([0.4, 0.5, 0.6]) / h
    ks = np.sort(np.asarray(frequencies, dtype=float))
    mass = dn.mass[0::3, 0::3]
    # sample only where the cutoff support stays inside the trace set
    cen = patch.centroids()
    rim = np.setdiff1d(patch.patch_vertices, dn.vertex_ids)
    if len(rim):
        dist = np.min(np.linalg.norm(cen[:, None] - np.asarray(patch.vertices)[rim][None], axis=2), axis=1)
        allowed = dist > radius
        if not np.any(allowed):
            raise EstimatorDiverged("patch too small for the cutoff radius")
    else:
        allowed = None
    faces = _sample_faces(patch, max_points, allowed)
    samples = []
    L_all = []
    for f in faces:
        P = cen[f]
        n = patch.normals[f]
        chi = _cutoff(np.linalg.norm(X - P, axis=1), radius)
        norm = float(chi @ mass @ chi)
        for l in tangent_directions(n, directions_per_point):
            xi = np.cross(l, n)
            phase = (X - P) @ xi
            est = []
            for k in ks:
                W = np.zeros((3 * len(X), 3), dtype=complex)
                for p in range(3):
                    W[p::3, p] = chi * np.exp(1j * k * phase)
                Zk = (W.conj().T @ (dn.matrix @ W)) / (k * norm)
                est.append(0.5 * (Zk + Zk.conj().T))
            est = np.array(est)
            A = np.column_stack([np.ones_like(ks), ks ** -2.0])
            coef = np.linalg.lstsq(A, est.reshape(len(ks), -1), rcond=None)[0]
            zinf = coef[0].reshape(3, 3)
            zinf = 0.5 * (zinf + zinf.conj().T)
            if not np.all(np.isfinite(zinf)) or np.linalg.eigvalsh(zinf.real)[0] <= 0:
                raise EstimatorDiverged(f"estimate at facet {int(f)} is not admissible")
            delta = float(np.linalg.norm(est[-1] - zinf) / np.linalg.norm(zinf))
            if delta > divergence_tol:
                raise EstimatorDiverged(f"frequency sweep moved by {delta:.2f} relative at facet {int(f)}")
            samples.append((l, zinf, 1.0 / (1.0 + (delta / 0.05) ** 2)))
            L_all.append(l)
    keep = _dedupe(np.array(L_all))
    out = tuple(ImpedanceSample(*samples[i]) for i in keep)
    return SampleSet(out, patch.name, {"mode": "estimator", "radius": radius, "frequencies": ks.tolist(),
                                       "points": len(faces), "directions_per_point": directions_per_point})


# -- Gauss-Newton recovery ------------------------------------------------------------

@dataclass
class FitReport:
    iterations: int
    residual_history: list
    jacobian_rank: int
    recovered_voigt: list
    singular_values: list = field(default_factory=list)
    converged: bool = True

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_history": [float(r) for r in self.residual_history],
            "jacobian_rank": self.jacobian_rank,
            "recovered_voigt": self.recovered_voigt,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


class _Forward:
    """Weighted residual map p (21 constants) -> R^(18 N)."""

    def __init__(self, samples: SampleSet, order: int):
        self.L = samples.directions
        self.z = samples.values
        self.sw = np.sqrt(samples.weights)[:, None, None]
        self.order = order

    def residual(self, p: np.ndarray) -> np.ndarray | None:
        C = ElasticityTensor(params_to_tensor(p))
        with np.errstate(all="ignore"):
            try:
                Z = impedance_batch(C, self.L, self.order)
            except np.linalg.LinAlgError:
                return None
        d = self.sw * (Z - self.z)
        r = np.concatenate([d.real.ravel(), d.imag.ravel()])
        return r if np.all(np.isfinite(r)) else None

    def jacobian(self, p: np.ndarray, step: float) -> np.ndarray:
        cols = []
        for i in range(len(p)):
            e = np.zeros_like(p)
            e[i] = step
            rp, rm = self.residual(p + e), self.residual(p - e)
            if rp is None or rm is None:
                raise NotConverged("forward map undefined next to the iterate")
            cols.append((rp - rm) / (2 * step))
        return np.column_stack(cols)


def isotropic_start(samples: SampleSet, order: int = DEFAULT_ORDER) -> ElasticityTensor:
    """Best isotropic tensor on a grid of lambda/mu, with the scale solved
    in closed form (Z is homogeneous of degree one in C)."""
    w = samples.weights
    z = samples.values
    best, best_C = np.inf, None
    for ratio in np.linspace(-0.6, 8.0, 87):
        base = isotropic(ratio, 1.0)
        Z0 = impedance_batch(base, np.array([[0.0, 0.0, 1.0]]), order)[0]
        num = float(np.sum(w * np.real(np.einsum("ij,nij->n", Z0.conj(), z))))
        den = float(np.sum(w) * np.vdot(Z0, Z0).real)
        t = num / den
        if t <= 0:
            continue
        res = float(np.sum(w * np.linalg.norm(t * Z0 - z, axis=(1, 2)) ** 2))
        if res < best:
            best, best_C = res, isotropic(t * ratio, t)
    if best_C is None:
        raise NotConverged("no admissible isotropic start")
    return best_C


def recover_tensor_from_impedance(samples: SampleSet, *, order: int = DEFAULT_ORDER, max_iter: int = 60,
                                  residual_tol: float = 1e-12, rank_tol: float = 1e-8,
                                  init: ElasticityTensor | None = None) -> tuple[ElasticityTensor, FitReport]:
    """Gauss-Newton fit of the 21 constants to impedance samples.

    Minimizes ``sum_i w_i ||Z_C(l_i) - z_i||_F^2``, starting from the best
    isotropic tensor. Steps use an Armijo backtracking line search, with
    Levenberg damping as a fallback when it fails.

    Raises
    ------
    RankDeficient
        fewer than 7 distinct directions, or numerical Jacobian rank < 21
        (singular values below ``rank_tol`` times the largest).
    NotConverged
        the iteration stalls with residual above ``residual_tol * sum ||z_i||^2``.
    NotStronglyConvex
        the fitted tensor fails validation.
    """
    if len(samples) < MIN_DIRECTIONS:
        raise RankDeficient(f"{len(samples)} directions given, at least {MIN_DIRECTIONS} are needed")
    fwd = _Forward(samples, order)
    p = (init or isotropic_start(samples, order)).params()
    scale = float(np.max(np.abs(p)))
    step = 1e-6 * scale
    zscale = float(np.sum(samples.weights * np.linalg.norm(samples.values, axis=(1, 2)) ** 2))
    target = residual_tol * zscale
    r = fwd.residual(p)
    f = float(r @ r)
    history = [f]
    J = None
    it = 0
    for it in range(1, max_iter + 1):
        J = fwd.jacobian(p, step)
        g = J.T @ r
        delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        accepted = False
        t = 1.0
        while t > 1e-4:
            q = p + t * delta
            rq = fwd.residual(q)
            if rq is not None and float(rq @ rq) <= f + 1e-4 * t * 2 * float(g @ delta):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            JtJ = J.T @ J
            mu = 1e-3 * float(np.max(np.diag(JtJ)))
            for _ in range(10):
                d = np.linalg.solve(JtJ + mu * np.eye(len(p)), -g)
                q = p + d
                rq = fwd.residual(q)
                if rq is not None and float(rq @ rq) < f:
                    accepted = True
                    break
                mu *= 10.0
        if not accepted:
            break
        moved = float(np.linalg.norm(q - p))
        p, r = q, rq
        f_new = float(r @ r)
        history.append(f_new)
        small = moved <= 1e-13 * np.linalg.norm(p) or f - f_new <= 1e-14 * f
        f = f_new
        if small or f <= 1e-30 * zscale:
            break
    J = fwd.jacobian(p, step)
    sv = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(sv > rank_tol * sv[0]))
    C = make_elasticity_tensor(params_to_tensor(p))
    report = FitReport(it, history, rank, C.voigt.tolist(), sv.tolist(), f <= target)
    if rank < 21:
        raise RankDeficient(f"Jacobian rank {rank} < 21 at the optimum")
    if f > target:
        raise NotConverged(f"residual {f:.3e} stalled above {target:.3e}")
    return C, report


# -- linear acoustic route ------------------------------------------------------------

@dataclass(frozen=True)
class AcousticSample:
    xi: np.ndarray
    q: np.ndarray


def _acoustic_design(xi: np.ndarray) -> np.ndarray:
    """Rows: the 6 independent entries of Q(xi); columns: the 21 constants."""
    from .tensor import voigt_to_full

    rows = []
    iu = np.triu_indices(3)
    for a, b in zip(*np.triu_indices(6)):
        E = np.zeros((6, 6))
        E[a, b] = E[b, a] = 1.0
        Q = np.einsum("ijkl,j,k->il", voigt_to_full(E), xi, xi)
        rows.append(Q[iu])
    return np.array(rows).T


def recover_via_acoustic(samples, rank_tol: float = 1e-10) -> ElasticityTensor:
    """Linear least squares for C from acoustic-tensor samples.

    ``samples`` holds :class:`AcousticSample` objects or ``(xi, Q)`` pairs
    with ``Q_il = sum_jk C_ijkl xi_j xi_k``.

    Raises
    ------
    RankDeficient
        when the directions do not determine all 21 constants (e.g. all in
        one plane).
    """
    pairs = [(s.xi, s.q) if isinstance(s, AcousticSample) else (s[0], s[1]) for s in samples]
    if not pairs:
        raise RankDeficient("no samples")
    iu = np.triu_indices(3)
    A = np.vstack([_acoustic_design(np.asarray(x, dtype=float)) for x, _ in pairs])
    b = np.concatenate([np.asarray(q, dtype=float)[iu] for _, q in pairs])
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > rank_tol * sv[0]))
    if rank < 21:
        raise RankDeficient(f"acoustic design has rank {rank} < 21")
    p = np.linalg.lstsq(A, b, rcond=None)[0]
    return make_elasticity_tensor(params_to_tensor(p))



# -- energy route for a block with data on its whole boundary -------------------------

def linear_trace_basis(coords) -> np.ndarray:
    """(3 k, 6) traces of the linear fields with unit engineering strain e_a."""
    from .tensor import VOIGT_PAIRS

    Y = np.asarray(coords, dtype=float)
    cols = []
    for a, b in VOIGT_PAIRS:
        E = np.zeros((3, 3))
        E[a, b] = E[b, a] = 1.0 if a == b else 0.5
        cols.append((Y @ E.T).ravel())
    return np.array(cols).T


def recover_tensor_from_energy(dn: DnMapMatrix, coords, volume: float) -> ElasticityTensor:
    """Constant tensor of a homogeneous block from its DN matrix on the whole
    block boundary.

    P1 reproduces linear fields, so for the trace ``b_a`` of the field with
    engineering strain ``e_a`` the discrete energy is ``b_a . Lambda b_b =
    vol * C_ab``. ``coords`` are the coordinates of ``dn.vertex_ids``.
    """
    B = linear_trace_basis(coords)
    Q = B.T @ dn.matrix @ B / volume
    return make_elasticity_tensor(0.5 * (Q + Q.T))
