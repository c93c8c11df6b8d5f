"""Two-phase search for critical points of the discrete weighted area.

Phase A (descend) is projected gradient descent with a backtracking
Armijo line search: boundary vertices slide on the clipping sphere (the
free boundary condition), positions are re-symmetrised and the mesh
re-homogenised on fixed cadences, and the phase ends once the cotangent
shrinker residual is small. Descent alone cannot terminate on a
self-shrinker, which is a saddle of the functional, so phase B
(refine_critical) minimises the squared norm of the projected gradient
with a damped Gauss-Newton method. Unknowns are reduced to one orbit
representative per symmetry orbit (boundary representatives keep two
degrees of freedom tangent to the sphere, representatives pinned by a
stabiliser keep only their invariant directions), and Jacobian action is
evaluated matrix-free by forward differences of the gradient.

Both phases report their progress in an EvolveTrace; stalls raise
structured errors carrying the last mesh and the trace.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsmr

from .equivariance import OrbitStructure, SymmetryGroup, orbit_structure, symmetrize
from .errors import (
    InvalidInputError,
    LineSearchStallError,
    NotEquivariantError,
    OrbitAmbiguousError,
    RefineStalledError,
    TopologyDriftError,
)
from .gaussmetric import (
    discrete_gauss_area,
    gauss_area_gradient,
    gauss_dual_areas,
    gradient_residual,
    shrinker_residual,
    vertex_normals,
)
from .remesh import remesh
from .trimesh import TriMesh, topology

MAX_HALVINGS = 60
STEP_GROWTH = 1.5
LM_GROWTH = 4.0
LM_SHRINK = 3.0
LM_BUDGET_FACTOR = 1e6


@dataclass
class EvolveConfig:
    """Solver knobs. descent_tol bounds the cotangent shrinker residual
    (phase A), refine_tol the projected-gradient residual (phase B), both
    Gaussian-weighted RMS in units 1/length."""

    R: float = 8.0
    descent_tol: float = 1e-2
    refine_tol: float = 1e-4
    armijo_c: float = 1e-4
    step_init: float = 1.0
    max_iters_A: int = 200
    max_iters_B: int = 60
    remesh_every: int = 25
    symmetrize_every: int = 5
    lm_damping_init: float = 1e-4

    def __post_init__(self):
        if not (
            self.R > 0
            and self.descent_tol > 0
            and self.refine_tol > 0
            and 0 < self.armijo_c < 1
            and self.step_init > 0
            and self.max_iters_A > 0
            and self.max_iters_B > 0
            and self.remesh_every > 0
            and self.symmetrize_every > 0
            and self.lm_damping_init > 0
        ):
            raise InvalidInputError("all EvolveConfig fields must be positive")
        if self.refine_tol >= self.descent_tol:
            raise InvalidInputError("refine_tol must be below descent_tol")

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text

    @classmethod
    def from_json(cls, source) -> "EvolveConfig":
        if isinstance(source, (str, bytes)) and "{" in str(source):
            data = json.loads(source)
        else:
            with open(source) as f:
                data = json.load(f)
        return cls(**data)


@dataclass
class EvolveTrace:
    """Per-iteration records; phase A entries carry (F_before, F_after)
    of each accepted step so monotonicity is checkable afterwards."""

    phase: str
    records: list = field(default_factory=list)

    def add(self, **kw) -> None:
        self.records.append(kw)

    def accepted_F(self) -> list:
        return [r["F"] for r in self.records if r.get("accepted", True)]

    def summary(self) -> dict:
        if not self.records:
            return {"phase": self.phase, "iterations": 0}
        last = self.records[-1]
        return {
            "phase": self.phase,
            "iterations": len(self.records),
            "final_F": last.get("F"),
            "final_cotan_rms": last.get("cotan_rms"),
            "final_grad_rms": last.get("grad_rms"),
            "remesh_events": sum(1 for r in self.records if "remesh" in r.get("events", ())),
            "symmetrize_events": sum(
                1 for r in self.records if "symmetrize" in r.get("events", ())
            ),
        }


def project_free_boundary(mesh: TriMesh, R: float) -> TriMesh:
    """Radially project boundary vertices onto |x| = R.

    Subsequent gradient steps keep their motion tangent to the sphere,
    which is the discrete free boundary condition: stationarity then
    forces asymptotically orthogonal contact with the sphere.
    """
    if R <= 0:
        raise InvalidInputError("R must be positive")
    if not mesh.boundary_flags.any():
        return mesh
    v = mesh.vertices.copy()
    b = mesh.boundary_flags
    r = np.linalg.norm(v[b], axis=1)
    if (r == 0).any():
        raise InvalidInputError("boundary vertex at the origin cannot be projected")
    if (np.abs(r - R) > 0.1 * R).any():
        raise InvalidInputError("boundary vertices too far from the clipping sphere")
    v[b] *= (R / r)[:, None]
    return mesh.with_vertices(v)


def _project_boundary_gradient(mesh: TriMesh, g: np.ndarray) -> np.ndarray:
    if not mesh.boundary_flags.any():
        return g
    out = g.copy()
    b = mesh.boundary_flags
    xb = mesh.vertices[b]
    xhat = xb / np.linalg.norm(xb, axis=1)[:, None]
    out[b] -= xhat * (out[b] * xhat).sum(1)[:, None]
    return out


def _renormalize_boundary(vertices: np.ndarray, flags: np.ndarray, R: float) -> None:
    if flags.any():
        xb = vertices[flags]
        vertices[flags] = xb * (R / np.linalg.norm(xb, axis=1))[:, None]


def _median_edge(mesh: TriMesh) -> float:
    from .trimesh import edge_lengths

    return float(np.median(edge_lengths(mesh)))


def descend(
    mesh: TriMesh,
    group: SymmetryGroup | None,
    config: EvolveConfig,
    target_edge: float | None = None,
) -> tuple[TriMesh, EvolveTrace]:
    """Phase A: symmetrised projected gradient descent with free boundary.

    Stops when the cotangent shrinker residual RMS drops below
    config.descent_tol or after max_iters_A iterations. Raises
    LineSearchStallError after 60 failed halvings and TopologyDriftError
    if a remesh checkpoint sees different topology.
    """
    trace = EvolveTrace(phase="descend")
    has_boundary = mesh.boundary_flags.any()
    if has_boundary:
        mesh = project_free_boundary(mesh, config.R)
    topo0 = topology(mesh).as_tuple()
    if target_edge is None:
        target_edge = _median_edge(mesh)
    orbits: OrbitStructure | None = None
    step = None
    plateau = 0

    def resymmetrize(m: TriMesh, orb) -> TriMesh:
        m = symmetrize(m, group, orb)
        if has_boundary:
            v = m.vertices.copy()
            _renormalize_boundary(v, m.boundary_flags, config.R)
            m = m.with_vertices(v)
        return m

    for it in range(config.max_iters_A):
        events = []
        if it % config.remesh_every == 0:
            if group is not None:
                # Asymmetric noise is amplified between events (descent is
                # unstable transverse to the symmetric configurations), so
                # project back before the remesher rebuilds its orbit maps.
                if orbits is None:
                    orbits = orbit_structure(mesh, group)
                mesh = resymmetrize(mesh, orbits)
            mesh = remesh(mesh, target_edge, group=group)
            if has_boundary:
                mesh = project_free_boundary(mesh, config.R)
            topo_now = topology(mesh).as_tuple()
            if topo_now != topo0:
                raise TopologyDriftError(
                    f"remesh checkpoint changed topology {topo0} -> {topo_now}",
                    mesh=mesh,
                    trace=trace,
                    stage="descend",
                )
            orbits = orbit_structure(mesh, group) if group is not None else None
            step = None
            events.append("remesh")
        if group is not None and it % config.symmetrize_every == 0:
            if orbits is None:
                orbits = orbit_structure(mesh, group)
            mesh = resymmetrize(mesh, orbits)
            events.append("symmetrize")

        cotan = shrinker_residual(mesh).rms_weighted
        area = discrete_gauss_area(mesh).total
        _, grad_rms = gradient_residual(mesh, clip_radius=config.R if has_boundary else None)
        if cotan < config.descent_tol:
            trace.add(
                iter=it, F=area, cotan_rms=cotan, grad_rms=grad_rms,
                events=events + ["converged"], accepted=False, max_move=0.0,
            )
            return mesh, trace

        g = gauss_area_gradient(mesh)
        gp = _project_boundary_gradient(mesh, g)
        # Precondition by the inverse Gaussian dual area: the step becomes
        # the pointwise shrinker-defect velocity, so far-out vertices move
        # at the same rate as those near the origin. Motion is restricted
        # to the surface normal (tangential drift only crowds vertices,
        # which is the remesher's job to manage), and speeds far above the
        # bulk are degenerate-cell artefacts, clamped so one bad vertex
        # cannot stall the global line search.
        w = np.maximum(gauss_dual_areas(mesh), 1e-300)
        vel = gp / w[:, None]
        nu = vertex_normals(mesh)
        vel = nu * (vel * nu).sum(1)[:, None]
        vel = _project_boundary_gradient(mesh, vel)
        speed = np.linalg.norm(vel, axis=1)
        moving = speed[speed > 0]
        if len(moving) == 0:
            trace.add(iter=it, F=area, cotan_rms=cotan, grad_rms=grad_rms,
                      events=events + ["flat"], accepted=False, max_move=0.0)
            return mesh, trace
        cap = 10.0 * float(np.median(moving))
        over = speed > cap
        if over.any():
            vel[over] *= (cap / speed[over])[:, None]
            speed[over] = cap
        descent_rate = float((gp * vel).sum())
        vmax = float(speed.max())
        if step is None:
            step = config.step_init * target_edge / vmax

        accepted = False
        for _ in range(MAX_HALVINGS):
            v_new = mesh.vertices - step * vel
            _renormalize_boundary(v_new, mesh.boundary_flags, config.R)
            f_new = discrete_gauss_area(mesh.with_vertices(v_new)).total
            if f_new <= area - config.armijo_c * step * descent_rate:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise LineSearchStallError(
                f"line search exhausted {MAX_HALVINGS} halvings at iteration {it}",
                mesh=mesh,
                trace=trace,
                stage="descend",
            )
        max_move = float(step * vmax)
        mesh = mesh.with_vertices(v_new)
        trace.add(
            iter=it, F=f_new, F_before=area, cotan_rms=cotan, grad_rms=grad_rms,
            step=step, max_move=max_move, events=events, accepted=True,
        )
        step *= STEP_GROWTH
        # Plateau: the saddle cannot be reached by descent alone; hand the
        # nearly-stationary state to the critical-point refiner.
        if area - f_new < 1e-9 * max(abs(f_new), 1.0):
            plateau += 1
            if plateau >= 8:
                trace.add(iter=it + 1, F=f_new, cotan_rms=cotan, grad_rms=grad_rms,
                          events=["plateau"], accepted=False, max_move=0.0)
                return mesh, trace
        else:
            plateau = 0
    return mesh, trace


class _ReducedSpace:
    """Orbit-representative coordinates with stabiliser and boundary
    constraints folded into per-orbit direction bases."""

    def __init__(
        self,
        mesh: TriMesh,
        group: SymmetryGroup | None,
        R: float,
        orbits: OrbitStructure | None = None,
    ):
        self.R = R
        n = mesh.n_vertices
        if group is None:
            self.elements = np.eye(3)[None]
            self.partner = np.arange(n, dtype=np.int64)[None, :]
            self.reps = np.arange(n, dtype=np.int64)
            self.orbit_sizes = np.ones(n)
        else:
            if orbits is None:
                orbits = orbit_structure(mesh, group)
            self.elements = group.elements
            self.partner = orbits.partner
            self.reps = orbits.representatives
            self.orbit_sizes = orbits.orbit_sizes().astype(np.float64)
        self.boundary = mesh.boundary_flags
        self.anchor = mesh.vertices.copy()
        self._build_bases()

    def _build_bases(self) -> None:
        n_reps = len(self.reps)
        self.basis = np.zeros((n_reps, 3, 3))
        self.valid = np.zeros((n_reps, 3), dtype=bool)
        order = len(self.elements)
        for o, rep in enumerate(self.reps):
            stab = [k for k in range(order) if self.partner[k, rep] == rep]
            proj = sum(self.elements[k] for k in stab) / len(stab)
            # Group average over the stabiliser is the orthogonal projector
            # onto its fixed directions.
            w, vecs = np.linalg.eigh((proj + proj.T) / 2)
            cols = [vecs[:, i] for i in range(3) if w[i] > 0.5]
            if self.boundary[rep] and cols:
                x = self.anchor[rep]
                xhat = x / np.linalg.norm(x)
                mat = np.column_stack(cols)
                mat = mat - np.outer(xhat, xhat @ mat)
                q, s, _ = np.linalg.svd(mat, full_matrices=False)
                cols = [q[:, i] for i in range(len(s)) if s[i] > 1e-8]
            d = len(cols)
            if d:
                self.basis[o, :, :d] = np.column_stack(cols)
                self.valid[o, :d] = True
        self.dim = int(self.valid.sum())
        self.scale = np.ones(self.dim)

    def set_scale(self, vertex_weights: np.ndarray) -> None:
        w_rep = np.maximum(vertex_weights[self.reps], 1e-300)
        s_orbit = np.sqrt(self.orbit_sizes / w_rep)
        comp = np.repeat(s_orbit, self.valid.sum(axis=1))
        self.scale = comp

    def positions(self, z: np.ndarray) -> np.ndarray:
        z_pad = np.zeros((len(self.reps), 3))
        z_pad[self.valid] = z
        x_rep = self.anchor[self.reps] + np.einsum("oij,oj->oi", self.basis, z_pad)
        rep_boundary = self.boundary[self.reps]
        if rep_boundary.any():
            xb = x_rep[rep_boundary]
            x_rep[rep_boundary] = xb * (self.R / np.linalg.norm(xb, axis=1))[:, None]
        out = self.anchor.copy()
        for k in range(len(self.elements)):
            out[self.partner[k, self.reps]] = x_rep @ self.elements[k].T
        return out

    def pack(self, g: np.ndarray) -> np.ndarray:
        g_rep = g[self.reps]
        r_pad = np.einsum("oij,oi->oj", self.basis, g_rep)
        return self.scale * r_pad[self.valid]

    def reanchor(self, mesh_vertices: np.ndarray) -> None:
        self.anchor = mesh_vertices.copy()
        self._build_bases()


def refine_critical(
    mesh: TriMesh,
    group: SymmetryGroup | None,
    config: EvolveConfig,
) -> tuple[TriMesh, EvolveTrace]:
    """Phase B: damped Gauss-Newton on the projected-gradient norm.

    Converges to critical points regardless of Morse index; the unstable
    directions that defeat plain descent are harmless here. Symmetry and
    boundary tangency hold by construction at every step because
    positions are rebuilt from constrained orbit representatives.
    """
    trace = EvolveTrace(phase="refine")
    has_boundary = mesh.boundary_flags.any()
    orbits = None
    if group is not None:
        try:
            orbits = orbit_structure(mesh, group)
        except (NotEquivariantError, OrbitAmbiguousError):
            # Drift since the last symmetrisation; any tolerance safely
            # below half an edge length still matches unambiguously.
            orbits = orbit_structure(mesh, group, tol=0.25 * _median_edge(mesh))
        mesh = symmetrize(mesh, group, orbits)
    if has_boundary:
        mesh = project_free_boundary(mesh, config.R)
    space = _ReducedSpace(mesh, group, config.R, orbits=orbits)
    lam = config.lm_damping_init
    lam_budget = LM_BUDGET_FACTOR * config.lm_damping_init
    h_fd = 1e-6 * max(mesh.bbox_diameter(), 1.0)
    clip = config.R if has_boundary else None

    def residual(z: np.ndarray) -> np.ndarray:
        verts = space.positions(z)
        m = mesh.with_vertices(verts)
        g = gauss_area_gradient(m)
        g = _project_boundary_gradient(m, g)
        return space.pack(g)

    current = mesh
    for it in range(config.max_iters_B):
        _, rms = gradient_residual(current, clip_radius=clip)
        cotan = shrinker_residual(current).rms_weighted
        area = discrete_gauss_area(current).total
        if rms < config.refine_tol:
            trace.add(iter=it, F=area, grad_rms=rms, cotan_rms=cotan, lam=lam,
                      events=["converged"])
            return current, trace

        space.reanchor(current.vertices)
        space.set_scale(gauss_dual_areas(current))
        z0 = np.zeros(space.dim)
        r0 = residual(z0)
        phi0 = 0.5 * float(r0 @ r0)

        def matvec(u):
            nu = np.linalg.norm(u)
            if nu == 0:
                return np.zeros_like(r0)
            return (residual(h_fd * u / nu) - r0) * (nu / h_fd)

        def rmatvec(w):
            # J ~ S M with M symmetric, so J^T w = S^{-1} J (S w).
            return matvec(space.scale * w) / space.scale

        op = LinearOperator((space.dim, space.dim), matvec=matvec, rmatvec=rmatvec)

        accepted = False
        for _ in range(40):
            # Inexact inner solves: the damped outer loop absorbs the error
            # and the saved gradient evaluations dominate the run time.
            delta = lsmr(op, -r0, damp=np.sqrt(lam), maxiter=120, atol=1e-7, btol=1e-7)[0]
            r_new = residual(delta)
            phi_new = 0.5 * float(r_new @ r_new)
            if phi_new < phi0:
                accepted = True
                break
            lam *= LM_GROWTH
            if lam > lam_budget:
                raise RefineStalledError(
                    f"damping exceeded {lam_budget:.1e} at iteration {it}",
                    mesh=current,
                    trace=trace,
                    stage="refine",
                )
        if not accepted:
            raise RefineStalledError(
                f"no acceptable step at iteration {it}",
                mesh=current,
                trace=trace,
                stage="refine",
            )
        current = current.with_vertices(space.positions(delta))
        lam = max(lam / LM_SHRINK, 1e-14)
        trace.add(iter=it, F=area, grad_rms=rms, cotan_rms=cotan, lam=lam,
                  phi=phi_new, step_norm=float(np.linalg.norm(delta)))

    _, rms = gradient_residual(current, clip_radius=clip)
    if rms >= config.refine_tol:
        raise RefineStalledError(
            f"iteration budget exhausted at residual {rms:.3e}",
            mesh=current,
            trace=trace,
            stage="refine",
        )
    return current, trace
