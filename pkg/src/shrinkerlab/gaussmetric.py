"""Gaussian-weighted geometry on triangle meshes.

Closed forms for the weighted area of spheres, cylinders and half-spaces,
the discrete weighted area functional with its exact gradient, and the
pointwise self-shrinker residual H - <x, nu>/2.

The weighted area of a surface is (1/4pi) * integral of exp(-|x|^2/4).
With this normalisation the full plane through the origin has area 1,
the sphere of radius r has area r^2 exp(-r^2/4) (maximal at r = 2), and
surfaces whose weighted area is critical satisfy H = <x, nu>/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import InvalidInputError
from .trimesh import DEGENERATE_AREA_TOL, TriMesh

FOUR_PI = 4.0 * np.pi


def weight(point) -> np.ndarray | float:
    """exp(-|x|^2 / 4), elementwise over trailing 3-vectors."""
    x = np.asarray(point, dtype=np.float64)
    if x.shape[-1] != 3:
        raise InvalidInputError("point must be a 3-vector")
    if not np.isfinite(x).all():
        raise InvalidInputError("non-finite point")
    w = np.exp(-0.25 * (x * x).sum(axis=-1))
    return float(w) if w.ndim == 0 else w


def sphere_gauss_area(radius: float) -> float:
    """Weighted area r^2 exp(-r^2/4) of the origin-centred sphere."""
    if not np.isfinite(radius) or radius <= 0:
        raise InvalidInputError("radius must be positive")
    return float(radius**2 * np.exp(-0.25 * radius**2))


def cylinder_gauss_area(radius: float) -> float:
    """Weighted area sqrt(pi) r exp(-r^2/4) of the infinite cylinder."""
    if not np.isfinite(radius) or radius <= 0:
        raise InvalidInputError("radius must be positive")
    return float(np.sqrt(np.pi) * radius * np.exp(-0.25 * radius**2))


def halfspace_gauss_measure(offset: float) -> float:
    """Gaussian volume measure of the half-space {x3 > s}; 1/2 at s = 0."""
    return float(0.5 * erfc(offset / 2.0))


@dataclass
class WeightedAreaResult:
    """total = sum of per_triangle weighted areas; degenerate triangles
    contribute zero and are listed in degenerate_triangles."""

    total: float
    per_triangle: np.ndarray
    degenerate_triangles: list

    def __float__(self):
        return self.total


def _triangle_geometry(mesh: TriMesh):
    v, t = mesh.vertices, mesh.triangles
    p = (v[t[:, 0]], v[t[:, 1]], v[t[:, 2]])
    n = np.cross(p[1] - p[0], p[2] - p[0])
    two_area = np.linalg.norm(n, axis=1)
    return p, n, two_area


def _degenerate_mask(mesh: TriMesh, two_area: np.ndarray) -> np.ndarray:
    diam = mesh.bbox_diameter()
    scale2 = max(diam, 1.0) ** 2
    return two_area < 2.0 * DEGENERATE_AREA_TOL * scale2


def discrete_gauss_area(mesh: TriMesh) -> WeightedAreaResult:
    """Weighted area by the edge-midpoint quadrature rule.

    Each triangle contributes area(T)/(4pi) times the mean of the weight
    at its three edge midpoints, which integrates quadratics exactly and
    is smooth in the vertex positions.
    """
    if mesh.n_triangles == 0:
        return WeightedAreaResult(0.0, np.zeros(0), [])
    p, _, two_area = _triangle_geometry(mesh)
    mids = [(p[1] + p[2]) / 2, (p[2] + p[0]) / 2, (p[0] + p[1]) / 2]
    wq = (weight(mids[0]) + weight(mids[1]) + weight(mids[2])) / 3.0
    per = (0.5 * two_area) * wq / FOUR_PI
    bad = _degenerate_mask(mesh, two_area)
    per[bad] = 0.0
    return WeightedAreaResult(float(per.sum()), per, np.where(bad)[0].tolist())


def gauss_area_gradient(mesh: TriMesh) -> np.ndarray:
    """Exact per-vertex derivative of discrete_gauss_area.

    Differentiates both the flat-triangle area and the midpoint weights,
    so central finite differences of the discrete functional reproduce it
    to rounding. Degenerate triangles contribute nothing, matching their
    zero area convention.
    """
    grad = np.zeros_like(mesh.vertices)
    if mesh.n_triangles == 0:
        return grad
    p, n, two_area = _triangle_geometry(mesh)
    bad = _degenerate_mask(mesh, two_area)
    safe = np.where(two_area > 0, two_area, 1.0)
    nhat = n / safe[:, None]
    area = 0.5 * two_area
    # mids[i] is opposite corner i and does not depend on vertex i.
    mids = [(p[1] + p[2]) / 2, (p[2] + p[0]) / 2, (p[0] + p[1]) / 2]
    wm = [weight(m) for m in mids]
    wq = (wm[0] + wm[1] + wm[2]) / 3.0
    t = mesh.triangles
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        d_area = 0.5 * np.cross(p[j] - p[k], nhat)
        # d weight(m)/d p_i = -(m/2) w(m) * (1/2) for the two midpoints using p_i
        d_wq = -(mids[j] * wm[j][:, None] + mids[k] * wm[k][:, None]) / 12.0
        contrib = (d_area * wq[:, None] + area[:, None] * d_wq) / FOUR_PI
        contrib[bad] = 0.0
        for c in range(3):
            grad[:, c] += np.bincount(t[:, i], weights=contrib[:, c], minlength=mesh.n_vertices)
    return grad


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted unit vertex normals from the triangle winding."""
    v, t = mesh.vertices, mesh.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    acc = np.zeros_like(v)
    for i in range(3):
        for c in range(3):
            acc[:, c] += np.bincount(t[:, i], weights=n[:, c], minlength=len(v))
    norms = np.linalg.norm(acc, axis=1)
    norms[norms == 0] = 1.0
    return acc / norms[:, None]


def gauss_dual_areas(mesh: TriMesh) -> np.ndarray:
    """Per-vertex share of the discrete weighted area (barycentric thirds)."""
    res = discrete_gauss_area(mesh)
    t = mesh.triangles
    w = np.zeros(mesh.n_vertices)
    for i in range(3):
        w += np.bincount(t[:, i], weights=res.per_triangle / 3.0, minlength=mesh.n_vertices)
    return w


def _mixed_voronoi_areas(mesh: TriMesh) -> np.ndarray:
    """Meyer mixed Voronoi cell areas, robust to obtuse triangles."""
    v, t = mesh.vertices, mesh.triangles
    p = [v[t[:, i]] for i in range(3)]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    two_area = np.linalg.norm(n, axis=1)
    safe = np.where(two_area > 0, two_area, 1.0)
    area = 0.5 * two_area

    cos = []
    cot = []
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        e1 = p[j] - p[i]
        e2 = p[k] - p[i]
        c = (e1 * e2).sum(1)
        cos.append(c)
        cot.append(c / safe)
    any_obtuse = (cos[0] < 0) | (cos[1] < 0) | (cos[2] < 0)

    out = np.zeros(mesh.n_vertices)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        l_ij2 = ((p[j] - p[i]) ** 2).sum(1)
        l_ik2 = ((p[k] - p[i]) ** 2).sum(1)
        voronoi = (l_ik2 * cot[j] + l_ij2 * cot[k]) / 8.0
        fallback = np.where(cos[i] < 0, area / 2.0, area / 4.0)
        contrib = np.where(any_obtuse, fallback, voronoi)
        out += np.bincount(t[:, i], weights=contrib, minlength=mesh.n_vertices)
    return out


@dataclass
class ResidualField:
    """Pointwise self-shrinker defect H - <x, nu>/2 at interior vertices.

    per_vertex is NaN where the residual is absent (boundary vertices and
    degenerate one-rings); interior_mask marks where it is defined, and
    vertex_weight carries the Gaussian dual areas used for rms_weighted,
    so the RMS can be recomputed from the field.
    """

    per_vertex: np.ndarray
    rms_weighted: float
    interior_mask: np.ndarray
    vertex_weight: np.ndarray
    degenerate_vertices: list

    def recompute_rms(self) -> float:
        m = self.interior_mask
        w = self.vertex_weight[m]
        r = self.per_vertex[m]
        if w.sum() == 0:
            return 0.0
        return float(np.sqrt((w * r * r).sum() / w.sum()))


def shrinker_residual(mesh: TriMesh) -> ResidualField:
    """Discrete H - <x, nu>/2 with the cotangent mean curvature.

    H is the magnitude of the cotangent mean curvature vector over mixed
    Voronoi cell areas, signed by agreement with the area-weighted vertex
    normal, so the round sphere of radius r with outward normal has
    H = 2/r. Boundary vertices are excluded (recorded as NaN, not zero).
    """
    v, t = mesh.vertices, mesh.triangles
    n_v = mesh.n_vertices
    p = [v[t[:, i]] for i in range(3)]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    two_area = np.linalg.norm(n, axis=1)
    safe = np.where(two_area > 0, two_area, 1.0)

    hvec = np.zeros((n_v, 3))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        cot_i = ((p[j] - p[i]) * (p[k] - p[i])).sum(1) / safe
        d = p[j] - p[k]
        for c in range(3):
            contrib = 0.5 * cot_i * d[:, c]
            hvec[:, c] += np.bincount(t[:, j], weights=contrib, minlength=n_v)
            hvec[:, c] -= np.bincount(t[:, k], weights=contrib, minlength=n_v)

    cell = _mixed_voronoi_areas(mesh)
    diam = mesh.bbox_diameter()
    scale2 = max(diam, 1.0) ** 2
    degenerate = cell < DEGENERATE_AREA_TOL * scale2
    interior = ~mesh.boundary_flags & ~degenerate

    nu = vertex_normals(mesh)
    kmag = np.linalg.norm(hvec, axis=1)
    sign = np.sign((hvec * nu).sum(1))
    cell_safe = np.where(cell > 0, cell, 1.0)
    H = sign * kmag / cell_safe

    residual = np.full(n_v, np.nan)
    residual[interior] = H[interior] - 0.5 * (v[interior] * nu[interior]).sum(1)

    w = gauss_dual_areas(mesh)
    wi = w[interior]
    ri = residual[interior]
    rms = float(np.sqrt((wi * ri * ri).sum() / wi.sum())) if wi.sum() > 0 else 0.0
    return ResidualField(
        per_vertex=residual,
        rms_weighted=rms,
        interior_mask=interior,
        vertex_weight=w,
        degenerate_vertices=np.where(degenerate & ~mesh.boundary_flags)[0].tolist(),
    )


def gradient_residual(mesh: TriMesh, clip_radius: float | None = None) -> tuple[np.ndarray, float]:
    """Variational criticality defect |grad|/w per vertex and its weighted RMS.

    The gradient of the discrete weighted area at a vertex approximates
    -(H - <x, nu>/2) nu times the vertex's Gaussian dual area w, so
    |grad|/w is a second, independent discretisation of the shrinker
    residual in units 1/length. When clip_radius is given, gradient
    components radial to the clipping sphere are projected out at
    boundary vertices (the free boundary condition) before measuring.
    """
    g = gauss_area_gradient(mesh)
    if clip_radius is not None and mesh.boundary_flags.any():
        b = mesh.boundary_flags
        xb = mesh.vertices[b]
        nrm = np.linalg.norm(xb, axis=1)
        nrm[nrm == 0] = 1.0
        xhat = xb / nrm[:, None]
        g[b] -= xhat * (g[b] * xhat).sum(1)[:, None]
    w = gauss_dual_areas(mesh)
    w_safe = np.where(w > 0, w, 1.0)
    per_vertex = np.linalg.norm(g, axis=1) / w_safe
    rms = float(np.sqrt((w * per_vertex**2).sum() / w.sum())) if w.sum() > 0 else 0.0
    return per_vertex, rms
