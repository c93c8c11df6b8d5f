"""Finite rotation groups acting on meshes: cyclic C_n and dihedral D_n
construction, orbit bookkeeping, symmetrisation, equivariance defect, the
quotient genus arithmetic and axis crossing counts.

D_n (order 2n) is generated by half-turns about the n horizontal axes at
angles l pi / n; it contains C_n, the rotations about the vertical axis.
All elements are proper rotations (det +1); reflections are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    AxisTangentError,
    InvalidInputError,
    NotEquivariantError,
    OrbitAmbiguousError,
)
from .trimesh import TriMesh

MATCH_TOL_FACTOR = 1e-6  # default orbit matching tolerance x bbox diameter
GROUP_CLOSURE_TOL = 1e-14


@dataclass
class SymmetryGroup:
    """Explicit list of rotation matrices forming a finite group.

    elements[0] is the identity. For dihedral groups, elements[:n] are the
    vertical-axis rotations by 2 pi k / n and elements[n:] the half-turns
    about the horizontal axes (trace -1).
    """

    order: int
    elements: np.ndarray  # (order, 3, 3)
    kind: str  # "cyclic" | "dihedral"
    n: int

    def horizontal_axes(self) -> np.ndarray:
        """Unit directions of the half-turn axes (dihedral only)."""
        if self.kind != "dihedral":
            return np.zeros((0, 3))
        ls = np.arange(1, self.n + 1)
        ang = ls * np.pi / self.n
        return np.column_stack([np.cos(ang), np.sin(ang), np.zeros(self.n)])


def _rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _half_turn(axis: np.ndarray) -> np.ndarray:
    u = np.asarray(axis, dtype=np.float64)
    u = u / np.linalg.norm(u)
    return 2.0 * np.outer(u, u) - np.eye(3)


def cyclic_group(n: int) -> SymmetryGroup:
    """Rotations by 2 pi k / n about the vertical axis."""
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidInputError("cyclic group needs integer n >= 2")
    elems = np.stack([_rotation_z(2.0 * np.pi * k / n) for k in range(n)])
    return SymmetryGroup(order=n, elements=elems, kind="cyclic", n=int(n))


def dihedral_group(n: int) -> SymmetryGroup:
    """Order-2n rotation group generated by half-turns about the n
    horizontal axes at angles l pi / n; contains the vertical rotation
    by 2 pi / n as the composition of two neighbouring half-turns."""
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidInputError("dihedral group needs integer n >= 2")
    rotations = [_rotation_z(2.0 * np.pi * k / n) for k in range(n)]
    flips = []
    for ell in range(1, n + 1):
        ang = ell * np.pi / n
        flips.append(_half_turn(np.array([np.cos(ang), np.sin(ang), 0.0])))
    elems = np.stack(rotations + flips)
    return SymmetryGroup(order=2 * n, elements=elems, kind="dihedral", n=int(n))


def group_closure_defect(group: SymmetryGroup) -> float:
    """Max Frobenius distance from any pairwise product to the element set."""
    elems = group.elements
    worst = 0.0
    for a in elems:
        for b in elems:
            prod = a @ b
            dist = np.abs(elems - prod).sum(axis=(1, 2)).min()
            worst = max(worst, float(dist))
    return worst


def apply_isometry(matrix: np.ndarray, mesh: TriMesh) -> TriMesh:
    """Map vertex positions by the rotation; connectivity unchanged."""
    q = np.asarray(matrix, dtype=np.float64)
    return mesh.with_vertices(mesh.vertices @ q.T)


@dataclass
class OrbitStructure:
    """Partition of the vertices into group orbits.

    partner[k, v] is the vertex that element k maps v onto, so columns of
    partner are permutations. representatives holds the lowest vertex
    index of each orbit.
    """

    orbit_of: np.ndarray  # (n_vertices,) orbit id per vertex
    representatives: np.ndarray  # (n_orbits,)
    stabilizer_size: np.ndarray  # (n_orbits,)
    partner: np.ndarray  # (order, n_vertices)
    matching_tol: float

    @property
    def n_orbits(self) -> int:
        return len(self.representatives)

    def orbit_sizes(self) -> np.ndarray:
        return np.bincount(self.orbit_of, minlength=self.n_orbits)


def default_matching_tol(mesh: TriMesh) -> float:
    return MATCH_TOL_FACTOR * max(mesh.bbox_diameter(), 1.0)


def orbit_structure(mesh: TriMesh, group: SymmetryGroup, tol: float | None = None) -> OrbitStructure:
    """Match every vertex to its image under each group element.

    Raises NotEquivariantError when an image has no partner inside tol.
    A match counts as ambiguous (OrbitAmbiguousError) when the runner-up
    candidate is comparably close to the best one, so two distinct mesh
    vertices that merely sit near each other do not poison the matching
    as long as the equivariance defect stays far below their separation.
    """
    if tol is None:
        tol = default_matching_tol(mesh)
    v = mesh.vertices
    n = len(v)
    tree = cKDTree(v)
    abs_floor = 1e-3 * tol
    partner = np.empty((group.order, n), dtype=np.int64)
    for k, q in enumerate(group.elements):
        mapped = v @ q.T
        dists, idx = tree.query(mapped, k=2)
        if n == 1:
            dists = np.column_stack([dists, np.full(n, np.inf)])
            idx = np.column_stack([idx, idx])
        bad = dists[:, 0] > tol
        if bad.any():
            vi = int(np.where(bad)[0][0])
            raise NotEquivariantError(
                f"element {k}: vertex {vi} maps {dists[vi, 0]:.3e} away from any vertex"
                f" (tol {tol:.3e})"
            )
        ambiguous = dists[:, 1] <= np.maximum(3.0 * dists[:, 0], abs_floor)
        if ambiguous.any():
            vi = int(np.where(ambiguous)[0][0])
            raise OrbitAmbiguousError(
                f"element {k}: vertex {vi} has two partners within "
                f"{dists[vi, 1]:.3e} of each other"
            )
        col = idx[:, 0]
        if len(np.unique(col)) != n:
            raise OrbitAmbiguousError(f"element {k}: vertex matching is not a bijection")
        partner[k] = col

    parent = np.arange(n)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for k in range(group.order):
        for a in range(n):
            ra, rb = find(a), find(partner[k, a])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n)])
    reps, orbit_of = np.unique(roots, return_inverse=True)
    sizes = np.bincount(orbit_of)
    if (group.order % sizes).any():
        raise NotEquivariantError("orbit size does not divide the group order")
    stab = group.order // sizes
    return OrbitStructure(
        orbit_of=orbit_of,
        representatives=reps,
        stabilizer_size=stab,
        partner=partner,
        matching_tol=float(tol),
    )


def symmetrize(mesh: TriMesh, group: SymmetryGroup, orbits: OrbitStructure | None = None) -> TriMesh:
    """Project vertex positions onto exact equivariance.

    Each orbit representative is replaced by the average of the group
    pullbacks of its images, then every orbit member is regenerated by
    the group action. Idempotent up to rounding; members fixed by a
    stabiliser land on the corresponding axis automatically.
    """
    if orbits is None:
        orbits = orbit_structure(mesh, group)
    v = mesh.vertices
    new_v = v.copy()
    reps = orbits.representatives
    pulled = np.zeros((len(reps), 3))
    for k, q in enumerate(group.elements):
        pulled += v[orbits.partner[k, reps]] @ q  # q^T pullback via right-multiplication
    pulled /= group.order
    assigned = np.zeros(len(v), dtype=bool)
    for k, q in enumerate(group.elements):
        targets = orbits.partner[k, reps]
        fresh = ~assigned[targets]
        new_v[targets[fresh]] = pulled[fresh] @ q.T
        assigned[targets[fresh]] = True
    out = mesh.with_vertices(new_v)
    out.orbit_labels = orbits.orbit_of.copy()
    return out


def equivariance_defect(mesh: TriMesh, group: SymmetryGroup) -> float:
    """Max over elements and vertices of the distance from a mapped vertex
    to the nearest mesh vertex; zero for exactly equivariant meshes."""
    v = mesh.vertices
    tree = cKDTree(v)
    worst = 0.0
    for q in group.elements:
        d, _ = tree.query(v @ q.T)
        worst = max(worst, float(d.max()))
    return worst


def riemann_hurwitz_genus(g: int, quotient_genus: int, axis_pairs: int) -> int:
    """Genus of a surface with a free-away-from-the-axis cyclic action of
    order g+1: (g+1) * quotient_genus + (axis_pairs - 1) * g."""
    if g < 1 or quotient_genus < 0 or axis_pairs < 0:
        raise InvalidInputError("need g >= 1 and nonnegative quotient data")
    return (g + 1) * quotient_genus + (axis_pairs - 1) * g


def axis_intersection_count(mesh: TriMesh, axis, tol: float | None = None) -> int:
    """Transversal crossings of a line through the origin with the mesh.

    Crossings at mesh vertices sitting on the axis (fixed points of a
    symmetry) count once each; any grazing configuration raises
    AxisTangentError rather than guessing.
    """
    d = np.asarray(axis, dtype=np.float64)
    nd = np.linalg.norm(d)
    if nd == 0 or not np.isfinite(nd):
        raise InvalidInputError("axis direction must be a nonzero vector")
    d = d / nd
    if tol is None:
        tol = 1e-6 * max(mesh.bbox_diameter(), 1.0)

    v, t = mesh.vertices, mesh.triangles
    along = v @ d
    perp = v - np.outer(along, d)
    perp_dist = np.linalg.norm(perp, axis=1)
    on_axis = perp_dist < tol

    count = 0
    if on_axis.any():
        from .gaussmetric import vertex_normals

        nu = vertex_normals(mesh)
        for vi in np.where(on_axis)[0]:
            if mesh.boundary_flags[vi]:
                raise AxisTangentError(f"axis passes through boundary vertex {vi}")
            if abs(nu[vi] @ d) < 0.1:
                raise AxisTangentError(f"axis nearly tangent to surface at vertex {vi}")
            count += 1

    touches_axis_vertex = on_axis[t].any(axis=1)
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    n = np.cross(p1 - p0, p2 - p0)
    denom = n @ d
    offset = (n * p0).sum(1)
    scale = np.linalg.norm(n, axis=1)
    scale[scale == 0] = 1.0
    for ti in range(len(t)):
        if touches_axis_vertex[ti]:
            continue
        if abs(denom[ti]) < 1e-12 * scale[ti]:
            # Plane parallel to the axis: tangency only if the line comes close.
            rel = [v[x] - np.outer(v[x] @ d, d) for x in (t[ti],)][0]
            seg_min = _point_to_triangle_2d_distance(rel)
            if seg_min < tol:
                raise AxisTangentError(f"triangle {ti} runs parallel along the axis")
            continue
        s = offset[ti] / denom[ti]
        q = s * d
        bary = _barycentric(q, p0[ti], p1[ti], p2[ti])
        edge_tol = tol / max(np.sqrt(scale[ti]), 1e-12)
        if (bary > edge_tol).all():
            count += 1
        elif (bary > -edge_tol).all():
            raise AxisTangentError(f"axis crosses triangle {ti} too close to an edge")
    return count


def _barycentric(q, a, b, c) -> np.ndarray:
    v0, v1, v2 = b - a, c - a, q - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    if den == 0:
        return np.array([-1.0, -1.0, -1.0])
    w1 = (d11 * d20 - d01 * d21) / den
    w2 = (d00 * d21 - d01 * d20) / den
    return np.array([1.0 - w1 - w2, w1, w2])


def _point_to_triangle_2d_distance(rel_verts: np.ndarray) -> float:
    """Distance from the origin to a triangle given in axis-perp coordinates."""
    best = np.inf
    for i in range(3):
        a, b = rel_verts[i], rel_verts[(i + 1) % 3]
        ab = b - a
        tt = np.clip(-(a @ ab) / max(ab @ ab, 1e-300), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(a + tt * ab)))
    return best
