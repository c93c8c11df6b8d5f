"""Structured mesh generators: icospheres, polar discs, cylinder patches
and tori, plus the graded ring machinery shared with the seed builders.

All closed-ring bands use a parity-alternating diagonal pattern and ring
sizes of the form base * 2^k, which keeps the connectivity invariant
under the dihedral rotation groups used elsewhere (rotations shift ring
indices by even amounts, half-turns reverse them; both map the pattern
onto itself).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .trimesh import TriMesh, orient_consistently


class MeshBuilder:
    """Accumulates vertices and triangles; winding fixed afterwards."""

    def __init__(self):
        self._verts: list = []
        self._tris: list = []

    def vertex(self, p) -> int:
        self._verts.append((float(p[0]), float(p[1]), float(p[2])))
        return len(self._verts) - 1

    def ring(self, points) -> np.ndarray:
        start = len(self._verts)
        self._verts.extend((float(p[0]), float(p[1]), float(p[2])) for p in points)
        return np.arange(start, len(self._verts), dtype=np.int64)

    def tri(self, a: int, b: int, c: int) -> None:
        self._tris.append((int(a), int(b), int(c)))

    def quad(self, a: int, b: int, c: int, d: int, parity: int) -> None:
        """Split quad a-b-c-d (cyclic) along a-c (even parity) or b-d."""
        if parity % 2 == 0:
            self.tri(a, b, c)
            self.tri(a, c, d)
        else:
            self.tri(a, b, d)
            self.tri(b, c, d)

    def strip(self, row_a, row_b, closed: bool, parity_offset: int = 0) -> None:
        """Band of quads between two equal-length vertex rows."""
        m = len(row_a)
        if len(row_b) != m:
            raise InvalidInputError("strip rows must have equal length")
        last = m if closed else m - 1
        for j in range(last):
            j1 = (j + 1) % m
            self.quad(row_a[j], row_a[j1], row_b[j1], row_b[j], parity_offset + j)

    def transition(self, row_fine, row_coarse, closed: bool = True) -> None:
        """2:1 band; len(row_fine) = 2 len(row_coarse). Three triangles per
        coarse segment, the pattern reverses onto itself under index flips."""
        mc = len(row_coarse)
        if len(row_fine) != 2 * mc:
            raise InvalidInputError("transition needs a 2:1 row ratio")
        last = mc if closed else mc - 1
        for i in range(last):
            i1 = (i + 1) % mc
            f0, f1, f2 = row_fine[2 * i], row_fine[2 * i + 1], row_fine[(2 * i + 2) % (2 * mc)]
            c0, c1 = row_coarse[i], row_coarse[i1]
            self.tri(c0, f0, f1)
            self.tri(c0, f1, c1)
            self.tri(c1, f1, f2)

    def fan(self, apex: int, ring, closed: bool = True) -> None:
        m = len(ring)
        last = m if closed else m - 1
        for j in range(last):
            self.tri(apex, ring[j], ring[(j + 1) % m])

    def build(self, outward_hint=None, orbit_labels=None) -> TriMesh:
        mesh = TriMesh(np.array(self._verts), np.array(self._tris, dtype=np.int64))
        mesh = orient_consistently(mesh, outward_hint=outward_hint)
        if orbit_labels is not None:
            mesh.orbit_labels = np.asarray(orbit_labels, dtype=np.int64)
        return mesh


def circle_points(radius: float, m: int, z=0.0, z_fn=None) -> np.ndarray:
    """m points on the horizontal circle, index j at angle 2 pi j / m."""
    ang = 2.0 * np.pi * np.arange(m) / m
    z_arr = z_fn(ang) if z_fn is not None else np.full(m, float(z))
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang), z_arr])


def allowed_ring_size(target_m: float, base: int, minimum: int | None = None) -> int:
    """Smallest base * 2^k at or above target_m (at least `minimum`)."""
    m = max(base, minimum or base)
    while m < target_m:
        m *= 2
    return m


def graded_ring_sizes(radii, target_edge: float, base: int, m_outer: int) -> list[int]:
    """Ring size per radius, halving inward when arcs get short.

    Sizes never exceed m_outer, never drop below base, and consecutive
    entries differ by at most a factor 2 so bands stay stitchable.
    """
    sizes = []
    prev = m_outer
    for r in radii:
        want = 2.0 * np.pi * r / max(target_edge, 1e-12)
        m = base
        while m * 2 <= prev and m < want * 0.9:
            m *= 2
        m = min(m, prev)
        sizes.append(m)
        prev = m
    return sizes


def stitch_rings(builder: MeshBuilder, rows: list[np.ndarray], parity_offset: int = 0) -> None:
    """Join consecutive closed rings (equal or 2:1 sizes) into bands."""
    for a, b in zip(rows[:-1], rows[1:]):
        if len(a) == len(b):
            builder.strip(a, b, closed=True, parity_offset=parity_offset)
        elif len(a) == 2 * len(b):
            builder.transition(a, b)
        elif 2 * len(a) == len(b):
            builder.transition(b, a)
        else:
            raise InvalidInputError("adjacent rings must be 1:1 or 2:1")


def flat_disc(radius: float, target_edge: float, base: int = 8, height_fn=None) -> TriMesh:
    """Polar disc in the plane x3 = 0 (or a graph over it) with graded rings.

    The rim lies exactly at the given radius; ring sizes are base * 2^k so
    a dihedral group with 2n | base acts on the connectivity.
    """
    if radius <= 0 or target_edge <= 0:
        raise InvalidInputError("radius and target_edge must be positive")
    n_rings = max(2, int(np.ceil(radius / target_edge)))
    radii = [radius * (1 - k / n_rings) for k in range(n_rings)]  # outer -> inner, excludes 0
    m_outer = allowed_ring_size(2 * np.pi * radius / target_edge, base)
    sizes = graded_ring_sizes(radii, target_edge, base, m_outer)
    b = MeshBuilder()
    rows = []
    for r, m in zip(radii, sizes):
        zf = (lambda ang, rr=r: height_fn(rr, ang)) if height_fn else None
        rows.append(b.ring(circle_points(r, m, z_fn=zf)))
    stitch_rings(b, rows)
    z0 = float(height_fn(0.0, np.zeros(1))[0]) if height_fn else 0.0
    apex = b.vertex((0.0, 0.0, z0))
    b.fan(apex, rows[-1])
    return b.build(outward_hint=lambda c: np.tile([0.0, 0.0, 1.0], (len(c), 1)))


def icosphere(radius: float, level: int) -> TriMesh:
    """Subdivided icosahedron with vertices at the +-x3 poles.

    This orientation makes the mesh invariant under the cyclic group of
    order 5 about the vertical axis at every subdivision level.
    """
    if radius <= 0:
        raise InvalidInputError("radius must be positive")
    lat = np.arctan(0.5)
    verts = [(0.0, 0.0, 1.0)]
    for k in range(5):
        a = 2 * np.pi * k / 5
        verts.append((np.cos(lat) * np.cos(a), np.cos(lat) * np.sin(a), np.sin(lat)))
    for k in range(5):
        a = 2 * np.pi * k / 5 + np.pi / 5
        verts.append((np.cos(lat) * np.cos(a), np.cos(lat) * np.sin(a), -np.sin(lat)))
    verts.append((0.0, 0.0, -1.0))
    faces = []
    for k in range(5):
        k1 = (k + 1) % 5
        faces.append((0, 1 + k, 1 + k1))
        faces.append((1 + k, 6 + k, 1 + k1))
        faces.append((1 + k1, 6 + k, 6 + k1))
        faces.append((11, 6 + k1, 6 + k))
    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)
    for _ in range(level):
        v, f = _subdivide_once(v, f)
        v /= np.linalg.norm(v, axis=1)[:, None]
    return TriMesh(v * radius, f)


def _subdivide_once(v: np.ndarray, f: np.ndarray):
    verts = list(map(tuple, v))
    cache: dict[tuple, int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in cache:
            verts.append(tuple((np.asarray(verts[a]) + np.asarray(verts[b])) / 2))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in f:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(verts), np.array(out, dtype=np.int64)


def cylinder_patch(
    radius: float,
    z_min: float,
    z_max: float,
    target_edge: float,
    base: int = 8,
    cap_to_sphere: float | None = None,
) -> TriMesh:
    """Open cylinder about the vertical axis, rings stacked in height.

    With cap_to_sphere = R the end rings are placed exactly on |x| = R
    (requires R^2 > radius^2), which is how the clipped self-shrinking
    cylinder reference surface is produced without running the clipper.
    """
    if radius <= 0 or z_max <= z_min:
        raise InvalidInputError("need radius > 0 and z_max > z_min")
    if cap_to_sphere is not None:
        if cap_to_sphere**2 <= radius**2:
            raise InvalidInputError("clip sphere must be wider than the cylinder")
        z_lim = float(np.sqrt(cap_to_sphere**2 - radius**2))
        z_min, z_max = -z_lim, z_lim
    m = allowed_ring_size(2 * np.pi * radius / target_edge, base)
    n_rows = max(2, int(np.ceil((z_max - z_min) / target_edge)))
    b = MeshBuilder()
    rows = []
    for k in range(n_rows + 1):
        z = z_min + (z_max - z_min) * k / n_rows
        rows.append(b.ring(circle_points(radius, m, z=z)))
    stitch_rings(b, rows)

    def hint(c):
        out = c.copy()
        out[:, 2] = 0.0
        return out

    return b.build(outward_hint=hint)


def torus(major_radius: float, minor_radius: float, n_major: int = 48, n_minor: int = 24) -> TriMesh:
    """Torus of revolution about the vertical axis."""
    if minor_radius <= 0 or major_radius <= minor_radius:
        raise InvalidInputError("need 0 < minor < major radius")
    b = MeshBuilder()
    rows = []
    for i in range(n_major):
        a = 2 * np.pi * i / n_major
        ca, sa = np.cos(a), np.sin(a)
        pts = []
        for j in range(n_minor):
            t = 2 * np.pi * j / n_minor
            r = major_radius + minor_radius * np.cos(t)
            pts.append((r * ca, r * sa, minor_radius * np.sin(t)))
        rows.append(b.ring(pts))
    for i in range(n_major):
        b.strip(rows[i], rows[(i + 1) % n_major], closed=True, parity_offset=i)

    def hint(c):
        axis_dir = c.copy()
        axis_dir[:, 2] = 0.0
        nrm = np.linalg.norm(axis_dir, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        center = axis_dir / nrm * major_radius
        return c - center

    return b.build(outward_hint=hint)
