"""Initial surfaces for the evolution runs.

Two families, both built from a sphere and a second surface crossing it,
with the crossing circle replaced by a band of alternating saddle necks:

* one-end family: the horizontal plane and a concentric sphere of radius
  t/(1-t), joined along their crossing circle through 2(g+1) necks whose
  resolution alternates between the g+1 horizontal symmetry axes. The
  result has genus g, one boundary loop on the clipping sphere, and is
  invariant under the dihedral group of order 2(g+1).

* two-end family: the vertical cylinder of radius sqrt(2) and the sphere
  of radius 2, desingularised along their two crossing circles with 2n
  necks each (anti-prismatic phase between the circles by default).
  Genus 2n-1, two boundary loops, dihedral symmetry of order 2n.

Near a crossing the two sheets span directions t_A and t_B; the band is
the surface {xi * eta = c(alpha)} in sheet coordinates, with
c = eps^2 sin(n alpha). Where c vanishes the cross-section degenerates to
the transversal X and the surface passes through the crossing point
itself; those points lie exactly on the horizontal axes. All angular grid
sizes are multiples of 4n so the connectivity maps onto itself under the
full dihedral group, which the orbit-synchronised remesher relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .equivariance import dihedral_group, orbit_structure
from .errors import InvalidInputError, SeedGeometryError
from .gaussmetric import discrete_gauss_area
from .primitives import MeshBuilder, allowed_ring_size, stitch_rings
from .trimesh import TriMesh

DEFAULT_T = 2.0 / 3.0
DEFAULT_FILLET = 0.15
DEFAULT_TARGET_EDGE = 0.08
DEFAULT_CLIP_RADIUS = 8.0


@dataclass
class SeedSpec:
    """Parameters of an initial surface.

    family "one_end" reads g_or_n as the genus g (dihedral order 2(g+1));
    family "two_end" reads it as the dihedral parameter n (genus 2n-1)
    and ignores t. The fillet is the neck half-width; it is clamped
    internally when the crossing circle is too small to accommodate it.
    """

    family: str
    g_or_n: int
    t: float = DEFAULT_T
    fillet: float = DEFAULT_FILLET
    target_edge: float = DEFAULT_TARGET_EDGE
    clip_radius: float = DEFAULT_CLIP_RADIUS
    antiprismatic: bool = True

    def __post_init__(self):
        if self.family not in ("one_end", "two_end"):
            raise InvalidInputError(f"unknown seed family {self.family!r}")
        if self.g_or_n < 1:
            raise InvalidInputError("g_or_n must be a positive integer")
        if self.family == "two_end" and self.g_or_n < 3:
            raise InvalidInputError("two_end family needs n >= 3")
        if not 0.0 < self.t < 1.0:
            raise InvalidInputError("t must lie in (0, 1)")
        if not 0 < self.fillet < min(0.5, self.clip_radius / 10.0):
            raise InvalidInputError("fillet must lie in (0, min(0.5, R/10))")
        if not 0 < self.target_edge < self.fillet:
            raise InvalidInputError("target_edge must be positive and below fillet")

    @property
    def n(self) -> int:
        return self.g_or_n + 1 if self.family == "one_end" else self.g_or_n

    @property
    def genus(self) -> int:
        return self.g_or_n if self.family == "one_end" else 2 * self.g_or_n - 1

    def group(self):
        return dihedral_group(self.n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _NeckRows:
    """Port rings and per-section rows of one desingularisation band."""

    a_plus: np.ndarray
    a_minus: np.ndarray
    b_plus: np.ndarray
    b_minus: np.ndarray
    row_up: list = field(default_factory=list)
    row_dn: list = field(default_factory=list)


def _build_neck_band(
    b: MeshBuilder,
    centers: np.ndarray,  # (m, 3) crossing circle samples
    t_a: np.ndarray,  # (m, 3) unit sheet-A directions
    t_b: np.ndarray,  # (m, 3) unit sheet-B directions
    c: np.ndarray,  # (m,) neck parameter, exactly 0 at transitions
    rho: float,
    k_samples: int,
) -> _NeckRows:
    """Band of saddles {xi*eta = c} between four port rings at distance rho.

    Interior rows sample each hyperbola branch geometrically between its
    two ports; transition sections carry an explicit X of four spokes
    meeting at the crossing point. Quads are split by (section + rung)
    parity, which is preserved by index shifts and reversals alike.
    """
    m = len(centers)
    K = k_samples

    def at(i, xi, eta):
        return centers[i] + xi * t_a[i] + eta * t_b[i]

    ports = _NeckRows(
        a_plus=b.ring([at(i, rho, c[i] / rho) for i in range(m)]),
        a_minus=b.ring([at(i, -rho, -c[i] / rho) for i in range(m)]),
        b_plus=b.ring([at(i, c[i] / rho, rho) for i in range(m)]),
        b_minus=b.ring([at(i, -c[i] / rho, -rho) for i in range(m)]),
    )

    rows_up: list = [None] * m
    rows_dn: list = [None] * m
    spokes: dict = {}
    for i in range(m):
        if c[i] == 0.0:
            center = b.vertex(centers[i])
            sp = {}
            for name, (xi_dir, eta_dir, port) in {
                "Ap": (1.0, 0.0, ports.a_plus[i]),
                "Am": (-1.0, 0.0, ports.a_minus[i]),
                "Bp": (0.0, 1.0, ports.b_plus[i]),
                "Bm": (0.0, -1.0, ports.b_minus[i]),
            }.items():
                inner = [
                    b.vertex(at(i, xi_dir * rho * j / K, eta_dir * rho * j / K))
                    for j in range(1, K)
                ]
                sp[name] = [center] + inner + [int(port)]
            spokes[i] = sp
        else:
            s = 1.0 if c[i] > 0 else -1.0
            lam = np.sqrt(abs(c[i])) / rho
            up = [int(ports.a_plus[i] if s > 0 else ports.a_minus[i])]
            dn = [int(ports.a_minus[i] if s > 0 else ports.a_plus[i])]
            for j in range(1, 2 * K):
                tau = (j - K) / K
                xi = s * rho * lam ** (1.0 + tau)
                eta = rho * lam ** (1.0 - tau)
                up.append(b.vertex(at(i, xi, eta)))
                dn.append(b.vertex(at(i, -xi, -eta)))
            up.append(int(ports.b_plus[i]))
            dn.append(int(ports.b_minus[i]))
            rows_up[i] = up
            rows_dn[i] = dn

    def composite(i, toward_sign, branch):
        sp = spokes[i]
        if branch == "up":
            a_name = "Ap" if toward_sign > 0 else "Am"
            b_name = "Bp"
        else:
            a_name = "Am" if toward_sign > 0 else "Ap"
            b_name = "Bm"
        a_sp, b_sp = sp[a_name], sp[b_name]
        # From the A-side port inward to the centre, then out to the B port.
        return a_sp[::-1][:-1] + b_sp

    for i in range(m):
        i1 = (i + 1) % m
        for branch, rows in (("up", rows_up), ("dn", rows_dn)):
            if rows[i] is not None and rows[i1] is not None:
                ra, rb = rows[i], rows[i1]
            elif rows[i] is None:
                sign_next = 1.0 if c[i1] > 0 else -1.0
                ra, rb = composite(i, sign_next, branch), rows[i1]
            else:
                sign_prev = 1.0 if c[i] > 0 else -1.0
                ra, rb = rows[i], composite(i1, sign_prev, branch)
            b.strip(ra, rb, closed=False, parity_offset=i)

    ports.row_up = rows_up
    ports.row_dn = rows_dn
    return ports


def _graded_polar_rows(
    b: MeshBuilder,
    boundary_row: np.ndarray,
    stations: list,  # [(ring_size, points)] from boundary inward, ending near apex
    apex_point,
) -> None:
    rows = [boundary_row]
    for size, pts in stations:
        rows.append(b.ring(pts))
    stitch_rings(b, rows)
    apex = b.vertex(apex_point)
    b.fan(apex, rows[-1])


def _ring_sizes_inward(circumferences, h, base, m_start) -> list[int]:
    sizes = []
    cur = m_start
    for circ in circumferences:
        while cur > base and circ / (cur / 2) < 1.2 * h:
            cur //= 2
        sizes.append(cur)
    return sizes


def _ring_sizes_outward(circumferences, h, m_start, m_cap=None) -> list[int]:
    sizes = []
    cur = m_start
    for circ in circumferences:
        while circ / cur > 1.4 * h and (m_cap is None or cur * 2 <= m_cap):
            cur *= 2
        sizes.append(cur)
    return sizes


def _angles(m: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(m) / m


def _neck_parameter(n: int, m: int, eps: float, sign: float = 1.0) -> np.ndarray:
    """eps^2 sin(n alpha) on the m-grid, exactly zero at the transitions."""
    c = eps * eps * np.sin(n * _angles(m)) * sign
    period = m // (2 * n)
    c[::period] = 0.0
    return c


def seed_one_end(spec: SeedSpec) -> TriMesh:
    """Genus-g seed: horizontal plane joined to the sphere of radius
    t/(1-t) through 2(g+1) alternating necks, extended to the clipping
    sphere. Falls back to the plain disc when the sphere (plus neck)
    does not fit inside the clipping ball."""
    if spec.family != "one_end":
        raise InvalidInputError("seed_one_end needs family='one_end'")
    n = spec.n
    R = spec.clip_radius
    h = spec.target_edge
    a = spec.t / (1.0 - spec.t)

    rho = min(spec.fillet, 0.45 * a)
    if rho <= 0:
        raise SeedGeometryError("scale parameter leaves no room for a neck")
    if a + rho >= R:
        # Sphere outside the simulation ball: the slice is just the disc.
        from .primitives import flat_disc

        return flat_disc(R, h, base=4 * n)
    eps = rho / 2.0

    m = allowed_ring_size(2.0 * np.pi * a / min(h, rho), base=2 * n, minimum=4 * n)
    K = max(2, int(round(1.2 * rho / h)))
    c = _neck_parameter(n, m, eps)
    ang = _angles(m)
    r_hat = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(m)])
    z_hat = np.tile([0.0, 0.0, 1.0], (m, 1))
    centers = a * r_hat

    b = MeshBuilder()
    ports = _build_neck_band(b, centers, r_hat, z_hat, c, rho, K)

    def c_fn(angles):
        val = eps * eps * np.sin(n * angles)
        period_angle = np.pi / n
        snap = np.abs(np.remainder(angles + period_angle / 2, period_angle) - period_angle / 2)
        val[snap < 1e-12] = 0.0
        return val

    def taper(r):
        x = np.clip((r - 0.25 * a) / (0.35 * a), 0.0, 1.0)
        return x * x * (3 - 2 * x)

    # Inner disc: height c(alpha) s(r) / (r - a), flat at the origin.
    r_edge = a - rho
    n_in = max(2, int(np.ceil(r_edge / h)))
    radii_in = [r_edge * (1 - (j + 1) / n_in) for j in range(n_in - 1)]
    sizes_in = _ring_sizes_inward([2 * np.pi * r for r in radii_in], h, 2 * n, m)
    stations = []
    for r, size in zip(radii_in, sizes_in):
        angs = _angles(size)
        z = c_fn(angs) * taper(np.full(size, r)) / (r - a)
        pts = np.column_stack([r * np.cos(angs), r * np.sin(angs), z])
        stations.append((size, pts))
    _graded_polar_rows(b, ports.a_minus, stations, (0.0, 0.0, 0.0))

    # Outer annulus out to the clipping sphere, heights c(alpha) / (r - a).
    r_first = a + rho
    n_out = max(2, int(np.ceil((R - r_first) / h)))
    radii_out = [r_first + (R - r_first) * (j + 1) / n_out for j in range(n_out)]
    sizes_out = _ring_sizes_outward([2 * np.pi * r for r in radii_out], h, m)
    rows = [ports.a_plus]
    for idx, (r, size) in enumerate(zip(radii_out, sizes_out)):
        angs = _angles(size)
        z = c_fn(angs) / (r - a)
        pts = np.column_stack([r * np.cos(angs), r * np.sin(angs), z])
        if idx == len(radii_out) - 1:
            nrm = np.linalg.norm(pts, axis=1)
            pts *= (R / nrm)[:, None]
        rows.append(b.ring(pts))
    stitch_rings(b, rows)

    # Spherical caps from the poles down to the B ports.
    for sign, port_row in ((1.0, ports.b_plus), (-1.0, ports.b_minus)):
        phi_port = np.arccos(min(rho / a, 1.0))
        phi_last = max(phi_port - h / a, phi_port * 0.5)
        n_cap = max(2, int(np.ceil(phi_last * a / h)))
        phis = [phi_last * (1 - (j + 1) / n_cap) for j in range(n_cap - 1)]
        sizes = _ring_sizes_inward([2 * np.pi * a * np.sin(p) for p in phis], h, 2 * n, m)
        stations = []
        for phi, size in zip(phis, sizes):
            angs = _angles(size)
            pts = np.column_stack(
                [
                    a * np.sin(phi) * np.cos(angs),
                    a * np.sin(phi) * np.sin(angs),
                    np.full(size, sign * a * np.cos(phi)),
                ]
            )
            stations.append((size, pts))
        _graded_polar_rows(b, port_row, stations, (0.0, 0.0, sign * a))

    def hint(cen):
        ref = np.zeros_like(cen)
        r_cyl = np.linalg.norm(cen[:, :2], axis=1)
        plane_like = (np.abs(cen[:, 2]) < 0.5 * rho) & (r_cyl > a + rho)
        ref[plane_like] = [0.0, 0.0, 1.0]
        return ref

    mesh = b.build(outward_hint=hint)
    mesh.orbit_labels = orbit_structure(mesh, spec.group()).orbit_of
    return mesh


def seed_two_end(spec: SeedSpec) -> TriMesh:
    """Genus 2n-1 seed: vertical cylinder of radius sqrt(2) and sphere of
    radius 2, desingularised along both crossing circles (at heights
    +-sqrt(2)) with 2n necks each, cut off on the clipping sphere. The
    polar caps of the sphere are retained, so the seed meets the vertical
    axis at exactly two points."""
    if spec.family != "two_end":
        raise InvalidInputError("seed_two_end needs family='two_end'")
    n = spec.n
    R = spec.clip_radius
    h = spec.target_edge
    r_cyl = np.sqrt(2.0)
    r_sph = 2.0
    z_circ = np.sqrt(2.0)
    if R <= r_sph:
        raise SeedGeometryError("clip radius must exceed the sphere radius 2")

    rho = min(spec.fillet, 0.35, 2.4 / n)
    eps = rho / 2.0
    m = allowed_ring_size(2.0 * np.pi * r_cyl / min(h, rho), base=2 * n, minimum=4 * n)
    K = max(2, int(round(1.2 * rho / h)))

    ang = _angles(m)
    r_hat = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(m)])
    z_hat = np.tile([0.0, 0.0, 1.0], (m, 1))

    b = MeshBuilder()
    bands = {}
    for sign in (1.0, -1.0):
        centers = r_cyl * r_hat + np.array([0.0, 0.0, sign * z_circ])
        t_a = z_hat  # cylinder sheet
        t_b = (r_hat - sign * z_hat) / np.sqrt(2.0)  # sphere sheet, towards equator
        # The equator-pointing frames absorb one z-flip, so equal phases on
        # the two circles is the configuration the half-turns map onto
        # itself (full dihedral symmetry); flipping the lower phase keeps
        # only the vertical rotations.
        phase = 1.0 if (sign > 0 or spec.antiprismatic) else -1.0
        c = _neck_parameter(n, m, eps, sign=phase)
        bands[sign] = _build_neck_band(b, centers, t_a, t_b, c, rho, K)

    z_end = np.sqrt(R * R - r_cyl * r_cyl)

    def cylinder_rows(z_from, z_to, snap_last_to_sphere, skip_last=False):
        n_rows = max(2, int(np.ceil(abs(z_to - z_from) / h)))
        out = []
        last = n_rows - 1 if skip_last else n_rows
        for j in range(1, last + 1):
            z = z_from + (z_to - z_from) * j / n_rows
            pts = np.column_stack(
                [r_cyl * np.cos(ang), r_cyl * np.sin(ang), np.full(m, z)]
            )
            if snap_last_to_sphere and j == n_rows:
                nrm = np.linalg.norm(pts, axis=1)
                pts *= (R / nrm)[:, None]
            out.append(b.ring(pts))
        return out

    # Upper and lower cylinder runs out to the clipping sphere.
    stitch_rings(b, [bands[1.0].a_plus] + cylinder_rows(z_circ + rho, z_end, True))
    stitch_rings(b, [bands[-1.0].a_minus] + cylinder_rows(-z_circ - rho, -z_end, True))
    # Middle cylinder run between the two bands.
    mid_rows = cylinder_rows(z_circ - rho, -z_circ + rho, False, skip_last=True)
    stitch_rings(b, [bands[1.0].a_minus] + mid_rows + [bands[-1.0].a_plus])

    # Sphere equatorial belt between the two B+ port rings.
    phi_c = np.arccos(z_circ / r_sph)  # 45 degrees
    dphi = rho / r_sph
    n_belt = max(2, int(np.ceil((np.pi - 2 * (phi_c + dphi)) * r_sph / h)))
    belt_rows = [bands[1.0].b_plus]
    for j in range(1, n_belt):
        phi = (phi_c + dphi) + (np.pi - 2 * (phi_c + dphi)) * j / n_belt
        pts = np.column_stack(
            [
                r_sph * np.sin(phi) * np.cos(ang),
                r_sph * np.sin(phi) * np.sin(ang),
                np.full(m, r_sph * np.cos(phi)),
            ]
        )
        belt_rows.append(b.ring(pts))
    belt_rows.append(bands[-1.0].b_plus)
    stitch_rings(b, belt_rows)

    # Polar caps above/below the B- port rings.
    for sign, band in ((1.0, bands[1.0]), (-1.0, bands[-1.0])):
        phi_port = phi_c - dphi
        phi_last = max(phi_port - h / r_sph, phi_port * 0.5)
        n_cap = max(2, int(np.ceil(phi_last * r_sph / h)))
        phis = [phi_last * (1 - (j + 1) / n_cap) for j in range(n_cap - 1)]
        sizes = _ring_sizes_inward([2 * np.pi * r_sph * np.sin(p) for p in phis], h, 2 * n, m)
        stations = []
        for phi, size in zip(phis, sizes):
            angs = _angles(size)
            pts = np.column_stack(
                [
                    r_sph * np.sin(phi) * np.cos(angs),
                    r_sph * np.sin(phi) * np.sin(angs),
                    np.full(size, sign * r_sph * np.cos(phi)),
                ]
            )
            stations.append((size, pts))
        _graded_polar_rows(b, band.b_minus, stations, (0.0, 0.0, sign * r_sph))

    mesh = b.build(outward_hint=lambda cen: cen)
    group = spec.group() if spec.antiprismatic else None
    if group is not None:
        mesh.orbit_labels = orbit_structure(mesh, group).orbit_of
    return mesh


def build_seed(spec: SeedSpec) -> TriMesh:
    return seed_one_end(spec) if spec.family == "one_end" else seed_two_end(spec)


def sweepout_family(
    g: int,
    t_samples,
    fillet: float = 0.18,
    target_edge: float = 0.12,
    clip_radius: float = DEFAULT_CLIP_RADIUS,
) -> list[tuple[float, TriMesh, float]]:
    """One-end seeds over a list of scale parameters with their weighted
    areas; the raw material of the width scan."""
    samples = list(t_samples)
    if any(not 0 < t < 1 for t in samples):
        raise InvalidInputError("t samples must lie in (0, 1)")
    if samples != sorted(samples):
        raise InvalidInputError("t samples must be sorted")
    out = []
    for t in samples:
        spec = SeedSpec(
            family="one_end",
            g_or_n=g,
            t=t,
            fillet=fillet,
            target_edge=target_edge,
            clip_radius=clip_radius,
        )
        mesh = seed_one_end(spec)
        out.append((t, mesh, discrete_gauss_area(mesh).total))
    return out
