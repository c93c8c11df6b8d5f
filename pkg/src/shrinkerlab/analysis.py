"""Measurements on evolved meshes: end counting, distance to the
plane-union-sphere model, width scans over the one-parameter seed family,
boundary angle statistics and the reference-surface certification suite.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .equivariance import axis_intersection_count
from .errors import InvalidInputError, NotClippedError
from .gaussmetric import (
    discrete_gauss_area,
    gradient_residual,
    shrinker_residual,
    sphere_gauss_area,
    vertex_normals,
    weight,
)
from .primitives import cylinder_patch, flat_disc, icosphere
from .seeds import sweepout_family
from .trimesh import TriMesh, boundary_loops, read_obj, read_ply, write_obj, write_ply

END_CLIP_TOL = 1e-6  # x R: how far a boundary vertex may sit off the sphere


def count_ends(mesh: TriMesh, R: float) -> int:
    """Boundary loops on the clipping sphere, the discrete stand-in for
    the number of ends (each end of a complete self-shrinker meets a
    large sphere in a single circle)."""
    if R <= 0:
        raise InvalidInputError("R must be positive")
    if not mesh.boundary_flags.any():
        return 0
    r = np.linalg.norm(mesh.vertices[mesh.boundary_flags], axis=1)
    off = np.abs(r - R).max()
    if off > END_CLIP_TOL * R:
        raise NotClippedError(
            f"boundary vertex {off:.3e} away from the clipping sphere |x| = {R}"
        )
    return len(boundary_loops(mesh))


def distance_to_plane_sphere(mesh: TriMesh, tube_radius: float = 0.5) -> float:
    """One-sided sup distance from mesh vertices to the union of the
    horizontal plane and the sphere of radius 2.

    Vertices within tube_radius of their intersection circle (radius 2 in
    the plane) are ignored: along that circle the limit is singular and
    pointwise distance is not meaningful. One-sided because the mesh
    cannot parameterise both sheets of a multiplicity limit.
    """
    if tube_radius <= 0:
        raise InvalidInputError("tube_radius must be positive")
    v = mesh.vertices
    r_cyl = np.linalg.norm(v[:, :2], axis=1)
    dist_circle = np.sqrt((r_cyl - 2.0) ** 2 + v[:, 2] ** 2)
    keep = dist_circle > tube_radius
    if not keep.any():
        return 0.0
    d_plane = np.abs(v[keep, 2])
    d_sphere = np.abs(np.linalg.norm(v[keep], axis=1) - 2.0)
    return float(np.minimum(d_plane, d_sphere).max())


def width_scan(
    g: int,
    samples: int,
    fillet: float = 0.18,
    target_edge: float = 0.12,
    clip_radius: float = 8.0,
) -> dict:
    """Max weighted area over the uniform scale grid t = k/(samples+1).

    Returns the maximum, its location, and the areas at the first and
    last grid points (the near-endpoint slices, which should be close to
    the bare plane value)."""
    if samples < 3:
        raise InvalidInputError("need at least 3 samples")
    ts = [k / (samples + 1) for k in range(1, samples + 1)]
    fam = sweepout_family(
        g, ts, fillet=fillet, target_edge=target_edge, clip_radius=clip_radius
    )
    areas = [a for (_, _, a) in fam]
    k_max = int(np.argmax(areas))
    return {
        "g": g,
        "samples": samples,
        "max_F": float(areas[k_max]),
        "argmax_t": float(ts[k_max]),
        "endpoint_areas": (float(areas[0]), float(areas[-1])),
        "areas": [float(a) for a in areas],
        "ts": [float(t) for t in ts],
    }


def boundary_angle_stats(mesh: TriMesh, R: float) -> tuple[float, float]:
    """(mean, max) deviation in degrees from orthogonal contact between
    the surface and the clipping sphere along the boundary."""
    if not mesh.boundary_flags.any():
        return (0.0, 0.0)
    nu = vertex_normals(mesh)[mesh.boundary_flags]
    x = mesh.vertices[mesh.boundary_flags]
    xhat = x / np.linalg.norm(x, axis=1)[:, None]
    dev = np.degrees(np.arcsin(np.clip(np.abs((nu * xhat).sum(1)), 0.0, 1.0)))
    return (float(dev.mean()), float(dev.max()))


def vertical_axis_hits(mesh: TriMesh, R: float, exclude_origin: bool = True) -> int:
    """Transversal crossings of the vertical axis inside the clipping ball.

    With exclude_origin (the reported convention) the crossing forced at
    the origin by the contained horizontal axes is not counted, so the
    one-end family scores 2, the bare plane 0.
    """
    v = mesh.vertices
    tol = 1e-6 * max(mesh.bbox_diameter(), 1.0)
    count = axis_intersection_count(mesh, np.array([0.0, 0.0, 1.0]), tol=tol)
    if exclude_origin:
        on_axis = np.linalg.norm(v[:, :2], axis=1) < tol
        near_origin = on_axis & (np.abs(v[:, 2]) < 1e-3 * R)
        count -= int(near_origin.sum())
    return count


def vertical_axis_orthogonality(mesh: TriMesh, R: float) -> float:
    """Max deviation (degrees) of the surface normal from the vertical at
    the off-origin crossings of the vertical axis."""
    v = mesh.vertices
    tol = 1e-6 * max(mesh.bbox_diameter(), 1.0)
    on_axis = np.linalg.norm(v[:, :2], axis=1) < tol
    crossing = on_axis & (np.abs(v[:, 2]) >= 1e-3 * R)
    if not crossing.any():
        return 0.0
    nu = vertex_normals(mesh)[crossing]
    dev = np.degrees(np.arccos(np.clip(np.abs(nu[:, 2]), -1.0, 1.0)))
    return float(dev.max())


def end_profile(mesh: TriMesh, R: float, inner_R: float = 7.0) -> list[dict]:
    """Heuristic conical-versus-cylindrical classification of each end.

    Compares every boundary loop's mean distance from the vertical axis
    at two clip radii: a conical end scales with R, a cylindrical end
    stays near sqrt(2). Reported as a hint, not a certification.
    """
    from .trimesh import clip_to_ball

    def loop_stats(m):
        out = []
        for loop in boundary_loops(m):
            pts = m.vertices[loop]
            out.append(
                {
                    "mean_axis_distance": float(np.linalg.norm(pts[:, :2], axis=1).mean()),
                    "mean_height": float(pts[:, 2].mean()),
                }
            )
        return sorted(out, key=lambda s: s["mean_height"])

    outer = loop_stats(mesh)
    inner_mesh = clip_to_ball(mesh, inner_R)
    inner = loop_stats(inner_mesh)
    profile = []
    for o, i in zip(outer, inner if len(inner) == len(outer) else outer):
        ratio = o["mean_axis_distance"] / max(i["mean_axis_distance"], 1e-12)
        expected_conical = R / inner_R
        kind = "conical" if abs(ratio - expected_conical) < abs(ratio - 1.0) else "cylindrical"
        profile.append(
            {
                "mean_axis_distance": o["mean_axis_distance"],
                "mean_height": o["mean_height"],
                "radius_ratio": float(ratio),
                "kind_hint": kind,
            }
        )
    return profile


@dataclass
class KnownShrinkerReport:
    """Residuals and weighted areas of the three reference self-shrinkers
    against their closed forms."""

    plane_F: float
    plane_F_exact: float
    plane_residual_rms: float
    sphere_F: float
    sphere_F_exact: float
    sphere_residual_rms: float
    cylinder_F: float
    cylinder_F_exact: float
    cylinder_residual_rms: float

    def rows(self) -> list[tuple]:
        return [
            ("plane", self.plane_F, self.plane_F_exact, self.plane_residual_rms),
            ("sphere", self.sphere_F, self.sphere_F_exact, self.sphere_residual_rms),
            ("cylinder", self.cylinder_F, self.cylinder_F_exact, self.cylinder_residual_rms),
        ]


def verify_known_shrinkers(R: float = 8.0, sphere_level: int = 4) -> KnownShrinkerReport:
    """Certify the flat disc, the radius-2 sphere and the radius-sqrt(2)
    cylinder against their closed-form weighted areas and the vanishing
    shrinker residual."""
    from scipy.special import erf

    disc = flat_disc(R, 0.25)
    plane_F = discrete_gauss_area(disc).total
    plane_exact = 1.0 - np.exp(-R * R / 4.0)
    plane_rms = shrinker_residual(disc).rms_weighted

    sph = icosphere(2.0, sphere_level)
    sphere_F = discrete_gauss_area(sph).total
    sphere_rms = shrinker_residual(sph).rms_weighted

    r = np.sqrt(2.0)
    cyl = cylinder_patch(r, -1.0, 1.0, 0.1, cap_to_sphere=R)
    cyl_F = discrete_gauss_area(cyl).total
    z_lim = np.sqrt(R * R - 2.0)
    cyl_exact = float(np.sqrt(2 * np.pi / np.e) * erf(z_lim / 2.0))
    cyl_rms = shrinker_residual(cyl).rms_weighted

    return KnownShrinkerReport(
        plane_F=plane_F,
        plane_F_exact=float(plane_exact),
        plane_residual_rms=plane_rms,
        sphere_F=sphere_F,
        sphere_F_exact=sphere_gauss_area(2.0),
        sphere_residual_rms=sphere_rms,
        cylinder_F=cyl_F,
        cylinder_F_exact=cyl_exact,
        cylinder_residual_rms=cyl_rms,
    )


def export_mesh(mesh: TriMesh, path, format: str | None = None) -> None:
    """Write OBJ or binary PLY; the round trip is exact for float64."""
    fmt = format or os.path.splitext(str(path))[1].lstrip(".").lower()
    if fmt == "obj":
        write_obj(mesh, path)
    elif fmt == "ply":
        write_ply(mesh, path)
    else:
        raise InvalidInputError(f"unknown mesh format {fmt!r}")


def import_mesh(path, format: str | None = None) -> TriMesh:
    fmt = format or os.path.splitext(str(path))[1].lstrip(".").lower()
    if fmt == "obj":
        return read_obj(path)
    if fmt == "ply":
        return read_ply(path)
    raise InvalidInputError(f"unknown mesh format {fmt!r}")


def _format_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.17g}")
    if isinstance(obj, dict):
        return {k: _format_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_format_floats(x) for x in obj]
    return obj


def write_report(report_dict: dict, path) -> None:
    """Atomic JSON dump with 17-significant-digit floats."""
    payload = json.dumps(_format_floats(report_dict), indent=2)
    directory = os.path.dirname(os.path.abspath(str(path))) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(payload)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
