"""Oriented triangle meshes with boundary: representation, validation,
topology (Euler characteristic, boundary loops, genus), ball clipping and
OBJ / binary PLY round-tripping.

Vertices are float64 (n, 3) arrays, triangles int64 (m, 3) index triples
with consistent winding. Meshes are treated as immutable snapshots: every
operation returns a new TriMesh.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ClipDegenerateError, InvalidInputError, MeshTopologyError

# Relative tolerances, all scaled by bounding-box size.
DUPLICATE_TOL = 1e-9          # x bbox diameter: closest allowed vertex pair
DEGENERATE_AREA_TOL = 1e-14   # x bbox scale^2: triangle area cutoff
CLIP_SNAP_TOL = 1e-12         # x R: vertex treated as exactly on the sphere
CLIP_NUDGE_TOL = 1e-9         # x R: vertex nudged radially inward


def _as_vertex_array(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise InvalidInputError(f"vertices must be (n, 3), got {v.shape}")
    return v


def _as_triangle_array(triangles) -> np.ndarray:
    t = np.asarray(triangles, dtype=np.int64)
    if t.size == 0:
        return t.reshape(0, 3)
    if t.ndim != 2 or t.shape[1] != 3:
        raise InvalidInputError(f"triangles must be (m, 3), got {t.shape}")
    return t


@dataclass
class TriMesh:
    """Oriented manifold triangle mesh, possibly with boundary.

    Attributes
    ----------
    vertices : (n, 3) float64 array
    triangles : (m, 3) int64 array of oriented vertex index triples
    orbit_labels : optional (n,) int64 array tagging symmetry orbits
    boundary_flags : (n,) bool array, True exactly on vertices incident to
        an edge with a single triangle. Derived, do not set by hand.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    orbit_labels: np.ndarray | None = None
    boundary_flags: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = _as_vertex_array(self.vertices)
        self.triangles = _as_triangle_array(self.triangles)
        if self.orbit_labels is not None:
            self.orbit_labels = np.asarray(self.orbit_labels, dtype=np.int64)
            if self.orbit_labels.shape != (len(self.vertices),):
                raise InvalidInputError("orbit_labels must be per-vertex")
        if self.boundary_flags is None:
            self.boundary_flags = _boundary_flags(self.vertices, self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bbox_diameter(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))

    def copy(self) -> "TriMesh":
        labels = None if self.orbit_labels is None else self.orbit_labels.copy()
        return TriMesh(self.vertices.copy(), self.triangles.copy(), labels)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity, new positions."""
        labels = None if self.orbit_labels is None else self.orbit_labels.copy()
        return TriMesh(np.array(vertices, dtype=np.float64), self.triangles.copy(), labels)


def directed_edges(triangles: np.ndarray) -> np.ndarray:
    """All 3m directed edges (a, b) in winding order."""
    return triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)


def undirected_edges(triangles: np.ndarray, return_counts: bool = False):
    """Unique undirected edges, optionally with incidence counts."""
    e = np.sort(directed_edges(triangles), axis=1)
    if return_counts:
        edges, counts = np.unique(e, axis=0, return_counts=True)
        return edges, counts
    return np.unique(e, axis=0)


def _boundary_flags(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    flags = np.zeros(len(vertices), dtype=bool)
    if len(triangles) == 0:
        return flags
    edges, counts = undirected_edges(triangles, return_counts=True)
    b = edges[counts == 1]
    flags[b.reshape(-1)] = True
    return flags


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    v, t = mesh.vertices, mesh.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    return 0.5 * np.linalg.norm(n, axis=1)


def edge_lengths(mesh: TriMesh) -> np.ndarray:
    e = undirected_edges(mesh.triangles)
    d = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    return np.linalg.norm(d, axis=1)


@dataclass
class MeshDiagnostics:
    """Result of validate(): per-check defect lists, empty means clean."""

    manifold: bool
    oriented: bool
    nonmanifold_edges: list
    misoriented_edges: list
    duplicate_vertex_pairs: list
    degenerate_triangles: list
    nonfinite_vertices: list
    isolated_vertices: list
    nonmanifold_vertices: list

    @property
    def ok(self) -> bool:
        return (
            self.manifold
            and self.oriented
            and not self.duplicate_vertex_pairs
            and not self.degenerate_triangles
            and not self.nonfinite_vertices
            and not self.isolated_vertices
            and not self.nonmanifold_vertices
        )

    def summary(self) -> str:
        if self.ok:
            return "valid"
        parts = []
        if not self.manifold:
            parts.append(f"{len(self.nonmanifold_edges)} nonmanifold edges")
        if not self.oriented:
            parts.append(f"{len(self.misoriented_edges)} misoriented edges")
        if self.duplicate_vertex_pairs:
            parts.append(f"{len(self.duplicate_vertex_pairs)} duplicate vertex pairs")
        if self.degenerate_triangles:
            parts.append(f"{len(self.degenerate_triangles)} degenerate triangles")
        if self.nonfinite_vertices:
            parts.append(f"{len(self.nonfinite_vertices)} nonfinite vertices")
        if self.isolated_vertices:
            parts.append(f"{len(self.isolated_vertices)} isolated vertices")
        if self.nonmanifold_vertices:
            parts.append(f"{len(self.nonmanifold_vertices)} nonmanifold vertices")
        return "; ".join(parts)


def validate(mesh: TriMesh) -> MeshDiagnostics:
    """Run all structural checks. Reports defects, never raises.

    A mesh is valid iff every edge has at most two incident triangles,
    shared edges are traversed in opposite directions (orientability),
    no two vertices coincide within 1e-9 x bbox diameter, no triangle
    area is below 1e-14 x bbox scale^2, all coordinates are finite,
    every vertex is used, and each vertex's triangle fan is a single
    disc or half-disc.
    """
    v, t = mesh.vertices, mesh.triangles
    nonfinite = np.where(~np.isfinite(v).all(axis=1))[0].tolist()

    de = directed_edges(t)
    eu = np.sort(de, axis=1)
    edges, inv, counts = np.unique(eu, axis=0, return_inverse=True, return_counts=True)
    nonmanifold_edges = edges[counts > 2].tolist()

    # Orientation: a directed edge repeated means two triangles agree on it.
    dir_unique, dir_counts = np.unique(de, axis=0, return_counts=True)
    misoriented = dir_unique[dir_counts > 1].tolist()

    diam = mesh.bbox_diameter()
    dup_pairs = []
    if len(v) > 1 and not nonfinite:
        from scipy.spatial import cKDTree

        tree = cKDTree(v)
        pairs = tree.query_pairs(max(DUPLICATE_TOL * diam, 0.0))
        dup_pairs = sorted(tuple(sorted(p)) for p in pairs)

    areas = triangle_areas(mesh) if len(t) else np.zeros(0)
    scale2 = max(diam, 1.0) ** 2 if diam > 0 else 1.0
    degenerate = np.where(areas < DEGENERATE_AREA_TOL * scale2)[0].tolist()

    used = np.zeros(len(v), dtype=bool)
    if len(t):
        used[t.reshape(-1)] = True
    isolated = np.where(~used)[0].tolist()

    nonmanifold_vertices = _nonmanifold_vertices(t, len(v)) if len(t) else []

    return MeshDiagnostics(
        manifold=not nonmanifold_edges,
        oriented=not misoriented,
        nonmanifold_edges=nonmanifold_edges,
        misoriented_edges=misoriented,
        duplicate_vertex_pairs=dup_pairs,
        degenerate_triangles=degenerate,
        nonfinite_vertices=nonfinite,
        isolated_vertices=isolated,
        nonmanifold_vertices=nonmanifold_vertices,
    )


def _nonmanifold_vertices(triangles: np.ndarray, n_vertices: int) -> list:
    """Vertices whose incident triangles do not form a single fan."""
    # Union-find over each vertex's incident triangles, merged across the
    # two triangles of every interior edge.
    incident = [[] for _ in range(n_vertices)]
    for ti, (a, b, c) in enumerate(triangles):
        incident[a].append(ti)
        incident[b].append(ti)
        incident[c].append(ti)

    edge_map: dict[tuple, list] = {}
    for ti, tri in enumerate(triangles):
        for i in range(3):
            key = (min(tri[i], tri[(i + 1) % 3]), max(tri[i], tri[(i + 1) % 3]))
            edge_map.setdefault(key, []).append(ti)

    bad = []
    for vi in range(n_vertices):
        tris = incident[vi]
        if len(tris) <= 1:
            continue
        parent = {ti: ti for ti in tris}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        local = set(tris)
        for ti in tris:
            tri = triangles[ti]
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                if vi not in (a, b):
                    continue
                key = (min(a, b), max(a, b))
                for tj in edge_map[key]:
                    if tj != ti and tj in local:
                        parent[find(ti)] = find(tj)
        roots = {find(ti) for ti in tris}
        if len(roots) > 1:
            bad.append(vi)
    return bad


@dataclass
class TopologyReport:
    """Euler characteristic, boundary loops, components and genus."""

    euler: int
    boundary_loops: int
    components: int
    genus: int

    def as_tuple(self) -> tuple:
        return (self.euler, self.boundary_loops, self.components, self.genus)


def euler_characteristic(mesh: TriMesh) -> int:
    """V - E + F."""
    n_edges = len(undirected_edges(mesh.triangles))
    return int(mesh.n_vertices - n_edges + mesh.n_triangles)


def boundary_loops(mesh: TriMesh) -> list[list[int]]:
    """Closed boundary loops as vertex index cycles, traced edge by edge."""
    de = directed_edges(mesh.triangles)
    eu = np.sort(de, axis=1)
    edges, inv, counts = np.unique(eu, axis=0, return_inverse=True, return_counts=True)
    boundary_mask = counts[inv] == 1
    bnd = de[boundary_mask]
    if len(bnd) == 0:
        return []
    succ: dict[int, int] = {}
    for a, b in bnd:
        if int(a) in succ:
            raise MeshTopologyError(f"boundary branches at vertex {a}")
        succ[int(a)] = int(b)
    loops = []
    remaining = dict(succ)
    while remaining:
        start = next(iter(remaining))
        loop = [start]
        cur = remaining.pop(start)
        while cur != start:
            loop.append(cur)
            if cur not in remaining:
                raise MeshTopologyError("boundary loop does not close")
            cur = remaining.pop(cur)
        loops.append(loop)
    return loops


def topology(mesh: TriMesh) -> TopologyReport:
    """Topological invariants; genus summed over connected components.

    Raises MeshTopologyError for non-manifold or non-orientable input,
    where genus is undefined.
    """
    diag = validate(mesh)
    if not diag.manifold or not diag.oriented or diag.nonmanifold_vertices:
        raise MeshTopologyError(f"topology undefined: {diag.summary()}")
    if mesh.n_triangles == 0:
        raise MeshTopologyError("empty mesh")

    t = mesh.triangles
    de = directed_edges(t)
    eu = np.sort(de, axis=1)
    edges, inv, counts = np.unique(eu, axis=0, return_inverse=True, return_counts=True)

    # Triangle components through shared edges.
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    tri_of_edge_occurrence = np.repeat(np.arange(len(t)), 3)
    order = np.argsort(inv, kind="stable")
    inv_sorted = inv[order]
    tris_sorted = tri_of_edge_occurrence[order]
    rows, cols = [], []
    i = 0
    while i < len(inv_sorted):
        j = i
        while j + 1 < len(inv_sorted) and inv_sorted[j + 1] == inv_sorted[i]:
            j += 1
        group = tris_sorted[i : j + 1]
        for k in range(len(group) - 1):
            rows.append(group[k])
            cols.append(group[k + 1])
        i = j + 1
    adj = coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(t), len(t))
    )
    n_comp, tri_label = connected_components(adj, directed=False)

    loops = boundary_loops(mesh)
    loop_component = []
    for loop in loops:
        # Attribute the loop to the component of a triangle using its first edge.
        a, b = loop[0], loop[1]
        key_mask = (eu[:, 0] == min(a, b)) & (eu[:, 1] == max(a, b))
        occ = np.where(key_mask)[0][0]
        loop_component.append(tri_label[occ // 3])

    total_genus = 0
    for comp in range(n_comp):
        tri_ids = np.where(tri_label == comp)[0]
        tris_c = t[tri_ids]
        verts_c = np.unique(tris_c)
        edges_c = len(np.unique(np.sort(directed_edges(tris_c), axis=1), axis=0))
        chi = len(verts_c) - edges_c + len(tris_c)
        b_c = sum(1 for lc in loop_component if lc == comp)
        g2 = 2 - chi - b_c
        if g2 < 0 or g2 % 2:
            raise MeshTopologyError(
                f"component {comp}: chi={chi}, b={b_c} gives non-integer genus"
            )
        total_genus += g2 // 2

    chi_total = euler_characteristic(mesh)
    return TopologyReport(
        euler=chi_total,
        boundary_loops=len(loops),
        components=int(n_comp),
        genus=int(total_genus),
    )


def clip_to_ball(mesh: TriMesh, radius: float) -> TriMesh:
    """Intersect the mesh with the closed ball |x| <= R.

    Triangles crossing the sphere are split; new boundary vertices are
    placed exactly on |x| = R. Vertices already on the sphere (within
    1e-12 R) are kept there; vertices merely near it (within 1e-9 R) are
    nudged radially inward first to restore transversality.
    """
    if not np.isfinite(radius) or radius <= 0:
        raise InvalidInputError("clip radius must be positive")
    R = float(radius)
    v = mesh.vertices.copy()
    t = mesh.triangles

    r = np.linalg.norm(v, axis=1)
    on_sphere = np.abs(r - R) <= CLIP_SNAP_TOL * R
    if on_sphere.any():
        v[on_sphere] *= (R / r[on_sphere])[:, None]
        r[on_sphere] = R
    near = (~on_sphere) & (np.abs(r - R) <= CLIP_NUDGE_TOL * R)
    if near.any():
        target = R * (1.0 - 2.0 * CLIP_NUDGE_TOL)
        v[near] *= (target / r[near])[:, None]
        r[near] = target
    inside = r <= R

    if inside.all():
        out = TriMesh(v, t.copy(), None if mesh.orbit_labels is None else mesh.orbit_labels.copy())
        return out
    keep_tri = inside[t].all(axis=1)
    cross_tri = inside[t].any(axis=1) & ~keep_tri

    new_verts = list(map(tuple, v))
    cut_cache: dict[tuple, int] = {}

    def cut(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key in cut_cache:
            return cut_cache[key]
        p, q = v[a], v[b]
        d = q - p
        aa = d @ d
        bb = 2.0 * (p @ d)
        cc = p @ p - R * R
        disc = bb * bb - 4 * aa * cc
        if disc <= 0 or aa == 0:
            raise ClipDegenerateError(f"tangential sphere crossing on edge ({a}, {b})")
        sq = np.sqrt(disc)
        roots = [(-bb - sq) / (2 * aa), (-bb + sq) / (2 * aa)]
        ts = [s for s in roots if 0.0 < s < 1.0]
        if not ts:
            raise ClipDegenerateError(f"no crossing parameter on edge ({a}, {b})")
        s = ts[0]
        x = p + s * d
        x *= R / np.linalg.norm(x)
        new_verts.append(tuple(x))
        idx = len(new_verts) - 1
        cut_cache[key] = idx
        return idx

    new_tris = [tuple(tri) for tri in t[keep_tri]]
    for tri in t[cross_tri]:
        ins = [inside[x] for x in tri]
        k = sum(ins)
        # Rotate so the pattern starts at an inside vertex.
        order = list(tri)
        flags = ins
        while not (flags[0] and (k == 1 or not flags[2])):
            order = order[1:] + order[:1]
            flags = flags[1:] + flags[:1]
        a, b, c = order
        if k == 1:
            ab = cut(a, b)
            ca = cut(c, a)
            new_tris.append((a, ab, ca))
        else:  # k == 2: a, b inside, c outside
            bc = cut(b, c)
            ca = cut(c, a)
            new_tris.append((a, b, bc))
            new_tris.append((a, bc, ca))

    verts = np.array(new_verts)
    tris = np.array(new_tris, dtype=np.int64)
    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(verts[used], remap[tris], None)


def orient_consistently(mesh: TriMesh, outward_hint=None) -> TriMesh:
    """Flip triangles until every shared edge is traversed both ways.

    outward_hint, if given, is a per-triangle reference normal field
    (callable of triangle centroids); the global sign is chosen so normals
    align with it on average.
    """
    t = [list(tri) for tri in mesh.triangles]
    edge_map: dict[tuple, list] = {}
    for ti, tri in enumerate(t):
        for i in range(3):
            key = (min(tri[i], tri[(i + 1) % 3]), max(tri[i], tri[(i + 1) % 3]))
            edge_map.setdefault(key, []).append(ti)
    visited = np.zeros(len(t), dtype=bool)
    for seed in range(len(t)):
        if visited[seed]:
            continue
        stack = [seed]
        visited[seed] = True
        while stack:
            ti = stack.pop()
            tri = t[ti]
            dir_edges = {(tri[i], tri[(i + 1) % 3]) for i in range(3)}
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                key = (min(a, b), max(a, b))
                for tj in edge_map[key]:
                    if tj == ti or visited[tj]:
                        continue
                    trj = t[tj]
                    if any((trj[i2], trj[(i2 + 1) % 3]) in dir_edges for i2 in range(3)):
                        trj[1], trj[2] = trj[2], trj[1]
                    visited[tj] = True
                    stack.append(tj)
    tris = np.array(t, dtype=np.int64)
    if outward_hint is not None:
        v = mesh.vertices
        n = np.cross(v[tris[:, 1]] - v[tris[:, 0]], v[tris[:, 2]] - v[tris[:, 0]])
        cen = v[tris].mean(axis=1)
        ref = np.asarray(outward_hint(cen), dtype=np.float64)
        if (n * ref).sum() < 0:
            tris = tris[:, [0, 2, 1]]
    labels = None if mesh.orbit_labels is None else mesh.orbit_labels.copy()
    return TriMesh(mesh.vertices.copy(), tris, labels)


# ---------------------------------------------------------------------------
# OBJ / PLY round-tripping


def write_obj(mesh: TriMesh, path) -> None:
    """ASCII OBJ with v/f records; orbit labels kept in a comment block."""
    with open(path, "w") as f:
        f.write("# shrinkerlab mesh\n")
        for p in mesh.vertices:
            f.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for a, b, c in mesh.triangles:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")
        if mesh.orbit_labels is not None:
            for vi, lab in enumerate(mesh.orbit_labels):
                f.write(f"# orbit {vi + 1} {lab}\n")


def read_obj(path) -> TriMesh:
    verts, tris = [], []
    labels = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append(tuple(float(x) for x in parts[1:4]))
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                tris.append(tuple(idx))
            elif parts[0] == "#" and len(parts) == 4 and parts[1] == "orbit":
                labels[int(parts[2]) - 1] = int(parts[3])
    orbit = None
    if labels:
        orbit = np.full(len(verts), -1, dtype=np.int64)
        for vi, lab in labels.items():
            orbit[vi] = lab
    return TriMesh(np.array(verts), np.array(tris, dtype=np.int64), orbit)


def write_ply(mesh: TriMesh, path) -> None:
    """Binary little-endian PLY, float64 positions."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(mesh.vertices.astype("<f8").tobytes())
        for tri in mesh.triangles:
            f.write(struct.pack("<B3i", 3, int(tri[0]), int(tri[1]), int(tri[2])))


def read_ply(path) -> TriMesh:
    with open(path, "rb") as f:
        n_v = n_f = None
        while True:
            line = f.readline().decode("ascii").strip()
            if line.startswith("element vertex"):
                n_v = int(line.split()[-1])
            elif line.startswith("element face"):
                n_f = int(line.split()[-1])
            elif line == "end_header":
                break
        verts = np.frombuffer(f.read(24 * n_v), dtype="<f8").reshape(n_v, 3)
        tris = np.empty((n_f, 3), dtype=np.int64)
        for i in range(n_f):
            cnt, a, b, c = struct.unpack("<B3i", f.read(13))
            if cnt != 3:
                raise InvalidInputError("only triangle PLY faces supported")
            tris[i] = (a, b, c)
    return TriMesh(verts.copy(), tris)
