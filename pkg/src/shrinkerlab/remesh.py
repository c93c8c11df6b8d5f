"""Symmetry-aware isotropic remeshing.

The classical cycle: split edges above 4/3 of the target length, collapse
edges below 4/5, flip towards valence 6 (4 on the boundary), then relax
vertices tangentially. Collapses that would pinch the surface, merge
distinct symmetry orbits or pull a boundary vertex off the clipping
sphere are skipped. Topology (Euler characteristic, boundary loops,
components, genus) is preserved exactly.

When a symmetry group is supplied, every operation is applied to a whole
orbit of edges at once and positions are re-averaged over orbits after
each pass, so the equivariance defect of the input never grows.
"""

from __future__ import annotations

import logging

import numpy as np

from .equivariance import SymmetryGroup, orbit_structure
from .errors import MeshTopologyError, NotEquivariantError
from .trimesh import TriMesh, topology

log = logging.getLogger(__name__)

SPLIT_FACTOR = 4.0 / 3.0
COLLAPSE_FACTOR = 4.0 / 5.0
RELAX_STEP = 0.5
MIN_AREA_FACTOR = 1e-12


def _ekey(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


def _cross3(u, v) -> np.ndarray:
    # np.cross has prohibitive overhead for single 3-vectors.
    return np.array(
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    )


class _EditMesh:
    """Mutable triangle soup with edge and vertex incidence maps.

    Positions live in a capacity-doubling array so passes can vectorise
    over all edges at once.
    """

    def __init__(self, mesh: TriMesh):
        n = len(mesh.vertices)
        self._pos = np.empty((max(2 * n, 64), 3))
        self._pos[:n] = mesh.vertices
        self._n = n
        self.alive: list = [False] * n
        self.tris: dict = {}
        self.v2t: dict = {i: set() for i in range(n)}
        self.e2t: dict = {}
        self._next_tid = 0
        for tri in mesh.triangles:
            self.add_tri(int(tri[0]), int(tri[1]), int(tri[2]))

    @property
    def pos(self) -> np.ndarray:
        return self._pos[: self._n]

    def add_vertex(self, p) -> int:
        if self._n == len(self._pos):
            grown = np.empty((2 * len(self._pos), 3))
            grown[: self._n] = self._pos[: self._n]
            self._pos = grown
        self._pos[self._n] = p
        self._n += 1
        self.alive.append(True)
        self.v2t[self._n - 1] = set()
        return self._n - 1

    def add_tri(self, a: int, b: int, c: int) -> int:
        tid = self._next_tid
        self._next_tid += 1
        self.tris[tid] = (a, b, c)
        for v in (a, b, c):
            self.v2t[v].add(tid)
            self.alive[v] = True
        for i in range(3):
            e = _ekey((a, b, c)[i], (a, b, c)[(i + 1) % 3])
            self.e2t.setdefault(e, set()).add(tid)
        return tid

    def remove_tri(self, tid: int) -> None:
        a, b, c = self.tris.pop(tid)
        for v in (a, b, c):
            self.v2t[v].discard(tid)
        for i in range(3):
            e = _ekey((a, b, c)[i], (a, b, c)[(i + 1) % 3])
            s = self.e2t.get(e)
            if s is not None:
                s.discard(tid)
                if not s:
                    del self.e2t[e]

    def edge_exists(self, e: tuple) -> bool:
        return e in self.e2t

    def edge_is_boundary(self, e: tuple) -> bool:
        return len(self.e2t[e]) == 1

    def vertex_on_boundary(self, v: int) -> bool:
        for tid in self.v2t[v]:
            tri = self.tris[tid]
            for i in range(3):
                if v in (tri[i], tri[(i + 1) % 3]):
                    e = _ekey(tri[i], tri[(i + 1) % 3])
                    if len(self.e2t[e]) == 1:
                        return True
        return False

    def boundary_vertex_set(self) -> set:
        out = set()
        for e, tids in self.e2t.items():
            if len(tids) == 1:
                out.update(e)
        return out

    def adjacency(self) -> dict:
        adj: dict = {}
        for a, b in self.e2t:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        return adj

    def neighbors(self, v: int) -> set:
        out = set()
        for tid in self.v2t[v]:
            out.update(self.tris[tid])
        out.discard(v)
        return out

    def boundary_neighbors(self, v: int) -> list:
        out = []
        for tid in self.v2t[v]:
            tri = self.tris[tid]
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                if v in (a, b) and len(self.e2t[_ekey(a, b)]) == 1:
                    out.append(a if b == v else b)
        return sorted(set(out))

    def edge_length(self, e: tuple) -> float:
        return float(np.linalg.norm(self.pos[e[0]] - self.pos[e[1]]))

    def tri_normal(self, tri: tuple) -> np.ndarray:
        p0, p1, p2 = self.pos[tri[0]], self.pos[tri[1]], self.pos[tri[2]]
        return _cross3(p1 - p0, p2 - p0)

    def edge_arrays(self):
        """Edge keys plus their lengths, vectorised."""
        keys = list(self.e2t.keys())
        if not keys:
            return keys, np.zeros(0)
        idx = np.array(keys, dtype=np.int64)
        lens = np.linalg.norm(self.pos[idx[:, 0]] - self.pos[idx[:, 1]], axis=1)
        return keys, lens

    def to_mesh(self, orbit_labels=None) -> TriMesh:
        used = sorted({v for tri in self.tris.values() for v in tri})
        remap = {v: i for i, v in enumerate(used)}
        verts = self.pos[np.array(used, dtype=np.int64)].copy()
        tris = np.array(
            [(remap[a], remap[b], remap[c]) for (a, b, c) in self.tris.values()],
            dtype=np.int64,
        )
        labels = None
        if orbit_labels is not None:
            labels = np.array([orbit_labels[v] for v in used], dtype=np.int64)
        return TriMesh(verts, tris, labels)


class _SymTracker:
    """Vertex partner permutations for every group element, maintained
    through splits and collapses so whole orbits can be edited at once."""

    def __init__(self, edit: _EditMesh, mesh: TriMesh, group: SymmetryGroup):
        self.group = group
        orbits = orbit_structure(mesh, group)
        self.partner = [dict(enumerate(orbits.partner[k])) for k in range(group.order)]
        # Positions matching is not enough: orbit-synchronised edits need
        # every edge image to be an edge.
        for k in range(group.order):
            pk = self.partner[k]
            for a, b in edit.e2t:
                if _ekey(pk[a], pk[b]) not in edit.e2t:
                    raise NotEquivariantError(
                        f"element {k} maps edge ({a}, {b}) off the edge set;"
                        " connectivity is not equivariant"
                    )

    def map_edge(self, k: int, e: tuple) -> tuple:
        return (self.partner[k][e[0]], self.partner[k][e[1]])

    def edge_orbit(self, e: tuple):
        """Ordered member edges, one per undirected image; flags whether
        some element reverses a member (a collapse cannot decide a keep
        end there)."""
        seen: dict = {}
        reversed_member = False
        order = []
        for k in range(self.group.order):
            m = self.map_edge(k, e)
            key = _ekey(*m)
            if key in seen:
                if seen[key] != m:
                    reversed_member = True
                continue
            seen[key] = m
            order.append(m)
        return order, reversed_member

    def vertex_orbit(self, v: int) -> set:
        return {self.partner[k][v] for k in range(self.group.order)}

    def register_split(self, members: list, new_vid: dict) -> None:
        for k in range(self.group.order):
            for m in members:
                img = _ekey(*self.map_edge(k, m))
                self.partner[k][new_vid[_ekey(*m)]] = new_vid[img]

    def drop_vertices(self, removed: set) -> None:
        for k in range(self.group.order):
            pk = self.partner[k]
            for v in removed:
                pk.pop(v, None)

    def symmetrize_positions(self, edit: _EditMesh) -> None:
        """Replace each orbit by exact images of the pullback average."""
        elems = self.group.elements
        done = set()
        for v in list(self.partner[0].keys()):
            if v in done or not edit.alive[v]:
                continue
            orbit = [self.partner[k][v] for k in range(self.group.order)]
            avg = np.zeros(3)
            for k, w in enumerate(orbit):
                avg += elems[k].T @ edit.pos[w]
            avg /= self.group.order
            for k, w in enumerate(orbit):
                if w not in done:
                    edit.pos[w] = elems[k] @ avg
                    done.add(w)


def _detect_boundary_sphere(mesh: TriMesh) -> float | None:
    if not mesh.boundary_flags.any():
        return None
    r = np.linalg.norm(mesh.vertices[mesh.boundary_flags], axis=1)
    med = float(np.median(r))
    if med > 0 and np.abs(r - med).max() < 1e-6 * med:
        return med
    return None


def _sphere_project(p: np.ndarray, radius: float) -> np.ndarray:
    return p * (radius / np.linalg.norm(p))


def _split_pass(edit: _EditMesh, sym: _SymTracker | None, limit: float, sphere_r) -> int:
    keys, lens = edit.edge_arrays()
    order = np.argsort(-lens)
    visited = set()
    n_ops = 0
    for oi in order:
        ln, e = lens[oi], keys[oi]
        if ln <= limit:
            break
        if e in visited or not edit.edge_exists(e):
            continue
        if sym is not None:
            members, _ = sym.edge_orbit(e)
        else:
            members = [e]
        member_keys = [_ekey(*m) for m in members]
        if any(k in visited for k in member_keys):
            visited.update(member_keys)
            continue
        visited.update(member_keys)
        if not all(edit.edge_exists(k) for k in member_keys):
            continue
        new_vid = {}
        for m in members:
            key = _ekey(*m)
            mid = (edit.pos[key[0]] + edit.pos[key[1]]) / 2.0
            if sphere_r is not None and edit.edge_is_boundary(key):
                mid = _sphere_project(mid, sphere_r)
            new_vid[key] = _split_edge(edit, key, mid)
            n_ops += 1
        if sym is not None:
            sym.register_split(members, new_vid)
    return n_ops


def _split_edge(edit: _EditMesh, e: tuple, mid: np.ndarray) -> int:
    m = edit.add_vertex(mid)
    for tid in list(edit.e2t[e]):
        tri = edit.tris[tid]
        edit.remove_tri(tid)
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            if _ekey(a, b) == e:
                c = tri[(i + 2) % 3]
                edit.add_tri(a, m, c)
                edit.add_tri(m, b, c)
                break
    return m


def _collapse_geometry_ok(edit: _EditMesh, a: int, b: int, newpos: np.ndarray, min_area: float) -> bool:
    """Moved one-ring triangles must keep their orientation and area."""
    dead = edit.e2t[_ekey(a, b)]
    for v, other in ((a, b), (b, a)):
        for tid in edit.v2t[v]:
            if tid in dead:
                continue
            tri = edit.tris[tid]
            old_n = edit.tri_normal(tri)
            pts = [newpos if x in (a, b) else edit.pos[x] for x in tri]
            new_n = _cross3(pts[1] - pts[0], pts[2] - pts[0])
            if 0.5 * np.linalg.norm(new_n) < min_area or old_n @ new_n <= 0:
                return False
    return True


def _link_condition(edit: _EditMesh, a: int, b: int) -> bool:
    opp = set()
    for tid in edit.e2t[_ekey(a, b)]:
        opp.update(edit.tris[tid])
    opp -= {a, b}
    return edit.neighbors(a) & edit.neighbors(b) == opp


def _collapse_pass(
    edit: _EditMesh,
    sym: _SymTracker | None,
    limit: float,
    split_limit: float,
    sphere_r,
    min_area: float,
    skipped: dict,
) -> int:
    keys, lens = edit.edge_arrays()
    order = np.argsort(lens)
    visited = set()
    n_ops = 0
    for oi in order:
        ln, e = lens[oi], keys[oi]
        if ln >= limit:
            break
        if e in visited or not edit.edge_exists(e):
            continue
        if sym is not None:
            members, has_reversed = sym.edge_orbit(e)
        else:
            members, has_reversed = [e], False
        member_keys = [_ekey(*m) for m in members]
        visited.update(member_keys)
        if has_reversed:
            skipped["stabilized"] += 1
            continue
        if not all(edit.edge_exists(k) for k in member_keys):
            continue

        plans = []
        touched: set = set()
        ok = True
        for m in members:
            a, b = m
            ab = edit.vertex_on_boundary(a)
            bb = edit.vertex_on_boundary(b)
            key = _ekey(a, b)
            if ab and bb:
                if not edit.edge_is_boundary(key) or sphere_r is None:
                    skipped["boundary"] += 1
                    ok = False
                    break
                newpos = _sphere_project((edit.pos[a] + edit.pos[b]) / 2.0, sphere_r)
                keep, drop = a, b
            elif ab:
                keep, drop, newpos = a, b, edit.pos[a]
            elif bb:
                keep, drop, newpos = b, a, edit.pos[b]
            else:
                keep, drop, newpos = a, b, (edit.pos[a] + edit.pos[b]) / 2.0
            nbrs = edit.neighbors(a) | edit.neighbors(b)
            region = nbrs | {a, b}
            if region & touched:
                skipped["orbit_overlap"] += 1
                ok = False
                break
            # Anti-oscillation: the merged vertex must not gain edges the
            # next split pass would cut again.
            too_long = any(
                np.linalg.norm(edit.pos[w] - newpos) > split_limit
                for w in nbrs
                if w not in (a, b)
            )
            if too_long:
                skipped["would_relengthen"] += 1
                ok = False
                break
            if not _link_condition(edit, a, b):
                skipped["link"] += 1
                ok = False
                break
            if not _collapse_geometry_ok(edit, a, b, newpos, min_area):
                skipped["geometry"] += 1
                ok = False
                break
            touched |= region
            plans.append((keep, drop, newpos))
        if not ok:
            continue
        removed = set()
        for keep, drop, newpos in plans:
            _collapse_edge(edit, keep, drop, newpos)
            removed.add(drop)
            n_ops += 1
        if sym is not None:
            sym.drop_vertices(removed)
    return n_ops


def _collapse_edge(edit: _EditMesh, keep: int, drop: int, newpos: np.ndarray) -> None:
    for tid in list(edit.e2t[_ekey(keep, drop)]):
        edit.remove_tri(tid)
    for tid in list(edit.v2t[drop]):
        tri = edit.tris[tid]
        edit.remove_tri(tid)
        edit.add_tri(*(keep if x == drop else x for x in tri))
    edit.pos[keep] = np.asarray(newpos, dtype=np.float64)
    edit.alive[drop] = False


def _flip_pass(edit: _EditMesh, sym: _SymTracker | None, min_area: float) -> int:
    valence: dict = {}
    for a, b in edit.e2t:
        valence[a] = valence.get(a, 0) + 1
        valence[b] = valence.get(b, 0) + 1
    boundary = edit.boundary_vertex_set()
    on_boundary = {v: v in boundary for v in valence}

    def dev(v):
        return valence[v] - (4 if on_boundary[v] else 6)

    visited = set()
    n_ops = 0
    for e in list(edit.e2t.keys()):
        if e in visited or not edit.edge_exists(e) or edit.edge_is_boundary(e):
            continue
        if sym is not None:
            members, _ = sym.edge_orbit(e)
        else:
            members = [e]
        member_keys = [_ekey(*m) for m in members]
        visited.update(member_keys)
        if not all(edit.edge_exists(k) and not edit.edge_is_boundary(k) for k in member_keys):
            continue

        quads = []
        touched: set = set()
        ok = True
        benefit = None
        for m in members:
            key = _ekey(*m)
            t1, t2 = sorted(edit.e2t[key])
            a, b = key
            c = next(x for x in edit.tris[t1] if x not in key)
            d = next(x for x in edit.tris[t2] if x not in key)
            if c == d or edit.edge_exists(_ekey(c, d)):
                ok = False
                break
            quad = {a, b, c, d}
            if quad & touched:
                ok = False
                break
            touched |= quad
            if benefit is None:
                before = dev(a) ** 2 + dev(b) ** 2 + dev(c) ** 2 + dev(d) ** 2
                after = (
                    (dev(a) - 1) ** 2 + (dev(b) - 1) ** 2 + (dev(c) + 1) ** 2 + (dev(d) + 1) ** 2
                )
                benefit = before - after
                if benefit <= 0:
                    ok = False
                    break
            old_n = edit.tri_normal(edit.tris[t1]) + edit.tri_normal(edit.tris[t2])
            new1, new2 = _flipped_tris(edit, t1, t2, a, b, c, d)
            n1 = _cross3(
                edit.pos[new1[1]] - edit.pos[new1[0]], edit.pos[new1[2]] - edit.pos[new1[0]]
            )
            n2 = _cross3(
                edit.pos[new2[1]] - edit.pos[new2[0]], edit.pos[new2[2]] - edit.pos[new2[0]]
            )
            if (
                0.5 * np.linalg.norm(n1) < min_area
                or 0.5 * np.linalg.norm(n2) < min_area
                or n1 @ old_n <= 0
                or n2 @ old_n <= 0
            ):
                ok = False
                break
            quads.append((t1, t2, new1, new2, (a, b, c, d)))
        if not ok or benefit is None or benefit <= 0:
            continue
        for t1, t2, new1, new2, (a, b, c, d) in quads:
            edit.remove_tri(t1)
            edit.remove_tri(t2)
            edit.add_tri(*new1)
            edit.add_tri(*new2)
            valence[a] -= 1
            valence[b] -= 1
            valence[c] += 1
            valence[d] += 1
            n_ops += 1
    return n_ops


def _flipped_tris(edit: _EditMesh, t1: int, t2: int, a, b, c, d):
    """New triangles replacing (a,b,c)/(b,a,d) by the diagonal (c,d),
    with winding carried over from the originals."""
    tri1 = edit.tris[t1]
    # Orient so tri1 traverses a->b.
    if (tri1.index(a) + 1) % 3 == tri1.index(b):
        return (a, d, c), (d, b, c)
    return (a, c, d), (c, b, d)


def _relax_pass(edit: _EditMesh, sym: _SymTracker | None, sphere_r) -> None:
    if not edit.tris:
        return
    n_v = edit._n
    pos = edit.pos
    tri_arr = np.array(list(edit.tris.values()), dtype=np.int64)
    fn = np.cross(pos[tri_arr[:, 1]] - pos[tri_arr[:, 0]], pos[tri_arr[:, 2]] - pos[tri_arr[:, 0]])
    normals = np.zeros((n_v, 3))
    for i in range(3):
        for c in range(3):
            normals[:, c] += np.bincount(tri_arr[:, i], weights=fn[:, c], minlength=n_v)

    ekeys = np.array(list(edit.e2t.keys()), dtype=np.int64)
    deg = np.bincount(ekeys[:, 0], minlength=n_v) + np.bincount(ekeys[:, 1], minlength=n_v)
    nbr_sum = np.zeros((n_v, 3))
    for c in range(3):
        nbr_sum[:, c] += np.bincount(ekeys[:, 0], weights=pos[ekeys[:, 1], c], minlength=n_v)
        nbr_sum[:, c] += np.bincount(ekeys[:, 1], weights=pos[ekeys[:, 0], c], minlength=n_v)

    boundary = edit.boundary_vertex_set()
    interior = deg > 0
    for v in boundary:
        interior[v] = False
    nn = np.linalg.norm(normals, axis=1)
    interior &= nn > 0

    centroid = nbr_sum[interior] / deg[interior, None]
    nu = normals[interior] / nn[interior, None]
    move = centroid - pos[interior]
    move -= nu * (move * nu).sum(1)[:, None]
    pos[interior] += RELAX_STEP * move

    for v in boundary:
        bn = edit.boundary_neighbors(v)
        if sphere_r is None or len(bn) != 2:
            continue
        mid = (pos[bn[0]] + pos[bn[1]]) / 2.0
        target = pos[v] + RELAX_STEP * (mid - pos[v])
        edit.pos[v] = _sphere_project(target, sphere_r)
    if sym is not None:
        sym.symmetrize_positions(edit)


def remesh(
    mesh: TriMesh,
    target_edge: float,
    group: SymmetryGroup | None = None,
    max_passes: int = 10,
    relax_iters: int = 1,
) -> TriMesh:
    """Drive edge lengths into [4/5, 4/3] x target_edge and even out valences.

    Boundary vertices are kept exactly on the clipping sphere when the
    boundary lies on one (detected from the input), otherwise they are
    left in place. Raises MeshTopologyError if, against expectation, the
    topology changed; skipped-operation counts are logged, not fatal.
    """
    if target_edge <= 0:
        raise MeshTopologyError("target_edge must be positive")
    topo_before = topology(mesh).as_tuple()
    sphere_r = _detect_boundary_sphere(mesh)
    edit = _EditMesh(mesh)
    sym = None
    if group is not None:
        try:
            sym = _SymTracker(edit, mesh, group)
        except NotEquivariantError:
            raise
    diam = mesh.bbox_diameter()
    min_area = MIN_AREA_FACTOR * max(diam, 1.0) ** 2
    skipped = {
        "stabilized": 0,
        "boundary": 0,
        "orbit_overlap": 0,
        "would_relengthen": 0,
        "link": 0,
        "geometry": 0,
    }

    for _ in range(max_passes):
        n = 0
        n += _split_pass(edit, sym, SPLIT_FACTOR * target_edge, sphere_r)
        n += _collapse_pass(
            edit, sym, COLLAPSE_FACTOR * target_edge, SPLIT_FACTOR * target_edge,
            sphere_r, min_area, skipped,
        )
        n += _flip_pass(edit, sym, min_area)
        for _ in range(relax_iters):
            _relax_pass(edit, sym, sphere_r)
        if n <= max(2, len(edit.e2t) // 1000):
            break
    _, lens = edit.edge_arrays()
    frac = float(
        np.mean((lens > COLLAPSE_FACTOR * target_edge) & (lens < SPLIT_FACTOR * target_edge))
    )
    if frac < 0.95:
        log.warning("remesh left only %.1f%% of edges inside the length band", 100 * frac)
    if any(skipped.values()):
        log.debug("remesh skipped operations: %s", skipped)

    labels = None
    if sym is not None:
        labels = _orbit_labels_from_tracker(edit, sym)
    out = edit.to_mesh(orbit_labels=labels)
    topo_after = topology(out).as_tuple()
    if topo_after != topo_before:
        raise MeshTopologyError(
            f"remesh changed topology {topo_before} -> {topo_after}"
        )
    return out


def _orbit_labels_from_tracker(edit: _EditMesh, sym: _SymTracker) -> dict:
    labels = {}
    next_label = 0
    for v in sym.partner[0]:
        if not edit.alive[v] or v in labels:
            continue
        orbit = sym.vertex_orbit(v)
        for w in orbit:
            labels[w] = next_label
        next_label += 1
    return labels
