"""Unstructured linear-triangle meshes with region and boundary tagging.

Meshes come from three sources: the built-in cross-section generator
(structured annular rings around each rebar, graded Delaunay fill for the
rest of the rectangle), the structured bar generator for the tension
benchmark, and ASCII Gmsh v2 import. All coordinates are stored in meters;
MSH files are interpreted as mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

# triangle region tags
CONCRETE, STEEL, SCI = 0, 1, 2
REGION_NAMES = {"concrete": CONCRETE, "steel": STEEL, "sci": SCI}

# boundary edge tags
OUTER, REBAR_SURFACE, TOP_SURFACE = 0, 1, 2
BOUNDARY_NAMES = {"outer": OUTER, "rebarsurface": REBAR_SURFACE,
                  "topsurface": TOP_SURFACE}


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    nodes: np.ndarray  # (n, 2) float64, m
    tris: np.ndarray  # (m, 3) int32, counterclockwise
    region: np.ndarray  # (m,) uint8
    porosity: np.ndarray  # (m,) float64, p_0 per triangle (0 in steel)
    boundary_edges: np.ndarray  # (k, 2) int32
    boundary_tags: np.ndarray  # (k,) uint8
    rebar_of_edge: np.ndarray  # (k,) int32, rebar index for REBAR_SURFACE else -1
    weak_band: np.ndarray | None = None  # (m,) bool, bar benchmark mid-band
    rebar_centers: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 2)))  # (n_rebars, 2)
    rebar_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_tris(self) -> int:
        return len(self.tris)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.tris]
        return 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.tris]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def centroids(self) -> np.ndarray:
        return self.nodes[self.tris].mean(axis=1)

    def concrete_node_mask(self) -> np.ndarray:
        """Nodes belonging to at least one non-steel triangle."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        conc = self.tris[self.region != STEEL]
        mask[conc.ravel()] = True
        return mask

    def nodal_porosity(self) -> np.ndarray:
        """p_0 at nodes; interface nodes take the largest adjacent value."""
        por = np.zeros(self.n_nodes)
        for r in (CONCRETE, SCI):  # SCI last so it wins on shared nodes
            sel = self.region == r
            tris = self.tris[sel]
            if len(tris) == 0:
                continue
            vals = np.repeat(self.porosity[sel], 3)
            np.maximum.at(por, tris.ravel(), vals)
        return por

    def edges_with_tag(self, tag: int) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def edge_lengths(self, edges: np.ndarray) -> np.ndarray:
        d = self.nodes[edges[:, 1]] - self.nodes[edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])


def validate_mesh(mesh: Mesh, expected_area: float | None = None):
    sa = mesh.signed_areas()
    if np.any(sa <= 0):
        bad = int(np.argmin(sa))
        raise MeshError(f"inverted or degenerate triangle {bad} (area {sa[bad]:g})")
    if mesh.tris.max() >= mesh.n_nodes:
        raise MeshError("triangle references nonexistent node")
    # every true boundary edge (OUTER / TOP_SURFACE) must have exactly one parent
    edge_count = {}
    for t in mesh.tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    if any(c > 2 for c in edge_count.values()):
        raise MeshError("non-manifold edge (more than two parent triangles)")
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        c = edge_count.get((min(a, b), max(a, b)), 0)
        if tag in (OUTER, TOP_SURFACE) and c != 1:
            raise MeshError(f"outer boundary edge ({a},{b}) has {c} parents")
        if tag == REBAR_SURFACE and c != 2:
            raise MeshError(f"rebar surface edge ({a},{b}) has {c} parents")
    if expected_area is not None:
        total = mesh.areas().sum()
        if abs(total - expected_area) > 1e-6 * expected_area:
            raise MeshError(
                f"mesh area {total:.9g} != expected {expected_area:.9g}")


# ---------------------------------------------------------------------------
# structured bar mesh (tension benchmark)
# ---------------------------------------------------------------------------

WEAK_BAND_WIDTH = 8e-3  # weakened mid-section of the benchmark bar


def generate_bar_mesh(length: float, height: float, element_size: float) -> Mesh:
    """Structured triangle mesh of a rectangular bar with a tagged mid-band."""
    if length <= 0 or height <= 0 or element_size <= 0:
        raise MeshError("bar dimensions and element size must be positive")
    if element_size > WEAK_BAND_WIDTH:
        raise MeshError(
            f"element size {element_size:g} m does not resolve the "
            f"{WEAK_BAND_WIDTH:g} m weak band")
    nx = int(round(length / element_size))
    ny = int(round(height / element_size))
    if nx < 2 or ny < 2:
        raise MeshError("element size must divide dimensions into >= 2 elements")
    if abs(nx * element_size - length) > 1e-9 * length or \
            abs(ny * element_size - height) > 1e-9 * height:
        raise MeshError("element size must divide both bar dimensions")

    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            n00, n10 = nid(i, j), nid(i + 1, j)
            n01, n11 = nid(i, j + 1), nid(i + 1, j + 1)
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    tris = np.array(tris, dtype=np.int32)

    cent = nodes[tris].mean(axis=1)
    band = np.abs(cent[:, 0] - length / 2) < WEAK_BAND_WIDTH / 2

    edges, tags = [], []
    for i in range(nx):
        edges.append((nid(i, 0), nid(i + 1, 0)))
        tags.append(OUTER)
        edges.append((nid(i, ny), nid(i + 1, ny)))
        tags.append(TOP_SURFACE)
    for j in range(ny):
        edges.append((nid(0, j), nid(0, j + 1)))
        tags.append(OUTER)
        edges.append((nid(nx, j), nid(nx, j + 1)))
        tags.append(OUTER)

    mesh = Mesh(
        nodes=nodes,
        tris=tris,
        region=np.full(len(tris), CONCRETE, dtype=np.uint8),
        porosity=np.full(len(tris), 0.26),
        boundary_edges=np.array(edges, dtype=np.int32),
        boundary_tags=np.array(tags, dtype=np.uint8),
        rebar_of_edge=np.full(len(edges), -1, dtype=np.int32),
        weak_band=band,
    )
    validate_mesh(mesh, expected_area=length * height)
    return mesh


# ---------------------------------------------------------------------------
# cross-section generator
# ---------------------------------------------------------------------------

def _connect_rings(inner_ids, inner_theta, outer_ids, outer_theta):
    """Triangulate the band between two closed rings (CCW triangles)."""
    na, nb = len(inner_ids), len(outer_ids)
    t0 = inner_theta[0]
    rel_b = np.mod(outer_theta - t0, 2 * np.pi)
    j0 = int(np.argmin(rel_b))
    outer_ids = np.roll(outer_ids, -j0)
    rel_b = np.roll(rel_b, -j0)
    rel_a = np.mod(inner_theta - t0, 2 * np.pi)
    ta = np.append(rel_a, 2 * np.pi)
    tb = np.append(rel_b, rel_b[0] + 2 * np.pi)

    tris = []
    i = j = 0
    while i < na or j < nb:
        next_a = ta[i + 1] if i < na else np.inf
        next_b = tb[j + 1] if j < nb else np.inf
        if next_a <= next_b:
            tris.append((inner_ids[i % na], outer_ids[j % nb],
                         inner_ids[(i + 1) % na]))
            i += 1
        else:
            tris.append((inner_ids[i % na], outer_ids[j % nb],
                         outer_ids[(j + 1) % nb]))
            j += 1
    return tris


def _ring(center, radius, n_theta):
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    pts = np.column_stack([center[0] + radius * np.cos(th),
                           center[1] + radius * np.sin(th)])
    return pts, th


class _RebarDisk:
    """Structured mesh of one rebar: steel interior, SCI annulus and a
    graded transition out to the handoff radius where the Delaunay fill
    takes over."""

    def __init__(self, center, radius, d_sci, h_sci, h_bulk, grading,
                 max_radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = radius
        self.points = []  # list of (n,2) arrays
        self.point_count = 0
        self.tris = []
        self.regions = []
        self.surface_ring = None  # (ids, thetas) on r = radius
        self.outer_ring = None
        self.outer_radius = None

        n_theta_sci = max(16, int(math.ceil(2 * np.pi * radius / h_sci)))
        n_layers = max(2, int(math.ceil(d_sci / h_sci))) if d_sci > 0 else 0
        dr_sci = d_sci / n_layers if n_layers else h_sci

        # radial spacings inward through the steel, coarsening to the center
        s = max(h_sci, dr_sci)
        r = radius
        inner_radii = []
        while True:
            r_next = r - s
            if r_next < 1.6 * s:
                break
            inner_radii.append(r_next)
            r = r_next
            s = min(s * 1.7, 0.45 * r)
        # rings from the center outward, ending at the rebar surface
        radii = inner_radii[::-1] + [radius]
        spacings = []
        for k, rr in enumerate(radii):
            nxt = radii[k + 1] - rr if k + 1 < len(radii) else dr_sci
            spacings.append(nxt)

        rings = []  # (ids, thetas, radius)
        for rr, sp in zip(radii, spacings):
            if rr >= radius - 1e-15:
                n_th = n_theta_sci
            else:
                n_th = max(8, int(math.ceil(2 * np.pi * rr / sp)))
            pts, th = _ring(self.center, rr, n_th)
            ids = self._add_points(pts)
            rings.append((ids, th, rr))

        cid = self._add_points(self.center[None, :])[0]
        first = rings[0][0]
        for i in range(len(first)):
            self.tris.append((cid, first[i], first[(i + 1) % len(first)]))
            self.regions.append(STEEL)
        for (ia, tha, _), (ib, thb, _) in zip(rings[:-1], rings[1:]):
            self.tris.extend(_connect_rings(ia, tha, ib, thb))
            self.regions.extend([STEEL] * (len(ia) + len(ib)))

        self.surface_ring = (rings[-1][0], rings[-1][1])

        # SCI annulus: uniform rings sharing the surface n_theta
        prev_ids, prev_th = self.surface_ring
        rr = radius
        for _ in range(n_layers):
            rr += dr_sci
            pts, th = _ring(self.center, rr, n_theta_sci)
            ids = self._add_points(pts)
            self.tris.extend(_connect_rings(prev_ids, prev_th, ids, th))
            self.regions.extend([SCI] * (len(prev_ids) + len(ids)))
            prev_ids, prev_th = ids, th

        # graded transition to the bulk spacing
        s = dr_sci * grading
        while True:
            s_here = min(s, h_bulk)
            rr_next = rr + s_here
            if rr_next > max_radius:
                break
            rr = rr_next
            circ = max(s_here, h_sci)  # never refine circumferentially
            n_th = max(12, int(math.ceil(2 * np.pi * rr / circ)))
            pts, th = _ring(self.center, rr, n_th)
            ids = self._add_points(pts)
            self.tris.extend(_connect_rings(prev_ids, prev_th, ids, th))
            self.regions.extend([CONCRETE] * (len(prev_ids) + len(ids)))
            prev_ids, prev_th = ids, th
            if s_here >= h_bulk and rr >= radius + d_sci + 2 * h_bulk:
                break
            s *= grading

        self.outer_ring = (prev_ids, prev_th)
        self.outer_radius = rr

    def _add_points(self, pts):
        ids = np.arange(self.point_count, self.point_count + len(pts))
        self.points.append(np.atleast_2d(pts))
        self.point_count += len(pts)
        return ids

    def all_points(self):
        return np.vstack(self.points)


def _march_positions(length, h_of_s):
    """March along [0, length] with locally prescribed step, then rescale
    so the last point lands exactly on the end."""
    pos = [0.0]
    while pos[-1] < length:
        step = max(h_of_s(pos[-1]), 1e-9)
        pos.append(pos[-1] + step)
    pos = np.array(pos)
    if len(pos) < 3:
        pos = np.array([0.0, length / 2, length])
    pos *= length / pos[-1]
    return pos


def generate_rebar_cross_section(geometry, h_sci: float, h_bulk: float,
                                 h_far: float | None = None,
                                 grading: float = 1.4,
                                 sci_thickness: float = 0.2e-3,
                                 porosity_bulk: float = 0.26,
                                 porosity_sci: float = 0.52,
                                 refine_cover_strip: bool = True) -> Mesh:
    """Mesh a rectangular cross-section with embedded circular rebars.

    Around each rebar: structured rings at h_sci through the SCI, grading
    to h_bulk. A strip above each rebar (the likely crack corridor to the
    monitored surface) is kept at h_bulk; the far field coarsens to h_far.
    """
    if h_sci > h_bulk:
        raise MeshError("h_sci must be <= h_bulk")
    if sci_thickness > 0 and h_sci > sci_thickness:
        # radial layering still guarantees >= 2 layers; circumferential size
        # is what h_sci controls in that case
        pass
    if h_far is None:
        h_far = 4 * h_bulk
    W, H = geometry.width, geometry.height

    centers = np.array([[rb.x, rb.y] for rb in geometry.rebars])
    radii = np.array([rb.diameter / 2 for rb in geometry.rebars])

    # handoff radius per rebar, capped by clearances
    max_r = []
    for i, (c, R) in enumerate(zip(centers, radii)):
        lim = min(c[0], W - c[0], c[1], H - c[1]) * 0.85
        for j, (c2, R2) in enumerate(zip(centers, radii)):
            if j != i:
                lim = min(lim, 0.48 * np.hypot(*(c - c2)))
        if lim <= R + sci_thickness:
            raise MeshError(f"rebar {i}: no room for the SCI transition zone")
        max_r.append(lim)

    disks = [_RebarDisk(c, R, sci_thickness, h_sci, h_bulk, grading, mr)
             for c, R, mr in zip(centers, radii, max_r)]

    points = [d.all_points() for d in disks]
    offsets = np.cumsum([0] + [len(p) for p in points])
    structured_pts = np.vstack(points)
    structured_tris = []
    structured_reg = []
    for d, off in zip(disks, offsets[:-1]):
        structured_tris.extend([(a + off, b + off, c + off)
                                for a, b, c in d.tris])
        structured_reg.extend(d.regions)
    structured_tris = np.array(structured_tris, dtype=np.int64)
    structured_reg = np.array(structured_reg, dtype=np.uint8)

    n_struct = len(structured_pts)
    outer_ids_global = [d.outer_ring[0] + off
                        for d, off in zip(disks, offsets[:-1])]
    surface_ids_global = [d.surface_ring[0] + off
                          for d, off in zip(disks, offsets[:-1])]
    handoff_r = np.array([d.outer_radius for d in disks])

    # spacing field for the unstructured fill
    strips = []
    if refine_cover_strip:
        for c, R in zip(centers, radii):
            half = R + max(8e-3, R)
            strips.append((c[0] - half, c[0] + half, c[1], H))

    def spacing(pts):
        pts = np.atleast_2d(pts)
        h = np.full(len(pts), h_far)
        for c, rt in zip(centers, handoff_r):
            dist = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
            h = np.minimum(h, np.maximum(h_bulk, h_bulk + 0.5 * (dist - rt)))
        for x0, x1, y0, y1 in strips:
            inside = ((pts[:, 0] >= x0) & (pts[:, 0] <= x1)
                      & (pts[:, 1] >= y0 - 2e-3) & (pts[:, 1] <= y1))
            h[inside] = np.minimum(h[inside], h_bulk)
        return h

    # size levels between h_bulk and h_far (ratio <= 1.6 between levels)
    n_lv = max(1, int(math.ceil(math.log(h_far / h_bulk) / math.log(1.6))))
    levels = h_bulk * (h_far / h_bulk) ** (np.arange(n_lv + 1) / n_lv)

    fill_pts = []
    for li in range(len(levels)):
        hl = levels[li]
        lo = levels[li - 1] if li > 0 else 0.0
        xs = np.arange(0.62 * hl, W, hl)
        ys = np.arange(0.37 * hl, H, hl)
        px, py = [], []
        for k, y in enumerate(ys):
            row = xs + (0.5 * hl if k % 2 else 0.0)
            row = row[row < W - 0.45 * hl]
            px.append(row)
            py.append(np.full(len(row), y))
        if not px:
            continue
        cand = np.column_stack([np.concatenate(px), np.concatenate(py)])
        hloc = spacing(cand)
        keep = (hloc > lo) & (hloc <= hl * 1.0000001)
        keep &= (cand[:, 0] > 0.45 * hl) & (cand[:, 0] < W - 0.45 * hl)
        keep &= (cand[:, 1] > 0.45 * hl) & (cand[:, 1] < H - 0.45 * hl)
        for c, rt in zip(centers, handoff_r):
            dist = np.hypot(cand[:, 0] - c[0], cand[:, 1] - c[1])
            keep &= dist > rt + 0.55 * hl
        fill_pts.append(cand[keep])

    # rectangle boundary points
    def edge_points(p0, p1):
        p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
        L = np.hypot(*(p1 - p0))
        tangent = (p1 - p0) / L

        def hfun(s):
            return float(spacing(p0 + s * tangent)[0])

        s = _march_positions(L, hfun)
        return p0 + np.outer(s, tangent)

    corners = [(0, 0), (W, 0), (W, H), (0, H)]
    bpts = []
    top_flags = []
    for k in range(4):
        seg = edge_points(corners[k], corners[(k + 1) % 4])[:-1]
        bpts.append(seg)
        # the top edge runs from (W, H) to (0, H): segment k == 2
        top_flags.append(np.full(len(seg), k == 2, dtype=bool))
    boundary_pts = np.vstack(bpts)
    boundary_on_top = np.concatenate(top_flags)
    # the corner (0, H) is the start of segment 3 but lies on the top edge
    boundary_on_top[len(bpts[0]) + len(bpts[1]) + len(bpts[2])] = True

    fill_all = np.vstack(fill_pts) if fill_pts else np.zeros((0, 2))

    outer_ring_pts = structured_pts[np.concatenate(outer_ids_global)]
    del_input = np.vstack([outer_ring_pts, boundary_pts, fill_all])
    del_map = np.concatenate([
        np.concatenate(outer_ids_global),
        np.arange(n_struct, n_struct + len(boundary_pts) + len(fill_all)),
    ])

    tri = Delaunay(del_input)
    dtris = del_map[tri.simplices]
    all_pts = np.vstack([structured_pts, boundary_pts, fill_all])

    # discard triangles covering the structured disks
    cent = all_pts[dtris].mean(axis=1)
    keep = np.ones(len(dtris), dtype=bool)
    for c, rt in zip(centers, handoff_r):
        keep &= np.hypot(cent[:, 0] - c[0], cent[:, 1] - c[1]) > rt * (1 - 1e-9)
    dtris = dtris[keep]

    # orient counterclockwise
    p = all_pts[dtris]
    sa = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
          - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = sa < 0
    dtris[flip] = dtris[flip][:, [0, 2, 1]]

    tris = np.vstack([structured_tris, dtris]).astype(np.int32)
    region = np.concatenate([structured_reg,
                             np.full(len(dtris), CONCRETE, dtype=np.uint8)])

    # SCI membership by centroid distance to the nearest rebar surface
    cent = all_pts[tris].mean(axis=1)
    dist_surf = np.full(len(tris), np.inf)
    for c, R in zip(centers, radii):
        dist_surf = np.minimum(
            dist_surf, np.hypot(cent[:, 0] - c[0], cent[:, 1] - c[1]) - R)
    conc = region != STEEL
    region[conc & (dist_surf <= sci_thickness + 1e-12)] = SCI

    porosity = np.where(region == SCI, porosity_sci,
                        np.where(region == STEEL, 0.0, porosity_bulk))

    # boundary edges: rebar surfaces from the construction rings,
    # outer/top from single-parent edges
    edges, tags, rebar_idx = [], [], []
    for ri, ids in enumerate(surface_ids_global):
        for i in range(len(ids)):
            edges.append((ids[i], ids[(i + 1) % len(ids)]))
            tags.append(REBAR_SURFACE)
            rebar_idx.append(ri)

    edge_count = {}
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    on_top = np.zeros(len(all_pts), dtype=bool)
    on_top[n_struct:n_struct + len(boundary_pts)] = boundary_on_top
    for (a, b), c in edge_count.items():
        if c == 1:
            edges.append((a, b))
            tags.append(TOP_SURFACE if on_top[a] and on_top[b] else OUTER)
            rebar_idx.append(-1)

    mesh = Mesh(
        nodes=all_pts,
        tris=tris,
        region=region,
        porosity=porosity,
        boundary_edges=np.array(edges, dtype=np.int32),
        boundary_tags=np.array(tags, dtype=np.uint8),
        rebar_of_edge=np.array(rebar_idx, dtype=np.int32),
        rebar_centers=centers,
        rebar_radii=radii,
    )
    validate_mesh(mesh, expected_area=W * H)
    return mesh


# ---------------------------------------------------------------------------
# Gmsh v2 (ASCII) import
# ---------------------------------------------------------------------------

def import_msh(path, porosity_bulk: float = 0.26,
               porosity_sci: float = 0.52) -> Mesh:
    """Read an ASCII MSH v2 file (coordinates in mm).

    Physical groups must be named Concrete/Steel/SCI (surfaces) and
    Outer/RebarSurface/TopSurface (lines).
    """
    lines = open(path).read().splitlines()
    i = 0
    phys = {}
    nodes = {}
    tris, tri_phys, segs, seg_phys = [], [], [], []
    while i < len(lines):
        line = lines[i].strip()
        if line == "$PhysicalNames":
            n = int(lines[i + 1])
            for k in range(n):
                parts = lines[i + 2 + k].split(None, 2)
                dim, pid = int(parts[0]), int(parts[1])
                name = parts[2].strip().strip('"').lower()
                phys[pid] = (dim, name)
            i += n + 2
        elif line == "$Nodes":
            n = int(lines[i + 1])
            for k in range(n):
                parts = lines[i + 2 + k].split()
                nodes[int(parts[0])] = (float(parts[1]), float(parts[2]))
            i += n + 2
        elif line == "$Elements":
            n = int(lines[i + 1])
            for k in range(n):
                parts = [int(v) for v in lines[i + 2 + k].split()]
                eid, etype, ntags = parts[0], parts[1], parts[2]
                ptag = parts[3] if ntags >= 1 else 0
                conn = parts[3 + ntags:]
                if etype == 2:
                    tris.append((eid, conn))
                    tri_phys.append(ptag)
                elif etype == 1:
                    segs.append(conn)
                    seg_phys.append(ptag)
            i += n + 2
        else:
            i += 1

    if not tris:
        raise MeshError("no triangles in MSH file")
    ids = sorted(nodes)
    remap = {nid: k for k, nid in enumerate(ids)}
    coords = np.array([nodes[nid] for nid in ids]) * 1e-3  # mm -> m

    tri_arr = np.array([[remap[a] for a in conn] for _, conn in tris],
                       dtype=np.int32)
    region = np.zeros(len(tri_arr), dtype=np.uint8)
    for k, ptag in enumerate(tri_phys):
        if ptag not in phys:
            raise MeshError(f"triangle {tris[k][0]}: unknown physical group {ptag}")
        name = phys[ptag][1]
        if name not in REGION_NAMES:
            raise MeshError(f"unknown region physical group '{name}'")
        region[k] = REGION_NAMES[name]

    p = coords[tri_arr]
    sa = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    if np.any(np.abs(sa) < 1e-18):
        bad = int(np.argmin(np.abs(sa)))
        raise MeshError(f"degenerate element id {tris[bad][0]}")
    flip = sa < 0
    tri_arr[flip] = tri_arr[flip][:, [0, 2, 1]]

    edges, tags = [], []
    for conn, ptag in zip(segs, seg_phys):
        if ptag not in phys:
            raise MeshError(f"line element: unknown physical group {ptag}")
        name = phys[ptag][1]
        if name not in BOUNDARY_NAMES:
            raise MeshError(f"unknown boundary physical group '{name}'")
        edges.append((remap[conn[0]], remap[conn[1]]))
        tags.append(BOUNDARY_NAMES[name])

    porosity = np.where(region == SCI, porosity_sci,
                        np.where(region == STEEL, 0.0, porosity_bulk))
    mesh = Mesh(
        nodes=coords,
        tris=tri_arr,
        region=region,
        porosity=porosity,
        boundary_edges=np.array(edges, dtype=np.int32).reshape(-1, 2),
        boundary_tags=np.array(tags, dtype=np.uint8),
        rebar_of_edge=np.where(
            np.array(tags, dtype=np.uint8) == REBAR_SURFACE, 0, -1
        ).astype(np.int32),
    )
    validate_mesh(mesh)
    return mesh


def write_msh(mesh: Mesh, path):
    """Write the mesh back as ASCII MSH v2 (mm), mainly for round-trips."""
    inv_region = {CONCRETE: "Concrete", STEEL: "Steel", SCI: "SCI"}
    inv_bound = {OUTER: "Outer", REBAR_SURFACE: "RebarSurface",
                 TOP_SURFACE: "TopSurface"}
    used_regions = sorted(set(int(r) for r in mesh.region))
    used_bounds = sorted(set(int(t) for t in mesh.boundary_tags))
    phys = []
    surf_tag = {r: 10 + r for r in used_regions}
    line_tag = {b: 20 + b for b in used_bounds}
    for r in used_regions:
        phys.append((2, surf_tag[r], inv_region[r]))
    for b in used_bounds:
        phys.append((1, line_tag[b], inv_bound[b]))

    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames",
           str(len(phys))]
    for dim, pid, name in phys:
        out.append(f'{dim} {pid} "{name}"')
    out.append("$EndPhysicalNames")
    out.append("$Nodes")
    out.append(str(mesh.n_nodes))
    for k, (x, y) in enumerate(mesh.nodes, start=1):
        out.append(f"{k} {x * 1e3!r} {y * 1e3!r} 0")
    out.append("$EndNodes")
    out.append("$Elements")
    out.append(str(mesh.n_tris + len(mesh.boundary_edges)))
    eid = 1
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        out.append(f"{eid} 1 2 {line_tag[int(tag)]} 0 {a + 1} {b + 1}")
        eid += 1
    for t, r in zip(mesh.tris, mesh.region):
        out.append(f"{eid} 2 2 {surf_tag[int(r)]} 0 "
                   f"{t[0] + 1} {t[1] + 1} {t[2] + 1}")
        eid += 1
    out.append("$EndElements")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# legacy VTK
# ---------------------------------------------------------------------------

def write_vtk(mesh: Mesh, path, point_data: dict | None = None,
              cell_data: dict | None = None):
    """Legacy ASCII VTK unstructured grid with optional nodal/cell arrays.

    Scalar arrays are (n,) and vector arrays (n, 2); values are written with
    repr so a reread reproduces them exactly.
    """
    out = ["# vtk DataFile Version 3.0", "corrocrack", "ASCII",
           "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_nodes} double"]
    for x, y in mesh.nodes:
        out.append(f"{x!r} {y!r} 0.0")
    out.append(f"CELLS {mesh.n_tris} {mesh.n_tris * 4}")
    for a, b, c in mesh.tris:
        out.append(f"3 {a} {b} {c}")
    out.append(f"CELL_TYPES {mesh.n_tris}")
    out.extend(["5"] * mesh.n_tris)

    if point_data:
        out.append(f"POINT_DATA {mesh.n_nodes}")
        for name, arr in point_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(float(v)) for v in arr)
            else:
                out.append(f"VECTORS {name} double")
                for vx, vy in arr:
                    out.append(f"{vx!r} {vy!r} 0.0")
    if cell_data:
        out.append(f"CELL_DATA {mesh.n_tris}")
        for name, arr in cell_data.items():
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(repr(float(v)) for v in np.asarray(arr))
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def read_vtk(path):
    """Read back a file produced by write_vtk.

    Returns (nodes, tris, point_data, cell_data).
    """
    with open(path) as f:
        tokens = f.read().split()
    i = 0

    def seek(word):
        nonlocal i
        while tokens[i] != word:
            i += 1

    seek("POINTS")
    n = int(tokens[i + 1])
    i += 3
    nodes = np.array(tokens[i:i + 3 * n], dtype=float).reshape(n, 3)[:, :2]
    i += 3 * n
    seek("CELLS")
    m = int(tokens[i + 1])
    i += 3
    cells = np.array(tokens[i:i + 4 * m], dtype=int).reshape(m, 4)[:, 1:]
    i += 4 * m

    point_data, cell_data = {}, {}
    target, count = None, 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "POINT_DATA":
            target, count = point_data, int(tokens[i + 1])
            i += 2
        elif tok == "CELL_DATA":
            target, count = cell_data, int(tokens[i + 1])
            i += 2
        elif tok == "SCALARS":
            name = tokens[i + 1]
            i += 4  # SCALARS name double 1 ... LOOKUP_TABLE default
            i += 2
            target[name] = np.array(tokens[i:i + count], dtype=float)
            i += count
        elif tok == "VECTORS":
            name = tokens[i + 1]
            i += 3
            vals = np.array(tokens[i:i + 3 * count], dtype=float)
            target[name] = vals.reshape(count, 3)[:, :2]
            i += 3 * count
        else:
            i += 1
    return nodes, cells, point_data, cell_data
