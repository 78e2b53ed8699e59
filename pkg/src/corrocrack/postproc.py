"""Post-processing: crack width, probe lines, damage connectivity and the
run output container with CSV/VTK emission."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .mesh import Mesh, TOP_SURFACE, write_vtk

#: reference opening for the relative crack width (the measured maximum of
#: the 60-day validation case)
WIDTH_REFERENCE = 0.25e-3

_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class PostprocError(ValueError):
    pass


@dataclass
class TopSurface:
    edges: np.ndarray  # (k, 2)
    parent: np.ndarray  # (k,) triangle index
    lengths: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "TopSurface":
        edges = mesh.edges_with_tag(TOP_SURFACE)
        if len(edges) == 0:
            raise PostprocError("mesh has no TopSurface edges")
        node_tris: dict[int, list[int]] = {}
        for t, tri in enumerate(mesh.tris):
            for nd in tri:
                node_tris.setdefault(int(nd), []).append(t)
        parent = np.empty(len(edges), dtype=np.int64)
        for k, (a, b) in enumerate(edges):
            cands = set(node_tris.get(int(a), ())) & set(node_tris.get(int(b), ()))
            if len(cands) != 1:
                raise PostprocError(f"top edge ({a},{b}) has {len(cands)} parents")
            parent[k] = cands.pop()
        return cls(edges=edges, parent=parent,
                   lengths=mesh.edge_lengths(edges))


def crack_width(top: TopSurface, phi: np.ndarray, strain_xx: np.ndarray,
                eps_star: np.ndarray, g_of_phi) -> float:
    """Opening integral over the monitored surface.

    w = int (1 - g(phi)) (eps_x - eps*_x) dGamma with two-point Gauss
    quadrature per edge; strain_xx is elementwise, phi and eps* nodal.
    g_of_phi(phi_values, parent_elements) evaluates the degradation with
    the parent element's calibration.
    """
    a, b = top.edges[:, 0], top.edges[:, 1]
    w = 0.0
    for s in _GAUSS2:
        na, nb = (1 - s) / 2, (1 + s) / 2
        phi_g = na * phi[a] + nb * phi[b]
        eps_g = na * eps_star[a] + nb * eps_star[b]
        g = g_of_phi(phi_g, top.parent)
        integrand = (1.0 - g) * (strain_xx[top.parent] - eps_g)
        w += float((integrand * top.lengths / 2.0).sum())
    return w


# ---------------------------------------------------------------------------
# point location and probes
# ---------------------------------------------------------------------------

class PointLocator:
    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.tree = cKDTree(mesh.centroids())
        p = mesh.nodes[mesh.tris]
        self.p0 = p[:, 0]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.inv = np.stack([
            np.stack([d2[:, 1] / det, -d2[:, 0] / det], axis=1),
            np.stack([-d1[:, 1] / det, d1[:, 0] / det], axis=1)], axis=1)

    def locate(self, pts: np.ndarray, k: int = 16):
        """Return (tri_index, barycentric) per point; -1 when outside."""
        pts = np.atleast_2d(pts)
        _, cand = self.tree.query(pts, k=min(k, len(self.mesh.tris)))
        cand = np.atleast_2d(cand)
        tri_idx = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        for j, p in enumerate(pts):
            for t in cand[j]:
                loc = self.inv[t] @ (p - self.p0[t])
                l1, l2 = loc
                l0 = 1.0 - l1 - l2
                if min(l0, l1, l2) >= -1e-10:
                    tri_idx[j] = t
                    bary[j] = (l0, l1, l2)
                    break
        return tri_idx, bary

    def interpolate(self, nodal: np.ndarray, pts: np.ndarray):
        tri_idx, bary = self.locate(pts)
        vals = np.full(len(np.atleast_2d(pts)), np.nan)
        ok = tri_idx >= 0
        conn = self.mesh.tris[tri_idx[ok]]
        vals[ok] = (nodal[conn] * bary[ok]).sum(axis=1)
        return vals, ok


def probe_radial(locator: PointLocator, nodal: np.ndarray, center,
                 start_radius: float, angle: float, n: int = 160,
                 max_radius: float | None = None):
    """Sample a nodal field along a ray from the rebar surface outward.

    Returns (radii, values, truncated); the polyline stops at the first
    sample outside the domain.
    """
    mesh = locator.mesh
    if max_radius is None:
        span = max(mesh.nodes[:, 0].ptp(), mesh.nodes[:, 1].ptp())
        max_radius = start_radius + span
    radii = np.linspace(start_radius, max_radius, n)
    direction = np.array([np.cos(angle), np.sin(angle)])
    pts = np.asarray(center) + radii[:, None] * direction
    vals, ok = locator.interpolate(nodal, pts)
    if ok.all():
        return radii, vals, False
    cut = int(np.argmin(ok))  # first failure
    return radii[:cut], vals[:cut], True


def probe_circumferential(locator: PointLocator, nodal: np.ndarray, center,
                          radius: float, n: int = 256):
    """Sample a nodal field around a circle; returns (angles, values)."""
    ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    pts = np.asarray(center) + radius * np.column_stack(
        [np.cos(ang), np.sin(ang)])
    vals, ok = locator.interpolate(nodal, pts)
    return ang[ok], vals[ok]


# ---------------------------------------------------------------------------
# damage connectivity (spalling / delamination checks)
# ---------------------------------------------------------------------------

def damage_components(mesh: Mesh, phi: np.ndarray, threshold: float = 0.75):
    """Connected components of damaged elements (mean nodal phi > threshold).

    Returns a list of centroid arrays, one per component, largest first.
    """
    elem_phi = phi[mesh.tris].mean(axis=1)
    marked = np.flatnonzero(elem_phi > threshold)
    if len(marked) == 0:
        return []
    mark_pos = -np.ones(mesh.n_tris, dtype=np.int64)
    mark_pos[marked] = np.arange(len(marked))

    edge_owner: dict[tuple[int, int], int] = {}
    rows, cols = [], []
    for t in marked:
        a, b, c = mesh.tris[t]
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            other = edge_owner.get(key)
            if other is None:
                edge_owner[key] = t
            else:
                rows.append(mark_pos[t])
                cols.append(mark_pos[other])
    n = len(marked)
    graph = sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    cents = mesh.centroids()[marked]
    comps = [cents[labels == k] for k in range(n_comp)]
    comps.sort(key=len, reverse=True)
    return comps


def nodal_average(mesh: Mesh, elem_values: np.ndarray) -> np.ndarray:
    """Area-weighted transfer of element values to nodes (for output)."""
    areas = mesh.areas()
    num = np.zeros(mesh.n_nodes)
    den = np.zeros(mesh.n_nodes)
    np.add.at(num, mesh.tris.ravel(),
              np.repeat(elem_values * areas, 3))
    np.add.at(den, mesh.tris.ravel(), np.repeat(areas, 3))
    return num / np.maximum(den, 1e-300)


# ---------------------------------------------------------------------------
# run output
# ---------------------------------------------------------------------------

@dataclass
class RunOutput:
    times: np.ndarray
    width: np.ndarray
    width_rel: np.ndarray
    precipitate_volume: np.ndarray
    mass_drift: np.ndarray
    phi_max: np.ndarray
    snapshots: list = field(default_factory=list)  # (t, {name: array})
    probes: list = field(default_factory=list)  # (t, name, x, values)
    meta: dict = field(default_factory=dict)

    def width_at_days(self, days) -> np.ndarray:
        """Crack width interpolated at the requested times (days)."""
        t = np.asarray(days, dtype=float) * 86400.0
        return np.interp(t, self.times, self.width)

    def save(self, outdir, mesh: Mesh | None = None) -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        cols = {
            "time_s": self.times,
            "crack_width_m": self.width,
            "crack_width_rel": self.width_rel,
            "precipitate_volume_m3": self.precipitate_volume,
            "mass_drift_rel": self.mass_drift,
            "phi_max": self.phi_max,
        }
        write_csv(outdir / "timeseries.csv", cols,
                  comment="corrocrack time series; SI units (m, s, m3)")
        with open(outdir / "meta.txt", "w") as f:
            for k in sorted(self.meta):
                f.write(f"{k}={self.meta[k]}\n")
        if mesh is not None and self.snapshots:
            snapdir = outdir / "snapshots"
            snapdir.mkdir(exist_ok=True)
            for t, fields in self.snapshots:
                vectors = {k: v for k, v in fields.items()
                           if np.ndim(v) == 2}
                scalars = {k: v for k, v in fields.items()
                           if np.ndim(v) == 1}
                write_vtk(mesh, snapdir / f"t_{t / 86400.0:08.3f}d.vtk",
                          point_data={**scalars, **vectors})
        if self.probes:
            pdir = outdir / "probes"
            pdir.mkdir(exist_ok=True)
            for t, name, x, vals in self.probes:
                write_csv(pdir / f"{name}_{t / 86400.0:08.3f}d.csv",
                          {"x": x, "value": vals},
                          comment=f"probe {name} at t = {t} s")
        return outdir


def write_csv(path, columns: dict, comment: str | None = None):
    keys = list(columns)
    arrays = [np.asarray(columns[k]) for k in keys]
    with open(path, "w") as f:
        if comment:
            f.write(f"# {comment}\n")
        f.write(",".join(keys) + "\n")
        if arrays and len(arrays[0]):
            for row in zip(*arrays):
                f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines()
                 if ln and not ln.startswith("#")]
    keys = lines[0].split(",")
    data = {k: [] for k in keys}
    for ln in lines[1:]:
        for k, v in zip(keys, ln.split(",")):
            data[k].append(float(v))
    return {k: np.array(v) for k, v in data.items()}
