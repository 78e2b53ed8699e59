"""Linear-triangle FEM kernels: shape-function geometry, sparse assembly of
diffusion/elasticity/phase-field operators and the linear-solve contract.

Single-point quadrature is used for P1 stiffness terms (exact); fields that
vary inside an element (degradation, liquid fraction, eigenstrain) are
evaluated with the three-point edge-midpoint rule, which integrates
quadratics exactly and has positive weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

# P1 shape functions at the edge-midpoint quadrature points (rows: points)
QP_SHAPE = np.array([[0.5, 0.5, 0.0],
                     [0.0, 0.5, 0.5],
                     [0.5, 0.0, 0.5]])


class SolverError(RuntimeError):
    pass


@dataclass
class TriGeometry:
    """Per-element geometry shared by every assembly routine."""
    tris: np.ndarray  # (m, 3)
    areas: np.ndarray  # (m,)
    grads: np.ndarray  # (m, 3, 2) gradients of the P1 shape functions
    n_nodes: int

    @classmethod
    def from_mesh(cls, nodes: np.ndarray, tris: np.ndarray) -> "TriGeometry":
        p = nodes[tris]
        x, y = p[..., 0], p[..., 1]
        det = ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
               - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
        if np.any(det <= 0):
            raise ValueError("mesh contains non-CCW or degenerate triangles")
        areas = 0.5 * det
        grads = np.empty((len(tris), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (y[:, j] - y[:, k]) / det
            grads[:, i, 1] = (x[:, k] - x[:, j]) / det
        return cls(tris=tris, areas=areas, grads=grads, n_nodes=len(nodes))

    def at_quadrature(self, nodal: np.ndarray, sel=slice(None)) -> np.ndarray:
        """Interpolate a nodal field to the 3 quadrature points: (m_sel, 3)."""
        return nodal[self.tris[sel]] @ QP_SHAPE.T


def interp_elementwise(geom: TriGeometry, nodal: np.ndarray,
                       sel=slice(None)) -> np.ndarray:
    """Element mean of a nodal field (exact for P1)."""
    return nodal[geom.tris[sel]].mean(axis=1)


# ---------------------------------------------------------------------------
# scalar operators
# ---------------------------------------------------------------------------

def scalar_stiffness(geom: TriGeometry, kappa: np.ndarray,
                     sel=slice(None)) -> sparse.csr_matrix:
    """Assemble sum_e kappa_e * A_e * grad(N_i).grad(N_j)."""
    tris = geom.tris[sel]
    coef = kappa * geom.areas[sel]
    g = geom.grads[sel]
    ke = np.einsum("e,eid,ejd->eij", coef, g, g)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    A = sparse.coo_matrix((ke.ravel(), (rows, cols)),
                          shape=(geom.n_nodes, geom.n_nodes))
    return A.tocsr()


def lumped_capacity(geom: TriGeometry, nodal_coeff: np.ndarray,
                    sel=slice(None)) -> np.ndarray:
    """Row-sum lumped mass with a nodal coefficient: m_i = coeff_i * V_i.

    Lumping keeps the backward-Euler transport update monotone.
    """
    tris = geom.tris[sel]
    vols = np.zeros(geom.n_nodes)
    np.add.at(vols, tris.ravel(), np.repeat(geom.areas[sel] / 3.0, 3))
    return vols * nodal_coeff


def nodal_volumes(geom: TriGeometry, sel=slice(None)) -> np.ndarray:
    return lumped_capacity(geom, np.ones(geom.n_nodes), sel)


def mass_with_coeff(geom: TriGeometry, coeff_q: np.ndarray,
                    sel=slice(None)) -> sparse.csr_matrix:
    """Consistent mass with a coefficient given at quadrature points."""
    tris = geom.tris[sel]
    w = geom.areas[sel][:, None] / 3.0
    me = np.einsum("eq,qi,qj->eij", coeff_q * w, QP_SHAPE, QP_SHAPE)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return sparse.coo_matrix((me.ravel(), (rows, cols)),
                             shape=(geom.n_nodes, geom.n_nodes)).tocsr()


def load_from_qpoints(geom: TriGeometry, values_q: np.ndarray,
                      sel=slice(None)) -> np.ndarray:
    """RHS vector int f N_i with f given at quadrature points."""
    tris = geom.tris[sel]
    w = geom.areas[sel][:, None] / 3.0
    fe = (values_q * w) @ QP_SHAPE
    out = np.zeros(geom.n_nodes)
    np.add.at(out, tris.ravel(), fe.ravel())
    return out


def edge_load(nodes: np.ndarray, edges: np.ndarray, flux: float,
              n_nodes: int) -> np.ndarray:
    """Neumann load int flux * N_i over the given edges (flux constant)."""
    out = np.zeros(n_nodes)
    if len(edges) == 0:
        return out
    d = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    np.add.at(out, edges[:, 0], 0.5 * flux * lengths)
    np.add.at(out, edges[:, 1], 0.5 * flux * lengths)
    return out


# ---------------------------------------------------------------------------
# plane-strain elasticity
# ---------------------------------------------------------------------------

def plane_strain_D(lam: float, mu: float) -> np.ndarray:
    return np.array([[lam + 2 * mu, lam, 0.0],
                     [lam, lam + 2 * mu, 0.0],
                     [0.0, 0.0, mu]])


def element_B(geom: TriGeometry) -> np.ndarray:
    """Strain-displacement matrices, (m, 3, 6), Voigt (xx, yy, gamma_xy)."""
    m = len(geom.tris)
    B = np.zeros((m, 3, 6))
    g = geom.grads
    for i in range(3):
        B[:, 0, 2 * i] = g[:, i, 0]
        B[:, 1, 2 * i + 1] = g[:, i, 1]
        B[:, 2, 2 * i] = g[:, i, 1]
        B[:, 2, 2 * i + 1] = g[:, i, 0]
    return B


def element_stiffness(geom: TriGeometry, D_e: np.ndarray) -> np.ndarray:
    """Undegraded element matrices A_e * B^T D B, (m, 6, 6).

    D_e is (m, 3, 3); computed once per mesh, scaled by the degradation
    factor at each assembly.
    """
    B = element_B(geom)
    return np.einsum("e,eki,ekl,elj->eij", geom.areas, B, D_e, B)


def elasticity_dof_ids(tris: np.ndarray) -> np.ndarray:
    """(m, 6) displacement dof ids, interleaved (ux, uy)."""
    m = len(tris)
    dofs = np.empty((m, 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * tris
    dofs[:, 1::2] = 2 * tris + 1
    return dofs


def assemble_elasticity(geom: TriGeometry, K0: np.ndarray,
                        g_mean: np.ndarray) -> sparse.csr_matrix:
    """Global stiffness K(g) = sum_e mean(g)_e * K0_e."""
    dofs = elasticity_dof_ids(geom.tris)
    ke = K0 * g_mean[:, None, None]
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * geom.n_nodes
    return sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def eigenstrain_load(geom: TriGeometry, sigma_star_q: np.ndarray,
                     g_q: np.ndarray, sel=slice(None)) -> np.ndarray:
    """Load vector of a degraded volumetric eigenstress.

    sigma_star_q holds 3K_c * eps_star at the quadrature points; the Voigt
    eigenstress is (s, s, 0), so B^T sigma* reduces to the interleaved
    shape-function gradients.
    """
    tris = geom.tris[sel]
    w = geom.areas[sel] / 3.0
    s_mean = (sigma_star_q * g_q).sum(axis=1) * w  # int g sigma* dA
    g = geom.grads[sel]
    fe = np.empty((len(tris), 6))
    fe[:, 0::2] = g[:, :, 0] * s_mean[:, None]
    fe[:, 1::2] = g[:, :, 1] * s_mean[:, None]
    dofs = elasticity_dof_ids(tris)
    out = np.zeros(2 * geom.n_nodes)
    np.add.at(out, dofs.ravel(), fe.ravel())
    return out


def element_strains(geom: TriGeometry, u: np.ndarray) -> np.ndarray:
    """Voigt strains (m, 3) from a nodal displacement vector (2n,)."""
    ux = u[0::2][geom.tris]
    uy = u[1::2][geom.tris]
    g = geom.grads
    exx = (g[:, :, 0] * ux).sum(axis=1)
    eyy = (g[:, :, 1] * uy).sum(axis=1)
    gxy = (g[:, :, 1] * ux).sum(axis=1) + (g[:, :, 0] * uy).sum(axis=1)
    return np.column_stack([exx, eyy, gxy])


def principal_max(sig: np.ndarray) -> np.ndarray:
    """Largest in-plane principal stress of Voigt tensors (m, 3)."""
    mid = 0.5 * (sig[:, 0] + sig[:, 1])
    rad = np.sqrt((0.5 * (sig[:, 0] - sig[:, 1])) ** 2 + sig[:, 2] ** 2)
    return mid + rad


# ---------------------------------------------------------------------------
# constrained sparse solve
# ---------------------------------------------------------------------------

@dataclass
class SparseSystem:
    A: sparse.csr_matrix
    b: np.ndarray
    fixed_dofs: np.ndarray
    fixed_values: np.ndarray


class Factorized:
    """LU factorization of the free-free block; reusable across right-hand
    sides as long as the matrix and constraint pattern are unchanged."""

    def __init__(self, A: sparse.csr_matrix, fixed_dofs, fixed_values,
                 active=None):
        n = A.shape[0]
        fixed_dofs = np.asarray(fixed_dofs, dtype=np.int64)
        self.fixed_dofs = fixed_dofs
        self.fixed_values = np.asarray(fixed_values, dtype=float)
        mask = np.ones(n, dtype=bool)
        if active is not None:
            mask[:] = False
            mask[active] = True
        mask[fixed_dofs] = False
        self.free = np.flatnonzero(mask)
        self.n = n
        A = A.tocsr()
        self.A_ff = A[self.free][:, self.free].tocsc()
        if len(fixed_dofs) and np.any(self.fixed_values != 0.0):
            self.A_fc = A[self.free][:, fixed_dofs].tocsr()
        else:
            self.A_fc = None
        try:
            self.lu = splu(self.A_ff)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        rhs = b[self.free]
        if self.A_fc is not None:
            rhs = rhs - self.A_fc @ self.fixed_values
        x_f = self.lu.solve(rhs)
        ref = np.linalg.norm(rhs)
        if ref > 0:
            r = rhs - self.A_ff @ x_f
            if np.linalg.norm(r) > 1e-12 * ref:
                x_f = x_f + self.lu.solve(r)
                r = rhs - self.A_ff @ x_f
            if not np.all(np.isfinite(x_f)) or np.linalg.norm(r) > 1e-10 * ref:
                raise SolverError(
                    f"linear solve residual {np.linalg.norm(r) / ref:.3e} "
                    "exceeds contract (1e-10)")
        x = np.zeros(self.n)
        x[self.free] = x_f
        if len(self.fixed_dofs):
            x[self.fixed_dofs] = self.fixed_values
        return x


def solve_sparse(system: SparseSystem, active=None) -> np.ndarray:
    """One-shot constrained solve; residual contract 1e-10 relative."""
    return Factorized(system.A, system.fixed_dofs, system.fixed_values,
                      active=active).solve(system.b)


# ---------------------------------------------------------------------------
# spec-shaped wrapper for a scalar diffusion-reaction step system
# ---------------------------------------------------------------------------

def assemble_scalar_diffusion_reaction(
        geom: TriGeometry, kappa_e: np.ndarray, capacity_new: np.ndarray,
        capacity_old: np.ndarray, dt: float, reaction_diag: np.ndarray,
        c_old: np.ndarray, source: np.ndarray, sel=slice(None)) -> SparseSystem:
    """Backward-Euler system (M_new/dt + K + R) c = M_old/dt c_old + source.

    capacity_* are nodal coefficients (liquid fractions); reaction_diag is a
    nodal implicit sink coefficient (>= 0, lumped); the conservative product
    form (theta c)_t is used so dissolved moles survive shrinking porosity.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    m_new = lumped_capacity(geom, capacity_new, sel)
    m_old = lumped_capacity(geom, capacity_old, sel)
    K = scalar_stiffness(geom, kappa_e, sel)
    A = K + sparse.diags(m_new / dt + reaction_diag)
    b = m_old / dt * c_old + source
    return SparseSystem(A=A, b=b, fixed_dofs=np.array([], dtype=np.int64),
                        fixed_values=np.array([]))
