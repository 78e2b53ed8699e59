"""Precipitation eigenstrain, degraded elastic equilibrium and the
effective-stress crack driving force.

The eigenstrain is volumetric, eps* = C(theta_p) S_p 1, acting in the
concrete and SCI regions only. Because the imposed strain is a 3D
volumetric tensor while the cross-section is in plane strain, the
equivalent eigenstress is 3 K_c eps* on the in-plane normal components;
both the load vector and the stress recovery use that form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .config import derive_lame_and_moduli
from .mesh import Mesh, STEEL


def free_volumetric_strain(rust, iron) -> float:
    """Volumetric strain of unconfined precipitation of dissolved iron."""
    if rust.porosity >= 1:
        raise ValueError("rust porosity must be < 1")
    return (iron.density * rust.molar_mass
            / ((1.0 - rust.porosity) * rust.density * iron.molar_mass)) - 1.0


def eigenstrain_coefficient(theta_p, concrete, rust, iron):
    """Coefficient C of eps* = C S_p 1 (vectorized over theta_p).

    The local stiffness of rust-filled concrete follows the linear rule of
    mixtures; the spherical-inclusion mismatch factor then scales the
    unconstrained volumetric strain.
    """
    theta_p = np.asarray(theta_p, dtype=float)
    E = (1.0 - theta_p) * concrete.young_modulus \
        + theta_p * rust.young_modulus
    nu = (1.0 - theta_p) * concrete.poisson_ratio \
        + theta_p * rust.poisson_ratio
    K = E / (3.0 * (1.0 - 2.0 * nu))
    K_p = rust.young_modulus / (3.0 * (1.0 - 2.0 * rust.poisson_ratio))
    eps_v = free_volumetric_strain(rust, iron)
    return (1.0 - nu) * K_p / ((1.0 + nu) * K_p + (2.0 - 4.0 * nu) * K) * eps_v


@dataclass
class MechanicalState:
    u: np.ndarray  # (2n,)
    strain: np.ndarray  # (m, 3) Voigt
    sigma_eff: np.ndarray  # (m, 3) undegraded effective stress
    history: np.ndarray  # (m_concrete,) crack driving force history


def update_driving_force(sigma1, e_tilde, h_tilde, previous):
    """History update H = max(H_prev, H_threshold, <sigma1>^2 / (2 E~))."""
    drive = np.maximum(sigma1, 0.0) ** 2 / (2.0 * e_tilde)
    return np.maximum(np.maximum(previous, h_tilde), drive)


def bottom_roller_constraints(mesh: Mesh):
    """Bottom edge vertical rollers plus one pinned corner (statically
    determinate support for the cross-section scenarios)."""
    y = mesh.nodes[:, 1]
    tol = 1e-9 * max(mesh.nodes[:, 0].ptp(), y.ptp())
    bottom = np.flatnonzero(np.abs(y - y.min()) < tol)
    if len(bottom) == 0:
        raise ValueError("no bottom edge nodes found")
    corner = bottom[np.argmin(mesh.nodes[bottom, 0])]
    dofs = np.concatenate([2 * bottom + 1, [2 * corner]])
    return dofs.astype(np.int64), np.zeros(len(dofs))


class MechanicsModel:
    """Mesh-bound equilibrium solver with factor reuse while the damage
    field is unchanged (eigenstrain growth only touches the RHS)."""

    def __init__(self, mesh: Mesh, geom: fem.TriGeometry, concrete, steel,
                 constraints=None):
        self.mesh = mesh
        self.geom = geom
        self.concrete = concrete
        lam_c, mu_c, K_c, Et_c = derive_lame_and_moduli(
            concrete.young_modulus, concrete.poisson_ratio)
        lam_s, mu_s, _, _ = derive_lame_and_moduli(
            steel.young_modulus, steel.poisson_ratio)
        self.e_tilde = Et_c
        self.sigma_star_factor = 3.0 * K_c  # eigenstress per unit eps*
        self.D_concrete = fem.plane_strain_D(lam_c, mu_c)
        D_e = np.empty((mesh.n_tris, 3, 3))
        D_e[:] = self.D_concrete
        D_e[mesh.region == STEEL] = fem.plane_strain_D(lam_s, mu_s)
        self.D_e = D_e
        self.K0 = fem.element_stiffness(geom, D_e)
        self.conc_sel = np.flatnonzero(mesh.region != STEEL)
        if constraints is None:
            constraints = bottom_roller_constraints(mesh)
        self.fixed_dofs, self.fixed_values = constraints
        self._factor = None
        self._factor_key = None

    def _factorize(self, K, g_mean):
        if self._factor is not None and np.array_equal(self._factor_key, g_mean):
            return self._factor
        self._factor = fem.Factorized(K, self.fixed_dofs, self.fixed_values)
        self._factor_key = g_mean.copy()
        return self._factor

    def solve(self, g_q: np.ndarray, eps_star_q: np.ndarray):
        """Equilibrium under degradation g and volumetric eigenstrain.

        g_q and eps_star_q are given at the quadrature points of the
        concrete elements; steel stays undegraded and eigenstrain-free.
        Returns (u, strain, sigma_eff) with the effective (undegraded)
        stress per element.
        """
        geom = self.geom
        g_mean = np.ones(self.mesh.n_tris)
        g_mean[self.conc_sel] = g_q.mean(axis=1)
        K = fem.assemble_elasticity(geom, self.K0, g_mean)
        sigma_star_q = self.sigma_star_factor * eps_star_q
        f = fem.eigenstrain_load(geom, sigma_star_q, g_q, self.conc_sel)
        factor = self._factorize(K, g_mean)
        u = factor.solve(f)

        strain = fem.element_strains(geom, u)
        sigma_eff = np.einsum("eij,ej->ei", self.D_e, strain)
        s_mean = sigma_star_q.mean(axis=1)
        sigma_eff[self.conc_sel, 0] -= s_mean
        sigma_eff[self.conc_sel, 1] -= s_mean
        return u, strain, sigma_eff
