"""Reactive transport of dissolved iron with precipitation and clogging.

Within a time step the sequence is: precipitate update (nodal, closed
form), implicit solve for the ferrous species with the oxidation sink on
the diagonal and the Faraday boundary influx, implicit solve for the
ferric species with the precipitation sink implicit and the oxidation
source taken from the fresh ferrous solution. Every sub-step is a linear
SPD solve and each species update is unconditionally positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import Mesh, REBAR_SURFACE, STEEL

# below this liquid fraction a node counts as clogged: precipitation stops
# and the capacity is floored to keep the system definite
THETA_FLOOR = 1e-6


@dataclass
class SpeciesState:
    c2: np.ndarray  # Fe2+ concentration, mol per m3 of pore solution
    c3: np.ndarray  # Fe3+
    theta_p: np.ndarray  # precipitate volume fraction

    def copy(self) -> "SpeciesState":
        return SpeciesState(self.c2.copy(), self.c3.copy(), self.theta_p.copy())


def reaction_rates(c2, c3, c_ox, k_oxidation, k_precipitation):
    """Volumetric reaction rates (R_II, R_III, R_p); their sum vanishes."""
    r2 = -k_oxidation * np.asarray(c2) * c_ox
    rp = k_precipitation * np.asarray(c3)
    r3 = -r2 - rp
    return r2, r3, rp


def faraday_influx(current_density: float, faraday: float) -> float:
    """Molar influx of Fe2+ on the rebar surface.

    The anodic reaction releases one Fe2+ per two electrons but the reaction
    stoichiometry doubles the flux, so J = 2 i / (2 F) = i / F.
    """
    z_a = 2
    return 2.0 * current_density / (z_a * faraday)


def effective_diffusivity(theta_l, phi, d_matrix, d_cracked):
    """Scalar coefficient theta_l (1 - phi) D_m + phi D_c of the flux term."""
    return np.asarray(theta_l) * (1.0 - np.asarray(phi)) * d_matrix \
        + np.asarray(phi) * d_cracked


def update_precipitate(theta_p, theta_l, c3, dt, molar_mass, density,
                       k_precipitation, p0):
    """Backward-Euler precipitate growth, solved in closed form.

    theta_p' = (M_p / rho_p) * theta_l * k * c3 with theta_l = p0 - theta_p
    taken implicitly, which is linear in the new value. Growth is clamped
    to [theta_p, p0] and halts where the pores are effectively clogged.
    """
    a = (molar_mass / density) * k_precipitation * np.asarray(c3) * dt
    new = (np.asarray(theta_p) + a * np.asarray(p0)) / (1.0 + a)
    new = np.clip(new, theta_p, p0)
    return np.where(np.asarray(theta_l) <= THETA_FLOOR, theta_p, new)


class TransportModel:
    """Mesh-bound transport operators for one simulation."""

    def __init__(self, mesh: Mesh, geom: fem.TriGeometry, params, rust):
        self.mesh = mesh
        self.geom = geom
        self.p = params
        self.rust = rust
        self.conc_sel = np.flatnonzero(mesh.region != STEEL)
        self.active = np.flatnonzero(mesh.concrete_node_mask())
        self.p0_nodal = mesh.nodal_porosity()
        self.p0_elem = mesh.porosity[self.conc_sel]
        # the configured "initial diffusivity" is the product theta_l * D_m
        # at theta_l = p_0, so the matrix diffusivity is that product over
        # the local initial porosity
        self.dm2_elem = params.initial_diffusivity_ii / self.p0_elem
        self.dm3_elem = params.initial_diffusivity_iii / self.p0_elem
        self.influx_edges = mesh.edges_with_tag(REBAR_SURFACE)
        self.vols = fem.nodal_volumes(geom, self.conc_sel)
        self.influx = faraday_influx(params.current_density,
                                     params.faraday_constant)
        self.gamma_s = mesh.edge_lengths(self.influx_edges).sum()

    def initial_state(self) -> SpeciesState:
        n = self.geom.n_nodes
        return SpeciesState(np.zeros(n), np.zeros(n), np.zeros(n))

    def theta_l(self, theta_p: np.ndarray) -> np.ndarray:
        return self.p0_nodal - theta_p

    def saturation(self, theta_p: np.ndarray) -> np.ndarray:
        """Precipitate saturation ratio, always on the bulk porosity."""
        return theta_p / self.p.porosity

    def total_fe_moles(self, state: SpeciesState) -> float:
        th_eff = np.maximum(self.theta_l(state.theta_p), THETA_FLOOR)
        dissolved = (self.vols * th_eff * (state.c2 + state.c3)).sum()
        precip = (self.vols * state.theta_p).sum() \
            * self.rust.density / self.rust.molar_mass
        return dissolved + precip

    def _kappa(self, theta_l, phi, dm_elem, dc):
        th_q = self.geom.at_quadrature(theta_l, self.conc_sel)
        phi_q = self.geom.at_quadrature(phi, self.conc_sel)
        kq = effective_diffusivity(th_q, phi_q, dm_elem[:, None], dc)
        return kq.mean(axis=1)

    def _solve_species(self, c_old, kappa_e, th_new_eff, th_old_eff, dt,
                       sink_diag, source):
        system = fem.assemble_scalar_diffusion_reaction(
            self.geom, kappa_e, th_new_eff, th_old_eff, dt, sink_diag,
            c_old, source, self.conc_sel)
        c = fem.solve_sparse(system, active=self.active)
        cmax = float(np.max(np.abs(c), initial=0.0))
        if cmax > 0:
            neg = c < -1e-10 * cmax
            if np.any(neg):
                raise FloatingPointError(
                    f"negative concentration {c.min():.3e} "
                    "(time step too large)")
            np.clip(c, 0.0, None, out=c)
        return c

    def step(self, state: SpeciesState, phi: np.ndarray, dt: float,
             influx_edges: np.ndarray | None = None) -> SpeciesState:
        """Advance transport by one implicit step under frozen damage."""
        p = self.p
        th_old = self.theta_l(state.theta_p)
        theta_p_new = update_precipitate(
            state.theta_p, th_old, state.c3, dt, self.rust.molar_mass,
            self.rust.density, p.rate_precipitation, self.p0_nodal)
        th_new = self.theta_l(theta_p_new)
        th_new_eff = np.maximum(th_new, THETA_FLOOR)
        th_old_eff = np.maximum(th_old, THETA_FLOOR)

        edges = self.influx_edges if influx_edges is None else influx_edges
        b2 = fem.edge_load(self.mesh.nodes, edges, self.influx,
                           self.geom.n_nodes)
        sink2 = fem.lumped_capacity(
            self.geom, th_new * p.rate_oxidation * p.oxygen_concentration,
            self.conc_sel)
        kappa2 = self._kappa(th_new, phi, self.dm2_elem,
                             p.cracked_diffusivity_ii)
        c2 = self._solve_species(state.c2, kappa2, th_new_eff, th_old_eff,
                                 dt, sink2, b2)

        sink3 = fem.lumped_capacity(
            self.geom, th_new * p.rate_precipitation, self.conc_sel)
        source3 = fem.lumped_capacity(
            self.geom,
            th_new * p.rate_oxidation * p.oxygen_concentration * c2,
            self.conc_sel)
        kappa3 = self._kappa(th_new, phi, self.dm3_elem,
                             p.cracked_diffusivity_iii)
        c3 = self._solve_species(state.c3, kappa3, th_new_eff, th_old_eff,
                                 dt, sink3, source3)

        return SpeciesState(c2=c2, c3=c3, theta_p=theta_p_new)
