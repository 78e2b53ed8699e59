"""Coupled simulation driver: staggered time loop and run lifecycle.

Each step executes transport (with frozen damage), the eigenstrain update,
degraded equilibrium, the driving-force history update and the phase-field
solve, optionally iterating the mechanical pass to a fixed point. Failures
of any sub-solver trigger time-step halving (up to five levels) before the
run aborts.
"""

from __future__ import annotations

import time as _wallclock
from dataclasses import dataclass

import numpy as np

from . import fem, mechanics, phasefield, postproc, transport
from .config import SimulationConfig, dumps_config
from .mesh import Mesh, STEEL, generate_rebar_cross_section

#: bump when the discretization or physics changes; part of the cache key
#: used by long-running test fixtures
MODEL_REV = 1

#: fixed-point tolerance on the phase field for inner staggered iterations
STAGGER_TOL = 1e-4

#: phase-field level that counts as first damage for the onset bookkeeping
ONSET_PHI = 0.1


@dataclass
class SimulationState:
    time: float
    species: transport.SpeciesState
    phi: np.ndarray
    history: np.ndarray  # per concrete element
    u: np.ndarray
    strain: np.ndarray
    sigma_eff: np.ndarray
    injected_moles: float
    initial_moles: float


def build_mesh(cfg: SimulationConfig) -> Mesh:
    return generate_rebar_cross_section(
        cfg.geometry,
        h_sci=cfg.mesh.h_sci,
        h_bulk=cfg.mesh.h_bulk,
        h_far=cfg.mesh.h_far,
        grading=cfg.mesh.grading,
        sci_thickness=cfg.transport.sci_thickness,
        porosity_bulk=cfg.transport.porosity,
        porosity_sci=cfg.transport.sci_porosity,
        refine_cover_strip=cfg.mesh.refine_cover_strip,
    )


class Simulation:
    def __init__(self, cfg: SimulationConfig, mesh: Mesh | None = None,
                 progress=None):
        cfg.validate()
        if cfg.fracture.model != "pfczm":
            raise ValueError(
                "the coupled driver runs the cohesive phase-field model; "
                "the comparison variants exist only in the bar benchmark")
        self.cfg = cfg
        self.progress = progress
        self.mesh = build_mesh(cfg) if mesh is None else mesh
        self.geom = fem.TriGeometry.from_mesh(self.mesh.nodes, self.mesh.tris)
        self.conc_sel = np.flatnonzero(self.mesh.region != STEEL)
        self.active = np.flatnonzero(self.mesh.concrete_node_mask())
        self.global_to_conc = np.full(self.mesh.n_tris, -1, dtype=np.int64)
        self.global_to_conc[self.conc_sel] = np.arange(len(self.conc_sel))

        rng = np.random.default_rng(cfg.output.seed)
        m_c = len(self.conc_sel)
        amp = cfg.concrete.heterogeneity
        ft = cfg.concrete.tensile_strength * np.ones(m_c)
        gf = cfg.concrete.fracture_energy * np.ones(m_c)
        if amp > 0:
            ft *= 1.0 + amp * rng.uniform(-1.0, 1.0, m_c)
            gf *= 1.0 + amp * rng.uniform(-1.0, 1.0, m_c)
        self.ft_e, self.gf_e = ft, gf

        self.mech = mechanics.MechanicsModel(
            self.mesh, self.geom, cfg.concrete, cfg.steel)
        self.calibration = phasefield.calibrate_cornelissen(
            ft, gf, self.mech.e_tilde, cfg.fracture.length_scale,
            softening=cfg.fracture.softening,
            structure_size=min(cfg.geometry.width, cfg.geometry.height))
        self.h_tilde = phasefield.damage_threshold(ft, self.mech.e_tilde)
        self.trans = transport.TransportModel(
            self.mesh, self.geom, cfg.transport, cfg.rust)
        self.top = postproc.TopSurface.from_mesh(self.mesh)
        self.locator = None  # built on demand for probes

    # -- field helpers ----------------------------------------------------

    def eigenstrain_nodal(self, theta_p: np.ndarray) -> np.ndarray:
        C = mechanics.eigenstrain_coefficient(
            theta_p, self.cfg.concrete, self.cfg.rust, self.cfg.iron)
        return C * self.trans.saturation(theta_p)

    def _g_at_edges(self, phi_vals, parents):
        a1 = np.asarray(self.calibration.a1)[self.global_to_conc[parents]]
        g, _ = self.calibration.degradation(phi_vals, a1=a1)
        return g

    def crack_width(self, state: SimulationState) -> float:
        eps_star = self.eigenstrain_nodal(state.species.theta_p)
        return postproc.crack_width(self.top, state.phi,
                                    state.strain[:, 0], eps_star,
                                    self._g_at_edges)

    def mass_drift(self, state: SimulationState) -> float:
        total = self.trans.total_fe_moles(state.species)
        budget = state.injected_moles + state.initial_moles
        return (total - budget) / max(budget, 1e-30)

    # -- stepping ----------------------------------------------------------

    def initial_state(self) -> SimulationState:
        n = self.geom.n_nodes
        species = self.trans.initial_state()
        state = SimulationState(
            time=0.0,
            species=species,
            phi=np.zeros(n),
            history=self.h_tilde.copy(),
            u=np.zeros(2 * n),
            strain=np.zeros((self.mesh.n_tris, 3)),
            sigma_eff=np.zeros((self.mesh.n_tris, 3)),
            injected_moles=0.0,
            initial_moles=self.trans.total_fe_moles(species),
        )
        return state

    def staggered_step(self, state: SimulationState, dt: float
                       ) -> SimulationState:
        species = self.trans.step(state.species, state.phi, dt)
        eps_star = self.eigenstrain_nodal(species.theta_p)
        eps_q = self.geom.at_quadrature(eps_star, self.conc_sel)

        phi = state.phi
        history = state.history
        u, strain, sigma = state.u, state.strain, state.sigma_eff
        a1_q = np.asarray(self.calibration.a1).reshape(-1, 1) \
            if np.ndim(self.calibration.a1) else self.calibration.a1
        for _ in range(self.cfg.time.staggered_iterations):
            phi_q = self.geom.at_quadrature(phi, self.conc_sel)
            g_q, _ = self.calibration.degradation(phi_q, a1=a1_q)
            u, strain, sigma = self.mech.solve(g_q, eps_q)
            sigma1 = fem.principal_max(sigma[self.conc_sel])
            history = mechanics.update_driving_force(
                sigma1, self.mech.e_tilde, self.h_tilde, history)
            phi_new, _ = phasefield.solve_phase_field(
                self.geom, self.conc_sel, self.active, phi, history,
                self.calibration)
            change = float(np.max(np.abs(phi_new - phi)))
            phi = phi_new
            if change <= STAGGER_TOL:
                break

        injected = state.injected_moles \
            + dt * self.trans.influx * self.trans.gamma_s
        return SimulationState(
            time=state.time + dt, species=species, phi=phi, history=history,
            u=u, strain=strain, sigma_eff=sigma,
            injected_moles=injected, initial_moles=state.initial_moles)

    def advance(self, state: SimulationState, dt: float, depth: int = 0
                ) -> SimulationState:
        """Advance by dt, halving the sub-step on solver failures."""
        try:
            return self.staggered_step(state, dt)
        except (FloatingPointError, fem.SolverError,
                phasefield.PhaseFieldError):
            if depth >= 5:
                raise
            mid = self.advance(state, dt / 2, depth + 1)
            return self.advance(mid, dt / 2, depth + 1)

    # -- full run ----------------------------------------------------------

    def _snapshot_fields(self, state: SimulationState) -> dict:
        sp = self.trans.saturation(state.species.theta_p)
        sig1_elem = fem.principal_max(state.sigma_eff)
        return {
            "c_II": state.species.c2.copy(),
            "c_III": state.species.c3.copy(),
            "theta_p": state.species.theta_p.copy(),
            "S_p": sp,
            "phi": state.phi.copy(),
            "sigma1": postproc.nodal_average(self.mesh, sig1_elem),
            "u": np.column_stack([state.u[0::2], state.u[1::2]]),
        }

    def _record_probes(self, out: postproc.RunOutput, state: SimulationState):
        if len(self.mesh.rebar_radii) == 0:
            return
        if self.locator is None:
            self.locator = postproc.PointLocator(self.mesh)
        center = self.mesh.rebar_centers[0]
        R = self.mesh.rebar_radii[0]
        d_sci = self.cfg.transport.sci_thickness
        sp = self.trans.saturation(state.species.theta_p)
        for angle in self.cfg.output.probe_angles:
            r, v, _ = postproc.probe_radial(self.locator, sp, center,
                                            R, angle)
            out.probes.append((state.time, "radial_S_p", r, v))
        ang, v = postproc.probe_circumferential(
            self.locator, state.phi, center, R + 0.5 * d_sci)
        out.probes.append((state.time, "circumferential_phi", ang, v))
        ang, v = postproc.probe_circumferential(
            self.locator, sp, center, R + 0.5 * d_sci)
        out.probes.append((state.time, "circumferential_S_p", ang, v))

    def run(self) -> postproc.RunOutput:
        cfg = self.cfg
        t_wall = _wallclock.perf_counter()
        state = self.initial_state()
        dt = cfg.time.dt
        n_steps = int(round(cfg.time.duration / dt)) if cfg.time.duration else 0

        series = {k: [0.0] for k in ("t", "w", "precip", "drift", "phimax")}
        out = postproc.RunOutput(
            times=None, width=None, width_rel=None, precipitate_volume=None,
            mass_drift=None, phi_max=None)
        out.snapshots.append((0.0, self._snapshot_fields(state)))
        self._record_probes(out, state)

        dphi_min = 0.0
        phi_lo, phi_hi = 0.0, 0.0
        onset = None
        abort = None
        next_output = cfg.time.output_interval
        for k in range(1, n_steps + 1):
            target = k * dt
            try:
                new_state = self.advance(state, target - state.time)
            except Exception as exc:  # aborted run keeps partial output
                abort = f"{type(exc).__name__}: {exc}"
                break
            dphi_min = min(dphi_min, float(np.min(new_state.phi - state.phi)))
            state = new_state
            phi_lo = min(phi_lo, float(state.phi.min()))
            phi_hi = max(phi_hi, float(state.phi.max()))

            w = self.crack_width(state)
            drift = self.mass_drift(state)
            precip = float((self.trans.vols * state.species.theta_p).sum())
            pmax = float(state.phi.max())
            series["t"].append(state.time)
            series["w"].append(w)
            series["precip"].append(precip)
            series["drift"].append(drift)
            series["phimax"].append(pmax)

            if onset is None and pmax >= ONSET_PHI:
                onset = self._onset_info(state)
            if self.progress is not None:
                self.progress(
                    f"step={k} t_days={state.time / 86400.0:.3f} "
                    f"max_phi={pmax:.4f} w_mm={w * 1e3:.5f} "
                    f"drift={drift:.3e}")
            if state.time >= next_output - 0.5 * dt or k == n_steps:
                out.snapshots.append((state.time, self._snapshot_fields(state)))
                self._record_probes(out, state)
                while next_output <= state.time + 0.5 * dt:
                    next_output += cfg.time.output_interval

        out.times = np.array(series["t"])
        out.width = np.array(series["w"])
        out.width_rel = out.width / postproc.WIDTH_REFERENCE
        out.precipitate_volume = np.array(series["precip"])
        out.mass_drift = np.array(series["drift"])
        out.phi_max = np.array(series["phimax"])
        out.meta = {
            "config_hash": cfg.config_hash(),
            "seed": cfg.output.seed,
            "model_rev": MODEL_REV,
            "n_nodes": self.mesh.n_nodes,
            "n_tris": self.mesh.n_tris,
            "injected_moles": state.injected_moles,
            "final_drift": series["drift"][-1],
            "dphi_min": dphi_min,
            "phi_min": phi_lo,
            "phi_max": phi_hi,
            "abort": abort or "",
            "runtime_s": _wallclock.perf_counter() - t_wall,
        }
        if onset is not None:
            out.meta.update(onset)
        return out

    def _onset_info(self, state: SimulationState) -> dict:
        node = int(np.argmax(state.phi))
        p = self.mesh.nodes[node]
        dists = np.hypot(p[0] - self.mesh.rebar_centers[:, 0],
                         p[1] - self.mesh.rebar_centers[:, 1])
        nearest = int(np.argmin(dists))
        offset = float(dists[nearest] - self.mesh.rebar_radii[nearest])
        return {
            "onset_time_days": state.time / 86400.0,
            "onset_radius_offset_m": offset,
            "onset_rebar": nearest,
        }


def run_simulation(cfg: SimulationConfig, outdir=None, mesh: Mesh | None = None,
                   progress=print) -> postproc.RunOutput:
    """Build, run and optionally persist one simulation."""
    sim = Simulation(cfg, mesh=mesh, progress=progress)
    out = sim.run()
    if outdir is not None:
        out.save(outdir, mesh=sim.mesh)
        from pathlib import Path
        Path(outdir, "resolved_config.toml").write_text(dumps_config(cfg))
    return out
