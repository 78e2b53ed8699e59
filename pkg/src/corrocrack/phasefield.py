"""Quasi-brittle phase-field machinery.

The production model is the cohesive-zone-calibrated formulation with the
rational degradation function g(phi) = (1-phi)^p / ((1-phi)^p + a1 phi
(1 + a2 phi + a3 phi^2)) and dissipation alpha(phi) = 2 phi - phi^2. The
calibration reproduces the Hordijk-Cornelissen softening curve; the
conventional quadratic model and the principal-stress threshold model are
available for the bar comparison benchmark only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import fem

_CORNELISSEN = {"wc_factor": 5.1361, "k0_factor": 1.3546}


class PhaseFieldError(RuntimeError):
    pass


@dataclass
class SofteningCalibration:
    p: float
    a1: np.ndarray  # scalar or per-element (heterogeneous strength)
    a2: float
    a3: float
    beta_w: float
    beta_k: float
    l_irw: np.ndarray  # Irwin length E~ G_f / f_t^2
    w_c: np.ndarray  # limit crack opening of the softening curve
    k0: np.ndarray  # initial softening slope
    length_scale: float
    gf: np.ndarray  # fracture energy carried along for the phi equation

    def degradation(self, phi, a1=None):
        """g(phi) and dg/dphi; a1 may be overridden with a broadcastable
        array (per-element values at quadrature points)."""
        a1 = self.a1 if a1 is None else a1
        return _rational_degradation(phi, self.p, a1, self.a2, self.a3)[:2]

    def degradation_full(self, phi, a1=None):
        a1 = self.a1 if a1 is None else a1
        return _rational_degradation(phi, self.p, a1, self.a2, self.a3)


def _rational_degradation(phi, p, a1, a2, a3):
    phi = np.asarray(phi, dtype=float)
    om = 1.0 - phi
    u = om ** p
    du = -p * om ** (p - 1)
    d2u = p * (p - 1) * om ** (p - 2) if p != 2 else np.full_like(phi, 2.0)
    q = a1 * phi * (1.0 + a2 * phi + a3 * phi * phi)
    dq = a1 * (1.0 + 2.0 * a2 * phi + 3.0 * a3 * phi * phi)
    d2q = a1 * (2.0 * a2 + 6.0 * a3 * phi)
    v = u + q
    dv = du + dq
    d2v = d2u + d2q
    g = u / v
    dg = (du * v - u * dv) / v ** 2
    d2g = (d2u * v ** 2 - u * d2v * v - 2.0 * dv * (du * v - u * dv)) / v ** 3
    return g, dg, d2g


def degradation(phi, cal: SofteningCalibration):
    return cal.degradation(phi)


def dissipation(phi):
    """alpha(phi) = 2 phi - phi^2 and its derivative."""
    phi = np.asarray(phi, dtype=float)
    return 2.0 * phi - phi * phi, 2.0 - 2.0 * phi


def calibrate_cornelissen(ft, gf, e_tilde, length_scale,
                          softening: str = "cornelissen",
                          structure_size: float | None = None
                          ) -> SofteningCalibration:
    """Calibrate the degradation function to a cohesive softening curve.

    ft and gf may be arrays (per-element heterogeneous strength); the
    shape constants a2, a3 depend only on the chosen softening curve.
    """
    ft = np.asarray(ft, dtype=float)
    gf = np.asarray(gf, dtype=float)
    if np.any(ft <= 0) or np.any(gf <= 0) or e_tilde <= 0 or length_scale <= 0:
        raise ValueError("calibration inputs must be positive")
    p = 2.0
    if softening == "cornelissen":
        w_c = _CORNELISSEN["wc_factor"] * gf / ft
        k0 = -_CORNELISSEN["k0_factor"] * ft ** 2 / gf
    elif softening == "linear":
        w_c = 2.0 * gf / ft
        k0 = -(ft ** 2) / (2.0 * gf)
    else:
        raise ValueError(f"unknown softening law {softening!r}")
    beta_w = float(np.mean(w_c * ft / (2.0 * gf)))
    beta_k = float(np.mean(k0 / (-(ft ** 2) / (2.0 * gf))))
    a2 = 2.0 * beta_k ** (2.0 / 3.0) - p - 0.5
    a3 = 0.5 * beta_w ** 2 - a2 - 1.0  # p = 2 branch
    l_irw = e_tilde * gf / ft ** 2
    a1 = (4.0 / np.pi) * l_irw / length_scale

    l_adm = 8.0 * np.min(l_irw) / (3.0 * np.pi)
    if structure_size is not None:
        l_adm = min(l_adm, structure_size / 50.0)
    if length_scale > l_adm:
        warnings.warn(
            f"length scale {length_scale:g} m exceeds the admissible bound "
            f"{l_adm:g} m; strength insensitivity is not guaranteed",
            stacklevel=2)
    return SofteningCalibration(p=p, a1=a1, a2=a2, a3=a3, beta_w=beta_w,
                                beta_k=beta_k, l_irw=l_irw, w_c=w_c, k0=k0,
                                length_scale=length_scale, gf=gf)


def damage_threshold(ft, e_tilde):
    """Driving-force threshold H~ = f_t^2 / (2 E~)."""
    return np.asarray(ft, dtype=float) ** 2 / (2.0 * e_tilde)


def at2_strength_from_length(E, gf, length_scale):
    """Peak homogeneous stress of the quadratic model."""
    return (9.0 / 16.0) * np.sqrt(E * gf / (3.0 * length_scale))


def at2_length_from_strength(ft, E, gf):
    """Inverse of the strength relation: l = (81/256) E G_f / (3 f_t^2)."""
    return (81.0 / 256.0) * E * gf / (3.0 * ft ** 2)


# ---------------------------------------------------------------------------
# nonlinear phi solve (production model)
# ---------------------------------------------------------------------------

def _assemble_residual(geom, sel, phi, H_e, cal, a1_q, gf_e):
    ell = cal.length_scale
    phi_q = geom.at_quadrature(phi, sel)
    _, dg, d2g = _rational_degradation(phi_q, cal.p, a1_q, cal.a2, cal.a3)
    _, dalpha = dissipation(phi_q)
    resist = gf_e[:, None] / (np.pi * ell)
    bulk = dg * H_e[:, None] + resist * dalpha
    res = fem.load_from_qpoints(geom, bulk, sel)
    K = fem.scalar_stiffness(geom, (2.0 * ell / np.pi) * gf_e, sel)
    res += K @ phi
    tangent = K + fem.mass_with_coeff(
        geom, d2g * H_e[:, None] - 2.0 * resist, sel)
    return res, tangent


def projected_residual(res, phi, lower, upper):
    """KKT residual: growth blocked at phi = 1, decrease blocked at the
    irreversibility bound."""
    out = res.copy()
    at_lo = phi <= lower + 1e-14
    out[at_lo & (out > 0)] = 0.0
    at_hi = phi >= upper - 1e-14
    out[at_hi & (out < 0)] = 0.0
    return out


def solve_phase_field(geom, sel, active_nodes, phi_prev, H_e,
                      cal: SofteningCalibration, max_iter: int = 50,
                      rtol: float = 1e-8):
    """Newton solve of the phi equation with iterate clamping.

    Irreversibility is enforced twice: through the history field (in H_e)
    and by clamping each Newton iterate to [phi_prev, 1]. Residuals are
    measured against the nodal resistance scale so the criterion is
    dimensionless.
    """
    a1_arr = np.broadcast_to(np.asarray(cal.a1, dtype=float),
                             H_e.shape).reshape(-1, 1)
    gf_e = np.broadcast_to(np.asarray(cal.gf, dtype=float), H_e.shape)
    scale_nodal = fem.lumped_capacity(
        geom, np.ones(geom.n_nodes), sel) * (2.0 * float(np.mean(gf_e))
                                             / (np.pi * cal.length_scale))
    scale = np.where(scale_nodal > 0, scale_nodal, 1.0)

    phi = phi_prev.copy()
    upper = np.ones_like(phi)
    prev_err = np.inf
    pending = None  # (phi before last step, increment, relaxation)
    err = np.inf
    for it in range(max_iter):
        res, tangent = _assemble_residual(geom, sel, phi, H_e, cal,
                                          a1_arr, gf_e)
        rp = projected_residual(res, phi, phi_prev, upper)
        err = np.max(np.abs(rp[active_nodes] / scale[active_nodes]))
        if err <= rtol:
            return phi, it
        if pending is not None and err > prev_err and pending[2] > 0.125:
            # diverging step: halve the last increment and retry
            base, dphi, relax = pending
            relax *= 0.5
            phi = np.clip(base + relax * dphi, phi_prev, 1.0)
            pending = (base, dphi, relax)
            continue
        prev_err = err
        try:
            factor = fem.Factorized(
                tangent, np.array([], dtype=np.int64), np.array([]),
                active=active_nodes)
            dphi = factor.solve(-res)
        except fem.SolverError:
            # indefinite tangent near a bifurcation: damp with a mass shift
            shift = sparse.diags(scale)
            factor = fem.Factorized(
                tangent + shift, np.array([], dtype=np.int64), np.array([]),
                active=active_nodes)
            dphi = factor.solve(-res)
        pending = (phi.copy(), dphi, 1.0)
        phi = np.clip(phi + dphi, phi_prev, 1.0)
    raise PhaseFieldError(
        f"phase-field Newton did not converge in {max_iter} iterations "
        f"(residual {err:.3e}); reduce the time step")


# ---------------------------------------------------------------------------
# comparison variants (bar benchmark only)
# ---------------------------------------------------------------------------

def stress_driving_state(sigma1, ft, xi):
    """Dimensionless threshold driving state of the principal-stress model.

    Zero below the Rankine strength, quadratic ramp above it; xi controls
    the post-peak slope.
    """
    s = np.maximum(np.asarray(sigma1, dtype=float), 0.0)
    return xi * np.maximum((s / ft) ** 2 - 1.0, 0.0)


def _variant_system(variant, geom, sel, drive_e, gf_e, length_scale):
    drive_q = np.repeat(np.asarray(drive_e, dtype=float)[:, None], 3, axis=1)
    ell = length_scale
    if variant == "at2":
        gf = np.broadcast_to(np.asarray(gf_e, dtype=float), drive_e.shape)
        A = fem.mass_with_coeff(geom, 2.0 * drive_q + (gf / ell)[:, None], sel) \
            + fem.scalar_stiffness(geom, gf * ell, sel)
    elif variant == "stress":
        A = fem.mass_with_coeff(geom, 2.0 * drive_q + 1.0, sel) \
            + fem.scalar_stiffness(geom, np.full(len(drive_e), ell ** 2), sel)
    else:
        raise ValueError(f"unsupported variant {variant!r}")
    b = fem.load_from_qpoints(geom, 2.0 * drive_q, sel)
    return A, b


def variant_residual(variant, geom, sel, phi, drive_e, gf_e, length_scale):
    """Residual vector of the linear comparison models at a given phi."""
    A, b = _variant_system(variant, geom, sel, drive_e, gf_e, length_scale)
    return A @ phi - b


def solve_variant(variant, geom, sel, active_nodes, phi_prev, drive_e,
                  gf_e, length_scale):
    """One implicit update of the AT2 / stress-threshold damage field.

    Both variants are linear in phi for a frozen driving state; the history
    maximum lives in drive_e and the clamp keeps irreversibility exact.
    """
    A, b = _variant_system(variant, geom, sel, drive_e, gf_e, length_scale)
    phi = fem.solve_sparse(
        fem.SparseSystem(A=A, b=b, fixed_dofs=np.array([], dtype=np.int64),
                         fixed_values=np.array([])),
        active=active_nodes)
    return np.clip(phi, phi_prev, 1.0)
