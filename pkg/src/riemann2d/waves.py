"""Planar-wave algebra: jump relations, Riemann data, shock polar, critical angles.

Everything here is closed-form or low-dimensional root finding.  Bracketed
roots are polished with scipy's brentq (bracketing bisection + safeguarded
secant/IQI); tolerances are 1e-12 on residuals and ~1e-10 or better on
parameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .models import (
    GasModel,
    NWSState,
    PG,
    PGState,
    ConstantPotentialState,
    constant_potential_state,
)

__all__ = [
    "RiemannSetup",
    "DetachedError",
    "pg_jump",
    "construct_riemann_I",
    "incident_shock",
    "ShockPolarPoint",
    "ShockPolarResult",
    "steady_shock_polar",
    "polar_max_deflection",
    "state2_reflection",
    "CriticalAngles",
    "critical_angles",
    "normal_reflection",
    "rho_c_threshold",
    "setup_problem_I",
    "setup_problem_II",
    "setup_problem_IV",
]

_ANGLE_TOL = 1e-13


class DetachedError(ValueError):
    """No local wave state exists at this wedge angle (beyond detachment)."""


@dataclass
class RiemannSetup:
    """Far-field data and derived constants for one Riemann problem."""

    problem: str                 # "I" | "II" | "IV"
    model: GasModel
    states: dict
    angles: dict
    derived: dict = field(default_factory=dict)

    def content_hash(self) -> str:
        keys = [self.problem, self.model.kind]
        if self.model.kind != "PG":
            keys.append(repr(self.model.gamma))
        for k in sorted(self.angles):
            keys.append(f"{k}={self.angles[k]!r}")
        for k in sorted(self.states):
            st = self.states[k]
            keys.append(f"{k}:{st!r}")
        blob = "|".join(keys).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Pressure-gradient jump relations
# ---------------------------------------------------------------------------

def pg_jump(upstream: PGState, p_other: float, orientation: str,
            front_angle: float = 0.0, velocity_jump=None):
    """Resolve one planar wave of the pressure gradient system.

    The wave front is the line through direction (cos a, sin a) with
    a = ``front_angle``; n = (-sin a, cos a) is the unit normal on the
    upstream side.  For shocks (orientation "S+"/"S-") the velocity jump is
    normal to the front with

        (up - other) velocity jump = -(p_up - p_other)/sqrt(pbar) * n,

    which satisfies [p]^2 = pbar ([u]^2 + [v]^2) identically; the +/- label
    records the handedness of (Dp, flow) and the admissible line offsets
    x.n = +-sqrt(pbar) are returned as wave data.  For vortex sheets
    ("J+"/"J-") the pressures must match and any tangential velocity jump
    with slope [v]/[u] = tan(a) is accepted (``velocity_jump`` optional).

    Returns (downstream PGState, wave data dict).
    """
    if orientation not in ("S+", "S-", "J+", "J-"):
        raise ValueError(f"unknown wave orientation {orientation!r}")
    if p_other <= 0.0:
        raise ValueError("pressure must be positive")
    a = float(front_angle)
    n = np.array([-np.sin(a), np.cos(a)])
    d = np.array([np.cos(a), np.sin(a)])
    if orientation.startswith("J"):
        if abs(p_other - upstream.p) > 1e-14 * max(upstream.p, p_other):
            raise ValueError("vortex sheet carries no pressure jump")
        if velocity_jump is None:
            dq = np.zeros(2)
        else:
            dq = np.asarray(velocity_jump, dtype=float)
            cross = dq[0] * d[1] - dq[1] * d[0]
            if abs(cross) > 1e-12 * (1.0 + np.hypot(*dq)):
                raise ValueError("vortex-sheet velocity jump must be tangential")
        down = PGState(upstream.p, upstream.u - dq[0], upstream.v - dq[1])
        data = {"type": orientation, "slope": d, "normal": n, "sigma0": np.tan(a) if abs(np.cos(a)) > 0 else np.inf}
        return down, data
    # shock branch
    if abs(p_other - upstream.p) <= 1e-14 * max(upstream.p, p_other):
        raise ValueError("zero-strength shock requested")
    pbar = 0.5 * (upstream.p + p_other)
    dp = upstream.p - p_other
    jump = -(dp / np.sqrt(pbar)) * n          # upstream velocity minus downstream
    down = PGState(p_other, upstream.u - jump[0], upstream.v - jump[1])
    resid = dp**2 - pbar * (jump[0] ** 2 + jump[1] ** 2)
    data = {
        "type": orientation,
        "normal": n,
        "slope": d,
        "pbar": pbar,
        "offsets": (-np.sqrt(pbar), np.sqrt(pbar)),
        "jump": jump,
        "residual": abs(resid),
    }
    return down, data


def construct_riemann_I(p1: float, state1: PGState, p2: float,
                        alpha1: float, alpha2: float,
                        sheet_half_angle: float = np.pi / 4):
    """Build the four-state Riemann data for the two-shock/two-sheet problem.

    State (1) fills the wide upper sector at pressure p1; states (2), (3), (4)
    share the lower pressure p2 < p1 and are joined to (1) by the backward
    shock on the left and the forward shock on the right, and to each other by
    two vortex sheets on rays at 3pi/2 +- sheet_half_angle.

    The symmetric case alpha1 = alpha2 in [0, pi/2) is supported; the shock
    interface rays sit at angles -alpha1 and pi + alpha2, and each planar
    shock lies on the tangent line {x . n = -sqrt(pbar)} of the circle
    r = sqrt(pbar).  Velocity jumps follow the Rankine-Hugoniot relations on
    those lines, which fixes v_234 = v1 + (p1 - p2)/sqrt(pbar) at alpha1 = 0.
    """
    if not (p1 > p2 > 0.0):
        raise ValueError("need p1 > p2 > 0 (entropy)")
    if abs(alpha1 - alpha2) > _ANGLE_TOL:
        raise ValueError("only the symmetric case alpha1 == alpha2 is supported")
    if not (0.0 <= alpha1 < np.pi / 2):
        raise ValueError("alpha1 out of [0, pi/2)")
    a = float(alpha1)
    beta = float(sheet_half_angle)
    if not (0.0 < beta < np.pi / 2):
        raise ValueError("sheet half-angle out of (0, pi/2)")
    pbar = 0.5 * (p1 + p2)
    k = (p1 - p2) / np.sqrt(pbar)
    u1 = np.array([state1.u, state1.v])
    n41 = np.array([np.sin(a), np.cos(a)])     # state-1 side normal, right shock
    n12 = np.array([-np.sin(a), np.cos(a)])    # state-1 side normal, left shock
    u4 = u1 + k * n41
    u2 = u1 + k * n12
    # vortex sheets on the rays 3pi/2 -+ beta; u3 joins u2 and u4 tangentially
    d23 = np.array([np.cos(1.5 * np.pi - beta), np.sin(1.5 * np.pi - beta)])
    d34 = np.array([np.cos(1.5 * np.pi + beta), np.sin(1.5 * np.pi + beta)])
    A = np.column_stack([d23, -d34])
    t, srel = np.linalg.solve(A, u4 - u2)
    u3 = u2 + t * d23
    states = {
        1: PGState(p1, u1[0], u1[1]),
        2: PGState(p2, u2[0], u2[1]),
        3: PGState(p2, u3[0], u3[1]),
        4: PGState(p2, u4[0], u4[1]),
    }
    # shock lines {x.n = -sqrt(pbar)} meet C1 = {|x| = sqrt(p1)} at two
    # points; the free-boundary anchors take the one with smaller xi2
    t_half = np.sqrt(p1 - pbar)
    base41 = -np.sqrt(pbar) * n41
    perp41 = np.array([n41[1], -n41[0]])
    cand = [base41 + t_half * perp41, base41 - t_half * perp41]
    P1 = min(cand, key=lambda x: (x[1], -x[0]))   # smaller xi2; tie -> right shock side
    base12 = -np.sqrt(pbar) * n12
    perp12 = np.array([n12[1], -n12[0]])
    cand = [base12 + t_half * perp12, base12 - t_half * perp12]
    P3 = min(cand, key=lambda x: (x[1], x[0]))    # smaller xi2; tie -> left shock side
    theta1 = float(np.arctan2(P1[1], P1[0]) % (2.0 * np.pi))
    theta3 = float(np.arctan2(P3[1], P3[0]) % (2.0 * np.pi))
    # residuals of the four jump systems
    res = []
    for (sa, sb, n) in ((1, 4, n41), (1, 2, n12)):
        dj = np.array([states[sa].u - states[sb].u, states[sa].v - states[sb].v])
        dp = states[sa].p - states[sb].p
        res.append(abs(dp**2 - pbar * (dj @ dj)))
        res.append(abs(dj @ np.array([n[1], -n[0]])))     # jump is normal to the front
    for (sa, sb, d) in ((2, 3, d23), (3, 4, d34)):
        dj = np.array([states[sa].u - states[sb].u, states[sa].v - states[sb].v])
        res.append(abs(states[sa].p - states[sb].p))
        res.append(abs(dj[0] * d[1] - dj[1] * d[0]))      # sheet jump is tangential
    setup = RiemannSetup(
        problem="I",
        model=PG(),
        states=states,
        angles={"alpha1": a, "alpha2": a, "sheet_half_angle": beta},
        derived={
            "pbar": pbar,
            "sonic_radius_1": float(np.sqrt(p1)),
            "sonic_radius_2": float(np.sqrt(p2)),
            "P1": tuple(P1),
            "P3": tuple(P3),
            "theta1": theta1,
            "theta3": theta3,
            "shock_lines": {
                "S41": {"normal": tuple(n41), "offset": -float(np.sqrt(pbar))},
                "S12": {"normal": tuple(n12), "offset": -float(np.sqrt(pbar))},
            },
            "sheet_rays": (1.5 * np.pi - beta, 1.5 * np.pi + beta),
            "jump_residual": float(max(res)),
        },
    )
    if setup.derived["jump_residual"] > 1e-12 * max(p1, 1.0) ** 2:
        raise AssertionError("Riemann data residual exceeds tolerance")
    return setup


# ---------------------------------------------------------------------------
# Incident shocks (NWS and potential flow)
# ---------------------------------------------------------------------------

def _u1_potential(rho0, rho1, gamma):
    # behind-state speed consistent with the Bernoulli closure:
    # u1 = (rho1-rho0) sqrt(2 (h(rho1)-h(rho0)) / (rho1^2-rho0^2))
    dh = (rho1 ** (gamma - 1.0) - rho0 ** (gamma - 1.0)) / (gamma - 1.0)
    return (rho1 - rho0) * np.sqrt(2.0 * dh / (rho1**2 - rho0**2))


def incident_shock(model: GasModel, rho0: float, rho1: float):
    """Vertical incident shock between states (0) ahead and (1) behind.

    NWS: m1 = sqrt((p(rho1)-p(rho0))(rho1-rho0)) and the self-similar
    location xi1^0 = sqrt((p(rho1)-p(rho0))/(rho1-rho0)).
    POT: u1 = (rho1-rho0) sqrt(2 (h(rho1)-h(rho0))/(rho1^2-rho0^2)) with
    h(rho) = (rho^(g-1)-1)/(g-1), and xi1^0 = rho1 u1 / (rho1 - rho0)
    (equivalently rho1 sqrt(2 (c1^2-c0^2)/((g-1)(rho1^2-rho0^2)))).

    Returns (wave data dict, xi1_0).
    """
    if not (rho1 > rho0 > 0.0):
        raise ValueError("need rho1 > rho0 > 0 (entropy); zero-strength shock has no location")
    g = model.gamma
    if model.kind == "NWS":
        dp = (rho1**g - rho0**g) / g
        drho = rho1 - rho0
        m1 = float(np.sqrt(dp * drho))
        xi10 = float(np.sqrt(dp / drho))
        return {"m1": m1, "state1": NWSState(rho1, m1, 0.0)}, xi10
    if model.kind == "POT":
        u1 = float(_u1_potential(rho0, rho1, g))
        xi10 = float(rho1 * u1 / (rho1 - rho0))
        return {"u1": u1}, xi10
    raise ValueError("incident shock is defined for NWS and POT")


# ---------------------------------------------------------------------------
# Steady shock polar (potential flow)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShockPolarPoint:
    vel: tuple[float, float]
    rho: float
    wave_angle: float
    strength: float          # density ratio rho/rho0

    def deflection(self):
        return float(np.arctan2(self.vel[1], self.vel[0]))


@dataclass(frozen=True)
class ShockPolarResult:
    weak: ShockPolarPoint | None
    strong: ShockPolarPoint | None
    detached: bool
    max_deflection: float


def _enthalpy(rho, gamma):
    return (rho ** (gamma - 1.0) - 1.0) / (gamma - 1.0)


def _q0n(rho0, gamma, rho):
    """Upstream normal speed that connects rho0 to rho across a steady shock."""
    return rho * np.sqrt(2.0 * (_enthalpy(rho, gamma) - _enthalpy(rho0, gamma)) / (rho**2 - rho0**2))


def _polar_point(u0, rho0, gamma, rho):
    q0n = _q0n(rho0, gamma, rho)
    sin_s = min(q0n / u0, 1.0)
    cos_s = np.sqrt(max(1.0 - sin_s**2, 0.0))
    q1n = rho0 * q0n / rho
    dq = q0n - q1n
    u = u0 - dq * sin_s
    v = dq * cos_s
    return u, v, float(np.arcsin(sin_s))


def polar_max_deflection(u0, rho0, gamma):
    """Largest flow deflection on the polar (its own detachment angle)."""
    c0 = rho0 ** ((gamma - 1.0) / 2.0)
    if not u0 > c0:
        raise ValueError("upstream must be supersonic")
    hi = 2.0 * rho0
    while _q0n(rho0, gamma, hi) < u0:
        hi *= 2.0
        if hi > 1e12 * rho0:
            raise RuntimeError("bracketing failure for the normal-shock density")
    rho_nmax = brentq(lambda r: _q0n(rho0, gamma, r) - u0,
                      rho0 * (1.0 + 1e-12), hi, xtol=1e-14)

    def neg_defl(r):
        u, v, _ = _polar_point(u0, rho0, gamma, r)
        return -np.arctan2(v, u)

    res = minimize_scalar(neg_defl, bounds=(rho0 * (1 + 1e-10), rho_nmax), method="bounded",
                          options={"xatol": 1e-13})
    return float(-res.fun), float(res.x), float(rho_nmax)


def steady_shock_polar(u0: float, rho0: float, gamma: float, theta_w: float) -> ShockPolarResult:
    """Intersect the steady shock polar with the ray v = u tan(theta_w).

    Returns both intersection points (weak: smaller density, u1 < u0) or a
    detached result when theta_w exceeds the polar's maximum deflection.
    """
    c0 = rho0 ** ((gamma - 1.0) / 2.0)
    if not u0 > c0:
        raise ValueError("upstream must be supersonic")
    if theta_w < 0.0:
        raise ValueError("wedge angle must be non-negative")
    th_max, rho_peak, rho_nmax = polar_max_deflection(u0, rho0, gamma)

    def point(rho):
        u, v, sig = _polar_point(u0, rho0, gamma, rho)
        return ShockPolarPoint((float(u), float(v)), float(rho), sig, float(rho / rho0))

    if theta_w > th_max + 1e-14:
        return ShockPolarResult(None, None, True, th_max)
    if theta_w == 0.0:
        weak = ShockPolarPoint((float(u0), 0.0), float(rho0), float(np.arcsin(c0 / u0)), 1.0)
        strong = point(rho_nmax)
        return ShockPolarResult(weak, strong, False, th_max)

    def defl(rho):
        u, v, _ = _polar_point(u0, rho0, gamma, rho)
        return np.arctan2(v, u) - theta_w

    if abs(theta_w - th_max) <= 1e-14:
        pt = point(rho_peak)
        return ShockPolarResult(pt, pt, False, th_max)
    rho_w = brentq(defl, rho0 * (1.0 + 1e-12), rho_peak, xtol=1e-14)
    rho_s = brentq(defl, rho_peak, rho_nmax, xtol=1e-14)
    return ShockPolarResult(point(rho_w), point(rho_s), False, th_max)


# ---------------------------------------------------------------------------
# Local regular-reflection state (2) and its critical angles
# ---------------------------------------------------------------------------

def _state2_eq(q, rho0, rho1, gamma, u1, L0, theta_w):
    """Mass-flux mismatch across S1 at the reflection point; zero at state (2).

    q parameterizes the state-2 velocity q*(cos tw, sin tw).  Built with the
    unnormalized shock normal D(phi1 - phi2); q = 0 is always a trivial root
    (it reproduces state (0) across the incident shock).
    """
    b0 = rho0 ** (gamma - 1.0)
    arg = b0 + (gamma - 1.0) * (q * L0 - 0.5 * q * q)
    rho2 = np.where(arg > 0.0, np.abs(arg) ** (1.0 / (gamma - 1.0)), np.nan)
    cw, sw = np.cos(theta_w), np.sin(theta_w)
    nu_x = u1 - q * cw
    nu_y = -q * sw
    # D phi2(P0) . nu with D phi2(P0) = (q - L0) e_w
    lhs = rho2 * (q - L0) * (cw * nu_x + sw * nu_y)
    # D phi1(P0) . nu with D phi1(P0) = (u1, 0) - P0
    rhs = rho1 * ((u1 - L0 * cw) * nu_x + (-L0 * sw) * nu_y)
    return lhs - rhs, rho2


def _shock_admissible(q, rho0, rho1, gamma, u1, L0, theta_w):
    """Compressive-shock admissibility of a candidate state (2).

    The pseudo-flow normal speed must be supersonic on the state-1 side and
    subsonic on the state-2 side; the algebraic system has extra branches
    below detachment that violate this and do not describe a reflected shock.
    """
    cw, sw = np.cos(theta_w), np.sin(theta_w)
    nu = np.stack([u1 - q * cw, -q * sw])
    nn = np.sqrt(nu[0] ** 2 + nu[1] ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        up_n = np.abs((u1 - L0 * cw) * nu[0] + (-L0 * sw) * nu[1]) / nn
        dn_n = np.abs((q - L0) * (cw * nu[0] + sw * nu[1])) / nn
    b0 = rho0 ** (gamma - 1.0)
    arg = b0 + (gamma - 1.0) * (q * L0 - 0.5 * q * q)
    c2sq = np.where(arg > 0.0, arg, np.nan)
    c1 = rho1 ** ((gamma - 1.0) / 2.0)
    return (up_n > c1) & (dn_n**2 < c2sq)


def _state2_scan(rho0, rho1, gamma, theta_w, nscan=3000):
    u1 = _u1_potential(rho0, rho1, gamma)
    xi10 = rho1 * u1 / (rho1 - rho0)
    L0 = xi10 / np.cos(theta_w)
    b0 = rho0 ** (gamma - 1.0)
    q_cav = L0 + np.sqrt(L0**2 + 2.0 * b0 / (gamma - 1.0))
    q_hi = min(L0, q_cav) * (1.0 - 1e-12)
    qs = np.concatenate([
        np.geomspace(q_hi * 1e-20, q_hi * 1e-2, nscan),
        np.linspace(q_hi * 1e-2, q_hi, 2 * nscan)[1:],
    ])
    F, _ = _state2_eq(qs, rho0, rho1, gamma, u1, L0, theta_w)
    adm = _shock_admissible(qs, rho0, rho1, gamma, u1, L0, theta_w)
    return qs, F, adm, (u1, xi10, L0)


def _state2_roots(rho0, rho1, gamma, theta_w):
    qs, F, adm, (u1, xi10, L0) = _state2_scan(rho0, rho1, gamma, theta_w)
    roots = []
    sign = np.sign(F)
    flips = np.nonzero((sign[:-1] * sign[1:] < 0) & adm[:-1] & adm[1:])[0]
    for i in flips:
        r = brentq(lambda q: _state2_eq(q, rho0, rho1, gamma, u1, L0, theta_w)[0],
                   qs[i], qs[i + 1], xtol=1e-15, rtol=8.9e-16)
        if _shock_admissible(np.array([r]), rho0, rho1, gamma, u1, L0, theta_w)[0]:
            roots.append(r)
    return roots, (u1, xi10, L0, qs, F, adm)


def state2_reflection(rho0: float, rho1: float, gamma: float, theta_w: float):
    """Both roots (weak, strong) of the three-condition system at P0.

    Each root is a ConstantPotentialState whose velocity lies along the wedge
    (slip built in), whose pseudo-potential matches phi1 at P0, and whose
    mass flux balances state (1) across the flat reflected shock.  Raises
    DetachedError below the detachment angle.  A double root is returned as
    two coincident states.
    """
    if not (rho1 > rho0 > 0.0):
        raise ValueError("need rho1 > rho0 > 0")
    if not (0.0 < theta_w < np.pi / 2):
        raise ValueError("theta_w out of (0, pi/2)")
    roots, (u1, xi10, L0, qs, F, adm) = _state2_roots(rho0, rho1, gamma, theta_w)
    b0 = rho0 ** (gamma - 1.0)
    coincident = False
    if len(roots) == 0:
        # possible tangency: refine the bump maximum over the admissible range
        bump = _bump_maximum(rho0, rho1, gamma, theta_w, qs, F, adm, u1, L0)
        scale = rho1 * (u1 + L0) ** 2
        if bump is not None and abs(bump[1]) <= 1e-9 * scale:
            roots = [bump[0]] * 2
            coincident = True
        else:
            raise DetachedError(f"no state (2) at theta_w={theta_w!r} (detached)")
    if len(roots) == 1:
        roots = roots * 2
        coincident = True
    if len(roots) > 2:
        raise RuntimeError(f"unexpected root structure for state (2): {roots}")

    def make(q):
        vel = (q * np.cos(theta_w), q * np.sin(theta_w))
        offset = -q * L0
        return constant_potential_state(vel, offset, b0, gamma)

    pair = sorted((make(q) for q in roots), key=lambda st: st.rho)
    weak, strong = pair[0], pair[1]
    if not coincident and not (weak.rho > rho1):
        raise RuntimeError("weak state (2) violates the entropy ordering rho2 > rho1")
    return {"weak": weak, "strong": strong, "coincident": coincident,
            "P0": (xi10, xi10 * np.tan(theta_w)), "u1": u1, "xi1_0": xi10}


@dataclass(frozen=True)
class CriticalAngles:
    theta_d: float
    theta_s: float


def _bump_maximum(rho0, rho1, gamma, theta_w, qs, F, adm, u1, L0):
    """Interior local maximum of the mass-flux mismatch over admissible q.

    F is negative at both ends of the admissible reflection branch and rises
    through zero between the weak and strong roots; the fold (detachment) is
    where this maximum touches zero.  Returns (q_max, F_max) or None.
    """
    Fm = np.where(adm & np.isfinite(F), F, -np.inf)
    interior = np.nonzero(
        (Fm[1:-1] >= Fm[:-2]) & (Fm[1:-1] >= Fm[2:]) & np.isfinite(Fm[1:-1])
    )[0] + 1
    if interior.size == 0:
        return None
    i = interior[np.argmax(Fm[interior])]
    res = minimize_scalar(
        lambda q: -_state2_eq(q, rho0, rho1, gamma, u1, L0, theta_w)[0],
        bounds=(qs[max(i - 2, 0)], qs[min(i + 2, qs.size - 1)]),
        method="bounded", options={"xatol": 1e-15})
    return float(res.x), float(-res.fun)


def _bump_value(rho0, rho1, gamma, theta_w):
    qs, F, adm, (u1, xi10, L0) = _state2_scan(rho0, rho1, gamma, theta_w)
    m = _bump_maximum(rho0, rho1, gamma, theta_w, qs, F, adm, u1, L0)
    return -np.inf if m is None else m[1]


def _weak_sonic_gap(rho0, rho1, gamma, theta_w):
    sol = state2_reflection(rho0, rho1, gamma, theta_w)
    st = sol["weak"]
    P0 = sol["P0"]
    gx, gy = st.dphi(*P0)
    return np.hypot(gx, gy) - st.sonic_speed


def critical_angles(rho0: float, rho1: float, gamma: float) -> CriticalAngles:
    """Detachment and sonic wedge angles, 0 < theta_d < theta_s < pi/2.

    theta_d is the fold of the state-(2) system: the sign change of the bump
    maximum of the mass-flux mismatch, bisected essentially to machine
    precision so the two roots coincide there.  theta_s is the angle at which
    the weak state turns sonic at the reflection point.
    """
    lo, hi = 0.02, np.pi / 2 - 1e-6
    if not _bump_value(rho0, rho1, gamma, hi) > 0.0:
        raise RuntimeError("bracketing failure: no state (2) near pi/2")
    while _bump_value(rho0, rho1, gamma, lo) > 0.0:
        lo *= 0.5
        if lo < 1e-10:
            raise RuntimeError("bracketing failure: state (2) exists at arbitrarily small angles")
    a, b = lo, hi
    for _ in range(120):
        m = 0.5 * (a + b)
        if _bump_value(rho0, rho1, gamma, m) > 0.0:
            b = m
        else:
            a = m
        if b - a < 1e-16:
            break
    theta_d = b

    a = theta_d + max(1e-12, 4.0 * (b - a))
    b = np.pi / 2 - 1e-6
    ga = _weak_sonic_gap(rho0, rho1, gamma, a)
    gb = _weak_sonic_gap(rho0, rho1, gamma, b)
    if not (ga < 0.0 < gb):
        raise RuntimeError("bracketing failure for the sonic angle")
    for _ in range(120):
        m = 0.5 * (a + b)
        if _weak_sonic_gap(rho0, rho1, gamma, m) > 0.0:
            b = m
        else:
            a = m
        if b - a < 1e-16:
            break
    theta_s = 0.5 * (a + b)
    if not (0.0 < theta_d < theta_s < np.pi / 2):
        raise RuntimeError("critical angles out of order")
    return CriticalAngles(float(theta_d), float(theta_s))


def normal_reflection(rho0: float, rho1: float, gamma: float):
    """State (2) and reflected-shock abscissa for head-on reflection.

    Solves the two Rankine-Hugoniot conditions across the vertical reflected
    shock {xi1 = xb < 0} for a state at rest: continuity of the
    pseudo-potential fixes rho2 through the Bernoulli closure, and the mass
    flux balances state (1).  Returns (rho2, xb, k2) with k2 the additive
    constant of phi2 = -|xi|^2/2 + k2.
    """
    if not (rho1 > rho0 > 0.0):
        raise ValueError("need rho1 > rho0 > 0")
    u1 = _u1_potential(rho0, rho1, gamma)
    xi10 = rho1 * u1 / (rho1 - rho0)
    b0 = rho0 ** (gamma - 1.0)

    def rho2_of(x):
        return (b0 + (gamma - 1.0) * u1 * (xi10 + x)) ** (1.0 / (gamma - 1.0))

    def f(x):
        return rho2_of(x) * x - rho1 * (u1 + x)

    hi = 1.0
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("root-find failure in normal reflection")
    x = brentq(f, 1e-14, hi, xtol=1e-15, rtol=8.9e-16)
    rho2 = float(rho2_of(x))
    xb = -float(x)
    if not rho2 > rho1:
        raise RuntimeError("normal reflection violates entropy (rho2 <= rho1)")
    k2 = float(u1 * (xb - xi10))
    return rho2, xb, k2


def rho_c_threshold(rho0: float, gamma: float) -> float:
    """Density threshold at which the behind-state speed u1 turns sonic.

    For gamma < 3 there is a unique rho_c > rho0 with u1(rho_c) = c1(rho_c);
    u1 < c1 below it (the reflected shock cannot attach to the wedge vertex)
    and u1 > c1 above.  For gamma >= 3 the ratio u1/c1 stays below 1 for all
    rho1 (it tends to sqrt(2/(gamma-1)) <= 1), so no finite threshold exists
    and +inf is returned.
    """
    if not rho0 > 0.0:
        raise ValueError("rho0 must be positive")
    if gamma >= 3.0:
        return float("inf")

    def gap(rho1):
        return _u1_potential(rho0, rho1, gamma) - rho1 ** ((gamma - 1.0) / 2.0)

    hi = 2.0 * rho0
    while gap(hi) < 0.0:
        hi *= 2.0
        if hi > 1e12 * rho0:
            raise RuntimeError("bracketing failure for rho_c")
    return float(brentq(gap, rho0 * (1.0 + 1e-13), hi, xtol=1e-15, rtol=8.9e-16))


# ---------------------------------------------------------------------------
# Problem setups
# ---------------------------------------------------------------------------

def setup_problem_I(p1, p2, alpha1, alpha2=None, u1=0.0, v1=0.0,
                    sheet_half_angle=np.pi / 4) -> RiemannSetup:
    if alpha2 is None:
        alpha2 = alpha1
    return construct_riemann_I(p1, PGState(p1, u1, v1), p2, alpha1, alpha2,
                               sheet_half_angle=sheet_half_angle)


def setup_problem_II(gamma, rho0, rho1, theta_w) -> RiemannSetup:
    """Shock diffraction by a convex cornered wedge (nonlinear wave system)."""
    if not (-np.pi < theta_w < 0.0):
        raise ValueError("theta_w out of (-pi, 0)")
    from .models import NWS
    model = NWS(gamma)
    wave, xi10 = incident_shock(model, rho0, rho1)
    c1 = rho1 ** ((gamma - 1.0) / 2.0)
    c0 = rho0 ** ((gamma - 1.0) / 2.0)
    xi20 = float(np.sqrt(c1**2 - xi10**2))
    theta1 = float(np.arctan2(xi20, xi10))
    return RiemannSetup(
        problem="II",
        model=model,
        states={0: NWSState(rho0, 0.0, 0.0), 1: wave["state1"]},
        angles={"theta_w": float(theta_w)},
        derived={
            "xi1_0": xi10,
            "m1": wave["m1"],
            "rho0": float(rho0),
            "rho1": float(rho1),
            "c0": c0,
            "c1": c1,
            "P1": (xi10, xi20),
            "theta1": theta1,
        },
    )


def setup_problem_IV(gamma, rho0, rho1, theta_w) -> RiemannSetup:
    """Regular shock reflection-diffraction by a wedge (potential flow).

    theta_w in (theta_d, pi/2]; pi/2 is the normal-reflection configuration.
    The derived block carries the weak state (2), the flat-shock geometry
    (P0, P1, P4, e_S1) and the Bernoulli constant b0 = rho0^(gamma-1).
    """
    from .models import POT
    model = POT(gamma)
    wave, xi10 = incident_shock(model, rho0, rho1)
    u1 = wave["u1"]
    c1 = rho1 ** ((gamma - 1.0) / 2.0)
    b0 = rho0 ** (gamma - 1.0)
    derived = {
        "xi1_0": xi10,
        "u1": u1,
        "rho0": float(rho0),
        "rho1": float(rho1),
        "c0": rho0 ** ((gamma - 1.0) / 2.0),
        "c1": c1,
        "b0": b0,
        "attached_regime": bool(u1 > c1),
    }
    if abs(theta_w - np.pi / 2) <= 1e-14:
        rho2, xb, k2 = normal_reflection(rho0, rho1, gamma)
        st2 = constant_potential_state((0.0, 0.0), k2, b0, gamma)
        c2 = st2.sonic_speed
        P1 = (xb, float(np.sqrt(c2**2 - xb**2)))
        derived.update({
            "state2": st2,
            "c2": c2,
            "xi_bar": xb,
            "P0": None,
            "P1": P1,
            "P4": (0.0, c2),
            "e_S1": (0.0, -1.0),
            "theta_P1": float(np.arctan2(P1[1], P1[0])),
            "normal_reflection": True,
        })
    else:
        if not (0.0 < theta_w < np.pi / 2):
            raise ValueError("theta_w out of (0, pi/2]")
        sol = state2_reflection(rho0, rho1, gamma, theta_w)
        st2 = sol["weak"]
        c2 = st2.sonic_speed
        P0 = np.array(sol["P0"])
        u2 = np.array(st2.vel)
        # P1: nearer intersection of S1 = {phi1 = phi2} with the state-2 sonic circle
        dvec = np.array([u1, 0.0]) - u2
        ndir = dvec / np.linalg.norm(dvec)
        tdir = np.array([-ndir[1], ndir[0]])
        w = P0 - u2
        b = w @ tdir
        disc = c2**2 - (w @ ndir) ** 2
        if disc <= 0.0:
            raise ValueError("flat shock does not meet the state-2 sonic circle "
                             "(subsonic reflection configuration)")
        # points u2 + (w.n) n + t tdir with t = -b +- sqrt(disc); pick nearer to P0
        roots = [-b + np.sqrt(disc), -b - np.sqrt(disc)]
        cands = [P0 + r * tdir for r in roots]
        P1 = min(cands, key=lambda x: np.hypot(*(x - P0)))
        e_s1 = (P1 - P0) / np.linalg.norm(P1 - P0)
        q = float(np.hypot(*st2.vel))
        P4 = (q + c2) * np.array([np.cos(theta_w), np.sin(theta_w)])
        derived.update({
            "state2": st2,
            "strong2": sol["strong"],
            "c2": c2,
            "P0": tuple(P0),
            "P1": tuple(P1),
            "P4": tuple(P4),
            "e_S1": tuple(e_s1),
            "theta_P1": float(np.arctan2(P1[1], P1[0]) % (2 * np.pi)),
            "normal_reflection": False,
        })
    return RiemannSetup(
        problem="IV",
        model=model,
        states={0: ("rho", rho0), 1: ("rho", rho1), 2: derived["state2"]},
        angles={"theta_w": float(theta_w)},
        derived=derived,
    )
