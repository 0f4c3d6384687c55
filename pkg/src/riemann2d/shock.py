"""Free-boundary shock curve r(theta): ODE right-hand sides, oblique
boundary-condition coefficients, corner closures, and geometric diagnostics.

The transonic shock is a polar graph anchored on the sonic circle.  Its
slope follows from the Rankine-Hugoniot system:

    PG :  dr/dt = +- r sqrt((r^2 - pbar)/pbar),        pbar = (p + p2)/2
    NWS:  dr/dt =    r sqrt(r^2 - cbar^2)/cbar,        cbar^2 = [p]/[rho]

with the trace value taken on the subsonic side.  Differentiating the jump
system along the curve yields the homogeneous oblique condition
beta1 u_r + beta2 u_t = 0 whose transversality mu = (beta1, beta2).(1, -r')
vanishes exactly where r' = 0 (the corner), where the one-point Dirichlet
closure applies instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .models import GasModel

__all__ = [
    "ShockCurve",
    "ObliqueCoeffs",
    "SubsonicShockError",
    "shock_rhs",
    "integrate_shock",
    "oblique_coeffs",
    "corner_closure",
    "convexity_report",
]


class SubsonicShockError(ValueError):
    """Shock radius fell below the local sonic-mean radius; the curve cannot continue."""


@dataclass
class ShockCurve:
    """Monotone polar graph of the free boundary with endpoint metadata.

    ``endpoints`` maps labels (e.g. "P1", "P2", "P3") to dicts with keys
    theta, r, fixed.  ``rp``/``rpp`` optionally carry analytic nodal
    derivatives when the curve geometry is known in closed form; grid
    builders fall back to finite differences otherwise.
    """

    theta: np.ndarray
    r: np.ndarray
    endpoints: dict = field(default_factory=dict)
    rp: np.ndarray | None = None
    rpp: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.theta.ndim != 1 or self.theta.size < 2:
            raise ValueError("need at least two nodes")
        if np.any(np.diff(self.theta) <= 0):
            raise ValueError("theta nodes must be strictly increasing")
        if np.any(self.r <= 0):
            raise ValueError("shock radius must be positive")

    def xy(self):
        return self.r * np.cos(self.theta), self.r * np.sin(self.theta)

    def rprime(self):
        """Second-order derivative dr/dtheta on the (possibly non-uniform) nodes."""
        t, r = self.theta, self.r
        out = np.empty_like(r)
        hl = t[1:-1] - t[:-2]
        hr = t[2:] - t[1:-1]
        out[1:-1] = (-hr / (hl * (hl + hr)) * r[:-2]
                     + (hr - hl) / (hl * hr) * r[1:-1]
                     + hl / (hr * (hl + hr)) * r[2:])
        h0, h1 = t[1] - t[0], t[2] - t[1]
        out[0] = (-(2 * h0 + h1) / (h0 * (h0 + h1)) * r[0]
                  + (h0 + h1) / (h0 * h1) * r[1]
                  - h0 / (h1 * (h0 + h1)) * r[2])
        hN, hM = t[-1] - t[-2], t[-2] - t[-3]
        out[-1] = ((2 * hN + hM) / (hN * (hN + hM)) * r[-1]
                   - (hN + hM) / (hN * hM) * r[-2]
                   + hN / (hM * (hN + hM)) * r[-3])
        return out

    def interp(self, theta):
        return CubicSpline(self.theta, self.r)(theta)


def _mean_sound_sq(model: GasModel, trace, upstream):
    """PG: pbar = (p+p2)/2.  NWS: cbar^2 = (p(rho)-p(rho0))/(rho-rho0)."""
    if model.kind == "PG":
        return 0.5 * (np.asarray(trace) + upstream)
    if model.kind == "NWS":
        g = model.gamma
        tr = np.asarray(trace)
        return (tr**g - upstream**g) / (g * (tr - upstream))
    raise ValueError("shock ODE applies to the first-order systems")


def shock_rhs(model: GasModel, r, trace, upstream, branch: int = +1):
    """Right-hand side dr/dtheta of the shock equation.

    ``branch`` +1/-1 selects the sign for PG (the curve opens upward on the
    two sides of the corner); NWS uses the plus branch.  Raises
    SubsonicShockError when r^2 < pbar (or cbar^2).
    """
    msq = _mean_sound_sq(model, trace, upstream)
    rad = r * r - msq
    if rad < 0.0:
        if rad > -1e-12 * msq:
            rad = 0.0
        else:
            raise SubsonicShockError(
                f"radicand negative: r^2={r*r:.6g} < {msq:.6g}")
    if model.kind == "PG":
        return branch * r * np.sqrt(rad / msq)
    return r * np.sqrt(rad) / np.sqrt(msq)


def integrate_shock(model: GasModel, trace_of_theta, anchor, theta_nodes,
                    upstream, branch=+1, direction=-1, floor_radicand=False,
                    return_info=False):
    """March the shock ODE across ``theta_nodes`` with classic RK4.

    anchor       (theta_a, r_a); theta_a must be the first or last node.
    direction    -1 integrates from the last node downward, +1 upward.
    trace_of_theta  callable giving the subsonic-side trace at any theta.
    floor_radicand  ride the sonic-mean radius instead of raising when the
                 radius is pushed onto it away from the corner (used by the
                 outer fixed point while the trace is still wrong).

    The equation dr/dt = +- r sqrt((r^2 - m)/m) is integrated in the
    substituted variable w = arccosh(r / sqrt(m(t))), which removes the
    square-root degeneracy at the corner:

        w' = +-cosh(w) - (m'/2m) cosh(w)/tanh(w).

    The second term is regular at a converged corner (the trace satisfies
    the wall condition, so m' vanishes there too) and is safely clipped
    while the outer iteration is still far from the fixed point.  Returns
    the radii on theta_nodes; fourth-order in the step.
    """
    th = np.asarray(theta_nodes, dtype=float)
    ta, ra = anchor
    if direction == -1:
        order = np.arange(th.size - 1, -1, -1)
        if abs(th[-1] - ta) > 1e-12:
            raise ValueError("anchor must sit on the last node for downward integration")
    else:
        order = np.arange(th.size)
        if abs(th[0] - ta) > 1e-12:
            raise ValueError("anchor must sit on the first node for upward integration")

    def msq_of(theta):
        return float(_mean_sound_sq(model, float(trace_of_theta(theta)), upstream))

    def msq_prime(theta, h):
        return (msq_of(theta + 0.5 * h) - msq_of(theta - 0.5 * h)) / h

    sgn = float(branch) if model.kind == "PG" else 1.0
    hloc = float(np.min(np.abs(np.diff(th)))) * 0.25

    def wprime(theta, w):
        m = msq_of(theta)
        qm = msq_prime(theta, hloc) / (2.0 * m)
        cw = np.cosh(w)
        # at a converged corner the trace slope (hence qm) vanishes with w, so
        # tanh(w) dominates the floor and the ratio is the exact regular one;
        # off equilibrium the floor keeps |ratio| <= 1/2 and the march stable
        denom = max(np.tanh(w), 2.0 * abs(qm), 1e-300)
        return cw * (sgn - qm / denom)

    m_a = msq_of(ta)
    x = ra / np.sqrt(m_a)
    if x < 1.0 - 1e-12:
        raise SubsonicShockError(
            f"anchor radius below the sonic-mean radius at theta={ta:.6f}")
    w = float(np.arccosh(max(x, 1.0)))
    r = np.empty_like(th)
    r[order[0]] = ra
    theta_ride = None

    def rk4_step(t0, h, w):
        k1 = wprime(t0, w)
        k2 = wprime(t0 + 0.5 * h, max(w + 0.5 * h * k1, 0.0))
        k3 = wprime(t0 + 0.5 * h, max(w + 0.5 * h * k2, 0.0))
        k4 = wprime(t0 + h, max(w + h * k3, 0.0))
        return w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    for k in range(order.size - 1):
        i0, i1 = order[k], order[k + 1]
        t0, t1 = th[i0], th[i1]
        h = t1 - t0
        # the relaxation onto the slaved manifold w ~ atanh(m'/2m) is stiff
        # (rate ~ 1/w); substep so the explicit march stays inside the
        # stability region instead of oscillating onto the floor
        dw = 1e-7 + 1e-3 * abs(w)
        jac = abs(wprime(t0, w + dw) - wprime(t0, max(w - dw, 0.0))) / (2.0 * dw)
        nsub = int(np.clip(np.ceil(abs(h) * jac / 0.4), 1, 4000))
        w1 = w
        for m_sub in range(nsub):
            w1 = rk4_step(t0 + h * m_sub / nsub, h / nsub, w1)
            if not np.isfinite(w1):
                raise SubsonicShockError(f"step rejection at theta={t1:.6f}")
            if w1 < 0.0:
                if not floor_radicand and k < order.size - 2:
                    raise SubsonicShockError(
                        f"radicand negative at theta={t1:.6f} "
                        "(radius hit the sonic-mean circle)")
                if theta_ride is None:
                    theta_ride = t0 + h * (m_sub + 1) / nsub
                w1 = 0.0
        w = w1
        r[i1] = np.sqrt(msq_of(t1)) * np.cosh(w)
    if return_info:
        return r, {"w_end": w, "theta_ride": theta_ride}
    return r


@dataclass(frozen=True)
class ObliqueCoeffs:
    beta1: float
    beta2: float
    mu: float


def oblique_coeffs(model: GasModel, trace, upstream, r, rprime):
    """Directional-derivative coefficients of the shock boundary condition.

    PG (beta multiplies (p_r, p_t)):
        beta1 = 2 r' ((r^2-pbar)/r^2 - [p]/(4 pbar) + pbar (r^2-p)/(r^2 p))
        beta2 = 4 (r^2-pbar)/r^2 - [p]/(2 pbar)
        mu    = -2 r' (1 - pbar/p)
    NWS (beta multiplies (rho_r, rho_t)):
        beta1 = r' (c^2 (r^2-cbar^2) - 3 cbar^2 (c^2-r^2))
        beta2 = 3 c^2 (r^2-cbar^2) - cbar^2 (c^2-r^2)
        mu    = -2 r^2 (c^2-cbar^2) r'
    """
    if model.kind == "PG":
        p = float(trace)
        p2 = upstream
        if p <= p2:
            raise ValueError("entropy violation: trace must exceed the upstream pressure")
        pbar = 0.5 * (p + p2)
        jp = p - p2
        b1 = 2.0 * rprime * ((r**2 - pbar) / r**2 - jp / (4.0 * pbar)
                             + pbar * (r**2 - p) / (r**2 * p))
        b2 = 4.0 * (r**2 - pbar) / r**2 - jp / (2.0 * pbar)
        mu = -2.0 * rprime * (1.0 - pbar / p)
        return ObliqueCoeffs(float(b1), float(b2), float(mu))
    if model.kind == "NWS":
        rho = float(trace)
        if rho <= upstream:
            raise ValueError("entropy violation: trace must exceed the upstream density")
        g = model.gamma
        c2 = rho ** (g - 1.0)
        cb2 = float(_mean_sound_sq(model, rho, upstream))
        b1 = rprime * (c2 * (r**2 - cb2) - 3.0 * cb2 * (c2 - r**2))
        b2 = 3.0 * c2 * (r**2 - cb2) - cb2 * (c2 - r**2)
        mu = -2.0 * r**2 * (c2 - cb2) * rprime
        return ObliqueCoeffs(float(b1), float(b2), float(mu))
    raise ValueError("oblique coefficients apply to the first-order systems")


def corner_closure(model: GasModel, r, upstream):
    """Trace value at the corner point where r' = 0 (r^2 = pbar or cbar^2).

    PG: p = 2 r^2 - p2.  NWS: rho solves cbar^2(rho, rho0) = r^2 (closed form
    rho = 2 r^2 - rho0 at gamma = 2).  Raises when the value would not exceed
    the upstream constant.
    """
    if model.kind == "PG":
        p = 2.0 * r**2 - upstream
        if p <= upstream:
            raise ValueError("corner geometry infeasible: closure pressure <= p2")
        return float(p)
    if model.kind == "NWS":
        g = model.gamma
        if abs(g - 2.0) < 1e-14:
            rho = 2.0 * r**2 - upstream
        else:
            def gap(rho):
                return (rho**g - upstream**g) / (g * (rho - upstream)) - r**2
            lo = upstream * (1.0 + 1e-12)
            if gap(lo) >= 0.0:
                raise ValueError("corner geometry infeasible: radius below the sonic mean")
            hi = 2.0 * upstream
            while gap(hi) < 0.0:
                hi *= 2.0
                if hi > 1e12 * upstream:
                    raise ValueError("corner closure bracketing failure")
            rho = brentq(gap, lo, hi, xtol=1e-15, rtol=8.9e-16)
        if rho <= upstream:
            raise ValueError("corner geometry infeasible: closure density <= rho0")
        return float(rho)
    raise ValueError("corner closure applies to the first-order systems")


def convexity_report(curve: ShockCurve, tol: float = 1e-8):
    """Discrete signed curvature of the curve in the Cartesian plane.

    Returns dict with per-node curvature (interior nodes), its extremes, a
    ``convex`` flag (all interior curvatures of one sign beyond ``tol``) and
    ``degenerate`` when the curve is straight to within the tolerance.
    """
    if curve.theta.size < 3:
        raise ValueError("need at least three nodes")
    t = curve.theta
    x, y = curve.xy()
    # parametric derivatives in theta on non-uniform nodes
    def d1(v):
        hl = t[1:-1] - t[:-2]
        hr = t[2:] - t[1:-1]
        return (-hr / (hl * (hl + hr)) * v[:-2]
                + (hr - hl) / (hl * hr) * v[1:-1]
                + hl / (hr * (hl + hr)) * v[2:])

    def d2(v):
        hl = t[1:-1] - t[:-2]
        hr = t[2:] - t[1:-1]
        return (2.0 / (hl * (hl + hr)) * v[:-2]
                - 2.0 / (hl * hr) * v[1:-1]
                + 2.0 / (hr * (hl + hr)) * v[2:])

    xp, yp = d1(x), d1(y)
    xpp, ypp = d2(x), d2(y)
    speed = np.hypot(xp, yp)
    kappa = (xp * ypp - yp * xpp) / speed**3
    degenerate = bool(np.max(np.abs(kappa)) <= tol)
    convex = bool((np.all(kappa > -tol) or np.all(kappa < tol)) and not degenerate)
    return {
        "curvature": kappa,
        "min_abs_curvature": float(np.min(np.abs(kappa))),
        "max_abs_curvature": float(np.max(np.abs(kappa))),
        "convex": convex,
        "degenerate": degenerate,
    }


def shock_to_csv(curve: ShockCurve, path):
    """CSV export theta,r,xi1,xi2 at 17 significant digits."""
    x, y = curve.xy()
    with open(path, "w", newline="\n") as fh:
        fh.write("theta,r,xi1,xi2\n")
        for row in zip(curve.theta, curve.r, x, y):
            fh.write(",".join("%.17g" % v for v in row) + "\n")
