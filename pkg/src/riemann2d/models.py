"""Gas models for two-dimensional self-similar flow.

Three prototype systems share one interface here:

* ``PG``  -- pressure gradient system, state (u, v, E) with E = |u|^2/2 + p.
  Sonic speed sqrt(p); the self-similar pressure equation in polar
  coordinates is

      (p - r^2) p_rr + (p/r^2) p_tt + (p/r) p_r + ((r p_r)^2 - 2 r p p_r)/p = 0,

  elliptic where p > r^2.

* ``NWS`` -- nonlinear wave system, state (rho, m, n), pressure law
  p(rho) = rho^gamma / gamma, sonic speed c = rho^((gamma-1)/2).  Polar form

      ((c^2 - r^2) rho_r)_r + (c^2/r) rho_r + ((c^2/r^2) rho_t)_t = 0,

  elliptic where c^2 > r^2.

* ``POT`` -- self-similar potential flow for the pseudo-potential phi
  (D phi = velocity - xi), density closure

      rho = (B0 - (gamma-1) (|D phi|^2/2 + phi))^(1/(gamma-1)),

  with c^2 = rho^(gamma-1); elliptic where |D phi| < c.

All functions are pure; nothing here owns mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GasModel",
    "PG",
    "NWS",
    "POT",
    "PGState",
    "NWSState",
    "ConstantPotentialState",
    "CavitationError",
    "sonic_speed",
    "pressure",
    "density_closure",
    "potential_sound_speed_sq",
    "ellipticity_margin",
    "interior_residual",
    "interior_residual_grid",
    "Bump",
    "flux",
    "max_signal_speed",
    "weak_residual",
]


class CavitationError(ValueError):
    """Density closure evaluated past vacuum (argument <= 0)."""


@dataclass(frozen=True)
class GasModel:
    """System kind plus adiabatic exponent.

    ``kind`` is one of "PG", "NWS", "POT".  The pressure gradient system has
    no adiabatic exponent; constructing it with one (or querying gamma on it)
    is an error.
    """

    kind: str
    _gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("PG", "NWS", "POT"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "PG":
            if self._gamma is not None:
                raise ValueError("pressure gradient system has no gamma")
        else:
            if self._gamma is None or not self._gamma > 1.0:
                raise ValueError("gamma must exceed 1")

    @property
    def gamma(self) -> float:
        if self.kind == "PG":
            raise ValueError("pressure gradient system has no gamma")
        return float(self._gamma)


def PG() -> GasModel:
    return GasModel("PG")


def NWS(gamma: float) -> GasModel:
    return GasModel("NWS", gamma)


def POT(gamma: float) -> GasModel:
    return GasModel("POT", gamma)


@dataclass(frozen=True)
class PGState:
    p: float
    u: float
    v: float

    def __post_init__(self):
        if not self.p > 0.0:
            raise ValueError("pressure must be positive")

    @property
    def E(self) -> float:
        return 0.5 * (self.u**2 + self.v**2) + self.p

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.E])


@dataclass(frozen=True)
class NWSState:
    rho: float
    m: float
    n: float

    def __post_init__(self):
        if not self.rho > 0.0:
            raise ValueError("density must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.m, self.n])


@dataclass(frozen=True)
class ConstantPotentialState:
    """Uniform-velocity solution phi = -|xi|^2/2 + vel.xi + offset.

    The density is the closure evaluated at the state's own D phi; it is
    constant because |D phi|^2/2 + phi = |vel|^2/2 + offset everywhere.
    """

    vel: tuple[float, float]
    offset: float
    rho: float
    gamma: float

    @property
    def sonic_speed(self) -> float:
        return self.rho ** ((self.gamma - 1.0) / 2.0)

    def phi(self, x1, x2):
        return -0.5 * (x1**2 + x2**2) + self.vel[0] * x1 + self.vel[1] * x2 + self.offset

    def dphi(self, x1, x2):
        return self.vel[0] - x1, self.vel[1] - x2

    def ellipticity_margin(self, x1, x2):
        """c^2 - |D phi|^2 at a point; positive inside the sonic circle."""
        gx, gy = self.dphi(x1, x2)
        return self.sonic_speed**2 - (gx**2 + gy**2)


def constant_potential_state(vel, offset, b0, gamma) -> ConstantPotentialState:
    # |D phi|^2/2 + phi reduces to |vel|^2/2 + offset for a constant state
    vsq = vel[0] ** 2 + vel[1] ** 2
    rho = density_closure(POT(gamma), vsq, offset, b0)
    return ConstantPotentialState(tuple(vel), float(offset), float(rho), float(gamma))


# ---------------------------------------------------------------------------
# Scalar closures
# ---------------------------------------------------------------------------

def pressure(model: GasModel, rho):
    """NWS pressure law p = rho^gamma / gamma."""
    if model.kind != "NWS":
        raise ValueError("pressure law is the NWS constitutive relation")
    return np.asarray(rho) ** model.gamma / model.gamma


def sonic_speed(model: GasModel, value):
    """Sonic speed from the density-like scalar.

    PG: sqrt(p).  NWS and POT: rho^((gamma-1)/2).  Raises on non-positive
    input.
    """
    value = np.asarray(value, dtype=float)
    if np.any(value <= 0.0):
        raise ValueError("density/pressure must be positive")
    if model.kind == "PG":
        out = np.sqrt(value)
    else:
        out = value ** ((model.gamma - 1.0) / 2.0)
    return out if out.ndim else float(out)


def density_closure(model: GasModel, gradsq, phi, b0):
    """POT density rho = (B0 - (gamma-1) (gradsq/2 + phi))^(1/(gamma-1)).

    Raises CavitationError when the argument is not positive.
    """
    if model.kind != "POT":
        raise ValueError("density closure applies to potential flow only")
    g = model.gamma
    arg = b0 - (g - 1.0) * (0.5 * np.asarray(gradsq) + np.asarray(phi))
    if np.any(arg <= 0.0):
        raise CavitationError("vacuum reached in density closure")
    out = arg ** (1.0 / (g - 1.0))
    return out if np.ndim(out) else float(out)


def potential_sound_speed_sq(model: GasModel, gradsq, phi, b0):
    """c^2 = B0 - (gamma-1)(gradsq/2 + phi) for potential flow."""
    if model.kind != "POT":
        raise ValueError("potential-flow sound speed only")
    return b0 - (model.gamma - 1.0) * (0.5 * np.asarray(gradsq) + np.asarray(phi))


def ellipticity_margin(model: GasModel, *, r=None, value=None, gradsq=None, phi=None, b0=None):
    """Signed ellipticity indicator; positive exactly where the equation is elliptic.

    PG: p - r^2;  NWS: c(rho)^2 - r^2;  POT: c^2(|Dphi|^2, phi) - |Dphi|^2.
    """
    if model.kind == "PG":
        return np.asarray(value) - np.asarray(r) ** 2
    if model.kind == "NWS":
        return np.asarray(value) ** (model.gamma - 1.0) - np.asarray(r) ** 2
    return potential_sound_speed_sq(model, gradsq, phi, b0) - np.asarray(gradsq)


# ---------------------------------------------------------------------------
# Interior residuals of the governing self-similar equations
# ---------------------------------------------------------------------------

def _pg_residual(r, p, p_r, p_t, p_rr, p_tt):
    return (
        (p - r**2) * p_rr
        + (p / r**2) * p_tt
        + (p / r) * p_r
        + ((r * p_r) ** 2 - 2.0 * r * p * p_r) / p
    )


def _nws_residual(gamma, r, rho, rho_r, rho_t, rho_rr, rho_tt):
    c2 = rho ** (gamma - 1.0)
    dc2 = (gamma - 1.0) * rho ** (gamma - 2.0)
    return (
        (c2 - r**2) * rho_rr
        + (c2 / r**2) * rho_tt
        + (c2 / r - 2.0 * r + dc2 * rho_r) * rho_r
        + (dc2 / r**2) * rho_t**2
    )


def _pot_residual(gamma, b0, r, f, f_r, f_t, f_rr, f_rt, f_tt):
    gradsq = f_r**2 + (f_t / r) ** 2
    c2 = b0 - (gamma - 1.0) * (0.5 * gradsq + f)
    lap = f_rr + f_r / r + f_tt / r**2
    h_rt = f_rt / r - f_t / r**2
    h_tt = f_tt / r**2 + f_r / r
    quad = f_r**2 * f_rr + 2.0 * f_r * (f_t / r) * h_rt + (f_t / r) ** 2 * h_tt
    return c2 * lap - quad + 2.0 * c2 - gradsq


def interior_residual_grid(model: GasModel, field, b0=None, eps=0.0):
    """Discrete residual of the governing equation at every node.

    Second-order mapped finite differences; entries on boundary nodes are
    filled but only interior ones are meaningful to O(h^2).  ``eps`` adds the
    regularization term eps * Laplacian for checking the regularized
    operator's residual.
    """
    g = field.grid
    d = g.derivatives(field.values)
    r = g.r
    lap_fr, lap_frr, lap_ftt = d["fr"], d["frr"], d["ftt"]
    if model.kind == "PG":
        res = _pg_residual(r, field.values, d["fr"], d["ft"], d["frr"], d["ftt"])
    elif model.kind == "NWS":
        res = _nws_residual(model.gamma, r, field.values, d["fr"], d["ft"], d["frr"], d["ftt"])
    else:
        if b0 is None:
            b0 = field.b0
        vals = field.values
        fr, ft = d["fr"], d["ft"]
        frr, frt, ftt = d["frr"], d["frt"], d["ftt"]
        if field.background is not None:
            bg = field.background_derivs
            vals = vals + bg["f"]
            fr = fr + bg["fr"]
            ft = ft + bg["ft"]
            frr = frr + bg["frr"]
            frt = frt + bg["frt"]
            ftt = ftt + bg["ftt"]
        res = _pot_residual(model.gamma, b0, r, vals, fr, ft, frr, frt, ftt)
        lap_fr, lap_frr, lap_ftt = fr, frr, ftt
    if eps:
        res = res + eps * (lap_frr + lap_fr / r + lap_ftt / r**2)
    return res


def interior_residual(model: GasModel, field, point, b0=None):
    """Residual at one interior grid node (i_s, j_theta)."""
    i, j = point
    g = field.grid
    if not (0 < i < g.ns - 1) or (not g.periodic and not (0 < j < g.ntheta - 1)):
        raise IndexError("stencil out of bounds: node is not interior")
    return float(interior_residual_grid(model, field, b0=b0)[i, j])


# ---------------------------------------------------------------------------
# Fluxes of the first-order systems (shared with the finite-volume oracle)
# ---------------------------------------------------------------------------

def flux(model: GasModel, U):
    """Analytic flux pair (F1, F2) for the first-order systems.

    ``U`` has the components along axis 0: PG (u, v, E), NWS (rho, m, n).
    """
    U = np.asarray(U, dtype=float)
    F1 = np.empty_like(U)
    F2 = np.empty_like(U)
    if model.kind == "PG":
        u, v, E = U[0], U[1], U[2]
        p = E - 0.5 * (u**2 + v**2)
        F1[0], F1[1], F1[2] = p, 0.0, p * u
        F2[0], F2[1], F2[2] = 0.0, p, p * v
    elif model.kind == "NWS":
        rho, m, n = U[0], U[1], U[2]
        p = rho**model.gamma / model.gamma
        F1[0], F1[1], F1[2] = m, p, 0.0
        F2[0], F2[1], F2[2] = n, 0.0, p
    else:
        raise ValueError("flux is defined for the first-order systems only")
    return F1, F2


def max_signal_speed(model: GasModel, U):
    """Largest characteristic speed magnitude; both systems have speeds {0, +-c}."""
    U = np.asarray(U, dtype=float)
    if model.kind == "PG":
        p = U[2] - 0.5 * (U[0] ** 2 + U[1] ** 2)
        if np.any(p <= 0.0):
            raise ValueError("non-physical state: p <= 0")
        return np.sqrt(p)
    if model.kind == "NWS":
        if np.any(U[0] <= 0.0):
            raise ValueError("non-physical state: rho <= 0")
        return U[0] ** ((model.gamma - 1.0) / 2.0)
    raise ValueError("signal speed is defined for the first-order systems only")


# ---------------------------------------------------------------------------
# Weak-solution residual (Definition-style distributional check)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """Smooth compactly supported test function on the xi-plane.

    value  exp(1 - 1/(1 - t^2)) with t = |xi - center| / radius inside the
    support disc, 0 outside; C^infinity everywhere.
    """

    center: tuple[float, float]
    radius: float

    def __call__(self, x1, x2):
        t2 = ((np.asarray(x1) - self.center[0]) ** 2 + (np.asarray(x2) - self.center[1]) ** 2) / self.radius**2
        out = np.zeros_like(np.asarray(t2, dtype=float))
        inside = t2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - t2[inside]))
        return out

    def grad(self, x1, x2):
        dx = np.asarray(x1, dtype=float) - self.center[0]
        dy = np.asarray(x2, dtype=float) - self.center[1]
        t2 = (dx**2 + dy**2) / self.radius**2
        gx = np.zeros_like(dx)
        gy = np.zeros_like(dy)
        inside = t2 < 1.0
        f = np.exp(1.0 - 1.0 / (1.0 - t2[inside]))
        dfdt2 = -f / (1.0 - t2[inside]) ** 2
        gx[inside] = dfdt2 * 2.0 * dx[inside] / self.radius**2
        gy[inside] = dfdt2 * 2.0 * dy[inside] / self.radius**2
        return gx, gy


def weak_residual(model: GasModel, x1, x2, U, testfn: Bump):
    """Distributional residual of the self-similar system against one bump.

    Midpoint quadrature of

        integral { (F(V) - V (x) xi) . D zeta - 2 V zeta } dxi

    over the Cartesian grid; ``U`` holds the state components on the
    (n1, n2) node lattice given by coordinate vectors x1, x2.  Returns the
    max over components of the absolute integral.  Exact piecewise-constant
    solutions with correctly placed discontinuities drive this to zero at
    O(h); a constant state gives quadrature-level values.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    cx, cy = testfn.center
    rad = testfn.radius
    if (
        cx - rad < x1[0] or cx + rad > x1[-1]
        or cy - rad < x2[0] or cy + rad > x2[-1]
    ):
        raise ValueError("test-function support is clipped by the grid")
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    zeta = testfn(X1, X2)
    gx, gy = testfn.grad(X1, X2)
    F1, F2 = flux(model, U)
    dA = (x1[1] - x1[0]) * (x2[1] - x2[0])
    vals = []
    for i in range(U.shape[0]):
        integrand = (F1[i] - U[i] * X1) * gx + (F2[i] - U[i] * X2) * gy - 2.0 * U[i] * zeta
        vals.append(abs(float(np.sum(integrand) * dA)))
    return max(vals)
