"""Fixed-domain mapping of the subsonic region onto a computational rectangle.

The free-boundary domain Omega sits between an inner cutoff circle and a
piecewise outer boundary R(theta) (shock radius on the shock sector, sonic
radius elsewhere).  The map r = s * R(theta) carries Omega onto the strip
s in [s_min, 1], theta in [theta_lo, theta_hi] (periodic for the full-disc
problem).

The theta grid is uniform within each sector but the spacing may change at
the sector junctions so that the junction angles are exact grid nodes; all
difference operators below use non-uniform 3-point formulas that reduce to
the standard centered ones on uniform spans.  The outer-boundary derivative
arrays Rp = dR/dtheta and Rpp are supplied per node by the grid builders,
computed one-sidedly within each sector so that the kink at a junction never
smears into neighbouring coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["FixedDomainGrid", "SelfSimilarField", "PolarQuadraticBackground"]


def _theta_weights(theta, periodic):
    """First/second-derivative 3-point weights for a non-uniform axis.

    Returns (wl1, wc1, wr1, wl2, wc2, wr2) arrays; at non-periodic ends the
    one-sided second-order (first derivative) and one-sided (second
    derivative) forms are folded in by the caller, so end rows here are
    filled with the interior formula using wrapped spacing only when
    periodic.
    """
    n = theta.size
    hl = np.empty(n)
    hr = np.empty(n)
    hl[1:] = np.diff(theta)
    hr[:-1] = np.diff(theta)
    if periodic:
        span = 2.0 * np.pi
        hl[0] = theta[0] + span - theta[-1]
        hr[-1] = hl[0]
    else:
        hl[0] = hr[0]
        hr[-1] = hl[-1]
    wl1 = -hr / (hl * (hl + hr))
    wc1 = (hr - hl) / (hl * hr)
    wr1 = hl / (hr * (hl + hr))
    wl2 = 2.0 / (hl * (hl + hr))
    wc2 = -2.0 / (hl * hr)
    wr2 = 2.0 / (hr * (hl + hr))
    return hl, hr, wl1, wc1, wr1, wl2, wc2, wr2


@dataclass
class FixedDomainGrid:
    """Mapped polar grid with node-aligned sector junctions.

    theta : (ntheta,) strictly increasing node angles
    s     : (ns,) uniform nodes in [s_min, 1]
    R     : (ntheta,) outer radius per theta line
    Rp, Rpp : outer-radius derivatives per node (sector-one-sided)
    sector_kind : (ntheta,) int8, 0 = sonic outer node, 1 = shock outer node,
        2 = junction node (shared endpoint of two sectors)
    periodic : theta axis wraps (full-disc domain)
    """

    theta: np.ndarray
    s: np.ndarray
    R: np.ndarray
    Rp: np.ndarray
    Rpp: np.ndarray
    sector_kind: np.ndarray
    periodic: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if np.any(np.diff(self.theta) <= 0.0):
            raise ValueError("theta nodes must be strictly increasing")
        if np.any(self.R <= 0.0):
            raise ValueError("outer radius must stay positive")
        ds = np.diff(self.s)
        if ds.size and (np.any(ds <= 0) or np.ptp(ds) > 1e-12 * ds[0]):
            raise ValueError("s axis must be uniform and increasing")
        (self._hl, self._hr, self._wl1, self._wc1, self._wr1,
         self._wl2, self._wc2, self._wr2) = _theta_weights(self.theta, self.periodic)

    @property
    def ns(self):
        return self.s.size

    @property
    def ntheta(self):
        return self.theta.size

    @property
    def ds(self):
        return float(self.s[1] - self.s[0])

    @property
    def s_min(self):
        return float(self.s[0])

    @property
    def r(self):
        """Physical radius at every node, shape (ns, ntheta)."""
        return self.s[:, None] * self.R[None, :]

    def xy(self):
        """Cartesian node images (xi1, xi2), each (ns, ntheta)."""
        r = self.r
        return r * np.cos(self.theta)[None, :], r * np.sin(self.theta)[None, :]

    # -- discrete differentiation -------------------------------------------

    def dds(self, u):
        """d/ds, centered inside, one-sided second order at the s ends."""
        ds = self.ds
        out = np.empty_like(u)
        out[1:-1] = (u[2:] - u[:-2]) / (2.0 * ds)
        out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * ds)
        out[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * ds)
        return out

    def d2ds(self, u):
        ds = self.ds
        out = np.empty_like(u)
        out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / ds**2
        out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / ds**2
        out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / ds**2
        return out

    def ddt(self, u):
        """d/dtheta along axis -1 with the non-uniform weights."""
        um = np.roll(u, 1, axis=-1)
        up = np.roll(u, -1, axis=-1)
        out = self._wl1 * um + self._wc1 * u + self._wr1 * up
        if not self.periodic:
            th = self.theta
            h0 = th[1] - th[0]
            h1 = th[2] - th[1]
            out[..., 0] = (
                -(2 * h0 + h1) / (h0 * (h0 + h1)) * u[..., 0]
                + (h0 + h1) / (h0 * h1) * u[..., 1]
                - h0 / (h1 * (h0 + h1)) * u[..., 2]
            )
            hN = th[-1] - th[-2]
            hM = th[-2] - th[-3]
            out[..., -1] = (
                (2 * hN + hM) / (hN * (hN + hM)) * u[..., -1]
                - (hN + hM) / (hN * hM) * u[..., -2]
                + hN / (hM * (hN + hM)) * u[..., -3]
            )
        return out

    def d2dt(self, u):
        um = np.roll(u, 1, axis=-1)
        up = np.roll(u, -1, axis=-1)
        out = self._wl2 * um + self._wc2 * u + self._wr2 * up
        if not self.periodic:
            out[..., 0] = out[..., 1]
            out[..., -1] = out[..., -2]
        return out

    def derivatives(self, u):
        """Mapped physical derivatives of nodal values u(s, theta).

        Returns dict with fr, ft, frr, frt, ftt on the (r, theta) chart.
        Second-order accurate at interior nodes of each sector.
        """
        s = self.s[:, None]
        R = self.R[None, :]
        Rp = self.Rp[None, :]
        Rpp = self.Rpp[None, :]
        us = self.dds(u)
        uss = self.d2ds(u)
        ut = self.ddt(u)
        utt = self.d2dt(u)
        ust = self.ddt(us)
        fr = us / R
        ft = ut - (s * Rp / R) * us
        frr = uss / R**2
        frt = ust / R - (s * Rp / R**2) * uss - (Rp / R**2) * us
        ftt = (
            utt
            - 2.0 * (s * Rp / R) * ust
            + (s * Rp / R) ** 2 * uss
            + s * (2.0 * Rp**2 / R**2 - Rpp / R) * us
        )
        return {"fr": fr, "ft": ft, "frr": frr, "frt": frt, "ftt": ftt}

    def cell_areas(self):
        """Quadrature weights r dr dtheta per node (trapezoid-style)."""
        ws = np.full(self.ns, self.ds)
        ws[0] *= 0.5
        ws[-1] *= 0.5
        wt = 0.5 * (self._hl + self._hr)
        if not self.periodic:
            wt[0] = 0.5 * self._hr[0]
            wt[-1] = 0.5 * self._hl[-1]
        r = self.r
        return r * (self.R[None, :] * ws[:, None]) * wt[None, :]


class PolarQuadraticBackground:
    """Analytic constant-state pseudo-potential in polar coordinates.

    phi = -r^2/2 + r (a cos t + b sin t) + C, carried with exact derivative
    formulas so a perturbation solve can evaluate the background without
    truncation error.
    """

    def __init__(self, a, b, C):
        self.a = float(a)
        self.b = float(b)
        self.C = float(C)

    def tables(self, grid: FixedDomainGrid):
        r = grid.r
        t = grid.theta[None, :]
        w = self.a * np.cos(t) + self.b * np.sin(t)
        wp = -self.a * np.sin(t) + self.b * np.cos(t)
        return {
            "f": -0.5 * r**2 + r * w + self.C,
            "fr": -r + w * np.ones_like(r),
            "ft": r * wp,
            "frr": -np.ones_like(r),
            "frt": wp * np.ones_like(r),
            "ftt": -r * w,
        }


@dataclass
class SelfSimilarField:
    """Scalar unknown on a FixedDomainGrid.

    kind is "p" (PG), "rho" (NWS) or "phi" (POT).  For POT the stored values
    are the perturbation against ``background`` (a PolarQuadraticBackground);
    ``full_values`` gives the physical field.  b0 is the Bernoulli-derived
    constant for the POT closure.
    """

    grid: FixedDomainGrid
    values: np.ndarray
    kind: str
    b0: float | None = None
    background: PolarQuadraticBackground | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ns, self.grid.ntheta):
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        self._bg_tables = None

    @property
    def background_derivs(self):
        if self.background is None:
            return None
        if self._bg_tables is None:
            self._bg_tables = self.background.tables(self.grid)
        return self._bg_tables

    def full_values(self):
        if self.background is None:
            return self.values
        return self.values + self.background_derivs["f"]

    def full_derivatives(self):
        """Mapped derivatives of the physical field (analytic background part)."""
        d = self.grid.derivatives(self.values)
        if self.background is None:
            return d
        bg = self.background_derivs
        return {k: d[k] + bg[k] for k in d}

    def copy_with(self, values):
        f = SelfSimilarField(self.grid, np.array(values), self.kind, self.b0, self.background)
        return f
