"""Degenerate-elliptic interior solver on the mapped free-boundary domain.

The governing scalar equations (pressure, density, pseudo-potential) are
solved by a frozen-coefficient Picard iteration: all nonlinear coefficients
and lower-order terms are evaluated at the previous iterate, the resulting
linear problem is assembled as a sparse 9-point system on the (s, theta)
rectangle and factorized directly, and the update is under-relaxed.  The
operator is regularized as Q^eps = Q + eps * Laplacian; a decreasing eps
schedule (epsilon_continuation) imitates the regularize-then-limit
structure of the underlying existence scheme, with the final eps = 0 step
flooring the degenerate coefficient at a machine-safe value.

Boundary conditions supported per edge: Dirichlet, homogeneous oblique
(differentiated Rankine-Hugoniot, PG/NWS), inhomogeneous conormal mass-flux
(potential flow), one-point Dirichlet closure at the degenerate corner,
wall slip (zero tangential derivative) on lateral edges, and zero or
prescribed radial derivative on the inner cutoff circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .grid import FixedDomainGrid, SelfSimilarField, PolarQuadraticBackground
from .models import (
    GasModel,
    interior_residual_grid,
    density_closure,
    potential_sound_speed_sq,
)
from .shock import ShockCurve, oblique_coeffs

__all__ = [
    "DIRICHLET",
    "OBLIQUE_RH",
    "ONE_POINT",
    "POT_CONORMAL",
    "BoundarySpec",
    "ConvergenceError",
    "EllipticityLossError",
    "LinearSolveError",
    "build_grid",
    "annular_grid",
    "picard_solve",
    "epsilon_continuation",
    "potential_solve",
    "PicardHistory",
]

DIRICHLET, OBLIQUE_RH, ONE_POINT, POT_CONORMAL = 0, 1, 2, 3

_FLOOR = 1e-14   # degenerate-coefficient floor for the eps = 0 polish step


class ConvergenceError(RuntimeError):
    pass


class EllipticityLossError(RuntimeError):
    def __init__(self, msg, location=None, margin=None):
        super().__init__(msg)
        self.location = location
        self.margin = margin


class LinearSolveError(RuntimeError):
    pass


@dataclass
class BoundarySpec:
    """Per-edge boundary conditions on a FixedDomainGrid.

    outer_kind/outer_dirichlet describe the s = 1 edge per theta column.
    Lateral edges (non-periodic grids) are wall-slip by default; the inner
    cutoff is zero conormal unless a value array g(theta) or Dirichlet data
    is supplied.
    """

    outer_kind: np.ndarray
    outer_dirichlet: np.ndarray
    oblique_upstream: float | None = None
    pot_data: dict | None = None
    lateral_kind: str = "neumann"
    lateral_dirichlet: tuple | None = None
    inner_kind: str = "conormal0"
    inner_value: np.ndarray | None = None
    entropy_floor: float = 1e-8

    def validate(self, grid: FixedDomainGrid):
        if self.outer_kind.shape != (grid.ntheta,):
            raise ValueError("outer_kind shape mismatch: every outer node needs exactly one condition")
        if self.outer_dirichlet.shape != (grid.ntheta,):
            raise ValueError("outer_dirichlet shape mismatch")
        if np.any(self.outer_kind == OBLIQUE_RH) and self.oblique_upstream is None:
            raise ValueError("oblique edges need the upstream constant")
        if np.any(self.outer_kind == POT_CONORMAL) and self.pot_data is None:
            raise ValueError("potential conormal edges need upstream data")
        if self.inner_kind not in ("conormal0", "neumann_value", "dirichlet"):
            raise ValueError(f"unknown inner condition {self.inner_kind!r}")
        if self.lateral_kind not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown lateral condition {self.lateral_kind!r}")


@dataclass
class PicardHistory:
    residuals: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    cauchy_increments: list = field(default_factory=list)
    cauchy_monotone: bool = True

    def log_lines(self):
        return ["iter,residual,epsilon"] + [
            f"{k},{r:.6e},{e:.6e}" for k, (r, e) in enumerate(zip(self.residuals, self.epsilons))
        ]


# ---------------------------------------------------------------------------
# Grid builders
# ---------------------------------------------------------------------------

def _sector_derivs(theta, r):
    """dR/dtheta and d2R/dtheta2 within one uniformly spaced sector."""
    h = theta[1] - theta[0]
    n = theta.size
    rp = np.empty(n)
    rpp = np.empty(n)
    rp[1:-1] = (r[2:] - r[:-2]) / (2 * h)
    rp[0] = (-3 * r[0] + 4 * r[1] - r[2]) / (2 * h)
    rp[-1] = (3 * r[-1] - 4 * r[-2] + r[-3]) / (2 * h)
    rpp[1:-1] = (r[2:] - 2 * r[1:-1] + r[:-2]) / h**2
    if n >= 4:
        rpp[0] = (2 * r[0] - 5 * r[1] + 4 * r[2] - r[3]) / h**2
        rpp[-1] = (2 * r[-1] - 5 * r[-2] + 4 * r[-3] - r[-4]) / h**2
    else:
        rpp[0] = rpp[1]
        rpp[-1] = rpp[-2]
    return rp, rpp


def _curve_derivs(shock: ShockCurve):
    if shock.rp is not None and shock.rpp is not None:
        return np.asarray(shock.rp, dtype=float), np.asarray(shock.rpp, dtype=float)
    return _sector_derivs(shock.theta, shock.r)


def _split_counts(ntheta, arc_a, arc_b, shared, min_nodes=9, odd_a=False):
    """Node counts for two sectors sharing ``shared`` junction nodes."""
    na = int(round(ntheta * arc_a / (arc_a + arc_b)))
    na = max(min_nodes, na)
    if odd_a and na % 2 == 0:
        na += 1
    nb = ntheta - na + shared
    if nb < min_nodes:
        nb = min_nodes
        na = ntheta - nb + shared
        if odd_a and na % 2 == 0:
            na -= 1
    return na, nb


def shock_sector_nodes(setup, ntheta):
    """theta nodes of the shock sector for a given total theta resolution."""
    if setup.problem == "II":
        tw = setup.angles["theta_w"]
        t1 = setup.derived["theta1"]
        na, nb = _split_counts(ntheta, t1 - tw, np.pi - t1, shared=1)
        return np.linspace(tw, t1, na)
    if setup.problem == "I":
        t3 = setup.derived["theta3"]
        t1 = setup.derived["theta1"]
        if t1 < t3:
            t1 += 2 * np.pi
        arc_sh = t1 - t3
        na, nb = _split_counts(ntheta, arc_sh, 2 * np.pi - arc_sh, shared=2, odd_a=True)
        return np.linspace(t3, t1, na)
    if setup.problem == "IV":
        tp1 = setup.derived["theta_P1"]
        tw = setup.angles["theta_w"]
        na, nb = _split_counts(ntheta, np.pi - tp1, tp1 - tw, shared=1)
        return np.linspace(tp1, np.pi, na)
    raise ValueError(setup.problem)


def build_grid(setup, shock: ShockCurve, resolution, s_min=0.02):
    """FixedDomainGrid for one free-boundary problem.

    R(theta) equals the shock radius on the shock sector and the appropriate
    sonic radius elsewhere; the junction angles are exact grid nodes and the
    shock nodes coincide with the grid's theta lines.  Raises when the shock
    endpoint misses its sonic anchor beyond 1e-10.
    """
    ns, ntheta = resolution
    if not (0.0 < s_min < 0.1):
        raise ValueError("s_min out of (0, 0.1)")
    s = np.linspace(s_min, 1.0, ns)
    prob = setup.problem
    if prob == "II":
        tw = setup.angles["theta_w"]
        t1 = setup.derived["theta1"]
        c1 = setup.derived["c1"]
        th_sh = shock.theta
        if abs(th_sh[0] - tw) > 1e-12 or abs(th_sh[-1] - t1) > 1e-12:
            raise ValueError("shock nodes must span [theta_w, theta1]")
        if abs(shock.r[-1] - c1) > 1e-10 * c1:
            raise ValueError("shock/sonic mismatch at the junction beyond tolerance")
        na = th_sh.size
        nb = ntheta - na + 1
        if nb < 3:
            raise ValueError("too few sonic-sector nodes")
        th_so = np.linspace(t1, np.pi, nb)
        theta = np.concatenate([th_sh, th_so[1:]])
        R = np.concatenate([shock.r, np.full(nb - 1, c1)])
        rp_sh, rpp_sh = _curve_derivs(shock)
        Rp = np.concatenate([rp_sh, np.zeros(nb - 1)])
        Rpp = np.concatenate([rpp_sh, np.zeros(nb - 1)])
        kind = np.concatenate([np.ones(na, dtype=np.int8), np.zeros(nb - 1, dtype=np.int8)])
        kind[na - 1] = 2
        g = FixedDomainGrid(theta, s, R, Rp, Rpp, kind, periodic=False,
                            meta={"problem": "II", "junctions": {na - 1: (rp_sh[-1], 0.0)},
                                  "corner_cols": [0], "n_shock": na})
        return g
    if prob == "I":
        t3 = setup.derived["theta3"]
        t1 = setup.derived["theta1"]
        if t1 < t3:
            t1 += 2 * np.pi
        rs1 = setup.derived["sonic_radius_1"]
        th_sh = shock.theta
        if abs(th_sh[0] - t3) > 1e-12 or abs(th_sh[-1] - t1) > 1e-12:
            raise ValueError("shock nodes must span [theta3, theta1]")
        for end in (0, -1):
            if abs(shock.r[end] - rs1) > 1e-10 * rs1:
                raise ValueError("shock/sonic mismatch at the junction beyond tolerance")
        na = th_sh.size
        nb = ntheta - na + 2
        if nb < 3:
            raise ValueError("too few sonic-sector nodes")
        th_so = np.linspace(t1, t3 + 2 * np.pi, nb)
        theta = np.concatenate([th_sh, th_so[1:-1]])
        R = np.concatenate([shock.r, np.full(nb - 2, rs1)])
        rp_sh, rpp_sh = _curve_derivs(shock)
        Rp = np.concatenate([rp_sh, np.zeros(nb - 2)])
        Rpp = np.concatenate([rpp_sh, np.zeros(nb - 2)])
        kind = np.concatenate([np.ones(na, dtype=np.int8), np.zeros(nb - 2, dtype=np.int8)])
        kind[0] = 2
        kind[na - 1] = 2
        j_corner = int(np.argmin(np.abs(th_sh - 1.5 * np.pi)))
        g = FixedDomainGrid(theta, s, R, Rp, Rpp, kind, periodic=True,
                            meta={"problem": "I",
                                  "junctions": {0: (0.0, rp_sh[0]), na - 1: (rp_sh[-1], 0.0)},
                                  "corner_cols": [j_corner], "n_shock": na})
        return g
    if prob == "IV":
        tw = setup.angles["theta_w"]
        tp1 = setup.derived["theta_P1"]
        th_sh = shock.theta
        if abs(th_sh[0] - tp1) > 1e-12 or abs(th_sh[-1] - np.pi) > 1e-12:
            raise ValueError("shock nodes must span [theta_P1, pi]")
        P1 = setup.derived["P1"]
        rp1 = float(np.hypot(*P1))
        if abs(shock.r[0] - rp1) > 1e-10 * rp1:
            raise ValueError("shock/sonic mismatch at the junction beyond tolerance")
        nb = ntheta - th_sh.size + 1
        if nb < 3:
            raise ValueError("too few sonic-sector nodes")
        th_so = np.linspace(tw, tp1, nb)
        st2 = setup.derived["state2"]
        q = float(np.hypot(*st2.vel))
        c2 = setup.derived["c2"]
        psi = th_so - tw
        bb = q * np.cos(psi)
        dd = q * np.sin(psi)
        w = np.sqrt(c2**2 - dd**2)
        R_so = bb + w
        Rp_so = -dd * (1.0 + bb / w)
        Rpp_so = -bb + (dd**2 - bb**2) / w - dd**2 * bb**2 / w**3
        rp_sh, rpp_sh = _curve_derivs(shock)
        theta = np.concatenate([th_so, th_sh[1:]])
        R = np.concatenate([R_so, shock.r[1:]])
        Rp = np.concatenate([Rp_so, rp_sh[1:]])
        Rpp = np.concatenate([Rpp_so, rpp_sh[1:]])
        na = nb
        kind = np.concatenate([np.zeros(nb, dtype=np.int8), np.ones(th_sh.size - 1, dtype=np.int8)])
        kind[nb - 1] = 2
        g = FixedDomainGrid(theta, s, R, Rp, Rpp, kind, periodic=False,
                            meta={"problem": "IV", "junctions": {nb - 1: (Rp_so[-1], rp_sh[0])},
                                  "corner_cols": [], "n_shock": th_sh.size})
        return g
    raise ValueError(prob)


def annular_grid(r_out, theta_lo, theta_hi, ns, ntheta, s_min=0.02, periodic=False):
    """Single-sector grid with constant outer radius (testing and MMS)."""
    theta = np.linspace(theta_lo, theta_hi, ntheta, endpoint=not periodic)
    R = np.full(theta.size, float(r_out))
    Z = np.zeros_like(R)
    s = np.linspace(s_min, 1.0, ns)
    return FixedDomainGrid(theta, s, R, Z, Z.copy(), np.zeros(theta.size, dtype=np.int8),
                           periodic=periodic, meta={"problem": "annulus", "junctions": {},
                                                    "corner_cols": []})


# ---------------------------------------------------------------------------
# Frozen-coefficient assembly
# ---------------------------------------------------------------------------

def _pot_full_tables(field: SelfSimilarField):
    d = field.grid.derivatives(field.values)
    out = {k: np.array(v) for k, v in d.items()}
    f = np.array(field.values)
    if field.background is not None:
        bg = field.background_derivs
        f = f + bg["f"]
        for k in out:
            out[k] = out[k] + bg[k]
    out["f"] = f
    return out


def _coefficients(model: GasModel, field: SelfSimilarField, eps):
    """Frozen PDE coefficients (r-theta chart) at the previous iterate."""
    g = field.grid
    r = g.r
    if model.kind == "PG":
        p = field.values
        d = g.derivatives(p)
        A_rr = (p - r**2) + eps
        A_rt = np.zeros_like(p)
        A_tt = p / r**2 + eps / r**2
        B_r = p / r + (r**2 * d["fr"] / p - 2.0 * r) + eps / r
        B_t = np.zeros_like(p)
        C0 = np.zeros_like(p)
        S0 = np.zeros_like(p)
        bg_rhs = None
    elif model.kind == "NWS":
        rho = field.values
        d = g.derivatives(rho)
        gam = model.gamma
        c2 = rho ** (gam - 1.0)
        dc2 = (gam - 1.0) * rho ** (gam - 2.0)
        A_rr = (c2 - r**2) + eps
        A_rt = np.zeros_like(rho)
        A_tt = c2 / r**2 + eps / r**2
        B_r = c2 / r - 2.0 * r + dc2 * d["fr"] + eps / r
        B_t = dc2 * d["ft"] / r**2
        C0 = np.zeros_like(rho)
        S0 = np.zeros_like(rho)
        bg_rhs = None
    elif model.kind == "POT":
        gam = model.gamma
        b0 = field.b0
        t = _pot_full_tables(field)
        gradsq = t["fr"] ** 2 + (t["ft"] / r) ** 2
        c2 = b0 - (gam - 1.0) * (0.5 * gradsq + t["f"])
        A_rr = (c2 - t["fr"] ** 2) + eps
        A_rt = -2.0 * t["fr"] * t["ft"] / r**2
        A_tt = c2 / r**2 - t["ft"] ** 2 / r**4 + eps / r**2
        B_r = c2 / r + t["ft"] ** 2 / r**3 + eps / r
        B_t = np.zeros_like(c2)
        C0 = np.full_like(c2, -2.0 * (gam - 1.0))
        S0 = 2.0 * b0 - gam * gradsq
        if field.background is not None:
            bg = field.background_derivs
            bg_rhs = (A_rr - eps) * 0.0  # assembled below with the eps terms included
            bg_rhs = (
                A_rr * bg["frr"] + A_rt * bg["frt"] + A_tt * bg["ftt"]
                + B_r * bg["fr"] + B_t * bg["ft"] + C0 * bg["f"]
            )
        else:
            bg_rhs = None
    else:
        raise ValueError(model.kind)
    return {"A_rr": A_rr, "A_rt": A_rt, "A_tt": A_tt, "B_r": B_r, "B_t": B_t,
            "C0": C0, "S0": S0, "bg_rhs": bg_rhs}


def _mapped_coefficients(grid: FixedDomainGrid, co):
    s = grid.s[:, None]
    R = grid.R[None, :]
    Rp = grid.Rp[None, :]
    Rpp = grid.Rpp[None, :]
    A_rr, A_rt, A_tt = co["A_rr"], co["A_rt"], co["A_tt"]
    B_r, B_t = co["B_r"], co["B_t"]
    a_ss = A_rr / R**2 - A_rt * s * Rp / R**2 + A_tt * (s * Rp / R) ** 2
    a_st = A_rt / R - 2.0 * A_tt * s * Rp / R
    a_tt = A_tt
    b_s = (-A_rt * Rp / R**2 + A_tt * s * (2.0 * Rp**2 / R**2 - Rpp / R)
           + B_r / R - B_t * s * Rp / R)
    b_t = B_t
    return a_ss, a_st, a_tt, b_s, b_t


def _outer_trace_rho(model, field, bc):
    """Frozen density trace on the outer edge for the POT conormal condition."""
    t = _pot_full_tables(field)
    g = field.grid
    r = g.r[-1, :]
    gradsq = t["fr"][-1, :] ** 2 + (t["ft"][-1, :] / r) ** 2
    c2 = potential_sound_speed_sq(model, gradsq, t["f"][-1, :], field.b0)
    c2 = np.maximum(c2, 1e-12)
    rho = c2 ** (1.0 / (model.gamma - 1.0))
    rho1 = bc.pot_data["rho1"]
    return np.maximum(rho, rho1 + bc.entropy_floor)


def assemble(model: GasModel, grid: FixedDomainGrid, bc: BoundarySpec, eps,
             field_old: SelfSimilarField, source=None, floor_degenerate=False,
             oblique_trace=None, pot_trace_rho=None):
    """Sparse linear system of the frozen-coefficient iteration.

    Returns (A, rhs).  ``source`` is an optional (ns, ntheta) array injected
    into the equation (manufactured solutions).  ``floor_degenerate`` clamps
    the second-order coefficients at a tiny positive value (eps = 0 polish).
    """
    bc.validate(grid)
    ns, nt = grid.ns, grid.ntheta
    ds = grid.ds
    co = _coefficients(model, field_old, eps)
    if floor_degenerate:
        co["A_rr"] = np.maximum(co["A_rr"], _FLOOR)
        co["A_tt"] = np.maximum(co["A_tt"], _FLOOR / grid.r**2)
    a_ss, a_st, a_tt, b_s, b_t = _mapped_coefficients(grid, co)
    S_tot = np.array(co["S0"])
    if co["bg_rhs"] is not None:
        S_tot = S_tot + co["bg_rhs"]
    if source is not None:
        S_tot = S_tot - source
    wl1, wc1, wr1 = grid._wl1, grid._wc1, grid._wr1
    wl2, wc2, wr2 = grid._wl2, grid._wc2, grid._wr2

    rows, cols, vals = [], [], []
    rhs = np.zeros(ns * nt)

    def idx(i, j):
        return i * nt + (j % nt)

    def add(i, j, i2, j2, v):
        rows.append(idx(i, j))
        cols.append(idx(i2, j2))
        vals.append(v)

    junctions = grid.meta.get("junctions", {})
    interior_j = []
    for j in range(nt):
        if j in junctions:
            continue
        if not grid.periodic and (j == 0 or j == nt - 1):
            continue
        interior_j.append(j)
    interior_j = np.asarray(interior_j, dtype=np.int64)

    # interior PDE rows (vectorized over the interior lattice)
    if interior_j.size:
        II, JJ = np.meshgrid(np.arange(1, ns - 1), interior_j, indexing="ij")
        II = II.ravel()
        JJ = JJ.ravel()
        ROW = II * nt + JJ
        jm = (JJ - 1) % nt
        jp = (JJ + 1) % nt
        Ass, Ast, Att = a_ss[II, JJ], a_st[II, JJ], a_tt[II, JJ]
        Bs, Bt, Cc = b_s[II, JJ], b_t[II, JJ], co["C0"][II, JJ]
        L1, C1w, R1 = wl1[JJ], wc1[JJ], wr1[JJ]
        L2, C2w, R2 = wl2[JJ], wc2[JJ], wr2[JJ]
        ent = [
            (ROW, ROW, -2.0 * Ass / ds**2 + C2w * Att + C1w * Bt + Cc),
            (ROW, (II + 1) * nt + JJ, Ass / ds**2 + Bs / (2 * ds) + Ast * C1w / (2 * ds)),
            (ROW, (II - 1) * nt + JJ, Ass / ds**2 - Bs / (2 * ds) - Ast * C1w / (2 * ds)),
            (ROW, II * nt + jm, L2 * Att + L1 * Bt),
            (ROW, II * nt + jp, R2 * Att + R1 * Bt),
            (ROW, (II + 1) * nt + jp, Ast * R1 / (2 * ds)),
            (ROW, (II - 1) * nt + jp, -Ast * R1 / (2 * ds)),
            (ROW, (II + 1) * nt + jm, Ast * L1 / (2 * ds)),
            (ROW, (II - 1) * nt + jm, -Ast * L1 / (2 * ds)),
        ]
        for rr, cc_, vv in ent:
            rows.append(rr)
            cols.append(cc_)
            vals.append(vv)
        rhs[ROW] = -S_tot[II, JJ]

    # junction interface rows: continuity of the physical theta-derivative
    for j, (rp_left, rp_right) in junctions.items():
        hl = grid._hl[j]
        hr = grid._hr[j]
        for i in range(1, ns - 1):
            row = idx(i, j)
            # one-sided d/dtheta from the left sector
            add(i, j, i, j, 3.0 / (2 * hl))
            add(i, j, i, j - 1, -4.0 / (2 * hl))
            add(i, j, i, j - 2, 1.0 / (2 * hl))
            # minus one-sided d/dtheta from the right sector
            add(i, j, i, j, 3.0 / (2 * hr))
            add(i, j, i, j + 1, -4.0 / (2 * hr))
            add(i, j, i, j + 2, 1.0 / (2 * hr))
            # mapping-kink correction via u_s
            coef = grid.s[i] * (rp_right - rp_left) / grid.R[j] / (2 * ds)
            add(i, j, i + 1, j, coef)
            add(i, j, i - 1, j, -coef)
            rhs[row] = 0.0

    # lateral wall edges (non-periodic): f_t = 0 or Dirichlet
    if not grid.periodic:
        for j, sideways in ((0, +1), (nt - 1, -1)):
            if bc.lateral_kind == "dirichlet":
                valarr = bc.lateral_dirichlet[0 if j == 0 else 1]
                for i in range(1, ns - 1):
                    add(i, j, i, j, 1.0)
                    rhs[idx(i, j)] = valarr[i]
                continue
            h = grid._hr[j] if sideways > 0 else grid._hl[j]
            for i in range(1, ns - 1):
                row = idx(i, j)
                add(i, j, i, j, -sideways * 3.0 / (2 * h))
                add(i, j, i, j + sideways, sideways * 4.0 / (2 * h))
                add(i, j, i, j + 2 * sideways, -sideways * 1.0 / (2 * h))
                cross = -grid.s[i] * grid.Rp[j] / grid.R[j]
                add(i, j, i + 1, j, cross / (2 * ds))
                add(i, j, i - 1, j, -cross / (2 * ds))
                rhs[row] = 0.0
                if model.kind == "POT" and field_old.background is not None:
                    # slip applies to the physical field: move the analytic
                    # background's tangential derivative to the data side
                    rhs[row] = -field_old.background_derivs["ft"][i, j]

    # inner cutoff edge
    for j in range(nt):
        row = idx(0, j)
        if bc.inner_kind == "dirichlet":
            add(0, j, 0, j, 1.0)
            rhs[row] = bc.inner_value[j]
            continue
        add(0, j, 0, j, -3.0 / (2 * ds))
        add(0, j, 1, j, 4.0 / (2 * ds))
        add(0, j, 2, j, -1.0 / (2 * ds))
        gval = 0.0
        if bc.inner_kind == "neumann_value":
            gval = bc.inner_value[j] * grid.R[j]     # f_r = g -> u_s = g R
        if model.kind == "POT" and field_old.background is not None and bc.inner_kind != "dirichlet":
            bg = field_old.background_derivs
            gval = gval - bg["fr"][0, j] * grid.R[j]
        rhs[row] = gval

    # outer edge
    def theta_d1_stencil(j):
        """First theta-derivative weights, one-sided at non-periodic ends."""
        if grid.periodic or 0 < j < nt - 1:
            return ((j - 1, wl1[j]), (j, wc1[j]), (j + 1, wr1[j]))
        th = grid.theta
        if j == 0:
            h0, h1 = th[1] - th[0], th[2] - th[1]
            return ((0, -(2 * h0 + h1) / (h0 * (h0 + h1))),
                    (1, (h0 + h1) / (h0 * h1)),
                    (2, -h0 / (h1 * (h0 + h1))))
        hN, hM = th[-1] - th[-2], th[-2] - th[-3]
        return ((nt - 1, (2 * hN + hM) / (hN * (hN + hM))),
                (nt - 2, -(hN + hM) / (hN * hM)),
                (nt - 3, hN / (hM * (hN + hM))))

    trace_rho = pot_trace_rho
    if trace_rho is None and np.any(bc.outer_kind == POT_CONORMAL):
        trace_rho = _outer_trace_rho(model, field_old, bc)
    i = ns - 1
    for j in range(nt):
        row = idx(i, j)
        kind = bc.outer_kind[j]
        if kind in (DIRICHLET, ONE_POINT):
            val = bc.outer_dirichlet[j]
            add(i, j, i, j, 1.0)
            if model.kind == "POT" and field_old.background is not None:
                bg = field_old.background_derivs
                val = val - bg["f"][i, j]
            rhs[row] = val
            continue
        if kind == OBLIQUE_RH:
            up = bc.oblique_upstream
            source_trace = (oblique_trace[j] if oblique_trace is not None
                            else field_old.values[i, j])
            trace = max(source_trace, up + bc.entropy_floor)
            ob = oblique_coeffs(model, trace, up, grid.R[j], grid.Rp[j])
            cs = (ob.beta1 - ob.beta2 * grid.Rp[j]) / grid.R[j]
            add(i, j, i, j, cs * 3.0 / (2 * ds))
            add(i, j, i - 1, j, cs * (-4.0) / (2 * ds))
            add(i, j, i - 2, j, cs * 1.0 / (2 * ds))
            for jj, w in theta_d1_stencil(j):
                add(i, j, i, jj, ob.beta2 * w)
            rhs[row] = 0.0
            continue
        if kind == POT_CONORMAL:
            R = grid.R[j]
            Rp = grid.Rp[j]
            th = grid.theta[j]
            u1 = bc.pot_data["u1"]
            rho1 = bc.pot_data["rho1"]
            # D phi . nu_u = (rho1/rho) D phi1 . nu_u,  nu_u = e_r - (r'/r) e_t
            cs = 1.0 / R + Rp**2 / R**3
            ct = -Rp / R**2
            add(i, j, i, j, cs * 3.0 / (2 * ds))
            add(i, j, i - 1, j, cs * (-4.0) / (2 * ds))
            add(i, j, i - 2, j, cs * 1.0 / (2 * ds))
            for jj, w in theta_d1_stencil(j):
                add(i, j, i, jj, ct * w)
            dphi1_nu = (u1 * np.cos(th) - R) + (Rp / R) * u1 * np.sin(th)
            val = (rho1 / trace_rho[j]) * dphi1_nu
            if field_old.background is not None:
                bg = field_old.background_derivs
                val = val - (bg["fr"][i, j] - (Rp / R**2) * bg["ft"][i, j])
            rhs[row] = val
            continue
        raise ValueError(f"unknown outer condition {kind}")

    rows = np.concatenate([np.atleast_1d(np.asarray(r, dtype=np.int64)) for r in rows])
    cols = np.concatenate([np.atleast_1d(np.asarray(c, dtype=np.int64)) for c in cols])
    vals = np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in vals])
    A = csc_matrix((vals, (rows, cols)), shape=(ns * nt, ns * nt))
    return A, rhs


def _row_scale(A, rhs):
    d = np.abs(A).max(axis=1).toarray().ravel()
    d[d == 0.0] = 1.0
    from scipy.sparse import diags
    D = diags(1.0 / d)
    return D @ A, rhs / d


def _solve_linear(A, rhs):
    A2, b2 = _row_scale(A.tocsr(), rhs)
    A2 = A2.tocsc()
    try:
        lu = splu(A2)
        x = lu.solve(b2)
    except RuntimeError as exc:
        raise LinearSolveError(str(exc)) from exc
    res = np.linalg.norm(A2 @ x - b2)
    scale = np.linalg.norm(b2) + np.linalg.norm(x) * 1e-3 + 1e-30
    if not np.isfinite(res) or res > 1e-9 * scale:
        raise LinearSolveError(f"linear solve residual {res:.3e} too large")
    return x


def nonlinear_residual(model, field, eps, source=None, floored=False):
    """Max-norm interior residual of the (regularized) equation."""
    res = interior_residual_grid(model, field, eps=eps)
    if source is not None:
        res = res - source
    g = field.grid
    mask = np.zeros_like(res, dtype=bool)
    mask[1:-1, :] = True
    if not g.periodic:
        mask[:, 0] = False
        mask[:, -1] = False
    for j in g.meta.get("junctions", {}):
        mask[:, j] = False
    return float(np.max(np.abs(res[mask]))), res, mask


def ellipticity_margins(model, field):
    """Signed margin at every node (positive = elliptic)."""
    g = field.grid
    r = g.r
    if model.kind == "PG":
        return field.values - r**2
    if model.kind == "NWS":
        return field.values ** (model.gamma - 1.0) - r**2
    t = _pot_full_tables(field)
    gradsq = t["fr"] ** 2 + (t["ft"] / r) ** 2
    c2 = potential_sound_speed_sq(model, gradsq, t["f"], field.b0)
    return c2 - gradsq


def picard_solve(model: GasModel, grid: FixedDomainGrid, bc: BoundarySpec, epsilon,
                 init: SelfSimilarField, tol=1e-8, max_iter=80, omega=0.7,
                 source=None, history: PicardHistory | None = None,
                 check_ellipticity=True, margin_floor=-1e-9, boundary_relax=0.35,
                 pot_boundary_relax=1.0):
    """Frozen-coefficient iteration at fixed epsilon.

    Converges when the max-norm interior residual of the regularized
    equation drops below ``tol``.  Raises ConvergenceError, LinearSolveError
    or EllipticityLossError (interior margin below ``margin_floor``).
    """
    if history is None:
        history = PicardHistory()
    field = init
    floored = epsilon == 0.0
    src = None
    if source is not None:
        src = source(grid.r, grid.theta[None, :].repeat(grid.ns, axis=0)) \
            if callable(source) else np.asarray(source)
    local_res = []
    prev_vals = np.array(field.values)
    slow_trace = np.array(field.values[-1, :])
    slow_rho = (_outer_trace_rho(model, field, bc)
                if np.any(bc.outer_kind == POT_CONORMAL) else None)
    for it in range(max_iter):
        A, rhs = assemble(model, grid, bc, epsilon, field, source=src,
                          floor_degenerate=floored, oblique_trace=slow_trace,
                          pot_trace_rho=slow_rho)
        x = _solve_linear(A, rhs)
        new_vals = x.reshape(grid.ns, grid.ntheta)
        upd = (1.0 - omega) * field.values + omega * new_vals
        inc = float(np.max(np.abs(upd - field.values)))
        field = field.copy_with(upd)
        slow_trace = (1.0 - boundary_relax) * slow_trace + boundary_relax * upd[-1, :]
        if slow_rho is not None:
            slow_rho = ((1.0 - pot_boundary_relax) * slow_rho
                        + pot_boundary_relax * _outer_trace_rho(model, field, bc))
        resid, _, _ = nonlinear_residual(model, field, epsilon, src)
        history.residuals.append(resid)
        history.epsilons.append(epsilon)
        history.increments.append(inc)
        local_res.append(resid)
        if resid <= tol:
            break
        # period-2 limit cycle (eigenvalue near or below -1 at this
        # relaxation): averaging the two cycle states annihilates the
        # oscillating mode; damp mildly as well in case it reappears
        if (len(local_res) >= 4 and resid > 10 * tol
                and abs(local_res[-1] - local_res[-3]) < 0.15 * local_res[-1]
                and abs(local_res[-2] - local_res[-4]) < 0.15 * local_res[-2]
                and local_res[-1] > 0.5 * local_res[-3]):
            field = field.copy_with(0.5 * (field.values + prev_vals))
            omega = max(0.25, omega * 0.8)
            local_res.clear()
        prev_vals = np.array(field.values)
        if inc <= 1e-12 * (1.0 + np.max(np.abs(field.values))):
            # iterates stalled at the discrete fixed point; accept only if the
            # residual sits at its round-off floor near the requested tol
            if resid <= 1e3 * tol:
                break
            raise ConvergenceError(
                f"picard iteration stalled at residual {resid:.3e} (tol {tol:g})")
    else:
        raise ConvergenceError(
            f"picard iteration did not reach tol={tol:g} in {max_iter} steps "
            f"(residual {resid:.3e})")
    if check_ellipticity:
        marg = ellipticity_margins(model, field)
        interior = marg[1:-1, 1:-1] if not grid.periodic else marg[1:-1, :]
        if interior.min() < margin_floor:
            ij = np.unravel_index(np.argmin(interior), interior.shape)
            raise EllipticityLossError(
                f"interior ellipticity margin {interior.min():.3e} at node {ij}",
                location=ij, margin=float(interior.min()))
    return field, history


def epsilon_continuation(model, grid, bc, eps_schedule, init, tol=1e-8,
                         max_iter=80, omega=0.7, source=None,
                         history: PicardHistory | None = None, **kw):
    """Warm-started chain of picard solves over a decreasing eps schedule.

    Returns (field, history); history.cauchy_increments holds the sup-norm
    steps between consecutive eps levels and ``cauchy_monotone`` records
    whether the last two increments decreased.
    """
    eps_schedule = list(eps_schedule)
    if not eps_schedule:
        raise ValueError("empty epsilon schedule")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("epsilon schedule must be strictly decreasing")
    if eps_schedule[-1] < 0.0:
        raise ValueError("epsilon must stay non-negative")
    if history is None:
        history = PicardHistory()
    field = init
    prev = None
    for eps in eps_schedule:
        field, history = picard_solve(model, grid, bc, eps, field, tol=tol,
                                      max_iter=max_iter, omega=omega, source=source,
                                      history=history, **kw)
        if prev is not None:
            history.cauchy_increments.append(float(np.max(np.abs(field.values - prev))))
        prev = np.array(field.values)
    cz = history.cauchy_increments
    if len(cz) >= 2 and not (cz[-1] <= cz[-2] + 1e-14):
        history.cauchy_monotone = False
    return field, history


def default_eps_schedule(sonic_radius, eps_min=1e-4, include_zero=True):
    eps = 0.1 * sonic_radius**2
    out = []
    while eps > eps_min:
        out.append(eps)
        eps *= 0.5
    out.append(eps_min)
    if include_zero:
        out.append(0.0)
    return out


def potential_solve(setup, grid, shock, epsilon, init=None, tol=1e-8,
                    max_iter=80, omega=0.7, eps_schedule=None,
                    history=None):
    """Interior pseudo-potential solve for the reflection problem.

    Boundary data: Dirichlet phi = phi2 on the sonic arc, mass-flux conormal
    against state (1) on the shock sector, slip on the wedge and symmetry
    edges, and the rest-state radial derivative phi_r = -r on the inner
    cutoff.  The unknown is carried as a perturbation of the state-(2)
    pseudo-potential so constant states are reproduced to rounding.
    """
    st2 = setup.derived["state2"]
    bg = PolarQuadraticBackground(st2.vel[0], st2.vel[1], st2.offset)
    bc = reflection_bc(setup, grid)
    b0 = setup.derived["b0"]
    if init is None:
        init = SelfSimilarField(grid, np.zeros((grid.ns, grid.ntheta)), "phi",
                                b0=b0, background=bg)
    if eps_schedule is not None:
        return epsilon_continuation(setup.model, grid, bc, eps_schedule, init,
                                    tol=tol, max_iter=max_iter, omega=omega,
                                    history=history)
    return picard_solve(setup.model, grid, bc, epsilon, init, tol=tol,
                        max_iter=max_iter, omega=omega, history=history)


def reflection_bc(setup, grid):
    """BoundarySpec of the reflection problem on a built grid."""
    nt = grid.ntheta
    kind = np.where(grid.sector_kind == 1, POT_CONORMAL, DIRICHLET).astype(int)
    # junction column belongs to the sonic arc (Dirichlet anchor)
    vals = np.zeros(nt)
    st2 = setup.derived["state2"]
    x = grid.R * np.cos(grid.theta)
    y = grid.R * np.sin(grid.theta)
    vals = st2.phi(x, y)
    rinner = grid.s_min * grid.R
    inner_g = -rinner  # rest-state radial pseudo-velocity
    return BoundarySpec(
        outer_kind=kind,
        outer_dirichlet=vals,
        pot_data={"rho1": setup.derived["rho1"], "u1": setup.derived["u1"]},
        lateral_kind="neumann",
        inner_kind="neumann_value",
        inner_value=inner_g,
    )
