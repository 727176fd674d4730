"""Reusable numerical checks: manufactured solutions, scaling laws and empirical constants.

Each check returns a `Check` carrying the measured value, the tolerance it was
compared against and the verdict, so reports never show a bare number.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flow as fl
from . import norms as nm
from . import spectral as sp
from .discretization import Grid, build_grid, l2_inner
from .geometry import GraphField, Hypersurface, nonlinear_error


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tol": self.tol,
                "passed": bool(self.passed), "detail": self.detail}


def observed_orders(errors) -> list:
    e = np.asarray(errors, dtype=float)
    return [float(x) for x in np.log2(e[:-1] / e[1:])]


# ---------------------------------------------------------------------------
# spectral hygiene


def spectral_hygiene(data: sp.SpectralData, orth_tol=1e-10, res_tol=1e-8) -> list:
    out = []
    G = data.gram()
    orth = float(np.max(np.abs(G - np.eye(data.I)))) if data.I else 0.0
    out.append(Check("orthonormality", orth, orth_tol, orth < orth_tol))
    res = data.residuals()
    scaled = float(np.max(res / np.maximum(1.0, np.abs(data.lambdas)))) if data.I else 0.0
    out.append(Check("eigen_residual", scaled, res_tol, scaled < res_tol))
    return out


def semigroup_law(sg: sp.Semigroup, count=20, seed=0, tol=1e-8) -> Check:
    rng = np.random.default_rng(seed)
    g = sg.data.grid
    worst = 0.0
    for _ in range(count):
        f = rng.standard_normal(g.N_s)
        s1, s2 = rng.uniform(0.05, 2.0, 2)
        lhs = sg.apply(sg.apply(f, s1), s2)
        rhs = sg.apply(f, s1 + s2)
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs)))))
    return Check("semigroup_law", worst, tol, worst < tol, {"fields": count})


def kernel_symmetry(sg: sp.Semigroup, count=50, seed=1) -> Check:
    rng = np.random.default_rng(seed)
    nodes = sg.data.grid.interior
    worst = 0.0
    for _ in range(count):
        i, j = rng.choice(nodes, 2)
        t = float(rng.uniform(0.1, 4.0))
        worst = max(worst, abs(sg.kernel(int(i), int(j), t) - sg.kernel(int(j), int(i), t)))
    return Check("kernel_symmetry", worst, 0.0, worst == 0.0)


def mass_bound(sg: sp.Semigroup, times=(0.5, 1.0, 2.0)) -> Check:
    """(e^{Lt} 1)(x) <= e^{sup|A|^2 t} at every interior node."""
    g = sg.data.grid
    A2 = float(np.max(g.fields.A2))
    one = np.ones(g.N_s)
    worst = 0.0
    for t in times:
        m = sg.apply(one, t)[g.interior]
        worst = max(worst, float(np.max(m / np.exp(A2 * t))))
    return Check("mass_bound", worst, 1.0 + 1e-10, worst <= 1.0 + 1e-10)


# ---------------------------------------------------------------------------
# manufactured solutions for the linear solver


def bump(s, S):
    """g = (1 - (s/S)^2)^2 e^{-s^2} and its first two derivatives."""
    q = 1 - (s / S) ** 2
    q1 = -2 * s / S**2
    q2 = -2 / S**2
    p, p1, p2 = q**2, 2 * q * q1, 2 * q1**2 + 2 * q * q2
    e = np.exp(-(s**2))
    e1, e2 = -2 * s * e, (4 * s**2 - 2) * e
    return p * e, p1 * e + p * e1, p2 * e + 2 * p1 * e1 + p * e2


@dataclass
class Manufactured:
    """u* = e^{kappa t} g(s) with the continuum source h = (d/dt - L) u*."""

    kappa: float = 1.0

    def exact(self, grid: Grid, t):
        g, _, _ = bump(grid.s, grid.S)
        return np.exp(self.kappa * np.asarray(t))[:, None] * g

    def profile_source(self, grid: Grid):
        g, g1, g2 = bump(grid.s, grid.S)
        return self.kappa * g - grid.fields.jacobi(g, g1, g2)

    def source(self, grid: Grid, t):
        return np.exp(self.kappa * np.asarray(t))[:, None] * self.profile_source(grid)

    def terminal(self, ctx: fl.FlowContext):
        g, _, _ = bump(ctx.grid.s, ctx.grid.S)
        c = ctx.coefficients(g)
        return c[ctx.neg]

    def semi_discrete(self, ctx: fl.FlowContext):
        """Exact-in-time solution of the spatially discrete problem, mode by mode."""
        hc = ctx.coefficients(self.profile_source(ctx.grid))
        a0 = self.terminal(ctx)
        k, t, T0 = self.kappa, ctx.t, ctx.t[0]
        uc = np.zeros((len(t), len(ctx.lam)))
        for i, lam in enumerate(ctx.lam):
            part = hc[i] / (k + lam)
            if lam < 0:
                j = list(ctx.neg).index(i)
                uc[:, i] = part * np.exp(k * t) + (a0[j] - part) * np.exp(-lam * t)
            else:
                uc[:, i] = part * (np.exp(k * t) - np.exp(k * T0 - lam * (t - T0)))
        return uc @ ctx.V.T

    def solve(self, ctx: fl.FlowContext):
        h = nm.SpaceTimeField(ctx.t, self.source(ctx.grid, ctx.t), np.zeros((len(ctx.t), ctx.grid.N_s)))
        a = np.zeros(ctx.data.I)
        a[ctx.data.mode_of == 0] = self.terminal(ctx)
        return fl.solve_linear(ctx, fl.LinearProblem(h, a, ctx.params)), h, a


def flow_context(surface: Hypersurface, S: float, N_s: int, M: int, params: nm.WeightParams,
                 T: float | None = None, K: int = 2) -> fl.FlowContext:
    grid = build_grid(surface, S, N_s, K)
    data = sp.negative_spectrum(surface, grid)
    T = fl.default_horizon(data) if T is None else T
    return fl.FlowContext(data, fl.time_grid(T, M), params)


def mms_orders(surface, params, S=4.0, levels=(101, 201, 401), M_levels=(64, 128, 256),
               M_space=256, N_time=201, kappa=1.0, T=None):
    """Spatial errors against u* and temporal errors against the exact semi-discrete solution."""
    mf = Manufactured(kappa)
    space = []
    for N in levels:
        ctx = flow_context(surface, S, N, M_space, params, T)
        sd = mf.semi_discrete(ctx)
        space.append(float(np.max(np.abs(sd - mf.exact(ctx.grid, ctx.t)))))
    time = []
    for M in M_levels:
        ctx = flow_context(surface, S, N_time, M, params, T)
        u, _, _ = mf.solve(ctx)
        time.append(float(np.max(np.abs(u.values - mf.semi_discrete(ctx)))))
    return space, time


def decay_ratios(surface, params, S=4.0, levels=((101, 128), (201, 256)), kappa=1.0):
    """l2 and weighted decay ratios for the manufactured problem on successive refinements."""
    mf = Manufactured(kappa)
    rows = []
    for N, M in levels:
        ctx = flow_context(surface, S, N, M, params)
        u, h, a = mf.solve(ctx)
        rows.append((fl.l2_decay_check(ctx, u, h, a).ratio, fl.weighted_decay_check(ctx, u, h, a).ratio))
    return rows


def schauder_ratio(ctx: fl.FlowContext, count=5, seed=0) -> float:
    """max over random sources of ||u(t)||_{C^{2,a}_b} / sup_{s<=t}(||u||_{C^0_b} + ||h||_{C^{0,a}_{b+2}})."""
    rng = np.random.default_rng(seed)
    p = ctx.params
    g = ctx.grid
    worst = 0.0
    for _ in range(count):
        coef = rng.standard_normal(6)
        prof = ctx.V[:, :6] @ coef
        rate = 2 * p.delta0 + rng.uniform(0.0, 1.0)
        h = np.exp(rate * ctx.t)[:, None] * prof
        a = np.zeros(ctx.data.I)
        a[ctx.data.mode_of == 0] = rng.standard_normal(int(np.sum(ctx.data.mode_of == 0)))
        hf = nm.SpaceTimeField(ctx.t, h, np.zeros_like(h))
        u = fl.solve_linear(ctx, fl.LinearProblem(hf, a, p))
        lhs = nm.slice_c2a(g, u.values, p)
        rhs = np.maximum.accumulate(np.max(g.rho**p.beta * np.abs(u.values), axis=1) + nm.slice_c0a(g, h, p))
        worst = max(worst, float(np.max(lhs / rhs)))
    return worst


# ---------------------------------------------------------------------------
# nonlinear error


def error_sup(grid: Grid, u) -> float:
    st = grid.stencils
    E = nonlinear_error(grid.surface, GraphField(grid.fields, u, st.d1(u), st.d2(u)))
    return float(np.max(np.abs(E[2:-2])))


def quadratic_scaling(grid: Grid, w, eps=(1e-2, 5e-3, 2.5e-3), tol=0.10) -> Check:
    vals = [error_sup(grid, e * w) / e**2 for e in eps]
    drift = float((max(vals) - min(vals)) / max(vals))
    return Check("error_quadratic_scaling", drift, tol, drift < tol, {"ratios": vals, "eps": list(eps)})


def lipschitz_ratio(ctx: fl.FlowContext, count=50, seed=0, size=1e-2) -> Check:
    """||E(v) - E(u)||_{C^{0,a}_{b+2}} / ((||u|| + ||v||)||v - u||) with C^{2,a}_b norms on the right."""
    rng = np.random.default_rng(seed)
    g, p = ctx.grid, ctx.params
    basis = ctx.V[:, :8]
    worst = 0.0
    for _ in range(count):
        u = basis @ rng.standard_normal(8)
        u *= size * rng.uniform(0.2, 1.0) / np.max(np.abs(u))
        w = basis @ rng.standard_normal(8)
        v = u + 0.1 * size * w / np.max(np.abs(w))
        Eu = error_term_slice(g, u)
        Ev = error_term_slice(g, v)
        num = nm.slice_c0a(g, Ev - Eu, p)[0]
        den = (nm.slice_c2a(g, u, p)[0] + nm.slice_c2a(g, v, p)[0]) * nm.slice_c2a(g, v - u, p)[0]
        worst = max(worst, float(num / den))
    return Check("error_lipschitz", worst, np.inf, bool(np.isfinite(worst)), {"pairs": count})


def error_term_slice(grid: Grid, u):
    st = grid.stencils
    E = nonlinear_error(grid.surface, GraphField(grid.fields, u, st.d1(u), st.d2(u)))
    E[[0, -1]] = 0.0
    return E


# ---------------------------------------------------------------------------
# nonlinear construction


def mu_family(ctx: fl.FlowContext, eps: float, tol=1e-10, max_iter=20, direction=None):
    """Flows at |a| in {eps, eps/2, eps/4}, both signs; returns rows of diagnostics."""
    d = np.zeros(ctx.data.I)
    d[0] = 1.0
    if direction is not None:
        d = np.asarray(direction, dtype=float)
    rows = []
    for scale in (1.0, 0.5, 0.25):
        a = eps * scale * d
        fp = fl.construct_ancient_flow(ctx, a, tol, max_iter)
        fm = fl.construct_ancient_flow(ctx, -a, tol, max_iter)
        na = float(np.linalg.norm(a))
        mirror = nm.star_norm(ctx.grid, fp.u + fm.u, ctx.params)
        size = nm.star_norm(ctx.grid, fp.u, ctx.params)
        lead_p = ctx.coefficients(fp.u.values[-1])[0]
        lead_m = ctx.coefficients(fm.u.values[-1])[0]
        rows.append({
            "a_norm": na,
            "mu_plus": fp.diagnostics["mu_estimate"],
            "mu_minus": fm.diagnostics["mu_estimate"],
            "contraction_plus": fp.contraction_ratio(),
            "contraction_minus": fm.contraction_ratio(),
            "iterations": max(fp.iterations, fm.iterations),
            "mirror_over_a2": mirror / na**2,
            "size_over_a": size / na,
            "distinct": nm.star_norm(ctx.grid, fp.u - fm.u, ctx.params) / na,
            "leading_signs": [float(np.sign(lead_p)), float(np.sign(lead_m))],
        })
    return rows


def spread(values) -> float:
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / v.max())
