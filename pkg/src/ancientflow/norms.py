"""Weighted sup, derivative and parabolic Hölder norms of fields on the profile grid.

Every field here is axisymmetric, so spatial pairs live on the meridian and the
distance between two nodes is their arc-length separation.  Tensor quantities
(the gradient and the Hessian) are compared in the orthonormal frame
(e_s, e_rot); the rotational Hessian entry carries multiplicity n - 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import Grid
from .geometry import GraphField
from .io import write_csv


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightParams:
    beta: float
    alpha: float
    delta0: float

    def validate(self, n: int, lam_I: float | None = None) -> "WeightParams":
        if not self.beta > n:
            raise WeightError(f"beta={self.beta} must exceed n={n}")
        if not 0 < self.alpha < 1:
            raise WeightError(f"alpha={self.alpha} must lie in (0, 1)")
        if not self.delta0 > 0:
            raise WeightError(f"delta0={self.delta0} must be positive")
        if lam_I is not None and lam_I < 0 and not self.delta0 < -lam_I:
            raise WeightError(f"delta0={self.delta0} must be below -lambda_I={-lam_I:.6g}")
        return self


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    t: np.ndarray  # uniform, ascending, ending at 0
    values: np.ndarray  # (M + 1, N_s)
    dt_values: np.ndarray

    @classmethod
    def from_values(cls, t, values) -> "SpaceTimeField":
        """Time derivative by second-order differences (one-sided at both ends)."""
        t = np.asarray(t, dtype=float)
        values = np.asarray(values, dtype=float)
        return cls(t, values, np.gradient(values, t, axis=0, edge_order=2))

    @classmethod
    def zeros(cls, t, N_s: int) -> "SpaceTimeField":
        z = np.zeros((len(t), N_s))
        return cls(np.asarray(t, dtype=float), z, z.copy())

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __add__(self, other):
        return SpaceTimeField(self.t, self.values + other.values, self.dt_values + other.dt_values)

    def __sub__(self, other):
        return SpaceTimeField(self.t, self.values - other.values, self.dt_values - other.dt_values)

    def scale(self, c: float) -> "SpaceTimeField":
        return SpaceTimeField(self.t, c * self.values, c * self.dt_values)

    def stencil_residual(self) -> float:
        fd = np.gradient(self.values, self.t, axis=0, edge_order=2)
        return float(np.max(np.abs(fd - self.dt_values)))


def _graph(grid: Grid, u) -> GraphField:
    u = np.asarray(u, dtype=float)
    st = grid.stencils
    return GraphField(grid.fields, u, st.d1(u), st.d2(u))


def _frame(grid: Grid, u, order: int):
    """Frame components of nabla^order u, stacked on a trailing axis, and their weights."""
    if order == 0:
        return np.asarray(u, dtype=float)[..., None], np.ones(1)
    g = _graph(grid, u)
    if order == 1:
        return g.grad_u[..., None], np.ones(1)
    hss, hrot = g.hess_u
    return np.stack([hss, hrot], axis=-1), np.array([1.0, grid.surface.n - 1.0])


def _magnitude(comp, cw):
    return np.sqrt(np.sum(cw * comp**2, axis=-1))


def weighted_c0(grid: Grid, u, beta: float) -> float:
    """max over nodes (and time slices) of rho^beta |u|."""
    return float(np.max(grid.rho**beta * np.abs(u)))


def weighted_l2(grid: Grid, u, beta: float) -> float:
    """Weighted L^2 norm with measure rho^{-n} dV, for diagnostics only."""
    n = grid.surface.n
    w = grid.mass * grid.rho ** (2 * beta - n)
    return float(np.sqrt(np.sum(w * np.asarray(u) ** 2, axis=-1)).max())


def weighted_ck(grid: Grid, field, k: int, beta: float) -> float:
    """Sum over 2i + j <= k of sup |rho^{2i+j+beta} D_t^i nabla^j f|.

    `field` may be a SpaceTimeField or a plain array (static in time).
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    vals = field.values if isinstance(field, SpaceTimeField) else np.asarray(field, dtype=float)
    total = 0.0
    for j in range(k + 1):
        total += float(np.max(grid.rho ** (j + beta) * _magnitude(*_frame(grid, vals, j))))
    if k == 2 and isinstance(field, SpaceTimeField):
        total += float(np.max(grid.rho ** (2 + beta) * np.abs(field.dt_values)))
    return total


def dyadic_offsets(grid: Grid) -> list:
    """Node offsets 1, 2, 4, ... whose meridian length stays within delta(g)."""
    out, p = [], 1
    step = float(np.min(np.diff(grid.sigma)))
    while p < grid.N_s and p * step <= grid.delta_g:
        out.append(p)
        p *= 2
    return out


def holder_seminorm(grid: Grid, T, alpha: float, beta_eff: float, t=None,
                    comp_weights=None, time_offsets=(0, 1, 4)) -> float:
    """Parabolic Hölder bracket of a (possibly vector-valued) field over the dyadic pair set.

    T has shape ([M,] N_s) for scalars or ([M,] N_s, c) when `comp_weights`
    is given; the time axis is present exactly when `t` is.
    """
    T = np.asarray(T, dtype=float)
    if comp_weights is None:
        cw, T = np.ones(1), T[..., None]
    else:
        cw = np.asarray(comp_weights, dtype=float)
    if t is None:
        T, tt, time_offsets = T[None], np.zeros(1), (0,)
    else:
        tt = np.asarray(t, dtype=float)
    rho, sig = grid.rho, grid.sigma
    dg = grid.delta_g
    best = 0.0
    M, N = T.shape[:2]
    for q in time_offsets:
        if q >= M:
            continue
        dtq = abs(tt[q] - tt[0]) if q else 0.0
        A, B = T[: M - q], T[q:]
        for p in [0] + dyadic_offsets(grid):
            if p == 0 and q == 0:
                continue
            for x0, y0 in ((slice(0, N - p), slice(p, N)), (slice(p, N), slice(0, N - p))):
                d = np.abs(sig[x0] - sig[y0])
                ok = d <= dg
                if not np.any(ok):
                    continue
                diff = _magnitude(A[:, x0] - B[:, y0], cw)
                den = d**alpha + dtq ** (alpha / 2)
                wt = (rho[x0] + rho[y0] + np.sqrt(dtq)) ** beta_eff
                val = np.where(ok, wt * diff / den, 0.0)
                best = max(best, float(np.max(val)))
                if p == 0:
                    break
    return best


def slice_c2a(grid: Grid, u, params: WeightParams) -> np.ndarray:
    """||u(., t)||_{C^{2,alpha}_beta} for every slice (rows of u)."""
    u = np.atleast_2d(u)
    b, a = params.beta, params.alpha
    out = np.zeros(len(u))
    for j in range(3):
        comp, cw = _frame(grid, u, j)
        out += np.max(grid.rho ** (j + b) * _magnitude(comp, cw), axis=-1)
    comp, cw = _frame(grid, u, 2)
    out += np.array([holder_seminorm(grid, c, a, b - 2 - a, comp_weights=cw) for c in comp])
    return out


def slice_c0a(grid: Grid, w, params: WeightParams, shift: float = 2.0) -> np.ndarray:
    """||w(., t)||_{C^{0,alpha}_{beta+shift}} for every slice."""
    w = np.atleast_2d(w)
    b, a = params.beta + shift, params.alpha
    sup = np.max(grid.rho**b * np.abs(w), axis=-1)
    return sup + np.array([holder_seminorm(grid, c, a, b - a) for c in w])


def star_trace(grid: Grid, field: SpaceTimeField, params: WeightParams) -> np.ndarray:
    """e^{-delta0 t}(||u||_{C^{2,alpha}_beta} + ||u_t||_{C^{0,alpha}_{beta+2}}) per time slice."""
    s = slice_c2a(grid, field.values, params) + slice_c0a(grid, field.dt_values, params)
    return np.exp(-params.delta0 * field.t) * s


def star_norm(grid: Grid, field: SpaceTimeField, params: WeightParams) -> float:
    return float(np.max(star_trace(grid, field, params)))


def c2_zero(grid: Grid, u) -> np.ndarray:
    """Unweighted C^2 norm per slice, used for the small-data ball."""
    u = np.atleast_2d(u)
    return sum(np.max(_magnitude(*_frame(grid, u, j)), axis=-1) for j in range(3))


def write_norm_trace(path, t, trace):
    write_csv(path, ["t", "weighted_norm"], zip(t, trace))
