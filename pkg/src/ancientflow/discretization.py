"""Truncated profile grids, angular-mode reduction and the discrete Jacobi operator.

The profile interval [-S, S] is discretized uniformly in the surface's own
parameter (conformal for the n=2 catenoid).  Fields are mode-pure: a profile
array f together with a mode label (k, branch) stands for f(s) Y(w), where Y
is the k-th angular harmonic scaled like cos(k t), i.e. with mean square 1 for
k = 0 and 1/2 for k >= 1.

For each k the operator -L_k = -(Lap_k + |A|^2) is assembled in conservative
flux form, symmetric with respect to the trapezoidal measure, with Dirichlet
conditions at s = +-S.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh_tridiagonal

from .io import write_csv
from .geometry import GeometryError, Hypersurface, Stencils, SurfaceFields, metric_at


class GridError(ValueError):
    pass


def harmonic_multiplicity(n: int, k: int) -> int:
    """Dimension of degree-k spherical harmonics on S^{n-1}."""
    if n == 2:
        return 1 if k == 0 else 2
    return comb(k + n - 1, n - 1) - (comb(k + n - 3, n - 1) if k >= 2 else 0)


def angular_eigenvalue(n: int, k: int) -> int:
    return k * (k + n - 2)


def mode_gamma(k: int) -> float:
    return 1.0 if k == 0 else 0.5


def _arc_length(surface: Hypersurface, s: np.ndarray) -> np.ndarray:
    """Signed arc length from the neck, by 8-point Gauss-Legendre on every cell."""
    x, w = leggauss(8)
    i0 = int(np.argmin(np.abs(s)))
    a = np.concatenate(([0.0], s)) if s[i0] != 0 else s
    a = np.sort(a)
    lo, hi = a[:-1], a[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * x[None, :]
    cell = half * (np.sqrt(metric_at(surface, pts).g_ss) @ w)
    cum = np.concatenate(([0.0], np.cumsum(cell)))
    cum -= cum[np.searchsorted(a, 0.0)]
    return np.interp(s, a, cum)


@dataclass(frozen=True, eq=False)
class Grid:
    surface: Hypersurface
    S: float
    N_s: int
    K: int
    s: np.ndarray
    h: float
    sigma: np.ndarray  # signed arc length from the neck
    rho: np.ndarray
    weights: np.ndarray  # profile quadrature weights (area element, covering, trapezoid)
    mass: np.ndarray  # weights times |S^{n-1}|
    axis: int | None  # node index on the rotation axis (plane only)
    fields: SurfaceFields
    stencils: Stencils

    @property
    def interior(self) -> np.ndarray:
        return np.arange(1, self.N_s - 1)

    @property
    def r_euclid(self) -> np.ndarray:
        """1 + |x| at the nodes."""
        return 1.0 + self.surface.position_norm(self.s)

    @property
    def delta_g(self) -> float:
        """Pair-distance bound used by the Hölder seminorm."""
        r0 = float(self.surface.profile(0.0).r)
        return 1.0 if r0 <= 0 else min(1.0, 2 * np.pi * r0 / 4)

    def dump_csv(self, path, op: "ModeOperator | None" = None):
        diag = np.full(self.N_s, np.nan)
        off = np.full(self.N_s, np.nan)
        if op is not None:
            diag[op.idx] = op.diag / op.mass
            off[op.idx[:-1]] = op.off / np.sqrt(op.mass[:-1] * op.mass[1:])
        rows = zip(range(self.N_s), self.s, self.rho, self.fields.A2, diag, off)
        write_csv(path, ["node", "s", "rho", "A2", "diag", "offdiag"], rows)


def build_grid(surface: Hypersurface, S: float, N_s: int, K: int) -> Grid:
    if not S > 0 or N_s < 16 or K < 0:
        raise GridError(f"invalid grid sizes S={S}, N_s={N_s}, K={K}")
    if S > surface.S * (1 + 1e-12):
        raise GeometryError(f"grid half-length {S} exceeds the surface domain {surface.S}")
    s = np.linspace(-S, S, N_s)
    s[N_s // 2] = 0.0 if N_s % 2 else s[N_s // 2]
    h = float(s[1] - s[0])
    sigma = _arc_length(surface, s)
    area = metric_at(surface, s).area_element
    w = h * area / surface.covering
    w[0] *= 0.5
    w[-1] *= 0.5
    axis = None
    if surface.kind == "plane" and N_s % 2:
        axis = N_s // 2
        n = surface.n
        # cell [-h/2, h/2] around the axis, halved for the double cover
        w[axis] = (h / 2) ** n / n
    mass = w * surface.angular_measure
    return Grid(surface, float(S), int(N_s), int(K), s, h, sigma, np.sqrt(1 + sigma**2),
                w, mass, axis, SurfaceFields(surface, s), Stencils(s))


def l2_inner(grid: Grid, u, v, mode_u=(0, 0), mode_v=(0, 0)) -> float:
    """L^2(Sigma) inner product of two mode-pure fields."""
    if tuple(mode_u) != tuple(mode_v):
        return 0.0
    return mode_gamma(mode_u[0]) * float(np.sum(grid.mass * np.asarray(u) * np.asarray(v)))


@dataclass(frozen=True, eq=False)
class ModeOperator:
    """-L_k restricted to the unknown nodes `idx`: mass^{-1} K with K symmetric tridiagonal."""

    k: int
    grid: Grid
    idx: np.ndarray
    mass: np.ndarray
    diag: np.ndarray
    off: np.ndarray
    parity: int | None  # plane: admissible diameter parity (-1)^k

    @property
    def multiplicity(self) -> int:
        return harmonic_multiplicity(self.grid.surface.n, self.k)

    @property
    def gamma(self) -> float:
        return mode_gamma(self.k)

    def stiffness(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def dense(self) -> np.ndarray:
        return self.stiffness() / self.mass[:, None]

    def apply(self, u) -> np.ndarray:
        """(-L_k u) on the full grid; u is read on `idx` only (Dirichlet elsewhere)."""
        u = np.asarray(u, dtype=float)
        x = u[..., self.idx]
        y = self.diag * x
        y[..., :-1] += self.off * x[..., 1:]
        y[..., 1:] += self.off * x[..., :-1]
        out = np.zeros_like(u)
        out[..., self.idx] = y / self.mass
        return out

    def jacobi(self, u) -> np.ndarray:
        return -self.apply(u)

    def symmetric_tridiagonal(self):
        sq = np.sqrt(self.mass)
        return self.diag / self.mass, self.off / (sq[:-1] * sq[1:])

    def _fold(self):
        """Restrict the plane operator to the parity subspace of the diameter chart."""
        g = self.grid
        pos = [i for i, j in enumerate(self.idx) if g.s[j] > 0]
        ax = [i for i, j in enumerate(self.idx) if j == g.axis]
        mirror = {j: i for i, j in enumerate(self.idx)}
        Q = np.zeros((len(self.idx), len(ax) * (self.parity == 1) + len(pos)))
        c = 0
        if self.parity == 1 and ax:
            Q[ax[0], c] = 1.0
            c += 1
        for i in pos:
            Q[i, c] = 1.0
            Q[mirror[g.N_s - 1 - self.idx[i]], c] = float(self.parity)
            c += 1
        Kr = Q.T @ self.stiffness() @ Q
        Mr = (Q * self.mass[:, None]).T @ Q
        return Q, np.diag(Kr).copy(), np.diag(Kr, 1).copy(), np.diag(Mr).copy()

    def eig(self):
        """All eigenpairs of -L_k; eigenvectors on the full grid, unit norm in the mode inner product."""
        if self.parity is None:
            Q, d, e, m = None, self.diag, self.off, self.mass
        else:
            Q, d, e, m = self._fold()
        sq = np.sqrt(m)
        lam, Y = eigh_tridiagonal(d / m, e / (sq[:-1] * sq[1:]))
        X = Y / sq[:, None]
        if Q is not None:
            X = Q @ X
        X /= np.sqrt(self.gamma)
        vecs = np.zeros((self.grid.N_s, len(lam)))
        vecs[self.idx] = X
        # deterministic sign: first clearly nonzero entry positive
        big = np.abs(vecs) > 1e-3 * np.abs(vecs).max(axis=0)
        first = np.argmax(big, axis=0)
        vecs *= np.where(vecs[first, np.arange(len(lam))] < 0, -1.0, 1.0)
        return lam, vecs


def _potential(surface: Hypersurface, grid: Grid, k: int, F: np.ndarray) -> np.ndarray:
    f = grid.fields
    n = surface.n
    r = f.profile.r
    with np.errstate(divide="ignore"):
        inv_r2 = np.where(np.abs(r) > 0, 1.0 / np.where(r == 0, 1.0, r) ** 2, np.inf)
    if k == 0:
        return -f.A2
    if surface.kind == "plane":
        return angular_eigenvalue(n, k) * inv_r2
    # Calibrate the mode-1 potential so the discrete operator annihilates the
    # translation Jacobi field nu_r exactly; otherwise its exponentially small
    # truncated eigenvalue is swamped by O(h^2) error and can turn negative.
    psi = f.nr
    Kpsi = np.zeros_like(psi)
    Kpsi[1:-1] = F[:-1] * (psi[1:-1] - psi[:-2]) + F[1:] * (psi[1:-1] - psi[2:])
    V1 = -Kpsi / (grid.mass * psi)
    return V1 + (angular_eigenvalue(n, k) - angular_eigenvalue(n, 1)) * inv_r2


def assemble_jacobi(surface: Hypersurface, grid: Grid, k: int) -> ModeOperator:
    if k < 0 or k > grid.K:
        raise GridError(f"mode {k} outside 0..K={grid.K}")
    n = surface.n
    smid = 0.5 * (grid.s[1:] + grid.s[:-1])
    met = metric_at(surface, smid)
    q = np.sqrt(met.g_angular) ** (n - 1) / np.sqrt(met.g_ss)
    F = surface.angular_measure * q / grid.h / surface.covering
    V = _potential(surface, grid, k, F)
    idx = grid.interior
    if grid.axis is not None and k >= 1:
        idx = idx[idx != grid.axis]
    full_diag = np.zeros(grid.N_s)
    full_diag[:-1] += F
    full_diag[1:] += F
    with np.errstate(invalid="ignore"):
        full_diag += grid.mass * V
    diag = full_diag[idx]
    adjacent = np.diff(idx) == 1
    off = np.where(adjacent, -F[idx[:-1]], 0.0)
    parity = (-1) ** k if surface.kind == "plane" else None
    return ModeOperator(k, grid, idx, grid.mass[idx], diag, off, parity)
