"""Differential geometry of minimal hypersurfaces of revolution and normal graphs over them.

A hypersurface of revolution in R^{n+1} is swept out by a profile curve
s -> (r(s), z(s)) rotated about the z-axis:

    X(s, w) = (r(s) w, z(s)),   w in S^{n-1}.

Orientation: the unit normal is nu = (z', -r') / |gamma'| (radial part
first).  On the catenoids this points away from the axis.  Mean curvature is
H = div(nu), so a sphere with outward normal has H = n / R.

Normal graphs are Gamma = {X + u nu}.  `graph_mean_curvature` returns the
normal speed of mean curvature flow in the graphical gauge, i.e. the scalar
H_Gamma with du/dt = v * H_Gamma.  Its linearization at u = 0 is the Jacobi
operator L u = Lap u + |A|^2 u.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import gamma, pi

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

KINDS = ("plane", "catenoid", "n_catenoid")


class GeometryError(ValueError):
    """Raised for evaluations outside the truncated profile domain."""


class GraphDegenerateError(ValueError):
    """The normal graph leaves the embeddedness ball around the background surface."""


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)


@dataclass(frozen=True)
class Profile:
    """Profile curve and its first three s-derivatives, sampled at nodes."""

    r: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    z: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray

    @property
    def speed(self):
        return np.hypot(self.r1, self.z1)

    def normal(self):
        """(nu_r, nu_z) and their first two s-derivatives."""
        m = self.speed
        m1 = (self.r1 * self.r2 + self.z1 * self.z2) / m
        m2 = (self.r2**2 + self.r1 * self.r3 + self.z2**2 + self.z1 * self.z3 - m1**2) / m

        def quotient(f, f1, f2):
            q = f / m
            q1 = f1 / m - f * m1 / m**2
            q2 = f2 / m - 2 * f1 * m1 / m**2 - f * m2 / m**2 + 2 * f * m1**2 / m**3
            return q, q1, q2

        nr = quotient(self.z1, self.z2, self.z3)
        nz = quotient(-self.r1, -self.r2, -self.r3)
        return nr, nz


def _ncatenoid_rhs(_, y, n):
    r, _z, phi = y
    return [np.cos(phi), np.sin(phi), -(n - 1) * np.sin(phi) / r]


@dataclass(frozen=True)
class Hypersurface:
    """Minimal hypersurface of revolution truncated to profile parameter |s| <= S.

    kind='plane' uses r = s (signed distance along a diameter, so the
    parametrization covers the plane twice); kind='catenoid' is the standard
    catenoid (cosh s cos t, cosh s sin t, s) in R^3 in its conformal
    parameter; kind='n_catenoid' is the higher-dimensional catenoid in
    arc-length parametrization, integrated from the neck r(0)=1, r'(0)=0.
    """

    kind: str
    n: int = 2
    S: float = 8.0
    _ode: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown surface kind {self.kind!r}; expected one of {KINDS}")
        if self.n < 2:
            raise GeometryError("ambient dimension minus one must be >= 2")
        if self.kind == "catenoid" and self.n != 2:
            raise GeometryError("kind='catenoid' is the n=2 catenoid; use 'n_catenoid' for n>2")
        if not self.S > 0:
            raise GeometryError("truncation bound S must be positive")
        if self.kind == "n_catenoid":
            sol = solve_ivp(_ncatenoid_rhs, (0.0, self.S * (1 + 1e-12) + 1e-9),
                            [1.0, 0.0, pi / 2], args=(self.n,), method="DOP853",
                            rtol=1e-13, atol=1e-14, dense_output=True)
            object.__setattr__(self, "_ode", sol.sol)

    @property
    def covering(self) -> int:
        """Number of times the (s, w) chart covers the surface."""
        return 2 if self.kind == "plane" else 1

    @property
    def angular_measure(self) -> float:
        return sphere_area(self.n)

    def _check(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(np.abs(s) > self.S * (1 + 1e-12)):
            raise GeometryError(f"profile coordinate outside [-{self.S}, {self.S}]")
        return s

    def profile(self, s) -> Profile:
        s = self._check(s)
        zero = np.zeros_like(s)
        if self.kind == "plane":
            return Profile(s.copy(), zero + 1.0, zero, zero, zero, zero, zero, zero)
        if self.kind == "catenoid":
            c, sh = np.cosh(s), np.sinh(s)
            return Profile(c, sh, c, sh, s.copy(), zero + 1.0, zero, zero)
        n = self.n
        a = np.abs(s)
        r, z, phi = self._ode(a.ravel()).reshape(3, *a.shape) if a.ndim else self._ode(float(a))
        cp, sp_ = np.cos(phi), np.sin(phi)
        p1 = -(n - 1) * sp_ / r
        p2 = -(n - 1) * (cp * p1 * r - sp_ * cp) / r**2
        r1, z1 = cp, sp_
        r2, z2 = -sp_ * p1, cp * p1
        r3 = -cp * p1**2 - sp_ * p2
        z3 = -sp_ * p1**2 + cp * p2
        sg = np.where(s < 0, -1.0, 1.0)
        # r even, z odd in s
        return Profile(r, sg * r1, r2, sg * r3, sg * z, z1, sg * z2, z3)

    def position_norm(self, s):
        """Euclidean norm |x| of the point X(s, w)."""
        p = self.profile(s)
        return np.hypot(p.r, p.z)

    @cached_property
    def sup_A(self) -> float:
        if self.kind == "plane":
            return 0.0
        s = np.linspace(-self.S, self.S, 2001)
        return float(np.sqrt(np.max(curvature_at(self, s).A2)))


@dataclass(frozen=True)
class Metric:
    g_ss: np.ndarray
    g_angular: np.ndarray  # coefficient of the round metric on S^{n-1}
    area_element: np.ndarray  # per unit angular measure


@dataclass(frozen=True)
class Curvature:
    kappa_profile: np.ndarray
    kappa_rotation: np.ndarray  # multiplicity n-1
    A2: np.ndarray
    H: np.ndarray


def metric_at(surface: Hypersurface, s) -> Metric:
    p = surface.profile(s)
    m = p.speed
    return Metric(m**2, p.r**2, m * np.abs(p.r) ** (surface.n - 1))


def _rotation_curvature(Z1, Z2, R, R1, m):
    # Z'/(R m); on the axis (plane only) the L'Hopital limit Z''/(R' m)
    R = np.asarray(R)
    axis = np.abs(R) < 1e-14
    safe = np.where(axis, 1.0, R)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(axis, Z2 / (R1 * m), Z1 / (safe * m))


def curvature_at(surface: Hypersurface, s) -> Curvature:
    p = surface.profile(s)
    m = p.speed
    kp = (p.r1 * p.z2 - p.z1 * p.r2) / m**3
    kr = _rotation_curvature(p.z1, p.z2, p.r, p.r1, m)
    n = surface.n
    return Curvature(kp, kr, kp**2 + (n - 1) * kr**2, kp + (n - 1) * kr)


# ---------------------------------------------------------------------------
# finite-difference stencils


def fd_weights(offsets, order: int) -> np.ndarray:
    """Weights w with sum_i w_i f(x + o_i h) ~ h^order f^(order)(x)."""
    o = np.asarray(offsets, dtype=float)
    V = np.vander(o, increasing=True).T
    rhs = np.zeros(len(o))
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs)


def fd_matrix(N: int, h: float, order: int, accuracy: int = 4) -> sp.csr_matrix:
    """Sparse derivative matrix on a uniform grid, centered inside and one-sided near the ends."""
    half = (accuracy + order - 1) // 2
    width = 2 * half + 1
    if N < width + 1:
        raise ValueError("grid too small for the requested stencil")
    rows, cols, vals = [], [], []
    centered = fd_weights(np.arange(-half, half + 1), order)
    for j in range(N):
        if half <= j < N - half:
            offs = np.arange(-half, half + 1)
            w = centered
        else:
            npts = accuracy + order
            start = 0 if j < half else N - npts
            offs = np.arange(start, start + npts) - j
            w = fd_weights(offs, order)
        rows.extend([j] * len(offs))
        cols.extend((j + offs).tolist())
        vals.extend(w.tolist())
    return sp.csr_matrix((np.array(vals) / h**order, (rows, cols)), shape=(N, N))


class Stencils:
    """4th-order first and second derivative operators along the profile grid."""

    def __init__(self, s: np.ndarray):
        s = np.asarray(s, dtype=float)
        h = np.diff(s)
        if not np.allclose(h, h[0], rtol=1e-10, atol=0):
            raise ValueError("stencils require a uniform profile grid")
        self.s = s
        self.h = float(h[0])
        self.D1 = fd_matrix(len(s), self.h, 1)
        self.D2 = fd_matrix(len(s), self.h, 2)

    def d1(self, u):
        return (self.D1 @ np.moveaxis(u, -1, 0)).T if u.ndim > 1 else self.D1 @ u

    def d2(self, u):
        return (self.D2 @ np.moveaxis(u, -1, 0)).T if u.ndim > 1 else self.D2 @ u


# ---------------------------------------------------------------------------
# background coefficient fields on a node set


class SurfaceFields:
    """Everything pointwise about the background surface at fixed nodes."""

    def __init__(self, surface: Hypersurface, s):
        self.surface = surface
        self.s = np.asarray(s, dtype=float)
        p = surface.profile(self.s)
        self.profile = p
        self.m = p.speed
        self.m1 = (p.r1 * p.r2 + p.z1 * p.z2) / self.m
        c = curvature_at(surface, self.s)
        self.A2 = c.A2
        self.H = c.H
        (self.nr, self.nr1, self.nr2), (self.nz, self.nz1, self.nz2) = p.normal()
        n = surface.n
        # rotational Hessian factor r'/(r m^2) with the axis limit 1/(s m^2) -> handled via r1/r
        axis = np.abs(p.r) < 1e-14
        self.axis = axis
        self.rot = np.where(axis, 0.0, p.r1 / (np.where(axis, 1.0, p.r) * self.m**2))
        self.lap_b = (n - 1) * self.rot - self.m1 / self.m**3

    def laplacian(self, u, du, d2u):
        """Laplace-Beltrami of an axisymmetric field from its s-derivatives."""
        n = self.surface.n
        out = d2u / self.m**2 + self.lap_b * du
        if np.any(self.axis):
            # (n-1) u'/r -> (n-1) u''/r' on the axis
            lim = d2u / self.m**2 + (n - 1) * d2u / (self.profile.r1 * self.m**2) - self.m1 / self.m**3 * du
            out = np.where(self.axis, lim, out)
        return out

    def jacobi(self, u, du, d2u):
        return self.laplacian(u, du, d2u) + self.A2 * u


@dataclass(frozen=True)
class GraphField:
    """Axisymmetric normal displacement u with its profile derivatives.

    `du`, `d2u` are s-derivatives; the covariant gradient and Hessian (in the
    orthonormal frame e_s, e_rot) are exposed as properties.
    Arrays may carry leading batch axes (e.g. time slices); the profile axis is last.
    """

    fields: SurfaceFields
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray

    @classmethod
    def from_values(cls, surface: Hypersurface, s, u, stencils: Stencils | None = None,
                    fields: SurfaceFields | None = None) -> "GraphField":
        st = stencils if stencils is not None else Stencils(s)
        sf = fields if fields is not None else SurfaceFields(surface, s)
        u = np.asarray(u, dtype=float)
        return cls(sf, u, st.d1(u), st.d2(u))

    @property
    def grad_u(self):
        return self.du / self.fields.m

    @property
    def hess_u(self):
        """(Hess_ss, Hess_rot) in the orthonormal frame; Hess_rot has multiplicity n-1."""
        f = self.fields
        hss = (self.d2u - f.m1 / f.m * self.du) / f.m**2
        hrot = f.rot * self.du
        if np.any(f.axis):
            hrot = np.where(f.axis, self.d2u / f.m**2, hrot)
        return hss, hrot

    def hess_norm(self):
        hss, hrot = self.hess_u
        return np.sqrt(hss**2 + (self.fields.surface.n - 1) * hrot**2)


def embedding_radius(surface: Hypersurface) -> float:
    """Largest admissible |u| for the embeddedness check |u| sup|A| < 1/2."""
    A = surface.sup_A
    return np.inf if A == 0 else 0.5 / A


def eta_ball(surface: Hypersurface) -> float:
    """Radius of the small-data ball in the C^2_0 norm: min(0.1, 1/(4 sup|A|))."""
    A = surface.sup_A
    return 0.1 if A == 0 else min(0.1, 0.25 / A)


def _graph_divergence(p: Profile, f: "SurfaceFields", u, u1, u2, n: int):
    """div N of the displaced profile and the tangential stretch c.

    The displaced tangent is c tau + u' nu with tau the unit profile tangent,
    so the geometry function is sqrt(1 + (u'/c)^2).
    """
    R = p.r + u * f.nr
    Z = p.z + u * f.nz
    R1 = p.r1 + u1 * f.nr + u * f.nr1
    Z1 = p.z1 + u1 * f.nz + u * f.nz1
    R2 = p.r2 + u2 * f.nr + 2 * u1 * f.nr1 + u * f.nr2
    Z2 = p.z2 + u2 * f.nz + 2 * u1 * f.nz1 + u * f.nz2
    mg = np.hypot(R1, Z1)
    k_prof = (R1 * Z2 - Z1 * R2) / mg**3
    k_rot = _rotation_curvature(Z1, Z2, R, R1, mg)
    m = np.hypot(p.r1, p.z1)
    c = m + u * (f.nr1 * p.r1 + f.nz1 * p.z1) / m
    return k_prof + (n - 1) * k_rot, c


class _Extended:
    """Attribute view casting float arrays to extended precision."""

    def __init__(self, obj, names):
        for k in names:
            setattr(self, k, np.asarray(getattr(obj, k), dtype=np.longdouble))


def graph_mean_curvature(surface: Hypersurface, field: GraphField):
    """Mean curvature speed H_Gamma and geometry function v of graph_Sigma(u).

    Returns (H_Gamma, v).  H_Gamma = -div(N) where N is the unit normal of the
    graph co-oriented with nu, so du/dt = v H_Gamma is mean curvature flow.

    The divergence is a sum of O(1) terms that cancel, so it is evaluated in
    extended precision and the background's own value (zero up to roundoff,
    since the surface is minimal) is subtracted.  This keeps the relative
    accuracy of H_Gamma uniform even when u is tiny.
    """
    f = field.fields
    if np.any(np.abs(field.u) * surface.sup_A >= 0.5):
        raise GraphDegenerateError("graph leaves the embeddedness ball |u| sup|A| < 1/2")
    p = _Extended(f.profile, ("r", "r1", "r2", "z", "z1", "z2"))
    fx = _Extended(f, ("nr", "nr1", "nr2", "nz", "nz1", "nz2"))
    ld = np.longdouble
    u, u1, u2 = (np.asarray(x, dtype=ld) for x in (field.u, field.du, field.d2u))
    div_u, c = _graph_divergence(p, fx, u, u1, u2, surface.n)
    zero = ld(0)
    div_0, _ = _graph_divergence(p, fx, zero, zero, zero, surface.n)
    if np.any(c <= 0):
        raise GraphDegenerateError("displaced profile folds over (tangential stretch <= 0)")
    v = np.sqrt(1 + (u1 / c) ** 2)
    return (-(div_u - div_0)).astype(float), v.astype(float)


def nonlinear_error(surface: Hypersurface, field: GraphField) -> np.ndarray:
    """E(u) = v H_Gamma - L u, evaluated pointwise with the same derivative data."""
    H, v = graph_mean_curvature(surface, field)
    return v * H - field.fields.jacobi(field.u, field.du, field.d2u)
