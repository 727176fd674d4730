"""Linear Duhamel solver with a terminal spectral condition and the Picard loop for ancient flows.

Time runs over the uniform grid t_m = -T + m T / M, m = 0..M.  All fields are
axisymmetric, so the linear problem is solved in the k = 0 eigenbasis of the
truncated operator.  Within each step the source is interpolated linearly and
the exponential integrals are evaluated in closed form, which keeps the stiff
high modes exact instead of merely stable.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GraphDegenerateError, GraphField, eta_ball, graph_mean_curvature, nonlinear_error
from .io import save_npz, write_csv
from .norms import SpaceTimeField, WeightParams, c2_zero, slice_c0a, slice_c2a, star_norm
from .spectral import SpectralData, iota_minus, iota_minus_dt

log = logging.getLogger(__name__)


class FlowError(RuntimeError):
    pass


class GrowthError(FlowError):
    """Source grows too fast backward in time for the weighted Duhamel integrals."""


class BallExitError(FlowError):
    """Iterate left the small-data ball where the graph equation is valid."""


class NonConvergenceError(FlowError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = list(history)


def time_grid(T: float, M: int) -> np.ndarray:
    if not T > 0 or M < 2:
        raise ValueError(f"invalid time grid T={T}, M={M}")
    t = np.linspace(-T, 0.0, M + 1)
    t[-1] = 0.0
    return t


def default_horizon(data: SpectralData) -> float:
    return 12.0 / -data.lambdas[-1] if data.I else 12.0


def _phi12(z):
    """phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2, with Taylor series near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 0.1
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(zs)
    p1 = em1 / zs
    p2 = (em1 - zs) / zs**2
    zz = np.where(small, z, 0.0)
    ser1 = np.zeros_like(zz)
    ser2 = np.zeros_like(zz)
    fact = 1.0
    for j in range(12):
        fact *= j + 1  # (j+1)!
        ser1 += zz**j / fact
        ser2 += zz**j / (fact * (j + 2))
    return np.where(small, ser1, p1), np.where(small, ser2, p2)


@dataclass(frozen=True, eq=False)
class LinearProblem:
    h: SpaceTimeField  # only the values are used
    a: np.ndarray
    params: WeightParams


@dataclass(eq=False)
class FlowContext:
    """Everything fixed across a construction: spectrum, time grid, weights."""

    data: SpectralData
    t: np.ndarray
    params: WeightParams
    _coef: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ms = self.data.modes[0]
        self.lam = ms.lambdas
        self.V = ms.vecs
        self.neg = np.flatnonzero(self.lam < 0)
        self.pos = np.flatnonzero(self.lam >= 0)
        dt = float(self.t[1] - self.t[0])
        if not np.allclose(np.diff(self.t), dt, rtol=1e-9, atol=0):
            raise ValueError("time grid must be uniform")
        self.dt = dt
        z_neg = self.lam[self.neg] * dt
        z_pos = -self.lam[self.pos] * dt
        p1n, p2n = _phi12(z_neg)
        p1p, p2p = _phi12(z_pos)
        # J_k = dt (h_k p2 + h_{k+1}(p1 - p2)) + e^{z} J_{k+1}
        self._neg = (np.exp(z_neg), dt * p2n, dt * (p1n - p2n))
        # U_{k+1} = e^{z} U_k + dt (h_k (p1 - p2) + h_{k+1} p2)
        self._pos = (np.exp(z_pos), dt * (p1p - p2p), dt * p2p)

    @property
    def grid(self):
        return self.data.grid

    @property
    def surface(self):
        return self.data.surface

    def coefficients(self, values) -> np.ndarray:
        """Mode-0 eigen-coefficients of every time slice, shape (M + 1, N_modes)."""
        return (np.asarray(values) * self.grid.mass) @ self.V

    def a_to_mode0(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.shape != (self.data.I,):
            raise ValueError(f"parameter vector has length {a.size}, expected I={self.data.I}")
        if np.any((self.data.mode_of != 0) & (a != 0)):
            raise ValueError("only axisymmetric (k=0) directions are supported")
        return a[self.data.mode_of == 0]

    def iota(self, a) -> SpaceTimeField:
        return SpaceTimeField(self.t, iota_minus(self.data, a, self.t), iota_minus_dt(self.data, a, self.t))


def check_growth(ctx: FlowContext, h_values) -> float:
    """Reject sources that are non-finite or grow faster than e^{2 delta0 |t|} backward.

    Returns e^{-2 delta0 t}||h||_{C^0_{beta+2}} at t = -T divided by its max over [-T/2, 0].
    """
    h = np.asarray(h_values, dtype=float)
    if not np.all(np.isfinite(h)):
        raise GrowthError("source contains non-finite values")
    p = ctx.params
    w = np.exp(-2 * p.delta0 * ctx.t) * np.max(ctx.grid.rho ** (p.beta + 2) * np.abs(h), axis=1)
    late = w[ctx.t >= ctx.t[0] / 2].max()
    if late == 0:
        if w[0] > 0:
            raise GrowthError("source vanishes near t = 0 but not in the far past")
        return 0.0
    ratio = float(w[0] / late)
    if ratio > 10.0:
        raise GrowthError(f"weighted source at t=-T is {ratio:.3g} times its late-time size")
    return ratio


def solve_modes(ctx: FlowContext, hc: np.ndarray, a0: np.ndarray) -> np.ndarray:
    """Eigen-coefficients of the solution given source coefficients hc (M + 1, N_modes)."""
    M1 = hc.shape[0]
    uc = np.zeros_like(hc)
    if len(ctx.neg):
        E, c0, c1 = ctx._neg
        hn = hc[:, ctx.neg]
        J = np.zeros((M1, len(ctx.neg)))
        for k in range(M1 - 2, -1, -1):
            J[k] = c0 * hn[k] + c1 * hn[k + 1] + E * J[k + 1]
        lam = ctx.lam[ctx.neg]
        uc[:, ctx.neg] = a0 * np.exp(-np.multiply.outer(ctx.t, lam)) - J
    E, c0, c1 = ctx._pos
    hp = hc[:, ctx.pos]
    U = np.zeros((M1, len(ctx.pos)))
    for k in range(M1 - 1):
        U[k + 1] = E * U[k] + c0 * hp[k] + c1 * hp[k + 1]
    uc[:, ctx.pos] = U
    return uc


def solve_linear(ctx: FlowContext, problem: LinearProblem, check: bool = True) -> SpaceTimeField:
    """Solution of (d/dt - L)u = h on [-T, 0] with Pi_{<0} u(0) = iota(a)(0).

    The time derivative returned is L u + h at each time node, which the
    discrete solution satisfies exactly.
    """
    h = np.asarray(problem.h.values, dtype=float)
    if check:
        check_growth(ctx, h)
    a0 = ctx.a_to_mode0(problem.a)
    hc = ctx.coefficients(h)
    uc = solve_modes(ctx, hc, a0)
    values = uc @ ctx.V.T
    dt_values = (-ctx.lam * uc + hc) @ ctx.V.T
    return SpaceTimeField(ctx.t, values, dt_values)


def tail_bound(ctx: FlowContext) -> np.ndarray:
    """e^{(delta0 + lambda_min^+)(t + T)} per time node: size of the truncated lower limit."""
    lmin = float(ctx.lam[ctx.pos].min()) if len(ctx.pos) else 0.0
    return np.exp(-(ctx.params.delta0 + lmin) * (ctx.t - ctx.t[0]))


# ---------------------------------------------------------------------------
# decay estimates of the linear problem


@dataclass
class DecayReport:
    name: str
    ratio: float
    lhs: float
    rhs: float
    finite: bool

    def as_dict(self):
        return dict(self.__dict__)


def _l2(ctx: FlowContext, values) -> np.ndarray:
    return np.sqrt(np.sum(ctx.grid.mass * np.asarray(values) ** 2, axis=-1))


def l2_decay_check(ctx: FlowContext, u: SpaceTimeField, h: SpaceTimeField, a=None) -> DecayReport:
    """sup_t e^{-delta' t}||u - iota(a)||_{L2} against (int |e^{-delta s}||h||_{L2}|^2 ds)^{1/2}.

    delta' = delta0 and delta = 2 delta0.
    """
    d0 = ctx.params.delta0
    w = u.values - (ctx.iota(a).values if a is not None else 0.0)
    lhs = float(np.max(np.exp(-d0 * ctx.t) * _l2(ctx, w)))
    g = (np.exp(-2 * d0 * ctx.t) * _l2(ctx, h.values)) ** 2
    rhs = float(np.sqrt(np.trapezoid(g, ctx.t)))
    if rhs == 0:
        return DecayReport("l2", 0.0 if lhs == 0 else np.inf, lhs, rhs, lhs == 0)
    r = lhs / rhs
    return DecayReport("l2", r, lhs, rhs, bool(np.isfinite(r)))


def weighted_decay_check(ctx: FlowContext, u: SpaceTimeField, h: SpaceTimeField, a=None) -> DecayReport:
    """sup_t e^{-delta0 t}||u - iota(a)||_{C^{2,alpha}_beta} against sup e^{-2 delta0 t}||h||_{C^{0,alpha}_{beta+2}}."""
    p = ctx.params
    w = u.values - (ctx.iota(a).values if a is not None else 0.0)
    lhs = float(np.max(np.exp(-p.delta0 * ctx.t) * slice_c2a(ctx.grid, w, p)))
    rhs = float(np.max(np.exp(-2 * p.delta0 * ctx.t) * slice_c0a(ctx.grid, h.values, p)))
    if rhs == 0:
        return DecayReport("weighted", 0.0 if lhs == 0 else np.inf, lhs, rhs, lhs == 0)
    r = lhs / rhs
    return DecayReport("weighted", r, lhs, rhs, bool(np.isfinite(r)))


# ---------------------------------------------------------------------------
# the nonlinear map


def graph_field(ctx: FlowContext, values) -> GraphField:
    st = ctx.grid.stencils
    return GraphField(ctx.grid.fields, values, st.d1(values), st.d2(values))


def error_term(ctx: FlowContext, u: SpaceTimeField) -> SpaceTimeField:
    """E(u) on every slice, with the time derivative field left at zero (unused)."""
    try:
        E = nonlinear_error(ctx.surface, graph_field(ctx, u.values))
    except GraphDegenerateError as exc:
        raise BallExitError(str(exc)) from exc
    E[:, [0, -1]] = 0.0
    return SpaceTimeField(ctx.t, E, np.zeros_like(E))


def fixed_point_map(ctx: FlowContext, u: SpaceTimeField, a) -> SpaceTimeField:
    eta = eta_ball(ctx.surface)
    size = float(np.max(c2_zero(ctx.grid, u.values)))
    if size > eta:
        raise BallExitError(f"iterate has C^2 size {size:.3g} > eta = {eta:.3g}")
    return solve_linear(ctx, LinearProblem(error_term(ctx, u), np.asarray(a, float), ctx.params))


# ---------------------------------------------------------------------------
# diagnostics


def mcf_residual(ctx: FlowContext, u: SpaceTimeField, layers: int = 2):
    """|du/dt - v H_Gamma| with du/dt from second-order time differences.

    Returns (field, sup over nodes at least `layers` away from s = +-S, excluding the first slice).
    """
    dudt = np.gradient(u.values, ctx.t, axis=0, edge_order=2)
    try:
        H, v = graph_mean_curvature(ctx.surface, graph_field(ctx, u.values))
    except GraphDegenerateError as exc:
        raise BallExitError(str(exc)) from exc
    res = np.abs(dudt - v * H)
    inner = res[1:, layers:-layers]
    return res, float(inner.max()) if inner.size else 0.0


def decay_rate(ctx: FlowContext, u: SpaceTimeField, floor: float = 1e-14):
    """Least-squares slope of log||u(t)||_{L2} over [-T, -T/2], or None if the signal underflows."""
    sel = ctx.t <= ctx.t[0] / 2
    norms = _l2(ctx, u.values[sel])
    if np.any(norms < floor):
        return None
    slope, _ = np.polyfit(ctx.t[sel], np.log(norms), 1)
    return float(slope)


def terminal_projection_error(ctx: FlowContext, u: SpaceTimeField, a) -> float:
    a0 = ctx.a_to_mode0(a)
    if not len(a0):
        return 0.0
    c = ctx.coefficients(u.values[-1])[ctx.neg]
    return float(np.max(np.abs(c - a0)))


# ---------------------------------------------------------------------------
# construction


@dataclass
class AncientFlow:
    a: np.ndarray
    u: SpaceTimeField
    history: list
    iterations: int
    diagnostics: dict

    def contraction_ratio(self) -> float:
        return contraction_ratio(self.history)

    def report(self) -> dict:
        return {
            "a": [float(x) for x in self.a],
            "iterations": self.iterations,
            "star_norm_history": [float(x) for x in self.history],
            "contraction_ratio": self.contraction_ratio(),
            **self.diagnostics,
        }

    def write_snapshots(self, path, s, stride: int = 1):
        g = self.u
        rows = ((t, sj, v) for t, row in zip(g.t[::stride], g.values[::stride]) for sj, v in zip(s, row))
        write_csv(path, ["t", "s", "u"], rows)


def contraction_ratio(history, noise: float = 1e-13) -> float:
    """Largest ratio of successive update sizes while the updates stay above roundoff."""
    h = np.asarray(history, dtype=float)
    if len(h) < 2 or h[0] == 0:
        return 0.0
    keep = h[1:] > noise * max(1.0, h[0])
    r = h[1:][keep] / h[:-1][keep]
    return float(r.max()) if r.size else 0.0


def _fingerprint(ctx: FlowContext, a) -> str:
    h = hashlib.sha256()
    for arr in (ctx.t, ctx.grid.s, np.asarray(a, dtype=float),
                np.array([ctx.params.beta, ctx.params.alpha, ctx.params.delta0])):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return h.hexdigest()


def _load_checkpoint(path: Path, ctx: FlowContext, a):
    with np.load(path) as z:
        if str(z["fingerprint"]) != _fingerprint(ctx, a):
            raise FlowError(f"checkpoint {path} belongs to a different run")
        u = SpaceTimeField(ctx.t, z["values"].copy(), z["dt_values"].copy())
        return u, list(z["history"]), int(z["iteration"])


def construct_ancient_flow(ctx: FlowContext, a, tol: float = 1e-10, max_iter: int = 20,
                           checkpoint=None, resume: bool = False, stop_after=None) -> AncientFlow:
    """Picard iteration u_{m+1} = S(u_m; a) from u_0 = iota(a) until ||u_{m+1} - u_m||_* < tol.

    With `checkpoint` set, the iterate is saved after every step; `resume`
    restarts from the saved iterate.  `stop_after` interrupts the loop (for
    exercising resume) by raising NonConvergenceError.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    ctx.a_to_mode0(a)
    path = Path(checkpoint) if checkpoint else None
    if resume and path is not None and path.exists():
        u, history, it = _load_checkpoint(path, ctx, a)
        log.info("resumed from %s at iteration %d", path, it)
    else:
        u, history, it = ctx.iota(a), [], 0
    p = ctx.params
    while not (history and history[-1] < tol):
        if it >= max_iter:
            raise NonConvergenceError(f"no convergence in {max_iter} iterations", history)
        if stop_after is not None and it >= stop_after:
            raise NonConvergenceError(f"interrupted after {it} iterations", history)
        nxt = fixed_point_map(ctx, u, a)
        history.append(star_norm(ctx.grid, nxt - u, p))
        u, it = nxt, it + 1
        log.debug("iteration %d: update %.3e", it, history[-1])
        if path is not None:
            save_npz(path, values=u.values, dt_values=u.dt_values, history=np.array(history),
                     iteration=np.array(it), fingerprint=np.array(_fingerprint(ctx, a)))
    if len(history) > 1 and contraction_ratio(history) >= 1:
        raise NonConvergenceError("updates are not contracting", history)
    return AncientFlow(a, u, history, it, diagnose(ctx, u, a))


def diagnose(ctx: FlowContext, u: SpaceTimeField, a) -> dict:
    a = np.asarray(a, dtype=float)
    iota = ctx.iota(a)
    norm_a = float(np.linalg.norm(a))
    _, res = mcf_residual(ctx, u)
    dev = star_norm(ctx.grid, u - iota, ctx.params)
    l2 = _l2(ctx, u.values)
    return {
        "terminal_projection_error": terminal_projection_error(ctx, u, a),
        "mcf_residual": res,
        "decay_slope": decay_rate(ctx, u),
        "mu_estimate": dev / norm_a**2 if norm_a else 0.0,
        "deviation_star": dev,
        "backward_size": float(l2[0]),
        "terminal_size": float(l2[-1]),
        "tail_bound_at_0": float(tail_bound(ctx)[-1]),
    }


def find_epsilon(ctx: FlowContext, direction, eps0: float = 0.05, tol: float = 1e-10,
                 max_iter: int = 20, min_eps: float = 1e-6):
    """Halve eps from eps0 until the flow for eps*direction contracts with ratio < 1/2."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    eps = eps0
    while eps >= min_eps:
        try:
            flow = construct_ancient_flow(ctx, eps * d, tol, max_iter)
            if flow.contraction_ratio() < 0.5:
                return eps, flow
        except (BallExitError, NonConvergenceError) as exc:
            log.info("eps=%.3g rejected: %s", eps, exc)
        eps /= 2
    raise NonConvergenceError(f"no admissible eps above {min_eps}", [])
