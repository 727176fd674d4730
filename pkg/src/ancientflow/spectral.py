"""Negative spectrum, Morse index, spectral projectors and the heat semigroup of L."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_gegenbauer

from .discretization import Grid, ModeOperator, assemble_jacobi, build_grid, l2_inner
from .geometry import Hypersurface


class KTooSmallError(ValueError):
    def __init__(self, k: int, lam: float):
        super().__init__(f"mode K={k} is not positive definite (lowest eigenvalue {lam:.3e}); increase K")
        self.k = k
        self.lam = lam


@dataclass(frozen=True, eq=False)
class ModeSpectrum:
    op: ModeOperator
    lambdas: np.ndarray  # eigenvalues of -L_k, ascending
    vecs: np.ndarray  # (N_s, count), unit norm in the mode inner product

    @property
    def k(self) -> int:
        return self.op.k


@dataclass(frozen=True, eq=False)
class SpectralData:
    surface: Hypersurface
    grid: Grid
    modes: dict
    lambdas: np.ndarray  # negative eigenvalues of -L, ascending, with multiplicity
    phis: np.ndarray  # (I, N_s) profile parts
    mode_of: np.ndarray  # angular mode k of each eigenfunction
    branch: np.ndarray  # harmonic index within the mode (0 = cos branch)

    @property
    def I(self) -> int:
        return len(self.lambdas)

    def label(self, j: int):
        return int(self.mode_of[j]), int(self.branch[j])

    def residuals(self) -> np.ndarray:
        """||L phi_i + lambda_i phi_i|| in L^2."""
        out = []
        for lam, phi, k in zip(self.lambdas, self.phis, self.mode_of):
            op = self.modes[int(k)].op
            r = op.jacobi(phi) + lam * phi
            out.append(np.sqrt(l2_inner(self.grid, r, r, (k, 0), (k, 0))))
        return np.array(out)

    def gram(self) -> np.ndarray:
        I = self.I
        G = np.zeros((I, I))
        for i in range(I):
            for j in range(I):
                G[i, j] = l2_inner(self.grid, self.phis[i], self.phis[j], self.label(i), self.label(j))
        return G

    def report(self) -> dict:
        return {
            "surface": {"kind": self.surface.kind, "n": self.surface.n},
            "S": self.grid.S,
            "N_s": self.grid.N_s,
            "K": self.grid.K,
            "I": self.I,
            "lambdas": [float(x) for x in self.lambdas],
            "mode_of": [int(k) for k in self.mode_of],
            "residuals": [float(r) for r in self.residuals()],
        }


def mode_spectra(surface: Hypersurface, grid: Grid, ks=None) -> dict:
    out = {}
    for k in (range(grid.K + 1) if ks is None else ks):
        op = assemble_jacobi(surface, grid, k)
        lam, vecs = op.eig()
        out[k] = ModeSpectrum(op, lam, vecs)
    return out


def negative_spectrum(surface: Hypersurface, grid: Grid) -> SpectralData:
    modes = mode_spectra(surface, grid)
    top = modes[grid.K]
    if top.lambdas[0] <= 0:
        raise KTooSmallError(grid.K, float(top.lambdas[0]))
    rows = []
    for k, ms in modes.items():
        for i in np.flatnonzero(ms.lambdas < 0):
            for b in range(ms.op.multiplicity):
                rows.append((float(ms.lambdas[i]), k, b, ms.vecs[:, i]))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    N = grid.N_s
    return SpectralData(
        surface, grid, modes,
        np.array([r[0] for r in rows]),
        np.array([r[3] for r in rows]).reshape(len(rows), N),
        np.array([r[1] for r in rows], dtype=int),
        np.array([r[2] for r in rows], dtype=int),
    )


def choose_K(surface: Hypersurface, S: float, N_s: int, k_max: int = 64, safety: int = 2) -> int:
    """Smallest K whose mode operator is positive definite, plus safety modes."""
    grid = build_grid(surface, S, N_s, k_max)
    for k in range(k_max + 1):
        if assemble_jacobi(surface, grid, k).eig()[0][0] > 0:
            return k + safety
    raise KTooSmallError(k_max, np.nan)


@dataclass
class MorseReport:
    index: int
    ladder: list
    indices: list
    lowest: list  # lowest eigenvalue of -L_0 per rung
    monotone: bool
    gaps: list
    cauchy: bool
    floor: float

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "ladder": [float(x) for x in self.ladder],
            "indices": list(map(int, self.indices)),
            "lowest": [float(x) for x in self.lowest],
            "monotone": bool(self.monotone),
            "gaps": [float(x) for x in self.gaps],
            "cauchy": bool(self.cauchy),
            "floor": self.floor,
        }


def default_ladder(S: float) -> list:
    return [S * f for f in (0.125, 0.25, 0.5, 0.75, 1.0)]


def morse_index(surface: Hypersurface, grid: Grid, ladder=None) -> MorseReport:
    """Index along a truncation ladder at fixed spacing; the index is the last rung.

    Gaps below `floor` (roundoff level) count as converged when checking that
    successive gaps of the lowest eigenvalue shrink.
    """
    ladder = sorted(default_ladder(grid.S) if ladder is None else ladder)
    indices, lowest = [], []
    for S in ladder:
        N = max(16, int(round(2 * S / grid.h)) + 1)
        if N % 2 != grid.N_s % 2:
            N += 1
        g = grid if np.isclose(S, grid.S) and N == grid.N_s else build_grid(surface, S, N, grid.K)
        data = negative_spectrum(surface, g)
        indices.append(data.I)
        lowest.append(float(data.modes[0].lambdas[0]))
    gaps = list(np.abs(np.diff(lowest)))
    floor = 1e-12 * max(1.0, max(abs(x) for x in lowest))
    eff = np.maximum(gaps, floor)
    cauchy = bool(np.all(np.diff(eff) <= 0)) if len(eff) > 1 else True
    monotone = bool(np.all(np.diff(indices) >= 0))
    return MorseReport(indices[-1], ladder, indices, lowest, monotone, gaps, cauchy, floor)


def sturm_count(op: ModeOperator, shift: float = 0.0) -> int:
    """Eigenvalues of -L_k below `shift` via sign changes of the LDL^T pivots (Sturm sequence)."""
    d, e = op.symmetric_tridiagonal() if op.parity is None else _folded(op)
    count = 0
    q = d[0] - shift
    count += q < 0
    for i in range(1, len(d)):
        q = d[i] - shift - e[i - 1] ** 2 / (q if q != 0 else 1e-300)
        count += q < 0
    return int(count)


def _folded(op: ModeOperator):
    _, d, e, m = op._fold()
    sq = np.sqrt(m)
    return d / m, e / (sq[:-1] * sq[1:])


def project_below(data: SpectralData, f, mu: float = 0.0, mode=(0, 0)) -> np.ndarray:
    """Sum over lambda_j < mu of <f, phi_j> phi_j (for a field in the given mode)."""
    out = np.zeros_like(np.asarray(f, dtype=float))
    for j in range(data.I):
        if data.lambdas[j] < mu and data.label(j) == tuple(mode):
            out = out + l2_inner(data.grid, f, data.phis[j], mode, mode) * data.phis[j]
    return out


def _axisymmetric_directions(data: SpectralData, a) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (data.I,):
        raise ValueError(f"parameter vector has length {a.size}, expected I={data.I}")
    if np.any((data.mode_of != 0) & (a != 0)):
        raise ValueError("only axisymmetric (k=0) directions are supported for time-dependent fields")
    return a


def iota_minus(data: SpectralData, a, t) -> np.ndarray:
    """sum_j a_j exp(-lambda_j t) phi_j; shape (len(t), N_s) for array t."""
    a = _axisymmetric_directions(data, a)
    t = np.asarray(t, dtype=float)
    if np.any(t > 0):
        raise ValueError("iota_minus is defined for t <= 0")
    fac = np.exp(-np.multiply.outer(t, data.lambdas)) * a
    return fac @ data.phis if data.I else np.zeros(t.shape + (data.grid.N_s,))


def iota_minus_dt(data: SpectralData, a, t) -> np.ndarray:
    a = _axisymmetric_directions(data, a)
    t = np.asarray(t, dtype=float)
    fac = -data.lambdas * np.exp(-np.multiply.outer(t, data.lambdas)) * a
    return fac @ data.phis if data.I else np.zeros(t.shape + (data.grid.N_s,))


def zonal_factor(n: int, k: int, angle: float) -> float:
    """Sum over the harmonic branches of mode k of Y(w)Y(w'), for our cos-like scaling."""
    from .discretization import harmonic_multiplicity, mode_gamma

    c = np.cos(angle)
    if n == 2:
        P = np.cos(k * angle)
    else:
        a = (n - 2) / 2
        P = eval_gegenbauer(k, a, c) / eval_gegenbauer(k, a, 1.0)
    return harmonic_multiplicity(n, k) * mode_gamma(k) * float(P)


@dataclass(eq=False)
class Semigroup:
    """e^{Lt} by eigen-synthesis over the truncated operators of every mode."""

    data: SpectralData
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def factors(self, t: float, k: int) -> np.ndarray:
        key = (float(t), int(k))
        with self._lock:
            hit = self._cache.get(key)
            if hit is None:
                hit = np.exp(-self.data.modes[k].lambdas * t)
                self._cache[key] = hit
        return hit

    def apply(self, f, t: float, k: int = 0) -> np.ndarray:
        if t < 0:
            raise ValueError("semigroup time must be nonnegative")
        ms = self.data.modes[k]
        f = np.asarray(f, dtype=float)
        c = ms.op.gamma * (ms.vecs.T @ (self.data.grid.mass * f))
        return ms.vecs @ (self.factors(t, k) * c)

    def kernel(self, i: int, j: int, t: float, angle: float = 0.0, nonnegative: bool = False) -> float:
        if t <= 0:
            raise ValueError("heat kernel requires t > 0")
        n = self.data.surface.n
        total = 0.0
        for k, ms in self.data.modes.items():
            fac = self.factors(t, k)
            if nonnegative:
                fac = np.where(ms.lambdas >= 0, fac, 0.0)
            # form the pair product first so swapping i and j is bitwise symmetric
            total += zonal_factor(n, k, angle) * float(np.sum(fac * (ms.vecs[i] * ms.vecs[j])))
        return total


def semigroup_apply(sg: Semigroup, f, t: float, k: int = 0) -> np.ndarray:
    return sg.apply(f, t, k)


def heat_kernel(sg: Semigroup, i: int, j: int, t: float, angle: float = 0.0) -> float:
    return sg.kernel(i, j, t, angle)


@dataclass
class KernelBoundReport:
    delta: float
    C: float
    c1: float
    c2: float
    fitted_c1: float
    fitted_c2: float
    diagonal_t1: float
    growth_ratios: list
    gaussian_rate: float
    samples: int
    passed: bool

    def as_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                for k, v in self.__dict__.items()}


def kernel_samples(grid: Grid, count: int = 200, seed: int = 0, radius: float = 12.0,
                   t_range=(1.0, 8.0)) -> list:
    """Random (i, j, t) triples on the meridian, nodes within `radius` of the neck."""
    rng = np.random.default_rng(seed)
    pool = grid.interior[np.abs(grid.sigma[grid.interior]) <= radius]
    i = rng.choice(pool, count)
    j = rng.choice(pool, count)
    t = rng.uniform(*t_range, count)
    return [(int(a), int(b), float(c)) for a, b, c in zip(i, j, t)]


def verify_kernel_bound(sg: Semigroup, delta: float, samples) -> KernelBoundReport:
    """Fit constants for |G^{>=0}(x,y,t)| <= C e^{delta t}(e^{-c1 d^2/t} + e^{-c2 (d(x)+d(y))})."""
    grid = sg.data.grid
    sig = grid.sigma
    G, D2t, Dsum, T = [], [], [], []
    for i, j, t in samples:
        G.append(abs(sg.kernel(i, j, t, nonnegative=True)))
        D2t.append((sig[i] - sig[j]) ** 2 / t)
        Dsum.append(0.25 + abs(sig[i]) + abs(sig[j]))
        T.append(t)
    G, D2t, Dsum, T = map(np.asarray, (G, D2t, Dsum, T))
    ok = G > 1e-300
    y = np.log(G[ok]) - delta * T[ok]
    X = np.column_stack([np.ones(ok.sum()), -D2t[ok], -Dsum[ok]])
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    fc1, fc2 = float(coef[1]), float(coef[2])
    c1, c2 = max(fc1, 1e-6), max(fc2, 1e-6)
    denom = np.exp(delta * T) * (np.exp(-c1 * D2t) + np.exp(-c2 * Dsum))
    C = float(np.max(G / denom))

    neck = int(np.argmin(np.abs(grid.s)))
    diag1 = sg.kernel(neck, neck, 1.0, nonnegative=True)
    growth = [sg.kernel(neck, neck, t, nonnegative=True) * np.exp(-delta * t) for t in (1.0, 2.0, 4.0, 8.0)]

    # Gaussian rate at t = 1: slope of -log G^{>=0} against d^2 for pairs off the neck
    far = grid.interior[(grid.sigma[grid.interior] >= 0) & (grid.sigma[grid.interior] <= 8.0)]
    gv = np.array([abs(sg.kernel(neck, j, 1.0, nonnegative=True)) for j in far])
    keep = gv > 1e-300
    d2 = grid.sigma[far][keep] ** 2
    rate = float(np.polyfit(d2, -np.log(gv[keep]), 1)[0]) if keep.sum() > 2 else float("nan")

    passed = bool(np.isfinite(C) and fc1 > 0 and fc2 > 0)
    return KernelBoundReport(delta, C, c1, c2, fc1, fc2, float(diag1),
                             [float(g / growth[0]) if growth[0] else 0.0 for g in growth],
                             rate, len(samples), passed)
