import numpy as np
import pytest
import scipy.linalg as sla
from scipy.special import jn_zeros

from ancientflow.discretization import (
    GridError,
    angular_eigenvalue,
    assemble_jacobi,
    build_grid,
    harmonic_multiplicity,
    l2_inner,
)
from ancientflow.geometry import Hypersurface


def test_plane_rho_is_flat_distance():
    g = build_grid(Hypersurface("plane", 2, 10.0), 10.0, 101, 2)
    assert np.allclose(g.rho, np.sqrt(1 + g.s**2), rtol=1e-13)
    assert g.rho[50] == 1.0


def test_catenoid_rho_is_cosh(catenoid):
    g = build_grid(catenoid, 4.0, 201, 0)
    assert g.rho[100] == 1.0
    j = np.argmin(np.abs(g.s - 2.0))
    assert g.rho[j] == pytest.approx(np.cosh(2.0), rel=1e-10)
    assert g.rho[j] == pytest.approx(3.762, abs=1e-3)


def test_grid_invariants(catenoid):
    g = build_grid(catenoid, 3.0, 60, 2)
    assert np.all(np.diff(g.s) > 0) and np.allclose(g.s, -g.s[::-1])
    assert np.all(g.rho >= 1) and np.all(g.weights > 0)


@pytest.mark.parametrize("S,N,K", [(0.0, 50, 1), (2.0, 10, 1), (2.0, 50, -1)])
def test_invalid_sizes(catenoid, S, N, K):
    with pytest.raises(GridError):
        build_grid(catenoid, S, N, K)


def test_harmonic_multiplicities():
    assert [harmonic_multiplicity(2, k) for k in range(4)] == [1, 2, 2, 2]
    assert [harmonic_multiplicity(3, k) for k in range(4)] == [1, 3, 5, 7]
    assert angular_eigenvalue(3, 2) == 6 and angular_eigenvalue(2, 3) == 9


SURFACES = [("catenoid", 2, 6.0), ("plane", 2, 6.0), ("n_catenoid", 3, 6.0), ("plane", 3, 6.0)]


@pytest.mark.parametrize("kind,n,S", SURFACES)
@pytest.mark.parametrize("k", [0, 1, 3])
def test_operator_symmetric_in_discrete_measure(kind, n, S, k, rng):
    surf = Hypersurface(kind, n, S)
    g = build_grid(surf, S, 121, 4)
    op = assemble_jacobi(surf, g, k)
    for _ in range(5):
        u, v = rng.standard_normal((2, g.N_s))
        u[[0, -1]] = v[[0, -1]] = 0
        if g.axis is not None and k >= 1:
            u[g.axis] = v[g.axis] = 0
        a = l2_inner(g, op.apply(u), v, (k, 0), (k, 0))
        b = l2_inner(g, u, op.apply(v), (k, 0), (k, 0))
        nu = np.sqrt(l2_inner(g, u, u, (k, 0), (k, 0)) * l2_inner(g, v, v, (k, 0), (k, 0)))
        assert abs(a - b) / nu < 1e-12


def test_conformal_form_of_catenoid_mode0(catenoid):
    """-L_0 u = -u''/cosh^2 - 2u/cosh^4, at second order."""
    errs = []
    for N in (101, 201, 401):
        g = build_grid(catenoid, 4.0, N, 0)
        s = g.s
        u = np.exp(-2 * s**2)
        exact = -(16 * s**2 - 4) * u / np.cosh(s) ** 2 - 2 * u / np.cosh(s) ** 4
        got = assemble_jacobi(catenoid, g, 0).apply(u)
        errs.append(np.max(np.abs(got - exact)[1:-1]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_consistency_order_against_analytic_operator(catenoid, k):
    errs = []
    for N in (101, 201, 401):
        g = build_grid(catenoid, 4.0, N, k)
        s, f = g.s, g.fields
        u = np.exp(-2 * s**2)
        du, d2u = -4 * s * u, (16 * s**2 - 4) * u
        exact = -(f.jacobi(u, du, d2u) - k**2 * u / np.cosh(s) ** 2)
        got = assemble_jacobi(catenoid, g, k).apply(u)
        errs.append(np.max(np.abs(got - exact)[1:-1]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


@pytest.mark.parametrize("kind,n,S", SURFACES)
def test_eigenvalues_monotone_in_k(kind, n, S):
    surf = Hypersurface(kind, n, S)
    g = build_grid(surf, S, 121, 4)
    lows = [assemble_jacobi(surf, g, k).eig()[0][:8] for k in range(5)]
    for a, b in zip(lows, lows[1:]):
        assert np.all(b >= a - 1e-12)


def test_mode5_positive_definite_dense_oracle(catenoid):
    g = build_grid(catenoid, 8.0, 161, 5)
    op = assemble_jacobi(catenoid, g, 5)
    lam = sla.eigh(op.stiffness(), np.diag(op.mass), eigvals_only=True)
    assert lam.min() > 0
    assert op.eig()[0][0] == pytest.approx(lam.min(), rel=1e-10)


@pytest.mark.parametrize("k", [0, 1])
def test_tridiagonal_eigensolver_matches_dense(catenoid, k):
    g = build_grid(catenoid, 6.0, 121, 2)
    op = assemble_jacobi(catenoid, g, k)
    dense = sla.eigh(op.stiffness(), np.diag(op.mass), eigvals_only=True)
    lam, vecs = op.eig()
    assert np.allclose(lam, dense, rtol=1e-9, atol=1e-10)
    gram = op.gamma * (vecs * g.mass[:, None]).T @ vecs
    assert np.allclose(gram, np.eye(len(lam)), atol=1e-10)


def test_l2_inner_converges_to_closed_form(catenoid):
    exact = 2 * np.pi * (2 + np.sinh(4.0) / 2)
    errs = []
    for N in (101, 201, 401):
        g = build_grid(catenoid, 2.0, N, 0)
        one = np.ones(N)
        errs.append(abs(l2_inner(g, one, one) - exact))
    assert exact == pytest.approx(98.3002, abs=1e-4)
    assert errs[-1] / exact < 1e-4
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) > 1.9)


def test_l2_inner_modes_orthogonal(cat_grid):
    u = np.ones(cat_grid.N_s)
    assert l2_inner(cat_grid, u, u, (1, 0), (2, 0)) == 0.0
    assert l2_inner(cat_grid, u, u, (1, 0), (1, 1)) == 0.0


def test_unit_hat_has_unit_norm(cat_grid):
    u = np.zeros(cat_grid.N_s)
    u[150] = 1 / np.sqrt(cat_grid.mass[150])
    assert l2_inner(cat_grid, u, u) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("kind,S", [("catenoid", 8.0), ("plane", 8.0)])
def test_rho_equivalent_to_euclidean_radius(kind, S):
    g = build_grid(Hypersurface(kind, 2, S), S, 401, 0)
    r = g.r_euclid
    C = max(np.max(g.rho / r), np.max(r / g.rho))
    assert C < 3


@pytest.mark.parametrize("N", [101, 100])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_plane_matches_dirichlet_disc(N, k):
    """Double-covered diameter reproduces j_{k,1}^2 / R^2 at second order."""
    R = 10.0
    pl = Hypersurface("plane", 2, R)
    errs = []
    for scale in (1, 2):
        g = build_grid(pl, R, scale * (N - 1) + 1 if N % 2 else scale * N, k)
        lam = assemble_jacobi(pl, g, k).eig()[0][0]
        errs.append(abs(lam - jn_zeros(k, 1)[0] ** 2 / R**2))
    assert errs[0] < 5e-4 and errs[1] < errs[0] / 3


def test_dump_csv(tmp_path, cat_grid):
    op = assemble_jacobi(cat_grid.surface, cat_grid, 0)
    cat_grid.dump_csv(tmp_path / "op.csv", op)
    lines = (tmp_path / "op.csv").read_text().splitlines()
    assert lines[0] == "node,s,rho,A2,diag,offdiag"
    assert len(lines) == cat_grid.N_s + 1
