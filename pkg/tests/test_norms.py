import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ancientflow.discretization import build_grid
from ancientflow.geometry import Hypersurface
from ancientflow.norms import (
    SpaceTimeField,
    WeightError,
    WeightParams,
    holder_seminorm,
    slice_c0a,
    slice_c2a,
    star_norm,
    star_trace,
    weighted_c0,
    weighted_ck,
    weighted_l2,
    write_norm_trace,
)
from ancientflow.spectral import iota_minus


@pytest.fixture(scope="module")
def small_grid():
    surf = Hypersurface("catenoid", 2, 4.0)
    return build_grid(surf, 4.0, 101, 2)


def test_inverse_weight_has_unit_norm(cat_grid):
    for beta in (2.5, 3.0, 4.0):
        assert weighted_c0(cat_grid, cat_grid.rho ** (-beta), beta) == pytest.approx(1.0, rel=1e-14)


def test_eigenfunction_weighted_norm_pinned(cat_data):
    assert weighted_c0(cat_data.grid, cat_data.phis[0], 3.0) == pytest.approx(0.8055001604080329, rel=1e-10)


def test_iota_slice_ratio(cat_data, params):
    t = np.array([-1.0, 0.0])
    u = iota_minus(cat_data, [1.0], t)
    n = slice_c2a(cat_data.grid, u, params)
    assert n[0] / n[1] == pytest.approx(np.exp(cat_data.lambdas[0]), rel=0.05)


@settings(max_examples=25, deadline=None)
@given(arrays(float, 101, elements=st.floats(-1, 1)), st.floats(-5, 5))
def test_homogeneity(small_grid, u, c):
    p = WeightParams(3.0, 0.5, 0.3)
    a = slice_c2a(small_grid, c * u, p)[0]
    b = abs(c) * slice_c2a(small_grid, u, p)[0]
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(arrays(float, 101, elements=st.floats(-1, 1)), arrays(float, 101, elements=st.floats(-1, 1)))
def test_triangle_inequality(small_grid, u, v):
    p = WeightParams(3.0, 0.5, 0.3)
    for f in (lambda w: slice_c2a(small_grid, w, p)[0], lambda w: slice_c0a(small_grid, w, p)[0],
              lambda w: weighted_ck(small_grid, w, 2, 3.0)):
        assert f(u + v) <= f(u) + f(v) + 1e-9 * (1 + f(u) + f(v))


def test_norm_chain(cat_grid, params):
    u = np.exp(-cat_grid.s**2)
    c0 = weighted_c0(cat_grid, u, 3.0)
    c2 = weighted_ck(cat_grid, u, 2, 3.0)
    c2a = slice_c2a(cat_grid, u, params)[0]
    assert c0 <= weighted_ck(cat_grid, u, 1, 3.0) <= c2 <= c2a
    assert weighted_l2(cat_grid, u, 3.0) > 0


def test_holder_of_constant_vanishes(cat_grid):
    assert holder_seminorm(cat_grid, np.full(cat_grid.N_s, 3.0), 0.5, 1.0) == 0.0
    t = np.linspace(-1, 0, 9)
    T = np.tile(np.sin(cat_grid.s), (9, 1))
    # time-constant field: all pairs at equal x give zero, so only spatial differences count
    with_time = holder_seminorm(cat_grid, T, 0.5, 1.0, t=t)
    static = holder_seminorm(cat_grid, T[0], 0.5, 1.0)
    assert with_time == pytest.approx(static, rel=1e-12)


def test_holder_tent_scaling(cat_grid):
    """A tent of slope 1 and width w has bracket ~ w^{1-alpha}; halving w scales by 2^{-1/2}."""
    s = cat_grid.s
    vals = []
    for w in (0.4, 0.2):
        tent = np.maximum(0.0, w - np.abs(s))
        vals.append(holder_seminorm(cat_grid, tent, 0.5, 0.0))
    assert vals[1] / vals[0] == pytest.approx(2**-0.5, rel=0.2)


def test_star_norm_basics(cat_data, params):
    g = cat_data.grid
    t = np.linspace(-4, 0, 33)
    z = SpaceTimeField.zeros(t, g.N_s)
    assert star_norm(g, z, params) == 0.0
    f = SpaceTimeField.from_values(t, iota_minus(cat_data, [1.0], t))
    a = star_norm(g, f, params)
    assert star_norm(g, f.scale(2.5), params) == pytest.approx(2.5 * a, rel=0.01)
    assert star_norm(g, f + f, params) == pytest.approx(2 * a, rel=1e-12)
    assert star_norm(g, f - f, params) == 0.0


def test_star_norm_detects_terminal_slice(cat_grid, params):
    t = np.linspace(-2, 0, 17)
    vals = np.zeros((17, cat_grid.N_s))
    vals[-1] = np.exp(-cat_grid.s**2)
    f = SpaceTimeField(t, vals, np.zeros_like(vals))
    tr = star_trace(cat_grid, f, params)
    assert np.argmax(tr) == 16 and np.all(tr[:-1] == 0)


def test_from_values_derivative(cat_grid):
    t = np.linspace(-1, 0, 41)
    vals = np.outer(np.exp(0.5 * t), np.ones(cat_grid.N_s))
    f = SpaceTimeField.from_values(t, vals)
    assert np.max(np.abs(f.dt_values - 0.5 * vals)) < 1e-3
    assert f.stencil_residual() == 0.0


@pytest.mark.parametrize("kw", [dict(beta=2.0, alpha=0.5, delta0=0.1), dict(beta=3.0, alpha=1.0, delta0=0.1),
                                dict(beta=3.0, alpha=0.5, delta0=0.0), dict(beta=3.0, alpha=0.5, delta0=0.7)])
def test_weight_params_rejected(kw):
    with pytest.raises(WeightError):
        WeightParams(**kw).validate(2, -0.5636)


def test_weight_params_accepted():
    p = WeightParams(3.0, 0.5, 0.28)
    assert p.validate(2, -0.5636) is p


def test_norm_trace_csv(tmp_path):
    write_norm_trace(tmp_path / "trace.csv", [-1.0, 0.0], [0.5, 0.25])
    assert (tmp_path / "trace.csv").read_text().splitlines() == ["t,weighted_norm", "-1.0,0.5", "0.0,0.25"]
