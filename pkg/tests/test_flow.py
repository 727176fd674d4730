import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from ancientflow import battery as bt
from ancientflow import flow as fl
from ancientflow.geometry import Hypersurface
from ancientflow.norms import SpaceTimeField, c2_zero, star_norm


@pytest.fixture(scope="module")
def surf():
    return Hypersurface("catenoid", 2, 12.0)


@pytest.fixture(scope="module")
def ctx(surf, params):
    return bt.flow_context(surf, 4.0, 201, 256, params)


def _field(ctx, values):
    return SpaceTimeField(ctx.t, values, np.zeros_like(values))


def _problem(ctx, values, a):
    return fl.LinearProblem(_field(ctx, values), np.atleast_1d(np.asarray(a, float)), ctx.params)


def test_time_grid():
    t = fl.time_grid(4.0, 8)
    assert t[0] == -4.0 and t[-1] == 0.0 and len(t) == 9
    with pytest.raises(ValueError):
        fl.time_grid(0.0, 8)


@pytest.mark.parametrize("z", [0.0, 1e-9, -0.05, 0.09, -0.1, 0.11, 1.5, -3.0, -40.0])
def test_phi_functions_match_high_precision(z):
    p1, p2 = fl._phi12(np.array([z]))
    mpmath.mp.dps = 40
    if z == 0:
        e1, e2 = 1.0, 0.5
    else:
        zz = mpmath.mpf(z)
        e1 = float(mpmath.expm1(zz) / zz)
        e2 = float((mpmath.expm1(zz) - zz) / zz**2)
    assert p1[0] == pytest.approx(e1, rel=1e-13)
    assert p2[0] == pytest.approx(e2, rel=1e-13)


def test_homogeneous_problem_returns_iota(ctx):
    u = fl.solve_linear(ctx, _problem(ctx, np.zeros((len(ctx.t), ctx.grid.N_s)), [1.0]))
    iota = ctx.iota([1.0])
    assert np.max(np.abs(u.values - iota.values)) < 1e-10
    assert np.max(np.abs(u.dt_values - iota.dt_values)) < 1e-10


def test_scalar_mode_against_quadrature(ctx):
    """h = e^t phi_1 and a = 0 give u = c(t) phi_1 with c(t) = -int_t^0 e^{-lam(t-s)} e^s ds."""
    phi = ctx.data.phis[0]
    lam = ctx.data.lambdas[0]
    h = np.exp(ctx.t)[:, None] * phi
    u = fl.solve_linear(ctx, _problem(ctx, h, [0.0]))
    got = ctx.coefficients(u.values)[:, ctx.neg[0]]
    ref = np.array([-quad(lambda s: np.exp(-lam * (t - s) + s), t, 0.0, epsabs=1e-13)[0] for t in ctx.t])
    assert abs(got[-1]) < 1e-12
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 2e-3


def test_mms_second_order(params):
    space, time = bt.mms_orders(Hypersurface("catenoid", 2, 12.0), params)
    assert min(bt.observed_orders(space)) > 1.9
    assert min(bt.observed_orders(time)) > 1.9
    assert space[-1] < 1e-4 and time[-1] < 2e-4


def test_linearity_and_uniqueness(ctx, rng):
    N = ctx.grid.N_s
    prof = ctx.V[:, :5] @ rng.standard_normal((5, 2))
    h1 = np.exp(ctx.t)[:, None] * prof[:, 0]
    h2 = np.exp(0.8 * ctx.t)[:, None] * prof[:, 1]
    u1 = fl.solve_linear(ctx, _problem(ctx, h1, [0.3]))
    u2 = fl.solve_linear(ctx, _problem(ctx, h2, [-1.1]))
    u12 = fl.solve_linear(ctx, _problem(ctx, h1 + h2, [-0.8]))
    assert np.max(np.abs(u12.values - u1.values - u2.values)) < 1e-10
    again = fl.solve_linear(ctx, _problem(ctx, h1 + h2, [-0.8]))
    assert np.array_equal(again.values, u12.values)
    assert N == u12.values.shape[1]


def test_growth_guard(ctx):
    phi = ctx.data.phis[0]
    with pytest.raises(fl.GrowthError):
        fl.solve_linear(ctx, _problem(ctx, np.exp(-ctx.t)[:, None] * phi, [0.0]))
    bad = np.zeros((len(ctx.t), ctx.grid.N_s))
    bad[3, 10] = np.nan
    with pytest.raises(fl.GrowthError):
        fl.solve_linear(ctx, _problem(ctx, bad, [0.0]))
    assert fl.check_growth(ctx, np.exp(ctx.t)[:, None] * phi) <= 10


def test_decay_checks_finite_and_stable(surf, params):
    rows = bt.decay_ratios(surf, params)
    (l2a, wa), (l2b, wb) = rows
    assert np.isfinite([l2a, wa, l2b, wb]).all()
    assert l2b == pytest.approx(l2a, rel=0.1) and wb == pytest.approx(wa, rel=0.1)


def test_fixed_point_map_trivial_case(ctx):
    z = SpaceTimeField.zeros(ctx.t, ctx.grid.N_s)
    out = fl.fixed_point_map(ctx, z, [0.0])
    assert np.max(np.abs(out.values)) == 0.0


def test_ball_exit(ctx):
    big = ctx.iota([50.0])
    with pytest.raises(fl.BallExitError):
        fl.fixed_point_map(ctx, big, [50.0])


def test_first_iterate_is_quadratic(ctx):
    devs = []
    for eps in (0.02, 0.01, 0.005):
        u0 = ctx.iota([eps])
        u1 = fl.fixed_point_map(ctx, u0, [eps])
        devs.append(star_norm(ctx.grid, u1 - u0, ctx.params) / eps**2)
    assert max(devs) / min(devs) < 1.1


def test_construct_zero_parameter(ctx):
    flow = fl.construct_ancient_flow(ctx, [0.0])
    assert flow.iterations == 1
    assert np.max(np.abs(flow.u.values)) == 0.0


@pytest.fixture(scope="module")
def small_flow(ctx):
    return fl.construct_ancient_flow(ctx, [0.01])


def test_constructed_flow(ctx, small_flow):
    d = small_flow.diagnostics
    assert small_flow.history[-1] < 1e-10
    assert small_flow.contraction_ratio() < 0.5
    assert d["terminal_projection_error"] < 1e-12
    assert d["decay_slope"] / -ctx.data.lambdas[0] == pytest.approx(1.0, abs=1e-3)
    assert np.max(c2_zero(ctx.grid, small_flow.u.values)) < 0.5


def test_mcf_residual_is_discretization_error(surf, params):
    """Refining the grid cuts the flow's residual by ~4; the linear profile keeps an O(a^2) floor."""
    flows, lins = [], []
    for N, M in ((101, 128), (201, 256)):
        c = bt.flow_context(surf, 4.0, N, M, params)
        flows.append(fl.mcf_residual(c, fl.construct_ancient_flow(c, [0.01]).u)[1])
        lins.append(fl.mcf_residual(c, c.iota([0.01]))[1])
    assert flows[0] / flows[1] == pytest.approx(4.0, rel=0.15)
    assert lins[0] / lins[1] < 2.0
    assert flows[1] < lins[1]


def test_sign_family(ctx):
    fp = fl.construct_ancient_flow(ctx, [0.01])
    fm = fl.construct_ancient_flow(ctx, [-0.01])
    lead_p = ctx.coefficients(fp.u.values[-1])[ctx.neg[0]]
    lead_m = ctx.coefficients(fm.u.values[-1])[ctx.neg[0]]
    assert lead_p == pytest.approx(0.01, abs=1e-12) and lead_m == pytest.approx(-0.01, abs=1e-12)
    assert star_norm(ctx.grid, fp.u - fm.u, ctx.params) > 0.01


def test_resume_matches_uninterrupted(ctx, tmp_path, small_flow):
    ck = tmp_path / "ck.npz"
    with pytest.raises(fl.NonConvergenceError):
        fl.construct_ancient_flow(ctx, [0.01], checkpoint=ck, stop_after=2)
    assert ck.exists()
    resumed = fl.construct_ancient_flow(ctx, [0.01], checkpoint=ck, resume=True)
    assert np.max(np.abs(resumed.u.values - small_flow.u.values)) < 1e-10
    with pytest.raises(fl.FlowError):
        fl.construct_ancient_flow(ctx, [0.02], checkpoint=ck, resume=True)


def test_non_convergence(ctx):
    with pytest.raises(fl.NonConvergenceError) as exc:
        fl.construct_ancient_flow(ctx, [0.01], max_iter=1)
    assert len(exc.value.history) == 1


def test_snapshots(tmp_path, small_flow, ctx):
    small_flow.write_snapshots(tmp_path / "snap.csv", ctx.grid.s, stride=64)
    lines = (tmp_path / "snap.csv").read_text().splitlines()
    assert lines[0] == "t,s,u" and len(lines) == 1 + 5 * ctx.grid.N_s


def test_mu_regression(ctx):
    """Regression pin: ||S(a) - iota(a)||_* / |a|^2 at a = 0.05 e_1 on the default flow grid."""
    flow = fl.construct_ancient_flow(ctx, [0.05])
    assert flow.diagnostics["mu_estimate"] == pytest.approx(14.295135835590491, rel=1e-8)
    dev = star_norm(ctx.grid, flow.u - ctx.iota([0.05]), ctx.params)
    assert dev <= flow.diagnostics["mu_estimate"] * 0.05**2 * (1 + 1e-12)
