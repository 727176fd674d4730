"""Command-line driver: index, spectrum, construct, verify and sweep.

Configuration comes from an INI file (``--config``) whose values are
overridden by flags.  Every command writes ``report.json`` (deterministic,
sorted keys) plus ``timings.json`` and CSV data into ``--out``.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import battery as bt
from . import flow as fl
from . import norms as nm
from . import spectral as sp
from .discretization import GridError, build_grid
from .geometry import GeometryError, Hypersurface
from .io import save_npz, write_csv, write_json

log = logging.getLogger("ancientflow")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NONCONV = 0, 1, 2, 3
SURFACES = {"plane": "plane", "catenoid": "catenoid", "ncatenoid": "n_catenoid"}
SPACING = 0.04  # default profile spacing when N_s is not given


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    surface: str = "catenoid"
    n: int = 2
    S: float | None = None
    Ns: int | None = None
    K: int = 8
    beta: float = 3.0
    alpha: float = 0.5
    delta0: float | None = None
    T: float | None = None
    M: int = 256
    a: list | None = None
    tol: float = 1e-10
    max_iter: int = 20
    epsilon0: float = 0.05
    out: str = "out"
    seed: int = 0
    dump: bool = False
    resume: bool = False
    grid: str = "eps,-eps,eps/2,-eps/2"
    verify: dict = field(default_factory=dict)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("resume")
        return d


# key -> (section, type)
SCHEMA = {
    "surface": ("surface", str), "n": ("surface", int),
    "S": ("grid", float), "Ns": ("grid", int), "K": ("grid", int),
    "beta": ("weights", float), "alpha": ("weights", float), "delta0": ("weights", float),
    "T": ("time", float), "M": ("time", int),
    "tol": ("fixedpoint", float), "max_iter": ("fixedpoint", int), "epsilon0": ("fixedpoint", float),
    "a": ("run", str), "out": ("run", str), "seed": ("run", int), "dump": ("run", bool),
    "grid": ("run", str),
}

VERIFY_DEFAULTS = {
    "orth_tol": 1e-10, "residual_tol": 1e-8, "semigroup_tol": 1e-8, "order_slack": 0.3,
    "quadratic_drift": 0.10, "mu_spread": 0.25, "contraction": 0.5, "slope_tol": 0.05,
    "projection_tol": 1e-8, "refinement_drift": 0.2,
}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--a expects comma-separated floats, got {text!r}") from exc


def load_config(path) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values, verify = {}, {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            if section == "verify":
                if key not in VERIFY_DEFAULTS:
                    raise ConfigError(f"unknown verify key {key!r}")
                verify[key] = _convert(key, raw, float)
                continue
            if key not in SCHEMA or SCHEMA[key][0] != section:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = _convert(key, raw, SCHEMA[key][1])
    if verify:
        values["verify"] = verify
    return values


def _convert(key, raw, typ):
    try:
        if typ is bool:
            return _parse_bool(raw)
        return typ(raw.strip())
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def build_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for key in SCHEMA:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = flag
    if args.resume:
        values["resume"] = True
    if isinstance(values.get("a"), str):
        values["a"] = parse_floats(values["a"])
    verify = dict(VERIFY_DEFAULTS)
    verify.update(values.pop("verify", {}))
    cfg = RunConfig(**values, verify=verify)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if cfg.surface not in SURFACES:
        raise ConfigError(f"surface must be one of {sorted(SURFACES)}")
    if cfg.n < 2:
        raise ConfigError("n must be at least 2")
    if cfg.surface == "catenoid" and cfg.n != 2:
        raise ConfigError("the closed-form catenoid has n = 2; use ncatenoid for n > 2")
    if cfg.S is not None and not cfg.S > 0:
        raise ConfigError("S must be positive")
    if cfg.Ns is not None and cfg.Ns < 16:
        raise ConfigError("Ns must be at least 16")
    if cfg.K < 0:
        raise ConfigError("K must be nonnegative")
    if cfg.M < 64:
        raise ConfigError("M must be at least 64")
    if cfg.T is not None and not cfg.T > 0:
        raise ConfigError("T must be positive")
    if not cfg.tol > 0 or cfg.max_iter < 1 or not cfg.epsilon0 > 0:
        raise ConfigError("tol, max_iter and epsilon0 must be positive")
    try:
        nm.WeightParams(cfg.beta, cfg.alpha, cfg.delta0 if cfg.delta0 is not None else 1.0).validate(cfg.n)
    except nm.WeightError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")


# ---------------------------------------------------------------------------
# shared setup


def make_surface(cfg: RunConfig, S: float) -> Hypersurface:
    return Hypersurface(SURFACES[cfg.surface], cfg.n, max(S, 1.0))


def resolve_grid(cfg: RunConfig, default_S: float):
    S = cfg.S if cfg.S is not None else default_S
    N = cfg.Ns if cfg.Ns is not None else int(round(2 * S / SPACING)) + 1
    return S, N


def spectral_setup(cfg: RunConfig, default_S: float = 8.0):
    S, N = resolve_grid(cfg, default_S)
    surface = make_surface(cfg, S)
    grid = build_grid(surface, S, N, cfg.K)
    return surface, grid, sp.negative_spectrum(surface, grid)


def weight_params(cfg: RunConfig, data: sp.SpectralData) -> nm.WeightParams:
    lam_I = float(data.lambdas[-1]) if data.I else None
    d0 = cfg.delta0 if cfg.delta0 is not None else (-lam_I / 2 if lam_I is not None else 0.5)
    try:
        return nm.WeightParams(cfg.beta, cfg.alpha, d0).validate(cfg.n, lam_I)
    except nm.WeightError as exc:
        raise ConfigError(str(exc)) from exc


def flow_setup(cfg: RunConfig):
    surface, grid, data = spectral_setup(cfg, default_S=4.0)
    params = weight_params(cfg, data)
    T = cfg.T if cfg.T is not None else fl.default_horizon(data)
    return fl.FlowContext(data, fl.time_grid(T, cfg.M), params)


def write_eigenfunctions(out: Path, data: sp.SpectralData):
    for i in range(data.I):
        write_csv(out / f"eigenfunction_{i + 1}.csv", ["s", "phi"], zip(data.grid.s, data.phis[i]))


def dump_operators(out: Path, data: sp.SpectralData):
    data.grid.dump_csv(out / "grid.csv")
    for k, ms in data.modes.items():
        data.grid.dump_csv(out / f"operator_k{k}.csv", ms.op)


def check(name, value, tol, passed, **detail) -> dict:
    return bt.Check(name, value, tol, bool(passed), detail).as_dict()


# ---------------------------------------------------------------------------
# commands


def cmd_index(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    surface, grid, data = spectral_setup(cfg)
    rep = sp.morse_index(surface, grid)
    write_eigenfunctions(out, data)
    if cfg.dump:
        dump_operators(out, data)
    results = {"spectrum": data.report(), "ladder": rep.as_dict()}
    checks = [check("ladder_monotone", float(rep.monotone), 1.0, rep.monotone),
              check("ladder_cauchy", float(rep.cauchy), 1.0, rep.cauchy, floor=rep.floor)]
    return {"results": results, "checks": checks, "I": rep.index}, EXIT_OK


def cmd_spectrum(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    surface, grid, data = spectral_setup(cfg)
    write_eigenfunctions(out, data)
    if cfg.dump:
        dump_operators(out, data)
    lowest = {str(k): [float(x) for x in ms.lambdas[:5]] for k, ms in data.modes.items()}
    write_csv(out / "mode_spectrum.csv", ["k", "index", "lambda"],
              ((k, i, lam) for k, ms in data.modes.items() for i, lam in enumerate(ms.lambdas[:20])))
    checks = [c.as_dict() for c in bt.spectral_hygiene(data, cfg.verify["orth_tol"], cfg.verify["residual_tol"])]
    return {"results": {"spectrum": data.report(), "lowest_per_mode": lowest}, "checks": checks}, EXIT_OK


def _a_vector(cfg: RunConfig, ctx: fl.FlowContext):
    if cfg.a is None:
        return None
    a = np.asarray(cfg.a, dtype=float)
    if a.shape != (ctx.data.I,):
        raise ConfigError(f"--a needs {ctx.data.I} entries (Morse index), got {a.size}")
    return a


def cmd_construct(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    ctx = flow_setup(cfg)
    a = _a_vector(cfg, ctx)
    eps = None
    ckpt = out / "checkpoint.npz"
    try:
        if a is None:
            if ctx.data.I == 0:
                a = np.zeros(0)
            else:
                d = np.zeros(ctx.data.I)
                d[0] = 1.0
                eps, _ = fl.find_epsilon(ctx, d, cfg.epsilon0, cfg.tol, cfg.max_iter)
                a = eps * d
        flow = fl.construct_ancient_flow(ctx, a, cfg.tol, cfg.max_iter, checkpoint=ckpt, resume=cfg.resume)
    except fl.NonConvergenceError as exc:
        return {"results": {"error": str(exc), "star_norm_history": exc.history}, "checks": []}, EXIT_NONCONV
    except fl.BallExitError as exc:
        return {"results": {"error": f"|a| too large: {exc}", "star_norm_history": []}, "checks": []}, EXIT_NONCONV
    rep = flow.report()
    rep["epsilon"] = eps
    write_json(out / "diagnostics.json", rep)
    stride = max(1, (len(ctx.t) - 1) // 64)
    flow.write_snapshots(out / "flow.csv", ctx.grid.s, stride)
    nm.write_norm_trace(out / "norm_trace.csv", ctx.t, nm.star_trace(ctx.grid, flow.u, ctx.params))
    save_npz(out / "flow_final.npz", t=ctx.t, s=ctx.grid.s, u=flow.u.values)
    v = cfg.verify
    d = flow.diagnostics
    dt, h = ctx.dt, ctx.grid.h
    checks = [
        check("terminal_projection", d["terminal_projection_error"], v["projection_tol"],
              d["terminal_projection_error"] < v["projection_tol"]),
        check("mcf_residual", d["mcf_residual"], 10 * (dt**2 + h**2), d["mcf_residual"] < 10 * (dt**2 + h**2)),
        check("contraction_ratio", flow.contraction_ratio(), v["contraction"],
              flow.contraction_ratio() < v["contraction"]),
    ]
    if ctx.data.I and np.linalg.norm(a) > 0 and d["decay_slope"] is not None:
        target = -float(ctx.data.lambdas[0])
        rel = abs(d["decay_slope"] - target) / target
        checks.append(check("decay_slope", rel, v["slope_tol"], rel < v["slope_tol"]))
    return {"results": {"flow": rep, "lambdas": [float(x) for x in ctx.data.lambdas]}, "checks": checks}, EXIT_OK


def parse_sweep_grid(text: str, eps: float) -> list:
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    vals = []
    for tok in tokens:
        sign = -1.0 if tok.startswith("-") else 1.0
        body = tok.lstrip("+-")
        num, _, den = body.partition("/")
        try:
            base = eps if num == "eps" else float(num)
            vals.append(sign * base / (float(den) if den else 1.0))
        except ValueError as exc:
            raise ConfigError(f"bad sweep token {tok!r}") from exc
    if not vals:
        raise ConfigError("sweep grid is empty")
    return vals


def cmd_sweep(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    if not [t for t in cfg.grid.split(",") if t.strip()]:
        raise ConfigError("sweep grid is empty")
    ctx = flow_setup(cfg)
    if ctx.data.I == 0:
        raise ConfigError("sweep needs a surface with positive Morse index")
    d = np.zeros(ctx.data.I)
    d[0] = 1.0
    eps = cfg.epsilon0
    if "eps" in cfg.grid:
        eps, _ = fl.find_epsilon(ctx, d, cfg.epsilon0, cfg.tol, cfg.max_iter)
    values = parse_sweep_grid(cfg.grid, eps)
    rows = []
    for x in values:
        row = {"a1": x}
        try:
            f = fl.construct_ancient_flow(ctx, x * d, cfg.tol, cfg.max_iter)
            row.update(status="ok", iterations=f.iterations, mu=f.diagnostics["mu_estimate"],
                       decay_slope=f.diagnostics["decay_slope"], mcf_residual=f.diagnostics["mcf_residual"],
                       contraction=f.contraction_ratio())
        except (fl.NonConvergenceError, fl.BallExitError) as exc:
            row.update(status=f"failed: {exc}", iterations=None, mu=None, decay_slope=None,
                       mcf_residual=None, contraction=None)
        rows.append(row)
    cols = ["a1", "status", "iterations", "mu", "decay_slope", "mcf_residual", "contraction"]
    write_csv(out / "sweep.csv", cols, ([r[c] if r[c] is not None else "" for c in cols] for r in rows))
    mus = [r["mu"] for r in rows if r["mu"] is not None and r["a1"] != 0]
    sp_mu = bt.spread(mus) if mus else 0.0
    checks = [check("mu_spread", sp_mu, cfg.verify["mu_spread"], sp_mu < cfg.verify["mu_spread"])]
    return {"results": {"epsilon": eps, "rows": rows}, "checks": checks}, EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    v = cfg.verify
    surface, grid, data = spectral_setup(cfg)
    checks = [c.as_dict() for c in bt.spectral_hygiene(data, v["orth_tol"], v["residual_tol"])]
    rep = sp.morse_index(surface, grid)
    checks.append(check("ladder_cauchy", float(rep.cauchy), 1.0, rep.cauchy, gaps=rep.gaps))
    sg = sp.Semigroup(data)
    checks.append(bt.semigroup_law(sg, 20, cfg.seed, v["semigroup_tol"]).as_dict())
    checks.append(bt.kernel_symmetry(sg, seed=cfg.seed).as_dict())
    checks.append(bt.mass_bound(sg).as_dict())
    params = weight_params(cfg, data)
    kb = sp.verify_kernel_bound(sg, params.delta0 / 2, sp.kernel_samples(grid, 200, cfg.seed))
    checks.append(bt.Check("kernel_bound", kb.C, np.inf, kb.passed, kb.as_dict()).as_dict())

    S_f = 4.0 if cfg.S is None else cfg.S
    fsurf = make_surface(cfg, S_f)
    space, tim = bt.mms_orders(fsurf, params, S=S_f)
    so, to = bt.observed_orders(space), bt.observed_orders(tim)
    slack = v["order_slack"]
    checks.append(check("mms_space_order", min(so), 2.0 - slack, min(so) > 2.0 - slack, errors=space, orders=so))
    checks.append(check("mms_time_order", min(to), 2.0 - slack, min(to) > 2.0 - slack, errors=tim, orders=to))
    ratios = bt.decay_ratios(fsurf, params, S=S_f)
    for idx, name in enumerate(("l2_decay", "weighted_decay")):
        r = [row[idx] for row in ratios]
        drift = abs(r[1] - r[0]) / max(r)
        checks.append(check(name, drift, v["refinement_drift"],
                            bool(np.all(np.isfinite(r))) and drift < v["refinement_drift"], ratios=r))
    _, N_f = resolve_grid(cfg, S_f)
    ctx = bt.flow_context(fsurf, S_f, N_f, cfg.M, params, cfg.T, K=2)
    checks.append(check("schauder_ratio", bt.schauder_ratio(ctx, seed=cfg.seed), np.inf, True))
    if ctx.data.I:
        checks.append(bt.quadratic_scaling(ctx.grid, ctx.data.phis[0], tol=v["quadratic_drift"]).as_dict())
        checks.append(bt.lipschitz_ratio(ctx, seed=cfg.seed).as_dict())
        d = np.zeros(ctx.data.I)
        d[0] = 1.0
        eps, _ = fl.find_epsilon(ctx, d, cfg.epsilon0, cfg.tol, cfg.max_iter)
        rows = bt.mu_family(ctx, eps, cfg.tol, cfg.max_iter)
        mus = [r["mu_plus"] for r in rows]
        worst = max(max(r["contraction_plus"], r["contraction_minus"]) for r in rows)
        checks.append(check("mu_spread", bt.spread(mus), v["mu_spread"], bt.spread(mus) < v["mu_spread"], mus=mus))
        checks.append(check("contraction", worst, v["contraction"], worst < v["contraction"], epsilon=eps))
    else:
        checks.append(check("nonlinear_battery", 0.0, 0.0, True, skipped="Morse index is zero"))
    failed = [c["name"] for c in checks if not c["passed"]]
    return {"results": {"failed": failed, "I": data.I}, "checks": checks}, (EXIT_VERIFY if failed else EXIT_OK)


COMMANDS = {"index": cmd_index, "spectrum": cmd_spectrum, "construct": cmd_construct,
            "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ancientflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config")
    p.add_argument("--surface", choices=sorted(SURFACES))
    p.add_argument("--n", type=int)
    p.add_argument("--S", type=float)
    p.add_argument("--Ns", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta0", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--a", help="comma-separated parameter vector")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--epsilon0", type=float)
    p.add_argument("--grid", help="sweep grid, e.g. 'eps,-eps,eps/2'")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--dump", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def main(argv=None) -> int:
    parser = build_parser()
    parser.__class__ = _Parser
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    start = time.perf_counter()
    try:
        body, code = COMMANDS[args.command](cfg, out)
    except (ConfigError, GridError, GeometryError, sp.KTooSmallError, nm.WeightError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except fl.NonConvergenceError as exc:
        body, code = {"results": {"error": str(exc), "star_norm_history": exc.history}, "checks": []}, EXIT_NONCONV
    report = {"command": args.command, "config": cfg.echo(), "exit_code": code,
              "time_truncation": "all sups are taken over the finite time grid [-T, 0]", **body}
    write_json(out / "report.json", report)
    write_json(out / "timings.json", {"command": args.command, "wall_seconds": time.perf_counter() - start})
    for c in body.get("checks", []):
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']!r} (tol {c['tol']!r})")
    if code == EXIT_NONCONV:
        print(f"non-convergence: {body['results'].get('error')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
