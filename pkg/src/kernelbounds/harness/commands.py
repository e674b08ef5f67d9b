"""Batch commands behind the CLI.  Each returns a process exit code."""
from __future__ import annotations

import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from ..bounds import (EnvelopeInputs, approx_constant_update, assemble_constants,
                      choose_window, gradient_envelope_K, kernel_envelope, polynomial_envelopes)
from ..coefficients import smoothed_norm_radial
from ..errors import (ConstraintViolation, KernelBoundsError, NegativeRadicandWarning,
                      NonFinite, QuadratureWarning, WindowError)
from ..fk_oracle import MCConfig, estimate_semigroup, estimate_xi, simulate
from ..lyapunov import (CertGrid, WeightFamily, check_hypotheses, closed_form_constants,
                        lyapunov_integral)
from ..solver import (FLOOR_REL, Grid, KernelField, functionals, gradient, solve_approximated,
                      solve_forward, truncation_radius)

EXIT_OK = 0
EXIT_HYPOTHESIS = 2
EXIT_NONFINITE = 3
EXIT_MISSING = 4
EXIT_VALIDATION = 5
EXIT_CROSSCHECK = 6
EXIT_APPROX = 7

MODES = ("measured", "closed-form")
WORKERS_ENV = "KB_WORKERS"


class MissingArtifact(KernelBoundsError):
    pass


def workers():
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def log(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, cfg_hash):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")
        fh.write(f"# config-hash={cfg_hash}\n")


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _setup(cfg):
    spec = cfg.build_spec()
    params = cfg.build_params(spec) if spec.params is not None else None
    return spec, params


def _grid(cfg, params, scale=1):
    s = cfg.solver
    t_init = min(1e-4, 10 * s.dt * scale)
    if s.radius is not None:
        radius = s.radius
    elif params is not None:
        radius = truncation_radius(params, t_init)
    else:
        radius = 8.0
    n = (s.n - 1) // scale + 1
    if n % 2 == 0:
        n += 1
    return Grid(radius, n)


def _save_times(cfg):
    out = set()
    for t in cfg.validation.t_sweep:
        out.update(choose_window(t))
    out.update(choose_window(cfg.validation.check_t))
    out.update(cfg.validation.crosscheck_times)
    return sorted(out)


def run_solve(cfg, spec, params, scale=1):
    s = cfg.solver
    dt = s.dt * scale
    return solve_forward(spec, s.x, cfg.t_end, _grid(cfg, params, scale), dt, theta=s.theta,
                         save_every=max(1, s.save_every // scale), save_times=_save_times(cfg))


def _artifact(out):
    return Path(out) / "kernel.npz"


def save_field(field, out, cfg_hash):
    np.savez_compressed(_artifact(out), times=field.times, p=field.p, dt=field.dt,
                        theta=field.theta, x=field.x, radius=field.grid.radius, n=field.grid.n,
                        t_init=field.t_init, min_before_clamp=field.min_before_clamp,
                        boundary_loss=field.boundary_loss, fallback=field.fallback,
                        mass=field.mass, config_hash=cfg_hash)


def load_field(out, spec):
    path = _artifact(out)
    if not path.is_file():
        raise MissingArtifact(f"no solve artifact at {path}; run `solve` first")
    z = np.load(path)
    return KernelField(grid=Grid(float(z["radius"]), int(z["n"])), x=float(z["x"]),
                       times=z["times"], p=z["p"], dt=float(z["dt"]), theta=float(z["theta"]),
                       spec=spec, t_init=float(z["t_init"]),
                       min_before_clamp=float(z["min_before_clamp"]),
                       boundary_loss=float(z["boundary_loss"]), fallback=bool(z["fallback"]),
                       mass=z["mass"])


def constant_values(spec, params, window, mode, report=None):
    """(raw c_i dict, HypothesisReport or None) for the requested mode."""
    if mode == "closed-form":
        return dict(closed_form_constants(params, window[0], spec.dim).c), report
    if report is None:
        report = check_hypotheses(spec, params, CertGrid(), window)
    return {i: report.measured[i] for i in range(1, 13)}, report


def constant_set(spec, params, window, mode, report=None):
    c, report = constant_values(spec, params, window, mode, report)
    a0, a, a1, b1, b, b0 = window
    return assemble_constants(c, params.k, (b0 - b, b - b1)), report


def envelope_inputs(rep):
    return EnvelopeInputs(sup_xi1=rep.H1, Xi1=rep.Xi1, Xi2=rep.Xi2, E2=rep.E2, Eb=rep.Eb,
                          P=rep.P)


def _quiet_K(cs, inp):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeRadicandWarning)
        return gradient_envelope_K(cs, inp)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_check(cfg, out, mode="measured", dry_run=False):
    spec, params = _setup(cfg)
    window = choose_window(cfg.validation.check_t)
    if dry_run:
        log(f"check: window {window}, k={params.k:g}, certification grid {CertGrid()}")
        return EXIT_OK
    try:
        rep = check_hypotheses(spec, params, CertGrid(), window)
    except NonFinite as exc:
        log(f"non-finite ratio: {exc}")
        return EXIT_NONFINITE
    rows = [(r.id, r.measured, max(r.measured, 1.0), r.closed_form, r.passed, r.refined, r.stable)
            for r in rep.rows()]
    write_csv(Path(out) / "hypotheses.csv",
              ["id", "measured", "clamped", "closed_form", "pass", "refined", "stable"],
              rows, cfg.hash)
    write_csv(Path(out) / "lyapunov.csv", ["t", "h_bar"],
              list(zip(rep.h_times, rep.h_values)), cfg.hash)
    failed = [r.id for r in rep.rows() if not (r.passed and r.stable)]
    for n in rep.notes:
        log(f"note: {n}")
    if failed:
        log("failed: " + ", ".join(failed))
        return EXIT_HYPOTHESIS
    log(f"all {len(rows)} conditions pass")
    return EXIT_OK


def cmd_solve(cfg, out, mode="measured", dry_run=False):
    spec, params = _setup(cfg)
    grid = _grid(cfg, params)
    if dry_run:
        log(f"solve: grid R={grid.radius:g} N={grid.n} dt={cfg.solver.dt:g} T={cfg.t_end:g}")
        return EXIT_OK
    field = run_solve(cfg, spec, params)
    if not np.all(np.isfinite(field.p)):
        return EXIT_NONFINITE
    save_field(field, out, cfg.hash)
    g = field.grad
    y = field.grid.nodes
    with open(Path(out) / "kernel.csv", "w") as fh:
        fh.write("t,y,p,grad_p\n")
        for t in sorted(set(cfg.validation.t_sweep)):
            i = field.index(t)
            for j in range(len(y)):
                fh.write(f"{field.times[i]:.17g},{y[j]:.17g},{field.p[i, j]:.17g},"
                         f"{g[i, j]:.17g}\n")
        fh.write(f"# config-hash={cfg.hash}\n")
    rows = []
    if params is not None:
        fam = WeightFamily.from_params(params)
        for t in cfg.validation.t_sweep:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", QuadratureWarning)
                r = functionals(field, fam, choose_window(t), cfg.validation.r)
            rows.append((t, r.H1, r.H2, r.Xi1, r.Xi2, r.P, r.E2, r.Eb, r.FV, r.grad_norm_r,
                         r.weight_integral_r, max(r.errors.values())))
        write_csv(Path(out) / "functionals.csv",
                  ["t", "H1", "H2", "Xi1", "Xi2", "P", "E2", "Eb", "FV", "grad_norm_r",
                   "weight_integral_r", "max_error"], rows, cfg.hash)
    log(f"solved: {len(field.times)} snapshots, mass {field.mass[-1]:.8f}, "
        f"min before clamp {field.min_before_clamp:.3e}, fallback={field.fallback}")
    return EXIT_OK


def constants_rows(spec, params, t, mode, inputs, placeholder=False):
    window = choose_window(t)
    rows = [("window", "-", ";".join(repr(float(v)) for v in window), "")]
    if placeholder:
        cs = assemble_constants([1.0] * 12, params.k, (window[5] - window[4],
                                                       window[4] - window[3]))
        for i in range(1, 13):
            rows.append((f"c{i}", "placeholder", 1.0, 0.0))
        mode = "placeholder"
    else:
        closed = closed_form_constants(params, window[0], spec.dim)
        rep = check_hypotheses(spec, params, CertGrid(), window)
        for i in range(1, 13):
            m = rep.measured[i]
            rows.append((f"c{i}", "measured", m, math.log10(m) if m > 0 else -math.inf))
            rows.append((f"c{i}", "closed-form", closed.c[i], math.log10(closed.c[i])))
        cs, _ = constant_set(spec, params, window, mode, rep)
    for n, lg in cs.log.items():
        rows.append((n, mode, cs.values[n], lg / math.log(10)))
    env = kernel_envelope(cs, inputs)
    K = _quiet_K(cs, inputs)
    rows.append(("kernel_envelope", mode, env, math.log10(env) if env > 0 else -math.inf))
    rows.append(("K", mode, K.value, K.log / math.log(10)))
    return rows


def cmd_constants(cfg, out, mode="measured", dry_run=False, t=None):
    """constants.csv; a dry run uses 1 for every c_i and every functional."""
    spec, params = _setup(cfg)
    if params is None:
        raise ConstraintViolation("polynomial family", "constants need (m, p, s)")
    t = cfg.validation.calibrate_t if t is None else t
    window = choose_window(t)
    if dry_run:
        inputs = EnvelopeInputs(1.0, 1.0, 1.0, E2=1.0, Eb=0.0)
    else:
        field = load_field(out, spec)
        fam = WeightFamily.from_params(params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", QuadratureWarning)
            inputs = envelope_inputs(functionals(field, fam, window, cfg.validation.r))
    rows = constants_rows(spec, params, t, mode, inputs, placeholder=dry_run)
    write_csv(Path(out) / "constants.csv", ["name", "mode", "value", "log10"], rows, cfg.hash)
    return EXIT_OK


def spatial_slope(field, t, params):
    """Least-squares slope of -log p against t^alpha |y|_*^beta on the outer
    third of the support {p >= 1e-30 max p}."""
    p = field.at(t)
    y = field.grid.nodes
    sup = p >= FLOOR_REL * p.max()
    ymax = np.max(np.abs(y[sup]))
    sel = sup & (np.abs(y) >= 2 * ymax / 3) & (p > 0)
    X = t**params.alpha * smoothed_norm_radial(np.abs(y[sel]))[0] ** params.beta
    return float(np.polyfit(X, -np.log(p[sel]), 1)[0])


def _sup_in(field, lo, hi, vals):
    ts = field.times
    m = (ts >= lo - 1e-12) & (ts <= hi + 1e-12)
    return float(np.max(vals[m]))


def validation_table(cfg, spec, params, field, mode):
    fam = WeightFamily.from_params(params)
    y = field.grid.nodes[:, None]
    logw = np.array([fam.w.log_value(t, y) for t in field.times])
    wp = field.p * np.exp(logw)
    wg = np.abs(field.grad) * np.exp(logw)
    sweep = sorted(cfg.validation.t_sweep)
    rows = {}
    for t in sweep:
        win = choose_window(t)
        a0, a, a1, b1, b, b0 = win
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", QuadratureWarning)
            rep = functionals(field, fam, win, cfg.validation.r)
        cs, _ = constant_set(spec, params, win, mode)
        inp = envelope_inputs(rep)
        K = _quiet_K(cs, inp)
        rows[t] = dict(
            sup_wp=_sup_in(field, a, b, wp.max(axis=1)),
            env=kernel_envelope(cs, inp),
            sup_wg=_sup_in(field, a1, b1, wg.max(axis=1)),
            K=K.value,
            radicand_clamped=K.radicand_clamped,
            S=float(wg[field.index(t)].max()),
            slope=spatial_slope(field, t, params),
            sobolev=bool(math.isfinite(rep.grad_norm_r) and math.isfinite(rep.weight_integral_r)),
        )
    tc = cfg.validation.calibrate_t
    if tc not in rows:
        raise ValueError(f"calibration time {tc} is not in the t-sweep")
    c_kernel = rows[tc]["sup_wp"] / rows[tc]["env"]
    c_grad = rows[tc]["sup_wg"] / rows[tc]["K"]
    for r in rows.values():
        r["ratio_p"] = r["sup_wp"] / (c_kernel * r["env"])
        r["ratio_g"] = r["sup_wg"] / (c_grad * r["K"])
    env = polynomial_envelopes(params, t=max(sweep))
    ts = np.array(sweep)
    S = np.array([rows[t]["S"] for t in sweep])
    fitted = float(np.polyfit(np.log(ts), np.log(S / (1 - np.log(ts))), 1)[0])
    summary = dict(
        C_kernel=c_kernel, C_grad=c_grad, fitted_exponent=fitted,
        paper_exponent=env.exponent_grad, gap=fitted - env.exponent_grad,
        pass_envelope=all(r["ratio_p"] <= 1 + 1e-9 and r["ratio_g"] <= 1 + 1e-9
                          for r in rows.values()),
        pass_exponent=fitted >= env.exponent_grad - 1.0,
        pass_spatial=all(r["slope"] >= 0.8 * params.eps for r in rows.values()),
        sobolev=all(r["sobolev"] for r in rows.values()),
    )
    return rows, summary


def cmd_validate(cfg, out, mode="measured", dry_run=False):
    spec, params = _setup(cfg)
    if dry_run:
        log(f"validate: t-sweep {cfg.validation.t_sweep}, calibration at "
            f"t={cfg.validation.calibrate_t}, mode {mode}")
        return EXIT_OK
    field = load_field(out, spec)
    rows, summary = validation_table(cfg, spec, params, field, mode)
    write_csv(Path(out) / "validation.csv",
              ["t", "sup_wp", "kernel_envelope", "ratio_p", "sup_wgrad", "K", "ratio_grad",
               "spatial_slope", "sobolev"],
              [(t, r["sup_wp"], r["env"], r["ratio_p"], r["sup_wg"], r["K"], r["ratio_g"],
                r["slope"], r["sobolev"]) for t, r in sorted(rows.items())], cfg.hash)
    write_csv(Path(out) / "validation_summary.csv", ["quantity", "value"],
              list(summary.items()), cfg.hash)
    ok = summary["pass_envelope"] and summary["pass_exponent"] and summary["pass_spatial"]
    return EXIT_OK if ok else EXIT_VALIDATION


BUMPS = (("bump(0,1)", 0.0, 1.0), ("bump(0.5,0.5)", 0.5, 0.5), ("bump(-1,1)", -1.0, 1.0))


def _bump(c, width):
    return lambda y: np.exp(-((np.asarray(y) - c) / width) ** 2)


def crosscheck_rows(cfg, spec, params, field, coarse):
    """PDE vs Monte Carlo rows; tolerance = |fine - coarse| PDE difference."""
    fam = WeightFamily.from_params(params)
    m = cfg.mc
    mc = MCConfig(n_paths=m.paths, dt=m.dt, seed=m.seed, antithetic=m.antithetic,
                  radius=field.grid.radius, workers=workers())
    times = sorted(cfg.validation.crosscheck_times)
    paths = simulate(spec, field.x, times, mc)
    y, yc = field.grid.nodes, coarse.grid.nodes
    ygrid = np.linspace(-field.grid.radius, field.grid.radius, 4001)
    rows = []

    def quad(fld, nodes, t, fn):
        return float(np.trapezoid(fld.at(t) * fn(nodes), nodes))

    t_last = times[-1]
    for name, c, wdt in BUMPS:
        f = _bump(c, wdt)
        pde = quad(field, y, t_last, f)
        tol = abs(pde - quad(coarse, yc, t_last, f))
        est = estimate_semigroup(spec, field.x, t_last, f, mc, paths=paths[t_last])
        score = abs(pde - est.mean) / (3 * est.se + tol)
        rows.append((f"T({t_last:g}){name}", pde, est.mean, est.se, tol, score, score <= 1))
    for label, W in (("xi_W1", fam.W1), ("xi_W2", fam.W2)):
        for t in times:
            fn = (lambda W_, t_: (lambda nodes: np.exp(W_.log_value(t_, nodes[:, None]))))(W, t)
            pde = quad(field, y, t, fn)
            tol = abs(pde - quad(coarse, yc, t, fn))
            est = estimate_xi(spec, field.x, t, W, mc, paths=paths[t])
            score = abs(pde - est.mean) / (3 * est.se + tol)
            rows.append((f"{label}({t:g})", pde, est.mean, est.se, tol, score, score <= 1))
    for t in times:
        h_int = lyapunov_integral(spec, fam.W1, ygrid, t)
        ceiling = math.exp(h_int) * 1.0
        pde = quad(field, y, t, lambda nodes: np.exp(fam.W1.log_value(t, nodes[:, None])))
        est = estimate_xi(spec, field.x, t, fam.W1, mc, h_integral=h_int, paths=paths[t])
        lim = 1.02 * ceiling
        score = max(pde, est.mean - 3 * est.se) / lim
        rows.append((f"ceiling xi_W1({t:g})", pde, est.mean, est.se, lim, score, score <= 1))
    return rows


def cmd_crosscheck(cfg, out, mode="measured", dry_run=False):
    spec, params = _setup(cfg)
    if dry_run:
        log(f"crosscheck: {cfg.mc.paths} paths at times {cfg.validation.crosscheck_times}")
        return EXIT_OK
    field = load_field(out, spec)
    coarse = run_solve(cfg, spec, params, scale=2)
    rows = crosscheck_rows(cfg, spec, params, field, coarse)
    write_csv(Path(out) / "crosscheck.csv",
              ["quantity", "pde", "mc_mean", "mc_se", "tol", "score", "pass"], rows, cfg.hash)
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_CROSSCHECK


def approx_rows(cfg, spec, params, mode, ns=None):
    ns = list(cfg.validation.approx_n if ns is None else ns)
    fam = WeightFamily.from_params(params)
    s = cfg.solver
    grid = _grid(cfg, params)
    win = choose_window(cfg.validation.calibrate_t)
    # level above every value of W1(t0, .) on the grid: the cutoff never acts
    big = math.exp(float(np.max(fam.W1.log_value(params.t0, grid.nodes[:, None])))) * 4
    sweep = solve_approximated(spec, ns + [big], s.x, win[-1], grid, s.dt, fam.W1, params.t0,
                               region=(cfg.validation.approx_region, win[0]), workers=workers(),
                               theta=s.theta, save_every=max(1, s.save_every),
                               save_times=win)
    cs, _ = constant_set(spec, params, win, mode)
    cs_n = approx_constant_update(cs, spec.dim)
    rows, prev = [], math.inf
    for n in ns:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", QuadratureWarning)
            rep = functionals(sweep.fields[n], fam, win, cfg.validation.r)
        K = _quiet_K(cs_n, envelope_inputs(rep))
        d = sweep.sup_diff[n]
        mono = d <= prev + 1e-12
        prev = min(prev, d)
        rows.append((n, d, K.value, math.isfinite(K.value), mono, False))
    same = bool(np.array_equal(sweep.fields[big].p, sweep.base.p))
    rows.append((big, sweep.sup_diff[big], math.nan, True, True, same))
    return rows


def cmd_approx(cfg, out, mode="measured", dry_run=False, ns=None):
    spec, params = _setup(cfg)
    if dry_run:
        log(f"approx: n-list {ns or cfg.validation.approx_n}")
        return EXIT_OK
    rows = approx_rows(cfg, spec, params, mode, ns)
    write_csv(Path(out) / "approx.csv", ["n", "sup_diff", "K_n", "finite", "monotone", "bitwise"],
              rows, cfg.hash)
    ok = all(r[3] and r[4] for r in rows) and rows[-1][5]
    return EXIT_OK if ok else EXIT_APPROX


COMMANDS = {
    "check": cmd_check,
    "constants": cmd_constants,
    "solve": cmd_solve,
    "validate": cmd_validate,
    "crosscheck": cmd_crosscheck,
    "approx": cmd_approx,
}


def run(name, cfg, out, mode="measured", dry_run=False, **kw):
    """Dispatch with the exit-code contract applied to library errors."""
    Path(out).mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[name](cfg, out, mode=mode, dry_run=dry_run, **kw)
    except ConstraintViolation as exc:
        log(f"constraint violated: {exc}")
        return EXIT_HYPOTHESIS
    except NonFinite as exc:
        log(f"non-finite value: {exc}")
        return EXIT_NONFINITE
    except MissingArtifact as exc:
        log(str(exc))
        return EXIT_MISSING
    except WindowError as exc:
        log(f"window error: {exc}")
        return EXIT_HYPOTHESIS
