import math

import numpy as np
import pytest

from kernelbounds import solver
from kernelbounds.bounds import choose_window
from kernelbounds.coefficients import custom_spec, heat_spec, ou_spec
from kernelbounds.errors import QuadratureWarning, StabilityError, TruncationError
from kernelbounds.lyapunov import ExpWeight
from kernelbounds.solver import (Grid, export_csv, functionals, gradient, solve_approximated,
                                 solve_forward, truncation_radius, weight_integral)


def heat_kernel(t, y, q=1.0):
    return np.exp(-y**2 / (4 * q * t)) / np.sqrt(4 * math.pi * q * t)


def mehler(t, y, x=0.0, rate=1.0):
    m = x * math.exp(-rate * t)
    v = (1 - math.exp(-2 * rate * t)) / rate
    return np.exp(-(y - m) ** 2 / (2 * v)) / math.sqrt(2 * math.pi * v)


def test_grid_basics():
    g = Grid(2.0, 9)
    assert g.h == 0.5 and g.nodes[4] == 0.0
    assert g.index_of(0.5) == 5
    with pytest.raises(ValueError):
        g.index_of(0.3)
    with pytest.raises(ValueError):
        Grid(1.0, 10)
    with pytest.raises(NotImplementedError):
        Grid(1.0, 11, dim=2)


def test_dt_larger_than_h_rejected():
    with pytest.raises(ValueError):
        solve_forward(heat_spec(), 0.0, 0.1, Grid(1.0, 21), 0.2)


def test_heat_oracle_scaled_diffusion():
    f = solve_forward(heat_spec(1, 0.5), 0.0, 0.2, Grid(8.0, 4001), 1e-4)
    y = f.grid.nodes
    m = np.abs(y) <= 2
    exact = heat_kernel(0.2, y, 0.5)
    assert np.max(np.abs(f.at(0.2)[m] - exact[m]) / exact[m]) < 1e-3


def test_heat_mass_conserved():
    f = solve_forward(heat_spec(), 0.0, 1.0, Grid(10.0, 2001), 2e-3)
    assert np.max(np.abs(f.mass - 1)) < 1e-10
    assert f.min_before_clamp >= -1e-12


def test_ou_off_center_source():
    f = solve_forward(ou_spec(1, 1.0), 1.0, 0.5, Grid(8.0, 3201), 5e-4)
    y = f.grid.nodes
    m = np.abs(y - 0.6) <= 2
    exact = mehler(0.5, y, 1.0)
    assert np.max(np.abs(f.at(0.5)[m] - exact[m])) / exact.max() < 2e-3


def test_truncation_error_on_small_domain():
    with pytest.raises(TruncationError):
        solve_forward(heat_spec(), 0.0, 1.0, Grid(2.0, 401), 2e-3)


def test_maximum_principle_backward_euler():
    # constant coefficients with killing: values stay in [0, max initial]
    spec = custom_spec(1, diffusion=lambda x: np.ones(x.shape[:-1] + (1, 1)),
                       diffusion_grad=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
                       drift=lambda x: np.full(x.shape, 0.7),
                       drift_grad=lambda x: np.zeros(x.shape + (1,)),
                       potential=lambda x: np.full(x.shape[:-1], 0.3),
                       potential_grad=lambda x: np.zeros(x.shape))
    f = solve_forward(spec, 0.0, 0.5, Grid(6.0, 601), 0.01, theta=1.0)
    assert f.p.min() >= 0 and f.min_before_clamp >= 0
    assert f.p[1:].max() <= f.p[0].max() * (1 + 1e-12)
    # mass decays like exp(-0.3 t), up to the first-order time error
    assert f.mass[-1] == pytest.approx(math.exp(-0.3 * 0.5), rel=1e-3)


def test_fallback_to_backward_euler(monkeypatch):
    step = solver._Stepper.step

    def bad(self, u, dt, theta):
        out = step(self, u, dt, theta)
        if theta != 1.0:
            out = out.copy()
            out[0] = -1e-6
        return out

    monkeypatch.setattr(solver._Stepper, "step", bad)
    f = solve_forward(heat_spec(), 0.0, 0.1, Grid(6.0, 601), 0.01)
    assert f.fallback and f.theta == 1.0
    with pytest.raises(StabilityError):
        solve_forward(heat_spec(), 0.0, 0.1, Grid(6.0, 601), 0.01, fallback=False)


def test_self_convergence_second_order():
    vals = []
    for n, dt in ((801, 1e-3), (1601, 5e-4), (3201, 2.5e-4)):
        f = solve_forward(heat_spec(), 0.0, 0.25, Grid(8.0, n), dt)
        vals.append(f.at(0.25)[f.grid.index_of(0.0)])
    exact = 1 / math.sqrt(math.pi)
    e = [abs(v - exact) for v in vals]
    orders = [math.log2(e[0] / e[1]), math.log2(e[1] / e[2])]
    assert all(1.7 <= o <= 2.3 for o in orders), orders


def test_gradient_exact_on_polynomials():
    h = 0.1
    y = np.arange(-20, 21) * h
    assert np.allclose(gradient(y**2, h), 2 * y, atol=1e-10)
    assert np.allclose(gradient(np.ones_like(y), h), 0)
    assert np.allclose(gradient(y**3, h)[2:-2], 3 * y[2:-2] ** 2, atol=1e-10)
    with pytest.raises(ValueError):
        gradient(np.ones(4), h)


def test_gradient_of_gaussian():
    y = np.linspace(-5, 5, 1001)
    g = gradient(heat_kernel(0.5, y), y[1] - y[0])
    exact = -y / (2 * 0.5) * heat_kernel(0.5, y)
    assert np.max(np.abs(g - exact)) < 1e-8


def test_at_interpolates_and_rejects_outside():
    f = solve_forward(heat_spec(), 0.0, 0.1, Grid(6.0, 601), 0.01)
    mid = f.at(0.055)
    assert np.allclose(mid, 0.5 * (f.at(0.05) + f.at(0.06)))
    with pytest.raises(ValueError):
        f.at(0.2)
    with pytest.raises(KeyError):
        f.index(0.0555)


def _trivial_family(rate=0.0):
    w = ExpWeight(rate, 2.0, 1.0)
    return type("Fam", (), {"w": w, "W1": w, "W2": w})()


def test_functionals_heat_unit_weights():
    f = solve_forward(heat_spec(), 0.0, 0.8, Grid(10.0, 2001), 2e-3)
    rep = functionals(f, _trivial_family(), (0.2, 0.4, 0.45, 0.55, 0.6, 0.8))
    # W = 1: xi is the mass, Xi its integral over (a0, b0)
    assert np.allclose(rep.xi1, 1.0, atol=1e-9)
    assert rep.Xi1 == pytest.approx(0.6, rel=1e-9)
    assert rep.Xi1 <= rep.Xi2
    # Fisher information of N(0, 2t) is 1/(2t); integral over (0.4, 0.6) is log(1.5)/2
    assert rep.P == pytest.approx(0.5 * math.log(1.5), rel=1e-4)
    # Eb = [int p log p]_a^b with entropy -1/2 log(4 pi e t)
    assert rep.Eb == pytest.approx(-0.5 * math.log(0.6 / 0.4), rel=1e-4)
    assert rep.P <= rep.fisher_rhs() * 1.02
    assert rep.FV == 0.0


def test_weight_integral_closed_form():
    # oracle: plain adaptive quadrature of the full line, no incomplete gamma
    from scipy import integrate
    from kernelbounds.coefficients import smoothed_norm_radial
    eps, al, be, r, a, b = 0.0075, 1.05, 2.0, 2.0, 0.4, 0.6
    val = weight_integral(eps, al, be, r, a, b)

    def space(t):
        c = r * eps * t**al
        f = lambda y: math.exp(-c * float(smoothed_norm_radial(abs(y))[0]) ** be)
        return integrate.quad(f, -1, 1)[0] + 2 * integrate.quad(f, 1, np.inf)[0]

    assert val == pytest.approx(integrate.quad(space, a, b)[0], rel=1e-8)
    assert weight_integral(0.0, al, be, r, a, b) == math.inf


def test_quadrature_warning_on_coarse_grid():
    f = solve_forward(heat_spec(), 0.0, 0.2, Grid(6.0, 61), 0.01)
    with pytest.warns(QuadratureWarning):
        functionals(f, _trivial_family(), (0.01, 0.2))


def test_truncation_radius(poly_params):
    r = truncation_radius(poly_params, 1e-4)
    assert r == 30.0
    r = truncation_radius(poly_params, 1e-4, cap=1e9)
    assert poly_params.eps * 1e-4**poly_params.alpha * r**poly_params.beta == pytest.approx(70)


def test_polynomial_run_positive(poly_field):
    assert poly_field.min_before_clamp >= -1e-12
    assert np.all(poly_field.p >= 0)
    assert not poly_field.fallback
    # killing makes the mass nonincreasing
    assert np.all(np.diff(poly_field.mass) <= 1e-12)


def test_spatial_decay_law(poly_field, poly_params):
    from kernelbounds.harness.commands import spatial_slope
    for t in (0.05, 0.1, 0.2, 0.4):
        assert spatial_slope(poly_field, t, poly_params) >= 0.8 * poly_params.eps


def test_theorem_fisher_inequality(poly_field, poly_family, poly_spec, quiet):
    for t in (0.1, 0.2, 0.4):
        rep = functionals(poly_field, poly_family, choose_window(t))
        rhs = rep.fisher_rhs(poly_spec.eta)
        assert rep.P <= rhs + 0.02 * abs(rhs)


def test_export_csv(tmp_path):
    f = solve_forward(heat_spec(), 0.0, 0.02, Grid(2.0, 21), 0.01, check_mass=False)
    path = tmp_path / "k.csv"
    export_csv(f, path, footer="config-hash=abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,y,p,grad_p"
    assert lines[-1] == "# config-hash=abc"
    assert len(lines) == 2 + len(f.times) * 21
    t, y, p, g = (float(v) for v in lines[1 + 10].split(","))
    assert p == f.p[0, 10]


def test_solve_approximated_bitwise_and_monotone(poly_spec, poly_params, poly_family):
    grid = Grid(12.0, 2401)
    big = 1e300
    sw = solve_approximated(poly_spec, [4, 64, big], 0.0, 0.4, grid, 0.005, poly_family.W1,
                            poly_params.t0, region=(2.0, 0.2), save_times=(0.2, 0.4))
    assert np.array_equal(sw.fields[big].p, sw.base.p)
    assert sw.sup_diff[4] >= sw.sup_diff[64] >= sw.sup_diff[big] == 0.0


def test_solve_approximated_workers_deterministic(poly_spec, poly_params, poly_family):
    grid = Grid(12.0, 1201)
    kw = dict(region=(2.0, None))
    a = solve_approximated(poly_spec, [4, 16], 0.0, 0.2, grid, 0.01, poly_family.W1,
                           poly_params.t0, **kw)
    b = solve_approximated(poly_spec, [4, 16], 0.0, 0.2, grid, 0.01, poly_family.W1,
                           poly_params.t0, workers=3, **kw)
    for n in (4, 16):
        assert np.array_equal(a.fields[n].p, b.fields[n].p)
