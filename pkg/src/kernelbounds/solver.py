"""Finite-volume solver for the forward equation of the transition kernel.

    d_t rho = d_y (q d_y rho - F rho) - V rho,   rho(0) = delta_x

on [-R, R] with zero Dirichlet data.  The face flux is exponentially
fitted (Scharfetter-Gummel): it is upwind for large cell Peclet numbers,
central for small ones, and keeps the system matrix an M-matrix.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special
from scipy.linalg import get_lapack_funcs

from .coefficients import approximate_spec, eval_fields, smoothed_norm_radial
from .errors import QuadratureWarning, StabilityError, TruncationError

__all__ = [
    "Grid",
    "KernelField",
    "FunctionalReport",
    "solve_forward",
    "gradient",
    "functionals",
    "solve_approximated",
    "ApproxSweep",
    "truncation_radius",
    "export_csv",
    "NEG_TOL",
    "FLOOR_REL",
]

NEG_TOL = 1e-12
FLOOR_REL = 1e-30
MASS_LOSS_TOL = 1e-8

_gttrf, _gttrs = get_lapack_funcs(("gttrf", "gttrs"), dtype=np.float64)


@dataclass(frozen=True)
class Grid:
    radius: float
    n: int
    dim: int = 1

    def __post_init__(self):
        if self.dim != 1:
            raise NotImplementedError("the solver handles d = 1")
        if self.n < 5 or self.n % 2 == 0:
            raise ValueError(f"node count must be odd and >= 5, got {self.n}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def h(self):
        return 2 * self.radius / (self.n - 1)

    @property
    def nodes(self):
        return np.linspace(-self.radius, self.radius, self.n)

    @property
    def faces(self):
        y = self.nodes
        return 0.5 * (y[1:] + y[:-1])

    def index_of(self, x):
        j = int(round((x + self.radius) / self.h))
        if j < 0 or j >= self.n or abs(self.nodes[j] - x) > 1e-9 * max(1.0, self.radius):
            raise ValueError(f"source point {x} is not a grid node")
        return j


def truncation_radius(params, t_init, level=70.0, cap=30.0):
    """R with eps t_init^alpha R^beta = level, capped."""
    r = (level / (params.eps * t_init**params.alpha)) ** (1 / params.beta)
    return min(r, cap)


@dataclass
class KernelField:
    grid: Grid
    x: float
    times: np.ndarray
    p: np.ndarray
    dt: float
    theta: float
    spec: object = None
    boundary: str = "dirichlet"
    t_init: float = 0.0
    min_before_clamp: float = 0.0
    boundary_loss: float = 0.0
    fallback: bool = False
    mass: np.ndarray = None
    _grad: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def y(self):
        return self.grid.nodes

    def index(self, t):
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, t):
            raise KeyError(f"time {t} is not stored")
        return j

    def at(self, t):
        """Profile at time t, linear in time between stored samples."""
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"t={t} outside solved range [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t))
        if j < len(ts) and abs(ts[j] - t) <= 1e-12 * max(1.0, t):
            return self.p[j]
        if j > 0 and abs(ts[j - 1] - t) <= 1e-12 * max(1.0, t):
            return self.p[j - 1]
        j = min(max(j, 1), len(ts) - 1)
        lam = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        return (1 - lam) * self.p[j - 1] + lam * self.p[j]

    @property
    def grad(self):
        if self._grad is None:
            self._grad = gradient(self)
        return self._grad


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

def _bern(z):
    """z / (exp(z) - 1), with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-6
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = z / np.expm1(z)
    out = np.where(small, 1 - z / 2 + z * z / 12, out)
    # exp overflow for large positive z: the fraction tends to 0
    return np.where(np.isfinite(out), out, 0.0)


def _operator(spec, grid):
    """Tridiagonal (lower, diag, upper) of the semi-discrete operator on interior nodes,
    and the boundary-face coefficients used for the mass-loss bookkeeping."""
    h = grid.h
    faces = grid.faces[:, None]
    ff = eval_fields(spec, faces)
    q = ff["Q"][:, 0, 0]
    F = ff["F"][:, 0]
    V = eval_fields(spec, grid.nodes[:, None])["V"]
    pe = F * h / q
    fwd = q / h**2 * _bern(pe)      # weight of p_{j+1} in face j+1/2
    bwd = q / h**2 * _bern(-pe)     # weight of p_j in face j+1/2
    # interior node j (1..n-2) touches faces j-1/2 (index j-1) and j+1/2 (index j)
    lower = bwd[1:-1]               # coefficient of p_{j-1} for j = 2..n-2
    upper = fwd[1:-1]               # coefficient of p_{j+1} for j = 1..n-3
    diag = -bwd[1:] - fwd[:-1] - V[1:-1]
    return lower, diag, upper, fwd[0], bwd[-1], V


def _matvec(lower, diag, upper, u):
    out = diag * u
    out[1:] += lower * u[:-1]
    out[:-1] += upper * u[1:]
    return out


class _Stepper:
    def __init__(self, lower, diag, upper):
        self.lower, self.diag, self.upper = lower, diag, upper
        self._cache = {}

    def step(self, u, dt, theta):
        key = (dt, theta)
        if key not in self._cache:
            a = -theta * dt * self.lower
            b = 1 - theta * dt * self.diag
            c = -theta * dt * self.upper
            dl, d, du, du2, ipiv, info = _gttrf(a, b, c)
            if info != 0:
                raise StabilityError(f"tridiagonal factorization failed (info={info})")
            self._cache = {key: (dl, d, du, du2, ipiv)}
        rhs = u + (1 - theta) * dt * _matvec(self.lower, self.diag, self.upper, u)
        dl, d, du, du2, ipiv = self._cache[key]
        x, info = _gttrs(dl, d, du, du2, ipiv, rhs)
        if info != 0:
            raise StabilityError(f"tridiagonal solve failed (info={info})")
        return x


def _parametrix(spec, grid, x, t):
    q = float(eval_fields(spec, np.array([[x]]))["Q"][0, 0, 0])
    v = float(eval_fields(spec, np.array([[x]]))["V"][0])
    y = grid.nodes
    return (4 * math.pi * q * t) ** -0.5 * np.exp(-(y - x) ** 2 / (4 * q * t) - v * t)


def _schedule(t_init, dt, T_end, ratio=1.25):
    """Graded steps from t_init to the first multiple of dt, then uniform."""
    first = math.floor(t_init / dt + 1e-9) * dt + dt
    steps = []
    t = t_init
    s = min(t_init / 4, dt)
    while t + s * ratio < first - 1e-15:
        steps.append(s)
        t += s
        s *= ratio
    steps.append(first - t)
    n_uniform = int(round((T_end - first) / dt))
    if first > T_end + 1e-12:
        raise ValueError("T_end too small for the chosen dt")
    steps.extend([dt] * max(n_uniform, 0))
    return steps, first


def solve_forward(spec, x, T_end, grid, dt, *, theta=0.5, rannacher=4, t_init=None,
                  save_every=1, save_times=(), fallback=True, check_mass=True):
    """Kernel p(t, x, .) on ``grid`` from t_init to T_end.

    Stored samples: t_init, every ``save_every``-th uniform step and each
    entry of ``save_times`` (which must be multiples of dt).  Values below
    -1e-12 trigger a retry with theta = 1 (or StabilityError without
    ``fallback``); the stored field is clamped at 0.
    """
    if spec.dim != 1:
        raise NotImplementedError("the solver handles d = 1")
    if dt > grid.h * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds the grid spacing {grid.h}")
    j0 = grid.index_of(x)
    if t_init is None:
        t_init = min(1e-4, 10 * dt)
    try:
        return _solve(spec, x, T_end, grid, dt, theta, rannacher, t_init, save_every,
                      save_times, check_mass, j0)
    except StabilityError:
        if not fallback or theta == 1.0:
            raise
    out = _solve(spec, x, T_end, grid, dt, 1.0, 0, t_init, save_every, save_times,
                 check_mass, j0)
    out.fallback = True
    return out


def _solve(spec, x, T_end, grid, dt, theta, rannacher, t_init, save_every, save_times,
           check_mass, j0):
    lower, diag, upper, left_w, right_w, V = _operator(spec, grid)
    stepper = _Stepper(lower, diag, upper)
    h = grid.h
    p0 = _parametrix(spec, grid, x, t_init)
    p0[0] = p0[-1] = 0.0
    # the sampled Gaussian may be narrower than a few cells; restore its exact mass
    v0 = float(eval_fields(spec, np.array([[x]]))["V"][0])
    p0 *= math.exp(-v0 * t_init) / (h * p0.sum())
    u = p0[1:-1].copy()

    steps, first = _schedule(t_init, dt, T_end)
    n_graded = len(steps) - int(round((T_end - first) / dt))
    k_first = int(round(first / dt))
    forced = {int(round(s / dt)) for s in save_times}
    times, snaps, masses = [t_init], [p0.copy()], [h * p0.sum()]
    killing_free = not np.any(V)
    loss = 0.0
    min_val = 0.0
    for i, s in enumerate(steps):
        th = 1.0 if i < rannacher else theta
        out0 = left_w * u[0] + right_w * u[-1]
        u = stepper.step(u, s, th)
        out1 = left_w * u[0] + right_w * u[-1]
        loss += s * h * (th * out1 + (1 - th) * out0)
        mn = float(u.min())
        min_val = min(min_val, mn)
        if mn < -NEG_TOL:
            raise StabilityError(f"negative value {mn:.3e} in step {i} (theta={th})")
        if i < n_graded - 1:
            continue
        k = k_first + i - (n_graded - 1)
        if k % save_every == 0 or k == k_first or k in forced or i == len(steps) - 1:
            full = np.zeros(grid.n)
            full[1:-1] = np.maximum(u, 0.0)
            times.append(k * dt)
            snaps.append(full)
            masses.append(h * full.sum())
    if check_mass and killing_free and loss > MASS_LOSS_TOL:
        raise TruncationError(f"boundary mass loss {loss:.3e} exceeds {MASS_LOSS_TOL:g}")
    return KernelField(grid=grid, x=x, times=np.array(times), p=np.array(snaps), dt=dt,
                       theta=theta, spec=spec, t_init=t_init, min_before_clamp=min_val,
                       boundary_loss=loss, mass=np.array(masses))


# ---------------------------------------------------------------------------
# derivatives and functionals
# ---------------------------------------------------------------------------

def _diff(u, h):
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    if n < 5:
        raise ValueError("gradient needs at least 5 nodes")
    g = np.empty_like(u)
    g[..., 2:-2] = (u[..., :-4] - 8 * u[..., 1:-3] + 8 * u[..., 3:-1] - u[..., 4:]) / (12 * h)
    for j in (0, 1):
        g[..., j] = (-3 * u[..., j] + 4 * u[..., j + 1] - u[..., j + 2]) / (2 * h)
    for j in (n - 2, n - 1):
        g[..., j] = (3 * u[..., j] - 4 * u[..., j - 1] + u[..., j - 2]) / (2 * h)
    return g


def gradient(field, h=None):
    """d_y p: fourth-order central differences inside, one-sided second order
    at the two nodes next to each end.  Accepts a KernelField or an array."""
    if isinstance(field, KernelField):
        return _diff(field.p, field.grid.h)
    if h is None:
        raise ValueError("spacing h required for raw arrays")
    return _diff(field, h)


def _trap(f, x, axis=-1):
    return np.trapezoid(f, x, axis=axis)


def _coarse_idx(n):
    idx = np.arange(0, n, 2)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def _spacetime(vals, y, ts):
    """Double trapezoid and its coarse (every other node/sample) counterpart."""
    fine = _trap(_trap(vals, y, axis=1), ts)
    iy, it = _coarse_idx(len(y)), _coarse_idx(len(ts))
    if len(it) < 2:
        coarse = _trap(_trap(vals[:, iy], y[iy], axis=1), ts)
    else:
        coarse = _trap(_trap(vals[np.ix_(it, iy)], y[iy], axis=1), ts[it])
    return fine, abs(fine - coarse)


def _space(vals, y):
    iy = _coarse_idx(len(y))
    fine = _trap(vals, y, axis=-1)
    return fine, np.abs(fine - _trap(vals[..., iy], y[iy], axis=-1))


@dataclass
class FunctionalReport:
    times: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    Xi1: float
    Xi2: float
    H1: float
    H2: float
    P: float
    E2: float
    Eb: float
    FV: float
    grad_norm_r: float
    weight_integral_r: float
    r: float
    window: tuple
    errors: dict = field(default_factory=dict)

    def fisher_rhs(self, eta=1.0):
        """(1/eta^2) int(|F|^2 + V^2) p + E2 - (2/eta) Eb."""
        return self.FV / eta**2 + self.E2 - 2 * self.Eb / eta


def _times_in(field, lo, hi):
    ts = field.times
    inner = ts[(ts > lo + 1e-12) & (ts < hi - 1e-12)]
    return np.concatenate([[lo], inner, [hi]])


def _profiles(field, ts):
    return np.array([field.at(t) for t in ts])


def _weighted(p, logw):
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = np.exp(np.log(p[pos]) + logw[pos])
    return out


def _xlogx(p, floor, power):
    out = np.zeros_like(p)
    m = p >= floor
    out[m] = p[m] * np.abs(np.log(p[m])) ** power if power == 2 else p[m] * np.log(p[m])
    return out


def weight_integral(eps, alpha, beta, r, a, b):
    """int_a^b int_R exp(-r eps t^alpha |y|_*^beta) dy dt with the |y| > 1 part
    from the incomplete gamma function."""
    from scipy import integrate

    if not eps * r > 0:
        return math.inf

    def space(t):
        c = r * eps * t**alpha
        inner = integrate.quad(lambda s: math.exp(-c * float(smoothed_norm_radial(s)[0]) ** beta),
                               0.0, 1.0)[0]
        x = 1.0 / beta
        tail = x * c ** (-x) * special.gamma(x) * special.gammaincc(x, c)
        return 2 * (inner + tail)

    return integrate.quad(space, a, b, limit=200)[0]


def functionals(field, weights, window, r=2.0):
    """Weighted masses, their time integrals, Fisher and entropy integrals.

    ``weights`` provides ``w``, ``W1`` and ``W2`` evaluators (a WeightFamily);
    ``window`` is (a0, a, a1, b1, b, b0) or (a0, b0).
    """
    w = tuple(float(v) for v in window)
    if len(w) == 2:
        a0, b0 = w
        a, b = a0, b0
    else:
        a0, a, _, _, b, b0 = w
    ts_lo, ts_hi = field.times[0], field.times[-1]
    if a0 < ts_lo - 1e-12 or b0 > ts_hi + 1e-12:
        raise ValueError(f"window ({a0}, {b0}) outside solved range ({ts_lo}, {ts_hi})")
    y = field.grid.nodes
    pts = y[:, None]
    errs = {}

    tw = _times_in(field, a0, b0)
    P0 = _profiles(field, tw)
    lw1 = np.array([weights.W1.log_value(t, pts) for t in tw])
    lw2 = np.array([weights.W2.log_value(t, pts) for t in tw])
    xi1, e1 = _space(_weighted(P0, lw1), y)
    xi2, e2 = _space(_weighted(P0, lw2), y)
    Xi1, eX1 = _spacetime(_weighted(P0, lw1), y, tw)
    Xi2, eX2 = _spacetime(_weighted(P0, lw2), y, tw)
    errs.update(xi1=float(np.max(e1)), xi2=float(np.max(e2)), Xi1=eX1, Xi2=eX2)

    tq = _times_in(field, a, b)
    Pq = _profiles(field, tq)
    G = gradient(Pq, field.grid.h)
    floor = FLOOR_REL * float(Pq.max())
    fisher = np.zeros_like(Pq)
    m = Pq >= floor
    fisher[m] = G[m] ** 2 / Pq[m]
    P, eP = _spacetime(fisher, y, tq)
    E2, eE2 = _spacetime(_xlogx(Pq, floor, 2), y, tq)
    ends, eends = _space(_xlogx(Pq[[0, -1]], floor, 1), y)
    Eb = float(ends[1] - ends[0])
    fv = np.zeros_like(y)
    if field.spec is not None:
        f = eval_fields(field.spec, pts)
        fv = f["F"][:, 0] ** 2 + f["V"] ** 2
    FV, eFV = _spacetime(Pq * fv, y, tq)
    gr, egr = _spacetime(np.abs(G) ** r, y, tq)
    wint = weight_integral(weights.w.rate, weights.w.alpha, weights.w.power, r, a, b)
    errs.update(P=eP, E2=eE2, Eb=float(eends.sum()), FV=eFV, grad_norm_r=egr)

    rep = FunctionalReport(times=tw, xi1=xi1, xi2=xi2, Xi1=float(Xi1), Xi2=float(Xi2),
                           H1=float(np.max(xi1)), H2=float(np.max(xi2)), P=float(P),
                           E2=float(E2), Eb=Eb, FV=float(FV), grad_norm_r=float(gr) ** (1 / r),
                           weight_integral_r=wint, r=r, window=w, errors=errs)
    for name in ("Xi1", "Xi2", "P", "E2", "FV"):
        val = getattr(rep, name)
        if val > 0 and errs[name] > 0.01 * abs(val):
            warnings.warn(f"{name}: refinement difference {errs[name]:.3e} exceeds 1%",
                          QuadratureWarning, stacklevel=2)
    return rep


# ---------------------------------------------------------------------------
# approximation sweep
# ---------------------------------------------------------------------------

@dataclass
class ApproxSweep:
    base: KernelField
    fields: dict
    sup_diff: dict
    region: tuple


def solve_approximated(spec, ns, x, T_end, grid, dt, weight, t0, *, region=(2.0, None),
                       workers=1, **solve_kw):
    """Solve with A and with A_n for each n; report sup |p_n - p| over |y| <= region[0]
    and stored times >= region[1] (all stored times by default)."""
    radius, t_min = region
    specs = {n: approximate_spec(spec, n, t0, weight).spec for n in ns}
    jobs = [("base", spec)] + [(n, s) for n, s in specs.items()]

    def run(job):
        return job[0], solve_forward(job[1], x, T_end, grid, dt, **solve_kw)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = dict(ex.map(run, jobs))
    else:
        results = dict(map(run, jobs))
    base = results.pop("base")
    ymask = np.abs(grid.nodes) <= radius
    tmask = np.ones(len(base.times), bool) if t_min is None else base.times >= t_min - 1e-12
    sup = {n: float(np.max(np.abs(f.p[np.ix_(tmask, ymask)] - base.p[np.ix_(tmask, ymask)])))
           for n, f in results.items()}
    return ApproxSweep(base=base, fields=results, sup_diff=sup, region=region)


def export_csv(field, path, footer=None):
    """Write t,y,p,grad_p rows, time-major, 17 significant digits."""
    g = field.grad
    y = field.grid.nodes
    with open(path, "w") as fh:
        fh.write("t,y,p,grad_p\n")
        for i, t in enumerate(field.times):
            for j in range(len(y)):
                fh.write(f"{t:.17g},{y[j]:.17g},{field.p[i, j]:.17g},{g[i, j]:.17g}\n")
        if footer:
            fh.write(f"# {footer}\n")
