"""Coefficient fields of divergence-form operators

    A u = div(Q grad u) + F . grad u - V u

together with the C^2 smoothed norm used by the polynomial prototype and the
bounded-diffusion approximation Q_n.

Points are arrays of shape ``(..., d)``.  Matrix fields come back with shape
``(..., d, d)``; the diffusion gradient is indexed ``grad_Q[..., h, i, j] =
D_h q_ij``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from .errors import ConstraintViolation

__all__ = [
    "OperatorSpec",
    "ApproximatedSpec",
    "smoothed_norm",
    "smoothed_norm_radial",
    "validate_polynomial_params",
    "custom_spec",
    "heat_spec",
    "ou_spec",
    "eval_fields",
    "min_ellipticity",
    "cutoff_profile",
    "approximate_spec",
]


# ---------------------------------------------------------------------------
# smoothed norm |x|_*
# ---------------------------------------------------------------------------

def smoothed_norm_radial(r):
    """Radial profile of |x|_* and its first three derivatives in r.

    Inside the unit ball the profile is the even quartic
    3/8 + 3/4 r^2 - 1/8 r^4, which matches r up to second order at r = 1.
    """
    r = np.asarray(r, dtype=float)
    inside = r <= 1.0
    r2 = r * r
    f = np.where(inside, 0.375 + 0.75 * r2 - 0.125 * r2 * r2, r)
    f1 = np.where(inside, 1.5 * r - 0.5 * r2 * r, 1.0)
    f2 = np.where(inside, 1.5 - 1.5 * r2, 0.0)
    # third derivative jumps at r = 1; the sphere itself takes the outer value
    f3 = np.where(r < 1.0, -3.0 * r, 0.0)
    return f, f1, f2, f3


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


def smoothed_norm(x):
    """Evaluate |x|_* at points ``x`` of shape (..., d).

    Returns ``(value, gradient, hessian)`` with shapes (...), (..., d) and
    (..., d, d).
    """
    x = _as_points(x)
    d = x.shape[-1]
    r = np.linalg.norm(x, axis=-1)
    value = smoothed_norm_radial(r)[0]
    inside = r <= 1.0
    safe_r = np.where(inside, 1.0, r)
    # f'(r)/r, regular at the origin
    g_over_r = np.where(inside, 1.5 - 0.5 * r * r, 1.0 / safe_r)
    grad = g_over_r[..., None] * x
    eye = np.eye(d)
    outer = x[..., :, None] * x[..., None, :]
    # inside: (3/2 - r^2/2) I - x x^T ; outside: (I - xx^T/r^2)/r
    h_in = (1.5 - 0.5 * r * r)[..., None, None] * eye - outer
    h_out = (eye - outer / (safe_r**2)[..., None, None]) / safe_r[..., None, None]
    hess = np.where(inside[..., None, None], h_in, h_out)
    return value, grad, hess


# ---------------------------------------------------------------------------
# operator specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients Q, F, V of the operator plus their first derivatives.

    ``family`` is ``"polynomial"`` for the prototype
    Q = (1+|x|_*^m) I, F = -|x|^{p-1} x, V = |x|^s, otherwise ``"custom"``.
    ``params`` carries (m, p, s) whenever the fields derive from that family
    (including custom variants such as the zero-potential one).
    """

    dim: int
    eta: float
    diffusion: Callable
    diffusion_grad: Callable
    drift: Callable
    drift_grad: Callable
    potential: Callable
    potential_grad: Callable
    family: str = "custom"
    params: Optional[tuple] = None
    name: str = ""

    @property
    def is_polynomial(self):
        return self.family == "polynomial"


def eval_fields(spec, x):
    """Evaluate every coefficient field of ``spec`` at points ``x``."""
    x = _as_points(x)
    if x.shape[-1] != spec.dim:
        raise ValueError(f"points have dimension {x.shape[-1]}, spec has {spec.dim}")
    return {
        "Q": spec.diffusion(x),
        "grad_Q": spec.diffusion_grad(x),
        "F": spec.drift(x),
        "grad_F": spec.drift_grad(x),
        "V": spec.potential(x),
        "grad_V": spec.potential_grad(x),
    }


def min_ellipticity(spec, x):
    """Smallest eigenvalue of Q over the sample points ``x``."""
    q = spec.diffusion(_as_points(x))
    return float(np.min(np.linalg.eigvalsh(q)))


# --- polynomial prototype -------------------------------------------------

def _poly_Q(x, m):
    nu = smoothed_norm(x)[0]
    d = x.shape[-1]
    return (1.0 + nu**m)[..., None, None] * np.eye(d)


def _poly_grad_Q(x, m):
    nu, dnu, _ = smoothed_norm(x)
    d = x.shape[-1]
    dq = (m * nu ** (m - 1))[..., None] * dnu  # (..., d)
    return dq[..., :, None, None] * np.eye(d)


def _poly_F(x, p):
    r = np.linalg.norm(x, axis=-1)
    return -(r ** (p - 1))[..., None] * x


def _poly_grad_F(x, p):
    r = np.linalg.norm(x, axis=-1)
    d = x.shape[-1]
    pos = r > 0
    safe = np.where(pos, r, 1.0)
    a = np.where(pos, safe ** (p - 1), 0.0)
    b = np.where(pos, (p - 1) * safe ** (p - 3), 0.0)
    outer = x[..., :, None] * x[..., None, :]
    return -(a[..., None, None] * np.eye(d) + b[..., None, None] * outer)


def _poly_V(x, s):
    return np.linalg.norm(x, axis=-1) ** s


def _poly_grad_V(x, s):
    r = np.linalg.norm(x, axis=-1)
    pos = r > 0
    safe = np.where(pos, r, 1.0)
    # the gradient at the origin is set to 0 (singular for s < 1)
    coef = np.where(pos, s * safe ** (s - 2), 0.0)
    return coef[..., None] * x


def _zero_scalar(x):
    return np.zeros(x.shape[:-1])


def _zero_vector(x):
    return np.zeros(x.shape)


def _zero_matrix(x):
    return np.zeros(x.shape + (x.shape[-1],))


def _zero_tensor3(x):
    d = x.shape[-1]
    return np.zeros(x.shape[:-1] + (d, d, d))


def validate_polynomial_params(m, p, s, d=1, *, potential=True):
    """Build the polynomial prototype after checking its admissibility.

    With ``potential=False`` the killing term is dropped (V = 0); the result
    is then tagged ``custom`` but keeps (m, p, s) for parameter defaults.
    """
    for name, val in (("m", m), ("p", p), ("s", s)):
        if not math.isfinite(val):
            raise ConstraintViolation(f"{name} finite", f"{name}={val}")
    if int(d) != d or d < 1:
        raise ConstraintViolation("d positive integer", f"d={d}")
    if not m > 0:
        raise ConstraintViolation("m > 0", f"m={m}")
    if not p > max(m - 1, 1):
        raise ConstraintViolation("p > (m-1)∨1", f"p={p}, m={m}")
    if not s > abs(m - 2):
        raise ConstraintViolation("s > |m-2|", f"s={s}, m={m}")
    m, p, s, d = float(m), float(p), float(s), int(d)
    if potential:
        V, gV, family = partial(_poly_V, s=s), partial(_poly_grad_V, s=s), "polynomial"
        name = f"polynomial({m:g},{p:g},{s:g})"
    else:
        V, gV, family = _zero_scalar, _zero_vector, "custom"
        name = f"polynomial({m:g},{p:g},{s:g})-no-potential"
    return OperatorSpec(
        dim=d,
        eta=1.0,
        diffusion=partial(_poly_Q, m=m),
        diffusion_grad=partial(_poly_grad_Q, m=m),
        drift=partial(_poly_F, p=p),
        drift_grad=partial(_poly_grad_F, p=p),
        potential=V,
        potential_grad=gV,
        family=family,
        params=(m, p, s),
        name=name,
    )


def custom_spec(dim, *, diffusion, diffusion_grad, drift=None, drift_grad=None,
                potential=None, potential_grad=None, eta=1.0, name="custom"):
    """Wrap user-supplied fields.  Missing drift/potential default to zero."""
    return OperatorSpec(
        dim=int(dim),
        eta=float(eta),
        diffusion=diffusion,
        diffusion_grad=diffusion_grad,
        drift=drift or _zero_vector,
        drift_grad=drift_grad or _zero_matrix,
        potential=potential or _zero_scalar,
        potential_grad=potential_grad or _zero_vector,
        family="custom",
        name=name,
    )


def _const_Q(x, q):
    d = x.shape[-1]
    return np.broadcast_to(q * np.eye(d), x.shape[:-1] + (d, d)).copy()


def _linear_drift(x, rate):
    return -rate * x


def _linear_drift_grad(x, rate):
    d = x.shape[-1]
    return np.broadcast_to(-rate * np.eye(d), x.shape[:-1] + (d, d)).copy()


def heat_spec(d=1, q=1.0):
    """Q = q I, F = 0, V = 0."""
    return custom_spec(d, diffusion=partial(_const_Q, q=float(q)),
                       diffusion_grad=_zero_tensor3, eta=float(q), name="heat")


def ou_spec(d=1, rate=1.0, q=1.0):
    """Ornstein-Uhlenbeck generator q Δ - rate x . grad."""
    return custom_spec(d, diffusion=partial(_const_Q, q=float(q)),
                       diffusion_grad=_zero_tensor3,
                       drift=partial(_linear_drift, rate=float(rate)),
                       drift_grad=partial(_linear_drift_grad, rate=float(rate)),
                       eta=float(q), name="ou")


# ---------------------------------------------------------------------------
# bounded-diffusion approximation
# ---------------------------------------------------------------------------

_RAMP = 0.25                    # width of the smooth shoulders in log2-space
_SLOPE = 1.0 / (1.0 - _RAMP)    # plateau height of d phi / d log2|s|


def _smoothstep(u):
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def _smoothstep_integral(u):
    u2 = u * u
    return u2 * u2 * (2.5 + u * (-3.0 + u))


def cutoff_profile(s):
    """Cutoff phi and s*phi'(s).

    phi = 1 on (-1, 1), 0 outside (-2, 2), C^3 in between.  The transition is
    a plateau-shaped ramp in log2|s| so that |s phi'(s)| <= (4/3)/ln 2 < 2.
    """
    a = np.abs(np.asarray(s, dtype=float))
    with np.errstate(divide="ignore"):
        u = np.clip(np.log2(np.where(a > 0, a, 1.0)), 0.0, 1.0)
    lo = u < _RAMP
    hi = u > 1.0 - _RAMP
    bump = np.where(lo, _smoothstep(u / _RAMP),
                    np.where(hi, _smoothstep((1.0 - u) / _RAMP), 1.0))
    integral = np.where(
        lo, _RAMP * _smoothstep_integral(u / _RAMP),
        np.where(hi, (1.0 - _RAMP) - _RAMP * _smoothstep_integral((1.0 - u) / _RAMP),
                 0.5 * _RAMP + (u - _RAMP)))
    phi = 1.0 - _SLOPE * integral
    s_dphi = -_SLOPE * bump / math.log(2.0)
    phi = np.where(a <= 1.0, 1.0, np.where(a >= 2.0, 0.0, phi))
    s_dphi = np.where((a <= 1.0) | (a >= 2.0), 0.0, s_dphi)
    return phi, s_dphi


def _check_cutoff_profile():
    s = np.linspace(-3.0, 3.0, 60001)
    phi, s_dphi = cutoff_profile(s)
    if np.max(np.abs(s_dphi)) > 2.0 or np.min(phi) < 0.0 or np.max(phi) > 1.0:
        raise AssertionError("cutoff profile violates |s phi'(s)| <= 2 or 0 <= phi <= 1")
    return float(np.max(np.abs(s_dphi)))


def _approx_phi(x, n, t0, weight):
    logw = weight.log_value(t0, x)
    s = np.exp(logw - math.log(n))
    return cutoff_profile(s)


def _approx_Q(x, base, n, t0, weight):
    phi, _ = _approx_phi(x, n, t0, weight)
    q = base.diffusion(x)
    d = x.shape[-1]
    return phi[..., None, None] * q + (1.0 - phi)[..., None, None] * (base.eta * np.eye(d))


def _approx_grad_Q(x, base, n, t0, weight):
    phi, s_dphi = _approx_phi(x, n, t0, weight)
    q = base.diffusion(x)
    gq = base.diffusion_grad(x)
    d = x.shape[-1]
    # phi'(W/n)/n * grad W == (s phi'(s)) * grad log W, finite even when W overflows
    glog = weight.grad_log(t0, x)
    corr = (s_dphi[..., None] * glog)[..., :, None, None] * (q - base.eta * np.eye(d))[..., None, :, :]
    return phi[..., None, None, None] * gq + corr


@dataclass(frozen=True)
class ApproximatedSpec:
    """Operator A_n with Q_n = phi_n Q + (1 - phi_n) eta I, phi_n = phi(W1(t0,.)/n)."""

    base: OperatorSpec
    n: float
    t0: float
    weight: object
    spec: OperatorSpec = field(repr=False)
    max_s_dphi: float = 0.0

    def phi(self, x):
        return _approx_phi(_as_points(x), self.n, self.t0, self.weight)[0]


def approximate_spec(spec, n, t0, weight):
    """Approximate ``spec`` by bounded diffusion coefficients.

    ``weight`` must expose ``log_value(t, x)`` and ``grad_log(t, x)`` (the
    logarithm of W1 and its spatial gradient); working with log W1 keeps the
    cutoff well defined where W1 itself overflows.
    """
    if not n >= 1:
        raise ValueError(f"cutoff level must be >= 1, got {n}")
    bound = _check_cutoff_profile()
    kw = dict(base=spec, n=float(n), t0=float(t0), weight=weight)
    approx = OperatorSpec(
        dim=spec.dim,
        eta=spec.eta,
        diffusion=partial(_approx_Q, **kw),
        diffusion_grad=partial(_approx_grad_Q, **kw),
        drift=spec.drift,
        drift_grad=spec.drift_grad,
        potential=spec.potential,
        potential_grad=spec.potential_grad,
        family="custom",
        params=spec.params,
        name=f"{spec.name}|n={n:g}",
    )
    return ApproximatedSpec(base=spec, n=float(n), t0=float(t0), weight=weight,
                            spec=approx, max_s_dphi=bound)
