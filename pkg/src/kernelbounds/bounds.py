"""Constant pipeline, kernel and gradient envelopes.

The constants involve k-th powers of quantities that may already be large,
so every formula is written once and evaluated on ``LogNum`` values
(log-magnitude plus sign).  The same formula functions also run on plain
floats, which is how log-space fidelity is checked.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConstraintViolation, NegativeRadicandWarning, WindowError

__all__ = [
    "LogNum",
    "ConstantSet",
    "EnvelopeInputs",
    "GradientEnvelope",
    "PolynomialEnvelope",
    "assemble_constants",
    "approx_constant_update",
    "kernel_envelope",
    "gradient_envelope_K",
    "polynomial_envelopes",
    "choose_window",
    "calibrate",
    "DERIVED_NAMES",
]


class LogNum:
    """A real number stored as sign * exp(lg)."""

    __slots__ = ("lg", "sg")

    def __init__(self, lg, sg=1):
        self.lg = float(lg)
        self.sg = 0 if lg == -math.inf else int(sg)

    @classmethod
    def of(cls, x):
        if isinstance(x, LogNum):
            return x
        x = float(x)
        if x == 0:
            return cls(-math.inf, 0)
        if math.isnan(x):
            raise ValueError("LogNum of NaN")
        return cls(math.log(abs(x)), 1 if x > 0 else -1)

    def __float__(self):
        if self.sg == 0:
            return 0.0
        if self.lg > 709.78:
            return self.sg * math.inf
        return self.sg * math.exp(self.lg)

    @property
    def log10(self):
        return self.lg / math.log(10)

    def __repr__(self):
        return f"LogNum(sign={self.sg}, log={self.lg:.6g})"

    def __neg__(self):
        return LogNum(self.lg, -self.sg)

    def __add__(self, other):
        o = LogNum.of(other)
        if self.sg == 0:
            return o
        if o.sg == 0:
            return self
        hi, lo = (self, o) if self.lg >= o.lg else (o, self)
        if hi.sg == lo.sg:
            return LogNum(hi.lg + math.log1p(math.exp(lo.lg - hi.lg)), hi.sg)
        diff = -math.expm1(lo.lg - hi.lg)
        if diff <= 0:
            return LogNum(-math.inf, 0)
        return LogNum(hi.lg + math.log(diff), hi.sg)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-LogNum.of(other))

    def __rsub__(self, other):
        return LogNum.of(other) - self

    def __mul__(self, other):
        o = LogNum.of(other)
        if self.sg == 0 or o.sg == 0:
            return LogNum(-math.inf, 0)
        return LogNum(self.lg + o.lg, self.sg * o.sg)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = LogNum.of(other)
        if o.sg == 0:
            raise ZeroDivisionError("LogNum division by zero")
        if self.sg == 0:
            return self
        return LogNum(self.lg - o.lg, self.sg * o.sg)

    def __rtruediv__(self, other):
        return LogNum.of(other) / self

    def __pow__(self, e):
        e = float(e)
        if self.sg < 0:
            raise ValueError("fractional power of a negative LogNum")
        if self.sg == 0:
            if e > 0:
                return self
            if e == 0:
                return LogNum(0.0)
            raise ZeroDivisionError("0 to a negative power")
        return LogNum(self.lg * e)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

DERIVED_NAMES = ("A1", "A2", "A2t", "A3", "B1", "B2", "B3", "B4", "B4t",
                 "B5", "B6", "B6t", "B7", "B8")


def _derived(c, k, g0, g1):
    """All derived constants from c[1..12]; g0 = b0 - b, g1 = b - b1."""
    c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12 = (c[i] for i in range(1, 13))
    h = k / 2
    A1 = c1**h
    A2 = c2**k + c1**h / g0**h + c3**h + c4**h
    A2t = c2**k + c1**h / g0**h + c2**h * c7**h + c2**h * c12**h + c3**h + c4**h
    A3 = c5**k + c6**k + c2**h * c6**h
    B1 = c2
    B2 = c2 / g1 + c2 * c4 + c11
    B3 = c2 * c5**2 + c3 * c6 + c2**2 * c6 + c2 * c8 + c9
    B4 = (c3 + c2**2 + c2 / g1**0.5 + (c2 * c3 * c7)**0.5 + c2**1.5 * c7**0.5
          + (c2 * c10)**0.5 + c2 * c3**0.5 + c2 * c4**0.5 + (c2 * c11)**0.5)
    B4t = B4 + (c2 * c3 * c12)**0.5 + c2**1.5 * c12**0.5
    B5 = (c6 + c2 * c6 + (c3 * c6)**0.5 + c2 * c6**0.5 + (c2 * c3 * c6)**0.5
          + c2**1.5 * c6**0.5 + c5 + c2 * c5 + c8)
    B6 = (c1**h + c1**h / g1**h + c2**k + c2**h * c7**h + c3**h + c7**k + c4**h)
    B6t = B6 + c2**h * c12**h + c12**k
    B7 = c6**k + c2**h * c6**h + c5**k
    B8 = c6 + c5**2
    return dict(A1=A1, A2=A2, A2t=A2t, A3=A3, B1=B1, B2=B2, B3=B3, B4=B4, B4t=B4t,
                B5=B5, B6=B6, B6t=B6t, B7=B7, B8=B8)


@dataclass
class ConstantSet:
    """c1..c12 (clamped), their raw values and every derived constant.

    ``log`` holds natural logs of the derived constants; ``values`` their
    float values (inf where the float range is exceeded).
    """

    c: dict
    raw: dict
    k: float
    gaps: tuple
    log: dict
    values: dict
    clamp: bool = True
    overflow: list = field(default_factory=list)

    def __getattr__(self, name):
        if name in DERIVED_NAMES:
            return self.values[name]
        raise AttributeError(name)

    def lognum(self, name):
        if name in DERIVED_NAMES:
            return LogNum(self.log[name])
        return LogNum.of(self.c[int(name)])

    def direct(self):
        """Derived constants evaluated with plain floats (may overflow)."""
        with np.errstate(over="ignore"):
            out = _derived({i: np.float64(v) for i, v in self.c.items()}, self.k,
                           np.float64(self.gaps[0]), np.float64(self.gaps[1]))
        return {n: float(v) for n, v in out.items()}


def _as_cdict(c):
    if isinstance(c, dict):
        d = {int(i): float(v) for i, v in c.items()}
    else:
        vals = list(c)
        if len(vals) != 12:
            raise ValueError("need twelve constants c1..c12")
        d = {i + 1: float(v) for i, v in enumerate(vals)}
    missing = set(range(1, 13)) - set(d)
    if missing:
        raise ValueError(f"missing constants {sorted(missing)}")
    for i, v in d.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError(f"c{i} must be finite and nonnegative, got {v}")
    return d


def assemble_constants(c, k, gaps, *, clamp=True):
    """Evaluate A1..A3, A2~, B1..B8, B4~, B6~ from c1..c12.

    ``gaps`` is (b0 - b, b - b1).  With ``clamp`` every c_i below 1 is
    raised to 1 first; the raw values are kept in ``raw``.
    """
    raw = _as_cdict(c)
    g0, g1 = (float(g) for g in gaps)
    if not (g0 > 0 and g1 > 0):
        raise ConstraintViolation("positive window gaps", f"gaps={gaps}")
    if not k > 0:
        raise ConstraintViolation("k > 0", f"k={k}")
    cc = {i: max(v, 1.0) for i, v in raw.items()} if clamp else dict(raw)
    logs = _derived({i: LogNum.of(v) for i, v in cc.items()}, float(k),
                    LogNum.of(g0), LogNum.of(g1))
    with np.errstate(over="ignore", invalid="ignore"):
        direct = _derived({i: np.float64(v) for i, v in cc.items()}, np.float64(k),
                          np.float64(g0), np.float64(g1))
    # plain floats where they stay finite (exact on small inputs), log space beyond
    values = {n: float(direct[n]) if math.isfinite(direct[n]) else float(v)
              for n, v in logs.items()}
    overflow = [n for n, v in values.items() if math.isinf(v)]
    return ConstantSet(c=cc, raw=raw, k=float(k), gaps=(g0, g1),
                       log={n: v.lg for n, v in logs.items()}, values=values,
                       clamp=clamp, overflow=overflow)


def approx_constant_update(cs, d):
    """Constants of the approximated operator: c2 -> 2c2, c3 -> 2c3,
    c7 -> sqrt(3)(c7 + 2(1 + sqrt(d)) c12)."""
    def upd(c):
        c = dict(c)
        c[2] = 2 * c[2]
        c[3] = 2 * c[3]
        c[7] = math.sqrt(3) * (c[7] + 2 * (1 + math.sqrt(d)) * c[12])
        return c

    new = assemble_constants(upd(cs.c), cs.k, cs.gaps, clamp=cs.clamp)
    new.raw = upd(cs.raw)
    return new


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------

@dataclass
class EnvelopeInputs:
    sup_xi1: float
    Xi1: float
    Xi2: float
    E2: float = 0.0
    Eb: float = 0.0
    P: Optional[float] = None
    C_cal: float = 1.0
    calibrated: bool = False

    def __post_init__(self):
        for name in ("sup_xi1", "Xi1", "Xi2", "E2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not math.isfinite(self.Eb):
            raise ValueError("Eb must be finite")


def _kernel_formula(L, of, inp, tilde):
    A2 = L("A2t" if tilde else "A2")
    return of(inp.C_cal) * (L("A1") * of(inp.sup_xi1) + A2 * of(inp.Xi1)
                            + L("A3") * of(inp.Xi2))


def _float_getter(cs):
    return lambda name: np.float64(cs.values[name])


def kernel_envelope(cs, inp, *, tilde=True, log=False):
    """C (A1 sup xi_W1 + A2~ Xi1 + A3 Xi2), a constant bound for w p on (a, b)."""
    val = _kernel_formula(cs.lognum, LogNum.of, inp, tilde)
    if log:
        return val.lg
    with np.errstate(over="ignore", invalid="ignore"):
        direct = float(_kernel_formula(_float_getter(cs), np.float64, inp, tilde))
    return direct if math.isfinite(direct) else float(val)


@dataclass
class GradientEnvelope:
    value: float
    log: float
    groups: dict
    radicand_clamped: bool = False

    def __float__(self):
        return self.value


def _K_groups(L, of, k, inp, tilde):
    A1, A3 = L("A1"), L("A3")
    A2 = L("A2t" if tilde else "A2")
    B1, B2, B3, B5, B7, B8 = (L(n) for n in ("B1", "B2", "B3", "B5", "B7", "B8"))
    B4 = L("B4t" if tilde else "B4")
    B6 = L("B6t" if tilde else "B6")
    S, X1, X2 = (of(v) for v in (inp.sup_xi1, inp.Xi1, inp.Xi2))
    e1, e2, e12 = (k - 1) / k, (k - 2) / k, 1 / k

    g = {}
    g["G1"] = B1 * A1**e1 * S
    g["G2"] = (B1 * A2**0.5 + B2 * A2**e2 + B4 * A2**e1) * X1
    g["G3"] = (B1 * A3**0.5 + (B2 + B3) * A3**e2 + B3 * A2**e2 + (B4 + B5) * A3**e1
               + B5 * A2**e1 + B6 * B8 + B7 * B8) * X2
    g["G4"] = B1 * A1**0.5 * X1**0.5 * S**0.5
    g["G5"] = A1**e2 * (B2 * X1**(2 / k) + B3 * X2**(2 / k)) * S**e2
    g["G6"] = B1 * (A2**e1 * X1**e1 + A3**e1 * X2**e1) * S**e12
    g["G7"] = A1**e1 * (B4 * X1**e12 + B5 * X2**e12) * S**e1
    front = B6 * X1**0.5 + B7 * X2**0.5
    g["G8"] = front * of(inp.E2)**0.5
    g["G9"] = of(0.0) if inp.Eb > 0 else -(front * of(-inp.Eb)**0.5)
    total = of(0.0)
    for v in g.values():
        total = total + v
    return g, of(inp.C_cal) * total


def gradient_envelope_K(cs, inp, *, tilde=True):
    """Bound K for |w grad p| on (a1, b1), assembled group by group.

    The entropy endpoint radical sqrt(-Eb) is subtracted as printed; when
    Eb > 0 it has no real value, the group is set to 0 and flagged.
    """
    clamped = inp.Eb > 0
    if clamped:
        warnings.warn(f"entropy endpoint difference {inp.Eb:g} > 0: radical term set to 0",
                      NegativeRadicandWarning, stacklevel=2)
    g, total = _K_groups(cs.lognum, LogNum.of, cs.k, inp, tilde)
    with np.errstate(over="ignore", invalid="ignore"):
        gf, tf = _K_groups(_float_getter(cs), np.float64, cs.k, inp, tilde)
    groups = {n: float(v) for n, v in g.items()}
    value = float(total)
    if math.isfinite(tf) and all(math.isfinite(v) for v in gf.values()):
        groups = {n: float(v) + 0.0 for n, v in gf.items()}
        value = float(tf)
    return GradientEnvelope(value=value, log=total.lg if total.sg > 0 else -math.inf,
                            groups=groups, radicand_clamped=clamped)


def calibrate(observed, envelope):
    """Universal-constant fit: max over samples of observed / envelope."""
    obs = np.asarray(observed, dtype=float)
    env = np.asarray(envelope, dtype=float)
    ok = env > 0
    if not np.any(ok):
        raise ValueError("no positive envelope values to calibrate against")
    return float(np.max(obs[ok] / env[ok]))


# ---------------------------------------------------------------------------
# polynomial case
# ---------------------------------------------------------------------------

def choose_window(t):
    """(a0, a, a1, b1, b, b0) = (t/2, t, 9t/8, 11t/8, 3t/2, 2t)."""
    if not 0 < t <= 0.5:
        raise WindowError(f"window needs t in (0, 1/2], got {t}")
    return (t / 2, t, 9 * t / 8, 11 * t / 8, 3 * t / 2, 2 * t)


@dataclass(frozen=True)
class PolynomialEnvelope:
    lam: float
    exponent_p: float
    exponent_grad: float
    eps: float
    alpha: float
    beta: float

    @property
    def step3_ok(self):
        return self.alpha * self.lam / self.beta > 0.5

    def decay(self, t, y):
        from .coefficients import smoothed_norm_radial
        nu = smoothed_norm_radial(np.abs(np.asarray(y, dtype=float)))[0]
        return np.exp(-self.eps * np.asarray(t, dtype=float)**self.alpha * nu**self.beta)

    def env_p(self, t, y):
        t = np.asarray(t, dtype=float)
        return t**self.exponent_p * self.decay(t, y)

    def env_grad(self, t, y):
        t = np.asarray(t, dtype=float)
        return (1 - np.log(t)) * t**self.exponent_grad * self.decay(t, y)


def polynomial_envelopes(params, m=None, p=None, s=None, k=None, t=None):
    """Envelope shapes for p and |grad p| without the universal constant."""
    m = params.m if m is None else m
    p = params.p if p is None else p
    s = params.s if s is None else s
    k = params.k if k is None else k
    if t is not None and not 0 < t <= 0.5:
        raise WindowError(f"envelope needs t in (0, 1/2], got {t}")
    al, be = params.alpha, params.beta
    lam = max(m, p, s / 2)
    return PolynomialEnvelope(
        lam=lam,
        exponent_p=1 - al * lam * k / be,
        exponent_grad=1.5 - (3 * al * lam * k + al) / (2 * be),
        eps=params.eps, alpha=al, beta=be,
    )
