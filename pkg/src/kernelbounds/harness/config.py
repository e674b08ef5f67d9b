"""INI run configuration.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` or
``;`` start a comment.  Lists are comma separated.  Only ``[operator]`` is
required; every other key has a default.

    [operator]
    family = polynomial        # polynomial | heat | ou
    m = 2
    p = 3
    s = 4
    d = 1
    potential = true           # false drops V (polynomial family only)
    q = 1.0                    # heat / ou diffusion
    rate = 1.0                 # ou drift rate

    [lyapunov]
    k = 10
    alpha, eps, eps1, eps2, t0, eps_int, sigma, c0   (optional overrides)

    [solver]
    x = 0
    radius =                   # empty: weight-informed truncation radius
    n = 12001
    dt = 0.00125
    theta = 0.5
    save_every = 2

    [mc]
    paths = 100000
    dt = 0.001
    seed = 0
    antithetic = true

    [validation]
    t_sweep = 0.05, 0.1, 0.2, 0.4
    calibrate_t = 0.4
    check_t = 0.4
    crosscheck_times = 0.1, 0.2, 0.3
    approx_n = 4, 16, 64, 256
    approx_region = 2.0
    r = 2
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from ..coefficients import heat_spec, ou_spec, validate_polynomial_params
from ..lyapunov import default_params

__all__ = ["RunConfig", "load_config", "parse_config", "ConfigError"]

_OVERRIDES = ("alpha", "eps", "eps1", "eps2", "t0", "eps_int", "sigma", "c0")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorBlock:
    family: str
    m: float = 2.0
    p: float = 3.0
    s: float = 4.0
    d: int = 1
    potential: bool = True
    q: float = 1.0
    rate: float = 1.0


@dataclass(frozen=True)
class LyapunovBlock:
    k: float = 10.0
    overrides: tuple = ()


@dataclass(frozen=True)
class SolverBlock:
    x: float = 0.0
    radius: Optional[float] = None
    n: int = 12001
    dt: float = 0.00125
    theta: float = 0.5
    save_every: int = 2


@dataclass(frozen=True)
class MCBlock:
    paths: int = 100_000
    dt: float = 1e-3
    seed: int = 0
    antithetic: bool = True


@dataclass(frozen=True)
class ValidationBlock:
    t_sweep: tuple = (0.05, 0.1, 0.2, 0.4)
    calibrate_t: float = 0.4
    check_t: float = 0.4
    crosscheck_times: tuple = (0.1, 0.2, 0.3)
    approx_n: tuple = (4, 16, 64, 256)
    approx_region: float = 2.0
    r: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    operator: OperatorBlock
    lyapunov: LyapunovBlock = field(default_factory=LyapunovBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    mc: MCBlock = field(default_factory=MCBlock)
    validation: ValidationBlock = field(default_factory=ValidationBlock)

    def canonical(self):
        return repr(asdict(self))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def build_spec(self):
        op = self.operator
        if op.family == "polynomial":
            return validate_polynomial_params(op.m, op.p, op.s, op.d, potential=op.potential)
        if op.family == "heat":
            return heat_spec(op.d, op.q)
        if op.family == "ou":
            return ou_spec(op.d, op.rate, op.q)
        raise ConfigError(f"unknown operator family {op.family!r}")

    def build_params(self, spec=None):
        spec = spec or self.build_spec()
        return default_params(spec, self.lyapunov.k, dict(self.lyapunov.overrides))

    @property
    def t_end(self):
        return 2 * max(max(self.validation.t_sweep), self.validation.check_t)


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _get(sec, key, conv, default):
    if sec is None or key not in sec or sec[key].strip() == "":
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_config(text):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if "operator" not in cp:
        raise ConfigError("missing [operator] section")
    o = cp["operator"]
    if "family" not in o:
        raise ConfigError("[operator] needs a family")
    op = OperatorBlock(
        family=o["family"].strip(),
        m=_get(o, "m", float, 2.0), p=_get(o, "p", float, 3.0), s=_get(o, "s", float, 4.0),
        d=_get(o, "d", int, 1), potential=_get(o, "potential", _bool, True),
        q=_get(o, "q", float, 1.0), rate=_get(o, "rate", float, 1.0),
    )
    ly = cp["lyapunov"] if "lyapunov" in cp else None
    ov = tuple((k, _get(ly, k, float, None)) for k in _OVERRIDES
               if _get(ly, k, float, None) is not None)
    lyap = LyapunovBlock(k=_get(ly, "k", float, 10.0), overrides=ov)
    so = cp["solver"] if "solver" in cp else None
    solver = SolverBlock(
        x=_get(so, "x", float, 0.0), radius=_get(so, "radius", float, None),
        n=_get(so, "n", int, 12001), dt=_get(so, "dt", float, 0.00125),
        theta=_get(so, "theta", float, 0.5), save_every=_get(so, "save_every", int, 2),
    )
    mc = cp["mc"] if "mc" in cp else None
    mcb = MCBlock(paths=_get(mc, "paths", int, 100_000), dt=_get(mc, "dt", float, 1e-3),
                  seed=_get(mc, "seed", int, 0), antithetic=_get(mc, "antithetic", _bool, True))
    va = cp["validation"] if "validation" in cp else None
    val = ValidationBlock(
        t_sweep=_get(va, "t_sweep", _floats, (0.05, 0.1, 0.2, 0.4)),
        calibrate_t=_get(va, "calibrate_t", float, 0.4),
        check_t=_get(va, "check_t", float, 0.4),
        crosscheck_times=_get(va, "crosscheck_times", _floats, (0.1, 0.2, 0.3)),
        approx_n=_get(va, "approx_n", _floats, (4.0, 16.0, 64.0, 256.0)),
        approx_region=_get(va, "approx_region", float, 2.0),
        r=_get(va, "r", float, 2.0),
    )
    return RunConfig(operator=op, lyapunov=lyap, solver=solver, mc=mcb, validation=val)


def load_config(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())
