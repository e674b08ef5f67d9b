import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernelbounds.bounds import (DERIVED_NAMES, EnvelopeInputs, LogNum, approx_constant_update,
                                 assemble_constants, calibrate, choose_window, gradient_envelope_K,
                                 kernel_envelope, polynomial_envelopes)
from kernelbounds.errors import ConstraintViolation, NegativeRadicandWarning, WindowError

UNIT = EnvelopeInputs(1.0, 1.0, 1.0, E2=1.0, Eb=0.0)
K_UNIT = 284.76723176542146


def unit_set(**kw):
    return assemble_constants([1.0] * 12, 10, (1.0, 1.0), **kw)


def test_unit_constants_exact():
    cs = unit_set()
    assert (cs.A1, cs.A2, cs.A3, cs.B8) == (1.0, 4.0, 3.0, 2.0)
    assert cs.A2t == 6.0


def test_a3_hand_example():
    c = [1.0] * 12
    c[4], c[5] = 2.0, 3.0
    assert assemble_constants(c, 8, (1, 1)).A3 == 6898.0


def test_invariant_formulas():
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = rng.uniform(1, 4, 12)
        cs = assemble_constants(c, 10, (0.3, 0.1))
        assert cs.A1 == pytest.approx(c[0] ** 5, rel=1e-12)
        assert cs.A3 == pytest.approx(c[4] ** 10 + c[5] ** 10 + (c[1] * c[5]) ** 5, rel=1e-12)
        assert cs.B8 == pytest.approx(c[5] + c[4] ** 2, rel=1e-12)
        assert cs.A2t >= cs.A2


def test_clamp_keeps_raw():
    c = [0.5] * 12
    cs = assemble_constants(c, 10, (1, 1))
    assert cs.c[3] == 1.0 and cs.raw[3] == 0.5
    assert assemble_constants(c, 10, (1, 1), clamp=False).c[3] == 0.5


def test_bad_inputs():
    with pytest.raises(ConstraintViolation):
        assemble_constants([1] * 12, 10, (0, 1))
    with pytest.raises(ValueError):
        assemble_constants([1] * 11, 10, (1, 1))


def test_overflow_stays_in_log_space():
    cs = assemble_constants([1e40] * 12, 20, (0.1, 0.1))
    assert "A2" in cs.overflow and math.isinf(cs.A2)
    assert math.isfinite(cs.log["A2"])
    assert cs.log["A2"] == pytest.approx(20 * math.log(1e40), rel=1e-6)


def test_approx_update_examples():
    cs = unit_set()
    up = approx_constant_update(cs, 1)
    assert up.c[2] == 2.0 and up.c[3] == 2.0
    assert up.c[7] == pytest.approx(5 * math.sqrt(3), rel=1e-15)
    c = [1.0] * 12
    c[6] = 0.0
    raw = assemble_constants(c, 10, (1, 1), clamp=False)
    assert approx_constant_update(raw, 4).c[7] == pytest.approx(6 * math.sqrt(3), rel=1e-15)


def test_approx_update_twice():
    cs = assemble_constants(np.linspace(1, 3, 12), 10, (1, 1))
    twice = approx_constant_update(approx_constant_update(cs, 1), 1)
    assert twice.c[2] == pytest.approx(4 * cs.c[2], rel=1e-15)
    assert twice.c[3] == pytest.approx(4 * cs.c[3], rel=1e-15)


def test_kernel_envelope_examples():
    cs = unit_set()
    assert kernel_envelope(cs, EnvelopeInputs(1.0, 0.0, 0.0)) == 1.0
    assert kernel_envelope(cs, EnvelopeInputs(1.0, 1.0, 1.0)) == 10.0
    assert kernel_envelope(cs, EnvelopeInputs(1.0, 1.0, 1.0), tilde=False) == 8.0
    assert kernel_envelope(cs, EnvelopeInputs(1.0, 1.0, 2.0)) - 10.0 == cs.A3


def test_K_unit_groups_by_hand():
    K = gradient_envelope_K(unit_set(), UNIT)
    # unit constants: A1=1, A2~=6, A3=3, B1=1, B2=3, B3=5, B4~=11, B5=9, B6~=9, B7=3, B8=2
    hand = {
        "G1": 1.0,
        "G2": math.sqrt(6) + 3 * 6**0.8 + 11 * 6**0.9,
        "G3": math.sqrt(3) + 8 * 3**0.8 + 5 * 6**0.8 + 20 * 3**0.9 + 9 * 6**0.9 + 18 + 6,
        "G4": 1.0, "G5": 8.0, "G6": 6**0.9 + 3**0.9, "G7": 20.0, "G8": 12.0, "G9": 0.0,
    }
    for n, v in hand.items():
        assert K.groups[n] == pytest.approx(v, rel=1e-14, abs=0), n
    assert K.value == pytest.approx(math.fsum(hand.values()), rel=1e-14)


def test_K_regression_value():
    assert gradient_envelope_K(unit_set(), UNIT).value == pytest.approx(K_UNIT, rel=1e-12)


def test_K_strictly_increasing_in_Xi2():
    cs = unit_set()
    a = gradient_envelope_K(cs, EnvelopeInputs(1.0, 1.0, 1.0, E2=1.0)).value
    b = gradient_envelope_K(cs, EnvelopeInputs(1.0, 1.0, 1.1, E2=1.0)).value
    assert b > a


def test_negative_radicand_clamp():
    with pytest.warns(NegativeRadicandWarning):
        K = gradient_envelope_K(unit_set(), EnvelopeInputs(1, 1, 1, E2=1.0, Eb=0.5))
    assert K.radicand_clamped and K.groups["G9"] == 0.0
    K2 = gradient_envelope_K(unit_set(), EnvelopeInputs(1, 1, 1, E2=1.0, Eb=-0.25))
    assert K2.groups["G9"] == pytest.approx(-12 * 0.5)


def _random_case(rng):
    c = rng.uniform(1, 20, 12)
    k = rng.uniform(9, 14)
    gaps = tuple(rng.uniform(0.02, 1, 2))
    X1 = rng.uniform(0.1, 5)
    E2 = rng.uniform(0.1, 10)
    inp = dict(sup_xi1=rng.uniform(0.1, 5), Xi1=X1, Xi2=X1 * rng.uniform(1, 3), E2=E2,
               Eb=rng.uniform(-E2, E2))
    return c, k, gaps, inp


def _all_values(c, k, gaps, inp):
    cs = assemble_constants(c, k, gaps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeRadicandWarning)
        K = gradient_envelope_K(cs, EnvelopeInputs(**inp))
    out = {n: cs.log[n] for n in DERIVED_NAMES}
    out["K"] = K.log
    out["env"] = kernel_envelope(cs, EnvelopeInputs(**inp), log=True)
    return out


def test_monotonicity_randomized():
    rng = np.random.default_rng(2024)
    violations = 0
    for _ in range(100):
        c, k, gaps, inp = _random_case(rng)
        base = _all_values(c, k, gaps, inp)
        bumps = []
        for i in range(12):
            cc = c.copy()
            cc[i] *= 1.01
            bumps.append((cc, inp))
        for key in ("sup_xi1", "Xi1", "Xi2", "E2"):
            bumps.append((c, {**inp, key: inp[key] * 1.01}))
        for cc, ii in bumps:
            new = _all_values(cc, k, gaps, ii)
            violations += sum(new[n] < base[n] - 1e-12 for n in base)
    assert violations == 0


def test_K_n_dominates_K():
    rng = np.random.default_rng(7)
    for _ in range(100):
        c, k, gaps, inp = _random_case(rng)
        cs = assemble_constants(c, k, gaps)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NegativeRadicandWarning)
            K = gradient_envelope_K(cs, EnvelopeInputs(**inp))
            Kn = gradient_envelope_K(approx_constant_update(cs, 1), EnvelopeInputs(**inp))
        assert Kn.log >= K.log


@settings(max_examples=100, deadline=None)
@given(c=st.lists(st.floats(1, 1e4), min_size=12, max_size=12), k=st.floats(9, 30),
       g0=st.floats(0.01, 1), g1=st.floats(0.01, 1))
def test_log_space_fidelity(c, k, g0, g1):
    cs = assemble_constants(c, k, (g0, g1))
    direct = cs.direct()
    for n in DERIVED_NAMES:
        if math.isfinite(direct[n]) and direct[n] > 0:
            assert abs(cs.log[n] - math.log(direct[n])) <= 1e-10 * max(1.0, abs(cs.log[n]))
            assert cs.values[n] == pytest.approx(direct[n], rel=1e-10)


def test_lognum_arithmetic():
    a, b = LogNum.of(3.0), LogNum.of(-5.0)
    assert float(a + b) == pytest.approx(-2.0)
    assert float(a - b) == pytest.approx(8.0)
    assert float(a * b) == pytest.approx(-15.0)
    assert float(b / a) == pytest.approx(-5 / 3)
    assert float(a**2.5) == pytest.approx(3**2.5)
    assert float(a - a) == 0.0
    with pytest.raises(ValueError):
        b**0.5


def test_choose_window():
    assert choose_window(0.4) == pytest.approx((0.2, 0.4, 0.45, 0.55, 0.6, 0.8))
    a0, a, a1, b1, b, b0 = choose_window(0.4)
    assert b - b1 == pytest.approx(a1 - a) and a1 - a <= a - a0
    with pytest.raises(WindowError):
        choose_window(0.6)
    with pytest.raises(WindowError):
        choose_window(0.0)


def test_polynomial_envelope_examples(poly_params):
    env = polynomial_envelopes(poly_params, t=0.4)
    assert env.lam == 3.0
    assert env.exponent_grad == pytest.approx(1.5 - 95.55 / 4, rel=1e-12)
    assert env.exponent_p == pytest.approx(1 - 1.05 * 30 / 2)
    assert poly_params.alpha * env.lam / poly_params.beta == pytest.approx(1.575)
    assert env.step3_ok
    with pytest.raises(WindowError):
        polynomial_envelopes(poly_params, t=0.7)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0.01, 0.5), y=st.floats(-40, 40))
def test_envelope_separability(poly_params, t, y):
    env = polynomial_envelopes(poly_params)
    ratio = env.env_grad(t, y) / env.env_grad(t, 0.0)
    nu = max(abs(y), 0.0)
    nu = nu if nu > 1 else 0.375 + 0.75 * nu**2 - 0.125 * nu**4
    expected = math.exp(-env.eps * t**env.alpha * nu**env.beta) / math.exp(
        -env.eps * t**env.alpha * 0.375**env.beta)
    assert ratio == pytest.approx(expected, rel=1e-12)


def test_calibrate():
    assert calibrate([1.0, 3.0, 2.0], [2.0, 2.0, 0.0]) == 1.5
    with pytest.raises(ValueError):
        calibrate([1.0], [0.0])
