"""Numerical toolkit for weighted kernel and gradient bounds of divergence-form
operators with unbounded coefficients."""

from .errors import *  # noqa: F401,F403
from .coefficients import (OperatorSpec, eval_fields, smoothed_norm, validate_polynomial_params,
                           approximate_spec, heat_spec, ou_spec, custom_spec)
from .lyapunov import (LyapunovParams, WeightFamily, default_params, peak_bound, check_lyapunov,
                       check_hypotheses, closed_form_constants)
from .bounds import (assemble_constants, approx_constant_update, kernel_envelope,
                     gradient_envelope_K, polynomial_envelopes, choose_window, EnvelopeInputs)
from .solver import Grid, KernelField, solve_forward, gradient, functionals, solve_approximated
from .fk_oracle import MCConfig, estimate_semigroup, estimate_xi

__version__ = "0.1.0"
