"""One-step gradient attack and its closed-form limits and bounds.

The attack moves against the output sign: x_s = x - tau * s_d * grad f(x)
with tau = sign(f(x)) and sign(0) := +1.  Step sizes come from a StepRule,
either a plain constant or the certified choice derived from the
non-asymptotic success certificate (see theory.certificate_check).

The perturbed point is evaluated verbatim (no renormalization): its
displacement from x is exactly the quantity the ratio bounds talk about.
"""

import dataclasses
import math

import numpy as np
from scipy.special import ndtr

from .activations import moment
from .network import forward, gradient

DEGENERATE_GRAD_NORM = 1e-14

# Default calibration for the unspecified universal constant in the ratio
# bounds; see the calibrate-constants subcommand.
DEFAULT_RATIO_CONSTANT = 3.0


def _sign(v):
    return 1.0 if v >= 0.0 else -1.0


@dataclasses.dataclass(frozen=True)
class StepRule:
    """Step-size rule: constant(s0) or certified(xi, c, c0)."""

    variant: str  # "constant" | "certified"
    s0: float | None = None
    xi: float | None = None
    c: float | None = None
    c0: float | None = None

    @classmethod
    def constant(cls, s0):
        if not s0 > 0.0:
            raise ValueError(f"step size must be positive, got {s0}")
        return cls(variant="constant", s0=float(s0))

    @classmethod
    def certified(cls, xi, c=0.1, c0=10.0):
        return cls(variant="certified", xi=float(xi), c=float(c), c0=float(c0))

    def resolve(self, spec, d, m):
        """Resolve to a concrete step size; certified rules also return the
        full certificate report, constant rules return None for it."""
        if self.variant == "constant":
            return self.s0, None
        if self.variant == "certified":
            from .theory import certificate_check

            report = certificate_check(spec, self.xi, d, m, c=self.c, c0=self.c0)
            return report.s_d, report
        raise ValueError(f"unknown step rule variant {self.variant!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class AttackOutcome:
    tau: float
    s_d: float
    x: np.ndarray  # normalized input actually attacked
    x_s: np.ndarray
    perturbation: np.ndarray  # tau * s_d * grad f(x); x_s = x - perturbation
    f_x: float
    f_xs: float
    flipped: bool
    ratio: float  # ||x - x_s|| / ||x|| = s_d * grad_norm / sqrt(d)
    grad_norm: float
    degenerate: bool
    original_norm: float


def fgsm_step(net, act, x, rule):
    """Attack x with one gradient step; returns the full outcome record.

    rule may be a StepRule or a bare positive float.  A vanishing gradient
    (norm below 1e-14) yields a degenerate outcome with flipped=False
    rather than an error.
    """
    if isinstance(rule, StepRule):
        s_d, _ = rule.resolve(act, net.dims[0], net.dims[1])
    else:
        s_d = float(rule)
        if not s_d > 0.0:
            raise ValueError(f"step size must be positive, got {s_d}")
    trace = forward(net, act, x, normalize=True)
    xn = trace.x
    grad = gradient(net, trace)
    grad_norm = float(np.linalg.norm(grad))
    tau = _sign(trace.output)
    if grad_norm < DEGENERATE_GRAD_NORM:
        return AttackOutcome(
            tau=tau, s_d=s_d, x=xn, x_s=xn.copy(),
            perturbation=np.zeros_like(xn),
            f_x=trace.output, f_xs=trace.output, flipped=False,
            ratio=0.0, grad_norm=grad_norm, degenerate=True,
            original_norm=trace.original_norm,
        )
    perturbation = (tau * s_d) * grad
    x_s = xn - perturbation
    f_xs = forward(net, act, x_s, normalize=False).output
    return AttackOutcome(
        tau=tau, s_d=s_d, x=xn, x_s=x_s, perturbation=perturbation,
        f_x=trace.output, f_xs=f_xs, flipped=_sign(f_xs) != tau,
        ratio=s_d * grad_norm / math.sqrt(net.dims[0]),
        grad_norm=grad_norm, degenerate=False,
        original_norm=trace.original_norm,
    )


def success_prob_limit_two_layer(spec, s0):
    """Wide-limit flip probability 2 Phi(s0 E[sigma'^2] / sqrt(E[sigma^2])) - 1."""
    if s0 < 0.0:
        raise ValueError(f"step size must be nonnegative, got {s0}")
    second = moment(spec, "sigma2")
    if second <= 0.0:
        raise ValueError("E[sigma^2] vanishes; constant activations are rejected")
    arg = s0 * moment(spec, "dsigma2") / math.sqrt(second)
    return 2.0 * float(ndtr(arg)) - 1.0


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")


def perturbation_bound_two_layer(s_d, d, m, delta, c_big=DEFAULT_RATIO_CONSTANT):
    """High-probability bound on ||x - x_s|| / ||x|| for depth-1 networks."""
    _check_delta(delta)
    if not c_big > 0.0:
        raise ValueError(f"constant must be positive, got {c_big}")
    return (c_big * s_d / math.sqrt(d)) \
        * (1.0 + math.log(1.0 / delta) / math.sqrt(d)) \
        * (1.0 + 1.0 / math.sqrt(m * delta))


def perturbation_bound_multi_layer(s_d, dims, delta, k, c_big=DEFAULT_RATIO_CONSTANT):
    """Displacement-ratio bound for dims [d_0, ..., d_l, 1].

    The double product runs over the hidden widths d_1..d_l with exponents
    k^{i-j}, where k is the activation's growth exponent.
    """
    _check_delta(delta)
    dims = [int(v) for v in dims]
    if len(dims) < 3 or dims[-1] != 1:
        raise ValueError(f"dims must be [d_0, ..., d_l, 1], got {dims}")
    if k < 1:
        raise ValueError(f"growth exponent must be >= 1, got {k}")
    d0 = dims[0]
    hidden = dims[1:-1]
    length = len(hidden)
    log_term = math.log(1.0 / delta)
    prod = 1.0
    for i in range(1, length + 1):
        for j in range(1, i + 1):
            prod *= (1.0 + 1.0 / math.sqrt(delta * hidden[j - 1])) ** (k ** (i - j))
    return (c_big * s_d / math.sqrt(d0)) \
        * (math.sqrt(log_term) + 1.0) ** (length - 1) \
        * (1.0 + log_term / math.sqrt(d0)) * prod
