"""Non-asymptotic flip certificate, failure envelope, and process checks.

Everything here evaluates closed-form expressions or small deterministic
searches; the only randomness is in stein_check and the empirical-process
estimate, which draw their samples from an explicit stream.

The certificate and the envelope are two views of the same machinery.
certificate_check fixes the step size to certified_step_size(...) and
reports each admissibility condition with its numeric margin;
failure_envelope takes free slack parameters (eta, eta1, eta2) and
reports the resulting failure-probability expression.  Setting the slacks
via certified_envelope_parameters collapses the second view onto the
first, and both paths read the step size from the same helper, so they
agree bitwise.

Tail constants c and c0 are calibration parameters, not derived values;
defaults follow the package-wide convention (c=0.1, c0=10).
"""

import dataclasses
import itertools
import math

import numpy as np

from .activations import (
    eval_activation,
    eval_derivative,
    moment,
    perturbed_product_moment,
)
from .numerics import SummaryStats, ensure_finite, summarize

DEFAULT_TAIL_C = 0.1
DEFAULT_TAIL_C0 = 10.0
DEFAULT_DUDLEY_CONSTANT = 1.0
DEFAULT_MOMENT_GRID = 5


def _check_tail_constants(c, c0):
    if not c > 0.0:
        raise ValueError(f"tail exponent c must be positive, got {c}")
    if not c0 > 0.0:
        raise ValueError(f"tail prefactor c0 must be positive, got {c0}")


def certified_step_size(spec, xi, c=DEFAULT_TAIL_C, c0=DEFAULT_TAIL_C0):
    """Step size of the flip certificate.

    4 sqrt(log(c0/xi) (E[sigma^2]+1)) / (sqrt(c) E[sigma'^2]); requires
    0 < xi < c0 so the logarithm is positive.
    """
    _check_tail_constants(c, c0)
    if not 0.0 < xi < c0:
        raise ValueError(f"xi must lie in (0, c0={c0}), got {xi}")
    second = moment(spec, "sigma2")
    drift = moment(spec, "dsigma2")
    return 4.0 * math.sqrt(math.log(c0 / xi) * (second + 1.0)) \
        / (math.sqrt(c) * drift)


def _axis(lo, hi, n):
    # Symmetric boxes get an axis with an exact 0.0 midpoint; linspace
    # alone can place it at ~1e-17.
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    if n % 2 == 1 and lo == -hi:
        half = np.linspace(0.0, hi, (n + 1) // 2)
        return np.concatenate([-half[:0:-1], half])
    return np.linspace(lo, hi, n)


def _minimize_moment(spec, bounds, grid_per_axis, rounds=3):
    """Exhaustive grid scan plus coordinate descent, no gradients.

    bounds: three (lo, hi) pairs.  Returns (min value, argmin tuple).
    The integrand can be non-smooth in theta for kinked activations, so
    refinement only ever compares sampled values.
    """
    if grid_per_axis < 1:
        raise ValueError(f"grid_per_axis must be >= 1, got {grid_per_axis}")
    axes = [_axis(lo, hi, grid_per_axis) for lo, hi in bounds]
    best_val = math.inf
    best = None
    for theta in itertools.product(*axes):
        val = perturbed_product_moment(spec, theta)
        if val < best_val:
            best_val, best = val, theta
    steps = [(hi - lo) / max(grid_per_axis - 1, 1) for lo, hi in bounds]
    for _ in range(rounds):
        for ax in range(3):
            if steps[ax] == 0.0:
                continue
            lo, hi = bounds[ax]
            for off in (-1.0, -0.5, 0.5, 1.0):
                coord = min(max(best[ax] + off * steps[ax], lo), hi)
                cand = best[:ax] + (coord,) + best[ax + 1:]
                val = perturbed_product_moment(spec, cand)
                if val < best_val:
                    best_val, best = val, cand
        steps = [0.5 * s for s in steps]
    return best_val, best


def drift_moment_floor(spec, d, m, grid_per_axis=DEFAULT_MOMENT_GRID):
    """Minimum of the perturbed derivative product over the width box.

    The box is |theta_1| <= d^{-1/2}, |theta_2| <= 2 m^{-1/4},
    |theta_3| <= d^{-1/4}: every theta the attack can realize at widths
    (d, m) up to the certified slacks.  Certifies the drift term stays
    away from zero.
    """
    if d < 1 or m < 1:
        raise ValueError(f"widths must be >= 1, got d={d}, m={m}")
    bounds = (
        (-d ** -0.5, d ** -0.5),
        (-2.0 * m ** -0.25, 2.0 * m ** -0.25),
        (-d ** -0.25, d ** -0.25),
    )
    value, _ = _minimize_moment(spec, bounds, grid_per_axis)
    return value


@dataclasses.dataclass(frozen=True)
class ConditionCheck:
    name: str
    holds: bool
    margin: float  # >= 0 exactly when the condition holds


@dataclasses.dataclass(frozen=True)
class CertificateReport:
    """Admissibility conditions and success bound for the certified attack."""

    activation: str
    xi: float
    d: int
    m: int
    c: float
    c0: float
    s_d: float
    q_tilde: float
    q_floor: float
    d_threshold_tail: float
    d_threshold_process: float
    d_threshold_moment: float
    m_threshold: float
    xi_threshold: float
    conditions: tuple
    all_hold: bool
    success_lower_bound: float


def certificate_check(spec, xi, d, m, c=DEFAULT_TAIL_C, c0=DEFAULT_TAIL_C0,
                      grid_per_axis=DEFAULT_MOMENT_GRID):
    """Evaluate every admissibility condition at widths (d, m).

    An unsatisfied condition is an answer, not an error: the report
    always completes, carrying one (holds, margin) pair per condition
    group plus the success-probability lower bound at these widths.
    """
    if d < 1 or m < 1:
        raise ValueError(f"widths must be >= 1, got d={d}, m={m}")
    lip = spec.lipschitz
    if not lip > 0.0:
        raise ValueError("activation is missing a positive Lipschitz bound")
    s_d = certified_step_size(spec, xi, c, c0)
    second = moment(spec, "sigma2")
    drift = moment(spec, "dsigma2")
    sig0 = spec.sigma0

    thr_tail = s_d ** 2 * c0 * (sig0 ** 2 + lip ** 2) / xi
    thr_process = 4.0 * lip ** 4 * s_d ** 2 / c ** 2 * math.log(c0 / xi) ** 2
    thr_moment = 16.0 * s_d ** 4 * (1.0 + second) ** 2
    thr_m = s_d ** 4
    thr_xi = c0 * math.exp(-9.0 * c)
    q_tilde = drift_moment_floor(spec, d, m, grid_per_axis)
    q_floor = drift / 2.0

    conditions = (
        ConditionCheck("input-width", d >= max(thr_tail, thr_process, thr_moment),
                       float(d) - max(thr_tail, thr_process, thr_moment)),
        ConditionCheck("hidden-width", m >= thr_m, float(m) - thr_m),
        ConditionCheck("drift-moment", q_tilde >= q_floor, q_tilde - q_floor),
        ConditionCheck("xi-ceiling", xi <= thr_xi, thr_xi - xi),
        # The step size is set to the certified value by construction.
        ConditionCheck("step-size", True, 0.0),
    )
    success = 1.0 - 3.0 * xi - c0 * (
        math.exp(-c * d)
        + (sig0 ** 4 + lip ** 4) / m
        + 2.0 * lip * (d ** -0.25 + m ** -0.25)
    )
    return CertificateReport(
        activation=spec.label, xi=xi, d=int(d), m=int(m), c=c, c0=c0,
        s_d=s_d, q_tilde=q_tilde, q_floor=q_floor,
        d_threshold_tail=thr_tail, d_threshold_process=thr_process,
        d_threshold_moment=thr_moment, m_threshold=thr_m,
        xi_threshold=thr_xi, conditions=conditions,
        all_hold=all(cc.holds for cc in conditions),
        success_lower_bound=success,
    )


@dataclasses.dataclass(frozen=True)
class FailureEnvelope:
    """Free-slack version of the certificate at explicit (s_d, d, m)."""

    s_d: float
    d: int
    m: int
    eta: float
    eta1: float
    eta2: float
    eta3: float
    box: tuple  # ((lo, hi) for theta_1..theta_3)
    q_min: float
    delta_dm: float
    flip_triggered: bool  # eta3 > 0: the magnitude comparison points the right way
    success_lower_bound: float


def failure_envelope(spec, s_d, d, m, eta1, eta2, eta,
                     c=DEFAULT_TAIL_C, c0=DEFAULT_TAIL_C0,
                     grid_per_axis=DEFAULT_MOMENT_GRID):
    """Evaluate the failure-probability envelope for given slacks.

    The theta box is centered at the nominal attack coefficients for a
    positive-sign input (the two sign cases are symmetric); q_min is the
    grid-minimized perturbed product over that box and delta_dm its
    radius proxy, the max of the three per-axis extents.
    """
    _check_tail_constants(c, c0)
    for name, val in (("s_d", s_d), ("eta1", eta1), ("eta2", eta2), ("eta", eta)):
        if not val > 0.0:
            raise ValueError(f"{name} must be positive, got {val}")
    if d < 1 or m < 1:
        raise ValueError(f"widths must be >= 1, got d={d}, m={m}")
    lip = spec.lipschitz
    second = moment(spec, "sigma2")
    sig0 = spec.sigma0

    t1_max = s_d * eta1 / d
    t2_center = s_d / math.sqrt(m)
    t2_half = 2.0 * s_d * eta2 / math.sqrt(d * m)
    t3_max = 2.0 * s_d / math.sqrt(d) * math.sqrt(1.0 + second)
    box = (
        (-t1_max, t1_max),
        (t2_center - t2_half, t2_center + t2_half),
        (-t3_max, t3_max),
    )
    q_min, _ = _minimize_moment(spec, box, grid_per_axis)
    delta_dm = max(t1_max, t2_half + t2_center, t3_max)
    eta3 = (s_d * q_min - eta - 2.0 * s_d * lip ** 2 * eta2 / math.sqrt(d)
            - 1.0) / math.sqrt(second + 1.0)
    failure = c0 * (
        (sig0 ** 2 + lip ** 2) / eta1 ** 2
        + math.exp(-c * eta2)
        + math.exp(-c * d)
        + (sig0 ** 4 + lip ** 4) / m
        + math.exp(-c * eta3 ** 2)
        + lip * delta_dm / eta
    )
    return FailureEnvelope(
        s_d=s_d, d=int(d), m=int(m), eta=eta, eta1=eta1, eta2=eta2,
        eta3=eta3, box=box, q_min=q_min, delta_dm=delta_dm,
        flip_triggered=eta3 > 0.0, success_lower_bound=1.0 - failure,
    )


@dataclasses.dataclass(frozen=True)
class EnvelopeParameters:
    eta: float
    eta1: float
    eta2: float
    s_d: float


def certified_envelope_parameters(spec, xi, c=DEFAULT_TAIL_C,
                                  c0=DEFAULT_TAIL_C0):
    """Slack choices that collapse the envelope onto the certificate.

    The returned step size is read from certified_step_size, the same
    helper certificate_check uses, so the two paths match bitwise.
    """
    _check_tail_constants(c, c0)
    if not 0.0 < xi < c0:
        raise ValueError(f"xi must lie in (0, c0={c0}), got {xi}")
    return EnvelopeParameters(
        eta=1.0,
        eta1=math.sqrt(c0 * (spec.sigma0 ** 2 + spec.lipschitz ** 2) / xi),
        eta2=math.log(c0 / xi) / c,
        s_d=certified_step_size(spec, xi, c, c0),
    )


def minimal_certified_step(spec, xi, d, c=DEFAULT_TAIL_C, c0=DEFAULT_TAIL_C0):
    """Smallest step the envelope slacks certify at input width d.

    [2 sqrt(E[sigma^2]+1) (sqrt(eta2) + 1) + 2] / (E[sigma^2] - 4 eta2 / sqrt(d))
    with eta2 = log(c0/xi)/c.  The denominator must be positive, which
    bounds d from below; too-small widths raise.
    """
    _check_tail_constants(c, c0)
    if not 0.0 < xi < c0:
        raise ValueError(f"xi must lie in (0, c0={c0}), got {xi}")
    if d < 1:
        raise ValueError(f"width must be >= 1, got d={d}")
    second = moment(spec, "sigma2")
    eta2 = math.log(c0 / xi) / c
    denom = second - 4.0 * eta2 / math.sqrt(d)
    if denom <= 0.0:
        raise ValueError(
            f"width d={d} is below the validity floor of the step formula "
            f"(denominator {denom:.3e})")
    return (2.0 * math.sqrt(second + 1.0) * (math.sqrt(eta2) + 1.0) + 2.0) \
        / denom


@dataclasses.dataclass(frozen=True)
class SteinCheckResult:
    lhs: SummaryStats  # E[fn(Z) (Z - x1)]
    rhs: SummaryStats  # x2 E[fn'(Z)]
    difference: SummaryStats  # paired per-sample lhs - rhs
    agree: bool


def stein_check(fn, dfn, x1, x2, n, stream):
    """Monte Carlo check of E[fn(Z)(Z - x1)] = x2 E[fn'(Z)], Z ~ N(x1, x2).

    Both sides are evaluated on the same draw, so the agreement test uses
    the paired difference's stderr, which is what actually controls it.
    """
    if not x2 > 0.0:
        raise ValueError(f"variance must be positive, got {x2}")
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    z = x1 + math.sqrt(x2) * stream.standard_normal(int(n))
    lhs = np.asarray(fn(z), dtype=np.float64) * (z - x1)
    rhs = x2 * np.asarray(dfn(z), dtype=np.float64)
    ensure_finite(lhs, "lhs samples")
    ensure_finite(rhs, "rhs samples")
    diff = summarize(lhs - rhs)
    agree = abs(diff.mean) <= 3.0 * diff.stderr if diff.stderr > 0.0 \
        else diff.mean == 0.0
    return SteinCheckResult(
        lhs=summarize(lhs), rhs=summarize(rhs), difference=diff, agree=agree)


@dataclasses.dataclass(frozen=True)
class EmpiricalProcessEstimate:
    m: int
    delta: float
    grid_per_axis: int
    sup_abs: float  # max over the grid of |G_m(theta)|; >= |G_m(0)| = 0
    sup_theta: tuple
    value_at_zero: float  # must be exactly 0.0, kept as a sanity anchor
    dudley_envelope: float
    dudley_constant: float


def empirical_process_sup(spec, m, delta, grid_per_axis, stream,
                          dudley_constant=DEFAULT_DUDLEY_CONSTANT):
    """Grid supremum of the centered shift process over the theta box.

    G_m(theta) = sqrt(m) (mean_i h_theta(b_i, g_i, u_i) - E[h_theta]) with
    h_theta(b, g, u) = b (sigma((1-t1) g - t2 b sigma'(g) - t3 u) - sigma(g)).
    The population mean reduces to -t2 E[sigma'(g) sigma'(...)] (integrate
    the b factor by parts), which reuses the cached perturbed product.
    Reported alongside is the sub-Gaussian-norm monitor
    4 C'' L delta sqrt(mean M_i^2), M = L |b| sqrt(g^2 + L^2 b^2 + u^2).
    """
    if grid_per_axis < 3 or grid_per_axis % 2 == 0:
        raise ValueError(
            f"grid_per_axis must be odd and >= 3 so the grid contains the "
            f"origin, got {grid_per_axis}")
    if m < 100:
        raise ValueError(f"need m >= 100 samples, got {m}")
    if not delta > 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not dudley_constant > 0.0:
        raise ValueError(
            f"dudley_constant must be positive, got {dudley_constant}")
    m = int(m)
    g = stream.substream("g").standard_normal(m)
    b = stream.substream("b").standard_normal(m)
    u = stream.substream("u").standard_normal(m)
    sig_g = eval_activation(spec, g)
    dsig_g = eval_derivative(spec, g)
    b_dsig = b * dsig_g

    axis = _axis(-delta, delta, grid_per_axis)
    root_m = math.sqrt(m)
    sup_abs = -1.0
    sup_theta = None
    value_at_zero = math.nan
    for t1, t2, t3 in itertools.product(axis, axis, axis):
        shifted = eval_activation(spec, (1.0 - t1) * g - t2 * b_dsig - t3 * u)
        sample_mean = float(np.mean(b * (shifted - sig_g)))
        pop_mean = 0.0 if t2 == 0.0 \
            else -t2 * perturbed_product_moment(spec, (t1, t2, t3))
        value = abs(root_m * (sample_mean - pop_mean))
        if t1 == 0.0 and t2 == 0.0 and t3 == 0.0:
            value_at_zero = value
        if value > sup_abs:
            sup_abs, sup_theta = value, (float(t1), float(t2), float(t3))

    lip = spec.lipschitz
    mean_m_sq = float(np.mean(
        lip ** 2 * b ** 2 * (g ** 2 + lip ** 2 * b ** 2 + u ** 2)))
    envelope = 4.0 * dudley_constant * lip * delta * math.sqrt(mean_m_sq)
    return EmpiricalProcessEstimate(
        m=m, delta=delta, grid_per_axis=grid_per_axis, sup_abs=sup_abs,
        sup_theta=sup_theta, value_at_zero=value_at_zero,
        dudley_envelope=envelope, dudley_constant=dudley_constant,
    )


def output_magnitude_bound(spec, m, eta3):
    """High-probability bound on |F(g)| at width m: eta3 sqrt(E[sigma^2]+1)."""
    if m < 1:
        raise ValueError(f"width must be >= 1, got m={m}")
    if eta3 < 0.0:
        raise ValueError(f"eta3 must be nonnegative, got {eta3}")
    return eta3 * math.sqrt(moment(spec, "sigma2") + 1.0)
