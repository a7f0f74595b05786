"""Activation functions, their a.e. derivatives, and Gaussian moments.

Supported kinds: relu, leaky_relu(alpha), shifted_relu(c) meaning (x - c)+,
tanh, softplus, linear, cubic_clipped (x^3 saturating at +/-8).  Each spec
declares a derivative value for its kink points (Monte Carlo never hits a
kink, but finite-difference comparisons need a stated convention), a growth
envelope |sigma'(x)| <= C (1 + |x|^{k-1}), and optionally a Lipschitz
constant.

Moment ids used by MomentTable and moment():

    sigma2      E[sigma(nu g)^2]
    dsigma2     E[sigma'(nu g)^2]
    g_dsigma    E[g sigma'(nu g)]
    g2_dsigma2  E[g^2 sigma'(nu g)^2]
    sigma4      E[sigma(nu g)^4]

Smooth activations integrate by Gauss-Hermite quadrature; kinked ones fall
back to Monte Carlo with a fixed internal stream and shared base samples, so
tables are reproducible across processes and moments are exactly scale-
homogeneous where the activation is.
"""

import dataclasses
import hashlib
import math

import numpy as np
from scipy.special import expit

from .numerics import (
    DEFAULT_MC_SAMPLES,
    DEFAULT_QUAD_NODES,
    QuadratureRule,
    derive_stream,
    gauss_hermite_expect,
    summarize,
)

_MOMENT_MASTER_SEED = 0x9E3779B9
_GRID_POINTS = 10_000
_GRID_HALF_WIDTH = 50.0

MOMENT_IDS = ("sigma2", "dsigma2", "g_dsigma", "g2_dsigma2", "sigma4")


@dataclasses.dataclass(frozen=True)
class ActivationSpec:
    """One activation with its derivative convention and growth envelope."""

    kind: str
    param: float | None = None
    kink_derivative: float = 0.0
    growth_exponent: int = 1
    growth_constant: float = 1.0
    lipschitz: float | None = None
    kinks: tuple = ()
    smooth: bool = True

    def __post_init__(self):
        if self.growth_exponent < 1:
            raise ValueError("growth exponent must be a positive integer")
        # constant activations break every moment-based check downstream
        if self(1.0) == self(-1.0) and self(2.0) == self(0.0):
            raise ValueError(f"activation {self.kind!r} looks constant")

    @property
    def label(self):
        if self.param is None:
            return self.kind
        return f"{self.kind}:{self.param:g}"

    @property
    def sigma0(self):
        return float(self(0.0))

    def __call__(self, x):
        return eval_activation(self, x)

    def derivative(self, x):
        return eval_derivative(self, x)


def eval_activation(spec, x):
    """sigma(x), vectorized; scalars in, scalar out."""
    x = np.asarray(x, dtype=np.float64)
    kind = spec.kind
    if kind == "relu":
        out = np.maximum(x, 0.0)
    elif kind == "leaky_relu":
        out = np.where(x > 0.0, x, spec.param * x)
    elif kind == "shifted_relu":
        out = np.maximum(x - spec.param, 0.0)
    elif kind == "tanh":
        out = np.tanh(x)
    elif kind == "softplus":
        out = np.logaddexp(0.0, x)
    elif kind == "linear":
        out = x
    elif kind == "cubic_clipped":
        out = np.clip(x ** 3, -8.0, 8.0)
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def eval_derivative(spec, x):
    """sigma'(x) a.e.; kink points return the declared convention."""
    x = np.asarray(x, dtype=np.float64)
    conv = spec.kink_derivative
    kind = spec.kind
    if kind == "relu":
        out = np.where(x > 0.0, 1.0, np.where(x < 0.0, 0.0, conv))
    elif kind == "leaky_relu":
        out = np.where(x > 0.0, 1.0, np.where(x < 0.0, spec.param, conv))
    elif kind == "shifted_relu":
        c = spec.param
        out = np.where(x > c, 1.0, np.where(x < c, 0.0, conv))
    elif kind == "tanh":
        out = 1.0 - np.tanh(x) ** 2
    elif kind == "softplus":
        out = expit(x)
    elif kind == "linear":
        out = np.ones_like(x)
    elif kind == "cubic_clipped":
        inside = np.abs(x) < 2.0
        on_kink = np.abs(x) == 2.0
        out = np.where(inside, 3.0 * x ** 2, np.where(on_kink, conv, 0.0))
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return float(out) if out.ndim == 0 else out


_DEFAULTS = {
    # kind: (param, growth_exponent, growth_constant, lipschitz, kinks, smooth)
    "relu": (None, 1, 1.0, 1.0, (0.0,), False),
    "leaky_relu": (0.1, 1, 1.0, 1.0, (0.0,), False),
    "shifted_relu": (1.0, 1, 1.0, 1.0, None, False),
    "tanh": (None, 1, 1.0, 1.0, (), True),
    "softplus": (None, 1, 1.0, 1.0, (), True),
    "linear": (None, 1, 1.0, 1.0, (), True),
    "cubic_clipped": (None, 3, 3.0, 12.0, (-2.0, 2.0), False),
}


def make_activation(name, kink_derivative=0.0, growth_exponent=None,
                    growth_constant=None, lipschitz="default"):
    """Build an ActivationSpec from a CLI-style name like 'shifted_relu:1.0'.

    Keyword overrides replace the per-kind defaults; pass lipschitz=None to
    drop the Lipschitz declaration entirely.
    """
    kind, _, raw = name.partition(":")
    kind = kind.strip()
    if kind not in _DEFAULTS:
        raise ValueError(
            f"unknown activation {kind!r}; choose from {sorted(_DEFAULTS)}")
    param_default, k, c, lip, kinks, smooth = _DEFAULTS[kind]
    param = float(raw) if raw else param_default
    if raw and param_default is None:
        raise ValueError(f"activation {kind!r} takes no parameter")
    if kinks is None:  # shifted_relu: kink location follows the shift
        kinks = (param,)
    return ActivationSpec(
        kind=kind,
        param=param,
        kink_derivative=kink_derivative,
        growth_exponent=int(growth_exponent if growth_exponent is not None else k),
        growth_constant=float(growth_constant if growth_constant is not None else c),
        lipschitz=lip if lipschitz == "default" else lipschitz,
        kinks=tuple(kinks),
        smooth=smooth,
    )


@dataclasses.dataclass(frozen=True)
class GrowthReport:
    passed: bool
    worst_x: float
    worst_ratio: float
    lipschitz_passed: bool | None
    lipschitz_worst_ratio: float | None


def _check_grid(spec):
    grid = np.linspace(-_GRID_HALF_WIDTH, _GRID_HALF_WIDTH, _GRID_POINTS)
    extras = []
    for x0 in spec.kinks:
        offsets = 2.0 ** -np.arange(0, 41, dtype=np.float64)
        extras.append(x0 + offsets)
        extras.append(x0 - offsets)
    if extras:
        grid = np.sort(np.concatenate([grid] + extras))
    return grid


def growth_check(spec):
    """Validate |sigma'| <= C (1 + |x|^{k-1}) on the test grid.

    When the spec declares a Lipschitz constant the report also checks
    |sigma(x) - sigma(y)| <= L |x - y| over consecutive grid pairs.
    """
    grid = _check_grid(spec)
    envelope = spec.growth_constant * (
        1.0 + np.abs(grid) ** (spec.growth_exponent - 1))
    ratio = np.abs(eval_derivative(spec, grid)) / envelope
    worst = int(np.argmax(ratio))
    lip_passed = None
    lip_worst = None
    if spec.lipschitz is not None:
        dy = np.abs(np.diff(eval_activation(spec, grid)))
        dx = np.diff(grid)
        keep = dx > 0.0
        lip_ratio = dy[keep] / (spec.lipschitz * dx[keep])
        lip_worst = float(np.max(lip_ratio))
        lip_passed = bool(lip_worst <= 1.0 + 1e-9)
    return GrowthReport(
        passed=bool(ratio[worst] <= 1.0 + 1e-9),
        worst_x=float(grid[worst]),
        worst_ratio=float(ratio[worst]),
        lipschitz_passed=lip_passed,
        lipschitz_worst_ratio=lip_worst,
    )


@dataclasses.dataclass(frozen=True)
class MomentEntry:
    value: float
    method: str  # "quadrature" | "mc"
    stderr: float


def _spec_stream(spec, label):
    digest = hashlib.blake2b(
        repr((spec.kind, spec.param, spec.kink_derivative)).encode(),
        digest_size=8,
    ).digest()
    base = int.from_bytes(digest, "little")
    return derive_stream(_MOMENT_MASTER_SEED, base).substream(label)


class MomentTable:
    """Cached Gaussian moments for one activation.

    Kinked activations share one fixed base sample across every scale and
    perturbation, which keeps relu's scale homogeneity exact and makes the
    perturbed product continuous in theta despite the MC route.
    """

    def __init__(self, spec, quad_nodes=DEFAULT_QUAD_NODES,
                 mc_samples=DEFAULT_MC_SAMPLES):
        self.spec = spec
        self.mc_samples = int(mc_samples)
        self._rule = QuadratureRule.gauss_hermite(quad_nodes)
        self._entries = {}
        self._base = None  # (g, b, u) MC samples, drawn on first use

    def _samples(self):
        if self._base is None:
            g = _spec_stream(self.spec, 1).standard_normal(self.mc_samples)
            b = _spec_stream(self.spec, 2).standard_normal(self.mc_samples)
            u = _spec_stream(self.spec, 3).standard_normal(self.mc_samples)
            self._base = (g, b, u)
        return self._base

    def _integrand(self, name, scale):
        spec = self.spec
        if name == "sigma2":
            return lambda g: eval_activation(spec, scale * g) ** 2
        if name == "dsigma2":
            return lambda g: eval_derivative(spec, scale * g) ** 2
        if name == "g_dsigma":
            return lambda g: g * eval_derivative(spec, scale * g)
        if name == "g2_dsigma2":
            return lambda g: g ** 2 * eval_derivative(spec, scale * g) ** 2
        if name == "sigma4":
            return lambda g: eval_activation(spec, scale * g) ** 4
        raise ValueError(f"unknown moment id {name!r}; choose from {MOMENT_IDS}")

    def entry(self, name, scale=1.0):
        if not scale > 0.0:
            raise ValueError(f"scale must be positive, got {scale}")
        key = (name, float(scale))
        if key not in self._entries:
            f = self._integrand(name, float(scale))
            if self.spec.smooth:
                value = gauss_hermite_expect(f, 1, self._rule)
                ent = MomentEntry(value, "quadrature", 0.0)
            else:
                g, _, _ = self._samples()
                stats = summarize(f(g))
                ent = MomentEntry(stats.mean, "mc", stats.stderr)
            if not math.isfinite(ent.value):
                raise ArithmeticError(f"moment {name} diverged for {self.spec.label}")
            self._entries[key] = ent
        return self._entries[key]

    def moment(self, name, scale=1.0):
        return self.entry(name, scale).value

    def perturbed_entry(self, theta):
        """E[sigma'(g) sigma'((1-t1) g - t2 b sigma'(g) - t3 u)]."""
        t1, t2, t3 = (float(t) for t in theta)
        for t in (t1, t2, t3):
            if not math.isfinite(t):
                raise ValueError(f"theta must be finite, got {theta}")
        key = ("ppm", t1, t2, t3)
        if key not in self._entries:
            spec = self.spec

            def f(g, b, u):
                dg = eval_derivative(spec, g)
                return dg * eval_derivative(
                    spec, (1.0 - t1) * g - t2 * b * dg - t3 * u)

            if spec.smooth:
                value = gauss_hermite_expect(f, 3, self._rule)
                ent = MomentEntry(value, "quadrature", 0.0)
            else:
                stats = summarize(f(*self._samples()))
                ent = MomentEntry(stats.mean, "mc", stats.stderr)
            if not math.isfinite(ent.value):
                raise ArithmeticError(f"perturbed product diverged at {theta}")
            self._entries[key] = ent
        return self._entries[key]

    def perturbed_product(self, theta):
        return self.perturbed_entry(theta).value


_TABLES = {}


def moment_table(spec, quad_nodes=DEFAULT_QUAD_NODES,
                 mc_samples=DEFAULT_MC_SAMPLES):
    """Process-local cache of MomentTable instances keyed by spec."""
    key = (spec, quad_nodes, mc_samples)
    if key not in _TABLES:
        _TABLES[key] = MomentTable(spec, quad_nodes, mc_samples)
    return _TABLES[key]


def moment(spec, name, scale=1.0):
    return moment_table(spec).moment(name, scale)


def perturbed_product_moment(spec, theta):
    return moment_table(spec).perturbed_product(theta)
