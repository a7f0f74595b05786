"""Generate frozen reference values for the test suite.

Every number in tests/fixtures.json is computed here by a route that is
independent of the library implementation: closed forms where they exist
(orthant probabilities, Gaussian tail integrals), physicists' Gauss-Hermite
quadrature (scipy.special.roots_hermite, weights /sqrt(pi)) where the library
uses the probabilists' flavor, and PCG64 Monte Carlo spot checks where the
library uses Philox streams.  Run from the repository root:

    python tools/make_fixtures.py

The script cross-validates each closed form against Monte Carlo before
writing anything and refuses to emit a fixture that fails its own check.
"""

import json
import math
import pathlib

import numpy as np
from scipy.special import ndtr, roots_hermite, roots_legendre

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures.json"

rng = np.random.default_rng(790126)


def gh_expect_1d(f, n=200):
    """E[f(Z)], Z ~ N(0,1), physicists' rule rescaled to unit variance."""
    x, w = roots_hermite(n)
    return float(np.sum(w * f(np.sqrt(2.0) * x)) / math.sqrt(math.pi))


def gh_expect_3d(f, n=40):
    """E[f(G,B,U)] for iid standard normal triples, tensor rule."""
    x, w = roots_hermite(n)
    z = np.sqrt(2.0) * x
    G, B, U = np.meshgrid(z, z, z, indexing="ij")
    W = (
        w[:, None, None] * w[None, :, None] * w[None, None, :]
    ) / math.pi ** 1.5
    return float(np.sum(W * f(G, B, U)))


def orthant(rho):
    """P(X > 0, Y > 0) for standard bivariate normal with correlation rho."""
    return 0.25 + math.asin(rho) / (2.0 * math.pi)


def relu_ppm(t1, t2, t3):
    """E[1{g>0} 1{(1-t1)g - t2*b - t3*u > 0}] for iid normal (g, b, u).

    On {g > 0} the second factor is a half-space event in (g, b, u); the pair
    (g, ((1-t1)g - t2 b - t3 u)/s) is bivariate normal with correlation
    (1-t1)/s, s = sqrt((1-t1)^2 + t2^2 + t3^2).
    """
    s = math.sqrt((1.0 - t1) ** 2 + t2 ** 2 + t3 ** 2)
    return orthant((1.0 - t1) / s)


def mc_check(name, closed, sampler, n=2_000_000, z=4.5):
    draws = sampler(n)
    est = float(np.mean(draws))
    se = float(np.std(draws, ddof=1) / math.sqrt(n))
    if abs(est - closed) > z * se + 1e-12:
        raise AssertionError(
            f"{name}: closed form {closed} vs MC {est} +/- {se}"
        )
    print(f"  ok {name}: closed={closed:.8f} mc={est:.8f} se={se:.2e}")


fixtures = {}

# ---------------------------------------------------------------- flip limits
# Limiting flip probability 2*Phi(S0*E[sigma'^2]/sqrt(E[sigma^2])) - 1 for
# relu (both moments are 1/2), so the argument is S0/sqrt(2) and the value
# is erf(S0/2).
fixtures["flip_limit_relu"] = {
    str(s0): math.erf(s0 / 2.0) for s0 in (1, 2, 3)
}


def _flip_mc(s0):
    def sampler(n):
        z = rng.standard_normal(n)
        return (np.abs(z) * math.sqrt(0.5) < s0 * 0.5).astype(float)

    return sampler


for s0 in (1, 2, 3):
    mc_check(f"flip_limit_relu[{s0}]", fixtures["flip_limit_relu"][str(s0)],
             _flip_mc(s0), n=4_000_000)

# -------------------------------------------------------------- tanh moments
tanh_sigma2 = gh_expect_1d(lambda z: np.tanh(z) ** 2)
tanh_dsigma2 = gh_expect_1d(lambda z: (1.0 - np.tanh(z) ** 2) ** 2)
tanh_sigma4 = gh_expect_1d(lambda z: np.tanh(z) ** 4)
# convergence check: N=200 vs N=400 must agree far below test tolerance
for val, f in (
    (tanh_sigma2, lambda z: np.tanh(z) ** 2),
    (tanh_dsigma2, lambda z: (1.0 - np.tanh(z) ** 2) ** 2),
):
    assert abs(val - gh_expect_1d(f, n=400)) < 1e-13
mc_check("tanh_sigma2", tanh_sigma2,
         lambda n: np.tanh(rng.standard_normal(n)) ** 2, n=4_000_000)
fixtures["tanh"] = {
    "sigma2": tanh_sigma2,
    "dsigma2": tanh_dsigma2,
    "sigma4": tanh_sigma4,
}

# ---------------------------------------------------------- softplus moments
softplus_sigma2 = gh_expect_1d(lambda z: np.logaddexp(0.0, z) ** 2)
softplus_dsigma2 = gh_expect_1d(lambda z: (1.0 / (1.0 + np.exp(-z))) ** 2)
fixtures["softplus"] = {
    "sigma2": softplus_sigma2,
    "dsigma2": softplus_dsigma2,
    "sigma0": math.log(2.0),
}

# ------------------------------------------------- shifted relu closed forms
# sigma(x) = max(x - c, 0):  E[sigma'^2] = 1 - Phi(c),
# E[sigma^2] = (1 + c^2)(1 - Phi(c)) - c phi(c).
c_shift = 0.5
phi_c = math.exp(-c_shift ** 2 / 2.0) / math.sqrt(2.0 * math.pi)
tail_c = float(1.0 - ndtr(c_shift))
shifted_sigma2 = (1.0 + c_shift ** 2) * tail_c - c_shift * phi_c
fixtures["shifted_relu_0.5"] = {
    "sigma2": shifted_sigma2,
    "dsigma2": tail_c,
}
mc_check(
    "shifted_relu_0.5.sigma2", shifted_sigma2,
    lambda n: np.maximum(rng.standard_normal(n) - c_shift, 0.0) ** 2,
    n=4_000_000,
)

# ------------------------------------------------ relu perturbed product law
fixtures["relu_ppm"] = {
    "0.01_0.02_0.05": relu_ppm(0.01, 0.02, 0.05),
    "0_0.1_0": relu_ppm(0.0, 0.1, 0.0),
}


def _ppm_mc(t1, t2, t3):
    def sampler(n):
        g = rng.standard_normal(n)
        b = rng.standard_normal(n)
        u = rng.standard_normal(n)
        return ((g > 0) & ((1 - t1) * g - t2 * b - t3 * u > 0)).astype(float)

    return sampler


mc_check("relu_ppm[0.01,0.02,0.05]", fixtures["relu_ppm"]["0.01_0.02_0.05"],
         _ppm_mc(0.01, 0.02, 0.05), n=4_000_000)
mc_check("relu_ppm[0,0.1,0]", fixtures["relu_ppm"]["0_0.1_0"],
         _ppm_mc(0.0, 0.1, 0.0), n=4_000_000)

# -------------------------------------- 2-D quadrature anchor for the MC test
# E[sigma'(g) sigma'(g - 0.1 b)] for relu equals the orthant probability
# with rho = 1/sqrt(1.01).  Tensor Gauss-Hermite converges poorly on the
# discontinuity lines g = 0 and g = 0.1 b, so the full 2-D quadrature is an
# iterated Gauss-Legendre rule with panels aligned to those lines: on each
# panel the literal integrand sigma'(g) sigma'(g - 0.1 b) phi(g) phi(b) is
# smooth and the rule is machine-accurate; the tail beyond |.| = 10 is below
# 1e-22.
closed_2d = relu_ppm(0.0, 0.1, 0.0)


def quad2d_relu_panels(n=60, box=10.0):
    xb, wb = roots_legendre(n)

    def phi(t):
        return np.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi)

    def inner(b):
        total = 0.0
        cut = max(0.0, 0.1 * b)
        for lo, hi in ((-box, 0.0), (0.0, cut), (cut, box)):
            if hi <= lo:
                continue
            g = 0.5 * (hi - lo) * xb + 0.5 * (hi + lo)
            val = (g > 0) * (g - 0.1 * b > 0) * phi(g)
            total += 0.5 * (hi - lo) * float(np.sum(wb * val))
        return total

    total = 0.0
    for lo, hi in ((-box, 0.0), (0.0, box)):
        b = 0.5 * (hi - lo) * xb + 0.5 * (hi + lo)
        vals = np.array([inner(float(bi)) for bi in b]) * phi(b)
        total += 0.5 * (hi - lo) * float(np.sum(wb * vals))
    return total


quad_2d = quad2d_relu_panels()
err_2d = abs(quad_2d - closed_2d)
print(f"  quad2d relu panel GL: value={quad_2d:.12f} err={err_2d:.2e}")
assert err_2d < 1e-10
fixtures["quad2d_relu"] = {
    "closed_form": closed_2d,
    "quad_value": quad_2d,
    "abs_err": err_2d,
}

# --------------------------------------------------------- certified step size
# c_xi = 4 sqrt(log(C0/xi) (E[sigma^2] + 1)) / (sqrt(c) E[sigma'^2])


def cxi(sigma2, dsigma2, xi, c, c0):
    return 4.0 * math.sqrt(math.log(c0 / xi) * (sigma2 + 1.0)) / (
        math.sqrt(c) * dsigma2
    )


fixtures["cxi"] = {
    "relu_0.01_1_1": cxi(0.5, 0.5, 0.01, 1.0, 1.0),
    "relu_0.05_0.1_10": cxi(0.5, 0.5, 0.05, 0.1, 10.0),
    "tanh_0.05_0.1_10": cxi(tanh_sigma2, tanh_dsigma2, 0.05, 0.1, 10.0),
}
assert abs(fixtures["cxi"]["relu_0.01_1_1"]
           - 8.0 * math.sqrt(math.log(100.0) * 1.5)) < 1e-12

# ------------------------------------------- shrinking-box worst drift moment
# Box |t1| <= d^-1/2, |t2| <= 2 m^-1/4, |t3| <= d^-1/4.  For relu the
# integrand is an orthant probability increasing in the implied correlation,
# so the minimum sits at the all-max corner.


def qtilde_relu_corner(d, m):
    return relu_ppm(d ** -0.5, 2.0 * m ** -0.25, d ** -0.25)


fixtures["qtilde_relu"] = {
    "1e4_1e4": qtilde_relu_corner(1e4, 1e4),
    "1e6_1e6": qtilde_relu_corner(1e6, 1e6),
}

# --------------------------------------- certificate report margins at d=m=1e6
d_cert = 1.0e6
m_cert = 1.0e6
xi_cert, c_cert, c0_cert = 0.05, 0.1, 10.0
L_relu, sig0_relu = 1.0, 0.0
sd_cert = fixtures["cxi"]["relu_0.05_0.1_10"]
log_term = math.log(c0_cert / xi_cert)
d_thr_tail = sd_cert ** 2 * c0_cert * (sig0_relu ** 2 + L_relu ** 2) / xi_cert
d_thr_ep = (4.0 * L_relu ** 4 * sd_cert ** 2 / c_cert ** 2) * log_term ** 2
d_thr_moment = 16.0 * sd_cert ** 4 * (1.0 + 0.5) ** 2
m_thr = sd_cert ** 4
xi_thr = c0_cert * math.exp(-9.0 * c_cert)
success_lb = 1.0 - 3.0 * xi_cert - c0_cert * (
    math.exp(-c_cert * d_cert)
    + (sig0_relu ** 4 + L_relu ** 4) / m_cert
    + 2.0 * L_relu * (d_cert ** -0.25 + m_cert ** -0.25)
)
fixtures["certificate_relu_1e6"] = {
    "s_d": sd_cert,
    "d_threshold_tail": d_thr_tail,
    "d_threshold_ep": d_thr_ep,
    "d_threshold_moment": d_thr_moment,
    "m_threshold": m_thr,
    "xi_threshold": xi_thr,
    "qtilde_floor": 0.25,
    "success_lower_bound": success_lb,
    "d_ok": d_cert >= max(d_thr_tail, d_thr_ep, d_thr_moment),
    "m_ok": m_cert >= m_thr,
    "xi_ok": xi_cert <= xi_thr,
}
print(f"  certificate d thresholds: tail={d_thr_tail:.4g} "
      f"ep={d_thr_ep:.4g} moment={d_thr_moment:.4g} m={m_thr:.4g}")

# ---------------------------------------------- envelope fixture (relu, s_d=3)
d_env, m_env, sd_env = 1.0e4, 1.0e4, 3.0
eta1, eta2, eta = 10.0, 5.0, 1.0
E2, ED2 = 0.5, 0.5
t1_max = sd_env * eta1 / d_env
t2_lo = sd_env / math.sqrt(m_env) - 2.0 * sd_env * eta2 / math.sqrt(d_env * m_env)
t2_hi = sd_env / math.sqrt(m_env) + 2.0 * sd_env * eta2 / math.sqrt(d_env * m_env)
t3_max = (2.0 * sd_env / math.sqrt(d_env)) * math.sqrt(1.0 + E2)
q_env = relu_ppm(t1_max, t2_hi, t3_max)
delta_dm = max(t1_max, t2_hi, t3_max)
eta3 = (sd_env * q_env - eta - 2.0 * d_env ** -0.5 * sd_env * L_relu ** 2 * eta2
        - 1.0) / math.sqrt(E2 + 1.0)
env_success = 1.0 - c0_cert * (
    (sig0_relu ** 2 + L_relu ** 2) / eta1 ** 2
    + math.exp(-c_cert * eta2)
    + math.exp(-c_cert * d_env)
    + (sig0_relu ** 4 + L_relu ** 4) / m_env
    + math.exp(-c_cert * eta3 ** 2)
    + L_relu * delta_dm / eta
)
fixtures["envelope_relu_1e4_s3"] = {
    "box_t1_max": t1_max,
    "box_t2": [t2_lo, t2_hi],
    "box_t3_max": t3_max,
    "q_min": q_env,
    "delta_dm": delta_dm,
    "eta3": eta3,
    "success_lower_bound": env_success,
    "flip_triggered": eta3 > 0.0,
}
print(f"  envelope: q_min={q_env:.6f} eta3={eta3:.6f} "
      f"success_lb={env_success:.4f}")

# ------------------------------------------------- displacement bound values


def bound_two_layer(C, s_d, d, m, delta):
    return (C * s_d / math.sqrt(d)) * (
        1.0 + math.log(1.0 / delta) / math.sqrt(d)
    ) * (1.0 + 1.0 / math.sqrt(m * delta))


def bound_multi_layer(C, s_d, dims, delta, k):
    # dims = [d0, d1, ..., dl, 1]; l hidden layers
    hidden = dims[1:-1]
    length = len(hidden)
    d0 = dims[0]
    prod = 1.0
    for i in range(1, length + 1):
        for j in range(1, i + 1):
            prod *= (1.0 + 1.0 / math.sqrt(delta * hidden[j - 1])) ** (
                k ** (i - j)
            )
    return (C * s_d / math.sqrt(d0)) * (
        (math.sqrt(math.log(1.0 / delta)) + 1.0) ** (length - 1)
    ) * (1.0 + math.log(1.0 / delta) / math.sqrt(d0)) * prod


fixtures["bound2l_C1_d1e4_m1e4_s3_delta0.1"] = bound_two_layer(
    1.0, 3.0, 1e4, 1e4, 0.1)
fixtures["boundml_C1_s3_delta0.1_k1_dims_1e4x3_1"] = bound_multi_layer(
    1.0, 3.0, [10000, 10000, 10000, 1], 0.1, 1)

# --------------------------------------------------------- Stein check anchor
# Z ~ N(0.3, variance 2): lhs = E[tanh(Z)(Z - 0.3)], rhs = 2 E[tanh'(Z)].
x1_st, x2_st = 0.3, 2.0


def stein_lhs(n=400):
    return gh_expect_1d(
        lambda z: np.tanh(x1_st + math.sqrt(x2_st) * z)
        * (math.sqrt(x2_st) * z), n)


def stein_rhs(n=400):
    return x2_st * gh_expect_1d(
        lambda z: 1.0 - np.tanh(x1_st + math.sqrt(x2_st) * z) ** 2, n)


lhs_val, rhs_val = stein_lhs(), stein_rhs()
assert abs(lhs_val - rhs_val) < 1e-12, (lhs_val, rhs_val)
fixtures["stein_tanh_0.3_2.0"] = {"lhs": lhs_val, "rhs": rhs_val}
mc_check(
    "stein_tanh lhs", lhs_val,
    lambda n: (lambda z: np.tanh(z) * (z - x1_st))(
        x1_st + math.sqrt(x2_st) * rng.standard_normal(n)),
    n=4_000_000,
)

# -------------------------------------- dense-grid drift-moment oracle (tanh)
# Box |t1| <= 0.01, |t2| in [0.01, 0.05]? no: the shrinking box at d=m=1e4 is
# |t1| <= 1e-2^... |t1| <= d^-1/2 = 0.01, |t2| <= 2 m^-1/4 = 0.2,
# |t3| <= d^-1/4 = 0.1.  9 points per axis, smooth integrand via tensor rule.


def tanh_ppm(t1, t2, t3):
    def f(G, B, U):
        dg = 1.0 - np.tanh(G) ** 2
        inner = (1.0 - t1) * G - t2 * B * dg - t3 * U
        return dg * (1.0 - np.tanh(inner) ** 2)

    return gh_expect_3d(f, n=40)


grid1 = np.linspace(-0.01, 0.01, 9)
grid2 = np.linspace(-0.2, 0.2, 9)
grid3 = np.linspace(-0.1, 0.1, 9)
best_q = None
for t1 in grid1:
    for t2 in grid2:
        for t3 in grid3:
            v = tanh_ppm(float(t1), float(t2), float(t3))
            if best_q is None or v < best_q[0]:
                best_q = (v, [float(t1), float(t2), float(t3)])
fixtures["qtilde_tanh_1e4_1e4"] = {
    "min": best_q[0],
    "argmin": best_q[1],
}
print(f"  qtilde tanh dense grid: min={best_q[0]:.8f} at {best_q[1]}")

# ----------------------------------------------------- growth-check witnesses
# cubic-clipped: sigma(x) = clip(x^3, -8, 8), sigma' = 3x^2 on |x| < 2.
# Worst ratio |sigma'(x)| / (C (1 + |x|^{k-1})) with C = 3: k=1 gives
# 12 / (3 * 2) = 2 at |x| -> 2-, k=3 gives 3x^2/(3(1+x^2)) peaking at 0.8.
fixtures["growth_cubic_clipped"] = {
    "k1_worst_ratio": 2.0,
    "k3_worst_ratio": 0.8,
}

# ------------------------------------------------------ misc exact quantities
fixtures["leaky_relu_0.1"] = {
    "sigma2": (1.0 + 0.1 ** 2) / 2.0,
    "dsigma2": (1.0 + 0.1 ** 2) / 2.0,
}
fixtures["gh_monomial_z8"] = 105.0  # (8-1)!! for a standard normal
fixtures["meta"] = {
    "generator": "tools/make_fixtures.py",
    "oracle_rng": "numpy PCG64 seed 790126",
    "quadrature": "scipy.special.roots_hermite (physicists')",
}

OUT.parent.mkdir(parents=True, exist_ok=True)
OUT.write_text(json.dumps(fixtures, indent=2, sort_keys=True) + "\n")
print(f"wrote {OUT}")
