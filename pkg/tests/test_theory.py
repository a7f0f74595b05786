import math

import numpy as np
import pytest

from fliplab import (
    certificate_check,
    certified_envelope_parameters,
    certified_step_size,
    derive_stream,
    drift_moment_floor,
    empirical_process_sup,
    failure_envelope,
    fgsm_step,
    make_activation,
    minimal_certified_step,
    moment,
    output_magnitude_bound,
    perturbed_product_moment,
    sample_network,
    stein_check,
    summarize,
    two_layer_coefficients,
)


def _condition(report, name):
    return next(c for c in report.conditions if c.name == name)


class TestCertifiedStepSize:
    def test_fixture_values(self, relu, tanh, fixtures):
        cxi = fixtures["cxi"]
        # relu moments are sampled, so the closed-form anchors sit ~2e-4 off
        assert certified_step_size(relu, 0.01, 1.0, 1.0) == pytest.approx(
            cxi["relu_0.01_1_1"], rel=5e-3)
        assert certified_step_size(relu, 0.05, 0.1, 10.0) == pytest.approx(
            cxi["relu_0.05_0.1_10"], rel=5e-3)
        assert certified_step_size(tanh, 0.05, 0.1, 10.0) == pytest.approx(
            cxi["tanh_0.05_0.1_10"], rel=1e-6)

    def test_strictly_decreasing_in_xi(self, tanh):
        values = [certified_step_size(tanh, xi) for xi in
                  (0.001, 0.01, 0.05, 0.2, 1.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_homogeneity_in_moments(self):
        # C_xi * E[sigma'^2] / sqrt(E[sigma^2] + 1) depends only on
        # (xi, c, c0); doubling the derivative moment halves the step
        collapsed = []
        for name in ("relu", "tanh", "softplus", "linear"):
            spec = make_activation(name)
            collapsed.append(
                certified_step_size(spec, 0.05) * moment(spec, "dsigma2")
                / math.sqrt(moment(spec, "sigma2") + 1.0))
        for value in collapsed[1:]:
            assert value == pytest.approx(collapsed[0], rel=1e-12)

    def test_validation(self, relu):
        with pytest.raises(ValueError):
            certified_step_size(relu, 0.0)
        with pytest.raises(ValueError):
            certified_step_size(relu, 10.0, c0=10.0)
        with pytest.raises(ValueError):
            certified_step_size(relu, 0.05, c=0.0)
        with pytest.raises(ValueError):
            certified_step_size(relu, 0.05, c0=-1.0)


class TestDriftMomentFloor:
    def test_relu_fixture_widths(self, relu, fixtures):
        assert drift_moment_floor(relu, 10**4, 10**4) == pytest.approx(
            fixtures["qtilde_relu"]["1e4_1e4"], abs=2e-3)
        assert drift_moment_floor(relu, 10**6, 10**6) == pytest.approx(
            fixtures["qtilde_relu"]["1e6_1e6"], abs=2e-3)

    def test_relu_floor_holds_at_1e4(self, relu):
        assert drift_moment_floor(relu, 10**4, 10**4) \
            >= moment(relu, "dsigma2") / 2.0

    def test_huge_width_proxy_recovers_derivative_moment(self, relu):
        # the box collapses, so the minimum approaches the origin value
        value = drift_moment_floor(relu, 10**12, 10**12)
        assert value == pytest.approx(moment(relu, "dsigma2"), rel=1e-3)

    def test_tanh_dense_grid_fixture(self, tanh, fixtures):
        value = drift_moment_floor(tanh, 10**4, 10**4, grid_per_axis=9)
        assert value == pytest.approx(
            fixtures["qtilde_tanh_1e4_1e4"]["min"], abs=1e-4)

    def test_never_exceeds_origin_value(self, relu, tanh):
        for spec in (relu, tanh):
            origin = moment(spec, "dsigma2")
            for width in (10**4, 10**8):
                assert drift_moment_floor(spec, width, width) <= origin

    def test_validation(self, relu):
        with pytest.raises(ValueError):
            drift_moment_floor(relu, 0, 100)
        with pytest.raises(ValueError):
            drift_moment_floor(relu, 100, 100, grid_per_axis=0)


@pytest.fixture(scope="module")
def report(relu):
    return certificate_check(relu, 0.05, 10**6, 10**6)


class TestCertificateCheck:
    def test_fixture_agreement(self, report, fixtures):
        f = fixtures["certificate_relu_1e6"]
        # moment-free arithmetic is exact; everything touched by the
        # sampled relu moments gets the moment-aware tolerance
        assert report.xi_threshold == pytest.approx(
            f["xi_threshold"], rel=1e-12)
        assert report.success_lower_bound == pytest.approx(
            f["success_lower_bound"], rel=1e-12)
        assert report.s_d == pytest.approx(f["s_d"], rel=5e-3)
        assert report.d_threshold_tail == pytest.approx(
            f["d_threshold_tail"], rel=5e-3)
        assert report.d_threshold_process == pytest.approx(
            f["d_threshold_ep"], rel=5e-3)
        assert report.d_threshold_moment == pytest.approx(
            f["d_threshold_moment"], rel=5e-3)
        assert report.m_threshold == pytest.approx(f["m_threshold"], rel=5e-3)
        assert report.q_floor == pytest.approx(f["qtilde_floor"], abs=1e-3)

    def test_fixture_booleans(self, report, fixtures):
        f = fixtures["certificate_relu_1e6"]
        assert _condition(report, "input-width").holds == f["d_ok"]
        assert _condition(report, "hidden-width").holds == f["m_ok"]
        assert _condition(report, "xi-ceiling").holds == f["xi_ok"]

    def test_report_lists_all_condition_groups(self, report):
        names = [c.name for c in report.conditions]
        assert names == ["input-width", "hidden-width", "drift-moment",
                         "xi-ceiling", "step-size"]
        assert not report.all_hold
        for check in report.conditions:
            assert check.holds == (check.margin >= 0.0)

    def test_xi_ceiling_violation_has_exact_margin(self, relu):
        report = certificate_check(relu, 5.0, 10**6, 10**6)
        check = _condition(report, "xi-ceiling")
        assert not check.holds
        assert check.margin == report.xi_threshold - 5.0

    def test_small_widths_still_complete(self, relu):
        report = certificate_check(relu, 0.05, 100, 100)
        assert not _condition(report, "input-width").holds
        assert math.isfinite(report.success_lower_bound)
        assert math.isfinite(report.q_tilde)

    def test_validation(self, relu):
        with pytest.raises(ValueError):
            certificate_check(relu, 0.05, 0, 100)
        with pytest.raises(ValueError):
            certificate_check(relu, -0.1, 100, 100)


@pytest.fixture(scope="module")
def envelope(relu):
    return failure_envelope(relu, 3.0, 10**4, 10**4,
                            eta1=10.0, eta2=5.0, eta=1.0)


class TestFailureEnvelope:
    def test_fixture_agreement(self, envelope, fixtures):
        f = fixtures["envelope_relu_1e4_s3"]
        assert envelope.box[0][1] == f["box_t1_max"]
        assert envelope.box[1][0] == f["box_t2"][0]
        assert envelope.box[1][1] == f["box_t2"][1]
        assert envelope.box[2][1] == pytest.approx(f["box_t3_max"], rel=5e-3)
        assert envelope.q_min == pytest.approx(f["q_min"], abs=2e-3)
        assert envelope.delta_dm == pytest.approx(f["delta_dm"], rel=5e-3)
        assert envelope.eta3 == pytest.approx(f["eta3"], abs=5e-3)
        assert envelope.success_lower_bound == pytest.approx(
            f["success_lower_bound"], abs=5e-3)
        assert envelope.flip_triggered == f["flip_triggered"]

    def test_delta_is_max_of_extents(self, envelope):
        extents = (envelope.box[0][1], envelope.box[1][1],
                   envelope.box[2][1])
        assert envelope.delta_dm == max(extents)

    def test_eta3_matches_its_formula(self, envelope, relu):
        second = moment(relu, "sigma2")
        expected = (3.0 * envelope.q_min - 1.0
                    - 2.0 * 3.0 * 5.0 / 100.0 - 1.0) / math.sqrt(second + 1.0)
        assert envelope.eta3 == pytest.approx(expected, rel=1e-12)

    def test_validation(self, relu):
        with pytest.raises(ValueError):
            failure_envelope(relu, 0.0, 100, 100, eta1=1.0, eta2=1.0, eta=1.0)
        with pytest.raises(ValueError):
            failure_envelope(relu, 1.0, 100, 100, eta1=-1.0, eta2=1.0,
                             eta=1.0)


class TestCertifiedSubstitution:
    def test_envelope_collapses_onto_certificate(self, relu):
        pars = certified_envelope_parameters(relu, 0.05)
        report = certificate_check(relu, 0.05, 10**6, 10**6)
        env = failure_envelope(relu, pars.s_d, 10**6, 10**6,
                               eta1=pars.eta1, eta2=pars.eta2, eta=pars.eta)
        assert env.s_d == report.s_d  # same helper, bitwise
        assert pars.eta == 1.0
        assert pars.eta1 == pytest.approx(math.sqrt(200.0), rel=1e-12)
        assert pars.eta2 == pytest.approx(math.log(200.0) / 0.1, rel=1e-12)

    def test_minimal_step_raises_below_validity_floor(self, relu):
        with pytest.raises(ValueError):
            minimal_certified_step(relu, 0.05, 10**4)

    def test_minimal_step_below_certified_step(self, relu):
        s_min = minimal_certified_step(relu, 0.05, int(9.4e8))
        assert s_min <= certified_step_size(relu, 0.05)
        assert minimal_certified_step(relu, 0.05, int(9.4e9)) < s_min


class TestSteinCheck:
    def test_identity_function(self):
        result = stein_check(lambda z: z, lambda z: np.ones_like(z),
                             0.0, 1.0, 10**5, derive_stream(50, 0))
        assert result.rhs.mean == 1.0
        assert result.rhs.stderr == 0.0
        assert abs(result.lhs.mean - 1.0) <= 3.0 * result.lhs.stderr
        assert result.agree

    def test_square_function_vanishes(self):
        result = stein_check(lambda z: z**2, lambda z: 2.0 * z,
                             0.0, 1.0, 10**5, derive_stream(50, 1))
        assert abs(result.lhs.mean) <= 3.0 * result.lhs.stderr
        assert abs(result.rhs.mean) <= 3.0 * result.rhs.stderr
        assert result.agree

    def test_smooth_battery(self):
        battery = [
            (lambda z: z, lambda z: np.ones_like(z)),
            (lambda z: z**2, lambda z: 2.0 * z),
            (lambda z: z**3, lambda z: 3.0 * z**2),
            (np.tanh, lambda z: 1.0 - np.tanh(z)**2),
            (np.sin, np.cos),
        ]
        for k, (fn, dfn) in enumerate(battery):
            result = stein_check(fn, dfn, 0.5, 1.5, 10**6,
                                 derive_stream(51, k))
            assert result.agree

    def test_tanh_fixture_anchor(self, fixtures):
        result = stein_check(np.tanh, lambda z: 1.0 - np.tanh(z)**2,
                             0.3, 2.0, 10**7, derive_stream(52, 0))
        anchor = fixtures["stein_tanh_0.3_2.0"]
        assert result.lhs.mean == pytest.approx(
            anchor["lhs"], abs=3.0 * result.lhs.stderr)
        assert result.rhs.mean == pytest.approx(
            anchor["rhs"], abs=3.0 * result.rhs.stderr)
        assert result.agree

    def test_validation(self):
        with pytest.raises(ValueError):
            stein_check(np.tanh, np.cos, 0.0, 0.0, 100, derive_stream(52, 1))
        with pytest.raises(ValueError):
            stein_check(np.tanh, np.cos, 0.0, 1.0, 1, derive_stream(52, 2))

    def test_non_finite_samples_raise(self):
        with np.errstate(over="ignore"), pytest.raises(ArithmeticError):
            stein_check(np.exp, np.exp, 0.0, 10**6, 1000,
                        derive_stream(52, 3))


class TestEmpiricalProcess:
    def test_origin_value_is_exactly_zero(self, relu):
        est = empirical_process_sup(relu, 10**4, 0.1, 5, derive_stream(53, 0))
        assert est.value_at_zero == 0.0
        assert est.sup_abs >= 0.0
        assert est.sup_theta is not None

    def test_nested_grids_are_monotone(self, relu):
        # axis {-d, 0, d} is a subset of {-2d, -d, 0, d, 2d}; same stream,
        # so the wider grid can only raise the supremum
        small = empirical_process_sup(relu, 2000, 0.05, 3,
                                      derive_stream(53, 1))
        wide = empirical_process_sup(relu, 2000, 0.1, 5, derive_stream(53, 1))
        assert wide.sup_abs >= small.sup_abs

    def test_dudley_monitor_matches_its_formula(self, relu):
        est = empirical_process_sup(relu, 5000, 0.1, 3, derive_stream(53, 2))
        stream = derive_stream(53, 2)
        g = stream.substream("g").standard_normal(5000)
        b = stream.substream("b").standard_normal(5000)
        u = stream.substream("u").standard_normal(5000)
        mean_m_sq = float(np.mean(b**2 * (g**2 + b**2 + u**2)))
        assert est.dudley_envelope == pytest.approx(
            4.0 * 0.1 * math.sqrt(mean_m_sq), rel=1e-12)

    def test_growth_across_delta_doublings(self, ep_growth_curve):
        means = [float(np.mean(ep_growth_curve[d]))
                 for d in (0.025, 0.05, 0.1)]
        assert means[1] / means[0] <= 3.0
        assert means[2] / means[1] <= 3.0

    def test_validation(self, relu):
        stream = derive_stream(53, 3)
        with pytest.raises(ValueError):
            empirical_process_sup(relu, 10**4, 0.1, 4, stream)
        with pytest.raises(ValueError):
            empirical_process_sup(relu, 10**4, 0.1, 1, stream)
        with pytest.raises(ValueError):
            empirical_process_sup(relu, 99, 0.1, 5, stream)
        with pytest.raises(ValueError):
            empirical_process_sup(relu, 10**4, 0.0, 5, stream)
        with pytest.raises(ValueError):
            empirical_process_sup(relu, 10**4, 0.1, 5, stream,
                                  dudley_constant=0.0)


class TestOutputMagnitudeBound:
    def test_zero_slack(self, relu):
        assert output_magnitude_bound(relu, 100, 0.0) == 0.0

    def test_relu_moment_plug_in(self, relu):
        expected = 3.0 * math.sqrt(moment(relu, "sigma2") + 1.0)
        assert output_magnitude_bound(relu, 10**4, 3.0) == pytest.approx(
            expected, rel=1e-12)

    def test_empirical_tail(self, relu):
        bound = output_magnitude_bound(relu, 10**4, 3.0)
        exceed = 0
        trials = 1000
        for trial in range(trials):
            stream = derive_stream(54, trial)
            g = stream.substream("g").standard_normal(10**4)
            a = stream.substream("a").standard_normal(10**4) / 100.0
            exceed += abs(float(a @ np.maximum(g, 0.0))) > bound
        assert exceed / trials < 0.01

    def test_validation(self, relu):
        with pytest.raises(ValueError):
            output_magnitude_bound(relu, 0, 1.0)
        with pytest.raises(ValueError):
            output_magnitude_bound(relu, 100, -1.0)


class TestDriftIdentity:
    def test_two_layer_relu_drift(self, relu):
        # F(g^s) - F(g) should cancel against +beta1 * Q(mu, beta, gamma)
        # on average; beta1 is the sqrt(m)-scaled coefficient
        d = m = 4000
        vals = []
        for trial in range(200):
            net = sample_network((d, m, 1), derive_stream(55, trial))
            x = derive_stream(56, trial).standard_normal(d)
            out = fgsm_step(net, relu, x, 2.0)
            coeff = two_layer_coefficients(net, relu, x, 2.0,
                                           derive_stream(57, trial))
            theta = (coeff.stats.mu, coeff.stats.beta / math.sqrt(m),
                     coeff.stats.gamma)
            drift = coeff.stats.beta * perturbed_product_moment(relu, theta)
            vals.append(out.f_xs - out.f_x + drift)
        stats = summarize(np.asarray(vals))
        assert abs(stats.mean) <= 3.0 * stats.stderr
