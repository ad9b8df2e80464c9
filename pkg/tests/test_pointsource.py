import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import exp1, gamma

from pointlab.geometry import BoundaryCurve, discretize
from pointlab.green import HeatKernelParams, eval_kernel
from pointlab.pointsource import (GaussianMixture, MixtureComponent, TimeSignal,
                                  eval_uhat, flux_on_curve, grad_lp_norm_u0,
                                  grad_uhat, total_mass)

P1 = HeatKernelParams(d=1.0)

CONST = TimeSignal.constant(1.0, 4.0)
RAMP = TimeSignal(np.array([0.0, 4.0]), np.array([0.0, 1.0]))
HAT = TimeSignal(np.array([0.0, 2.0, 4.0]), np.array([0.0, 1.0, 0.0]))
ZERO = TimeSignal.constant(0.0, 4.0)


def bump(w=1.0, center=(0.0, 0.0), s=0.5):
    return GaussianMixture.of(MixtureComponent(w, center, s))


# -- signals -----------------------------------------------------------------

def test_signal_validation():
    with pytest.raises(ValueError):
        TimeSignal(np.array([0.5, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        TimeSignal(np.array([0.0, 1.0, 1.0]), np.array([1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        TimeSignal(np.array([0.0, 1.0]), np.array([np.inf, 1.0]))


def test_signal_closed_form_integrals():
    assert CONST.integral(3.0) == pytest.approx(3.0, rel=1e-14)
    assert RAMP.integral(4.0) == pytest.approx(2.0, rel=1e-14)
    assert RAMP.l2_norm_sq(4.0) == pytest.approx(4.0 / 3.0, rel=1e-14)
    assert HAT.integral(4.0) == pytest.approx(2.0, rel=1e-14)
    assert HAT.l2_norm_sq(4.0) == pytest.approx(4.0 / 3.0, rel=1e-14)
    # partial segments
    assert HAT.integral(1.0) == pytest.approx(0.25, rel=1e-14)
    # second segment drops 1 -> 1/2 with slope -1/2: integral of f^2 is
    # (f_start^3 - f_end^3) / (3 |slope|) = (1 - 1/8) / (3/2) = 7/12
    assert HAT.l2_norm_sq(3.0) == pytest.approx(2.0 / 3.0 + 7.0 / 12.0, rel=1e-13)


def test_signal_l1_handles_sign_changes():
    sig = TimeSignal(np.array([0.0, 1.0, 2.0]), np.array([1.0, -1.0, 1.0]))
    # |signal| is two unit hats: integral over [0, 2] is 1
    assert sig.l1_norm(2.0) == pytest.approx(1.0, rel=1e-14)
    assert sig.integral(2.0) == pytest.approx(0.0, abs=1e-15)


def test_signal_iterated_l1_against_nested_quadrature():
    for sig in (CONST, RAMP, HAT,
                TimeSignal(np.array([0.0, 1.0, 3.0, 4.0]), np.array([0.5, -1.0, 2.0, 0.0]))):
        # |signal| has kinks at the knots and at sign changes; hand both sets
        # of breakpoints to quad or the inner integral loses accuracy
        breaks = list(sig.knots)
        for k0, k1, v0, v1 in zip(sig.knots[:-1], sig.knots[1:],
                                  sig.values[:-1], sig.values[1:]):
            if v0 * v1 < 0:
                breaks.append(k0 + (k1 - k0) * v0 / (v0 - v1))
        breaks.sort()
        for t in (1.3, 2.7, 4.0):
            inner = lambda tau: quad(lambda s: abs(sig.eval(s)), 0.0, tau,
                                     points=breaks, limit=200)[0] ** 2
            oracle = quad(inner, 0.0, t, points=breaks, limit=200)[0]
            assert sig.l1sq_time_integral(t) == pytest.approx(oracle, rel=1e-9)


def test_signal_integral_bounds_checked():
    with pytest.raises(ValueError):
        CONST.integral(5.0)
    with pytest.raises(ValueError):
        CONST.l2_norm_sq(-1.0)


# -- mixtures ----------------------------------------------------------------

def test_mixture_semigroup_shift():
    m = bump(2.0, (1.0, -0.5), 0.3)
    x = np.array([0.4, 0.2])
    direct = m.eval(x, 0.7, P1)
    assert direct == pytest.approx(2.0 * eval_kernel(x - np.array([1.0, -0.5]), 1.0, P1),
                                   rel=1e-14)
    assert m.evolve(0.3).eval(x, 0.4, P1) == pytest.approx(direct, rel=1e-14)


def test_mixture_validation():
    with pytest.raises(ValueError):
        MixtureComponent(1.0, (0.0, 0.0), 0.0)
    with pytest.raises(ValueError):
        MixtureComponent(np.nan, (0.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        GaussianMixture.empty().evolve(-1.0)


# -- model field -------------------------------------------------------------

def test_eval_uhat_pure_mixture():
    u0 = bump(1.0, (0.0, 0.0), 0.5)
    val = eval_uhat(np.array([1.0, 0.0]), 0.5, u0, ZERO, P1)
    assert val == pytest.approx(np.exp(-0.25) / (4 * np.pi), rel=1e-12)
    assert val == pytest.approx(0.0619750, rel=1e-5)


def test_eval_uhat_constant_emission_closed_form():
    # for pb = 1 the convolution equals E1(|x|^2 / (4 d t)) / (4 pi d)
    val = eval_uhat(np.array([1.0, 0.0]), 1.0, GaussianMixture.empty(), CONST, P1)
    assert val == pytest.approx(exp1(0.25) / (4 * np.pi), rel=1e-8)
    assert val == pytest.approx(0.0831009, rel=1e-5)
    rng = np.random.default_rng(7)
    for _ in range(20):
        r = rng.uniform(0.05, 6.0)
        t = rng.uniform(0.05, 4.0)
        d = rng.uniform(0.3, 3.0)
        p = HeatKernelParams(d=d)
        got = eval_uhat(np.array([r, 0.0]), t, GaussianMixture.empty(),
                        TimeSignal.constant(1.0, 4.0), p)
        assert got == pytest.approx(exp1(r * r / (4 * d * t)) / (4 * np.pi * d), rel=1e-7)


def test_eval_uhat_linear_emission_closed_form():
    # pb(s) = s: convolution = [t E1(v0) - a (e^-v0 / v0 - E1(v0))] / (4 pi d)
    r, t, d = 1.3, 2.5, 0.8
    a = r * r / (4 * d)
    v0 = a / t
    oracle = (t * exp1(v0) - a * (np.exp(-v0) / v0 - exp1(v0))) / (4 * np.pi * d)
    sig = TimeSignal(np.array([0.0, 4.0]), np.array([0.0, 4.0]))
    got = eval_uhat(np.array([r, 0.0]), t, GaussianMixture.empty(), sig,
                    HeatKernelParams(d=d))
    assert got == pytest.approx(oracle, rel=1e-8)


def test_eval_uhat_piecewise_emission_against_quadrature():
    # direct adaptive quadrature of the time convolution in the s variable
    r, t, d = 0.9, 3.3, 1.0
    pts = [k for k in HAT.knots if 0 < k < t]

    def integrand(s):
        return float(eval_kernel(np.array([r, 0.0]), t - s, P1)) * HAT.eval(s)

    oracle = quad(integrand, 0.0, t, points=pts, limit=400)[0]
    got = eval_uhat(np.array([r, 0.0]), t, GaussianMixture.empty(), HAT, P1)
    assert got == pytest.approx(oracle, rel=1e-7)


def test_eval_uhat_combined_and_t_zero():
    u0 = bump(1.0, (2.0, 0.0), 0.4)
    x = np.array([1.0, 1.0])
    both = eval_uhat(x, 1.5, u0, CONST, P1)
    mix = eval_uhat(x, 1.5, u0, ZERO, P1)
    src = eval_uhat(x, 1.5, GaussianMixture.empty(), CONST, P1)
    assert both == pytest.approx(mix + src, rel=1e-13)
    assert eval_uhat(x, 0.0, u0, CONST, P1) == pytest.approx(u0.eval(x, 0.0, P1), rel=1e-14)


def test_eval_uhat_quadrature_tolerance_is_honest():
    x = np.array([0.7, -0.4])
    coarse = eval_uhat(x, 2.0, GaussianMixture.empty(), HAT, P1, rtol=1e-8)
    fine = eval_uhat(x, 2.0, GaussianMixture.empty(), HAT, P1, rtol=1e-10)
    assert abs(coarse - fine) <= 1e-8 * abs(fine)


def test_exclusion_radius_enforced():
    with pytest.raises(ValueError):
        eval_uhat(np.array([1e-5, 0.0]), 1.0, GaussianMixture.empty(), CONST, P1)
    with pytest.raises(ValueError):
        grad_uhat(np.array([1e-5, 0.0]), 1.0, GaussianMixture.empty(), CONST, P1)
    # mixture-only evaluation has no excluded region
    val = eval_uhat(np.zeros(2), 1.0, bump(), ZERO, P1)
    assert val > 0.0


def test_grad_uhat_matches_finite_differences():
    u0 = bump(1.5, (0.5, 0.2), 0.6)
    x = np.array([1.1, -0.8])
    g = grad_uhat(x, 1.2, u0, HAT, P1)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (eval_uhat(x + e, 1.2, u0, HAT, P1, rtol=1e-11)
              - eval_uhat(x - e, 1.2, u0, HAT, P1, rtol=1e-11)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=2e-5)


def test_grad_uhat_constant_emission_closed_form():
    # grad = -x exp(-|x|^2/(4 d t)) / (2 pi d |x|^2) for unit constant emission
    r, t, d = 1.7, 0.9, 1.4
    p = HeatKernelParams(d=d)
    x = np.array([r * np.cos(1.1), r * np.sin(1.1)])
    expect = -x * np.exp(-r * r / (4 * d * t)) / (2 * np.pi * d * r * r)
    got = grad_uhat(x, t, GaussianMixture.empty(), TimeSignal.constant(1.0, 2.0), p)
    assert np.allclose(got, expect, rtol=1e-8)


def test_grad_uhat_requires_positive_time():
    with pytest.raises(ValueError):
        grad_uhat(np.array([1.0, 0.0]), 0.0, bump(), CONST, P1)


def test_flux_on_circle_closed_form():
    disc = discretize(BoundaryCurve.circle(1.0), 64)
    for t in (0.25, 1.0, 4.0):
        flux = flux_on_curve(disc, t, GaussianMixture.empty(), CONST, P1)
        expect = np.exp(-1.0 / (4 * t)) / (2 * np.pi)
        assert np.allclose(flux, expect, rtol=1e-8)
    assert np.exp(-0.25) / (2 * np.pi) == pytest.approx(0.1239500, rel=1e-6)


def test_flux_at_time_zero_is_mixture_limit():
    disc = discretize(BoundaryCurve.circle(1.0), 32)
    u0 = bump(1.0, (0.3, 0.0), 0.2)
    flux = flux_on_curve(disc, 0.0, u0, CONST, P1)
    expect = P1.d * np.sum(u0.grad(disc.nodes, 0.0, P1) * disc.normals, axis=1)
    assert np.allclose(flux, expect, rtol=1e-13)
    assert np.allclose(flux_on_curve(disc, 0.0, GaussianMixture.empty(), CONST, P1), 0.0)


def test_flux_of_centered_bump_is_positive_outflow():
    disc = discretize(BoundaryCurve.circle(1.0), 32)
    flux = flux_on_curve(disc, 0.5, bump(1.0, (0.0, 0.0), 0.1), ZERO, P1)
    assert np.all(flux > 0.0)


def test_total_mass_books():
    u0 = bump(1.0)
    assert total_mass(3.0, u0, CONST) == pytest.approx(4.0, rel=1e-14)
    assert total_mass(4.0, GaussianMixture.empty(), HAT) == pytest.approx(2.0, rel=1e-14)


def test_model_field_satisfies_heat_equation():
    # residual of the diffusion equation under joint space/time refinement
    u0 = bump(1.0, (0.6, -0.3), 0.5)
    x = np.array([1.2, 0.4])
    t = 0.8

    def residual(delta):
        h = delta * delta
        dt_ = (eval_uhat(x, t + h, u0, CONST, P1, rtol=1e-12)
               - eval_uhat(x, t - h, u0, CONST, P1, rtol=1e-12)) / (2 * h)
        stencil = [eval_uhat(x + np.array(o), t, u0, CONST, P1, rtol=1e-12)
                   for o in ((delta, 0), (-delta, 0), (0, delta), (0, -delta), (0, 0))]
        lap = (sum(stencil[:4]) - 4 * stencil[4]) / (delta * delta)
        return abs(dt_ - P1.d * lap)

    r1 = residual(0.02)
    r2 = residual(0.01)
    assert r1 / r2 > 3.5


def test_grad_lp_norm_single_bump_closed_form():
    for p_exp, d, s, w in [(3.0, 1.0, 0.7, 2.0), (4.0, 0.5, 0.3, 1.0)]:
        pr = HeatKernelParams(d=d)
        u0 = bump(w, (0.0, 0.0), s)
        expect = w * (2 * np.pi * (8 * np.pi * d * d * s * s) ** -p_exp
                      * 0.5 * (4 * d * s / p_exp) ** ((p_exp + 2) / 2)
                      * gamma((p_exp + 2) / 2)) ** (1 / p_exp)
        assert grad_lp_norm_u0(u0, p_exp, pr) == pytest.approx(expect, rel=1e-6)


def test_grad_lp_norm_far_bumps_add_in_p_mean():
    p_exp = 3.0
    single = grad_lp_norm_u0(bump(1.0, (0.0, 0.0), 0.2), p_exp, P1)
    double = grad_lp_norm_u0(GaussianMixture.of(
        MixtureComponent(1.0, (-12.0, 0.0), 0.2),
        MixtureComponent(1.0, (12.0, 0.0), 0.2)), p_exp, P1)
    assert double == pytest.approx(2.0 ** (1 / p_exp) * single, rel=1e-5)


def test_grad_lp_norm_empty_mixture():
    assert grad_lp_norm_u0(GaussianMixture.empty(), 4.0, P1) == 0.0
