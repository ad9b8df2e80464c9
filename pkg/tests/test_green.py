import numpy as np
import pytest

from pointlab.green import (HeatKernelParams, argmax_time, envelope_constants,
                            eval_kernel, grad_kernel, hessian_kernel, lp_norm,
                            sup_grad_norm)

P1 = HeatKernelParams(d=1.0)


def radial_quadrature(fn, r_max, n_panels=400):
    # 16-point Gauss-Legendre per panel of int_0^rmax fn(r) 2 pi r dr
    x, w = np.polynomial.legendre.leggauss(16)
    edges = np.linspace(0.0, r_max, n_panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    r = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wq = (half[:, None] * w[None, :]).ravel()
    return float(np.sum(wq * 2.0 * np.pi * r * fn(r)))


def test_kernel_point_values():
    assert eval_kernel(np.zeros(2), 1.0, P1) == pytest.approx(1.0 / (4 * np.pi), rel=1e-14)
    assert eval_kernel(np.array([2.0, 0.0]), 1.0, P1) == pytest.approx(
        np.exp(-1.0) / (4 * np.pi), rel=1e-14)


def test_kernel_normalizes_to_unit_mass():
    for d, t in [(1.0, 0.5), (2.0, 1.5), (0.3, 4.0)]:
        p = HeatKernelParams(d=d)
        r_max = 20.0 * np.sqrt(4 * d * t)
        mass = radial_quadrature(
            lambda r: eval_kernel(np.stack([r, np.zeros_like(r)], axis=-1), t, p), r_max)
        assert mass == pytest.approx(1.0, rel=1e-12)


def test_kernel_underflows_to_exact_zero():
    val = eval_kernel(np.array([4000.0, 0.0]), 1.0, P1)
    assert val == 0.0


def test_kernel_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        eval_kernel(np.zeros(2), 0.0, P1)
    with pytest.raises(ValueError):
        eval_kernel(np.zeros(2), -1.0, P1)


def test_params_reject_bad_diffusivity():
    with pytest.raises(ValueError):
        HeatKernelParams(d=0.0)
    with pytest.raises(ValueError):
        HeatKernelParams(d=-2.0)


def test_gradient_matches_finite_differences():
    p = HeatKernelParams(d=2.0)
    x = np.array([1.0, 0.5])
    t = 0.3
    h = 1e-6
    g = grad_kernel(x, t, p)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (eval_kernel(x + e, t, p) - eval_kernel(x - e, t, p)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-6)


def test_gradient_norm_closed_value():
    # |x| = 1, t = 1/8, d = 1 is the maximizing time: norm equals 8 e^-2 / pi
    g = grad_kernel(np.array([1.0, 0.0]), 0.125, P1)
    assert np.linalg.norm(g) == pytest.approx(8 * np.exp(-2.0) / np.pi, rel=1e-13)
    assert np.linalg.norm(g) == pytest.approx(0.3446285, rel=1e-6)


def test_gradient_points_toward_origin():
    g = grad_kernel(np.array([1.5, -0.7]), 0.4, P1)
    assert g @ np.array([1.5, -0.7]) < 0.0


def test_hessian_matches_finite_differences():
    p = HeatKernelParams(d=1.3)
    x = np.array([0.8, -0.4])
    t = 0.6
    h = 1e-5
    H = hessian_kernel(x, t, p)
    for i in range(2):
        for j in range(2):
            ei = np.zeros(2)
            ej = np.zeros(2)
            ei[i] = h
            ej[j] = h
            fd = (eval_kernel(x + ei + ej, t, p) - eval_kernel(x + ei - ej, t, p)
                  - eval_kernel(x - ei + ej, t, p) + eval_kernel(x - ei - ej, t, p)) / (4 * h * h)
            assert H[i, j] == pytest.approx(fd, rel=2e-5, abs=1e-10)


def test_hessian_trace_is_laplacian():
    # trace D2 K = Lap K = (1/d) dK/dt for the diffusion equation
    x = np.array([1.0, 0.0])
    t = 0.5
    h = 1e-6
    tr = np.trace(hessian_kernel(x, t, P1))
    dt = (eval_kernel(x, t + h, P1) - eval_kernel(x, t - h, P1)) / (2 * h)
    assert tr == pytest.approx(dt / P1.d, rel=1e-5)


def test_hessian_at_origin_is_negative_isotropic():
    H = hessian_kernel(np.zeros(2), 0.5, P1)
    expect = -1.0 / (8 * np.pi * 0.25) * np.eye(2)
    assert np.allclose(H, expect, rtol=1e-13)


def test_sup_grad_norm_closed_form_and_d_independence():
    for r in (0.5, 1.0, 2.0):
        x = np.array([r, 0.0])
        expect = (8 * np.exp(-2.0) / np.pi) * r ** -3
        vals = [sup_grad_norm(x, HeatKernelParams(d=d)) for d in (0.1, 1.0, 10.0)]
        assert vals[0] == vals[1] == vals[2]
        assert vals[0] == pytest.approx(expect, rel=1e-14)
    assert sup_grad_norm(np.array([2.0, 0.0])) == pytest.approx(0.0430786, rel=1e-5)


def test_sup_grad_norm_is_attained_at_argmax_time():
    for r, d in [(0.5, 1.0), (1.0, 2.0), (2.0, 0.5)]:
        p = HeatKernelParams(d=d)
        x = np.array([r * np.cos(0.3), r * np.sin(0.3)])
        ts = argmax_time(x, p)
        assert ts == pytest.approx(r * r / (8 * d), rel=1e-14)
        ref = np.linalg.norm(grad_kernel(x, ts, p))
        assert ref == pytest.approx(sup_grad_norm(x), rel=1e-13)
        # nearby times do strictly worse
        for fac in (0.9, 1.1):
            assert np.linalg.norm(grad_kernel(x, ts * fac, p)) < ref


def test_sup_grad_norm_rejects_origin():
    with pytest.raises(ValueError):
        sup_grad_norm(np.zeros(2))
    with pytest.raises(ValueError):
        argmax_time(np.zeros(2), P1)


def test_lp_norm_closed_values():
    assert lp_norm(0.7, 1.0, P1) == pytest.approx(1.0, rel=1e-14)
    assert lp_norm(1.0, 2.0, P1) == pytest.approx(1.0 / np.sqrt(8 * np.pi), rel=1e-14)
    assert lp_norm(2.0, np.inf, P1) == pytest.approx(1.0 / (8 * np.pi), rel=1e-14)


def test_lp_norm_matches_quadrature():
    for p_exp in (2.0, 3.0):
        for d, t in [(1.0, 1.0), (0.5, 2.5)]:
            pr = HeatKernelParams(d=d)
            r_max = 20.0 * np.sqrt(4 * d * t / p_exp) + 5.0
            val = radial_quadrature(
                lambda r: eval_kernel(np.stack([r, np.zeros_like(r)], axis=-1), t, pr) ** p_exp,
                r_max) ** (1.0 / p_exp)
            assert val == pytest.approx(lp_norm(t, p_exp, pr), rel=1e-12)


def test_lp_norm_time_scaling_exponent():
    ts = np.logspace(-1, 1, 9)
    for p_exp in (2.0, 3.0):
        vals = np.array([lp_norm(t, p_exp, P1) for t in ts])
        slope = np.polyfit(np.log(ts), np.log(vals), 1)[0]
        assert slope == pytest.approx(1.0 / p_exp - 1.0, abs=1e-12)


def test_lp_norm_rejects_bad_exponent():
    with pytest.raises(ValueError):
        lp_norm(1.0, 0.5, P1)


def test_envelope_kappa1_closed_form():
    env = envelope_constants()
    assert env.kappa1 == pytest.approx(64 * np.exp(-4.0) / np.pi ** 2, rel=1e-14)
    assert env.kappa1 == pytest.approx(0.1187688, rel=1e-6)


def test_envelope_kappa2_against_stationarity_oracle():
    # the maximizer solves u^3 - 8 u^2 + 12 u - 8 = 0; evaluate there directly
    roots = np.roots([1.0, -8.0, 12.0, -8.0])
    u = float(np.real(roots[np.isreal(roots)][0]))
    oracle = (u ** 4 / (4 * np.pi ** 2)) * np.exp(-u) * (2 - 2 * u + u * u)
    env = envelope_constants()
    assert env.kappa2 == pytest.approx(oracle, rel=1e-12)


def test_envelope_bounds_hold_on_random_draws():
    rng = np.random.default_rng(42)
    env = envelope_constants()
    for _ in range(1000):
        r = rng.uniform(0.05, 5.0)
        ang = rng.uniform(0.0, 2 * np.pi)
        t = rng.uniform(0.01, 20.0)
        d = rng.uniform(0.1, 10.0)
        x = np.array([r * np.cos(ang), r * np.sin(ang)])
        p = HeatKernelParams(d=d)
        g2 = float(np.sum(grad_kernel(x, t, p) ** 2))
        h2 = float(np.sum(hessian_kernel(x, t, p) ** 2))
        assert g2 <= env.kappa1 / r ** 6 * (1 + 1e-12)
        assert h2 <= env.kappa2 / r ** 8 * (1 + 1e-12)
