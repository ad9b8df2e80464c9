import numpy as np
import pytest
from scipy.special import ellipe

from pointlab.geometry import (BoundaryCurve, curve_length, discretize,
                               min_radius)


def test_circle_discretization_is_exact():
    disc = discretize(BoundaryCurve.circle(2.0), 64)
    assert disc.length == pytest.approx(4 * np.pi, rel=1e-14)
    assert np.allclose(disc.weights, 2.0 * 2 * np.pi / 64, rtol=1e-14)
    radii = disc.radii()
    assert np.allclose(radii, 2.0, rtol=1e-14)
    # into-object normal on a circle is -x/|x|
    assert np.allclose(disc.normals, -disc.nodes / radii[:, None], atol=1e-14)


def test_ellipse_perimeter_matches_elliptic_integral():
    a, b = 2.0, 1.0
    exact = 4 * a * ellipe(1.0 - (b / a) ** 2)
    assert curve_length(BoundaryCurve.ellipse(a, b)) == pytest.approx(exact, rel=1e-12)
    assert exact == pytest.approx(9.688448, rel=1e-6)


def test_ellipse_extreme_radii():
    c = BoundaryCurve.ellipse(2.0, 1.0)
    assert min_radius(c) == pytest.approx(1.0, rel=1e-12)
    assert c.max_radius() == pytest.approx(2.0, rel=1e-10)


def test_star_min_radius():
    c = BoundaryCurve.star(1.0, cos_coeffs=(0.0, 0.0, 0.2))
    assert min_radius(c) == pytest.approx(0.8, rel=1e-12)


def test_star_length_converges_under_node_doubling():
    c = BoundaryCurve.star(1.0, cos_coeffs=(0.0, 0.0, 0.2), sin_coeffs=(0.1,))
    ref = curve_length(c)
    assert discretize(c, 512).length == pytest.approx(ref, rel=1e-12)


def test_weight_sum_matches_length():
    for c in (BoundaryCurve.circle(1.5),
              BoundaryCurve.ellipse(2.0, 1.0),
              BoundaryCurve.star(1.0, cos_coeffs=(0.0, 0.0, 0.2))):
        disc = discretize(c, 256)
        assert disc.length == pytest.approx(curve_length(c), rel=1e-10)


def test_radius_derivatives_match_finite_differences():
    h = 1e-6
    th = np.linspace(0.1, 2 * np.pi, 7)
    for c in (BoundaryCurve.ellipse(2.0, 1.0),
              BoundaryCurve.star(1.2, cos_coeffs=(0.1, 0.0, 0.2), sin_coeffs=(0.0, 0.05))):
        fd1 = (c.rho(th + h) - c.rho(th - h)) / (2 * h)
        fd2 = (c.rho(th + h) - 2 * c.rho(th) + c.rho(th - h)) / (h * h)
        assert np.allclose(c.drho(th), fd1, rtol=1e-7, atol=1e-8)
        assert np.allclose(c.d2rho(th), fd2, rtol=1e-3, atol=1e-3)


def test_normals_are_unit_inward_and_orthogonal_to_tangent():
    c = BoundaryCurve.star(1.0, cos_coeffs=(0.0, 0.0, 0.2), sin_coeffs=(0.1,))
    disc = discretize(c, 128)
    norms = np.linalg.norm(disc.normals, axis=1)
    assert np.allclose(norms, 1.0, rtol=1e-13)
    # points toward the origin side
    assert np.all(np.sum(disc.normals * disc.nodes, axis=1) < 0.0)
    # orthogonal to the curve tangent
    h = 1e-7
    tang = (c.point(disc.thetas + h) - c.point(disc.thetas - h)) / (2 * h)
    tang /= np.linalg.norm(tang, axis=1)[:, None]
    assert np.max(np.abs(np.sum(disc.normals * tang, axis=1))) < 1e-6


def test_diameters():
    assert BoundaryCurve.circle(1.5).diameter() == pytest.approx(3.0, rel=1e-4)
    assert BoundaryCurve.ellipse(2.0, 1.0).diameter() == pytest.approx(4.0, rel=1e-4)


def test_invalid_curves_rejected():
    with pytest.raises(ValueError):
        BoundaryCurve.circle(0.0)
    with pytest.raises(ValueError):
        BoundaryCurve.ellipse(1.0, -1.0)
    with pytest.raises(ValueError):
        BoundaryCurve.star(1.0, cos_coeffs=(1.5,))  # radius dips below zero
    with pytest.raises(ValueError):
        BoundaryCurve(kind="square")


def test_too_few_nodes_rejected():
    with pytest.raises(ValueError):
        discretize(BoundaryCurve.circle(1.0), 4)
