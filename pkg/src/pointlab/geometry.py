"""Smooth star-shaped boundary curves and arclength quadrature on them.

A curve is given in polar form x(theta) = rho(theta) (cos theta, sin theta)
with rho smooth and strictly positive, so every supported shape is
star-shaped about the origin.  Discretizations carry nodes, unit normals
pointing INTO the enclosed object, and periodic-trapezoid arclength
weights, which converge spectrally for these analytic boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

_VALIDATION_GRID = 4096


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed star-shaped curve r = rho(theta) about the origin.

    Supported kinds: "circle" (radius a), "ellipse" (semi-axes a, b) and
    "star" (truncated Fourier radius rho = base + sum_m A_m cos(m theta)
    + B_m sin(m theta), coefficient index m starting at 1).
    """

    kind: str
    a: float = 1.0
    b: float = 1.0
    base: float = 1.0
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("circle", "ellipse", "star"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if self.kind == "circle" and self.a <= 0.0:
            raise ValueError("circle radius must be positive")
        if self.kind == "ellipse" and (self.a <= 0.0 or self.b <= 0.0):
            raise ValueError("ellipse semi-axes must be positive")
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        if self.kind == "star":
            th = np.linspace(0.0, 2.0 * np.pi, _VALIDATION_GRID, endpoint=False)
            if np.min(self.rho(th)) <= 0.0:
                raise ValueError("star radius function must stay strictly positive")

    @classmethod
    def circle(cls, radius):
        return cls(kind="circle", a=float(radius))

    @classmethod
    def ellipse(cls, a, b):
        return cls(kind="ellipse", a=float(a), b=float(b))

    @classmethod
    def star(cls, base, cos_coeffs=(), sin_coeffs=()):
        return cls(kind="star", base=float(base),
                   cos_coeffs=tuple(cos_coeffs), sin_coeffs=tuple(sin_coeffs))

    # -- radius function and derivatives ------------------------------------

    def rho(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "circle":
            return np.full_like(theta, self.a)
        if self.kind == "ellipse":
            h = (self.b * np.cos(theta)) ** 2 + (self.a * np.sin(theta)) ** 2
            return self.a * self.b / np.sqrt(h)
        out = np.full_like(theta, self.base)
        for m, c in enumerate(self.cos_coeffs, start=1):
            out += c * np.cos(m * theta)
        for m, c in enumerate(self.sin_coeffs, start=1):
            out += c * np.sin(m * theta)
        return out

    def drho(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "circle":
            return np.zeros_like(theta)
        if self.kind == "ellipse":
            a, b = self.a, self.b
            h = (b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2
            dh = (a * a - b * b) * np.sin(2.0 * theta)
            return -0.5 * a * b * dh * h ** -1.5
        out = np.zeros_like(theta)
        for m, c in enumerate(self.cos_coeffs, start=1):
            out += -c * m * np.sin(m * theta)
        for m, c in enumerate(self.sin_coeffs, start=1):
            out += c * m * np.cos(m * theta)
        return out

    def d2rho(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "circle":
            return np.zeros_like(theta)
        if self.kind == "ellipse":
            a, b = self.a, self.b
            h = (b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2
            dh = (a * a - b * b) * np.sin(2.0 * theta)
            d2h = 2.0 * (a * a - b * b) * np.cos(2.0 * theta)
            return a * b * (0.75 * dh * dh * h ** -2.5 - 0.5 * d2h * h ** -1.5)
        out = np.zeros_like(theta)
        for m, c in enumerate(self.cos_coeffs, start=1):
            out += -c * m * m * np.cos(m * theta)
        for m, c in enumerate(self.sin_coeffs, start=1):
            out += -c * m * m * np.sin(m * theta)
        return out

    # -- derived geometry ----------------------------------------------------

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = self.rho(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def speed(self, theta):
        """|dx/dtheta| = sqrt(rho'^2 + rho^2)."""
        return np.hypot(self.drho(theta), self.rho(theta))

    def normal_into_object(self, theta):
        """Unit normal pointing from the curve toward the enclosed object."""
        theta = np.asarray(theta, dtype=float)
        r = self.rho(theta)
        dr = self.drho(theta)
        ct, st = np.cos(theta), np.sin(theta)
        er = np.stack([ct, st], axis=-1)
        et = np.stack([-st, ct], axis=-1)
        ratio = dr / r
        n = -(er - ratio[..., None] * et)
        return n / np.sqrt(1.0 + ratio * ratio)[..., None]

    def max_radius(self):
        th = np.linspace(0.0, 2.0 * np.pi, _VALIDATION_GRID, endpoint=False)
        return float(np.max(self.rho(th)))

    def diameter(self, n=512):
        pts = self.point(np.linspace(0.0, 2.0 * np.pi, n, endpoint=False))
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))


@dataclass(frozen=True)
class CurveDiscretization:
    """Nodes, into-object unit normals and arclength weights on a curve."""

    curve: BoundaryCurve
    thetas: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def n_nodes(self):
        return self.thetas.size

    @property
    def length(self):
        return float(np.sum(self.weights))

    def radii(self):
        return np.sqrt(np.sum(self.nodes * self.nodes, axis=-1))


def discretize(curve: BoundaryCurve, n_nodes: int) -> CurveDiscretization:
    """Equispaced-in-parameter discretization with trapezoid arclength weights."""
    n_nodes = int(n_nodes)
    if n_nodes < 8:
        raise ValueError(f"need at least 8 nodes, got {n_nodes}")
    thetas = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    weights = curve.speed(thetas) * (2.0 * np.pi / n_nodes)
    return CurveDiscretization(curve=curve, thetas=thetas,
                               nodes=curve.point(thetas),
                               normals=curve.normal_into_object(thetas),
                               weights=weights)


def curve_length(curve: BoundaryCurve, rtol: float = 1e-10) -> float:
    """Perimeter by periodic trapezoid quadrature, node-doubled to `rtol`."""
    n = 64
    prev = discretize(curve, n).length
    for _ in range(16):
        n *= 2
        cur = discretize(curve, n).length
        if abs(cur - prev) <= rtol * abs(cur):
            return cur
        prev = cur
    raise RuntimeError("perimeter quadrature failed to converge")


def min_radius(curve: BoundaryCurve) -> float:
    """Minimum distance from the origin to the curve.

    Coarse scan over a dense parameter grid followed by a local bounded
    minimization around the winning cell.
    """
    if curve.kind == "circle":
        return float(curve.a)
    n = 2048
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    r = curve.rho(th)
    k = int(np.argmin(r))
    h = 2.0 * np.pi / n
    res = minimize_scalar(lambda s: float(curve.rho(s)),
                          bounds=(th[k] - h, th[k] + h), method="bounded",
                          options={"xatol": 1e-13})
    return float(min(res.fun, r[k]))
