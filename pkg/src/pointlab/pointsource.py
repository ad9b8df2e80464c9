"""Point-source diffusion model: mixture initial data plus an emitting origin.

The model field is

    uhat(x, t) = sum_k w_k K_{s_k + t}(x - c_k)  +  int_0^t K_{t-s}(x) pb(s) ds,

a Gaussian mixture propagated in closed form through the semigroup shift
s_k -> s_k + t, plus the time convolution of the kernel against an emission
signal pb.  Signals are piecewise linear, so their running integrals, L^2
norms and iterated L^1 norms all have exact closed forms; the convolution
itself is evaluated by panel quadrature in the scaled variable
v = |x|^2 / (4 d (t - s)), which maps the kernel peak onto an O(1) region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import green
from .green import HeatKernelParams

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


# ---------------------------------------------------------------------------
# piecewise-linear time signals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeSignal:
    """Piecewise-linear signal on [0, T] given by strictly increasing knots."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.knots, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if k.ndim != 1 or v.shape != k.shape or k.size < 2:
            raise ValueError("need matching 1-d knot and value arrays with >= 2 entries")
        if k[0] != 0.0:
            raise ValueError("knots must start at 0")
        if not np.all(np.diff(k) > 0.0):
            raise ValueError("knots must be strictly increasing")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise ValueError("knots and values must be finite")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value, horizon):
        return cls(np.array([0.0, float(horizon)]),
                   np.array([float(value), float(value)]))

    @property
    def end(self):
        return float(self.knots[-1])

    @property
    def is_zero(self):
        return bool(np.all(self.values == 0.0))

    def eval(self, t):
        return np.interp(t, self.knots, self.values)

    __call__ = eval

    def _clip_upper(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.end * (1.0 + 1e-12) + 1e-300):
            raise ValueError("integration limit outside the signal support")
        return np.clip(t, 0.0, self.end)

    def _segment_of(self, t):
        j = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(j, 0, self.knots.size - 2)

    def integral(self, t):
        """Exact int_0^t of the signal."""
        t = self._clip_upper(t)
        k, v = self.knots, self.values
        seg = np.diff(k)
        slope = (v[1:] - v[:-1]) / seg
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * seg)])
        j = self._segment_of(t)
        h = t - k[j]
        out = cum[j] + v[j] * h + 0.5 * slope[j] * h * h
        return out if out.ndim else float(out)

    def l2_norm_sq(self, t):
        """Exact int_0^t of the squared signal."""
        t = self._clip_upper(t)
        k, v = self.knots, self.values
        seg = np.diff(k)
        slope = (v[1:] - v[:-1]) / seg
        full = v[:-1] ** 2 * seg + v[:-1] * slope * seg ** 2 + slope ** 2 * seg ** 3 / 3.0
        cum = np.concatenate([[0.0], np.cumsum(full)])
        j = self._segment_of(t)
        h = t - k[j]
        out = cum[j] + v[j] ** 2 * h + v[j] * slope[j] * h * h + slope[j] ** 2 * h ** 3 / 3.0
        return out if out.ndim else float(out)

    def _abs_refined(self):
        """|signal| as a signal, with knots inserted at sign changes."""
        k, v = self.knots, self.values
        nk, nv = [k[0]], [abs(v[0])]
        for j in range(k.size - 1):
            if v[j] * v[j + 1] < 0.0:
                tz = k[j] + (k[j + 1] - k[j]) * v[j] / (v[j] - v[j + 1])
                if k[j] < tz < k[j + 1]:
                    nk.append(tz)
                    nv.append(0.0)
            nk.append(k[j + 1])
            nv.append(abs(v[j + 1]))
        return TimeSignal(np.array(nk), np.array(nv))

    def l1_norm(self, t):
        """Exact int_0^t |signal|."""
        return self._abs_refined().integral(t)

    def l1sq_time_integral(self, t):
        """Exact int_0^t ( int_0^tau |signal| )^2 dtau.

        The inner running integral is piecewise quadratic once sign-change
        knots are inserted, so each outer segment integrates a quartic
        polynomial exactly.
        """
        t = float(self._clip_upper(t))
        A = self._abs_refined()
        k, v = A.knots, A.values
        total = 0.0
        running = 0.0
        for j in range(k.size - 1):
            lo, hi = k[j], k[j + 1]
            if lo >= t:
                break
            alpha = v[j]
            beta = (v[j + 1] - v[j]) / (hi - lo)
            h = min(hi, t) - lo
            p = np.poly1d([0.5 * beta, alpha, running])
            total += float((p * p).integ()(h))
            running += alpha * h + 0.5 * beta * h * h
        return total


# ---------------------------------------------------------------------------
# Gaussian mixtures under the heat semigroup
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureComponent:
    """One bump weight * K_shape(x - center); `interior` marks adjustable mass."""

    weight: float
    center: tuple
    shape: float
    interior: bool = False

    def __post_init__(self):
        c = tuple(float(z) for z in self.center)
        if len(c) != 2:
            raise ValueError("component center must be a point in the plane")
        w, s = float(self.weight), float(self.shape)
        if not np.isfinite(w):
            raise ValueError("component weight must be finite")
        if not (np.isfinite(s) and s > 0.0):
            raise ValueError("component spread must be finite and positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "shape", s)


@dataclass(frozen=True)
class GaussianMixture:
    components: tuple = ()

    def __post_init__(self):
        comps = tuple(self.components)
        for c in comps:
            if not isinstance(c, MixtureComponent):
                raise TypeError("mixture entries must be MixtureComponent")
        object.__setattr__(self, "components", comps)

    @classmethod
    def empty(cls):
        return cls(())

    @classmethod
    def of(cls, *components):
        return cls(tuple(components))

    @property
    def is_empty(self):
        return len(self.components) == 0

    @property
    def total_weight(self):
        return float(sum(c.weight for c in self.components))

    def evolve(self, t):
        """Heat flow for time t >= 0: every spread shifts by t, weights fixed."""
        t = float(t)
        if t < 0.0:
            raise ValueError("evolution time must be nonnegative")
        return GaussianMixture(tuple(
            MixtureComponent(c.weight, c.center, c.shape + t, c.interior)
            for c in self.components))

    def eval(self, x, t, params: HeatKernelParams):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for c in self.components:
            out = out + c.weight * green.eval_kernel(
                x - np.asarray(c.center), c.shape + t, params)
        return out if out.ndim else float(out)

    def grad(self, x, t, params: HeatKernelParams):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for c in self.components:
            out = out + c.weight * green.grad_kernel(
                x - np.asarray(c.center), c.shape + t, params)
        return out


# ---------------------------------------------------------------------------
# time-convolution quadrature
# ---------------------------------------------------------------------------

def _source_integrals(radii, t, phibar, d, rtol):
    """Scaled-variable integrals of the emitting-origin convolution.

    For each radius r, with a = r^2/(4d) and v0 = a/t:

        val = int_{v0}^inf e^-v pb(t - a/v) / v dv        (field value part)
        grd = int_{v0}^inf e^-v pb(t - a/v)     dv        (field gradient part)

    so that the convolution equals val/(4 pi d) and its gradient equals
    -x * grd / (2 pi d r^2).  Panels are graded geometrically away from v0
    (resolving the 1/v factor), broken at the images of the signal knots
    (integrand kinks), and spaced linearly through the exponential tail;
    16-point Gauss-Legendre per panel, panel-doubled until both integrals
    settle to `rtol`.
    """
    radii = np.asarray(radii, dtype=float)
    uniq, inverse = np.unique(radii, return_inverse=True)
    vals = np.zeros(uniq.size)
    grds = np.zeros(uniq.size)
    kn = phibar.knots
    for i, r in enumerate(uniq):
        a = r * r / (4.0 * d)
        v0 = a / t
        if v0 > 700.0:
            continue
        vend = v0 + 60.0
        bnds = {v0, vend}
        g = v0
        while g < min(1.0, vend):
            g *= 2.0
            bnds.add(min(g, vend))
        lin = max(v0, 1.0)
        while lin < vend:
            lin = min(lin + 4.0, vend)
            bnds.add(lin)
        inner = kn[(kn > 0.0) & (kn < t)]
        for vk in a / (t - inner):
            if v0 < vk < vend:
                bnds.add(float(vk))
        base = np.array(sorted(bnds))
        widths = np.diff(base)
        val = grd = 0.0
        prev = None
        for nsub in (1, 2, 4, 8, 16):
            starts = (base[:-1, None]
                      + widths[:, None] * np.arange(nsub)[None, :] / nsub).ravel()
            half = np.repeat(widths / (2.0 * nsub), nsub)
            mid = starts + half
            vq = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
            wq = (half[:, None] * _GL_W[None, :]).ravel()
            fq = np.exp(-vq) * phibar.eval(t - a / vq)
            val = float(np.sum(wq * fq / vq))
            grd = float(np.sum(wq * fq))
            if prev is not None:
                ok_v = abs(val - prev[0]) <= rtol * abs(val) + 1e-300
                ok_g = abs(grd - prev[1]) <= rtol * abs(grd) + 1e-300
                if ok_v and ok_g:
                    break
            prev = (val, grd)
        vals[i] = val
        grds[i] = grd
    return vals[inverse], grds[inverse]


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def eval_uhat(x, t, u0: GaussianMixture, phibar: TimeSignal,
              params: HeatKernelParams, r_min: float = 1e-3, rtol: float = 1e-8):
    """Model field at points x (shape (2,) or (m, 2)) and time t >= 0."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    t = float(t)
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    out = np.zeros(pts.shape[0])
    if not u0.is_empty:
        out = out + u0.eval(pts, t, params)
    if t > 0.0 and not phibar.is_zero:
        r = np.sqrt(np.sum(pts * pts, axis=-1))
        if np.any(r < r_min):
            raise ValueError("evaluation point lies inside the source exclusion radius")
        val, _ = _source_integrals(r, t, phibar, params.d, rtol)
        out = out + val / (4.0 * np.pi * params.d)
    return float(out[0]) if single else out


def grad_uhat(x, t, u0: GaussianMixture, phibar: TimeSignal,
              params: HeatKernelParams, r_min: float = 1e-3, rtol: float = 1e-8):
    """Spatial gradient of the model field; requires t > 0."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    t = float(t)
    if t <= 0.0:
        raise ValueError("gradient evaluation needs t > 0")
    out = u0.grad(pts, t, params) if not u0.is_empty else np.zeros_like(pts)
    if not phibar.is_zero:
        r = np.sqrt(np.sum(pts * pts, axis=-1))
        if np.any(r < r_min):
            raise ValueError("evaluation point lies inside the source exclusion radius")
        _, grd = _source_integrals(r, t, phibar, params.d, rtol)
        out = out + pts * (-grd / (2.0 * np.pi * params.d * r * r))[:, None]
    return out[0] if single else out


def flux_on_curve(disc, t, u0: GaussianMixture, phibar: TimeSignal,
                  params: HeatKernelParams, rtol: float = 1e-8):
    """Model boundary flux d grad(uhat) . n at the discretization nodes.

    The normal points into the enclosed object, so a positive value means
    mass leaving the object's neighborhood for the exterior, the same sign
    convention as the prescribed influx of the full problem; t = 0 returns
    the mixture-only limit.
    """
    t = float(t)
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    g = np.zeros_like(disc.nodes)
    if not u0.is_empty:
        g = g + u0.grad(disc.nodes, t, params)
    if t > 0.0 and not phibar.is_zero:
        r = disc.radii()
        _, grd = _source_integrals(r, t, phibar, params.d, rtol)
        g = g + disc.nodes * (-grd / (2.0 * np.pi * params.d * r * r))[:, None]
    return params.d * np.sum(g * disc.normals, axis=1)


def total_mass(t, u0: GaussianMixture, phibar: TimeSignal):
    """Mass of the model at time t: initial weight plus emitted integral."""
    return u0.total_weight + float(phibar.integral(t))


def grad_lp_norm_u0(u0: GaussianMixture, p, params: HeatKernelParams,
                    rtol: float = 1e-6):
    """L^p(R^2) norm of grad(u0) by adaptive polar quadrature.

    A single polar grid centered at the component centroid, with panels no
    wider than half the narrowest bump and a Gaussian-tail cutoff; radial
    panels use 16-point Gauss-Legendre and the angle a periodic trapezoid
    rule, jointly refined until the integral settles to `rtol`.
    """
    p = float(p)
    if p < 1.0:
        raise ValueError(f"norm exponent must satisfy p >= 1, got {p}")
    if u0.is_empty:
        return 0.0
    d = params.d
    centers = np.array([c.center for c in u0.components])
    shapes = np.array([c.shape for c in u0.components])
    origin = centers.mean(axis=0)
    widths = np.sqrt(4.0 * d * shapes)
    offsets = np.sqrt(np.sum((centers - origin) ** 2, axis=1))
    r_far = float(np.max(offsets) + np.max(widths) * (3.0 + np.sqrt(60.0 / p)))
    n_pan = int(max(16, np.ceil(2.0 * r_far / np.min(widths))))
    if n_pan > 4096:
        raise ValueError("mixture too stiff for the gradient-norm quadrature")

    def level(npan, nth):
        edges = np.linspace(0.0, r_far, npan + 1)
        halfw = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        rq = (mid[:, None] + halfw[:, None] * _GL_X[None, :]).ravel()
        wq = (halfw[:, None] * _GL_W[None, :]).ravel()
        th = 2.0 * np.pi * np.arange(nth) / nth
        ring = np.stack([np.cos(th), np.sin(th)], axis=-1)
        pts = origin[None, None, :] + rq[:, None, None] * ring[None, :, :]
        gr = u0.grad(pts, 0.0, params)
        f = np.sum(np.sum(gr * gr, axis=-1) ** (0.5 * p), axis=1) * (2.0 * np.pi / nth)
        return float(np.sum(wq * rq * f))

    nth = 96
    prev = level(n_pan, nth)
    for _ in range(5):
        n_pan *= 2
        nth *= 2
        cur = level(n_pan, nth)
        if abs(cur - prev) <= rtol * abs(cur) + 1e-300:
            return cur ** (1.0 / p)
        prev = cur
    raise RuntimeError("gradient-norm quadrature failed to converge")
