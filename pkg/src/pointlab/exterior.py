"""Finite-difference solver for diffusion outside a star-shaped object.

The domain is the annular region between the object boundary and a large
truncation circle of radius ``r_inf``.  A boundary-fitted map

    (s, theta) -> f(s, theta) * (cos theta, sin theta),
    f(s, theta) = rho(theta) * (1 - s) + r_inf * s,      s in [0, 1],

turns it into a logically rectangular grid, periodic in theta.  The
Laplacian transforms to

    Lu = A_ss u_ss + A_tt u_tt + A_st u_st + A_s u_s

with metric coefficients cached on the grid.  The inner boundary carries a
prescribed normal flux (ghost-node elimination, second order); the outer
circle is held at zero.  Time stepping is Crank-Nicolson with a single
sparse factorization reused across steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import BoundaryCurve, CurveDiscretization, discretize
from .green import HeatKernelParams
from .pointsource import GaussianMixture, TimeSignal


class NumericalFailure(RuntimeError):
    """The linear algebra or time stepping produced unusable numbers."""


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExteriorGrid:
    """Boundary-fitted tensor grid on the truncated exterior domain.

    n_r is the number of radial cells: nodes sit at s_j = j / n_r for
    j = 0..n_r, so arrays over the full grid have shape (n_r + 1, n_theta).
    Row 0 lies on the object boundary, row n_r on the truncation circle.
    """

    curve: BoundaryCurve
    r_inf: float
    n_r: int
    n_theta: int
    s: np.ndarray          # (n_r+1,)
    thetas: np.ndarray     # (n_theta,)
    rho: np.ndarray        # (n_theta,)
    drho: np.ndarray
    d2rho: np.ndarray
    f: np.ndarray          # (n_r+1, n_theta) physical radius of each node
    f_s: np.ndarray        # (n_theta,) radial stretch, constant in s
    g: np.ndarray          # (n_r+1, n_theta) angular shear drho*(1-s)/f_s
    jacobian: np.ndarray   # (n_r+1, n_theta) f * f_s > 0
    nodes: np.ndarray      # (n_r+1, n_theta, 2) physical coordinates
    weights: np.ndarray    # (n_r+1, n_theta) quadrature weights over the domain

    @classmethod
    def build(cls, curve: BoundaryCurve, n_r: int, n_theta: int,
              r_inf: float | None = None) -> "ExteriorGrid":
        n_r = int(n_r)
        n_theta = int(n_theta)
        if n_r < 4:
            raise ValueError("need at least 4 radial cells")
        if n_theta < 8:
            raise ValueError("need at least 8 angular nodes")
        rmax = curve.max_radius()
        if r_inf is None:
            r_inf = 12.0 * rmax
        r_inf = float(r_inf)
        # truncation circle must sit well away from the object
        if r_inf < 4.0 * rmax:
            raise ValueError("outer radius must be at least 4x the object radius")
        s = np.linspace(0.0, 1.0, n_r + 1)
        thetas = np.arange(n_theta) * (2.0 * np.pi / n_theta)
        rho = curve.rho(thetas)
        drho = curve.drho(thetas)
        d2rho = curve.d2rho(thetas)
        f_s = r_inf - rho
        f = rho[None, :] * (1.0 - s)[:, None] + r_inf * s[:, None]
        jac = f * f_s[None, :]
        if not np.all(jac > 0.0):
            raise ValueError("grid map is not orientation preserving")
        g = drho[None, :] * (1.0 - s)[:, None] / f_s[None, :]
        nodes = np.stack([f * np.cos(thetas)[None, :],
                          f * np.sin(thetas)[None, :]], axis=-1)
        ds = 1.0 / n_r
        dtheta = 2.0 * np.pi / n_theta
        w = jac * (ds * dtheta)
        weights = w.copy()
        weights[0, :] *= 0.5
        weights[-1, :] *= 0.5
        return cls(curve, r_inf, n_r, n_theta, s, thetas, rho, drho, d2rho,
                   f, f_s, g, jac, nodes, weights)

    @property
    def ds(self):
        return 1.0 / self.n_r

    @property
    def dtheta(self):
        return 2.0 * np.pi / self.n_theta

    def boundary_discretization(self) -> CurveDiscretization:
        """Curve nodes aligned with the grid's angular nodes."""
        return discretize(self.curve, self.n_theta)


# ---------------------------------------------------------------------------
# boundary flux
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryFlux:
    """Separable prescribed flux profile(theta) * signal(t) on the boundary.

    profile is either the string "constant" (all ones) or an array of
    per-node values matching the angular grid.  The sign convention ties to
    the into-object normal: positive flux pushes mass into the exterior
    domain, matching the point-source model's emission sign.
    """

    profile: object
    signal: TimeSignal

    def __post_init__(self):
        if isinstance(self.profile, str):
            if self.profile != "constant":
                raise ValueError("profile must be 'constant' or an array")
        else:
            arr = np.asarray(self.profile, dtype=float)
            if arr.ndim != 1 or arr.size < 8 or not np.all(np.isfinite(arr)):
                raise ValueError("profile array must be 1-d, finite, length >= 8")
            object.__setattr__(self, "profile", arr)
        if not isinstance(self.signal, TimeSignal):
            raise TypeError("signal must be a TimeSignal")

    @classmethod
    def zero(cls, horizon: float) -> "BoundaryFlux":
        return cls("constant", TimeSignal.constant(0.0, horizon))

    def node_values(self, n_theta: int) -> np.ndarray:
        if isinstance(self.profile, str):
            return np.ones(n_theta)
        if self.profile.size != n_theta:
            raise ValueError("profile length does not match the angular grid")
        return self.profile

    def is_zero(self) -> bool:
        if self.signal.is_zero:
            return True
        return not isinstance(self.profile, str) and not np.any(self.profile)


# ---------------------------------------------------------------------------
# trajectory containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldTrajectory:
    """Field snapshots of an exterior solve plus per-stamp diagnostics."""

    grid: ExteriorGrid
    d: float
    times: np.ndarray      # (k,) strictly increasing, starts at 0
    fields: np.ndarray     # (k, n_r+1, n_theta)
    l2: np.ndarray         # (k,) L2 norms
    h1: np.ndarray         # (k,) full H1 norms (include the L2 part)
    mass: np.ndarray       # (k,) domain integrals of the field

    def __post_init__(self):
        t = self.times
        if t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
            raise ValueError("stamp times must start at 0 and increase")
        if np.any(self.l2 < 0.0) or np.any(self.h1 < 0.0):
            raise ValueError("norms must be nonnegative")
        if np.any(self.h1 < self.l2 * (1.0 - 1e-12)):
            raise ValueError("H1 norm cannot fall below the L2 norm")
        if not np.all(np.isfinite(self.mass)):
            raise ValueError("mass must be finite")

    @property
    def n_stamps(self):
        return len(self.times)

    @property
    def gamma_trace(self) -> np.ndarray:
        """Field values on the object boundary, one row per stamp."""
        return self.fields[:, 0, :]


@dataclass(frozen=True)
class RadialTrajectory:
    """1D radially symmetric reference solve on [r_inner, r_inf]."""

    r: np.ndarray          # (n_r+1,) radial nodes
    times: np.ndarray      # (k,)
    profiles: np.ndarray   # (k, n_r+1)
    d: float

    def value_at_radii(self, stamp: int, radii) -> np.ndarray:
        return np.interp(np.asarray(radii, dtype=float),
                         self.r, self.profiles[stamp])

    @property
    def mass(self) -> np.ndarray:
        # integral of 2 pi r u dr per stamp, trapezoid
        return np.trapezoid(2.0 * np.pi * self.r[None, :] * self.profiles,
                            self.r, axis=1)


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

def _metric_coefficients(grid: ExteriorGrid):
    """A_ss, A_tt, A_st, A_s on the unknown rows j = 0..n_r-1."""
    nr = grid.n_r
    f = grid.f[:nr, :]
    f_s = grid.f_s[None, :]
    g = grid.g[:nr, :]
    one_m_s = (1.0 - grid.s[:nr])[:, None]
    a_ss = 1.0 / f_s ** 2 + g ** 2 / f ** 2
    a_tt = 1.0 / f ** 2
    a_st = -2.0 * g / f ** 2
    a_s = 1.0 / (f * f_s) - one_m_s * (
        grid.d2rho[None, :] * f_s + 2.0 * grid.drho[None, :] ** 2) / (f_s ** 2 * f ** 2)
    return a_ss, a_tt, a_st, a_s


def _assemble(grid: ExteriorGrid, d: float):
    """Sparse Laplacian on the unknowns plus the flux forcing matrix.

    Returns (L, B) with L of shape (N, N), N = n_r * n_theta (outer
    Dirichlet row eliminated), and B of shape (n_theta, n_theta) such that
    the forcing vector at time t is b = B @ profile * signal(t) placed in
    the s = 0 rows.  Lu + b approximates the Laplacian under the flux
    boundary condition.
    """
    nr, nt = grid.n_r, grid.n_theta
    ds, dt = grid.ds, grid.dtheta
    a_ss, a_tt, a_st, a_s = _metric_coefficients(grid)

    c_ip = a_ss / ds ** 2 + a_s / (2.0 * ds)
    c_im = a_ss / ds ** 2 - a_s / (2.0 * ds)
    c_0 = -2.0 * a_ss / ds ** 2 - 2.0 * a_tt / dt ** 2
    c_th = a_tt / dt ** 2
    c_x = a_st / (4.0 * ds * dt)

    jj, mm = np.meshgrid(np.arange(nr), np.arange(nt), indexing="ij")
    jj = jj.ravel()
    mm = mm.ravel()

    def node(j, m):
        return j * nt + (m % nt)

    rows, cols, vals = [], [], []

    def put(j_to, m_to, coeff, mask=None):
        r = node(jj, mm)
        c = node(j_to, m_to)
        v = coeff.ravel()
        if mask is not None:
            keep = mask.ravel()
            r, c, v = r[keep], c[keep], v[keep]
        rows.append(r)
        cols.append(c)
        vals.append(v)

    put(jj, mm, c_0)
    put(jj, mm + 1, c_th)
    put(jj, mm - 1, c_th)
    put(jj + 1, mm, c_ip, mask=(jj + 1 < nr))     # row nr is Dirichlet zero
    put(jj - 1, mm, c_im, mask=(jj >= 1))
    put(jj + 1, mm + 1, c_x, mask=(jj + 1 < nr))
    put(jj + 1, mm - 1, -c_x, mask=(jj + 1 < nr))
    put(jj - 1, mm + 1, -c_x, mask=(jj >= 1))
    put(jj - 1, mm - 1, c_x, mask=(jj >= 1))

    # ghost elimination on the boundary row j = 0.  With the into-object
    # normal, the flux condition reads
    #   u_s = beta * u_theta - gamma * phi(theta, t)
    # so the ghost value is
    #   u[-1,m] = u[1,m] - eta_m (u[0,m+1] - u[0,m-1]) + 2 ds gamma_m phi_m.
    rho, drho = grid.rho, grid.drho
    f_s = grid.f_s
    cap_d = 1.0 + (drho / rho) ** 2
    beta = f_s * drho / (rho ** 2 * cap_d)
    gamma = f_s / (d * np.sqrt(cap_d))
    eta = ds * beta / dt

    m0 = np.arange(nt)
    b_small = np.zeros((nt, nt))

    def put0(cols_idx, v):
        rows.append(m0)
        cols.append(cols_idx)
        vals.append(v)

    ci = c_im[0, :]
    put0(node(1, m0), ci)
    put0(node(0, m0 + 1), -ci * eta)
    put0(node(0, m0 - 1), ci * eta)
    b_small[m0, m0] += ci * 2.0 * ds * gamma

    cx0 = c_x[0, :]
    mp, mm1 = (m0 + 1) % nt, (m0 - 1) % nt
    # corner ghost u[-1, m+1], stencil coefficient -c_x
    put0(node(1, m0 + 1), -cx0)
    put0(node(0, m0 + 2), cx0 * eta[mp])
    put0(node(0, m0), -cx0 * eta[mp])
    b_small[m0, mp] += -cx0 * 2.0 * ds * gamma[mp]
    # corner ghost u[-1, m-1], stencil coefficient +c_x
    put0(node(1, m0 - 1), cx0)
    put0(node(0, m0), -cx0 * eta[mm1])
    put0(node(0, m0 - 2), cx0 * eta[mm1])
    b_small[m0, mm1] += cx0 * 2.0 * ds * gamma[mm1]

    n = nr * nt
    lap = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    return lap, b_small


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _stamp_steps(n_steps: int, dt: float, stamp_every: float | None):
    if stamp_every is None:
        return np.arange(n_steps + 1)
    stride = max(1, int(round(stamp_every / dt)))
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return np.asarray(steps)


def solve_full(grid: ExteriorGrid, u0: GaussianMixture, flux: BoundaryFlux,
               T: float, n_steps: int, params: HeatKernelParams, *,
               stamp_every: float | None = None) -> FieldTrajectory:
    """Crank-Nicolson solve of u_t = d Lu with prescribed boundary flux.

    The initial field is the restriction of the mixture u0 to the grid.
    Snapshot stamps subsample the uniform steps (stamp_every is snapped to
    a whole number of steps; the final time is always stamped).
    """
    T = float(T)
    n_steps = int(n_steps)
    if T <= 0.0 or n_steps < 1:
        raise ValueError("need a positive horizon and at least one step")
    d = params.d
    dt = T / n_steps
    # accuracy guard: step must resolve the object's transition timescale
    dt_cap = 0.1 * grid.curve.diameter() ** 2 / d
    if dt > dt_cap * (1.0 + 1e-12):
        raise ValueError(
            "time step %.3g exceeds the accuracy cap %.3g" % (dt, dt_cap))
    if flux.signal.end < T * (1.0 - 1e-12):
        raise ValueError("flux signal ends before the solve horizon")

    nr, nt = grid.n_r, grid.n_theta
    lap, b_small = _assemble(grid, d)
    profile = flux.node_values(nt)
    bvec = b_small @ profile
    lam = 0.5 * d * dt
    eye = sp.identity(nr * nt, format="csr")
    lhs = (eye - lam * lap).tocsc()
    rhs_op = (eye + lam * lap).tocsr()
    try:
        lu = splu(lhs)
    except RuntimeError as exc:  # singular factorization
        raise NumericalFailure("sparse factorization failed: %s" % exc)

    u = u0.eval(grid.nodes[:nr, :, :], 0.0, params).ravel()
    outer0 = u0.eval(grid.nodes[nr, :, :], 0.0, params)

    stamps = _stamp_steps(n_steps, dt, stamp_every)
    stamp_set = set(int(k) for k in stamps)
    fields = np.zeros((len(stamps), nr + 1, nt))
    fields[0, :nr, :] = u.reshape(nr, nt)
    fields[0, nr, :] = outer0     # true initial restriction, not yet clamped
    k_out = 1

    sig = flux.signal
    for n in range(1, n_steps + 1):
        t0, t1 = (n - 1) * dt, n * dt
        rhs = rhs_op @ u
        rhs[:nt] += lam * bvec * (sig.eval(t0) + sig.eval(t1))
        u = lu.solve(rhs)
        if n in stamp_set:
            if not np.all(np.isfinite(u)):
                raise NumericalFailure(
                    "non-finite field after step %d of %d" % (n, n_steps))
            fields[k_out, :nr, :] = u.reshape(nr, nt)
            k_out += 1

    times = stamps * dt
    l2 = np.zeros(len(stamps))
    h1 = np.zeros(len(stamps))
    mass = np.zeros(len(stamps))
    for k in range(len(stamps)):
        l2[k], h1[k] = field_h1_l2_norms(fields[k], grid)
        mass[k] = np.sum(grid.weights * fields[k])
    return FieldTrajectory(grid, d, times, fields, l2, h1, mass)


# ---------------------------------------------------------------------------
# norms, mass balance
# ---------------------------------------------------------------------------

def _s_derivative(field: np.ndarray, ds: float) -> np.ndarray:
    """Second-order d/ds on the full node set, one-sided at both edges."""
    out = np.empty_like(field)
    out[1:-1] = (field[2:] - field[:-2]) / (2.0 * ds)
    out[0] = (-3.0 * field[0] + 4.0 * field[1] - field[2]) / (2.0 * ds)
    out[-1] = (3.0 * field[-1] - 4.0 * field[-2] + field[-3]) / (2.0 * ds)
    return out


def _grad_sq(field: np.ndarray, grid: ExteriorGrid) -> np.ndarray:
    us = _s_derivative(field, grid.ds)
    ut = (np.roll(field, -1, axis=1) - np.roll(field, 1, axis=1)) / (2.0 * grid.dtheta)
    u_r = us / grid.f_s[None, :]
    u_t = (ut - grid.g * us) / grid.f
    return u_r ** 2 + u_t ** 2


def field_h1_l2_norms(field: np.ndarray, grid: ExteriorGrid):
    """(L2 norm, H1 norm) of one snapshot; H1 includes the L2 part."""
    field = np.asarray(field, dtype=float)
    if field.shape != (grid.n_r + 1, grid.n_theta):
        raise ValueError("field shape does not match the grid")
    l2_sq = float(np.sum(grid.weights * field ** 2))
    grad_sq = float(np.sum(grid.weights * _grad_sq(field, grid)))
    return np.sqrt(l2_sq), np.sqrt(l2_sq + grad_sq)


def mass_balance_residual(traj: FieldTrajectory, flux: BoundaryFlux,
                          grid: ExteriorGrid) -> np.ndarray:
    """|d(mass)/dt - boundary influx + outer-circle outflow| per stamp.

    The rate terms are differenced with one operator: d/dt is applied to
    mass minus the exact cumulative influx, so signal kinks between stamps
    do not masquerade as balance defects.
    """
    disc = grid.boundary_discretization()
    profile = flux.node_values(grid.n_theta)
    influx_rate = float(np.sum(profile * disc.weights))
    influx_cum = influx_rate * np.asarray(
        [flux.signal.integral(t) for t in traj.times])

    # outflow through the truncation circle: -d * integral of du/dr
    u_r_outer = np.array([
        _s_derivative(traj.fields[k], grid.ds)[-1] / grid.f_s
        for k in range(traj.n_stamps)])
    outflow = -traj.d * np.sum(u_r_outer, axis=1) * grid.r_inf * grid.dtheta

    edge = 2 if traj.n_stamps >= 3 else 1
    drift = np.gradient(traj.mass - influx_cum, traj.times, edge_order=edge)
    return np.abs(drift + outflow)


# ---------------------------------------------------------------------------
# radially symmetric reference solver
# ---------------------------------------------------------------------------

def solve_radial_oracle(R: float, r_inf: float, u0_radial,
                        flux_amplitude: TimeSignal, T: float, n_r: int,
                        n_steps: int, params: HeatKernelParams, *,
                        stamp_stride: int | None = None) -> RadialTrajectory:
    """1D Crank-Nicolson for u_t = d (u_rr + u_r / r) on [R, r_inf].

    Inner boundary: du/dr = -phi(t)/d with phi = flux_amplitude (the flux
    density along the into-object normal, matching the 2D solver).  Outer
    boundary: zero.  u0_radial is a callable of r (or None for zero data).
    """
    R, r_inf, T = float(R), float(r_inf), float(T)
    n_r, n_steps = int(n_r), int(n_steps)
    if not (0.0 < R < r_inf) or T <= 0.0 or n_r < 4 or n_steps < 1:
        raise ValueError("bad radial solver arguments")
    if flux_amplitude.end < T * (1.0 - 1e-12):
        raise ValueError("flux signal ends before the solve horizon")
    d = params.d
    dt = T / n_steps
    r = np.linspace(R, r_inf, n_r + 1)
    dr = (r_inf - R) / n_r

    # unknowns: nodes 0..n_r-1 (outer node pinned at zero)
    main = np.full(n_r, -2.0 / dr ** 2)
    upper = np.zeros(n_r - 1)
    lower = np.zeros(n_r - 1)
    ri = r[:n_r]
    upper[:] = 1.0 / dr ** 2 + 1.0 / (2.0 * dr * ri[:-1])
    lower[:] = 1.0 / dr ** 2 - 1.0 / (2.0 * dr * ri[1:])
    # ghost elimination at the inner node: u[-1] = u[1] + 2 dr phi / d
    upper[0] = 2.0 / dr ** 2
    lap = sp.diags([lower, main, upper], [-1, 0, 1], format="csr")
    # forcing of the inner row collects the ghost and the first-order term
    b0_per_phi = 2.0 / (d * dr) - 1.0 / (d * ri[0])

    lam = 0.5 * d * dt
    eye = sp.identity(n_r, format="csr")
    lu = splu((eye - lam * lap).tocsc())
    rhs_op = (eye + lam * lap).tocsr()

    u = np.zeros(n_r) if u0_radial is None else np.asarray(
        [float(u0_radial(x)) for x in ri])
    stride = stamp_stride if stamp_stride is not None else max(1, n_steps // 200)
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    profiles = np.zeros((len(steps), n_r + 1))
    profiles[0, :n_r] = u
    if u0_radial is not None:
        profiles[0, n_r] = float(u0_radial(r[n_r]))
    k_out = 1
    stamp_set = set(steps)
    sig = flux_amplitude
    for n in range(1, n_steps + 1):
        t0, t1 = (n - 1) * dt, n * dt
        rhs = rhs_op @ u
        rhs[0] += lam * b0_per_phi * (sig.eval(t0) + sig.eval(t1))
        u = lu.solve(rhs)
        if n in stamp_set:
            if not np.all(np.isfinite(u)):
                raise NumericalFailure("non-finite radial field at step %d" % n)
            profiles[k_out, :n_r] = u
            k_out += 1
    times = np.asarray(steps) * dt
    return RadialTrajectory(r, times, profiles, d)


# ---------------------------------------------------------------------------
# trajectory export
# ---------------------------------------------------------------------------

def write_norms_csv(traj: FieldTrajectory, path) -> None:
    """Per-stamp diagnostics as CSV: time, l2, h1, mass, boundary mean."""
    trace_mean = traj.gamma_trace.mean(axis=1)
    with open(path, "w") as fh:
        fh.write("time,l2,h1,mass,trace_mean\n")
        for k in range(traj.n_stamps):
            fh.write(",".join("%.17g" % v for v in (
                traj.times[k], traj.l2[k], traj.h1[k],
                traj.mass[k], trace_mean[k])) + "\n")


def write_fields_binary(traj: FieldTrajectory, path) -> None:
    """Raw row-major float64 snapshots plus a JSON sidecar header.

    path gets the flat bytes of traj.fields (C order); path + '.json'
    documents shape, dtype, stamp times and the grid map parameters.
    """
    path = str(path)
    arr = np.ascontiguousarray(traj.fields, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    curve = traj.grid.curve
    header = {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "order": "C",
        "times": [float(t) for t in traj.times],
        "diffusivity": traj.d,
        "map": {
            "kind": curve.kind,
            "a": curve.a,
            "b": curve.b,
            "base": curve.base,
            "cos_coeffs": list(curve.cos_coeffs),
            "sin_coeffs": list(curve.sin_coeffs),
            "r_inf": traj.grid.r_inf,
            "n_r": traj.grid.n_r,
            "n_theta": traj.grid.n_theta,
        },
    }
    with open(path + ".json", "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=2)
        fh.write("\n")
