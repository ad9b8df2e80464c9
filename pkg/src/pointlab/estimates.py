"""Quantitative error estimates for the point-source reduction.

Everything that turns trajectories and model descriptions into numbers
for the a-priori analysis lives here: the boundary geometry constant, the
cumulative flux-mismatch integral and its computable upper bound, the
preliminary iterated-L1 inequality, the boundary-flux inequality, the
energy identity diagnostic, the empirical trace constant, and the final
exponential-in-time margin checks collected into a BoundReport.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exterior import (
    BoundaryFlux,
    ExteriorGrid,
    FieldTrajectory,
    field_h1_l2_norms,
)
from .geometry import CurveDiscretization
from .green import HeatKernelParams, sup_grad_norm
from .pointsource import GaussianMixture, TimeSignal, eval_uhat, flux_on_curve, grad_lp_norm_u0


# ---------------------------------------------------------------------------
# geometry constant
# ---------------------------------------------------------------------------

def c_gamma(disc: CurveDiscretization) -> float:
    """Boundary integral of the squared all-time gradient envelope.

    Independent of the diffusivity (the envelope is); for a circle of
    radius R the closed form is 128 e^{-4} / (pi R^5).
    """
    radii = disc.radii()
    if np.min(radii) <= 0.0:
        raise ValueError("curve passes through the source point")
    sup_vals = sup_grad_norm(disc.nodes)
    return float(np.sum(disc.weights * sup_vals ** 2))


# ---------------------------------------------------------------------------
# tau grids and cumulative quadrature
# ---------------------------------------------------------------------------

def _tau_grid(stamps, refine: int):
    """Refined quadrature grid over [0, max stamp] containing every stamp.

    Returns (grid, idx) with grid[idx[k]] == stamps[k].
    """
    stamps = np.asarray(stamps, dtype=float)
    if stamps.ndim != 1 or stamps.size == 0:
        raise ValueError("need a 1-d array of stamps")
    if np.any(stamps < 0.0) or np.any(np.diff(stamps) <= 0.0):
        raise ValueError("stamps must be nonnegative and strictly increasing")
    refine = max(1, int(refine))
    knots = stamps if stamps[0] == 0.0 else np.concatenate([[0.0], stamps])
    pieces = [np.array([0.0])]
    for a, b in zip(knots[:-1], knots[1:]):
        pieces.append(np.linspace(a, b, refine + 1)[1:])
    grid = np.concatenate(pieces)
    idx = np.searchsorted(grid, stamps)
    return grid, idx


def _cumulative_trapezoid(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    steps = 0.5 * (values[1:] + values[:-1]) * np.diff(grid)
    return np.concatenate([[0.0], np.cumsum(steps)])


def c_star(disc: CurveDiscretization, flux: BoundaryFlux, u0: GaussianMixture,
           phibar: TimeSignal, stamps, params: HeatKernelParams, *,
           tau_refine: int = 8, rtol: float = 1e-8) -> np.ndarray:
    """Cumulative squared boundary mismatch between flux and the model.

    For each stamp t the value is the time integral up to t of the squared
    L2(Gamma) distance between the prescribed flux and the point-source
    model's flux trace.  Non-decreasing by construction.
    """
    grid, idx = _tau_grid(stamps, tau_refine)
    profile = flux.node_values(disc.n_nodes)
    mism = np.empty(grid.size)
    for i, tau in enumerate(grid):
        model = flux_on_curve(disc, tau, u0, phibar, params, rtol=rtol)
        prescribed = profile * flux.signal.eval(tau)
        mism[i] = float(np.sum(disc.weights * (prescribed - model) ** 2))
    return _cumulative_trapezoid(mism, grid)[idx]


# ---------------------------------------------------------------------------
# preliminary inequality
# ---------------------------------------------------------------------------

class PhibarIntegral(NamedTuple):
    value: float      # integral over [0, t] of the squared running L1 norm
    bound: float      # (t^2 / 2) * squared L2 norm of the signal on [0, t]
    satisfied: bool


def phibar_l1_integral(phibar: TimeSignal, t: float) -> PhibarIntegral:
    """Exact iterated-L1 integral and its Cauchy-Schwarz upper bound."""
    t = float(t)
    value = phibar.l1sq_time_integral(t)
    bound = 0.5 * t * t * phibar.l2_norm_sq(t)
    return PhibarIntegral(value, bound, value <= bound * (1.0 + 1e-12) + 1e-300)


# ---------------------------------------------------------------------------
# computable upper bound for the mismatch integral
# ---------------------------------------------------------------------------

def c_star_upper_bound(disc: CurveDiscretization, flux: BoundaryFlux,
                       u0: GaussianMixture, phibar: TimeSignal, p: float,
                       stamps, params: HeatKernelParams, *,
                       rtol: float = 1e-8) -> np.ndarray:
    """Closed-form dominating series for the cumulative mismatch.

    bound(t) = 2 int_0^t ||phi||^2_{L2(Gamma)}
             + 2 [ (2 q c^2 d^2 |Gamma| / (2-q)) t^{2/q-1} ||grad u0||^2_{Lp}
                 + 2 d^2 C_Gamma int_0^t ||phibar||^2_{L1(0,tau)} dtau ]

    with q = p/(p-1) and c = q^{-1/q} (4 pi d)^{1/q-1}; needs 2 < p < inf
    so that the time exponent stays positive.
    """
    p = float(p)
    if not (2.0 < p < np.inf):
        raise ValueError("exponent p must lie strictly between 2 and infinity")
    stamps = np.asarray(stamps, dtype=float)
    d = params.d
    q = p / (p - 1.0)
    c_const = q ** (-1.0 / q) * (4.0 * np.pi * d) ** (1.0 / q - 1.0)
    profile = flux.node_values(disc.n_nodes)
    spatial_sq = float(np.sum(disc.weights * profile ** 2))
    grad_sq = 0.0 if u0.is_empty else grad_lp_norm_u0(u0, p, params, rtol=rtol) ** 2
    gamma_len = disc.length
    mix_coef = 2.0 * (2.0 * q * c_const ** 2 * d ** 2 * gamma_len / (2.0 - q))
    cg = c_gamma(disc)

    out = np.empty(stamps.size)
    for k, t in enumerate(stamps):
        term_flux = 2.0 * spatial_sq * flux.signal.l2_norm_sq(t)
        term_mix = mix_coef * t ** (2.0 / q - 1.0) * grad_sq
        term_src = 4.0 * d ** 2 * cg * phibar.l1sq_time_integral(t)
        out[k] = term_flux + term_mix + term_src
    return out


# ---------------------------------------------------------------------------
# boundary-flux inequality (initial mixture absent)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InequalityReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def slack(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def satisfied(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-300))


def flux_bound_lemma61(disc: CurveDiscretization, phibar: TimeSignal, stamps,
                       params: HeatKernelParams, *, u0: GaussianMixture | None = None,
                       tau_refine: int = 8, rtol: float = 1e-8) -> InequalityReport:
    """Check that the model's flux energy is dominated by the source term.

    LHS(t) = int_0^t || d grad(uhat) . n ||^2_{L2(Gamma)} dtau with empty
    initial mixture; RHS(t) = d^2 C_Gamma * iterated-L1 integral of phibar.
    """
    if u0 is not None and not u0.is_empty:
        raise ValueError("the flux inequality assumes an empty initial mixture")
    empty = GaussianMixture.empty()
    grid, idx = _tau_grid(stamps, tau_refine)
    vals = np.empty(grid.size)
    for i, tau in enumerate(grid):
        model = flux_on_curve(disc, tau, empty, phibar, params, rtol=rtol)
        vals[i] = float(np.sum(disc.weights * model ** 2))
    lhs = _cumulative_trapezoid(vals, grid)[idx]
    cg = c_gamma(disc)
    stamps = np.asarray(stamps, dtype=float)
    rhs = np.array([
        params.d ** 2 * cg * phibar.l1sq_time_integral(t) for t in stamps])
    return InequalityReport(stamps, lhs, rhs)


# ---------------------------------------------------------------------------
# point model sampled on the exterior grid; deviation series
# ---------------------------------------------------------------------------

def uhat_on_grid(grid: ExteriorGrid, u0: GaussianMixture, phibar: TimeSignal,
                 params: HeatKernelParams, times, *,
                 rtol: float = 1e-8) -> np.ndarray:
    """Model field sampled at every grid node for each requested time."""
    times = np.asarray(times, dtype=float)
    pts = grid.nodes.reshape(-1, 2)
    out = np.empty((times.size, grid.n_r + 1, grid.n_theta))
    for k, t in enumerate(times):
        out[k] = eval_uhat(pts, t, u0, phibar, params, rtol=rtol).reshape(
            grid.n_r + 1, grid.n_theta)
    return out


class DeviationSeries(NamedTuple):
    l2: np.ndarray        # per-stamp L2 norm of w = trajectory - model
    h1: np.ndarray        # per-stamp H1 norm of w
    gamma_l2: np.ndarray  # per-stamp L2(Gamma) norm of the boundary trace


def deviation_series(traj: FieldTrajectory, u0: GaussianMixture,
                     phibar: TimeSignal, disc: CurveDiscretization,
                     params: HeatKernelParams, *, rtol: float = 1e-8,
                     model_fields: np.ndarray | None = None) -> DeviationSeries:
    """Norm series of the deviation between the solve and the point model.

    `model_fields` short-circuits the model evaluation when the sampled
    point-source field is already available for these stamps.
    """
    _check_disc_alignment(disc, traj.grid)
    uh = model_fields if model_fields is not None else uhat_on_grid(
        traj.grid, u0, phibar, params, traj.times, rtol=rtol)
    if uh.shape != traj.fields.shape:
        raise ValueError("model fields do not match the trajectory layout")
    k = traj.n_stamps
    l2 = np.empty(k)
    h1 = np.empty(k)
    gamma = np.empty(k)
    for i in range(k):
        w = traj.fields[i] - uh[i]
        l2[i], h1[i] = field_h1_l2_norms(w, traj.grid)
        gamma[i] = np.sqrt(float(np.sum(disc.weights * w[0, :] ** 2)))
    return DeviationSeries(l2, h1, gamma)


def _check_disc_alignment(disc: CurveDiscretization, grid: ExteriorGrid):
    if disc.n_nodes != grid.n_theta or not np.allclose(disc.thetas, grid.thetas):
        raise ValueError("curve discretization is not aligned with the grid")


# ---------------------------------------------------------------------------
# energy identity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyIdentityCheck:
    """Discrete evaluation of the deviation energy balance.

    At interior stamps:  dt_term + grad_term  vs  boundary_term, where
    dt_term   = (1/2) d/dt ||w||^2_{L2}      (centered over stamps),
    grad_term = d ||grad w||^2_{L2},
    boundary_term = integral over Gamma of w (phi - model flux).
    """

    times: np.ndarray
    dt_term: np.ndarray
    grad_term: np.ndarray
    boundary_term: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.dt_term + self.grad_term - self.boundary_term)

    @property
    def scale(self) -> float:
        """Largest magnitude among the identity's terms over all stamps."""
        return float(max(np.max(np.abs(self.dt_term)),
                         np.max(np.abs(self.grad_term)),
                         np.max(np.abs(self.boundary_term))))


def energy_identity_residual(traj: FieldTrajectory, flux: BoundaryFlux,
                             u0: GaussianMixture, phibar: TimeSignal,
                             disc: CurveDiscretization,
                             params: HeatKernelParams, *, rtol: float = 1e-8,
                             model_fields: np.ndarray | None = None) -> EnergyIdentityCheck:
    """Per-interior-stamp defect of the deviation energy identity."""
    _check_disc_alignment(disc, traj.grid)
    if traj.n_stamps < 3:
        raise ValueError("need at least three stamps for the centered derivative")
    times = traj.times
    uh = model_fields if model_fields is not None else uhat_on_grid(
        traj.grid, u0, phibar, params, times, rtol=rtol)
    if uh.shape != traj.fields.shape:
        raise ValueError("model fields do not match the trajectory layout")
    profile = flux.node_values(disc.n_nodes)

    k = traj.n_stamps
    l2_sq = np.empty(k)
    grad_sq = np.empty(k)
    boundary = np.empty(k)
    for i in range(k):
        w = traj.fields[i] - uh[i]
        l2, h1 = field_h1_l2_norms(w, traj.grid)
        l2_sq[i] = l2 ** 2
        grad_sq[i] = h1 ** 2 - l2 ** 2
        mismatch = (profile * flux.signal.eval(times[i])
                    - flux_on_curve(disc, times[i], u0, phibar, params, rtol=rtol))
        boundary[i] = float(np.sum(disc.weights * w[0, :] * mismatch))

    dt_term = 0.5 * (l2_sq[2:] - l2_sq[:-2]) / (times[2:] - times[:-2])
    return EnergyIdentityCheck(times[1:-1], dt_term,
                               params.d * grad_sq[1:-1], boundary[1:-1])


# ---------------------------------------------------------------------------
# trace constant
# ---------------------------------------------------------------------------

def trace_constant(gamma_l2, h1) -> float:
    """Largest snapshot ratio ||w||_{L2(Gamma)} / ||w||_{H1}.

    A lower bound for the true trace-imbedding constant; snapshots whose
    H1 norm is negligible relative to the largest one are skipped, and an
    all-vanishing family is rejected as undefined.
    """
    gamma_l2 = np.asarray(gamma_l2, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    if gamma_l2.shape != h1.shape or gamma_l2.ndim != 1:
        raise ValueError("need matching 1-d snapshot norm arrays")
    cutoff = 1e-12 * (np.max(h1) if h1.size else 0.0)
    mask = h1 > cutoff
    if not np.any(mask) or np.max(h1) == 0.0:
        raise ValueError("all snapshots vanish; trace ratio undefined")
    return float(np.max(gamma_l2[mask] / h1[mask]))


# ---------------------------------------------------------------------------
# final margin report
# ---------------------------------------------------------------------------

_TINY = 1e-12


@dataclass(frozen=True)
class BoundReport:
    """Everything the exponential-in-time error bounds produce.

    Margins are LHS/RHS ratios, one row per epsilon, one column per stamp;
    a stamp where both sides fall below 1e-12 contributes a zero margin.
    """

    schema_version: str
    times: np.ndarray
    c_star: np.ndarray
    c_star_bound: np.ndarray
    c_gamma: float
    trace_constant: float
    epsilon_grid: np.ndarray
    l2_margins: np.ndarray
    h1_margins: np.ndarray
    best_epsilon_l2: np.ndarray
    best_epsilon_h1: np.ndarray
    tol_slack: float
    energy_times: np.ndarray
    energy_residuals: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.c_star) < -1e-15):
            raise ValueError("cumulative mismatch series must be non-decreasing")
        if not (np.isfinite(self.c_gamma) and self.c_gamma > 0.0):
            raise ValueError("geometry constant must be positive and finite")
        if not (np.all(np.isfinite(self.l2_margins))
                and np.all(np.isfinite(self.h1_margins))):
            raise ValueError("margins must be finite")

    @property
    def bound_dominates(self) -> bool:
        return bool(np.all(self.c_star <= self.c_star_bound * (1.0 + 1e-12) + 1e-300))

    @property
    def l2_passed(self) -> bool:
        return bool(np.all(self.l2_margins <= 1.0 + self.tol_slack))

    @property
    def h1_passed(self) -> bool:
        return bool(np.all(self.h1_margins <= 1.0 + self.tol_slack))

    @property
    def passed(self) -> bool:
        return self.l2_passed and self.h1_passed and self.bound_dominates

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "times": [float(v) for v in self.times],
            "c_star": [float(v) for v in self.c_star],
            "c_star_bound": [float(v) for v in self.c_star_bound],
            "c_gamma": float(self.c_gamma),
            "trace_constant": float(self.trace_constant),
            "epsilon_grid": [float(v) for v in self.epsilon_grid],
            "l2_margins": [[float(v) for v in row] for row in self.l2_margins],
            "h1_margins": [[float(v) for v in row] for row in self.h1_margins],
            "best_epsilon_l2": [float(v) for v in self.best_epsilon_l2],
            "best_epsilon_h1": [float(v) for v in self.best_epsilon_h1],
            "max_l2_margin": float(np.max(self.l2_margins)),
            "max_h1_margin": float(np.max(self.h1_margins)),
            "tol_slack": float(self.tol_slack),
            "energy_times": [float(v) for v in self.energy_times],
            "energy_residuals": [float(v) for v in self.energy_residuals],
            "bound_dominates": self.bound_dominates,
            "l2_passed": self.l2_passed,
            "h1_passed": self.h1_passed,
            "passed": self.passed,
        }


def _ratio(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    out = np.zeros_like(lhs)
    live = ~((lhs < _TINY) & (rhs < _TINY))
    out[live] = lhs[live] / np.maximum(rhs[live], 1e-300)
    return out


def verify_main_theorem(times, w_l2, w_h1, gamma_l2, c_star_series,
                        c_star_bound_series, c_gamma_value, epsilon_grid,
                        params: HeatKernelParams, *, tol_slack: float = 0.05,
                        energy_times=None, energy_residuals=None) -> BoundReport:
    """Margin check of the exponential-in-time deviation bounds.

    For each epsilon in (0, 2d) the squared L2 deviation must stay below
    (cbar^2/eps) c*(t) e^{eps t} and the cumulative squared H1 deviation
    below (2 d cbar^2 / (eps^2 (2d - eps))) c*(t) e^{eps t}, up to the
    declared discretization slack.  cbar is the empirical trace constant
    maximized over the supplied snapshots.
    """
    times = np.asarray(times, dtype=float)
    w_l2 = np.asarray(w_l2, dtype=float)
    w_h1 = np.asarray(w_h1, dtype=float)
    c_star_series = np.asarray(c_star_series, dtype=float)
    c_star_bound_series = np.asarray(c_star_bound_series, dtype=float)
    epsilon_grid = np.asarray(epsilon_grid, dtype=float)
    d = params.d
    if np.any(epsilon_grid <= 0.0) or np.any(epsilon_grid >= 2.0 * d):
        raise ValueError("epsilon values must lie strictly inside (0, 2d)")
    cbar = trace_constant(gamma_l2, w_h1)

    # cumulative squared H1 deviation, trapezoid over the stamps
    h1_sq = w_h1 ** 2
    h1_cum = np.concatenate([[0.0], np.cumsum(
        0.5 * (h1_sq[1:] + h1_sq[:-1]) * np.diff(times))])

    n_eps, k = epsilon_grid.size, times.size
    l2_margins = np.zeros((n_eps, k))
    h1_margins = np.zeros((n_eps, k))
    rhs_l2_all = np.zeros((n_eps, k))
    rhs_h1_all = np.zeros((n_eps, k))
    for i, eps in enumerate(epsilon_grid):
        grow = c_star_series * np.exp(eps * times)
        rhs_l2_all[i] = (cbar ** 2 / eps) * grow
        rhs_h1_all[i] = (2.0 * d * cbar ** 2 / (eps ** 2 * (2.0 * d - eps))) * grow
        l2_margins[i] = _ratio(w_l2 ** 2, rhs_l2_all[i])
        h1_margins[i] = _ratio(h1_cum, rhs_h1_all[i])

    best_l2 = epsilon_grid[np.argmin(rhs_l2_all, axis=0)]
    best_h1 = epsilon_grid[np.argmin(rhs_h1_all, axis=0)]

    e_times = np.asarray(energy_times, dtype=float) if energy_times is not None \
        else np.empty(0)
    e_res = np.asarray(energy_residuals, dtype=float) if energy_residuals is not None \
        else np.empty(0)
    return BoundReport(
        schema_version="1", times=times, c_star=c_star_series,
        c_star_bound=c_star_bound_series, c_gamma=float(c_gamma_value),
        trace_constant=cbar, epsilon_grid=epsilon_grid,
        l2_margins=l2_margins, h1_margins=h1_margins,
        best_epsilon_l2=best_l2, best_epsilon_h1=best_h1,
        tol_slack=float(tol_slack), energy_times=e_times, energy_residuals=e_res)
