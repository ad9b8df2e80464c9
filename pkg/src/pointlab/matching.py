"""Signal-and-mass matching: tune the emission schedule and interior bumps
so the point-source model reproduces a prescribed boundary flux.

The decision variables are the values of the emission signal at uniform
knots plus one weight per interior Gaussian component; the objective is
the cumulative flux mismatch at the horizon plus an optional quadratic
penalty on the emission signal.  The search is a budgeted, deterministic
Nelder-Mead simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimates import c_star
from .exterior import BoundaryFlux
from .geometry import BoundaryCurve, discretize, min_radius
from .green import HeatKernelParams
from .pointsource import GaussianMixture, MixtureComponent, TimeSignal


class ConstraintError(ValueError):
    """Raised when parameters violate the problem's feasible set."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("infeasible parameters: " + "; ".join(self.violations))


@dataclass(frozen=True)
class MatchingProblem:
    """Flux-matching search space over emission knots and interior weights.

    Interior components are given as (center, shape) pairs with the weight
    left free; centers must sit well inside the curve so that the bump's
    three-sigma disk stays clear of the boundary (Gaussians leak, so the
    construction rule keeps the leak mass negligible and reportable).
    """

    curve: BoundaryCurve
    flux: BoundaryFlux
    horizon: float
    params: HeatKernelParams
    phibar_knots: int
    v0_components: tuple = ()
    regularization: float = 0.0
    nonneg_phibar: bool = True
    u0_fixed: GaussianMixture = field(default_factory=GaussianMixture.empty)
    n_boundary: int = 64
    tau_points: int = 160

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0.0):
            raise ValueError("horizon must be positive and finite")
        if int(self.phibar_knots) < 2:
            raise ValueError("need at least two emission knots")
        object.__setattr__(self, "phibar_knots", int(self.phibar_knots))
        if not (np.isfinite(self.regularization) and self.regularization >= 0.0):
            raise ValueError("regularization weight must be nonnegative")
        if self.flux.signal.end < self.horizon * (1.0 - 1e-12):
            raise ValueError("prescribed flux signal ends before the horizon")
        comps = tuple((np.asarray(c, dtype=float), float(s))
                      for c, s in self.v0_components)
        object.__setattr__(self, "v0_components", comps)
        bad = []
        d = self.params.d
        for j, (center, shape) in enumerate(comps):
            if center.shape != (2,):
                raise ValueError("component centers must be points in the plane")
            if not (np.isfinite(shape) and shape > 0.0):
                raise ValueError("component spreads must be positive")
            dist = float(np.sqrt(center @ center))
            theta = float(np.arctan2(center[1], center[0]))
            ray = (min_radius(self.curve) if dist == 0.0
                   else float(self.curve.rho(theta)))
            reach = dist + 3.0 * np.sqrt(2.0 * d * shape)
            if dist >= ray or reach > 0.95 * ray:
                bad.append("component %d reaches %.4g of the allowed %.4g"
                           % (j, reach, 0.95 * ray))
        if bad:
            raise ValueError("interior components leak past the boundary: "
                             + "; ".join(bad))

    @property
    def dimension(self) -> int:
        return self.phibar_knots + len(self.v0_components)

    @property
    def knot_times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.phibar_knots)

    def discretization(self):
        return discretize(self.curve, self.n_boundary)

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dimension,):
            raise ValueError("parameter vector has wrong length")
        return theta[:self.phibar_knots], theta[self.phibar_knots:]

    def phibar_signal(self, theta) -> TimeSignal:
        values, _ = self.split(theta)
        return TimeSignal(self.knot_times, values)

    def mixture(self, theta) -> GaussianMixture:
        _, weights = self.split(theta)
        comps = list(self.u0_fixed.components)
        comps += [MixtureComponent(float(w), tuple(c), s, interior=True)
                  for w, (c, s) in zip(weights, self.v0_components)]
        return GaussianMixture(tuple(comps))


def naive_baseline(problem: MatchingProblem) -> np.ndarray:
    """Start point: emission follows the total prescribed influx, no bumps."""
    disc = problem.discretization()
    rate = float(np.sum(disc.weights * problem.flux.node_values(disc.n_nodes)))
    values = rate * problem.flux.signal.eval(problem.knot_times)
    return np.concatenate([values, np.zeros(len(problem.v0_components))])


def project(problem: MatchingProblem, theta) -> np.ndarray:
    """Clamp a raw parameter vector onto the feasible set."""
    values, weights = problem.split(theta)
    if problem.nonneg_phibar:
        values = np.maximum(values, 0.0)
    weights = np.maximum(weights, 0.0)
    return np.concatenate([values, weights])


def check_feasible(problem: MatchingProblem, theta):
    values, weights = problem.split(theta)
    bad = []
    if problem.nonneg_phibar and np.any(values < 0.0):
        idx = np.flatnonzero(values < 0.0)
        bad.append("negative emission knots at %s" % idx.tolist())
    if np.any(weights < 0.0):
        idx = np.flatnonzero(weights < 0.0)
        bad.append("negative interior weights at %s" % idx.tolist())
    if not np.all(np.isfinite(np.asarray(theta, dtype=float))):
        bad.append("non-finite entries")
    if bad:
        raise ConstraintError(bad)


def objective(problem: MatchingProblem, theta, *, rtol: float = 1e-8) -> float:
    """Cumulative mismatch at the horizon plus the quadratic signal penalty."""
    theta = np.asarray(theta, dtype=float)
    check_feasible(problem, theta)
    phibar = problem.phibar_signal(theta)
    if problem.flux.is_zero() and problem.mixture(theta).is_empty \
            and phibar.is_zero:
        return problem.regularization * 0.0
    disc = problem.discretization()
    star = c_star(disc, problem.flux, problem.mixture(theta), phibar,
                  np.array([problem.horizon]), problem.params,
                  tau_refine=problem.tau_points, rtol=rtol)
    penalty = problem.regularization * phibar.l2_norm_sq(problem.horizon)
    return float(star[-1] + penalty)


def transition_timescale(curve: BoundaryCurve, params: HeatKernelParams) -> float:
    """Diffusive travel time across the object: diameter squared over d."""
    return curve.diameter() ** 2 / params.d


def leakage_bounds(problem: MatchingProblem) -> np.ndarray:
    """Per-component upper bound on the unit-weight mass outside the curve.

    Uses the Gaussian tail outside the largest disk around the center that
    stays inside the boundary (distance taken to the discretized nodes).
    """
    disc = problem.discretization()
    out = np.empty(len(problem.v0_components))
    for j, (center, shape) in enumerate(problem.v0_components):
        delta = np.min(np.sqrt(np.sum((disc.nodes - center) ** 2, axis=1)))
        out[j] = np.exp(-delta ** 2 / (4.0 * problem.params.d * shape))
    return out


# ---------------------------------------------------------------------------
# budgeted deterministic Nelder-Mead
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizationTrace:
    """Every evaluation of a simplex search plus the winning parameters."""

    iterates: tuple               # ((theta, objective), ...) in eval order
    best: np.ndarray
    best_objective: float
    baseline_objective: float
    converged: bool
    timescale: float

    @property
    def objectives(self) -> np.ndarray:
        return np.array([f for _, f in self.iterates])

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.objectives)

    @property
    def n_evaluations(self) -> int:
        return len(self.iterates)


def optimize(problem: MatchingProblem, budget: int, seed: int, *,
             rtol: float = 1e-8) -> OptimizationTrace:
    """Projected Nelder-Mead from the naive start within an evaluation budget.

    Coefficients: reflection 1, expansion 2, contraction 1/2, shrink 1/2.
    The only randomness is a seeded jitter on the initial simplex steps, so
    a repeated run with the same seed reproduces the trace bit for bit.
    Exhausting the budget returns the best-so-far with converged=False.
    """
    dim = problem.dimension
    budget = int(budget)
    if budget < dim + 2:
        raise ValueError("budget must cover at least dimension + 2 evaluations")
    rng = np.random.default_rng(seed)
    scale = transition_timescale(problem.curve, problem.params)

    trace = []

    def evaluate(theta):
        proj = project(problem, theta)
        val = objective(problem, proj, rtol=rtol)
        trace.append((proj, val))
        return val

    def finish(converged):
        objs = np.array([f for _, f in trace])
        k = int(np.argmin(objs))
        return OptimizationTrace(
            iterates=tuple(trace), best=trace[k][0],
            best_objective=float(objs[k]), baseline_objective=float(objs[0]),
            converged=converged, timescale=scale)

    x0 = naive_baseline(problem)
    f0 = evaluate(x0)
    if f0 == 0.0:
        # the objective is nonnegative, so the start is already optimal
        return finish(True)

    jitter = rng.uniform(-1.0, 1.0, size=dim)
    steps = 0.15 * np.maximum(1.0, np.abs(x0)) * (1.0 + 0.1 * jitter)
    simplex = [x0.copy()]
    values = [f0]
    for i in range(dim):
        if len(trace) >= budget:
            return finish(False)
        x = x0.copy()
        x[i] += steps[i]
        simplex.append(x)
        values.append(evaluate(x))
    simplex = np.array(simplex)
    values = np.array(values)

    while len(trace) < budget:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if values[0] == 0.0:
            return finish(True)
        spread_f = values[-1] - values[0]
        spread_x = np.max(np.abs(simplex[1:] - simplex[0]))
        if spread_f <= 1e-12 * max(1.0, abs(values[0])) and \
                spread_x <= 1e-10 * max(1.0, np.max(np.abs(simplex[0]))):
            return finish(True)

        centroid = np.mean(simplex[:-1], axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = evaluate(xr)
        if fr < values[0]:
            if len(trace) >= budget:
                simplex[-1], values[-1] = xr, fr
                break
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = evaluate(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
        elif fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
        else:
            if len(trace) >= budget:
                break
            if fr < values[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = evaluate(xc)
            if fc < min(fr, values[-1]):
                simplex[-1], values[-1] = xc, fc
            else:
                # shrink toward the incumbent
                for i in range(1, dim + 1):
                    if len(trace) >= budget:
                        return finish(False)
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    values[i] = evaluate(simplex[i])
    return finish(False)
