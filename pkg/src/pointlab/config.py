"""Experiment configuration: TOML loading, schema validation, canonical
hashing, and builders that turn a validated config into model objects.

One file describes one experiment.  Unknown keys are rejected with their
dotted path so typos fail loudly before any computation starts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .exterior import BoundaryFlux, ExteriorGrid
from .geometry import BoundaryCurve
from .green import HeatKernelParams
from .matching import MatchingProblem
from .pointsource import GaussianMixture, MixtureComponent, TimeSignal


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the field path."""


# ---------------------------------------------------------------------------
# leaf checks
# ---------------------------------------------------------------------------

def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _as_float(v, path):
    if not _is_number(v):
        raise ConfigError("%s: expected a number, got %r" % (path, v))
    return float(v)


def _as_int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError("%s: expected an integer, got %r" % (path, v))
    return int(v)


def _as_bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError("%s: expected true/false, got %r" % (path, v))
    return bool(v)


def _as_str(v, path):
    if not isinstance(v, str):
        raise ConfigError("%s: expected a string, got %r" % (path, v))
    return v


def _as_float_list(v, path):
    if not isinstance(v, list) or not all(_is_number(x) for x in v):
        raise ConfigError("%s: expected a list of numbers" % path)
    return [float(x) for x in v]


def _as_point_list(v, path):
    if not isinstance(v, list):
        raise ConfigError("%s: expected a list of [x, y] points" % path)
    out = []
    for j, p in enumerate(v):
        if not (isinstance(p, list) and len(p) == 2
                and all(_is_number(x) for x in p)):
            raise ConfigError("%s[%d]: expected an [x, y] point" % (path, j))
        out.append([float(p[0]), float(p[1])])
    return out


def _check_keys(section, allowed, path):
    if not isinstance(section, dict):
        raise ConfigError("%s: expected a table" % path)
    for key in section:
        if key not in allowed:
            raise ConfigError("%s.%s: unknown key" % (path, key))


# ---------------------------------------------------------------------------
# section parsers (each returns plain canonical data)
# ---------------------------------------------------------------------------

def _parse_curve(sec):
    _check_keys(sec, {"kind", "radius", "a", "b", "base",
                      "cos_coeffs", "sin_coeffs"}, "curve")
    kind = _as_str(sec.get("kind", "circle"), "curve.kind")
    if kind == "circle":
        extra = set(sec) - {"kind", "radius"}
        if extra:
            raise ConfigError("curve.%s: not a circle key" % extra.pop())
        return {"kind": "circle",
                "radius": _as_float(sec.get("radius", 1.0), "curve.radius")}
    if kind == "ellipse":
        extra = set(sec) - {"kind", "a", "b"}
        if extra:
            raise ConfigError("curve.%s: not an ellipse key" % extra.pop())
        if "a" not in sec or "b" not in sec:
            raise ConfigError("curve: ellipse needs both a and b")
        return {"kind": "ellipse", "a": _as_float(sec["a"], "curve.a"),
                "b": _as_float(sec["b"], "curve.b")}
    if kind == "star":
        extra = set(sec) - {"kind", "base", "cos_coeffs", "sin_coeffs"}
        if extra:
            raise ConfigError("curve.%s: not a star key" % extra.pop())
        return {"kind": "star",
                "base": _as_float(sec.get("base", 1.0), "curve.base"),
                "cos_coeffs": _as_float_list(sec.get("cos_coeffs", []),
                                             "curve.cos_coeffs"),
                "sin_coeffs": _as_float_list(sec.get("sin_coeffs", []),
                                             "curve.sin_coeffs")}
    raise ConfigError("curve.kind: must be circle, ellipse, or star")


def _parse_signal(sec, path, horizon):
    _check_keys(sec, {"knots", "values", "constant"}, path)
    if "constant" in sec:
        if "knots" in sec or "values" in sec:
            raise ConfigError("%s: give either constant or knots/values" % path)
        return {"knots": [0.0, horizon],
                "values": [_as_float(sec["constant"], path + ".constant")] * 2}
    if "knots" not in sec or "values" not in sec:
        raise ConfigError("%s: needs knots and values (or constant)" % path)
    knots = _as_float_list(sec["knots"], path + ".knots")
    values = _as_float_list(sec["values"], path + ".values")
    if len(knots) != len(values) or len(knots) < 2:
        raise ConfigError("%s: knots and values must match, length >= 2" % path)
    if knots[0] != 0.0 or any(b <= a for a, b in zip(knots, knots[1:])):
        raise ConfigError("%s.knots: must start at 0 and increase" % path)
    if knots[-1] < horizon * (1.0 - 1e-12):
        raise ConfigError("%s.knots: signal ends before the horizon" % path)
    return {"knots": knots, "values": values}


def _parse_components(lst, path):
    out = []
    if not isinstance(lst, list):
        raise ConfigError("%s: expected an array of component tables" % path)
    for j, sec in enumerate(lst):
        p = "%s[%d]" % (path, j)
        _check_keys(sec, {"weight", "center", "shape", "interior"}, p)
        for key in ("weight", "center", "shape"):
            if key not in sec:
                raise ConfigError("%s.%s: required" % (p, key))
        center = sec["center"]
        if not (isinstance(center, list) and len(center) == 2
                and all(_is_number(x) for x in center)):
            raise ConfigError("%s.center: expected [x, y]" % p)
        shape = _as_float(sec["shape"], p + ".shape")
        if shape <= 0.0:
            raise ConfigError("%s.shape: must be positive" % p)
        out.append({"weight": _as_float(sec["weight"], p + ".weight"),
                    "center": [float(center[0]), float(center[1])],
                    "shape": shape,
                    "interior": _as_bool(sec.get("interior", False),
                                         p + ".interior")})
    return out


_TOP_KEYS = {"seed", "model", "curve", "grid", "flux", "phibar", "initial",
             "bounds", "matching"}


def _canonicalize(raw):
    """Validate a parsed TOML dict and fill defaults; returns plain data."""
    _check_keys(raw, _TOP_KEYS, "config")
    out = {}
    out["seed"] = _as_int(raw.get("seed", 0), "seed")

    if "model" not in raw:
        raise ConfigError("model: section required")
    _check_keys(raw["model"], {"d", "horizon"}, "model")
    d = _as_float(raw["model"].get("d", 1.0), "model.d")
    horizon = _as_float(raw["model"].get("horizon", 1.0), "model.horizon")
    if not (np.isfinite(d) and d > 0.0):
        raise ConfigError("model.d: must be positive")
    if not (np.isfinite(horizon) and horizon > 0.0):
        raise ConfigError("model.horizon: must be positive")
    out["model"] = {"d": d, "horizon": horizon}

    out["curve"] = _parse_curve(raw.get("curve", {}))

    grid = raw.get("grid", {})
    _check_keys(grid, {"n_r", "n_theta", "r_inf", "n_steps", "stamp_every"},
                "grid")
    g = {"n_r": _as_int(grid.get("n_r", 64), "grid.n_r"),
         "n_theta": _as_int(grid.get("n_theta", 48), "grid.n_theta"),
         "n_steps": _as_int(grid.get("n_steps", 200), "grid.n_steps")}
    if g["n_steps"] < 1:
        raise ConfigError("grid.n_steps: must be at least 1")
    if "r_inf" in grid:
        g["r_inf"] = _as_float(grid["r_inf"], "grid.r_inf")
    if "stamp_every" in grid:
        g["stamp_every"] = _as_float(grid["stamp_every"], "grid.stamp_every")
        if g["stamp_every"] <= 0.0:
            raise ConfigError("grid.stamp_every: must be positive")
    out["grid"] = g

    flux = raw.get("flux", {})
    _check_keys(flux, {"profile", "signal"}, "flux")
    profile = flux.get("profile", "constant")
    if isinstance(profile, str):
        if profile != "constant":
            raise ConfigError("flux.profile: 'constant' or a list of values")
    else:
        profile = _as_float_list(profile, "flux.profile")
        if len(profile) != g["n_theta"]:
            raise ConfigError("flux.profile: length must equal grid.n_theta")
    sig = flux.get("signal", {"constant": 0.0})
    out["flux"] = {"profile": profile,
                   "signal": _parse_signal(sig, "flux.signal", horizon)}

    if "phibar" in raw:
        out["phibar"] = _parse_signal(raw["phibar"], "phibar", horizon)
    else:
        out["phibar"] = {"knots": [0.0, horizon], "values": [0.0, 0.0]}

    out["initial"] = {"components": _parse_components(
        raw.get("initial", {}).get("components", []), "initial.components")}
    if "initial" in raw:
        _check_keys(raw["initial"], {"components"}, "initial")

    bounds = raw.get("bounds", {})
    _check_keys(bounds, {"p", "epsilon_grid", "tol_slack", "tau_refine"},
                "bounds")
    b = {"p": _as_float(bounds.get("p", 3.0), "bounds.p"),
         "epsilon_grid": _as_float_list(
             bounds.get("epsilon_grid", [0.5, 1.0, 1.5]),
             "bounds.epsilon_grid"),
         "tol_slack": _as_float(bounds.get("tol_slack", 0.05),
                                "bounds.tol_slack"),
         "tau_refine": _as_int(bounds.get("tau_refine", 8),
                               "bounds.tau_refine")}
    if b["p"] <= 2.0:
        raise ConfigError("bounds.p: must be greater than 2")
    if b["tol_slack"] < 0.0:
        raise ConfigError("bounds.tol_slack: must be nonnegative")
    if b["tau_refine"] < 1:
        raise ConfigError("bounds.tau_refine: must be at least 1")
    if not b["epsilon_grid"]:
        raise ConfigError("bounds.epsilon_grid: must be nonempty")
    if any(e <= 0.0 or e >= 2.0 * d for e in b["epsilon_grid"]):
        raise ConfigError("bounds.epsilon_grid: values must lie in (0, 2d)")
    out["bounds"] = b

    if "matching" in raw:
        m = raw["matching"]
        _check_keys(m, {"phibar_knots", "v0_centers", "v0_shapes",
                        "regularization", "nonneg_phibar", "budget",
                        "n_boundary", "tau_points"}, "matching")
        centers = _as_point_list(m.get("v0_centers", []),
                                 "matching.v0_centers")
        shapes = _as_float_list(m.get("v0_shapes", []), "matching.v0_shapes")
        if len(centers) != len(shapes):
            raise ConfigError(
                "matching: v0_centers and v0_shapes must have equal length")
        mm = {"phibar_knots": _as_int(m.get("phibar_knots", 8),
                                      "matching.phibar_knots"),
              "v0_centers": centers, "v0_shapes": shapes,
              "regularization": _as_float(m.get("regularization", 0.0),
                                          "matching.regularization"),
              "nonneg_phibar": _as_bool(m.get("nonneg_phibar", True),
                                        "matching.nonneg_phibar"),
              "budget": _as_int(m.get("budget", 400), "matching.budget"),
              "n_boundary": _as_int(m.get("n_boundary", 64),
                                    "matching.n_boundary"),
              "tau_points": _as_int(m.get("tau_points", 160),
                                    "matching.tau_points")}
        out["matching"] = mm

    return out


# ---------------------------------------------------------------------------
# the config object
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully-defaulted experiment description."""

    data: dict

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def horizon(self) -> float:
        return self.data["model"]["horizon"]

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- builders ---------------------------------------------------------

    def params(self) -> HeatKernelParams:
        return HeatKernelParams(d=self.data["model"]["d"])

    def curve(self) -> BoundaryCurve:
        c = self.data["curve"]
        if c["kind"] == "circle":
            return BoundaryCurve.circle(c["radius"])
        if c["kind"] == "ellipse":
            return BoundaryCurve.ellipse(c["a"], c["b"])
        return BoundaryCurve.star(c["base"], tuple(c["cos_coeffs"]),
                                  tuple(c["sin_coeffs"]))

    def grid(self) -> ExteriorGrid:
        g = self.data["grid"]
        return ExteriorGrid.build(self.curve(), n_r=g["n_r"],
                                  n_theta=g["n_theta"],
                                  r_inf=g.get("r_inf"))

    def flux(self) -> BoundaryFlux:
        f = self.data["flux"]
        profile = f["profile"]
        if not isinstance(profile, str):
            profile = np.asarray(profile, dtype=float)
        sig = TimeSignal(np.asarray(f["signal"]["knots"]),
                         np.asarray(f["signal"]["values"]))
        return BoundaryFlux(profile, sig)

    def phibar(self) -> TimeSignal:
        p = self.data["phibar"]
        return TimeSignal(np.asarray(p["knots"]), np.asarray(p["values"]))

    def initial_mixture(self) -> GaussianMixture:
        comps = tuple(
            MixtureComponent(c["weight"], tuple(c["center"]), c["shape"],
                             interior=c["interior"])
            for c in self.data["initial"]["components"])
        return GaussianMixture(comps)

    def matching_problem(self) -> MatchingProblem | None:
        if "matching" not in self.data:
            return None
        m = self.data["matching"]
        comps = tuple((tuple(c), s)
                      for c, s in zip(m["v0_centers"], m["v0_shapes"]))
        return MatchingProblem(
            curve=self.curve(), flux=self.flux(), horizon=self.horizon,
            params=self.params(), phibar_knots=m["phibar_knots"],
            v0_components=comps, regularization=m["regularization"],
            nonneg_phibar=m["nonneg_phibar"],
            u0_fixed=self.initial_mixture(), n_boundary=m["n_boundary"],
            tau_points=m["tau_points"])

    def stamp_times(self) -> np.ndarray:
        """The solve's snapshot times implied by the grid section."""
        g = self.data["grid"]
        T, n = self.horizon, g["n_steps"]
        dt = T / n
        if "stamp_every" not in g:
            return dt * np.arange(n + 1)
        stride = max(1, int(round(g["stamp_every"] / dt)))
        steps = list(range(0, n + 1, stride))
        if steps[-1] != n:
            steps.append(n)
        return dt * np.asarray(steps)


# ---------------------------------------------------------------------------
# loading and overrides
# ---------------------------------------------------------------------------

def _parse_override_value(text):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply KEY=VAL entries (dotted paths) onto a parsed config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override %r: expected KEY=VAL" % item)
        key, _, val = item.partition("=")
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError("override %r: empty key" % item)
        node = raw
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError("override %s: %s is not a table"
                                  % (key, part))
            node = nxt
        node[parts[-1]] = _parse_override_value(val)
    return raw


def parse_config(raw: dict, *, overrides=(), seed=None) -> ExperimentConfig:
    raw = json.loads(json.dumps(raw))   # defensive deep copy, plain types
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = int(seed)
    return ExperimentConfig(_canonicalize(raw))


def load_config(path, *, overrides=(), seed=None) -> ExperimentConfig:
    """Read, validate, and canonicalize a TOML experiment file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config %s: %s" % (path, exc))
    return parse_config(raw, overrides=overrides, seed=seed)
