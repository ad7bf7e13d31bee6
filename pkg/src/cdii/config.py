"""Line-oriented experiment configuration with per-experiment presets.

Format: one ``key = value`` per line, ``#`` starts a comment. Measurement
indices (``recon.basis``, ``recon.pairs``) are 1-based here and converted to
0-based when options are built. ``auto`` regularization values are resolved
from the preset tables once the noise level is known.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .fields import Grid2D
from .forward import SolverOptions
from .recon import BetaBC, ReconOptions
from .regularize import KINDS, RegSpec
from .synth import ILLUMINATIONS, PHANTOMS, NoiseSpec

COEFFS = ("xi", "zeta", "beta")
DOMAINS = {"X": ((-1.0, 1.0), (-1.0, 1.0)), "extended": ((-3.0, 3.0), (-1.2, 4.8))}
EXPERIMENTS = ("1", "2", "3", "4", "5", "custom")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    grid_n: int = 80
    domain: str = "X"
    x_range: tuple[float, float] = (-1.0, 1.0)
    y_range: tuple[float, float] = (-1.0, 1.0)
    phantom: str = "exp1_smooth"
    phantom_seed: int = 0
    illuminations: str = "poly5"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    basis: tuple[int, int] = (1, 2)
    pairs: list[tuple[int, int]] | None = None  # None: every pair of non-basis measurements
    det_floor_rel: float = 1e-8
    b_shape_floor: float = 0.05
    max_masked_fraction: float = 0.95
    definite_only: bool = True
    beta_refine: int | None = None  # None: preset table
    known_anisotropy: bool = False
    beta_bc: str = "dirichlet"
    anchor: tuple[float, float] = (0.0, 0.0)
    anchor_value: float | None = None  # None: true beta at the anchor
    reg_kind: dict[str, str | None] = field(default_factory=lambda: dict.fromkeys(COEFFS))
    reg_rho: dict[str, float | None] = field(default_factory=lambda: dict.fromkeys(COEFFS))
    reg_outer_iter: int = 2000
    reg_tol: float = 1e-6
    solver: SolverOptions = field(default_factory=SolverOptions)
    restrict_to_X: bool = False
    independence_threshold: float = 1e-3
    out_dir: str | None = None

    def grid(self) -> Grid2D:
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        h = (x1 - x0) / self.grid_n
        ny = (y1 - y0) / h
        if abs(ny - round(ny)) > 1e-9 * max(1.0, ny):
            raise ConfigError("domain height is not a whole number of grid cells")
        return Grid2D(self.grid_n + 1, int(round(ny)) + 1, h, x0, y0)

    def region(self):
        return DOMAINS["X"] if self.restrict_to_X else None

    def reg_specs(self) -> dict[str, RegSpec]:
        return {c: RegSpec(self.reg_kind[c], self.reg_rho[c], outer_iter=self.reg_outer_iter, tol=self.reg_tol)
                for c in COEFFS}

    def algebra_options(self) -> ReconOptions:
        """Basis, pairs and floors only; the beta side condition is left at its default."""
        pairs = None if self.pairs is None else [(a - 1, b - 1) for a, b in self.pairs]
        return ReconOptions(
            basis=(self.basis[0] - 1, self.basis[1] - 1), extra_pairs=pairs,
            det_floor_rel=self.det_floor_rel, b_shape_floor=self.b_shape_floor,
            max_masked_fraction=self.max_masked_fraction, definite_only=self.definite_only,
            reg=self.reg_specs(), beta_refine=self.beta_refine or 0, region=self.region())

    def recon_options(self, true_beta: np.ndarray | None = None) -> ReconOptions:
        """Full options; ``true_beta`` (on the reconstruction grid) feeds the beta side condition."""
        opts = self.algebra_options()
        if self.beta_bc == "dirichlet":
            if true_beta is None:
                raise ConfigError("beta.bc = dirichlet needs the true beta on the boundary")
            opts.beta_bc = BetaBC("dirichlet", values=true_beta)
            return opts
        value = self.anchor_value
        if value is None:
            if true_beta is None:
                raise ConfigError("beta.anchor_value = true needs the true beta")
            g = self.grid()
            if self.restrict_to_X:
                g = g.subgrid(*DOMAINS["X"])
            value = float(true_beta[g.nearest_index(*self.anchor)])
        opts.beta_bc = BetaBC("anchor", point=self.anchor, value=value)
        return opts

    def to_text(self) -> str:
        """Resolved configuration in the input format, one key per line."""
        return "".join(f"{k} = {_KEYS[k][1](self)}\n" for k in _KEYS)


# -- presets ------------------------------------------------------------------

# (kind, rho) per coefficient, and beta refinement sweeps; "clean" is used at alpha = 0
_REG_TABLE = {
    "1": {"clean": ({}, 0),
          "noisy": ({"xi": ("l2", 0.005), "zeta": ("l2", 0.003), "beta": ("l2", 0.002)}, 0)},
    "2": {"clean": ({}, 8),
          "noisy": ({"xi": ("l2", 0.005), "zeta": ("l2", 0.002), "beta": ("l1_tv", 0.002)}, 0)},
    "3": {"clean": ({}, 8),
          "noisy": ({"xi": ("l1_tv", 0.02), "zeta": ("l1_tv", 0.01), "beta": ("l1_tv", 0.01)}, 0)},
    "4": {"clean": ({}, 8),
          "noisy": ({"xi": ("l1_tv", 0.05), "zeta": ("l1_tv", 0.02), "beta": ("l1_tv", 0.02)}, 0)},
}
_REG_TABLE["5"] = _REG_TABLE["4"]
_REG_TABLE["custom"] = {"clean": ({}, 0), "noisy": ({}, 0)}


def preset(experiment: str) -> ExperimentConfig:
    """Unresolved preset for an experiment number (or ``custom``)."""
    experiment = str(experiment)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    cfg = ExperimentConfig(experiment=experiment)
    if experiment == "2":
        cfg.phantom = "exp2_checker"
    elif experiment == "3":
        cfg.phantom = "exp3_piecewise"
    elif experiment in ("4", "5"):
        cfg.phantom = "exp3_piecewise"
        cfg.grid_n = 240
        cfg.domain = "extended"
        cfg.x_range, cfg.y_range = DOMAINS["extended"]
        cfg.illuminations = "gauss_bottom_extended" if experiment == "4" else "gauss_bottom_neumann"
        cfg.restrict_to_X = True
    return cfg


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill ``auto`` regularization entries from the preset table."""
    cfg = copy.deepcopy(cfg)
    table = _REG_TABLE[cfg.experiment]["noisy" if cfg.noise.alpha > 0 else "clean"]
    specs, refine = table
    for c in COEFFS:
        kind, rho = specs.get(c, ("none", 0.0))
        if cfg.reg_kind[c] is None:
            cfg.reg_kind[c] = kind
        if cfg.reg_rho[c] is None:
            cfg.reg_rho[c] = rho if cfg.reg_kind[c] == kind else 0.0
        if cfg.reg_kind[c] != "none" and cfg.reg_rho[c] <= 0:
            raise ConfigError(f"reg.{c}.kind = {cfg.reg_kind[c]} needs reg.{c}.rho > 0")
    if cfg.beta_refine is None:
        cfg.beta_refine = refine
    return cfg


# -- value parsers --------------------------------------------------------------

def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _choice(options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {tuple(options)}, got {s!r}")
        return s
    return parse


def _auto(parse):
    return lambda s: None if s == "auto" else parse(s)


def _index_pair(s: str) -> tuple[int, int]:
    a, b = (int(p) for p in s.split(","))
    if a < 1 or b < 1 or a == b:
        raise ValueError(f"expected two distinct 1-based indices, got {s!r}")
    return a, b


def _pairs(s: str):
    if s == "all":
        return None
    return [_index_pair(p.strip()) for p in s.split(";") if p.strip()]


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _set_domain(cfg, v):
    cfg.domain = v
    if v in DOMAINS:
        cfg.x_range, cfg.y_range = DOMAINS[v]


def _set_bound(axis, k):
    def set_(cfg, v):
        name = f"{axis}_range"
        r = list(getattr(cfg, name))
        if r[k] != v:
            r[k] = v
            setattr(cfg, name, tuple(r))
            cfg.domain = "custom"
    return set_


def _noise(attr):
    def set_(cfg, v):
        setattr(cfg.noise, attr, v)
        cfg.noise.__post_init__()
    return set_


def _solver(attr):
    def set_(cfg, v):
        setattr(cfg.solver, attr, v)
        cfg.solver.__post_init__()
    return set_


def _attr(name):
    return lambda cfg, v: setattr(cfg, name, v)


def _pos(parse):
    def p(s):
        v = parse(s)
        if not v > 0:
            raise ValueError(f"expected a positive value, got {s!r}")
        return v
    return p


def _nonneg(parse):
    def p(s):
        v = parse(s)
        if v < 0:
            raise ValueError(f"expected a non-negative value, got {s!r}")
        return v
    return p


# key -> (parser, getter for dumping, setter)
_KEYS = {
    "experiment": (_choice(EXPERIMENTS), lambda c: c.experiment, None),
    "grid.n": (_pos(int), lambda c: c.grid_n, _attr("grid_n")),
    "domain": (_choice(("X", "extended", "custom")), lambda c: c.domain, _set_domain),
    "domain.x_min": (float, lambda c: _fmt(float(c.x_range[0])), _set_bound("x", 0)),
    "domain.x_max": (float, lambda c: _fmt(float(c.x_range[1])), _set_bound("x", 1)),
    "domain.y_min": (float, lambda c: _fmt(float(c.y_range[0])), _set_bound("y", 0)),
    "domain.y_max": (float, lambda c: _fmt(float(c.y_range[1])), _set_bound("y", 1)),
    "phantom": (_choice(PHANTOMS), lambda c: c.phantom, _attr("phantom")),
    "phantom.seed": (_nonneg(int), lambda c: c.phantom_seed, _attr("phantom_seed")),
    "illuminations": (_choice(ILLUMINATIONS), lambda c: c.illuminations, _attr("illuminations")),
    "noise.alpha": (_nonneg(float), lambda c: _fmt(float(c.noise.alpha)), _noise("alpha")),
    "noise.seed": (_nonneg(int), lambda c: c.noise.seed, _noise("seed")),
    "noise.smoothing_passes": (_nonneg(int), lambda c: c.noise.smoothing_passes, _noise("smoothing_passes")),
    "recon.basis": (_index_pair, lambda c: f"{c.basis[0]},{c.basis[1]}", _attr("basis")),
    "recon.pairs": (_pairs, lambda c: "all" if c.pairs is None else ";".join(f"{a},{b}" for a, b in c.pairs),
                    _attr("pairs")),
    "recon.det_floor_rel": (_pos(float), lambda c: _fmt(c.det_floor_rel), _attr("det_floor_rel")),
    "recon.b_shape_floor": (_nonneg(float), lambda c: _fmt(c.b_shape_floor), _attr("b_shape_floor")),
    "recon.max_masked_fraction": (_pos(float), lambda c: _fmt(c.max_masked_fraction),
                                  _attr("max_masked_fraction")),
    "recon.definite_only": (_bool, lambda c: _fmt(c.definite_only), _attr("definite_only")),
    "recon.beta_refine": (_auto(_nonneg(int)), lambda c: _fmt(c.beta_refine), _attr("beta_refine")),
    "recon.known_anisotropy": (_bool, lambda c: _fmt(c.known_anisotropy), _attr("known_anisotropy")),
    "beta.bc": (_choice(("dirichlet", "anchor")), lambda c: c.beta_bc, _attr("beta_bc")),
    "beta.anchor_x": (float, lambda c: _fmt(float(c.anchor[0])),
                      lambda c, v: setattr(c, "anchor", (v, c.anchor[1]))),
    "beta.anchor_y": (float, lambda c: _fmt(float(c.anchor[1])),
                      lambda c, v: setattr(c, "anchor", (c.anchor[0], v))),
    "beta.anchor_value": (lambda s: None if s == "true" else _pos(float)(s),
                          lambda c: "true" if c.anchor_value is None else _fmt(c.anchor_value),
                          _attr("anchor_value")),
    **{f"reg.{co}.kind": (_auto(_choice(KINDS)), lambda c, co=co: _fmt(c.reg_kind[co]),
                          lambda c, v, co=co: c.reg_kind.__setitem__(co, v)) for co in COEFFS},
    **{f"reg.{co}.rho": (_auto(_nonneg(float)), lambda c, co=co: _fmt(c.reg_rho[co]),
                         lambda c, v, co=co: c.reg_rho.__setitem__(co, v)) for co in COEFFS},
    "reg.outer_iter": (_pos(int), lambda c: c.reg_outer_iter, _attr("reg_outer_iter")),
    "reg.tol": (_pos(float), lambda c: _fmt(c.reg_tol), _attr("reg_tol")),
    "solver.method": (_choice(("auto", "direct", "iterative")), lambda c: c.solver.method, _solver("method")),
    "solver.tol": (_pos(float), lambda c: _fmt(c.solver.tol), _solver("tol")),
    "solver.max_iter": (_pos(int), lambda c: c.solver.max_iter, _solver("max_iter")),
    "restrict_to_X": (_bool, lambda c: _fmt(c.restrict_to_X), _attr("restrict_to_X")),
    "diagnostics.independence_threshold": (_pos(float), lambda c: _fmt(c.independence_threshold),
                                           _attr("independence_threshold")),
    "out_dir": (str, lambda c: c.out_dir or "", lambda c, v: setattr(c, "out_dir", v or None)),
}


def _lines(text: str):
    seen = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {n}: key {key!r} already set on line {seen[key]}")
        seen[key] = n
        yield n, key, value


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse config text onto the preset named by its ``experiment`` key, then resolve.

    ``overrides`` are applied after the file, as if appended to it.
    """
    entries = list(_lines(text))
    for key, value in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        entries = [e for e in entries if e[1] != key] + [(0, key, str(value))]
    exp = next((v for _, k, v in entries if k == "experiment"), "custom")
    try:
        cfg = preset(_KEYS["experiment"][0](exp))
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc
    # domain first so explicit bounds override the named box regardless of order
    entries.sort(key=lambda e: e[1] != "domain")
    for n, key, value in entries:
        if key == "experiment":
            continue
        parse, _, setter = _KEYS[key]
        where = f"line {n}: " if n else ""
        try:
            setter(cfg, parse(value))
        except ValueError as exc:
            raise ConfigError(f"{where}invalid value for {key}: {exc}") from exc
    try:
        cfg.grid()
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc
    return resolve(cfg)
